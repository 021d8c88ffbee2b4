"""UNet scene regressor with class-activation-map segmentation.

The scene prediction is ``L(global_avg_pool(F))`` where ``F`` is the decoder
output; per-class maps are ``M_c = W_c F + B_c``.
"""

from __future__ import annotations

from typing import Iterator, Optional

import numpy as np

from .. import ndcore as nd
from ..data.tiling import Bag, GeometryError
from ..ndcore.layers import Conv2d, ConvTranspose2x2, Layer, Linear
from .base import Model, PredictionBundle

UNET_WIDTHS = (32, 64, 128, 256, 512)
UPSAMPLING_MODES = ("bilinear", "learned")
UNET_INPUT_SIZES = {224: "bilinear", 448: "learned"}


class DoubleConv(Layer):
    def __init__(self, cin: int, cout: int, rng: np.random.Generator, name: str, mid: Optional[int] = None):
        mid = cout if mid is None else mid
        self.conv1 = Conv2d(cin, mid, 3, rng, padding=1, name=f"{name}.conv1")
        self.conv2 = Conv2d(mid, cout, 3, rng, padding=1, name=f"{name}.conv2")

    def parameters(self):
        yield from self.conv1.parameters()
        yield from self.conv2.parameters()

    def __call__(self, x):
        return nd.relu(self.conv2(nd.relu(self.conv1(x))))


class UNetModel(Model):
    def __init__(self, input_size: int = 224, upsampling: str = "bilinear", seed: int = 0,
                 widths: tuple[int, ...] = UNET_WIDTHS, dropout: float = 0.0, n_classes: int = 7):
        if upsampling not in UPSAMPLING_MODES:
            raise ValueError(f"upsampling must be one of {UPSAMPLING_MODES}, got {upsampling!r}")
        depth = len(widths) - 1
        if input_size % (2 ** depth):
            raise GeometryError(f"UNet input size must be a multiple of {2 ** depth}, got {input_size}")
        self.input_size = input_size
        self.upsampling = upsampling
        self.widths = tuple(widths)
        self.dropout = dropout
        self.grid_size = 1
        self.patch_size = input_size
        self.config_id = f"unet-{input_size}"
        init_rng, drop_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
        self.rng = drop_rng

        factor = 2 if upsampling == "bilinear" else 1
        w = self.widths
        self.inc = DoubleConv(3, w[0], init_rng, "enc0")
        self.downs = [DoubleConv(w[i], w[i + 1] // (factor if i == depth - 1 else 1), init_rng, f"enc{i + 1}")
                      for i in range(depth)]
        self.ups, self.up_convs = [], []
        for i in reversed(range(depth)):
            # decoder stage i merges the skip at width w[i]
            cin = w[i + 1]
            cout = w[i] // factor if i > 0 else w[0]
            if upsampling == "bilinear":
                self.ups.append(None)
                self.up_convs.append(DoubleConv(cin, cout, init_rng, f"dec{i}", mid=cin // 2))
            else:
                self.ups.append(ConvTranspose2x2(cin, cin // 2, init_rng, name=f"dec{i}.up"))
                self.up_convs.append(DoubleConv(cin, cout, init_rng, f"dec{i}"))
        self.head = Linear(w[0], n_classes, init_rng, name="head")

    def layers(self) -> Iterator:
        yield self.inc
        yield from self.downs
        for up, conv in zip(self.ups, self.up_convs):
            if up is not None:
                yield up
            yield conv
        yield self.head

    def metadata(self) -> dict:
        return {"dropout": self.dropout, "upsampling": self.upsampling, "widths": list(self.widths),
                "input_size": self.input_size}

    def feature_map(self, x: nd.Tensor, training: bool = False,
                    rng: Optional[np.random.Generator] = None) -> nd.Tensor:
        """Decoder output ``F`` with the input's spatial size."""
        skips = [self.inc(x)]
        h = skips[0]
        for down in self.downs:
            h = down(nd.maxpool2d(h, 2, 2))
            skips.append(h)
        h = nd.dropout(skips.pop(), self.dropout, training, self.rng if rng is None else rng)
        for up, conv in zip(self.ups, self.up_convs):
            skip = skips.pop()
            if up is None:
                h = nd.upsample_bilinear(h, skip.shape[2], skip.shape[3], align_corners=True)
            else:
                h = up(h)
            h = conv(nd.concat([skip, h], axis=1))
        return h

    def predict(self, bag: Bag, training: bool = False, rng: Optional[np.random.Generator] = None) -> PredictionBundle:
        if bag.k != 1:
            raise GeometryError(f"UNet takes a whole scene (grid size 1), bag {bag.scene_id!r} has k={bag.k}")
        return unet_forward(self, nd.Tensor(bag.patches), training, rng)


def build_unet(input_size: int = 224, upsampling: Optional[str] = None, seed: int = 0,
               dropout: float = 0.0, widths: tuple[int, ...] = UNET_WIDTHS) -> UNetModel:
    """UNet for the given input size; upsampling defaults to the tuned choice
    (bilinear for 224, learned for 448)."""
    if upsampling is None:
        upsampling = UNET_INPUT_SIZES.get(input_size, "bilinear")
    return UNetModel(input_size, upsampling, seed, widths, dropout)


def class_activation_maps(model: UNetModel, features: np.ndarray) -> np.ndarray:
    """``M_c = W_c F + B_c`` for ``features`` of shape ``[Cf, H, W]``."""
    w, b = model.head.weight.data, model.head.bias.data
    return np.einsum("cf,fhw->chw", w, features) + b[:, None, None]


def unet_forward(model: UNetModel, scene: nd.Tensor, training: bool = False,
                 rng: Optional[np.random.Generator] = None) -> PredictionBundle:
    if scene.shape != (1, 3, model.input_size, model.input_size):
        raise GeometryError(f"{model.config_id} expects input 1x3x{model.input_size}x{model.input_size}, "
                            f"got {'x'.join(map(str, scene.shape))}")
    feats = model.feature_map(scene, training, rng)
    scene_pred = nd.reshape(model.head(nd.global_avg_pool(feats)), (-1,))
    maps = class_activation_maps(model, feats.data[0])
    return PredictionBundle(scene_pred, evidence=maps, weighted_evidence=maps * scene_pred.data[:, None, None])
