"""Scene-to-Patch networks: a per-patch CNN classifier whose patch predictions
are mean-aggregated into the scene prediction."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from .. import ndcore as nd
from ..data.tiling import Bag, GeometryError
from ..ndcore.layers import Conv2d, Linear
from .base import Model, PredictionBundle

PATCH_SIZES = {"small": 28, "medium": 56, "large": 102}
GRID_SIZES = (8, 16, 24)
HIDDEN_UNITS = (512, 128, 64)

# (in, out, kernel) per conv stage; each stage is conv + ReLU + 2x2 max-pool
CONV_STAGES = {
    "small": ((3, 36, 4), (36, 48, 3)),
    "medium": ((3, 36, 4), (36, 48, 3)),
    "large": ((3, 36, 4), (36, 48, 3), (48, 56, 3)),
}


def _conv_out(n: int, k: int) -> int:
    return n - k + 1


def embedding_size(patch_class: str) -> int:
    side = PATCH_SIZES[patch_class]
    for _, cout, k in CONV_STAGES[patch_class]:
        side = _conv_out(side, k) // 2
    return CONV_STAGES[patch_class][-1][1] * side * side


@dataclass(frozen=True)
class S2PConfig:
    patch_class: str
    grid_size: int
    dropout: float = 0.0
    n_classes: int = 7

    def __post_init__(self):
        if self.patch_class not in PATCH_SIZES:
            raise ValueError(f"unknown patch class {self.patch_class!r}; expected one of {sorted(PATCH_SIZES)}")
        if self.grid_size < 1:
            raise ValueError(f"grid size must be positive, got {self.grid_size}")

    @property
    def patch_size(self) -> int:
        return PATCH_SIZES[self.patch_class]

    @property
    def config_id(self) -> str:
        if self.grid_size == 1 and self.patch_class == "large":
            return "scene-baseline"
        return f"s2p-{self.patch_class}-{self.grid_size}"


class S2PModel(Model):
    def __init__(self, config: S2PConfig, seed: int = 0):
        self.config = config
        self.config_id = config.config_id
        self.grid_size = config.grid_size
        self.patch_size = config.patch_size
        self.dropout = config.dropout
        init_rng, drop_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
        self.rng = drop_rng
        self.convs = [Conv2d(cin, cout, k, init_rng, name=f"features.conv{i + 1}")
                      for i, (cin, cout, k) in enumerate(CONV_STAGES[config.patch_class])]
        widths = (embedding_size(config.patch_class),) + HIDDEN_UNITS + (config.n_classes,)
        self.fcs = [Linear(a, b, init_rng, name=f"classifier.fc{i + 1}")
                    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:]))]

    def layers(self) -> Iterator:
        yield from self.convs
        yield from self.fcs

    def features(self, x: nd.Tensor, trace: Optional[list] = None) -> nd.Tensor:
        for conv in self.convs:
            k = conv.weight.shape[-1]
            x = nd.relu(conv(x))
            if trace is not None:
                trace.append((f"Conv2d({k}, 1, 0) + ReLU", x.shape))
            x = nd.maxpool2d(x, 2, 2)
            if trace is not None:
                trace.append(("MaxPool2d(2, 2, 0)", x.shape))
        return x

    def patch_logits(self, x: nd.Tensor, training: bool = False, rng: Optional[np.random.Generator] = None,
                     trace: Optional[list] = None) -> nd.Tensor:
        """``[b, 3, P, P] -> [b, C]`` independent per-patch predictions."""
        if x.shape[1:] != (3, self.patch_size, self.patch_size):
            raise GeometryError(
                f"{self.config_id} expects patches of 3x{self.patch_size}x{self.patch_size}, got {x.shape[1:]}")
        rng = self.rng if rng is None else rng
        h = nd.flatten(self.features(x, trace))
        if trace is not None:
            trace.append(("Flatten", h.shape))
        for fc in self.fcs[:-1]:
            h = nd.dropout(nd.relu(fc(h)), self.dropout, training, rng)
            if trace is not None:
                trace.append(("FC + ReLU + Dropout", h.shape))
        # final layer stays linear so patches can carry negative class evidence
        out = self.fcs[-1](h)
        if trace is not None:
            trace.append(("FC", out.shape))
        return out

    def predict(self, bag: Bag, training: bool = False, rng: Optional[np.random.Generator] = None) -> PredictionBundle:
        if bag.k < 1:
            raise ValueError(f"bag {bag.scene_id!r} is empty")
        if bag.patch_size != self.patch_size:
            raise GeometryError(f"{self.config_id} expects patch size {self.patch_size}, bag has {bag.patch_size}")
        patch_preds = self.patch_logits(nd.Tensor(bag.patches), training, rng)
        return PredictionBundle(nd.mean_over_instances(patch_preds), patch_preds)


def build_s2p(config: S2PConfig, seed: int = 0) -> S2PModel:
    if config.grid_size not in GRID_SIZES:
        raise ValueError(f"S2P grid size must be one of {GRID_SIZES}, got {config.grid_size}")
    return S2PModel(config, seed)


def s2p_forward(model: S2PModel, bag: Bag, training: bool = False,
                rng: Optional[np.random.Generator] = None) -> PredictionBundle:
    return model.predict(bag, training, rng)


def build_scene_baseline(seed: int = 0, dropout: float = 0.0) -> S2PModel:
    """S2P-Large trunk applied to the whole scene as a single instance (grid size 1)."""
    return S2PModel(S2PConfig("large", 1, dropout), seed)


def scene_baseline_forward(model: S2PModel, scene: nd.Tensor) -> nd.Tensor:
    """Scene prediction for a ``[1, 3, P, P]`` resized scene; no patch map."""
    if scene.shape[0] != 1:
        raise GeometryError(f"scene baseline takes a single resized scene, got batch {scene.shape[0]}")
    return nd.mean_over_instances(model.patch_logits(scene))
