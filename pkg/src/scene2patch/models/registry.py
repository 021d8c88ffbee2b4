"""Model identifiers, per-configuration training hyperparameters and checkpoint I/O."""

from __future__ import annotations

from dataclasses import dataclass

from ..ndcore.checkpoint import read_checkpoint, write_checkpoint
from .base import Model
from .s2p import GRID_SIZES, PATCH_SIZES, S2PConfig, build_s2p, build_scene_baseline
from .unet import UNET_INPUT_SIZES, UNET_WIDTHS, build_unet


@dataclass(frozen=True)
class Hyperparameters:
    learning_rate: float
    weight_decay: float
    dropout: float


HYPERPARAMETERS = {
    "unet-224": Hyperparameters(5e-4, 1e-5, 0.25),
    "unet-448": Hyperparameters(5e-4, 1e-6, 0.2),
    "s2p-small-8": Hyperparameters(1e-4, 1e-6, 0.05),
    "s2p-medium-8": Hyperparameters(1e-4, 1e-5, 0.35),
    "s2p-large-8": Hyperparameters(1e-4, 1e-5, 0.25),
    "s2p-small-16": Hyperparameters(5e-4, 1e-6, 0.1),
    "s2p-medium-16": Hyperparameters(1e-4, 1e-6, 0.05),
    "s2p-large-16": Hyperparameters(1e-4, 1e-5, 0.35),
    "s2p-small-24": Hyperparameters(1e-4, 1e-5, 0.05),
    "s2p-medium-24": Hyperparameters(1e-4, 1e-6, 0.2),
    "s2p-large-24": Hyperparameters(5e-4, 1e-5, 0.3),
    # trunk is S2P Large, so it borrows the S2P Large 8 settings
    "scene-baseline": Hyperparameters(1e-4, 1e-5, 0.25),
}

MODEL_IDS = tuple(HYPERPARAMETERS)


class UnknownModelError(ValueError):
    pass


def validate_model_id(model_id: str) -> str:
    if model_id not in HYPERPARAMETERS:
        raise UnknownModelError(f"unknown model id {model_id!r}; choose from {', '.join(MODEL_IDS)}")
    return model_id


def build_model(model_id: str, seed: int = 0, dropout: float | None = None, **kwargs) -> Model:
    validate_model_id(model_id)
    rate = HYPERPARAMETERS[model_id].dropout if dropout is None else dropout
    if model_id == "scene-baseline":
        return build_scene_baseline(seed, rate)
    family, *rest = model_id.split("-")
    if family == "unet":
        size = int(rest[0])
        return build_unet(size, kwargs.get("upsampling", UNET_INPUT_SIZES[size]), seed, rate,
                          tuple(kwargs.get("widths", UNET_WIDTHS)))
    patch_class, grid = rest[0], int(rest[1])
    assert patch_class in PATCH_SIZES and grid in GRID_SIZES
    return build_s2p(S2PConfig(patch_class, grid, rate), seed)


def save_model(path, model: Model, extra: dict | None = None) -> None:
    """Write a checkpoint; ``extra`` entries (e.g. normalisation stats) go into its metadata."""
    meta = dict(extra or {})
    meta.update(model.metadata())
    write_checkpoint(path, model.config_id, model.state_dict(), meta)


def read_model(path) -> tuple[Model, dict]:
    """Rebuild a model from a checkpoint; returns it with the stored metadata."""
    ckpt = read_checkpoint(path)
    meta = dict(ckpt.metadata)
    kwargs = {k: meta[k] for k in ("upsampling", "widths") if k in meta}
    model = build_model(ckpt.config_id, seed=0, dropout=meta.get("dropout"), **kwargs)
    model.load_state_dict(ckpt.arrays)
    return model, meta


def load_model(path) -> Model:
    return read_model(path)[0]
