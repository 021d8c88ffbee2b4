from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from ..ndcore import Parameter, Tensor


@dataclass
class PredictionBundle:
    """Joint scene- and sub-scene-level outputs of one forward pass.

    ``scene_pred`` is unclamped. S2P models fill ``patch_preds`` ([k, C]);
    the UNet fills ``evidence`` / ``weighted_evidence`` ([C, H, W]).
    """

    scene_pred: Tensor
    patch_preds: Optional[Tensor] = None
    evidence: Optional[np.ndarray] = None
    weighted_evidence: Optional[np.ndarray] = None


class Model:
    """Shared parameter bookkeeping. Subclasses set ``config_id``,
    ``grid_size``, ``patch_size``, ``dropout`` and implement ``predict``."""

    config_id: str
    grid_size: int
    patch_size: int
    dropout: float
    rng: np.random.Generator

    def layers(self) -> Iterator:
        raise NotImplementedError

    def parameters(self) -> list[Parameter]:
        return [p for layer in self.layers() for p in layer.parameters()]

    def named_parameters(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = params.keys() - state.keys()
        extra = state.keys() - params.keys()
        if missing or extra:
            raise KeyError(f"state mismatch for {self.config_id}: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, p in params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise ValueError(f"{name}: checkpoint shape {value.shape} != model shape {p.shape}")
            p.data[...] = value

    def metadata(self) -> dict:
        return {"dropout": self.dropout}

    def predict(self, bag, training: bool = False, rng: Optional[np.random.Generator] = None) -> PredictionBundle:
        raise NotImplementedError
