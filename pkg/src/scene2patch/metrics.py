"""Scene regression errors and confusion-based mIoU at patch and pixel level."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .data.codec import N_CLASSES, UNKNOWN
from .data.tiling import resize_bilinear


class ConfusionAccumulator:
    """``matrix[t, p]`` counts units with true class ``t`` predicted as ``p``.

    Accumulators merge with ``+`` so partial confusions can be summed in any order.
    """

    def __init__(self, n_classes: int = N_CLASSES):
        self.n_classes = n_classes
        self.matrix = np.zeros((n_classes, n_classes), dtype=np.int64)

    def update(self, true: np.ndarray, pred: np.ndarray) -> "ConfusionAccumulator":
        true = np.asarray(true).reshape(-1).astype(np.int64)
        pred = np.asarray(pred).reshape(-1).astype(np.int64)
        if true.shape != pred.shape:
            raise ValueError(f"truth and prediction lengths differ: {true.size} vs {pred.size}")
        n = self.n_classes
        self.matrix += np.bincount(true * n + pred, minlength=n * n).reshape(n, n)
        return self

    def __add__(self, other: "ConfusionAccumulator") -> "ConfusionAccumulator":
        out = ConfusionAccumulator(self.n_classes)
        out.matrix = self.matrix + other.matrix
        return out

    @property
    def total(self) -> int:
        return int(self.matrix.sum())


@dataclass
class IoUResult:
    miou: float
    per_class: np.ndarray   # NaN where a class was excluded
    n_skipped: int


def miou(confusion: ConfusionAccumulator, exclude: Sequence[int] = ()) -> IoUResult:
    """Mean IoU over classes present in truth or prediction.

    Classes with ``TP + FP + FN == 0`` are skipped; ``exclude`` drops further
    classes (e.g. unknown) from both the units scored and the mean.
    """
    m = confusion.matrix.astype(np.float64)
    if exclude:
        keep = np.setdiff1d(np.arange(confusion.n_classes), exclude)
        mask = np.zeros_like(m, dtype=bool)
        mask[np.ix_(keep, np.arange(confusion.n_classes))] = True
        m = np.where(mask, m, 0.0)
    if m.sum() == 0:
        raise ValueError("no units scored; mIoU undefined")
    tp = np.diag(m)
    denom = m.sum(axis=0) + m.sum(axis=1) - tp
    per_class = np.full(confusion.n_classes, np.nan)
    present = denom > 0
    present[list(exclude)] = False
    per_class[present] = tp[present] / denom[present]
    return IoUResult(float(per_class[present].mean()), per_class, int((~present).sum()))


def argmax_classes(preds) -> np.ndarray:
    """Row-wise index of the largest raw output, lowest index on ties."""
    preds = np.asarray(getattr(preds, "data", preds))
    return preds.argmax(axis=-1)


def _as_classes(preds) -> np.ndarray:
    preds = np.asarray(getattr(preds, "data", preds))
    return argmax_classes(preds) if preds.ndim == 2 else preds.astype(np.int64)


def patch_confusion(patch_preds: Sequence, patch_labels: Sequence[np.ndarray],
                    n_classes: int = N_CLASSES) -> ConfusionAccumulator:
    if len(patch_preds) != len(patch_labels):
        raise ValueError(f"{len(patch_preds)} prediction sets for {len(patch_labels)} label sets")
    acc = ConfusionAccumulator(n_classes)
    for preds, labels in zip(patch_preds, patch_labels):
        cls = _as_classes(preds)
        if cls.shape[0] != len(labels):
            raise ValueError(f"scene has {cls.shape[0]} patch predictions but {len(labels)} labels")
        acc.update(labels, cls)
    return acc


def patch_miou(patch_preds: Sequence, patch_labels: Sequence[np.ndarray], exclude_unknown: bool = False) -> float:
    """Dataset-level patch mIoU against cell-majority labels."""
    return miou(patch_confusion(patch_preds, patch_labels), _exclusions(exclude_unknown)).miou


def tile_patch_classes(classes: np.ndarray, grid_size: int, height: int, width: int) -> np.ndarray:
    """Block-upsample row-major per-cell classes to a ``height`` x ``width`` map."""
    classes = np.asarray(classes)
    if classes.size != grid_size * grid_size:
        raise ValueError(f"{classes.size} patch classes do not fill a {grid_size}x{grid_size} grid")
    if height % grid_size or width % grid_size:
        raise ValueError(f"mask {height}x{width} not divisible by grid size {grid_size}")
    grid = classes.reshape(grid_size, grid_size)
    return np.repeat(np.repeat(grid, height // grid_size, axis=0), width // grid_size, axis=1)


def pixel_confusion(patch_preds: Sequence, grid_sizes, masks: Sequence[np.ndarray],
                    n_classes: int = N_CLASSES) -> ConfusionAccumulator:
    if len(patch_preds) != len(masks):
        raise ValueError(f"{len(patch_preds)} prediction sets for {len(masks)} masks")
    if np.isscalar(grid_sizes):
        grid_sizes = [int(grid_sizes)] * len(masks)
    acc = ConfusionAccumulator(n_classes)
    for preds, g, mask in zip(patch_preds, grid_sizes, masks):
        pred_map = tile_patch_classes(_as_classes(preds), g, *mask.shape)
        acc.update(mask, pred_map)
    return acc


def pixel_miou(patch_preds: Sequence, grid_sizes, masks: Sequence[np.ndarray],
               exclude_unknown: bool = False) -> float:
    """Pixel mIoU of block-tiled patch predictions against full-resolution masks."""
    return miou(pixel_confusion(patch_preds, grid_sizes, masks), _exclusions(exclude_unknown)).miou


def evidence_to_classes(evidence: np.ndarray, height: int, width: int) -> np.ndarray:
    """Per-pixel argmax of ``[C, h, w]`` evidence maps resized (bilinear) to ``height`` x ``width``."""
    evidence = np.asarray(evidence, dtype=np.float64)
    if evidence.shape[1:] != (height, width):
        evidence = np.moveaxis(resize_bilinear(np.moveaxis(evidence, 0, -1), height, width), -1, 0)
    return evidence.argmax(axis=0)


def cam_confusion(evidence_maps: Sequence[np.ndarray], masks: Sequence[np.ndarray],
                  n_classes: int = N_CLASSES) -> ConfusionAccumulator:
    acc = ConfusionAccumulator(n_classes)
    for ev, mask in zip(evidence_maps, masks):
        acc.update(mask, evidence_to_classes(ev, *mask.shape))
    return acc


def cam_pixel_miou(evidence, mask, exclude_unknown: bool = False) -> float:
    """Pixel mIoU from class activation maps; accepts one map/mask or sequences of them."""
    if isinstance(mask, np.ndarray) and mask.ndim == 2:
        evidence, mask = [evidence], [mask]
    return miou(cam_confusion(evidence, mask), _exclusions(exclude_unknown)).miou


def _exclusions(exclude_unknown: bool) -> tuple[int, ...]:
    return (UNKNOWN,) if exclude_unknown else ()


def scene_errors(preds: np.ndarray, targets: np.ndarray) -> tuple[float, float]:
    """Mean over scenes of per-scene RMSE and per-scene MAE; inputs are ``[n, C]``."""
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.shape != targets.shape or preds.ndim != 2 or preds.shape[0] == 0:
        raise ValueError(f"expected matching non-empty [n, C] arrays, got {preds.shape} and {targets.shape}")
    diff = preds - targets
    rmse = np.sqrt(np.mean(diff * diff, axis=1))
    mae = np.mean(np.abs(diff), axis=1)
    return float(rmse.mean()), float(mae.mean())


@dataclass
class MetricsReport:
    scene_rmse: float
    scene_mae: float
    patch_miou: Optional[float] = None
    pixel_miou: Optional[float] = None
    patch_iou: Optional[np.ndarray] = None
    pixel_iou: Optional[np.ndarray] = None
    skipped_classes: dict = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)
