"""Per-bag Adam training on scene RMSE with patience-based early stopping."""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import ndcore as nd
from .data.codec import UNKNOWN
from .data.folds import make_folds
from .data.manifest import DatasetManifest
from .data.tiling import Bag
from .metrics import (
    MetricsReport,
    cam_confusion,
    miou,
    patch_confusion,
    pixel_confusion,
    scene_errors,
)
from .models import HYPERPARAMETERS, Model, PredictionBundle, build_model, validate_model_id

logger = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    weight_decay: float
    dropout: float
    patience: int = 5
    max_epochs: int = 30
    seed: int = 0

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")
        if self.max_epochs < self.patience:
            raise ValueError(f"max_epochs ({self.max_epochs}) must be >= patience ({self.patience})")

    @classmethod
    def for_model(cls, model_id: str, **overrides) -> "TrainConfig":
        hp = HYPERPARAMETERS[validate_model_id(model_id)]
        base = cls(hp.learning_rate, hp.weight_decay, hp.dropout)
        return replace(base, **{k: v for k, v in overrides.items() if v is not None})


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_rmse: float
    seconds: float


@dataclass
class TrainLog:
    initial_val_rmse: float
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_val_rmse: float = math.inf
    stop_reason: str = ""

    @property
    def val_rmse(self) -> list[float]:
        return [r.val_rmse for r in self.records]

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("epoch", "train_loss", "val_rmse", "seconds"))
        for r in self.records:
            w.writerow((r.epoch, repr(r.train_loss), repr(r.val_rmse), f"{r.seconds:.3f}"))
        return buf.getvalue()


class EarlyStopping:
    """Tracks the best (strictly lowest) validation value and epochs since it."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.stale = 0

    def update(self, epoch: int, value: float) -> bool:
        if value < self.best:
            self.best, self.best_epoch, self.stale = value, epoch, 0
            return True
        self.stale += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.stale >= self.patience


def predict_bags(model: Model, bags: Sequence[Bag]) -> list[PredictionBundle]:
    """Evaluation-mode predictions (dropout off, nothing recorded)."""
    return [model.predict(bag, training=False) for bag in bags]


def evaluate_scene(model: Model, bags: Sequence[Bag]) -> tuple[float, float]:
    """(mean per-bag RMSE, mean per-bag MAE) of scene predictions."""
    if not bags:
        raise ValueError("cannot evaluate on an empty bag set")
    preds = np.stack([b.scene_pred.data for b in predict_bags(model, bags)])
    return scene_errors(preds, np.stack([b.label for b in bags]))


def train_model(model: Model, train_bags: Sequence[Bag], val_bags: Sequence[Bag], config: TrainConfig,
                validate: Optional[Callable[[Model, int], float]] = None,
                on_epoch: Optional[Callable[[EpochRecord], None]] = None) -> tuple[Model, TrainLog]:
    """Train one bag per optimiser step; stop after ``patience`` epochs without a
    strict validation improvement and restore the best weights.

    ``validate(model, epoch)`` overrides the validation RMSE (epoch 0 is the
    untrained model).
    """
    if not train_bags or not val_bags:
        raise ValueError("training needs non-empty train and validation sets")
    if validate is None:
        def validate(m, epoch):
            return evaluate_scene(m, val_bags)[0]

    shuffle_rng, dropout_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(2))
    model.dropout = config.dropout
    params = model.parameters()
    for p in params:
        p.zero_grad()

    log = TrainLog(initial_val_rmse=float(validate(model, 0)))
    stopper = EarlyStopping(config.patience)
    best_state = model.state_dict()

    for epoch in range(1, config.max_epochs + 1):
        start = time.perf_counter()
        losses = []
        for i in shuffle_rng.permutation(len(train_bags)):
            bag = train_bags[i]
            with nd.Tape() as tape:
                pred = model.predict(bag, training=True, rng=dropout_rng).scene_pred
                loss = nd.rmse_loss(pred, bag.label)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss {value} at epoch {epoch}, bag {bag.scene_id!r}")
            nd.backward(loss, tape)
            nd.adam_step(params, config.learning_rate, config.weight_decay)
            losses.append(value)
        val = float(validate(model, epoch))
        if not math.isfinite(val):
            raise TrainingError(f"non-finite validation RMSE at epoch {epoch}")
        record = EpochRecord(epoch, float(np.mean(losses)), val, time.perf_counter() - start)
        log.records.append(record)
        if on_epoch is not None:
            on_epoch(record)
        logger.info("epoch %d train_loss %.5f val_rmse %.5f", epoch, record.train_loss, val)
        if stopper.update(epoch, val):
            best_state = model.state_dict()
        if stopper.should_stop:
            log.stop_reason = "patience"
            break
    else:
        log.stop_reason = "max-epochs"

    model.load_state_dict(best_state)
    log.best_epoch, log.best_val_rmse = stopper.best_epoch, stopper.best
    return model, log


def evaluate_model(model: Model, bags: Sequence[Bag], masks: Optional[Sequence[np.ndarray]] = None,
                   exclude_unknown: bool = False) -> MetricsReport:
    """All metrics the model supports: scene RMSE/MAE always; patch mIoU for
    S2P bags with patch labels; pixel mIoU when full-resolution masks are given."""
    bundles = predict_bags(model, bags)
    preds = np.stack([b.scene_pred.data for b in bundles])
    rmse, mae = scene_errors(preds, np.stack([b.label for b in bags]))
    report = MetricsReport(rmse, mae)
    exclude = (UNKNOWN,) if exclude_unknown else ()
    if bundles[0].patch_preds is not None and model.grid_size > 1:
        patch_preds = [b.patch_preds.data for b in bundles]
        if all(b.patch_labels is not None for b in bags):
            res = miou(patch_confusion(patch_preds, [b.patch_labels for b in bags]), exclude)
            report.patch_miou, report.patch_iou = res.miou, res.per_class
            report.skipped_classes["patch"] = res.n_skipped
        if masks is not None:
            res = miou(pixel_confusion(patch_preds, model.grid_size, masks), exclude)
            report.pixel_miou, report.pixel_iou = res.miou, res.per_class
            report.skipped_classes["pixel"] = res.n_skipped
        elif report.patch_miou is None:
            report.notes.append("no masks available: patch and pixel mIoU omitted")
        else:
            report.notes.append("no masks available: pixel mIoU omitted")
    elif bundles[0].evidence is not None:
        if masks is not None:
            res = miou(cam_confusion([b.evidence for b in bundles], masks), exclude)
            report.pixel_miou, report.pixel_iou = res.miou, res.per_class
            report.skipped_classes["pixel"] = res.n_skipped
        else:
            report.notes.append("no masks available: pixel mIoU omitted")
    else:
        report.notes.append(f"{model.config_id} produces no sub-scene segmentation: mIoU not applicable")
    return report


@dataclass
class FoldResult:
    model_id: str
    repeat: int
    fold: int
    scene_rmse: float
    scene_mae: float
    patch_miou: Optional[float]
    pixel_miou: Optional[float]
    best_epoch: int
    stop_reason: str


def run_cv_experiment(manifest: DatasetManifest, model_id: str, train_config: TrainConfig,
                      n_folds: int = 5, n_repeats: int = 1, seed: int = 0,
                      folds: Optional[Sequence[int]] = None,
                      on_result: Optional[Callable[[FoldResult], None]] = None) -> list[FoldResult]:
    """Train and test one model per (repeat, fold); repeat ``r`` shuffles the
    folds with seed ``seed + r``."""
    validate_model_id(model_id)
    probe = build_model(model_id, seed=0)
    with_masks = manifest.has_masks
    bags = {sid: manifest.load_bag(sid, probe.grid_size, probe.patch_size, with_masks)
            for sid in manifest.scene_ids}
    masks = {sid: manifest.load_mask(sid) for sid in manifest.scene_ids} if with_masks else None

    results = []
    for r in range(n_repeats):
        for split in make_folds(manifest.scene_ids, n_folds, seed + r):
            if folds is not None and split.fold not in folds:
                continue
            run_seed = int(np.random.SeedSequence([seed, r, split.fold]).generate_state(1)[0])
            model = build_model(model_id, seed=run_seed, dropout=train_config.dropout)
            cfg = replace(train_config, seed=run_seed)
            model, log = train_model(model, [bags[s] for s in split.train],
                                     [bags[s] for s in split.validation], cfg)
            test = [bags[s] for s in split.test]
            report = evaluate_model(model, test, [masks[s] for s in split.test] if masks else None)
            res = FoldResult(model_id, r, split.fold, report.scene_rmse, report.scene_mae,
                             report.patch_miou, report.pixel_miou, log.best_epoch, log.stop_reason)
            results.append(res)
            if on_result is not None:
                on_result(res)
    return results
