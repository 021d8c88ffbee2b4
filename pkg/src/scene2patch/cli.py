"""Command-line entry point.

Exit codes: 0 success, 2 usage error (nothing written), 1 runtime error.
Option precedence: command-line flags, then ``--config`` JSON, then the
tabulated per-model defaults.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data import (
    CLASS_NAMES,
    DEEPGLOBE_MEAN,
    DEEPGLOBE_STD,
    N_CLASSES,
    DatasetManifest,
    build_bag,
    compute_proportions,
    decode_mask,
    load_rgb,
    make_folds,
    prepare_manifest,
    save_png,
    synth_generate,
    write_synth_dataset,
)
from .models import MODEL_IDS, UNetModel, build_model, read_model, save_model, validate_model_id
from .models.registry import UnknownModelError
from .render import render_segmentation
from .reporting import (
    aggregate,
    collect_fold_results,
    fold_results_csv,
    metrics_report_csv,
    metrics_report_text,
    results_table_csv,
    results_table_text,
)
from .training import FoldResult, TrainConfig, evaluate_model, run_cv_experiment, train_model

OUTPUT_ROOT_ENV = "S2P_OUTPUT_ROOT"
EVIDENCE_CHOICES = ("both", "weighted", "unweighted")

logger = logging.getLogger("scene2patch")


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    command: str = ""
    root: Optional[str] = None
    manifest: Optional[str] = None
    checkpoint: Optional[str] = None
    image: Optional[str] = None
    mask: Optional[str] = None
    results: Optional[str] = None
    model: Optional[str] = None
    grid: Optional[int] = None
    learning_rate: Optional[float] = None
    weight_decay: Optional[float] = None
    dropout: Optional[float] = None
    patience: Optional[int] = None
    max_epochs: Optional[int] = None
    seed: int = 0
    folds: int = 5
    fold: Optional[int] = None
    repeats: int = 1
    n: int = 200
    size: int = 48
    stats: str = "computed"
    exclude_unknown: bool = False
    evidence: str = "both"
    class_panels: bool = True
    out: Optional[str] = None


CONFIG_KEYS = {f.name for f in fields(RunConfig)} - {"command"}


def _resolve(args: argparse.Namespace) -> RunConfig:
    """Merge defaults, the JSON config file and explicit flags."""
    values: dict = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        try:
            cfg = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(cfg, dict):
            raise UsageError(f"config file {path} must hold a JSON object")
        unknown = set(cfg) - CONFIG_KEYS
        if unknown:
            raise UsageError(f"unknown config keys {sorted(unknown)}; allowed: {sorted(CONFIG_KEYS)}")
        values.update(cfg)
    for key in CONFIG_KEYS:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    return RunConfig(command=args.command, **values)


def _model_id(cfg: RunConfig, required: bool = True) -> Optional[str]:
    """Model id with ``--grid`` folded in (``s2p-small`` + 8 -> ``s2p-small-8``)."""
    mid = cfg.model
    if mid is None:
        if required:
            raise UsageError("--model is required")
        return None
    if cfg.grid is not None:
        parts = mid.split("-")
        if mid.startswith("s2p-") and len(parts) == 2:
            mid = f"{mid}-{cfg.grid}"
        elif not (mid.startswith("s2p-") and parts[-1] == str(cfg.grid)):
            raise UsageError(f"--grid {cfg.grid} does not fit model {mid!r}")
    try:
        return validate_model_id(mid)
    except UnknownModelError as exc:
        raise UsageError(str(exc)) from None


def _out_dir(cfg: RunConfig) -> Path:
    if cfg.out:
        return Path(cfg.out)
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / cfg.command


def _existing(path: Optional[str], what: str) -> Path:
    if not path:
        raise UsageError(f"{what} is required")
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {p}")
    return p


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _train_config(cfg: RunConfig, model_id: str) -> TrainConfig:
    overrides = {k: getattr(cfg, k) for k in ("learning_rate", "weight_decay", "dropout", "patience", "max_epochs")}
    try:
        return TrainConfig.for_model(model_id, seed=cfg.seed, **overrides)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _check_fold(cfg: RunConfig) -> None:
    if cfg.folds < 2:
        raise UsageError(f"--folds must be >= 2, got {cfg.folds}")
    if cfg.fold is not None and not 0 <= cfg.fold < cfg.folds:
        raise UsageError(f"--fold must lie in [0, {cfg.folds}), got {cfg.fold}")


# commands -------------------------------------------------------------------

def cmd_prepare(cfg: RunConfig) -> int:
    root = _existing(cfg.root, "dataset root")
    if cfg.stats not in ("computed", "deepglobe"):
        raise UsageError(f"--stats must be 'computed' or 'deepglobe', got {cfg.stats!r}")
    out = _out_dir(cfg)
    manifest, unpaired = prepare_manifest(root, cfg.stats)
    manifest.save(out / "manifest.csv")
    labels = np.stack([e.proportions for e in manifest.entries])
    print(f"{len(manifest.entries)} scenes written to {out / 'manifest.csv'}")
    print("class balance (mean coverage, scenes present):")
    for c, name in enumerate(CLASS_NAMES):
        print(f"  {name:<12} {labels[:, c].mean():.4f}  {int((labels[:, c] > 0).sum())}")
    if unpaired:
        print(f"warning: {len(unpaired)} unpaired file(s) skipped", file=sys.stderr)
        for p in unpaired:
            print(f"  {p}", file=sys.stderr)
    return 0


def cmd_synth(cfg: RunConfig) -> int:
    if cfg.n < 1:
        raise UsageError(f"--n must be positive, got {cfg.n}")
    if cfg.size <= 0 or cfg.size % 48:
        raise UsageError(f"--size must be a positive multiple of 48 (divisible by 8, 16 and 24), got {cfg.size}")
    out = _out_dir(cfg)
    scenes = synth_generate(cfg.n, cfg.size, seed=cfg.seed)
    write_synth_dataset(out, scenes, seed=cfg.seed)
    # self-check: labels stored in the manifest equal a recount of the written masks
    manifest = DatasetManifest.load(out / "manifest.csv")
    for e in manifest.entries:
        recount = compute_proportions(decode_mask(load_rgb(e.mask_path), strict=True))
        if not np.array_equal(recount, e.proportions):
            raise RuntimeError(f"label self-check failed for {e.scene_id}")
    print(f"{cfg.n} synthetic scenes ({cfg.size}x{cfg.size}) written to {out}; labels verified")
    return 0


def _load_manifest(cfg: RunConfig) -> DatasetManifest:
    return DatasetManifest.load(_existing(cfg.manifest, "--manifest"))


def cmd_train(cfg: RunConfig) -> int:
    model_id = _model_id(cfg)
    _check_fold(cfg)
    tcfg = _train_config(cfg, model_id)
    manifest_path = _existing(cfg.manifest, "--manifest")
    out = _out_dir(cfg)

    manifest = DatasetManifest.load(manifest_path)
    fold = 0 if cfg.fold is None else cfg.fold
    split = make_folds(manifest.scene_ids, cfg.folds, cfg.seed)[fold]
    model = build_model(model_id, seed=cfg.seed, dropout=tcfg.dropout)
    load = lambda ids: manifest.load_bags(ids, model.grid_size, model.patch_size, with_mask=False)  # noqa: E731
    model, log = train_model(model, load(split.train), load(split.validation), tcfg,
                             on_epoch=lambda r: logger.info("epoch %d val_rmse %.5f", r.epoch, r.val_rmse))

    extra = {"mean": [float(v) for v in manifest.mean], "std": [float(v) for v in manifest.std],
             "fold": fold, "folds": cfg.folds, "seed": cfg.seed,
             "learning_rate": tcfg.learning_rate, "weight_decay": tcfg.weight_decay}
    out.mkdir(parents=True, exist_ok=True)
    save_model(out / "model.ckpt", model, extra)
    _write_text(out / "train_log.csv", log.to_csv_text())
    summary = (f"{model_id} fold {fold}/{cfg.folds}: best val RMSE {log.best_val_rmse:.6f} at epoch "
               f"{log.best_epoch} (initial {log.initial_val_rmse:.6f}); stop reason: {log.stop_reason}")
    _write_text(out / "summary.txt", summary + "\n")
    print(summary)
    return 0


def cmd_eval(cfg: RunConfig) -> int:
    ckpt = _existing(cfg.checkpoint, "--checkpoint")
    manifest_path = _existing(cfg.manifest, "--manifest")
    requested = _model_id(cfg, required=False)
    _check_fold(cfg)
    out = _out_dir(cfg)

    model, meta = read_model(ckpt)
    if requested is not None and requested != model.config_id:
        raise RuntimeError(f"checkpoint holds {model.config_id}, but {requested} was requested")
    manifest = DatasetManifest.load(manifest_path)
    ids = manifest.scene_ids
    if cfg.fold is not None:
        ids = list(make_folds(ids, cfg.folds, cfg.seed)[cfg.fold].test)
    with_masks = manifest.has_masks
    bags = manifest.load_bags(ids, model.grid_size, model.patch_size, with_mask=with_masks)
    masks = [manifest.load_mask(s) for s in ids] if with_masks else None
    report = evaluate_model(model, bags, masks, cfg.exclude_unknown)

    text = metrics_report_text(report, model.config_id)
    _write_text(out / "metrics.csv", metrics_report_csv(report, model.config_id))
    _write_text(out / "metrics.txt", text)
    print(text, end="")
    return 0


def cmd_segment(cfg: RunConfig) -> int:
    ckpt = _existing(cfg.checkpoint, "--checkpoint")
    image_path = _existing(cfg.image, "--image")
    mask_path = _existing(cfg.mask, "--mask") if cfg.mask else None
    if cfg.evidence not in EVIDENCE_CHOICES:
        raise UsageError(f"--evidence must be one of {EVIDENCE_CHOICES}, got {cfg.evidence!r}")
    out = _out_dir(cfg)

    model, meta = read_model(ckpt)
    if model.grid_size == 1 and not isinstance(model, UNetModel):
        raise UsageError(f"{model.config_id} predicts scene proportions only and has nothing to segment")
    image = load_rgb(image_path)
    mask = decode_mask(load_rgb(mask_path)) if mask_path else None
    if mask is not None and mask.shape != image.shape[:2]:
        raise RuntimeError(f"mask {mask.shape} does not match image {image.shape[:2]}")
    h, w = image.shape[:2]
    if not isinstance(model, UNetModel) and (h % model.grid_size or w % model.grid_size):
        raise RuntimeError(f"scene {h}x{w} is not divisible by grid size {model.grid_size}; "
                           f"crop or resize it to a multiple of {model.grid_size}")
    mean = meta.get("mean", DEEPGLOBE_MEAN)
    std = meta.get("std", DEEPGLOBE_STD)
    bag = build_bag(image_path.stem, image, model.grid_size, model.patch_size, mean, std,
                    label=np.zeros(N_CLASSES))
    bundle = model.predict(bag)
    outputs = render_segmentation(model, bundle, image, mask, CLASS_NAMES)

    for key, arr in outputs.items():
        if key.startswith("evidence_"):
            if not cfg.class_panels:
                continue
            variant = key.rsplit("_", 1)[1]
            if cfg.evidence != "both" and variant != cfg.evidence:
                continue
            save_png(out / "evidence" / f"{key[len('evidence_'):]}.png", arr)
        else:
            save_png(out / f"{key}.png", arr)
    rows = "".join(f"{n},{v!r}\n" for n, v in zip(CLASS_NAMES, bundle.scene_pred.data.tolist()))
    _write_text(out / "scene_prediction.csv", "class,proportion\n" + rows)
    print(f"segmentation of {image_path.name} written to {out}")
    return 0


def cmd_report(cfg: RunConfig) -> int:
    directory = _existing(cfg.results, "results directory")
    results = collect_fold_results(directory)
    if not results:
        raise UsageError(f"no fold result files under {directory}")
    out = _out_dir(cfg)
    table = aggregate(results)
    text = results_table_text(table)
    _write_text(out / "results_table.csv", results_table_csv(table))
    _write_text(out / "results_table.txt", text)
    print(text, end="")
    return 0


def cmd_cv(cfg: RunConfig) -> int:
    model_id = _model_id(cfg)
    _check_fold(cfg)
    if cfg.repeats < 1:
        raise UsageError(f"--repeats must be >= 1, got {cfg.repeats}")
    tcfg = _train_config(cfg, model_id)
    manifest = _load_manifest(cfg)
    out = _out_dir(cfg)

    def save(res: FoldResult):
        _write_text(out / f"fold_result_r{res.repeat}_f{res.fold}.csv", fold_results_csv([res]))
        logger.info("repeat %d fold %d: scene RMSE %.5f", res.repeat, res.fold, res.scene_rmse)

    folds = None if cfg.fold is None else [cfg.fold]
    results = run_cv_experiment(manifest, model_id, tcfg, cfg.folds, cfg.repeats, cfg.seed, folds, save)
    table = aggregate(results)
    text = results_table_text(table)
    _write_text(out / "results_table.csv", results_table_csv(table))
    _write_text(out / "results_table.txt", text)
    print(text, end="")
    return 0


COMMANDS = {"prepare": cmd_prepare, "synth": cmd_synth, "train": cmd_train, "eval": cmd_eval,
            "segment": cmd_segment, "report": cmd_report, "cv": cmd_cv}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scene2patch", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, model=False, folds=False, train=False):
        p.add_argument("--config", help="JSON file with RunConfig fields")
        p.add_argument("--out", help=f"output directory (default ${OUTPUT_ROOT_ENV}/<command> or runs/<command>)")
        p.add_argument("--seed", type=int)
        if model:
            p.add_argument("--model", help=f"one of {', '.join(MODEL_IDS)}")
            p.add_argument("--grid", type=int, help="grid size appended to an s2p-<class> model id")
        if folds:
            p.add_argument("--folds", type=int, help="number of cross-validation folds")
            p.add_argument("--fold", type=int, help="fold index")
        if train:
            p.add_argument("--lr", dest="learning_rate", type=float)
            p.add_argument("--weight-decay", dest="weight_decay", type=float)
            p.add_argument("--dropout", type=float)
            p.add_argument("--patience", type=int)
            p.add_argument("--max-epochs", dest="max_epochs", type=int)
        return p

    p = common(sub.add_parser("prepare", help="build a manifest from <id>_sat / <id>_mask pairs"))
    p.add_argument("root", nargs="?")
    p.add_argument("--stats", choices=("computed", "deepglobe"))

    p = common(sub.add_parser("synth", help="generate a synthetic colour-separable dataset"))
    p.add_argument("--n", type=int)
    p.add_argument("--size", type=int)

    p = common(sub.add_parser("train", help="train one model on one fold"), model=True, folds=True, train=True)
    p.add_argument("--manifest")

    p = common(sub.add_parser("eval", help="evaluate a checkpoint"), model=True, folds=True)
    p.add_argument("--checkpoint")
    p.add_argument("--manifest")
    p.add_argument("--exclude-unknown", dest="exclude_unknown", action="store_const", const=True)

    p = common(sub.add_parser("segment", help="render masks and evidence heatmaps for one scene"))
    p.add_argument("--checkpoint")
    p.add_argument("--image")
    p.add_argument("--mask")
    p.add_argument("--evidence", choices=EVIDENCE_CHOICES)
    p.add_argument("--no-class-panels", dest="class_panels", action="store_const", const=False)

    p = common(sub.add_parser("report", help="aggregate fold result files"))
    p.add_argument("results", nargs="?")

    p = common(sub.add_parser("cv", help="repeated k-fold cross-validation"), model=True, folds=True, train=True)
    p.add_argument("--manifest")
    p.add_argument("--repeats", type=int)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _resolve(args)
        return COMMANDS[cfg.command](cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failures
        logger.debug("runtime failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
