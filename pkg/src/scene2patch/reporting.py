"""Fold-result files, mean ± standard-error aggregation and results tables."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, fields
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .data.codec import CLASS_NAMES
from .metrics import MetricsReport
from .models import MODEL_IDS
from .training import FoldResult

METRIC_COLUMNS = ("scene_rmse", "scene_mae", "patch_miou", "pixel_miou")
METRIC_HEADERS = ("Scene RMSE", "Scene MAE", "Patch mIoU", "Pixel mIoU")
FOLD_COLUMNS = tuple(f.name for f in fields(FoldResult))
FOLD_FILE_GLOB = "fold_result*.csv"


def display_name(model_id: str) -> str:
    """``s2p-small-8`` -> ``S2P Small 8``; ``unet-224`` -> ``UNet 224``."""
    if model_id == "scene-baseline":
        return "Scene baseline"
    family, *rest = model_id.split("-")
    head = {"s2p": "S2P", "unet": "UNet"}.get(family, family)
    return " ".join([head] + [r.capitalize() for r in rest])


def _fmt_float(v: Optional[float]) -> str:
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


def _parse_float(s: str) -> Optional[float]:
    return float(s) if s not in ("", "N/A") else None


def fold_results_csv(results: Sequence[FoldResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FOLD_COLUMNS)
    for r in results:
        row = asdict(r)
        w.writerow([_fmt_float(row[c]) if c in METRIC_COLUMNS else row[c] for c in FOLD_COLUMNS])
    return buf.getvalue()


def parse_fold_results(text: str) -> list[FoldResult]:
    rows = list(csv.DictReader(io.StringIO(text)))
    out = []
    for row in rows:
        out.append(FoldResult(
            model_id=row["model_id"], repeat=int(row["repeat"]), fold=int(row["fold"]),
            scene_rmse=float(row["scene_rmse"]), scene_mae=float(row["scene_mae"]),
            patch_miou=_parse_float(row["patch_miou"]), pixel_miou=_parse_float(row["pixel_miou"]),
            best_epoch=int(row.get("best_epoch") or 0), stop_reason=row.get("stop_reason", "")))
    return out


def collect_fold_results(directory) -> list[FoldResult]:
    """Every fold result found below ``directory``, in sorted file order."""
    files = sorted(Path(directory).rglob(FOLD_FILE_GLOB))
    results = []
    for f in files:
        results.extend(parse_fold_results(f.read_text()))
    return results


def mean_stderr(values: Iterable[float]) -> tuple[float, float, int]:
    """Arithmetic mean and standard error (sample std / sqrt(n); 0 when n == 1)."""
    v = np.asarray(list(values), dtype=np.float64)
    if v.size == 0:
        raise ValueError("no values to aggregate")
    se = float(np.std(v, ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), se, int(v.size)


def aggregate(results: Sequence[FoldResult]) -> dict[str, dict[str, Optional[tuple[float, float, int]]]]:
    """Per model id, per metric: (mean, stderr, n) or None when no fold has the metric."""
    by_model: dict[str, list[FoldResult]] = {}
    for r in results:
        by_model.setdefault(r.model_id, []).append(r)
    order = [m for m in MODEL_IDS if m in by_model] + sorted(set(by_model) - set(MODEL_IDS))
    table = {}
    for model_id in order:
        rows = by_model[model_id]
        table[model_id] = {}
        for col in METRIC_COLUMNS:
            vals = [getattr(r, col) for r in rows if getattr(r, col) is not None]
            table[model_id][col] = mean_stderr(vals) if vals else None
    return table


def _cell(entry, digits: int) -> str:
    if entry is None:
        return "N/A"
    mean, se, _ = entry
    return f"{mean:.{digits}f} ± {se:.{digits}f}"


def results_table_csv(table: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["model_id", "model", "n"]
    for col in METRIC_COLUMNS:
        header += [f"{col}_mean", f"{col}_stderr"]
    w.writerow(header)
    for model_id, metrics in table.items():
        n = max((e[2] for e in metrics.values() if e is not None), default=0)
        row = [model_id, display_name(model_id), n]
        for col in METRIC_COLUMNS:
            e = metrics[col]
            row += ["N/A", "N/A"] if e is None else [repr(e[0]), repr(e[1])]
        w.writerow(row)
    return buf.getvalue()


def _aligned(rows: list[list[str]]) -> str:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = []
    for j, r in enumerate(rows):
        lines.append("  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))).rstrip())
        if j == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def results_table_text(table: dict, digits: int = 3) -> str:
    rows = [["Model", *METRIC_HEADERS]]
    for model_id, metrics in table.items():
        rows.append([display_name(model_id)] + [_cell(metrics[c], digits) for c in METRIC_COLUMNS])
    return _aligned(rows)


def metrics_report_csv(report: MetricsReport, model_id: str) -> str:
    """Long-form CSV: one ``metric,value`` row per scalar, then per-class IoUs."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("model_id", "metric", "value"))
    for col in METRIC_COLUMNS:
        v = getattr(report, col)
        w.writerow((model_id, col, "N/A" if v is None else repr(float(v))))
    for level, ious in (("patch", report.patch_iou), ("pixel", report.pixel_iou)):
        if ious is None:
            continue
        for name, v in zip(CLASS_NAMES, ious):
            w.writerow((model_id, f"{level}_iou_{name}", "absent" if math.isnan(v) else repr(float(v))))
    for level, n in sorted(report.skipped_classes.items()):
        w.writerow((model_id, f"{level}_classes_skipped", n))
    return buf.getvalue()


def metrics_report_text(report: MetricsReport, model_id: str, digits: int = 4) -> str:
    rows = [["Model", *METRIC_HEADERS]]
    rows.append([display_name(model_id)] + [
        "N/A" if getattr(report, c) is None else f"{getattr(report, c):.{digits}f}" for c in METRIC_COLUMNS])
    text = _aligned(rows)
    for note in report.notes:
        text += f"note: {note}\n"
    return text
