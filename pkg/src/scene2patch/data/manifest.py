"""Dataset manifest: CSV table of scenes plus a JSON statistics sidecar."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .codec import CLASS_NAMES, COLOR_TABLE, compute_proportions, decode_mask, encode_mask
from .imageio import load_rgb, save_png
from .synth import SynthScene, channel_statistics
from .tiling import DEEPGLOBE_MEAN, DEEPGLOBE_STD, Bag, build_bag

logger = logging.getLogger(__name__)

PROPORTION_COLUMNS = tuple(f"p_{name}" for name in CLASS_NAMES)
CSV_COLUMNS = ("scene_id", "image_path", "mask_path") + PROPORTION_COLUMNS
SIDECAR_SUFFIX = ".stats.json"


class ManifestError(ValueError):
    pass


@dataclass
class ManifestEntry:
    scene_id: str
    image_path: Path
    mask_path: Optional[Path]
    proportions: np.ndarray


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    mean: np.ndarray
    std: np.ndarray
    color_table: np.ndarray = field(default_factory=lambda: COLOR_TABLE.copy())
    seed: Optional[int] = None

    def __post_init__(self):
        ids = [e.scene_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ManifestError("scene ids in a manifest must be unique")
        for e in self.entries:
            p = np.asarray(e.proportions)
            if (p < 0).any() or abs(p.sum() - 1.0) > 1e-9:
                raise ManifestError(f"scene {e.scene_id!r}: proportions must be >= 0 and sum to 1")

    @property
    def scene_ids(self) -> list[str]:
        return [e.scene_id for e in self.entries]

    @property
    def has_masks(self) -> bool:
        return all(e.mask_path is not None for e in self.entries)

    def entry(self, scene_id: str) -> ManifestEntry:
        for e in self.entries:
            if e.scene_id == scene_id:
                return e
        raise KeyError(scene_id)

    def subset(self, scene_ids: Iterable[str]) -> list[ManifestEntry]:
        lookup = {e.scene_id: e for e in self.entries}
        return [lookup[s] for s in scene_ids]

    # persistence -----------------------------------------------------------

    def to_csv_text(self, base: Path) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for e in self.entries:
            writer.writerow([
                e.scene_id,
                _relpath(e.image_path, base),
                _relpath(e.mask_path, base) if e.mask_path is not None else "",
                *(repr(float(v)) for v in e.proportions),
            ])
        return buf.getvalue()

    def sidecar(self) -> dict:
        return {
            "mean": [float(v) for v in self.mean],
            "std": [float(v) for v in self.std],
            "color_table": {name: [int(c) for c in rgb] for name, rgb in zip(CLASS_NAMES, self.color_table)},
            "seed": self.seed,
        }

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        _atomic_write(path, self.to_csv_text(path.parent))
        _atomic_write(sidecar_path(path), json.dumps(self.sidecar(), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        base = path.parent
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = set(CSV_COLUMNS) - set(reader.fieldnames or ())
            if missing:
                raise ManifestError(f"manifest {path} lacks columns {sorted(missing)}")
            entries = [
                ManifestEntry(
                    row["scene_id"],
                    base / row["image_path"],
                    base / row["mask_path"] if row["mask_path"] else None,
                    np.array([float(row[c]) for c in PROPORTION_COLUMNS]),
                )
                for row in reader
            ]
        side = json.loads(sidecar_path(path).read_text())
        table = np.array([side["color_table"][name] for name in CLASS_NAMES], dtype=np.uint8)
        return cls(entries, np.array(side["mean"]), np.array(side["std"]), table, side.get("seed"))

    # bags ------------------------------------------------------------------

    def load_bag(self, scene_id: str, grid_size: int, patch_size: int, with_mask: bool = True) -> Bag:
        e = self.entry(scene_id)
        image = load_rgb(e.image_path)
        mask = None
        if with_mask and e.mask_path is not None:
            mask = decode_mask(load_rgb(e.mask_path), self.color_table)
        return build_bag(e.scene_id, image, grid_size, patch_size, self.mean, self.std,
                         mask=mask, label=e.proportions)

    def load_bags(self, scene_ids: Sequence[str], grid_size: int, patch_size: int,
                  with_mask: bool = True) -> list[Bag]:
        return [self.load_bag(s, grid_size, patch_size, with_mask) for s in scene_ids]

    def load_mask(self, scene_id: str) -> Optional[np.ndarray]:
        e = self.entry(scene_id)
        if e.mask_path is None:
            return None
        return decode_mask(load_rgb(e.mask_path), self.color_table)


def sidecar_path(manifest_path) -> Path:
    manifest_path = Path(manifest_path)
    return manifest_path.with_name(manifest_path.stem + SIDECAR_SUFFIX)


def _relpath(p: Path, base: Path) -> str:
    return Path(os.path.relpath(p, base)).as_posix()


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


_SAT = re.compile(r"^(?P<id>.+)_sat\.(png|jpg|jpeg|tif|tiff)$", re.IGNORECASE)
_MASK = re.compile(r"^(?P<id>.+)_mask\.(png|bmp|tif|tiff)$", re.IGNORECASE)


def scan_pairs(root) -> tuple[list[tuple[str, Path, Path]], list[Path]]:
    """Pair DeepGlobe-style ``<id>_sat.*`` and ``<id>_mask.*`` files.

    Returns (pairs sorted by id, unpaired files).
    """
    root = Path(root)
    sats, masks = {}, {}
    for p in sorted(root.rglob("*")):
        if not p.is_file():
            continue
        if m := _SAT.match(p.name):
            sats[m["id"]] = p
        elif m := _MASK.match(p.name):
            masks[m["id"]] = p
    pairs = [(sid, sats[sid], masks[sid]) for sid in sorted(sats.keys() & masks.keys())]
    unpaired = sorted([sats[s] for s in sats.keys() - masks.keys()] +
                      [masks[s] for s in masks.keys() - sats.keys()])
    return pairs, unpaired


def prepare_manifest(root, stats: str = "computed") -> tuple[DatasetManifest, list[Path]]:
    """Build a manifest from a DeepGlobe-style directory.

    ``stats`` is ``"computed"`` (dataset channel statistics) or ``"deepglobe"``
    (the published DeepGlobe normalisation constants).
    """
    pairs, unpaired = scan_pairs(root)
    for p in unpaired:
        logger.warning("unpaired file skipped: %s", p)
    if not pairs:
        raise ManifestError(f"no image/mask pairs found under {root}")
    entries = []
    images = []
    for sid, img_path, mask_path in pairs:
        mask = decode_mask(load_rgb(mask_path))
        entries.append(ManifestEntry(sid, img_path, mask_path, compute_proportions(mask)))
        if stats == "computed":
            images.append(load_rgb(img_path))
    if stats == "computed":
        mean, std = channel_statistics(images)
    elif stats == "deepglobe":
        mean, std = np.array(DEEPGLOBE_MEAN), np.array(DEEPGLOBE_STD)
    else:
        raise ValueError(f"unknown statistics mode {stats!r}")
    return DatasetManifest(entries, mean, std), unpaired


def write_synth_dataset(out_dir, scenes: Sequence[SynthScene], seed: Optional[int] = None) -> DatasetManifest:
    """Write scenes as ``<id>_sat.png`` / ``<id>_mask.png`` plus ``manifest.csv``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for s in scenes:
        img_path = out_dir / f"{s.scene_id}_sat.png"
        mask_path = out_dir / f"{s.scene_id}_mask.png"
        save_png(img_path, s.image)
        save_png(mask_path, encode_mask(s.mask))
        entries.append(ManifestEntry(s.scene_id, img_path, mask_path, s.label))
    mean, std = channel_statistics([s.image for s in scenes])
    manifest = DatasetManifest(entries, mean, std, seed=seed)
    manifest.save(out_dir / "manifest.csv")
    return manifest
