"""DeepGlobe colour coding and mask-derived labels."""

from __future__ import annotations

import logging

import numpy as np

logger = logging.getLogger(__name__)

CLASS_NAMES = ("urban", "agriculture", "rangeland", "forest", "water", "barren", "unknown")
N_CLASSES = len(CLASS_NAMES)
COLOR_TABLE = np.array([
    (0, 255, 255),    # urban
    (255, 255, 0),    # agriculture
    (255, 0, 255),    # rangeland
    (0, 255, 0),      # forest
    (0, 0, 255),      # water
    (255, 255, 255),  # barren
    (0, 0, 0),        # unknown
], dtype=np.uint8)
UNKNOWN = 6


class MaskColorError(ValueError):
    pass


def _pack(rgb: np.ndarray) -> np.ndarray:
    rgb = rgb.astype(np.int64)
    return (rgb[..., 0] << 16) | (rgb[..., 1] << 8) | rgb[..., 2]


def off_table_count(rgb: np.ndarray, color_table: np.ndarray = COLOR_TABLE) -> int:
    return int((~np.isin(_pack(rgb), _pack(color_table))).sum())


def decode_mask(rgb: np.ndarray, color_table: np.ndarray = COLOR_TABLE, strict: bool = False) -> np.ndarray:
    """RGB mask ``(H, W, 3)`` -> class indices ``(H, W)``.

    Off-table colours go to the nearest table colour under L1 distance and are
    reported with a warning; ``strict=True`` raises instead.
    """
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[-1] < 3:
        raise ValueError(f"expected an (H, W, 3) RGB mask, got shape {rgb.shape}")
    rgb = rgb[..., :3]
    table = np.asarray(color_table)
    keys = _pack(rgb)
    table_keys = _pack(table)
    order = np.argsort(table_keys)
    pos = np.clip(np.searchsorted(table_keys[order], keys), 0, len(table) - 1)
    classes = order[pos]
    unmatched = table_keys[classes] != keys
    n_bad = int(unmatched.sum())
    if n_bad:
        if strict:
            raise MaskColorError(f"{n_bad} mask pixels use colours outside the class table")
        bad = rgb[unmatched].astype(np.int64)
        dist = np.abs(bad[:, None, :] - table[None, :, :].astype(np.int64)).sum(axis=-1)
        classes[unmatched] = dist.argmin(axis=1)
        logger.warning("%d mask pixels not in colour table; assigned nearest colour", n_bad)
    return classes.astype(np.uint8)


def encode_mask(classes: np.ndarray, color_table: np.ndarray = COLOR_TABLE) -> np.ndarray:
    return np.asarray(color_table, dtype=np.uint8)[np.asarray(classes)]


def compute_proportions(mask: np.ndarray, n_classes: int = N_CLASSES) -> np.ndarray:
    """Per-class pixel coverage fractions of a decoded mask."""
    mask = np.asarray(mask)
    counts = np.bincount(mask.reshape(-1).astype(np.int64), minlength=n_classes)
    if counts.size > n_classes:
        raise ValueError(f"mask contains class index >= {n_classes}")
    return counts / mask.size


def patch_majority_labels(mask: np.ndarray, grid_size: int, n_classes: int = N_CLASSES) -> np.ndarray:
    """Majority class of each grid cell, row-major; ties go to the lowest index."""
    h, w = mask.shape
    if h % grid_size or w % grid_size:
        raise ValueError(f"mask {h}x{w} is not divisible by grid size {grid_size}")
    ch, cw = h // grid_size, w // grid_size
    cells = mask.reshape(grid_size, ch, grid_size, cw).transpose(0, 2, 1, 3).reshape(grid_size * grid_size, -1)
    counts = np.zeros((cells.shape[0], n_classes), dtype=np.int64)
    rows = np.repeat(np.arange(cells.shape[0]), cells.shape[1])
    np.add.at(counts, (rows, cells.reshape(-1).astype(np.int64)), 1)
    return counts.argmax(axis=1)
