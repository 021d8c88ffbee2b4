"""Grid tiling of scenes into MIL bags."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..ndcore.functional import interp_matrix
from .codec import compute_proportions, patch_majority_labels

DEEPGLOBE_MEAN = (0.4082, 0.3791, 0.2816)
DEEPGLOBE_STD = (0.06722, 0.04668, 0.04768)


class GeometryError(ValueError):
    pass


@dataclass
class Bag:
    """Patches of one scene in row-major grid order plus its proportion label."""

    scene_id: str
    patches: np.ndarray          # (k, 3, P, P) normalised float64
    grid_rows: int
    grid_cols: int
    label: np.ndarray            # (C,) coverage proportions
    patch_labels: Optional[np.ndarray] = None  # (k,) cell-majority classes, evaluation only

    @property
    def k(self) -> int:
        return self.patches.shape[0]

    @property
    def patch_size(self) -> int:
        return self.patches.shape[-1]

    def cell_of(self, j: int) -> tuple[int, int]:
        return divmod(j, self.grid_cols)

    def index_of(self, row: int, col: int) -> int:
        return row * self.grid_cols + col


def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel centres (``align_corners=False``).

    Works on ``(H, W)`` or ``(H, W, C)`` arrays; uint8 input is rounded back to uint8.
    """
    h, w = image.shape[:2]
    if (h, w) == (out_h, out_w):
        return image.copy()
    rh = interp_matrix(h, out_h)
    rw = interp_matrix(w, out_w)
    img = image.astype(np.float64)
    if img.ndim == 2:
        out = rh @ img @ rw.T
    else:
        out = np.einsum("ph,hwc,qw->pqc", rh, img, rw, optimize=True)
    if image.dtype == np.uint8:
        return np.clip(np.rint(out), 0, 255).astype(np.uint8)
    return out


def split_cells(scene: np.ndarray, grid_size: int) -> np.ndarray:
    """``(H, W, ...)`` -> ``(grid_size**2, H/g, W/g, ...)`` non-overlapping cells, row-major."""
    h, w = scene.shape[:2]
    if h % grid_size or w % grid_size:
        raise GeometryError(
            f"scene {h}x{w} is not divisible by grid size {grid_size}; "
            f"resize it to a multiple of {grid_size} before tiling")
    ch, cw = h // grid_size, w // grid_size
    rest = scene.shape[2:]
    cells = scene.reshape(grid_size, ch, grid_size, cw, *rest)
    cells = np.moveaxis(cells, 2, 1)
    return cells.reshape(grid_size * grid_size, ch, cw, *rest)


def assemble_cells(cells: np.ndarray, grid_size: int) -> np.ndarray:
    """Inverse of :func:`split_cells`."""
    _, ch, cw = cells.shape[:3]
    rest = cells.shape[3:]
    grid = cells.reshape(grid_size, grid_size, ch, cw, *rest)
    return np.moveaxis(grid, 1, 2).reshape(grid_size * ch, grid_size * cw, *rest)


def extract_patches(scene: np.ndarray, grid_size: int, patch_size: int) -> np.ndarray:
    """Tile an RGB scene into ``grid_size**2`` cells, each resized to ``patch_size``.

    Returns uint8 ``(k, P, P, 3)``.
    """
    cells = split_cells(np.asarray(scene), grid_size)
    return np.stack([resize_bilinear(c, patch_size, patch_size) for c in cells])


def normalize(patches: np.ndarray, mean: Sequence[float] = DEEPGLOBE_MEAN,
              std: Sequence[float] = DEEPGLOBE_STD) -> np.ndarray:
    """8-bit ``(..., P, P, 3)`` -> channel-first float64 ``(..., 3, P, P)``."""
    x = np.asarray(patches, dtype=np.float64) / 255.0
    x = (x - np.asarray(mean)) / np.asarray(std)
    return np.ascontiguousarray(np.moveaxis(x, -1, -3))


def build_bag(scene_id: str, image: np.ndarray, grid_size: int, patch_size: int,
              mean: Sequence[float], std: Sequence[float],
              mask: Optional[np.ndarray] = None, label: Optional[np.ndarray] = None) -> Bag:
    """Bag from an RGB scene; the label comes from ``mask`` when one is given."""
    patches = normalize(extract_patches(image, grid_size, patch_size), mean, std)
    patch_labels = None
    if mask is not None:
        label = compute_proportions(mask)
        patch_labels = patch_majority_labels(mask, grid_size)
    if label is None:
        raise ValueError(f"scene {scene_id!r} needs either a mask or a proportion label")
    return Bag(scene_id, patches, grid_size, grid_size, np.asarray(label, dtype=np.float64), patch_labels)
