"""Synthetic land-cover scenes: rectangular single-class regions painted with a
characteristic colour per class plus Gaussian pixel noise."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .codec import compute_proportions

# class-characteristic base colours (not the mask colour coding)
BASE_COLORS = np.array([
    (128, 128, 128),  # urban: grey
    (214, 196, 92),   # agriculture: ochre
    (150, 200, 110),  # rangeland: light green
    (34, 102, 40),    # forest: dark green
    (32, 64, 168),    # water: blue
    (232, 220, 196),  # barren: sand
    (16, 16, 16),     # unknown: near black
], dtype=np.float64)

DEFAULT_ACTIVE = (0, 1, 3, 4)

Region = tuple[int, int, int, int, int]  # row0, row1, col0, col1, class


@dataclass
class SynthScene:
    scene_id: str
    image: np.ndarray   # (S, S, 3) uint8
    mask: np.ndarray    # (S, S) class indices
    label: np.ndarray   # (7,) proportions


def render_scene(regions: Sequence[Region], size: int, rng: np.random.Generator,
                 noise_sigma: float = 8.0) -> tuple[np.ndarray, np.ndarray]:
    """Paint ``regions`` onto a ``size`` x ``size`` canvas; returns (image, mask).

    Later regions overwrite earlier ones; uncovered pixels are class 6 (unknown).
    """
    mask = np.full((size, size), 6, dtype=np.uint8)
    for r0, r1, c0, c1, cls in regions:
        mask[r0:r1, c0:c1] = cls
    image = BASE_COLORS[mask] + rng.normal(0.0, noise_sigma, size=(size, size, 3))
    return np.clip(np.rint(image), 0, 255).astype(np.uint8), mask


def random_layout(size: int, rng: np.random.Generator, classes: Sequence[int],
                  max_regions: int = 4, step: int = 1) -> list[Region]:
    """Guillotine partition of the scene into 1..max_regions rectangles whose
    edges lie on multiples of ``step``."""
    rects = [(0, size, 0, size)]
    for _ in range(int(rng.integers(1, max_regions + 1)) - 1):
        splittable = [i for i, (r0, r1, c0, c1) in enumerate(rects) if r1 - r0 > step or c1 - c0 > step]
        if not splittable:
            break
        i = splittable[int(rng.integers(len(splittable)))]
        r0, r1, c0, c1 = rects.pop(i)
        axes = [a for a, extent in ((0, r1 - r0), (1, c1 - c0)) if extent > step]
        axis = axes[int(rng.integers(len(axes)))]
        if axis == 0:
            cut = r0 + step * int(rng.integers(1, (r1 - r0) // step))
            rects += [(r0, cut, c0, c1), (cut, r1, c0, c1)]
        else:
            cut = c0 + step * int(rng.integers(1, (c1 - c0) // step))
            rects += [(r0, r1, c0, cut), (r0, r1, cut, c1)]
    labels = rng.choice(np.asarray(classes), size=len(rects))
    return [(r0, r1, c0, c1, int(c)) for (r0, r1, c0, c1), c in zip(rects, labels)]


def synth_generate(n_scenes: int, scene_size: int = 48, seed: int = 0,
                   active_classes: Sequence[int] = DEFAULT_ACTIVE, noise_sigma: float = 8.0,
                   max_regions: int = 4, boundary_step: int | None = None) -> list[SynthScene]:
    """Generate ``n_scenes`` seeded scenes with pixel-perfect masks.

    ``boundary_step`` defaults to ``scene_size // 8`` so that every grid cell at
    grid sizes 8, 16 and 24 is single-class; pass 1 for unaligned regions.
    """
    if scene_size % 48:
        raise ValueError(f"scene size {scene_size} must be divisible by 8, 16 and 24")
    step = scene_size // 8 if boundary_step is None else boundary_step
    scenes = []
    for i, child in enumerate(np.random.SeedSequence(seed).spawn(n_scenes)):
        rng = np.random.default_rng(child)
        regions = random_layout(scene_size, rng, active_classes, max_regions, step)
        image, mask = render_scene(regions, scene_size, rng, noise_sigma)
        scenes.append(SynthScene(f"synth_{i:04d}", image, mask, compute_proportions(mask)))
    return scenes


def channel_statistics(images: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and (population) std of ``pixel / 255`` over all images."""
    total = np.zeros(3)
    total_sq = np.zeros(3)
    count = 0
    for img in images:
        x = img.reshape(-1, 3).astype(np.float64) / 255.0
        total += x.sum(axis=0)
        total_sq += (x * x).sum(axis=0)
        count += x.shape[0]
    mean = total / count
    std = np.sqrt(np.maximum(total_sq / count - mean * mean, 0.0))
    return mean, std
