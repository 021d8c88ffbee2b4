"""Seeded k-fold splits with 80/10/10 train/validation/test proportions."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class FoldSplit:
    fold: int
    train: tuple[str, ...]
    validation: tuple[str, ...]
    test: tuple[str, ...]


def make_folds(scene_ids: Sequence[str], n_folds: int = 5, seed: int = 0) -> list[FoldSplit]:
    """Shuffle, cut into ``2 * n_folds`` near-equal chunks; fold ``f`` tests on
    chunk ``2f``, validates on chunk ``2f + 1`` and trains on the rest.

    With five folds this gives 80/10/10 splits; test sets of different folds are
    disjoint, and the held-out (test + validation) sets partition the data.
    """
    ids = list(scene_ids)
    if len(set(ids)) != len(ids):
        raise ValueError("scene ids must be unique")
    n_chunks = 2 * n_folds
    if len(ids) < n_chunks:
        raise ValueError(f"need at least {n_chunks} scenes for {n_folds} folds, got {len(ids)}")
    order = np.random.default_rng(seed).permutation(len(ids))
    chunks = [[ids[i] for i in chunk] for chunk in np.array_split(order, n_chunks)]
    folds = []
    for f in range(n_folds):
        test, val = chunks[2 * f], chunks[2 * f + 1]
        train = [s for c, chunk in enumerate(chunks) if c not in (2 * f, 2 * f + 1) for s in chunk]
        folds.append(FoldSplit(f, tuple(train), tuple(val), tuple(test)))
    return folds
