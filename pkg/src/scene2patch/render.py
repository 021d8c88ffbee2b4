"""Hard segmentation masks, signed per-class evidence heatmaps and composites."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from matplotlib import colormaps

from .data.codec import COLOR_TABLE, encode_mask
from .data.tiling import resize_bilinear
from .metrics import argmax_classes, evidence_to_classes, tile_patch_classes
from .models import Model, PredictionBundle

DIVERGING_CMAP = "RdBu_r"
PANEL_PADDING = 8


class RenderError(ValueError):
    pass


def scene_evidence(model: Model, bundle: PredictionBundle, height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """(unweighted, weighted) ``[C, height, width]`` evidence at scene resolution.

    S2P patch outputs are block-tiled over their cells; UNet activation maps
    are resized bilinearly. The weighted variant scales class ``c`` by the
    scene prediction for ``c``.
    """
    scene = bundle.scene_pred.data
    if bundle.patch_preds is not None and model.grid_size > 1:
        g = model.grid_size
        if height % g or width % g:
            raise RenderError(f"scene {height}x{width} not divisible by grid size {g}")
        cells = bundle.patch_preds.data.T.reshape(-1, g, g)
        ev = np.repeat(np.repeat(cells, height // g, axis=1), width // g, axis=2)
    elif bundle.evidence is not None:
        ev = bundle.evidence
        if ev.shape[1:] != (height, width):
            ev = np.moveaxis(resize_bilinear(np.moveaxis(ev, 0, -1), height, width), -1, 0)
    else:
        raise RenderError(f"{model.config_id} produces no sub-scene evidence to render")
    return ev, ev * scene[:, None, None]


def predicted_classes(model: Model, bundle: PredictionBundle, height: int, width: int) -> np.ndarray:
    """Hard class map: patch blocks for S2P, per-pixel argmax of CAMs for the UNet."""
    if bundle.patch_preds is not None and model.grid_size > 1:
        return tile_patch_classes(argmax_classes(bundle.patch_preds.data), model.grid_size, height, width)
    if bundle.evidence is not None:
        return evidence_to_classes(bundle.evidence, height, width)
    raise RenderError(f"{model.config_id} produces no sub-scene segmentation")


def class_mask_rgb(classes: np.ndarray, color_table: np.ndarray = COLOR_TABLE) -> np.ndarray:
    return encode_mask(classes, color_table)


def signed_heatmap(values: np.ndarray, cmap: str = DIVERGING_CMAP) -> np.ndarray:
    """RGB uint8 rendering of a 2-D signed map; the colour range is symmetric
    about zero with ``vmax = max|values|`` so zero is always the mid colour."""
    values = np.asarray(values, dtype=np.float64)
    vmax = float(np.abs(values).max()) if values.size else 0.0
    unit = np.full(values.shape, 0.5) if vmax == 0.0 else 0.5 + 0.5 * values / vmax
    rgba = colormaps[cmap](unit)
    return np.rint(rgba[..., :3] * 255).astype(np.uint8)


def composite(panels: Sequence[np.ndarray], padding: int = PANEL_PADDING, fill: int = 255) -> np.ndarray:
    """Panels of equal height placed side by side with ``padding`` columns between them."""
    h = panels[0].shape[0]
    if any(p.shape[0] != h for p in panels):
        raise RenderError("composite panels must share a height")
    parts = []
    for i, p in enumerate(panels):
        if i:
            parts.append(np.full((h, padding, 3), fill, dtype=np.uint8))
        parts.append(np.asarray(p, dtype=np.uint8))
    return np.concatenate(parts, axis=1)


def render_segmentation(model: Model, bundle: PredictionBundle, image: np.ndarray,
                        mask: Optional[np.ndarray] = None, class_names: Sequence[str] = ()) -> dict[str, np.ndarray]:
    """All outputs for one scene keyed by file stem."""
    h, w = image.shape[:2]
    classes = predicted_classes(model, bundle, h, w)
    pred_rgb = class_mask_rgb(classes)
    out = {"prediction": pred_rgb}
    unweighted, weighted = scene_evidence(model, bundle, h, w)
    names = list(class_names) or [str(c) for c in range(unweighted.shape[0])]
    for c, name in enumerate(names):
        out[f"evidence_{name}_unweighted"] = signed_heatmap(unweighted[c])
        out[f"evidence_{name}_weighted"] = signed_heatmap(weighted[c])
    panels = [image] + ([class_mask_rgb(mask)] if mask is not None else []) + [pred_rgb]
    out["composite"] = composite(panels)
    return out
