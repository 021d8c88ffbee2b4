from __future__ import annotations

import os
from pathlib import Path

import numpy as np
from PIL import Image


def load_rgb(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def save_png(path, array: np.ndarray) -> None:
    """Write an 8-bit RGB or greyscale array as PNG, replacing atomically."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    tmp = f"{os.fspath(path)}.tmp"
    Image.fromarray(np.asarray(array, dtype=np.uint8)).save(tmp, format="PNG")
    os.replace(tmp, path)
