"""8-bit grayscale PNG reading and writing."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def read_gray_png(path: str | Path) -> np.ndarray:
    """Read a PNG as an 8-bit grayscale array (H, W)."""
    with Image.open(path) as img:
        return np.asarray(img.convert("L"), dtype=np.uint8)


def write_gray_png(path: str | Path, image: np.ndarray) -> None:
    """Write an (H, W) uint8 array as a grayscale PNG."""
    arr = np.asarray(image)
    if arr.ndim != 2 or arr.dtype != np.uint8:
        raise ValueError(f"expected 2-D uint8 array, got {arr.dtype} with shape {arr.shape}")
    Image.fromarray(arr, mode="L").save(path, format="PNG")
