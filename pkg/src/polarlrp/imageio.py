"""8-bit grayscale/RGB image files <-> ``[C,H,W]`` tensors in [0, 1]."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .render import write_image
from .tensor import Tensor


class ImageFormatError(ValueError):
    pass


def load_image(path) -> Tensor:
    try:
        with Image.open(Path(path)) as im:
            im.load()
            mode = im.mode
            if mode not in ("L", "RGB"):
                raise ImageFormatError(f"{path}: unsupported image mode {mode!r}; need 8-bit L or RGB")
            arr = np.asarray(im, dtype=np.uint8)
    except UnidentifiedImageError as exc:
        raise ImageFormatError(f"{path}: not a readable PNG/PGM image") from exc
    values = arr.astype(np.float64) / 255.0
    if values.ndim == 2:
        values = values[None]
    else:
        values = np.transpose(values, (2, 0, 1))
    return Tensor(values)


def quantize(values) -> np.ndarray:
    """``[C,H,W]`` reals in [0, 1] -> 8-bit ``[H,W]`` or ``[H,W,C]``."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[0] not in (1, 3):
        raise ImageFormatError(f"cannot store shape {list(arr.shape)} as a grayscale or RGB image")
    u8 = np.floor(np.clip(arr, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    return u8[0] if u8.shape[0] == 1 else np.transpose(u8, (1, 2, 0))


def save_image(values, path) -> None:
    write_image(quantize(values), path)
