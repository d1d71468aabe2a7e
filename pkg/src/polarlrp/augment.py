"""Geometric augmentation with explicit control over how exposed pixels are filled.

Flips, rotations, shifts and scalings move image content off part of the
canvas.  Filling that area with exact zeros produces a background that is
statistically unlike a real near-black sky, which a discriminator can learn
to exploit.  ``NoisePad`` fills it from a seeded Gaussian instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .tensor import Tensor, as_tensor

COVERAGE_TOL = 1e-6


@dataclass(frozen=True)
class FlipH:
    pass


@dataclass(frozen=True)
class FlipV:
    pass


@dataclass(frozen=True)
class Rotate:
    degrees: float


@dataclass(frozen=True)
class Translate:
    dx: float
    dy: float


@dataclass(frozen=True)
class Scale:
    factor: float


Op = Union[FlipH, FlipV, Rotate, Translate, Scale]


@dataclass(frozen=True)
class ZeroPad:
    pass


@dataclass(frozen=True)
class NoisePad:
    mu: float = 0.02
    sigma: float = 0.01
    seed: int = 42


Padding = Union[ZeroPad, NoisePad]


def parse_op(text: str) -> Op:
    """Parse ``flipH``, ``flipV``, ``rotate=DEG``, ``translate=DX,DY`` or ``scale=F``."""
    name, _, arg = text.partition("=")
    name = name.strip()
    try:
        if name == "flipH" and not arg:
            return FlipH()
        if name == "flipV" and not arg:
            return FlipV()
        if name == "rotate":
            return Rotate(float(arg))
        if name == "translate":
            dx, dy = arg.split(",")
            return Translate(float(dx), float(dy))
        if name == "scale":
            return Scale(float(arg))
    except ValueError:
        pass
    raise ValueError(f"cannot parse augmentation op {text!r}")


def _inverse_matrix(op: Op, h: int, w: int) -> np.ndarray:
    """Map output (x, y, 1) to source coordinates for one op."""
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    if isinstance(op, FlipH):
        return np.array([[-1.0, 0.0, w - 1.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    if isinstance(op, FlipV):
        return np.array([[1.0, 0.0, 0.0], [0.0, -1.0, h - 1.0], [0.0, 0.0, 1.0]])
    if isinstance(op, Translate):
        return np.array([[1.0, 0.0, -op.dx], [0.0, 1.0, -op.dy], [0.0, 0.0, 1.0]])
    if isinstance(op, Scale):
        if not op.factor > 0:
            raise ValueError(f"scale factor must be positive, got {op.factor}")
        # content never shrinks below one pixel
        f = max(op.factor, 1.0 / min(h, w))
        s = 1.0 / f
        return np.array([[s, 0.0, cx - s * cx], [0.0, s, cy - s * cy], [0.0, 0.0, 1.0]])
    if isinstance(op, Rotate):
        # counter-clockwise on screen (rows grow downward); the inverse rotates back
        t = math.radians(op.degrees)
        c, s = math.cos(t), math.sin(t)
        a = np.array([[c, -s], [s, c]])
        off = np.array([cx, cy]) - a @ np.array([cx, cy])
        return np.array([[a[0, 0], a[0, 1], off[0]], [a[1, 0], a[1, 1], off[1]], [0.0, 0.0, 1.0]])
    raise TypeError(f"unknown augmentation op {op!r}")


def source_coordinates(ops: Sequence[Op], h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    """Source (x, y) for every output pixel after applying ``ops`` in order."""
    inv = np.eye(3)
    for op in ops:
        inv = inv @ _inverse_matrix(op, h, w)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    sx = inv[0, 0] * xs + inv[0, 1] * ys + inv[0, 2]
    sy = inv[1, 0] * xs + inv[1, 1] * ys + inv[1, 2]
    return sx, sy


def _bilinear(img: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    _, h, w = img.shape
    sx = np.clip(sx, 0.0, w - 1.0)
    sy = np.clip(sy, 0.0, h - 1.0)
    x0 = np.minimum(np.floor(sx).astype(int), max(w - 2, 0))
    y0 = np.minimum(np.floor(sy).astype(int), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = sx - x0
    fy = sy - y0
    top = img[:, y0, x0] * (1.0 - fx) + img[:, y0, x1] * fx
    bottom = img[:, y1, x0] * (1.0 - fx) + img[:, y1, x1] * fx
    return top * (1.0 - fy) + bottom * fy


def augment_image(image, ops: Sequence[Op], padding: Padding = ZeroPad(),
                  return_mask: bool = False):
    """Apply ``ops`` in order as one composed resampling of a ``[C,H,W]`` image.

    Pixels whose source falls outside the original canvas are filled per
    ``padding``.  With ``return_mask`` the boolean coverage mask is returned
    alongside the image.
    """
    img = as_tensor(image).array
    if img.ndim != 3:
        raise ValueError(f"expected [C,H,W], got {list(img.shape)}")
    _, h, w = img.shape
    sx, sy = source_coordinates(ops, h, w)
    covered = ((sx >= -COVERAGE_TOL) & (sx <= w - 1 + COVERAGE_TOL)
               & (sy >= -COVERAGE_TOL) & (sy <= h - 1 + COVERAGE_TOL))
    out = _bilinear(img, sx, sy)
    if isinstance(padding, NoisePad):
        rng = np.random.default_rng(padding.seed)
        fill = np.clip(rng.normal(padding.mu, padding.sigma, size=img.shape), 0.0, 1.0)
    else:
        fill = np.zeros(img.shape)
    out = np.where(covered[None], out, fill)
    result = Tensor(out)
    return (result, covered) if return_mask else result
