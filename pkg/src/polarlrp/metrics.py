"""PSNR and block SSIM for images with values in [0, 1]."""

from __future__ import annotations

import math

import numpy as np

from .tensor import ShapeError

SSIM_WINDOW = 8
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {list(a.shape)} vs {list(b.shape)}")
    return a, b


def mse(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for unit dynamic range; ``inf`` when identical."""
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / err)


def _blocks(x: np.ndarray, n: int) -> np.ndarray:
    """Non-overlapping ``n x n`` blocks of every channel, as ``[K, n*n]``."""
    if x.ndim == 2:
        x = x[None]
    c, h, w = x.shape
    bh, bw = h // n, w // n
    if bh == 0 or bw == 0:
        # image smaller than one window: the whole image is the window
        return x.reshape(c, -1)
    x = x[:, :bh * n, :bw * n].reshape(c, bh, n, bw, n)
    return x.transpose(0, 1, 3, 2, 4).reshape(c * bh * bw, n * n)


def ssim(a, b, window: int = SSIM_WINDOW) -> float:
    """Mean SSIM over non-overlapping ``window x window`` blocks of each channel.

    Statistics are population moments within a block; a trailing remainder
    that does not fill a whole block is ignored.
    """
    a, b = _pair(a, b)
    pa, pb = _blocks(a, window), _blocks(b, window)
    mu_a, mu_b = pa.mean(axis=1), pb.mean(axis=1)
    da, db = pa - mu_a[:, None], pb - mu_b[:, None]
    var_a = (da * da).mean(axis=1)
    var_b = (db * db).mean(axis=1)
    cov = (da * db).mean(axis=1)
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a ** 2 + mu_b ** 2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return float(np.mean(num / den))
