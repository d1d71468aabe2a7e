"""Heatmap rendering and panel layout for relevance maps."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .lrp import RelevanceMap

COLORMAPS = ("grayscale", "heat")
LABEL_STRIP_HEIGHT = 14
DIVIDER_VALUE = 255


@dataclass(frozen=True)
class HeatmapConfig:
    colormap: str = "grayscale"
    clip_percentile: float = 99.0
    output_size: tuple[int, int] | None = (256, 256)

    def __post_init__(self):
        if self.colormap not in COLORMAPS:
            raise ValueError(f"colormap must be one of {COLORMAPS}, got {self.colormap!r}")
        if not 50.0 < self.clip_percentile <= 100.0:
            raise ValueError(f"clip percentile must lie in (50, 100], got {self.clip_percentile}")
        if self.output_size is not None:
            h, w = self.output_size
            object.__setattr__(self, "output_size", (int(h), int(w)))


def collapse_channels(values) -> np.ndarray:
    """Sum a ``[C,H,W]`` map over channels; 2-D input is returned as is."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 3:
        return arr.sum(axis=0)
    if arr.ndim == 2:
        return arr
    raise ValueError(f"expected a [C,H,W] or [H,W] map, got shape {list(arr.shape)}")


def normalize(values2d: np.ndarray, clip_percentile: float) -> np.ndarray:
    """Scale to [0, 1] by the clip-percentile of the nonzero values.

    Taking the percentile over nonzero values only keeps sparse maps
    visible: a lone hot pixel is its own percentile and renders at full
    intensity.  An all-zero map stays all zero.
    """
    nz = values2d[values2d > 0]
    if nz.size == 0:
        return np.zeros(values2d.shape)
    ref = float(np.percentile(nz, clip_percentile))
    if ref <= 0:
        return np.zeros(values2d.shape)
    return np.clip(values2d / ref, 0.0, 1.0)


def _to_u8(t: np.ndarray) -> np.ndarray:
    return np.floor(np.clip(t, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def apply_colormap(t: np.ndarray, colormap: str) -> np.ndarray:
    if colormap == "grayscale":
        return _to_u8(t)
    # black -> red -> yellow -> white
    r = np.clip(3.0 * t, 0.0, 1.0)
    g = np.clip(3.0 * t - 1.0, 0.0, 1.0)
    b = np.clip(3.0 * t - 2.0, 0.0, 1.0)
    return np.stack([_to_u8(r), _to_u8(g), _to_u8(b)], axis=-1)


def upscale_nearest(img: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    h, w = img.shape[:2]
    oh, ow = size
    if oh < h or ow < w:
        raise ValueError(f"output size {oh}x{ow} is smaller than the map {h}x{w}")
    rows = (np.arange(oh) * h) // oh
    cols = (np.arange(ow) * w) // ow
    return img[rows][:, cols]


def render_heatmap(rmap: RelevanceMap | np.ndarray, config: HeatmapConfig = HeatmapConfig()) -> np.ndarray:
    """Render a relevance map to an 8-bit image (``[H,W]`` gray or ``[H,W,3]`` heat)."""
    values = rmap.array if isinstance(rmap, RelevanceMap) else np.asarray(rmap, dtype=np.float64)
    if np.any(values < 0):
        raise ValueError("relevance magnitudes must be nonnegative")
    img = apply_colormap(normalize(collapse_channels(values), config.clip_percentile), config.colormap)
    if config.output_size is not None:
        img = upscale_nearest(img, config.output_size)
    return img


def _label_strip(width: int, spans: list[tuple[int, int]], labels: Sequence[str]) -> np.ndarray:
    strip = Image.new("L", (width, LABEL_STRIP_HEIGHT), 0)
    draw = ImageDraw.Draw(strip)
    font = ImageFont.load_default()
    for (start, span), text in zip(spans, labels):
        if not text:
            continue
        left, _, right, _ = draw.textbbox((0, 0), text, font=font)
        x = start + max(0, (span - (right - left)) // 2)
        draw.text((x, 1), text, fill=255, font=font)
    return np.asarray(strip)


def render_side_by_side(images: Sequence[np.ndarray], labels: Sequence[str] | None = None) -> np.ndarray:
    """Concatenate equal-height images with 1-px dividers above a label strip."""
    if not images:
        raise ValueError("need at least one image")
    labels = list(labels) if labels is not None else [""] * len(images)
    if len(labels) != len(images):
        raise ValueError("one label per image is required")
    heights = {img.shape[0] for img in images}
    if len(heights) != 1:
        raise ValueError(f"images must share a height, got {sorted(heights)}")
    color = any(img.ndim == 3 for img in images)
    tiles = [np.repeat(img[..., None], 3, axis=-1) if color and img.ndim == 2 else img for img in images]
    height = tiles[0].shape[0]
    divider_shape = (height, 1, 3) if color else (height, 1)
    parts, spans, x = [], [], 0
    for i, tile in enumerate(tiles):
        if i:
            parts.append(np.full(divider_shape, DIVIDER_VALUE, dtype=np.uint8))
            x += 1
        parts.append(tile.astype(np.uint8))
        spans.append((x, tile.shape[1]))
        x += tile.shape[1]
    body = np.concatenate(parts, axis=1)
    strip = _label_strip(body.shape[1], spans, labels)
    if color:
        strip = np.repeat(strip[..., None], 3, axis=-1)
    return np.concatenate([body, strip], axis=0)


def write_image(img: np.ndarray, path) -> None:
    """Write an 8-bit image; format follows the suffix (.png, .pgm, .ppm)."""
    path = Path(path)
    suffix = path.suffix.lower()
    pil = Image.fromarray(np.ascontiguousarray(img, dtype=np.uint8))
    if suffix == ".png":
        pil.save(path, format="PNG", optimize=False)
    elif suffix in (".pgm", ".ppm", ".pnm"):
        if suffix == ".pgm" and img.ndim != 2:
            raise ValueError("PGM output requires a grayscale image")
        pil.save(path, format="PPM")
    else:
        raise ValueError(f"unsupported image suffix {suffix!r}")
