"""Analyses built on relevance maps: training trajectories, background
histograms and detection of rectangular padding artifacts."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .inference import forward
from .lrp import Polarity, RelevanceMap, explain
from .modelio import NetworkModel
from .render import collapse_channels
from .tensor import ShapeError, as_tensor

DEFAULT_BOUNDARY_THRESHOLD = 4.0
MAD_TO_SIGMA = 1.4826
MEAN_AD_TO_SIGMA = 1.2533


@dataclass(frozen=True)
class RadialProfile:
    center: tuple[float, float]
    bin_width: float
    mass: list[float]
    total_mass: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class RegionHistogram:
    region: tuple[int, int, int, int]
    bins: list[int]
    count: int

    def to_dict(self) -> dict:
        x, y, w, h = self.region
        return {"region": {"x": x, "y": y, "w": w, "h": h}, "bins": list(self.bins), "count": self.count}


@dataclass(frozen=True)
class BoundaryReport:
    row_scores: list[float]
    col_scores: list[float]
    detected_rect: tuple[int, int, int, int] | None
    score: float
    threshold: float

    @property
    def detected(self) -> bool:
        return self.detected_rect is not None

    def to_dict(self) -> dict:
        rect = None
        if self.detected_rect is not None:
            top, left, bottom, right = self.detected_rect
            rect = {"top": top, "left": left, "bottom": bottom, "right": right}
        return {"row_scores": self.row_scores, "col_scores": self.col_scores,
                "detected_rect": rect, "score": self.score, "threshold": self.threshold}


@dataclass(frozen=True)
class TrajectoryEntry:
    iteration: str | None
    score: float
    relevance: RelevanceMap
    profile: RadialProfile = field(repr=False)


def _map_values(m) -> np.ndarray:
    return m.array if isinstance(m, RelevanceMap) else np.asarray(m, dtype=np.float64)


def radial_profile(rmap, center: tuple[float, float] | None = None, bin_width: float = 1.0) -> RadialProfile:
    """Relevance mass per annulus ``floor(distance / bin_width)`` around ``center``.

    ``center`` is ``(row, col)``; the default is the geometric image center.
    """
    if bin_width < 1:
        raise ValueError(f"bin width must be at least one pixel, got {bin_width}")
    plane = collapse_channels(_map_values(rmap))
    h, w = plane.shape
    if center is None:
        center = ((h - 1) / 2.0, (w - 1) / 2.0)
    rows, cols = np.mgrid[0:h, 0:w]
    dist = np.hypot(rows - center[0], cols - center[1])
    idx = np.floor(dist / bin_width).astype(np.int64).ravel()
    mass = np.bincount(idx, weights=plane.ravel(), minlength=int(idx.max()) + 1)
    total = float(np.cumsum(plane.ravel())[-1]) if plane.size else 0.0
    return RadialProfile((float(center[0]), float(center[1])), float(bin_width), mass.tolist(), total)


def compare_trajectory(checkpoints: Sequence[NetworkModel], image, polarity="auto",
                       bin_width: float = 1.0, **explain_kw) -> list[TrajectoryEntry]:
    """Explain the same image under each checkpoint, preserving order."""
    if len(checkpoints) < 2:
        raise ValueError("a trajectory needs at least two checkpoints")
    shapes = {m.input_shape for m in checkpoints}
    if len(shapes) != 1:
        raise ShapeError(f"checkpoints disagree on input shape: {sorted(shapes)}")
    image = as_tensor(image)
    entries = []
    for model in checkpoints:
        trace = forward(model, image)
        rmap = explain(model, image, polarity, trace=trace, **explain_kw)
        entries.append(TrajectoryEntry(model.iteration, trace.final_output, rmap,
                                       radial_profile(rmap, bin_width=bin_width)))
    return entries


def trajectory_csv(entries: Sequence[TrajectoryEntry]) -> str:
    n = max(len(e.profile.mass) for e in entries)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["iteration", "score", "polarity", "total_mass"] + [f"bin_{i}" for i in range(n)])
    for e in entries:
        mass = list(e.profile.mass) + [0.0] * (n - len(e.profile.mass))
        writer.writerow([e.iteration, repr(e.score), e.relevance.polarity.value, repr(e.profile.total_mass)]
                        + [repr(float(v)) for v in mass])
    return buf.getvalue()


def profile_csv(profile: RadialProfile) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["annulus", "inner_radius", "outer_radius", "mass"])
    for i, m in enumerate(profile.mass):
        writer.writerow([i, i * profile.bin_width, (i + 1) * profile.bin_width, repr(float(m))])
    return buf.getvalue()


def quantize_intensity(values: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(values * 255.0 + 0.5), 0, 255).astype(np.int64)


def region_histogram(image, region: tuple[int, int, int, int]) -> RegionHistogram:
    """256-bin histogram of the 8-bit intensities in ``region = (x, y, w, h)``.

    Multi-channel images are averaged over channels before quantizing.
    """
    arr = as_tensor(image).array
    if arr.ndim == 2:
        arr = arr[None]
    x, y, w, h = (int(v) for v in region)
    _, H, W = arr.shape
    if w < 1 or h < 1 or x < 0 or y < 0 or x + w > W or y + h > H:
        raise ValueError(f"region {(x, y, w, h)} does not fit inside a {W}x{H} image")
    patch = arr[:, y:y + h, x:x + w].mean(axis=0)
    bins = np.bincount(quantize_intensity(patch).ravel(), minlength=256)
    return RegionHistogram((x, y, w, h), [int(v) for v in bins], w * h)


def histogram_divergence(a: RegionHistogram, b: RegionHistogram) -> tuple[float, float]:
    """Chi-square distance and largest per-bin gap (as a fraction of the count)."""
    if a.count != b.count:
        raise ValueError(f"histograms cover different pixel counts ({a.count} vs {b.count})")
    ha = np.asarray(a.bins, dtype=np.float64)
    hb = np.asarray(b.bins, dtype=np.float64)
    s = ha + hb
    used = s > 0
    chi = float(np.sum((ha[used] - hb[used]) ** 2 / s[used]))
    gap = float(np.max(np.abs(ha - hb))) / a.count if a.count else 0.0
    return chi, gap


def ks_statistic(a: RegionHistogram, b: RegionHistogram) -> float:
    """Two-sample Kolmogorov-Smirnov distance between the binned intensities."""
    ca = np.cumsum(a.bins) / a.count
    cb = np.cumsum(b.bins) / b.count
    return float(np.max(np.abs(ca - cb)))


def robust_z(values: np.ndarray) -> np.ndarray:
    """Z-scores against the median, scaled by MAD.

    Falls back to the mean absolute deviation when more than half the
    values coincide (MAD == 0), and to all-zero scores for a constant line.
    """
    med = np.median(values)
    dev = np.abs(values - med)
    scale = MAD_TO_SIGMA * np.median(dev)
    if scale == 0:
        scale = MEAN_AD_TO_SIGMA * np.mean(dev)
    if scale == 0 or not np.isfinite(scale):
        return np.zeros(values.shape)
    return (values - med) / scale


def _best_pair(scores: np.ndarray, threshold: float):
    hits = np.flatnonzero(scores >= threshold)
    best = None
    for ii, lo in enumerate(hits):
        for hi in hits[ii + 1:]:
            key = (min(scores[lo], scores[hi]), hi - lo)
            if best is None or key > best[0]:
                best = (key, int(lo), int(hi))
    return best


def detect_phantom_boundary(maps: Sequence, threshold: float = DEFAULT_BOUNDARY_THRESHOLD) -> BoundaryReport:
    """Look for an axis-aligned rectangle of anomalously relevant lines.

    The maps are channel-collapsed and averaged; each row and column mean
    gets a robust z-score.  A rectangle needs two rows and two columns at
    or above ``threshold``; among candidates the one maximizing its weakest
    side wins (ties go to the larger extent).  ``score`` is that weakest
    side's z-score, or 0 without a candidate.
    """
    if len(maps) == 0:
        raise ValueError("need at least one relevance map")
    planes = [collapse_channels(_map_values(m)) for m in maps]
    shapes = {p.shape for p in planes}
    if len(shapes) != 1:
        raise ShapeError(f"relevance maps differ in shape: {sorted(shapes)}")
    mean = np.mean(planes, axis=0)
    row_scores = robust_z(mean.mean(axis=1))
    col_scores = robust_z(mean.mean(axis=0))
    rows = _best_pair(row_scores, threshold)
    cols = _best_pair(col_scores, threshold)
    rect, score = None, 0.0
    if rows is not None and cols is not None:
        score = float(min(rows[0][0], cols[0][0]))
        rect = (rows[1], cols[1], rows[2], cols[2])
    return BoundaryReport(row_scores.tolist(), col_scores.tolist(), rect, score, float(threshold))

