"""Polarized relevance propagation for single-output discriminators.

A discriminator emits one probability, so there is no "class" to select.
Instead the verdict picks a polarity: a real verdict propagates only the
positive parts of every weighted sum, a fake verdict only the negative
parts.  For an affine unit ``j`` with inputs ``x_i``::

    R_{j->i} = t(w_ij x_i) / (sum_k t(w_kj x_k) + t(b_j)) * R_j

where ``t`` truncates at zero on the chosen side.  Both branches give
nonnegative fractions, so relevance is stored as unsigned magnitude and the
polarity travels as a tag.  The bias share and the relevance of units whose
truncated denominator is exactly zero are not renormalized; they are
reported as leaked relevance.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .inference import ActivationTrace, conv_windows, forward, run_layer
from .modelio import LayerSpec, NetworkModel, layer_output_shape
from .tensor import ShapeError, Tensor, as_tensor, ordered_sum

AUTO_THRESHOLD = 0.5
DEFAULT_EPSILON = 1e-9


class Polarity(str, enum.Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"

    @classmethod
    def for_score(cls, p: float) -> "Polarity":
        return cls.POSITIVE if p >= AUTO_THRESHOLD else cls.NEGATIVE


class InitRelevance(str, enum.Enum):
    PROB = "prob"
    ONE = "one"
    LOGIT = "logit"


class PropagationError(RuntimeError):
    """An internal invariant of the backward pass was violated."""


@dataclass(frozen=True)
class RelevanceMap:
    values: Tensor
    polarity: Polarity
    initial_relevance: float
    per_layer_sums: list[float]
    leaked_relevance: float
    layer_leaks: list[float] = field(default_factory=list)
    layer_indices: list[int] = field(default_factory=list)
    score: float | None = None

    @property
    def array(self) -> np.ndarray:
        return self.values.array

    def total(self) -> float:
        return ordered_sum(self.values.array)


class ConservationRow(NamedTuple):
    layer_index: int
    rel_sum_before: float
    rel_sum_after: float
    leaked_here: float


def _truncate(z: np.ndarray, polarity: Polarity) -> np.ndarray:
    return np.maximum(z, 0.0) if polarity is Polarity.POSITIVE else np.minimum(z, 0.0)


def _fractions(z_sum: np.ndarray, bias_t: np.ndarray, out_rel: np.ndarray,
               polarity: Polarity, epsilon: float | None):
    """Per-output scale ``R_j / denom_j`` and the relevance each output leaks."""
    stab = 0.0 if not epsilon else (epsilon if polarity is Polarity.POSITIVE else -epsilon)
    denom = z_sum + bias_t + stab
    live = denom != 0
    safe = np.where(live, denom, 1.0)
    scale = np.where(live, out_rel / safe, 0.0)
    leaked = np.where(live, (bias_t + stab) * scale, out_rel)
    return scale, leaked


def _dense_rule(w, b, x, out_rel, polarity, epsilon):
    z = _truncate(w * x[None, :], polarity)
    scale, leaked = _fractions(z.sum(axis=1), _truncate(b, polarity), out_rel, polarity, epsilon)
    return (z * scale[:, None]).sum(axis=0), leaked


def _scatter_windows(contrib: np.ndarray, in_shape, sh, sw, ph, pw) -> np.ndarray:
    """Add ``[C, OH, OW, kh, kw]`` window contributions back onto the input grid."""
    c, oh, ow, kh, kw = contrib.shape
    pad = np.zeros((c, in_shape[1] + 2 * ph, in_shape[2] + 2 * pw))
    for ky in range(kh):
        for kx in range(kw):
            pad[:, ky:ky + sh * (oh - 1) + 1:sh, kx:kx + sw * (ow - 1) + 1:sw] += contrib[:, :, :, ky, kx]
    return pad[:, ph:ph + in_shape[1], pw:pw + in_shape[2]]


def _conv_rule(w, b, x, out_rel, polarity, epsilon, stride, padding):
    _, _, kh, kw = w.shape
    win = conv_windows(x, kh, kw, stride[0], stride[1], padding[0], padding[1])
    acc = np.zeros(win.shape)
    leaked_total = []
    for o in range(w.shape[0]):
        z = _truncate(w[o][:, None, None, :, :] * win, polarity)
        z_sum = z.sum(axis=(0, 3, 4))
        bias_t = np.full(z_sum.shape, _truncate(np.asarray(b[o]), polarity))
        scale, leaked = _fractions(z_sum, bias_t, out_rel[o], polarity, epsilon)
        acc += z * scale[None, :, :, None, None]
        leaked_total.append(leaked)
    return _scatter_windows(acc, x.shape, stride[0], stride[1], padding[0], padding[1]), np.stack(leaked_total)


def _avgpool_rule(x, out_rel, window, stride, polarity, epsilon):
    win = conv_windows(x, window, window, stride, stride, 0, 0)
    z = _truncate(win * (1.0 / (window * window)), polarity)
    scale, leaked = _fractions(z.sum(axis=(3, 4)), np.zeros(out_rel.shape), out_rel, polarity, epsilon)
    contrib = z * scale[..., None, None]
    return _scatter_windows(contrib, x.shape, stride, stride, 0, 0), leaked


def _maxpool_rule(x, out_rel, window, stride, argmax):
    c, oh, ow = out_rel.shape
    rows = (np.arange(oh) * stride)[None, :, None] + argmax // window
    cols = (np.arange(ow) * stride)[None, None, :] + argmax % window
    chans = np.broadcast_to(np.arange(c)[:, None, None], argmax.shape)
    in_rel = np.zeros(x.shape)
    np.add.at(in_rel, (chans, rows, cols), out_rel)
    return in_rel


def propagate_layer(layer: LayerSpec, layer_input, out_relevance, polarity: Polarity,
                    params: dict | None = None, argmax: np.ndarray | None = None,
                    epsilon: float | None = None) -> tuple[Tensor, float]:
    """Push relevance from a layer's output back to its input.

    ``params`` holds the layer's arrays by role (``weight``, ``bias``);
    ``argmax`` is the recorded max-pool winner index, recomputed from the
    input when omitted.  Returns the input relevance and the leaked amount.
    """
    polarity = Polarity(polarity)
    x = as_tensor(layer_input).array
    r = as_tensor(out_relevance).array
    if np.any(r < 0):
        raise PropagationError("output relevance must be nonnegative")
    kind, h = layer.kind, layer.hyper
    params = params or {}

    if kind in ("relu", "leakyRelu", "sigmoid"):
        if r.shape != x.shape:
            raise ShapeError(f"relevance shape {list(r.shape)} != layer shape {list(x.shape)}")
        return Tensor(r), 0.0
    if kind == "flatten":
        if r.size != x.size:
            raise ShapeError(f"relevance of size {r.size} cannot map onto input {list(x.shape)}")
        return Tensor(r.reshape(x.shape)), 0.0

    if kind == "dense":
        w = params["weight"]
        b = params.get("bias", np.zeros(w.shape[0]))
        if r.shape != (w.shape[0],):
            raise ShapeError(f"relevance shape {list(r.shape)} != dense output [{w.shape[0]}]")
        in_rel, leaked = _dense_rule(w, b, x, r, polarity, epsilon)
    elif kind == "conv2d":
        w = params["weight"]
        b = params.get("bias", np.zeros(w.shape[0]))
        expected = layer_output_shape(layer, x.shape)
        if r.shape != expected:
            raise ShapeError(f"relevance shape {list(r.shape)} != conv output {list(expected)}")
        in_rel, leaked = _conv_rule(w, b, x, r, polarity, epsilon,
                                    (h["stride_h"], h["stride_w"]), (h["pad_h"], h["pad_w"]))
    elif kind == "avgPool2d":
        in_rel, leaked = _avgpool_rule(x, r, h["window"], h["stride"], polarity, epsilon)
    elif kind == "maxPool2d":
        if argmax is None:
            _, argmax = run_layer(layer, {}, x)
        if r.shape != argmax.shape:
            raise ShapeError(f"relevance shape {list(r.shape)} != pool output {list(argmax.shape)}")
        return Tensor(_maxpool_rule(x, r, h["window"], h["stride"], argmax)), 0.0
    else:
        raise PropagationError(f"no relevance rule for layer kind {kind!r}; fold batch norm before explaining")
    return Tensor(in_rel), ordered_sum(leaked)


def initial_relevance(trace: ActivationTrace, mode: InitRelevance | str = InitRelevance.PROB) -> float:
    mode = InitRelevance(mode)
    if mode is InitRelevance.PROB:
        return trace.final_output
    if mode is InitRelevance.ONE:
        return 1.0
    # relevance is an unsigned magnitude; a fake verdict has a negative logit
    return abs(trace.pre_sigmoid)


def explain(model: NetworkModel, image, polarity: Polarity | str = "auto",
            init: InitRelevance | str = InitRelevance.PROB,
            epsilon: float | None = None, trace: ActivationTrace | None = None) -> RelevanceMap:
    """Explain the discriminator's verdict on ``image`` as a per-pixel relevance map.

    ``polarity="auto"`` picks the positive branch for scores >= 0.5 and the
    negative branch otherwise.
    """
    if trace is None:
        trace = forward(model, image)
    if polarity == "auto":
        polarity = Polarity.for_score(trace.final_output)
    polarity = Polarity(polarity)
    r0 = initial_relevance(trace, init)

    rel = Tensor(np.full(model.layer_shapes()[-1], r0))
    sums, leaks, indices = [], [], []
    for i in range(len(model.layers) - 1, -1, -1):
        rel, leak = propagate_layer(model.layers[i], trace.layer_inputs[i], rel, polarity,
                                    params=model.layer_params(i), argmax=trace.pool_argmax.get(i),
                                    epsilon=epsilon)
        sums.append(ordered_sum(rel.array))
        leaks.append(leak)
        indices.append(i)

    leaked = ordered_sum(leaks)
    values = rel.array
    if np.any(values < 0):
        raise PropagationError("negative relevance produced")
    residual = abs(ordered_sum(values) + leaked - r0)
    if residual > 1e-6 * max(abs(r0), 1e-300) and residual > 1e-12:
        raise PropagationError(f"relevance not conserved: residual {residual:.3e} of {r0:.3e}")
    return RelevanceMap(rel, polarity, r0, sums, leaked, leaks, indices, trace.final_output)


def conservation_report(rmap: RelevanceMap) -> list[ConservationRow]:
    """Per-layer ledger in propagation order (output layer first)."""
    rows = []
    before = rmap.initial_relevance
    for idx, after, leak in zip(rmap.layer_indices, rmap.per_layer_sums, rmap.layer_leaks):
        rows.append(ConservationRow(idx, before, after, leak))
        before = after
    return rows


def worst_residual(rmap: RelevanceMap) -> float:
    """Largest relative per-layer change in relevance sum, leak excluded."""
    worst = 0.0
    for row in conservation_report(rmap):
        scale = max(abs(row.rel_sum_before), 1e-300)
        worst = max(worst, abs(row.rel_sum_before - row.rel_sum_after) / scale)
    return worst
