"""Deterministic single-image forward pass that records every layer input."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .modelio import LayerSpec, NetworkModel
from .tensor import ShapeError, Tensor, as_tensor


@dataclass(frozen=True)
class ActivationTrace:
    """Inputs seen by each layer of one forward pass.

    ``pool_argmax`` maps a maxPool2d layer index to the window-local flat
    index (row-major) of the winning cell for every output position.
    """

    layer_inputs: list[Tensor]
    final_output: float
    pre_sigmoid: float
    pool_argmax: dict[int, np.ndarray] = field(default_factory=dict)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def conv_windows(x: np.ndarray, kh: int, kw: int, sh: int, sw: int, ph: int, pw: int) -> np.ndarray:
    """Receptive fields of a strided, zero-padded convolution as ``[C, OH, OW, kh, kw]``."""
    xpad = np.pad(x, ((0, 0), (ph, ph), (pw, pw)))
    return sliding_window_view(xpad, (kh, kw), axis=(1, 2))[:, ::sh, ::sw]


def conv2d_forward(x, weight, bias, stride=(1, 1), padding=(0, 0)) -> np.ndarray:
    _, _, kh, kw = weight.shape
    win = conv_windows(x, kh, kw, stride[0], stride[1], padding[0], padding[1])
    out = np.tensordot(weight, win, axes=([1, 2, 3], [0, 3, 4]))
    return out + bias[:, None, None]


def pool_windows(x: np.ndarray, window: int, stride: int) -> np.ndarray:
    """Pooling windows flattened row-major: ``[C, OH, OW, window*window]``."""
    win = sliding_window_view(x, (window, window), axis=(1, 2))[:, ::stride, ::stride]
    return win.reshape(win.shape[:3] + (window * window,))


def run_layer(layer: LayerSpec, params: dict, x: np.ndarray):
    """Apply one layer; returns ``(output, argmax_or_None)``."""
    h = layer.hyper
    kind = layer.kind
    if kind == "conv2d":
        out = conv2d_forward(x, params["weight"], params["bias"],
                             (h["stride_h"], h["stride_w"]), (h["pad_h"], h["pad_w"]))
        return out, None
    if kind == "dense":
        return params["weight"] @ x + params["bias"], None
    if kind == "relu":
        return np.maximum(x, 0.0), None
    if kind == "leakyRelu":
        return np.where(x < 0, h["alpha"] * x, x), None
    if kind == "maxPool2d":
        win = pool_windows(x, h["window"], h["stride"])
        idx = np.argmax(win, axis=-1)  # first occurrence wins ties
        return np.take_along_axis(win, idx[..., None], axis=-1)[..., 0], idx
    if kind == "avgPool2d":
        win = pool_windows(x, h["window"], h["stride"])
        return (win * (1.0 / win.shape[-1])).sum(axis=-1), None
    if kind == "flatten":
        return x.reshape(-1), None
    if kind == "sigmoid":
        return sigmoid(x), None
    if kind == "batchNorm2d":
        scale = params["gamma"] / np.sqrt(params["running_var"] + h["epsilon"])
        return (x - params["running_mean"][:, None, None]) * scale[:, None, None] + params["beta"][:, None, None], None
    raise ValueError(f"unsupported layer kind {kind!r}")


def forward(model: NetworkModel, image) -> ActivationTrace:
    image = as_tensor(image)
    if image.shape != model.input_shape:
        raise ShapeError(f"image shape {list(image.shape)} does not match model input {list(model.input_shape)}")
    x = image.array
    inputs: list[Tensor] = []
    argmax: dict[int, np.ndarray] = {}
    for i, layer in enumerate(model.layers):
        inputs.append(Tensor(x))
        x, idx = run_layer(layer, model.layer_params(i), inputs[-1].array)
        if idx is not None:
            idx.setflags(write=False)
            argmax[i] = idx
    logit = float(inputs[-1].array.reshape(-1)[0])
    prob = float(np.asarray(x).reshape(-1)[0])
    return ActivationTrace(inputs, prob, logit, argmax)


def score(model: NetworkModel, image) -> float:
    """Discriminator probability that ``image`` is real."""
    return forward(model, image).final_output
