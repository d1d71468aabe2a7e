"""Synthetic galaxies and hand-built discriminators.

These stand in for a trained deblender discriminator when demonstrating
or testing the toolkit: every weight is chosen by hand so the expected
relevance structure is known in advance.
"""

from __future__ import annotations

import math

import numpy as np

from . import augment as aug
from .inference import forward
from .modelio import LayerSpec, ModelBuilder, NetworkModel
from .tensor import Tensor

SKY_MU = 0.02
SKY_SIGMA = 0.01
# Bilinear shrinking averages neighbouring sky pixels; a source sky this
# noisy comes out of ``random_augmentation`` at roughly SKY_SIGMA.
PRE_AUGMENT_SKY_SIGMA = 0.017


def radius_grid(size: int, center: tuple[float, float] | None = None) -> np.ndarray:
    cy, cx = center if center is not None else ((size - 1) / 2.0, (size - 1) / 2.0)
    rows, cols = np.mgrid[0:size, 0:size]
    return np.hypot(rows - cy, cols - cx)


def sky(size: int, rng: np.random.Generator, mu: float = SKY_MU, sigma: float = SKY_SIGMA) -> np.ndarray:
    return np.clip(rng.normal(mu, sigma, size=(size, size)), 0.0, 1.0)


def disk_image(size: int = 32, radius: float = 8.0, intensity: float = 1.0) -> Tensor:
    """Bright uniform disk on a black background, shape ``[1,size,size]``."""
    img = np.where(radius_grid(size) <= radius, intensity, 0.0)
    return Tensor(img[None])


def ring_perturbed_image(size: int = 32, radius: float = 8.0, ring: tuple[float, float] = (10.0, 14.0),
                         intensity: float = 1.0, ring_intensity: float = 1.0) -> Tensor:
    """Disk plus a bright ring in the annulus ``ring[0] <= r < ring[1]``."""
    r = radius_grid(size)
    img = np.where(r <= radius, intensity, 0.0)
    img = np.where((r >= ring[0]) & (r < ring[1]), ring_intensity, img)
    return Tensor(img[None])


def galaxy_disk_discriminator(size: int = 32, radius: float = 8.0, ring: tuple[float, float] = (10.0, 14.0),
                              disk_weight: float = 0.01, ring_weight: float = 0.05,
                              bias: float = -1.0) -> NetworkModel:
    """Discriminator that likes a bright central disk and dislikes light around it.

    Two 3x3 box filters of opposite sign feed a dense template: the positive
    channel is rewarded inside the disk, the negative channel is weighted
    over the annulus so surrounding light pushes the logit down.
    """
    box = np.full((3, 3), 1.0 / 9.0)
    conv_w = np.stack([box[None], -box[None]])
    r = radius_grid(size)
    template = np.zeros((2, size, size))
    template[0][r <= radius] = disk_weight
    template[1][(r >= ring[0]) & (r < ring[1])] = ring_weight
    return (ModelBuilder((1, size, size))
            .conv2d(conv_w, np.zeros(2), stride=1, padding=1)
            .leaky_relu(0.2)
            .flatten()
            .dense(template.reshape(1, -1), [bias])
            .sigmoid()
            .build({"fixture": "galaxy-disk"}))


def padding_edge_discriminator(size: int = 64, contrast: float = 4.0, gain: float = 1.0, bias: float = 0.0) -> NetworkModel:
    """Discriminator keyed on dark steps into exact-zero padding.

    Each 3x3 filter computes ``center - contrast * neighbor`` in one of the
    four axis directions and is rectified, so it fires where a pixel is
    ``contrast`` times brighter than its neighbor.  On smooth galaxy light that ratio is
    never reached; against an exactly-zero padded neighbor it always is.  A
    uniform dense readout sums the responses.
    """
    offsets = [(0, 1), (2, 1), (1, 0), (1, 2)]  # up, down, left, right neighbour
    w = np.zeros((4, 1, 3, 3))
    for k, (r, c) in enumerate(offsets):
        w[k, 0, 1, 1] = 1.0
        w[k, 0, r, c] = -contrast
    # mirror-padding is not available, so the conv runs unpadded and the
    # canvas border itself never registers as an edge
    out = size - 2
    return (ModelBuilder((1, size, size))
            .conv2d(w, np.zeros(4), stride=1, padding=0)
            .relu()
            .flatten()
            .dense(np.full((1, 4 * out * out), gain), [bias])
            .sigmoid()
            .build({"fixture": "padding-edge"}))


def galaxy_image(size: int, rng: np.random.Generator, amplitude: float | None = None,
                 sigma: float | None = None, sky_mu: float = SKY_MU, sky_sigma: float = SKY_SIGMA) -> Tensor:
    """Elliptical Gaussian galaxy on a noisy near-black sky."""
    amplitude = rng.uniform(0.3, 0.8) if amplitude is None else amplitude
    sigma = rng.uniform(3.0, 6.0) if sigma is None else sigma
    c = (size - 1) / 2.0
    cy, cx = c + rng.uniform(-2, 2), c + rng.uniform(-2, 2)
    theta = rng.uniform(0, math.pi)
    q = rng.uniform(0.5, 1.0)
    rows, cols = np.mgrid[0:size, 0:size]
    u = (cols - cx) * math.cos(theta) + (rows - cy) * math.sin(theta)
    v = -(cols - cx) * math.sin(theta) + (rows - cy) * math.cos(theta)
    light = amplitude * np.exp(-(u ** 2 + (v / q) ** 2) / (2 * sigma ** 2))
    return Tensor(np.clip(sky(size, rng, sky_mu, sky_sigma) + light, 0.0, 1.0)[None])


def random_augmentation(rng: np.random.Generator, scale_range=(0.7, 0.85), max_shift: float = 3.0) -> list:
    """Flips, quarter-turn rotation, shift and shrink, as in a deblending data pipeline.

    Rotations are restricted to multiples of 90 degrees so that the exposed
    area stays an axis-aligned frame.
    """
    ops: list = []
    if rng.random() < 0.5:
        ops.append(aug.FlipH())
    if rng.random() < 0.5:
        ops.append(aug.FlipV())
    ops.append(aug.Rotate(90.0 * int(rng.integers(0, 4))))
    ops.append(aug.Translate(float(rng.uniform(-max_shift, max_shift)), float(rng.uniform(-max_shift, max_shift))))
    ops.append(aug.Scale(float(rng.uniform(*scale_range))))
    return ops


def with_output_bias(model: NetworkModel, image, target_score: float) -> NetworkModel:
    """Copy of ``model`` whose final bias is shifted so ``image`` scores ``target_score``."""
    if not 0.0 < target_score < 1.0:
        raise ValueError("target score must lie strictly between 0 and 1")
    trace = forward(model, image)
    idx = len(model.layers) - 2
    layer = model.layers[idx]
    params = dict(model.parameters)
    bias_name = layer.params.get("bias", f"layer{idx}.bias")
    old = params[bias_name].array if bias_name in params else np.zeros(1)
    target_logit = math.log(target_score / (1.0 - target_score))
    params[bias_name] = Tensor(old + (target_logit - trace.pre_sigmoid))
    layers = list(model.layers)
    layers[idx] = LayerSpec("dense", layer.hyper, {**layer.params, "bias": bias_name})
    return NetworkModel(model.input_shape, layers, params, model.metadata)
