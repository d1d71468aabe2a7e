"""Random model generators shared by the test modules."""

import numpy as np

from polarlrp.modelio import ModelBuilder


def random_model(rng, bias=False, max_spatial=16, batch_norm=False, depth=None):
    """Random discriminator with 2-5 weighted/pooling layers before the output.

    Always ends in dense(1) + sigmoid.  Input extents are at most
    ``max_spatial``.  With ``batch_norm`` some convs get a batchNorm2d.
    """
    c = int(rng.integers(1, 4))
    hw = int(rng.integers(4, max_spatial + 1))
    b = ModelBuilder((c, hw, hw))
    depth = depth or int(rng.integers(2, 6))
    shape = [c, hw, hw]
    blocks = 0
    flat = False

    def act():
        r = rng.random()
        if r < 0.4:
            b.relu()
        elif r < 0.7:
            b.leaky_relu(float(rng.uniform(0.05, 0.5)))

    while blocks < depth - 1:
        choice = rng.random()
        if not flat and choice < 0.55:
            k = int(rng.integers(1, 4))
            s = int(rng.integers(1, 3))
            p = int(rng.integers(0, 2))
            oh = (shape[1] + 2 * p - k) // s + 1
            if oh < 1:
                k, p = 1, 0
                oh = (shape[1] - 1) // s + 1
            o = int(rng.integers(1, 5))
            w = rng.normal(size=(o, shape[0], k, k))
            bb = rng.normal(size=o) * 0.5 if bias else None
            b.conv2d(w, bb, stride=s, padding=p)
            shape = [o, oh, oh]
            if batch_norm and rng.random() < 0.5:
                b.batch_norm(rng.uniform(0.5, 2, o), rng.normal(size=o) * 0.3,
                             rng.normal(size=o) * 0.3, rng.uniform(0.5, 2, o),
                             epsilon=float(rng.choice([0.0, 1e-5])))
            act()
        elif not flat and choice < 0.8 and shape[1] >= 2 and shape[2] >= 2:
            (b.max_pool if rng.random() < 0.5 else b.avg_pool)(2)
            shape = [shape[0], shape[1] // 2, shape[2] // 2]
        else:
            if not flat:
                b.flatten()
                flat = True
                shape = [int(np.prod(shape))]
            o = int(rng.integers(2, 9))
            b.dense(rng.normal(size=(o, shape[0])), rng.normal(size=o) * 0.5 if bias else None)
            shape = [o]
            act()
        blocks += 1
    if not flat:
        b.flatten()
        shape = [int(np.prod(shape))]
    b.dense(rng.normal(size=(1, shape[0])), rng.normal(size=1) * 0.5 if bias else None)
    b.sigmoid()
    return b.build()


def _dominant_rows(rng, n_rows, n_in, lo, hi, negative_verdict=False):
    """Rows with mixed signs whose sign of ``w . x`` is fixed for ``x`` in [lo, hi].

    Hidden rows are positive-dominant: ``P*lo - N*hi > 0`` for every row, so
    strictly positive inputs give strictly positive outputs.  Every row keeps
    at least one positive and (when ``n_in > 1``) one negative weight, so
    both truncations see a nonzero contribution.  With ``negative_verdict``
    the rows are negative-dominant instead (``N*lo > P*hi``).
    """
    w = rng.uniform(0.5, 1.0, size=(n_rows, n_in))
    neg = rng.random((n_rows, n_in)) < 0.35
    if n_in > 1:
        neg[:, 0] = True
        neg[:, -1] = False
    else:
        neg[:] = False
    for r in range(n_rows):
        if not neg[r].any():
            continue
        p = w[r, ~neg[r]].sum()
        share = w[r, neg[r]] / w[r, neg[r]].sum()
        if negative_verdict:
            target = p * hi / lo * rng.uniform(1.5, 3.0)
        else:
            target = p * lo / hi * rng.uniform(0.2, 0.8)
        w[r, neg[r]] = -target * share
    out_lo = min(float(np.sum(np.where(row > 0, row * lo, row * hi))) for row in w)
    out_hi = max(float(np.sum(np.where(row > 0, row * hi, row * lo))) for row in w)
    return w, out_lo, out_hi


def conserving_model(rng, negative=False, max_spatial=16):
    """Random bias-free model on which the relevance rule provably never leaks.

    Inputs must lie in [0.1, 1].  Every hidden activation stays strictly
    positive, every unit mixes positive and negative contributions, convs
    are unpadded so windows never read padding, and the output row fixes the
    verdict: real by default, fake with ``negative``.  Spatial extents never
    drop below 2, so every weighted row has at least two inputs.  Average pooling only
    has positive contributions, so it is excluded from the negative family.
    Returns ``(model, n_blocks)``.
    """
    c = int(rng.integers(1, 4))
    hw = int(rng.integers(4, max_spatial + 1))
    b = ModelBuilder((c, hw, hw))
    depth = int(rng.integers(2, 6))
    shape = [c, hw, hw]
    lo, hi = 0.1, 1.0
    flat = False

    def act():
        r = rng.random()
        if r < 0.4:
            b.relu()
        elif r < 0.7:
            b.leaky_relu(float(rng.uniform(0.05, 0.5)))

    for _ in range(depth - 1):
        choice = rng.random()
        k = int(min(rng.integers(1, 4), shape[1] - 1)) if not flat else 0
        if negative and not flat and shape[0] * k * k == 1:
            k = 2 if shape[1] >= 3 else 0  # a single-weight row cannot mix signs
        if not flat and choice < 0.5 and k > 0:
            s = int(rng.integers(1, 3))
            if (shape[1] - k) // s + 1 < 2:
                s = 1
            o = int(rng.integers(1, 5))
            rows, lo, hi = _dominant_rows(rng, o, shape[0] * k * k, lo, hi)
            b.conv2d(rows.reshape(o, shape[0], k, k), stride=s, padding=0)
            n = (shape[1] - k) // s + 1
            shape = [o, n, n]
            act()
        elif not flat and choice < 0.8 and shape[1] >= 4:
            use_max = negative or rng.random() < 0.5
            (b.max_pool if use_max else b.avg_pool)(2)
            shape = [shape[0], shape[1] // 2, shape[2] // 2]
        else:
            if not flat:
                b.flatten()
                flat = True
                shape = [int(np.prod(shape))]
            o = int(rng.integers(2, 9))
            rows, lo, hi = _dominant_rows(rng, o, shape[0], lo, hi)
            b.dense(rows)
            shape = [o]
            act()
    if not flat:
        b.flatten()
        shape = [int(np.prod(shape))]
    rows, out_lo, out_hi = _dominant_rows(rng, 1, shape[0], lo, hi, negative_verdict=negative)
    # positive rescaling keeps the verdict; a bounded logit keeps the score
    # (the injected relevance) away from floating-point underflow
    b.dense(rows * (10.0 / max(abs(out_lo), abs(out_hi))))
    b.sigmoid()
    return b.build(), depth
