"""Finite-difference verification of analytic gradients.

Runs in float64: the caller provides f64 parameters and a deterministic
scalar-valued closure. Central differences with a small step keep the
truncation error well under the 1e-4 acceptance threshold.
"""

from __future__ import annotations

import numpy as np

from .autograd import Graph, backward
from .params import ParamStore

DEFAULT_EPS = 1e-5
REL_FLOOR = 1e-8
NOISE_ATOL = 1e-9


def grad_check(f, params: ParamStore, eps: float = DEFAULT_EPS,
               max_coords_per_tensor: int = 8, seed: int = 0,
               atol: float = NOISE_ATOL) -> float:
    """Max relative |analytic - central difference| over sampled coordinates.

    ``f`` must rebuild its graph on every call and return a scalar Tensor.

    Coordinates where both sides sit below ``atol`` count as agreeing:
    an exactly-zero gradient (e.g. a softmax-cancelled key bias) leaves
    only differencing roundoff, which is below what the oracle can
    resolve in the first place.
    """
    rng = np.random.Generator(np.random.Philox(key=seed))
    with Graph() as g:
        loss = f()
    grads = backward(g, loss)
    # differencing cannot resolve slopes under ~|f|*ulp/eps
    atol = max(atol, abs(loss.item()) * 1e-15 / eps)

    worst = 0.0
    for name, t in params.items():
        if not t.requires_grad:
            continue
        analytic = grads.get(t.tid)
        if analytic is None:
            analytic = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        n = flat.size
        idx = np.arange(n) if n <= max_coords_per_tensor else rng.choice(n, size=max_coords_per_tensor, replace=False)
        for i in idx:
            keep = flat[i]
            flat[i] = keep + eps
            up = f().item()
            flat[i] = keep - eps
            down = f().item()
            flat[i] = keep
            numeric = (up - down) / (2.0 * eps)
            ana = analytic.reshape(-1)[i]
            if abs(ana) < atol and abs(numeric) < atol:
                continue
            err = abs(ana - numeric) / (abs(numeric) + REL_FLOOR)
            if err > worst:
                worst = err
    return worst
