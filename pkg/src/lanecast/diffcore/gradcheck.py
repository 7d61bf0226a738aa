"""Finite-difference validation of analytic gradients.

Runs in float64 only. For each sampled coordinate the numeric derivative is
the central difference (f(x+eps) - f(x-eps)) / (2 eps) and the reported error
is |a - n| / max(1e-8, |a| + |n|).
"""

from __future__ import annotations

import numpy as np

from ..errors import ContractError
from .tensor import backward


def grad_check(fn, store, eps=1e-5, n_samples=None, seed=0):
    """Compare analytic gradients of `fn(store) -> scalar Tensor` to central
    finite differences.

    With `n_samples`, checks a random subset of coordinates per parameter
    (always at least one); otherwise checks every coordinate. Returns
    (max_rel_err, report) where report maps parameter names to their worst
    coordinate's (index, analytic, numeric, rel_err).
    """
    if store.dtype != np.float64:
        raise ContractError(f"grad_check requires a float64 store, got {store.dtype}")
    rng = np.random.default_rng(seed)

    loss = fn(store)
    if loss.shape != ():
        raise ContractError(f"grad_check: fn must return a scalar, got shape {loss.shape}")
    analytic = backward(loss, dict(store.items()))

    worst = 0.0
    report = {}
    for name, t in store.items():
        flat = t.data.reshape(-1)
        n = flat.size
        if n_samples is None or n_samples >= n:
            coords = np.arange(n)
        else:
            coords = rng.choice(n, size=max(1, n_samples), replace=False)
        a_flat = analytic[name].reshape(-1)
        entry = None
        for c in coords:
            c = int(c)
            keep = flat[c]
            flat[c] = keep + eps
            f_plus = float(fn(store).data)
            flat[c] = keep - eps
            f_minus = float(fn(store).data)
            flat[c] = keep
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = float(a_flat[c])
            rel = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            if entry is None or rel > entry[3]:
                entry = (c, a, numeric, rel)
            if rel > worst:
                worst = rel
        report[name] = entry
    return worst, report
