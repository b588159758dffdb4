"""Central finite differences for checking analytic gradients."""

from __future__ import annotations

import numpy as np

REL_FLOOR = 1e-6


def finite_difference(func, x, h=1e-5, indices=None):
    """Central-difference gradient of scalar ``func`` at ``x``.

    ``indices`` restricts the check to some flat positions; the rest of the
    returned array is NaN.
    """
    x = np.array(x, dtype=np.float64, order="C")
    flat = x.reshape(-1)
    grad = np.full(flat.shape, np.nan)
    positions = range(flat.size) if indices is None else indices
    for k in positions:
        orig = flat[k]
        flat[k] = orig + h
        f_plus = func(x)
        flat[k] = orig - h
        f_minus = func(x)
        flat[k] = orig
        grad[k] = (f_plus - f_minus) / (2.0 * h)
    return grad.reshape(x.shape)


def max_relative_error(analytic, numeric, floor=REL_FLOOR):
    """max |a - n| / max(|a|, |n|, floor) over entries where ``numeric`` is defined."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    ok = ~np.isnan(n)
    a, n = a[ok], n[ok]
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0
