"""Shared test oracles: finite differences and gradient comparison.

The finite-difference gradient is deliberately independent of the library's
backward pass; it only ever calls scalar loss evaluations.
"""

import numpy as np


def central_diff_grad(f, x, h_scale=1e-5):
    """Central finite differences with per-coordinate step h_scale * (1 + |x_i|)."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        h = h_scale * (1.0 + abs(x.flat[i]))
        xp = x.copy()
        xm = x.copy()
        xp.flat[i] += h
        xm.flat[i] -= h
        g.flat[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def max_rel_err(analytic, reference):
    """Max entrywise |a - r| / max(1, |a|, |r|): relative for O(1)+ entries,
    absolute below that (finite differences cannot resolve tiny entries)."""
    a = np.asarray(analytic, dtype=np.float64)
    r = np.asarray(reference, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(r)))
    return float(np.max(np.abs(a - r) / denom))


def assert_grad_close(analytic, reference, tol):
    err = max_rel_err(analytic, reference)
    assert err <= tol, f"gradient mismatch: max relative error {err:.3e} > {tol:.1e}"
