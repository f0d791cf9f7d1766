"""Shared helpers for the test suite."""

import numpy as np


def fd_grad(fn, arr, eps=1e-5):
    """Central finite differences of the scalar ``fn()`` w.r.t. ``arr`` in place."""
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + eps
        fp = fn()
        flat[k] = orig - eps
        fm = fn()
        flat[k] = orig
        gflat[k] = (fp - fm) / (2.0 * eps)
    return grad


def max_rel_err(analytic, numeric):
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0
