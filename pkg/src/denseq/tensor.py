"""Deterministic numeric substrate shared by every model component.

Tensors are plain numpy float64 ndarrays in row-major (C) order; this module
adds the shape checking, finiteness guards, and the seeded generator that the
rest of the package builds on. All heavy arithmetic is delegated to numpy,
which is deterministic run to run for a fixed build, so fixed seeds give
bitwise reproducible results.

The generator is PCG64 and is fixed permanently: regression values checked
into the test suite depend on its exact sample stream.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .errors import DimensionError, NumericError

DTYPE = np.float64


def as_tensor(values, shape=None):
    """Coerce ``values`` to a float64 C-order array, optionally reshaped."""
    arr = np.ascontiguousarray(np.asarray(values, dtype=DTYPE))
    if shape is not None:
        arr = arr.reshape(shape)
    return arr


def check_finite(arr, what="tensor"):
    """Raise NumericError if ``arr`` contains NaN or Inf; return it unchanged."""
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {what}")
    return arr


def matmul(a, b):
    """Matrix product of two 2-D tensors with explicit shape validation."""
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(
            f"matmul expects 2-D operands, got shapes {a.shape} and {b.shape}"
        )
    if a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"matmul inner dimensions disagree: {a.shape} vs {b.shape}"
        )
    return a @ b


def concat(parts, axis=0):
    """Concatenate tensors along ``axis``; all other axes must agree."""
    parts = [np.asarray(p, dtype=DTYPE) for p in parts]
    if not parts:
        raise DimensionError("concat needs at least one part")
    ref = parts[0].shape
    for p in parts[1:]:
        if p.ndim != len(ref):
            raise DimensionError(
                f"concat rank mismatch: {ref} vs {p.shape}"
            )
        for ax in range(p.ndim):
            if ax != (axis % p.ndim) and p.shape[ax] != ref[ax]:
                raise DimensionError(
                    f"concat shape mismatch off axis {axis}: {ref} vs {p.shape}"
                )
    return np.concatenate(parts, axis=axis)


class Rng:
    """Seed-deterministic random source. Identical seed, identical stream."""

    def __init__(self, seed):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, low, high, shape=None):
        return self._gen.uniform(low, high, size=shape).astype(DTYPE, copy=False)

    def normal(self, loc=0.0, scale=1.0, shape=None):
        return self._gen.normal(loc, scale, size=shape).astype(DTYPE, copy=False)

    def integers(self, low, high, shape=None):
        return self._gen.integers(low, high, size=shape)

    def permutation(self, n):
        return self._gen.permutation(n)

    def choice_weighted(self, n, weights):
        """Draw one index in [0, n) with the given unnormalized weights."""
        w = np.asarray(weights, dtype=DTYPE)
        return int(self._gen.choice(n, p=w / w.sum()))


def derive_seed(base, *tags):
    """Stable 63-bit seed derived from a base seed and string tags.

    Used to give independent experiment cells (sweep points, data splits)
    their own reproducible streams.
    """
    text = ":".join([str(int(base))] + [str(t) for t in tags])
    digest = hashlib.sha256(text.encode("utf-8")).hexdigest()
    return int(digest[:15], 16)


def glorot_uniform(rng, shape, fan_in, fan_out):
    """Uniform(-a, a) init with a = sqrt(6 / (fan_in + fan_out))."""
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, shape)
