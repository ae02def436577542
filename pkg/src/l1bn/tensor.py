"""Dense float64 tensor helpers: seeded RNG, axis reductions, elementwise kernels.

Everything operates on C-contiguous numpy arrays in double precision and is
pure: inputs are never mutated, outputs are freshly allocated.  Reductions use
numpy's sequential pairwise summation, so results are bit-deterministic for a
given input regardless of how the caller threads around them.  Broadcasting is
deliberately restricted to re-expanding reduced axes (see ``unreduce``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    """Operand shapes or reduction axes are inconsistent."""


class DomainError(ValueError):
    """Operand values lie outside an operation's domain."""


def as_tensor(values, shape=None) -> np.ndarray:
    """Coerce ``values`` to a fresh C-contiguous float64 array, optionally reshaped."""
    arr = np.array(values, dtype=np.float64, order="C")
    if shape is not None:
        if arr.size != int(np.prod(shape)):
            raise ShapeError(f"cannot view {arr.size} values as shape {tuple(shape)}")
        arr = arr.reshape(tuple(shape))
    return arr


@dataclass
class Rng:
    """Deterministic random source: equal seeds yield identical sample streams."""

    seed: int

    def __post_init__(self):
        self._gen = np.random.default_rng(self.seed)

    def normal(self, shape, mu: float = 0.0, sigma: float = 1.0) -> np.ndarray:
        """I.i.d. Gaussian samples.  ``sigma=0`` degenerates to a constant tensor."""
        if sigma < 0:
            raise DomainError(f"sigma must be nonnegative, got {sigma}")
        return self._gen.normal(loc=mu, scale=sigma, size=shape)

    def uniform(self, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        if high < low:
            raise DomainError(f"empty interval [{low}, {high})")
        return self._gen.uniform(low=low, high=high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


def check_axes(ndim: int, axes) -> tuple[int, ...]:
    """Validate a reduction axis-set against a tensor rank."""
    if isinstance(axes, (int, np.integer)):
        axes = (int(axes),)
    axes = tuple(int(a) for a in axes)
    seen = set()
    for ax in axes:
        if not 0 <= ax < ndim:
            raise ShapeError(f"axis {ax} invalid for rank-{ndim} tensor")
        if ax in seen:
            raise ShapeError(f"axis {ax} given twice")
        seen.add(ax)
    return axes


def reduce_mean(t: np.ndarray, axes) -> np.ndarray:
    """Arithmetic mean over ``axes``; reduced axes are removed from the shape."""
    axes = check_axes(t.ndim, axes)
    return np.mean(t, axis=axes)


def reduce_sum(t: np.ndarray, axes) -> np.ndarray:
    axes = check_axes(t.ndim, axes)
    return np.sum(t, axis=axes)


def unreduce(values: np.ndarray, shape, axes) -> np.ndarray:
    """Re-expand a reduced tensor back to ``shape`` by repeating along ``axes``.

    Inverse of the shape change done by ``reduce_mean``/``reduce_sum``; this is
    the only broadcasting the library performs explicitly.
    """
    shape = tuple(shape)
    axes = check_axes(len(shape), axes)
    expected = tuple(s for i, s in enumerate(shape) if i not in axes)
    if np.shape(values) != expected:
        raise ShapeError(f"values shape {np.shape(values)} does not match {expected}")
    return np.ascontiguousarray(np.broadcast_to(np.expand_dims(values, axes), shape))


def _binary(a: np.ndarray, b: np.ndarray, op) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"operand shapes differ: {a.shape} vs {b.shape}")
    return op(a, b)


def add(a, b) -> np.ndarray:
    return _binary(a, b, np.add)


def sub(a, b) -> np.ndarray:
    return _binary(a, b, np.subtract)


def mul(a, b) -> np.ndarray:
    return _binary(a, b, np.multiply)


def div(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"operand shapes differ: {a.shape} vs {b.shape}")
    if np.any(b == 0.0):
        raise DomainError("division by zero")
    return np.divide(a, b)


def absolute(x) -> np.ndarray:
    return np.abs(np.asarray(x, dtype=np.float64))


def sign(x) -> np.ndarray:
    """Signum with sign(0) = 0, the symmetric subgradient choice for |x| at 0."""
    return np.sign(np.asarray(x, dtype=np.float64))


def square(x) -> np.ndarray:
    return np.square(np.asarray(x, dtype=np.float64))


def sqrt(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < 0.0):
        raise DomainError("sqrt of negative value")
    return np.sqrt(x)
