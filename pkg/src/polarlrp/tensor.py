"""Immutable float64 tensors.

Everything downstream (weights, activations, relevance) is carried in a
:class:`Tensor`.  The class is a thin wrapper over a read-only numpy array
that rejects non-finite values up front, so a poisoned relevance map fails
loudly instead of rendering as garbage.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when tensor shapes are incompatible."""


class NonFiniteError(ValueError):
    """Raised when a tensor would contain NaN or infinity."""


class Tensor:
    """Dense row-major array of finite 64-bit reals.

    Accepts anything ``np.asarray`` understands.  ``shape`` may be given to
    reinterpret flat data.  Instances are immutable; the wrapped array is
    flagged read-only and never exposed writable.
    """

    __slots__ = ("_array",)

    def __init__(self, values, shape: Sequence[int] | None = None):
        if isinstance(values, Tensor):
            arr = values._array
        else:
            arr = np.array(values, dtype=np.float64, copy=True)
        if shape is not None:
            shape = tuple(int(s) for s in shape)
            if int(np.prod(shape, dtype=np.int64)) != arr.size:
                raise ShapeError(f"cannot view {arr.size} values as shape {list(shape)}")
            arr = arr.reshape(shape)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("tensor contains NaN or infinite values")
        if arr.flags.writeable:
            arr = np.ascontiguousarray(arr)
            arr.setflags(write=False)
        self._array = arr

    @property
    def shape(self) -> tuple[int, ...]:
        return self._array.shape

    @property
    def rank(self) -> int:
        return self._array.ndim

    @property
    def size(self) -> int:
        return self._array.size

    @property
    def array(self) -> np.ndarray:
        """Read-only numpy view of the values."""
        return self._array

    @property
    def data(self) -> list[float]:
        """Flat row-major copy of the values."""
        return self._array.ravel().tolist()

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self._array
        return self._array.astype(dtype)

    def __len__(self) -> int:
        return self._array.shape[0] if self._array.ndim else 1

    def __eq__(self, other) -> bool:
        if not isinstance(other, Tensor):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self._array, other._array))

    __hash__ = None

    def __repr__(self) -> str:
        return f"Tensor(shape={list(self.shape)}, data={self._array.tolist()!r})"

    def tolist(self):
        return self._array.tolist()


def as_tensor(values) -> Tensor:
    return values if isinstance(values, Tensor) else Tensor(values)


def zeros(shape: Iterable[int]) -> Tensor:
    return Tensor(np.zeros(tuple(shape)))


def reshape(t: Tensor, new_shape: Sequence[int]) -> Tensor:
    t = as_tensor(t)
    new_shape = [int(s) for s in new_shape]
    if int(np.prod(new_shape, dtype=np.int64)) != t.size:
        raise ShapeError(f"cannot reshape {list(t.shape)} to {new_shape}")
    return Tensor(t.array, shape=new_shape)


def truncate_positive(t: Tensor) -> Tensor:
    """``max(x, 0)`` elementwise."""
    return Tensor(np.maximum(as_tensor(t).array, 0.0))


def truncate_negative(t: Tensor) -> Tensor:
    """``min(x, 0)`` elementwise."""
    return Tensor(np.minimum(as_tensor(t).array, 0.0))


def ordered_sum(values) -> float:
    """Left-to-right sum over the flat row-major sequence.

    ``np.sum`` uses pairwise summation whose grouping depends on array
    layout; ``cumsum`` accumulates strictly in order.
    """
    flat = np.asarray(values, dtype=np.float64).ravel()
    if flat.size == 0:
        return 0.0
    return float(np.cumsum(flat)[-1])


def total(t: Tensor) -> float:
    return ordered_sum(as_tensor(t).array)


def sum_along_axis(t: Tensor, axis: int) -> Tensor:
    t = as_tensor(t)
    if not -t.rank <= axis < t.rank:
        raise ShapeError(f"axis {axis} out of range for rank {t.rank}")
    arr = t.array
    if arr.shape[axis] == 0:
        return Tensor(np.zeros(arr.shape[:axis % t.rank] + arr.shape[axis % t.rank + 1:]))
    return Tensor(np.take(np.cumsum(arr, axis=axis), -1, axis=axis))
