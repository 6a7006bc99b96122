"""Lifted (finite-horizon) signals and LTI operators.

A signal of ``N`` samples on ``c`` channels is stored channel-major: the
stacked vector holds all of channel 1, then all of channel 2, and so on.
A MIMO LTI operator is a grid of impulse responses; block ``(m, k)`` is the
lower-triangular Toeplitz map from input channel ``k`` to output channel
``m``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

__all__ = [
    "ShapeError",
    "Signal",
    "BlockImpulseOperator",
    "SignMatrix",
    "inner",
    "apply",
    "time_reverse",
    "adjoint_apply",
    "block_transpose",
    "kron_apply",
]


class ShapeError(ValueError):
    """Raised when signal or operator dimensions do not line up."""


def _frozen(arr: np.ndarray) -> np.ndarray:
    # C order keeps reductions (and their rounding) independent of how the input was laid out
    arr = np.array(arr, dtype=float, copy=True, order="C")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Signal:
    """Multichannel time series, shape ``(n_channels, n_samples)``."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim == 1:
            data = data[None, :]
        if data.ndim != 2:
            raise ShapeError(f"signal data must be 2-D (channels, samples), got shape {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise ShapeError(f"signal needs at least one channel and one sample, got {data.shape}")
        object.__setattr__(self, "data", _frozen(data))

    @classmethod
    def from_stacked(cls, values, n_channels: int) -> "Signal":
        values = np.asarray(values, dtype=float).ravel()
        if n_channels < 1 or values.size % n_channels:
            raise ShapeError(f"cannot split {values.size} values into {n_channels} channels")
        return cls(values.reshape(n_channels, -1))

    @classmethod
    def zeros(cls, n_channels: int, n_samples: int) -> "Signal":
        return cls(np.zeros((n_channels, n_samples)))

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    @property
    def values(self) -> np.ndarray:
        """Stacked channel-major vector of length ``n_samples * n_channels``."""
        return self.data.ravel()

    def channel(self, index: int) -> np.ndarray:
        return self.data[index]

    def norm(self) -> float:
        return float(np.linalg.norm(self.data))

    def __add__(self, other: "Signal") -> "Signal":
        _same_shape(self, other)
        return Signal(self.data + other.data)

    def __sub__(self, other: "Signal") -> "Signal":
        _same_shape(self, other)
        return Signal(self.data - other.data)

    def __neg__(self) -> "Signal":
        return Signal(-self.data)

    def __mul__(self, scalar: float) -> "Signal":
        return Signal(self.data * float(scalar))

    __rmul__ = __mul__

    def __truediv__(self, scalar: float) -> "Signal":
        return Signal(self.data / float(scalar))

    def __repr__(self) -> str:
        return f"Signal(n_channels={self.n_channels}, n_samples={self.n_samples})"


def _same_shape(a: Signal, b: Signal) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"signal shapes differ: {a.data.shape} vs {b.data.shape}")


def inner(f: Signal, g: Signal) -> float:
    """Euclidean inner product of two stacked signals."""
    _same_shape(f, g)
    return float(np.dot(f.values, g.values))


@dataclass(frozen=True, eq=False)
class BlockImpulseOperator:
    """Causal MIMO LTI operator on ``N``-sample signals.

    ``impulses[m, k]`` is the impulse response from input ``k`` to output
    ``m``, so the array has shape ``(n_outputs, n_inputs, n_samples)``.
    """

    impulses: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.impulses, dtype=float)
        if h.ndim != 3 or min(h.shape) < 1:
            raise ShapeError(
                f"impulses must have shape (n_outputs, n_inputs, n_samples), got {h.shape}"
            )
        object.__setattr__(self, "impulses", _frozen(h))

    @property
    def n_outputs(self) -> int:
        return self.impulses.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.impulses.shape[1]

    @property
    def n_samples(self) -> int:
        return self.impulses.shape[2]

    def block(self, m: int, k: int) -> np.ndarray:
        """Impulse response from input ``k`` to output ``m`` (0-based)."""
        return self.impulses[m, k]

    def __call__(self, u: Signal) -> Signal:
        return apply(self, u)

    def __repr__(self) -> str:
        return (
            f"BlockImpulseOperator(n_outputs={self.n_outputs}, n_inputs={self.n_inputs}, "
            f"n_samples={self.n_samples})"
        )


def apply(op: BlockImpulseOperator, u: Signal) -> Signal:
    """Return ``J u``: per-block direct convolution truncated to ``N`` samples."""
    if u.n_channels != op.n_inputs or u.n_samples != op.n_samples:
        raise ShapeError(
            f"operator expects {op.n_inputs} channels x {op.n_samples} samples, "
            f"got {u.n_channels} x {u.n_samples}"
        )
    n = op.n_samples
    out = np.zeros((op.n_outputs, n))
    for m in range(op.n_outputs):
        for k in range(op.n_inputs):
            out[m] += np.convolve(op.impulses[m, k], u.data[k])[:n]
    return Signal(out)


def time_reverse(x: Signal) -> Signal:
    """Reverse every channel in time (the involutory flip, blockwise)."""
    return Signal(x.data[:, ::-1])


def block_transpose(op: BlockImpulseOperator) -> BlockImpulseOperator:
    """Swap the block grid: block ``(l, m)`` of the result is block ``(m, l)``.

    Impulse responses themselves are not reversed; combine with
    :func:`time_reverse` on both sides to get the adjoint.
    """
    return BlockImpulseOperator(np.swapaxes(op.impulses, 0, 1))


def adjoint_apply(op: BlockImpulseOperator, v: Signal) -> Signal:
    """Return ``J^T v`` via two time reversals around the block-transposed operator."""
    if v.n_channels != op.n_outputs or v.n_samples != op.n_samples:
        raise ShapeError(
            f"adjoint expects {op.n_outputs} channels x {op.n_samples} samples, "
            f"got {v.n_channels} x {v.n_samples}"
        )
    return time_reverse(apply(block_transpose(op), time_reverse(v)))


@dataclass(frozen=True, eq=False)
class SignMatrix:
    """Matrix of i.i.d. symmetric Bernoulli signs, kept with the seed that drew it."""

    entries: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        a = np.asarray(self.entries)
        if a.ndim != 2 or min(a.shape) < 1:
            raise ShapeError(f"sign matrix must be 2-D and non-empty, got shape {a.shape}")
        if not np.all((a == 1) | (a == -1)):
            raise ValueError("sign matrix entries must be exactly -1 or +1")
        object.__setattr__(self, "entries", _frozen(a))

    @classmethod
    def draw(cls, n_rows: int, n_cols: int, seed: int) -> "SignMatrix":
        rng = np.random.default_rng(seed)
        return cls(rng.choice(np.array([-1.0, 1.0]), size=(n_rows, n_cols)), seed=int(seed))

    @property
    def n_rows(self) -> int:
        return self.entries.shape[0]

    @property
    def n_cols(self) -> int:
        return self.entries.shape[1]


def kron_apply(a: Union[SignMatrix, np.ndarray], x: Signal) -> Signal:
    """Apply ``a ⊗ I_N`` to ``x`` without forming the Kronecker product.

    Output channel ``l`` is ``sum_m a[l, m] * x[m]``. ``a`` may be a
    :class:`SignMatrix` or any real matrix (e.g. a 0/1 selector).
    """
    mat = a.entries if isinstance(a, SignMatrix) else np.asarray(a, dtype=float)
    if mat.ndim != 2 or mat.shape[1] != x.n_channels:
        raise ShapeError(f"matrix of shape {mat.shape} cannot act on {x.n_channels} channels")
    return Signal(mat @ x.data)
