"""Reference trajectories and the structured MIMO feedforward basis.

The feedforward on input ``n`` is

    f^n = sum_k sum_l psi_l^k(y_d^k) * theta[(n-1) n_o n_b + (l-1) n_o + k]

(1-based), i.e. every input uses the same ``n_b`` basis functions applied to
every output reference, each with its own parameter. Internally ``theta`` is
viewed as an array of shape ``(n_i, n_b, n_o)`` in C order, which is exactly
that index map shifted to 0-based.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from math import comb
from pathlib import Path
from typing import Callable, Sequence, Union

import numpy as np
from numpy.polynomial import Polynomial

from .lifted import ShapeError, Signal

__all__ = [
    "ChannelMove",
    "ReferenceProfile",
    "BasisMatrix",
    "MOTION_ORDERS",
    "smoothstep",
    "generate_reference",
    "differentiate",
    "build_basis",
    "apply_transpose",
    "apply",
    "theta_index",
    "theta_triplet",
    "write_reference_csv",
    "read_reference_csv",
    "write_basis_csv",
]

# position, velocity, acceleration, jerk, snap
MOTION_ORDERS = (0, 1, 2, 3, 4)


def smoothstep(order: int) -> Polynomial:
    """Odd-degree polynomial rising from 0 to 1 on [0, 1] with flat ends.

    Degree ``2n + 1`` has derivatives 1..n equal to zero at both ends, so
    ``order=9`` gives a C^4 point-to-point move (bounded, continuous snap).
    """
    if order < 9 or order % 2 == 0:
        raise ValueError(f"smoothstep order must be odd and >= 9, got {order}")
    n = (order - 1) // 2
    coef = np.zeros(order + 1)
    for k in range(n + 1):
        coef[n + 1 + k] = comb(n + k, k) * comb(2 * n + 1, n - k) * (-1) ** k
    return Polynomial(coef)


@dataclass(frozen=True)
class ChannelMove:
    """Point-to-point move on one output channel."""

    start: float = 0.0
    end: float = 0.0
    duration: float = 0.1
    start_time: float = 0.0


@dataclass(frozen=True)
class ReferenceProfile:
    moves: tuple[ChannelMove, ...]
    n_samples: int
    sample_time: float
    order: int = 9

    @property
    def n_channels(self) -> int:
        return len(self.moves)


def generate_reference(profile: ReferenceProfile) -> Signal:
    """Sample the smoothstep moves at ``t_k = k * sample_time``."""
    if profile.n_channels < 1:
        raise ValueError("reference needs at least one channel")
    h, n = profile.sample_time, profile.n_samples
    if n < 1 or not h > 0:
        raise ValueError("n_samples must be positive and sample_time > 0")
    horizon = (n - 1) * h
    step = smoothstep(profile.order)
    t = np.arange(n) * h
    rows = []
    for idx, mv in enumerate(profile.moves):
        if not mv.duration > 0 or mv.start_time < 0:
            raise ValueError(f"channel {idx + 1}: duration must be > 0 and start_time >= 0")
        if mv.start_time + mv.duration > horizon * (1 + 1e-12):
            raise ValueError(
                f"channel {idx + 1}: move ends at {mv.start_time + mv.duration:g} s, "
                f"beyond the {horizon:g} s horizon of {n} samples"
            )
        s = np.clip((t - mv.start_time) / mv.duration, 0.0, 1.0)
        rows.append(mv.start + (mv.end - mv.start) * step(s))
    return Signal(np.vstack(rows))


def _fd_weights(offsets: np.ndarray, order: int) -> np.ndarray:
    # weights w with sum_j w_j s_j^q / q! = [q == order] for q < len(offsets)
    m = offsets.size
    vander = np.vander(offsets.astype(float), m, increasing=True).T
    rhs = np.zeros(m)
    rhs[order] = float(np.prod(np.arange(1, order + 1)))
    return np.linalg.solve(vander, rhs)


def differentiate(x, order: int, sample_time: float) -> np.ndarray:
    """Finite-difference derivative of given order, second-order accurate.

    Interior samples use central stencils; samples too close to either end use
    a shifted window of ``order + 2`` points, which keeps second-order accuracy.
    """
    if order not in (1, 2, 3, 4):
        raise ValueError(f"order must be 1..4, got {order}")
    x = np.asarray(x, dtype=float)
    n = x.size
    width = order + 2
    if n < width:
        raise ValueError(f"need at least {width} samples for a derivative of order {order}, got {n}")
    half = (order + 1) // 2
    out = np.empty(n)
    central = _fd_weights(np.arange(-half, half + 1), order)
    out[half:n - half] = np.correlate(x, central, mode="valid")
    for i in list(range(half)) + list(range(n - half, n)):
        lo = 0 if i < half else n - width
        offsets = np.arange(lo, lo + width) - i
        out[i] = _fd_weights(offsets, order) @ x[lo:lo + width]
    return out / sample_time**order


BasisSpec = Union[str, Sequence[Union[int, Callable[[np.ndarray], np.ndarray]]]]


@dataclass(frozen=True, eq=False)
class BasisMatrix:
    """Structured ``psi(y_d)^T``, stored as its distinct basis signals.

    ``signals[l, k]`` is basis function ``l`` applied to output reference ``k``.
    The dense matrix it stands for is block diagonal over the ``n_i`` inputs
    with identical blocks.
    """

    signals: np.ndarray
    n_inputs: int

    def __post_init__(self):
        sig = np.array(self.signals, dtype=float, copy=True, order="C")
        if sig.ndim != 3 or min(sig.shape) < 1:
            raise ShapeError(f"basis signals must have shape (n_b, n_o, N), got {sig.shape}")
        if self.n_inputs < 1:
            raise ValueError("n_inputs must be positive")
        sig.setflags(write=False)
        object.__setattr__(self, "signals", sig)

    @property
    def n_basis(self) -> int:
        return self.signals.shape[0]

    @property
    def n_outputs(self) -> int:
        return self.signals.shape[1]

    @property
    def n_samples(self) -> int:
        return self.signals.shape[2]

    @property
    def n_params(self) -> int:
        return self.n_basis * self.n_outputs * self.n_inputs


def build_basis(
    y_d: Signal,
    kind: BasisSpec = "motion",
    sample_time: float = 1.0,
    n_inputs: int | None = None,
    normalize: bool = False,
) -> BasisMatrix:
    """Build the basis from a reference.

    ``kind`` is ``"motion"`` (position through snap, ``n_b = 5``) or a list
    whose items are derivative orders (0 = the reference itself) or callables
    mapping one channel's reference to a basis signal. With ``normalize`` each
    nonzero basis signal is scaled to unit 2-norm.
    """
    if not np.all(np.isfinite(y_d.data)):
        raise ValueError("reference contains non-finite values")
    items = MOTION_ORDERS if isinstance(kind, str) and kind == "motion" else kind
    if isinstance(items, str):
        raise ValueError(f"unknown basis kind {kind!r}")
    items = list(items)
    if not items:
        raise ValueError("basis list is empty")

    def one(item, ref: np.ndarray) -> np.ndarray:
        if callable(item):
            out = np.asarray(item(ref), dtype=float)
            if out.shape != ref.shape:
                raise ShapeError(f"basis callable returned shape {out.shape}, expected {ref.shape}")
            return out
        if int(item) == 0:
            return ref.copy()
        return differentiate(ref, int(item), sample_time)

    signals = np.array([[one(item, y_d.data[k]) for k in range(y_d.n_channels)] for item in items])
    if normalize:
        norms = np.linalg.norm(signals, axis=2, keepdims=True)
        signals = np.divide(signals, norms, out=signals.copy(), where=norms > 0)
    return BasisMatrix(signals, n_inputs or y_d.n_channels)


def _theta_view(psi: BasisMatrix, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (psi.n_params,):
        raise ShapeError(f"theta must have length {psi.n_params}, got shape {theta.shape}")
    return theta.reshape(psi.n_inputs, psi.n_basis, psi.n_outputs)


def apply_transpose(psi: BasisMatrix, theta) -> Signal:
    """Feedforward ``f = psi^T theta`` on ``n_i`` channels."""
    th = _theta_view(psi, theta)
    return Signal(np.einsum("nlk,lkt->nt", th, psi.signals))


def apply(psi: BasisMatrix, v: Signal) -> np.ndarray:
    """Map a lifted ``n_i``-channel signal into parameter space (``psi v``)."""
    if v.n_channels != psi.n_inputs or v.n_samples != psi.n_samples:
        raise ShapeError(
            f"basis expects {psi.n_inputs} channels x {psi.n_samples} samples, "
            f"got {v.n_channels} x {v.n_samples}"
        )
    return np.einsum("lkt,nt->nlk", psi.signals, v.data).ravel()


def theta_index(n: int, l: int, k: int, n_outputs: int, n_basis: int) -> int:
    """1-based parameter index of (input n, basis l, output k), all 1-based."""
    return (n - 1) * n_outputs * n_basis + (l - 1) * n_outputs + k


def theta_triplet(index: int, n_outputs: int, n_basis: int) -> tuple[int, int, int]:
    """Inverse of :func:`theta_index`."""
    if index < 1:
        raise ValueError("parameter indices are 1-based")
    n, rest = divmod(index - 1, n_outputs * n_basis)
    l, k = divmod(rest, n_outputs)
    return n + 1, l + 1, k + 1


def write_reference_csv(path: str | Path, y_d: Signal, sample_time: float) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"ch{k + 1}" for k in range(y_d.n_channels)])
        for i in range(y_d.n_samples):
            w.writerow([f"{i * sample_time:.17g}"] + [f"{v:.17g}" for v in y_d.data[:, i]])


def read_reference_csv(path: str | Path) -> tuple[Signal, float]:
    """Read ``t, ch1, ch2, ...``; return the reference and its sample time."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty reference file")
    header = [c.strip() for c in rows[0]]
    if len(header) < 2 or header[0] != "t" or any(c != f"ch{i}" for i, c in enumerate(header[1:], 1)):
        raise ValueError(f"{path}:1: header must be 't, ch1, ch2, ...', got {rows[0]}")
    try:
        data = np.array([[float(c) for c in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise ValueError(f"{path}: non-numeric entry ({exc})") from None
    if data.ndim != 2 or data.shape[0] < 2 or data.shape[1] != len(header):
        raise ValueError(f"{path}: need at least two rows of {len(header)} columns")
    dt = np.diff(data[:, 0])
    if not np.all(dt > 0) or not np.allclose(dt, dt[0], rtol=1e-9, atol=0):
        raise ValueError(f"{path}: time column must be uniformly increasing")
    return Signal(data[:, 1:].T), float(dt[0])


def write_basis_csv(path: str | Path, psi: BasisMatrix, sample_time: float) -> None:
    """Columns ``t, psi_l_k`` (basis ``l``, output reference ``k``, 1-based)."""
    cols = [(l, k) for l in range(psi.n_basis) for k in range(psi.n_outputs)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"psi_{l + 1}_{k + 1}" for l, k in cols])
        for i in range(psi.n_samples):
            w.writerow([f"{i * sample_time:.17g}"] + [f"{psi.signals[l, k, i]:.17g}" for l, k in cols])
