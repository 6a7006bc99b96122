"""Synthetic closed-loop plant and the experiment oracle.

The loop is the usual one-degree-of-freedom tracking loop with an added
feedforward input::

    e_c = y_d - y,    u = C e_c + f,    y = P u

Lifted signals drop the plant's one-sample input/output delay: output
sample ``k`` is the loop output at simulation step ``k + 1``, and reference
sample ``k`` is the setpoint for that output. With this convention the
measured tracking error is ``e = S y_d - J f`` with ``S = (I + PC)^-1`` and
``J = (I + PC)^-1 P``, both causal with non-singular leading blocks.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.signal import cont2discrete

from .lifted import BlockImpulseOperator, ShapeError, Signal, apply

logger = logging.getLogger(__name__)

__all__ = [
    "ExperimentError",
    "UnstableLoopError",
    "StateSpaceModel",
    "ClosedLoopPlant",
    "ExperimentOracle",
    "DeskPlantConfig",
    "two_mass_plant",
    "pd_controller",
    "default_desk_plant",
    "write_impulse_csv",
]


class ExperimentError(RuntimeError):
    """An experiment could not be run (bad input or a failing plant)."""


class UnstableLoopError(ValueError):
    """The feedback interconnection is not asymptotically stable."""


@dataclass(frozen=True, eq=False)
class StateSpaceModel:
    """Discrete-time state-space model ``x+ = Ax + Bu, y = Cx + Du``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    sample_time: float

    def __post_init__(self):
        A, B, C, D = (np.atleast_2d(np.asarray(m, dtype=float)) for m in (self.A, self.B, self.C, self.D))
        n = A.shape[0]
        if A.shape != (n, n):
            raise ShapeError(f"A must be square, got {A.shape}")
        if B.shape[0] != n or C.shape[1] != n:
            raise ShapeError(f"inconsistent state dimension: A {A.shape}, B {B.shape}, C {C.shape}")
        if D.shape != (C.shape[0], B.shape[1]):
            raise ShapeError(f"D must be {(C.shape[0], B.shape[1])}, got {D.shape}")
        if not self.sample_time > 0:
            raise ValueError(f"sample_time must be positive, got {self.sample_time}")
        for name, m in zip("ABCD", (A, B, C, D)):
            m.setflags(write=False)
            object.__setattr__(self, name, m)

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.B.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.C.shape[0]


def two_mass_plant(
    masses: Sequence[float],
    spring: float,
    damping: float,
    ground_damping: float,
    input_mixing: np.ndarray,
    sample_time: float,
) -> StateSpaceModel:
    """Chain of masses joined by spring-dampers, zero-order-hold discretized.

    Inputs are forces routed through ``input_mixing`` (row ``i`` gives the
    force on mass ``i`` per unit of each actuator input); outputs are the
    mass positions. A non-symmetric mixing matrix makes the process
    sensitivity non-symmetric (``J^12 != J^21``).
    """
    m = np.asarray(masses, dtype=float)
    n = m.size
    if n < 1 or np.any(m <= 0):
        raise ValueError("masses must be positive")
    K = np.zeros((n, n))
    Cd = np.diag(np.full(n, float(ground_damping)))
    for i in range(n - 1):
        for mat, coef in ((K, spring), (Cd, damping)):
            mat[i, i] += coef
            mat[i + 1, i + 1] += coef
            mat[i, i + 1] -= coef
            mat[i + 1, i] -= coef
    mix = np.asarray(input_mixing, dtype=float).reshape(n, -1)
    Minv = np.diag(1.0 / m)
    A = np.block([[np.zeros((n, n)), np.eye(n)], [-Minv @ K, -Minv @ Cd]])
    B = np.vstack([np.zeros((n, mix.shape[1])), Minv @ mix])
    C = np.hstack([np.eye(n), np.zeros((n, n))])
    D = np.zeros((n, mix.shape[1]))
    Ad, Bd, Cd_, Dd, _ = cont2discrete((A, B, C, D), sample_time, method="zoh")
    return StateSpaceModel(Ad, Bd, Cd_, Dd, sample_time)


def pd_controller(kp: Sequence[float], kd: Sequence[float], sample_time: float) -> StateSpaceModel:
    """Diagonal PD controller with a backward-difference derivative.

    ``u_k = kp e_k + kd (e_k - e_{k-1}) / h``; the state is the previous error.
    """
    kp = np.atleast_1d(np.asarray(kp, dtype=float))
    kd = np.atleast_1d(np.asarray(kd, dtype=float))
    if kp.shape != kd.shape:
        raise ShapeError("kp and kd must have the same length")
    n = kp.size
    h = float(sample_time)
    return StateSpaceModel(
        A=np.zeros((n, n)),
        B=np.eye(n),
        C=-np.diag(kd) / h,
        D=np.diag(kp + kd / h),
        sample_time=h,
    )


class ClosedLoopPlant:
    """Feedback interconnection of a strictly proper plant and a controller.

    On construction the loop is checked for stability and the lifted
    operators ``J`` (feedforward to output) and ``S`` (reference to error)
    are extracted by impulse experiments on the stepped simulation.
    """

    def __init__(self, plant: StateSpaceModel, controller: StateSpaceModel, n_samples: int):
        if np.any(plant.D != 0):
            raise ValueError("plant must be strictly proper (D = 0)")
        if controller.n_inputs != plant.n_outputs or controller.n_outputs != plant.n_inputs:
            raise ShapeError(
                f"controller is {controller.n_outputs}x{controller.n_inputs}, "
                f"plant is {plant.n_outputs}x{plant.n_inputs}"
            )
        if not np.isclose(plant.sample_time, controller.sample_time):
            raise ValueError("plant and controller sample times differ")
        if n_samples < 1:
            raise ValueError("n_samples must be positive")
        self.plant = plant
        self.controller = controller
        self.n_samples = int(n_samples)
        self.sample_time = plant.sample_time

        P, Cc = plant, controller
        nx, nc = P.n_states, Cc.n_states
        # z = [x; xc], w = [y_d; f]
        self._A = np.block([
            [P.A - P.B @ Cc.D @ P.C, P.B @ Cc.C],
            [-Cc.B @ P.C, Cc.A],
        ])
        self._B = np.block([
            [P.B @ Cc.D, P.B],
            [Cc.B, np.zeros((nc, P.n_inputs))],
        ])
        self._C = np.hstack([P.C, np.zeros((P.n_outputs, nc))])
        assert self._A.shape == (nx + nc, nx + nc)

        self.spectral_radius = float(np.max(np.abs(np.linalg.eigvals(self._A))))
        if not self.spectral_radius < 1.0:
            raise UnstableLoopError(
                f"closed loop is not stable (spectral radius {self.spectral_radius:.6g})"
            )
        self.J = self._extract(feedforward=True)
        self.S = self._extract(feedforward=False)

    @property
    def n_inputs(self) -> int:
        return self.plant.n_inputs

    @property
    def n_outputs(self) -> int:
        return self.plant.n_outputs

    def simulate(self, reference: Signal, feedforward: Signal) -> tuple[Signal, Signal]:
        """Run the loop from rest; return the lifted error and output."""
        n = self.n_samples
        if reference.data.shape != (self.n_outputs, n):
            raise ShapeError(f"reference must be {self.n_outputs}x{n}, got {reference.data.shape}")
        if feedforward.data.shape != (self.n_inputs, n):
            raise ShapeError(f"feedforward must be {self.n_inputs}x{n}, got {feedforward.data.shape}")
        # the setpoint used at step t is reference sample t - 1
        w = np.vstack([
            np.hstack([np.zeros((self.n_outputs, 1)), reference.data[:, :-1]]),
            feedforward.data,
        ])
        A, B, C = self._A, self._B, self._C
        z = np.zeros(A.shape[0])
        y = np.empty((self.n_outputs, n))
        for t in range(n):
            z = A @ z + B @ w[:, t]
            y[:, t] = C @ z
        return Signal(reference.data - y), Signal(y)

    def _extract(self, feedforward: bool) -> BlockImpulseOperator:
        n = self.n_samples
        width = self.n_inputs if feedforward else self.n_outputs
        h = np.empty((self.n_outputs, width, n))
        for k in range(width):
            pulse = np.zeros((width, n))
            pulse[k, 0] = 1.0
            if feedforward:
                _, y = self.simulate(Signal.zeros(self.n_outputs, n), Signal(pulse))
                h[:, k, :] = y.data
            else:
                e, _ = self.simulate(Signal(pulse), Signal.zeros(self.n_inputs, n))
                h[:, k, :] = e.data
        return BlockImpulseOperator(h)


@dataclass
class ExperimentOracle:
    """The learner's only access to the plant.

    Every call runs one experiment and bumps ``experiments``. Measurement
    noise (i.i.d. Gaussian, per output channel) is drawn from a generator
    seeded with ``rng_seed``. ``backend="operator"`` evaluates experiments
    with the impulse-extracted operators instead of stepping the loop;
    results agree to rounding and it is much faster for Monte-Carlo work.
    """

    loop: ClosedLoopPlant
    reference: Signal
    noise_std: float | Sequence[float] = 0.0
    rng_seed: int | None = 0
    backend: str = "simulate"
    experiments: int = field(default=0, init=False)

    def __post_init__(self):
        if self.reference.data.shape != (self.loop.n_outputs, self.loop.n_samples):
            raise ShapeError(
                f"reference must be {self.loop.n_outputs}x{self.loop.n_samples}, "
                f"got {self.reference.data.shape}"
            )
        std = np.broadcast_to(np.asarray(self.noise_std, dtype=float), (self.loop.n_outputs,))
        if np.any(std < 0) or not np.all(np.isfinite(std)):
            raise ValueError("noise_std must be finite and non-negative")
        if self.backend not in ("simulate", "operator"):
            raise ValueError(f"unknown backend {self.backend!r}")
        self._std = std.copy()
        self._rng = np.random.default_rng(self.rng_seed)
        self._zero_reference = Signal.zeros(self.loop.n_outputs, self.loop.n_samples)

    @property
    def n_inputs(self) -> int:
        return self.loop.n_inputs

    @property
    def n_outputs(self) -> int:
        return self.loop.n_outputs

    @property
    def n_samples(self) -> int:
        return self.loop.n_samples

    def run_tracking_experiment(self, f: Signal) -> Signal:
        """Track the reference with feedforward ``f``; return the measured error."""
        self._check(f)
        self.experiments += 1
        if self.backend == "operator":
            e = apply(self.loop.S, self.reference) - apply(self.loop.J, f)
        else:
            e, _ = self.loop.simulate(self.reference, f)
        return self._measure(e)

    def run_zero_reference_experiment(self, f: Signal) -> Signal:
        """Zero reference, feedforward ``f``; return the measured output ``J f``."""
        self._check(f)
        self.experiments += 1
        return self._measure(self._response(f))

    def scaled_zero_reference_experiment(self, f: Signal, scale: float) -> Signal:
        """One zero-reference experiment on ``scale * f``, divided back by ``scale``."""
        scale = float(scale)
        if scale == 0 or not np.isfinite(scale):
            raise ValueError(f"scale must be finite and nonzero, got {scale}")
        self._check(f)
        self.experiments += 1
        return self._measure(self._response(f * scale)) / scale

    def _response(self, f: Signal) -> Signal:
        if self.backend == "operator":
            return apply(self.loop.J, f)
        _, y = self.loop.simulate(self._zero_reference, f)
        return y

    def _check(self, f: Signal) -> None:
        if f.data.shape != (self.n_inputs, self.n_samples):
            raise ShapeError(f"feedforward must be {self.n_inputs}x{self.n_samples}, got {f.data.shape}")
        if not np.all(np.isfinite(f.data)):
            raise ExperimentError("feedforward contains non-finite values")

    def _measure(self, s: Signal) -> Signal:
        if not np.any(self._std):
            return s
        noise = self._rng.standard_normal(s.data.shape) * self._std[:, None]
        return Signal(s.data + noise)


@dataclass(frozen=True)
class DeskPlantConfig:
    """Physical constants of the shipped two-mass desk plant.

    These are illustrative defaults, not values of any real machine.
    """

    masses: tuple[float, ...] = (1.0, 2.0)
    spring: float = 500.0
    damping: float = 5.0
    ground_damping: float = 1.0
    input_mixing: tuple[tuple[float, ...], ...] = ((1.0, 0.0), (0.3, 1.0))
    kp: tuple[float, ...] = (4000.0, 4000.0)
    kd: tuple[float, ...] = (90.0, 90.0)


def default_desk_plant(
    n_samples: int = 256,
    sample_time: float = 0.005,
    config: DeskPlantConfig | None = None,
) -> ClosedLoopPlant:
    """Build the stable coupled desk loop (2x2 with the default config)."""
    if n_samples < 64:
        raise ValueError(f"desk plant needs n_samples >= 64, got {n_samples}")
    cfg = config or DeskPlantConfig()
    plant = two_mass_plant(
        cfg.masses, cfg.spring, cfg.damping, cfg.ground_damping, np.asarray(cfg.input_mixing), sample_time
    )
    controller = pd_controller(cfg.kp, cfg.kd, sample_time)
    loop = ClosedLoopPlant(plant, controller, n_samples)
    logger.debug("desk loop built, spectral radius %.6f", loop.spectral_radius)
    return loop


def write_impulse_csv(op: BlockImpulseOperator, path: str | Path, prefix: str = "J") -> None:
    """Write one column per block, headed ``J_m_k`` (1-based output, input)."""
    cols = [(m, k) for m in range(op.n_outputs) for k in range(op.n_inputs)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"{prefix}_{m + 1}_{k + 1}" for m, k in cols])
        for t in range(op.n_samples):
            writer.writerow([f"{op.impulses[m, k, t]:.17g}" for m, k in cols])
