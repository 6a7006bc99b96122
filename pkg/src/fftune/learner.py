"""Model-free feedforward tuning by stochastic gradient descent.

Each iteration runs one tracking experiment to measure ``e_j``, estimates the
gradient ``-2 psi J^T e_j`` from plant experiments, and takes the exact
line-search step along the estimate, which costs one more experiment.

Two gradient routes are provided:

* ``stochastic``: one zero-reference experiment with input ``A T e_j``,
  where ``A = a ⊗ I_N`` for a random sign matrix ``a``; the output is
  multiplied by ``A`` and time-reversed. The expectation over ``a`` is
  ``J^T e_j`` because ``E[a_lp a_qm] = 1`` only when ``(l, p) = (q, m)``.
* ``deterministic``: ``n_i * n_o`` experiments, one per selector ``E^lm``,
  whose sum reconstructs the block-transposed operator exactly.

The update is ``theta + eps * g_hat`` with ``eps = e^T w / w^T w`` and
``w = J psi^T g_hat``; since ``eps`` flips sign with ``g_hat``, the iterate
is the same as writing the update with a minus sign.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from . import basis
from .basis import BasisMatrix
from .lifted import BlockImpulseOperator, SignMatrix, Signal, adjoint_apply, kron_apply, time_reverse
from .plant import ExperimentError, ExperimentOracle

logger = logging.getLogger(__name__)

__all__ = [
    "DegenerateDirectionError",
    "TuningAborted",
    "GradientEstimate",
    "StepSize",
    "LearnerConfig",
    "IterationRecord",
    "cost",
    "exact_gradient",
    "stochastic_gradient_estimate",
    "deterministic_gradient",
    "optimal_step_size",
    "iteration_seed",
    "iterate_tuning",
    "run_tuning",
]

# ratio of plant gains (gradient probe vs. search direction) treated as a null direction
DEGENERATE_GAIN_RATIO = 1e12


class DegenerateDirectionError(ArithmeticError):
    """The search direction is (numerically) in the null space of ``J psi^T``."""


class TuningAborted(RuntimeError):
    """An experiment failed mid-run; ``records`` holds the completed iterations."""

    def __init__(self, message: str, records: list["IterationRecord"]):
        super().__init__(message)
        self.records = records


@dataclass(frozen=True, eq=False)
class GradientEstimate:
    gradient: np.ndarray
    experiments: int
    signs: Optional[SignMatrix] = None
    # largest ||output|| / ||input|| seen in the gradient experiments
    probe_gain: Optional[float] = None


@dataclass(frozen=True)
class StepSize:
    epsilon: float
    experiments: int
    converged: bool = False


def cost(e: Signal) -> float:
    """Squared 2-norm of the stacked error."""
    return float(np.dot(e.values, e.values))


def exact_gradient(psi: BasisMatrix, J: BlockImpulseOperator, e: Signal) -> np.ndarray:
    """Model-based gradient ``-2 psi J^T e``. Needs ``J``; for validation only."""
    return -2.0 * basis.apply(psi, adjoint_apply(J, e))


def _gain(out: Signal, inp: Signal) -> Optional[float]:
    n_in = inp.norm()
    return out.norm() / n_in if n_in > 0 else None


def stochastic_gradient_estimate(
    psi: BasisMatrix,
    oracle: ExperimentOracle,
    e: Signal,
    seed: int,
    alpha: float = 1.0,
) -> GradientEstimate:
    """Unbiased gradient estimate from a single zero-reference experiment.

    The experiment input is ``alpha * A T e``; its output is divided by
    ``alpha``, multiplied by ``A`` and time-reversed before mapping into
    parameter space.
    """
    signs = SignMatrix.draw(oracle.n_inputs, oracle.n_outputs, seed)
    probe = kron_apply(signs, time_reverse(e))
    y = oracle.scaled_zero_reference_experiment(probe, alpha)
    back = time_reverse(kron_apply(signs, y))
    g = -2.0 * basis.apply(psi, back)
    return GradientEstimate(g, experiments=1, signs=signs, probe_gain=_gain(y, probe))


def deterministic_gradient(
    psi: BasisMatrix,
    oracle: ExperimentOracle,
    e: Signal,
    alpha: float = 1.0,
) -> GradientEstimate:
    """Exact gradient from ``n_i * n_o`` experiments, one per selector ``E^lm``.

    ``E^lm`` routes error channel ``m`` to input ``l``; keeping only output
    ``m`` of the response and placing it on channel ``l`` recovers block
    ``(l, m)`` of the block-transposed operator.
    """
    n_i, n_o = oracle.n_inputs, oracle.n_outputs
    rev = time_reverse(e)
    acc = np.zeros((n_i, e.n_samples))
    gains = []
    for l in range(n_i):
        for m in range(n_o):
            sel = np.zeros((n_i, n_o))
            sel[l, m] = 1.0
            probe = kron_apply(sel, rev)
            y = oracle.scaled_zero_reference_experiment(probe, alpha)
            acc += kron_apply(sel, y).data
            g = _gain(y, probe)
            if g is not None:
                gains.append(g)
    g = -2.0 * basis.apply(psi, time_reverse(Signal(acc)))
    return GradientEstimate(g, experiments=n_i * n_o, probe_gain=max(gains) if gains else None)


def optimal_step_size(
    psi: BasisMatrix,
    oracle: ExperimentOracle,
    e: Signal,
    g_hat: np.ndarray,
    beta: float = 1.0,
    reference_gain: Optional[float] = None,
) -> StepSize:
    """Exact line search along ``g_hat`` from one zero-reference experiment.

    Returns ``eps`` minimizing ``||e - eps * J psi^T g_hat||^2``, i.e. the cost
    at ``theta + eps * g_hat``. A zero direction returns ``eps = 0`` flagged as
    converged without running an experiment. When ``reference_gain`` (the
    plant gain seen by the gradient experiment) is given, a direction whose
    gain is more than ``DEGENERATE_GAIN_RATIO`` times smaller is rejected.
    """
    g_hat = np.asarray(g_hat, dtype=float)
    if not np.any(g_hat):
        return StepSize(0.0, experiments=0, converged=True)
    f_dir = basis.apply_transpose(psi, g_hat)
    w = oracle.scaled_zero_reference_experiment(f_dir, beta)
    denom = float(np.dot(w.values, w.values))
    if denom == 0.0:
        raise DegenerateDirectionError("search direction produces no plant response")
    if reference_gain is not None:
        gain = w.norm() / f_dir.norm() if f_dir.norm() > 0 else 0.0
        if gain * DEGENERATE_GAIN_RATIO < reference_gain:
            raise DegenerateDirectionError(
                f"search direction gain {gain:.3g} is ill-conditioned against probe gain {reference_gain:.3g}"
            )
    return StepSize(float(np.dot(e.values, w.values)) / denom, experiments=1)


@dataclass(frozen=True)
class LearnerConfig:
    method: str = "stochastic"
    n_iterations: int = 10
    alpha_scale: float = 1.0
    beta_scale: float = 1.0
    seed: int = 0
    stop_tolerance: Optional[float] = None

    def __post_init__(self):
        if self.method not in ("stochastic", "deterministic"):
            raise ValueError(f"method must be 'stochastic' or 'deterministic', got {self.method!r}")
        if self.n_iterations < 1:
            raise ValueError(f"n_iterations must be >= 1, got {self.n_iterations}")
        for name in ("alpha_scale", "beta_scale"):
            v = getattr(self, name)
            if v == 0 or not np.isfinite(v):
                raise ValueError(f"{name} must be finite and nonzero, got {v}")
        if self.stop_tolerance is not None and not self.stop_tolerance >= 0:
            raise ValueError("stop_tolerance must be non-negative")


@dataclass(frozen=True, eq=False)
class IterationRecord:
    """One iteration: ``cost`` is measured at ``theta`` (before the update)."""

    iteration: int
    theta: np.ndarray
    cost: float
    step_size: float
    experiments_cumulative: int
    gradient_norm: float
    seed: Optional[int]
    theta_next: np.ndarray = field(repr=False)
    converged: bool = False


def iteration_seed(master_seed: int, iteration: int) -> int:
    """Independent per-iteration seed for the sign matrix draw."""
    return int(np.random.SeedSequence([int(master_seed), int(iteration)]).generate_state(1)[0])


def iterate_tuning(
    config: LearnerConfig,
    oracle: ExperimentOracle,
    psi: BasisMatrix,
    theta0: Optional[np.ndarray] = None,
) -> Iterator[IterationRecord]:
    """Yield one :class:`IterationRecord` per iteration as soon as it completes."""
    theta = _initial_theta(oracle, psi, theta0)
    return _iterate(config, oracle, psi, theta)


def _initial_theta(oracle, psi, theta0) -> np.ndarray:
    if psi.n_inputs != oracle.n_inputs or psi.n_outputs != oracle.n_outputs:
        raise ValueError("basis and oracle dimensions differ")
    theta = np.zeros(psi.n_params) if theta0 is None else np.array(theta0, dtype=float)
    if theta.shape != (psi.n_params,):
        raise ValueError(f"theta0 must have length {psi.n_params}")
    return theta


def _iterate(config, oracle, psi, theta) -> Iterator[IterationRecord]:
    start = oracle.experiments
    first_cost = None
    for j in range(1, config.n_iterations + 1):
        e = oracle.run_tracking_experiment(basis.apply_transpose(psi, theta))
        c = cost(e)
        first_cost = c if first_cost is None else first_cost
        if config.stop_tolerance is not None and j > 1 and c <= config.stop_tolerance * first_cost:
            yield IterationRecord(j, theta, c, 0.0, oracle.experiments - start, 0.0, None, theta, True)
            return
        if config.method == "stochastic":
            seed = iteration_seed(config.seed, j)
            est = stochastic_gradient_estimate(psi, oracle, e, seed, config.alpha_scale)
        else:
            seed = None
            est = deterministic_gradient(psi, oracle, e, config.alpha_scale)
        step = optimal_step_size(psi, oracle, e, est.gradient, config.beta_scale, est.probe_gain)
        theta_next = theta + step.epsilon * est.gradient
        rec = IterationRecord(
            iteration=j,
            theta=theta,
            cost=c,
            step_size=step.epsilon,
            experiments_cumulative=oracle.experiments - start,
            gradient_norm=float(np.linalg.norm(est.gradient)),
            seed=seed,
            theta_next=theta_next,
            converged=step.converged,
        )
        logger.debug("iteration %d: cost %.6g, step %.6g", j, c, step.epsilon)
        yield rec
        if step.converged:
            return
        theta = theta_next


def run_tuning(
    config: LearnerConfig,
    oracle: ExperimentOracle,
    psi: BasisMatrix,
    theta0: Optional[np.ndarray] = None,
) -> list[IterationRecord]:
    """Run the tuning loop to completion.

    Raises :class:`TuningAborted` carrying the completed records if an
    experiment fails.
    """
    records: list[IterationRecord] = []
    try:
        for rec in iterate_tuning(config, oracle, psi, theta0):
            records.append(rec)
    except (ExperimentError, DegenerateDirectionError) as exc:
        raise TuningAborted(f"tuning aborted after {len(records)} iterations: {exc}", records) from exc
    return records
