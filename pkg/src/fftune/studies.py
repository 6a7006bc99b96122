"""Multi-run studies behind the ``compare`` and ``gradient-check`` commands."""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import basis as basis_mod
from .config import RunConfig
from .learner import IterationRecord, cost, exact_gradient, iteration_seed, run_tuning, stochastic_gradient_estimate
from .lifted import Signal

__all__ = [
    "Trace",
    "CompareResult",
    "GradientCheckReport",
    "trace_from_records",
    "first_crossing",
    "median_trace",
    "compare",
    "gradient_check",
]


@dataclass(frozen=True)
class Trace:
    """Cost versus cumulative experiment count for one run."""

    label: str
    experiments: np.ndarray
    costs: np.ndarray

    @property
    def relative(self) -> np.ndarray:
        return self.costs / self.costs[0]


def trace_from_records(label: str, records: Sequence[IterationRecord]) -> Trace:
    return Trace(
        label,
        np.array([r.experiments_cumulative for r in records]),
        np.array([r.cost for r in records], dtype=float),
    )


def first_crossing(trace: Trace, ratio: float = 0.01) -> Optional[int]:
    """Experiment count of the first record whose cost is <= ``ratio`` x the first cost."""
    hit = np.nonzero(trace.relative <= ratio)[0]
    return int(trace.experiments[hit[0]]) if hit.size else None


def median_trace(traces: Sequence[Trace], label: str = "median") -> Trace:
    """Pointwise median of relative costs; shorter runs are padded with their last value."""
    n = max(len(t.costs) for t in traces)
    rel = np.array([np.pad(t.relative, (0, n - len(t.costs)), mode="edge") for t in traces])
    longest = max(traces, key=lambda t: len(t.costs))
    per_iter = longest.experiments[0]
    experiments = np.arange(1, n + 1) * per_iter
    return Trace(label, experiments, np.median(rel, axis=0))


@dataclass(frozen=True)
class CompareResult:
    deterministic: Trace
    stochastic: list[Trace]
    median: Trace

    def crossings(self, ratio: float = 0.01) -> tuple[Optional[int], Optional[int]]:
        return first_crossing(self.deterministic, ratio), first_crossing(self.median, ratio)


def _run_one(args) -> Trace:
    cfg, method, seed, offset = args
    loop = cfg.build_loop()
    y_d = cfg.build_reference()
    psi = cfg.build_basis(y_d)
    oracle = cfg.build_oracle(loop, y_d, seed_offset=offset)
    records = run_tuning(cfg.learner_config(seed=seed, method=method), oracle, psi)
    label = "deterministic" if method == "deterministic" else f"seed={seed}"
    return trace_from_records(label, records)


def compare(cfg: RunConfig, n_seeds: int, workers: int = 1) -> CompareResult:
    """One deterministic run and ``n_seeds`` stochastic runs with seeds ``seed, seed+1, ...``."""
    if n_seeds < 1:
        raise ValueError("n_seeds must be >= 1")
    jobs = [(cfg, "deterministic", cfg.learner.seed, 0)]
    jobs += [(cfg, "stochastic", cfg.learner.seed + i, i) for i in range(n_seeds)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            traces = list(ex.map(_run_one, jobs))
    else:
        traces = [_run_one(job) for job in jobs]
    stochastic = traces[1:]
    return CompareResult(traces[0], stochastic, median_trace(stochastic))


@dataclass(frozen=True)
class GradientCheckReport:
    samples: int
    mean: np.ndarray
    std: np.ndarray
    exact: np.ndarray
    finite_difference: np.ndarray
    bound: np.ndarray

    @property
    def passed(self) -> np.ndarray:
        return np.abs(self.mean - self.exact) <= self.bound

    @property
    def all_passed(self) -> bool:
        return bool(np.all(self.passed))


def gradient_check(
    cfg: RunConfig,
    samples: int,
    theta: Optional[np.ndarray] = None,
    force_zero_error: bool = False,
    fd_step: Optional[float] = None,
) -> GradientCheckReport:
    """Compare ``samples`` stochastic estimates against the exact gradient.

    A component passes when ``|mean - exact| <= 4 std / sqrt(M)``, plus a
    rounding floor of ``1e-10 max|exact|`` so that zero-variance cases
    (single-channel plants, zero error) compare exactly up to rounding.
    """
    if samples < 100:
        raise ValueError(f"need at least 100 samples, got {samples}")
    loop = cfg.build_loop()
    y_d = cfg.build_reference()
    psi = cfg.build_basis(y_d)
    oracle = cfg.build_oracle(loop, y_d)
    theta = np.zeros(psi.n_params) if theta is None else np.asarray(theta, dtype=float)

    e = oracle.run_tracking_experiment(basis_mod.apply_transpose(psi, theta))
    if force_zero_error:
        e = Signal.zeros(e.n_channels, e.n_samples)
    exact = exact_gradient(psi, loop.J, e)

    est = np.empty((samples, psi.n_params))
    for i in range(samples):
        seed = iteration_seed(cfg.learner.seed, i)
        est[i] = stochastic_gradient_estimate(psi, oracle, e, seed, cfg.learner.alpha).gradient
    # deviations from the first draw: identical estimates give exactly zero spread
    dev = est - est[0]
    mean = est[0] + dev.mean(axis=0)
    std = dev.std(axis=0, ddof=1)

    h = fd_step if fd_step is not None else 1e-5 * (1.0 + np.linalg.norm(theta))
    fd = np.empty(psi.n_params)
    for i in range(psi.n_params):
        d = np.zeros(psi.n_params)
        d[i] = h
        if force_zero_error:
            fd[i] = 0.0
            continue
        cp = cost(oracle.run_tracking_experiment(basis_mod.apply_transpose(psi, theta + d)))
        cm = cost(oracle.run_tracking_experiment(basis_mod.apply_transpose(psi, theta - d)))
        fd[i] = (cp - cm) / (2 * h)
    bound = 4.0 * std / np.sqrt(samples) + 1e-10 * float(np.max(np.abs(exact), initial=0.0))
    return GradientCheckReport(samples, mean, std, exact, fd, bound)
