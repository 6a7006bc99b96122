"""Command-line front end.

    fftune tune [CONFIG] [--section.key=value ...]
    fftune compare [CONFIG] [--seeds K] [--workers W]
    fftune gradient-check [CONFIG] [--samples M] [--force-zero-error]
    fftune export-plant [CONFIG]
    fftune export-basis [CONFIG]

Exit codes: 0 success, 2 invalid configuration, 3 an experiment failed
(the partial ``convergence.csv`` is kept).
"""
from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path
from typing import Optional, Sequence


from . import __version__
from . import basis as basis_mod
from .config import ConfigError, RunConfig, load_config
from .learner import DegenerateDirectionError, TuningAborted, iterate_tuning
from .plant import ExperimentError, write_impulse_csv
from .studies import compare, gradient_check

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ABORT = 3


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def _writer(fh):
    return csv.writer(fh, lineterminator="\n")


def _write_meta(out: Path, command: str, cfg: RunConfig, extra: Sequence[str] = ()) -> None:
    lines = [f"fftune {__version__}", f"command = {command}", *extra, "", cfg.dump()]
    (out / "run_meta.txt").write_text("\n".join(lines))


class _Setup:
    """Everything built from the config before the first experiment."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        try:
            self.loop = cfg.build_loop()
            self.y_d = cfg.build_reference()
            self.psi = cfg.build_basis(self.y_d)
        except ConfigError:
            raise
        except (ValueError, OSError) as exc:
            raise ConfigError(str(exc)) from None
        if self.y_d.n_channels != self.loop.n_outputs:
            raise ConfigError(
                f"reference has {self.y_d.n_channels} channels, plant has {self.loop.n_outputs} outputs"
            )
        self.out = cfg.output_dir()
        self.out.mkdir(parents=True, exist_ok=True)


def cmd_tune(cfg: RunConfig) -> int:
    s = _Setup(cfg)
    lc = cfg.learner_config()
    p = s.psi.n_params
    _write_meta(s.out, "tune", cfg, [f"method = {lc.method}", f"seed = {lc.seed}", f"noise_seed = {cfg.plant.noise_seed}"])
    oracle = cfg.build_oracle(s.loop, s.y_d)
    first = last = None
    with open(s.out / "convergence.csv", "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(
            ["iteration", "experiments_cumulative", "cost", "step_size", "gradient_norm"]
            + [f"theta_{i}" for i in range(1, p + 1)]
        )
        fh.flush()
        try:
            for rec in iterate_tuning(lc, oracle, s.psi):
                w.writerow(
                    [rec.iteration, rec.experiments_cumulative, _fmt(rec.cost), _fmt(rec.step_size), _fmt(rec.gradient_norm)]
                    + [_fmt(v) for v in rec.theta]
                )
                fh.flush()
                first = first or rec
                last = rec
        except (ExperimentError, DegenerateDirectionError) as exc:
            done = last.iteration if last else 0
            print(f"error: tuning aborted after {done} iterations: {exc}", file=sys.stderr)
            return EXIT_ABORT
    theta = last.theta_next
    with open(s.out / "theta_final.csv", "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(["index", "input", "basis", "output", "theta"])
        for i, v in enumerate(theta, 1):
            n, l, k = basis_mod.theta_triplet(i, s.psi.n_outputs, s.psi.n_basis)
            w.writerow([i, n, l, k, _fmt(v)])
    print(
        f"{lc.method}: {last.iteration} iterations, {last.experiments_cumulative} experiments, "
        f"cost {last.cost:.6g} ({last.cost / first.cost:.3g} of initial)"
    )
    return EXIT_OK


def cmd_compare(cfg: RunConfig, n_seeds: int, workers: int) -> int:
    if n_seeds < 1:
        raise ConfigError(f"command line: --seeds must be >= 1, got {n_seeds}")
    if workers < 1:
        raise ConfigError(f"command line: --workers must be >= 1, got {workers}")
    s = _Setup(cfg)
    seeds = [cfg.learner.seed + i for i in range(n_seeds)]
    _write_meta(s.out, "compare", cfg, [f"seeds = {seeds[0]}..{seeds[-1]} ({n_seeds} runs)"])
    try:
        res = compare(cfg, n_seeds, workers)
    except TuningAborted as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ABORT
    with open(s.out / "compare.csv", "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(["trace", "iteration", "experiments_cumulative", "cost", "relative_cost"])
        for tr in [res.deterministic, *res.stochastic, res.median]:
            for i, (x, c, rc) in enumerate(zip(tr.experiments, tr.costs, tr.relative), 1):
                cost_field = "" if tr is res.median else _fmt(c)
                w.writerow([tr.label, i, int(x), cost_field, _fmt(rc)])
    det, sto = res.crossings()
    print(f"1% crossing: deterministic {det if det is not None else 'never'}, "
          f"stochastic median {sto if sto is not None else 'never'} experiments")
    return EXIT_OK


def cmd_gradient_check(cfg: RunConfig, samples: int, force_zero_error: bool) -> int:
    if samples < 100:
        raise ConfigError(f"command line: --samples must be >= 100, got {samples}")
    s = _Setup(cfg)
    _write_meta(s.out, "gradient-check", cfg, [f"samples = {samples}", f"force_zero_error = {force_zero_error}"])
    try:
        rep = gradient_check(cfg, samples, force_zero_error=force_zero_error)
    except ExperimentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ABORT
    with open(s.out / "gradient_check.csv", "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(["index", "input", "basis", "output", "mean", "std", "exact", "finite_difference", "bound", "pass"])
        for i in range(rep.mean.size):
            n, l, k = basis_mod.theta_triplet(i + 1, s.psi.n_outputs, s.psi.n_basis)
            w.writerow(
                [i + 1, n, l, k]
                + [_fmt(a[i]) for a in (rep.mean, rep.std, rep.exact, rep.finite_difference, rep.bound)]
                + [int(rep.passed[i])]
            )
    print(f"gradient check: {int(rep.passed.sum())}/{rep.mean.size} components pass with M = {samples}")
    return EXIT_OK


def cmd_export_plant(cfg: RunConfig) -> int:
    s = _Setup(cfg)
    _write_meta(s.out, "export-plant", cfg)
    write_impulse_csv(s.loop.J, s.out / "J.csv", prefix="J")
    write_impulse_csv(s.loop.S, s.out / "S.csv", prefix="S")
    print(f"wrote {s.out / 'J.csv'} and {s.out / 'S.csv'} (spectral radius {s.loop.spectral_radius:.6f})")
    return EXIT_OK


def cmd_export_basis(cfg: RunConfig) -> int:
    s = _Setup(cfg)
    _write_meta(s.out, "export-basis", cfg)
    basis_mod.write_reference_csv(s.out / "reference.csv", s.y_d, cfg.plant.sample_time)
    basis_mod.write_basis_csv(s.out / "basis.csv", s.psi, cfg.plant.sample_time)
    print(f"wrote {s.out / 'reference.csv'} and {s.out / 'basis.csv'}")
    return EXIT_OK


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="fftune",
        description="Model-free MIMO feedforward tuning on a simulated closed loop.",
        epilog="Any config value can be overridden with --section.key=value.",
    )
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("config", nargs="?", help="config file (defaults are used if omitted)")
        p.add_argument("--output", help="output directory (overrides output.directory)")
        p.add_argument("--seed", type=int, help="learner seed (overrides learner.seed)")
        return p

    p = add("tune", "run one tuning experiment and log convergence")
    p.add_argument("--iterations", type=int, help="overrides learner.iterations")
    p.add_argument("--method", choices=("stochastic", "deterministic"), help="overrides learner.method")
    p = add("compare", "deterministic run vs. K stochastic runs")
    p.add_argument("--iterations", type=int, help="overrides learner.iterations")
    p.add_argument("--seeds", type=int, help="number of stochastic runs (overrides learner.seeds)")
    p.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    p = add("gradient-check", "Monte-Carlo check of the stochastic gradient")
    p.add_argument("--samples", type=int, default=10_000, help="number of estimates M (>= 100)")
    p.add_argument("--force-zero-error", action="store_true", help="use e = 0 instead of the measured error")
    add("export-plant", "write the impulse responses of J and S")
    add("export-basis", "write the reference and the basis signals")
    return ap


def _overrides(args, extra: list[str]) -> list[str]:
    out = []
    for item in extra:
        if not item.startswith("--") or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"command line: unrecognized argument {item!r}")
        out.append(item[2:])
    shortcuts = {
        "output": "output.directory",
        "seed": "learner.seed",
        "iterations": "learner.iterations",
        "method": "learner.method",
        "seeds": "learner.seeds",
    }
    for attr, key in shortcuts.items():
        val = getattr(args, attr, None)
        if val is not None:
            out.append(f"{key}={val}")
    return out


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = _parser()
    args, extra = ap.parse_known_args(argv)
    try:
        cfg = load_config(args.config, _overrides(args, extra))
        if args.command == "tune":
            return cmd_tune(cfg)
        if args.command == "compare":
            return cmd_compare(cfg, cfg.learner.seeds, args.workers)
        if args.command == "gradient-check":
            return cmd_gradient_check(cfg, args.samples, args.force_zero_error)
        if args.command == "export-plant":
            return cmd_export_plant(cfg)
        return cmd_export_basis(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
