"""Run configuration: a sectioned ``key = value`` file plus command-line overrides.

Grammar (INI style, ``#`` or ``;`` start a comment line)::

    [plant]
    masses = 1.0, 2.0          # one entry per axis; n axes -> n x n loop
    spring = 500               # coupling between neighbouring masses [N/m]
    damping = 5                # coupling damper [N s/m]
    ground_damping = 1         # viscous friction of every mass [N s/m]
    input_mixing = 1 0; 0.3 1  # rows separated by ';'
    kp = 4000, 4000
    kd = 90, 90
    n_samples = 256
    sample_time = 0.005
    noise_std = 0              # scalar or one value per output channel
    noise_seed = 0
    backend = simulate         # simulate | operator

    [reference]
    kind = smoothstep          # smoothstep | csv
    start = 0, 0
    displacement = 0.1, 0.01
    duration = 0.4, 0.3
    start_time = 0.05, 0.2
    order = 9
    path =                     # csv file with header 't, ch1, ch2, ...'

    [basis]
    kind = motion              # motion | comma-separated derivative orders
    n_b = 5                    # motion only: use the first n_b of position..snap
    normalize = true

    [learner]
    method = stochastic        # stochastic | deterministic
    iterations = 10
    seed = 0
    seeds = 50                 # number of stochastic runs for 'compare'
    alpha = 1
    beta = 1
    stop_tolerance =           # empty: run all iterations

    [output]
    directory =                # empty: $FFTUNE_OUTPUT_DIR or ./fftune-out

Overrides use ``section.key=value`` and win over the file.
"""
from __future__ import annotations

import configparser
import os
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .basis import MOTION_ORDERS, ChannelMove, ReferenceProfile, build_basis, generate_reference, read_reference_csv
from .learner import LearnerConfig
from .lifted import Signal
from .plant import ClosedLoopPlant, DeskPlantConfig, ExperimentOracle, pd_controller, two_mass_plant

__all__ = ["ConfigError", "RunConfig", "load_config", "OUTPUT_ENV"]

OUTPUT_ENV = "FFTUNE_OUTPUT_DIR"


class ConfigError(ValueError):
    """Invalid configuration; the message is anchored to a file line when possible."""


@dataclass(frozen=True)
class PlantSection:
    masses: tuple[float, ...] = DeskPlantConfig.masses
    spring: float = DeskPlantConfig.spring
    damping: float = DeskPlantConfig.damping
    ground_damping: float = DeskPlantConfig.ground_damping
    input_mixing: tuple[tuple[float, ...], ...] = DeskPlantConfig.input_mixing
    kp: tuple[float, ...] = DeskPlantConfig.kp
    kd: tuple[float, ...] = DeskPlantConfig.kd
    n_samples: int = 256
    sample_time: float = 0.005
    noise_std: tuple[float, ...] = (0.0,)
    noise_seed: int = 0
    backend: str = "simulate"


@dataclass(frozen=True)
class ReferenceSection:
    kind: str = "smoothstep"
    start: tuple[float, ...] = (0.0, 0.0)
    displacement: tuple[float, ...] = (0.1, 0.01)
    duration: tuple[float, ...] = (0.4, 0.3)
    start_time: tuple[float, ...] = (0.05, 0.2)
    order: int = 9
    path: str = ""


@dataclass(frozen=True)
class BasisSection:
    kind: str = "motion"
    n_b: int = 5
    normalize: bool = True


@dataclass(frozen=True)
class LearnerSection:
    method: str = "stochastic"
    iterations: int = 10
    seed: int = 0
    seeds: int = 50
    alpha: float = 1.0
    beta: float = 1.0
    stop_tolerance: Optional[float] = None


@dataclass(frozen=True)
class OutputSection:
    directory: str = ""


@dataclass(frozen=True)
class RunConfig:
    plant: PlantSection = field(default_factory=PlantSection)
    reference: ReferenceSection = field(default_factory=ReferenceSection)
    basis: BasisSection = field(default_factory=BasisSection)
    learner: LearnerSection = field(default_factory=LearnerSection)
    output: OutputSection = field(default_factory=OutputSection)

    # -- builders ---------------------------------------------------------

    def build_loop(self) -> ClosedLoopPlant:
        p = self.plant
        plant = two_mass_plant(p.masses, p.spring, p.damping, p.ground_damping, np.array(p.input_mixing), p.sample_time)
        return ClosedLoopPlant(plant, pd_controller(p.kp, p.kd, p.sample_time), p.n_samples)

    def build_reference(self) -> Signal:
        r, p = self.reference, self.plant
        if r.kind == "csv":
            y_d, dt = read_reference_csv(r.path)
            if y_d.n_samples != p.n_samples or not np.isclose(dt, p.sample_time):
                raise ConfigError(
                    f"{r.path}: reference has {y_d.n_samples} samples at {dt:g} s, "
                    f"plant expects {p.n_samples} at {p.sample_time:g} s"
                )
            return y_d
        moves = tuple(
            ChannelMove(s, s + d, T, t0) for s, d, T, t0 in zip(r.start, r.displacement, r.duration, r.start_time)
        )
        return generate_reference(ReferenceProfile(moves, p.n_samples, p.sample_time, r.order))

    def basis_orders(self) -> tuple[int, ...]:
        if self.basis.kind == "motion":
            return MOTION_ORDERS[: self.basis.n_b]
        return tuple(int(v) for v in self.basis.kind.split(","))

    def build_basis(self, y_d: Signal):
        return build_basis(y_d, list(self.basis_orders()), self.plant.sample_time, normalize=self.basis.normalize)

    def build_oracle(self, loop: ClosedLoopPlant, y_d: Signal, seed_offset: int = 0) -> ExperimentOracle:
        p = self.plant
        std = p.noise_std[0] if len(p.noise_std) == 1 else p.noise_std
        return ExperimentOracle(loop, y_d, noise_std=std, rng_seed=p.noise_seed + seed_offset, backend=p.backend)

    def learner_config(self, seed: Optional[int] = None, method: Optional[str] = None) -> LearnerConfig:
        lc = self.learner
        return LearnerConfig(
            method=method or lc.method,
            n_iterations=lc.iterations,
            alpha_scale=lc.alpha,
            beta_scale=lc.beta,
            seed=lc.seed if seed is None else seed,
            stop_tolerance=lc.stop_tolerance,
        )

    def output_dir(self) -> Path:
        return Path(self.output.directory or os.environ.get(OUTPUT_ENV) or "fftune-out")

    def dump(self) -> str:
        """Canonical INI text of the resolved configuration."""
        lines = []
        for section, values in asdict(self).items():
            lines.append(f"[{section}]")
            for key, val in values.items():
                lines.append(f"{key} = {_format(val)}")
            lines.append("")
        return "\n".join(lines)


def _format(val) -> str:
    if val is None:
        return ""
    if isinstance(val, bool):
        return "true" if val else "false"
    if isinstance(val, float):
        return f"{val:.17g}"
    if isinstance(val, tuple):
        if val and isinstance(val[0], tuple):
            return "; ".join(" ".join(_format(v) for v in row) for row in val)
        return ", ".join(_format(v) for v in val)
    return str(val)


_SECTIONS = {
    "plant": PlantSection,
    "reference": ReferenceSection,
    "basis": BasisSection,
    "learner": LearnerSection,
    "output": OutputSection,
}


def _parse_value(cls, key: str, raw: str):
    default = getattr(cls(), key)
    raw = raw.strip()
    if key == "input_mixing":
        rows = [r.split() for r in raw.replace(",", " ").split(";") if r.strip()]
        return tuple(tuple(float(v) for v in row) for row in rows)
    if key == "stop_tolerance":
        return float(raw) if raw else None
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if isinstance(default, tuple):
        return tuple(float(v) for v in raw.split(",") if v.strip())
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def _key_lines(path: Path) -> dict[tuple[str, str], int]:
    lines: dict[tuple[str, str], int] = {}
    section = None
    for no, line in enumerate(path.read_text().splitlines(), 1):
        m = re.match(r"\s*\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip().lower()
            lines[(section, "")] = no
            continue
        m = re.match(r"\s*([A-Za-z_][\w.]*)\s*[=:]", line)
        if m and section is not None:
            lines[(section, m.group(1).lower())] = no
    return lines


def load_config(path: Optional[str | os.PathLike] = None, overrides: Sequence[str] = ()) -> RunConfig:
    """Parse, merge overrides and validate. Raises :class:`ConfigError`."""
    values: dict[str, dict[str, tuple[str, str]]] = {s: {} for s in _SECTIONS}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"{path}: config file not found")
        parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
        try:
            parser.read(path)
        except configparser.Error as exc:
            lineno = getattr(exc, "lineno", None)
            where = f"{path}:{lineno}" if lineno else str(path)
            raise ConfigError(f"{where}: {exc.message.splitlines()[0]}") from None
        lines = _key_lines(path)
        for section in parser.sections():
            sec = section.lower()
            if sec not in _SECTIONS:
                raise ConfigError(f"{path}:{lines.get((sec, ''), '?')}: unknown section [{section}]")
            for key, raw in parser.items(section):
                values[sec][key] = (raw, f"{path}:{lines.get((sec, key), '?')}")
    for item in overrides:
        m = re.fullmatch(r"\s*([A-Za-z_]+)\.([A-Za-z_]+)\s*=(.*)", item)
        if not m:
            raise ConfigError(f"command line: override {item!r} is not of the form section.key=value")
        sec, key, raw = m.group(1).lower(), m.group(2).lower(), m.group(3)
        if sec not in _SECTIONS:
            raise ConfigError(f"command line: unknown section in override {item!r}")
        values[sec][key] = (raw, "command line")

    sections = {}
    for sec, cls in _SECTIONS.items():
        known = cls.__dataclass_fields__
        kwargs = {}
        for key, (raw, where) in values[sec].items():
            if key not in known:
                raise ConfigError(f"{where}: unknown key '{key}' in [{sec}]")
            try:
                kwargs[key] = _parse_value(cls, key, raw)
            except ValueError as exc:
                raise ConfigError(f"{where}: {sec}.{key}: {exc}") from None
        sections[sec] = cls(**kwargs)
    cfg = RunConfig(**sections)
    where_of = {(s, k): w for s, kv in values.items() for k, (_, w) in kv.items()}
    _validate(cfg, lambda s, k: where_of.get((s, k), "defaults"))
    return cfg


def _validate(cfg: RunConfig, where) -> None:
    def fail(sec, key, msg):
        raise ConfigError(f"{where(sec, key)}: {sec}.{key}: {msg}")

    p, r, b, lc = cfg.plant, cfg.reference, cfg.basis, cfg.learner
    n = len(p.masses)
    if n < 1 or any(m <= 0 for m in p.masses):
        fail("plant", "masses", "need at least one positive mass")
    if len(p.input_mixing) != n or any(len(row) != n for row in p.input_mixing):
        fail("plant", "input_mixing", f"must be a {n}x{n} matrix")
    if abs(np.linalg.det(np.array(p.input_mixing))) < 1e-12:
        fail("plant", "input_mixing", "must be invertible")
    for key in ("kp", "kd"):
        if len(getattr(p, key)) != n:
            fail("plant", key, f"need {n} values (one per axis)")
    if p.n_samples < 16:
        fail("plant", "n_samples", f"must be >= 16, got {p.n_samples}")
    if not p.sample_time > 0:
        fail("plant", "sample_time", "must be positive")
    if len(p.noise_std) not in (1, n) or any(s < 0 for s in p.noise_std):
        fail("plant", "noise_std", f"need one or {n} non-negative values")
    if p.backend not in ("simulate", "operator"):
        fail("plant", "backend", f"must be 'simulate' or 'operator', got {p.backend!r}")
    if r.kind == "smoothstep":
        for key in ("start", "displacement", "duration", "start_time"):
            if len(getattr(r, key)) != n:
                fail("reference", key, f"need {n} values (one per output channel)")
        if r.order < 9 or r.order % 2 == 0:
            fail("reference", "order", f"must be odd and >= 9, got {r.order}")
        if any(d <= 0 for d in r.duration):
            fail("reference", "duration", "must be positive")
        horizon = (p.n_samples - 1) * p.sample_time
        if any(t0 + T > horizon * (1 + 1e-12) for t0, T in zip(r.start_time, r.duration)):
            fail("reference", "duration", f"move does not fit the {horizon:g} s horizon")
    elif r.kind == "csv":
        if not r.path:
            fail("reference", "path", "required when kind = csv")
    else:
        fail("reference", "kind", f"must be 'smoothstep' or 'csv', got {r.kind!r}")
    if b.kind == "motion":
        if not 1 <= b.n_b <= len(MOTION_ORDERS):
            fail("basis", "n_b", f"must be between 1 and {len(MOTION_ORDERS)}, got {b.n_b}")
    else:
        try:
            orders = [int(v) for v in b.kind.split(",")]
        except ValueError:
            fail("basis", "kind", f"must be 'motion' or a list of derivative orders, got {b.kind!r}")
        if not orders or any(o not in range(5) for o in orders):
            fail("basis", "kind", "derivative orders must be in 0..4")
    if lc.method not in ("stochastic", "deterministic"):
        fail("learner", "method", f"must be 'stochastic' or 'deterministic', got {lc.method!r}")
    if lc.iterations < 1:
        fail("learner", "iterations", f"must be >= 1, got {lc.iterations}")
    if lc.seeds < 1:
        fail("learner", "seeds", f"must be >= 1, got {lc.seeds}")
    for key in ("alpha", "beta"):
        v = getattr(lc, key)
        if v == 0 or not np.isfinite(v):
            fail("learner", key, "must be finite and nonzero")
    if lc.stop_tolerance is not None and lc.stop_tolerance < 0:
        fail("learner", "stop_tolerance", "must be non-negative")
