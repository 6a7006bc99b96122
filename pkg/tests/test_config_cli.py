import csv
import io

import numpy as np
import pytest

from fftune import cli
from fftune.config import OUTPUT_ENV, ConfigError, RunConfig, load_config
from fftune.plant import ExperimentError, ExperimentOracle

SISO = ["--plant.masses=1.5", "--plant.spring=0", "--plant.input_mixing=1", "--plant.kp=3000", "--plant.kd=80",
        "--reference.start=0", "--reference.displacement=0.1", "--reference.duration=0.3", "--reference.start_time=0.05"]


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def run(tmp_path, *args):
    return cli.main([*args, "--output", str(tmp_path)])


def test_defaults_are_valid():
    cfg = load_config()
    assert cfg.plant.masses == (1.0, 2.0)
    assert cfg.learner.iterations == 10
    assert cfg.basis.normalize is True


def test_file_and_overrides(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[learner]\nmethod = deterministic  # baseline\niterations = 4\n\n[plant]\ninput_mixing = 1 0; 0.5 1\n")
    cfg = load_config(path, ["learner.iterations=7"])
    assert cfg.learner.method == "deterministic"
    assert cfg.learner.iterations == 7
    assert cfg.plant.input_mixing == ((1.0, 0.0), (0.5, 1.0))


def test_dump_round_trips(tmp_path):
    cfg = load_config(overrides=["plant.noise_std=0.001, 0.002", "learner.stop_tolerance=0.1", "basis.kind=0,2"])
    path = tmp_path / "dump.ini"
    path.write_text(cfg.dump())
    assert load_config(path) == cfg


@pytest.mark.parametrize(
    "text, line, fragment",
    [
        ("[plant]\nmasses = 1, 2\nkp = 1, x\n", 3, "plant.kp"),
        ("[learner]\n\niterations = 0\n", 3, "learner.iterations"),
        ("[plant]\nwheels = 4\n", 2, "unknown key"),
        ("[basis]\nkind = motion\n[rockets]\nthrust = 1\n", 3, "unknown section"),
        ("[reference]\norder = 8\n", 2, "reference.order"),
        ("[plant]\nkp = 1\n", 2, "need 2 values"),
        ("[reference]\nduration = 2, 0.3\n", 2, "horizon"),
        ("masses = 1\n", 1, "section"),
    ],
)
def test_errors_are_line_anchored(tmp_path, text, line, fragment):
    path = tmp_path / "bad.ini"
    path.write_text(text)
    with pytest.raises(ConfigError) as info:
        load_config(path)
    assert f"bad.ini:{line}:" in str(info.value)
    assert fragment in str(info.value)


def test_override_errors():
    with pytest.raises(ConfigError, match="command line"):
        load_config(overrides=["learner.iterations=0"])
    with pytest.raises(ConfigError, match="section.key=value"):
        load_config(overrides=["iterations=3"])


def test_output_dir_env(monkeypatch, tmp_path):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env"))
    assert load_config().output_dir() == tmp_path / "env"
    assert load_config(overrides=[f"output.directory={tmp_path}"]).output_dir() == tmp_path


@pytest.mark.parametrize("method, per_iteration", [("stochastic", 3), ("deterministic", 6)])
def test_tune_writes_convergence(tmp_path, method, per_iteration):
    assert run(tmp_path, "tune", "--method", method, "--iterations", "5") == 0
    rows = read_csv(tmp_path / "convergence.csv")
    assert [int(r["experiments_cumulative"]) for r in rows] == [per_iteration * j for j in range(1, 6)]
    assert list(rows[0])[:5] == ["iteration", "experiments_cumulative", "cost", "step_size", "gradient_norm"]
    assert list(rows[0])[-1] == "theta_20"
    final = read_csv(tmp_path / "theta_final.csv")
    assert len(final) == 20 and final[14]["input"] == "2" and final[14]["basis"] == "3" and final[14]["output"] == "1"
    meta = (tmp_path / "run_meta.txt").read_text()
    assert f"method = {method}" in meta and "[learner]" in meta


def test_csv_values_round_trip(tmp_path):
    run(tmp_path, "tune", "--iterations", "2")
    first = read_csv(tmp_path / "convergence.csv")[0]
    assert float(first["cost"]) == float(repr(float(first["cost"])))
    assert len(first["cost"].replace(".", "").replace("0", "", 1)) >= 15


def test_iterations_zero_rejected(tmp_path, capsys):
    assert run(tmp_path, "tune", "--iterations", "0") == 2
    assert "learner.iterations" in capsys.readouterr().err
    assert not (tmp_path / "convergence.csv").exists()


def test_bad_file_exit_code(tmp_path, capsys):
    path = tmp_path / "bad.ini"
    path.write_text("[plant]\n\nsample_time = -1\n")
    assert cli.main(["tune", str(path), "--output", str(tmp_path)]) == 2
    assert "bad.ini:3:" in capsys.readouterr().err


def test_unknown_flag(tmp_path):
    assert run(tmp_path, "tune", "--bogus") == 2


def test_oracle_abort_keeps_partial_csv(tmp_path, monkeypatch, capsys):
    real = ExperimentOracle.run_tracking_experiment
    calls = []

    def flaky(self, f):
        calls.append(1)
        if len(calls) == 4:
            raise ExperimentError("encoder lost")
        return real(self, f)

    monkeypatch.setattr(ExperimentOracle, "run_tracking_experiment", flaky)
    assert run(tmp_path, "tune", "--iterations", "6") == 3
    rows = read_csv(tmp_path / "convergence.csv")
    assert [r["iteration"] for r in rows] == ["1", "2", "3"]
    assert "encoder lost" in capsys.readouterr().err


def test_run_meta_written_before_first_experiment(tmp_path, monkeypatch):
    seen = []
    real = ExperimentOracle.run_tracking_experiment

    def spy(self, f):
        seen.append((tmp_path / "run_meta.txt").exists())
        return real(self, f)

    monkeypatch.setattr(ExperimentOracle, "run_tracking_experiment", spy)
    run(tmp_path, "tune", "--iterations", "1")
    assert seen == [True]


def test_outputs_are_byte_identical(tmp_path):
    args = ["tune", "--iterations", "4", "--plant.noise_std=1e-4", "--plant.noise_seed=3", "--seed", "5"]
    names = ("convergence.csv", "theta_final.csv", "run_meta.txt")
    assert run(tmp_path, *args) == 0
    first = {name: (tmp_path / name).read_bytes() for name in names}
    assert run(tmp_path, *args) == 0
    assert first == {name: (tmp_path / name).read_bytes() for name in names}


def test_compare_single_seed(tmp_path):
    assert run(tmp_path, "compare", "--seeds", "1", "--iterations", "3") == 0
    rows = read_csv(tmp_path / "compare.csv")
    traces = {r["trace"] for r in rows}
    assert traces == {"deterministic", "seed=0", "median"}
    det = [int(r["experiments_cumulative"]) for r in rows if r["trace"] == "deterministic"]
    assert det == [6, 12, 18]
    one = [r["relative_cost"] for r in rows if r["trace"] == "seed=0"]
    assert one == [r["relative_cost"] for r in rows if r["trace"] == "median"]


def test_compare_seeds_are_reproducible(tmp_path):
    run(tmp_path, "compare", "--seeds", "3", "--iterations", "3")
    serial = (tmp_path / "compare.csv").read_bytes()
    run(tmp_path, "compare", "--seeds", "3", "--iterations", "3", "--workers", "2")
    assert (tmp_path / "compare.csv").read_bytes() == serial
    rows = read_csv(tmp_path / "compare.csv")
    by = {}
    for r in rows:
        by.setdefault(r["trace"], []).append(r["cost"])
    assert by["seed=0"] != by["seed=1"]


def test_compare_rejects_zero_seeds(tmp_path):
    assert run(tmp_path, "compare", "--seeds", "0") == 2


def test_gradient_check_report(tmp_path):
    assert run(tmp_path, "gradient-check", "--samples", "300", "--plant.backend=operator") == 0
    rows = read_csv(tmp_path / "gradient_check.csv")
    assert len(rows) == 20
    assert list(rows[0]) == ["index", "input", "basis", "output", "mean", "std", "exact", "finite_difference", "bound", "pass"]
    fd = np.array([float(r["finite_difference"]) for r in rows])
    exact = np.array([float(r["exact"]) for r in rows])
    assert np.linalg.norm(fd - exact) <= 1e-6 * np.linalg.norm(exact)


def test_gradient_check_zero_error(tmp_path):
    assert run(tmp_path, "gradient-check", "--samples", "100", "--force-zero-error") == 0
    rows = read_csv(tmp_path / "gradient_check.csv")
    assert all(float(r["mean"]) == 0 and float(r["std"]) == 0 and r["pass"] == "1" for r in rows)


def test_gradient_check_siso_has_zero_spread(tmp_path):
    assert run(tmp_path, "gradient-check", "--samples", "100", *SISO) == 0
    rows = read_csv(tmp_path / "gradient_check.csv")
    assert len(rows) == 5
    assert all(float(r["std"]) == 0.0 and r["pass"] == "1" for r in rows)


def test_gradient_check_needs_samples(tmp_path):
    assert run(tmp_path, "gradient-check", "--samples", "99") == 2


def test_export_plant(tmp_path):
    assert run(tmp_path, "export-plant") == 0
    header = (tmp_path / "J.csv").read_text().splitlines()[0]
    assert header == "J_1_1,J_1_2,J_2_1,J_2_2"
    data = np.loadtxt(tmp_path / "J.csv", delimiter=",", skiprows=1)
    loop = load_config().build_loop()
    np.testing.assert_array_equal(data[:, 1], loop.J.impulses[0, 1])
    assert (tmp_path / "S.csv").read_text().startswith("S_1_1,")


def test_export_basis_and_csv_reference(tmp_path):
    assert run(tmp_path, "export-basis") == 0
    assert (tmp_path / "basis.csv").read_text().startswith("t,psi_1_1,psi_1_2")
    ref = tmp_path / "reference.csv"
    out = tmp_path / "second"
    args = ["tune", "--iterations", "2", "--reference.kind=csv", f"--reference.path={ref}", "--output", str(out)]
    assert cli.main(args) == 0
    assert cli.main(["tune", "--iterations", "2", "--output", str(tmp_path / "third")]) == 0
    assert (out / "convergence.csv").read_bytes() == (tmp_path / "third" / "convergence.csv").read_bytes()


def test_csv_reference_length_mismatch(tmp_path, capsys):
    ref = tmp_path / "ref.csv"
    ref.write_text("t,ch1,ch2\n" + "".join(f"{i * 0.005},0,0\n" for i in range(10)))
    assert run(tmp_path, "tune", "--reference.kind=csv", f"--reference.path={ref}") == 2
    assert "samples" in capsys.readouterr().err


def test_runconfig_is_frozen():
    with pytest.raises(Exception):
        RunConfig().plant = None


def test_shipped_configs_load():
    from pathlib import Path

    root = Path(__file__).resolve().parent.parent / "configs"
    assert load_config(root / "desk.ini") == RunConfig()
    assert load_config(root / "siso.ini").build_loop().n_inputs == 1
