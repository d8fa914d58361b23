import json
import os

import pandas as pd
import pytest

from main import EXIT_CONFIG, EXIT_FEASIBILITY, EXIT_INVARIANT, EXIT_OK, base_path, main
from src.instruments import spectral_bench

SMALL_RUN = {
    "equation": "schrodinger",
    "domain": {"kind": "interval", "extents": [[0.0, 4.0]], "nodes_per_axis": 16},
    "boundary": {"kappa": 1.0},
    "time": {"tau": 0.05, "steps": 20},
    "initial_state": {"kind": "gaussian", "packets": [{"center": 2.0, "width": 0.5, "k0": 1.0}]},
    "seed": 1,
}


def _config(tmp_path, name="run.json", **changes):
    data = json.loads(json.dumps(SMALL_RUN))
    for key, value in changes.items():
        if value is None:
            data.pop(key, None)
        else:
            data[key] = value
    path = tmp_path / name
    path.write_text(json.dumps(data, indent=2))
    return str(path)


@pytest.fixture(autouse=True)
def no_env_out(monkeypatch):
    monkeypatch.delenv("ABSORBD_OUT", raising=False)


def test_reflecting_run_writes_artifacts(tmp_path):
    out = tmp_path / "out"
    config = _config(tmp_path, boundary={"kappa": 0.0})
    assert main(["run", "--config", config, "--out", str(out)]) == EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert summary["total_detected"] == 0.0
    assert summary["survivor"] == pytest.approx(1.0, abs=1e-12)
    survival = pd.read_csv(out / "survival.csv")
    assert list(survival.columns) == ["step", "t", "norm_sq"]
    assert len(survival) == 21
    assert len(pd.read_csv(out / "distribution.csv")) == 20 * 2


def test_missing_kappa_is_a_config_error(tmp_path, caplog):
    config = _config(tmp_path, boundary={"nu": 0.0})
    assert main(["run", "--config", config, "--out", str(tmp_path / "out")]) == EXIT_CONFIG
    assert "boundary.kappa required" in caplog.text


def test_invalid_json_reports_its_line(tmp_path, caplog):
    path = tmp_path / "broken.json"
    path.write_text('{\n  "equation": "schrodinger",\n  "domain": {,\n}\n')
    assert main(["run", "--config", str(path)]) == EXIT_CONFIG
    assert "(line 3)" in caplog.text


@pytest.mark.parametrize("changes, field", [
    ({"domain": {"kind": "interval", "extents": [[0.0, 4.0]], "nodes_per_axis": None}}, "domain.nodes_per_axis"),
    ({"domain": {"kind": "interval", "extents": [[0.0, 4.0]], "nodes_per_axis": "abc"}}, "domain.nodes_per_axis"),
    ({"potential": "zero"}, "potential"),
    ({"initial_state": ["gaussian"]}, "initial_state"),
])
def test_malformed_values_are_config_errors(tmp_path, caplog, changes, field):
    config = _config(tmp_path, **changes)
    assert main(["run", "--config", config, "--out", str(tmp_path / "out")]) == EXIT_CONFIG
    assert f"{field} must be" in caplog.text


def test_emitting_boundary_needs_the_flag(tmp_path):
    config = _config(tmp_path, boundary={"kappa": -0.5})
    out = str(tmp_path / "out")
    assert main(["run", "--config", config, "--out", out]) == EXIT_CONFIG
    assert main(["run", "--config", config, "--out", out, "--allow-emitting"]) == EXIT_OK
    summary = json.loads(open(os.path.join(out, "summary.json")).read())
    assert summary["total_detected"] < 0.0


def test_povm_report_is_reproducible(tmp_path):
    config = os.path.join(base_path, "config", "povm_16.json")
    first, second = tmp_path / "a", tmp_path / "b"
    assert main(["povm", "--config", config, "--out", str(first)]) == EXIT_OK
    assert main(["povm", "--config", config, "--out", str(second)]) == EXIT_OK
    assert (first / "povm_report.json").read_bytes() == (second / "povm_report.json").read_bytes()
    report = json.loads((first / "povm_report.json").read_text())
    assert report["completeness_residual"] <= 1e-10
    assert report["n_steps"] == 64


def test_dense_guard_maps_to_exit_code(tmp_path):
    domain = {"kind": "interval", "extents": [[0.0, 4.0]], "nodes_per_axis": 2100}
    config = _config(tmp_path, domain=domain, time={"tau": 0.05, "steps": 2})
    assert main(["povm", "--config", config, "--out", str(tmp_path / "out")]) == EXIT_FEASIBILITY


def test_spectrum_outputs(tmp_path):
    out = tmp_path / "out"
    config = os.path.join(base_path, "config", "spectrum_64.json")
    assert main(["spectrum", "--config", config, "--out", str(out)]) == EXIT_OK
    spectrum = pd.read_csv(out / "spectrum.csv")
    assert len(spectrum) == 64
    assert spectrum["im"].max() <= 1e-10 * max(1.0, (spectrum["re"] ** 2 + spectrum["im"] ** 2).max() ** 0.5)
    assert len(pd.read_csv(out / "gram.csv")) == 64 * 64
    assert json.loads((out / "spectrum_summary.json").read_text())["in_lower_half_plane"]


def test_cascade_outputs_are_reproducible(tmp_path):
    changes = {
        "domain": {"kind": "product", "extents": [[0.0, 3.0]], "particle_count": 2, "nodes_per_axis": 7},
        "time": {"tau": 0.05, "t_max": 1.0},
        "initial_state": {"kind": "gaussian", "symmetry": "antisymmetric",
                          "packets": [{"center": 1.0, "width": 0.5, "k0": -1.0},
                                      {"center": 2.0, "width": 0.5, "k0": 1.0}]},
        "cascade": {"runs": 30, "exhaustive": True},
    }
    config = _config(tmp_path, **changes)
    first, second = tmp_path / "a", tmp_path / "b"
    assert main(["cascade", "--config", config, "--out", str(first)]) == EXIT_OK
    assert main(["cascade", "--config", config, "--out", str(second), "--jobs", "2"]) == EXIT_OK
    assert (first / "runs.jsonl").read_bytes() == (second / "runs.jsonl").read_bytes()
    assert len((first / "runs.jsonl").read_text().splitlines()) == 30
    joint = pd.read_csv(first / "joint_table.csv")
    assert joint["kind"].iloc[-1] == "total"
    assert joint["mass"].iloc[-1] == pytest.approx(1.0, abs=1e-8)


def test_environment_overrides_output_dir(tmp_path, monkeypatch):
    env_out, flag_out = tmp_path / "env", tmp_path / "flag"
    monkeypatch.setenv("ABSORBD_OUT", str(env_out))
    assert main(["run", "--config", _config(tmp_path), "--out", str(flag_out)]) == EXIT_OK
    assert (env_out / "summary.json").exists()
    assert not flag_out.exists()


def test_bench_residual_breach_exits_after_writing_the_report(tmp_path, monkeypatch):
    monkeypatch.setattr(spectral_bench, "dissipativity_defect", lambda H, probes: 1.0)
    bench = {"cases": [{"name": "interval_32", "nodes": 32, "steps": 10, "tau": 0.01, "extent": 4.0}]}
    out = tmp_path / "out"
    assert main(["bench", "--config", _config(tmp_path, bench=bench), "--out", str(out)]) == EXIT_INVARIANT
    report = json.loads((out / "bench_report.json").read_text())
    assert report[0]["residuals"]["dissipativity"] == 1.0


def test_seed_flag_overrides_config(tmp_path):
    state = {"kind": "random"}
    config = _config(tmp_path, initial_state=state)
    runs = []
    for seed, name in ((5, "a"), (5, "b"), (6, "c")):
        out = tmp_path / name
        assert main(["run", "--config", config, "--out", str(out), "--seed", str(seed)]) == EXIT_OK
        runs.append((out / "summary.json").read_text())
    assert runs[0] == runs[1]
    assert runs[0] != runs[2]


def test_dirac_run(tmp_path):
    changes = {
        "equation": "dirac",
        "domain": {"kind": "interval", "extents": [[0.0, 10.0]], "nodes_per_axis": 201},
        "dirac": {"mass": 0.0},
        "boundary": {"theta": 0.0},
        "time": {"tau": 0.025, "t_max": 4.0},
        "initial_state": {"kind": "gaussian", "packets": [{"center": 8.0, "width": 0.5}],
                          "spinor": [2 ** -0.5, 2 ** -0.5]},
    }
    out = tmp_path / "out"
    assert main(["run", "--config", _config(tmp_path, **changes), "--out", str(out)]) == EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert summary["per_face"]["p0:x0:upper"] > 0.9


def test_dirac_cascade_is_rejected(tmp_path):
    changes = {"equation": "dirac", "boundary": {"theta": 0.0}}
    assert main(["cascade", "--config", _config(tmp_path, **changes), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_unknown_command_exits_with_usage_error():
    with pytest.raises(SystemExit) as excinfo:
        main(["teleport"])
    assert excinfo.value.code == 2


@pytest.mark.slow
def test_default_config_is_the_resonant_run(tmp_path):
    out = tmp_path / "out"
    assert main(["run", "--out", str(out)]) == EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert summary["total_detected"] >= 0.99
    assert summary["per_face"]["p0:x0:lower"] == 0.0
