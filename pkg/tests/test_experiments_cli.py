import csv
import io
import json

import numpy as np
import pytest

from eqlab import __version__
from eqlab.cli import build_parser, main, parse_overrides
from eqlab.config import ExperimentConfig
from eqlab.dynamics import time_averaged_state
from eqlab.errors import ConfigError
from eqlab.experiments import (
    build_layout,
    build_member,
    build_state,
    equilibration_time,
    run,
    run_bounds,
    run_circuit_demo,
    run_ensemble,
    run_moments,
    run_mu_study,
    run_trace,
    time_grid,
)
from eqlab.ensembles import RngStream
from eqlab.numerics import partial_trace, trace_norm


def cfg(**kw):
    return ExperimentConfig.from_dict(kw)


def read_csv(text):
    body = [line for line in text.splitlines() if not line.startswith("#")]
    return list(csv.DictReader(io.StringIO("\n".join(body))))


@pytest.fixture
def write_config(tmp_path):
    def _write(data, name="config.json"):
        path = tmp_path / name
        path.write_text(json.dumps(data))
        return str(path)

    return _write


# config


def test_default_config_is_valid():
    c = ExperimentConfig()
    c.validate()
    assert c.n_qubits == 8 and c.subsystem == [0]


def test_nested_sections_merge_and_replace():
    c = cfg(time_grid={"steps": 5}, spectrum={"model": "ising", "h": 0.5})
    assert c.time_grid == {"start": 0.0, "stop": 10.0, "steps": 5}
    assert c.spectrum == {"model": "ising", "h": 0.5}


def test_overrides():
    c = ExperimentConfig().with_overrides({"time_grid.stop": 3.0, "master_seed": 9})
    assert c.time_grid["stop"] == 3.0 and c.master_seed == 9
    with pytest.raises(ConfigError):
        ExperimentConfig().with_overrides({"epsilon.x": 1})
    assert parse_overrides(["a=1", "b.c=[1,2]", "d=gue"]) == {"a": 1, "b.c": [1, 2], "d": "gue"}
    with pytest.raises(ConfigError):
        parse_overrides(["novalue"])


@pytest.mark.parametrize(
    "bad",
    [
        {"n_qubits": 1},
        {"subsystem": []},
        {"subsystem": [0, 0]},
        {"n_qubits": 3, "subsystem": [0, 1, 2]},
        {"subsystem": [9]},
        {"epsilon": 0.0},
        {"epsilon": 1.0},
        {"time_grid": {"steps": 0}},
        {"time_grid": {"start": 2.0, "stop": 1.0}},
        {"n_ensemble": 0},
        {"master_seed": -1},
        {"master_seed": 2**64},
        {"alpha": 0},
        {"spectrum": {"model": "poisson"}},
        {"spectrum": {"model": "file"}},
        {"spectrum": {"model": "explicit"}},
        {"diagonalizer": {"kind": "orthogonal"}},
        {"diagonalizer": {"kind": "circuit"}},
        {"r3_form": "both"},
        {"initial_state": "ghz"},
        {"initial_state": {"vector": [1], "density": [[1]]}},
        {"nonsense": 1},
    ],
)
def test_config_rejects(bad):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(bad)


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        ExperimentConfig.load(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="not valid JSON"):
        ExperimentConfig.load(bad)
    bad.write_text("[1, 2]")
    with pytest.raises(ConfigError, match="object"):
        ExperimentConfig.load(bad)


# builders


def test_build_state_kinds():
    assert build_state(cfg(n_qubits=2), RngStream(0)).vector.tolist() == [1, 0, 0, 0]
    np.testing.assert_allclose(build_state(cfg(n_qubits=2, initial_state="plus"), RngStream(0)).vector, 0.5)
    assert not build_state(cfg(n_qubits=2, initial_state="random_mixed"), RngStream(0)).is_pure
    v = build_state(cfg(n_qubits=2, initial_state={"vector": [0, 0.6, 0, 0], "vector_imag": [0, 0, 0.8, 0]}), RngStream(0))
    np.testing.assert_allclose(v.vector, [0, 0.6, 0.8j, 0])
    with pytest.raises(ConfigError, match="shape"):
        build_state(cfg(n_qubits=2, initial_state={"vector": [1, 0]}), RngStream(0))


def test_build_member_is_deterministic():
    c = cfg(n_qubits=4)
    a, b = build_member(c, 3), build_member(c, 3)
    np.testing.assert_array_equal(a.u, b.u)
    assert not np.allclose(a.u, build_member(c, 4).u)
    np.testing.assert_array_equal(a.energies, build_member(c, 4).energies)
    r = cfg(n_qubits=4, spectrum={"model": "gue", "resample": True})
    assert not np.allclose(build_member(r, 0).energies, build_member(r, 1).energies)


def test_equilibration_time_sources():
    assert equilibration_time(cfg(n_qubits=8), None) == (0.0625, "gue")
    t, src = equilibration_time(cfg(n_qubits=4, spectrum={"model": "ising", "h": 0.0}), None)
    assert (t, src) == (0.5, "ising")
    t, src = equilibration_time(cfg(n_qubits=2, spectrum={"model": "explicit", "energies": [0, 0, 2, 2]}), [0, 0, 2, 2])
    assert (t, src) == (1.0, "inverse_width")


# trace


def test_trace_single_row():
    c = cfg(n_qubits=5, time_grid={"start": 0.0, "stop": 0.0, "steps": 1}, initial_state="random")
    rows = read_csv(run_trace(c))
    assert len(rows) == 1 and float(rows[0]["t"]) == 0.0
    model = build_member(c, 0)
    rho0 = build_state(c, RngStream(0).child(2))
    layout = build_layout(c)
    want = trace_norm(partial_trace(rho0.matrix, layout) - time_averaged_state(model, rho0, layout))
    assert float(rows[0]["dist"]) == pytest.approx(want, rel=1e-11)
    assert rows[0]["bound_r3"] == ""


def test_trace_byte_identical_and_header():
    c = cfg(n_qubits=4, time_grid={"steps": 20})
    text = run_trace(c)
    assert text == run_trace(c)
    lines = text.splitlines()
    assert lines[0] == f"# eqlab {__version__} trace"
    assert json.loads(lines[1][len("# config "):]) == c.to_dict()


def test_trace_spot_check_n8():
    c = cfg(n_qubits=8, time_grid={"start": 0.625, "stop": 0.625, "steps": 1})
    row = read_csv(run_trace(c))[0]
    assert float(row["dist"]) <= float(row["bound_r1"])


def test_trace_circuit_diagonalizer_has_r3():
    c = cfg(n_qubits=4, diagonalizer={"kind": "circuit", "C": 20}, r3_form="appendix", time_grid={"steps": 3})
    rows = read_csv(run_trace(c))
    assert all(float(r["bound_r3"]) >= float(r["bound_r1"]) for r in rows)


# ensemble


def test_ensemble_stationary():
    c = cfg(
        n_qubits=4,
        diagonalizer={"kind": "identity"},
        n_ensemble=1,
        time_grid={"steps": 5},
        time_average={"T": 10.0, "n_samples": 100},
    )
    rep = json.loads(run_ensemble(c))
    assert all(r["mean_distance"] < 1e-15 and r["violation_fraction_r1"] == 0.0 for r in rep["records"])
    assert rep["time_average"]["mean"] < 1e-15
    assert rep["wall_clock_s"] is None


def test_ensemble_fields_and_timing():
    c = cfg(n_qubits=4, n_ensemble=5, time_grid={"steps": 4}, time_average={"T": 50.0, "n_samples": 100})
    rep = json.loads(run_ensemble(c, timing=True))
    assert rep["tool"] == "eqlab" and rep["version"] == __version__ and rep["command"] == "ensemble"
    assert rep["config"] == c.to_dict()
    assert len(rep["records"]) == 4
    assert rep["records"][0]["violation_fraction_r3"] is None
    assert len(rep["time_average"]["per_member"]) == 5
    assert 0.0 <= rep["sup_grid_violation_fraction_r1"] <= 1.0
    assert rep["wall_clock_s"] > 0


# mu


def test_mu_ising_columns_agree():
    c = cfg(n_qubits=12, spectrum={"model": "ising", "h": 0.5}, time_grid={"stop": 5.0, "steps": 51})
    rows = read_csv(run_mu_study(c))
    assert set(rows[0]) == {"t", "mu_exact", "mu_product", "mu_small_t"}
    assert all(float(v) == 1.0 for v in rows[0].values() if v != "0")
    for r in rows:
        # 12 significant digits are printed
        assert float(r["mu_exact"]) == pytest.approx(float(r["mu_product"]), abs=1e-11)


def test_mu_gue_and_explicit():
    rows = read_csv(run_mu_study(cfg(n_qubits=6, mu={"n_samples": 4}, time_grid={"steps": 11})))
    assert set(rows[0]) == {"t", "mu_exact", "mu_bessel"}
    assert float(rows[0]["mu_exact"]) == 1.0 and float(rows[0]["mu_bessel"]) == 1.0
    c = cfg(n_qubits=1 + 1, spectrum={"model": "explicit", "energies": [0, 1, 2, 3]}, time_grid={"stop": 3.141592653589793, "steps": 3})
    rows = read_csv(run_mu_study(c))
    assert float(rows[1]["mu_exact"]) < 1e-12


# moments


def test_moments_fully_degenerate():
    c = cfg(n_qubits=3, spectrum={"model": "explicit", "energies": [1.0] * 8}, moments={"n_samples": 10})
    rep = json.loads(run_moments(c))
    assert rep["predicted"] == 0.0 and rep["mc_estimate"] == 0.0
    assert rep["passed"] and rep["e17_ok"]


def test_moments_circuit_sampler_and_errors():
    c = cfg(n_qubits=3, moments={"n_samples": 50, "sampler": {"C": 20}})
    rep = json.loads(run_moments(c))
    assert rep["sampler"] == "circuit(20)"
    with pytest.raises(ConfigError):
        run_moments(cfg(n_qubits=3, moments={"sampler": "clifford"}))
    with pytest.raises(ConfigError):
        run_moments(cfg(n_qubits=9))
    with pytest.raises(ConfigError):
        run_moments(cfg(n_qubits=3, initial_state="random_mixed"))
    with pytest.raises(ConfigError):
        run_moments(cfg(n_qubits=3, moments={"n_samples": 1}))


# bounds


def test_bounds_report():
    c = cfg(n_qubits=10, time_grid={"steps": 3}, bounds={"C_values": [0, 300], "alpha_prime": 31})
    rep = json.loads(run_bounds(c))
    assert (rep["d"], rep["d_s"], rep["d_e"], rep["g"]) == (1024, 2, 512, 1)
    assert rep["min_complexity_threshold"] == 3100
    assert rep["result3_extra_terms"]["main_text"][1] == {"C": 300, "extra_term": 2.0**27}
    assert rep["rows"][0]["mu_abs"] == 1.0
    with pytest.raises(ConfigError):
        run_bounds(cfg(n_qubits=4, bounds={"alpha_prime": 30}))


def test_bounds_file_spectrum(tmp_path):
    path = tmp_path / "e.txt"
    path.write_text("# levels\n0\n1\n1\n2\n")
    rep = json.loads(run_bounds(cfg(n_qubits=2, spectrum={"model": "file", "path": str(path)}, time_grid={"steps": 1})))
    assert rep["g"] == 2 and rep["w"] == 6
    with pytest.raises(ConfigError, match="expected 2"):
        run_bounds(cfg(n_qubits=3, spectrum={"model": "file", "path": str(path)}))
    with pytest.raises(ConfigError):
        run_bounds(cfg(n_qubits=2, spectrum={"model": "file", "path": str(tmp_path / "nope.txt")}))


# circuit demo


def test_circuit_demo_small():
    c = cfg(circuit_demo={"n_qubits": 8, "m": 1, "C": 2, "draws": 300, "check_times": 4})
    rep = json.loads(run_circuit_demo(c))
    assert rep["dynamics_checked"] == rep["no_touch_count"]
    assert rep["max_untouched_deviation"] <= 1e-10
    assert rep["z_score"] <= 4
    assert len(rep["check_times"]) == 4


def test_circuit_demo_support_only():
    c = cfg(circuit_demo={"n_qubits": 64, "m": 2, "C": 8, "draws": 200})
    rep = json.loads(run_circuit_demo(c))
    assert rep["dynamics_checked"] == 0 and rep["max_untouched_deviation"] is None
    with pytest.raises(ConfigError):
        run_circuit_demo(cfg(circuit_demo={"n_qubits": 20, "dynamics": True}))
    with pytest.raises(ConfigError):
        run_circuit_demo(cfg(circuit_demo={"n_qubits": 4, "m": 4}))


# CLI


def test_cli_success_and_out(write_config, tmp_path, capsys):
    path = write_config({"n_qubits": 3, "time_grid": {"steps": 4}})
    assert main(["trace", "--config", path]) == 0
    stdout = capsys.readouterr().out
    out = tmp_path / "trace.csv"
    assert main(["trace", "--config", path, "--out", str(out)]) == 0
    assert out.read_text() == stdout


def test_cli_seed_and_set(write_config, tmp_path):
    path = write_config({"n_qubits": 3, "time_grid": {"steps": 2}})
    out = tmp_path / "b.json"
    assert main(["bounds", "--config", path, "--seed", "77", "--set", "time_grid.steps=3", "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["config"]["master_seed"] == 77 and len(rep["rows"]) == 3


def test_cli_config_errors(write_config, tmp_path, capsys):
    good = write_config({"n_qubits": 3})
    assert main(["trace", "--config", str(tmp_path / "missing.json")]) == 2
    assert main(["trace", "--config", write_config({"epsilon": 2.0}, "eps.json")]) == 2
    assert main(["trace", "--config", good, "--out", str(tmp_path / "no" / "dir" / "x.csv")]) == 2
    assert main(["trace", "--config", good, "--jobs", "0"]) == 2
    assert main(["trace", "--config", good, "--set", "bogus"]) == 2
    assert "config error" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate", "--config", good])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["trace"])
    assert exc.value.code == 2


def test_cli_numerical_errors(write_config, capsys):
    bad_vec = write_config({"n_qubits": 2, "initial_state": {"vector": [1, 1, 0, 0]}}, "v.json")
    assert main(["trace", "--config", bad_vec]) == 3
    not_psd = write_config({"n_qubits": 2, "initial_state": {"density": np.diag([1.5, -0.5, 0, 0]).tolist()}}, "r.json")
    assert main(["trace", "--config", not_psd]) == 3
    assert "numerical contract" in capsys.readouterr().err


def test_cli_version(capsys):
    with pytest.raises(SystemExit) as exc:
        build_parser().parse_args(["--version"])
    assert exc.value.code == 0
    assert __version__ in capsys.readouterr().out


def test_run_dispatch():
    c = cfg(n_qubits=3, time_grid={"steps": 2})
    assert run("bounds", c) == run_bounds(c)
    assert time_grid(c).tolist() == [0.0, 10.0]
