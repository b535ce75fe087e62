import json
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from msrom.cli import main
from msrom.grid import ConfigurationError
from msrom.harness import (
    ErrorReport,
    ExperimentConfig,
    ExperimentError,
    compare_runs,
    preset,
    recompute_errors,
    run_experiment,
    tolerance_sweep,
)

SMALL = dict(nx=16, ny=16, coarse_nx=4, coarse_ny=4, contrast=100.0, seed=2, dt=1e-3, T=0.01, l=2,
             timestamps=[0.005, 0.01])


def small(**kw):
    return ExperimentConfig(**{**SMALL, **kw})


@given(
    st.sampled_from([8, 16, 32]),
    st.sampled_from([2, 4, 8]),
    st.floats(1.0, 1e6),
    st.sampled_from(["none", "uniform", "adaptive1", "adaptive2"]),
    st.one_of(st.none(), st.integers(0, 99)),
    st.booleans(),
    st.lists(st.sampled_from([0.0, 0.05, 0.1]), max_size=3),
)
def test_config_round_trip(nx, cnx, contrast, mode, budget, deim, stamps):
    cfg = ExperimentConfig(nx=nx, ny=nx, coarse_nx=cnx, coarse_ny=cnx, contrast=contrast, online_mode=mode,
                           dof_budget=budget, deim=deim, timestamps=stamps)
    assert ExperimentConfig.from_ini(cfg.to_ini()) == cfg


def test_config_rejects_unknown_and_invalid():
    text = ExperimentConfig().to_ini()
    with pytest.raises(ConfigurationError, match="unknown key"):
        ExperimentConfig.from_ini(text.replace("[mesh]", "[mesh]\nnz = 4"))
    with pytest.raises(ConfigurationError, match="unknown section"):
        ExperimentConfig.from_ini(text + "\n[extra]\na = 1\n")
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_ini(text.replace("nx = 64", "nx = sixty"))
    with pytest.raises(ConfigurationError, match="does not divide"):
        ExperimentConfig(nx=30, coarse_nx=8)
    with pytest.raises(ConfigurationError):
        ExperimentConfig(dt=0.03, T=0.1)
    with pytest.raises(ConfigurationError):
        ExperimentConfig(online_mode="sometimes")
    with pytest.raises(ConfigurationError):
        ExperimentConfig(deim=True, deim_source="earlier_time_window", window=0.2)
    with pytest.raises(ConfigurationError):
        ExperimentConfig.load("/nonexistent/config.ini")


def test_partial_config_uses_defaults():
    cfg = ExperimentConfig.from_ini("[mesh]\nnx = 32\nny = 32\n")
    assert cfg.nx == 32 and cfg.coarse_nx == 8 and cfg.l == 2


def test_presets():
    ex21 = preset("ex21")
    assert ex21.dt == 1e-3 and ex21.l == 1 and ex21.initial_dof == 225
    assert ex21.nonlinear_solver == "newton"
    ex22 = preset("ex22")
    assert ex22.initial_dof == 450 and ex22.dt == 1e-4
    assert preset("ex22", eps=0.1).dt == 1e-3
    ex33 = preset("ex33", source="earlier_time_window")
    assert ex33.deim and ex33.deim_start == 0.05 and ex33.online_mode == "none"
    assert preset("ex33", source="different_epsilon").eps == 0.1
    assert preset("desk").initial_dof == 98
    with pytest.raises(ConfigurationError):
        preset("ex99")
    with pytest.raises(ConfigurationError):
        preset("ex33", source="elsewhere")
    sweep = tolerance_sweep(ex22)
    assert [c.online_tol for c in sweep] == [1e-2, 1e-3, 1e-4]
    assert len({c.directory for c in sweep}) == 3


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    return run_experiment(small(online_mode="adaptive2", online_tol=0.0), directory=out)


def test_artifacts(small_run):
    d = small_run.directory
    for name in ("config.ini", "errors.csv", "enrichment.csv", "summary.json", "fields/kappa.txt",
                 "fields/fine_n000005.txt", "fields/reduced_n000010.txt", "plots/errors.svg", "plots/dof.svg"):
        assert (d / name).is_file(), name
    summary = json.loads((d / "summary.json").read_text())
    assert summary["initial_dof"] == 18
    assert summary["error_norm"] == "unweighted"
    assert [e["n"] for e in summary["requested"]] == [5, 10]
    rep = ErrorReport.read_csv(d / "errors.csv")
    assert rep.column("n") == list(range(11))
    assert rep.column("e_a") == small_run.report.column("e_a")
    assert ExperimentConfig.load(d / "config.ini") == small_run.config


def test_runs_are_reproducible(small_run, tmp_path):
    again = run_experiment(small_run.config, directory=tmp_path)
    for name in ("errors.csv", "enrichment.csv"):
        assert (tmp_path / name).read_bytes() == (small_run.directory / name).read_bytes()


def test_recompute_errors_from_fields(small_run):
    for n in (5, 10):
        ea, e2 = recompute_errors(small_run.directory, n)
        e = small_run.report.at(n * 1e-3)
        assert ea == pytest.approx(e.e_a, rel=1e-12, abs=1e-14)
        assert e2 == pytest.approx(e.e_2, rel=1e-12, abs=1e-14)


def test_compare_runs(small_run, tmp_path):
    csv_path = small_run.directory / "errors.csv"
    rows = compare_runs(csv_path, csv_path, out=tmp_path / "cmp.csv")
    assert all(r["d_e_a"] == 0 and r["d_e_2"] == 0 for r in rows)
    assert (tmp_path / "cmp.csv").is_file()
    short = run_experiment(small(T=0.005, timestamps=[]), write=False)
    with pytest.raises(ValueError, match="time stamps differ"):
        compare_runs(small_run.report, short.report)


def test_kappa_error_norm_option():
    a = run_experiment(small(T=0.002, timestamps=[]), write=False)
    b = run_experiment(small(T=0.002, timestamps=[], error_norm="kappa"), write=False)
    assert a.report.final.e_2 == b.report.final.e_2
    assert a.report.final.e_a != b.report.final.e_a


def test_deim_run_is_close_to_plain_run():
    plain = run_experiment(small(), write=False)
    with_deim = run_experiment(small(deim=True), write=False)
    assert with_deim.deim is not None and with_deim.deim.m >= 1
    assert abs(with_deim.report.final.e_2 - plain.report.final.e_2) < 0.1 * plain.report.final.e_2


def test_numerical_failure_is_reported():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        with pytest.raises(ExperimentError) as info:
            run_experiment(small(eps=0.01), write=False)
    assert info.value.module == "stepper"


def test_cli(tmp_path, capsys):
    cfg_path = tmp_path / "c.ini"
    small().replace(directory=str(tmp_path / "out")).save(cfg_path)
    assert main(["run", "--config", str(cfg_path)]) == 0
    assert (tmp_path / "out" / "errors.csv").is_file()
    assert "e_a=" in capsys.readouterr().out

    bad = tmp_path / "bad.ini"
    bad.write_text("[mesh]\nnx = 30\ncoarse_nx = 8\n")
    assert main(["run", "--config", str(bad)]) == 2
    assert "configuration error" in capsys.readouterr().err

    div = tmp_path / "div.ini"
    small(eps=0.01).replace(directory=str(tmp_path / "div")).save(div)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        assert main(["run", "--config", str(div)]) == 3
    assert "numerical failure" in capsys.readouterr().err

    assert main(["preset", "ex22", "--out", str(tmp_path / "p.ini")]) == 0
    assert ExperimentConfig.load(tmp_path / "p.ini").initial_dof == 450
    assert main(["preset", "ex33", "--source", "nowhere"]) == 2

    fpath = tmp_path / "k.txt"
    assert main(["field", "gen", "--nx", "16", "--ny", "16", "--contrast", "1e3", "--seed", "1",
                 "--out", str(fpath)]) == 0
    assert fpath.is_file()
    assert main(["field", "gen", "--nx", "16", "--ny", "16", "--contrast", "0.5", "--out", str(fpath)]) == 2

    e = tmp_path / "out" / "errors.csv"
    assert main(["compare", str(e), str(e), "--out", str(tmp_path / "cmp.csv")]) == 0
    assert main(["compare", str(e), str(tmp_path / "missing.csv")]) == 2
    loaded = run_experiment(small(field_kind="load", field_path=str(fpath)), write=False)
    assert np.isfinite(loaded.report.final.e_a)
