"""Config files, oracle validation, experiment runs, outputs, and the CLI."""

import numpy as np
import pytest

from ddlab import (
    ConfigError, ExperimentConfig, OracleError, ResidualHistory,
    build_from_config, direct_oracle, load_config, render_convergence_svg,
    run_comparison, run_experiment, write_history_csv,
)
from ddlab.cli import main

from support import make_problem

SMALL = ExperimentConfig(elements_per_axis=(8,), subdomains_per_axis=(2,),
                         tol=1e-9, label="small")
CONTRAST_CFG = ExperimentConfig(
    elements_per_axis=(12,), subdomains_per_axis=(3,),
    material="checkerboard", material_values=(1.0, 1.0e5), tol=1e-8)


@pytest.mark.parametrize("overrides", [
    dict(dimension=4),
    dict(solver="magic"),
    dict(tol=0.0),
    dict(oracle_tol=-1.0),
    dict(max_iterations=0),
    dict(material_values=(1.0, 2.0, 3.0)),
    dict(material_values=(-1.0,)),
    dict(projector="exotic"),
    dict(stopping="energy"),
])
def test_config_validation_rejects(overrides):
    cfg = ExperimentConfig(**overrides)
    with pytest.raises(ConfigError):
        cfg.validate()


def test_config_file_roundtrip(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text(
        "# a comment line\n"
        "dimension = 2\n"
        "physics = elasticity\n"
        "elements_per_axis = 6, 4\n"
        "subdomains_per_axis = 2\n"
        "material = checkerboard\n"
        "material_values = 1.0, 1e3\n"
        "layer_axis = none\n"
        "clamp_face = -x, +x\n"
        "load_face = +y   # trailing comment\n"
        "solver = bdd\n"
        "tol = 1e-8\n"
        "max_iterations = 100\n"
        "label = roundtrip\n"
        "\n")
    cfg = load_config(path)
    assert cfg.dimension == 2
    assert cfg.physics == "elasticity"
    assert cfg.elements_per_axis == (6, 4)
    assert cfg.subdomains_per_axis == (2,)
    assert cfg.material_values == (1.0, 1000.0)
    assert cfg.layer_axis is None
    assert cfg.clamp_face == ("-x", "+x")
    assert cfg.load_face == "+y"
    assert cfg.solver == "bdd"
    assert cfg.tol == 1e-8
    assert cfg.max_iterations == 100
    assert cfg.name() == "roundtrip"


@pytest.mark.parametrize("body,fragment", [
    ("dimension = 2\nfancy = 3\n", ":2:"),
    ("dimension\n", ":1:"),
    ("dimension = two\n", "dimension"),
    ("solver = magic\n", "solver"),
])
def test_config_file_errors(tmp_path, body, fragment):
    path = tmp_path / "bad.cfg"
    path.write_text(body)
    with pytest.raises(ConfigError) as err:
        load_config(path)
    assert fragment in str(err.value)


def test_digest_ignores_label_only():
    a = ExperimentConfig(label="one")
    b = ExperimentConfig(label="two")
    assert a.digest() == b.digest()
    assert a.digest() != ExperimentConfig(tol=1e-7).digest()
    # unlabeled runs get a stable digest-based name
    anon = ExperimentConfig()
    assert anon.name() == f"feti-{anon.digest()}"


def test_with_overrides():
    cfg = ExperimentConfig()
    assert cfg.with_overrides(tol="1e-10").tol == 1e-10
    assert cfg.with_overrides(tol=1e-4).tol == 1e-4
    assert cfg.with_overrides(elements_per_axis="4,6").elements_per_axis == (4, 6)
    with pytest.raises(ConfigError):
        cfg.with_overrides(fancy="3")
    with pytest.raises(ConfigError):
        cfg.with_overrides(solver="magic")


def test_build_from_config():
    problem = build_from_config(SMALL)
    assert problem.n_global == 9 * 9 - 9
    assert len(problem.systems) == 4
    elastic = build_from_config(SMALL.with_overrides(physics="elasticity"))
    assert elastic.n_global == (9 * 9 - 9) * 2


def test_direct_oracle_accepts_and_rejects():
    u, backward = direct_oracle(build_from_config(SMALL))
    assert backward <= 1e-12
    assert np.all(np.isfinite(u))
    # a floating structure has a singular assembled operator
    singular = make_problem(clamp=())
    with pytest.raises(OracleError):
        direct_oracle(singular)


@pytest.mark.parametrize("solver", ["feti", "bdd"])
def test_run_experiment_validates(solver):
    rec = run_experiment(SMALL.with_overrides(solver=solver))
    assert rec.validated
    assert rec.result.converged
    assert rec.oracle_error <= rec.config.oracle_tol
    assert rec.oracle_backward_error <= 1e-12
    assert rec.iterations == rec.result.iterations
    assert rec.wall_seconds >= 0.0


def test_run_experiment_flags_nonconvergence():
    cfg = CONTRAST_CFG.with_overrides(
        tol=1e-15, max_iterations=2, initialization="standard",
        preconditioner="lumped", projector="identity")
    rec = run_experiment(cfg)
    assert not rec.result.converged
    assert not rec.validated
    assert rec.result.krylov.termination == "maxit"


def test_write_history_csv(tmp_path):
    rec = run_experiment(SMALL)
    path = tmp_path / "hist.csv"
    write_history_csv(path, rec)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "iter,interface_residual,global_residual,seconds"
    assert len(lines) == len(rec.history.rows) + 1
    for i, line in enumerate(lines[1:]):
        cells = line.split(",")
        assert int(cells[0]) == i
        assert float(cells[2]) >= 0.0
    # everything except wall time is deterministic across rewrites
    again = tmp_path / "hist2.csv"
    write_history_csv(again, rec.history)
    strip = lambda text: [",".join(l.split(",")[:3]) for l in text.read_text().splitlines()]
    assert strip(path) == strip(again)


def test_write_history_csv_zero_iterations(tmp_path):
    h = ResidualHistory()
    h.add(0, 3.0, 1.0, 0.0)
    lines = write_history_csv(tmp_path / "one.csv", h) and \
        (tmp_path / "one.csv").read_text().strip().splitlines()
    assert len(lines) == 2


def test_render_convergence_svg(tmp_path):
    curves = [("alpha", [1.0, 1e-3, 1e-6]), ("beta", [1.0, 1e-2, 1e-4, 1e-8])]
    path = tmp_path / "plot.svg"
    render_convergence_svg(path, curves, title="demo")
    text = path.read_text()
    assert text.count("<polyline") == 2
    assert "alpha" in text and "beta" in text and "demo" in text
    # deterministic output
    render_convergence_svg(tmp_path / "plot2.svg", curves, title="demo")
    assert (tmp_path / "plot2.svg").read_text() == text
    # zero residuals are clamped rather than breaking the log scale
    render_convergence_svg(tmp_path / "plot3.svg", [("gamma", [1.0, 0.0])])
    with pytest.raises(ValueError):
        render_convergence_svg(tmp_path / "empty.svg", [])


def test_run_comparison_shares_or_rebuilds_problems():
    report = run_comparison(SMALL, {"initialization": ["standard", "new"]})
    assert len(report.records) == 2
    # solver-only sweep: one assembly serves every record
    assert report.records[0].problem is report.records[1].problem
    assert all(r.validated for r in report.records)
    table = report.table()
    assert "initialization=standard" in table
    assert "initialization=new" in table

    geom = run_comparison(SMALL, {"elements_per_axis": ["4", "8"]})
    assert geom.records[0].problem is not geom.records[1].problem
    assert geom.records[0].problem.n_global != geom.records[1].problem.n_global


def test_comparison_csv(tmp_path):
    report = run_comparison(SMALL, {"solver": ["feti", "bdd"]})
    path = tmp_path / "cmp.csv"
    report.write_csv(path)
    lines = path.read_text().strip().splitlines()
    assert len(lines) == 3
    assert lines[0].startswith("label,iterations,converged")


def _write_small_cfg(tmp_path):
    path = tmp_path / "small.cfg"
    path.write_text(
        "elements_per_axis = 8\n"
        "subdomains_per_axis = 2\n"
        "tol = 1e-9\n"
        "label = cli-small\n")
    return path


def test_cli_run_validates(tmp_path, capsys):
    cfg = _write_small_cfg(tmp_path)
    csv = tmp_path / "hist.csv"
    svg = tmp_path / "conv.svg"
    rc = main(["run", str(cfg), "--csv", str(csv), "--svg", str(svg)])
    out = capsys.readouterr().out
    assert rc == 0
    assert "cli-small: validated" in out
    assert csv.exists() and svg.exists()


def test_cli_run_nonconvergence_exit_code(tmp_path, capsys):
    cfg = _write_small_cfg(tmp_path)
    rc = main(["run", str(cfg), "--override", "max_iterations=1",
               "--override", "tol=1e-15"])
    assert rc == 2
    assert "did not converge" in capsys.readouterr().out


def test_cli_usage_errors(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("fancy = 3\n")
    assert main(["run", str(bad)]) == 1
    assert main(["run", str(tmp_path / "missing.cfg")]) == 1
    cfg = _write_small_cfg(tmp_path)
    assert main(["run", str(cfg), "--override", "solver=magic"]) == 1
    assert main(["run", str(cfg), "--override", "badsyntax"]) == 1
    err = capsys.readouterr().err
    assert err.count("error:") == 4


def test_cli_compare(tmp_path, capsys):
    cfg = _write_small_cfg(tmp_path)
    rc = main(["compare", str(cfg), "--vary", "solver=feti,bdd"])
    out = capsys.readouterr().out
    assert rc == 0
    assert "solver=feti" in out and "solver=bdd" in out
    # tuple keys cannot ride the comma-separated vary syntax
    assert main(["compare", str(cfg), "--vary", "elements_per_axis=4,8"]) == 1
    assert main(["compare", str(cfg)]) == 1
    assert main(["compare", str(cfg), "--vary", "solver=feti"]) == 1


def test_cli_oracle(tmp_path, capsys):
    cfg = _write_small_cfg(tmp_path)
    rc = main(["oracle", str(cfg)])
    out = capsys.readouterr().out
    assert rc == 0
    assert "oracle ok" in out
    assert "backward error" in out
