"""Monte Carlo harness, scenario configuration, and the CLI surface."""

import json
import os

import numpy as np
import pytest
from click.testing import CliRunner

from mvmsim import cli
from mvmsim.config import (DEFAULT_CONFIG, ConfigError, Scenario,
                           load_scenario)
from mvmsim.harness import (CSV_COLUMNS, CheckResult, HarnessError,
                            McEstimate, VerificationReport, exact_check,
                            run_ensemble, statistical_check)
from mvmsim.suites import SUITE_ORDER, run_suite

SMALL = {"ensemble": {"paths": 40}, "grid": {"steps": 16}}


def _small_scenario(**extra):
    cfg = dict(SMALL)
    cfg.update(extra)
    return Scenario(cfg)


# estimates


def test_mc_estimate_formulas_and_guards():
    vals = np.array([1.0, 2.0, 3.0, 6.0])
    est = McEstimate.from_values(vals, statistic="demo")
    assert est.mean == vals.mean()
    assert est.stderr == vals.std(ddof=1) / 2.0
    assert est.n == 4
    assert "demo" in repr(est)
    with pytest.raises(HarnessError):
        McEstimate(1.0, 0.1, 1)
    with pytest.raises(HarnessError):
        McEstimate(1.0, -0.1, 10)


def test_run_ensemble_constant_statistic():
    scn = _small_scenario()
    est = run_ensemble(scn, evaluator=lambda b: 2.5)
    assert est.mean == 2.5
    assert est.stderr == 0.0
    assert est.n == 40


def test_run_ensemble_repeatable_and_worker_independent():
    scn = _small_scenario()

    def bev(ids):
        out = np.empty((len(ids), 2))
        for i, b in enumerate(ids):
            r = np.random.default_rng(int(b) + 100)
            out[i] = r.standard_normal(2)
        return out

    runs = [run_ensemble(scn, batch_evaluator=bev, k=2, workers=w,
                         statistic=["a", "b"], batch=7)
            for w in (1, 1, 4)]
    for other in runs[1:]:
        for e0, e1 in zip(runs[0], other):
            assert e0.mean == e1.mean and e0.stderr == e1.stderr
    assert [e.statistic for e in runs[0]] == ["a", "b"]


def test_run_ensemble_stderr_scales_with_paths():
    def ev(b):
        return float(np.random.default_rng(b).standard_normal())

    scn = _small_scenario()
    small = run_ensemble(scn, evaluator=ev, paths=400)
    big = run_ensemble(scn, evaluator=ev, paths=1600)
    assert big.stderr / small.stderr == pytest.approx(0.5, rel=0.2)


def test_run_ensemble_guards():
    scn = _small_scenario()
    with pytest.raises(HarnessError):
        run_ensemble(scn)  # neither evaluator
    with pytest.raises(HarnessError):
        run_ensemble(scn, evaluator=lambda b: 0.0,
                     batch_evaluator=lambda ids: np.zeros((len(ids), 1)))
    with pytest.raises(HarnessError):
        run_ensemble(scn, evaluator=lambda b: 1.0, paths=1)
    with pytest.raises(HarnessError) as err:
        run_ensemble(scn, evaluator=lambda b: np.nan if b == 17 else 1.0)
    assert "17" in str(err.value)


# checks and reports


def test_statistical_check_boundary():
    est = McEstimate(1.0, 0.1, 100)
    # tolerance is 4 * stderr + |bias| = 0.45
    assert statistical_check("x", "id", est, 0.56, bias=0.05).passed
    assert not statistical_check("x", "id", est, 0.54, bias=0.05).passed
    assert statistical_check("x", "id", est, 1.3, sigmas=4.0).tolerance \
        == pytest.approx(0.4)


def test_exact_check_and_lines():
    good = exact_check("tight", "lhs == rhs", 1e-13, 1e-12)
    bad = exact_check("loose", "lhs == rhs", 1e-3, 1e-12)
    assert good.passed and not bad.passed
    assert good.provenance == "exact"
    assert good.line().startswith("PASS") and "tight" in good.line()
    assert bad.line().startswith("FAIL")
    # csv rows round-trip floats exactly through repr
    row = good.csv_row()
    assert float(row[2]) == 1e-13
    assert row[0] == "" and row[6] == "true"


def test_check_result_mean_property():
    assert CheckResult("n", "i", 0.0, 0.25, 1.0, True).mean == 0.25
    est = McEstimate(0.5, 0.01, 10)
    assert CheckResult("n", "i", 0.0, est, 1.0, True).mean == 0.5


def test_report_serialization_round_trip(tmp_path):
    scn = _small_scenario()
    checks = [exact_check("alpha", "a == b", 0.0, 1e-12),
              exact_check("beta", "c == d", 5.0, 1e-12)]
    report = VerificationReport("demo", scn, checks)
    assert not report.passed
    assert report.failures == ["beta"]
    doc = json.loads(report.to_json())
    assert doc["suite"] == "demo"
    assert doc["seed"] == 7 and doc["paths"] == 40
    assert [c["name"] for c in doc["checks"]] == ["alpha", "beta"]
    csv_text = report.to_csv()
    assert csv_text.splitlines()[0] == ",".join(CSV_COLUMNS)
    assert len(csv_text.splitlines()) == 3
    assert report.lines()[-1] == "FAIL  1/2 checks passed [suite demo]"
    written = report.write(tmp_path, fmt="csv")
    assert sorted(os.path.basename(p) for p in written) == \
        ["report_demo.csv", "report_demo.json"]
    only_json = report.write(tmp_path / "j", fmt="json")
    assert [os.path.basename(p) for p in only_json] == ["report_demo.json"]


def test_run_suite_none_and_unknown():
    scn = _small_scenario()
    report = run_suite(scn, "none")
    assert report.passed and report.checks == [] and report.timings == {}
    with pytest.raises(KeyError):
        run_suite(scn, "does-not-exist")


# configuration


def test_default_scenario_resolution():
    scn = Scenario()
    assert scn.dimension == 8
    assert scn.name == "default"
    assert scn.steps == 256 and scn.T == 1.0
    assert len(scn.grid) == 257
    assert scn.paths == 1000 and scn.seed == 7
    assert scn.upsilon == "auto" and scn.norm_level == 1
    np.testing.assert_array_equal(scn.spec.Q, np.eye(8))
    assert scn.spec.levy.atoms.shape == (0, 8)  # no jump part by default
    np.testing.assert_array_equal(scn.z0, np.zeros(8))
    np.testing.assert_array_equal(scn.semigroup.spectrum,
                                  1.0 + np.arange(8.0))


def test_override_merges_and_replaces_by_kind():
    scn = _small_scenario()
    deeper = scn.override({"ensemble": {"paths": 60}})
    assert deeper.paths == 60 and deeper.seed == 7  # sibling keys survive
    shifted = scn.override({"spectrum": {"shift": 0.5}})
    np.testing.assert_array_equal(shifted.semigroup.spectrum,
                                  1.0 + np.arange(8.0))
    np.testing.assert_allclose(shifted.semigroup.decay(1.0),
                               np.exp(-(1.0 + np.arange(8.0) - 0.5)))
    # a different kind replaces the block outright instead of merging
    values = scn.override({"dimension": 2,
                           "spectrum": {"kind": "values",
                                        "values": [3.0, 4.0]}})
    np.testing.assert_array_equal(values.semigroup.spectrum, [3.0, 4.0])
    halved = scn.halve_grid()
    assert halved.steps == 8 and len(halved.grid) == 9


def test_config_schema_violations_carry_pointers():
    with pytest.raises(ConfigError) as err:
        Scenario({"dimension": -3})
    assert err.value.pointer == "/dimension"
    with pytest.raises(ConfigError) as err:
        Scenario({"ensemble": {"paths": 1}})
    assert err.value.pointer == "/ensemble/paths"
    with pytest.raises(ConfigError):
        Scenario({"unexpected-block": 1})
    with pytest.raises(ConfigError) as err:
        Scenario({"dimension": 3,
                  "spectrum": {"kind": "values", "values": [1.0, 2.0]}})
    assert err.value.pointer == "/spectrum/values"


def test_load_scenario_files(tmp_path):
    good = tmp_path / "scn.json"
    good.write_text(json.dumps({"name": "from-file",
                                "ensemble": {"paths": 25}}))
    scn = load_scenario(str(good), overrides={"ensemble": {"seed": 11}})
    assert scn.name == "from-file"
    assert scn.paths == 25 and scn.seed == 11
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError) as err:
        load_scenario(str(bad))
    assert "not valid JSON" in str(err.value)


def test_initial_state_kinds():
    const = Scenario({"dimension": 3,
                      "initial": {"kind": "constant",
                                  "values": [1.0, 2.0, 3.0]}})
    np.testing.assert_array_equal(const.z0, [1.0, 2.0, 3.0])
    gauss = Scenario({"dimension": 3,
                      "initial": {"kind": "gaussian", "scale": 2.0}})
    assert callable(gauss.z0)
    draw = gauss.z0(7, 0)
    np.testing.assert_array_equal(draw, gauss.z0(7, 0))
    assert not np.array_equal(draw, gauss.z0(7, 1))


def test_levy_noise_configuration():
    atoms = Scenario({"dimension": 2,
                      "noise": {"levy": {"atoms": [[0.5, 0.0]],
                                         "rates": [2.0]}}})
    assert atoms.spec.levy.atoms.shape == (1, 2)
    assert atoms.triplet.levy is atoms.spec.levy
    radial = Scenario({"dimension": 4,
                       "noise": {"levy": {"kind": "radial-gaussian",
                                          "intensity": 2.0, "scale": 1.5,
                                          "n_atoms": 8}}})
    assert radial.spec.levy.atoms.shape == (8, 4)
    assert radial.spec.levy.rates.sum() == pytest.approx(2.0)
    with pytest.raises(ConfigError) as err:
        Scenario({"dimension": 2,
                  "noise": {"levy": {"atoms": [[1.0, 0.0, 0.0]],
                                     "rates": [1.0]}}})
    assert err.value.pointer == "/noise/levy/atoms"


def test_default_config_is_schema_clean():
    scn = Scenario(DEFAULT_CONFIG)
    assert scn.name == "default"


# command line


def test_cli_constants_text_and_json():
    runner = CliRunner()
    res = runner.invoke(cli.main, ["constants"])
    assert res.exit_code == 0
    assert "C1=0.0999954600" in res.output
    assert "reference example (a=1, b=0, T=1, upsilon=10)" in res.output
    res = runner.invoke(cli.main, ["constants", "--format", "json"])
    assert res.exit_code == 0
    doc = json.loads(res.output)
    ref = doc["reference example (a=1, b=0, T=1, upsilon=10)"]
    assert ref["C1"] == pytest.approx(0.09999546000702375, abs=1e-14)
    assert ref["contracts"]


def test_cli_verify_writes_reports(tmp_path):
    runner = CliRunner()
    out = str(tmp_path / "out")
    res = runner.invoke(cli.main, ["verify", "fubini", "--paths", "40",
                                   "--grid-steps", "16", "--out", out])
    assert res.exit_code == 0, res.output
    assert "PASS" in res.output
    doc = json.loads(open(os.path.join(out, "report_fubini.json")).read())
    assert doc["passed"] and doc["suite"] == "fubini"
    assert os.path.exists(os.path.join(out, "report_fubini.csv"))


def test_cli_verify_worker_count_does_not_change_reports(tmp_path):
    runner = CliRunner()
    blobs = {}
    for tag, workers in [("a", "1"), ("b", "1"), ("c", "4")]:
        out = str(tmp_path / tag)
        res = runner.invoke(cli.main, ["verify", "fubini", "--paths", "40",
                                       "--grid-steps", "16", "--seed", "7",
                                       "--workers", workers, "--out", out])
        assert res.exit_code == 0, res.output
        blobs[tag] = (open(os.path.join(out, "report_fubini.json"),
                           "rb").read(),
                      open(os.path.join(out, "report_fubini.csv"),
                           "rb").read())
    assert blobs["a"] == blobs["b"] == blobs["c"]


def test_cli_verify_failure_exit_code(tmp_path, monkeypatch):
    scn = _small_scenario()
    failing = VerificationReport(
        "isometry", scn, [exact_check("broken", "x == y", 1.0, 1e-12)])
    failing.timings = {}
    monkeypatch.setattr(cli, "run_suite",
                        lambda scn, name, workers=1: failing)
    runner = CliRunner()
    res = runner.invoke(cli.main, ["verify", "isometry", "--out",
                                   str(tmp_path / "out")])
    assert res.exit_code == 1
    assert "FAIL" in res.output


def test_cli_usage_errors():
    runner = CliRunner()
    res = runner.invoke(cli.main, ["verify", "fubini", "--config",
                                   "/does/not/exist.json"])
    assert res.exit_code == 2
    assert "config file not found" in res.output
    res = runner.invoke(cli.main, ["verify", "bogus-suite"])
    assert res.exit_code == 2
    with CliRunner().isolated_filesystem():
        with open("bad.json", "w") as fh:
            json.dump({"dimension": -3}, fh)
        res = runner.invoke(cli.main, ["verify", "fubini", "--config",
                                       "bad.json"])
        assert res.exit_code == 2
        assert "/dimension" in res.output


def test_cli_simulate_rows(tmp_path):
    runner = CliRunner()
    res = runner.invoke(cli.main, ["simulate", "--paths", "2",
                                   "--grid-steps", "4"])
    assert res.exit_code == 0
    lines = res.output.strip().splitlines()
    assert lines[0] == "path_id,time,kind,index,value"
    kinds = {line.split(",")[2] for line in lines[1:]}
    assert kinds == {"wiener"}  # default scenario carries no jump part
    out_file = str(tmp_path / "sim.csv")
    res = runner.invoke(cli.main, ["simulate", "--paths", "2",
                                   "--grid-steps", "4", "--solve",
                                   "--out", out_file])
    assert res.exit_code == 0
    rows = open(out_file).read().strip().splitlines()
    kinds = {line.split(",")[2] for line in rows[1:]}
    assert kinds == {"wiener", "state"}


def test_cli_solve_and_plot_data(tmp_path):
    runner = CliRunner()
    out = str(tmp_path / "out")
    res = runner.invoke(cli.main, ["solve", "--paths", "16", "--grid-steps",
                                   "8", "--out", out])
    assert res.exit_code == 0, res.output
    summary = json.loads(open(os.path.join(out, "solve_summary.json")).read())
    assert summary["paths"] == 16 and summary["steps"] == 8
    assert "dual_norm_sq" in summary["final"]
    echoed = json.loads(res.stdout[:res.stdout.rindex("}") + 1])
    assert echoed == summary
    curves = open(os.path.join(out, "solve_curves.csv")).read().splitlines()
    assert curves[0] == ",".join(CSV_COLUMNS)
    res = runner.invoke(cli.main, ["plot-data", "--paths", "16",
                                   "--grid-steps", "8"])
    assert res.exit_code == 0
    lines = res.output.strip().splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert any(line.split(",")[1] == "dual_norm_sq" for line in lines[1:])


def test_cli_suite_choices_track_registry():
    params = {p.name: p for p in cli.verify.params}
    assert list(params["suite"].type.choices) == SUITE_ORDER + ["all"]
