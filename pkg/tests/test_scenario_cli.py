import csv
import json

import numpy as np
import pytest

from sdreswarm.cli import builtin_text, main, resolve_scenario
from sdreswarm.export import (
    TRACE_COLUMNS,
    IncompatibleTraceError,
    compare_traces,
    read_trace_csv,
    settling_time,
    trace_table,
    write_trace_csv,
)
from sdreswarm.scenario import Scenario, ScenarioError, apply_overrides, dump_scenario, parse_scenario
from sdreswarm.sim import SimConfig, run_scenario

EXPECTED_COLUMNS = ("t, robot_id, x1, dx1, y1, dy1, theta, dtheta, u1, u2, mean_x, mean_y, mean_theta, "
                    "var_x, var_y, mode_x, mode_y, L, dL, care_residual, e_work, e_effort").split(", ")


def test_builtin_scenarios_parse():
    n4, n8 = resolve_scenario("n4"), resolve_scenario("n8")
    assert n4.sim.n_robots == 4 and n8.sim.n_robots == 8
    assert n4.sim.params.m == 0.01 and n4.sim.params.L == 0.02 and n4.sim.dt == 0.01
    assert n4.sim.r_weight == 50.0


@pytest.mark.parametrize("name", ["n4", "n8"])
def test_round_trip(name):
    sc = parse_scenario(builtin_text(name))
    assert parse_scenario(dump_scenario(sc)) == sc
    assert dump_scenario(parse_scenario(dump_scenario(sc))) == dump_scenario(sc)


def test_round_trip_awkward_values():
    sc = Scenario(SimConfig(noise_sigma=1 / 3, dt=0.007, sigma_enter=0.1, sigma_exit=0.05 / 7,
                            gather_corner=(0.1, 0.2), collisions=False), name="odd", seeds=3, out="x/y")
    back = parse_scenario(dump_scenario(sc))
    assert back == sc


def test_missing_keys_take_defaults():
    sc = parse_scenario("[sim]\nn_robots = 6\n")
    assert sc.sim.n_robots == 6
    assert sc.sim.dt == SimConfig().dt and sc.seeds == 1


@pytest.mark.parametrize("text", [
    "[sim]\nn_robots = 0\n",
    "[sim]\nbogus = 1\n",
    "[nowhere]\nx = 1\n",
    "[sim]\ndt = -1\n",
    "[sim]\ncollisions = maybe\n",
    "[scenario]\nseeds = 0\n",
    "not an ini file",
])
def test_invalid_scenarios(text):
    with pytest.raises(ScenarioError):
        parse_scenario(text)


def test_flag_over_file_over_default():
    sc = parse_scenario("[sim]\nnoise_sigma = 0.002\ndt = 0.02\n")
    assert sc.sim.noise_sigma == 0.002 and sc.sim.duration == SimConfig().duration
    sc2 = apply_overrides(sc, noise=0.003, duration=5.0)
    assert sc2.sim.noise_sigma == 0.003 and sc2.sim.dt == 0.02 and sc2.sim.duration == 5.0
    with pytest.raises(ScenarioError):
        apply_overrides(sc, dt=-1.0)


@pytest.fixture(scope="module")
def pd_trace():
    return run_scenario(SimConfig(duration=2.0, controller="pd", seed=1))


def test_csv_schema_and_values(tmp_path, pd_trace):
    assert list(TRACE_COLUMNS) == EXPECTED_COLUMNS
    path = write_trace_csv(pd_trace, tmp_path / "t.csv")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == EXPECTED_COLUMNS
    assert len(rows) == 1 + pd_trace.t.size * 4
    tab = read_trace_csv(path)
    ref = trace_table(pd_trace)
    np.testing.assert_allclose(tab.t, ref.t)
    np.testing.assert_allclose(tab.mean, ref.mean, rtol=1e-12)
    assert tab.energy_work == pytest.approx(pd_trace.energy_work, rel=1e-12)


def test_csv_missing_column_is_incompatible(tmp_path, pd_trace):
    path = write_trace_csv(pd_trace, tmp_path / "t.csv")
    lines = path.read_text().splitlines()
    cut = [",".join(line.split(",")[:-1]) for line in lines]
    bad = tmp_path / "bad.csv"
    bad.write_text("\n".join(cut) + "\n")
    with pytest.raises(IncompatibleTraceError):
        read_trace_csv(bad)


def test_compare_identical_is_zero_reduction(pd_trace):
    tab = trace_table(pd_trace)
    res = compare_traces(tab, tab)
    assert res["energy_work"]["reduction_pct"] == 0.0
    assert res["energy_effort"]["ratio"] == 1.0
    assert "work 0.0%" in res["reduction_line"]


def test_compare_rejects_different_swarms(pd_trace):
    other = run_scenario(SimConfig(n_robots=3, duration=2.0, controller="pd"))
    with pytest.raises(IncompatibleTraceError):
        compare_traces(trace_table(pd_trace), trace_table(other))


def test_settling_time_of_step():
    tab = trace_table(run_scenario(SimConfig(duration=0.0, controller="pd")))
    assert settling_time(tab) == 0.0


def _run_cli(tmp_path, *extra):
    return main(["run", "n4", "--duration", "1", "--seeds", "2", "--jobs", "1", "--out", str(tmp_path), *extra])


def test_cli_run_writes_outputs(tmp_path, capsys):
    assert _run_cli(tmp_path, "--controller", "pd", "--noise", "0.0002") == 0
    out = capsys.readouterr().out
    assert "thresholds: enter" in out
    summary = json.loads((tmp_path / "n4_pd_summary.json").read_text())
    assert summary["config"]["noise_sigma"] == 0.0002
    assert summary["config"]["duration"] == 1.0
    assert [r["seed"] for r in summary["runs"]] == [0, 1]
    for r in summary["runs"]:
        assert {"final", "energy", "mode_switches", "lyapunov", "status"} <= set(r)
        assert (tmp_path / r["trace"]).exists()
    resolved = parse_scenario((tmp_path / "n4_pd.cfg").read_text())
    assert resolved.sim.noise_sigma == 0.0002 and resolved.seeds == 2


def test_cli_compare_summaries_and_traces(tmp_path, capsys):
    assert _run_cli(tmp_path, "--controller", "pd") == 0
    assert _run_cli(tmp_path, "--controller", "sdre") == 0
    capsys.readouterr()
    a, b = tmp_path / "n4_sdre_summary.json", tmp_path / "n4_pd_summary.json"
    assert main(["compare", str(a), str(b)]) == 0
    res = json.loads(capsys.readouterr().out)
    assert res["seeds"] == [0, 1] and len(res["per_seed"]) == 2
    assert set(res["median"]) == {"work", "effort"}
    out = tmp_path / "cmp.json"
    assert main(["compare", str(tmp_path / "n4_sdre_seed0.csv"), str(tmp_path / "n4_pd_seed0.csv"),
                 "--out", str(out)]) == 0
    res = json.loads(out.read_text())
    assert {"energy_work", "energy_effort", "settling_time", "peak_abs_u", "reduction_line"} <= set(res)
    capsys.readouterr()
    assert main(["compare", str(a), str(tmp_path / "n4_pd_seed0.csv")]) == 2
    err = json.loads(capsys.readouterr().out)
    assert err["error"] == "incompatible"


def test_cli_bad_scenario_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[sim]\nn_robots = -2\n")
    assert main(["run", str(bad), "--out", str(tmp_path)]) == 2
    err = json.loads(capsys.readouterr().err.strip())
    assert err["error"] == "ScenarioError"
    assert main(["run", str(tmp_path / "missing.cfg")]) == 2
    with pytest.raises(SystemExit):
        main(["run", "n4", "--controller", "lqr"])


def test_cli_verify(tmp_path, capsys):
    assert main(["verify", "care"]) == 0
    assert main(["verify", "transform"]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "FAIL" not in out and "all checks passed" in out


def test_cli_verify_failure_exit_code(monkeypatch, capsys):
    import sdreswarm.cli as cli
    from sdreswarm.verify import Check

    monkeypatch.setattr(cli, "run_suites", lambda names, out_dir=None, seed=0: {
        "care": [Check("broken", 1.0, 1e-8, False, "synthetic")]})
    assert main(["verify", "care"]) == 1
    assert "FAILED" in capsys.readouterr().out
