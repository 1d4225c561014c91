"""End-to-end command-line tests driving main() in process.

A module-scoped fixture trains throwaway weights on tiny episode plans so the
simulate/evaluate commands have real files to load.
"""

import json

import pytest

from mealtwin.cli import EXPERIMENT_SCHEMA, main
from mealtwin.errors import NumericalError
from mealtwin.rlcore import load_qnet
from mealtwin.scenario import load_scenario
from mealtwin.simcore import events_from_csv


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    scenario = root / "scenario.json"
    assert main(["gen-scenario", "--out", str(scenario)]) == 0
    for mode in ("myopic", "strategic"):
        outdir = root / f"weights_{mode}"
        code = main(
            [
                "train",
                "--scenario",
                str(scenario),
                "--mode",
                mode,
                "--episodes",
                "2,1,1",
                "--seed",
                "0",
                "--outdir",
                str(outdir),
            ]
        )
        assert code == 0
    return root


def weight_flags(root):
    return [
        "--strategic-dispatch",
        str(root / "weights_strategic" / "dispatch.json"),
        "--strategic-steering",
        str(root / "weights_strategic" / "steering.json"),
        "--myopic-dispatch",
        str(root / "weights_myopic" / "dispatch.json"),
        "--myopic-steering",
        str(root / "weights_myopic" / "steering.json"),
    ]


def test_no_command_prints_help(capsys):
    assert main([]) == 1
    assert "usage: mealtwin" in capsys.readouterr().out


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert capsys.readouterr().out.startswith("mealtwin ")


def test_usage_errors_exit_1():
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["simulate"])  # --scenario and --events-out are required
    assert exc.value.code == 1


def test_gen_scenario_default(workspace, capsys):
    config = load_scenario(workspace / "scenario.json")
    assert len(config.region) == 25
    assert config.fleet_size == 25


def test_gen_scenario_custom_region(tmp_path, capsys):
    out = tmp_path / "small.json"
    code = main(
        [
            "gen-scenario",
            "--out",
            str(out),
            "--cols",
            "3",
            "--rows",
            "3",
            "--restaurant-ids",
            "4",
            "--fleet",
            "4",
            "--rate",
            "6.0",
        ]
    )
    assert code == 0
    config = load_scenario(out)
    assert len(config.region) == 9
    assert config.region.restaurant_ids == (4,)
    assert config.hourly_rates[4] == {19: 6.0, 20: 6.0}
    assert config.od_probs[4][0] == pytest.approx(1.0 / 9.0)


def test_gen_scenario_rejects_bad_input(tmp_path, capsys):
    out = str(tmp_path / "x.json")
    assert main(["gen-scenario", "--out", out, "--cols", "0"]) == 2
    assert main(["gen-scenario", "--out", out, "--cols", "3", "--rows", "3"]) == 2
    code = main(
        ["gen-scenario", "--out", out, "--cols", "3", "--rows", "3", "--restaurant-ids", "99"]
    )
    assert code == 2
    assert "error" in capsys.readouterr().err


def test_train_artifacts(workspace, capsys):
    outdir = workspace / "weights_myopic"
    net, meta = load_qnet(outdir / "dispatch.json")
    assert meta["kind"] == "dispatch" and meta["mode"] == "myopic"
    assert meta["episodes"] == [2, 1, 1]
    assert net.spec.input_dim == 1 + 3 * 25
    _, steer_meta = load_qnet(outdir / "steering.json")
    assert steer_meta["kind"] == "steering"
    report = json.loads((outdir / "training_report.json").read_text())
    assert report["schema"] == "mealtwin-training-report/1"
    assert [p["executed"] for p in report["phases"]] == [2, 1, 1]
    returns = (outdir / "returns.csv").read_text().splitlines()
    assert returns[0] == "phase,episode,return,epsilon,mean_loss"
    assert len(returns) == 5


def test_train_flag_validation(workspace, capsys):
    scenario = str(workspace / "scenario.json")
    assert main(["train", "--scenario", scenario, "--episodes", "1,2"]) == 2
    assert main(["train", "--episodes", "1,1,1"]) == 2  # no scenario anywhere
    assert main(["train", "--scenario", "does-not-exist.json"]) == 2


def test_experiment_config_supplies_defaults(workspace, tmp_path, capsys):
    config_path = tmp_path / "experiment.json"
    outdir = tmp_path / "out"
    config_path.write_text(
        json.dumps(
            {
                "schema": EXPERIMENT_SCHEMA,
                "scenario": str(workspace / "scenario.json"),
                "mode": "myopic",
                "episodes": "1,1,1",
                "train_seed": 9,
                "output_dir": str(outdir),
            }
        )
    )
    assert main(["train", "--config", str(config_path)]) == 0
    report = json.loads((outdir / "training_report.json").read_text())
    assert report["seed"] == 9
    assert [p["executed"] for p in report["phases"]] == [1, 1, 1]

    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"schema": "other/9"}))
    assert main(["train", "--config", str(bad)]) == 2
    bad.write_text("{not json")
    assert main(["train", "--config", str(bad)]) == 2


def test_simulate_nearest_idle(workspace, tmp_path, capsys):
    events_out = tmp_path / "events.csv"
    trace = tmp_path / "trace.csv"
    code = main(
        [
            "simulate",
            "--scenario",
            str(workspace / "scenario.json"),
            "--variant",
            "nearest_idle",
            "--seed",
            "3",
            "--events-out",
            str(events_out),
            "--dispatch-trace",
            str(trace),
        ]
    )
    assert code == 0
    out = capsys.readouterr().out
    assert "nearest_idle: sampled" in out and "p99 decision latency" in out
    events = events_from_csv(events_out)
    assert any(e.event == "shift_summary" for e in events)
    lines = trace.read_text().splitlines()
    assert lines[0] == "minute,order,action,reward,q_max"
    assert len(lines) > 50


def test_simulate_variant_validation(workspace, tmp_path, capsys):
    scenario = str(workspace / "scenario.json")
    out = str(tmp_path / "e.csv")
    assert main(["simulate", "--scenario", scenario, "--variant", "bogus", "--events-out", out]) == 2
    # Strategic dispatching needs its weight file.
    assert (
        main(["simulate", "--scenario", scenario, "--variant", "strategic", "--events-out", out])
        == 2
    )
    err = capsys.readouterr().err
    assert "--strategic-dispatch" in err


def test_simulate_strategic_steer(workspace, tmp_path, capsys):
    events_out = tmp_path / "events.csv"
    steer_trace = tmp_path / "steer.csv"
    code = main(
        [
            "simulate",
            "--scenario",
            str(workspace / "scenario.json"),
            "--variant",
            "strategic+steer",
            "--events-out",
            str(events_out),
            "--steer-trace",
            str(steer_trace),
            *weight_flags(workspace),
        ]
    )
    assert code == 0
    assert steer_trace.read_text().splitlines()[0] == "minute,courier,from,to,reward"


def test_weight_fleet_mismatch(workspace, tmp_path, capsys):
    small = tmp_path / "small_fleet.json"
    assert main(["gen-scenario", "--out", str(small), "--fleet", "3"]) == 0
    code = main(
        [
            "simulate",
            "--scenario",
            str(small),
            "--variant",
            "myopic",
            "--events-out",
            str(tmp_path / "e.csv"),
            "--myopic-dispatch",
            str(workspace / "weights_myopic" / "dispatch.json"),
        ]
    )
    assert code == 2
    assert "fleet" in capsys.readouterr().err


@pytest.fixture(scope="module")
def evaluated(workspace):
    outdir = workspace / "eval"
    code = main(
        [
            "evaluate",
            "--scenario",
            str(workspace / "scenario.json"),
            "--shifts",
            "2",
            "--eval-seed",
            "500",
            "--variants",
            "nearest_idle,myopic",
            "--outdir",
            str(outdir),
            *weight_flags(workspace),
        ]
    )
    assert code == 0
    return outdir


def test_evaluate_artifacts(evaluated, capsys):
    doc = json.loads((evaluated / "comparison.json").read_text())
    assert doc["schema"] == "mealtwin-comparison/1"
    assert doc["variants"] == ["nearest_idle", "myopic"]
    assert len(doc["runs"]["nearest_idle"]) == 2
    assert [r["run_id"] for r in doc["runs"]["myopic"]] == [0, 1]
    metrics = (evaluated / "metrics.csv").read_text().splitlines()
    assert metrics[0] == "metric,nearest_idle avg,nearest_idle std,myopic avg,myopic std"
    pvals = (evaluated / "pvalues_time_gap.csv").read_text().splitlines()
    assert pvals[0] == "variant_a,variant_b,p_value"


def test_evaluate_worker_pool_matches_serial(workspace, evaluated, tmp_path):
    outdir = tmp_path / "pooled"
    code = main(
        [
            "evaluate",
            "--scenario",
            str(workspace / "scenario.json"),
            "--shifts",
            "2",
            "--eval-seed",
            "500",
            "--variants",
            "nearest_idle,myopic",
            "--workers",
            "2",
            "--outdir",
            str(outdir),
            *weight_flags(workspace),
        ]
    )
    assert code == 0
    assert (outdir / "comparison.json").read_bytes() == (
        evaluated / "comparison.json"
    ).read_bytes()


def test_evaluate_validation(workspace, capsys):
    scenario = str(workspace / "scenario.json")
    assert main(["evaluate", "--shifts", "1"]) == 2  # scenario missing
    assert (
        main(["evaluate", "--scenario", scenario, "--variants", "bogus", "--shifts", "1"]) == 2
    )


def test_report_recomputes_identical_tables(evaluated, tmp_path, capsys):
    metrics_csv = tmp_path / "metrics.csv"
    pvalues_csv = tmp_path / "pvalues.csv"
    code = main(
        [
            "report",
            "--comparison",
            str(evaluated / "comparison.json"),
            "--metrics-csv",
            str(metrics_csv),
            "--pvalues-csv",
            str(pvalues_csv),
        ]
    )
    assert code == 0
    out = capsys.readouterr().out
    assert "nearest_idle" in out and "gap avg" in out
    assert metrics_csv.read_bytes() == (evaluated / "metrics.csv").read_bytes()
    assert pvalues_csv.read_bytes() == (evaluated / "pvalues_time_gap.csv").read_bytes()


def test_report_rejects_bad_files(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"schema": "nope"}))
    assert main(["report", "--comparison", str(bad)]) == 2
    bad.write_text("{oops")
    assert main(["report", "--comparison", str(bad)]) == 2
    assert main(["report", "--comparison", str(tmp_path / "missing.json")]) == 2


def test_synth_history_and_forecast_eval(workspace, tmp_path, capsys):
    scenario = str(workspace / "scenario.json")
    history = tmp_path / "history.csv"
    holdout = tmp_path / "holdout.csv"
    assert main(["synth-history", "--scenario", scenario, "--weeks", "6", "--out", str(history)]) == 0
    assert (
        main(
            [
                "synth-history",
                "--scenario",
                scenario,
                "--weeks",
                "2",
                "--seed",
                "77",
                "--out",
                str(holdout),
            ]
        )
        == 0
    )
    report_out = tmp_path / "forecast.json"
    model_out = tmp_path / "models.json"
    code = main(
        [
            "forecast-eval",
            "--scenario",
            scenario,
            "--history",
            str(history),
            "--holdout",
            str(holdout),
            "--rounds",
            "20",
            "--max-depth",
            "3",
            "--model-out",
            str(model_out),
            "--report-out",
            str(report_out),
        ]
    )
    assert code == 0
    assert "holdout MAE" in capsys.readouterr().out
    doc = json.loads(report_out.read_text())
    assert doc["schema"] == "mealtwin-forecast-eval/1"
    assert doc["overall"]["samples"] > 0
    assert set(doc["grids"]) == {str(g) for g in (7, 8, 9, 12, 13, 14, 17, 18, 19)}
    assert model_out.exists()


def test_snapshot_command(workspace, tmp_path, capsys):
    events_out = tmp_path / "events.csv"
    assert (
        main(
            [
                "simulate",
                "--scenario",
                str(workspace / "scenario.json"),
                "--variant",
                "nearest_idle",
                "--events-out",
                str(events_out),
            ]
        )
        == 0
    )
    svg_out = tmp_path / "minute30.svg"
    code = main(
        ["snapshot", "--events", str(events_out), "--minute", "30", "--out", str(svg_out)]
    )
    assert code == 0
    assert svg_out.read_text().startswith("<svg ")
    assert main(["snapshot", "--events", str(events_out), "--minute", "999", "--out", str(svg_out)]) == 2
    assert main(["snapshot", "--events", "missing.csv", "--minute", "0", "--out", str(svg_out)]) == 2


def test_numerical_failure_maps_to_exit_3(workspace, monkeypatch, capsys):
    def boom(*args, **kwargs):
        raise NumericalError("synthetic blowup")

    monkeypatch.setattr("mealtwin.cli.sandwich_train", boom)
    code = main(
        ["train", "--scenario", str(workspace / "scenario.json"), "--episodes", "1,1,1"]
    )
    assert code == 3
    assert "numerical failure" in capsys.readouterr().err
