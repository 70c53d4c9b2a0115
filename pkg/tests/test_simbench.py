import json

import numpy as np
import pytest

from zonotube.simbench import (
    RunLog,
    ScenarioConfig,
    build_scenario,
    lyapunov_monitor,
    rosbot,
    run_phase_portrait,
    simulate_closed_loop,
    simulate_tzpc,
    tube_fixed_point,
    verify_log,
)
from zonotube.simbench.cli import main
from zonotube.simbench.sweep import (
    CSV_HEADER,
    read_sweep_csv,
    run_feasibility_sweep,
    run_many,
    worker_count,
    write_sweep_csv,
)

# ---------------------------------------------------------------- model


def test_rosbot_pattern_and_scale():
    _, B = rosbot.rosbot_model(0.1)
    scale = 0.05 * 0.1 / (4 * 0.21984)
    np.testing.assert_allclose(B[2] / scale, [1, -1, -1, 1])
    np.testing.assert_allclose(B[0] / scale, 0.21984 * np.ones(4))
    np.testing.assert_allclose(B[1] / scale, 0.21984 * np.array([1, -1, 1, -1]))
    assert (B @ np.ones(4))[2] == 0.0
    A, _ = rosbot.rosbot_model(1.0)
    np.testing.assert_array_equal(A, np.eye(3))
    with pytest.raises(ValueError):
        rosbot.rosbot_model(0.0)


# --------------------------------------------------------------- config


def test_config_round_trip_and_validation():
    cfg = ScenarioConfig(T=25, alpha=0.3, seed=7, x0=(1.0, 2.0, 0.5))
    back = ScenarioConfig.from_json(cfg.to_json())
    assert back == cfg
    with pytest.raises(ValueError):
        ScenarioConfig(prior="bogus")
    with pytest.raises(ValueError):
        ScenarioConfig.from_dict({"T": 20, "nope": 1})
    with pytest.raises(ValueError):
        ScenarioConfig(tube_floor=-1.0)


def test_seed_determinism():
    cfg = ScenarioConfig(steps=8, seed=3)
    a, b = simulate_closed_loop(cfg), simulate_closed_loop(cfg)
    assert a.to_json() == b.to_json()


# --------------------------------------------------------- closed loop


@pytest.fixture(scope="module")
def case_log(case_cfg):
    return simulate_closed_loop(case_cfg)


def test_case_study_run(case_log):
    S = case_log.summary
    assert S["feasible_at_t0"] and not S["aborted"]
    assert S["violations"] == 0 and S["containment_failures"] == 0
    assert S["rf_events"] == 0
    assert S["reached_target_at"] is not None
    assert all(c.ok for c in verify_log(case_log))


def test_case_study_tube_is_nested(case_log):
    h = np.array([r["h_e"] for r in case_log.records])
    for t in range(1, len(h)):
        if not case_log.records[t - 1]["frozen"]:
            assert np.all(h[t] <= h[t - 1] * (1 + 1e-12))
        np.testing.assert_allclose(h[t], case_log.records[t - 1]["lam"] * h[t - 1], rtol=1e-9)


def test_runlog_json_round_trip(case_log, tmp_path):
    path = tmp_path / "runlog.json"
    case_log.to_json(path)
    back = RunLog.from_json(path)
    assert back.summary == json.loads(case_log.to_json())["summary"]
    assert [c.ok for c in verify_log(back)] == [c.ok for c in verify_log(case_log)]


def test_equilibrium_run():
    cfg = ScenarioConfig(alpha=0.0, prior="exact", x0=rosbot.TARGET.tolist(), disturbance_free=True, steps=10)
    log = simulate_closed_loop(cfg)
    assert log.summary["feasible_at_t0"] and not log.summary["aborted"]
    X = np.array([r["x"] for r in log.records])
    np.testing.assert_allclose(X, np.tile(rosbot.TARGET, (len(X), 1)), atol=1e-6)
    assert all(np.all(np.abs(r["u"]) <= rosbot.WHEEL_BOUND) for r in log.records)
    assert all(r["J"] == pytest.approx(0.0, abs=1e-6) for r in log.records[1:])


def test_disturbance_free_decay():
    cfg = ScenarioConfig(alpha=0.0, disturbance_free=True, initial_offset=(0.5, -0.4, 0.2), steps=20, seed=1)
    log = simulate_closed_loop(cfg)
    rep = lyapunov_monitor(log)
    assert rep.decay_ok, rep.failures
    assert rep.lambda_bar < 1


def test_phase_portrait_export(tmp_path, case_cfg):
    path = tmp_path / "portrait.csv"
    log = run_phase_portrait(case_cfg.with_(steps=15), path)
    head = path.read_text().splitlines()[0].split(",")
    assert head[:4] == ["t", "x1", "x2", "x3"] and "lambda" in head
    assert log.summary["violations"] == 0


def test_prior_shrinks_initial_tube(case_cfg):
    # data_only is infeasible at alpha = 0.7, T = 20; compare where both start
    only = simulate_closed_loop(case_cfg.with_(prior="data_only", alpha=0.3, steps=2))
    prior = simulate_closed_loop(case_cfg.with_(prior="data_prior", alpha=0.3, steps=2))
    assert len(only.records) == len(prior.records) == 2
    assert np.all(np.asarray(prior.records[1]["h_e"]) <= np.asarray(only.records[1]["h_e"]) + 1e-12)


def test_empty_log_monitor():
    log = RunLog({"disturbance_free": True}, [
        {"t": t, "x": np.zeros(3), "lam": 0.5, "V": 0.0, "V_ref": 0.0, "frozen": False} for t in range(5)
    ], {})
    rep = lyapunov_monitor(log)
    assert rep.ok and rep.max_level == 0.0


# ------------------------------------------------------------- baseline


def test_tube_fixed_point_geometric_series():
    h, ok, _ = tube_fixed_point([[1.0], [-1.0]], [[0.5]], [0.3, 0.3])
    assert ok
    np.testing.assert_allclose(h, [0.6, 0.6], atol=1e-6)


def test_tube_fixed_point_zero_and_divergent():
    h, ok, _ = tube_fixed_point([[1.0], [-1.0]], [[0.5]], [0.0, 0.0])
    assert ok and np.all(h == 0)
    _, ok, _ = tube_fixed_point([[1.0], [-1.0]], [[1.2]], [0.3, 0.3])
    assert not ok


def test_tzpc_run_shares_scenario(case_cfg):
    cfg = case_cfg.with_(controller="tzpc", prior="data_only", alpha=0.1, steps=10)
    sc = build_scenario(cfg, "data_only")
    log = simulate_tzpc(cfg, sc)
    assert log.summary["controller"] == "tzpc"
    if log.summary["feasible_at_t0"]:
        assert log.summary["violations"] == 0


# ---------------------------------------------------------------- sweep


def test_worker_count(monkeypatch):
    monkeypatch.setenv("ZONOTUBE_WORKERS", "1")
    assert worker_count(100) == 1
    monkeypatch.delenv("ZONOTUBE_WORKERS")
    assert worker_count(1) == 1


def test_small_sweep_and_csv(tmp_path):
    rows = run_feasibility_sweep([20], [0.0], 2, ("data_only", "data_prior"), workers=1)
    assert [r.feasible_pct for r in rows] == [100.0, 100.0]
    path = tmp_path / "sweep.csv"
    write_sweep_csv(rows, path)
    assert path.read_text().splitlines()[0] == ",".join(CSV_HEADER)
    assert read_sweep_csv(path) == rows


def test_run_many_matches_serial_runs():
    cfgs = [ScenarioConfig(steps=3, seed=s) for s in (0, 1)] + [ScenarioConfig(steps=3, controller="tzpc", alpha=0.1)]
    logs = run_many(cfgs, workers=1)
    assert logs[0].to_json() == simulate_closed_loop(cfgs[0]).to_json()
    assert logs[2].summary["controller"] == "tzpc"


def test_sweep_rejects_bad_grid():
    with pytest.raises(ValueError):
        run_feasibility_sweep([], [0.1], 1)
    with pytest.raises(ValueError):
        run_feasibility_sweep([20], [0.1], 1, ("magic",))
    with pytest.raises(ValueError):
        run_feasibility_sweep([20], [0.1], 1, feasibility="sometimes")


# ------------------------------------------------------------------ CLI


def test_cli_run_then_verify(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["run", "--T", "20", "--alpha", "0.7", "--steps", "10", "--out", str(out)]) == 0
    assert (out / "trajectory.csv").exists()
    assert main(["verify", str(out / "runlog.json")]) == 0
    assert "PASS" in capsys.readouterr().out


def test_cli_identify(tmp_path):
    out = tmp_path / "id"
    assert main(["identify", "--prior", "data_prior", "--out", str(out)]) == 0
    doc = json.loads((out / "model_sets.json").read_text())
    assert doc["M_ol"]["type"] == "constrained_matrix_zonotope"
    assert (out / "batch.csv").exists()


def test_cli_sweep(tmp_path, monkeypatch):
    monkeypatch.setenv("ZONOTUBE_WORKERS", "1")
    out = tmp_path / "s.csv"
    rc = main(["sweep", "--T", "20", "--alpha", "0.2", "--runs", "1", "--methods", "tzpc", "data_only",
               "--feasibility=whole-run", "--steps", "3", "--out", str(out)])
    assert rc == 0
    assert out.read_text().splitlines()[0] == "method,T,alpha,feasible_pct,runs"


def test_exact_prior_without_noise_is_feasible():
    for seed in range(3):
        log = simulate_closed_loop(ScenarioConfig(alpha=0.0, prior="exact", seed=seed), t0_only=True)
        assert log.summary["feasible_at_t0"]


def test_cli_usage_error(tmp_path):
    assert main(["run", "--T", "3", "--steps", "1", "--out", str(tmp_path)]) == 2
    with pytest.raises(SystemExit):
        main(["run", "--prior", "nonsense"])
