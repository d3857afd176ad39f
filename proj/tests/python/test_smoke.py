import json
import math

import numpy as np
import pytest

import mbcbf


def test_vector_field_and_step():
    s = mbcbf.State(0.0, 0.0, math.pi / 2)
    xdot = mbcbf.vector_field(s, mbcbf.Input(0.5, 0.2))
    assert np.allclose(xdot, [0.0, 0.5, 0.2], atol=1e-15)

    dt = 0.05
    nxt = mbcbf.step_constant(mbcbf.State(0, 0, 0), mbcbf.Input(1.0, 1.0), dt)
    assert nxt.x == pytest.approx(math.sin(dt), abs=1e-9)
    assert nxt.y == pytest.approx(1.0 - math.cos(dt), abs=1e-9)
    assert nxt.theta == pytest.approx(dt, abs=1e-15)


def test_distance_and_policies():
    cone = mbcbf.Obstacle((0.0, 0.0), 0.5)
    s = mbcbf.State(-2.0, 0.0, 0.0)
    assert mbcbf.h_distance(s, cone) == pytest.approx(1.5)
    u = mbcbf.policy_control(1, s, cone)
    assert u.v == pytest.approx(-0.5)
    assert mbcbf.policy_barrier(1, s, cone) == pytest.approx(1.5)
    with pytest.raises(IndexError):
        mbcbf.policy_control(3, s, cone)


def test_flow_sensitivity_starts_at_identity():
    samples = mbcbf.integrate_backup_flow(mbcbf.State(-2.0, 0.3, 0.1), 0, mbcbf.Obstacle((0, 0), 0.5))
    assert len(samples) == 21
    assert np.allclose(samples[0]["sensitivity"], np.eye(3))
    assert samples[-1]["tau"] == pytest.approx(2.0)


def test_qp_projection_matches_oracle():
    rows = [((1.0, 0.0), 0.1), ((0.0, 1.0), -0.2)]
    target = mbcbf.Input(-0.3, -0.5)
    fast = mbcbf.solve_qp(target, rows)
    ref = mbcbf.solve_qp(target, rows, oracle=True)
    assert fast["feasible"] and ref["feasible"]
    assert fast["u_star"].v == pytest.approx(0.1)
    assert fast["u_star"].omega == pytest.approx(-0.2)
    assert fast["objective"] == pytest.approx(ref["objective"], abs=1e-12)


def test_filter_passes_safe_command_through():
    out = mbcbf.safety_filter(mbcbf.State(-3.0, 0.0, math.pi), mbcbf.Input(0.3, 0.0))
    assert out.feasible
    assert out.u_safe.v == pytest.approx(0.3)
    assert out.intervention == pytest.approx(0.0, abs=1e-9)


def test_governor_proposal_ties():
    assert mbcbf.propose([0.2, 0.9, 0.1], 0) == 1
    assert mbcbf.propose([0.5, 0.5, 0.5], 2) == 2


def test_features_layout():
    f = mbcbf.extract_features(mbcbf.State(-2, 0, 0), np.zeros(3), mbcbf.Input(0.5, 0))
    assert len(f) == 12
    assert f[2] == 0.0 and f[6] == 0.0


def test_rammer_stays_safe_and_replays(tmp_path):
    log = mbcbf.simulate("rammer", duration=6.0, seed=5)
    summary = log.summary()
    assert summary["min_h"] >= 0.0
    assert summary["within_bounds"]
    path = tmp_path / "ep.jsonl"
    log.save(str(path))
    again = mbcbf.load_episode_log(str(path))
    assert mbcbf.replay(again)["bit_exact"]
    first = json.loads(log.to_jsonl().splitlines()[0])
    assert first["type"] == "header"


def test_custom_scenario_round_trip():
    sc = mbcbf.default_scenario()
    sc["governor"]["dwell_ticks"] = 5
    log = mbcbf.simulate({"kind": "goal_seeker", "target": [-0.62, 0.0]}, scenario=sc, duration=3.0)
    assert log.header["scenario"]["governor"]["dwell_ticks"] == 5
    sc["bounds"]["v_max"] = -1.0
    with pytest.raises(ValueError):
        mbcbf.simulate("idle", scenario=sc)


def test_collect_train_forward(tmp_path):
    data = mbcbf.collect(rows=1200, seed=2)
    assert len(data) >= 1200
    assert data.features.shape == (len(data), 12)
    model, history = mbcbf.train(
        data, {"epochs": 1, "dims": {"hidden": 16, "layers": 1, "dense": [8]}, "seed": 1})
    assert len(history) == 1
    rewards = model.forward(data.features[:15].T)
    assert len(rewards) == 3
    assert all(0.0 < r < 1.0 for r in rewards)
    path = tmp_path / "model.bin"
    model.save(str(path))
    assert mbcbf.RewardModel.load(str(path)).fingerprint() == model.fingerprint()
    metrics = mbcbf.evaluate(model, data, "validation")
    assert 0.0 <= metrics["accuracy"] <= 1.0
