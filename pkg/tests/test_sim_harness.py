import math

import numpy as np
import pytest

from acesched import sim_harness as sim
from acesched.roi_tracker import Roi
from acesched.runtime_selector import AceWeights, RuntimeSelector


def test_timeline_duty_and_determinism():
    s = sim.generate_timeline(11, 10_000, 0.03)
    assert s.active_frames() == 300
    assert s == sim.generate_timeline(11, 10_000, 0.03)
    assert s != sim.generate_timeline(12, 10_000, 0.03)
    with pytest.raises(ValueError):
        sim.generate_timeline(1, 1000, 0.0)


def test_timeline_events_disjoint_and_cover_boxes():
    s = sim.generate_timeline(3, 5000, 0.2)
    spans = sorted((e.start_frame, e.end_frame) for e in s.events)
    assert all(b[0] > a[1] for a, b in zip(spans, spans[1:]))
    covered = {f for a, b in spans for f in range(a, b + 1)}
    assert covered == set(s.boxes)
    W, H = s.frame_size
    for (cx, cy, w, h), _ in s.boxes.values():
        assert 0 <= cx <= W and 0 <= cy <= H and w > 0 and h > 0


def test_script_round_trip(tmp_path):
    s = sim.generate_timeline(4, 800, 0.1)
    s.save(tmp_path / "s.json")
    assert sim.GestureScript.load(tmp_path / "s.json") == s


def perfect_calib(**kw):
    return sim.OracleCalibration(detect_prob=1.0, loc_noise_px=0.0, conf_std=0.0, **kw)


def test_perfect_oracle_returns_gt():
    s = sim.generate_timeline(5, 500, 0.1)
    det = sim.SyntheticDetector("p", perfect_calib(), s)
    for f, (box, cls) in list(s.boxes.items())[:20]:
        got = det(f, 640).detections
        assert len(got) == 1 and got[0].class_id == cls
        assert np.allclose(got[0].box, box)


def test_region_excluding_hand_sees_nothing():
    s = sim.generate_timeline(5, 500, 0.1)
    det = sim.SyntheticDetector("p", perfect_calib(), s)
    f, ((cx, cy, w, h), _) = next(iter(s.boxes.items()))
    far = Roi(0, 0, 50, 50) if cx > 200 else Roi(1200, 600, 50, 50)
    assert det(f, 640, far).detections == []


def test_half_area_roi_costs_half():
    s = sim.generate_timeline(5, 500, 0.1)
    det = sim.SyntheticDetector("p", perfect_calib(), s)
    a = det(0, 640, Roi(0, 0, 400, 400))
    b = det(0, 640, Roi(0, 0, 200, 400))
    assert b.energy_j == pytest.approx(a.energy_j / 2)
    assert b.latency_s == pytest.approx(a.latency_s / 2)


def test_cost_monotone_in_pixels():
    s = sim.generate_timeline(5, 500, 0.1)
    det = sim.SyntheticDetector("p", perfect_calib(), s)
    costs = [det(0, r).energy_j for r in (160, 320, 640)]
    assert all(c > 0 for c in costs) and costs == sorted(costs)
    assert costs[2] / costs[0] == pytest.approx(16.0)


def test_roi_never_exceeds_full_frame():
    for roi in (Roi(0, 0, 1280, 720), Roi(0, 0, 1000, 720), Roi(100, 0, 300, 300)):
        for r in (160, 320, 640):
            assert sim.processed_pixels(r, roi, (1280, 720)) <= sim.processed_pixels(r, None, (1280, 720))


def test_oracle_call_order_independent():
    s = sim.generate_timeline(6, 400, 0.2)
    calib = sim.OracleCalibration(detect_prob=0.7)
    d1, d2 = sim.SyntheticDetector("x", calib, s, seed=3), sim.SyntheticDetector("x", calib, s, seed=3)
    fwd = [d1(f, 320).detections for f in range(400)]
    back = [d2(f, 320).detections for f in reversed(range(400))][::-1]
    assert fwd == back


def test_step_device_examples():
    d = sim.DeviceModel(battery_capacity=100, state_of_charge=1.0)
    sim.step_device(d, 10 * 3600.0, 3600.0)
    assert d.state_of_charge == pytest.approx(0.9)
    d = sim.DeviceModel(ambient_c=30, temp_c=60)
    sim.step_device(d, 0.0, 10.0)
    assert d.state_of_charge == 1.0 and 30 < d.temp_c < 60
    d = sim.DeviceModel(ambient_c=30, heat_coeff=4, tau_s=60)
    for _ in range(200):
        sim.step_device(d, 5.0 * 10, 10.0)
    assert d.temp_c == pytest.approx(30 + 4 * 5.0, rel=1e-9)


def test_step_device_first_order_closed_form():
    d = sim.DeviceModel(ambient_c=25, heat_coeff=2, tau_s=30)
    sim.step_device(d, 10.0 * 15, 15.0)
    assert d.temp_c == pytest.approx(45 + (25 - 45) * math.exp(-0.5))


def test_scenarios_load():
    for name in sim.SCENARIOS:
        sc = sim.load_scenario(name)
        assert sc.name == name
        assert sc.constraints.fps_target > 0
    assert sim.load_scenario("thermal-throttle").overrides["gpu_util_pct"] == 95


def test_override_schedule():
    from acesched.runtime_selector import TelemetrySample

    ov = {"gpu_util_pct": [[0, 10], [30, 90]], "cpu_temp_c": 70}
    assert sim._apply_overrides(TelemetrySample(), ov, 5).gpu_util_pct == 10
    assert sim._apply_overrides(TelemetrySample(), ov, 30).gpu_util_pct == 90
    assert sim._apply_overrides(TelemetrySample(), ov, 30).cpu_temp_c == 70


def test_scenario_inline_oracle(tmp_path):
    import json

    doc = sim.load_scenario("balanced").to_dict()
    doc["oracle"] = {"m": {"detect_prob": 0.9}}
    (tmp_path / "s.json").write_text(json.dumps(doc))
    sc = sim.load_scenario(tmp_path / "s.json")
    assert sc.calibration()["m"].detect_prob == 0.9


@pytest.fixture(scope="module")
def script():
    return sim.generate_timeline(21, 6000, 0.05)


def run(table, scenario, script, oracles, **kw):
    sc = sim.load_scenario(scenario)
    sel = RuntimeSelector(table, sc.constraints, **kw)
    return sim.run_closed_loop(table, sel, sc, script, oracles, seed=2)


def test_single_profile_loop(two_tier_table, two_tier, script):
    one = [two_tier_table[0]]
    res = run(one, "balanced", script, two_tier)
    assert {tuple(r["chosen"].values()) for r in res.records} == {tuple(one[0].point.key().values())}
    assert res.summary["epochs"] == len(res.records) == math.ceil(6000 / 150)
    assert res.summary["switches"] == 0


def test_energy_conservation(two_tier_table, two_tier, script):
    res = run(two_tier_table, "balanced", script, two_tier)
    logged = sum(r["energy_j"] for r in res.records)
    assert logged == pytest.approx(res.summary["device_drawn_j"], rel=1e-6)


def test_closed_loop_deterministic(two_tier_table, two_tier, script):
    a = run(two_tier_table, "thermal-throttle", script, two_tier)
    b = run(two_tier_table, "thermal-throttle", script, two_tier)
    assert a.records == b.records and a.summary == b.summary


def test_balanced_vs_thermal_differ(two_tier_table, two_tier, script):
    bal = run(two_tier_table, "balanced", script, two_tier)
    hot = run(two_tier_table, "thermal-throttle", script, two_tier)
    assert bal.records[-1]["chosen"] != hot.records[-1]["chosen"]
    e = {tuple(p.point.key().values()): p.raw.e_per_frame for p in two_tier_table}
    assert e[tuple(hot.records[-1]["chosen"].values())] < e[tuple(bal.records[-1]["chosen"].values())]


def test_low_battery_shifts_to_energy(two_tier_table, two_tier, script):
    low = run(two_tier_table, "low-battery", script, two_tier)
    bal = run(two_tier_table, "balanced", script, two_tier)
    e = {tuple(p.point.key().values()): p.raw.e_per_frame for p in two_tier_table}
    for lo, ba in zip(low.records, bal.records):
        assert lo["weights"]["eE"] > ba["weights"]["eE"]
        assert e[tuple(lo["chosen"].values())] <= e[tuple(ba["chosen"].values())]
    assert low.summary["energy_per_frame_mj"] < bal.summary["energy_per_frame_mj"]


def test_draining_battery_raises_energy_weight(two_tier_table, two_tier, script):
    # pin temperatures and load so the battery is the only moving signal
    sc = sim.load_scenario("low-battery")
    sc.overrides = {"cpu_temp_c": 40.0, "gpu_temp_c": 40.0, "gpu_util_pct": 0.0}
    sel = RuntimeSelector(two_tier_table, sc.constraints)
    res = sim.run_closed_loop(two_tier_table, sel, sc, script, two_tier, seed=2)
    etas = [r["weights"]["eE"] for r in res.records]
    assert all(b > a for a, b in zip(etas, etas[1:]))


def test_forced_accuracy_weights_match_fixed(two_tier_table, two_tier, script):
    sc = sim.load_scenario("balanced")
    rep = sim.compare_fixed_vs_adaptive(two_tier_table, sc, script, two_tier, seed=2, fixed_weights=AceWeights(1, 0, 0))
    for key in ("energy_per_frame_mj", "event_f1", "frame_f1", "mean_latency_ms"):
        assert rep["adaptive"][key] == rep["fixed"][key]


def test_compare_repeatable(two_tier_table, two_tier, script):
    sc = sim.load_scenario("balanced")
    a = sim.compare_fixed_vs_adaptive(two_tier_table, sc, script, two_tier, seed=2)
    b = sim.compare_fixed_vs_adaptive(two_tier_table, sc, script, two_tier, seed=2)
    assert a == b


def test_summary_csv(tmp_path):
    path = tmp_path / "s.csv"
    sim.write_summary_csv(path, [{"scenario": "x", "run": "fixed", "energy_per_frame_mj": 1.0, "other": 3}])
    lines = path.read_text().splitlines()
    assert lines[0].split(",") == list(sim.SUMMARY_COLUMNS)
    assert lines[1].startswith("x,fixed,1.0")
