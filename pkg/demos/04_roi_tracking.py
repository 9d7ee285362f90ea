"""Tracked region-of-interest detection versus full-frame detection on one script."""
from acesched import ace_profiler as ap
from acesched import sim_harness as sim
from acesched.roi_tracker import TrackerParams, run_tracker
from _data import bundled

calib = sim.load_calibration(bundled("two_tier.json"))["accurate"]
script = sim.generate_timeline(0, 20000, 0.03)
det = sim.SyntheticDetector("accurate", calib, script, seed=0)

logs = run_tracker(range(script.total_frames), det.at(640), script.frame_size, TrackerParams(roi_scale=1.8))
on = [log for log in logs if log.frame in script.boxes]
share = sum(sim.processed_pixels(640, log.roi, script.frame_size) for log in on) / (len(on) * 640 ** 2)
print(f"gesture frames: {len(on)}, pixels vs full frame: {share:.1%}")

meter = ap.SyntheticPowerMeter()
full = ap.run_one_video(det, script, ap.ConfigPoint("accurate", 640, 1), meter)
roi = ap.run_one_video(det, script, ap.ConfigPoint("accurate", 640, 1, 1.8), meter)
print(f"energy full={full.energy_j:.2f} J roi={roi.energy_j:.2f} J  event F1 {full.a_ev:.3f} -> {roi.a_ev:.3f}")
