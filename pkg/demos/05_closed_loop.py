"""Adaptive control versus the best-accuracy fixed profile under each bundled scenario."""
from acesched import ace_profiler as ap
from acesched import sim_harness as sim
from _data import bundled

oracles = sim.load_calibration(bundled("two_tier.json"))
videos = [sim.generate_timeline(100 + i, 3000, 0.1) for i in range(3)]
table = ap.build_table(
    list(oracles), ap.DEFAULT_RESOLUTIONS, ap.DEFAULT_STRIDES, videos,
    lambda m, v: sim.SyntheticDetector(m, oracles[m], v, seed=7),
    ap.SyntheticPowerMeter(),
    g640={m: c.g640 for m, c in oracles.items()},
)
script = sim.generate_timeline(11, 20000, 0.03)

for name in ("balanced", "thermal-throttle", "low-battery", "high-accuracy"):
    out = sim.compare_fixed_vs_adaptive(table, sim.load_scenario(name), script, oracles, seed=11)
    f, a = out["fixed"], out["adaptive"]
    print(f"{name:17s} energy {f['energy_per_frame_mj']:.3f} -> {a['energy_per_frame_mj']:.3f} mJ/frame "
          f"(x{out['energy_ratio']:.2f})  event F1 {f['event_f1']:.3f} -> {a['event_f1']:.3f}  switches={a['switches']}")
