"""Profile the two-tier synthetic detectors over the default resolution/stride grid."""
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
    roi_scales=(1.8,),
)
ap.save_profiles(table, "ace_profiles.json")

print(f"{'model':9s} {'res':>4s} {'k':>2s} {'roi':>4s} {'A':>6s} {'L ms':>7s} {'E mJ':>7s} {'score':>7s}")
for p in sorted(table, key=lambda p: -p.score)[:12]:
    pt = p.point
    print(f"{pt.model:9s} {pt.resolution:4d} {pt.stride:2d} {pt.roi_scale or '-':>4} "
          f"{p.raw.a_blend:6.3f} {1e3 * p.raw.l_mean / pt.stride:7.2f} {1e3 * p.raw.e_per_frame:7.3f} {p.score:7.3f}")
print(f"{len(table)} profiles written to ace_profiles.json")
