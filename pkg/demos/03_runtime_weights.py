"""How the selector re-weights accuracy, complexity and energy as telemetry changes."""
from acesched import ace_profiler as ap
from acesched import runtime_selector as rs
from _data import bundled

table = ap.load_profiles(bundled("kf_roi_table.json"))
samples = {
    "cool, full battery": rs.TelemetrySample(battery_pct=100, cpu_temp_c=45, gpu_temp_c=50, gpu_util_pct=20),
    "hot GPU": rs.TelemetrySample(battery_pct=90, cpu_temp_c=70, gpu_temp_c=88, gpu_util_pct=95),
    "battery at 10%": rs.TelemetrySample(battery_pct=10, cpu_temp_c=45, gpu_temp_c=50, gpu_util_pct=20),
}
for label, sample in samples.items():
    sel = rs.RuntimeSelector(table, rs.Constraints(a_min=0.5, fps_target=15))
    d = sel.step(sample)
    w = d.weights
    print(f"{label:20s} dA={w.delta_a:.3f} gC={w.gamma_c:.3f} eE={w.eta_e:.3f} -> "
          f"{d.chosen.model} roi={d.chosen.roi_scale}")
