"""Derive two compact detector families from the bundled three-head toy graph."""
import json

from acesched import config_synth as cs
from _data import bundled

base = cs.load_config(bundled("toy_base.json"))
print("base:", json.dumps(cs.summary(base)))

families = {
    "solar": cs.FamilySpec(0.25, 0.125, 320, frozenset({"P3"})),
    "mercury": cs.FamilySpec(0.18, 0.15, 192, frozenset({"P3"}), simplify_attention=True),
}
for name, spec in families.items():
    g = cs.synthesize_family(base, spec)
    info = cs.summary(g)
    print(f"{name:8s} layers={info['layers']:3d} heads={info['heads']} params~{info['param_proxy']:,}")
    # every retained layer feeds the detect node
    assert cs.reachable_from_detect(g) == set(range(len(g.layers)))
