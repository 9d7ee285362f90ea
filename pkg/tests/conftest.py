from importlib import resources

import pytest

from acesched import config_synth as cs
from acesched import sim_harness as sim


def data_path(name: str) -> str:
    return str(resources.files("acesched.data").joinpath(name))


@pytest.fixture(scope="session")
def toy_base():
    return cs.load_config(data_path("toy_base.json"))


@pytest.fixture(scope="session")
def two_tier():
    return sim.load_calibration(data_path("two_tier.json"))


@pytest.fixture(scope="session")
def two_tier_path():
    return data_path("two_tier.json")


@pytest.fixture(scope="session")
def two_tier_table(two_tier):
    from acesched import ace_profiler as ap

    videos = [sim.generate_timeline(100 + i, 3000, 0.1) for i in range(3)]
    return ap.build_table(
        list(two_tier), ap.DEFAULT_RESOLUTIONS, ap.DEFAULT_STRIDES, videos,
        lambda m, v: sim.SyntheticDetector(m, two_tier[m], v, seed=7), ap.SyntheticPowerMeter(),
        g640={m: c.g640 for m, c in two_tier.items()},
    )
