"""Constraint- and telemetry-driven selection over a profiled ACE table.

Each control step turns application budgets into slacks, live telemetry
into pressures, both into adaptive ACE weights, then ranks the feasible
profiles and applies hysteresis before committing to an operating point.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .ace_profiler import AceProfile, ConfigPoint
from .normalize import ace_score, complexity_mix, minmax_normalize

DEFAULT_T_CAP = 85.0
DEFAULT_UTIL_THRESH = 90.0
DEFAULT_MARGIN = 0.02
DEFAULT_WINDOW = 3
EMA_FACTOR = 0.5
DEFAULT_TOP_K = 5
_EPS = 1e-12


@dataclass
class Constraints:
    a_min: float = 0.0
    fps_target: float = 30.0
    battery_capacity: float = 50.0  # Wh
    state_of_charge: float = 1.0
    horizon: float = 3600.0  # s
    background_power: float = 0.0  # W
    e_bud_override: Optional[float] = None  # J/frame

    def __post_init__(self):
        if self.fps_target <= 0:
            raise ValueError("fps_target must be positive")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")


@dataclass
class TelemetrySample:
    timestamp: float = 0.0
    battery_pct: float = 100.0
    cpu_temp_c: float = 40.0
    gpu_temp_c: float = 40.0
    gpu_util_pct: float = 0.0
    power_w: float = 0.0
    # observed latency over profiled latency; 1 when running as profiled
    latency_scale: float = 1.0


@dataclass
class Slacks:
    s_lat: float
    s_energy: float
    s_acc: float


@dataclass
class Pressures:
    thermal: float
    util: float
    battery: float


@dataclass
class AceWeights:
    delta_a: float
    gamma_c: float
    eta_e: float

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.delta_a, self.gamma_c, self.eta_e)


@dataclass
class RankedEntry:
    point: ConfigPoint
    score: float
    a_norm: float
    c_norm: float
    e_norm: float


@dataclass
class Decision:
    chosen: ConfigPoint
    score: float
    top_k: list[RankedEntry]
    weights: AceWeights
    feasible_count: int
    timestamp: float = 0.0
    fallback: bool = False
    slacks: Optional[Slacks] = None
    pressures: Optional[Pressures] = None
    switched: bool = False

    def to_record(self) -> dict:
        return {
            "t": self.timestamp,
            "chosen": self.chosen.key(),
            "score": self.score,
            "weights": {"dA": self.weights.delta_a, "gC": self.weights.gamma_c, "eE": self.weights.eta_e},
            "slacks": asdict(self.slacks) if self.slacks else None,
            "pressures": asdict(self.pressures) if self.pressures else None,
            "feasible_count": self.feasible_count,
            "fallback": self.fallback,
            "top_k": [
                {**e.point.key(), "score": e.score, "a_norm": e.a_norm, "c_norm": e.c_norm, "e_norm": e.e_norm}
                for e in self.top_k
            ],
        }


# -- budgets and slacks -------------------------------------------------------


def latency_budget(fps_target: float) -> float:
    if fps_target <= 0:
        raise ValueError("fps_target must be positive")
    return 1.0 / fps_target


def energy_budget(c: Constraints) -> float:
    """Usable battery energy net of background draw, spread over the horizon's frames."""
    if c.e_bud_override is not None:
        return c.e_bud_override
    usable = c.battery_capacity * 3600.0 * c.state_of_charge - c.background_power * c.horizon
    return max(0.0, usable) / (c.fps_target * c.horizon)


def _lat(p: AceProfile, latency_scale: float = 1.0) -> float:
    return p.raw.l_eff * latency_scale


def feasible_set(
    profiles: Sequence[AceProfile], l_bud: float, e_bud: float, a_min: float, latency_scale: float = 1.0
) -> tuple[list[AceProfile], bool]:
    """Profiles meeting all three budgets; falls back to all with ``fallback=True``."""
    ok = [
        p
        for p in profiles
        if p.raw.a_blend >= a_min and _lat(p, latency_scale) <= l_bud and p.raw.e_per_frame <= e_bud
    ]
    if ok:
        return ok, False
    return list(profiles), True


def _clamp(x: float, lo: float, hi: float) -> float:
    return min(hi, max(lo, x))


def compute_slacks(
    profiles: Sequence[AceProfile], l_bud: float, e_bud: float, a_min: float, latency_scale: float = 1.0
) -> Slacks:
    if not profiles:
        raise ValueError("need at least one profile")
    min_l = min(_lat(p, latency_scale) for p in profiles)
    min_e = min(p.raw.e_per_frame for p in profiles)
    max_a = max(p.raw.a_blend for p in profiles)

    def headroom(budget: float, used: float) -> float:
        if math.isinf(budget):
            return 1.0
        if budget <= 0:
            return 0.0
        return _clamp((budget - used) / budget, 0.0, 1.0)

    if a_min >= 1.0:
        s_acc = 1.0 if max_a >= a_min else 0.0
    else:
        s_acc = _clamp((max_a - a_min) / (1.0 - a_min), 0.0, 1.0)
    return Slacks(headroom(l_bud, min_l), headroom(e_bud, min_e), s_acc)


def compute_pressures(
    sample: TelemetrySample, t_cap: float = DEFAULT_T_CAP, util_thresh: float = DEFAULT_UTIL_THRESH
) -> Pressures:
    if t_cap <= 0 or util_thresh <= 0:
        raise ValueError("pressure caps must be positive")
    return Pressures(
        thermal=_clamp(max(sample.cpu_temp_c, sample.gpu_temp_c) / t_cap, 0.0, 2.0),
        util=_clamp(sample.gpu_util_pct / util_thresh, 0.0, 2.0),
        battery=_clamp(1.0 - sample.battery_pct / 100.0, 0.0, 1.0),
    )


def adaptive_weights(slacks: Slacks, pressures: Pressures, accuracy_boost: float = 1.0) -> AceWeights:
    """Exponential raw weights from slacks and pressures, normalized to sum to one.

    ``accuracy_boost`` multiplies the raw accuracy weight (1 disables it).
    """
    d = math.exp(2.0 * slacks.s_acc) * math.exp(1.0 - pressures.battery) * accuracy_boost
    g = math.exp(3.0 * (1.0 - slacks.s_lat)) * math.exp(2.5 * pressures.thermal) * math.exp(1.5 * pressures.util)
    e = math.exp(2.5 * (1.0 - slacks.s_energy)) * math.exp(3.0 * pressures.battery)
    total = d + g + e
    return AceWeights(d / total, g / total, e / total)


# -- ranking ------------------------------------------------------------------


def normalized_axes(profiles: Sequence[AceProfile], latency_scale: float = 1.0):
    """Recompute (A, C, E) normalized axes across ``profiles``."""
    a = minmax_normalize([p.raw.a_blend for p in profiles])
    c, _, _ = complexity_mix([_lat(p, latency_scale) for p in profiles], [p.raw.c_flop for p in profiles])
    e = minmax_normalize([p.raw.e_per_frame for p in profiles])
    return a, c, e


def _order(p: ConfigPoint):
    return (p.model, p.resolution, p.stride, p.roi_scale or 0.0)


def rank(
    profiles: Sequence[AceProfile],
    weights: AceWeights,
    candidates: Optional[Sequence[AceProfile]] = None,
    latency_scale: float = 1.0,
) -> list[RankedEntry]:
    """Score ``candidates`` (default: all) on axes normalized over all ``profiles``.

    Sorted by descending score, then lower energy, lower complexity and
    config order. Returns the full ranking.
    """
    if not profiles:
        raise ValueError("no profiles to rank")
    a, c, e = normalized_axes(profiles, latency_scale)
    s = ace_score(a, c, e, weights.as_tuple())
    allowed = None if candidates is None else {id(p) for p in candidates}
    entries = [
        RankedEntry(p.point, float(s[i]), float(a[i]), float(c[i]), float(e[i]))
        for i, p in enumerate(profiles)
        if allowed is None or id(p) in allowed
    ]
    entries.sort(key=lambda r: (-r.score, r.e_norm, r.c_norm, _order(r.point)))
    return entries


class Hysteresis:
    """Hold the incumbent unless a challenger's smoothed score wins by a margin for a window.

    Scores are smoothed per configuration with an EMA (factor 0.5); a
    challenger must lead the incumbent by at least ``margin`` for ``window``
    consecutive evaluations before the switch happens.
    """

    def __init__(self, margin: float = DEFAULT_MARGIN, window: int = DEFAULT_WINDOW, factor: float = EMA_FACTOR):
        if window < 1:
            raise ValueError("window must be >= 1")
        self.margin = margin
        self.window = window
        self.factor = factor
        self.ema: dict[ConfigPoint, float] = {}
        self.incumbent: Optional[ConfigPoint] = None
        self._challenger: Optional[ConfigPoint] = None
        self._streak = 0

    def update(self, ranking: Sequence[RankedEntry]) -> tuple[RankedEntry, bool]:
        """Feed one ranking; returns the held entry and whether it changed."""
        if not ranking:
            raise ValueError("empty ranking")
        for r in ranking:
            prev = self.ema.get(r.point)
            self.ema[r.point] = r.score if prev is None else self.factor * prev + (1 - self.factor) * r.score
        present = {r.point: r for r in ranking}
        if self.incumbent not in present:
            switched = self.incumbent is not None
            self._set(ranking[0].point)
            return ranking[0], switched
        inc_score = self.ema[self.incumbent]
        best = max(
            (r for r in ranking if r.point != self.incumbent),
            key=lambda r: self.ema[r.point],
            default=None,
        )
        if best is not None and self.ema[best.point] - inc_score >= self.margin - _EPS:
            if best.point == self._challenger:
                self._streak += 1
            else:
                self._challenger, self._streak = best.point, 1
            if self._streak >= self.window:
                self._set(best.point)
                return best, True
        else:
            self._challenger, self._streak = None, 0
        return present[self.incumbent], False

    def _set(self, point: ConfigPoint) -> None:
        self.incumbent = point
        self._challenger, self._streak = None, 0


def smooth_and_hold(state: Hysteresis, ranking: Sequence[RankedEntry]) -> RankedEntry:
    return state.update(ranking)[0]


# -- control loop -------------------------------------------------------------


class RuntimeSelector:
    """Single-loop controller owning the hysteresis state and last telemetry."""

    def __init__(
        self,
        profiles: Sequence[AceProfile],
        constraints: Constraints,
        t_cap: float = DEFAULT_T_CAP,
        util_thresh: float = DEFAULT_UTIL_THRESH,
        top_k: int = DEFAULT_TOP_K,
        margin: float = DEFAULT_MARGIN,
        window: int = DEFAULT_WINDOW,
        accuracy_boost: float = 1.0,
        fixed_weights: Optional[AceWeights] = None,
        live_soc: bool = True,
    ):
        self.profiles = list(profiles)
        self.constraints = constraints
        self.t_cap = t_cap
        self.util_thresh = util_thresh
        self.top_k = top_k
        self.hysteresis = Hysteresis(margin, window)
        self.accuracy_boost = accuracy_boost
        self.fixed_weights = fixed_weights
        self.live_soc = live_soc
        self.last_sample = TelemetrySample()

    def step(self, sample: Optional[TelemetrySample] = None, t: Optional[float] = None) -> Decision:
        if not self.profiles:
            raise ValueError("no profiles loaded")
        if sample is not None:
            self.last_sample = sample
        sample = self.last_sample
        c = self.constraints
        if self.live_soc and sample is not None:
            # the energy budget follows the measured charge, not the configured one
            c = replace(c, state_of_charge=min(1.0, max(0.0, sample.battery_pct / 100.0)))
        scale = sample.latency_scale
        l_bud = latency_budget(c.fps_target)
        e_bud = energy_budget(c)
        feasible, fallback = feasible_set(self.profiles, l_bud, e_bud, c.a_min, scale)
        slacks = compute_slacks(feasible, l_bud, e_bud, c.a_min, scale)
        pressures = compute_pressures(sample, self.t_cap, self.util_thresh)
        weights = self.fixed_weights or adaptive_weights(slacks, pressures, self.accuracy_boost)
        ranking = rank(self.profiles, weights, feasible, latency_scale=scale)
        held, switched = self.hysteresis.update(ranking)
        return Decision(
            chosen=held.point,
            score=held.score,
            top_k=[held] + [r for r in ranking if r.point != held.point][: self.top_k - 1],
            weights=weights,
            feasible_count=0 if fallback else len(feasible),
            timestamp=sample.timestamp if t is None else t,
            fallback=fallback,
            slacks=slacks,
            pressures=pressures,
            switched=switched,
        )


def control_step(selector: RuntimeSelector, sample: Optional[TelemetrySample] = None) -> Decision:
    return selector.step(sample)


# -- telemetry I/O ------------------------------------------------------------

TELEMETRY_COLUMNS = ("timestamp", "battery_pct", "cpu_temp", "gpu_temp", "gpu_util", "power_w")


def read_telemetry_csv(path) -> list[TelemetrySample]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(TELEMETRY_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: telemetry CSV missing columns {sorted(missing)}")
        for row in reader:
            out.append(
                TelemetrySample(
                    timestamp=float(row["timestamp"]),
                    battery_pct=float(row["battery_pct"]) if row["battery_pct"] else 100.0,
                    cpu_temp_c=float(row["cpu_temp"]),
                    gpu_temp_c=float(row["gpu_temp"]),
                    gpu_util_pct=float(row["gpu_util"]),
                    power_w=float(row["power_w"]),
                    latency_scale=float(row.get("latency_scale") or 1.0),
                )
            )
    return out


def write_telemetry_csv(path, samples: Iterable[TelemetrySample]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TELEMETRY_COLUMNS)
        for s in samples:
            w.writerow([s.timestamp, s.battery_pct, s.cpu_temp_c, s.gpu_temp_c, s.gpu_util_pct, s.power_w])


def live_sample() -> TelemetrySample:
    """Best-effort single reading of the host's battery and temperatures."""
    import time

    import psutil

    sample = TelemetrySample(timestamp=time.time())
    battery = psutil.sensors_battery() if hasattr(psutil, "sensors_battery") else None
    if battery is not None:
        sample.battery_pct = float(battery.percent)
    temps = psutil.sensors_temperatures() if hasattr(psutil, "sensors_temperatures") else {}
    readings = [t.current for entries in temps.values() for t in entries if t.current]
    if readings:
        sample.cpu_temp_c = sample.gpu_temp_c = float(max(readings))
    return sample


def write_decision_log(fh, decision: Decision) -> None:
    fh.write(json.dumps(decision.to_record()) + "\n")


def weights_array(decisions: Sequence[Decision]) -> np.ndarray:
    return np.array([d.weights.as_tuple() for d in decisions])
