"""Device-calibrated accuracy/complexity/energy profiling over a config grid.

Every grid point ``(model, resolution, stride)``, optionally with ROI
tracking at a given crop scale, is run over a set of annotated videos. Accuracy comes from hold-last imputed predictions,
complexity from stride-aware latency (and optionally scaled GFLOPs), and
energy from an idle-subtracted power trace. The table is then min-max
normalized and scored.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional, Protocol, Sequence

import numpy as np

from .normalize import ace_score, complexity_mix, minmax_normalize
from .roi_tracker import RoiTracker, TrackerParams
from .temporal_metrics import (
    DEFAULT_CONF_THRESH,
    DEFAULT_DECAY,
    DEFAULT_LAMBDA,
    Box,
    Detection,
    GestureEvent,
    blended_accuracy,
    event_f1,
    frame_metrics,
    hold_last_impute,
)

log = logging.getLogger(__name__)

DEFAULT_RESOLUTIONS = (160, 320, 640)
DEFAULT_STRIDES = (1, 2, 3, 6)
WARMUP_CALLS = 5
NEUTRAL_WEIGHTS = (1 / 3, 1 / 3, 1 / 3)
REFERENCE_SIDE = 640


@dataclass(frozen=True, order=True)
class ConfigPoint:
    model: str
    resolution: int
    stride: int
    roi_scale: Optional[float] = None

    def __post_init__(self):
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")

    def key(self) -> dict:
        out = {"model": self.model, "resolution": self.resolution, "stride": self.stride}
        if self.roi_scale is not None:
            out["roi_scale"] = self.roi_scale
        return out


@dataclass
class RawProfile:
    a_fr: float
    a_ev: float
    a_blend: float
    l_mean: float  # seconds per inference call
    l_p90: float
    l_eff: float  # seconds per source frame
    e_per_frame: float  # joules per source frame
    mean_excess_power: float  # watts
    g640: Optional[float] = None
    c_flop: Optional[float] = None


@dataclass
class AceProfile:
    point: ConfigPoint
    raw: RawProfile
    a_norm: float = 0.0
    c_norm: float = 0.0
    e_norm: float = 0.0
    score: float = 0.0


@dataclass
class PowerTrace:
    timestamps: np.ndarray
    watts: np.ndarray
    idle_watts: float = 0.0

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=float)
        self.watts = np.asarray(self.watts, dtype=float)
        if self.timestamps.shape != self.watts.shape or self.timestamps.ndim != 1:
            raise ValueError("timestamps and watts must be 1-D arrays of equal length")
        if self.timestamps.size and np.any(np.diff(self.timestamps) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        if np.any(self.watts < 0):
            raise ValueError("power samples must be non-negative")


@dataclass
class OracleResult:
    """One detector invocation: detections plus its measured cost."""

    detections: list[Detection]
    latency_s: float
    energy_j: Optional[float] = None
    pixels: Optional[float] = None


class Detector(Protocol):
    def __call__(self, frame: int, resolution: int, region=None) -> OracleResult: ...


class Video(Protocol):
    total_frames: int
    gt: Mapping[int, Sequence[tuple[Box, int]]]
    events: Sequence[GestureEvent]


# -- scalar operations --------------------------------------------------------


def effective_latency(l_mean: float, k: int) -> float:
    if k < 1:
        raise ValueError("stride must be >= 1")
    return l_mean / k


def effective_flops(g640: float, r: float, k: int) -> float:
    if g640 <= 0:
        raise ValueError("g640 must be positive")
    if k < 1:
        raise ValueError("stride must be >= 1")
    return g640 * (r / REFERENCE_SIDE) ** 2 / k


def _positive_area(t: np.ndarray, y: np.ndarray) -> float:
    """Exact integral of max(y, 0) for the piecewise-linear interpolant of (t, y)."""
    dt = np.diff(t)
    y0, y1 = y[:-1], y[1:]
    both = (y0 >= 0) & (y1 >= 0)
    area = np.where(both, 0.5 * (y0 + y1) * dt, 0.0)
    cross = ((y0 > 0) & (y1 < 0)) | ((y0 < 0) & (y1 > 0))
    if np.any(cross):
        hi = np.maximum(y0[cross], y1[cross])
        span = np.abs(y1[cross] - y0[cross])
        area[cross] = 0.5 * hi * dt[cross] * hi / span
    return float(area.sum())


def integrate_energy(trace: PowerTrace, t0: float, t1: float, n_src: int) -> tuple[float, float]:
    """Idle-subtracted energy per source frame and mean excess power over [t0, t1]."""
    ts = trace.timestamps
    if ts.size == 0:
        raise ValueError("empty power trace")
    if n_src < 1:
        raise ValueError("need at least one source frame")
    if not t0 < t1:
        raise ValueError("integration window must satisfy t0 < t1")
    tol = 1e-9 * max(1.0, abs(ts[-1]))
    if t0 < ts[0] - tol or t1 > ts[-1] + tol:
        raise ValueError(f"window [{t0}, {t1}] outside trace span [{ts[0]}, {ts[-1]}]")
    inner = (ts > t0) & (ts < t1)
    t = np.concatenate(([t0], ts[inner], [t1]))
    w = np.interp(t, ts, trace.watts)
    energy = _positive_area(t, w - trace.idle_watts)
    return energy / n_src, energy / (t1 - t0)


def p90(samples: Sequence[float]) -> float:
    """Nearest-rank 90th percentile."""
    s = sorted(samples)
    if not s:
        return float("nan")
    return s[max(0, math.ceil(0.9 * len(s)) - 1)]


# -- power sources ------------------------------------------------------------


class SyntheticPowerMeter:
    """Builds a power trace from simulated call costs.

    Calls run back to back. Each is a trapezoid that leaves idle, ramps up
    over ``ramp_s`` (capped at a quarter of the call), holds, and returns to
    idle; the plateau is sized so the area above idle equals the call's
    energy exactly.
    """

    def __init__(self, idle_watts: float = 2.0, ramp_s: float = 1e-6):
        self.idle_watts = idle_watts
        self.ramp_s = ramp_s

    def trace_for(self, calls: Sequence[OracleResult]) -> tuple[PowerTrace, float, float]:
        idle = self.idle_watts
        ts, ws = [0.0], [idle]
        t = 0.0
        for c in calls:
            lat = max(c.latency_s, 1e-9)
            ramp = min(self.ramp_s, lat / 4)
            height = (c.energy_j or 0.0) / (lat - ramp)
            ts += [t + ramp, t + lat - ramp, t + lat]
            ws += [idle + height, idle + height, idle]
            t += lat
        if len(ts) == 1:
            ts.append(1e-6)
            ws.append(idle)
        return PowerTrace(np.array(ts), np.array(ws), idle), ts[0], ts[-1]


class ReplayPowerSource:
    """Uses a recorded trace; calls are laid on its clock from the trace start."""

    def __init__(self, trace: PowerTrace, gap_s: float = 0.0):
        self.trace = trace
        self.idle_watts = trace.idle_watts
        self.gap_s = gap_s
        self._cursor = float(trace.timestamps[0])

    def trace_for(self, calls: Sequence[OracleResult]) -> tuple[PowerTrace, float, float]:
        t0 = self._cursor
        t1 = t0 + sum(c.latency_s + self.gap_s for c in calls)
        self._cursor = t1
        return self.trace, t0, t1


def read_power_csv(path, idle_watts: float = 0.0) -> PowerTrace:
    """Read a ``timestamp_s,watts`` CSV (header optional)."""
    ts, ws = [], []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                t, w = float(row[0]), float(row[1])
            except ValueError:
                if not ts:
                    continue  # header
                raise
            ts.append(t)
            ws.append(w)
    return PowerTrace(np.array(ts), np.array(ws), idle_watts)


def write_power_csv(path, trace: PowerTrace) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp_s", "watts"])
        for t, p in zip(trace.timestamps, trace.watts):
            w.writerow([repr(float(t)), repr(float(p))])


# -- profiling ----------------------------------------------------------------


@dataclass
class VideoRun:
    a_fr: float
    a_ev: float
    latencies: list[float]
    energy_j: float
    duration_s: float
    n_src: int
    calls: list[OracleResult] = field(repr=False, default_factory=list)
    predictions: dict = field(repr=False, default_factory=dict)


def run_one_video(
    detector: Detector,
    video: Video,
    point: ConfigPoint,
    power,
    gamma: float = DEFAULT_DECAY,
    conf_thresh: float = DEFAULT_CONF_THRESH,
) -> VideoRun:
    """Run one configuration over one annotated video.

    ROI points need the video to expose ``frame_size``; the detector is then
    called with the tracker's crop as ``region``.
    """
    k = point.stride
    sparse: dict[int, list[Detection]] = {}
    calls: list[OracleResult] = []
    if point.roi_scale is not None:
        tracker = RoiTracker(video.frame_size, TrackerParams(roi_scale=point.roi_scale))

        def bound(f, roi):
            return detector(f, point.resolution, roi)

        for f in range(0, video.total_frames, k):
            entry = tracker.step(f, bound)
            calls.append(
                OracleResult([], entry.latency_s or 0.0, entry.energy_j, entry.processed_pixels)
            )
            if entry.box is not None:
                sparse[f] = [entry.box]
    else:
        for f in range(0, video.total_frames, k):
            res = detector(f, point.resolution)
            calls.append(res)
            if res.detections:
                # single-hand stream: keep the most confident box
                sparse[f] = [max(res.detections, key=lambda d: d.confidence)]
    dense = hold_last_impute(sparse, k, video.total_frames, gamma)
    _, _, a_fr = frame_metrics(dense, video.gt, conf_thresh=conf_thresh)
    a_ev = event_f1(dense, video.events, conf_thresh)
    trace, t0, t1 = power.trace_for(calls)
    e_frame, _ = integrate_energy(trace, t0, t1, video.total_frames)
    return VideoRun(
        a_fr=a_fr,
        a_ev=a_ev,
        latencies=[c.latency_s for c in calls],
        energy_j=e_frame * video.total_frames,
        duration_s=t1 - t0,
        n_src=video.total_frames,
        calls=calls,
        predictions=dense,
    )


def aggregate(
    point: ConfigPoint,
    runs: Sequence[VideoRun],
    lam: float = DEFAULT_LAMBDA,
    g640: Optional[float] = None,
    warmup: int = WARMUP_CALLS,
) -> RawProfile:
    a_fr = float(np.mean([r.a_fr for r in runs]))
    a_ev = float(np.mean([r.a_ev for r in runs]))
    lats = [x for r in runs for x in r.latencies]
    if len(lats) > warmup:
        lats = lats[warmup:]
    l_mean = float(np.mean(lats))
    energy = sum(r.energy_j for r in runs)
    duration = sum(r.duration_s for r in runs)
    n_src = sum(r.n_src for r in runs)
    return RawProfile(
        a_fr=a_fr,
        a_ev=a_ev,
        a_blend=blended_accuracy(a_ev, a_fr, lam),
        l_mean=l_mean,
        l_p90=p90(lats),
        l_eff=effective_latency(l_mean, point.stride),
        e_per_frame=energy / n_src,
        mean_excess_power=energy / duration if duration > 0 else 0.0,
        g640=g640,
        c_flop=effective_flops(g640, point.resolution, point.stride) if g640 else None,
    )


def score_table(profiles: Sequence[AceProfile], weights=NEUTRAL_WEIGHTS) -> list[AceProfile]:
    """Normalize the raw axes across the table and attach scores (in place)."""
    if not profiles:
        return []
    a = minmax_normalize([p.raw.a_blend for p in profiles])
    c, _, _ = complexity_mix([p.raw.l_eff for p in profiles], [p.raw.c_flop for p in profiles])
    e = minmax_normalize([p.raw.e_per_frame for p in profiles])
    s = ace_score(a, c, e, weights)
    for i, p in enumerate(profiles):
        p.a_norm, p.c_norm, p.e_norm, p.score = float(a[i]), float(c[i]), float(e[i]), float(s[i])
    return list(profiles)


def build_table(
    models: Iterable[str],
    resolutions: Iterable[int],
    strides: Iterable[int],
    videos: Sequence[Video],
    detector_for: Callable[[str, Video], Detector],
    power,
    g640: Optional[Mapping[str, float]] = None,
    lam: float = DEFAULT_LAMBDA,
    weights=NEUTRAL_WEIGHTS,
    gamma: float = DEFAULT_DECAY,
    conf_thresh: float = DEFAULT_CONF_THRESH,
    warmup: int = WARMUP_CALLS,
    roi_scales: Iterable[float] = (),
) -> list[AceProfile]:
    """Sweep models x resolutions x strides over the videos and score the table.

    Each ``roi_scales`` entry adds a tracked variant of every grid point.
    """
    models, resolutions, strides = list(models), list(resolutions), list(strides)
    variants = [None, *roi_scales]
    if not (models and resolutions and strides and videos):
        raise ValueError("every grid dimension and the video list must be non-empty")
    g640 = g640 or {}
    table: list[AceProfile] = []
    for m in models:
        for r in resolutions:
            for k, s in ((k, s) for k in strides for s in variants):
                point = ConfigPoint(m, r, k, s)
                runs = []
                for vi, video in enumerate(videos):
                    try:
                        runs.append(
                            run_one_video(detector_for(m, video), video, point, power, gamma, conf_thresh)
                        )
                    except Exception as exc:  # a failing video must not sink the grid point
                        log.warning("video %d failed at %s: %s", vi, point, exc)
                if not runs:
                    log.warning("no successful videos for %s; omitted", point)
                    continue
                table.append(AceProfile(point, aggregate(point, runs, lam, g640.get(m), warmup)))
    return score_table(table, weights)


# -- ace_profiles.json --------------------------------------------------------


def profile_to_row(p: AceProfile) -> dict:
    raw = p.raw
    return {
        "model": p.point.model,
        "resolution": p.point.resolution,
        "stride": p.point.stride,
        "roi_scale": p.point.roi_scale,
        "a_fr": raw.a_fr,
        "a_ev": raw.a_ev,
        "a_blend": raw.a_blend,
        "l_mean_ms": raw.l_mean * 1e3,
        "l_p90_ms": raw.l_p90 * 1e3,
        "l_eff_ms": raw.l_eff * 1e3,
        "g640": raw.g640,
        "c_flop": raw.c_flop,
        "e_mj_per_frame": raw.e_per_frame * 1e3,
        "mean_excess_w": raw.mean_excess_power,
        "a_norm": p.a_norm,
        "c_norm": p.c_norm,
        "e_norm": p.e_norm,
        "score": p.score,
    }


def profile_from_row(row: Mapping) -> AceProfile:
    try:
        point = ConfigPoint(
            str(row["model"]), int(row["resolution"]), int(row["stride"]), row.get("roi_scale")
        )
        l_mean = float(row["l_mean_ms"]) / 1e3
        raw = RawProfile(
            a_fr=float(row.get("a_fr", row["a_blend"])),
            a_ev=float(row.get("a_ev", row["a_blend"])),
            a_blend=float(row["a_blend"]),
            l_mean=l_mean,
            l_p90=float(row.get("l_p90_ms", row["l_mean_ms"])) / 1e3,
            l_eff=float(row.get("l_eff_ms", row["l_mean_ms"] / point.stride)) / 1e3,
            e_per_frame=float(row["e_mj_per_frame"]) / 1e3,
            mean_excess_power=float(row.get("mean_excess_w") or 0.0),
            g640=row.get("g640"),
            c_flop=row.get("c_flop"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"bad profile row {dict(row)!r}: {exc}") from exc
    return AceProfile(
        point,
        raw,
        float(row.get("a_norm", 0.0)),
        float(row.get("c_norm", 0.0)),
        float(row.get("e_norm", 0.0)),
        float(row.get("score", 0.0)),
    )


def save_profiles(profiles: Sequence[AceProfile], path) -> None:
    Path(path).write_text(json.dumps([profile_to_row(p) for p in profiles], indent=1) + "\n")


def load_profiles(path) -> list[AceProfile]:
    rows = json.loads(Path(path).read_text())
    if isinstance(rows, dict):
        rows = rows.get("profiles", [])
    if not isinstance(rows, list):
        raise ValueError(f"{path}: expected a JSON array of profiles")
    return [profile_from_row(r) for r in rows]
