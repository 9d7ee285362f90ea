"""Hardware-free closed-loop simulation.

Synthetic detectors stand in for trained models: their latency grows with
the processed pixel count and their energy is proportional to it. Gesture
timelines are sparse bursts of boxes on piecewise constant-velocity paths,
and a first-order device model turns detector energy into battery,
temperature and utilization telemetry for the selector.
"""
from __future__ import annotations

import csv
import json
import math
import zlib
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .ace_profiler import AceProfile, ConfigPoint, OracleResult
from .roi_tracker import Roi, RoiTracker, TrackerParams
from .runtime_selector import AceWeights, Constraints, RuntimeSelector, TelemetrySample
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

REF_PIXELS = 640.0 * 640.0


# -- gesture timelines --------------------------------------------------------


@dataclass
class GestureScript:
    total_frames: int
    events: list[GestureEvent]
    boxes: dict[int, tuple[Box, int]]
    width: int = 1280
    height: int = 720
    fps: float = 30.0
    duty_cycle: float = 0.0
    seed: Optional[int] = None

    @property
    def frame_size(self) -> tuple[int, int]:
        return (self.width, self.height)

    @property
    def gt(self) -> dict[int, list[tuple[Box, int]]]:
        return {f: [entry] for f, entry in self.boxes.items()}

    def active_frames(self) -> int:
        return len(self.boxes)

    def to_dict(self) -> dict:
        return {
            "total_frames": self.total_frames,
            "width": self.width,
            "height": self.height,
            "fps": self.fps,
            "duty_cycle": self.duty_cycle,
            "seed": self.seed,
            "events": [{"class": e.class_id, "start": e.start_frame, "end": e.end_frame} for e in self.events],
            "boxes": {str(f): [*b, c] for f, (b, c) in sorted(self.boxes.items())},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "GestureScript":
        return cls(
            total_frames=int(d["total_frames"]),
            events=[GestureEvent(int(e["class"]), int(e["start"]), int(e["end"])) for e in d["events"]],
            boxes={int(f): (tuple(float(x) for x in v[:4]), int(v[4])) for f, v in d.get("boxes", {}).items()},
            width=int(d.get("width", 1280)),
            height=int(d.get("height", 720)),
            fps=float(d.get("fps", 30.0)),
            duty_cycle=float(d.get("duty_cycle", 0.0)),
            seed=d.get("seed"),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path) -> "GestureScript":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _trajectory(rng: np.random.Generator, length: int, size: tuple[int, int]) -> list[Box]:
    W, H = size
    side = rng.uniform(60, 140)
    w, h = side, side * rng.uniform(0.9, 1.3)
    cx = rng.uniform(w, W - w)
    cy = rng.uniform(h, H - h)
    v = rng.normal(0.0, 4.0, size=2)
    out = []
    for _ in range(length):
        out.append((float(cx), float(cy), float(w), float(h)))
        if rng.random() < 0.2:
            v = rng.normal(0.0, 4.0, size=2)
        cx, cy = cx + v[0], cy + v[1]
        # reflect off the borders so the hand stays in view
        if not w / 2 <= cx <= W - w / 2:
            v[0] = -v[0]
            cx = min(max(cx, w / 2), W - w / 2)
        if not h / 2 <= cy <= H - h / 2:
            v[1] = -v[1]
            cy = min(max(cy, h / 2), H - h / 2)
    return out


def generate_timeline(
    seed: int,
    total_frames: int = 10_000,
    duty_cycle: float = 0.03,
    mean_burst: float = 10.0,
    n_classes: int = 18,
    frame_size: tuple[int, int] = (1280, 720),
    fps: float = 30.0,
) -> GestureScript:
    """Sparse gesture bursts with geometric lengths and non-overlapping spans."""
    if not 0 < duty_cycle < 1:
        raise ValueError("duty_cycle must lie in (0, 1)")
    if mean_burst < 1:
        raise ValueError("mean_burst must be >= 1")
    rng = np.random.default_rng(seed)
    target = max(1, round(duty_cycle * total_frames))
    lengths: list[int] = []
    while sum(lengths) < target:
        lengths.append(int(rng.geometric(1.0 / mean_burst)))
    lengths[-1] -= sum(lengths) - target
    lengths = [n for n in lengths if n > 0]
    background = total_frames - target
    # bursts are separated by at least one background frame
    if background < len(lengths) - 1:
        raise ValueError("duty cycle too high for non-overlapping bursts")
    # random composition of the spare background frames into len+1 gaps
    spare = background - (len(lengths) - 1)
    cuts = np.sort(rng.integers(0, spare + 1, size=len(lengths)))
    gaps = np.diff(np.concatenate(([0], cuts, [spare])))
    events, boxes = [], {}
    f = int(gaps[0])
    for i, n in enumerate(lengths):
        cls = int(rng.integers(0, n_classes))
        events.append(GestureEvent(cls, f, f + n - 1))
        for j, box in enumerate(_trajectory(rng, n, frame_size)):
            boxes[f + j] = (box, cls)
        f += n + 1 + int(gaps[i + 1])
    return GestureScript(total_frames, events, boxes, frame_size[0], frame_size[1], fps, duty_cycle, seed)


# -- synthetic detectors ------------------------------------------------------


@dataclass
class OracleCalibration:
    """Behavior of one synthetic model; costs are quoted for a 640x640 input."""

    detect_prob: Union[float, Mapping[int, float]] = 0.95
    loc_noise_px: float = 2.0
    base_latency_ms: float = 10.0
    energy_mj_per_call: float = 5.0
    conf_mean: float = 0.8
    conf_std: float = 0.1
    fp_rate: float = 0.0
    g640: Optional[float] = None

    def prob_at(self, resolution: int) -> float:
        if isinstance(self.detect_prob, Mapping):
            table = {int(k): float(v) for k, v in self.detect_prob.items()}
            if resolution in table:
                return table[resolution]
            keys = sorted(table)
            return float(np.interp(resolution, keys, [table[k] for k in keys]))
        return float(self.detect_prob)

    @classmethod
    def from_dict(cls, d: Mapping) -> "OracleCalibration":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown calibration fields: {sorted(unknown)}")
        return cls(**d)


def load_calibration(path) -> dict[str, OracleCalibration]:
    doc = json.loads(Path(path).read_text())
    models = doc.get("models", doc)
    return {name: OracleCalibration.from_dict(v) for name, v in models.items()}


def _covers(region: Roi, frame_size: tuple[float, float]) -> bool:
    return region.width >= frame_size[0] and region.height >= frame_size[1]


def processed_pixels(resolution: int, region: Optional[Roi], frame_size: tuple[float, float]) -> float:
    """Input pixels the model touches: the letterboxed frame, or the crop at frame scale."""
    full = float(resolution) ** 2
    if region is None or _covers(region, frame_size):
        return full
    scale = resolution / max(frame_size)
    return min(full, region.pixels * scale * scale)


class SyntheticDetector:
    """Seeded stand-in for a trained detector over one gesture script.

    The hand is visible in a region when its centre lies inside it; visible
    boxes are reported with probability ``detect_prob``, jittered and in
    region-local coordinates. Randomness is keyed on (seed, model, frame,
    resolution, crop) so results do not depend on call order.
    """

    def __init__(self, name: str, calib: OracleCalibration, script: GestureScript, seed: int = 0,
                 latency_scale: float = 1.0):
        self.name = name
        self.calib = calib
        self.script = script
        self.seed = seed
        self.latency_scale = latency_scale
        self._tag = zlib.crc32(name.encode())

    def __call__(self, frame: int, resolution: int, region: Optional[Roi] = None) -> OracleResult:
        c = self.calib
        size = self.script.frame_size
        x0, y0 = (0.0, 0.0) if region is None else (region.x0, region.y0)
        rw, rh = size if region is None else (region.width, region.height)
        crop_key = 0 if region is None or _covers(region, size) else 1 + int(region.pixels)
        rng = np.random.default_rng([self.seed, self._tag, frame, resolution, crop_key])
        dets: list[Detection] = []
        gt = self.script.boxes.get(frame)
        if gt is not None:
            (cx, cy, w, h), cls = gt
            inside = x0 <= cx <= x0 + rw and y0 <= cy <= y0 + rh
            if inside and rng.random() < c.prob_at(resolution):
                jitter = rng.normal(0.0, c.loc_noise_px, size=4) if c.loc_noise_px > 0 else np.zeros(4)
                box = _clip_local(cx - x0 + jitter[0], cy - y0 + jitter[1], w + jitter[2], h + jitter[3], rw, rh)
                if box is not None:
                    conf = float(np.clip(rng.normal(c.conf_mean, c.conf_std), 0.05, 1.0)) if c.conf_std > 0 else c.conf_mean
                    dets.append(Detection(frame, box, cls, conf))
        if c.fp_rate > 0 and rng.random() < c.fp_rate:
            side = rng.uniform(40, 120)
            box = _clip_local(rng.uniform(0, rw), rng.uniform(0, rh), side, side, rw, rh)
            if box is not None:
                dets.append(Detection(frame, box, int(rng.integers(0, 18)), float(rng.uniform(0.3, 0.6))))
        px = processed_pixels(resolution, region, size)
        return OracleResult(
            detections=dets,
            latency_s=c.base_latency_ms / 1e3 * px / REF_PIXELS * self.latency_scale,
            energy_j=c.energy_mj_per_call / 1e3 * px / REF_PIXELS,
            pixels=px,
        )

    def at(self, resolution: int):
        """Bind a resolution, giving the ``(frame, roi)`` signature the tracker expects."""
        return lambda frame, roi: self(frame, resolution, roi)


def _clip_local(cx, cy, w, h, rw, rh) -> Optional[Box]:
    w, h = max(w, 1.0), max(h, 1.0)
    x0, y0 = max(0.0, cx - w / 2), max(0.0, cy - h / 2)
    x1, y1 = min(rw, cx + w / 2), min(rh, cy + h / 2)
    if x1 <= x0 or y1 <= y0:
        return None
    return (float((x0 + x1) / 2), float((y0 + y1) / 2), float(x1 - x0), float(y1 - y0))


def oracle_detect(model: SyntheticDetector, frame: int, resolution: int, region: Optional[Roi] = None) -> OracleResult:
    return model(frame, resolution, region)


# -- device model -------------------------------------------------------------


@dataclass
class DeviceModel:
    battery_capacity: float = 50.0  # Wh
    state_of_charge: float = 1.0
    idle_power: float = 2.0  # W, reported baseline
    background_power: float = 0.0  # W drawn from the battery besides the detector
    ambient_c: float = 30.0
    heat_coeff: float = 4.0  # degrees C per W at steady state
    tau_s: float = 60.0
    temp_c: Optional[float] = None
    throttle_c: Optional[float] = None
    throttle_factor: float = 1.5
    drawn_j: float = 0.0
    clock_s: float = 0.0

    def __post_init__(self):
        if self.temp_c is None:
            self.temp_c = self.ambient_c

    @property
    def throttling(self) -> bool:
        return self.throttle_c is not None and self.temp_c >= self.throttle_c

    def telemetry(self, util_pct: float = 0.0, power_w: Optional[float] = None) -> TelemetrySample:
        return TelemetrySample(
            timestamp=self.clock_s,
            battery_pct=100.0 * self.state_of_charge,
            cpu_temp_c=self.ambient_c + 0.8 * (self.temp_c - self.ambient_c),
            gpu_temp_c=self.temp_c,
            gpu_util_pct=util_pct,
            power_w=self.idle_power if power_w is None else power_w,
        )


def step_device(device: DeviceModel, energy_drawn_j: float, dt: float, busy_s: float = 0.0) -> TelemetrySample:
    """Advance the device by ``dt`` seconds after the detector drew ``energy_drawn_j``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    total_j = energy_drawn_j + device.background_power * dt
    device.state_of_charge = max(0.0, device.state_of_charge - total_j / (device.battery_capacity * 3600.0))
    device.drawn_j += energy_drawn_j
    power = energy_drawn_j / dt + device.background_power
    target = device.ambient_c + device.heat_coeff * power
    device.temp_c = target + (device.temp_c - target) * math.exp(-dt / device.tau_s)
    device.clock_s += dt
    util = min(100.0, 100.0 * busy_s / dt)
    return device.telemetry(util, device.idle_power + energy_drawn_j / dt)


# -- scenarios ----------------------------------------------------------------

SCENARIOS = ("balanced", "high-accuracy", "thermal-throttle", "low-battery")


@dataclass
class ScenarioConfig:
    name: str
    constraints: Constraints
    overrides: dict = field(default_factory=dict)
    device: dict = field(default_factory=dict)
    epoch_s: float = 5.0
    accuracy_boost: float = 1.0
    description: str = ""
    # optional inline calibration, same shape as a calibration file's "models"
    oracle: Optional[dict] = None

    def calibration(self) -> Optional[dict[str, OracleCalibration]]:
        if not self.oracle:
            return None
        return {name: OracleCalibration.from_dict(v) for name, v in self.oracle.items()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ScenarioConfig":
        return cls(
            name=d["name"],
            constraints=Constraints(**d.get("constraints", {})),
            overrides=dict(d.get("overrides", {})),
            device=dict(d.get("device", {})),
            epoch_s=float(d.get("epoch_s", 5.0)),
            accuracy_boost=float(d.get("accuracy_boost", 1.0)),
            description=d.get("description", ""),
            oracle=d.get("oracle"),
        )

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "description": self.description,
            "constraints": asdict(self.constraints),
            "overrides": self.overrides,
            "device": self.device,
            "epoch_s": self.epoch_s,
            "accuracy_boost": self.accuracy_boost,
            "oracle": self.oracle,
        }


def load_scenario(name_or_path: Union[str, Path]) -> ScenarioConfig:
    """Load a bundled scenario by name or a scenario JSON file."""
    if str(name_or_path) in SCENARIOS:
        text = resources.files("acesched.data.scenarios").joinpath(f"{name_or_path}.json").read_text()
    else:
        text = Path(name_or_path).read_text()
    return ScenarioConfig.from_dict(json.loads(text))


def _apply_overrides(sample: TelemetrySample, overrides: Mapping, t: float) -> TelemetrySample:
    """Overrides are constants, or ``[[t_start, value], ...]`` step schedules."""
    fields = {}
    for key, val in overrides.items():
        if isinstance(val, list):
            current = None
            for t_start, v in val:
                if t >= t_start:
                    current = v
            if current is None:
                continue
            val = current
        fields[key] = float(val)
    return replace(sample, **fields)


# -- closed loop --------------------------------------------------------------


@dataclass
class RunResult:
    records: list[dict]
    summary: dict
    predictions: dict[int, list[Detection]] = field(repr=False, default_factory=dict)

    def write_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for r in self.records:
                fh.write(json.dumps(r) + "\n")


def _impute_epoch(sparse: dict[int, list[Detection]], f0: int, f1: int, k: int, gamma: float) -> dict[int, list[Detection]]:
    local = {f - f0: [replace(d, frame=f - f0) for d in dets] for f, dets in sparse.items()}
    dense = hold_last_impute(local, k, f1 - f0, gamma)
    return {f + f0: [replace(d, frame=f + f0) for d in dets] for f, dets in dense.items()}


def run_closed_loop(
    profiles: Sequence[AceProfile],
    selector: RuntimeSelector,
    scenario: ScenarioConfig,
    script: GestureScript,
    oracles: Mapping[str, OracleCalibration],
    seed: int = 0,
    tracker_params: TrackerParams = TrackerParams(),
    gamma: float = DEFAULT_DECAY,
    conf_thresh: float = DEFAULT_CONF_THRESH,
    lam: float = DEFAULT_LAMBDA,
) -> RunResult:
    """Drive the selector over ``script`` one telemetry epoch at a time."""
    known = {p.point.model for p in profiles}
    missing = known - set(oracles)
    if missing:
        raise KeyError(f"no oracle for models {sorted(missing)}")
    device = DeviceModel(**scenario.device)
    epoch_frames = max(1, round(scenario.epoch_s * script.fps))
    sample = device.telemetry()
    records: list[dict] = []
    predictions: dict[int, list[Detection]] = {}
    tracker: Optional[RoiTracker] = None
    tracker_point: Optional[ConfigPoint] = None
    total_energy = total_latency = 0.0
    total_calls = 0
    latency_scale = 1.0
    prev: Optional[ConfigPoint] = None
    switches = 0
    for epoch, f0 in enumerate(range(0, script.total_frames, epoch_frames)):
        f1 = min(script.total_frames, f0 + epoch_frames)
        t = device.clock_s
        sample = _apply_overrides(replace(sample, timestamp=t, latency_scale=latency_scale), scenario.overrides, t)
        decision = selector.step(sample, t)
        point = decision.chosen
        if prev is not None and point != prev:
            switches += 1
        prev = point
        slow = sample.latency_scale * (device.throttle_factor if device.throttling else 1.0)
        det = SyntheticDetector(point.model, oracles[point.model], script, seed, latency_scale=slow)
        k = point.stride
        sparse: dict[int, list[Detection]] = {}
        energy = latency = pixels = 0.0
        calls = active = 0
        if point.roi_scale is not None:
            if tracker is None or tracker_point != point:
                tracker = RoiTracker(script.frame_size, replace(tracker_params, roi_scale=point.roi_scale))
                tracker_point = point
            bound = det.at(point.resolution)
            for f in range(f0, f1, k):
                entry = tracker.step(f, bound)
                energy += entry.energy_j or 0.0
                latency += entry.latency_s or 0.0
                pixels += processed_pixels(point.resolution, entry.roi, script.frame_size)
                active += entry.track_active
                calls += 1
                if entry.box is not None:
                    sparse[f] = [entry.box]
        else:
            tracker, tracker_point = None, None
            for f in range(f0, f1, k):
                res = det(f, point.resolution)
                energy += res.energy_j
                latency += res.latency_s
                pixels += res.pixels
                calls += 1
                if res.detections:
                    sparse[f] = [max(res.detections, key=lambda d: d.confidence)]
        predictions.update(_impute_epoch(sparse, f0, f1, k, gamma))
        profiled = next((p.raw.l_mean for p in profiles if p.point == point), None)
        mean_lat = latency / calls if calls else 0.0
        # measured slowdown is fed back as the next sample's latency scale
        latency_scale = mean_lat / profiled if profiled and calls else 1.0
        step_dt = (f1 - f0) / script.fps
        next_sample = step_device(device, energy, step_dt, busy_s=latency)
        total_energy += energy
        total_latency += latency
        total_calls += calls
        rec = decision.to_record()
        rec.update(
            epoch=epoch,
            frames=[f0, f1],
            telemetry=asdict(sample),
            energy_j=energy,
            calls=calls,
            mean_latency_ms=mean_lat * 1e3,
            processed_pixels=pixels,
            track_active_frames=active,
        )
        records.append(rec)
        sample = next_sample
    _, _, a_fr = frame_metrics(predictions, script.gt, conf_thresh=conf_thresh)
    a_ev = event_f1(predictions, script.events, conf_thresh)
    summary = {
        "scenario": scenario.name,
        "frames": script.total_frames,
        "epochs": len(records),
        "switches": switches,
        "energy_j": total_energy,
        "device_drawn_j": device.drawn_j,
        "energy_per_frame_mj": 1e3 * total_energy / script.total_frames,
        "mean_latency_ms": 1e3 * total_latency / total_calls if total_calls else 0.0,
        "calls": total_calls,
        "frame_f1": a_fr,
        "event_f1": a_ev,
        "blended": blended_accuracy(a_ev, a_fr, lam),
        "final_soc": device.state_of_charge,
        "final_temp_c": device.temp_c,
    }
    return RunResult(records, summary, predictions)


def best_accuracy_profile(profiles: Sequence[AceProfile]) -> AceProfile:
    """Highest blended accuracy; ties go to the cheaper energy."""
    return min(profiles, key=lambda p: (-p.raw.a_blend, p.raw.e_per_frame, p.point.model, p.point.resolution, p.point.stride))


def compare_fixed_vs_adaptive(
    profiles: Sequence[AceProfile],
    scenario: ScenarioConfig,
    script: GestureScript,
    oracles: Mapping[str, OracleCalibration],
    seed: int = 0,
    fixed_weights: Optional[AceWeights] = None,
) -> dict:
    """Run the best-accuracy fixed profile and the adaptive controller on the same script."""
    if len(profiles) < 2:
        raise ValueError("comparison needs at least two profiles")
    best = best_accuracy_profile(profiles)
    fixed_sel = RuntimeSelector([best], scenario.constraints)
    fixed = run_closed_loop([best], fixed_sel, scenario, script, oracles, seed)
    adaptive_sel = RuntimeSelector(
        profiles, scenario.constraints, accuracy_boost=scenario.accuracy_boost, fixed_weights=fixed_weights
    )
    adaptive = run_closed_loop(profiles, adaptive_sel, scenario, script, oracles, seed)
    f, a = fixed.summary, adaptive.summary
    return {
        "scenario": scenario.name,
        "fixed_point": best.point.key(),
        "fixed": f,
        "adaptive": a,
        "energy_ratio": a["energy_per_frame_mj"] / f["energy_per_frame_mj"] if f["energy_per_frame_mj"] else float("nan"),
        "event_f1_delta": a["event_f1"] - f["event_f1"],
        "adaptive_records": adaptive.records,
    }


SUMMARY_COLUMNS = (
    "scenario", "run", "energy_per_frame_mj", "mean_latency_ms", "event_f1", "frame_f1", "blended", "switches",
    "final_soc", "final_temp_c",
)


def write_summary_csv(path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow(r)
