"""Single-hand ROI gating with a constant-velocity Kalman filter.

While no track is active the detector sees the full frame. Once a hand is
found, each frame is handled by predicting the box, cropping a square ROI
around the prediction, and running the detector on the crop only. A run of
``miss_budget`` empty crops drops the track and full-frame acquisition
resumes.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .temporal_metrics import Box, Detection, iou

# state: cx, cy, w, h, vx, vy
_F = np.eye(6)
_F[0, 4] = _F[1, 5] = 1.0
_H = np.eye(4, 6)


@dataclass(frozen=True)
class TrackerParams:
    roi_scale: float = 1.8
    iou_gate: float = 0.5
    miss_budget: int = 8
    q_pos: float = 1.0
    q_vel: float = 10.0
    q_size: float = 4.0
    r_meas: float = 4.0
    p0_vel: float = 100.0

    def __post_init__(self):
        if self.roi_scale < 1:
            raise ValueError("roi_scale must be >= 1")
        if not 0 < self.iou_gate < 1:
            raise ValueError("iou_gate must lie in (0, 1)")
        if self.miss_budget < 1:
            raise ValueError("miss_budget must be >= 1")


@dataclass
class KalmanState:
    mean: np.ndarray
    covariance: np.ndarray

    @property
    def box(self) -> Box:
        cx, cy, w, h = self.mean[:4]
        return (float(cx), float(cy), float(w), float(h))


@dataclass(frozen=True)
class Roi:
    x0: float
    y0: float
    width: float
    height: float
    clipped: bool = False

    @property
    def pixels(self) -> float:
        return self.width * self.height

    def contains(self, x: float, y: float) -> bool:
        return self.x0 <= x <= self.x0 + self.width and self.y0 <= y <= self.y0 + self.height

    def to_list(self) -> list[float]:
        return [self.x0, self.y0, self.width, self.height]


def _process_noise(p: TrackerParams) -> np.ndarray:
    return np.diag([p.q_pos, p.q_pos, p.q_size, p.q_size, p.q_vel, p.q_vel])


def kf_init(box: Box, params: TrackerParams) -> KalmanState:
    mean = np.array([*box, 0.0, 0.0], dtype=float)
    cov = np.diag([params.r_meas] * 4 + [params.p0_vel] * 2)
    return KalmanState(mean, cov)


def kf_predict(state: KalmanState, params: TrackerParams = TrackerParams()) -> KalmanState:
    """Constant-velocity step for the center; size follows a random walk."""
    mean = _F @ state.mean
    mean[2:4] = np.maximum(mean[2:4], 1.0)
    cov = _F @ state.covariance @ _F.T + _process_noise(params)
    return KalmanState(mean, cov)


def kf_update(state: KalmanState, box: Box, params: TrackerParams = TrackerParams()) -> KalmanState:
    z = np.asarray(box, dtype=float)
    P = state.covariance
    R = np.eye(4) * params.r_meas
    S = _H @ P @ _H.T + R
    K = np.linalg.solve(S, _H @ P).T
    mean = state.mean + K @ (z - _H @ state.mean)
    I_KH = np.eye(6) - K @ _H
    cov = I_KH @ P @ I_KH.T + K @ R @ K.T  # Joseph form keeps it symmetric PSD
    mean[2:4] = np.maximum(mean[2:4], 1.0)
    return KalmanState(mean, 0.5 * (cov + cov.T))


def make_roi(box: Box, s: float, frame_size: tuple[float, float]) -> Roi:
    """Square crop of side ``s * max(w, h)`` centred on ``box``.

    Near the border the square is shifted inward; it is truncated only when
    it exceeds the frame itself.
    """
    if s < 1:
        raise ValueError("ROI scale must be >= 1")
    cx, cy, w, h = box
    if w <= 0 or h <= 0:
        raise ValueError(f"degenerate box {box}")
    W, H = frame_size
    side = s * max(w, h)
    rw, rh = min(side, W), min(side, H)
    x0 = min(max(cx - side / 2, 0.0), W - rw)
    y0 = min(max(cy - side / 2, 0.0), H - rh)
    clipped = rw < side or rh < side or x0 != cx - side / 2 or y0 != cy - side / 2
    return Roi(x0, y0, rw, rh, clipped)


def full_frame(frame_size: tuple[float, float]) -> Roi:
    return Roi(0.0, 0.0, float(frame_size[0]), float(frame_size[1]))


def clip_box(box: Box, frame_size: tuple[float, float]) -> Optional[Box]:
    cx, cy, w, h = box
    W, H = frame_size
    x0, y0 = max(0.0, cx - w / 2), max(0.0, cy - h / 2)
    x1, y1 = min(W, cx + w / 2), min(H, cy + h / 2)
    if x1 <= x0 or y1 <= y0:
        return None
    return ((x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0)


RoiDetector = Callable[[int, Roi], object]


def detect_in_roi(detector: RoiDetector, frame: int, roi: Roi) -> tuple[list[Detection], object]:
    """Run the detector on the crop and map its boxes to full-frame pixels.

    The detector returns ROI-local detections, either as a list or as an
    object with a ``detections`` attribute (returned untouched as the second
    element for cost accounting).
    """
    result = detector(frame, roi)
    local = getattr(result, "detections", result) or []
    mapped = [
        Detection(d.frame, (d.box[0] + roi.x0, d.box[1] + roi.y0, d.box[2], d.box[3]), d.class_id, d.confidence)
        for d in local
    ]
    return mapped, result


@dataclass
class TrackState:
    active: bool = False
    kalman: Optional[KalmanState] = None
    misses: int = 0

    def reset(self) -> None:
        self.active, self.kalman, self.misses = False, None, 0


def gate_and_update(
    state: TrackState, predicted: KalmanState, measured: Box, params: TrackerParams
) -> TrackState:
    """Accept the measurement if it overlaps the prediction enough, else re-seed."""
    if iou(measured, predicted.box) >= params.iou_gate:
        state.kalman = kf_update(predicted, measured, params)
    else:
        state.kalman = kf_init(measured, params)
    state.misses = 0
    return state


@dataclass
class FrameLog:
    frame: int
    box: Optional[Detection]
    track_active: bool
    roi: Roi
    processed_pixels: float
    predicted: Optional[Box] = None
    latency_s: Optional[float] = None
    energy_j: Optional[float] = None

    def to_record(self) -> dict:
        return {
            "frame": self.frame,
            "box": None if self.box is None else [*self.box.box, self.box.class_id, self.box.confidence],
            "track_active": self.track_active,
            "roi": self.roi.to_list(),
            "processed_pixels": self.processed_pixels,
        }


class RoiTracker:
    """Stateful single-stream tracker; call :meth:`step` once per frame."""

    def __init__(self, frame_size: tuple[float, float], params: TrackerParams = TrackerParams()):
        self.frame_size = frame_size
        self.params = params
        self.state = TrackState()

    def step(self, frame: int, detector: RoiDetector) -> FrameLog:
        p = self.params
        st = self.state
        predicted = None
        was_active = st.active
        if not st.active:
            roi = full_frame(self.frame_size)
            dets, raw = detect_in_roi(detector, frame, roi)
            best = max(dets, key=lambda d: d.confidence) if dets else None
            if best is not None:
                st.kalman = kf_init(best.box, p)
                st.active, st.misses = True, 0
        else:
            pred_state = kf_predict(st.kalman, p)
            predicted = pred_state.box
            roi = make_roi(predicted, p.roi_scale, self.frame_size)
            dets, raw = detect_in_roi(detector, frame, roi)
            best = max(dets, key=lambda d: d.confidence) if dets else None
            if best is None:
                st.kalman = pred_state
                st.misses += 1
                if st.misses >= p.miss_budget:
                    st.reset()
            else:
                gate_and_update(st, pred_state, best.box, p)
        emitted = None
        if best is not None:
            clipped = clip_box(best.box, self.frame_size)
            if clipped is not None:
                emitted = Detection(frame, clipped, best.class_id, best.confidence)
        return FrameLog(
            frame=frame,
            box=emitted,
            track_active=was_active,
            roi=roi,
            processed_pixels=roi.pixels,
            predicted=predicted,
            latency_s=getattr(raw, "latency_s", None),
            energy_j=getattr(raw, "energy_j", None),
        )


def step(tracker: RoiTracker, frame: int, detector: RoiDetector) -> FrameLog:
    return tracker.step(frame, detector)


def run_tracker(
    frames: Sequence[int], detector: RoiDetector, frame_size: tuple[float, float], params: TrackerParams = TrackerParams()
) -> list[FrameLog]:
    tracker = RoiTracker(frame_size, params)
    return [tracker.step(f, detector) for f in frames]


def replay_detector(detections: dict[int, Sequence[Detection]]) -> RoiDetector:
    """Detector backed by recorded full-frame detections.

    A recorded box is visible in a crop when its centre lies inside; it is
    returned clipped to the crop, in crop-local coordinates.
    """

    def detect(frame: int, roi: Roi) -> list[Detection]:
        out = []
        for d in detections.get(frame, ()):
            if not roi.contains(d.box[0], d.box[1]):
                continue
            clipped = clip_box(
                (d.box[0] - roi.x0, d.box[1] - roi.y0, d.box[2], d.box[3]), (roi.width, roi.height)
            )
            if clipped is not None:
                out.append(Detection(frame, clipped, d.class_id, d.confidence))
        return out

    return detect


def write_track_log(path, logs: Sequence[FrameLog]) -> None:
    with open(path, "w") as fh:
        for rec in logs:
            fh.write(json.dumps(rec.to_record()) + "\n")
