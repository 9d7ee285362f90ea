"""Frame- and event-level detection metrics for temporally annotated streams.

Predictions and ground truth are keyed by frame index. Boxes are
``(cx, cy, w, h)`` in pixels.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

Box = tuple[float, float, float, float]

DEFAULT_DECAY = 0.25
DEFAULT_CONF_THRESH = 0.25
DEFAULT_LAMBDA = 0.6


@dataclass(frozen=True)
class Detection:
    frame: int
    box: Box
    class_id: int
    confidence: float = 1.0

    def __post_init__(self):
        if self.box[2] <= 0 or self.box[3] <= 0:
            raise ValueError(f"box must have positive size: {self.box}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence out of range: {self.confidence}")


@dataclass(frozen=True)
class GestureEvent:
    class_id: int
    start_frame: int
    end_frame: int

    def __post_init__(self):
        if self.start_frame > self.end_frame:
            raise ValueError("event start after end")


@dataclass(frozen=True)
class MetricsReport:
    frame_precision: float
    frame_recall: float
    frame_f1: float
    event_f1: float
    blended: float
    counts: dict

    def to_dict(self) -> dict:
        return asdict(self)


Predictions = Mapping[int, Sequence[Detection]]
# ground truth per frame: list of (box, class_id)
GroundTruth = Mapping[int, Sequence[tuple[Box, int]]]


def iou(a: Box, b: Box) -> float:
    ax0, ay0, ax1, ay1 = a[0] - a[2] / 2, a[1] - a[3] / 2, a[0] + a[2] / 2, a[1] + a[3] / 2
    bx0, by0, bx1, by1 = b[0] - b[2] / 2, b[1] - b[3] / 2, b[0] + b[2] / 2, b[1] + b[3] / 2
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a[2] * a[3] + b[2] * b[3] - inter
    return min(1.0, inter / union)


def hold_last_impute(
    sparse: Predictions, k: int, total_frames: int, gamma: float = DEFAULT_DECAY
) -> dict[int, list[Detection]]:
    """Fill skipped frames with the last processed frame's detections.

    Held confidences decay as ``c * exp(-gamma * (f - f0))``.
    """
    if k < 1:
        raise ValueError("stride must be >= 1")
    if gamma < 0:
        raise ValueError("decay rate must be non-negative")
    off_grid = [f for f, dets in sparse.items() if dets and f % k]
    if off_grid:
        raise ValueError(f"detections on frames not processed at stride {k}: {off_grid[:5]}")
    dense: dict[int, list[Detection]] = {}
    for f in range(total_frames):
        f0 = f - f % k
        src = sparse.get(f0, ())
        if not src:
            continue
        if f == f0:
            dense[f] = list(src)
            continue
        decay = math.exp(-gamma * (f - f0))
        dense[f] = [replace(d, frame=f, confidence=d.confidence * decay) for d in src]
    return dense


def _sort_key(d: Detection):
    # content-only key: matching is invariant to input order
    return (-d.confidence, d.class_id, d.box)


def _match_frame(preds: Sequence[Detection], gts: Sequence[tuple[Box, int]], iou_thresh: float) -> int:
    used = [False] * len(gts)
    tp = 0
    for d in sorted(preds, key=_sort_key):
        best, best_iou = -1, iou_thresh
        for j, (box, cls) in enumerate(gts):
            if used[j] or cls != d.class_id:
                continue
            v = iou(d.box, box)
            if v >= best_iou and (best < 0 or v > best_iou):
                best, best_iou = j, v
        if best >= 0:
            used[best] = True
            tp += 1
    return tp


def frame_counts(
    preds: Predictions, gt: GroundTruth, iou_thresh: float = 0.5, conf_thresh: float = DEFAULT_CONF_THRESH
) -> tuple[int, int, int]:
    """Return ``(tp, fp, fn)`` summed over all frames."""
    tp = fp = fn = 0
    for f in set(preds) | set(gt):
        p = [d for d in preds.get(f, ()) if d.confidence >= conf_thresh]
        g = gt.get(f, ())
        t = _match_frame(p, g, iou_thresh)
        tp += t
        fp += len(p) - t
        fn += len(g) - t
    return tp, fp, fn


def prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    # 2PR/(P+R) reduced to counts; a single division keeps it exact
    f1 = 2 * tp / (2 * tp + fp + fn) if tp else 0.0
    return p, r, f1


def frame_metrics(
    preds: Predictions, gt: GroundTruth, iou_thresh: float = 0.5, conf_thresh: float = DEFAULT_CONF_THRESH
) -> tuple[float, float, float]:
    return prf(*frame_counts(preds, gt, iou_thresh, conf_thresh))


def _positive_runs(frames: Iterable[int]) -> list[tuple[int, int]]:
    runs: list[tuple[int, int]] = []
    for f in sorted(frames):
        if runs and f == runs[-1][1] + 1:
            runs[-1] = (runs[-1][0], f)
        else:
            runs.append((f, f))
    return runs


def event_counts(
    preds: Predictions, events: Sequence[GestureEvent], conf_thresh: float = DEFAULT_CONF_THRESH
) -> tuple[int, int, int]:
    """Return event-level ``(tp, fp, fn)``.

    A false-positive event is a maximal run of positive frames of one class
    that touches no ground-truth event of that class.
    """
    positives: dict[int, set[int]] = {}
    for f, dets in preds.items():
        for d in dets:
            if d.confidence >= conf_thresh:
                positives.setdefault(d.class_id, set()).add(f)
    tp = fn = fp = 0
    for ev in events:
        hit = positives.get(ev.class_id, set())
        if any(ev.start_frame <= f <= ev.end_frame for f in hit):
            tp += 1
        else:
            fn += 1
    for cls, frames in positives.items():
        spans = [(e.start_frame, e.end_frame) for e in events if e.class_id == cls]
        for a, b in _positive_runs(frames):
            if not any(a <= e1 and s <= b for s, e1 in spans):
                fp += 1
    return tp, fp, fn


def event_f1(preds: Predictions, events: Sequence[GestureEvent], conf_thresh: float = DEFAULT_CONF_THRESH) -> float:
    return prf(*event_counts(preds, events, conf_thresh))[2]


def blended_accuracy(a_ev: float, a_fr: float, lam: float = DEFAULT_LAMBDA) -> float:
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    return lam * a_ev + (1.0 - lam) * a_fr


def evaluate(
    preds: Predictions,
    gt: GroundTruth,
    events: Sequence[GestureEvent],
    lam: float = DEFAULT_LAMBDA,
    iou_thresh: float = 0.5,
    conf_thresh: float = DEFAULT_CONF_THRESH,
) -> MetricsReport:
    ftp, ffp, ffn = frame_counts(preds, gt, iou_thresh, conf_thresh)
    etp, efp, efn = event_counts(preds, events, conf_thresh)
    p, r, f1 = prf(ftp, ffp, ffn)
    ev = prf(etp, efp, efn)[2]
    return MetricsReport(
        frame_precision=p,
        frame_recall=r,
        frame_f1=f1,
        event_f1=ev,
        blended=blended_accuracy(ev, f1, lam),
        counts={"frame": [ftp, ffp, ffn], "event": [etp, efp, efn]},
    )


# -- JSON-lines I/O -----------------------------------------------------------


def read_frames_jsonl(path) -> tuple[dict[int, list[Detection]], dict[int, list[tuple[Box, int]]]]:
    """Read a per-frame JSONL file.

    Each line is ``{"frame": f, "boxes": [[cx, cy, w, h, class(, conf)], ...]}``.
    Returns the rows both as detections and as ground-truth entries.
    """
    dets: dict[int, list[Detection]] = {}
    gts: dict[int, list[tuple[Box, int]]] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                f = int(rec["frame"])
                for b in rec.get("boxes", []):
                    box = (float(b[0]), float(b[1]), float(b[2]), float(b[3]))
                    cls = int(b[4])
                    conf = float(b[5]) if len(b) > 5 else 1.0
                    dets.setdefault(f, []).append(Detection(f, box, cls, conf))
                    gts.setdefault(f, []).append((box, cls))
            except (KeyError, IndexError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad frame record: {exc}") from exc
    return dets, gts


def write_frames_jsonl(path, frames: Mapping[int, Sequence[Detection]], total_frames: int | None = None) -> None:
    last = total_frames if total_frames is not None else (max(frames) + 1 if frames else 0)
    with open(path, "w") as fh:
        for f in range(last):
            boxes = [[*d.box, d.class_id, round(d.confidence, 6)] for d in frames.get(f, ())]
            fh.write(json.dumps({"frame": f, "boxes": boxes}) + "\n")


def read_events(path) -> list[GestureEvent]:
    rows = json.loads(Path(path).read_text())
    return [GestureEvent(int(r["class"]), int(r["start"]), int(r["end"])) for r in rows]


def write_events(path, events: Sequence[GestureEvent]) -> None:
    rows = [{"class": e.class_id, "start": e.start_frame, "end": e.end_frame} for e in events]
    Path(path).write_text(json.dumps(rows) + "\n")
