"""Command-line entry point: ``acesched <subcommand> ...``.

Exit status is 0 on success, 1 on a usage error and 2 when an input file is
missing or malformed. Every run writes a ``<subcommand>.manifest.json``
next to its outputs.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

from . import __version__
from . import ace_profiler as prof
from . import config_synth as cs
from . import roi_tracker as rt
from . import runtime_selector as sel
from . import sim_harness as sim
from . import temporal_metrics as tm

log = logging.getLogger("acesched")

SEED_ENV = "ACE_SCHED_SEED"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


@dataclass
class RunManifest:
    subcommand: str
    flags: dict
    inputs: list[str]
    outputs: list[str]
    seed: int
    version: str = __version__
    started: float = 0.0
    finished: float = 0.0
    extra: dict = field(default_factory=dict)

    def write(self, directory: Path) -> Path:
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / f"{self.subcommand}.manifest.json"
        path.write_text(json.dumps(asdict(self), indent=1, default=str) + "\n")
        return path


def _bundled(name: str) -> str:
    return str(resources.files("acesched.data").joinpath(name))


def _resolve_seed(arg: Optional[int]) -> int:
    if arg is not None:
        return arg
    env = os.environ.get(SEED_ENV)
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from None


def _out_path(args, given: Optional[str], default_name: str) -> Path:
    if given:
        return Path(given)
    return Path(args.out_dir or ".") / default_name


def _need(path: str, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{what} not found: {path}")
    return p


def _say(args, msg: str) -> None:
    if not args.quiet:
        print(msg, file=sys.stderr)


# -- synth ----------------------------------------------------------------------


def cmd_synth(args, ctx: dict) -> None:
    base_path = _bundled("toy_base.json") if args.base == "toy" else str(_need(args.base, "base config"))
    heads = frozenset(h.strip() for h in args.heads.split(",") if h.strip())
    spec = cs.FamilySpec(args.alpha, args.beta, args.cmax, heads, args.simplify_attention, args.granularity)
    graph = cs.synthesize_family(cs.load_config(base_path), spec)
    out = _out_path(args, args.out, "family.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    cs.dump_config(graph, out)
    ctx["inputs"].append(base_path)
    ctx["outputs"].append(str(out))
    report = cs.summary(graph)
    ctx["extra"]["summary"] = report
    if args.report:
        print(json.dumps(report, sort_keys=True))
    _say(args, f"wrote {out} ({report['layers']} layers)")


# -- profile --------------------------------------------------------------------


def _parse_grid(text: str) -> tuple[tuple[int, ...], tuple[int, ...]]:
    if text == "default":
        return prof.DEFAULT_RESOLUTIONS, prof.DEFAULT_STRIDES
    try:
        res, strides = text.split(":")
        return tuple(int(x) for x in res.split(",")), tuple(int(x) for x in strides.split(","))
    except ValueError:
        raise UsageError(f"--grid must be 'default' or 'R1,R2:K1,K2', got {text!r}") from None


def _load_videos(args, seed: int) -> list[sim.GestureScript]:
    if args.videos:
        d = _need(args.videos, "video directory")
        files = sorted(d.glob("*.json")) if d.is_dir() else [d]
        if not files:
            raise ValueError(f"no *.json gesture scripts in {d}")
        return [sim.GestureScript.load(f) for f in files]
    return [
        sim.generate_timeline(seed + 1 + i, args.video_frames, args.video_duty) for i in range(args.synthetic_videos)
    ]


def _profile_table(oracles, videos, seed, resolutions, strides, roi_scales=(), power=None):
    return prof.build_table(
        list(oracles),
        resolutions,
        strides,
        videos,
        lambda m, v: sim.SyntheticDetector(m, oracles[m], v, seed),
        power or prof.SyntheticPowerMeter(),
        g640={m: c.g640 for m, c in oracles.items() if c.g640},
        roi_scales=roi_scales,
    )


def cmd_profile(args, ctx: dict) -> None:
    resolutions, strides = _parse_grid(args.grid)
    oracle_path = _bundled("two_tier.json") if args.oracle == "two-tier" else str(_need(args.oracle, "oracle"))
    oracles = sim.load_calibration(oracle_path)
    videos = _load_videos(args, ctx["seed"])
    power = None
    if args.power_csv:
        power = prof.ReplayPowerSource(prof.read_power_csv(_need(args.power_csv, "power trace"), args.idle_w))
        ctx["inputs"].append(args.power_csv)
    table = _profile_table(oracles, videos, ctx["seed"], resolutions, strides, tuple(args.roi_scale or ()), power)
    if not table:
        raise ValueError("profiling produced no rows")
    out = _out_path(args, args.out, "ace_profiles.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    prof.save_profiles(table, out)
    ctx["inputs"] += [oracle_path] + ([args.videos] if args.videos else [])
    ctx["outputs"].append(str(out))
    _say(args, f"wrote {len(table)} profiles to {out}")


# -- select ---------------------------------------------------------------------


def _constraints(args) -> sel.Constraints:
    return sel.Constraints(
        a_min=args.amin,
        fps_target=args.fps,
        battery_capacity=args.battery_wh,
        state_of_charge=args.soc,
        horizon=args.horizon,
        background_power=args.bg_w,
        e_bud_override=None if args.ebud_mj is None else args.ebud_mj / 1e3,
    )


def cmd_select(args, ctx: dict) -> None:
    profiles = prof.load_profiles(_need(args.profiles, "profile table"))
    if not profiles:
        raise ValueError(f"{args.profiles}: empty profile table")
    if args.telemetry == "live":
        samples = [sel.live_sample()]
    else:
        samples = sel.read_telemetry_csv(_need(args.telemetry, "telemetry CSV"))
        ctx["inputs"].append(args.telemetry)
    selector = sel.RuntimeSelector(
        profiles,
        _constraints(args),
        t_cap=args.t_cap,
        util_thresh=args.util_thresh,
        top_k=args.topk,
        margin=args.margin,
        window=args.window,
        live_soc=not args.static_soc,
    )
    out = _out_path(args, args.out, "decisions.jsonl")
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        for s in samples:
            sel.write_decision_log(fh, selector.step(s))
    ctx["inputs"].append(args.profiles)
    ctx["outputs"].append(str(out))
    _say(args, f"wrote {len(samples)} decisions to {out}")


# -- simulate -------------------------------------------------------------------


def cmd_simulate(args, ctx: dict) -> None:
    seed = ctx["seed"]
    scenario = sim.load_scenario(args.scenario)
    if args.oracle:
        oracles = sim.load_calibration(_need(args.oracle, "oracle"))
        ctx["inputs"].append(args.oracle)
    else:
        oracles = scenario.calibration() or sim.load_calibration(_bundled("two_tier.json"))
    if args.script:
        script = sim.GestureScript.load(_need(args.script, "gesture script"))
        ctx["inputs"].append(args.script)
    else:
        script = sim.generate_timeline(seed, args.frames, args.duty)
    out_dir = Path(args.out_dir or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    roi_scales = (args.roi,) if args.roi else ()
    if args.profiles:
        profiles = prof.load_profiles(_need(args.profiles, "profile table"))
        ctx["inputs"].append(args.profiles)
    else:
        videos = [sim.generate_timeline(seed + 1 + i, 3000, 0.1) for i in range(3)]
        profiles = _profile_table(oracles, videos, seed, prof.DEFAULT_RESOLUTIONS, prof.DEFAULT_STRIDES, roi_scales)
        table_path = out_dir / "ace_profiles.json"
        prof.save_profiles(profiles, table_path)
        ctx["outputs"].append(str(table_path))
    log_path = Path(args.log) if args.log else out_dir / f"{scenario.name}.jsonl"
    summary_path = Path(args.summary) if args.summary else out_dir / f"{scenario.name}_summary.csv"
    if args.compare:
        rep = sim.compare_fixed_vs_adaptive(profiles, scenario, script, oracles, seed)
        records = rep["adaptive_records"]
        rows = [{**rep["fixed"], "run": "fixed"}, {**rep["adaptive"], "run": "adaptive"}]
        ctx["extra"].update(energy_ratio=rep["energy_ratio"], event_f1_delta=rep["event_f1_delta"])
        _say(args, f"energy ratio {rep['energy_ratio']:.3f}, event F1 delta {rep['event_f1_delta']:+.3f}")
    else:
        selector = sel.RuntimeSelector(profiles, scenario.constraints, accuracy_boost=scenario.accuracy_boost)
        result = sim.run_closed_loop(profiles, selector, scenario, script, oracles, seed)
        records = result.records
        rows = [{**result.summary, "run": "adaptive"}]
    with open(log_path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r) + "\n")
    sim.write_summary_csv(summary_path, rows)
    ctx["outputs"] += [str(log_path), str(summary_path)]
    _say(args, f"wrote {log_path} and {summary_path}")


# -- track ----------------------------------------------------------------------


def _parse_frames(text: str, seed: int):
    """``WxH:N[:duty]`` or a gesture-script JSON path; returns (size, count, script)."""
    p = Path(text)
    if p.suffix == ".json":
        script = sim.GestureScript.load(_need(text, "frame descriptor"))
        return script.frame_size, script.total_frames, script
    try:
        parts = text.split(":")
        w, h = (int(x) for x in parts[0].lower().split("x"))
        n = int(parts[1])
        duty = float(parts[2]) if len(parts) > 2 else 0.03
    except (ValueError, IndexError):
        raise UsageError(f"--frames must be 'WxH:N[:duty]' or a script .json, got {text!r}") from None
    return (w, h), n, (lambda: sim.generate_timeline(seed, n, duty, frame_size=(w, h)))


def cmd_track(args, ctx: dict) -> None:
    src = _need(args.detections, "detections")
    size, n, script = _parse_frames(args.frames, ctx["seed"])
    params = rt.TrackerParams(roi_scale=args.s, iou_gate=args.tau, miss_budget=args.tmiss)
    if src.suffix == ".jsonl":
        dets, _ = tm.read_frames_jsonl(src)
        detector = rt.replay_detector(dets)
    else:
        oracles = sim.load_calibration(src)
        model = args.model or next(iter(oracles))
        if model not in oracles:
            raise ValueError(f"model {model!r} not in {src}")
        if callable(script):
            script = script()
        detector = sim.SyntheticDetector(model, oracles[model], script, ctx["seed"]).at(args.resolution)
    logs = rt.run_tracker(range(n), detector, size, params)
    out = _out_path(args, args.out, "track.jsonl")
    out.parent.mkdir(parents=True, exist_ok=True)
    rt.write_track_log(out, logs)
    ctx["inputs"].append(str(src))
    ctx["outputs"].append(str(out))
    active = sum(e.track_active for e in logs)
    _say(args, f"wrote {out}: {active}/{n} frames in ROI mode")


# -- eval -----------------------------------------------------------------------


def cmd_eval(args, ctx: dict) -> None:
    preds, _ = tm.read_frames_jsonl(_need(args.preds, "predictions"))
    _, gt = tm.read_frames_jsonl(_need(args.gt, "ground truth"))
    events = tm.read_events(_need(args.events, "events"))
    if args.stride > 1:
        total = max([*preds, *gt, -1]) + 1
        preds = tm.hold_last_impute(preds, args.stride, total, args.gamma)
    report = tm.evaluate(preds, gt, events, lam=args.lam, iou_thresh=args.iou, conf_thresh=args.conf)
    print(json.dumps(report.to_dict(), sort_keys=True))
    ctx["inputs"] += [args.preds, args.gt, args.events]


# -- plot-data ------------------------------------------------------------------

PARETO_COLUMNS = ("t", "model", "resolution", "stride", "roi_scale", "a_norm", "c_norm", "e_norm", "score", "chosen")
WEIGHT_COLUMNS = (
    "t", "dA", "gC", "eE", "s_lat", "s_energy", "s_acc", "thermal", "util", "battery", "model", "resolution", "stride",
)


def _read_jsonl(path) -> list[dict]:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                try:
                    rows.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise ValueError(f"{path}:{lineno}: {exc}") from exc
    return rows


def plot_rows(records: list[dict], kind: str) -> list[dict]:
    out = []
    for r in records:
        try:
            chosen = r["chosen"]
            if kind == "pareto":
                for e in r["top_k"]:
                    same = all(e.get(k) == chosen.get(k) for k in ("model", "resolution", "stride", "roi_scale"))
                    out.append({"t": r["t"], "roi_scale": e.get("roi_scale", ""), "chosen": int(same),
                                **{k: e[k] for k in PARETO_COLUMNS if k in e}})
            else:
                out.append({"t": r["t"], **r["weights"], **(r.get("slacks") or {}), **(r.get("pressures") or {}),
                            "model": chosen["model"], "resolution": chosen["resolution"], "stride": chosen["stride"]})
        except (KeyError, TypeError) as exc:
            raise ValueError(f"decision record missing field: {exc}") from exc
    return out


def cmd_plot_data(args, ctx: dict) -> None:
    records = _read_jsonl(_need(args.log, "decision log"))
    rows = plot_rows(records, args.kind)
    cols = PARETO_COLUMNS if args.kind == "pareto" else WEIGHT_COLUMNS
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=cols, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(buf.getvalue())
        ctx["outputs"].append(args.out)
    else:
        sys.stdout.write(buf.getvalue())
    ctx["inputs"].append(args.log)


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="acesched", description="ACE-aware profiling, selection and simulation toolkit")
    p.add_argument("--seed", type=int, default=None, help=f"RNG seed (falls back to ${SEED_ENV}, then 0)")
    p.add_argument("--out-dir", default=None, help="directory for default outputs and the run manifest")
    p.add_argument("--quiet", action="store_true", help="suppress progress messages")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="synthesize a scaled detector family")
    s.add_argument("--base", required=True, help="base configuration JSON, or 'toy' for the bundled one")
    s.add_argument("--alpha", type=float, required=True, help="depth multiplier")
    s.add_argument("--beta", type=float, required=True, help="width multiplier")
    s.add_argument("--cmax", type=int, default=None, help="channel cap")
    s.add_argument("--heads", default="P3,P4,P5")
    s.add_argument("--simplify-attention", action="store_true")
    s.add_argument("--granularity", type=int, default=8)
    s.add_argument("--out")
    s.add_argument("--report", action="store_true", help="print a JSON summary to stdout")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("profile", help="build an ACE profile table")
    s.add_argument("--grid", default="default", help="'default' or 'R1,R2:K1,K2'")
    s.add_argument("--oracle", default="two-tier", help="calibration JSON, or 'two-tier' for the bundled one")
    s.add_argument("--videos", help="directory of gesture-script JSON files (default: synthetic)")
    s.add_argument("--synthetic-videos", type=int, default=3)
    s.add_argument("--video-frames", type=int, default=3000)
    s.add_argument("--video-duty", type=float, default=0.1)
    s.add_argument("--roi-scale", type=float, action="append", help="add tracked variants (repeatable)")
    s.add_argument("--power-csv", help="replay a recorded timestamp_s,watts trace")
    s.add_argument("--idle-w", type=float, default=0.0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_profile)

    s = sub.add_parser("select", help="run the selector over a telemetry trace")
    s.add_argument("--profiles", required=True)
    s.add_argument("--telemetry", required=True, help="telemetry CSV, or 'live' for one host reading")
    s.add_argument("--amin", type=float, default=0.0)
    s.add_argument("--fps", type=float, default=30.0)
    s.add_argument("--battery-wh", type=float, default=50.0)
    s.add_argument("--soc", type=float, default=1.0)
    s.add_argument("--horizon", type=float, default=3600.0, help="seconds")
    s.add_argument("--bg-w", type=float, default=0.0)
    s.add_argument("--ebud-mj", type=float, default=None, help="fixed per-frame energy budget")
    s.add_argument("--static-soc", action="store_true", help="ignore battery_pct from telemetry")
    s.add_argument("--topk", type=int, default=sel.DEFAULT_TOP_K)
    s.add_argument("--margin", type=float, default=sel.DEFAULT_MARGIN)
    s.add_argument("--window", type=int, default=sel.DEFAULT_WINDOW)
    s.add_argument("--t-cap", type=float, default=sel.DEFAULT_T_CAP)
    s.add_argument("--util-thresh", type=float, default=sel.DEFAULT_UTIL_THRESH)
    s.add_argument("--out")
    s.set_defaults(func=cmd_select)

    s = sub.add_parser("simulate", help="closed-loop run over a synthetic gesture stream")
    s.add_argument("--scenario", default="balanced", help=f"one of {', '.join(sim.SCENARIOS)} or a JSON file")
    s.add_argument("--oracle", help="calibration JSON (default: scenario's, else bundled two-tier)")
    s.add_argument("--profiles", help="profile table (default: profile the oracles first)")
    s.add_argument("--script", help="gesture script JSON (default: generated)")
    s.add_argument("--frames", type=int, default=20000)
    s.add_argument("--duty", type=float, default=0.03)
    s.add_argument("--roi", type=float, default=None, help="also profile tracked variants at this crop scale")
    s.add_argument("--compare", action="store_true", help="run the fixed best-accuracy baseline too")
    s.add_argument("--log")
    s.add_argument("--summary")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("track", help="ROI-gated tracking over a frame sequence")
    s.add_argument("--detections", required=True, help="replay .jsonl, or calibration JSON for a synthetic oracle")
    s.add_argument("--frames", required=True, help="'WxH:N[:duty]' or gesture-script JSON")
    s.add_argument("--model", help="oracle model name (default: first)")
    s.add_argument("--resolution", type=int, default=640)
    s.add_argument("--s", type=float, default=1.8, help="ROI scale")
    s.add_argument("--tau", type=float, default=0.5, help="IoU gate")
    s.add_argument("--tmiss", type=int, default=8, help="miss budget")
    s.add_argument("--out")
    s.set_defaults(func=cmd_track)

    s = sub.add_parser("eval", help="frame and event metrics")
    s.add_argument("--preds", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--events", required=True)
    s.add_argument("--iou", type=float, default=0.5)
    s.add_argument("--conf", type=float, default=tm.DEFAULT_CONF_THRESH)
    s.add_argument("--lam", type=float, default=tm.DEFAULT_LAMBDA)
    s.add_argument("--stride", type=int, default=1, help="impute skipped frames with hold-last")
    s.add_argument("--gamma", type=float, default=tm.DEFAULT_DECAY)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("plot-data", help="flatten a decision log to CSV")
    s.add_argument("--log", required=True)
    s.add_argument("--kind", choices=("pareto", "weights"), default="pareto")
    s.add_argument("--out")
    s.set_defaults(func=cmd_plot_data)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING, format="%(levelname)s %(message)s")
    flags = {k: v for k, v in vars(args).items() if k != "func"}
    try:
        ctx = {"seed": _resolve_seed(args.seed), "inputs": [], "outputs": [], "extra": {}}
        started = time.time()
        args.func(args, ctx)
    except UsageError as exc:
        print(f"acesched: error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError) as exc:
        print(f"acesched: data error: {exc}", file=sys.stderr)
        return 2
    manifest = RunManifest(
        subcommand=args.command,
        flags=flags,
        inputs=ctx["inputs"],
        outputs=ctx["outputs"],
        seed=ctx["seed"],
        started=started,
        finished=time.time(),
        extra=ctx["extra"],
    )
    if args.out_dir:
        where = Path(args.out_dir)
    elif ctx["outputs"]:
        where = Path(ctx["outputs"][0]).parent
    else:
        where = Path(".")
    manifest.write(where)
    return 0


if __name__ == "__main__":
    sys.exit(main())
