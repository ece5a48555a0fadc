"""Command-line entry point.

Exit codes: 0 success, 1 a checked property failed, 2 usage or IO error.

Every option may also come from ``--config FILE.json``, a flat JSON object
keyed by option name (``"dedup_leaf": 0.05``); options given on the command
line win over the file.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import harness, netsim
from .codec import make_package, package_size, parse_package, serialize_package
from .detect import DetectorParams, Difficulty, boxes_to_jsonl, detect
from .fusion import fuse
from .pointcloud import VALID_BEAMS, load_kitti_bin, save_kitti_bin
from .roi import FullFrame, extract_roi, parse_roi
from .scenesim import (
    VARIANTS,
    load_scenario,
    make_occlusion_scenario,
    make_suite,
    pose_from_dict,
    pose_to_dict,
    save_scenario,
    simulate_scan,
)

SUITES = ("full", "occlusion", "drift", "timing")
DEFAULT_SUITE_SIZE = {"full": 60, "occlusion": 10, "drift": 20, "timing": 1}


class UsageError(Exception):
    """Bad arguments or unreadable inputs (exit code 2)."""


def default_seed() -> int:
    raw = os.environ.get("COOPFUSE_SEED", "0")
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"COOPFUSE_SEED must be an integer, got {raw!r}") from None


def _positive(kind):
    def check(text: str):
        value = kind(text)
        if not value > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return value
    return check


def _roi_arg(text: str):
    try:
        return parse_roi(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _existing(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {path}")
    return p


def _read_pose(path: str):
    p = _existing(path, "pose file")
    try:
        return pose_from_dict(json.loads(p.read_text()))
    except (ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"cannot parse pose file {path}: {exc}") from None


def _read_cloud(path: str, beams: int):
    p = _existing(path, "frame file")
    try:
        return load_kitti_bin(p, beams)
    except ValueError as exc:
        raise UsageError(f"cannot read frame {path}: {exc}") from None


def _write_text(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


# --- commands ---------------------------------------------------------------

def cmd_fuse(args) -> int:
    recv_pose = _read_pose(args.receiver_pose)
    trans_pose = _read_pose(args.transmitter_pose)
    recv = _read_cloud(args.receiver, args.beams)
    trans = _read_cloud(args.transmitter, args.beams)
    roi = args.roi or FullFrame()
    wire = serialize_package(make_package(extract_roi(trans, roi), trans_pose, roi, sender_id=1))
    fused = fuse(recv, recv_pose, parse_package(wire), args.dedup_leaf)
    out = Path(args.out)
    save_kitti_bin(fused.cloud, out)
    R, d = fused.transform_used
    summary = {
        "receiver_points": fused.receiver_count,
        "transmitter_points": fused.transmitter_count,
        "fused_points": len(fused.cloud),
        "package_bytes": len(wire),
        "dedup_leaf": args.dedup_leaf,
        "rotation": np.asarray(R).tolist(),
        "translation": np.asarray(d).tolist(),
    }
    summary_path = Path(args.summary) if args.summary else out.with_suffix(".json")
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"fused {summary['receiver_points']} + {summary['transmitter_points']} -> "
          f"{summary['fused_points']} points; wrote {out}")
    return 0


def _frame_source(directory: str | None, points: int, seed: int, beams: int):
    if directory:
        d = Path(directory)
        if not d.is_dir():
            raise UsageError(f"frame directory not found: {directory}")
        files = sorted(d.glob("*.bin"))
        return (load_kitti_bin(f, beams) for f in files)

    def synthetic():
        k = 0
        while True:
            yield netsim.uniform_azimuth_frame(points, seed + k, beam_count=beams)
            k += 1
    return synthetic()


def cmd_simulate(args) -> int:
    try:
        scenario = netsim.ExchangeScenario.parse(args.scenario)
        channel = netsim.ChannelModel(args.bandwidth, args.latency, args.loss)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    frames = {
        "A": _frame_source(args.frames_a, args.points, args.seed, args.beams),
        "B": _frame_source(args.frames_b, args.points, args.seed + 1_000_003, args.beams),
    }
    try:
        report = netsim.simulate_exchange(scenario, frames, args.rate, channel, args.window, args.seed)
    except netsim.TruncatedRunError as exc:
        print(f"error: {exc}", file=sys.stderr)
        _write_text(args.out, exc.report.to_csv(netsim.feasibility_check(exc.report)))
        return 2
    _write_text(args.out, report.to_csv(netsim.feasibility_check(report)))
    return 0


def _suite_params(args) -> DetectorParams:
    return DetectorParams.for_sensor(args.beams)


def _run_full(args, out: Path, n: int) -> list[str]:
    scenarios = make_suite(n, args.seed, args.beams)
    reports = [harness.run_cooper_experiment(s, _suite_params(args), args.dedup_leaf, args.iou) for s in scenarios]
    failed = harness.check_reports(reports)
    cdf = harness.improvement_cdf(reports)
    med = {d.value: harness.median_improvement(reports, d) for d in Difficulty}
    if not (math.isnan(med["hard"]) or math.isnan(med["easy"])):
        if not med["hard"] > med["easy"]:
            failed.append("hard-improvement-exceeds-easy")
        if med["easy"] > 0.15:
            failed.append("easy-improvement-near-zero")
    (out / "reports.json").write_text(harness.reports_to_json(reports))
    (out / "objects.csv").write_text(harness.records_to_csv(reports))
    (out / "cdf.csv").write_text(harness.cdf_to_csv(cdf))
    summary = {
        "suite": "full",
        "scenarios": n,
        "seed": args.seed,
        "median_improvement": med,
        "counts": {c: sum(r.counts[c] for r in reports) for c in ("a", "b", "fused")},
        "failed": failed,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return failed


def _run_occlusion(args, out: Path, n: int) -> list[str]:
    scenarios = harness.make_occlusion_suite(n, args.seed, args.beams)
    reports = [harness.run_cooper_experiment(s, _suite_params(args), args.dedup_leaf, args.iou) for s in scenarios]
    failed = harness.check_reports(reports, require_hidden=True)
    recovered = sum(
        (not r.record(r.hidden_id).detected_a) and r.record(r.hidden_id).detected_fused for r in reports
    )
    (out / "reports.json").write_text(harness.reports_to_json(reports))
    (out / "objects.csv").write_text(harness.records_to_csv(reports))
    summary = {"suite": "occlusion", "scenarios": n, "seed": args.seed, "hidden_recovered": recovered,
               "failed": failed}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"hidden objects recovered: {recovered}/{n}")
    return failed


def _run_drift(args, out: Path, n: int) -> list[str]:
    drift_reports = []
    separated = []
    for s in make_suite(n, args.seed, args.beams):
        drift_reports.append(harness.gps_drift_suite(s, args.max_drift, _suite_params(args), args.dedup_leaf, args.iou))
        separated.append(harness.min_separation(s) >= 2.0)
    failed = []
    if not all(rep.within_bound_stable() for rep, sep in zip(drift_reports, separated) if sep):
        failed.append("drift-within-bound-stability")
    (out / "drift.csv").write_text(harness.drift_to_csv(drift_reports))
    summary = {
        "suite": "drift",
        "scenarios": n,
        "seed": args.seed,
        "max_drift": args.max_drift,
        "separated_scenarios": sum(separated),
        "stable_within_bound": sum(r.within_bound_stable() for r in drift_reports),
        "failed": failed,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return failed


def _run_timing(args, out: Path, n: int) -> list[str]:
    from .fusion import fuse_clouds

    s = make_occlusion_scenario(args.seed, "easy", args.beams)
    a = simulate_scan(s.scene, s.sensor("a"))
    b = simulate_scan(s.scene, s.sensor("b"))
    fused = fuse_clouds(a, s.pose_a, b, s.pose_b)
    single_ms, fused_ms = harness.timing_benchmark(a, fused.cloud, _suite_params(args), args.repetitions,
                                                   fused.observer_origins())
    ratio = fused_ms / single_ms if single_ms > 0 else math.inf
    failed = [] if ratio <= 4.0 else ["fused-detect-time-within-4x"]
    result = {"suite": "timing", "single_points": len(a), "fused_points": len(fused.cloud),
              "single_ms": single_ms, "fused_ms": fused_ms, "ratio": ratio, "failed": failed}
    (out / "timing.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    print(f"detect median: single {single_ms:.2f} ms, fused {fused_ms:.2f} ms (x{ratio:.2f})")
    return failed


def cmd_experiment(args) -> int:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {out}: {exc}") from None
    n = args.n if args.n is not None else DEFAULT_SUITE_SIZE[args.suite]
    runner = {"full": _run_full, "occlusion": _run_occlusion, "drift": _run_drift, "timing": _run_timing}
    failed = runner[args.suite](args, out, n)
    if failed:
        for name in failed:
            print(f"property failed: {name}", file=sys.stderr)
        return 1
    print(f"suite {args.suite}: all properties hold; outputs in {out}")
    return 0


def cmd_detect(args) -> int:
    cloud = _read_cloud(args.cloud, args.beams)
    if args.roi:
        cloud = extract_roi(cloud, args.roi)
    boxes = detect(cloud, DetectorParams.for_sensor(args.beams))
    _write_text(args.out, boxes_to_jsonl(boxes))
    return 0


def cmd_roi(args) -> int:
    cloud = _read_cloud(args.cloud, args.beams)
    part = extract_roi(cloud, args.roi or FullFrame())
    save_kitti_bin(part, args.out)
    print(f"kept {len(part)}/{len(cloud)} points; package would be {package_size(len(part))} bytes")
    return 0


def cmd_scene(args) -> int:
    scenario = make_occlusion_scenario(args.seed, args.variant, args.beams)
    save_scenario(scenario, args.out)
    return 0


def cmd_scan(args) -> int:
    scenario = load_scenario(_existing(args.scene, "scene file"))
    which = args.vehicle.lower()
    cloud = simulate_scan(scenario.scene, scenario.sensor(which))
    save_kitti_bin(cloud, args.out)
    if args.pose_out:
        pose = scenario.pose_a if which == "a" else scenario.pose_b
        Path(args.pose_out).write_text(json.dumps(pose_to_dict(pose), indent=2, sort_keys=True) + "\n")
    return 0


# --- parser -----------------------------------------------------------------

def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(prog="coopfuse", description="Cooperative LiDAR fusion toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)
    subs: dict[str, argparse.ArgumentParser] = {}

    def add(name: str, func, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        p.add_argument("--config", help="JSON file of option defaults")
        p.add_argument("--seed", type=int, default=None, help="random seed (default: $COOPFUSE_SEED or 0)")
        p.add_argument("--beams", type=int, choices=VALID_BEAMS, default=16)
        subs[name] = p
        return p

    p = add("fuse", cmd_fuse, "fuse a transmitter frame into a receiver frame")
    p.add_argument("receiver", help="receiver frame (.bin)")
    p.add_argument("receiver_pose", help="receiver pose (.json)")
    p.add_argument("transmitter", help="transmitter frame (.bin)")
    p.add_argument("transmitter_pose", help="transmitter pose (.json)")
    p.add_argument("--out", required=True, help="fused frame (.bin)")
    p.add_argument("--summary", help="summary JSON path (default: next to --out)")
    p.add_argument("--roi", type=_roi_arg, help="ROI the transmitter applies before sending")
    p.add_argument("--dedup-leaf", type=_positive(float), default=None)

    p = add("simulate", cmd_simulate, "per-second V2V traffic for an exchange scenario")
    p.add_argument("--scenario", required=True, help="opposite | junction | following")
    p.add_argument("--window", type=_positive(float), default=8.0, help="seconds")
    p.add_argument("--rate", type=_positive(float), default=1.0, help="frames per second")
    p.add_argument("--bandwidth", type=_positive(float), default=6e6, help="bits per second")
    p.add_argument("--latency", type=float, default=0.002, help="seconds")
    p.add_argument("--loss", type=float, default=0.0, help="message loss probability")
    p.add_argument("--points", type=_positive(int), default=30000, help="synthetic frame size")
    p.add_argument("--frames-a", help="directory of .bin frames for vehicle A")
    p.add_argument("--frames-b", help="directory of .bin frames for vehicle B")
    p.add_argument("--out", help="CSV path (default: stdout)")

    p = add("experiment", cmd_experiment, "run an experiment suite")
    p.add_argument("--suite", choices=SUITES, default="full")
    p.add_argument("-n", type=_positive(int), default=None, help="number of scenarios")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--dedup-leaf", type=_positive(float), default=None)
    p.add_argument("--max-drift", type=_positive(float), default=0.10, help="meters")
    p.add_argument("--iou", type=float, default=harness.DEFAULT_IOU, help="match threshold")
    p.add_argument("--repetitions", type=int, default=30, help="timing suite repetitions")

    p = add("detect", cmd_detect, "run the baseline detector on a frame")
    p.add_argument("cloud")
    p.add_argument("--roi", type=_roi_arg)
    p.add_argument("--out", help="JSON-lines path (default: stdout)")

    p = add("roi", cmd_roi, "cut a region of interest out of a frame")
    p.add_argument("cloud")
    p.add_argument("--roi", type=_roi_arg, required=True)
    p.add_argument("--out", required=True)

    p = add("scene", cmd_scene, "generate an occlusion scenario as JSON")
    p.add_argument("--variant", choices=VARIANTS, default="moderate")
    p.add_argument("--out", required=True)

    p = add("scan", cmd_scan, "ray-cast one vehicle's frame from a scene file")
    p.add_argument("scene")
    p.add_argument("--vehicle", choices=("a", "b", "A", "B"), default="a")
    p.add_argument("--out", required=True)
    p.add_argument("--pose-out", help="write the vehicle's pose JSON here")
    return parser, subs


def _apply_config(path: str, parser: argparse.ArgumentParser, command: str, sub: argparse.ArgumentParser) -> None:
    try:
        cfg = json.loads(_existing(path, "config file").read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    known = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, value in cfg.items():
        dest = key.replace("-", "_")
        if dest not in known or dest in ("help", "func", "config"):
            raise UsageError(f"unknown option {key!r} in config file for '{command}'")
        action = known[dest]
        if isinstance(value, str) and action.type is not None:
            try:
                value = action.type(value)
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise UsageError(f"config option {key}: {exc}") from None
        defaults[dest] = value
    sub.set_defaults(**defaults)
    for action in sub._actions:
        if action.dest in defaults:
            action.required = False


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subs = build_parser()
    try:
        pre = argparse.ArgumentParser(add_help=False)
        pre.add_argument("--config")
        known, rest = pre.parse_known_args(argv)
        command = next((a for a in rest if a in subs), None)
        if known.config and command:
            _apply_config(known.config, parser, command, subs[command])
        args = parser.parse_args(argv)
        if args.seed is None:
            args.seed = default_seed()
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # argparse usage errors
        return int(exc.code or 0) if isinstance(exc.code, int) else 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
