"""Single-shot versus cooperative detection experiments.

Each experiment scans a scene from two vehicles, ships B's scan to A as an
exchange package (so quantization is part of the loop), fuses, and runs the
detector on A, B and the fused cloud.  Every truth car gets one record.
"""

from __future__ import annotations

import csv
import io
import json
import math
import statistics
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .codec import make_package, parse_package, serialize_package
from .detect import (
    DetectionBox,
    Detector,
    DetectorParams,
    Difficulty,
    classify_difficulty,
    detect,
    distance_band,
    match_detections,
)
from .fusion import FusedCloud, fuse
from .geometry import VehiclePose, enu_to_geodetic
from .pointcloud import InvalidParameterError, PointCloud
from .scenesim import (
    Scenario,
    _footprint_gap,
    make_occlusion_scenario,
    object_box_in_sensor,
    simulate_scan,
)

DEFAULT_IOU = 0.5


@dataclass(frozen=True)
class ObjectRecord:
    truth_id: int
    detected_a: bool
    detected_b: bool
    detected_fused: bool
    score_a: float
    score_b: float
    score_fused: float
    difficulty: Difficulty
    distance_band: str

    @property
    def improvement(self) -> float:
        """Fused score over the better single shot; a miss scores 0."""
        return self.score_fused - max(self.score_a, self.score_b)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["difficulty"] = self.difficulty.value
        d["improvement"] = self.improvement
        return d


@dataclass
class ExperimentReport:
    label: str
    records: list[ObjectRecord]
    counts: dict[str, int]  # matched truth objects per condition
    raw_counts: dict[str, int]  # all boxes the detector emitted
    hidden_id: int = -1
    drift: tuple[float, float] = (0.0, 0.0)
    timing_ms: dict[str, float] | None = None

    def record(self, truth_id: int) -> ObjectRecord:
        for r in self.records:
            if r.truth_id == truth_id:
                return r
        raise KeyError(truth_id)

    def matched_set(self, condition: str = "fused") -> frozenset[int]:
        flag = {"a": "detected_a", "b": "detected_b", "fused": "detected_fused"}[condition]
        return frozenset(r.truth_id for r in self.records if getattr(r, flag))

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "hidden_id": self.hidden_id,
            "drift": list(self.drift),
            "counts": dict(self.counts),
            "raw_counts": dict(self.raw_counts),
            "timing_ms": self.timing_ms,
            "records": [r.to_dict() for r in self.records],
        }


def drifted(pose: VehiclePose, offset: tuple[float, float]) -> VehiclePose:
    """``pose`` with its GPS fix moved by ``offset`` meters east and north."""
    dx, dy = offset
    if dx == 0.0 and dy == 0.0:
        return pose
    return replace(pose, gps=enu_to_geodetic(pose.gps, (dx, dy, 0.0)))


def _detect_all(detector, cloud: PointCloud, params: DetectorParams, origins=None) -> list[DetectionBox]:
    if detector is None:
        return detect(cloud, params, origins)
    return detector(cloud, params)


def _scores(dets: list[DetectionBox], truth: list[DetectionBox], iou_threshold: float) -> dict[int, float]:
    """truth index -> score of the detection matched to it."""
    return {m.truth: dets[m.detection].score for m in match_detections(dets, truth, iou_threshold)}


def run_frame_pair(
    cloud_a: PointCloud,
    pose_a: VehiclePose,
    cloud_b: PointCloud,
    pose_b: VehiclePose,
    truth_a: dict[int, DetectionBox],
    truth_b: dict[int, DetectionBox],
    params: DetectorParams | None = None,
    dedup_leaf: float | None = None,
    iou_threshold: float = DEFAULT_IOU,
    drift: tuple[float, float] = (0.0, 0.0),
    detector: Detector | None = None,
    label: str = "",
) -> tuple[ExperimentReport, FusedCloud]:
    """Experiment on a recorded frame pair with known truth boxes in each sensor frame.

    ``drift`` perturbs only the GPS fix B advertises in its package.
    """
    params = params or DetectorParams.for_sensor(cloud_a.beam_count)
    pkg = parse_package(serialize_package(make_package(cloud_b, drifted(pose_b, drift), sender_id=2)))
    fused = fuse(cloud_a, pose_a, pkg, dedup_leaf)

    ids = sorted(truth_a)
    ta = [truth_a[i] for i in ids]
    tb = [truth_b[i] for i in ids]
    dets = {
        "a": _detect_all(detector, cloud_a, params),
        "b": _detect_all(detector, cloud_b, params),
        "fused": _detect_all(detector, fused.cloud, params, fused.observer_origins()),
    }
    scores = {
        "a": _scores(dets["a"], ta, iou_threshold),
        "b": _scores(dets["b"], tb, iou_threshold),
        "fused": _scores(dets["fused"], ta, iou_threshold),
    }
    records = []
    for k, tid in enumerate(ids):
        in_a, in_b, in_f = (k in scores[c] for c in ("a", "b", "fused"))
        records.append(ObjectRecord(
            tid, in_a, in_b, in_f,
            scores["a"].get(k, 0.0), scores["b"].get(k, 0.0), scores["fused"].get(k, 0.0),
            classify_difficulty(in_a, in_b),
            distance_band(ta[k].range).value,
        ))
    report = ExperimentReport(
        label,
        records,
        {c: len(s) for c, s in scores.items()},
        {c: len(d) for c, d in dets.items()},
        drift=(float(drift[0]), float(drift[1])),
    )
    return report, fused


def scenario_frames(scenario: Scenario):
    """Both scans and the truth boxes of every car in each sensor frame."""
    scene = scenario.scene
    cars = scenario.cars()
    return (
        simulate_scan(scene, scenario.sensor("a")),
        simulate_scan(scene, scenario.sensor("b")),
        {o.id: object_box_in_sensor(scene, o, scenario.pose_a) for o in cars},
        {o.id: object_box_in_sensor(scene, o, scenario.pose_b) for o in cars},
    )


def run_cooper_experiment(
    scenario: Scenario,
    params: DetectorParams | None = None,
    dedup_leaf: float | None = None,
    iou_threshold: float = DEFAULT_IOU,
    drift: tuple[float, float] = (0.0, 0.0),
    detector: Detector | None = None,
    frames=None,
) -> ExperimentReport:
    """Experiment on a simulated scenario; ``frames`` may carry a cached :func:`scenario_frames`."""
    cloud_a, cloud_b, truth_a, truth_b = frames or scenario_frames(scenario)
    report, _ = run_frame_pair(
        cloud_a, scenario.pose_a, cloud_b, scenario.pose_b, truth_a, truth_b,
        params or DetectorParams.for_sensor(scenario.beams), dedup_leaf, iou_threshold, drift, detector,
        label=f"{scenario.variant}-{scenario.seed}",
    )
    report.hidden_id = scenario.hidden_id
    return report


# --- suites -----------------------------------------------------------------

def make_occlusion_suite(n: int, seed: int = 0, beams: int = 16) -> list[Scenario]:
    """``n`` scenarios alternating the moderate and hard variants."""
    return [make_occlusion_scenario(seed * 100003 + i, ("moderate", "hard")[i % 2], beams) for i in range(n)]


def min_separation(scenario: Scenario) -> float:
    """Conservative lower bound on the smallest gap between two scene objects."""
    objs = scenario.scene.objects
    gaps = [_footprint_gap(a, b) for i, a in enumerate(objs) for b in objs[i + 1:]]
    return min(gaps, default=math.inf)


def improvement_cdf(reports: list[ExperimentReport]) -> dict[Difficulty, list[tuple[float, float]]]:
    """Empirical CDF of the improvement per difficulty class as (value, probability) steps."""
    if not reports:
        raise InvalidParameterError("improvement_cdf needs at least one report")
    out: dict[Difficulty, list[tuple[float, float]]] = {}
    for diff in Difficulty:
        values = sorted(r.improvement for rep in reports for r in rep.records if r.difficulty is diff)
        n = len(values)
        steps: list[tuple[float, float]] = []
        for i, v in enumerate(values):
            if steps and steps[-1][0] == v:
                steps[-1] = (v, (i + 1) / n)
            else:
                steps.append((v, (i + 1) / n))
        out[diff] = steps
    return out


def median_improvement(reports: list[ExperimentReport], difficulty: Difficulty) -> float:
    values = [r.improvement for rep in reports for r in rep.records if r.difficulty is difficulty]
    return statistics.median(values) if values else math.nan


@dataclass(frozen=True)
class DriftCase:
    label: str
    offset: tuple[float, float]


def drift_cases(max_drift: float = 0.10) -> list[DriftCase]:
    """Baseline, both axes at the bound, one axis at a time, and twice the bound."""
    if not max_drift > 0:
        raise InvalidParameterError(f"max_drift must be positive, got {max_drift}")
    m = float(max_drift)
    cases = [DriftCase("baseline", (0.0, 0.0))]
    cases += [DriftCase("both", (sx * m, sy * m)) for sx in (1, -1) for sy in (1, -1)]
    cases += [DriftCase("x-only", (sx * m, 0.0)) for sx in (1, -1)]
    cases += [DriftCase("y-only", (0.0, sy * m)) for sy in (1, -1)]
    cases += [DriftCase("double", (2 * sx * m, 2 * sy * m)) for sx in (1, -1) for sy in (1, -1)]
    return cases


@dataclass
class DriftResult:
    case: DriftCase
    report: ExperimentReport
    same_as_baseline: bool
    lost: list[int]
    gained: list[int]
    score_delta: dict[int, float]

    @property
    def within_bound(self) -> bool:
        return self.case.label != "double"


@dataclass
class DriftReport:
    label: str
    max_drift: float
    results: list[DriftResult] = field(default_factory=list)

    def within_bound_stable(self) -> bool:
        return all(r.same_as_baseline for r in self.results if r.within_bound)

    def rows(self) -> list[dict]:
        return [
            {
                "scenario": self.label,
                "case": r.case.label,
                "dx": r.case.offset[0],
                "dy": r.case.offset[1],
                "fused_detected": len(r.report.matched_set()),
                "same_as_baseline": r.same_as_baseline,
                "lost": " ".join(map(str, r.lost)),
                "gained": " ".join(map(str, r.gained)),
                "mean_score_delta": (statistics.fmean(r.score_delta.values()) if r.score_delta else 0.0),
            }
            for r in self.results
        ]


def gps_drift_suite(
    scenario: Scenario,
    max_drift: float = 0.10,
    params: DetectorParams | None = None,
    dedup_leaf: float | None = None,
    iou_threshold: float = DEFAULT_IOU,
) -> DriftReport:
    """Re-run the experiment with the transmitter's GPS skewed by each drift case."""
    cases = drift_cases(max_drift)
    out = DriftReport(f"{scenario.variant}-{scenario.seed}", float(max_drift))
    base = None
    frames = scenario_frames(scenario)
    for case in cases:
        rep = run_cooper_experiment(scenario, params, dedup_leaf, iou_threshold, case.offset, frames=frames)
        if base is None:
            base = rep
        b_set, r_set = base.matched_set(), rep.matched_set()
        delta = {
            r.truth_id: r.score_fused - base.record(r.truth_id).score_fused
            for r in rep.records
            if r.truth_id in b_set and r.truth_id in r_set
        }
        out.results.append(DriftResult(
            case, rep, b_set == r_set, sorted(b_set - r_set), sorted(r_set - b_set), delta,
        ))
    return out


def timing_benchmark(
    single: PointCloud,
    fused: PointCloud,
    params: DetectorParams | None = None,
    repetitions: int = 30,
    fused_origins: np.ndarray | None = None,
) -> tuple[float, float]:
    """Median wall-clock milliseconds of :func:`detect` on each cloud.

    Runs alternate between the two clouds so slow drift in machine load
    affects both medians alike.
    """
    if repetitions < 10:
        raise InvalidParameterError(f"repetitions must be >= 10, got {repetitions}")
    params = params or DetectorParams.for_sensor(single.beam_count)
    t_single, t_fused = [], []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        detect(single, params)
        t1 = time.perf_counter()
        detect(fused, params, fused_origins)
        t2 = time.perf_counter()
        t_single.append((t1 - t0) * 1000.0)
        t_fused.append((t2 - t1) * 1000.0)
    return statistics.median(t_single), statistics.median(t_fused)


# --- invariant checks -------------------------------------------------------

def check_reports(reports: list[ExperimentReport], require_hidden: bool = False) -> list[str]:
    """Names of the suite properties the reports violate (empty when all hold)."""
    failed = []
    if any(rep.counts["fused"] < max(rep.counts["a"], rep.counts["b"]) for rep in reports):
        failed.append("detection-count-dominance")
    if any(r.difficulty is not classify_difficulty(r.detected_a, r.detected_b) for rep in reports for r in rep.records):
        failed.append("difficulty-partition")
    if reports:
        for steps in improvement_cdf(reports).values():
            probs = [p for _, p in steps]
            vals = [v for v, _ in steps]
            if probs != sorted(probs) or vals != sorted(vals) or any(not 0 <= p <= 1 for p in probs):
                failed.append("cdf-monotone")
                break
    if require_hidden:
        for rep in reports:
            rec = rep.record(rep.hidden_id)
            if rec.detected_a or not rec.detected_fused:
                failed.append("hidden-object-recovery")
                break
    return failed


# --- exports ----------------------------------------------------------------

def reports_to_json(reports: list[ExperimentReport]) -> str:
    return json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True) + "\n"


def _csv(header: list[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def records_to_csv(reports: list[ExperimentReport]) -> str:
    cols = ["truth_id", "detected_a", "detected_b", "detected_fused", "score_a", "score_b",
            "score_fused", "improvement", "difficulty", "distance_band"]
    rows = []
    for rep in reports:
        for r in rep.records:
            d = r.to_dict()
            rows.append([rep.label] + [d[c] for c in cols])
    return _csv(["scenario"] + cols, rows)


def cdf_to_csv(cdf: dict[Difficulty, list[tuple[float, float]]]) -> str:
    return _csv(["difficulty", "improvement", "cdf"],
                [[d.value, v, p] for d, steps in cdf.items() for v, p in steps])


def drift_to_csv(drift_reports: list[DriftReport]) -> str:
    rows = [row for rep in drift_reports for row in rep.rows()]
    header = ["scenario", "case", "dx", "dy", "fused_detected", "same_as_baseline", "lost", "gained",
              "mean_score_delta"]
    return _csv(header, [[row[h] for h in header] for row in rows])
