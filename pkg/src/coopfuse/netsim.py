"""Two-vehicle exchange over a capacity-limited channel.

The clock is discrete: at every sample tick each sending vehicle cuts its
ROI out of the current frame, encodes a package and puts it on the air.
Traffic is accounted per whole second of simulated time and per vehicle.

Airtime is the serialization time ``8 * bytes / bandwidth``; the fixed
latency is propagation and processing delay and does not occupy the
channel, so it appears in per-message transmission times but not in the
utilization used for feasibility.
"""

from __future__ import annotations

import csv
import io
import math
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .codec import package_size
from .pointcloud import InvalidParameterError, PointCloud
from .roi import ForwardCone, FovSector, FullFrame, RoiSpec, extract_roi

VEHICLES = ("A", "B")


@dataclass(frozen=True)
class ChannelModel:
    bandwidth: float = 6e6  # bits per second
    latency: float = 0.002  # seconds
    loss_rate: float = 0.0

    def __post_init__(self) -> None:
        if not self.bandwidth > 0:
            raise InvalidParameterError(f"bandwidth must be positive, got {self.bandwidth}")
        if not self.latency >= 0:
            raise InvalidParameterError(f"latency must be non-negative, got {self.latency}")
        if not 0.0 <= self.loss_rate < 1.0:
            raise InvalidParameterError(f"loss_rate must be in [0, 1), got {self.loss_rate}")


class ExchangeScenario(str, Enum):
    OPPOSITE_LANES = "opposite"
    JUNCTION = "junction"
    FOLLOWING = "following"

    @property
    def roi(self) -> RoiSpec:
        if self is ExchangeScenario.OPPOSITE_LANES:
            return FullFrame()
        if self is ExchangeScenario.JUNCTION:
            return FovSector(0.0, 2.0 * math.pi / 3.0)
        return ForwardCone(math.pi / 4.0, 60.0)

    @property
    def senders(self) -> tuple[str, ...]:
        """Following is one-way: the vehicle ahead (A) feeds the one behind."""
        return ("A",) if self is ExchangeScenario.FOLLOWING else VEHICLES

    @classmethod
    def parse(cls, name: str) -> ExchangeScenario:
        aliases = {"opposite": "opposite", "opposite_lanes": "opposite", "oppositelanes": "opposite",
                   "junction": "junction", "following": "following"}
        key = aliases.get(name.strip().lower().replace("-", "_"))
        if key is None:
            raise InvalidParameterError(f"unknown scenario {name!r}; expected opposite, junction or following")
        return cls(key)


@dataclass(frozen=True)
class Message:
    tick: int
    time: float
    sender: str
    size: int
    points: int
    airtime: float
    transmission_time: float
    lost: bool


@dataclass
class TrafficReport:
    scenario: ExchangeScenario
    window: float
    sample_rate: float
    channel: ChannelModel
    messages: list[Message] = field(default_factory=list)

    @property
    def seconds(self) -> int:
        return math.ceil(self.window)

    def per_second_bytes(self) -> dict[str, list[int]]:
        out = {v: [0] * self.seconds for v in VEHICLES}
        for m in self.messages:
            out[m.sender][int(math.floor(m.time))] += m.size
        return out

    def per_second_airtime(self) -> dict[str, list[float]]:
        out = {v: [0.0] * self.seconds for v in VEHICLES}
        for m in self.messages:
            out[m.sender][int(math.floor(m.time))] += m.airtime
        return out

    def totals(self) -> dict[str, int]:
        return {v: sum(b) for v, b in self.per_second_bytes().items()}

    def transmission_times(self) -> list[float]:
        return [m.transmission_time for m in self.messages]

    def utilization(self) -> list[float]:
        """Share of each second the channel is busy, both directions together."""
        air = self.per_second_airtime()
        return [air["A"][s] + air["B"][s] for s in range(self.seconds)]

    def to_csv(self, feasibility: tuple[bool, float] | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["second", "vehicle", "bytes", "airtime_ms"])
        data, air = self.per_second_bytes(), self.per_second_airtime()
        for s in range(self.seconds):
            for v in VEHICLES:
                w.writerow([s, v, data[v][s], f"{air[v][s] * 1000.0:.3f}"])
        if feasibility is not None:
            ok, margin = feasibility
            buf.write(f"# feasible={str(ok).lower()} worst_utilization={margin:.6f}\n")
        return buf.getvalue()


class TruncatedRunError(RuntimeError):
    """A frame source ran dry before the window closed; ``report`` holds what was simulated."""

    def __init__(self, message: str, report: TrafficReport):
        super().__init__(message)
        self.report = report


def airtime(message_bytes: int, channel: ChannelModel) -> float:
    return 8.0 * message_bytes / channel.bandwidth


def transmission_time(message_bytes: int, channel: ChannelModel) -> float:
    if message_bytes < 0:
        raise InvalidParameterError(f"message size must be non-negative, got {message_bytes}")
    return channel.latency + airtime(message_bytes, channel)


def simulate_exchange(
    scenario: ExchangeScenario | str,
    frames: Mapping[str, Iterable[PointCloud]],
    sample_rate: float = 1.0,
    channel: ChannelModel | None = None,
    window: float = 8.0,
    seed: int = 0,
) -> TrafficReport:
    """Run the exchange for ``window`` seconds; ticks fall at ``k / sample_rate``.

    ``frames`` maps vehicle name ("A", "B") to an iterable of frames; one
    frame is drawn per tick from each sender.  Lost messages (drawn from the
    seeded generator) still consume airtime.
    """
    if not sample_rate > 0:
        raise InvalidParameterError(f"sample_rate must be positive, got {sample_rate}")
    if not window > 0:
        raise InvalidParameterError(f"window must be positive, got {window}")
    if isinstance(scenario, str) and not isinstance(scenario, ExchangeScenario):
        scenario = ExchangeScenario.parse(scenario)
    channel = channel or ChannelModel()
    rng = np.random.default_rng(seed)
    report = TrafficReport(scenario, float(window), float(sample_rate), channel)
    sources: dict[str, Iterator[PointCloud]] = {v: iter(frames.get(v, ())) for v in scenario.senders}
    roi = scenario.roi

    n_ticks = math.ceil(window * sample_rate - 1e-9)
    for k in range(n_ticks):
        t = k / sample_rate
        for sender in scenario.senders:
            frame = next(sources[sender], None)
            if frame is None:
                raise TruncatedRunError(f"vehicle {sender} ran out of frames at t={t:g}s", report)
            points = len(extract_roi(frame, roi))
            size = package_size(points)
            lost = bool(rng.random() < channel.loss_rate)
            report.messages.append(Message(
                k, t, sender, size, points, airtime(size, channel), transmission_time(size, channel), lost,
            ))
    return report


def feasibility_check(report: TrafficReport, channel: ChannelModel | None = None) -> tuple[bool, float]:
    """``(feasible, worst-second utilization)``; airtime is recomputed for ``channel`` if given."""
    if channel is not None and channel != report.channel:
        report = TrafficReport(report.scenario, report.window, report.sample_rate, channel, [
            Message(m.tick, m.time, m.sender, m.size, m.points, airtime(m.size, channel),
                    transmission_time(m.size, channel), m.lost)
            for m in report.messages
        ])
    util = report.utilization()
    worst = max(util, default=0.0)
    return worst <= 1.0, worst


def uniform_azimuth_frame(n: int, seed: int = 0, max_range: float = 80.0, beam_count: int = 16) -> PointCloud:
    """Synthetic frame with azimuths uniform on the circle and ranges inside the codec limit."""
    rng = np.random.default_rng(seed)
    az = rng.uniform(-math.pi, math.pi, n)
    r = rng.uniform(2.0, max_range, n)
    z = rng.uniform(-1.8, 1.0, n)
    xyz = np.stack([r * np.cos(az), r * np.sin(az), z], axis=1)
    return PointCloud(xyz, rng.uniform(0.0, 1.0, n), beam_count, f"synthetic-{seed}")
