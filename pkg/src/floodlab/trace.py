"""Packet/trace types, synthetic MAVLink and flood generators, inter-arrival statistics.

All timestamps live on a 1 microsecond capture clock (the resolution of a
6-decimal Wireshark export), so a generated trace survives a CSV round trip
bit-for-bit and windowing can be done in exact integer arithmetic.
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional

import numpy as np
from scipy import optimize

from floodlab.errors import InsufficientData, InvalidArgument, OrderError

TICKS_PER_SECOND = 1_000_000

GCS_ADDR = "10.42.0.1"
UAV_ADDR = "10.42.0.34"  # hping3 target in the flooding setup
FLOOD_HEADER_BYTES = 42  # Ethernet + IPv4 + ICMP/TCP-ish framing added to --data


class Protocol(enum.IntEnum):
    MAVLINK = 0
    TCP = 1
    ICMP = 2
    OTHER = 3

    @classmethod
    def parse(cls, text: str) -> "Protocol":
        t = text.strip().upper()
        if t.startswith("MAVLINK"):
            return cls.MAVLINK
        if t == "TCP":
            return cls.TCP
        if t == "ICMP":
            return cls.ICMP
        return cls.OTHER


def to_ticks(seconds) -> np.ndarray:
    """Seconds -> integer microseconds (nearest)."""
    return np.rint(np.asarray(seconds, dtype=np.float64) * TICKS_PER_SECOND).astype(np.int64)


@dataclass(frozen=True)
class PacketRecord:
    t_rel: float
    protocol: Protocol
    length_bytes: int
    src_id: str = ""
    dst_id: str = ""
    info: str = ""

    def __post_init__(self):
        if not self.t_rel >= 0:
            raise InvalidArgument(f"t_rel must be non-negative, got {self.t_rel}")
        if self.length_bytes < 1:
            raise InvalidArgument(f"length_bytes must be >= 1, got {self.length_bytes}")


@dataclass(eq=False)
class TrafficTrace:
    """Time-ordered packets stored column-wise.

    Iterating yields :class:`PacketRecord` objects; the numpy columns are what
    the rest of the pipeline works on.
    """

    t_rel: np.ndarray
    protocol: np.ndarray
    length: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    info: np.ndarray
    duration_s: float

    def __post_init__(self):
        self.t_rel = np.asarray(self.t_rel, dtype=np.float64)
        self.protocol = np.asarray(self.protocol, dtype=np.int8)
        self.length = np.asarray(self.length, dtype=np.int64)
        self.src = np.asarray(self.src, dtype=object)
        self.dst = np.asarray(self.dst, dtype=object)
        self.info = np.asarray(self.info, dtype=object)
        self.duration_s = float(self.duration_s)
        n = len(self.t_rel)
        for name in ("protocol", "length", "src", "dst", "info"):
            if len(getattr(self, name)) != n:
                raise InvalidArgument(f"column {name!r} has {len(getattr(self, name))} rows, expected {n}")
        if n:
            if self.t_rel[0] < 0:
                raise InvalidArgument("t_rel must be non-negative")
            bad = np.flatnonzero(np.diff(self.t_rel) < 0)
            if bad.size:
                raise OrderError(f"packet {bad[0] + 1} precedes packet {bad[0]} in time")
            if self.t_rel[-1] > self.duration_s:
                raise InvalidArgument(
                    f"packet at t={self.t_rel[-1]} lies beyond duration {self.duration_s}")
            if self.length.min() < 1:
                raise InvalidArgument("length_bytes must be >= 1")

    @classmethod
    def empty(cls, duration_s: float = 0.0) -> "TrafficTrace":
        z = np.empty(0)
        return cls(z, z, z, z, z, z, duration_s)

    @classmethod
    def from_packets(cls, packets: Iterable[PacketRecord], duration_s: Optional[float] = None) -> "TrafficTrace":
        packets = list(packets)
        t = [p.t_rel for p in packets]
        if duration_s is None:
            duration_s = t[-1] if t else 0.0
        return cls(
            t,
            [int(p.protocol) for p in packets],
            [p.length_bytes for p in packets],
            [p.src_id for p in packets],
            [p.dst_id for p in packets],
            [p.info for p in packets],
            duration_s,
        )

    def __len__(self):
        return len(self.t_rel)

    def __iter__(self) -> Iterator[PacketRecord]:
        for i in range(len(self)):
            yield self.record(i)

    def record(self, i: int) -> PacketRecord:
        return PacketRecord(float(self.t_rel[i]), Protocol(int(self.protocol[i])), int(self.length[i]),
                            self.src[i], self.dst[i], self.info[i])

    @property
    def packets(self) -> list[PacketRecord]:
        return list(self)

    def times_of(self, protocol: Protocol) -> np.ndarray:
        return self.t_rel[self.protocol == int(protocol)]

    def count(self, protocol: Optional[Protocol] = None) -> int:
        if protocol is None:
            return len(self)
        return int(np.count_nonzero(self.protocol == int(protocol)))

    def select(self, mask: np.ndarray) -> "TrafficTrace":
        return TrafficTrace(self.t_rel[mask], self.protocol[mask], self.length[mask],
                            self.src[mask], self.dst[mask], self.info[mask], self.duration_s)

    def shifted(self, offset_s: float, duration_s: float) -> "TrafficTrace":
        # offsets are whole ticks so shifted times stay on the capture clock
        ticks = to_ticks(self.t_rel) + int(to_ticks(offset_s))
        return TrafficTrace(ticks / TICKS_PER_SECOND, self.protocol, self.length,
                            self.src, self.dst, self.info, duration_s)

    def identical_to(self, other: "TrafficTrace") -> bool:
        return (
            self.duration_s == other.duration_s
            and np.array_equal(self.t_rel, other.t_rel)
            and np.array_equal(self.protocol, other.protocol)
            and np.array_equal(self.length, other.length)
            and list(self.src) == list(other.src)
            and list(self.dst) == list(other.dst)
            and list(self.info) == list(other.info)
        )


def concat_traces(parts: list[TrafficTrace], duration_s: float) -> TrafficTrace:
    """Concatenate traces that already occupy consecutive time ranges."""
    if not parts:
        return TrafficTrace.empty(duration_s)
    return TrafficTrace(
        np.concatenate([p.t_rel for p in parts]),
        np.concatenate([p.protocol for p in parts]),
        np.concatenate([p.length for p in parts]),
        np.concatenate([p.src for p in parts]),
        np.concatenate([p.dst for p in parts]),
        np.concatenate([p.info for p in parts]),
        duration_s,
    )


@dataclass(frozen=True)
class InterArrivalStats:
    mean_s: float
    std_s: float
    p25_s: float
    p50_s: float
    p75_s: float
    arrival_rate_pps: float

    def __post_init__(self):
        if not (self.p25_s <= self.p50_s <= self.p75_s):
            raise InvalidArgument("percentiles must satisfy p25 <= p50 <= p75")
        if not self.arrival_rate_pps > 0:
            raise InvalidArgument("arrival_rate_pps must be positive")


# Measured flood statistics (10 minute captures).
ICMP_STATS = InterArrivalStats(5.6e-3, 4.48e-2, 1.1e-5, 5.55e-4, 1.475e-3, 1.7857e2)
TCP_STATS = InterArrivalStats(7.7e-3, 4.52e-2, 1.2e-5, 4.9e-5, 4.126e-3, 1.2987e2)


@dataclass(frozen=True)
class FloodProfile:
    """One hping3-style flood: ``--flood --data <payload_bytes> [-U -p <port> | -1]``."""

    protocol: Protocol
    target_stats: InterArrivalStats
    payload_bytes: int = 1000
    port: Optional[int] = None
    urgent: bool = False  # TCP -U flag; metadata only

    def __post_init__(self):
        if self.protocol not in (Protocol.TCP, Protocol.ICMP):
            raise InvalidArgument(f"flood protocol must be TCP or ICMP, got {self.protocol!r}")
        if (self.port is not None) != (self.protocol == Protocol.TCP):
            raise InvalidArgument("port must be given for TCP floods and only for TCP floods")
        if self.payload_bytes < 1:
            raise InvalidArgument("payload_bytes must be positive")

    @property
    def packet_length(self) -> int:
        return self.payload_bytes + FLOOD_HEADER_BYTES


TCP_FLOOD = FloodProfile(Protocol.TCP, TCP_STATS, payload_bytes=1000, port=80, urgent=True)
ICMP_FLOOD = FloodProfile(Protocol.ICMP, ICMP_STATS, payload_bytes=1000)
FLOOD_PRESETS = {"tcp": TCP_FLOOD, "icmp": ICMP_FLOOD}

BENIGN_RATE_PPS = 100.67        # mean benign telemetry rate
ICMP_SCENARIO_BENIGN_PPS = 122.77  # benign rate of the ICMP training capture


@dataclass(frozen=True)
class GapMixture:
    """Hyperexponential inter-arrival law: component i is Exp(mean_i) with probability weight_i."""

    weights: tuple
    means: tuple

    @property
    def mean(self) -> float:
        return float(np.dot(self.weights, self.means))

    @property
    def std(self) -> float:
        w, b = np.asarray(self.weights), np.asarray(self.means)
        return float(math.sqrt(max(2.0 * np.sum(w * b * b) - self.mean ** 2, 0.0)))

    def cdf(self, x: float) -> float:
        w, b = np.asarray(self.weights), np.asarray(self.means)
        return float(np.sum(w * -np.expm1(-x / b)))

    def quantile(self, p: float) -> float:
        hi = max(self.means) * 60.0
        return optimize.brentq(lambda x: self.cdf(x) - p, 0.0, hi, xtol=1e-15, rtol=1e-12)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        comp = rng.choice(len(self.weights), size=n, p=np.asarray(self.weights))
        return rng.standard_exponential(n) * np.asarray(self.means)[comp]


def _mixture_from_free(z, mean, floor_s):
    e = np.exp(z[:3] - np.max(z[:3]))
    w = e / e.sum()
    b1 = floor_s + math.exp(z[3])
    b2 = math.exp(z[4])
    b3 = (mean - w[0] * b1 - w[1] * b2) / w[2]
    return w, np.array([b1, b2, b3])


@functools.lru_cache(maxsize=None)
def fit_gap_mixture(stats: InterArrivalStats, floor_s: float = 5e-6) -> GapMixture:
    """Fit a three-component hyperexponential to measured gap statistics.

    Components read as back-to-back bursts, scheduler-paced sends, and long
    pauses. The mixture mean equals ``stats.mean_s`` exactly; weights and the
    two shorter means are chosen (Nelder-Mead from a fixed start, so the
    result is deterministic) to match p25/p50/p75 and the std in log space.
    The burst mean is floored at a few clock ticks so the fitted shape survives
    microsecond timestamp quantization.
    """
    mean = stats.mean_s
    targets = [(0.25, stats.p25_s), (0.50, stats.p50_s), (0.75, stats.p75_s)]
    targets = [(p, q) for p, q in targets if q > 0]

    def loss(z):
        w, b = _mixture_from_free(z, mean, floor_s)
        if not (b[0] < b[1] < b[2]):
            return 1e6
        mix = GapMixture(tuple(w), tuple(b))
        err = sum(math.log(mix.quantile(p) / q) ** 2 for p, q in targets)
        if stats.std_s > 0:
            err += math.log(mix.std / stats.std_s) ** 2
        return err

    p25 = max(stats.p25_s, floor_s)
    starts = [
        np.array([0.0, 0.0, -1.0, math.log(p25), math.log(max(stats.p75_s, 2 * p25))]),
        np.array([0.0, 0.0, 0.0, math.log(p25), math.log(max(stats.p50_s, 2 * p25))]),
    ]
    best = None
    for z0 in starts:
        if loss(z0) >= 1e6:
            continue
        res = optimize.minimize(loss, z0, method="Nelder-Mead",
                                options=dict(xatol=1e-9, fatol=1e-14, maxiter=20000, maxfev=20000))
        if best is None or res.fun < best.fun:
            best = res
    if best is None:
        # stats too close to memoryless for a three-phase fit
        return GapMixture((1.0,), (mean,))
    w, b = _mixture_from_free(best.x, mean, floor_s)
    return GapMixture(tuple(float(x) for x in w), tuple(float(x) for x in b))


def _arrival_ticks(draw, mean_gap_s, duration_s):
    """Cumulative arrival instants in (0, duration) on the tick clock."""
    if duration_s <= 0:
        return np.empty(0, dtype=np.int64)
    batch = int(duration_s / mean_gap_s * 1.05) + 64
    chunks = []
    t0 = 0.0
    while True:
        t = t0 + np.cumsum(draw(batch))
        if t[-1] >= duration_s:
            chunks.append(t[t < duration_s])
            break
        chunks.append(t)
        t0 = t[-1]
    ticks = np.floor(np.concatenate(chunks) * TICKS_PER_SECOND).astype(np.int64)
    return np.minimum(ticks, int(round(duration_s * TICKS_PER_SECOND)) - 1)


# (message, frame length) of common MAVLink 2 telemetry over UDP; weights roughly
# follow default stream rates
_MAVLINK_MESSAGES = (
    ("HEARTBEAT", 63), ("ATTITUDE", 82), ("GLOBAL_POSITION_INT", 82), ("SYS_STATUS", 85),
    ("VFR_HUD", 74), ("GPS_RAW_INT", 84), ("RAW_IMU", 80), ("RC_CHANNELS", 96),
    ("SERVO_OUTPUT_RAW", 79), ("PARAM_VALUE", 79), ("TIMESYNC", 70), ("COMMAND_LONG", 87),
)
_MAVLINK_WEIGHTS = np.array([1, 4, 4, 2, 4, 2, 4, 2, 2, 1, 1, 1], dtype=float)
_MAVLINK_WEIGHTS /= _MAVLINK_WEIGHTS.sum()


def synth_benign(rate_pps: float, duration_s: float, rng: np.random.Generator) -> TrafficTrace:
    """GCS<->UAV MAVLink telemetry as a Poisson stream of ``rate_pps``."""
    if not rate_pps > 0:
        raise InvalidArgument(f"rate_pps must be positive, got {rate_pps}")
    if duration_s < 0:
        raise InvalidArgument(f"duration_s must be non-negative, got {duration_s}")
    mean_gap = 1.0 / rate_pps
    ticks = _arrival_ticks(lambda n: rng.exponential(mean_gap, n), mean_gap, duration_s)
    n = len(ticks)
    kind = rng.choice(len(_MAVLINK_MESSAGES), size=n, p=_MAVLINK_WEIGHTS)
    uplink = rng.random(n) < 0.5
    names = np.array([m[0] for m in _MAVLINK_MESSAGES], dtype=object)
    lengths = np.array([m[1] for m in _MAVLINK_MESSAGES], dtype=np.int64)
    src = np.where(uplink, GCS_ADDR, UAV_ADDR).astype(object)
    dst = np.where(uplink, UAV_ADDR, GCS_ADDR).astype(object)
    return TrafficTrace(ticks / TICKS_PER_SECOND, np.full(n, int(Protocol.MAVLINK)), lengths[kind],
                        src, dst, names[kind], duration_s)


def _spoofed_pool(rng, size=4096):
    octets = rng.integers(1, 255, size=(size, 4))
    return np.array([f"{a}.{b}.{c}.{d}" for a, b, c, d in octets], dtype=object)


def synth_flood(profile: FloodProfile, duration_s: float, rng: np.random.Generator) -> TrafficTrace:
    """Flood packets whose gaps follow the mixture fitted to ``profile.target_stats``."""
    if duration_s < 0:
        raise InvalidArgument(f"duration_s must be non-negative, got {duration_s}")
    mix = fit_gap_mixture(profile.target_stats)
    ticks = _arrival_ticks(lambda n: mix.sample(rng, n), mix.mean, duration_s)
    n = len(ticks)
    pool = _spoofed_pool(rng)
    src = pool[rng.integers(0, len(pool), size=n)]
    if profile.protocol == Protocol.TCP:
        info = f"→ {profile.port} [URG] Len={profile.payload_bytes}" if profile.urgent \
            else f"→ {profile.port} Len={profile.payload_bytes}"
    else:
        info = "Echo (ping) request"
    return TrafficTrace(ticks / TICKS_PER_SECOND, np.full(n, int(profile.protocol)),
                        np.full(n, profile.packet_length), src, np.full(n, UAV_ADDR, dtype=object),
                        np.full(n, info, dtype=object), duration_s)


def trace_stats(trace: TrafficTrace, protocol: Protocol) -> InterArrivalStats:
    """Sample statistics of the gaps between successive ``protocol`` packets."""
    t = trace.times_of(protocol)
    if len(t) < 2:
        raise InsufficientData(f"need at least 2 {Protocol(protocol).name} packets, found {len(t)}")
    if not trace.duration_s > 0:
        raise InvalidArgument("trace duration must be positive to compute an arrival rate")
    gaps = np.diff(t)
    p25, p50, p75 = np.percentile(gaps, [25, 50, 75])
    return InterArrivalStats(
        mean_s=float(gaps.mean()),
        std_s=float(gaps.std()),
        p25_s=float(p25),
        p50_s=float(p50),
        p75_s=float(p75),
        arrival_rate_pps=len(t) / trace.duration_s,
    )
