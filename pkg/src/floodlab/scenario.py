"""Benign/attack experiment timelines and their config files.

Scenario files are INI documents::

    [scenario]
    name = tcp_train
    benign_rate_pps = 100.67
    delivery_fraction_min = 0.05     ; optional, default 0.05
    delivery_fraction_max = 0.40     ; optional, default 0.40
    seed = 42                        ; optional, the CLI --seed overrides it

    [segment 1]
    kind = benign
    duration_s = 600

    [segment 2]
    kind = attack
    attacks = tcp, icmp              ; flood preset names or [flood NAME] sections
    duration_s = 600

    [flood slowtcp]                  ; optional custom flood profile
    protocol = tcp
    port = 80
    payload_bytes = 1000
    mean_s = 0.01
    std_s = 0.05
    p25_s = 1e-5
    p50_s = 5e-5
    p75_s = 5e-3
    arrival_rate_pps = 100

Segments run in ascending numeric order. Label interval files are CSV with
header ``start_s,end_s,label``.
"""

from __future__ import annotations

import configparser
import csv
import enum
import io
import zlib
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import TextIO

import numpy as np

from floodlab.errors import ConfigError, FormatError, InvalidArgument
from floodlab.ingest import merge_traces
from floodlab.trace import (
    BENIGN_RATE_PPS,
    FLOOD_PRESETS,
    TICKS_PER_SECOND,
    FloodProfile,
    InterArrivalStats,
    Protocol,
    TrafficTrace,
    concat_traces,
    synth_benign,
    synth_flood,
    to_ticks,
)

PRESET_NAMES = ("tcp_train", "icmp_train", "tcp_test", "icmp_test", "hybrid_test")


class SegmentKind(enum.Enum):
    BENIGN = "benign"
    ATTACK = "attack"


@dataclass(frozen=True)
class DegradationModel:
    """Fraction of offered MAVLink packets that still arrive during an attack.

    A fraction is drawn uniformly from [min, max] for every ``window_s`` slot
    of an attack segment and benign packets in that slot are kept with that
    probability.
    """

    delivery_fraction_min: float = 0.05
    delivery_fraction_max: float = 0.40
    window_s: float = 0.1

    def __post_init__(self):
        if not (0 < self.delivery_fraction_min <= self.delivery_fraction_max <= 1):
            raise InvalidArgument("need 0 < delivery_fraction_min <= delivery_fraction_max <= 1")
        if not self.window_s > 0:
            raise InvalidArgument("window_s must be positive")


@dataclass(frozen=True)
class Segment:
    kind: SegmentKind
    duration_s: float
    attack_profiles: tuple = ()

    def __post_init__(self):
        if not self.duration_s > 0:
            raise InvalidArgument(f"segment duration must be positive, got {self.duration_s}")
        if self.kind is SegmentKind.ATTACK and not self.attack_profiles:
            raise InvalidArgument("attack segment needs at least one flood profile")


@dataclass(frozen=True)
class ScenarioSpec:
    segments: tuple
    benign_rate_pps: float = BENIGN_RATE_PPS
    degradation: DegradationModel = field(default_factory=DegradationModel)
    seed: int = 0
    name: str = "scenario"

    @property
    def duration_s(self) -> float:
        return float(sum(s.duration_s for s in self.segments))

    def with_seed(self, seed: int) -> "ScenarioSpec":
        return ScenarioSpec(self.segments, self.benign_rate_pps, self.degradation, seed, self.name)


@dataclass(frozen=True)
class LabelInterval:
    start_s: float
    end_s: float
    label: int


def synth_scenario(spec: ScenarioSpec) -> tuple[TrafficTrace, list[LabelInterval]]:
    """Render a scenario into one trace plus the ground-truth label timeline."""
    if not spec.segments:
        raise InvalidArgument("scenario has no segments")
    rng = np.random.default_rng(spec.seed)
    deg = spec.degradation
    total = spec.duration_s
    parts, labels = [], []
    offset = 0.0
    for seg in spec.segments:
        benign = synth_benign(spec.benign_rate_pps, seg.duration_s, rng).shifted(offset, total)
        if seg.kind is SegmentKind.ATTACK:
            slot = to_ticks(benign.t_rel) // int(round(deg.window_s * TICKS_PER_SECOND))
            first = int(to_ticks(offset) // int(round(deg.window_s * TICKS_PER_SECOND)))
            n_slots = int(np.ceil(seg.duration_s / deg.window_s)) + 1
            frac = rng.uniform(deg.delivery_fraction_min, deg.delivery_fraction_max, size=n_slots)
            keep = rng.random(len(benign)) < frac[slot - first]
            merged = benign.select(keep)
            for profile in seg.attack_profiles:
                flood = synth_flood(profile, seg.duration_s, rng).shifted(offset, total)
                merged = merge_traces(merged, flood)
            parts.append(merged)
        else:
            parts.append(benign)
        label = 1 if seg.kind is SegmentKind.ATTACK else 0
        labels.append(LabelInterval(offset, offset + seg.duration_s, label))
        offset += seg.duration_s
    return concat_traces(parts, total), labels


def write_labels(intervals: list[LabelInterval], stream: TextIO) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(("start_s", "end_s", "label"))
    for iv in intervals:
        w.writerow((f"{iv.start_s:.6f}", f"{iv.end_s:.6f}", iv.label))


def read_labels(stream: TextIO) -> list[LabelInterval]:
    reader = csv.reader(stream)
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != ["start_s", "end_s", "label"]:
        raise FormatError("label file must start with header start_s,end_s,label")
    out = []
    for row in reader:
        if not row:
            continue
        try:
            iv = LabelInterval(float(row[0]), float(row[1]), int(row[2]))
        except (ValueError, IndexError):
            raise FormatError(f"line {reader.line_num}: malformed label interval {row!r}") from None
        if iv.label not in (0, 1) or iv.end_s < iv.start_s:
            raise FormatError(f"line {reader.line_num}: invalid label interval {row!r}")
        out.append(iv)
    return out


def _flood_from_section(name: str, sec) -> FloodProfile:
    try:
        proto = Protocol.parse(sec["protocol"])
        stats = InterArrivalStats(*(float(sec[k]) for k in (
            "mean_s", "std_s", "p25_s", "p50_s", "p75_s", "arrival_rate_pps")))
        port = int(sec["port"]) if "port" in sec else None
        return FloodProfile(proto, stats, int(sec.get("payload_bytes", "1000")), port,
                            sec.get("urgent", "false").lower() == "true")
    except KeyError as e:
        raise ConfigError(f"[flood {name}] lacks key {e.args[0]!r}") from None
    except ValueError as e:
        raise ConfigError(f"[flood {name}]: {e}") from None


def parse_scenario(text: str) -> ScenarioSpec:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"unreadable scenario file: {e}") from None
    if "scenario" not in cp:
        raise ConfigError("scenario file needs a [scenario] section")
    head = cp["scenario"]
    floods = dict(FLOOD_PRESETS)
    for sec in cp.sections():
        if sec.startswith("flood "):
            name = sec.split(None, 1)[1].strip()
            floods[name] = _flood_from_section(name, cp[sec])

    numbered = []
    for sec in cp.sections():
        if sec.startswith("segment"):
            try:
                numbered.append((int(sec.split(None, 1)[1]), sec))
            except (IndexError, ValueError):
                raise ConfigError(f"segment section {sec!r} must be named 'segment <number>'") from None
    if not numbered:
        raise ConfigError("scenario has no [segment N] sections")

    segments = []
    for _, sec in sorted(numbered):
        s = cp[sec]
        try:
            kind = SegmentKind(s["kind"].strip().lower())
            duration = float(s["duration_s"])
        except KeyError as e:
            raise ConfigError(f"[{sec}] lacks key {e.args[0]!r}") from None
        except ValueError as e:
            raise ConfigError(f"[{sec}]: {e}") from None
        profiles = ()
        if kind is SegmentKind.ATTACK:
            names = [n.strip() for n in s.get("attacks", "").split(",") if n.strip()]
            unknown = [n for n in names if n not in floods]
            if unknown:
                raise ConfigError(f"[{sec}] names unknown flood(s) {unknown}")
            profiles = tuple(floods[n] for n in names)
        try:
            segments.append(Segment(kind, duration, profiles))
        except InvalidArgument as e:
            raise ConfigError(f"[{sec}]: {e}") from None

    try:
        deg = DegradationModel(float(head.get("delivery_fraction_min", "0.05")),
                               float(head.get("delivery_fraction_max", "0.40")))
        return ScenarioSpec(tuple(segments), float(head.get("benign_rate_pps", str(BENIGN_RATE_PPS))),
                            deg, int(head.get("seed", "0")), head.get("name", "scenario"))
    except (ValueError, InvalidArgument) as e:
        raise ConfigError(f"[scenario]: {e}") from None


def load_scenario(path_or_preset: str) -> ScenarioSpec:
    """Load a scenario file, or a shipped preset by bare name (``tcp_train``...)."""
    p = Path(path_or_preset)
    if p.exists():
        return parse_scenario(p.read_text())
    stem = p.name[:-4] if p.name.endswith(".cfg") else p.name
    if stem in PRESET_NAMES:
        return preset(stem)
    raise ConfigError(f"no scenario file or preset named {path_or_preset!r}")


def preset(name: str) -> ScenarioSpec:
    if name not in PRESET_NAMES:
        raise ConfigError(f"unknown preset {name!r}; choose from {PRESET_NAMES}")
    text = resources.files("floodlab.scenarios").joinpath(f"{name}.cfg").read_text()
    return parse_scenario(text)


def labels_to_text(intervals: list[LabelInterval]) -> str:
    buf = io.StringIO()
    write_labels(intervals, buf)
    return buf.getvalue()


def scenario_seed(base_seed: int, name: str) -> int:
    """Stable per-scenario seed so train and test captures never coincide."""
    ss = np.random.SeedSequence([int(base_seed), zlib.crc32(name.encode())])
    return int(ss.generate_state(1, dtype=np.uint64)[0])
