"""Per-window MAVLink counts, standardization, and fixed-length sequences."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence, TextIO

import numpy as np

from floodlab.errors import FormatError, InsufficientData, InvalidArgument
from floodlab.scenario import LabelInterval
from floodlab.trace import TICKS_PER_SECOND, Protocol, TrafficTrace, to_ticks

LABEL_MODES = ("last", "majority", "any")


@dataclass
class WindowSeries:
    counts: np.ndarray
    labels: np.ndarray
    window_s: float = 0.1
    scaled: bool = False

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int8)
        if self.counts.shape != self.labels.shape or self.counts.ndim != 1:
            raise InvalidArgument(f"counts {self.counts.shape} and labels {self.labels.shape} must be equal-length 1-D")

    def __len__(self):
        return len(self.counts)


@dataclass(frozen=True)
class Scaler:
    mean: float
    std: float

    def transform(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def inverse(self, z):
        return np.asarray(z, dtype=np.float64) * self.std + self.mean


@dataclass
class SequenceDataset:
    """``sequences[i]`` covers windows ``starts[i] .. starts[i] + seq_len - 1``."""

    sequences: np.ndarray
    labels: np.ndarray
    seq_len: int
    stride: int
    starts: np.ndarray

    def __len__(self):
        return len(self.labels)

    def subset(self, idx) -> "SequenceDataset":
        return SequenceDataset(self.sequences[idx], self.labels[idx], self.seq_len, self.stride, self.starts[idx])

    @staticmethod
    def concat(parts: Sequence["SequenceDataset"]) -> "SequenceDataset":
        if not parts:
            raise InsufficientData("nothing to concatenate")
        return SequenceDataset(
            np.concatenate([p.sequences for p in parts]),
            np.concatenate([p.labels for p in parts]),
            parts[0].seq_len, parts[0].stride,
            np.concatenate([p.starts for p in parts]),
        )


def _window_ticks(window_s: float) -> int:
    w = int(round(window_s * TICKS_PER_SECOND))
    if not window_s > 0 or w < 1:
        raise InvalidArgument(f"window_s must be a positive multiple of 1e-6 s, got {window_s}")
    return w


def n_windows(duration_s: float, window_s: float) -> int:
    w = _window_ticks(window_s)
    d = int(to_ticks(duration_s))
    return -(-d // w)


def window_labels(n: int, window_s: float, intervals: Sequence[LabelInterval]) -> np.ndarray:
    """1 where the window midpoint falls in [start, end) of an attack interval."""
    w = _window_ticks(window_s)
    mid2 = (2 * np.arange(n, dtype=np.int64) + 1) * w  # twice the midpoint, in ticks
    labels = np.zeros(n, dtype=np.int8)
    for iv in intervals:
        if iv.label != 1:
            continue
        lo, hi = 2 * int(to_ticks(iv.start_s)), 2 * int(to_ticks(iv.end_s))
        labels[(mid2 >= lo) & (mid2 < hi)] = 1
    return labels


def window_counts(trace: TrafficTrace, window_s: float = 0.1,
                  label_intervals: Sequence[LabelInterval] = ()) -> WindowSeries:
    """Count MAVLink packets in contiguous windows [k*w, (k+1)*w).

    There are ceil(duration / w) windows. A packet sitting exactly at the end
    of the capture (possible for parsed files, whose duration is the last
    timestamp) opens one extra window rather than being dropped.
    """
    w = _window_ticks(window_s)
    ticks = to_ticks(trace.times_of(Protocol.MAVLINK))
    n = n_windows(trace.duration_s, window_s)
    if len(ticks):
        n = max(n, int(ticks[-1] // w) + 1)
    counts = np.bincount(ticks // w, minlength=n) if len(ticks) else np.zeros(n, dtype=np.int64)
    return WindowSeries(counts, window_labels(n, window_s, label_intervals), window_s, scaled=False)


def fit_scaler(train: WindowSeries | Sequence[WindowSeries]) -> Scaler:
    """Mean and population std over every training window, both classes pooled."""
    parts = [train] if isinstance(train, WindowSeries) else list(train)
    if any(p.scaled for p in parts):
        raise InvalidArgument("fit_scaler expects raw (unscaled) counts")
    x = np.concatenate([p.counts for p in parts]) if parts else np.empty(0)
    if x.size == 0:
        raise InsufficientData("cannot fit a scaler on an empty series")
    std = float(x.std())
    return Scaler(float(x.mean()), std if std >= 1e-12 else 1.0)


def apply_scaler(scaler: Scaler, series: WindowSeries) -> WindowSeries:
    if series.scaled:
        raise InvalidArgument("series is already scaled")
    return WindowSeries(scaler.transform(series.counts), series.labels.copy(), series.window_s, scaled=True)


def unscale(scaler: Scaler, series: WindowSeries) -> WindowSeries:
    if not series.scaled:
        raise InvalidArgument("series is not scaled")
    return WindowSeries(scaler.inverse(series.counts), series.labels.copy(), series.window_s, scaled=False)


def sequence_starts(n: int, seq_len: int, stride: int) -> np.ndarray:
    if seq_len < 1 or stride < 1:
        raise InvalidArgument("seq_len and stride must be positive")
    if n < seq_len:
        raise InsufficientData(f"series of {n} windows is shorter than seq_len {seq_len}")
    return np.arange(0, n - seq_len + 1, stride)


def _sequence_label(window_labels_: np.ndarray, starts, seq_len, mode):
    if mode == "last":
        return window_labels_[starts + seq_len - 1].astype(np.int8)
    cs = np.concatenate([[0], np.cumsum(window_labels_, dtype=np.int64)])
    pos = cs[starts + seq_len] - cs[starts]
    if mode == "majority":
        return (2 * pos > seq_len).astype(np.int8)
    if mode == "any":
        return (pos > 0).astype(np.int8)
    raise InvalidArgument(f"label mode must be one of {LABEL_MODES}, got {mode!r}")


def make_sequences(series: WindowSeries, seq_len: int, stride: int = 1, label_mode: str = "last",
                   starts: np.ndarray | None = None) -> SequenceDataset:
    """Sliding windows of ``seq_len`` counts; by default each takes the label of its last window."""
    if starts is None:
        starts = sequence_starts(len(series), seq_len, stride)
    else:
        starts = np.asarray(starts, dtype=np.int64)
        if len(series) < seq_len:
            raise InsufficientData(f"series of {len(series)} windows is shorter than seq_len {seq_len}")
    idx = starts[:, None] + np.arange(seq_len)[None, :]
    seqs = series.counts[idx] if len(starts) else np.empty((0, seq_len))
    return SequenceDataset(seqs, _sequence_label(series.labels, starts, seq_len, label_mode),
                           seq_len, stride, starts)


def split_train_val(series: WindowSeries, seq_len: int, train_stride: int, val_fraction: float,
                    label_mode: str = "last", boundary_stride: int | None = None
                    ) -> tuple[SequenceDataset, SequenceDataset]:
    """Chronological hold-out taken from the tail of every constant-label run.

    A sequence goes to validation when its last window falls in the final
    ``val_fraction`` of its label run; validation sequences use stride =
    seq_len so they do not overlap each other. All other sequence ends are
    stride-sampled into the training set. Training sequences that span a
    label change are rare at a coarse stride yet decide how quickly an attack
    is flagged, so with ``boundary_stride`` they are sampled at that finer
    stride as well.
    """
    if not 0 < val_fraction < 1:
        raise InvalidArgument("val_fraction must lie in (0, 1)")
    n = len(series)
    ends = sequence_starts(n, seq_len, 1) + seq_len - 1
    in_val = np.zeros(n, dtype=bool)
    change = np.flatnonzero(np.diff(series.labels)) + 1
    bounds = np.concatenate([[0], change, [n]])
    for a, b in zip(bounds[:-1], bounds[1:]):
        k = int(np.ceil(val_fraction * (b - a)))
        in_val[b - k:b] = True
    val_ends = ends[in_val[ends]]
    train_ends = ends[~in_val[ends]]
    val_pick = []
    last = -seq_len
    for e in val_ends:
        if e - last >= seq_len:
            val_pick.append(e)
            last = e
    picked = train_ends[::train_stride]
    if boundary_stride is not None:
        if boundary_stride < 1:
            raise InvalidArgument("boundary_stride must be positive")
        # a change at index c (labels[c] != labels[c-1]) lies inside [e-seq_len+1, e] iff e-seq_len+1 < c <= e
        nxt = np.searchsorted(change, train_ends - seq_len + 2)
        spans = (nxt < len(change)) & (change[np.minimum(nxt, len(change) - 1)] <= train_ends)
        picked = np.union1d(picked, train_ends[spans][::boundary_stride])
    train = make_sequences(series, seq_len, train_stride, label_mode, starts=picked - seq_len + 1)
    val = make_sequences(series, seq_len, seq_len, label_mode, starts=np.array(val_pick, dtype=np.int64) - seq_len + 1)
    train.stride = train_stride
    return train, val


def write_series(series: WindowSeries, stream: TextIO) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(("count", "label"))
    if series.scaled:
        for c, l in zip(series.counts, series.labels):
            w.writerow((repr(float(c)), int(l)))
    else:
        for c, l in zip(series.counts.astype(np.int64), series.labels):
            w.writerow((int(c), int(l)))


def read_series(stream: TextIO, window_s: float = 0.1) -> WindowSeries:
    reader = csv.reader(stream)
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != ["count", "label"]:
        raise FormatError("window series file must start with header count,label")
    counts, labels = [], []
    scaled = False
    for row in reader:
        if not row:
            continue
        try:
            text = row[0]
            if not scaled and not text.lstrip("-").isdigit():
                scaled = True
            counts.append(float(text))
            labels.append(int(row[1]))
        except (ValueError, IndexError):
            raise FormatError(f"line {reader.line_num}: malformed row {row!r}") from None
        if labels[-1] not in (0, 1):
            raise FormatError(f"line {reader.line_num}: label must be 0 or 1")
    return WindowSeries(np.array(counts), np.array(labels, dtype=np.int8), window_s, scaled=scaled)
