"""Wireshark-style CSV capture files and trace merging.

Canonical column set, in this order::

    No.,Time,Source,Destination,Protocol,Length,Info

``Time`` is seconds since capture start with exactly 6 decimals. On read the
columns are located by header name, so exports with extra columns also work.
Protocol text maps case-insensitively: ``MAVLINK*`` -> MAVLINK, ``TCP``,
``ICMP``, anything else -> OTHER; written files use the enum names.
"""

from __future__ import annotations

import csv
from typing import Optional, TextIO

import numpy as np

from floodlab.errors import FormatError, OrderError, RowError
from floodlab.trace import Protocol, TrafficTrace

COLUMNS = ("No.", "Time", "Source", "Destination", "Protocol", "Length", "Info")


def parse_capture_csv(stream: TextIO, duration_s: Optional[float] = None) -> TrafficTrace:
    """Read a capture export. Rows are kept in file order; out-of-order times raise.

    The CSV carries no capture length, so the trace duration defaults to the
    last packet time unless ``duration_s`` is given.
    """
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise FormatError("empty capture file: missing header row") from None
    header = [h.strip() for h in header]
    missing = [c for c in COLUMNS if c not in header]
    if missing:
        raise FormatError(f"capture header lacks column(s) {missing}; got {header}")
    idx = {c: header.index(c) for c in COLUMNS}
    width = max(idx.values()) + 1

    times, protos, lengths, srcs, dsts, infos = [], [], [], [], [], []
    prev = 0.0
    proto_cache: dict[str, int] = {}
    for row in reader:
        line = reader.line_num
        if not row:
            continue
        if len(row) < width:
            raise RowError(line, f"expected at least {width} fields, found {len(row)}")
        try:
            t = float(row[idx["Time"]])
        except ValueError:
            raise RowError(line, f"unparseable Time {row[idx['Time']]!r}") from None
        try:
            length = int(row[idx["Length"]])
        except ValueError:
            raise RowError(line, f"unparseable Length {row[idx['Length']]!r}") from None
        if not t >= 0:
            raise RowError(line, f"negative Time {t}")
        if length < 1:
            raise RowError(line, f"Length must be positive, got {length}")
        if t < prev:
            raise OrderError(f"Time {t} is earlier than the previous row's {prev}", line=line)
        prev = t
        ptext = row[idx["Protocol"]]
        code = proto_cache.get(ptext)
        if code is None:
            code = proto_cache[ptext] = int(Protocol.parse(ptext))
        times.append(t)
        protos.append(code)
        lengths.append(length)
        srcs.append(row[idx["Source"]])
        dsts.append(row[idx["Destination"]])
        infos.append(row[idx["Info"]])

    if duration_s is None:
        duration_s = times[-1] if times else 0.0
    return TrafficTrace(np.array(times, dtype=np.float64), np.array(protos, dtype=np.int8),
                        np.array(lengths, dtype=np.int64), srcs, dsts, infos, duration_s)


def write_capture_csv(trace: TrafficTrace, stream: TextIO) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(COLUMNS)
    names = {int(p): p.name for p in Protocol}
    for i in range(len(trace)):
        writer.writerow((
            i + 1,
            f"{trace.t_rel[i]:.6f}",
            trace.src[i],
            trace.dst[i],
            names[int(trace.protocol[i])],
            int(trace.length[i]),
            trace.info[i],
        ))


def merge_traces(a: TrafficTrace, b: TrafficTrace) -> TrafficTrace:
    """Stable time-sorted merge; on equal times packets of ``a`` come first."""
    for name, tr in (("first", a), ("second", b)):
        if len(tr) > 1 and np.any(np.diff(tr.t_rel) < 0):
            raise OrderError(f"{name} trace is not sorted by time")
    t = np.concatenate([a.t_rel, b.t_rel])
    order = np.argsort(t, kind="stable")
    return TrafficTrace(
        t[order],
        np.concatenate([a.protocol, b.protocol])[order],
        np.concatenate([a.length, b.length])[order],
        np.concatenate([a.src, b.src])[order],
        np.concatenate([a.dst, b.dst])[order],
        np.concatenate([a.info, b.info])[order],
        max(a.duration_s, b.duration_s),
    )
