import io

import numpy as np
import pytest

from floodlab.errors import FormatError, OrderError, RowError
from floodlab.ingest import merge_traces, parse_capture_csv, write_capture_csv
from floodlab.trace import ICMP_FLOOD, Protocol, TrafficTrace, synth_benign, synth_flood

HEADER = "No.,Time,Source,Destination,Protocol,Length,Info\n"


def test_roundtrip_preserves_trace():
    rng = np.random.default_rng(5)
    tr = merge_traces(synth_benign(50, 10, rng), synth_flood(ICMP_FLOOD, 10, rng))
    buf = io.StringIO()
    write_capture_csv(tr, buf)
    back = parse_capture_csv(io.StringIO(buf.getvalue()), duration_s=tr.duration_s)
    assert back.identical_to(tr)


def test_columns_found_by_name():
    text = "Time,Extra,No.,Protocol,Source,Destination,Length,Info\n0.5,x,1,MAVLINK,a,b,63,HEARTBEAT\n"
    tr = parse_capture_csv(io.StringIO(text))
    assert tr.t_rel[0] == 0.5 and tr.protocol[0] == Protocol.MAVLINK and tr.length[0] == 63


def test_missing_header():
    with pytest.raises(FormatError):
        parse_capture_csv(io.StringIO(""))
    with pytest.raises(FormatError):
        parse_capture_csv(io.StringIO("Time,Length\n0.1,60\n"))


def test_bad_row_reports_line():
    text = HEADER + "1,0.1,a,b,TCP,60,x\n2,zzz,a,b,TCP,60,x\n"
    with pytest.raises(RowError) as e:
        parse_capture_csv(io.StringIO(text))
    assert e.value.line == 3


def test_non_monotonic_time():
    text = HEADER + "1,0.2,a,b,TCP,60,x\n2,0.1,a,b,TCP,60,x\n"
    with pytest.raises(OrderError):
        parse_capture_csv(io.StringIO(text))


def test_duration_defaults_to_last_time():
    text = HEADER + "1,0.2,a,b,TCP,60,x\n2,0.7,a,b,UDP,60,x\n"
    tr = parse_capture_csv(io.StringIO(text))
    assert tr.duration_s == 0.7
    assert tr.protocol[1] == Protocol.OTHER


def test_merge_is_stable_and_conserves():
    a = TrafficTrace([0.1, 0.2], [0, 0], [60, 60], ["a1", "a2"], ["", ""], ["", ""], 1.0)
    b = TrafficTrace([0.1, 0.15], [1, 1], [60, 60], ["b1", "b2"], ["", ""], ["", ""], 2.0)
    m = merge_traces(a, b)
    assert list(m.src) == ["a1", "b1", "b2", "a2"]
    assert m.duration_s == 2.0 and len(m) == 4
