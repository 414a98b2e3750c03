import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from floodlab.errors import InsufficientData, InvalidArgument
from floodlab.features import (
    WindowSeries,
    apply_scaler,
    fit_scaler,
    make_sequences,
    read_series,
    split_train_val,
    unscale,
    window_counts,
    window_labels,
    write_series,
)
from floodlab.scenario import LabelInterval
from floodlab.trace import Protocol, TrafficTrace


def brute_counts(times_us, protos, n, w_us):
    out = [0] * n
    for t, p in zip(times_us, protos):
        if p == Protocol.MAVLINK:
            out[t // w_us] += 1
    return out


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5_000_000), st.sampled_from(list(Protocol))), max_size=300),
       st.sampled_from([100_000, 250_000, 1_000_000]))
def test_window_counts_match_brute_force(pkts, w_us):
    pkts.sort(key=lambda x: x[0])
    times = np.array([p[0] for p in pkts], dtype=np.int64)
    protos = [int(p[1]) for p in pkts]
    n = len(pkts)
    tr = TrafficTrace(times / 1e6, protos, [60] * n, [""] * n, [""] * n, [""] * n, 5.0)
    s = window_counts(tr, w_us / 1e6)
    assert s.counts.tolist() == brute_counts(times, protos, len(s), w_us)
    assert s.counts.sum() == tr.count(Protocol.MAVLINK)


def test_window_count_and_edge_packet():
    tr = TrafficTrace([0.0, 0.1, 0.25], [0, 0, 0], [60] * 3, [""] * 3, [""] * 3, [""] * 3, 0.25)
    s = window_counts(tr, 0.1)
    assert s.counts.tolist() == [1, 1, 1]
    # a packet exactly at the end of the capture opens one extra window
    tr = TrafficTrace([0.0, 0.3], [0, 0], [60] * 2, [""] * 2, [""] * 2, [""] * 2, 0.3)
    assert window_counts(tr, 0.1).counts.tolist() == [1, 0, 0, 1]


def test_window_labels_by_midpoint():
    lab = window_labels(6, 0.1, [LabelInterval(0.0, 0.3, 0), LabelInterval(0.3, 0.6, 1)])
    assert lab.tolist() == [0, 0, 0, 1, 1, 1]
    # interval boundary inside a window: the midpoint decides
    lab = window_labels(3, 0.1, [LabelInterval(0.14, 0.3, 1)])
    assert lab.tolist() == [0, 1, 1]


def test_scaler_standardizes_and_inverts():
    rng = np.random.default_rng(0)
    s = WindowSeries(rng.poisson(10, 1000), np.zeros(1000))
    sc = fit_scaler(s)
    z = apply_scaler(sc, s)
    assert abs(z.counts.mean()) <= 1e-9
    assert abs(z.counts.std() - 1) <= 1e-6
    assert np.allclose(unscale(sc, z).counts, s.counts)
    with pytest.raises(InvalidArgument):
        apply_scaler(sc, z)
    with pytest.raises(InvalidArgument):
        fit_scaler(z)


def test_scaler_constant_guard():
    s = WindowSeries(np.full(50, 7.0), np.zeros(50))
    sc = fit_scaler(s)
    assert sc.std == 1.0
    assert np.all(apply_scaler(sc, s).counts == 0)


def test_make_sequences_labels():
    s = WindowSeries(np.arange(10.0), [0, 0, 0, 0, 0, 0, 1, 1, 1, 1])
    ds = make_sequences(s, 4, 2)
    assert ds.sequences.shape == (4, 4)
    assert ds.sequences[1].tolist() == [2, 3, 4, 5]
    assert ds.labels.tolist() == [0, 0, 1, 1]
    assert make_sequences(s, 4, 2, "majority").labels.tolist() == [0, 0, 0, 1]
    assert make_sequences(s, 4, 2, "any").labels.tolist() == [0, 0, 1, 1]
    with pytest.raises(InsufficientData):
        make_sequences(s, 11)


def test_split_train_val_disjoint_tails():
    labels = np.r_[np.zeros(1000), np.ones(1000)]
    s = WindowSeries(np.arange(2000.0), labels)
    tr, va = split_train_val(s, 50, 5, 0.2)
    tr_ends = set((tr.starts + 49).tolist())
    va_ends = (va.starts + 49).tolist()
    assert not tr_ends & set(va_ends)
    assert np.all(np.diff(va_ends) >= 50)
    for e in va_ends:
        assert 800 <= e < 1000 or 1800 <= e < 2000
    assert set(va.labels.tolist()) == {0, 1}


def test_split_boundary_stride_adds_spanning_sequences():
    labels = np.r_[np.zeros(1000), np.ones(1000)]
    s = WindowSeries(np.arange(2000.0), labels)
    plain, _ = split_train_val(s, 50, 40, 0.2)
    dense, _ = split_train_val(s, 50, 40, 0.2, boundary_stride=2)
    ends = set((dense.starts + 49).tolist())
    assert set((plain.starts + 49).tolist()) <= ends
    # ends 1000..1048 span the change; every other one is sampled
    assert set(range(1000, 1049, 2)) <= ends
    assert len([e for e in (plain.starts + 49) if 1000 <= e < 1049]) <= 2


def test_series_io_roundtrip():
    s = WindowSeries([3, 0, 12], [0, 1, 1])
    buf = io.StringIO()
    write_series(s, buf)
    back = read_series(io.StringIO(buf.getvalue()))
    assert back.counts.tolist() == [3, 0, 12] and not back.scaled
    z = apply_scaler(fit_scaler(s), s)
    buf = io.StringIO()
    write_series(z, buf)
    back = read_series(io.StringIO(buf.getvalue()))
    assert back.scaled and np.array_equal(back.counts, z.counts)
