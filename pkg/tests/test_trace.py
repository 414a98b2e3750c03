import numpy as np
import pytest

from floodlab.errors import InsufficientData, InvalidArgument, OrderError
from floodlab.trace import (
    ICMP_FLOOD,
    ICMP_STATS,
    TCP_FLOOD,
    TCP_STATS,
    PacketRecord,
    Protocol,
    TrafficTrace,
    fit_gap_mixture,
    synth_benign,
    synth_flood,
    to_ticks,
    trace_stats,
)


def test_protocol_parse():
    assert Protocol.parse("MAVLink 2.0") is Protocol.MAVLINK
    assert Protocol.parse(" tcp ") is Protocol.TCP
    assert Protocol.parse("ICMP") is Protocol.ICMP
    assert Protocol.parse("UDP") is Protocol.OTHER


def test_packet_record_validation():
    with pytest.raises(InvalidArgument):
        PacketRecord(-1.0, Protocol.TCP, 60)
    with pytest.raises(InvalidArgument):
        PacketRecord(0.0, Protocol.TCP, 0)


def test_trace_rejects_out_of_order():
    pkts = [PacketRecord(0.2, Protocol.TCP, 60), PacketRecord(0.1, Protocol.TCP, 60)]
    with pytest.raises(OrderError):
        TrafficTrace.from_packets(pkts)


def test_trace_rejects_packet_past_duration():
    with pytest.raises(InvalidArgument):
        TrafficTrace.from_packets([PacketRecord(2.0, Protocol.TCP, 60)], duration_s=1.0)


def test_trace_roundtrip_records():
    pkts = [PacketRecord(0.0, Protocol.MAVLINK, 63, "a", "b", "HEARTBEAT"),
            PacketRecord(0.5, Protocol.ICMP, 1042, "c", "d", "ping")]
    tr = TrafficTrace.from_packets(pkts, duration_s=1.0)
    assert tr.packets == pkts
    assert tr.count() == 2 and tr.count(Protocol.ICMP) == 1


def test_to_ticks_rounds_to_microseconds():
    assert to_ticks(0.1234564) == 123456
    assert to_ticks(1.0) == 1_000_000


def test_synth_benign_deterministic_and_rate():
    a = synth_benign(100.0, 60.0, np.random.default_rng(3))
    b = synth_benign(100.0, 60.0, np.random.default_rng(3))
    assert a.identical_to(b)
    assert abs(len(a) / 60.0 - 100.0) < 10
    assert np.all(a.t_rel < 60.0)
    assert np.all(a.protocol == Protocol.MAVLINK)


def test_synth_times_on_microsecond_clock():
    tr = synth_flood(TCP_FLOOD, 5.0, np.random.default_rng(0))
    assert np.array_equal(to_ticks(tr.t_rel) / 1e6, tr.t_rel)


def test_flood_packet_shape():
    tr = synth_flood(TCP_FLOOD, 2.0, np.random.default_rng(1))
    assert set(tr.length) == {1042}
    assert all("80" in s for s in tr.info[:5])
    tr = synth_flood(ICMP_FLOOD, 2.0, np.random.default_rng(1))
    assert np.all(tr.protocol == Protocol.ICMP)


@pytest.mark.parametrize("stats", [ICMP_STATS, TCP_STATS])
def test_gap_mixture_matches_target_mean_and_quartiles(stats):
    mix = fit_gap_mixture(stats)
    assert mix.mean == pytest.approx(stats.mean_s, rel=1e-9)
    for p, target in ((0.25, stats.p25_s), (0.5, stats.p50_s), (0.75, stats.p75_s)):
        q = mix.quantile(p)
        assert 0.5 <= q / target <= 2.0
    assert mix.cdf(mix.quantile(0.5)) == pytest.approx(0.5, abs=1e-9)


def test_trace_stats_known_gaps():
    t = np.array([0.0, 0.1, 0.3, 0.6])
    tr = TrafficTrace(t, np.full(4, 1), np.full(4, 60), [""] * 4, [""] * 4, [""] * 4, 2.0)
    s = trace_stats(tr, Protocol.TCP)
    gaps = np.diff(t)
    assert s.mean_s == pytest.approx(gaps.mean())
    assert s.std_s == pytest.approx(gaps.std())
    assert s.p50_s == pytest.approx(0.2)
    assert s.arrival_rate_pps == pytest.approx(2.0)


def test_trace_stats_needs_two_packets():
    tr = TrafficTrace(np.array([0.5]), [1], [60], [""], [""], [""], 1.0)
    with pytest.raises(InsufficientData):
        trace_stats(tr, Protocol.TCP)
