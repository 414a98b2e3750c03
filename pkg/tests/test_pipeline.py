"""Small-scale end-to-end runs (short scenarios, tiny transformer)."""

import io
from dataclasses import replace

import numpy as np
import pytest

from floodlab.ablation import Grid, parse_grid, run_ablation, write_table
from floodlab.detectors.tst import TSTConfig
from floodlab.errors import ConfigError
from floodlab.models import load_model, save_model
from floodlab.pipeline import RunSettings, run, scenario_series
from floodlab.scenario import ScenarioSpec, Segment, SegmentKind
from floodlab.trace import ICMP_FLOOD, TCP_FLOOD
from floodlab.training import TrainSpec


def short(name, floods):
    return ScenarioSpec((Segment(SegmentKind.BENIGN, 30.0), Segment(SegmentKind.ATTACK, 30.0, floods)), name=name)


SMALL = RunSettings(
    train_scenarios=(short("tcp_a", (TCP_FLOOD,)), short("icmp_a", (ICMP_FLOOD,))),
    test_scenarios=(short("hybrid_b", (TCP_FLOOD, ICMP_FLOOD)),),
    tst=TSTConfig(seq_len=16, d_model=8, n_heads=2, d_k=4, d_v=4, d_ff=8, n_layers=1),
    train=TrainSpec(epochs=3, patience=2),
    train_stride=8, boundary_stride=2, eval_stride=4,
)


@pytest.fixture(scope="module")
def small_run():
    return run(SMALL)


def test_small_run_reports_every_detector(small_run):
    assert [(s, d) for s, d, _ in small_run.rows] == [("hybrid_b", d) for d in ("tst", "iforest", "threshold")]
    for _, _, r in small_run.rows:
        assert r.n == len(range(0, 600 - 16 + 1, 4))
        assert r.f1 > 0.8


def test_small_run_is_reproducible(small_run, tmp_path):
    again = run(SMALL, tmp_path)
    assert again.report_text() == small_run.report_text()
    assert (tmp_path / "report.csv").read_text() == small_run.report_text()


def test_models_roundtrip(small_run, tmp_path):
    for name, model in (("t.ckpt", small_run.tst), ("f.json", small_run.iforest), ("h.json", small_run.threshold)):
        save_model(tmp_path / name, model, small_run.scaler)
        m = load_model(tmp_path / name)
        assert m.scaler == small_run.scaler
        seqs = np.random.default_rng(0).standard_normal((5, 16))
        if m.kind == "tst":
            from floodlab.detectors.tst import tst_predict
            assert np.array_equal(m.predict_sequences(seqs), tst_predict(small_run.tst, seqs))
        else:
            assert np.array_equal(m.predict_sequences(seqs), model.predict_sequences(seqs))


def test_scenario_series_per_scenario_seed():
    a = scenario_series(short("x", (TCP_FLOOD,)), 42)
    b = scenario_series(short("y", (TCP_FLOOD,)), 42)
    assert len(a) == 600 and not np.array_equal(a.counts, b.counts)


def test_grid_parsing_and_cells():
    grid, settings = parse_grid("""
[grid]
n_heads = 8, 32, 24
learned_embeddings = true, false
[run]
seed = 7
epochs = 2
test_scenarios = hybrid_test
""")
    assert settings.seed == 7 and settings.train.epochs == 2 and settings.test_scenarios == ("hybrid_test",)
    cells = grid.cells(TSTConfig())
    assert cells == [{}, {"n_heads": 8}, {"n_heads": 24}, {"learned_embeddings": False}]
    cart = Grid({"n_heads": (8, 16), "d_ff": (32, 64)}, "cartesian").cells(TSTConfig())
    assert len(cart) == 4
    with pytest.raises(ConfigError):
        parse_grid("[grid]\nwidth = 3\n")
    with pytest.raises(ConfigError):
        parse_grid("[grid]\nmode = random\n")


def test_ablation_skips_invalid_cells_and_is_reproducible():
    grid = Grid({"n_heads": (2, 3), "learned_embeddings": (True, False)})
    settings = replace(SMALL, train=TrainSpec(epochs=1, patience=1))
    res = run_ablation(grid, settings)
    assert [r.reason != "" for r in res] == [False, True, False]
    assert "divisible" in res[1].reason
    a, b = io.StringIO(), io.StringIO()
    write_table(res, settings, a)
    write_table(run_ablation(grid, settings, jobs=2), settings, b)
    assert a.getvalue() == b.getvalue()
    lines = a.getvalue().splitlines()
    assert lines[0].startswith("cell,seq_len") and "skipped" in lines[2]
