import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from floodlab.detectors.tst import TSTConfig, param_count, tst_init, tst_predict
from floodlab.errors import DegenerateData, InvalidArgument, ShapeError
from floodlab.features import SequenceDataset
from floodlab.training import Adam, EvalReport, TrainSpec, bench_inference, evaluate, train_tst, write_reports
from floodlab.tensor import Tensor

from helpers import tiny_config


def toy_dataset(n=200, seq_len=8, seed=0):
    rng = np.random.default_rng(seed)
    y = np.r_[np.zeros(n // 2), np.ones(n - n // 2)].astype(np.int8)
    x = np.where(y[:, None] == 1, -1.0, 1.0) + rng.normal(0, 0.2, (n, seq_len))
    perm = rng.permutation(n)
    return SequenceDataset(x[perm], y[perm], seq_len, 1, np.arange(n))


def test_evaluate_arithmetic():
    pred = [1] * 9 + [1] + [0] + [0] * 9
    lab = [1] * 9 + [0] + [1] + [0] * 9
    r = evaluate(pred, lab)
    assert (r.tp, r.fp, r.fn, r.tn) == (9, 1, 1, 9)
    assert r.precision == pytest.approx(0.9) and r.recall == pytest.approx(0.9)
    assert r.f1 == pytest.approx(0.9) and r.accuracy == pytest.approx(0.9)
    assert r.flags == ()


def test_evaluate_perfect_and_zero_denominators():
    r = evaluate([1, 0, 1], [1, 0, 1])
    assert (r.precision, r.recall, r.accuracy, r.f1) == (1.0, 1.0, 1.0, 1.0)
    r = evaluate([0, 0, 0], [1, 0, 1])
    assert r.precision == 0 and r.recall == 0 and r.f1 == 0
    assert "precision_undefined" in r.flags and "f1_undefined" in r.flags
    with pytest.raises(InvalidArgument):
        evaluate([1], [1, 0])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=60), st.randoms())
def test_evaluate_properties(pairs, rnd):
    p, y = map(np.array, zip(*pairs))
    r = evaluate(p, y)
    for m in (r.precision, r.recall, r.accuracy, r.f1):
        assert 0.0 <= m <= 1.0
    assert r.f1 <= max(r.precision, r.recall) + 1e-12
    if r.precision + r.recall > 0:
        assert r.f1 == pytest.approx(2 * r.precision * r.recall / (r.precision + r.recall))
    shuffled = pairs[:]
    rnd.shuffle(shuffled)
    p2, y2 = map(np.array, zip(*shuffled))
    assert evaluate(p2, y2) == r


def test_write_reports_stable_columns():
    buf = io.StringIO()
    write_reports([("hybrid_test", "tst", evaluate([1, 0], [1, 0]))], buf)
    assert buf.getvalue() == ("scenario,detector,n,tp,fp,tn,fn,precision,recall,accuracy,f1,flags\n"
                              "hybrid_test,tst,2,1,0,1,0,1.000000,1.000000,1.000000,1.000000,\n")


def test_train_spec_validation():
    with pytest.raises(InvalidArgument):
        TrainSpec(val_fraction=1.0)
    with pytest.raises(InvalidArgument):
        TrainSpec(patience=0)


def test_adam_minimizes_quadratic():
    w = Tensor(np.array([3.0, -2.0]), requires_grad=True)
    opt = Adam([w], lr=0.1)
    for _ in range(300):
        opt.zero_grad()
        ((w - 1.0) * (w - 1.0)).sum().backward()
        opt.step()
    assert np.allclose(w.data, 1.0, atol=1e-3)


def test_separable_toy_reaches_perfect_f1():
    cfg = tiny_config(d_model=8, n_heads=2, d_k=4, d_v=4, d_ff=8, batch_size=4, dropout=0.1)
    ds = toy_dataset()
    params, hist = train_tst(cfg, tst_init(cfg, np.random.default_rng(0)), ds, TrainSpec(epochs=20),
                             np.random.default_rng(1))
    assert len(hist) == 20
    assert evaluate(tst_predict(params, ds.sequences), ds.labels).f1 == 1.0


def test_zero_epochs_returns_initial():
    cfg = tiny_config()
    p0 = tst_init(cfg, np.random.default_rng(0))
    before = {k: v.copy() for k, v in p0.state_dict().items()}
    p, hist = train_tst(cfg, p0, toy_dataset(), TrainSpec(epochs=0), np.random.default_rng(1))
    assert hist == []
    assert all(np.array_equal(before[k], v) for k, v in p.state_dict().items())


def test_training_deterministic():
    cfg = tiny_config(dropout=0.2)
    ds = toy_dataset(40)
    runs = [train_tst(cfg, tst_init(cfg, np.random.default_rng(0)), ds, TrainSpec(epochs=3),
                      np.random.default_rng(7))[1] for _ in range(2)]
    assert runs[0] == runs[1]


def test_early_stopping_keeps_best():
    cfg = tiny_config()
    ds = toy_dataset(60, seed=1)
    val = toy_dataset(20, seed=2)
    params, hist = train_tst(cfg, tst_init(cfg, np.random.default_rng(0)), ds,
                             TrainSpec(epochs=15, patience=2, learning_rate=3e-3), np.random.default_rng(3), val)
    best = max(h["val_f1"] for h in hist)
    assert evaluate(tst_predict(params, val.sequences), val.labels).f1 == best
    assert len(hist) <= 15


def test_training_guards():
    cfg = tiny_config()
    ds = toy_dataset()
    single = ds.subset(ds.labels == 0)
    with pytest.raises(DegenerateData):
        train_tst(cfg, tst_init(cfg, np.random.default_rng(0)), single, TrainSpec(epochs=1), np.random.default_rng(0))
    wrong = tiny_config(seq_len=4)
    with pytest.raises(ShapeError):
        train_tst(wrong, tst_init(wrong, np.random.default_rng(0)), ds, TrainSpec(epochs=1), np.random.default_rng(0))


def test_bench_single_trial():
    cfg = tiny_config()
    r = bench_inference(tst_init(cfg, np.random.default_rng(0)), cfg, n_trials=1)
    assert r.median_s == r.trials[0]
    assert r.param_count == param_count(cfg)
    assert r.peak_extra_memory_bytes > 0
