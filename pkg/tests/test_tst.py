import io
from dataclasses import replace

import numpy as np
import pytest

from floodlab.detectors.tst import (
    TSTConfig,
    TSTParams,
    load_tst,
    mha_forward,
    param_count,
    save_tst,
    tst_forward,
    tst_init,
    tst_logits,
    tst_predict,
    tst_to_bytes,
)
from floodlab.errors import ConfigError, FormatError, ShapeError
from floodlab.features import Scaler
from floodlab.tensor import Tensor, grad_check

from helpers import closed_form_param_count, tiny_config, tst_grad_errors


def test_config_invariants():
    cfg = TSTConfig()
    assert cfg.n_heads * cfg.d_k == cfg.d_model == 64
    with pytest.raises(ConfigError):
        TSTConfig(n_heads=16)
    with pytest.raises(ConfigError):
        TSTConfig.with_heads(TSTConfig(), n_heads=24)
    c = TSTConfig.with_heads(TSTConfig(), d_model=128, n_heads=8)
    assert (c.d_k, c.d_v) == (16, 16)


@pytest.mark.parametrize("learned", [True, False])
def test_param_count_matches_closed_form(learned):
    cfg = replace(TSTConfig(), learned_embeddings=learned)
    params = tst_init(cfg, np.random.default_rng(42))
    expected = closed_form_param_count(400, 64, 32, 2, 2, 64, 2, learned)
    assert params.n_trainable == param_count(cfg) == expected


def test_lpe_toggle_changes_trainable_by_table_size():
    on = tst_init(TSTConfig(), np.random.default_rng(0))
    off = tst_init(replace(TSTConfig(), learned_embeddings=False), np.random.default_rng(0))
    assert on.n_trainable - off.n_trainable == 400 * 64
    assert "pos_embedding" not in off.params and off.fixed_pos.shape == (400, 64)


def test_init_deterministic():
    a = tst_init(tiny_config(), np.random.default_rng(42)).state_dict()
    b = tst_init(tiny_config(), np.random.default_rng(42)).state_dict()
    assert a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)


def test_default_forward_shape():
    params = tst_init(TSTConfig(), np.random.default_rng(42))
    x = np.random.default_rng(0).standard_normal((2, 400, 1))
    assert tst_forward(params, x).shape == (2,)
    with pytest.raises(ShapeError):
        tst_forward(params, np.zeros((2, 399, 1)))


def test_single_token_attention():
    cfg = tiny_config(seq_len=1)
    params = tst_init(cfg, np.random.default_rng(1))
    x = Tensor(np.random.default_rng(2).standard_normal((3, 1, 4)))
    out, w = mha_forward(x, params, 0, return_weights=True)
    assert np.all(w == 1.0)
    v = x.data @ params["layers.0.attn.w_v"].data
    assert np.allclose(out.data, v @ params["layers.0.attn.w_o"].data)


def test_equal_tokens_give_uniform_attention():
    cfg = tiny_config(n_heads=2, d_k=2, d_v=2)
    params = tst_init(cfg, np.random.default_rng(1))
    x = Tensor(np.tile(np.random.default_rng(2).standard_normal(4), (2, 8, 1)))
    _, w = mha_forward(x, params, 0, return_weights=True)
    assert np.allclose(w, 1 / 8, atol=1e-15)
    assert np.max(np.abs(w.sum(-1) - 1)) <= 1e-12


def test_mha_gradient_two_tokens():
    cfg = tiny_config(seq_len=2, n_heads=2, d_k=2, d_v=2)
    params = tst_init(cfg, np.random.default_rng(3))
    w = np.random.default_rng(4).standard_normal((1, 2, 4))
    x0 = np.random.default_rng(5).standard_normal((1, 2, 4))
    assert grad_check(lambda x: (mha_forward(x, params, 0) * w).sum(), x0) <= 1e-4


def test_tiny_tst_gradients():
    errs = tst_grad_errors(tiny_config())
    assert max(errs.values()) <= 1e-3, errs


def test_tiny_two_layer_tst_gradients():
    errs = tst_grad_errors(tiny_config(n_layers=2, n_heads=2, d_k=2, d_v=2), seed=1)
    assert max(errs.values()) <= 1e-3, errs


def test_eval_logits_independent_of_batch():
    cfg = tiny_config()
    params = tst_init(cfg, np.random.default_rng(0))
    seqs = np.random.default_rng(1).standard_normal((7, 8))
    full = tst_logits(params, seqs, batch_size=7)
    parts = np.concatenate([tst_logits(params, seqs[:3], batch_size=2), tst_logits(params, seqs[3:], batch_size=4)])
    assert np.array_equal(full, parts)
    dup = tst_forward(params, np.stack([seqs[0], seqs[0]])).data
    assert dup[0] == dup[1]


def test_zero_head_gives_half():
    cfg = tiny_config()
    params = tst_init(cfg, np.random.default_rng(0))
    params["head.weight"].data[:] = 0
    logits = tst_forward(params, np.zeros((2, 8))).data
    assert np.all(logits == 0)
    assert tst_predict(params, np.zeros((2, 8))).tolist() == [1, 1]
    params["head.bias"].data[:] = -5
    assert tst_predict(params, np.zeros((1, 8)), threshold=0.0).tolist() == [1]
    assert tst_predict(params, np.zeros((1, 8))).tolist() == [0]


def test_checkpoint_roundtrip():
    cfg = tiny_config(learned_embeddings=False)
    params = tst_init(cfg, np.random.default_rng(0))
    params.bn["layers.0.bn1"].running_mean[:] = 0.25
    blob = tst_to_bytes(params, Scaler(10.0, 3.0))
    back, sc = load_tst(io.BytesIO(blob))
    assert sc == Scaler(10.0, 3.0) and back.config == cfg
    seqs = np.random.default_rng(1).standard_normal((3, 8))
    assert np.array_equal(tst_logits(back, seqs), tst_logits(params, seqs))
    assert tst_to_bytes(back, sc) == blob


def test_checkpoint_rejects_garbage():
    with pytest.raises(FormatError):
        load_tst(io.BytesIO(b"nope" + b"\0" * 20))
    buf = io.BytesIO()
    save_tst(buf, tst_init(tiny_config(), np.random.default_rng(0)))
    with pytest.raises(FormatError):
        load_tst(io.BytesIO(buf.getvalue()[:-8]))
