"""Encoder-only Time Series Transformer for sequence classification.

    counts [b, L, 1]
      -> pointwise projection to d_model (kernel-1 conv == per-step linear map)
      -> + positional table (learned, or fixed sinusoidal)
      -> dropout
      -> n_layers x { x = BN(x + Dropout(MHA(x)));  x = BN(x + Dropout(W2 GELU(W1 x + b1))) }
      -> flatten [b, L*d_model] -> linear -> one logit per sequence

Linear maps whose output reaches a train-mode batch norm only through a
per-channel constant carry no bias (K, V, W_O and W2): such a bias receives an
identically zero gradient, so it would stay at its zero init anyway.
"""

from __future__ import annotations

import io
from dataclasses import asdict, dataclass, replace

import numpy as np

from floodlab.checkpoint import load_tensors, save_tensors
from floodlab.errors import ConfigError, FormatError, ShapeError
from floodlab.features import Scaler
from floodlab.tensor import (
    BatchNormState,
    Tensor,
    attention,
    batch_norm,
    dropout,
    gelu,
    no_grad,
    sigmoid_np,
)


@dataclass(frozen=True)
class TSTConfig:
    seq_len: int = 400
    d_model: int = 64
    n_heads: int = 32
    d_ff: int = 64
    n_layers: int = 2
    dropout: float = 0.1
    batch_size: int = 4
    d_k: int = 2
    d_v: int = 2
    learned_embeddings: bool = True
    activation: str = "gelu"
    seed: int = 42

    def __post_init__(self):
        for name in ("seq_len", "d_model", "n_heads", "d_ff", "n_layers", "batch_size", "d_k", "d_v"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.n_heads * self.d_k != self.d_model:
            raise ConfigError(
                f"n_heads * d_k must equal d_model: {self.n_heads} * {self.d_k} != {self.d_model}")
        if not 0 <= self.dropout < 1:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.activation != "gelu":
            raise ConfigError(f"only the gelu activation is supported, got {self.activation!r}")

    @classmethod
    def with_heads(cls, base: "TSTConfig", **changes) -> "TSTConfig":
        """Copy of ``base`` with d_k = d_v = d_model / n_heads recomputed."""
        d_model = changes.get("d_model", base.d_model)
        n_heads = changes.get("n_heads", base.n_heads)
        if d_model % n_heads:
            raise ConfigError(f"d_model {d_model} is not divisible by n_heads {n_heads}")
        dk = d_model // n_heads
        return replace(base, **changes, d_k=dk, d_v=dk)

    def to_dict(self):
        return asdict(self)


def param_count(cfg: TSTConfig) -> int:
    """Closed-form number of trainable scalars for ``cfg``."""
    d, L, h = cfg.d_model, cfg.seq_len, cfg.n_heads
    qk = h * cfg.d_k
    vv = h * cfg.d_v
    per_layer = (
        d * qk + qk        # W_Q, b_Q
        + d * qk           # W_K
        + d * vv           # W_V
        + vv * d           # W_O
        + 2 * d            # BN after attention
        + d * cfg.d_ff + cfg.d_ff + cfg.d_ff * d  # FF
        + 2 * d            # BN after FF
    )
    total = 2 * d + cfg.n_layers * per_layer + L * d + 1
    if cfg.learned_embeddings:
        total += L * d
    return total


def sinusoidal_table(seq_len: int, d_model: int) -> np.ndarray:
    pos = np.arange(seq_len)[:, None]
    i = np.arange(0, d_model, 2)[None, :]
    angle = pos / np.power(10000.0, i / d_model)
    pe = np.zeros((seq_len, d_model))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d_model // 2])
    return pe


class TSTParams:
    """Weights (``params``), batch-norm running stats and the config they belong to."""

    def __init__(self, config: TSTConfig, params: dict, bn: dict, fixed_pos=None):
        self.config = config
        self.params = params
        self.bn = bn
        self.fixed_pos = fixed_pos

    def __getitem__(self, name) -> Tensor:
        return self.params[name]

    def trainable(self) -> list:
        return list(self.params.values())

    @property
    def n_trainable(self) -> int:
        return sum(p.size for p in self.params.values())

    def state_dict(self) -> dict:
        out = {k: p.data for k, p in self.params.items()}
        for k, st in self.bn.items():
            out[f"{k}.running_mean"] = st.running_mean
            out[f"{k}.running_var"] = st.running_var
        if self.fixed_pos is not None:
            out["pos_table"] = self.fixed_pos
        return out

    def copy(self) -> "TSTParams":
        return TSTParams.from_state_dict(self.config, {k: v.copy() for k, v in self.state_dict().items()})

    @classmethod
    def from_state_dict(cls, config: TSTConfig, state: dict) -> "TSTParams":
        template = tst_init(config, np.random.default_rng(0))
        params = {}
        for k, p in template.params.items():
            if k not in state:
                raise FormatError(f"checkpoint lacks parameter {k!r}")
            if state[k].shape != p.shape:
                raise FormatError(f"parameter {k!r} has shape {state[k].shape}, config implies {p.shape}")
            params[k] = Tensor(np.array(state[k]), requires_grad=True, name=k)
        bn = {}
        for k in template.bn:
            st = BatchNormState(config.d_model)
            st.running_mean = np.array(state[f"{k}.running_mean"])
            st.running_var = np.array(state[f"{k}.running_var"])
            bn[k] = st
        fixed = np.array(state["pos_table"]) if "pos_table" in state else None
        return cls(config, params, bn, fixed)


def _xavier(rng, fan_in, fan_out):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_in, fan_out))


def tst_init(config: TSTConfig, rng: np.random.Generator) -> TSTParams:
    """Xavier-uniform linear maps, zero biases, N(0, 0.02^2) learned positional table."""
    d, L, h = config.d_model, config.seq_len, config.n_heads
    qk, vv = h * config.d_k, h * config.d_v
    p = {}
    p["input.weight"] = _xavier(rng, 1, d)
    p["input.bias"] = np.zeros(d)
    fixed = None
    if config.learned_embeddings:
        p["pos_embedding"] = rng.normal(0.0, 0.02, size=(L, d))
    else:
        fixed = sinusoidal_table(L, d)
    bn = {}
    for i in range(config.n_layers):
        pre = f"layers.{i}"
        p[f"{pre}.attn.w_q"] = _xavier(rng, d, qk)
        p[f"{pre}.attn.b_q"] = np.zeros(qk)
        p[f"{pre}.attn.w_k"] = _xavier(rng, d, qk)
        p[f"{pre}.attn.w_v"] = _xavier(rng, d, vv)
        p[f"{pre}.attn.w_o"] = _xavier(rng, vv, d)
        p[f"{pre}.bn1.gamma"] = np.ones(d)
        p[f"{pre}.bn1.beta"] = np.zeros(d)
        p[f"{pre}.ff.w1"] = _xavier(rng, d, config.d_ff)
        p[f"{pre}.ff.b1"] = np.zeros(config.d_ff)
        p[f"{pre}.ff.w2"] = _xavier(rng, config.d_ff, d)
        p[f"{pre}.bn2.gamma"] = np.ones(d)
        p[f"{pre}.bn2.beta"] = np.zeros(d)
        bn[f"{pre}.bn1"] = BatchNormState(d)
        bn[f"{pre}.bn2"] = BatchNormState(d)
    p["head.weight"] = _xavier(rng, L * d, 1)
    p["head.bias"] = np.zeros(1)
    params = {k: Tensor(v, requires_grad=True, name=k) for k, v in p.items()}
    return TSTParams(config, params, bn, fixed)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x[..., in] @ w[in, out] (+ b)`` as one 2-D product."""
    lead = x.shape[:-1]
    y = x.reshape(-1, x.shape[-1]) @ w
    if b is not None:
        y = y + b
    return y.reshape(*lead, w.shape[-1])


def mha_forward(x, params: TSTParams, layer: int, return_weights=False):
    """Multi-head self-attention of ``x[b, L, d_model]`` with layer ``layer``'s weights."""
    cfg = params.config
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.ndim != 3 or x.shape[-1] != cfg.d_model:
        raise ShapeError(f"mha_forward expects [batch, seq, {cfg.d_model}], got {x.shape}")
    b, L, _ = x.shape
    h = cfg.n_heads
    pre = f"layers.{layer}.attn"
    q = linear(x, params[f"{pre}.w_q"], params[f"{pre}.b_q"]).reshape(b, L, h, cfg.d_k).transpose(0, 2, 1, 3)
    k = linear(x, params[f"{pre}.w_k"]).reshape(b, L, h, cfg.d_k).transpose(0, 2, 1, 3)
    v = linear(x, params[f"{pre}.w_v"]).reshape(b, L, h, cfg.d_v).transpose(0, 2, 1, 3)
    res = attention(q, k, v, return_weights=return_weights)
    o, weights = res if return_weights else (res, None)
    o = o.transpose(0, 2, 1, 3).reshape(b, L, h * cfg.d_v)
    out = linear(o, params[f"{pre}.w_o"])
    return (out, weights) if return_weights else out


def _encode(params: TSTParams, x: Tensor, training: bool, rng) -> Tensor:
    cfg = params.config
    p = cfg.dropout
    h = linear(x, params["input.weight"], params["input.bias"])
    pos = params["pos_embedding"] if cfg.learned_embeddings else Tensor(params.fixed_pos)
    h = dropout(h + pos, p, rng, training)
    for i in range(cfg.n_layers):
        pre = f"layers.{i}"
        a = mha_forward(h, params, i)
        h = batch_norm(h + dropout(a, p, rng, training), params[f"{pre}.bn1.gamma"],
                       params[f"{pre}.bn1.beta"], params.bn[f"{pre}.bn1"], training)
        f = linear(gelu(linear(h, params[f"{pre}.ff.w1"], params[f"{pre}.ff.b1"])), params[f"{pre}.ff.w2"])
        h = batch_norm(h + dropout(f, p, rng, training), params[f"{pre}.bn2.gamma"],
                       params[f"{pre}.bn2.beta"], params.bn[f"{pre}.bn2"], training)
    b = x.shape[0]
    return linear(h.reshape(b, cfg.seq_len * cfg.d_model), params["head.weight"], params["head.bias"]).reshape(b)


def tst_forward(params: TSTParams, x, training: bool = False, rng=None) -> Tensor:
    """Logits ``[b]`` for inputs ``x[b, seq_len, 1]`` (a ``[b, seq_len]`` array is also accepted).

    In eval mode sequences are pushed through one at a time, which makes every
    logit independent of what else shares its batch (BLAS picks different
    kernels for different row counts).
    """
    cfg = params.config
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.ndim == 2:
        x = x.reshape(x.shape[0], x.shape[1], 1)
    if x.ndim != 3 or x.shape[1:] != (cfg.seq_len, 1):
        raise ShapeError(f"tst_forward expects [batch, {cfg.seq_len}, 1], got {x.shape}")
    if training:
        return _encode(params, x, True, rng)
    if x.requires_grad or x.shape[0] == 1:
        return _encode(params, x, False, None)
    with no_grad():
        rows = [_encode(params, Tensor(x.data[i:i + 1]), False, None).data for i in range(x.shape[0])]
    return Tensor(np.concatenate(rows))


def tst_logits(params: TSTParams, sequences, batch_size: int = 32) -> np.ndarray:
    seqs = np.asarray(sequences, dtype=np.float64)
    out = np.empty(len(seqs))
    with no_grad():
        for i in range(0, len(seqs), batch_size):
            out[i:i + batch_size] = tst_forward(params, seqs[i:i + batch_size]).data
    return out


def tst_predict(params: TSTParams, sequences, threshold: float = 0.5) -> np.ndarray:
    """1 where sigmoid(logit) >= threshold (eval mode)."""
    return (sigmoid_np(tst_logits(params, sequences)) >= threshold).astype(np.int8)


def save_tst(stream, params: TSTParams, scaler: Scaler | None = None) -> None:
    meta = {"kind": "tst", "config": params.config.to_dict()}
    if scaler is not None:
        meta["scaler"] = {"mean": scaler.mean, "std": scaler.std}
    save_tensors(stream, params.state_dict(), meta)


def load_tst(stream) -> tuple[TSTParams, Scaler | None]:
    tensors, meta = load_tensors(stream)
    if meta.get("kind") != "tst":
        raise FormatError(f"checkpoint holds a {meta.get('kind')!r} model, not a tst")
    try:
        cfg = TSTConfig(**meta["config"])
    except (TypeError, KeyError) as e:
        raise FormatError(f"checkpoint config header is invalid: {e}") from None
    sc = meta.get("scaler")
    return TSTParams.from_state_dict(cfg, tensors), (Scaler(sc["mean"], sc["std"]) if sc else None)


def tst_to_bytes(params: TSTParams, scaler: Scaler | None = None) -> bytes:
    buf = io.BytesIO()
    save_tst(buf, params, scaler)
    return buf.getvalue()
