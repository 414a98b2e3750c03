"""Shared oracles for the test suite."""

import numpy as np

from floodlab.detectors.iforest import c_factor
from floodlab.detectors.tst import TSTConfig, tst_forward, tst_init
from floodlab.tensor import Tensor, bce_with_logits, grad_check


def tiny_config(**kw):
    base = dict(seq_len=8, d_model=4, n_heads=1, d_k=4, d_v=4, d_ff=4, n_layers=1, dropout=0.0, batch_size=3)
    base.update(kw)
    return TSTConfig(**base)


def tst_grad_errors(cfg, seed=0):
    """grad_check of the training-mode BCE loss with respect to every parameter tensor."""
    rng = np.random.default_rng(seed)
    params = tst_init(cfg, rng)
    for p in params.trainable():   # perturb zero-initialized biases so no gradient is trivially zero
        p.data = p.data + rng.normal(0, 0.1, p.shape)
    x = rng.standard_normal((3, cfg.seq_len, 1))
    y = np.array([1.0, 0.0, 1.0])
    errors = {}
    for name in list(params.params):
        original = params.params[name]

        def loss(t, name=name):
            params.params[name] = t
            return bce_with_logits(tst_forward(params, Tensor(x), training=True, rng=None), y)
        errors[name] = grad_check(loss, original.data)
        params.params[name] = original
    return errors


def exhaustive_path_length(tree, x, node=0, depth=0):
    """Plain recursive walk of a stored isolation tree."""
    if tree.left[node] < 0:
        return depth + c_factor(int(tree.size[node]))
    if x[tree.feature[node]] < tree.split[node]:
        return exhaustive_path_length(tree, x, int(tree.left[node]), depth + 1)
    return exhaustive_path_length(tree, x, int(tree.right[node]), depth + 1)


def exhaustive_scores(model, xs):
    out = []
    for x in np.atleast_2d(xs):
        eh = sum(exhaustive_path_length(t, x) for t in model.trees) / len(model.trees)
        out.append(2.0 ** (-eh / c_factor(model.psi)))
    return np.array(out)


def closed_form_param_count(seq_len, d_model, n_heads, d_k, d_v, d_ff, n_layers, learned):
    """Independent tally of every weight and bias in the model layout."""
    shapes = [(1, d_model), (d_model,)]                              # input projection
    if learned:
        shapes.append((seq_len, d_model))                            # positional table
    for _ in range(n_layers):
        shapes += [(d_model, n_heads * d_k), (n_heads * d_k,),       # W_Q, b_Q
                   (d_model, n_heads * d_k),                         # W_K
                   (d_model, n_heads * d_v),                         # W_V
                   (n_heads * d_v, d_model),                         # W_O
                   (d_model,), (d_model,),                           # BN 1
                   (d_model, d_ff), (d_ff,), (d_ff, d_model),        # FF
                   (d_model,), (d_model,)]                           # BN 2
    shapes += [(seq_len * d_model, 1), (1,)]                         # head
    return int(sum(np.prod(s) for s in shapes))
