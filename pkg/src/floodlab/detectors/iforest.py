"""Isolation Forest over vectors of consecutive scaled window counts.

Trees are stored as flat arrays (node ``i`` has children ``left[i]`` and
``right[i]``, ``-1`` marking a leaf) so scoring is a vectorised walk.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from floodlab.errors import FormatError, InsufficientData, InvalidArgument

DEFAULT_PSI = 256
DEFAULT_TREES = 100
DEFAULT_VECTOR_LEN = 10


def harmonic(n: int) -> float:
    """H(n) = 1 + 1/2 + ... + 1/n, summed exactly in floating point."""
    return math.fsum(1.0 / i for i in range(1, n + 1))


def c_factor(n: int) -> float:
    """Average unsuccessful-search path length in a BST of n nodes."""
    if n <= 1:
        return 0.0
    return 2.0 * harmonic(n - 1) - 2.0 * (n - 1) / n


@dataclass
class IsolationTree:
    feature: np.ndarray
    split: np.ndarray
    left: np.ndarray
    right: np.ndarray
    size: np.ndarray
    depth: np.ndarray

    @property
    def max_depth(self) -> int:
        return int(self.depth.max())

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in ("feature", "split", "left", "right", "size", "depth")}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["feature"], dtype=np.int64), np.array(d["split"], dtype=np.float64),
                   np.array(d["left"], dtype=np.int64), np.array(d["right"], dtype=np.int64),
                   np.array(d["size"], dtype=np.int64), np.array(d["depth"], dtype=np.int64))


def _grow(x, rng, limit) -> IsolationTree:
    feature, split, left, right, size, depth = [], [], [], [], [], []

    def node(rows, d):
        i = len(feature)
        for lst, v in ((feature, -1), (split, 0.0), (left, -1), (right, -1), (size, len(rows)), (depth, d)):
            lst.append(v)
        if len(rows) <= 1 or d >= limit:
            return i
        sub = x[rows]
        lo, hi = sub.min(axis=0), sub.max(axis=0)
        varying = np.flatnonzero(hi > lo)
        if len(varying) == 0:
            return i
        f = int(varying[rng.integers(len(varying))])
        p = float(rng.uniform(lo[f], hi[f]))
        go_left = sub[:, f] < p
        feature[i], split[i] = f, p
        left[i] = node(rows[go_left], d + 1)
        right[i] = node(rows[~go_left], d + 1)
        return i

    node(np.arange(len(x)), 0)
    return IsolationTree(np.array(feature, dtype=np.int64), np.array(split), np.array(left, dtype=np.int64),
                         np.array(right, dtype=np.int64), np.array(size, dtype=np.int64),
                         np.array(depth, dtype=np.int64))


@dataclass
class IForestModel:
    trees: list
    psi: int
    n_trees: int
    threshold: float = 0.5
    vector_len: int = DEFAULT_VECTOR_LEN
    _leaf_c: list = field(default=None, repr=False, compare=False)

    @property
    def depth_limit(self) -> int:
        return int(math.ceil(math.log2(self.psi))) if self.psi > 1 else 0

    def path_lengths(self, x) -> np.ndarray:
        """Mean over trees of depth(leaf) + c(leaf size)."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if self._leaf_c is None:
            self._leaf_c = [np.array([c_factor(int(s)) for s in t.size]) for t in self.trees]
        total = np.zeros(len(x))
        rows = np.arange(len(x))
        for t, lc in zip(self.trees, self._leaf_c):
            at = np.zeros(len(x), dtype=np.int64)
            while True:
                inner = t.left[at] >= 0
                if not inner.any():
                    break
                r, n = rows[inner], at[inner]
                go_left = x[r, t.feature[n]] < t.split[n]
                at[inner] = np.where(go_left, t.left[n], t.right[n])
            total += t.depth[at] + lc[at]
        return total / len(self.trees)

    def score(self, x) -> np.ndarray:
        """Anomaly score 2^(-E[h] / c(psi)) in (0, 1]; larger is more anomalous."""
        return np.power(2.0, -self.path_lengths(x) / c_factor(self.psi))

    def predict(self, x) -> np.ndarray:
        return (self.score(x) >= self.threshold).astype(np.int8)

    def predict_sequences(self, sequences) -> np.ndarray:
        return self.predict(np.asarray(sequences)[:, -self.vector_len:])

    def to_json(self) -> str:
        return json.dumps({"kind": "iforest", "psi": self.psi, "n_trees": self.n_trees,
                           "threshold": self.threshold, "vector_len": self.vector_len,
                           "trees": [t.to_dict() for t in self.trees]}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "IForestModel":
        try:
            d = json.loads(text)
            if d.get("kind") != "iforest":
                raise FormatError("not an isolation forest model")
            return cls([IsolationTree.from_dict(t) for t in d["trees"]], int(d["psi"]), int(d["n_trees"]),
                       float(d["threshold"]), int(d["vector_len"]))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise FormatError(f"bad isolation forest model: {e}") from None


def iforest_fit(x, psi: int = DEFAULT_PSI, n_trees: int = DEFAULT_TREES,
                rng: np.random.Generator | None = None) -> IForestModel:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if psi < 1 or n_trees < 1:
        raise InvalidArgument("psi and n_trees must be positive")
    if len(x) < psi:
        raise InsufficientData(f"need at least psi={psi} training vectors, got {len(x)}")
    rng = rng if rng is not None else np.random.default_rng(0)
    limit = int(math.ceil(math.log2(psi))) if psi > 1 else 0
    trees = []
    for _ in range(n_trees):
        idx = rng.choice(len(x), size=psi, replace=False)
        trees.append(_grow(x[idx], rng, limit))
    return IForestModel(trees, psi, n_trees, vector_len=x.shape[1])


def window_vectors(counts, ends, length: int) -> np.ndarray:
    """Rows of ``length`` consecutive counts ending at each index in ``ends``."""
    counts = np.asarray(counts, dtype=np.float64)
    ends = np.asarray(ends, dtype=np.int64)
    if len(ends) and (ends.min() < length - 1 or ends.max() >= len(counts)):
        raise InvalidArgument("vector window runs outside the series")
    return counts[ends[:, None] - length + 1 + np.arange(length)[None, :]]


def best_f1_threshold(scores, labels) -> float:
    """Score cut maximizing F1 of "predict 1 iff score >= cut"; ties keep the larger cut."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    n_pos = int(np.sum(y == 1))
    if n_pos == 0:
        raise InsufficientData("threshold selection needs attack-labelled vectors")
    cand = np.unique(s)[::-1]
    order = np.argsort(-s, kind="stable")
    ss, ys = s[order], (y[order] == 1)
    tp_cum = np.concatenate([[0], np.cumsum(ys)])
    n_flag = np.searchsorted(-ss, -cand, side="right")
    tp = tp_cum[n_flag]
    fp = n_flag - tp
    f1 = 2 * tp / np.maximum(2 * tp + fp + (n_pos - tp), 1)
    return float(cand[int(np.argmax(f1))])


def iforest_detector(train_vectors, train_labels, psi=DEFAULT_PSI, n_trees=DEFAULT_TREES, rng=None) -> IForestModel:
    """Fit trees on benign vectors only, then pick the threshold on all labelled vectors."""
    train_vectors = np.asarray(train_vectors, dtype=np.float64)
    train_labels = np.asarray(train_labels)
    model = iforest_fit(train_vectors[train_labels == 0], psi, n_trees, rng)
    model.threshold = best_f1_threshold(model.score(train_vectors), train_labels)
    return model
