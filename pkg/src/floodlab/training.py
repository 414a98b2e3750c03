"""Training loop, detection metrics and inference benchmarking for the detectors."""

from __future__ import annotations

import csv
import logging
import time
import tracemalloc
from dataclasses import asdict, dataclass, field
from typing import Sequence, TextIO

import numpy as np

from floodlab.detectors.tst import TSTConfig, TSTParams, param_count, tst_forward, tst_predict
from floodlab.errors import DegenerateData, InvalidArgument, ShapeError
from floodlab.features import SequenceDataset
from floodlab.tensor import bce_with_logits, no_grad

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainSpec:
    epochs: int = 50
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    patience: int = 5
    val_fraction: float = 0.2
    batch_size: int = 4

    def __post_init__(self):
        if not 0 < self.val_fraction < 1:
            raise InvalidArgument(f"val_fraction must lie in (0, 1), got {self.val_fraction}")
        if self.patience < 1:
            raise InvalidArgument("patience must be at least 1")
        if self.epochs < 0 or self.batch_size < 1:
            raise InvalidArgument("epochs must be >= 0 and batch_size >= 1")
        if self.optimizer != "adam":
            raise InvalidArgument(f"unsupported optimizer {self.optimizer!r}")
        if not self.learning_rate > 0:
            raise InvalidArgument("learning_rate must be positive")


class Adam:
    def __init__(self, tensors, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.tensors = list(tensors)
        self.lr, self.b1, self.b2, self.eps = lr, betas[0], betas[1], eps
        self.m = [np.zeros_like(t.data) for t in self.tensors]
        self.v = [np.zeros_like(t.data) for t in self.tensors]
        self.t = 0

    def zero_grad(self):
        for t in self.tensors:
            t.grad = None

    def step(self):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.tensors, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class EvalReport:
    tp: int
    fp: int
    tn: int
    fn: int
    precision: float
    recall: float
    accuracy: float
    f1: float
    flags: tuple = ()
    inference_time_s: float | None = None
    peak_extra_memory_bytes: int | None = None
    param_count: int | None = None

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def evaluate(predictions, labels) -> EvalReport:
    """Confusion counts and metrics with DDoS (label 1) as the positive class.

    A metric whose denominator is zero is reported as 0 and named in ``flags``.
    """
    p = np.asarray(predictions).ravel()
    y = np.asarray(labels).ravel()
    if p.shape != y.shape:
        raise InvalidArgument(f"{len(p)} predictions for {len(y)} labels")
    tp = int(np.sum((p == 1) & (y == 1)))
    fp = int(np.sum((p == 1) & (y != 1)))
    fn = int(np.sum((p != 1) & (y == 1)))
    tn = int(len(y) - tp - fp - fn)
    flags = []

    def ratio(num, den, name):
        if den == 0:
            flags.append(f"{name}_undefined")
            return 0.0
        return num / den

    precision = ratio(tp, tp + fp, "precision")
    recall = ratio(tp, tp + fn, "recall")
    accuracy = ratio(tp + tn, len(y), "accuracy")
    f1 = ratio(2 * precision * recall, precision + recall, "f1")
    return EvalReport(tp, fp, tn, fn, precision, recall, accuracy, f1, tuple(flags))


REPORT_COLUMNS = ("scenario", "detector", "n", "tp", "fp", "tn", "fn",
                  "precision", "recall", "accuracy", "f1", "flags")


def write_reports(rows: Sequence[tuple[str, str, EvalReport]], stream: TextIO) -> None:
    """One CSV line per (scenario, detector). Only deterministic fields are written."""
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for scenario, detector, r in rows:
        w.writerow((scenario, detector, r.n, r.tp, r.fp, r.tn, r.fn, f"{r.precision:.6f}",
                    f"{r.recall:.6f}", f"{r.accuracy:.6f}", f"{r.f1:.6f}", ";".join(r.flags)))


def _check_dataset(config: TSTConfig, ds: SequenceDataset, what: str):
    if ds.sequences.ndim != 2 or ds.sequences.shape[1] != config.seq_len:
        raise ShapeError(f"{what} sequences have length {ds.sequences.shape[-1]}, config seq_len is {config.seq_len}")


def _mean_loss(params, ds, batch_size=32):
    total = 0.0
    with no_grad():
        for i in range(0, len(ds), batch_size):
            logits = tst_forward(params, ds.sequences[i:i + batch_size])
            total += bce_with_logits(logits, ds.labels[i:i + batch_size].astype(np.float64)).item() * len(logits.data)
    return total / len(ds)


def train_tst(config: TSTConfig, params: TSTParams, dataset: SequenceDataset, spec: TrainSpec,
              rng: np.random.Generator, val: SequenceDataset | None = None):
    """Mini-batch Adam on BCE; returns (best params, history).

    With a validation set, the returned params are those of the epoch with the
    highest validation F1 (ties broken by lower validation loss), and training
    stops after ``spec.patience`` epochs without improvement. Without one, the
    final params are returned.
    """
    _check_dataset(config, dataset, "training")
    if val is not None and len(val):
        _check_dataset(config, val, "validation")
    else:
        val = None
    y = dataset.labels
    if not (np.any(y == 1) and np.any(y == 0)):
        raise DegenerateData("training data must contain both classes")
    if params.config != config:
        raise InvalidArgument("params were built for a different config")
    history = []
    if spec.epochs == 0:
        return params, history

    opt = Adam(params.trainable(), spec.learning_rate, spec.betas, spec.adam_eps)
    best, best_key, stale = params.copy(), None, 0
    n = len(dataset)
    for epoch in range(1, spec.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        running = 0.0
        for i in range(0, n, spec.batch_size):
            idx = order[i:i + spec.batch_size]
            opt.zero_grad()
            logits = tst_forward(params, dataset.sequences[idx], training=True, rng=rng)
            loss = bce_with_logits(logits, y[idx].astype(np.float64))
            loss.backward()
            opt.step()
            running += loss.item() * len(idx)
        rec = {"epoch": epoch, "train_loss": running / n}
        if val is not None:
            rec["val_loss"] = _mean_loss(params, val)
            rec["val_f1"] = evaluate(tst_predict(params, val.sequences), val.labels).f1
            key = (rec["val_f1"], -rec["val_loss"])
            if best_key is None or key > best_key:
                best, best_key, stale = params.copy(), key, 0
            else:
                stale += 1
        history.append(rec)
        log.info("epoch %d %s (%.1fs)", epoch,
                 " ".join(f"{k}={v:.5f}" for k, v in rec.items() if k != "epoch"), time.perf_counter() - t0)
        if val is not None and stale >= spec.patience:
            log.info("early stop after epoch %d", epoch)
            break
    return (best if val is not None else params), history


@dataclass
class BenchResult:
    median_s: float
    param_count: int
    param_bytes: int
    peak_extra_memory_bytes: int
    trials: list = field(default_factory=list)

    def as_dict(self):
        return asdict(self)


def bench_inference(params: TSTParams, config: TSTConfig | None = None, n_trials: int = 10,
                    sequence=None, warmup: int = 3) -> BenchResult:
    """Median wall time of single-sequence eval forward passes, after warmups.

    Peak extra memory is the tracemalloc high-water mark of one separate pass,
    so tracing overhead does not leak into the timings.
    """
    config = config or params.config
    if n_trials < 1:
        raise InvalidArgument("n_trials must be positive")
    x = np.zeros((1, config.seq_len)) if sequence is None else np.asarray(sequence, dtype=np.float64).reshape(1, -1)
    with no_grad():
        for _ in range(warmup):
            tst_forward(params, x)
        times = []
        for _ in range(n_trials):
            t0 = time.perf_counter()
            tst_forward(params, x)
            times.append(time.perf_counter() - t0)
        tracemalloc.start()
        try:
            tracemalloc.reset_peak()
            base = tracemalloc.get_traced_memory()[0]
            tst_forward(params, x)
            peak = tracemalloc.get_traced_memory()[1] - base
        finally:
            tracemalloc.stop()
    n = param_count(config)
    return BenchResult(float(np.median(times)), n, 8 * n, int(peak), times)
