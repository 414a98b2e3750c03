"""One-feature baseline: flag a window when its scaled MAVLink count drops below a cut."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from floodlab.errors import DegenerateData, FormatError, InvalidArgument


@dataclass(frozen=True)
class ThresholdDetector:
    cut: float
    train_errors: int = 0

    def predict(self, counts) -> np.ndarray:
        """1 iff count < cut."""
        return (np.asarray(counts, dtype=np.float64) < self.cut).astype(np.int8)

    def predict_sequences(self, sequences) -> np.ndarray:
        # a sequence is judged by its most recent window, like its label
        return self.predict(np.asarray(sequences)[:, -1])

    def to_json(self) -> str:
        return json.dumps({"kind": "threshold", "cut": self.cut, "train_errors": self.train_errors},
                          sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ThresholdDetector":
        try:
            d = json.loads(text)
            if d.get("kind") != "threshold":
                raise FormatError("not a threshold model")
            return cls(float(d["cut"]), int(d["train_errors"]))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise FormatError(f"bad threshold model: {e}") from None


def threshold_fit(counts, labels) -> ThresholdDetector:
    """Cut c minimizing training errors of "predict 1 iff count < c".

    Candidates are the midpoints between consecutive distinct values plus one
    cut below the minimum and one above the maximum. Ties go to the smallest cut.
    """
    x = np.asarray(counts, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if x.shape != y.shape:
        raise InvalidArgument("counts and labels differ in length")
    if not (np.any(y == 1) and np.any(y == 0)):
        raise DegenerateData("threshold baseline needs both classes in training data")
    vals = np.unique(x)
    cuts = np.concatenate([[vals[0] - 1.0], (vals[:-1] + vals[1:]) / 2, [vals[-1] + 1.0]])
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    # for each cut, number of points strictly below it
    below = np.searchsorted(xs, cuts, side="left")
    pos_below = np.concatenate([[0], np.cumsum(ys == 1)])[below]
    neg_below = below - pos_below
    n_pos = int(np.sum(y == 1))
    errors = neg_below + (n_pos - pos_below)
    best = int(np.argmin(errors))
    return ThresholdDetector(float(cuts[best]), int(errors[best]))
