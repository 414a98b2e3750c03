"""Saving and loading any trained detector together with its scaler.

The transformer uses the binary named-tensor checkpoint format. The forest
and the threshold baseline are JSON: ``{"model": {...}, "scaler": {...}}``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from floodlab.checkpoint import MAGIC
from floodlab.detectors.iforest import IForestModel
from floodlab.detectors.threshold import ThresholdDetector
from floodlab.detectors.tst import TSTParams, load_tst, save_tst
from floodlab.errors import FormatError
from floodlab.features import Scaler


@dataclass
class LoadedModel:
    kind: str           # "tst", "iforest" or "threshold"
    model: object
    scaler: Scaler | None

    @property
    def seq_len(self) -> int | None:
        return self.model.config.seq_len if self.kind == "tst" else None

    def predict_sequences(self, sequences):
        if self.kind == "tst":
            from floodlab.detectors.tst import tst_predict
            return tst_predict(self.model, sequences)
        return self.model.predict_sequences(sequences)


def save_model(path, model, scaler: Scaler | None) -> None:
    path = Path(path)
    if isinstance(model, TSTParams):
        with open(path, "wb") as f:
            save_tst(f, model, scaler)
        return
    if not isinstance(model, (IForestModel, ThresholdDetector)):
        raise TypeError(f"cannot save a {type(model).__name__}")
    doc = {"model": json.loads(model.to_json()),
           "scaler": None if scaler is None else {"mean": scaler.mean, "std": scaler.std}}
    path.write_text(json.dumps(doc, sort_keys=True) + "\n")


def load_model(path) -> LoadedModel:
    path = Path(path)
    with open(path, "rb") as f:
        head = f.read(4)
    if head == MAGIC:
        with open(path, "rb") as f:
            params, scaler = load_tst(f)
        return LoadedModel("tst", params, scaler)
    try:
        doc = json.loads(path.read_text())
        body, sc = doc["model"], doc.get("scaler")
        kind = body["kind"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as e:
        raise FormatError(f"{path}: not a model file ({e})") from None
    text = json.dumps(body)
    if kind == "iforest":
        model = IForestModel.from_json(text)
    elif kind == "threshold":
        model = ThresholdDetector.from_json(text)
    else:
        raise FormatError(f"{path}: unknown model kind {kind!r}")
    return LoadedModel(kind, model, Scaler(sc["mean"], sc["std"]) if sc else None)
