"""End-to-end runs: scenarios -> window counts -> detectors -> reports.

The default settings are the reproduction run: train on the TCP and ICMP
training scenarios, test on the TCP, ICMP and hybrid test scenarios.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from floodlab.detectors.iforest import DEFAULT_PSI, DEFAULT_TREES, DEFAULT_VECTOR_LEN, IForestModel, \
    iforest_detector, window_vectors
from floodlab.detectors.threshold import ThresholdDetector, threshold_fit
from floodlab.detectors.tst import TSTConfig, TSTParams, tst_init, tst_predict
from floodlab.features import (
    Scaler,
    SequenceDataset,
    WindowSeries,
    apply_scaler,
    fit_scaler,
    make_sequences,
    split_train_val,
    window_counts,
)
from floodlab.scenario import ScenarioSpec, load_scenario, scenario_seed, synth_scenario
from floodlab.training import EvalReport, TrainSpec, evaluate, train_tst, write_reports

log = logging.getLogger(__name__)

TRAIN_SCENARIOS = ("tcp_train", "icmp_train")
TEST_SCENARIOS = ("tcp_test", "icmp_test", "hybrid_test")
DETECTORS = ("tst", "iforest", "threshold")

# Sized so the whole reproduction takes about seven minutes on one CPU core.
DEFAULT_TRAIN_SPEC = TrainSpec(epochs=6, patience=3)
DEFAULT_TRAIN_STRIDE = 40
DEFAULT_BOUNDARY_STRIDE = 4
DEFAULT_EVAL_STRIDE = 20


@dataclass(frozen=True)
class RunSettings:
    seed: int = 42
    train_scenarios: tuple = TRAIN_SCENARIOS
    test_scenarios: tuple = TEST_SCENARIOS
    window_s: float = 0.1
    tst: TSTConfig = field(default_factory=TSTConfig)
    train: TrainSpec = DEFAULT_TRAIN_SPEC
    train_stride: int = DEFAULT_TRAIN_STRIDE
    boundary_stride: int | None = DEFAULT_BOUNDARY_STRIDE
    eval_stride: int = DEFAULT_EVAL_STRIDE
    detectors: tuple = DETECTORS
    iforest_vector_len: int = DEFAULT_VECTOR_LEN
    iforest_psi: int = DEFAULT_PSI
    iforest_trees: int = DEFAULT_TREES


@dataclass
class PreparedData:
    scaler: Scaler
    train: dict       # name -> scaled WindowSeries
    test: dict


@dataclass
class RunResult:
    settings: RunSettings
    rows: list                      # (scenario, detector, EvalReport)
    history: list = field(default_factory=list)
    tst: TSTParams | None = None
    iforest: IForestModel | None = None
    threshold: ThresholdDetector | None = None
    scaler: Scaler | None = None
    elapsed_s: float = 0.0

    def report(self, scenario: str, detector: str) -> EvalReport:
        for s, d, r in self.rows:
            if s == scenario and d == detector:
                return r
        raise KeyError((scenario, detector))

    def report_text(self) -> str:
        import io
        buf = io.StringIO()
        write_reports(self.rows, buf)
        return buf.getvalue()


def scenario_series(scenario: str | ScenarioSpec, seed: int, window_s: float = 0.1) -> WindowSeries:
    """Render a scenario (preset name, file path or spec) and count its windows."""
    spec = scenario if isinstance(scenario, ScenarioSpec) else load_scenario(scenario)
    spec = spec.with_seed(scenario_seed(seed, spec.name))
    trace, intervals = synth_scenario(spec)
    return window_counts(trace, window_s, intervals)


def _name(s) -> str:
    return s.name if isinstance(s, ScenarioSpec) else Path(str(s)).stem


def prepare(settings: RunSettings) -> PreparedData:
    raw_train = {_name(s): scenario_series(s, settings.seed, settings.window_s) for s in settings.train_scenarios}
    raw_test = {_name(s): scenario_series(s, settings.seed, settings.window_s) for s in settings.test_scenarios}
    scaler = fit_scaler(list(raw_train.values()))
    return PreparedData(scaler, {k: apply_scaler(scaler, v) for k, v in raw_train.items()},
                        {k: apply_scaler(scaler, v) for k, v in raw_test.items()})


def eval_dataset(series: WindowSeries, seq_len: int, stride: int) -> SequenceDataset:
    return make_sequences(series, seq_len, stride)


def training_sets(settings: RunSettings, data: PreparedData) -> tuple[SequenceDataset, SequenceDataset]:
    parts = [split_train_val(s, settings.tst.seq_len, settings.train_stride, settings.train.val_fraction,
                             boundary_stride=settings.boundary_stride)
             for s in data.train.values()]
    return SequenceDataset.concat([p[0] for p in parts]), SequenceDataset.concat([p[1] for p in parts])


def _rngs(seed: int):
    init, train, forest = np.random.SeedSequence(seed).spawn(3)
    return np.random.default_rng(init), np.random.default_rng(train), np.random.default_rng(forest)


def fit_tst(settings: RunSettings, data: PreparedData):
    init_rng, train_rng, _ = _rngs(settings.seed)
    train_ds, val_ds = training_sets(settings, data)
    log.info("tst: %d training / %d validation sequences", len(train_ds), len(val_ds))
    params = tst_init(settings.tst, init_rng)
    return train_tst(settings.tst, params, train_ds, settings.train, train_rng, val_ds)


def fit_iforest(settings: RunSettings, data: PreparedData) -> IForestModel:
    *_, forest_rng = _rngs(settings.seed)
    L = settings.iforest_vector_len
    xs, ys = [], []
    for s in data.train.values():
        ends = np.arange(L - 1, len(s))
        xs.append(window_vectors(s.counts, ends, L))
        ys.append(s.labels[ends])
    return iforest_detector(np.concatenate(xs), np.concatenate(ys), settings.iforest_psi,
                            settings.iforest_trees, forest_rng)


def fit_threshold(data: PreparedData) -> ThresholdDetector:
    return threshold_fit(np.concatenate([s.counts for s in data.train.values()]),
                         np.concatenate([s.labels for s in data.train.values()]))


def run(settings: RunSettings = RunSettings(), out_dir: str | Path | None = None) -> RunResult:
    """Train every requested detector and evaluate each on every test scenario.

    All detectors are scored on the same sequence end points: the TST sees
    the whole sequence, the forest its last ``iforest_vector_len`` windows,
    the threshold baseline its last window.
    """
    t0 = time.perf_counter()
    data = prepare(settings)
    res = RunResult(settings, [], scaler=data.scaler)
    if "tst" in settings.detectors:
        res.tst, res.history = fit_tst(settings, data)
    if "iforest" in settings.detectors:
        res.iforest = fit_iforest(settings, data)
    if "threshold" in settings.detectors:
        res.threshold = fit_threshold(data)
    for name, series in data.test.items():
        ds = eval_dataset(series, settings.tst.seq_len, settings.eval_stride)
        for det in settings.detectors:
            if det == "tst":
                pred = tst_predict(res.tst, ds.sequences)
            elif det == "iforest":
                pred = res.iforest.predict_sequences(ds.sequences)
            else:
                pred = res.threshold.predict_sequences(ds.sequences)
            rep = evaluate(pred, ds.labels)
            log.info("%s %s f1=%.4f", name, det, rep.f1)
            res.rows.append((name, det, rep))
    res.elapsed_s = time.perf_counter() - t0
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.csv").write_text(res.report_text())
    return res


def lpe_settings(settings: RunSettings, learned: bool) -> RunSettings:
    return replace(settings, tst=replace(settings.tst, learned_embeddings=learned))
