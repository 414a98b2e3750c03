"""Command-line entry point: ``floodlab <subcommand> ...``.

Exit status is 0 on success, 1 on a usage error and 2 when input data or a
file is malformed or inconsistent. Set FLOODLAB_LOG=INFO (or DEBUG) for
progress messages on stderr.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from floodlab import pipeline
from floodlab.ablation import parse_grid, run_ablation, write_table
from floodlab.detectors.tst import TSTConfig, tst_init
from floodlab.errors import ConfigError, FloodlabError
from floodlab.features import apply_scaler, fit_scaler, make_sequences, read_series, window_counts, write_series
from floodlab.ingest import parse_capture_csv, write_capture_csv
from floodlab.models import load_model, save_model
from floodlab.scenario import load_scenario, read_labels, scenario_seed, synth_scenario, write_labels
from floodlab.trace import Protocol
from floodlab.training import TrainSpec, bench_inference, evaluate, write_reports

log = logging.getLogger("floodlab")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _labels_path(capture: Path) -> Path:
    return capture.with_suffix(".labels")


# subcommands ------------------------------------------------------------------

def cmd_generate(a):
    spec = load_scenario(a.scenario)
    spec = spec.with_seed(scenario_seed(a.seed, spec.name))
    trace, intervals = synth_scenario(spec)
    out = Path(a.output)
    with open(out, "w", newline="") as f:
        write_capture_csv(trace, f)
    labels = Path(a.labels) if a.labels else _labels_path(out)
    with open(labels, "w", newline="") as f:
        write_labels(intervals, f)
    log.info("wrote %d packets to %s and labels to %s", len(trace), out, labels)


def cmd_ingest(a):
    with open(a.capture, newline="") as f:
        trace = parse_capture_csv(f, a.duration)
    print(f"packets\t{len(trace)}")
    print(f"duration_s\t{trace.duration_s:.6f}")
    for p in Protocol:
        n = trace.count(p)
        rate = n / trace.duration_s if trace.duration_s > 0 else 0.0
        print(f"{p.name.lower()}\t{n}\t{rate:.3f} pps")


def cmd_featurize(a):
    intervals = []
    if a.labels:
        with open(a.labels, newline="") as f:
            intervals = read_labels(f)
    duration = a.duration
    if duration is None and intervals:
        duration = max(iv.end_s for iv in intervals)
    with open(a.capture, newline="") as f:
        trace = parse_capture_csv(f, duration)
    series = window_counts(trace, a.window, intervals)
    with open(a.output, "w", newline="") as f:
        write_series(series, f)


def _tst_config(a) -> TSTConfig:
    base = TSTConfig(seed=a.seed)
    changes = {k: getattr(a, k) for k in ("seq_len", "d_model", "n_heads", "d_ff", "n_layers", "dropout")
               if getattr(a, k) is not None}
    if a.no_lpe:
        changes["learned_embeddings"] = False
    if "d_model" in changes or "n_heads" in changes:
        return TSTConfig.with_heads(base, **changes)
    return replace(base, **changes)


def _settings(a) -> pipeline.RunSettings:
    spec = pipeline.DEFAULT_TRAIN_SPEC
    spec = TrainSpec(epochs=a.epochs if a.epochs is not None else spec.epochs,
                     learning_rate=a.lr, patience=a.patience if a.patience is not None else spec.patience,
                     val_fraction=a.val_fraction)
    return pipeline.RunSettings(seed=a.seed, tst=_tst_config(a), train=spec, train_stride=a.train_stride,
                                boundary_stride=a.boundary_stride or None, eval_stride=a.eval_stride,
                                iforest_psi=a.psi, iforest_trees=a.trees, iforest_vector_len=a.vector_len)


def _read_features(paths):
    out = {}
    for p in paths:
        with open(p, newline="") as f:
            out[Path(p).name.split(".")[0]] = read_series(f)
    return out


def cmd_train(a):
    settings = _settings(a)
    raw = _read_features(a.features)
    scaler = fit_scaler(list(raw.values()))
    data = pipeline.PreparedData(scaler, {k: apply_scaler(scaler, v) for k, v in raw.items()}, {})
    if a.detector == "tst":
        model, history = pipeline.fit_tst(settings, data)
        if a.history:
            with open(a.history, "w", newline="") as f:
                w = csv.writer(f, lineterminator="\n")
                w.writerow(("epoch", "train_loss", "val_loss", "val_f1"))
                for h in history:
                    w.writerow((h["epoch"], repr(h["train_loss"]), repr(h.get("val_loss", "")),
                                repr(h.get("val_f1", ""))))
    elif a.detector == "iforest":
        model = pipeline.fit_iforest(settings, data)
    else:
        model = pipeline.fit_threshold(data)
    save_model(a.output, model, scaler)


def cmd_eval(a):
    m = load_model(a.model)
    seq_len = a.seq_len
    if m.kind == "tst":
        if seq_len is not None and seq_len != m.seq_len:
            raise ConfigError(f"--seq-len {seq_len} does not match the checkpoint's seq_len {m.seq_len}")
        seq_len = m.seq_len
    elif seq_len is None:
        seq_len = TSTConfig().seq_len
    rows = []
    for name, series in _read_features(a.features).items():
        if m.scaler is not None:
            series = apply_scaler(m.scaler, series)
        ds = make_sequences(series, seq_len, a.eval_stride)
        rows.append((name, m.kind, evaluate(m.predict_sequences(ds.sequences), ds.labels)))
    _write_or_print(a.output, lambda f: write_reports(rows, f))


def cmd_ablate(a):
    grid, settings = parse_grid(Path(a.grid).read_text())
    settings = replace(settings, seed=a.seed)
    results = run_ablation(grid, settings, a.jobs)
    _write_or_print(a.output, lambda f: write_table(results, settings, f))


def cmd_bench(a):
    if a.model:
        m = load_model(a.model)
        if m.kind != "tst":
            raise ConfigError(f"bench needs a transformer checkpoint, {a.model} holds a {m.kind} model")
        params = m.model
    else:
        if a.seed is None:
            raise UsageError("bench without --model initializes a fresh model and needs --seed")
        params = tst_init(TSTConfig(seed=a.seed), np.random.default_rng(a.seed))
    r = bench_inference(params, n_trials=a.trials)

    def emit(f):
        w = csv.writer(f, lineterminator="\n")
        w.writerow(("median_s", "param_count", "param_bytes", "peak_extra_memory_bytes", "trials"))
        w.writerow((f"{r.median_s:.6f}", r.param_count, r.param_bytes, r.peak_extra_memory_bytes, len(r.trials)))
    _write_or_print(a.output, emit)


def cmd_reproduce(a):
    settings = replace(pipeline.RunSettings(seed=a.seed), eval_stride=a.eval_stride)
    if a.no_lpe:
        settings = pipeline.lpe_settings(settings, False)
    res = pipeline.run(settings, a.output)
    out = Path(a.output)
    save_model(out / "tst.ckpt", res.tst, res.scaler)
    save_model(out / "iforest.json", res.iforest, res.scaler)
    save_model(out / "threshold.json", res.threshold, res.scaler)
    sys.stdout.write(res.report_text())


def _write_or_print(path, emit):
    if path:
        with open(path, "w", newline="") as f:
            emit(f)
    else:
        emit(sys.stdout)


# parser -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="floodlab", description="Synthetic UAV flood traffic, features and detectors.")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    g = sub.add_parser("generate", help="render a scenario into a capture CSV plus label intervals")
    g.add_argument("--scenario", required=True, help="scenario file or preset name (e.g. tcp_train)")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("-o", "--output", required=True, help="capture CSV to write")
    g.add_argument("--labels", help="label file (default: output with .labels suffix)")
    g.set_defaults(func=cmd_generate)

    i = sub.add_parser("ingest", help="validate a capture CSV and summarize it")
    i.add_argument("capture")
    i.add_argument("--duration", type=float, help="capture length in seconds (default: last timestamp)")
    i.set_defaults(func=cmd_ingest)

    f = sub.add_parser("featurize", help="capture + labels -> per-window MAVLink counts")
    f.add_argument("--capture", required=True)
    f.add_argument("--labels")
    f.add_argument("--window", type=float, default=0.1, help="window length in seconds")
    f.add_argument("--duration", type=float, help="capture length (default: end of the label timeline)")
    f.add_argument("-o", "--output", required=True)
    f.set_defaults(func=cmd_featurize)

    t = sub.add_parser("train", help="fit a detector on window-count files")
    t.add_argument("--features", nargs="+", required=True, help="raw count series, one per training scenario")
    t.add_argument("--detector", choices=pipeline.DETECTORS, default="tst")
    t.add_argument("--seed", type=int, required=True)
    t.add_argument("-o", "--output", required=True, help="model file to write")
    t.add_argument("--history", help="write per-epoch losses to this CSV")
    _add_model_flags(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a model on count files and write an evaluation report")
    e.add_argument("--model", required=True)
    e.add_argument("--features", nargs="+", required=True)
    e.add_argument("--seq-len", type=int, help="sequence length (must match a transformer checkpoint)")
    e.add_argument("--eval-stride", type=int, default=pipeline.DEFAULT_EVAL_STRIDE)
    e.add_argument("-o", "--output", help="report CSV (default: stdout)")
    e.set_defaults(func=cmd_eval)

    ab = sub.add_parser("ablate", help="train and evaluate one transformer per grid cell")
    ab.add_argument("--grid", required=True)
    ab.add_argument("--seed", type=int, required=True)
    ab.add_argument("--jobs", type=int, default=1)
    ab.add_argument("-o", "--output", help="table CSV (default: stdout)")
    ab.set_defaults(func=cmd_ablate)

    b = sub.add_parser("bench", help="time single-sequence inference")
    b.add_argument("--model", help="transformer checkpoint (default: a freshly initialized default model)")
    b.add_argument("--seed", type=int)
    b.add_argument("--trials", type=int, default=10)
    b.add_argument("-o", "--output")
    b.set_defaults(func=cmd_bench)

    r = sub.add_parser("reproduce", help="full run on the preset scenarios with all three detectors")
    r.add_argument("--seed", type=int, required=True)
    r.add_argument("-o", "--output", required=True, help="output directory")
    r.add_argument("--eval-stride", type=int, default=pipeline.DEFAULT_EVAL_STRIDE)
    r.add_argument("--no-lpe", action="store_true", help="fixed sinusoidal positions instead of learned ones")
    r.set_defaults(func=cmd_reproduce)
    return p


def _add_model_flags(t):
    t.add_argument("--seq-len", type=int)
    t.add_argument("--d-model", type=int)
    t.add_argument("--n-heads", type=int)
    t.add_argument("--d-ff", type=int)
    t.add_argument("--n-layers", type=int)
    t.add_argument("--dropout", type=float)
    t.add_argument("--no-lpe", action="store_true")
    t.add_argument("--epochs", type=int)
    t.add_argument("--patience", type=int)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--val-fraction", type=float, default=0.2)
    t.add_argument("--train-stride", type=int, default=pipeline.DEFAULT_TRAIN_STRIDE)
    t.add_argument("--boundary-stride", type=int, default=pipeline.DEFAULT_BOUNDARY_STRIDE,
                   help="stride for sequences spanning a label change (0 disables)")
    t.add_argument("--eval-stride", type=int, default=pipeline.DEFAULT_EVAL_STRIDE, help=argparse.SUPPRESS)
    t.add_argument("--psi", type=int, default=pipeline.DEFAULT_PSI, help="isolation forest subsample size")
    t.add_argument("--trees", type=int, default=pipeline.DEFAULT_TREES, help="isolation forest size")
    t.add_argument("--vector-len", type=int, default=pipeline.DEFAULT_VECTOR_LEN,
                   help="isolation forest input: this many most recent windows")


def _setup_logging():
    level = os.environ.get("FLOODLAB_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.func(args)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except (FloodlabError, OSError) as e:
        print(f"floodlab: error: {e}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
