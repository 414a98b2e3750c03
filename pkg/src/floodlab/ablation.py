"""Hyperparameter sweeps over the transformer detector.

Grid files are INI documents::

    [grid]
    mode = one-at-a-time        ; or: cartesian
    seq_len = 100, 200, 400
    n_heads = 8, 16, 32
    learned_embeddings = true, false

    [run]                       ; optional, overrides the reproduction defaults
    seed = 42
    train_scenarios = tcp_train, icmp_train
    test_scenarios = hybrid_test
    epochs = 6
    patience = 3
    train_stride = 40
    boundary_stride = 4
    eval_stride = 20

In one-at-a-time mode the base cell (the default TSTConfig) is run
once and every listed value is tried while all other factors keep their base
value. Cartesian mode runs the full product. d_k and d_v are recomputed as
d_model / n_heads for every cell; a cell where that division is not exact is
skipped and the reason recorded.
"""

from __future__ import annotations

import configparser
import csv
import itertools
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import TextIO

from floodlab.detectors.tst import TSTConfig
from floodlab.errors import ConfigError
from floodlab.pipeline import RunSettings, run
from floodlab.training import TrainSpec

log = logging.getLogger(__name__)

FACTORS = {
    "seq_len": int,
    "d_model": int,
    "n_heads": int,
    "d_ff": int,
    "n_layers": int,
    "dropout": float,
    "learned_embeddings": lambda s: _bool(s),
}
TABLE_COLUMNS = ("cell", "seq_len", "d_model", "n_heads", "d_k", "d_ff", "n_layers", "dropout",
                 "learned_embeddings", "scenario", "f1", "status", "reason")


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class Grid:
    values: dict            # factor -> tuple of values, in file order
    mode: str = "one-at-a-time"

    def cells(self, base: TSTConfig) -> list[dict]:
        """Per-cell factor overrides, in a fixed order."""
        if self.mode == "cartesian":
            names = list(self.values)
            return [dict(zip(names, combo)) for combo in itertools.product(*(self.values[n] for n in names))]
        cells = [{}]
        for name, vals in self.values.items():
            for v in vals:
                if v != getattr(base, name):
                    cells.append({name: v})
        return cells


def parse_grid(text: str) -> tuple[Grid, RunSettings]:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"unreadable grid file: {e}") from None
    if "grid" not in cp:
        raise ConfigError("grid file needs a [grid] section")
    g = cp["grid"]
    mode = g.get("mode", "one-at-a-time").strip()
    if mode not in ("one-at-a-time", "cartesian"):
        raise ConfigError(f"grid mode must be one-at-a-time or cartesian, got {mode!r}")
    values = {}
    for key in g:
        if key == "mode":
            continue
        if key not in FACTORS:
            raise ConfigError(f"unknown grid factor {key!r}; choose from {sorted(FACTORS)}")
        try:
            values[key] = tuple(FACTORS[key](v.strip()) for v in g[key].split(",") if v.strip())
        except ValueError as e:
            raise ConfigError(f"[grid] {key}: {e}") from None
    settings = RunSettings(detectors=("tst",))
    if "run" in cp:
        r = cp["run"]
        try:
            spec = settings.train
            spec = replace(spec, epochs=r.getint("epochs", spec.epochs), patience=r.getint("patience", spec.patience),
                           learning_rate=r.getfloat("learning_rate", spec.learning_rate))
            lists = {k: tuple(x.strip() for x in r[k].split(",") if x.strip())
                     for k in ("train_scenarios", "test_scenarios") if k in r}
            settings = replace(settings, seed=r.getint("seed", settings.seed), train=spec,
                               train_stride=r.getint("train_stride", settings.train_stride),
                               boundary_stride=r.getint("boundary_stride", settings.boundary_stride),
                               eval_stride=r.getint("eval_stride", settings.eval_stride), **lists)
        except ValueError as e:
            raise ConfigError(f"[run]: {e}") from None
    return Grid(values, mode), settings


@dataclass
class CellResult:
    index: int
    changes: dict
    config: TSTConfig | None
    f1: dict                # scenario -> F1
    reason: str = ""


def _run_cell(args) -> CellResult:
    index, changes, settings = args
    try:
        cfg = TSTConfig.with_heads(settings.tst, **changes)
    except ConfigError as e:
        return CellResult(index, changes, None, {}, str(e))
    res = run(replace(settings, tst=cfg, detectors=("tst",)))
    return CellResult(index, changes, cfg, {s: r.f1 for s, d, r in res.rows})


def run_ablation(grid: Grid, settings: RunSettings, jobs: int = 1) -> list[CellResult]:
    """Train and evaluate one TST per grid cell; results come back in cell order."""
    cells = grid.cells(settings.tst)
    work = [(i, c, settings) for i, c in enumerate(cells)]
    log.info("ablation: %d cells, %d job(s)", len(cells), jobs)
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_cell, work))
    return [_run_cell(w) for w in work]


def write_table(results: list[CellResult], settings: RunSettings, stream: TextIO) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(TABLE_COLUMNS)
    for r in results:
        if r.config is None:
            merged = {**{k: getattr(settings.tst, k) for k in FACTORS}, **r.changes}
            w.writerow((r.index, merged["seq_len"], merged["d_model"], merged["n_heads"], "", merged["d_ff"],
                        merged["n_layers"], merged["dropout"], str(merged["learned_embeddings"]).lower(),
                        "", "", "skipped", r.reason))
            continue
        c = r.config
        for scenario, f1 in r.f1.items():
            w.writerow((r.index, c.seq_len, c.d_model, c.n_heads, c.d_k, c.d_ff, c.n_layers, c.dropout,
                        str(c.learned_embeddings).lower(), scenario, f"{f1:.6f}", "ok", ""))
