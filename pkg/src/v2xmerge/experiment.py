"""Penetration-rate by seed experiment matrix."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .metrics import METRICS_HEADER, MetricsRecord, format_value
from .prediction.predictor import PredictionModel
from .scenario import Scenario, ScenarioConfig
from .sensors import SensorSpec
from .sim import run_metrics, simulate, write_csv

COVERAGE_SUMMARY_HEADER = ("rate", "runs", "detected_ratio_mean", "detected_ratio_q25", "detected_ratio_q75",
                           "loc_err_mean")


@dataclass
class CellResult:
    config: ScenarioConfig
    record: MetricsRecord
    runtime: float  # wall-clock seconds, not written to any file

    @property
    def failed(self) -> bool:
        return bool(self.record.error)


def run_cell(scenario: Scenario, config: ScenarioConfig, model: Optional[PredictionModel] = None,
             suite: Optional[Sequence[SensorSpec]] = None) -> CellResult:
    """One simulation; any failure is kept in ``record.error`` instead of raised."""
    start = time.perf_counter()
    try:
        out = simulate(scenario, config, model, suite, record_tracks=False)
        record = run_metrics(out, scenario.layout)
    except Exception as exc:  # a failed cell must not stop the matrix
        record = MetricsRecord(config.config_hash(), config.penetration_rate, config.rng_seed,
                               error=f"{type(exc).__name__}: {exc}")
    return CellResult(config, record, time.perf_counter() - start)


def run_experiment_matrix(scenario: Scenario, base: ScenarioConfig, rates: Sequence[float], seeds: Sequence[int],
                          out_dir=None, model: Optional[PredictionModel] = None,
                          suite: Optional[Sequence[SensorSpec]] = None) -> List[CellResult]:
    """Run every (rate, seed) cell sequentially, rates outermost.

    With ``out_dir`` the per-run rows go to ``metrics.csv`` and per-rate
    coverage aggregates to ``coverage_summary.csv``.
    """
    cells = [run_cell(scenario, base.replace(penetration_rate=float(r), rng_seed=int(s)), model, suite)
             for r in rates for s in seeds]
    if out_dir is not None:
        write_matrix(cells, base, out_dir)
    return cells


def metrics_rows(cells: Sequence[CellResult]) -> List[list]:
    return [c.record.row() + [c.record.error] for c in cells]


def coverage_summary(cells: Sequence[CellResult]) -> List[list]:
    """Per rate: runs, mean detected ratio with 0.25/0.75 quantiles over all ticks, mean localization error."""
    rows = []
    for rate in sorted({c.config.penetration_rate for c in cells}):
        recs = [c.record for c in cells if c.config.penetration_rate == rate]
        ratios = np.concatenate([np.asarray(r.detected_ratios, float) for r in recs])
        errs = np.concatenate([np.asarray(r.loc_errors, float) for r in recs])
        if len(ratios):
            q25, q75 = np.quantile(ratios, [0.25, 0.75])
            mean = float(ratios.mean())
        else:
            q25 = q75 = mean = math.nan
        rows.append([rate, len(recs), mean, float(q25), float(q75), float(errs.mean()) if len(errs) else math.nan])
    return rows


def write_matrix(cells: Sequence[CellResult], base: ScenarioConfig, out_dir) -> None:
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    # every row carries the hash of the config that produced it
    with open(d / "metrics.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(METRICS_HEADER) + ["config_hash", "error"])
        for c, row in zip(cells, metrics_rows(cells)):
            *values, error = row
            w.writerow([format_value(v) for v in values] + [c.config.config_hash(), error])
    write_csv(d / "coverage_summary.csv", COVERAGE_SUMMARY_HEADER, coverage_summary(cells), base.config_hash())
