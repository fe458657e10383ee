"""Aggregation of finished runs into curves and tables.

Everything here is pure bookkeeping over immutable RunRecords: accuracy
vs label budget with seed bands, index-overlap curves between protocols,
per-phase timing tables, and final-accuracy summaries with a
better-than-random flag.
"""

from __future__ import annotations

import csv
import io
import json
import os
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .protocol import RunRecord, jaccard_overlap

CURVE_METRICS = ("accuracy", "jaccard_vs_reference")
PHASES = ("precompute_ingest", "total_retraining", "total_acquisition",
          "final_training")


@dataclass(frozen=True)
class CurvePoint:
    protocol: str
    scorer: str
    budget: int
    mean: float
    std: float
    metric: str


@dataclass(frozen=True)
class SummaryRow:
    scorer: str
    protocol: str
    mean: float
    std: float
    above_random: bool


class ExperimentGrid:
    """Runs indexed by (dataset, scorer, protocol, seed)."""

    def __init__(self, records):
        self.records = list(records)
        self.cells = {}
        for rec in self.records:
            key = (rec.dataset, rec.config.scorer, rec.config.protocol,
                   rec.config.seed)
            if key in self.cells:
                raise ValidationError(f"duplicate grid cell {key}")
            self.cells[key] = rec

    @property
    def datasets(self):
        return sorted({k[0] for k in self.cells})

    @property
    def scorers(self):
        return sorted({k[1] for k in self.cells})

    @property
    def protocols(self):
        return sorted({k[2] for k in self.cells})

    @property
    def seeds(self):
        return sorted({k[3] for k in self.cells})

    def warn_if_partial(self):
        gaps = [
            (d, s, p, seed)
            for d in self.datasets
            for s in self.scorers
            for p in self.protocols
            for seed in self.seeds
            if (d, s, p, seed) not in self.cells
        ]
        if gaps:
            warnings.warn(f"grid is missing {len(gaps)} cells: {gaps[:8]}",
                          stacklevel=3)
        return gaps

    def select(self, dataset=None, scorer=None, protocol=None):
        return [
            rec for (d, s, p, _), rec in sorted(self.cells.items())
            if (dataset is None or d == dataset)
            and (scorer is None or s == scorer)
            and (protocol is None or p == protocol)
        ]


def load_grid(path: str) -> ExperimentGrid:
    """Collect every record.json under a directory tree."""
    records = []
    for root, _, files in os.walk(path):
        for name in sorted(files):
            if name == "record.json":
                with open(os.path.join(root, name), encoding="utf-8") as handle:
                    records.append(RunRecord.from_dict(json.load(handle)))
    if not records:
        raise ValidationError(f"no record.json files found under {path}")
    return ExperimentGrid(records)


def _accuracy_checkpoints(record: RunRecord):
    """(budget, accuracy) pairs actually recorded for one run."""
    points = []
    if record.initial_accuracy is not None:
        points.append((len(record.initial_indices), record.initial_accuracy))
    total = len(record.initial_indices)
    for it in record.iterations:
        total += len(it.acquired)
        if it.holdout_accuracy is not None:
            points.append((total, it.holdout_accuracy))
    return points


def curve(grid: ExperimentGrid, metric: str = "accuracy",
          reference: str | None = None):
    """Seed mean and std per budget checkpoint, one row per
    (protocol, scorer, budget)."""
    if metric not in CURVE_METRICS:
        raise ValidationError(f"metric must be one of {CURVE_METRICS}")
    if len(grid.datasets) != 1:
        raise ValidationError(
            "curve aggregates one dataset at a time; filter the grid first"
        )
    grid.warn_if_partial()
    if metric == "jaccard_vs_reference":
        if reference is None:
            raise ValidationError("jaccard_vs_reference needs a reference protocol")
        if reference not in grid.protocols:
            raise ValidationError(f"reference protocol {reference!r} has no runs")

    rows = []
    dataset = grid.datasets[0]
    for scorer in grid.scorers:
        for protocol in grid.protocols:
            per_seed = {}
            for seed in grid.seeds:
                rec = grid.cells.get((dataset, scorer, protocol, seed))
                if rec is None:
                    continue
                if metric == "accuracy":
                    series = _accuracy_checkpoints(rec)
                else:
                    ref = grid.cells.get((dataset, scorer, reference, seed))
                    if ref is None:
                        continue
                    series = []
                    budget = len(rec.initial_indices)
                    series.append((budget, jaccard_overlap(
                        rec.acquired_at(0), ref.acquired_at(0))))
                    for t in range(1, len(rec.iterations) + 1):
                        budget += len(rec.iterations[t - 1].acquired)
                        series.append((budget, jaccard_overlap(
                            rec.acquired_at(t), ref.acquired_at(t))))
                for budget, value in series:
                    per_seed.setdefault(budget, []).append(value)
            for budget in sorted(per_seed):
                values = per_seed[budget]
                if len(values) < 2:
                    raise ValidationError(
                        f"cell ({scorer}, {protocol}) has {len(values)} seed(s) "
                        f"at budget {budget}; need at least 2 for a std"
                    )
                rows.append(CurvePoint(
                    protocol=protocol,
                    scorer=scorer,
                    budget=budget,
                    mean=float(np.mean(values)),
                    std=float(np.std(values, ddof=1)),
                    metric=metric,
                ))
    return rows


def timing_table(record: RunRecord) -> dict:
    """Per-phase seconds plus their sum, matching the four loop phases."""
    table = {
        "precompute_ingest": record.ingest_seconds,
        "total_retraining": record.retraining_seconds,
        "total_acquisition": record.acquisition_seconds,
        "final_training": record.final_training_seconds,
    }
    for phase, seconds in table.items():
        if seconds < 0:
            raise ValidationError(f"{phase} is negative")
    table["total"] = sum(table.values())
    return table


def summary(grid: ExperimentGrid) -> list:
    """Final accuracy mean and std per (scorer, protocol), flagged when the
    mean beats the random baseline under the same protocol."""
    if len(grid.datasets) != 1:
        raise ValidationError(
            "summary aggregates one dataset at a time; filter the grid first"
        )
    grid.warn_if_partial()
    dataset = grid.datasets[0]

    finals = {}
    for scorer in grid.scorers:
        for protocol in grid.protocols:
            values = [
                grid.cells[(dataset, scorer, protocol, seed)].final_accuracy
                for seed in grid.seeds
                if (dataset, scorer, protocol, seed) in grid.cells
            ]
            values = [v for v in values if v is not None]
            if values:
                finals[(scorer, protocol)] = values

    rows = []
    for (scorer, protocol), values in sorted(finals.items()):
        if len(values) < 2:
            raise ValidationError(
                f"cell ({scorer}, {protocol}) has {len(values)} final "
                f"accuracies; need at least 2 for a std"
            )
        baseline = finals.get(("random", protocol))
        if baseline is None:
            raise ValidationError(
                f"no random baseline runs under protocol {protocol}"
            )
        rows.append(SummaryRow(
            scorer=scorer,
            protocol=protocol,
            mean=float(np.mean(values)),
            std=float(np.std(values, ddof=1)),
            above_random=bool(np.mean(values) > np.mean(baseline)),
        ))
    return rows


def curves_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["protocol", "scorer", "budget", "mean", "std", "metric"])
    for row in rows:
        writer.writerow([row.protocol, row.scorer, row.budget,
                         repr(row.mean), repr(row.std), row.metric])
    return buf.getvalue()


def summary_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["scorer", "protocol", "mean", "std", "above_random"])
    for row in rows:
        writer.writerow([row.scorer, row.protocol, repr(row.mean),
                         repr(row.std), str(row.above_random).lower()])
    return buf.getvalue()


def timing_csv(table: dict) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["phase", "seconds"])
    for phase in (*PHASES, "total"):
        writer.writerow([phase, repr(table[phase])])
    return buf.getvalue()
