"""Expanding-window backtests and the MAE/RMSE report.

For each test month the cutoff is the first instant of that month. A leg goes
to training only if it ended before the cutoff; legs still running at the
cutoff (or starting later, within the month) are test legs, whole. Only ocean
points of test legs are scored. Corrections for a test point may use any
live (land) observation of the same shipment from strictly earlier times,
including observations that sit in training legs.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import defaultdict
from collections.abc import Iterable, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np

from .features import FeatureConfig, ModelKind, Target, feature_matrix, leg_columns
from .rcm import (
    RCMBundle,
    SelectionScheme,
    WeightingConfig,
    WeightingScheme,
    LinearDirection,
    predict_shipment,
    train_adaptive,
    variant_name,
)
from .regress import LinearModel, clamp_rh, fit_matrix, predict_matrix
from .telemetry import SegmentKind, Shipment, format_timestamp

logger = logging.getLogger(__name__)

BASELINE = "baseline"
METRICS = ("MAE", "RMSE")
TARGETS = (Target.TEMPERATURE, Target.HUMIDITY)


def mae(pred, truth) -> float:
    p, t = _pair(pred, truth)
    return float(np.mean(np.abs(p - t)))


def rmse(pred, truth) -> float:
    p, t = _pair(pred, truth)
    return float(math.sqrt(np.mean((p - t) ** 2)))


def _pair(pred, truth):
    p = np.asarray(pred, dtype=float).ravel()
    t = np.asarray(truth, dtype=float).ravel()
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.size} predictions vs {t.size} truths")
    if p.size == 0:
        raise ValueError("no points to score")
    return p, t


def paired_difference(err_a, err_b, clusters: Optional[Sequence] = None) -> tuple[float, float]:
    """Mean of |err_a| - |err_b| and its standard error.

    With ``clusters`` (e.g. shipment ids) the standard error treats each
    cluster as one observation, since errors within a shipment are correlated.
    """
    d = np.abs(np.asarray(err_a, dtype=float)) - np.abs(np.asarray(err_b, dtype=float))
    if clusters is None:
        return float(d.mean()), float(d.std(ddof=1) / math.sqrt(d.size))
    groups: dict = defaultdict(list)
    for key, v in zip(clusters, d):
        groups[key].append(v)
    n = len(groups)
    # ratio estimator over clusters (linearised)
    sums = np.array([np.sum(v) for v in groups.values()])
    sizes = np.array([len(v) for v in groups.values()], dtype=float)
    mean = sums.sum() / sizes.sum()
    resid = sums - mean * sizes
    se = math.sqrt(n / (n - 1) * np.sum(resid**2)) / sizes.sum() if n > 1 else math.inf
    return float(mean), float(se)


# -- splits ------------------------------------------------------------------


def _month_bounds(month: str) -> tuple[datetime, datetime]:
    if len(month) != 6 or not month.isdigit():
        raise ValueError(f"month must be YYYYMM, got {month!r}")
    y, m = int(month[:4]), int(month[4:])
    start = datetime(y, m, 1, tzinfo=timezone.utc)
    end = datetime(y + (m == 12), m % 12 + 1, 1, tzinfo=timezone.utc)
    return start, end


@dataclass(frozen=True)
class SplitSpec:
    test_month: str
    cutoff: datetime
    month_end: datetime
    train_legs: frozenset
    test_legs: frozenset
    skipped: Optional[str] = None

    def manifest(self) -> dict:
        return {
            "test_month": self.test_month,
            "cutoff": format_timestamp(self.cutoff),
            "month_end": format_timestamp(self.month_end),
            "train_legs": sorted("/".join(k) for k in self.train_legs),
            "test_legs": sorted("/".join(k) for k in self.test_legs),
            "skipped": self.skipped,
        }


def make_splits(dataset: Sequence[Shipment], months: Sequence[str]) -> list[SplitSpec]:
    if list(months) != sorted(months):
        raise ValueError("months must be ascending")
    splits = []
    for month in months:
        cutoff, month_end = _month_bounds(month)
        train, test = set(), set()
        ocean_test = 0
        for s in dataset:
            for leg in s.legs:
                key = (s.shipment_id, leg.leg_id)
                if leg.end < cutoff:
                    train.add(key)
                elif leg.start < month_end:
                    test.add(key)
                    ocean_test += sum(
                        1 for m in leg.measurements if m.environment is not None and m.environment.kind is SegmentKind.OCEAN
                    )
        reason = None
        if not train:
            reason = "empty train set"
        elif ocean_test == 0:
            reason = "no ocean test points"
        if reason:
            logger.warning("split %s skipped: %s", month, reason)
        splits.append(SplitSpec(month, cutoff, month_end, frozenset(train), frozenset(test), reason))
    return splits


def train_set(dataset: Iterable[Shipment], split: SplitSpec) -> list[Shipment]:
    out = []
    for s in dataset:
        legs = [leg for leg in s.legs if (s.shipment_id, leg.leg_id) in split.train_legs]
        if legs:
            out.append(s.with_legs(legs))
    return out


def test_points(shipment: Shipment, split: SplitSpec) -> set:
    """Timestamps of the shipment's ocean measurements scored in this split."""
    return {
        m.timestamp
        for leg in shipment.legs
        if (shipment.shipment_id, leg.leg_id) in split.test_legs
        for m in leg.measurements
        if m.environment.kind is SegmentKind.OCEAN
    }


# -- benchmark ---------------------------------------------------------------


@dataclass(frozen=True)
class BenchmarkConfig:
    weightings: tuple[str, ...] = ("uniform", "linear", "exp")
    schemes: tuple[str, ...] = ("local", "global", "recursive")
    alpha: float = 0.9
    linear_direction: str = "recent_heavy"
    normalize: bool = True
    phi1: float = 1.0
    phi2: float = 80.0
    clamp_humidity: bool = True
    workers: int = 1

    def variants(self) -> list[tuple[WeightingConfig, SelectionScheme]]:
        out = []
        for w in self.weightings:
            wc = WeightingConfig(WeightingScheme(w), self.alpha, LinearDirection(self.linear_direction), self.normalize)
            out.extend((wc, SelectionScheme(s)) for s in self.schemes)
        return out

    def model_names(self) -> list[str]:
        return [BASELINE] + [variant_name(w, s) for w, s in self.variants()]


@dataclass
class SplitModels:
    month: str
    baseline: dict[Target, LinearModel]
    bundles: dict[str, RCMBundle]
    failures: dict[str, str] = field(default_factory=dict)


def fit_baseline(train: Sequence[Shipment], target: Target, phi1: float, phi2: float) -> LinearModel:
    """Sensorless model on all training rows, land and ocean."""
    cfg = FeatureConfig(target, ModelKind.BASELINE, phi1, phi2)
    Xs, ys = [], []
    attr = "internal_temp" if target is Target.TEMPERATURE else "internal_rh"
    for s in train:
        ms = s.measurements
        Xs.append(feature_matrix(leg_columns(ms, s.legs_by_id), cfg))
        ys.append(np.array([getattr(m, attr) for m in ms]))
    if not Xs:
        raise ValueError("no training rows")
    meta = {"phi1": phi1, "phi2": phi2, "role": "baseline"}
    return fit_matrix(np.vstack(Xs), np.concatenate(ys), cfg.names, target, meta)


def train_split(dataset: Sequence[Shipment], split: SplitSpec, cfg: BenchmarkConfig) -> SplitModels:
    train = train_set(dataset, split)
    baseline = {t: fit_baseline(train, t, cfg.phi1, cfg.phi2) for t in TARGETS}
    models = SplitModels(split.test_month, baseline, {})
    for w, s in cfg.variants():
        name = variant_name(w, s)
        try:
            models.bundles[name] = train_adaptive(train, w, s, cfg.phi1, cfg.phi2)
        except Exception as exc:  # one broken variant must not sink the run
            logger.error("split %s variant %s failed to train: %s", split.test_month, name, exc)
            models.failures[name] = f"{type(exc).__name__}: {exc}"
    return models


@dataclass
class PointErrors:
    shipment_id: list[str] = field(default_factory=list)
    timestamp: list[datetime] = field(default_factory=list)
    truth: list[float] = field(default_factory=list)
    prediction: list[float] = field(default_factory=list)
    correction: list[Optional[float]] = field(default_factory=list)
    history_end: list[Optional[datetime]] = field(default_factory=list)

    def extend(self, sid, ts, truth, pred, corr=None, hist=None):
        n = len(ts)
        self.shipment_id.extend([sid] * n)
        self.timestamp.extend(ts)
        self.truth.extend(np.asarray(truth, dtype=float).tolist())
        self.prediction.extend(np.asarray(pred, dtype=float).tolist())
        self.correction.extend(list(corr) if corr is not None else [None] * n)
        self.history_end.extend(list(hist) if hist is not None else [None] * n)

    @property
    def errors(self) -> np.ndarray:
        return np.asarray(self.prediction) - np.asarray(self.truth)

    def lookahead_violations(self) -> int:
        return sum(1 for t, h in zip(self.timestamp, self.history_end) if h is not None and not h < t)


@dataclass
class SplitResult:
    month: str
    cells: dict[tuple[str, str, str], float]
    points: dict[tuple[str, str], PointErrors]
    failures: dict[str, str]


def _truth_values(ms, target: Target) -> np.ndarray:
    attr = "internal_temp" if target is Target.TEMPERATURE else "internal_rh"
    return np.array([getattr(m, attr) for m in ms], dtype=float)


def evaluate_split(
    dataset: Sequence[Shipment], split: SplitSpec, models: SplitModels, cfg: BenchmarkConfig
) -> SplitResult:
    points: dict[tuple[str, str], PointErrors] = defaultdict(PointErrors)
    failures = dict(models.failures)
    for s in dataset:
        scored = test_points(s, split)
        if not scored:
            continue
        ocean = [m for m in s.measurements if m.timestamp in scored]
        cols = leg_columns(ocean, s.legs_by_id)
        ts = [m.timestamp for m in ocean]
        for target in TARGETS:
            fcfg = FeatureConfig(target, ModelKind.BASELINE, cfg.phi1, cfg.phi2)
            pred = predict_matrix(models.baseline[target], feature_matrix(cols, fcfg))
            if target is Target.HUMIDITY and cfg.clamp_humidity:
                pred = clamp_rh(pred)
            points[(BASELINE, target.value)].extend(s.shipment_id, ts, _truth_values(ocean, target), pred)
        for name, bundle in models.bundles.items():
            if name in failures:
                continue
            try:
                preds = predict_shipment(bundle, s)
            except Exception as exc:
                logger.error("split %s variant %s failed on %s: %s", split.test_month, name, s.shipment_id, exc)
                failures[name] = f"{type(exc).__name__}: {exc}"
                continue
            keep = [i for i, m in enumerate(preds.measurements) if m.timestamp in scored]
            ms = [preds.measurements[i] for i in keep]
            for target in TARGETS:
                values = preds.temperature if target is Target.TEMPERATURE else preds.humidity
                values = values[keep]
                if target is Target.HUMIDITY and cfg.clamp_humidity:
                    values = clamp_rh(values)
                corr = preds.corrections[target][keep]
                hist = [preds.history_end[target][i] for i in keep]
                points[(name, target.value)].extend(
                    s.shipment_id, [m.timestamp for m in ms], _truth_values(ms, target), values, corr, hist
                )
    for name in failures:
        for target in TARGETS:
            points.pop((name, target.value), None)
    cells = {}
    for (name, target), pe in points.items():
        if not pe.truth:
            continue
        cells[(target, "MAE", name)] = mae(pe.prediction, pe.truth)
        cells[(target, "RMSE", name)] = rmse(pe.prediction, pe.truth)
    return SplitResult(split.test_month, cells, dict(points), failures)


def _run_split(args) -> SplitResult:
    dataset, split, cfg = args
    return evaluate_split(dataset, split, train_split(dataset, split, cfg), cfg)


@dataclass
class EvaluationReport:
    """Metric table keyed by month, target, metric and model."""

    months: list[str]
    models: list[str]
    cells: dict[tuple[str, str, str, str], float]
    points: dict[tuple[str, str, str], PointErrors] = field(default_factory=dict)
    failures: dict[str, dict[str, str]] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def value(self, month: str, target: str, metric: str, model: str) -> Optional[float]:
        return self.cells.get((month, target, metric, model))

    def average(self, target: str, metric: str, model: str) -> Optional[float]:
        vals = [self.cells[k] for k in ((m, target, metric, model) for m in self.months) if k in self.cells]
        return float(np.mean(vals)) if vals else None

    def lookahead_violations(self) -> int:
        return sum(pe.lookahead_violations() for pe in self.points.values())

    def records(self, with_average: bool = True) -> list[dict]:
        out = []
        for target in (t.value for t in TARGETS):
            for metric in METRICS:
                for month in self.months:
                    for model in self.models:
                        v = self.value(month, target, metric, model)
                        if v is not None:
                            out.append({"month": month, "target": target, "metric": metric, "model": model, "value": v})
                if with_average:
                    for model in self.models:
                        v = self.average(target, metric, model)
                        if v is not None:
                            out.append({"month": "Average", "target": target, "metric": metric, "model": model, "value": v})
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["month", "target", "metric", "model", "value"], lineterminator="\n")
            w.writeheader()
            for r in self.records():
                w.writerow({**r, "value": repr(r["value"])})

    @classmethod
    def from_csv(cls, path, meta: Optional[dict] = None) -> "EvaluationReport":
        months, models, cells = [], [], {}
        with open(path, newline="") as fh:
            for r in csv.DictReader(fh):
                if r["month"] == "Average":
                    continue
                if r["month"] not in months:
                    months.append(r["month"])
                if r["model"] not in models:
                    models.append(r["model"])
                cells[(r["month"], r["target"], r["metric"], r["model"])] = float(r["value"])
        return cls(sorted(months), models, cells, meta=meta or {})

    def to_markdown(self, digits: int = 3) -> str:
        units = {"temperature": "degC", "humidity": "%"}
        lines = []
        if self.meta:
            lines.append("<!-- " + json.dumps(self.meta, sort_keys=True) + " -->")
            lines.append("")
        for target in (t.value for t in TARGETS):
            for metric in METRICS:
                lines.append(f"### {metric} of {target} on ocean ({units[target]})")
                lines.append("")
                lines.append("| YYYYMM | " + " | ".join(self.models) + " |")
                lines.append("|" + "---|" * (len(self.models) + 1))
                for month in self.months + ["Average"]:
                    row = []
                    for model in self.models:
                        v = self.average(target, metric, model) if month == "Average" else self.value(month, target, metric, model)
                        row.append("" if v is None else f"{v:.{digits}f}")
                    lines.append(f"| {month} | " + " | ".join(row) + " |")
                lines.append("")
        return "\n".join(lines)

    def write_error_dumps(self, directory) -> list[Path]:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        paths = []
        for (month, model, target), pe in sorted(self.points.items()):
            path = d / f"errors_{month}_{model.replace('/', '-')}_{target}.csv"
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["shipment_id", "timestamp", "target", "truth", "prediction", "error", "correction", "history_end"])
                for i in range(len(pe.truth)):
                    c = pe.correction[i]
                    h = pe.history_end[i]
                    w.writerow(
                        [
                            pe.shipment_id[i],
                            format_timestamp(pe.timestamp[i]),
                            target,
                            repr(pe.truth[i]),
                            repr(pe.prediction[i]),
                            repr(pe.prediction[i] - pe.truth[i]),
                            "" if c is None else repr(float(c)),
                            "" if h is None else format_timestamp(h),
                        ]
                    )
            paths.append(path)
        return paths


def run_benchmark(dataset: Sequence[Shipment], months: Sequence[str], cfg: BenchmarkConfig = BenchmarkConfig()) -> EvaluationReport:
    """Train and score the baseline and every RCM variant on each split."""
    splits = [s for s in make_splits(dataset, months) if s.skipped is None]
    jobs = [(list(dataset), split, cfg) for split in splits]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_run_split, jobs))
    else:
        results = [_run_split(job) for job in jobs]
    return assemble_report(results, cfg)


def assemble_report(results: Sequence[SplitResult], cfg: BenchmarkConfig) -> EvaluationReport:
    cells, points, failures = {}, {}, {}
    for res in results:
        for (target, metric, model), v in res.cells.items():
            cells[(res.month, target, metric, model)] = v
        for (model, target), pe in res.points.items():
            points[(res.month, model, target)] = pe
        if res.failures:
            failures[res.month] = res.failures
    meta = {
        "phi1": cfg.phi1,
        "phi2": cfg.phi2,
        "alpha": cfg.alpha,
        "linear_direction": cfg.linear_direction,
        "normalize": cfg.normalize,
        "humidity_clamped": cfg.clamp_humidity,
    }
    return EvaluationReport([r.month for r in results], cfg.model_names(), cells, points, failures, meta)


def histogram(errors: Sequence[float], bins: int = 40, limits: Optional[tuple[float, float]] = None) -> list[dict]:
    """Binned error counts for plotting elsewhere."""
    e = np.asarray(errors, dtype=float)
    counts, edges = np.histogram(e, bins=bins, range=limits)
    return [{"lo": float(a), "hi": float(b), "count": int(c)} for a, b, c in zip(edges[:-1], edges[1:], counts)]
