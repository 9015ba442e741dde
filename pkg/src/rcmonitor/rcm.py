"""Residual correction of sensorless predictions.

Three stages per target:

1. fit a land model ``f`` on land (live) rows only;
2. turn each shipment's land residuals ``y - f(x)`` into a correction factor
   ``c`` with a weighting function over a selected residual series;
3. fit an ocean model ``h`` on ocean (delayed) rows with ``c`` as an extra
   feature (``res_temp`` / ``res_rh``).

Humidity depends on temperature: its ocean model uses the psychrometric RH
proxy evaluated at the temperature predicted by the ocean temperature model,
so temperature is always handled first.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Optional

import numpy as np

from .features import FeatureConfig, ModelKind, Stage, Target, feature_matrix, leg_columns
from .regress import LinearModel, fit_matrix, predict_matrix
from .telemetry import Leg, Measurement, Segment, SegmentKind, Shipment

logger = logging.getLogger(__name__)

ROLLOUT = "sequential"


class LookAheadError(RuntimeError):
    """A correction would have consumed information from its own time or later."""


class ConfigMismatchError(ValueError):
    pass


class WeightingScheme(str, enum.Enum):
    UNIFORM = "uniform"
    LINEAR = "linear"
    EXPONENTIAL = "exp"


class LinearDirection(str, enum.Enum):
    RECENT_HEAVY = "recent_heavy"
    OLDEST_HEAVY = "oldest_heavy"


class SelectionScheme(str, enum.Enum):
    LOCAL = "local"
    GLOBAL = "global"
    RECURSIVE = "recursive"


class ResidualSource(str, enum.Enum):
    OBSERVED = "observed"
    RECURSIVE = "recursive"


@dataclass(frozen=True)
class WeightingConfig:
    scheme: WeightingScheme = WeightingScheme.UNIFORM
    alpha: float = 0.9
    linear_direction: LinearDirection = LinearDirection.RECENT_HEAVY
    normalize: bool = True

    def __post_init__(self):
        object.__setattr__(self, "scheme", WeightingScheme(self.scheme))
        object.__setattr__(self, "linear_direction", LinearDirection(self.linear_direction))
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme.value,
            "alpha": self.alpha,
            "linear_direction": self.linear_direction.value,
            "normalize": self.normalize,
        }


@dataclass(frozen=True)
class ResidualPoint:
    timestamp: datetime
    segment_id: str
    value: float
    source: ResidualSource = ResidualSource.OBSERVED


def variant_name(weighting: WeightingConfig, scheme: SelectionScheme) -> str:
    return f"{WeightingScheme(weighting.scheme).value}/{SelectionScheme(scheme).value}"


# -- weighting functions -----------------------------------------------------


def weights(t: int, cfg: WeightingConfig) -> np.ndarray:
    """Weights w_1..w_t applied to a residual series of length t (oldest first)."""
    if t <= 0:
        return np.zeros(0)
    tau = np.arange(1, t + 1, dtype=float)
    if cfg.scheme is WeightingScheme.UNIFORM:
        return np.full(t, 1.0 / t) if cfg.normalize else np.ones(t)
    if cfg.scheme is WeightingScheme.LINEAR:
        k = t + 1 - tau if cfg.linear_direction is LinearDirection.OLDEST_HEAVY else tau
        return 2.0 * k / (t * (t + 1))
    w = (1.0 - cfg.alpha) * cfg.alpha ** (t - tau)
    return w / w.sum() if cfg.normalize else w


def correction(series: Sequence[float], cfg: WeightingConfig) -> float:
    """Weighted combination of a residual series; 0 for an empty series."""
    r = np.asarray(series, dtype=float)
    if r.size == 0:
        return 0.0
    return float(np.dot(weights(r.size, cfg), r))


class SeriesAccumulator:
    """O(1) running statistics for one residual series.

    Holds what every weighting scheme needs: count, sum, index-weighted sum
    and an exponentially smoothed value with its weight mass.
    """

    __slots__ = ("alpha", "n", "total", "index_total", "ema", "mass")

    def __init__(self, alpha: float = 0.9):
        self.alpha = alpha
        self.reset()

    def reset(self) -> None:
        self.n = 0
        self.total = 0.0
        self.index_total = 0.0
        self.ema = 0.0
        self.mass = 0.0

    def push(self, r: float) -> None:
        self.n += 1
        self.total += r
        self.index_total += self.n * r
        self.ema = self.alpha * self.ema + (1.0 - self.alpha) * r
        self.mass = self.alpha * self.mass + (1.0 - self.alpha)

    def value(self, cfg: WeightingConfig) -> float:
        n = self.n
        if n == 0:
            return 0.0
        if cfg.scheme is WeightingScheme.UNIFORM:
            return self.total / n if cfg.normalize else self.total
        if cfg.scheme is WeightingScheme.LINEAR:
            num = self.index_total
            if cfg.linear_direction is LinearDirection.OLDEST_HEAVY:
                num = (n + 1) * self.total - self.index_total
            return 2.0 * num / (n * (n + 1))
        if cfg.alpha != self.alpha:
            raise ConfigMismatchError(f"accumulator built for alpha={self.alpha}, queried with {cfg.alpha}")
        return self.ema / self.mass if cfg.normalize else self.ema


class CorrectionState:
    """Streaming correction state for one shipment and one target."""

    def __init__(self, alpha: float = 0.9):
        self.local = SeriesAccumulator(alpha)
        self.global_ = SeriesAccumulator(alpha)
        self.recursive = SeriesAccumulator(alpha)
        self.local_segment: Optional[str] = None
        self.last_timestamp: Optional[datetime] = None

    def update(self, r: ResidualPoint) -> "CorrectionState":
        if self.last_timestamp is not None and r.timestamp < self.last_timestamp:
            raise ValueError(f"residual at {r.timestamp} arrived after {self.last_timestamp}")
        self.last_timestamp = r.timestamp
        value = float(r.value)
        if ResidualSource(r.source) is ResidualSource.OBSERVED:
            if r.segment_id != self.local_segment:
                self.local.reset()
                self.local_segment = r.segment_id
            self.local.push(value)
            self.global_.push(value)
        self.recursive.push(value)
        return self

    def query(self, scheme: SelectionScheme, cfg: WeightingConfig, at: Optional[datetime] = None) -> float:
        if at is not None and self.last_timestamp is not None and not self.last_timestamp < at:
            raise LookAheadError(f"history reaches {self.last_timestamp}, prediction time is {at}")
        acc = {
            SelectionScheme.LOCAL: self.local,
            SelectionScheme.GLOBAL: self.global_,
            SelectionScheme.RECURSIVE: self.recursive,
        }[SelectionScheme(scheme)]
        return acc.value(cfg)


def update_state(state: CorrectionState, r: ResidualPoint) -> CorrectionState:
    return state.update(r)


def select_series(
    history: Sequence[ResidualPoint],
    scheme: SelectionScheme,
    at: Optional[datetime] = None,
) -> list[ResidualPoint]:
    """Residual points feeding the weighting function, oldest first."""
    if at is not None:
        late = [p for p in history if not p.timestamp < at]
        if late:
            raise LookAheadError(f"{len(late)} history point(s) at or after {at}")
    points = sorted(history, key=lambda p: p.timestamp)
    observed = [p for p in points if p.source is ResidualSource.OBSERVED]
    scheme = SelectionScheme(scheme)
    if scheme is SelectionScheme.GLOBAL:
        return observed
    if scheme is SelectionScheme.RECURSIVE:
        return points
    if not observed:
        return []
    latest = observed[-1].segment_id
    return [p for p in observed if p.segment_id == latest]


# -- residuals and rollout ---------------------------------------------------


def _truth(measurements: Sequence[Measurement], target: Target) -> np.ndarray:
    attr = "internal_temp" if target is Target.TEMPERATURE else "internal_rh"
    return np.array([getattr(m, attr) for m in measurements], dtype=float)


def land_config(target: Target, phi1: float, phi2: float) -> FeatureConfig:
    return FeatureConfig(Target(target), ModelKind.CONDITIONAL, phi1, phi2, Stage.LAND)


def ocean_config(target: Target, phi1: float, phi2: float) -> FeatureConfig:
    return FeatureConfig(Target(target), ModelKind.CONDITIONAL, phi1, phi2, Stage.OCEAN)


def compute_residuals(
    model: LinearModel,
    segment: Segment,
    cfg: FeatureConfig,
    legs: Mapping[str, Leg],
) -> list[ResidualPoint]:
    """Observed residuals ``y - f(x)`` along a land segment."""
    if segment.kind is not SegmentKind.LAND:
        raise ValueError(f"segment {segment.segment_id} is not a land segment")
    if model.target is not cfg.target:
        raise ConfigMismatchError("model target does not match feature config")
    ms = segment.measurements
    X = feature_matrix(leg_columns(ms, legs), cfg)
    resid = _truth(ms, cfg.target) - predict_matrix(model, X)
    return [ResidualPoint(m.timestamp, segment.segment_id, float(r)) for m, r in zip(ms, resid)]


@dataclass
class CorrectionTrace:
    """Corrections emitted for the ocean measurements of one shipment."""

    measurements: list[Measurement] = field(default_factory=list)
    corrections: list[float] = field(default_factory=list)
    history_end: list[Optional[datetime]] = field(default_factory=list)
    history_size: list[int] = field(default_factory=list)


def rollout(
    shipment: Shipment,
    f_land: LinearModel,
    weighting: WeightingConfig,
    scheme: SelectionScheme,
    phi1: float = 1.0,
    phi2: float = 80.0,
) -> CorrectionTrace:
    """Walk a shipment in time order, emitting a correction for each ocean point.

    Training and inference share this path, so Recursive pseudo-residuals are
    produced the same way in both.
    """
    scheme = SelectionScheme(scheme)
    cfg = land_config(f_land.target, phi1, phi2)
    state = CorrectionState(weighting.alpha)
    trace = CorrectionTrace()
    acc = {
        SelectionScheme.LOCAL: state.local,
        SelectionScheme.GLOBAL: state.global_,
        SelectionScheme.RECURSIVE: state.recursive,
    }[scheme]
    for seg in shipment.segments:
        if seg.kind is SegmentKind.LAND:
            for r in compute_residuals(f_land, seg, cfg, shipment.legs_by_id):
                state.update(r)
            continue
        for m in seg.measurements:
            c = state.query(scheme, weighting, at=m.timestamp)
            trace.measurements.append(m)
            trace.corrections.append(c)
            trace.history_end.append(state.last_timestamp)
            trace.history_size.append(acc.n)
            if scheme is SelectionScheme.RECURSIVE:
                state.update(ResidualPoint(m.timestamp, seg.segment_id, c, ResidualSource.RECURSIVE))
    return trace


# -- training and prediction -------------------------------------------------


def config_hash(weighting: WeightingConfig, scheme: SelectionScheme, phi1: float, phi2: float) -> str:
    payload = {
        "scheme": SelectionScheme(scheme).value,
        "weighting": weighting.to_dict(),
        "phi1": float(phi1),
        "phi2": float(phi2),
        "rollout": ROLLOUT,
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class RCMBundle:
    """Trained land and ocean models for one (weighting, selection) variant."""

    weighting: WeightingConfig
    scheme: SelectionScheme
    phi1: float
    phi2: float
    f_land: Mapping[Target, LinearModel]
    h_ocean: Mapping[Target, LinearModel]

    @property
    def name(self) -> str:
        return variant_name(self.weighting, self.scheme)

    @property
    def config_hash(self) -> str:
        return config_hash(self.weighting, self.scheme, self.phi1, self.phi2)

    @property
    def targets(self) -> tuple[Target, ...]:
        return tuple(t for t in (Target.TEMPERATURE, Target.HUMIDITY) if t in self.h_ocean)

    def check(self, weighting: WeightingConfig, scheme: SelectionScheme) -> None:
        expected = config_hash(weighting, scheme, self.phi1, self.phi2)
        if expected != self.config_hash:
            raise ConfigMismatchError(
                f"rcm config hash mismatch: bundle {self.config_hash} vs requested {expected}"
            )

    def rcm_config(self) -> dict:
        return {
            "scheme": self.scheme.value,
            "weighting": self.weighting.to_dict(),
            "alpha": self.weighting.alpha,
            "phi1": self.phi1,
            "phi2": self.phi2,
            "rollout": ROLLOUT,
            "targets": [t.value for t in self.targets],
            "config_hash": self.config_hash,
        }

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for t in self.targets:
            (d / t.value).mkdir(exist_ok=True)
            self.f_land[t].save(d / t.value / "f_land.json")
            self.h_ocean[t].save(d / t.value / "h_ocean.json")
        (d / "rcm_config.json").write_text(json.dumps(self.rcm_config(), indent=2) + "\n")

    @classmethod
    def load(cls, directory) -> "RCMBundle":
        d = Path(directory)
        cfg = json.loads((d / "rcm_config.json").read_text())
        w = cfg["weighting"]
        weighting = WeightingConfig(w["scheme"], w["alpha"], w["linear_direction"], w["normalize"])
        targets = [Target(t) for t in cfg["targets"]]
        bundle = cls(
            weighting=weighting,
            scheme=SelectionScheme(cfg["scheme"]),
            phi1=float(cfg["phi1"]),
            phi2=float(cfg["phi2"]),
            f_land={t: LinearModel.load(d / t.value / "f_land.json") for t in targets},
            h_ocean={t: LinearModel.load(d / t.value / "h_ocean.json") for t in targets},
        )
        if bundle.config_hash != cfg["config_hash"]:
            raise ConfigMismatchError(
                f"rcm config hash mismatch: file says {cfg['config_hash']}, contents hash to {bundle.config_hash}"
            )
        return bundle


def _land_rows(shipments: Iterable[Shipment]):
    for s in shipments:
        for seg in s.segments:
            if seg.kind is SegmentKind.LAND:
                yield s, seg


def _stack(blocks: list[np.ndarray], width: int) -> np.ndarray:
    return np.vstack(blocks) if blocks else np.empty((0, width))


def fit_land_model(shipments: Sequence[Shipment], target: Target, phi1: float, phi2: float) -> LinearModel:
    cfg = land_config(target, phi1, phi2)
    Xs, ys = [], []
    for s, seg in _land_rows(shipments):
        Xs.append(feature_matrix(leg_columns(seg.measurements, s.legs_by_id), cfg))
        ys.append(_truth(seg.measurements, cfg.target))
    if not Xs:
        raise ValueError("no land rows in training data")
    meta = {"phi1": phi1, "phi2": phi2, "role": "f_land"}
    return fit_matrix(np.vstack(Xs), np.concatenate(ys), cfg.names, cfg.target, meta)


@dataclass
class _OceanBlock:
    shipment: Shipment
    trace: CorrectionTrace
    cols: dict[str, np.ndarray]


def _ocean_blocks(shipments, f_land, weighting, scheme, phi1, phi2) -> list[_OceanBlock]:
    blocks = []
    for s in shipments:
        trace = rollout(s, f_land, weighting, scheme, phi1, phi2)
        if trace.measurements:
            blocks.append(_OceanBlock(s, trace, leg_columns(trace.measurements, s.legs_by_id)))
    return blocks


def train_adaptive(
    train: Sequence[Shipment],
    weighting: WeightingConfig,
    scheme: SelectionScheme,
    phi1: float = 1.0,
    phi2: float = 80.0,
    targets: Sequence[Target] = (Target.TEMPERATURE, Target.HUMIDITY),
) -> RCMBundle:
    """Fit land and ocean models for one weighting/selection variant."""
    scheme = SelectionScheme(scheme)
    targets = [Target(t) for t in targets]
    if Target.HUMIDITY in targets and Target.TEMPERATURE not in targets:
        raise ValueError("the humidity ocean model needs the temperature model")
    f_land: dict[Target, LinearModel] = {}
    h_ocean: dict[Target, LinearModel] = {}
    est_temp: dict[int, np.ndarray] = {}
    for target in (Target.TEMPERATURE, Target.HUMIDITY):
        if target not in targets:
            continue
        f = fit_land_model(train, target, phi1, phi2)
        blocks = _ocean_blocks(train, f, weighting, scheme, phi1, phi2)
        if not blocks:
            raise ValueError("no ocean rows in training data")
        cfg = ocean_config(target, phi1, phi2)
        Xs, ys = [], []
        for i, b in enumerate(blocks):
            est = est_temp.get(i) if target is Target.HUMIDITY else None
            Xs.append(feature_matrix(b.cols, cfg, est_temp=est, correction=np.asarray(b.trace.corrections)))
            ys.append(_truth(b.trace.measurements, target))
        meta = {"phi1": phi1, "phi2": phi2, "role": "h_ocean", "config_hash": config_hash(weighting, scheme, phi1, phi2)}
        h = fit_matrix(np.vstack(Xs), np.concatenate(ys), cfg.names, target, meta)
        if target is Target.TEMPERATURE:
            est_temp = {i: predict_matrix(h, X) for i, X in enumerate(Xs)}
        f_land[target], h_ocean[target] = f, h
    return RCMBundle(weighting, scheme, phi1, phi2, f_land, h_ocean)


@dataclass
class OceanPredictions:
    """Predictions for every ocean measurement of one shipment."""

    measurements: list[Measurement]
    temperature: np.ndarray
    humidity: Optional[np.ndarray]
    corrections: dict[Target, np.ndarray]
    history_end: dict[Target, list[Optional[datetime]]]


def predict_shipment(bundle: RCMBundle, shipment: Shipment) -> Optional[OceanPredictions]:
    """Adaptive predictions for all ocean points of a shipment, in time order.

    Only land observations strictly earlier than each ocean point are used;
    ocean ground truth is never read. Humidity comes back unclamped.
    """
    out: dict[Target, np.ndarray] = {}
    corr: dict[Target, np.ndarray] = {}
    hist: dict[Target, list] = {}
    ms = None
    est = None
    for target in bundle.targets:
        trace = rollout(shipment, bundle.f_land[target], bundle.weighting, bundle.scheme, bundle.phi1, bundle.phi2)
        if not trace.measurements:
            return None
        ms = trace.measurements
        cfg = ocean_config(target, bundle.phi1, bundle.phi2)
        c = np.asarray(trace.corrections)
        X = feature_matrix(leg_columns(ms, shipment.legs_by_id), cfg, est_temp=est, correction=c)
        out[target] = predict_matrix(bundle.h_ocean[target], X)
        corr[target], hist[target] = c, trace.history_end
        if target is Target.TEMPERATURE:
            est = out[target]
    return OceanPredictions(ms, out[Target.TEMPERATURE], out.get(Target.HUMIDITY), corr, hist)


def predict_adaptive(
    bundle: RCMBundle,
    history: Shipment,
    m: Measurement,
    weighting: WeightingConfig,
    scheme: SelectionScheme,
    target: Target = Target.TEMPERATURE,
) -> float:
    """Prediction for one ocean measurement given the shipment's earlier data.

    ``history`` is the shipment as known at prediction time; anything at or
    after ``m.timestamp`` in it is ignored. Raises on a config mismatch.
    """
    bundle.check(weighting, scheme)
    legs = []
    for leg in history.legs:
        kept = tuple(x for x in leg.measurements if x.timestamp < m.timestamp)
        if kept:
            legs.append(Leg(leg.leg_id, leg.shipment_id, kept))
    leg_of_m = history.legs_by_id.get(m.leg_id)
    if leg_of_m is None:
        raise ValueError(f"leg {m.leg_id} not in shipment history")
    tail = tuple(x for x in leg_of_m.measurements if x.timestamp < m.timestamp) + (m,)
    legs = [leg for leg in legs if leg.leg_id != m.leg_id] + [Leg(m.leg_id, m.shipment_id, tail)]
    legs.sort(key=lambda leg: leg.start)
    stream = Shipment(history.shipment_id, tuple(legs))
    last = stream.segments[-1]
    if last.kind is not SegmentKind.OCEAN or last.measurements[-1] is not m:
        raise ValueError("predict_adaptive expects an ocean measurement")
    preds = predict_shipment(bundle, stream)
    values = preds.temperature if Target(target) is Target.TEMPERATURE else preds.humidity
    return float(values[-1])


class AdaptiveMonitor:
    """Online interface: feed land observations, ask for ocean predictions.

    Keeps one :class:`CorrectionState` per (shipment, target). Measurements
    must arrive in time order within a shipment.
    """

    def __init__(self, bundle: RCMBundle):
        self.bundle = bundle
        self._states: dict[tuple[str, Target], CorrectionState] = {}
        self._segment: dict[str, tuple[int, SegmentKind]] = {}

    def _segment_id(self, shipment_id: str, kind: SegmentKind) -> str:
        idx, prev = self._segment.get(shipment_id, (-1, None))
        if prev is not kind:
            idx += 1
            self._segment[shipment_id] = (idx, kind)
        return f"{shipment_id}:{idx}"

    def _state(self, shipment_id: str, target: Target) -> CorrectionState:
        key = (shipment_id, target)
        if key not in self._states:
            self._states[key] = CorrectionState(self.bundle.weighting.alpha)
        return self._states[key]

    def observe(self, m: Measurement, leg: Leg) -> None:
        """Record a live land measurement (ground truth included)."""
        seg_id = self._segment_id(m.shipment_id, SegmentKind.LAND)
        for target in self.bundle.targets:
            f = self.bundle.f_land[target]
            cfg = land_config(target, self.bundle.phi1, self.bundle.phi2)
            x = feature_matrix(leg_columns([m], {m.leg_id: leg}), cfg)
            r = float(_truth([m], target)[0] - predict_matrix(f, x)[0])
            self._state(m.shipment_id, target).update(ResidualPoint(m.timestamp, seg_id, r))

    def predict(self, m: Measurement, leg: Leg) -> dict[Target, float]:
        """Predict an ocean measurement; ground-truth fields of ``m`` are ignored."""
        seg_id = self._segment_id(m.shipment_id, SegmentKind.OCEAN)
        cols = leg_columns([m], {m.leg_id: leg})
        out: dict[Target, float] = {}
        est = None
        for target in self.bundle.targets:
            state = self._state(m.shipment_id, target)
            c = state.query(self.bundle.scheme, self.bundle.weighting, at=m.timestamp)
            cfg = ocean_config(target, self.bundle.phi1, self.bundle.phi2)
            X = feature_matrix(cols, cfg, est_temp=est, correction=np.array([c]))
            out[target] = float(predict_matrix(self.bundle.h_ocean[target], X)[0])
            if target is Target.TEMPERATURE:
                est = np.array([out[target]])
            if self.bundle.scheme is SelectionScheme.RECURSIVE:
                state.update(ResidualPoint(m.timestamp, seg_id, c, ResidualSource.RECURSIVE))
        return out
