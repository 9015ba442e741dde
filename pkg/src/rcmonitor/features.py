"""Psychrometric helpers and the regression feature sets.

Feature names follow the column names used by the sensorless-monitoring
literature (``temperature``, ``water_vp``, ``temp_indicator1`` ...). Which
names are emitted depends on the prediction target, whether the model is the
baseline or a conditional (residual-corrected) one, and for conditional models
whether it is the land model or the ocean model.
"""

from __future__ import annotations

import enum
import json
from collections import Counter
from collections.abc import Mapping
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional

import numpy as np

if TYPE_CHECKING:
    from .telemetry import Leg, Measurement

# WMO Magnus parameterisation over water
MAGNUS_A = 6.112
MAGNUS_B = 17.62
MAGNUS_C = 243.12
TEMP_DOMAIN = (-60.0, 80.0)

# |init_dewpoint| below this is treated as a zero divisor
DEGENERATE_EPS = 1e-6

INTERCEPT = "intercept"


class DomainError(ValueError):
    """Input outside the range where a psychrometric formula is defined."""


class Target(str, enum.Enum):
    TEMPERATURE = "temperature"
    HUMIDITY = "humidity"


class ModelKind(str, enum.Enum):
    BASELINE = "baseline"
    CONDITIONAL = "conditional"


class Stage(str, enum.Enum):
    LAND = "land"
    OCEAN = "ocean"


TEMPERATURE_FEATURES = (
    "temperature",
    "solar_radiation",
    "solar_radiation_sq",
    "solar_radiation_sqrt",
    "windspeed_temperature",
    "water_vp",
    "rel_humidity",
    "windspeed",
    "init_temperature",
    "init_rh",
    "temp_indicator1",
    "windspeed_rh_pct",
    "windspeed_indicator1",
)

_HUMIDITY_COMMON = (
    "temperature",
    "solar_radiation",
    "solar_radiation_sq",
    "windspeed_temperature",
    "temperature_rh",
    "rel_dewpoint",
)

FEATURE_SETS: dict[tuple[Target, ModelKind, Stage], tuple[str, ...]] = {
    (Target.TEMPERATURE, ModelKind.BASELINE, Stage.LAND): TEMPERATURE_FEATURES,
    (Target.TEMPERATURE, ModelKind.BASELINE, Stage.OCEAN): TEMPERATURE_FEATURES,
    (Target.TEMPERATURE, ModelKind.CONDITIONAL, Stage.LAND): TEMPERATURE_FEATURES,
    (Target.TEMPERATURE, ModelKind.CONDITIONAL, Stage.OCEAN): TEMPERATURE_FEATURES + ("res_temp",),
    (Target.HUMIDITY, ModelKind.BASELINE, Stage.LAND): _HUMIDITY_COMMON + ("psychro_rh", "windspeed_indicator2"),
    (Target.HUMIDITY, ModelKind.BASELINE, Stage.OCEAN): _HUMIDITY_COMMON + ("psychro_rh", "windspeed_indicator2"),
    (Target.HUMIDITY, ModelKind.CONDITIONAL, Stage.LAND): _HUMIDITY_COMMON + ("windspeed_indicator2",),
    (Target.HUMIDITY, ModelKind.CONDITIONAL, Stage.OCEAN): _HUMIDITY_COMMON
    + ("windspeed_indicator2", "res_rh", "psycho_rh"),
}


@dataclass(frozen=True)
class FeatureConfig:
    """Selects a feature set and the indicator thresholds.

    ``stage`` only matters for conditional models: the land model never sees
    the ocean-only correction features.
    """

    target: Target = Target.TEMPERATURE
    model_kind: ModelKind = ModelKind.BASELINE
    phi1: float = 1.0
    phi2: float = 80.0
    stage: Stage = Stage.OCEAN

    def __post_init__(self):
        object.__setattr__(self, "target", Target(self.target))
        object.__setattr__(self, "model_kind", ModelKind(self.model_kind))
        object.__setattr__(self, "stage", Stage(self.stage))

    @property
    def names(self) -> tuple[str, ...]:
        return FEATURE_SETS[(self.target, self.model_kind, self.stage)]

    @property
    def needs_correction(self) -> bool:
        return "res_temp" in self.names or "res_rh" in self.names

    @property
    def needs_est_temp(self) -> bool:
        return "psycho_rh" in self.names


def _check_temp(temp):
    t = np.asarray(temp, dtype=float)
    lo, hi = TEMP_DOMAIN
    if np.any(~np.isfinite(t)) or np.any(t <= lo) or np.any(t >= hi):
        raise DomainError(f"temperature outside ({lo}, {hi}) degC")
    return t


def saturation_vp(temp):
    """Saturation vapour pressure over water in hPa (Magnus form)."""
    t = _check_temp(temp)
    out = MAGNUS_A * np.exp(MAGNUS_B * t / (MAGNUS_C + t))
    return float(out) if out.ndim == 0 else out


def dewpoint(temp, rh):
    """Dew point in degC from air temperature (degC) and relative humidity (%)."""
    r = np.asarray(rh, dtype=float)
    if np.any(~(r > 0)) or np.any(r > 100):
        raise DomainError("relative humidity must lie in (0, 100]")
    e = r / 100.0 * saturation_vp(temp)
    g = np.log(e / MAGNUS_A)
    out = MAGNUS_C * g / (MAGNUS_B - g)
    # rh == 100 must give back temp exactly; inversion error is ~1 ulp otherwise
    out = np.where(r == 100, np.asarray(temp, dtype=float), out)
    out = np.minimum(out, np.asarray(temp, dtype=float))
    return float(out) if out.ndim == 0 else out


def psychro_rh(est_temp, init_temp, init_rh):
    """RH implied by holding the leg-start vapour pressure fixed at ``est_temp``.

    Clamped to [0, 100]; estimates at or below the initial dew point saturate.
    """
    e0 = np.asarray(init_rh, dtype=float) / 100.0 * saturation_vp(init_temp)
    rh = 100.0 * e0 / saturation_vp(est_temp)
    out = np.clip(rh, 0.0, 100.0)
    return float(out) if np.ndim(out) == 0 else out


def _safe_ratio(num, den, counters: Optional[Counter], key: str):
    den = np.asarray(den, dtype=float)
    num = np.asarray(num, dtype=float)
    bad = np.abs(den) < DEGENERATE_EPS
    if np.any(bad):
        if counters is not None:
            counters[key] += int(bad.sum())
        den = np.where(bad, 1.0, den)
    return np.where(bad, np.nan, num / den), bad


def feature_matrix(
    cols: Mapping[str, np.ndarray],
    cfg: FeatureConfig,
    est_temp: Optional[np.ndarray] = None,
    correction: Optional[np.ndarray] = None,
    counters: Optional[Counter] = None,
) -> np.ndarray:
    """Vectorised feature construction, one row per measurement.

    ``cols`` must hold equal-length arrays ``ext_temp``, ``ext_rh``,
    ``solar_radiation``, ``windspeed``, ``init_temp``, ``init_rh`` and
    ``init_dewpoint``. Columns come out in ``cfg.names`` order; the intercept
    is not included.
    """
    names = cfg.names
    temp = np.asarray(cols["ext_temp"], dtype=float)
    rh = np.asarray(cols["ext_rh"], dtype=float)
    solar = np.asarray(cols["solar_radiation"], dtype=float)
    wind = np.asarray(cols["windspeed"], dtype=float)
    init_temp = np.asarray(cols["init_temp"], dtype=float)
    init_rh = np.asarray(cols["init_rh"], dtype=float)
    init_dp = np.asarray(cols["init_dewpoint"], dtype=float)
    n = temp.shape[0]

    if cfg.needs_est_temp and est_temp is None:
        raise ValueError("psycho_rh requires an estimated temperature")
    if cfg.needs_correction and correction is None:
        raise ValueError(f"{cfg.target.value} ocean model requires a correction factor")

    out = np.empty((n, len(names)), dtype=float)
    cache: dict[str, np.ndarray] = {}

    def proxy_rh():
        if "proxy" not in cache:
            t_proxy = np.asarray(est_temp, dtype=float) if cfg.needs_est_temp else temp
            cache["proxy"] = np.asarray(psychro_rh(t_proxy, init_temp, init_rh), dtype=float)
        return cache["proxy"]

    def cold_ratio():
        if "cold" not in cache:
            ratio, bad = _safe_ratio(temp, init_dp, counters, "init_dewpoint_zero")
            cache["cold"] = np.where(bad, False, ratio <= cfg.phi1)
            cache["cold_bad"] = bad
        return cache["cold"], cache["cold_bad"]

    for j, name in enumerate(names):
        if name == "temperature":
            col = temp
        elif name == "solar_radiation":
            col = solar
        elif name == "solar_radiation_sq":
            col = solar**2
        elif name == "solar_radiation_sqrt":
            col = np.sqrt(solar)
        elif name == "windspeed_temperature":
            col = wind * temp
        elif name == "water_vp":
            col = rh / 100.0 * saturation_vp(temp)
        elif name == "rel_humidity":
            col = rh
        elif name == "windspeed":
            col = wind
        elif name == "init_temperature":
            col = init_temp
        elif name == "init_rh":
            col = init_rh
        elif name == "temp_indicator1":
            cold, bad = cold_ratio()
            col = np.where(bad, 0.0, temp * cold)
        elif name == "windspeed_indicator1":
            cold, bad = cold_ratio()
            col = np.where(bad, 0.0, wind * cold)
        elif name == "windspeed_rh_pct":
            ratio, bad = _safe_ratio(wind, rh, counters, "ext_rh_zero")
            col = np.where(bad, 0.0, ratio - 1.0)
        elif name == "temperature_rh":
            col = temp * rh
        elif name == "rel_dewpoint":
            ratio, bad = _safe_ratio(dewpoint(temp, rh), init_dp, counters, "init_dewpoint_zero")
            col = np.where(bad, 0.0, ratio - 1.0)
        elif name in ("psychro_rh", "psycho_rh"):
            col = proxy_rh()
        elif name == "windspeed_indicator2":
            col = wind * (proxy_rh() <= cfg.phi2)
        elif name in ("res_temp", "res_rh"):
            col = np.broadcast_to(np.asarray(correction, dtype=float), (n,))
        else:  # pragma: no cover - FEATURE_SETS is closed
            raise KeyError(name)
        out[:, j] = col
    return out


def leg_columns(measurements, legs: Mapping[str, "Leg"]) -> dict[str, np.ndarray]:
    """Pack measurements (plus their leg start conditions) into column arrays."""
    ms = list(measurements)

    def arr(get):
        return np.fromiter((get(m) for m in ms), dtype=float, count=len(ms))

    return {
        "ext_temp": arr(lambda m: m.ext_temp),
        "ext_rh": arr(lambda m: m.ext_rh),
        "solar_radiation": arr(lambda m: m.solar_radiation),
        "windspeed": arr(lambda m: m.windspeed),
        "init_temp": arr(lambda m: legs[m.leg_id].init_temp),
        "init_rh": arr(lambda m: legs[m.leg_id].init_rh),
        "init_dewpoint": arr(lambda m: legs[m.leg_id].init_dewpoint),
        "internal_temp": arr(lambda m: m.internal_temp),
        "internal_rh": arr(lambda m: m.internal_rh),
    }


def build_features(
    m: "Measurement",
    leg: "Leg",
    cfg: FeatureConfig,
    aux: Optional[Mapping[str, float]] = None,
    counters: Optional[Counter] = None,
) -> dict[str, float]:
    """Feature vector for a single measurement, intercept included."""
    aux = aux or {}
    cols = leg_columns([m], {m.leg_id: leg})
    est = aux.get("est_temp")
    corr = aux.get("correction")
    row = feature_matrix(
        cols,
        cfg,
        est_temp=None if est is None else np.array([est]),
        correction=None if corr is None else np.array([corr]),
        counters=counters,
    )[0]
    vec = {INTERCEPT: 1.0}
    vec.update(zip(cfg.names, row.tolist()))
    return vec


def schema_dump(phi1: float = 1.0, phi2: float = 80.0) -> str:
    """JSON listing the feature names of every (target, kind, stage) config."""
    entries = []
    for (target, kind, stage), names in FEATURE_SETS.items():
        if kind is ModelKind.BASELINE and stage is Stage.OCEAN:
            continue
        entries.append(
            {
                "target": target.value,
                "model_kind": kind.value,
                "stage": stage.value if kind is ModelKind.CONDITIONAL else None,
                "features": [INTERCEPT, *names],
            }
        )
    return json.dumps({"phi1": phi1, "phi2": phi2, "configs": entries}, indent=2)
