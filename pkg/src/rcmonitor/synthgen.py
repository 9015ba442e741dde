"""Synthetic shipments with known ground truth.

Routes run eastward across alternating land and ocean strips of a small
bundled world map, one leg per strip. External weather follows a diurnal
cycle plus a latitude trend and autocorrelated anomalies. Internal
conditions are an exact linear function of the baseline features plus a
per-shipment bias and i.i.d. noise, so OLS is well specified and any gain from
residual correction is down to the bias.
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections.abc import Mapping
from dataclasses import asdict, dataclass, field
from datetime import datetime, timedelta, timezone
from importlib import resources
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .features import INTERCEPT, FeatureConfig, ModelKind, Target, dewpoint, feature_matrix
from .telemetry import COLUMNS, OPTIONAL_COLUMNS, IngestResult, SegmentKind, Shipment, format_timestamp, ingest_rows

WORLD_FILE = "synthetic_world.geojson"

# (west, east) longitude of each strip; even index = land, odd = ocean
STRIPS = (
    (0.0, 6.0),
    (6.0, 14.0),
    (14.0, 20.0),
    (20.0, 28.0),
    (28.0, 34.0),
    (34.0, 42.0),
    (42.0, 48.0),
    (48.0, 56.0),
)
WORLD_LAT = (-60.0, 60.0)
EDGE_MARGIN_DEG = 0.5

TEMPERATURE_COEFFICIENTS: dict[str, float] = {
    INTERCEPT: 1.5,
    "temperature": 0.7,
    "solar_radiation": 0.004,
    "solar_radiation_sq": -1.0e-6,
    "solar_radiation_sqrt": 0.05,
    "windspeed_temperature": -0.01,
    "water_vp": 0.05,
    "rel_humidity": -0.01,
    "windspeed": -0.05,
    "init_temperature": 0.2,
    "init_rh": 0.005,
    "temp_indicator1": 0.05,
    "windspeed_rh_pct": -0.2,
    "windspeed_indicator1": 0.02,
}

HUMIDITY_COEFFICIENTS: dict[str, float] = {
    INTERCEPT: 22.0,
    "temperature": -0.3,
    "solar_radiation": 0.002,
    "solar_radiation_sq": -1.0e-6,
    "windspeed_temperature": -0.005,
    "temperature_rh": 0.003,
    "rel_dewpoint": 0.5,
    # zero keeps humidity linear in the conditional land set, so RCM's land
    # stage is correctly specified and residuals carry only the bias
    "psychro_rh": 0.0,
    "windspeed_indicator2": -0.3,
}


class NotSyntheticError(KeyError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_shipments: int = 200
    segments_per_shipment: int = 4
    points_per_segment: int = 60
    first_land_points: Optional[int] = None
    interval_minutes: int = 60
    node_points: int = 3
    bias_std_temp: float = 2.0
    bias_std_rh: float = 5.0
    noise_std_temp: float = 1.0
    noise_std_rh: float = 3.0
    diurnal_amplitude: float = 6.0
    lat_drift_deg_per_day: float = 0.5
    start: str = "2021-01-01"
    span_days: float = 80.0
    drift_bias: bool = False
    drift_std_per_day: float = 0.5

    def __post_init__(self):
        for name in ("bias_std_temp", "bias_std_rh", "noise_std_temp", "noise_std_rh", "drift_std_per_day"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 1 <= self.segments_per_shipment <= len(STRIPS):
            raise ValueError(f"segments_per_shipment must be in [1, {len(STRIPS)}]")
        if self.points_per_segment < 2 or (self.first_land_points is not None and self.first_land_points < 2):
            raise ValueError("segments need at least 2 points")
        if self.n_shipments < 1 or self.interval_minutes < 1 or self.node_points < 0:
            raise ValueError("invalid shipment counts or cadence")

    @classmethod
    def from_mapping(cls, d: Mapping) -> "SynthConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown synth config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class GroundTruth:
    seed: int
    config: dict
    coefficients: dict[str, dict[str, float]]
    shipments: dict[str, dict]
    rh_clamped: int = 0

    def oracle_correction(self, shipment: Union[Shipment, str], target: Union[Target, str] = Target.TEMPERATURE) -> float:
        """The per-shipment bias an ideal correction would recover."""
        sid = shipment if isinstance(shipment, str) else shipment.shipment_id
        if sid not in self.shipments:
            raise NotSyntheticError(f"{sid} is not a synthetic shipment")
        key = "bias_temp" if Target(target) is Target.TEMPERATURE else "bias_rh"
        return float(self.shipments[sid][key])

    def leg_kind(self, shipment_id: str, leg_id: str) -> SegmentKind:
        return SegmentKind(self.shipments[shipment_id]["legs"][leg_id])

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "GroundTruth":
        return cls(**json.loads(text))

    @classmethod
    def load(cls, path) -> "GroundTruth":
        return cls.from_json(Path(path).read_text())


@dataclass
class SynthDataset:
    rows: list[dict[str, str]]
    truth: GroundTruth
    world: dict = field(default_factory=dict)

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(COLUMNS) + list(OPTIONAL_COLUMNS), lineterminator="\n")
        w.writeheader()
        w.writerows(self.rows)
        return buf.getvalue()

    def to_csv(self, path) -> None:
        Path(path).write_text(self.csv_text())

    def write(self, out_dir) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"data": out / "data.csv", "truth": out / "ground_truth.json", "world": out / WORLD_FILE}
        self.to_csv(paths["data"])
        paths["truth"].write_text(self.truth.to_json())
        paths["world"].write_text(json.dumps(self.world, indent=1) + "\n")
        return paths

    def ingest(self) -> IngestResult:
        return ingest_rows(self.rows)


def world_geojson() -> dict:
    """The bundled map: land and ocean strips plus a few land features."""
    lat0, lat1 = WORLD_LAT
    feats = []

    def poly(w, e, s, n, label):
        ring = [[w, s], [e, s], [e, n], [w, n], [w, s]]
        feats.append({"type": "Feature", "properties": {"label": label}, "geometry": {"type": "Polygon", "coordinates": [ring]}})

    def line(coords, label):
        feats.append({"type": "Feature", "properties": {"label": label}, "geometry": {"type": "LineString", "coordinates": coords}})

    for k, (w, e) in enumerate(STRIPS):
        if k % 2:
            poly(w, e, lat0, lat1, "ocean")
            continue
        poly(w, e, 0.0, lat1, "residential")
        poly(w, e, lat0, 0.0, "farmland")
        line([[w, 20.0], [(w + e) / 2, 20.5], [e, 20.0]], "road")
        line([[w, -20.0], [e, -20.0]], "railway")
        poly(w + 2.0, w + 3.0, 40.0, 41.0, "lake")
        poly(e - 0.3, e, 30.0, 31.0, "port")
    return {"type": "FeatureCollection", "features": feats}


def bundled_world_path() -> Path:
    return Path(str(resources.files("rcmonitor") / "data" / WORLD_FILE))


def _fmt(x: float) -> str:
    return repr(float(x))


def _ar1(rng: np.random.Generator, n: int, rho: float, sigma: float) -> np.ndarray:
    eps = rng.normal(0.0, sigma * math.sqrt(1 - rho * rho), n)
    out = np.empty(n)
    out[0] = rng.normal(0.0, sigma)
    for i in range(1, n):
        out[i] = rho * out[i - 1] + eps[i]
    return out


def _weather(rng, times: np.ndarray, lat: np.ndarray, lon: np.ndarray, ocean: bool, cfg: SynthConfig):
    n = len(times)
    hours = (times / 3600.0 + lon / 15.0) % 24.0
    clim = 28.0 - 0.45 * np.abs(lat)
    amp = cfg.diurnal_amplitude * (0.3 if ocean else 1.0)
    temp = clim + amp * np.sin(2 * np.pi * (hours - 9.0) / 24.0) + _ar1(rng, n, 0.95, 2.0)
    temp = np.clip(temp, -40.0, 50.0)
    rh = 70.0 + (10.0 if ocean else 0.0) - 2.0 * (temp - clim) + _ar1(rng, n, 0.9, 8.0)
    rh = np.clip(rh, 5.0, 100.0)
    daylight = np.clip(np.sin(np.pi * (hours - 6.0) / 12.0), 0.0, None)
    cloud = np.clip(0.65 + _ar1(rng, n, 0.8, 0.2), 0.2, 1.0)
    solar = 1000.0 * daylight * cloud * np.cos(np.radians(lat))
    wind = rng.gamma(2.0, 3.5 if ocean else 2.0, n)
    return temp, rh, solar, wind


def _linear_truth(cols, target: Target, coefs: Mapping[str, float]) -> np.ndarray:
    cfg = FeatureConfig(target, ModelKind.BASELINE)
    X = feature_matrix(cols, cfg)
    return coefs[INTERCEPT] + X @ np.array([coefs[k] for k in cfg.names])


def generate(cfg: SynthConfig) -> SynthDataset:
    """Generate a dataset in ingest format; same config gives identical output."""
    rng = np.random.default_rng(cfg.seed)
    start = datetime.fromisoformat(cfg.start).replace(tzinfo=timezone.utc)
    step = cfg.interval_minutes * 60.0
    rows: list[dict[str, str]] = []
    ships: dict[str, dict] = {}
    clamped = 0
    width = len(str(cfg.n_shipments - 1))

    for s in range(cfg.n_shipments):
        sid = f"S{s:0{width}d}"
        t0 = math.floor(rng.uniform(0.0, cfg.span_days * 86400.0) / step) * step
        lat = float(rng.uniform(-50.0, 50.0))
        lat_rate = float(rng.normal(0.0, cfg.lat_drift_deg_per_day))
        bias_t = float(rng.normal(0.0, cfg.bias_std_temp)) if cfg.bias_std_temp > 0 else 0.0
        bias_h = float(rng.normal(0.0, cfg.bias_std_rh)) if cfg.bias_std_rh > 0 else 0.0
        drift = float(rng.normal(0.0, cfg.drift_std_per_day)) if cfg.drift_bias else 0.0
        legs: dict[str, str] = {}
        t = t0
        for k in range(cfg.segments_per_shipment):
            ocean = k % 2 == 1
            n = cfg.points_per_segment
            if k == 0 and cfg.first_land_points is not None:
                n = cfg.first_land_points
            leg_id = f"{sid}-L{k}"
            legs[leg_id] = (SegmentKind.OCEAN if ocean else SegmentKind.LAND).value
            times = t + step * np.arange(n)
            days = (times - t0) / 86400.0
            lats = np.clip(lat + lat_rate * days, -55.0, 55.0)
            w, e = STRIPS[k]
            lons = np.linspace(w + EDGE_MARGIN_DEG, e - EDGE_MARGIN_DEG, n)
            temp, rh, solar, wind = _weather(rng, times, lats, lons, ocean, cfg)
            # keep the leg-start dew point away from zero; ratios against it blow up
            while abs(dewpoint(temp[0], rh[0])) < 1.0:
                rh[0] *= 0.85
            cols = {
                "ext_temp": temp,
                "ext_rh": rh,
                "solar_radiation": solar,
                "windspeed": wind,
                "init_temp": np.full(n, temp[0]),
                "init_rh": np.full(n, rh[0]),
                "init_dewpoint": np.full(n, dewpoint(temp[0], rh[0])),
            }
            bias_now = bias_t + drift * days
            y_t = _linear_truth(cols, Target.TEMPERATURE, TEMPERATURE_COEFFICIENTS) + bias_now
            y_t = y_t + (rng.normal(0.0, cfg.noise_std_temp, n) if cfg.noise_std_temp > 0 else 0.0)
            y_h = _linear_truth(cols, Target.HUMIDITY, HUMIDITY_COEFFICIENTS) + bias_h
            y_h = y_h + (rng.normal(0.0, cfg.noise_std_rh, n) if cfg.noise_std_rh > 0 else 0.0)
            out_of_range = (y_h < 0) | (y_h > 100)
            clamped += int(out_of_range.sum())
            y_h = np.clip(y_h, 0.0, 100.0)
            for i in range(n):
                rows.append(
                    {
                        "timestamp": format_timestamp(start + timedelta(seconds=float(times[i]))),
                        "shipment_id": sid,
                        "leg_id": leg_id,
                        "row_type": "leg",
                        "lat": _fmt(lats[i]),
                        "lon": _fmt(lons[i]),
                        "internal_temp": _fmt(y_t[i]),
                        "internal_rh": _fmt(y_h[i]),
                        "ext_temp": _fmt(temp[i]),
                        "ext_rh": _fmt(rh[i]),
                        "solar_radiation": _fmt(solar[i]),
                        "windspeed": _fmt(wind[i]),
                        "environment": "",
                    }
                )
            t = float(times[-1]) + step
            if k + 1 < cfg.segments_per_shipment:
                for j in range(cfg.node_points):
                    rows.append(
                        {
                            "timestamp": format_timestamp(start + timedelta(seconds=t + j * step)),
                            "shipment_id": sid,
                            "leg_id": f"{sid}-N{k}",
                            "row_type": "node",
                            "lat": _fmt(lats[-1]),
                            "lon": _fmt(e),
                            "internal_temp": _fmt(y_t[-1]),
                            "internal_rh": _fmt(y_h[-1]),
                            "ext_temp": _fmt(temp[-1]),
                            "ext_rh": _fmt(rh[-1]),
                            "solar_radiation": "0.0",
                            "windspeed": "0.0",
                            "environment": "",
                        }
                    )
                t += cfg.node_points * step
            lat = float(lats[-1])
        ships[sid] = {"bias_temp": bias_t, "bias_rh": bias_h, "drift_per_day": drift, "legs": legs}

    truth = GroundTruth(
        seed=cfg.seed,
        config=asdict(cfg),
        coefficients={
            Target.TEMPERATURE.value: dict(TEMPERATURE_COEFFICIENTS),
            Target.HUMIDITY.value: dict(HUMIDITY_COEFFICIENTS),
        },
        shipments=ships,
        rh_clamped=clamped,
    )
    return SynthDataset(rows, truth, world_geojson())


def intended_tags(shipment: Shipment, truth: GroundTruth) -> list[SegmentKind]:
    """Per-measurement land/ocean kind the generator meant each fix to have."""
    return [truth.leg_kind(shipment.shipment_id, m.leg_id) for m in shipment.measurements]
