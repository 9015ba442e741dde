"""Shipment domain types and telemetry file ingestion.

Canonical input is a CSV with a header row::

    timestamp,shipment_id,leg_id,row_type,lat,lon,internal_temp,internal_rh,
    ext_temp,ext_rh,solar_radiation,windspeed[,environment]

JSON Lines (one object per line with the same keys) is accepted as well.
Rows with ``row_type == "node"`` are depot dwell time and are dropped.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import logging
import math
from collections import Counter, defaultdict
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from functools import cached_property
from pathlib import Path
from typing import Optional

from .features import TEMP_DOMAIN, dewpoint

logger = logging.getLogger(__name__)

COLUMNS = (
    "timestamp",
    "shipment_id",
    "leg_id",
    "row_type",
    "lat",
    "lon",
    "internal_temp",
    "internal_rh",
    "ext_temp",
    "ext_rh",
    "solar_radiation",
    "windspeed",
)
OPTIONAL_COLUMNS = ("environment",)
NUMERIC_COLUMNS = COLUMNS[4:]


class IngestError(Exception):
    """The file as a whole cannot be ingested."""


class UntaggedMeasurementError(ValueError):
    pass


class EnvironmentTag(str, enum.Enum):
    ROADS = "roads"
    RAILWAYS = "railways"
    URBAN = "urban"
    NATURE = "nature"
    PORT = "port"
    WATER_BODIES = "water_bodies"
    OCEAN = "ocean"

    @property
    def kind(self) -> "SegmentKind":
        return SegmentKind.OCEAN if self is EnvironmentTag.OCEAN else SegmentKind.LAND


class SegmentKind(str, enum.Enum):
    LAND = "land"
    OCEAN = "ocean"


def parse_timestamp(value) -> datetime:
    """Parse ISO-8601 or epoch seconds into an aware UTC datetime, whole seconds."""
    if isinstance(value, datetime):
        ts = value
    elif isinstance(value, (int, float)) and not isinstance(value, bool):
        ts = datetime.fromtimestamp(float(value), tz=timezone.utc)
    else:
        text = str(value).strip()
        if not text:
            raise ValueError("empty timestamp")
        try:
            ts = datetime.fromtimestamp(float(text), tz=timezone.utc)
        except ValueError:
            if text.endswith(("Z", "z")):
                text = text[:-1] + "+00:00"
            ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc).replace(microsecond=0)


def format_timestamp(ts: datetime) -> str:
    return ts.strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class Measurement:
    timestamp: datetime
    shipment_id: str
    leg_id: str
    lat: float
    lon: float
    internal_temp: float
    internal_rh: float
    ext_temp: float
    ext_rh: float
    solar_radiation: float
    windspeed: float
    environment: Optional[EnvironmentTag] = None

    @property
    def epoch(self) -> float:
        return self.timestamp.timestamp()

    def tagged(self, tag: EnvironmentTag) -> "Measurement":
        return replace(self, environment=EnvironmentTag(tag))


@dataclass(frozen=True)
class Leg:
    leg_id: str
    shipment_id: str
    measurements: tuple[Measurement, ...]

    def __post_init__(self):
        ms = self.measurements
        if not ms:
            raise ValueError(f"leg {self.leg_id} has no measurements")
        for a, b in zip(ms, ms[1:]):
            if not a.timestamp < b.timestamp:
                raise ValueError(f"leg {self.leg_id}: timestamps not strictly increasing")
        if any(m.leg_id != self.leg_id for m in ms):
            raise ValueError(f"leg {self.leg_id}: foreign measurement")

    @property
    def start(self) -> datetime:
        return self.measurements[0].timestamp

    @property
    def end(self) -> datetime:
        return self.measurements[-1].timestamp

    @property
    def init_temp(self) -> float:
        return self.measurements[0].ext_temp

    @property
    def init_rh(self) -> float:
        return self.measurements[0].ext_rh

    @cached_property
    def init_dewpoint(self) -> float:
        return dewpoint(self.init_temp, self.init_rh)


@dataclass(frozen=True)
class Segment:
    segment_id: str
    shipment_id: str
    kind: SegmentKind
    measurements: tuple[Measurement, ...]


def segment_shipment(shipment: "Shipment") -> list[Segment]:
    """Split a shipment into maximal runs of measurements with the same kind."""
    segments: list[Segment] = []
    run: list[Measurement] = []
    run_kind: Optional[SegmentKind] = None
    for m in shipment.measurements:
        if m.environment is None:
            raise UntaggedMeasurementError(
                f"measurement {m.shipment_id}/{m.leg_id}@{format_timestamp(m.timestamp)} has no environment tag"
            )
        kind = EnvironmentTag(m.environment).kind
        if run and kind is not run_kind:
            segments.append(_make_segment(shipment.shipment_id, len(segments), run_kind, run))
            run = []
        run.append(m)
        run_kind = kind
    if run:
        segments.append(_make_segment(shipment.shipment_id, len(segments), run_kind, run))
    return segments


def _make_segment(shipment_id, index, kind, run) -> Segment:
    return Segment(f"{shipment_id}:{index}", shipment_id, kind, tuple(run))


@dataclass(frozen=True)
class Shipment:
    shipment_id: str
    legs: tuple[Leg, ...]

    def __post_init__(self):
        for a, b in zip(self.legs, self.legs[1:]):
            if not a.end < b.start:
                raise ValueError(f"shipment {self.shipment_id}: legs {a.leg_id} and {b.leg_id} overlap")

    @cached_property
    def measurements(self) -> tuple[Measurement, ...]:
        return tuple(m for leg in self.legs for m in leg.measurements)

    @cached_property
    def legs_by_id(self) -> dict[str, Leg]:
        return {leg.leg_id: leg for leg in self.legs}

    @cached_property
    def segments(self) -> tuple[Segment, ...]:
        return tuple(segment_shipment(self))

    @property
    def is_tagged(self) -> bool:
        return all(m.environment is not None for m in self.measurements)

    def with_legs(self, legs: Sequence[Leg]) -> "Shipment":
        return Shipment(self.shipment_id, tuple(legs))

    def with_tags(self, tags: Sequence[EnvironmentTag]) -> "Shipment":
        tags = list(tags)
        if len(tags) != len(self.measurements):
            raise ValueError("one tag per measurement required")
        it = iter(tags)
        legs = []
        for leg in self.legs:
            ms = tuple(m.tagged(next(it)) for m in leg.measurements)
            legs.append(Leg(leg.leg_id, leg.shipment_id, ms))
        return Shipment(self.shipment_id, tuple(legs))


@dataclass
class Reject:
    line: int
    row: dict
    reason: str


@dataclass
class IngestResult:
    """Shipments plus everything that did not make it in."""

    shipments: list[Shipment]
    rejects: list[Reject] = field(default_factory=list)
    nodes_dropped: int = 0

    def __iter__(self):
        return iter(self.shipments)

    def __len__(self):
        return len(self.shipments)

    @property
    def reject_counts(self) -> Counter:
        return Counter(r.reason for r in self.rejects)

    def write_rejects(self, path) -> None:
        keys = list(COLUMNS) + list(OPTIONAL_COLUMNS)
        for r in self.rejects:
            keys.extend(k for k in r.row if k not in keys)
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=keys + ["reject_reason"], extrasaction="ignore")
            w.writeheader()
            for r in self.rejects:
                w.writerow({**r.row, "reject_reason": r.reason})


class _RowError(Exception):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


def _number(row, key) -> float:
    raw = row.get(key)
    if raw is None or (isinstance(raw, str) and not raw.strip()):
        raise _RowError("missing_value")
    try:
        v = float(raw)
    except (TypeError, ValueError):
        raise _RowError("non_numeric") from None
    if not math.isfinite(v):
        raise _RowError("non_numeric")
    return v


def _parse_row(row: Mapping) -> Optional[Measurement]:
    """Validate one raw row; ``None`` means a node row."""
    row_type = str(row.get("row_type") or "").strip().lower()
    if row_type == "node":
        return None
    if row_type != "leg":
        raise _RowError("bad_row_type")
    for key in ("shipment_id", "leg_id"):
        if not str(row.get(key) or "").strip():
            raise _RowError("missing_value")
    try:
        ts = parse_timestamp(row.get("timestamp"))
    except (TypeError, ValueError, OverflowError, OSError):
        raise _RowError("bad_timestamp") from None
    v = {k: _number(row, k) for k in NUMERIC_COLUMNS}
    if not -90 <= v["lat"] <= 90:
        raise _RowError("lat_out_of_range")
    if not -180 < v["lon"] <= 180:
        raise _RowError("lon_out_of_range")
    if not 0 <= v["internal_rh"] <= 100:
        raise _RowError("rh_out_of_range")
    # dew point is undefined at 0 %
    if not 0 < v["ext_rh"] <= 100:
        raise _RowError("rh_out_of_range")
    lo, hi = TEMP_DOMAIN
    if not lo < v["ext_temp"] < hi:
        raise _RowError("temp_out_of_range")
    if v["solar_radiation"] < 0:
        raise _RowError("negative_solar_radiation")
    if v["windspeed"] < 0:
        raise _RowError("negative_windspeed")
    env = str(row.get("environment") or "").strip()
    tag = None
    if env:
        try:
            tag = EnvironmentTag(env)
        except ValueError:
            raise _RowError("bad_environment") from None
    return Measurement(
        timestamp=ts,
        shipment_id=str(row["shipment_id"]).strip(),
        leg_id=str(row["leg_id"]).strip(),
        environment=tag,
        **v,
    )


def _read_rows(path: Path) -> tuple[list[str], list[dict]]:
    try:
        text = path.read_text()
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc
    if path.suffix.lower() in (".jsonl", ".ndjson"):
        rows, keys = [], []
        for i, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IngestError(f"{path}:{i}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise IngestError(f"{path}:{i}: expected an object per line")
            keys.extend(k for k in obj if k not in keys)
            rows.append(obj)
        return keys, rows
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None:
        raise IngestError(f"{path} is empty")
    return list(reader.fieldnames), list(reader)


def ingest(path, schema: Optional[Mapping[str, str]] = None) -> IngestResult:
    """Read a telemetry file into shipments.

    ``schema`` maps canonical column names to the names used in the file.
    Malformed rows land in ``result.rejects`` with a reason code; a missing
    mandatory column or an unreadable file raises :class:`IngestError`.
    """
    path = Path(path)
    keys, raw_rows = _read_rows(path)
    schema = dict(schema or {})
    rename = {schema.get(c, c): c for c in COLUMNS + OPTIONAL_COLUMNS}
    present = {rename.get(k, k) for k in keys}
    missing = [c for c in COLUMNS if c not in present]
    if missing and (raw_rows or keys):
        raise IngestError(f"{path}: missing mandatory column(s): {', '.join(missing)}")
    return _assemble([{rename.get(k, k): v for k, v in row.items()} for row in raw_rows])


def ingest_rows(rows: Iterable[Mapping]) -> IngestResult:
    """Same as :func:`ingest` for rows already in memory (canonical keys)."""
    return _assemble([dict(r) for r in rows])


def _assemble(rows: list[dict]) -> IngestResult:
    rejects: list[Reject] = []
    nodes = 0
    seen: set[tuple[str, datetime]] = set()
    grouped: dict[str, dict[str, list[Measurement]]] = defaultdict(lambda: defaultdict(list))
    raw_by_ship: dict[str, list[tuple[int, dict]]] = defaultdict(list)
    for line, row in enumerate(rows, start=2):
        try:
            m = _parse_row(row)
        except _RowError as err:
            rejects.append(Reject(line, row, err.reason))
            continue
        if m is None:
            nodes += 1
            continue
        key = (m.shipment_id, m.timestamp)
        if key in seen:
            rejects.append(Reject(line, row, "duplicate_timestamp"))
            continue
        seen.add(key)
        grouped[m.shipment_id][m.leg_id].append(m)
        raw_by_ship[m.shipment_id].append((line, row))

    shipments = []
    for sid in sorted(grouped):
        legs = [
            Leg(lid, sid, tuple(sorted(ms, key=lambda m: m.timestamp)))
            for lid, ms in grouped[sid].items()
        ]
        legs.sort(key=lambda leg: leg.start)
        try:
            shipments.append(Shipment(sid, tuple(legs)))
        except ValueError:
            rejects.extend(Reject(line, row, "overlapping_legs") for line, row in raw_by_ship[sid])
    if nodes:
        logger.info("dropped %d node rows", nodes)
    if rejects:
        logger.warning("rejected %d rows: %s", len(rejects), dict(Counter(r.reason for r in rejects)))
    rejects.sort(key=lambda r: r.line)
    return IngestResult(shipments, rejects, nodes)


def _fmt(x: float) -> str:
    return repr(float(x))


def measurement_row(m: Measurement) -> dict[str, str]:
    return {
        "timestamp": format_timestamp(m.timestamp),
        "shipment_id": m.shipment_id,
        "leg_id": m.leg_id,
        "row_type": "leg",
        "lat": _fmt(m.lat),
        "lon": _fmt(m.lon),
        "internal_temp": _fmt(m.internal_temp),
        "internal_rh": _fmt(m.internal_rh),
        "ext_temp": _fmt(m.ext_temp),
        "ext_rh": _fmt(m.ext_rh),
        "solar_radiation": _fmt(m.solar_radiation),
        "windspeed": _fmt(m.windspeed),
        "environment": m.environment.value if m.environment is not None else "",
    }


def write_csv(shipments: Iterable[Shipment], path_or_buffer) -> None:
    """Write shipments in canonical form; ingesting the result is a fixed point."""
    own = not hasattr(path_or_buffer, "write")
    fh = open(path_or_buffer, "w", newline="") if own else path_or_buffer
    try:
        w = csv.DictWriter(fh, fieldnames=list(COLUMNS) + list(OPTIONAL_COLUMNS), lineterminator="\n")
        w.writeheader()
        for s in shipments:
            for m in s.measurements:
                w.writerow(measurement_row(m))
    finally:
        if own:
            fh.close()
