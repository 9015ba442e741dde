from datetime import datetime, timedelta, timezone

import pytest

from rcmonitor.geotag import parse_geofile, tag_shipments
from rcmonitor.synthgen import SynthConfig, bundled_world_path, generate
from rcmonitor.telemetry import EnvironmentTag, Leg, Measurement, Shipment

T0 = datetime(2021, 1, 1, tzinfo=timezone.utc)


def make_measurement(i, shipment_id="S", leg_id="L0", env=None, **kw):
    base = dict(
        timestamp=T0 + timedelta(hours=i),
        shipment_id=shipment_id,
        leg_id=leg_id,
        lat=10.0,
        lon=3.0,
        internal_temp=20.0,
        internal_rh=60.0,
        ext_temp=18.0,
        ext_rh=70.0,
        solar_radiation=100.0,
        windspeed=3.0,
        environment=env,
    )
    base.update(kw)
    return Measurement(**base)


def make_shipment(kinds, shipment_id="S", values=None):
    """One leg per run of equal kinds; kinds are 'L'/'O' characters."""
    legs, run, leg_idx = [], [], 0
    prev = None
    for i, k in enumerate(kinds):
        if prev is not None and k != prev:
            legs.append(Leg(f"{shipment_id}-{leg_idx}", shipment_id, tuple(run)))
            run, leg_idx = [], leg_idx + 1
        env = EnvironmentTag.OCEAN if k == "O" else EnvironmentTag.ROADS
        extra = values[i] if values else {}
        run.append(make_measurement(i, shipment_id, f"{shipment_id}-{leg_idx}", env, **extra))
        prev = k
    legs.append(Leg(f"{shipment_id}-{leg_idx}", shipment_id, tuple(run)))
    return Shipment(shipment_id, tuple(legs))


@pytest.fixture(scope="session")
def world():
    return parse_geofile(bundled_world_path())


@pytest.fixture(scope="session")
def small_synth():
    return generate(SynthConfig(seed=3, n_shipments=40, points_per_segment=30, span_days=50.0))


@pytest.fixture(scope="session")
def small_tagged(small_synth, world):
    return tag_shipments(small_synth.ingest().shipments, world)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
