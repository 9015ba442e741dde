import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rcmonitor.features import (
    FEATURE_SETS,
    INTERCEPT,
    DomainError,
    FeatureConfig,
    ModelKind,
    Stage,
    Target,
    build_features,
    dewpoint,
    feature_matrix,
    psychro_rh,
    saturation_vp,
    schema_dump,
)
from rcmonitor.telemetry import Leg

from conftest import make_measurement


def magnus_by_hand(t):
    return 6.112 * math.exp(17.62 * t / (243.12 + t))


def test_saturation_vp_values():
    assert saturation_vp(0.0) == pytest.approx(6.112, abs=1e-12)
    assert saturation_vp(20.0) == pytest.approx(23.37, abs=0.05)
    assert saturation_vp(20.0) == pytest.approx(magnus_by_hand(20.0), rel=1e-14)
    assert saturation_vp(30.0) > saturation_vp(20.0)


@pytest.mark.parametrize("t", [-60.0, 80.0, -100.0, float("nan")])
def test_saturation_vp_domain(t):
    with pytest.raises(DomainError):
        saturation_vp(t)


def test_dewpoint_values():
    assert dewpoint(20.0, 100.0) == 20.0
    assert dewpoint(20.0, 50.0) == pytest.approx(9.26, abs=0.1)
    with pytest.raises(DomainError):
        dewpoint(20.0, 0.0)


def test_dewpoint_inverts_magnus():
    # independent check: the vapour pressure at the dew point equals rh * e_s(T)
    for t, rh in [(5.0, 30.0), (25.0, 80.0), (-10.0, 60.0)]:
        td = dewpoint(t, rh)
        assert magnus_by_hand(td) == pytest.approx(rh / 100 * magnus_by_hand(t), rel=1e-12)


def test_dewpoint_below_temperature_random():
    rng = np.random.default_rng(0)
    t = rng.uniform(-50, 70, 1000)
    rh = rng.uniform(1e-3, 100, 1000)
    assert np.all(dewpoint(t, rh) <= t)


def test_psychro_rh_cases():
    assert psychro_rh(20.0, 20.0, 50.0) == pytest.approx(50.0, abs=1e-12)
    assert psychro_rh(dewpoint(20.0, 50.0) - 0.5, 20.0, 50.0) == 100.0
    assert psychro_rh(30.0, 20.0, 50.0) == pytest.approx(27.5, abs=0.5)
    assert psychro_rh(30.0, 20.0, 50.0) == pytest.approx(50 * magnus_by_hand(20) / magnus_by_hand(30), rel=1e-12)


@given(
    st.floats(-30, 40),
    st.floats(1, 100),
    st.floats(-40, 60),
    st.floats(0, 10),
)
def test_psychro_rh_non_increasing(init_t, init_rh, t, dt):
    assert psychro_rh(t + dt, init_t, init_rh) <= psychro_rh(t, init_t, init_rh) + 1e-12


# Asterisk pattern of the feature table, typed out independently of FEATURE_SETS.
GOLDEN = {
    ("temperature", "baseline"): """temperature solar_radiation solar_radiation_sq solar_radiation_sqrt
        windspeed_temperature water_vp rel_humidity windspeed init_temperature init_rh temp_indicator1
        windspeed_rh_pct windspeed_indicator1""",
    ("temperature", "conditional", "land"): """temperature solar_radiation solar_radiation_sq solar_radiation_sqrt
        windspeed_temperature water_vp rel_humidity windspeed init_temperature init_rh temp_indicator1
        windspeed_rh_pct windspeed_indicator1""",
    ("temperature", "conditional", "ocean"): """temperature solar_radiation solar_radiation_sq solar_radiation_sqrt
        windspeed_temperature water_vp rel_humidity windspeed init_temperature init_rh temp_indicator1
        windspeed_rh_pct windspeed_indicator1 res_temp""",
    ("humidity", "baseline"): """temperature solar_radiation solar_radiation_sq windspeed_temperature
        temperature_rh rel_dewpoint psychro_rh windspeed_indicator2""",
    ("humidity", "conditional", "land"): """temperature solar_radiation solar_radiation_sq windspeed_temperature
        temperature_rh rel_dewpoint windspeed_indicator2""",
    ("humidity", "conditional", "ocean"): """temperature solar_radiation solar_radiation_sq windspeed_temperature
        temperature_rh rel_dewpoint windspeed_indicator2 res_rh psycho_rh""",
}


@pytest.mark.parametrize("key", list(GOLDEN))
def test_feature_sets_match_table(key):
    target, kind, *stage = key
    cfg = FeatureConfig(target, kind, stage=stage[0] if stage else "ocean")
    assert set(cfg.names) == set(GOLDEN[key].split())
    assert len(cfg.names) == len(set(cfg.names))


def test_baseline_temperature_has_13_features():
    assert len(FeatureConfig(Target.TEMPERATURE, ModelKind.BASELINE).names) == 13


def test_ocean_only_features_absent_elsewhere():
    ocean_only = {"res_temp", "res_rh", "psycho_rh"}
    for (target, kind, stage), names in FEATURE_SETS.items():
        if kind is ModelKind.BASELINE or stage is Stage.LAND:
            assert not ocean_only & set(names)


def leg_for(first):
    return Leg(first.leg_id, first.shipment_id, (first,))


def test_build_features_basic():
    m = make_measurement(0, ext_temp=20.0, ext_rh=50.0, windspeed=0.0, solar_radiation=16.0)
    vec = build_features(m, leg_for(m), FeatureConfig(Target.TEMPERATURE, ModelKind.BASELINE))
    assert vec[INTERCEPT] == 1.0
    assert len(vec) == 14
    assert vec["windspeed_rh_pct"] == -1.0
    assert vec["solar_radiation_sq"] == 256.0
    assert vec["solar_radiation_sqrt"] == 4.0
    assert vec["water_vp"] == pytest.approx(0.5 * magnus_by_hand(20.0), rel=1e-13)
    # first point of its leg: temperature / init_dewpoint > 1 so indicators are off
    assert vec["temp_indicator1"] == 0.0


def test_build_features_conditional_humidity():
    m = make_measurement(0, ext_temp=20.0, ext_rh=50.0)
    cfg = FeatureConfig(Target.HUMIDITY, ModelKind.CONDITIONAL)
    vec = build_features(m, leg_for(m), cfg, {"correction": 1.5, "est_temp": 30.0})
    assert vec["res_rh"] == 1.5
    assert vec["psycho_rh"] == pytest.approx(psychro_rh(30.0, 20.0, 50.0))
    assert vec["rel_dewpoint"] == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        build_features(m, leg_for(m), cfg, {"correction": 1.5})


def test_temp_indicator_values():
    first = make_measurement(0, ext_temp=10.0, ext_rh=90.0)
    leg = leg_for(first)
    rng = np.random.default_rng(1)
    temps = rng.uniform(-5, 25, 200)
    cols = {
        "ext_temp": temps,
        "ext_rh": np.full(200, 70.0),
        "solar_radiation": np.zeros(200),
        "windspeed": np.full(200, 2.0),
        "init_temp": np.full(200, leg.init_temp),
        "init_rh": np.full(200, leg.init_rh),
        "init_dewpoint": np.full(200, leg.init_dewpoint),
    }
    cfg = FeatureConfig(Target.TEMPERATURE, ModelKind.BASELINE)
    X = feature_matrix(cols, cfg)
    ind = X[:, cfg.names.index("temp_indicator1")]
    assert np.all((ind == 0) | (ind == temps))
    expected_on = temps / leg.init_dewpoint <= cfg.phi1
    assert np.array_equal(ind != 0, expected_on & (temps != 0))


def test_degenerate_init_dewpoint_counted():
    cols = {
        "ext_temp": np.array([5.0, 6.0]),
        "ext_rh": np.array([50.0, 60.0]),
        "solar_radiation": np.zeros(2),
        "windspeed": np.ones(2),
        "init_temp": np.full(2, 5.0),
        "init_rh": np.full(2, 50.0),
        "init_dewpoint": np.zeros(2),
    }
    counters = Counter()
    X = feature_matrix(cols, FeatureConfig(Target.HUMIDITY, ModelKind.BASELINE), counters=counters)
    assert np.all(np.isfinite(X))
    assert counters["init_dewpoint_zero"] == 2


def test_schema_dump_lists_all_configs():
    import json

    doc = json.loads(schema_dump())
    assert len(doc["configs"]) == 6
    assert all(c["features"][0] == INTERCEPT for c in doc["configs"])
