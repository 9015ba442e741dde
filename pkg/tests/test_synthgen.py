import json
import math

import numpy as np
import pytest

from rcmonitor.evalharness import fit_baseline
from rcmonitor.features import INTERCEPT, FeatureConfig, ModelKind, Target, feature_matrix, leg_columns
from rcmonitor.synthgen import (
    HUMIDITY_COEFFICIENTS,
    TEMPERATURE_COEFFICIENTS,
    GroundTruth,
    NotSyntheticError,
    SynthConfig,
    bundled_world_path,
    generate,
    intended_tags,
    world_geojson,
)
from rcmonitor.telemetry import SegmentKind


def test_exact_coefficient_recovery():
    cfg = SynthConfig(seed=2, n_shipments=25, points_per_segment=25, bias_std_temp=0, bias_std_rh=0, noise_std_temp=0, noise_std_rh=0)
    data = generate(cfg)
    assert data.truth.rh_clamped == 0
    ships = data.ingest().shipments
    for target, coefs in ((Target.TEMPERATURE, TEMPERATURE_COEFFICIENTS), (Target.HUMIDITY, HUMIDITY_COEFFICIENTS)):
        model = fit_baseline(ships, target, 1.0, 80.0)
        assert model.intercept == pytest.approx(coefs[INTERCEPT], abs=1e-6)
        for name in model.feature_names:
            assert model.coefficient(name) == pytest.approx(coefs[name], abs=1e-6), name


def test_same_seed_byte_identical():
    cfg = SynthConfig(seed=9, n_shipments=5, points_per_segment=10)
    a, b = generate(cfg), generate(cfg)
    assert a.csv_text() == b.csv_text()
    assert a.truth.to_json() == b.truth.to_json()
    assert generate(SynthConfig(seed=10, n_shipments=5, points_per_segment=10)).csv_text() != a.csv_text()


def test_land_residual_mean_near_bias(small_synth):
    cfg = small_synth.truth.config
    noise = cfg["noise_std_temp"]
    fcfg = FeatureConfig(Target.TEMPERATURE, ModelKind.BASELINE)
    coefs = np.array([TEMPERATURE_COEFFICIENTS[k] for k in fcfg.names])
    for ship in small_synth.ingest().shipments:
        land = [m for m in ship.measurements if small_synth.truth.leg_kind(ship.shipment_id, m.leg_id) is SegmentKind.LAND]
        X = feature_matrix(leg_columns(land, ship.legs_by_id), fcfg)
        resid = np.array([m.internal_temp for m in land]) - (TEMPERATURE_COEFFICIENTS[INTERCEPT] + X @ coefs)
        b = small_synth.truth.oracle_correction(ship)
        assert abs(resid.mean() - b) <= 3 * noise / math.sqrt(len(land))


def test_oracle_correction(small_synth):
    sid = next(iter(small_synth.truth.shipments))
    assert small_synth.truth.oracle_correction(sid) == small_synth.truth.shipments[sid]["bias_temp"]
    assert small_synth.truth.oracle_correction(sid, "humidity") == small_synth.truth.shipments[sid]["bias_rh"]
    with pytest.raises(NotSyntheticError):
        small_synth.truth.oracle_correction("REAL-001")


def test_alternating_legs_and_nodes(small_synth):
    res = small_synth.ingest()
    assert not res.rejects
    assert res.nodes_dropped == 40 * 3 * 3
    ship = res.shipments[0]
    kinds = [small_synth.truth.leg_kind(ship.shipment_id, leg.leg_id) for leg in ship.legs]
    assert kinds == [SegmentKind.LAND, SegmentKind.OCEAN, SegmentKind.LAND, SegmentKind.OCEAN]
    assert len(intended_tags(ship, small_synth.truth)) == len(ship.measurements)


def test_first_land_points():
    data = generate(SynthConfig(seed=1, n_shipments=2, points_per_segment=5, first_land_points=12))
    ship = data.ingest().shipments[0]
    assert [len(leg.measurements) for leg in ship.legs] == [12, 5, 5, 5]


def test_write_and_reload(tmp_path, small_synth):
    paths = small_synth.write(tmp_path)
    assert paths["data"].read_text() == small_synth.csv_text()
    assert GroundTruth.load(paths["truth"]) == small_synth.truth
    assert json.loads(paths["world"].read_text()) == world_geojson()


def test_bundled_world_matches_generator():
    assert json.loads(bundled_world_path().read_text()) == world_geojson()


def test_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(noise_std_temp=-1)
    with pytest.raises(ValueError):
        SynthConfig(segments_per_shipment=0)
    with pytest.raises(ValueError, match="unknown"):
        SynthConfig.from_mapping({"seed": 1, "colour": "red"})
    assert SynthConfig.from_mapping({"seed": 4}).seed == 4


def test_drift_bias_recorded():
    data = generate(SynthConfig(seed=1, n_shipments=3, points_per_segment=5, drift_bias=True))
    assert any(v["drift_per_day"] != 0 for v in data.truth.shipments.values())


def test_zero_bias_corrections_small(world):
    from rcmonitor.geotag import tag_shipments
    from rcmonitor.rcm import SelectionScheme, WeightingConfig, predict_shipment, train_adaptive

    data = generate(SynthConfig(seed=5, n_shipments=60, points_per_segment=50, bias_std_temp=0.0))
    ships = tag_shipments(data.ingest().shipments, world)
    bundle = train_adaptive(ships, WeightingConfig(), SelectionScheme.GLOBAL, targets=[Target.TEMPERATURE])
    first = [abs(predict_shipment(bundle, s).corrections[Target.TEMPERATURE][0]) for s in ships]
    assert float(np.median(first)) < 0.2
