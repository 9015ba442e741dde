import csv
import math

import numpy as np
import pytest

from rcmonitor.evalharness import (
    BASELINE,
    BenchmarkConfig,
    EvaluationReport,
    histogram,
    mae,
    make_splits,
    paired_difference,
    rmse,
    run_benchmark,
    test_points as scored_points,
    train_set,
)
from rcmonitor.telemetry import EnvironmentTag, Leg, Shipment

from conftest import make_measurement

JAN_HOURS = 31 * 24


def leg(sid, lid, hours, env=EnvironmentTag.OCEAN):
    return Leg(lid, sid, tuple(make_measurement(h, sid, lid, env) for h in hours))


def boundary_dataset():
    # A: land leg inside January, ocean leg straddling Feb 1
    a = Shipment("A", (leg("A", "a0", range(100, 110), EnvironmentTag.ROADS), leg("A", "a1", range(JAN_HOURS - 20, JAN_HOURS + 30))))
    # B: everything finished in January
    b = Shipment("B", (leg("B", "b0", range(10, 20), EnvironmentTag.ROADS), leg("B", "b1", range(30, 40))))
    # C: starts in February
    c = Shipment("C", (leg("C", "c0", range(JAN_HOURS + 100, JAN_HOURS + 110)),))
    return [a, b, c]


def test_metric_fixture():
    assert mae([1, 2], [2, 4]) == pytest.approx(1.5, abs=1e-12)
    assert rmse([1, 2], [2, 4]) == pytest.approx(math.sqrt(2.5), abs=1e-12)
    assert mae([3, 4], [3, 4]) == 0.0 and rmse([3, 4], [3, 4]) == 0.0


def test_metric_errors():
    with pytest.raises(ValueError):
        mae([1, 2], [1])
    with pytest.raises(ValueError):
        rmse([], [])


def test_rmse_at_least_mae():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = rng.integers(1, 20)
        p, t = rng.normal(size=n), rng.normal(size=n)
        assert rmse(p, t) >= mae(p, t) - 1e-15


def test_split_leg_rules():
    data = boundary_dataset()
    (split,) = make_splits(data, ["202102"])
    assert ("A", "a0") in split.train_legs and ("B", "b1") in split.train_legs
    # the straddling leg goes entirely to test
    assert ("A", "a1") in split.test_legs and ("A", "a1") not in split.train_legs
    assert ("C", "c0") in split.test_legs
    assert not split.train_legs & split.test_legs
    train = train_set(data, split)
    assert [s.shipment_id for s in train] == ["A", "B"]
    assert [l.leg_id for l in train[0].legs] == ["a0"]
    assert len(scored_points(data[0], split)) == 50


def test_split_skips():
    data = boundary_dataset()
    jan, feb = make_splits(data, ["202101", "202102"])
    assert jan.skipped == "empty train set"
    assert feb.skipped is None
    (mar,) = make_splits(data[1:2], ["202103"])
    assert mar.skipped == "no ocean test points"
    with pytest.raises(ValueError):
        make_splits(data, ["202102", "202101"])


def test_train_sets_monotone(small_tagged):
    months = ["202101", "202102", "202103"]
    splits = make_splits(small_tagged, months)
    for a, b in zip(splits, splits[1:]):
        assert a.train_legs <= b.train_legs
    for s in splits:
        assert not s.train_legs & s.test_legs


def test_paired_difference():
    a = np.array([1.0, 2.0, 3.0, 4.0])
    b = np.array([1.0, 1.0, 1.0, 1.0])
    mean, se = paired_difference(a, b)
    assert mean == pytest.approx(1.5)
    assert se == pytest.approx(np.std([0, 1, 2, 3], ddof=1) / 2)
    # clusters of equal size: cluster-level SE of the cluster means
    mean_c, se_c = paired_difference(a, b, clusters=["x", "x", "y", "y"])
    assert mean_c == pytest.approx(1.5)
    assert se_c == pytest.approx(np.std([0.5, 2.5], ddof=1) / math.sqrt(2))


def test_histogram():
    h = histogram([0.1, 0.2, 0.9], bins=2, limits=(0, 1))
    assert [r["count"] for r in h] == [2, 1]
    assert h[0]["lo"] == 0 and h[-1]["hi"] == 1


@pytest.fixture(scope="module")
def report(small_tagged):
    return run_benchmark(small_tagged, ["202102"])


def test_report_layout(report):
    assert report.models[0] == BASELINE and len(report.models) == 10
    md = report.to_markdown()
    assert md.count("### ") == 4
    assert "| YYYYMM | baseline | uniform/local |" in md
    assert "| Average |" in md
    for target in ("temperature", "humidity"):
        for metric in ("MAE", "RMSE"):
            for model in report.models:
                mae_v = report.value("202102", target, "MAE", model)
                assert mae_v is not None
                assert report.value("202102", target, "RMSE", model) >= mae_v
    assert report.lookahead_violations() == 0
    assert not report.failures


def test_report_average_rows(report, tmp_path):
    recs = report.records()
    for r in recs:
        if r["month"] != "Average":
            continue
        vals = [x["value"] for x in recs if x["month"] != "Average" and all(x[k] == r[k] for k in ("target", "metric", "model"))]
        assert abs(r["value"] - sum(vals) / len(vals)) <= 1e-12
    report.to_csv(tmp_path / "report.csv")
    with open(tmp_path / "report.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["month", "target", "metric", "model", "value"]
    again = EvaluationReport.from_csv(tmp_path / "report.csv")
    assert again.cells == report.cells


def test_error_dumps(report, tmp_path):
    paths = report.write_error_dumps(tmp_path)
    assert len(paths) == 20
    with open(paths[0]) as fh:
        rows = list(csv.DictReader(fh))
    assert rows and float(rows[0]["error"]) == pytest.approx(float(rows[0]["prediction"]) - float(rows[0]["truth"]))


def test_benchmark_deterministic(small_tagged, report):
    again = run_benchmark(small_tagged, ["202102"])
    assert again.to_markdown(digits=17) == report.to_markdown(digits=17)


def test_failed_variant_leaves_empty_cell(small_tagged, monkeypatch):
    from rcmonitor import evalharness

    real = evalharness.train_adaptive

    def flaky(train, w, scheme, *a, **kw):
        if scheme.value == "local":
            raise RuntimeError("boom")
        return real(train, w, scheme, *a, **kw)

    monkeypatch.setattr(evalharness, "train_adaptive", flaky)
    cfg = BenchmarkConfig(weightings=("uniform",), schemes=("local", "global"))
    rep = run_benchmark(small_tagged, ["202102"], cfg)
    assert rep.models == [BASELINE, "uniform/local", "uniform/global"]
    assert rep.value("202102", "temperature", "MAE", "uniform/local") is None
    assert rep.value("202102", "temperature", "MAE", "uniform/global") is not None
    assert "boom" in rep.failures["202102"]["uniform/local"]
    assert "| 202102 |" in rep.to_markdown()
