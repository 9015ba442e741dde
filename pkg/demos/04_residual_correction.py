"""Residual correction on synthetic shipments with a hidden per-shipment bias.

Each shipment's internal temperature carries a constant offset b_s that the
weather features cannot explain. The land stage sees it in its residuals,
and the ocean model uses the aggregated residual as a feature.

Run: python3 demos/04_residual_correction.py   (about 20 s)
"""

import numpy as np

from rcmonitor.evalharness import BASELINE, BenchmarkConfig, make_splits, run_benchmark, train_set
from rcmonitor.features import Target
from rcmonitor.geotag import parse_geofile, tag_shipments
from rcmonitor.rcm import SelectionScheme, WeightingConfig, predict_shipment, train_adaptive
from rcmonitor.synthgen import SynthConfig, bundled_world_path, generate

data = generate(SynthConfig(seed=7, n_shipments=200, bias_std_temp=2.0))
ships = tag_shipments(data.ingest().shipments, parse_geofile(bundled_world_path()))

(split,) = make_splits(ships, ["202103"])
train = train_set(ships, split)
print(f"train: {len(train)} shipments with legs finished before {split.cutoff:%Y-%m-%d}")

bundle = train_adaptive(train, WeightingConfig(), SelectionScheme.GLOBAL)
h = bundle.h_ocean[Target.TEMPERATURE]
print(f"ocean model coefficient on res_temp: {h.coefficient('res_temp'):.3f}  (ideal 1)")

# corrections at the first ocean fix against the hidden bias
c, b = [], []
for s in ships[:200:25]:
    p = predict_shipment(bundle, s)
    c.append(p.corrections[Target.TEMPERATURE][0])
    b.append(data.truth.oracle_correction(s))
print("\n  b_s     c")
for bi, ci in zip(b, c):
    print(f"  {bi:+.2f}  {ci:+.2f}")

rep = run_benchmark(ships, ["202103"], BenchmarkConfig(schemes=("global",)))
print()
print(rep.to_markdown())
base = rep.average("temperature", "MAE", BASELINE)
for model in rep.models[1:]:
    v = rep.average("temperature", "MAE", model)
    print(f"{model:15s} temperature MAE {v:.3f}  ({1 - v / base:.0%} below baseline)")
print("noise floor E|eps| for noise_std 1:", round(np.sqrt(2 / np.pi), 3))
