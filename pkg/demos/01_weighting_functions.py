"""How a residual series turns into a correction factor.

Run: python3 demos/01_weighting_functions.py
"""

from datetime import datetime, timedelta, timezone

import numpy as np

from rcmonitor.rcm import (
    CorrectionState,
    LinearDirection,
    ResidualPoint,
    SelectionScheme,
    WeightingConfig,
    WeightingScheme,
    correction,
    weights,
)

np.set_printoptions(precision=3, suppress=True)

# weights over a 6-point series, oldest first
for cfg in (
    WeightingConfig(WeightingScheme.UNIFORM),
    WeightingConfig(WeightingScheme.LINEAR),
    WeightingConfig(WeightingScheme.LINEAR, linear_direction=LinearDirection.OLDEST_HEAVY),
    WeightingConfig(WeightingScheme.EXPONENTIAL, alpha=0.9),
    WeightingConfig(WeightingScheme.EXPONENTIAL, alpha=0.5),
):
    label = cfg.scheme.value
    if cfg.scheme is WeightingScheme.LINEAR:
        label += f" {cfg.linear_direction.value}"
    elif cfg.scheme is WeightingScheme.EXPONENTIAL:
        label += f" alpha={cfg.alpha}"
    print(f"{label:34s}", weights(6, cfg))

# a residual series that steps from 1 to 3 halfway through
series = np.r_[np.ones(20), 3 * np.ones(20)]
print("\ncorrection after a step change (true recent level 3):")
for cfg in (WeightingConfig(WeightingScheme.UNIFORM), WeightingConfig(WeightingScheme.LINEAR), WeightingConfig(WeightingScheme.EXPONENTIAL)):
    print(f"  {cfg.scheme.value:8s} {correction(series, cfg):.3f}")

# the streaming state gives the same answer without storing the series
t0 = datetime(2021, 1, 1, tzinfo=timezone.utc)
state = CorrectionState(alpha=0.9)
for i, r in enumerate(series):
    seg = "L1" if i < 20 else "L2"
    state.update(ResidualPoint(t0 + timedelta(hours=i), seg, float(r)))
at = t0 + timedelta(hours=len(series))
print("\nstreaming, exp weighting:")
for scheme in SelectionScheme:
    print(f"  {scheme.value:9s} {state.query(scheme, WeightingConfig(WeightingScheme.EXPONENTIAL), at=at):.3f}")
# Local only sees the latest land segment, hence exactly 3
