"""Adaptive-sensorless monitoring of shipping containers.

Predict container-internal temperature and relative humidity during
connectivity blackouts by correcting a regression baseline with residuals
the same shipment produced while it was still online.
"""

__version__ = "0.1.0"
