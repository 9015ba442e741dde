"""Dew point and the psychrometric humidity proxy.

Holding the leg-start vapour pressure fixed, relative humidity falls as the
container warms. The proxy is what the humidity models lean on.

Run: python3 demos/02_psychrometrics.py
"""

import numpy as np

from rcmonitor.features import dewpoint, psychro_rh, saturation_vp

print(f"saturation vapour pressure at 20 C: {saturation_vp(20.0):.3f} hPa")
print(f"dew point at 20 C, 50% RH:          {dewpoint(20.0, 50.0):.3f} C")

temps = np.linspace(5, 40, 8)
rh = psychro_rh(temps, init_temp=20.0, init_rh=50.0)
print("\nRH implied by leg-start conditions (20 C, 50%) as the temperature changes:")
for t, h in zip(temps, rh):
    bar = "#" * int(h / 2)
    print(f"  {t:5.1f} C  {h:6.1f}%  {bar}")
# below the dew point (9.3 C) the proxy saturates at 100%
