"""Independent geometry oracles for the tagging tests."""

import math

import numpy as np

from rcmonitor.geotag import Polygon


def winding_number(lat, lon, ring_lat, ring_lon):
    """Total signed angle swept around the point, in turns."""
    total = 0.0
    for i in range(len(ring_lat) - 1):
        a = math.atan2(ring_lat[i] - lat, ring_lon[i] - lon)
        b = math.atan2(ring_lat[i + 1] - lat, ring_lon[i + 1] - lon)
        d = b - a
        while d > math.pi:
            d -= 2 * math.pi
        while d < -math.pi:
            d += 2 * math.pi
        total += d
    return round(total / (2 * math.pi))


def random_star_polygon(rng, n_vertices, center=(0.0, 0.0), r_min=0.3, r_max=1.0):
    angles = np.sort(rng.uniform(0, 2 * math.pi, n_vertices))
    radii = rng.uniform(r_min, r_max, n_vertices)
    lat = center[0] + radii * np.sin(angles)
    lon = center[1] + radii * np.cos(angles)
    return Polygon(np.append(lat, lat[0]), np.append(lon, lon[0]))


def concave_octagon():
    # an arrow/chevron shape with two reflex vertices
    pts = [(0, 0), (2, 0), (2, 1), (1.2, 1), (2, 2), (0, 2), (0.8, 1.2), (0, 1.2), (0, 0)]
    lat = np.array([p[1] for p in pts], dtype=float)
    lon = np.array([p[0] for p in pts], dtype=float)
    return Polygon(lat, lon)
