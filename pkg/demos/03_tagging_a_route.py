"""Tag a synthetic route against the bundled map and cut it into segments.

Run: python3 demos/03_tagging_a_route.py
"""

from collections import Counter

from rcmonitor.geotag import ScoringConfig, parse_geofile, relevancy, tag_shipment
from rcmonitor.synthgen import SynthConfig, bundled_world_path, generate

world = parse_geofile(bundled_world_path())
print(f"{len(world)} map items:", dict(Counter(item.label for item in world)))

data = generate(SynthConfig(seed=1, n_shipments=3, points_per_segment=24))
ship = tag_shipment(data.ingest().shipments[0], world)

print(f"\nshipment {ship.shipment_id}: {len(ship.measurements)} fixes in {len(ship.legs)} legs")
for seg in ship.segments:
    tags = Counter(m.environment.value for m in seg.measurements)
    first, last = seg.measurements[0], seg.measurements[-1]
    print(f"  {seg.segment_id:6s} {seg.kind.value:5s} {first.timestamp:%m-%d %H:%M} .. {last.timestamp:%m-%d %H:%M}  {dict(tags)}")

# how one fix scores against every nearby item
m = ship.measurements[5]
cfg = ScoringConfig()
scores = sorted(((relevancy(it, (m.lat, m.lon), cfg=cfg).score, it.label) for it in world), reverse=True)[:4]
print(f"\ntop scores at ({m.lat:.2f}, {m.lon:.2f}):", [(lab, round(s, 3)) for s, lab in scores])
