"""Regenerate the bundled scene files under scenes/.

    python3 scripts/make_scenes.py
"""

import json
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parents[1] / "scenes"


def box_surface_points(rng, lo, hi, count, skip_bottom=True):
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    size = hi - lo
    faces = []
    for axis in range(3):
        for side in (0, 1):
            if skip_bottom and axis == 2 and side == 0:
                continue
            a, b = [k for k in range(3) if k != axis]
            faces.append((axis, side, size[a] * size[b]))
    areas = np.array([f[2] for f in faces])
    picks = rng.choice(len(faces), size=count, p=areas / areas.sum())
    pts = []
    for k in picks:
        axis, side, _ = faces[k]
        p = lo + rng.uniform(size=3) * size
        p[axis] = hi[axis] if side else lo[axis]
        pts.append(p)
    return np.round(np.array(pts), 4)


def wall_points(rng, bounds_lo, bounds_hi, count, walls):
    pts = []
    for k in range(count):
        axis, side = walls[k % len(walls)]
        p = bounds_lo + rng.uniform(size=3) * (bounds_hi - bounds_lo)
        p[axis] = bounds_hi[axis] if side else bounds_lo[axis]
        pts.append(p)
    return np.round(np.array(pts), 4)


def textured_cluster(rng):
    lo, hi = np.array([-2.0, -5.0, 0.0]), np.array([22.0, 5.0, 3.0])
    boxes = [
        (([8.5, -1.2, 0.0], [11.5, 1.2, 3.0]), 95),
        (([4.0, 2.2, 0.0], [5.5, 3.4, 1.6]), 30),
        (([14.5, -3.4, 0.0], [16.0, -2.0, 1.8]), 30),
        (([17.5, 2.0, 0.0], [18.5, 3.0, 1.2]), 43),
        (([2.0, -3.2, 0.0], [3.0, -2.2, 1.4]), 43),
        (([0.5, 2.4, 0.0], [2.5, 3.4, 2.0]), 72),
        (([17.5, -3.6, 0.0], [19.5, -2.6, 2.0]), 72),
    ]
    feats = [box_surface_points(rng, *box, n) for box, n in boxes]
    feats.append(wall_points(rng, lo, hi, 115, [(1, 0), (1, 1), (0, 1), (0, 0)]))
    return {
        "name": "textured_cluster",
        "grid_resolution": 0.4,
        "bounds": {"min": lo.tolist(), "max": hi.tolist()},
        "features": np.vstack(feats).tolist(),
        "obstacles": [{"type": "box", "min": b[0], "max": b[1]} for b, _ in boxes],
    }


def empty_room(rng):
    lo, hi = np.array([-2.0, -6.0, 0.0]), np.array([22.0, 6.0, 4.0])
    feats = wall_points(rng, lo, hi, 200, [(0, 1), (1, 0), (1, 1)])
    return {
        "name": "empty_room",
        "bounds": {"min": lo.tolist(), "max": hi.tolist()},
        "features": feats.tolist(),
        "obstacles": [],
    }


def main():
    OUT.mkdir(exist_ok=True)
    for name, build in (("textured_cluster.json", textured_cluster), ("empty_room.json", empty_room)):
        scene = build(np.random.default_rng(7))
        (OUT / name).write_text(json.dumps(scene, indent=1) + "\n", encoding="utf-8")
        print(f"wrote {name}: {len(scene['features'])} features")


if __name__ == "__main__":
    main()
