"""Scene geometry: features, analytic obstacles, occupancy grid and A* search."""

from __future__ import annotations

import heapq
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist


class SceneError(ValueError):
    """Malformed or inconsistent scene description."""


class OutOfBoundsError(ValueError):
    """A query point lies outside the scene bounds."""


class BlockedEndpointError(ValueError):
    """Start or goal lies outside the scene or too close to an obstacle."""


class UnreachableError(RuntimeError):
    """No collision-free path exists between start and goal."""


@dataclass(frozen=True)
class Sphere:
    center: np.ndarray
    radius: float

    def signed_distance(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        d = points - self.center
        norm = np.linalg.norm(d, axis=-1)
        safe = np.where(norm > 1e-12, norm, 1.0)
        grad = np.where((norm > 1e-12)[..., None], d / safe[..., None], np.array([1.0, 0.0, 0.0]))
        return norm - self.radius, grad


@dataclass(frozen=True)
class Box:
    lo: np.ndarray
    hi: np.ndarray

    def signed_distance(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        center = 0.5 * (self.lo + self.hi)
        half = 0.5 * (self.hi - self.lo)
        rel = points - center
        q = np.abs(rel) - half
        sign = np.where(rel >= 0, 1.0, -1.0)
        outside = np.maximum(q, 0.0)
        out_norm = np.linalg.norm(outside, axis=-1)
        inside = np.minimum(q.max(axis=-1), 0.0)
        dist = out_norm + inside
        safe = np.where(out_norm > 0, out_norm, 1.0)
        grad_out = sign * outside / safe[..., None]
        # inside: gradient along the axis of the nearest face
        axis = np.argmax(q, axis=-1)
        grad_in = np.zeros_like(points, dtype=float)
        np.put_along_axis(grad_in, axis[..., None], np.take_along_axis(sign, axis[..., None], -1), -1)
        grad = np.where((out_norm > 0)[..., None], grad_out, grad_in)
        return dist, grad


@dataclass(frozen=True)
class Environment:
    features: np.ndarray  # (F, 3); feature id is the row index
    obstacles: tuple = ()
    bounds_min: np.ndarray = field(default_factory=lambda: np.full(3, -10.0))
    bounds_max: np.ndarray = field(default_factory=lambda: np.full(3, 10.0))
    grid_resolution: float = 0.2

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=float).reshape(-1, 3)
        feats.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "bounds_min", np.asarray(self.bounds_min, dtype=float))
        object.__setattr__(self, "bounds_max", np.asarray(self.bounds_max, dtype=float))
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        if not self.grid_resolution > 0:
            raise SceneError(f"grid_resolution must be positive, got {self.grid_resolution}")
        if np.any(self.bounds_max <= self.bounds_min):
            raise SceneError("bounds max must exceed bounds min on every axis")
        if len(feats) and (np.any(feats < self.bounds_min) or np.any(feats > self.bounds_max)):
            raise SceneError("feature outside scene bounds")
        for k, ob in enumerate(self.obstacles):
            lo, hi = _obstacle_extent(ob)
            if np.any(lo < self.bounds_min) or np.any(hi > self.bounds_max):
                raise SceneError(f"obstacle {k} extends outside scene bounds")

    @property
    def feature_ids(self) -> np.ndarray:
        return np.arange(len(self.features))

    def contains(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return np.all((pts >= self.bounds_min) & (pts <= self.bounds_max), axis=-1)

    def clearance_and_gradient(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Signed distance to the nearest obstacle surface and its spatial gradient."""
        pts = np.asarray(points, dtype=float)
        if not np.all(self.contains(pts)):
            raise OutOfBoundsError(
                f"query outside bounds [{self.bounds_min.tolist()}, {self.bounds_max.tolist()}]"
            )
        if not self.obstacles:
            lo = pts - self.bounds_min
            hi = self.bounds_max - pts
            both = np.concatenate([lo, hi], axis=-1)
            k = np.argmin(both, axis=-1)
            dist = np.take_along_axis(both, k[..., None], -1)[..., 0]
            grad = np.zeros(pts.shape)
            axis = k % 3
            sgn = np.where(k < 3, 1.0, -1.0)
            np.put_along_axis(grad, axis[..., None], sgn[..., None], -1)
            return dist, grad
        best = None
        best_grad = None
        for ob in self.obstacles:
            d, g = ob.signed_distance(pts)
            if best is None:
                best, best_grad = d, g
            else:
                closer = d < best
                best = np.where(closer, d, best)
                best_grad = np.where(closer[..., None], g, best_grad)
        return best, best_grad

    def clearance(self, point):
        d, _ = self.clearance_and_gradient(point)
        return float(d) if np.ndim(d) == 0 else d


def _obstacle_extent(ob):
    if isinstance(ob, Sphere):
        return ob.center - ob.radius, ob.center + ob.radius
    return ob.lo, ob.hi


def _vec3(value, where: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.shape != (3,) or not np.all(np.isfinite(arr)):
        raise SceneError(f"{where}: expected 3 finite numbers, got {value!r}")
    return arr


def scene_from_dict(data: dict, grid_resolution: float = 0.2) -> Environment:
    if not isinstance(data, dict):
        raise SceneError("scene root must be a JSON object")
    try:
        bounds = data["bounds"]
        lo = _vec3(bounds["min"], "bounds.min")
        hi = _vec3(bounds["max"], "bounds.max")
    except (KeyError, TypeError) as exc:
        raise SceneError(f"missing bounds field: {exc}") from exc
    raw_features = data.get("features", [])
    feats = [_vec3(f, f"features[{k}]") for k, f in enumerate(raw_features)]
    if "feature_ids" in data:
        ids = list(data["feature_ids"])
        if len(ids) != len(feats):
            raise SceneError("feature_ids length differs from features length")
        if len(set(ids)) != len(ids):
            raise SceneError("duplicate feature ids")
        order = np.argsort(ids, kind="stable")
        feats = [feats[k] for k in order]
    obstacles = []
    for k, ob in enumerate(data.get("obstacles", [])):
        kind = ob.get("type") if isinstance(ob, dict) else None
        if kind == "sphere":
            radius = float(ob.get("radius", float("nan")))
            if not radius > 0:
                raise SceneError(f"obstacles[{k}].radius must be positive, got {ob.get('radius')!r}")
            obstacles.append(Sphere(_vec3(ob.get("center"), f"obstacles[{k}].center"), radius))
        elif kind == "box":
            b_lo = _vec3(ob.get("min"), f"obstacles[{k}].min")
            b_hi = _vec3(ob.get("max"), f"obstacles[{k}].max")
            if np.any(b_hi <= b_lo):
                raise SceneError(f"obstacles[{k}]: box max must exceed min")
            obstacles.append(Box(b_lo, b_hi))
        else:
            raise SceneError(f"obstacles[{k}].type must be 'sphere' or 'box', got {kind!r}")
    return Environment(
        np.array(feats).reshape(-1, 3),
        tuple(obstacles),
        lo,
        hi,
        float(data.get("grid_resolution", grid_resolution)),
    )


def load_scene(path, grid_resolution: float = 0.2) -> Environment:
    """Read and validate a JSON scene file."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SceneError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return scene_from_dict(data, grid_resolution)


def scene_to_dict(env: Environment) -> dict:
    obstacles = []
    for ob in env.obstacles:
        if isinstance(ob, Sphere):
            obstacles.append({"type": "sphere", "center": ob.center.tolist(), "radius": ob.radius})
        else:
            obstacles.append({"type": "box", "min": ob.lo.tolist(), "max": ob.hi.tolist()})
    return {
        "bounds": {"min": env.bounds_min.tolist(), "max": env.bounds_max.tolist()},
        "features": env.features.tolist(),
        "obstacles": obstacles,
        "grid_resolution": env.grid_resolution,
    }


def features_in_depth(p_a, p_b, features, d_max: float) -> np.ndarray:
    """Ascending ids of features within ``d_max`` (closed ball) of both points."""
    if not d_max > 0:
        raise ValueError(f"d_max must be positive, got {d_max}")
    feats = np.asarray(features, dtype=float).reshape(-1, 3)
    da = np.linalg.norm(feats - np.asarray(p_a, dtype=float), axis=1)
    db = np.linalg.norm(feats - np.asarray(p_b, dtype=float), axis=1)
    return np.flatnonzero((da <= d_max) & (db <= d_max))


def near_mask(points, features, d_max: float) -> np.ndarray:
    """(K, F) mask of features within ``d_max`` (closed ball) of each point."""
    return cdist(np.asarray(points, dtype=float).reshape(-1, 3), np.asarray(features, dtype=float).reshape(-1, 3)) <= d_max


def depth_mask(points, features, d_max: float) -> np.ndarray:
    """(K-1, F) mask of features within depth of consecutive points."""
    near = near_mask(points, features, d_max)
    return near[:-1] & near[1:]


# ---------------------------------------------------------------- grid search

NEIGHBORS = np.array([d for d in itertools.product((-1, 0, 1), repeat=3) if d != (0, 0, 0)])
STEP_LENGTHS = np.linalg.norm(NEIGHBORS, axis=1)


@dataclass(frozen=True)
class OccupancyGrid:
    free: np.ndarray  # bool (nx, ny, nz)
    origin: np.ndarray  # center of cell (0, 0, 0)
    resolution: float

    def center(self, idx) -> np.ndarray:
        return self.origin + self.resolution * np.asarray(idx, dtype=float)

    def index(self, point) -> tuple[int, int, int]:
        k = np.rint((np.asarray(point, dtype=float) - self.origin) / self.resolution).astype(int)
        k = np.clip(k, 0, np.array(self.free.shape) - 1)
        return tuple(int(x) for x in k)


def occupancy_grid(env: Environment, margin: float) -> OccupancyGrid:
    """Cells whose center has clearance >= margin are free."""
    res = env.grid_resolution
    counts = np.maximum(np.floor((env.bounds_max - env.bounds_min) / res).astype(int), 1)
    origin = env.bounds_min + 0.5 * (env.bounds_max - env.bounds_min - (counts - 1) * res)
    axes = [origin[k] + res * np.arange(counts[k]) for k in range(3)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    if env.obstacles:
        dist, _ = env.clearance_and_gradient(pts)
        free = dist >= margin
    else:
        free = np.ones(tuple(counts), dtype=bool)
    return OccupancyGrid(free, origin, res)


def grid_astar(free: np.ndarray, start: tuple, goal: tuple) -> tuple[list[tuple], float]:
    """26-connected A* on a boolean grid with unit cell size.

    Returns the cell path and its length in cell units. Raises
    UnreachableError when the goal cannot be reached.
    """
    shape = free.shape
    if not free[start] or not free[goal]:
        raise ValueError("start or goal cell is occupied")
    steps = [tuple(d) for d in NEIGHBORS]
    lengths = STEP_LENGTHS.tolist()
    g_cost = {start: 0.0}
    parent = {start: None}
    closed = set()
    counter = itertools.count()
    gx, gy, gz = goal

    def h(x, y, z):
        return ((x - gx) ** 2 + (y - gy) ** 2 + (z - gz) ** 2) ** 0.5

    # straight-line heuristic; ties on f go to the deeper node
    heap = [(h(*start), 0.0, next(counter), start)]
    while heap:
        _, neg_g, _, node = heapq.heappop(heap)
        g = -neg_g
        if node in closed:
            continue
        if node == goal:
            path = [node]
            while parent[path[-1]] is not None:
                path.append(parent[path[-1]])
            return path[::-1], g
        closed.add(node)
        x, y, z = node
        for (dx, dy, dz), length in zip(steps, lengths):
            nx, ny, nz = x + dx, y + dy, z + dz
            if not (0 <= nx < shape[0] and 0 <= ny < shape[1] and 0 <= nz < shape[2]):
                continue
            nb = (nx, ny, nz)
            if nb in closed or not free[nb]:
                continue
            ng = g + length
            if ng < g_cost.get(nb, np.inf):
                g_cost[nb] = ng
                parent[nb] = node
                heapq.heappush(heap, (ng + h(nx, ny, nz), -ng, next(counter), nb))
    raise UnreachableError("goal not reachable on the occupancy grid")


def segment_is_clear(env: Environment, a, b, margin: float, step: float | None = None) -> bool:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    step = step or env.grid_resolution / 4
    n = max(int(np.ceil(np.linalg.norm(b - a) / step)), 1)
    pts = a + np.linspace(0.0, 1.0, n + 1)[:, None] * (b - a)
    if not np.all(env.contains(pts)):
        return False
    if not env.obstacles:
        return True
    d, _ = env.clearance_and_gradient(pts)
    return bool(np.all(d >= margin))


def shortcut_path(env: Environment, path, margin: float) -> list[np.ndarray]:
    """Greedy line-of-sight simplification: jump to the farthest visible waypoint."""
    pts = [np.asarray(p, dtype=float) for p in path]
    if len(pts) <= 2:
        return pts
    out = [pts[0]]
    i = 0
    while i < len(pts) - 1:
        j = len(pts) - 1
        while j > i + 1 and not segment_is_clear(env, pts[i], pts[j], margin):
            j -= 1
        out.append(pts[j])
        i = j
    return out


def _nearest_free_cell(grid: OccupancyGrid, point) -> tuple | None:
    base = np.array(grid.index(point))
    best, best_d = None, np.inf
    for d in itertools.product((-1, 0, 1), repeat=3):
        k = base + d
        if np.any(k < 0) or np.any(k >= grid.free.shape):
            continue
        k = tuple(int(x) for x in k)
        if grid.free[k]:
            dist = np.linalg.norm(grid.center(k) - point)
            if dist < best_d:
                best, best_d = k, dist
    return best


def astar_initial_path(env: Environment, start, goal, margin: float = 0.3) -> list[np.ndarray]:
    """Collision-free waypoint path from start to goal.

    Searches the occupancy grid inflated by ``margin`` and shortcuts the
    result by line of sight. Every returned waypoint has clearance >= margin.
    """
    start = np.asarray(start, dtype=float)
    goal = np.asarray(goal, dtype=float)
    for name, p in (("start", start), ("goal", goal)):
        if not env.contains(p):
            raise BlockedEndpointError(f"{name} {p.tolist()} outside scene bounds")
        if env.obstacles and env.clearance(p) < margin:
            raise BlockedEndpointError(f"{name} {p.tolist()} is blocked (clearance below margin {margin})")
    if segment_is_clear(env, start, goal, margin):
        return [start, goal]
    grid = occupancy_grid(env, margin)
    s_cell = _nearest_free_cell(grid, start)
    g_cell = _nearest_free_cell(grid, goal)
    if s_cell is None or g_cell is None:
        raise ValueError("start or goal has no free grid cell nearby")
    cells, _ = grid_astar(grid.free, s_cell, g_cell)
    raw = [start] + [grid.center(c) for c in cells] + [goal]
    return shortcut_path(env, raw, margin)
