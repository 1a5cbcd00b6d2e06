"""Independent reference implementations used by the tests.

Nothing here calls into the code under test except for plain data types.
"""

import itertools
import math

import numpy as np
from scipy.sparse import lil_matrix
from scipy.sparse.csgraph import dijkstra


# ---------------------------------------------------------------- splines


def de_boor(control_points, knot_span, t, degree=3, start_time=0.0):
    """Cox-de Boor evaluation of a uniform B-spline with implicit knots t_j = start + (j - p) dt."""
    q = np.asarray(control_points, dtype=float)
    if q.ndim == 1:
        q = q[:, None]
    n = len(q) - 1
    p = degree
    knots = start_time + (np.arange(n + p + 2) - p) * knot_span
    k = int(np.searchsorted(knots, t, side="right") - 1)
    k = min(max(k, p), n)
    d = [q[j + k - p].copy() for j in range(p + 1)]
    for r in range(1, p + 1):
        for j in range(p, r - 1, -1):
            i = j + k - p
            alpha = (t - knots[i]) / (knots[i + p + 1 - r] - knots[i])
            d[j] = (1.0 - alpha) * d[j - 1] + alpha * d[j]
    return d[p]


def central_difference(fun, x, h=1e-6):
    """Gradient of scalar ``fun`` at array ``x`` by central differences."""
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp = x.copy()
        xm = x.copy()
        xp[idx] += h
        xm[idx] -= h
        grad[idx] = (fun(xp) - fun(xm)) / (2 * h)
    return grad


def relative_error(a, b, floor=1e-8):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), floor))


# ---------------------------------------------------------------- visibility


def frustum_visible(position, n1, n2, n3, feature, alpha_h, alpha_v, d_max):
    """Visibility from componentwise tangents in camera axes (no angles)."""
    b = np.asarray(feature, dtype=float) - np.asarray(position, dtype=float)
    fwd, lat, up = b @ n2, b @ n3, b @ n1
    if fwd <= 0.0 or math.sqrt(b @ b) > d_max:
        return False
    return abs(up) <= math.tan(alpha_v / 2) * math.hypot(fwd, lat) and abs(lat) <= math.tan(alpha_h / 2) * math.hypot(fwd, up)


def sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


# ---------------------------------------------------------------- environment


def box_distance_by_sampling(point, lo, hi, grid=41, rounds=10):
    """Signed distance to an axis-aligned box by zooming grid searches over its six faces."""
    point = np.asarray(point, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    best = np.inf
    for axis in range(3):
        a, b = [k for k in range(3) if k != axis]
        for fixed in (lo[axis], hi[axis]):
            u_lo, u_hi = lo[a], hi[a]
            w_lo, w_hi = lo[b], hi[b]
            face_best = np.inf
            for _ in range(rounds):
                us = np.linspace(u_lo, u_hi, grid)
                ws = np.linspace(w_lo, w_hi, grid)
                uu, ww = np.meshgrid(us, ws, indexing="ij")
                pts = np.zeros(uu.shape + (3,))
                pts[..., axis] = fixed
                pts[..., a] = uu
                pts[..., b] = ww
                d = np.linalg.norm(pts - point, axis=-1)
                i, j = np.unravel_index(np.argmin(d), d.shape)
                face_best = min(face_best, d[i, j])
                du = (u_hi - u_lo) / (grid - 1)
                dw = (w_hi - w_lo) / (grid - 1)
                u_lo, u_hi = max(lo[a], us[i] - du), min(hi[a], us[i] + du)
                w_lo, w_hi = max(lo[b], ws[j] - dw), min(hi[b], ws[j] + dw)
            best = min(best, face_best)
    inside = bool(np.all(point > lo) and np.all(point < hi))
    return -best if inside else best


def depth_scan(p_a, p_b, features, d_max):
    out = []
    for j, f in enumerate(features):
        da = math.dist(f, p_a)
        db = math.dist(f, p_b)
        if da <= d_max and db <= d_max:
            out.append(j)
    return out


def step_counts(cells):
    """Counts of axis, face-diagonal and space-diagonal steps along a cell path."""
    counts = [0, 0, 0]
    for a, b in zip(cells[:-1], cells[1:]):
        k = sum(abs(x - y) for x, y in zip(a, b))
        counts[k - 1] += 1
    return tuple(counts)


def grid_dijkstra(free, start, goal):
    """Shortest 26-connected path on a boolean grid with scipy's Dijkstra.

    Returns (step counts of the path, cost) or (None, inf) when unreachable.
    """
    shape = free.shape
    n = free.size
    graph = lil_matrix((n, n))
    flat = np.arange(n).reshape(shape)
    for idx in zip(*np.nonzero(free)):
        for d in itertools.product((-1, 0, 1), repeat=3):
            if d == (0, 0, 0):
                continue
            nb = tuple(i + di for i, di in zip(idx, d))
            if all(0 <= nb[k] < shape[k] for k in range(3)) and free[nb]:
                graph[flat[idx], flat[nb]] = math.sqrt(sum(x * x for x in d))
    dist, pred = dijkstra(graph.tocsr(), indices=flat[start], return_predecessors=True)
    g = flat[goal]
    if not np.isfinite(dist[g]):
        return None, math.inf
    path = [g]
    while path[-1] != flat[start]:
        path.append(pred[path[-1]])
    cells = [tuple(int(c) for c in np.unravel_index(i, shape)) for i in path[::-1]]
    return step_counts(cells), float(dist[g])


def canonical_cost(counts):
    return counts[0] + counts[1] * math.sqrt(2.0) + counts[2] * math.sqrt(3.0)


# ---------------------------------------------------------------- yaw search


def enumerate_yaw_paths(samples, gains, adjacency):
    """Best (gain, total change, index path) over every rate-feasible path by brute force."""
    s = len(samples)
    layers = len(gains) + 1
    best = None
    for path in itertools.product(range(s), repeat=layers):
        if not all(adjacency[i][path[i], path[i + 1]] for i in range(layers - 1)):
            continue
        total = 0.0
        change = 0.0
        for i in range(layers - 1):
            total = total + gains[i][path[i], path[i + 1]]
            d = (samples[path[i + 1]] - samples[path[i]] + math.pi) % (2 * math.pi) - math.pi
            change = change + abs(d)
        key = (-total, change, path)
        if best is None or key < best:
            best = key
    if best is None:
        return None
    return -best[0], best[1], best[2]


def enumerate_best_gain(gains, adjacency):
    """Best total gain over every rate-feasible path, vectorised; None if no path exists.

    Each path total is accumulated left to right, one layer at a time, and
    the paths are split by their first index to bound memory.
    """
    s = gains[0].shape[0]
    best = -np.inf
    for first in range(s):
        totals = np.zeros(1)
        last = np.array([first])
        for g, adj in zip(gains, adjacency):
            step = np.where(adj[last], g[last], -np.inf)  # (paths, s)
            totals = (totals[:, None] + step).ravel()
            last = np.tile(np.arange(s), len(last))
        best = max(best, float(totals.max()))
    return None if best == -np.inf else best
