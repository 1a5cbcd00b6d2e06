"""Uniform B-spline curves of arbitrary dimension.

Curves are evaluated span by span with the constant basis matrix of a
uniform B-spline::

    C(t) = [1, u, u^2, ..., u^p] @ M_{p+1} @ [Q_s, ..., Q_{s+p}]

The knot vector is implicit: the first knot of the valid domain sits at
``start_time`` and every further knot is ``knot_span`` seconds later.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Basis matrices for degrees 0..3, rows indexed by the power of u.
BASIS_MATRICES = {
    0: np.array([[1.0]]),
    1: np.array([[1.0, 0.0], [-1.0, 1.0]]),
    2: np.array([[1.0, 1.0, 0.0], [-2.0, 2.0, 0.0], [1.0, -2.0, 1.0]]) / 2.0,
    3: np.array(
        [
            [1.0, 4.0, 1.0, 0.0],
            [-3.0, 0.0, 3.0, 0.0],
            [3.0, -6.0, 3.0, 0.0],
            [-1.0, 3.0, -3.0, 1.0],
        ]
    )
    / 6.0,
}


class SplineDomainError(ValueError):
    """Raised when a curve is evaluated outside its parameter domain."""


def basis_matrix(degree: int) -> np.ndarray:
    if degree not in BASIS_MATRICES:
        raise ValueError(f"basis matrix only available for degrees 0-3, got {degree}")
    return BASIS_MATRICES[degree]


@dataclass(frozen=True)
class UniformBSpline:
    """A uniform B-spline curve.

    Attributes:
        control_points: (n+1, d) array of control points.
        knot_span: uniform knot spacing in seconds.
        degree: polynomial degree p.
        start_time: time of the first knot of the valid domain (t_p).
    """

    control_points: np.ndarray
    knot_span: float
    degree: int = 3
    start_time: float = 0.0

    def __post_init__(self):
        q = np.array(self.control_points, dtype=float)
        if q.ndim == 1:
            q = q[:, None]
        if q.ndim != 2 or q.shape[1] < 1:
            raise ValueError("control points must be a (n+1, d) array with d >= 1")
        if not 0 <= self.degree <= 3:
            raise ValueError(f"degree must be in 0..3, got {self.degree}")
        if q.shape[0] < self.degree + 1:
            raise ValueError(
                f"degree {self.degree} needs at least {self.degree + 1} control points, got {q.shape[0]}"
            )
        if not self.knot_span > 0:
            raise ValueError(f"knot span must be positive, got {self.knot_span}")
        q.setflags(write=False)
        object.__setattr__(self, "control_points", q)
        object.__setattr__(self, "knot_span", float(self.knot_span))
        object.__setattr__(self, "start_time", float(self.start_time))

    @property
    def dim(self) -> int:
        return self.control_points.shape[1]

    @property
    def num_spans(self) -> int:
        """Number of spans in the valid domain, m - 2p = n - p + 1."""
        return self.control_points.shape[0] - self.degree

    @property
    def end_time(self) -> float:
        return self.start_time + self.num_spans * self.knot_span

    @property
    def duration(self) -> float:
        return self.num_spans * self.knot_span

    @property
    def domain(self) -> tuple[float, float]:
        return self.start_time, self.end_time

    def knot_times(self) -> np.ndarray:
        return self.start_time + self.knot_span * np.arange(self.num_spans + 1)

    def locate(self, t: float) -> tuple[int, float]:
        """Return the span index and local parameter u in [0, 1] for time t."""
        lo, hi = self.domain
        tol = 1e-12 * max(1.0, abs(lo), abs(hi))
        if not (lo - tol <= t <= hi + tol):
            raise SplineDomainError(f"t={t} outside the valid interval [{lo}, {hi}]")
        s = (t - self.start_time) / self.knot_span
        span = min(max(int(np.floor(s)), 0), self.num_spans - 1)
        u = min(max(s - span, 0.0), 1.0)
        return span, u

    def __call__(self, t) -> np.ndarray:
        return evaluate(self, t)


def evaluate(curve: UniformBSpline, t) -> np.ndarray:
    """Evaluate the curve at time ``t`` (scalar) or at each time of a 1-D array.

    Returns a (d,) point for scalar input and a (len(t), d) array otherwise.
    """
    p = curve.degree
    m = basis_matrix(p)
    q = curve.control_points
    if np.ndim(t) == 0:
        span, u = curve.locate(float(t))
        powers = u ** np.arange(p + 1)
        return powers @ m @ q[span : span + p + 1]
    times = np.asarray(t, dtype=float)
    out = np.empty((times.size, curve.dim))
    for k, tk in enumerate(times.ravel()):
        span, u = curve.locate(float(tk))
        out[k] = (u ** np.arange(p + 1)) @ m @ q[span : span + p + 1]
    return out


def derivative(curve: UniformBSpline) -> UniformBSpline:
    """Time derivative as a uniform B-spline of degree p-1 on the same domain."""
    if curve.degree < 1:
        raise NotImplementedError("cannot differentiate a degree-0 B-spline")
    q = curve.control_points
    return UniformBSpline(
        (q[1:] - q[:-1]) / curve.knot_span,
        curve.knot_span,
        degree=curve.degree - 1,
        start_time=curve.start_time,
    )


def knot_points(curve: UniformBSpline) -> np.ndarray:
    """Curve values at every knot of the domain, shape (num_spans + 1, d)."""
    p = curve.degree
    q = curve.control_points
    if p == 0:
        # closed domain: the last knot takes the last span's value
        return np.vstack([q, q[-1:]])
    # at u=0 only the first p entries of the basis matrix's first row are nonzero
    row = basis_matrix(p)[0]
    n_knots = curve.num_spans + 1
    pts = np.zeros((n_knots, curve.dim))
    for k in range(p):
        pts += row[k] * q[k : k + n_knots]
    return pts


def boundary_control_points(position, velocity, acceleration, knot_span: float) -> np.ndarray:
    """Three cubic control points realising a boundary position/velocity/acceleration.

    Returned in order (Q_s, Q_{s+1}, Q_{s+2}) for the knot at u=0 of span s.
    """
    pos = np.asarray(position, dtype=float)
    vel = np.asarray(velocity, dtype=float)
    acc = np.asarray(acceleration, dtype=float)
    mid = pos - acc * knot_span**2 / 6.0
    base = 3.0 * pos - 2.0 * mid
    return np.stack([base - vel * knot_span, mid, base + vel * knot_span])


def _chord_parameters(waypoints: np.ndarray) -> np.ndarray:
    seg = np.linalg.norm(np.diff(waypoints, axis=0), axis=1)
    total = seg.sum()
    if total <= 1e-12:
        return np.linspace(0.0, 1.0, len(waypoints))
    return np.concatenate([[0.0], np.cumsum(seg) / total])


def fit_waypoints(
    waypoints,
    knot_span: float,
    start_velocity=None,
    end_velocity=None,
    start_acceleration=None,
    end_acceleration=None,
    num_spans: int | None = None,
    smoothing: float = 1e-6,
) -> tuple[UniformBSpline, float]:
    """Least-squares cubic fit to an ordered waypoint path.

    The first and last waypoints are the boundary positions. Together with the
    boundary velocities and accelerations (zero when omitted) they pin the first
    and last three control points exactly; the remaining control points are the
    least-squares solution that brings the curve through the interior waypoints,
    which are placed at chord-length parameters across the domain. A small jerk
    term (``smoothing``) keeps the system well posed when there are fewer
    waypoints than free control points; it vanishes on straight, uniformly
    sampled paths, so linear precision is preserved.

    Args:
        waypoints: (K+1, d) ordered points, K >= 1.
        knot_span: knot spacing in seconds.
        num_spans: number of spans of the result; defaults to max(K, 3) so that
            uniformly spaced waypoints land on knots.

    Returns:
        The fitted curve and the maximum waypoint residual (Euclidean).
    """
    w = np.asarray(waypoints, dtype=float)
    if w.ndim == 1:
        w = w[:, None]
    if len(w) < 2:
        raise ValueError(f"need at least 2 waypoints, got {len(w)}")
    if not knot_span > 0:
        raise ValueError(f"knot span must be positive, got {knot_span}")
    d = w.shape[1]
    zero = np.zeros(d)

    def _vec(x):
        return zero if x is None else np.broadcast_to(np.asarray(x, dtype=float), (d,))

    k = len(w) - 1
    spans = max(k, 3) if num_spans is None else int(num_spans)
    if spans < 3:
        raise ValueError("a boundary-constrained cubic fit needs at least 3 spans")
    n_ctrl = spans + 3

    head = boundary_control_points(w[0], _vec(start_velocity), _vec(start_acceleration), knot_span)
    tail = boundary_control_points(w[-1], _vec(end_velocity), _vec(end_acceleration), knot_span)
    fixed = np.zeros((n_ctrl, d))
    fixed[:3] = head
    fixed[-3:] = tail
    free_idx = np.arange(3, n_ctrl - 3)

    # interior waypoint observation rows
    s = _chord_parameters(w)[1:-1] * spans
    rows = np.zeros((len(s), n_ctrl))
    m3 = basis_matrix(3)
    for r, sr in enumerate(s):
        span = min(int(np.floor(sr)), spans - 1)
        u = sr - span
        rows[r, span : span + 4] = (u ** np.arange(4)) @ m3
    target = w[1:-1]

    if free_idx.size:
        jerk = np.zeros((spans, n_ctrl))
        for i in range(spans):
            jerk[i, i : i + 4] = [-1.0, 3.0, -3.0, 1.0]
        scale = np.sqrt(smoothing)
        a_full = np.vstack([rows, scale * jerk])
        rhs_full = np.vstack([target, np.zeros((spans, d))]) - a_full @ fixed
        sol, *_ = np.linalg.lstsq(a_full[:, free_idx], rhs_full, rcond=None)
        fixed[free_idx] = sol

    curve = UniformBSpline(fixed, knot_span, degree=3)
    residual = float(np.max(np.linalg.norm(rows @ fixed - target, axis=1))) if len(target) else 0.0
    return curve, residual
