"""Position trajectory optimisation.

The total cost is a weighted sum of

* vertical covisibility: keeps features inside the vertical FoV band of
  adjacent knots, via a quadratic band penalty on theta1;
* parallax: penalises knot-to-knot parallax above nu * rho_max * dt, each
  (knot, feature) pair weighted by a sharpened vertical visibility;
* smoothness (integrated squared jerk), safety (clearance hinge), time
  (duration) and dynamic feasibility (per-axis velocity/acceleration hinges).

Every term reports its gradient with respect to all control points and the
knot span. Optimisation ties the first and last three control points to the
boundary states (they move only through the knot span, and not at all for
rest-to-rest boundaries) and bounds the knot span from below.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .environment import Environment, OutOfBoundsError, astar_initial_path, depth_mask, near_mask
from .frames import GRAVITY, DegenerateFrameError
from .optim import minimize_lbfgs
from .splines import UniformBSpline, boundary_control_points, fit_waypoints
from .visibility import FovSpec, VisibilityParams, parallax_pairs, v1_prime_weight

logger = logging.getLogger(__name__)

FIXED_ENDS = 3


@dataclass(frozen=True)
class PositionPlanConfig:
    lambda_vc: float = 0.1
    lambda_para: float = 2.0
    lambda_smooth: float = 1.0
    lambda_safe: float = 50.0
    lambda_time: float = 2.0
    lambda_feas: float = 20.0
    a1: float = 10.0
    a2: float = 20.0
    nu: float = 20.0
    rho_max: float = np.deg2rad(10.0)
    v_max: float = 2.0
    a_max: float = 2.5
    d_safe: float = 0.6
    dt_min: float = 0.05
    init_knot_span: float = 0.8
    init_speed_ratio: float = 0.8
    init_smoothing: float = 1e-2
    margin: float = 0.3
    gravity: float = GRAVITY
    weight_refresh: int = 2
    max_iterations: int = 50
    gradient_tolerance: float = 1e-5
    relative_cost_tolerance: float = 1e-5

    def __post_init__(self):
        weights = [self.lambda_vc, self.lambda_para, self.lambda_smooth, self.lambda_safe, self.lambda_time, self.lambda_feas]
        if min(weights) < 0:
            raise ValueError("cost weights must be non-negative")
        if min(self.a1, self.a2, self.nu) <= 0:
            raise ValueError("a1, a2 and nu must be positive")
        if not 0 < self.rho_max < np.pi:
            raise ValueError("rho_max must lie in (0, pi)")
        if min(self.v_max, self.a_max, self.d_safe, self.dt_min, self.init_knot_span) <= 0:
            raise ValueError("v_max, a_max, d_safe, dt_min and init_knot_span must be positive")

    def perception_agnostic(self) -> "PositionPlanConfig":
        return replace(self, lambda_vc=0.0, lambda_para=0.0)


@dataclass
class CostReport:
    value: float
    grad_control: np.ndarray
    grad_dt: float

    def __add__(self, other: "CostReport") -> "CostReport":
        return CostReport(self.value + other.value, self.grad_control + other.grad_control, self.grad_dt + other.grad_dt)

    def scaled(self, weight: float) -> "CostReport":
        return CostReport(weight * self.value, weight * self.grad_control, weight * self.grad_dt)


class KnotKinematics(NamedTuple):
    positions: np.ndarray
    velocities: np.ndarray
    accelerations: np.ndarray


def knot_kinematics(q: np.ndarray, dt: float) -> KnotKinematics:
    """Knot positions, velocities and accelerations of a cubic from its control points."""
    return KnotKinematics(
        (q[:-2] + 4.0 * q[1:-1] + q[2:]) / 6.0,
        (q[2:] - q[:-2]) / (2.0 * dt),
        (q[:-2] - 2.0 * q[1:-1] + q[2:]) / dt**2,
    )


def _scatter_knot_gradients(n_ctrl, dt, acc, g_pos=None, g_acc=None):
    grad = np.zeros((n_ctrl, 3))
    grad_dt = 0.0
    if g_pos is not None:
        grad[:-2] += g_pos / 6.0
        grad[1:-1] += 4.0 * g_pos / 6.0
        grad[2:] += g_pos / 6.0
    if g_acc is not None:
        grad[:-2] += g_acc / dt**2
        grad[1:-1] -= 2.0 * g_acc / dt**2
        grad[2:] += g_acc / dt**2
        grad_dt = float(np.sum(g_acc * (-2.0 * acc / dt)))
    return grad, grad_dt


def _theta1_terms(pos, acc, features, gravity, ki=None, fj=None):
    """theta1 for (knot, feature) pairs with gradients wrt knot position and acceleration.

    With index arrays ``ki``, ``fj`` only those pairs are evaluated and the
    results are flat (M,) / (M, 3); otherwise every pair is, shaped (K, F).
    """
    if ki is None:
        shape = (len(pos), len(features))
        ki, fj = (ix.ravel() for ix in np.indices(shape))
    else:
        shape = None
    f = acc.copy()
    f[:, 2] += gravity
    f_norm = np.linalg.norm(f, axis=1)
    if np.any(f_norm <= 1e-6):
        raise DegenerateFrameError("|a - g| vanishes at a knot")
    n1 = (f / f_norm[:, None])[ki]
    b = features[fj] - pos[ki]
    b_norm = np.sqrt(np.einsum("mi,mi->m", b, b))
    if np.any(b_norm <= 1e-9):
        raise ValueError("feature coincides with a knot position")
    bh = b / b_norm[:, None]
    c = np.clip(np.einsum("mi,mi->m", n1, bh), -1.0, 1.0)
    theta = np.arccos(c)
    dtheta_dc = -1.0 / np.maximum(np.sqrt(1.0 - c * c), 1e-12)
    dc_dpos = -(n1 - c[:, None] * bh) / b_norm[:, None]
    dc_dacc = (bh - c[:, None] * n1) / f_norm[ki, None]
    dth_dp = dtheta_dc[:, None] * dc_dpos
    dth_da = dtheta_dc[:, None] * dc_dacc
    if shape is not None:
        return theta.reshape(shape), dth_dp.reshape(*shape, 3), dth_da.reshape(*shape, 3)
    return theta, dth_dp, dth_da


def _sum_by_knot(ki, values, n_knots):
    """Sum (M, 3) rows into (n_knots, 3) by knot index."""
    return np.stack([np.bincount(ki, weights=values[:, k], minlength=n_knots) for k in range(3)], axis=1)


def vertical_band(fov: FovSpec) -> tuple[float, float]:
    """theta1 interval in which a feature is vertically visible."""
    return (np.pi - fov.alpha_v) / 2, (np.pi + fov.alpha_v) / 2


def band_penalty(theta, lo, hi, a1):
    """Quadratic penalty outside [lo, hi] and its derivative."""
    below = theta < lo
    above = theta > hi
    excess = np.where(below, theta - lo, np.where(above, theta - hi, 0.0))
    return a1 * excess**2, 2.0 * a1 * excess


def cost_vertical_covisibility(
    curve: UniformBSpline, env: Environment, fov: FovSpec, a1: float = 10.0, gravity: float = GRAVITY
) -> CostReport:
    q, dt = curve.control_points, curve.knot_span
    kin = knot_kinematics(q, dt)
    n_ctrl = q.shape[0]
    if len(env.features) == 0:
        return CostReport(0.0, np.zeros_like(q), 0.0)
    n_knots = len(kin.positions)
    near = near_mask(kin.positions, env.features, fov.d_max)
    mask = near[:-1] & near[1:]
    # only pairs within depth can enter a masked knot pair
    ki, fj = np.nonzero(near)
    theta, dth_dp, dth_da = _theta1_terms(kin.positions, kin.accelerations, env.features, gravity, ki, fj)
    lo, hi = vertical_band(fov)
    g_flat, dg_flat = band_penalty(theta, lo, hi, a1)
    g = np.zeros(near.shape)
    dg = np.zeros(near.shape)
    g[ki, fj] = g_flat
    dg[ki, fj] = dg_flat
    h = ((1.0 + g[:-1]) * (1.0 + g[1:]) - 1.0) * mask
    d_theta = np.zeros(near.shape)
    d_theta[:-1] += mask * (1.0 + g[1:]) * dg[:-1]
    d_theta[1:] += mask * (1.0 + g[:-1]) * dg[1:]
    w = d_theta[ki, fj][:, None]
    g_pos = _sum_by_knot(ki, w * dth_dp, n_knots)
    g_acc = _sum_by_knot(ki, w * dth_da, n_knots)
    grad, grad_dt = _scatter_knot_gradients(n_ctrl, dt, kin.accelerations, g_pos, g_acc)
    return CostReport(float(np.sum(h)), grad, grad_dt)


def parallax_weights(curve: UniformBSpline, env: Environment, fov: FovSpec, gravity: float = GRAVITY) -> np.ndarray:
    """Weights v1'(theta1(i, j)) for every knot pair start i and feature j, shape (K-1, F)."""
    kin = knot_kinematics(curve.control_points, curve.knot_span)
    if len(env.features) == 0:
        return np.zeros((len(kin.positions) - 1, 0))
    theta, _, _ = _theta1_terms(kin.positions, kin.accelerations, env.features, gravity)
    return v1_prime_weight(theta[:-1], fov.alpha_v)


def parallax_threshold(config: PositionPlanConfig, dt: float) -> float:
    return config.nu * config.rho_max * dt


def cost_parallax(
    curve: UniformBSpline,
    env: Environment,
    fov: FovSpec,
    config: PositionPlanConfig,
    weights: np.ndarray | None = None,
) -> CostReport:
    """Weighted parallax penalty.

    ``weights`` may be supplied (shape (K-1, F)) to hold them fixed; otherwise
    they are computed from the curve. Either way no gradient flows through
    them.
    """
    q, dt = curve.control_points, curve.knot_span
    kin = knot_kinematics(q, dt)
    if len(env.features) == 0:
        return CostReport(0.0, np.zeros_like(q), 0.0)
    if weights is None:
        weights = parallax_weights(curve, env, fov, config.gravity)
    pos = kin.positions
    ki, fj = np.nonzero(depth_mask(pos, env.features, fov.d_max))
    rho, d1, d2 = parallax_pairs(pos[ki], pos[ki + 1], env.features[fj])
    thr = parallax_threshold(config, dt)
    excess = np.maximum(rho - thr, 0.0)
    wts = weights[ki, fj]
    value = float(np.sum(wts * config.a2 * excess**2))
    d_rho = 2.0 * config.a2 * wts * excess
    g_pos = _sum_by_knot(ki, d_rho[:, None] * d1, len(pos)) + _sum_by_knot(ki + 1, d_rho[:, None] * d2, len(pos))
    grad, _ = _scatter_knot_gradients(q.shape[0], dt, kin.accelerations, g_pos, None)
    grad_dt = float(-np.sum(d_rho) * config.nu * config.rho_max)
    return CostReport(value, grad, grad_dt)


JERK_STENCIL = np.array([-1.0, 3.0, -3.0, 1.0])


def cost_smoothness(curve: UniformBSpline) -> CostReport:
    """Exact integral of squared jerk of a cubic: sum |third difference|^2 / dt^5."""
    if curve.degree != 3:
        raise ValueError("smoothness cost is defined for cubic curves")
    q, dt = curve.control_points, curve.knot_span
    d3 = q[3:] - 3.0 * q[2:-1] + 3.0 * q[1:-2] - q[:-3]
    value = float(np.sum(d3**2)) / dt**5
    grad = np.zeros_like(q)
    coeff = 2.0 * d3 / dt**5
    for k, c in enumerate(JERK_STENCIL):
        grad[k : k + len(d3)] += c * coeff
    return CostReport(value, grad, -5.0 * value / dt)


def cost_safety(curve: UniformBSpline, env: Environment, d_safe: float) -> CostReport:
    q, dt = curve.control_points, curve.knot_span
    kin = knot_kinematics(q, dt)
    dist, grad_d = env.clearance_and_gradient(kin.positions)
    pen = np.maximum(d_safe - dist, 0.0)
    g_pos = -2.0 * pen[:, None] * grad_d
    grad, _ = _scatter_knot_gradients(q.shape[0], dt, kin.accelerations, g_pos, None)
    return CostReport(float(np.sum(pen**2)), grad, 0.0)


def cost_time(curve: UniformBSpline) -> CostReport:
    return CostReport(curve.num_spans * curve.knot_span, np.zeros_like(curve.control_points), float(curve.num_spans))


def cost_feasibility(curve: UniformBSpline, v_max: float, a_max: float) -> CostReport:
    """Per-axis hinge on velocity and acceleration control points."""
    q, dt = curve.control_points, curve.knot_span
    if not dt > 0:
        raise ValueError("knot span must be positive")
    v_lim = v_max / np.sqrt(3.0)
    a_lim = a_max / np.sqrt(3.0)
    vel = (q[1:] - q[:-1]) / dt
    acc = (q[2:] - 2.0 * q[1:-1] + q[:-2]) / dt**2
    ev = np.maximum(np.abs(vel) - v_lim, 0.0)
    ea = np.maximum(np.abs(acc) - a_lim, 0.0)
    value = float(np.sum(ev**2) + np.sum(ea**2))
    dv = 2.0 * ev * np.sign(vel)
    da = 2.0 * ea * np.sign(acc)
    grad = np.zeros_like(q)
    grad[1:] += dv / dt
    grad[:-1] -= dv / dt
    grad[2:] += da / dt**2
    grad[1:-1] -= 2.0 * da / dt**2
    grad[:-2] += da / dt**2
    grad_dt = float(np.sum(dv * (-vel / dt)) + np.sum(da * (-2.0 * acc / dt)))
    return CostReport(value, grad, grad_dt)


def total_cost(
    curve: UniformBSpline,
    env: Environment,
    fov: FovSpec,
    config: PositionPlanConfig,
    weights: np.ndarray | None = None,
) -> tuple[CostReport, dict]:
    """Weighted total cost and the unweighted value of each term."""
    terms = {}
    total = CostReport(0.0, np.zeros_like(curve.control_points), 0.0)
    parts = [
        ("smooth", config.lambda_smooth, lambda: cost_smoothness(curve)),
        ("safe", config.lambda_safe, lambda: cost_safety(curve, env, config.d_safe)),
        ("time", config.lambda_time, lambda: cost_time(curve)),
        ("feas", config.lambda_feas, lambda: cost_feasibility(curve, config.v_max, config.a_max)),
        ("vc", config.lambda_vc, lambda: cost_vertical_covisibility(curve, env, fov, config.a1, config.gravity)),
        ("para", config.lambda_para, lambda: cost_parallax(curve, env, fov, config, weights)),
    ]
    for name, weight, fn in parts:
        if weight == 0.0 and name in ("vc", "para"):
            terms[name] = 0.0
            continue
        report = fn()
        terms[name] = report.value
        total = total + report.scaled(weight)
    return total, terms


class BoundaryState(NamedTuple):
    position: np.ndarray
    velocity: np.ndarray = np.zeros(3)
    acceleration: np.ndarray = np.zeros(3)


def _as_boundary(state) -> BoundaryState:
    if isinstance(state, BoundaryState):
        return BoundaryState(*(np.asarray(x, dtype=float) for x in state))
    return BoundaryState(np.asarray(state, dtype=float), np.zeros(3), np.zeros(3))


@dataclass
class PositionPlanResult:
    curve: UniformBSpline
    initial_curve: UniformBSpline
    initial_cost: float
    final_cost: float
    terms: dict
    initial_terms: dict
    trace: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = True
    warning: str | None = None
    path: list = field(default_factory=list)


def resample_path(path, spacing: float) -> np.ndarray:
    """Points evenly spaced in arc length along a polyline (at least 4)."""
    pts = np.asarray(path, dtype=float)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    total = s[-1]
    n = max(int(np.ceil(total / spacing)), 3)
    targets = np.linspace(0.0, total, n + 1)
    return np.stack([np.interp(targets, s, pts[:, k]) for k in range(pts.shape[1])], axis=1)


def initial_curve(env: Environment, start: BoundaryState, goal: BoundaryState, config: PositionPlanConfig):
    path = astar_initial_path(env, start.position, goal.position, config.margin)
    dt = config.init_knot_span
    waypoints = resample_path(path, config.init_speed_ratio * config.v_max * dt)
    curve, _ = fit_waypoints(
        waypoints, dt, start.velocity, goal.velocity, start.acceleration, goal.acceleration,
        smoothing=config.init_smoothing,
    )
    if curve.control_points.shape[0] < 2 * FIXED_ENDS + 1:
        raise ValueError("initial curve too short to optimise")
    return curve, path


def optimize_position(
    env: Environment,
    start_state,
    goal_state,
    fov: FovSpec,
    params: VisibilityParams | None = None,
    config: PositionPlanConfig | None = None,
) -> PositionPlanResult:
    """Fit an initial curve to an A* path and optimise control points and knot span.

    The returned curve is the best iterate under the full cost (with live
    parallax weights), so its cost never exceeds the initial curve's.
    Nonconvergence sets ``converged=False`` and a warning instead of raising.
    """
    config = config or PositionPlanConfig()
    start = _as_boundary(start_state)
    goal = _as_boundary(goal_state)
    curve0, path = initial_curve(env, start, goal, config)
    q0 = curve0.control_points
    n_ctrl = q0.shape[0]
    free = slice(FIXED_ENDS, n_ctrl - FIXED_ENDS)
    n_free = n_ctrl - 2 * FIXED_ENDS

    def ends(dt):
        # boundary control points follow the knot span so boundary velocity and acceleration hold
        head = boundary_control_points(start.position, start.velocity, start.acceleration, dt)
        tail = boundary_control_points(goal.position, goal.velocity, goal.acceleration, dt)
        return head, tail

    def ends_dt(dt):
        out = []
        for b in (start, goal):
            d_mid = -b.acceleration * dt / 3.0
            d_base = -2.0 * d_mid
            out.append(np.stack([d_base - b.velocity, d_mid, d_base + b.velocity]))
        return out

    def unpack(x):
        q = q0.copy()
        q[free] = x[:-1].reshape(n_free, 3)
        q[:FIXED_ENDS], q[-FIXED_ENDS:] = ends(x[-1])
        return UniformBSpline(q, x[-1])

    def evaluate_full(curve):
        report, terms = total_cost(curve, env, fov, config)
        return report.value, terms

    init_cost, init_terms = evaluate_full(curve0)
    best_curve, best_cost, best_terms = curve0, init_cost, init_terms
    trace = [init_cost]
    iterations = 0
    converged = True
    warning = None
    lower = np.full(n_free * 3 + 1, -np.inf)
    lower[-1] = config.dt_min
    current = curve0

    for _ in range(max(config.weight_refresh, 1)):
        weights = parallax_weights(current, env, fov, config.gravity) if config.lambda_para > 0 else None

        def objective(x, weights=weights):
            try:
                report, _ = total_cost(unpack(x), env, fov, config, weights)
            except (OutOfBoundsError, DegenerateFrameError, ValueError):
                return np.inf, np.zeros_like(x)
            d_head, d_tail = ends_dt(x[-1])
            g = report.grad_control
            grad_dt = report.grad_dt + np.sum(g[:FIXED_ENDS] * d_head) + np.sum(g[-FIXED_ENDS:] * d_tail)
            return report.value, np.concatenate([g[free].ravel(), [grad_dt]])

        x0 = np.concatenate([current.control_points[free].ravel(), [current.knot_span]])
        res = minimize_lbfgs(
            objective,
            x0,
            lower=lower,
            max_iterations=config.max_iterations,
            gradient_tolerance=config.gradient_tolerance,
            relative_cost_tolerance=config.relative_cost_tolerance,
        )
        iterations += res.iterations
        converged = converged and res.converged
        trace.extend(res.trace[1:])
        current = unpack(res.x)
        cost, terms = evaluate_full(current)
        if cost < best_cost:
            best_curve, best_cost, best_terms = current, cost, terms
        if config.lambda_para == 0:
            break

    if not converged:
        warning = "position optimisation stopped before convergence; returning best iterate"
        logger.warning(warning)
    return PositionPlanResult(
        curve=best_curve,
        initial_curve=curve0,
        initial_cost=init_cost,
        final_cost=best_cost,
        terms=best_terms,
        initial_terms=init_terms,
        trace=trace,
        iterations=iterations,
        converged=converged,
        warning=warning,
        path=[np.asarray(p) for p in path],
    )
