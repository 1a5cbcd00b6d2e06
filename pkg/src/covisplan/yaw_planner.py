"""Yaw planning on a fixed position trajectory.

Yaw angles are first chosen per knot by a search over a layered graph of
sampled headings (maximising cumulative covisibility under a yaw-rate
bound), then refined as a cubic B-spline that trades jerk, closeness to the
searched primitives and covisibility.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .environment import Environment, depth_mask
from .frames import GRAVITY, knot_kinematics
from .optim import minimize_lbfgs
from .position_planner import JERK_STENCIL
from .splines import UniformBSpline, knot_points
from .visibility import FovSpec, VisibilityParams, visibility_batch

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi


class InfeasibleYawError(RuntimeError):
    """No yaw primitive path satisfies the rate bound."""


@dataclass(frozen=True)
class YawPlanConfig:
    samples_per_layer: int = 16
    psi_dot_max: float = 2.5
    lambda1: float = 20.0
    lambda2: float = 1.0
    gravity: float = GRAVITY
    max_iterations: int = 30
    gradient_tolerance: float = 1e-6
    relative_cost_tolerance: float = 1e-5

    def __post_init__(self):
        if self.samples_per_layer < 2:
            raise ValueError("need at least 2 yaw samples per layer")
        if not self.psi_dot_max > 0:
            raise ValueError("psi_dot_max must be positive")
        if min(self.lambda1, self.lambda2) < 0:
            raise ValueError("lambda1 and lambda2 must be non-negative")


def wrap_angle(a):
    """Wrap to [-pi, pi)."""
    return (np.asarray(a) + np.pi) % TWO_PI - np.pi


def yaw_samples(count: int) -> np.ndarray:
    return -np.pi + TWO_PI * np.arange(count) / count


@dataclass
class YawGraph:
    """Layered yaw-primitive graph.

    Layer i holds ``samples`` at knot i. ``gains[i][a, b]`` is the covisibility
    of knot i at sample a with knot i+1 at sample b, meaningful only where
    ``adjacency[i][a, b]``. A virtual source feeds every node of the first
    layer and every node of the last layer feeds a virtual sink, both with
    zero gain.
    """

    samples: np.ndarray
    gains: list
    adjacency: list
    knot_span: float
    psi_dot_max: float

    @property
    def num_layers(self) -> int:
        return len(self.gains) + 1


def rate_adjacency(samples: np.ndarray, max_step: float) -> np.ndarray:
    diff = np.abs(wrap_angle(samples[None, :] - samples[:, None]))
    return diff < max_step


def knot_frames_inputs(position_curve: UniformBSpline):
    pos, _, acc = knot_kinematics(position_curve)
    return pos, acc


def sample_visibility(positions, accelerations, samples, features, params, gravity=GRAVITY) -> np.ndarray:
    """Visibility of every feature from every (knot, yaw sample), shape (K, S, F)."""
    k, s = len(positions), len(samples)
    terms = visibility_batch(
        np.repeat(positions, s, axis=0),
        np.repeat(accelerations, s, axis=0),
        np.tile(samples, k),
        features,
        params,
        gravity,
        gradients=False,
    )
    return terms.v.reshape(k, s, -1)


def build_yaw_graph(
    position_curve: UniformBSpline,
    env: Environment,
    fov: FovSpec,
    params: VisibilityParams,
    config: YawPlanConfig | None = None,
) -> YawGraph:
    config = config or YawPlanConfig()
    pos, acc = knot_frames_inputs(position_curve)
    if len(pos) < 2:
        raise ValueError("need at least 2 knots")
    samples = yaw_samples(config.samples_per_layer)
    adjacency = rate_adjacency(samples, config.psi_dot_max * position_curve.knot_span)
    gains = []
    if len(env.features):
        vis = sample_visibility(pos, acc, samples, env.features, params, config.gravity)
        mask = depth_mask(pos, env.features, fov.d_max)
        for i in range(len(pos) - 1):
            gains.append((vis[i] * mask[i]) @ vis[i + 1].T)
    else:
        gains = [np.zeros((len(samples), len(samples))) for _ in range(len(pos) - 1)]
    return YawGraph(samples, gains, [adjacency] * (len(pos) - 1), position_curve.knot_span, config.psi_dot_max)


class PrimitivePath(NamedTuple):
    yaws: np.ndarray
    indices: np.ndarray
    gain: float
    yaw_change: float


def solve_primitives(graph: YawGraph) -> PrimitivePath:
    """Source-to-sink path of maximum total gain by dynamic programming.

    Every source-sink path crosses the same number of edges, so this is the
    same optimum a shortest-path search on shifted negated gains would find.
    Ties go to the smaller total absolute yaw change, then to the lower
    sample index.
    """
    samples = graph.samples
    s = len(samples)
    step = np.abs(wrap_angle(samples[None, :] - samples[:, None]))
    gain = np.zeros(s)
    change = np.zeros(s)
    parents = []
    for i, (g, adj) in enumerate(zip(graph.gains, graph.adjacency)):
        cand_gain = np.where(adj, gain[:, None] + g, -np.inf)
        cand_change = change[:, None] + step
        parent = np.full(s, -1)
        new_gain = np.full(s, -np.inf)
        new_change = np.full(s, np.inf)
        for b in range(s):
            col = cand_gain[:, b]
            top = col.max()
            if top == -np.inf:
                continue
            ties = np.flatnonzero(col == top)
            a = ties[np.argmin(cand_change[ties, b])]  # argmin keeps the lowest index among equal changes
            parent[b], new_gain[b], new_change[b] = a, top, cand_change[a, b]
        if np.all(parent < 0):
            raise InfeasibleYawError(f"yaw layer {i + 1} is unreachable under the rate bound")
        parents.append(parent)
        gain, change = new_gain, new_change
    top = gain.max()
    ties = np.flatnonzero(gain == top)
    last = ties[np.argmin(change[ties])]
    idx = [last]
    for parent in reversed(parents):
        idx.append(parent[idx[-1]])
    idx = np.array(idx[::-1])
    return PrimitivePath(samples[idx], idx, float(top), float(change[last]))


def unwrap_primitives(psi) -> np.ndarray:
    """Continuous yaw sequence following the shortest signed step between samples."""
    psi = np.asarray(psi, dtype=float)
    out = psi.copy()
    for i in range(1, len(psi)):
        d = wrap_angle(psi[i] - psi[i - 1])
        if abs(abs(d) - np.pi) < 1e-12:
            raise ValueError(f"yaw step {i - 1}->{i} is exactly pi; unwrapping is ambiguous")
        out[i] = out[i - 1] + d
    return out


def fit_yaw_curve(knot_values, knot_span: float, start_time: float = 0.0) -> UniformBSpline:
    """Minimum-jerk cubic whose knot points equal ``knot_values``."""
    y = np.asarray(knot_values, dtype=float)
    k = len(y)
    n_ctrl = k + 2
    a = np.zeros((k, n_ctrl))
    for i in range(k):
        a[i, i : i + 3] = [1.0 / 6.0, 4.0 / 6.0, 1.0 / 6.0]
    j = np.zeros((n_ctrl - 3, n_ctrl))
    for i in range(n_ctrl - 3):
        j[i, i : i + 4] = JERK_STENCIL
    kkt = np.block([[2.0 * j.T @ j, a.T], [a, np.zeros((k, k))]])
    rhs = np.concatenate([np.zeros(n_ctrl), y])
    sol = np.linalg.solve(kkt, rhs)
    return UniformBSpline(sol[:n_ctrl], knot_span, start_time=start_time)


class YawObjective:
    """Yaw objective on a fixed position curve.

    value = integral of squared yaw jerk
            + lambda1 * sum_i (psi_i - psi*_i)^2
            - lambda2 * sum_i mu(s_i, s_{i+1})

    :meth:`value` evaluates the full covisibility product.
    :meth:`frozen_value_and_grad` uses the decomposed form in which the
    v1 * v2 factors of each (pair, feature) are constants captured at
    construction, so only the horizontal factors v3(i) * v3(i+1) vary.
    """

    def __init__(self, position_curve, psi_star, env, fov, params, config, init_control):
        self.knot_span = position_curve.knot_span
        self.start_time = position_curve.start_time
        self.pos, self.acc = knot_frames_inputs(position_curve)
        self.psi_star = np.asarray(psi_star, dtype=float)
        self.params = params
        self.config = config
        feats = env.features
        if len(feats):
            mask = depth_mask(self.pos, feats, fov.d_max)
            used = np.flatnonzero(mask.any(axis=0))
        else:
            mask = np.zeros((len(self.pos) - 1, 0), dtype=bool)
            used = np.zeros(0, dtype=int)
        self.features = feats[used]
        self.mask = mask[:, used].astype(float)
        terms = self._terms(np.asarray(init_control, dtype=float), gradients=False)
        v12 = terms.v1 * terms.v2
        self.frozen = v12[:-1] * v12[1:] * self.mask

    def knot_yaws(self, ctrl):
        return (ctrl[:-2] + 4.0 * ctrl[1:-1] + ctrl[2:]) / 6.0

    def _terms(self, ctrl, gradients):
        if len(self.features) == 0:
            return None
        return visibility_batch(
            self.pos, self.acc, self.knot_yaws(ctrl), self.features, self.params, self.config.gravity, gradients
        )

    def _smooth_and_guidance(self, ctrl):
        dt = self.knot_span
        d3 = ctrl[3:] - 3.0 * ctrl[2:-1] + 3.0 * ctrl[1:-2] - ctrl[:-3]
        jerk = float(np.sum(d3**2)) / dt**5
        g_ctrl = np.zeros_like(ctrl)
        for k, c in enumerate(JERK_STENCIL):
            g_ctrl[k : k + len(d3)] += c * 2.0 * d3 / dt**5
        err = self.knot_yaws(ctrl) - self.psi_star
        guide = self.config.lambda1 * float(np.sum(err**2))
        g_knot = 2.0 * self.config.lambda1 * err
        return jerk, guide, g_ctrl, g_knot

    def _scatter(self, g_knot):
        g = np.zeros(len(g_knot) + 2)
        g[:-2] += g_knot / 6.0
        g[1:-1] += 4.0 * g_knot / 6.0
        g[2:] += g_knot / 6.0
        return g

    def covisibility(self, ctrl) -> float:
        """Total covisibility sum_i mu(s_i, s_{i+1}) with the full visibility product."""
        terms = self._terms(np.asarray(ctrl, dtype=float), gradients=False)
        if terms is None:
            return 0.0
        return float(np.sum(terms.v[:-1] * terms.v[1:] * self.mask))

    def value(self, ctrl) -> float:
        ctrl = np.asarray(ctrl, dtype=float)
        jerk, guide, _, _ = self._smooth_and_guidance(ctrl)
        return jerk + guide - self.config.lambda2 * self.covisibility(ctrl)

    def frozen_value_and_grad(self, ctrl) -> tuple[float, np.ndarray]:
        ctrl = np.asarray(ctrl, dtype=float)
        jerk, guide, g_ctrl, g_knot = self._smooth_and_guidance(ctrl)
        terms = self._terms(ctrl, gradients=True)
        covis = 0.0
        if terms is not None:
            v3, dv3 = terms.v3, terms.d_yaw_v3
            prod = self.frozen * v3[:-1] * v3[1:]
            covis = float(np.sum(prod))
            d_knot = np.zeros(len(v3))
            d_knot[:-1] += np.sum(self.frozen * v3[1:] * dv3[:-1], axis=1)
            d_knot[1:] += np.sum(self.frozen * v3[:-1] * dv3[1:], axis=1)
            g_knot = g_knot - self.config.lambda2 * d_knot
        grad = g_ctrl + self._scatter(g_knot)
        return jerk + guide - self.config.lambda2 * covis, grad

    def decomposed_value(self, ctrl) -> float:
        """Decomposed objective with v1 * v2 recomputed at ``ctrl`` instead of frozen."""
        ctrl = np.asarray(ctrl, dtype=float)
        jerk, guide, _, _ = self._smooth_and_guidance(ctrl)
        terms = self._terms(ctrl, gradients=False)
        covis = 0.0
        if terms is not None:
            v12 = terms.v1 * terms.v2
            covis = float(np.sum(v12[:-1] * v12[1:] * self.mask * terms.v3[:-1] * terms.v3[1:]))
        return jerk + guide - self.config.lambda2 * covis


@dataclass
class YawPlanResult:
    curve: UniformBSpline
    initial_curve: UniformBSpline
    psi_star: np.ndarray
    initial_cost: float
    final_cost: float
    initial_covisibility: float
    final_covisibility: float
    trace: list = field(default_factory=list)
    converged: bool = True


def optimize_yaw(
    position_curve: UniformBSpline,
    psi_star,
    env: Environment,
    fov: FovSpec,
    params: VisibilityParams,
    config: YawPlanConfig | None = None,
) -> YawPlanResult:
    """Refine the yaw primitives into a smooth yaw B-spline.

    The objective's value is always the full covisibility product; its
    gradient uses the decomposed form with v1 * v2 frozen at the
    initialisation. The best iterate under the full objective is returned.
    """
    config = config or YawPlanConfig()
    psi_star = np.asarray(psi_star, dtype=float)
    n_knots = position_curve.num_spans + 1
    if len(psi_star) != n_knots:
        raise ValueError(f"psi_star has {len(psi_star)} entries, expected one per knot ({n_knots})")
    target = unwrap_primitives(psi_star)
    init = fit_yaw_curve(target, position_curve.knot_span, position_curve.start_time)
    x0 = init.control_points[:, 0].copy()
    objective = YawObjective(position_curve, target, env, fov, params, config, x0)

    def fun(x):
        _, grad = objective.frozen_value_and_grad(x)
        return objective.value(x), grad

    res = minimize_lbfgs(
        fun,
        x0,
        max_iterations=config.max_iterations,
        gradient_tolerance=config.gradient_tolerance,
        relative_cost_tolerance=config.relative_cost_tolerance,
    )
    curve = UniformBSpline(res.x, position_curve.knot_span, start_time=position_curve.start_time)
    return YawPlanResult(
        curve=curve,
        initial_curve=init,
        psi_star=target,
        initial_cost=res.initial_cost,
        final_cost=res.cost,
        initial_covisibility=objective.covisibility(x0),
        final_covisibility=objective.covisibility(res.x),
        trace=res.trace,
        converged=res.converged,
    )
