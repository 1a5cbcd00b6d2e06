"""Reference checks for the visibility model and planned trajectories."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit

from .environment import Environment
from .frames import GRAVITY, QuadKnotState
from .splines import UniformBSpline, derivative, evaluate
from .visibility import BEARING_EPS, FovSpec, VisibilityParams, batch_frames, visibility_batch


# closed boundaries, widened by a few ulps so a bearing built exactly on the boundary counts as inside
ANGLE_TOL = 1e-12


def _exact_from_cosines(c1, c2, c3, dist, fov: FovSpec):
    theta1 = np.arccos(np.clip(c1, -1.0, 1.0))
    theta3 = np.arccos(np.clip(c3, -1.0, 1.0))
    return (
        (dist <= fov.d_max)
        & (c2 > 0.0)
        & (np.abs(theta1 - np.pi / 2) <= fov.alpha_v / 2 + ANGLE_TOL)
        & (np.abs(theta3 - np.pi / 2) <= fov.alpha_h / 2 + ANGLE_TOL)
    )


def exact_visibility(state: QuadKnotState, feature, fov: FovSpec) -> bool:
    """Whether ``feature`` lies in the closed frustum of both cone pairs, in front of the camera and within depth."""
    b = np.asarray(feature, dtype=float) - state.position
    dist = float(np.linalg.norm(b))
    if dist <= BEARING_EPS:
        raise ValueError("feature coincides with the state position (zero bearing)")
    bh = b / dist
    return bool(
        _exact_from_cosines(np.dot(state.n1, bh), np.dot(state.n2, bh), np.dot(state.n3, bh), dist, fov)
    )


def exact_visibility_batch(positions, n1, n2, n3, features, fov: FovSpec) -> np.ndarray:
    """(K, F) boolean exact visibility for K frames."""
    b = np.asarray(features)[None] - np.asarray(positions)[:, None, :]
    dist = np.linalg.norm(b, axis=2)
    bh = b / np.maximum(dist, BEARING_EPS)[..., None]
    c1 = np.einsum("kfi,ki->kf", bh, n1)
    c2 = np.einsum("kfi,ki->kf", bh, n2)
    c3 = np.einsum("kfi,ki->kf", bh, n3)
    return _exact_from_cosines(c1, c2, c3, dist, fov) & (dist > BEARING_EPS)


def _uniform_sphere(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _boundary_distance(c1, c2, c3, fov: FovSpec):
    """Angular distance of each bearing to the nearest FoV boundary surface."""
    t1 = np.arccos(np.clip(c1, -1, 1))
    t2 = np.arccos(np.clip(c2, -1, 1))
    t3 = np.arccos(np.clip(c3, -1, 1))
    return np.minimum.reduce(
        [
            np.abs(np.abs(t1 - np.pi / 2) - fov.alpha_v / 2),
            np.abs(np.abs(t3 - np.pi / 2) - fov.alpha_h / 2),
            np.abs(t2 - np.pi / 2),
        ]
    )


def model_fidelity(
    params: VisibilityParams,
    fov: FovSpec,
    sample_count: int = 100_000,
    margin: float = np.deg2rad(3.0),
    seed: int = 0,
    a_max: float = 2.5,
) -> float:
    """Fraction of bearings where (v > 0.5) matches the exact frustum test.

    Bearings are uniform on the sphere at depth d_max / 2 around a random
    state whose tilt stays within arctan(a_max / g); bearings closer than
    ``margin`` to any boundary surface are discarded.
    """
    if sample_count < 10_000:
        raise ValueError("model_fidelity needs at least 1e4 samples")
    rng = np.random.default_rng(seed)
    heading = rng.uniform(0.0, 2 * np.pi)
    horiz = rng.uniform(0.0, a_max)
    acc = np.array([horiz * np.cos(heading), horiz * np.sin(heading), 0.0])
    yaw = rng.uniform(-np.pi, np.pi)
    position = rng.uniform(-5.0, 5.0, size=3)
    state = QuadKnotState.from_flat(position, np.zeros(3), acc, yaw)

    bh = _uniform_sphere(rng, sample_count)
    feats = position + 0.5 * fov.d_max * bh
    c1, c2, c3 = bh @ state.n1, bh @ state.n2, bh @ state.n3
    keep = _boundary_distance(c1, c2, c3, fov) >= margin
    terms = visibility_batch(position[None], acc[None], [yaw], feats[keep], params, gradients=False)
    soft = terms.v[0] > 0.5
    exact = _exact_from_cosines(c1[keep], c2[keep], c3[keep], np.full(keep.sum(), 0.5 * fov.d_max), fov)
    return float(np.mean(soft == exact))


@dataclass
class TiltSensitivityReport:
    zeta: float
    sample_count: int
    a_max: float
    alpha_h: float
    eta_max: float
    k3: float

    def to_dict(self) -> dict:
        return asdict(self)


def fibonacci_sphere(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(1.0 - z * z)
    phi = np.pi * (1.0 + np.sqrt(5.0)) * i
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def tilt_sensitivity_zeta(
    a_max: float,
    alpha_h: float = np.pi / 2,
    k3: float = 20.0,
    sphere_points: int = 64 * 64,
    angle_points: int = 33,
    gravity: float = GRAVITY,
) -> TiltSensitivityReport:
    """Fraction of (bearing, pitch, roll) samples whose horizontal visibility flips under roll.

    In the intermediate frame spanned by (ny, n3, ny x n3) the thrust axis
    is tilted by gamma and then rolled by beta about the optical axis, which
    moves the lateral axis to n3' = m (0, cos gamma cos beta, sin beta) with
    m = (cos^2 gamma cos^2 beta + sin^2 beta)^(-1/2). A sample counts when
    |v3(theta3) - v3(theta3')| > 0.5. Bearings use a Fibonacci sphere grid,
    gamma and beta an inclusive uniform grid on [-eta_max, eta_max].
    """
    if a_max < 0:
        raise ValueError("a_max must be non-negative")
    eta = float(np.arctan(a_max / gravity))
    b = fibonacci_sphere(sphere_points)
    angles = np.linspace(-eta, eta, angle_points)
    sin_a3 = np.sin((np.pi - alpha_h) / 2)
    v3_before = expit(k3 * (np.sqrt(1.0 - b[:, 1] ** 2) - sin_a3))
    beta = angles
    flipped = 0
    for gamma in angles:
        m = 1.0 / np.sqrt(np.cos(gamma) ** 2 * np.cos(beta) ** 2 + np.sin(beta) ** 2)
        c = b[:, 1:2] * (m * np.cos(gamma) * np.cos(beta)) + b[:, 2:3] * (m * np.sin(beta))
        sin_after = np.sqrt(np.clip(1.0 - c * c, 0.0, None))
        v3_after = expit(k3 * (sin_after - sin_a3))
        flipped += int(np.count_nonzero(np.abs(v3_before[:, None] - v3_after) > 0.5))
    total = sphere_points * angle_points**2
    return TiltSensitivityReport(flipped / total, total, float(a_max), float(alpha_h), eta, float(k3))


@dataclass
class PerceptionMetrics:
    frame_rate: float
    times: list = field(default_factory=list)
    covisible_counts: list = field(default_factory=list)
    max_parallax: list = field(default_factory=list)
    min_count: int = 0
    mean_count: float = 0.0
    parallax_violations: int = 0
    rho_max: float = float(np.deg2rad(10.0))

    def to_dict(self) -> dict:
        return asdict(self)


def sample_states(position_curve: UniformBSpline, yaw_curve: UniformBSpline, times, gravity: float = GRAVITY):
    vel_c = derivative(position_curve)
    acc_c = derivative(vel_c)
    pos = evaluate(position_curve, times)
    vel = evaluate(vel_c, times)
    acc = evaluate(acc_c, times)
    yaw = evaluate(yaw_curve, times)[:, 0]
    return pos, vel, acc, yaw


def frame_times(curve: UniformBSpline, nu: float) -> np.ndarray:
    lo, hi = curve.domain
    n_frames = int(np.floor((hi - lo) * nu + 1e-9)) + 1
    return lo + np.arange(n_frames) / nu


def frame_parallax(positions, features) -> np.ndarray:
    """(K-1, F) parallax of every feature between consecutive camera positions.

    Uses atan2 of the cross and dot products, which stays accurate for the
    near-zero angles between closely spaced frames.
    """
    e = np.asarray(positions)[:, None, :] - np.asarray(features)[None]
    u = e / np.linalg.norm(e, axis=2, keepdims=True)
    cross = np.linalg.norm(np.cross(u[:-1], u[1:]), axis=2)
    return np.arctan2(cross, np.sum(u[:-1] * u[1:], axis=2))


def trajectory_metrics(
    position_curve: UniformBSpline,
    yaw_curve: UniformBSpline,
    env: Environment,
    fov: FovSpec,
    nu: float = 20.0,
    rho_max: float = np.deg2rad(10.0),
    gravity: float = GRAVITY,
) -> PerceptionMetrics:
    """Per-frame covisible-feature counts and parallax sampled at 1/nu.

    For each consecutive frame pair, counts features exactly visible in both
    and records the largest parallax among them (0 when there are none).
    """
    lo, hi = position_curve.domain
    ylo, yhi = yaw_curve.domain
    if not (np.isclose(lo, ylo) and np.isclose(hi, yhi)):
        raise ValueError(f"position domain [{lo}, {hi}] differs from yaw domain [{ylo}, {yhi}]")
    times = frame_times(position_curve, nu)
    n_frames = len(times)
    metrics = PerceptionMetrics(frame_rate=float(nu), rho_max=float(rho_max))
    metrics.times = times[1:].tolist()
    if n_frames < 2:
        return metrics
    feats = env.features
    if len(feats) == 0:
        metrics.covisible_counts = [0] * (n_frames - 1)
        metrics.max_parallax = [0.0] * (n_frames - 1)
        return metrics
    pos, _, acc, yaw = sample_states(position_curve, yaw_curve, times, gravity)
    n1, n2, n3, *_ = batch_frames(acc, yaw, gravity)
    seen = exact_visibility_batch(pos, n1, n2, n3, feats, fov)
    both = seen[:-1] & seen[1:]
    counts = both.sum(axis=1)
    rho = frame_parallax(pos, feats)
    max_rho = np.where(both, rho, 0.0).max(axis=1)
    metrics.covisible_counts = counts.astype(int).tolist()
    metrics.max_parallax = max_rho.tolist()
    metrics.min_count = int(counts.min())
    metrics.mean_count = float(counts.mean())
    metrics.parallax_violations = int(np.count_nonzero(max_rho > rho_max))
    return metrics
