"""Differentiable field-of-view visibility model.

A feature's visibility from a state is the product of three sigmoids::

    v  = v1(theta1) * v3(theta3) * v2(theta2)
    v1 = sigmoid(k1 * (sin theta1 - sin alpha1))    vertical cone pair
    v3 = sigmoid(k3 * (sin theta3 - sin alpha3))    horizontal cone pair
    v2 = sigmoid(k2 * (cos theta2 - cos alpha2))    frontal half space

where theta_k is the angle between the bearing b = f - p and frame axis n_k,
alpha1 = (pi - alpha_v)/2, alpha2 = pi/2 and alpha3 = (pi - alpha_h)/2.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import expit

from .frames import DEGENERACY_EPS, DegenerateFrameError, GRAVITY, QuadKnotState

BEARING_EPS = 1e-9


@dataclass(frozen=True)
class FovSpec:
    alpha_h: float = np.pi / 2
    alpha_v: float = np.pi / 3
    d_max: float = 8.0

    def __post_init__(self):
        if not 0 < self.alpha_h < np.pi:
            raise ValueError(f"alpha_h must lie in (0, pi), got {self.alpha_h}")
        if not 0 < self.alpha_v < np.pi:
            raise ValueError(f"alpha_v must lie in (0, pi), got {self.alpha_v}")
        if not self.d_max > 0:
            raise ValueError(f"d_max must be positive, got {self.d_max}")


@dataclass(frozen=True)
class VisibilityParams:
    """Sigmoid steepnesses and cone half-angle thresholds (radians)."""

    k1: float = 40.0
    k2: float = 10.0
    k3: float = 20.0
    alpha1: float = (np.pi - np.pi / 3) / 2
    alpha2: float = np.pi / 2
    alpha3: float = (np.pi - np.pi / 2) / 2
    _sin_alpha: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if min(self.k1, self.k2, self.k3) <= 0:
            raise ValueError("sigmoid steepnesses must be positive")
        object.__setattr__(
            self,
            "_sin_alpha",
            (np.sin(self.alpha1), np.sin(np.pi / 2 - self.alpha2), np.sin(self.alpha3)),
        )

    @classmethod
    def for_fov(cls, fov: FovSpec, k1=40.0, k2=10.0, k3=20.0) -> "VisibilityParams":
        return cls(
            k1=k1,
            k2=k2,
            k3=k3,
            alpha1=(np.pi - fov.alpha_v) / 2,
            alpha2=np.pi / 2,
            alpha3=(np.pi - fov.alpha_h) / 2,
        )


class VisibilityTerms(NamedTuple):
    """Batched model values and gradients, leading shape (K, F)."""

    v: np.ndarray
    v1: np.ndarray
    v2: np.ndarray
    v3: np.ndarray
    d_position: np.ndarray | None  # (K, F, 3)
    d_acceleration: np.ndarray | None  # (K, F, 3)
    d_yaw: np.ndarray | None  # (K, F)
    d_yaw_v3: np.ndarray | None  # (K, F), derivative of v3 alone


def _safe_sqrt_one_minus(c):
    return np.sqrt(np.clip(1.0 - c * c, 1e-300, None))


def batch_frames(acceleration, yaw, gravity: float = GRAVITY):
    """Vectorised frame construction.

    Returns n1, n2, n3, ny, dny/dyaw (all (K, 3)) and the norms |a - g| and
    |n1 x ny| (both (K,)).
    """
    acc = np.atleast_2d(np.asarray(acceleration, dtype=float))
    yaw = np.atleast_1d(np.asarray(yaw, dtype=float))
    f = acc.copy()
    f[:, 2] += gravity
    f_norm = np.linalg.norm(f, axis=1)
    if np.any(f_norm <= DEGENERACY_EPS):
        raise DegenerateFrameError("|a - g| vanishes (free fall), thrust direction undefined")
    n1 = f / f_norm[:, None]
    cy, sy = np.cos(yaw), np.sin(yaw)
    zeros = np.zeros_like(yaw)
    ny = np.stack([cy, sy, zeros], axis=1)
    dny = np.stack([-sy, cy, zeros], axis=1)
    w = np.cross(n1, ny)
    w_norm = np.linalg.norm(w, axis=1)
    if np.any(w_norm <= DEGENERACY_EPS):
        raise DegenerateFrameError("thrust direction parallel to yaw direction")
    n3 = w / w_norm[:, None]
    n2 = np.cross(n3, n1)
    return n1, n2, n3, ny, dny, f_norm, w_norm


def _sigmoids(c1, c2, c3, params: VisibilityParams):
    s_a1, c_a2, s_a3 = params._sin_alpha
    s1 = _safe_sqrt_one_minus(c1)
    s3 = _safe_sqrt_one_minus(c3)
    v1 = expit(params.k1 * (s1 - s_a1))
    v2 = expit(params.k2 * (c2 - c_a2))
    v3 = expit(params.k3 * (s3 - s_a3))
    dv1 = params.k1 * v1 * (1.0 - v1) * (-c1 / s1)
    dv2 = params.k2 * v2 * (1.0 - v2)
    dv3 = params.k3 * v3 * (1.0 - v3) * (-c3 / s3)
    return v1, v2, v3, dv1, dv2, dv3


def visibility_batch(
    positions,
    accelerations,
    yaws,
    features,
    params: VisibilityParams,
    gravity: float = GRAVITY,
    gradients: bool = True,
) -> VisibilityTerms:
    """Evaluate the model for K states against F features.

    Gradients are taken with respect to each state's position, acceleration
    and yaw.
    """
    p = np.atleast_2d(np.asarray(positions, dtype=float))
    feats = np.atleast_2d(np.asarray(features, dtype=float))
    n1, n2, n3, ny, dny, f_norm, w_norm = batch_frames(accelerations, yaws, gravity)

    b = feats[None, :, :] - p[:, None, :]
    b_norm = np.linalg.norm(b, axis=2)
    if np.any(b_norm <= BEARING_EPS):
        raise ValueError("feature coincides with a state position (zero bearing)")
    bh = b / b_norm[..., None]
    N1, N2, N3 = n1[:, None, :], n2[:, None, :], n3[:, None, :]
    c1 = np.sum(N1 * bh, axis=2)
    c2 = np.sum(N2 * bh, axis=2)
    c3 = np.sum(N3 * bh, axis=2)
    v1, v2, v3, dv1, dv2, dv3 = _sigmoids(c1, c2, c3, params)
    v = v1 * v2 * v3
    if not gradients:
        return VisibilityTerms(v, v1, v2, v3, None, None, None, None)

    g1 = (v2 * v3 * dv1)[..., None]
    g2 = (v1 * v3 * dv2)[..., None]
    g3 = (v1 * v2 * dv3)[..., None]
    inv_b = (1.0 / b_norm)[..., None]

    # position: d c_k / d p = -(n_k - c_k bh) / |b|
    d_pos = -inv_b * (
        g1 * (N1 - c1[..., None] * bh) + g2 * (N2 - c2[..., None] * bh) + g3 * (N3 - c3[..., None] * bh)
    )

    NY = ny[:, None, :]
    DNY = dny[:, None, :]
    inv_w = (1.0 / w_norm)[:, None, None]
    # c3 through n3 = w/|w|, w = n1 x ny
    u3 = (bh - c3[..., None] * N3) * inv_w
    dc3_dn1 = np.cross(NY, u3)
    dc3_dyaw = np.sum(DNY * np.cross(u3, N1), axis=2)
    # c2 through n2 = n3 x n1
    r = np.cross(N1, bh)
    u2 = (r - np.sum(N3 * r, axis=2)[..., None] * N3) * inv_w
    dc2_dn1 = np.cross(NY, u2) + np.cross(bh, N3)
    dc2_dyaw = np.sum(DNY * np.cross(u2, N1), axis=2)

    dv_dn1 = g1 * bh + g2 * dc2_dn1 + g3 * dc3_dn1
    d_acc = (dv_dn1 - np.sum(dv_dn1 * N1, axis=2)[..., None] * N1) / f_norm[:, None, None]
    d_yaw = g2[..., 0] * dc2_dyaw + g3[..., 0] * dc3_dyaw
    d_yaw_v3 = dv3 * dc3_dyaw
    return VisibilityTerms(v, v1, v2, v3, d_pos, d_acc, d_yaw, d_yaw_v3)


def _bearing(state: QuadKnotState, feature) -> tuple[np.ndarray, float]:
    b = np.asarray(feature, dtype=float) - state.position
    norm = float(np.linalg.norm(b))
    if norm <= BEARING_EPS:
        raise ValueError("feature coincides with the state position (zero bearing)")
    return b / norm, norm


def bearing_angles(state: QuadKnotState, feature) -> tuple[float, float, float]:
    """Angles (theta1, theta2, theta3) between the bearing and n1, n2, n3."""
    bh, _ = _bearing(state, feature)
    return tuple(float(np.arccos(np.clip(np.dot(n, bh), -1.0, 1.0))) for n in (state.n1, state.n2, state.n3))


def visibility_components(state: QuadKnotState, feature, params: VisibilityParams) -> tuple[float, float, float]:
    """Return (v1, v2, v3) for one state and feature."""
    bh, _ = _bearing(state, feature)
    c = [float(np.dot(n, bh)) for n in (state.n1, state.n2, state.n3)]
    v1, v2, v3, *_ = _sigmoids(*(np.asarray(x) for x in c), params)
    return float(v1), float(v2), float(v3)


def visibility(state: QuadKnotState, feature, params: VisibilityParams, fov: FovSpec | None = None) -> float:
    """Smooth visibility of ``feature`` from ``state``; depth is not gated here."""
    v1, v2, v3 = visibility_components(state, feature, params)
    return v1 * v3 * v2


def covisibility(s1: QuadKnotState, s2: QuadKnotState, features, params: VisibilityParams, fov: FovSpec | None = None) -> float:
    """Soft count of features seen from both states.

    ``features`` must already be restricted to those within sensing depth of
    both states.
    """
    total = 0.0
    for f in features:
        total += visibility(s1, f, params) * visibility(s2, f, params)
    return total


def visibility_grad(
    state: QuadKnotState,
    feature,
    params: VisibilityParams,
    fov: FovSpec | None = None,
    gravity: float = GRAVITY,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Gradient of v with respect to (position, acceleration, yaw)."""
    terms = visibility_batch(
        state.position[None], state.acceleration[None], [state.yaw], np.asarray(feature, dtype=float)[None],
        params, gravity,
    )
    return terms.d_position[0, 0], terms.d_acceleration[0, 0], float(terms.d_yaw[0, 0])


def parallax(p1, p2, feature) -> float:
    """Angle at ``feature`` between the rays to two camera positions."""
    f = np.asarray(feature, dtype=float)
    e1 = np.asarray(p1, dtype=float) - f
    e2 = np.asarray(p2, dtype=float) - f
    n1, n2 = np.linalg.norm(e1), np.linalg.norm(e2)
    if n1 <= BEARING_EPS or n2 <= BEARING_EPS:
        raise ValueError("feature coincides with a camera position")
    return float(np.arccos(np.clip(np.dot(e1, e2) / (n1 * n2), -1.0, 1.0)))


def parallax_pairs(p1, p2, features, gradients: bool = True):
    """Parallax for M matched (p1, p2, feature) rows.

    Returns rho (M,) and, when requested, d rho / d p1 and d rho / d p2
    (M, 3). Gradients are zeroed where rho is numerically zero.
    """
    e1 = np.asarray(p1, dtype=float) - features
    e2 = np.asarray(p2, dtype=float) - features
    l1 = np.sqrt(np.einsum("...i,...i->...", e1, e1))
    l2 = np.sqrt(np.einsum("...i,...i->...", e2, e2))
    if np.any(l1 <= BEARING_EPS) or np.any(l2 <= BEARING_EPS):
        raise ValueError("feature coincides with a camera position")
    u1 = e1 / l1[..., None]
    u2 = e2 / l2[..., None]
    c = np.clip(np.einsum("...i,...i->...", u1, u2), -1.0, 1.0)
    rho = np.arccos(c)
    if not gradients:
        return rho, None, None
    s = np.sqrt(1.0 - c * c)
    inv_s = np.where(s > 1e-12, 1.0 / np.maximum(s, 1e-12), 0.0)[..., None]
    d1 = -inv_s * (u2 - c[..., None] * u1) / l1[..., None]
    d2 = -inv_s * (u1 - c[..., None] * u2) / l2[..., None]
    return rho, d1, d2


def parallax_batch(p1, p2, features, gradients: bool = True):
    """Parallax for K position pairs against F features, shaped (K, F) and (K, F, 3)."""
    f = np.atleast_2d(np.asarray(features, dtype=float))[None]
    return parallax_pairs(np.atleast_2d(p1)[:, None, :], np.atleast_2d(p2)[:, None, :], f, gradients)


def v1_prime_weight(theta1, alpha_v: float, k: float = 60.0, shrink: float = 0.8):
    """Vertical-visibility weight with a tightened band, used to weight parallax."""
    alpha = (np.pi - shrink * alpha_v) / 2
    return expit(k * (np.sin(theta1) - np.sin(alpha)))
