import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from covisplan.splines import (
    SplineDomainError,
    UniformBSpline,
    basis_matrix,
    derivative,
    evaluate,
    fit_waypoints,
    knot_points,
)
from oracles import de_boor


def random_curve(rng, degree=3, dim=None):
    dim = dim or int(rng.integers(1, 4))
    n_ctrl = int(rng.integers(degree + 1, degree + 9))
    return UniformBSpline(
        rng.normal(size=(n_ctrl, dim)) * 3, float(rng.uniform(0.05, 2.0)), degree, float(rng.uniform(-5, 5))
    )


# ---------------------------------------------------------------- evaluation


def test_constant_control_points_evaluate_to_that_point():
    curve = UniformBSpline(np.tile([1.0, 2.0, 3.0], (6, 1)), 0.7)
    for t in np.linspace(*curve.domain, 11):
        np.testing.assert_allclose(evaluate(curve, t), [1.0, 2.0, 3.0], atol=1e-14)


def test_linear_control_points_at_first_knot_and_mid_span():
    curve = UniformBSpline([0.0, 1.0, 2.0, 3.0], 1.0)
    assert evaluate(curve, 0.0)[0] == pytest.approx(1.0, abs=1e-14)
    assert evaluate(curve, 0.5)[0] == pytest.approx(1.5, abs=1e-14)
    assert de_boor([0, 1, 2, 3], 1.0, 0.5)[0] == pytest.approx(1.5, abs=1e-14)


def test_outside_domain_names_interval():
    curve = UniformBSpline([0.0, 1.0, 2.0, 3.0], 1.0, start_time=2.0)
    with pytest.raises(SplineDomainError, match=r"\[2.0, 3.0\]"):
        evaluate(curve, 3.5)
    with pytest.raises(SplineDomainError):
        evaluate(curve, 1.9)


def test_domain_end_maps_to_last_span_with_u_one():
    curve = UniformBSpline(np.arange(7.0) ** 2, 0.5)
    span, u = curve.locate(curve.end_time)
    assert (span, u) == (curve.num_spans - 1, 1.0)


def test_array_evaluation_matches_scalar(rng):
    curve = random_curve(rng, dim=3)
    ts = np.linspace(*curve.domain, 17)
    batch = evaluate(curve, ts)
    for t, row in zip(ts, batch):
        np.testing.assert_array_equal(row, evaluate(curve, t))


def test_basis_matrix_rows_give_partition_of_unity():
    for p in range(4):
        m = basis_matrix(p)
        for u in np.linspace(0, 1, 9):
            assert (u ** np.arange(p + 1)) @ m @ np.ones(p + 1) == pytest.approx(1.0, abs=1e-14)
    with pytest.raises(ValueError):
        basis_matrix(4)


def test_invalid_curves_rejected():
    with pytest.raises(ValueError):
        UniformBSpline([0.0, 1.0, 2.0], 1.0)
    with pytest.raises(ValueError):
        UniformBSpline([0.0, 1.0, 2.0, 3.0], 0.0)
    with pytest.raises(ValueError):
        UniformBSpline([0.0, 1.0], 1.0, degree=4)


def test_matrix_form_matches_de_boor_all_degrees(rng):
    for _ in range(300):
        degree = int(rng.integers(0, 4))
        curve = random_curve(rng, degree)
        t = float(rng.uniform(*curve.domain))
        expected = de_boor(curve.control_points, curve.knot_span, t, degree, curve.start_time)
        np.testing.assert_allclose(evaluate(curve, t), expected, atol=1e-10)


@given(
    st.integers(4, 10),
    st.floats(0.05, 3.0),
    st.floats(-100, 100),
    st.floats(0, 1),
    st.integers(0, 2**31),
)
def test_translation_equivariance(n_ctrl, dt, shift, frac, seed):
    rng = np.random.default_rng(seed)
    q = rng.normal(size=(n_ctrl, 2)) * 10
    a = UniformBSpline(q, dt)
    b = UniformBSpline(q + shift, dt)
    t = a.start_time + frac * a.duration
    np.testing.assert_allclose(evaluate(b, t), evaluate(a, t) + shift, atol=1e-9)


@given(st.integers(4, 10), st.floats(0.05, 3.0), st.floats(0, 1), st.integers(0, 2**31))
def test_convex_hull_of_active_control_points(n_ctrl, dt, frac, seed):
    rng = np.random.default_rng(seed)
    curve = UniformBSpline(rng.normal(size=(n_ctrl, 3)) * 5, dt)
    t = frac * curve.duration
    span, _ = curve.locate(t)
    active = curve.control_points[span : span + 4]
    x = evaluate(curve, t)
    assert np.all(x >= active.min(axis=0) - 1e-9)
    assert np.all(x <= active.max(axis=0) + 1e-9)


def test_c2_continuity_across_knots(rng):
    curve = random_curve(rng, dim=2)
    d1 = derivative(curve)
    d2 = derivative(d1)
    eps = 1e-9
    for t in curve.knot_times()[1:-1]:
        for c in (curve, d1, d2):
            np.testing.assert_allclose(evaluate(c, t - eps), evaluate(c, t + eps), atol=1e-6)


# ---------------------------------------------------------------- derivatives


def test_derivative_examples():
    const = UniformBSpline(np.full((5, 2), 4.0), 0.3)
    np.testing.assert_allclose(evaluate(derivative(const), np.linspace(*const.domain, 7)), 0.0, atol=1e-14)
    lin = derivative(UniformBSpline([0.0, 1.0, 2.0, 3.0], 1.0))
    np.testing.assert_allclose(evaluate(lin, np.linspace(*lin.domain, 7)), 1.0, atol=1e-14)
    sq = derivative(derivative(UniformBSpline([0.0, 1.0, 4.0, 9.0, 16.0], 1.0)))
    np.testing.assert_allclose(evaluate(sq, np.linspace(*sq.domain, 7)), 2.0, atol=1e-12)


def test_derivative_keeps_span_and_start():
    curve = UniformBSpline(np.arange(6.0), 0.4, start_time=1.5)
    d = derivative(curve)
    assert d.degree == 2 and d.knot_span == curve.knot_span and d.domain == curve.domain


def test_degree_zero_derivative_unsupported():
    with pytest.raises(NotImplementedError):
        derivative(UniformBSpline([1.0, 2.0], 1.0, degree=0))


def test_derivative_matches_finite_difference(rng):
    h = 1e-6
    for _ in range(100):
        curve = random_curve(rng)
        d = derivative(curve)
        lo, hi = curve.domain
        t = float(rng.uniform(lo + 2 * h, hi - 2 * h))
        fd = (evaluate(curve, t + h) - evaluate(curve, t - h)) / (2 * h)
        exact = evaluate(d, t)
        assert np.linalg.norm(fd - exact) <= 1e-5 * max(np.linalg.norm(exact), 1.0)


# ---------------------------------------------------------------- knot points


def test_knot_point_examples():
    np.testing.assert_allclose(knot_points(UniformBSpline([0.0, 1.0, 2.0, 3.0], 1.0))[:, 0], [1.0, 2.0])
    q = np.full((6, 3), 2.5)
    np.testing.assert_allclose(knot_points(UniformBSpline(q, 0.2)), 2.5)
    assert len(knot_points(UniformBSpline(np.arange(5.0), 1.0))) == 3


def test_knot_points_equal_evaluation_at_knots(rng):
    for degree in range(4):
        curve = random_curve(rng, degree)
        expected = evaluate(curve, curve.knot_times())
        np.testing.assert_allclose(knot_points(curve), expected, atol=1e-12)


def test_cubic_knot_point_formula(rng):
    curve = random_curve(rng)
    q = curve.control_points
    np.testing.assert_allclose(knot_points(curve), (q[:-2] + 4 * q[1:-1] + q[2:]) / 6, atol=1e-14)


# ---------------------------------------------------------------- fitting


def test_fit_straight_line_is_exact():
    w = np.linspace([0.0, 0.0, 1.0], [6.0, 3.0, 1.0], 7)
    v = (w[-1] - w[0]) / 6.0 / 0.5
    curve, residual = fit_waypoints(w, 0.5, start_velocity=v, end_velocity=v)
    assert residual < 1e-9
    q = curve.control_points
    direction = (w[-1] - w[0]) / np.linalg.norm(w[-1] - w[0])
    off_line = (q - w[0]) - np.outer((q - w[0]) @ direction, direction)
    assert np.abs(off_line).max() < 1e-9


def test_fit_two_identical_waypoints_gives_constant_curve():
    curve, residual = fit_waypoints([[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]], 0.4)
    np.testing.assert_allclose(curve.control_points, np.tile([1.0, 2.0, 3.0], (len(curve.control_points), 1)), atol=1e-12)
    assert residual == 0.0


def test_fit_boundaries_are_exact(rng):
    w = np.cumsum(rng.normal(size=(8, 3)), axis=0)
    v0, v1 = rng.normal(size=3), rng.normal(size=3)
    a0, a1 = rng.normal(size=3), rng.normal(size=3)
    curve, _ = fit_waypoints(w, 0.3, v0, v1, a0, a1)
    vel, acc = derivative(curve), derivative(derivative(curve))
    lo, hi = curve.domain
    np.testing.assert_allclose(evaluate(curve, lo), w[0], atol=1e-12)
    np.testing.assert_allclose(evaluate(curve, hi), w[-1], atol=1e-12)
    np.testing.assert_allclose(evaluate(vel, lo), v0, atol=1e-10)
    np.testing.assert_allclose(evaluate(vel, hi), v1, atol=1e-10)
    np.testing.assert_allclose(evaluate(acc, lo), a0, atol=1e-9)
    np.testing.assert_allclose(evaluate(acc, hi), a1, atol=1e-9)


def _dense_constrained_lsq(w, dt, spans, smoothing):
    """KKT solve of the same fit: boundary rows as equality constraints, everything else least squares."""
    n_ctrl = spans + 3
    s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(w, axis=0), axis=1))])
    s = s / s[-1] * spans
    from oracles import de_boor

    def basis_row(t):
        return np.array([de_boor(np.eye(n_ctrl)[:, k], dt, t)[0] for k in range(n_ctrl)])

    obs = np.array([basis_row(si * dt) for si in s[1:-1]])
    jerk = np.zeros((spans, n_ctrl))
    for i in range(spans):
        jerk[i, i : i + 4] = [-1, 3, -3, 1]
    a = np.vstack([obs, np.sqrt(smoothing) * jerk])
    rhs = np.vstack([w[1:-1], np.zeros((spans, w.shape[1]))])
    # position, velocity and acceleration rows at both ends (zero velocity/acceleration)
    cons = []
    cons_rhs = []
    for t, p in ((0.0, w[0]), (spans * dt, w[-1])):
        k = 0 if t == 0 else spans - 1
        u = 0.0 if t == 0 else 1.0
        pos_row = np.zeros(n_ctrl)
        pos_row[k : k + 4] = np.array([1, u, u * u, u**3]) @ np.array(
            [[1, 4, 1, 0], [-3, 0, 3, 0], [3, -6, 3, 0], [-1, 3, -3, 1]]
        ) / 6
        vel_row = np.zeros(n_ctrl)
        vel_row[k : k + 4] = np.array([0, 1, 2 * u, 3 * u * u]) @ np.array(
            [[1, 4, 1, 0], [-3, 0, 3, 0], [3, -6, 3, 0], [-1, 3, -3, 1]]
        ) / 6
        acc_row = np.zeros(n_ctrl)
        acc_row[k : k + 4] = np.array([0, 0, 2, 6 * u]) @ np.array(
            [[1, 4, 1, 0], [-3, 0, 3, 0], [3, -6, 3, 0], [-1, 3, -3, 1]]
        ) / 6
        cons += [pos_row, vel_row, acc_row]
        cons_rhs += [p, np.zeros_like(p), np.zeros_like(p)]
    c = np.array(cons)
    kkt = np.block([[2 * a.T @ a, c.T], [c, np.zeros((len(c), len(c)))]])
    sol = np.linalg.lstsq(kkt, np.vstack([2 * a.T @ rhs, np.array(cons_rhs)]), rcond=None)[0]
    q = sol[:n_ctrl]
    return q, float(np.max(np.linalg.norm(obs @ q - w[1:-1], axis=1)))


def test_fit_l_shaped_path_matches_normal_equations_oracle():
    w = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [2.0, 1.0], [2.0, 2.0]])
    curve, residual = fit_waypoints(w, 0.5)
    q_ref, res_ref = _dense_constrained_lsq(w, 0.5, 4, 1e-6)
    np.testing.assert_allclose(curve.control_points, q_ref, atol=1e-8)
    assert residual == pytest.approx(res_ref, abs=1e-8)
    # every interior waypoint lies within the reported residual of the curve
    s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(w, axis=0), axis=1))])
    ts = s / s[-1] * curve.duration
    for t, p in zip(ts[1:-1], w[1:-1]):
        assert np.linalg.norm(evaluate(curve, t) - p) <= residual + 1e-12


def test_fit_requires_two_waypoints():
    with pytest.raises(ValueError):
        fit_waypoints([[0.0, 0.0, 0.0]], 0.5)
    with pytest.raises(ValueError):
        fit_waypoints([[0.0], [1.0]], 0.0)
