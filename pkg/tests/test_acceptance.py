"""Acceptance criteria, one test each. Every test records a PASS/FAIL line that
is printed at the end of the session (and immediately when run with -s)."""

import time

import numpy as np
import pytest

from covisplan.cli import load_config, run_pipeline
from covisplan.evaluator import model_fidelity, tilt_sensitivity_zeta
from covisplan.splines import UniformBSpline, evaluate
from covisplan.visibility import FovSpec, VisibilityParams
from covisplan.yaw_planner import InfeasibleYawError, YawGraph, rate_adjacency, solve_primitives, yaw_samples
from conftest import CONFIGS
from gradcases import CHECKS, run_check
from oracles import de_boor, enumerate_best_gain

RESULTS = []


def report(number, title, ok, detail):
    line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def test_criterion_1_gradient_suite():
    start = time.perf_counter()
    worst = {}
    for k, name in enumerate(CHECKS):
        worst[name] = float(run_check(name, np.random.default_rng(1000 + k), 200).max())
    elapsed = time.perf_counter() - start
    ok = all(e < 1e-4 for e in worst.values()) and elapsed < 60.0
    detail = ", ".join(f"{n} {e:.1e}" for n, e in worst.items()) + f"; {elapsed:.1f} s"
    report(1, "gradients vs central differences (200 draws each, rel < 1e-4, < 60 s)", ok, detail)


def test_criterion_2_matrix_form_equals_de_boor():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(10_000):
        degree = int(rng.integers(1, 4))
        n_ctrl = int(rng.integers(degree + 1, degree + 12))
        q = rng.normal(size=(n_ctrl, int(rng.integers(1, 4)))) * 3
        curve = UniformBSpline(q, float(rng.uniform(0.05, 2.0)), degree, float(rng.uniform(-5, 5)))
        t = float(rng.uniform(*curve.domain))
        ref = de_boor(curve.control_points, curve.knot_span, t, degree, curve.start_time)
        worst = max(worst, float(np.max(np.abs(evaluate(curve, t) - ref))))
    report(2, "matrix-form evaluation vs de Boor (1e4 cases, 1e-10)", worst <= 1e-10, f"max abs diff {worst:.1e}")


def test_criterion_3_visibility_fidelity():
    fov = FovSpec(np.deg2rad(90), np.deg2rad(60), 8.0)
    params = VisibilityParams.for_fov(fov, 40.0, 10.0, 20.0)
    agreement = model_fidelity(params, fov, 100_000, np.deg2rad(3.0), seed=0)
    report(3, "soft vs exact visibility at 3 deg margin (1e5 samples, >= 99%)", agreement >= 0.99, f"agreement {agreement:.4%}")


def test_criterion_4_zeta():
    start = time.perf_counter()
    rep = tilt_sensitivity_zeta(2.5, np.deg2rad(90), 20.0)
    elapsed = time.perf_counter() - start
    ok = 0.0151 <= rep.zeta <= 0.0211 and elapsed < 30.0
    report(4, "tilt sensitivity in [1.51%, 2.11%] within 30 s", ok, f"zeta {rep.zeta:.3%}; {elapsed:.2f} s")


def test_criterion_5_yaw_search_optimal():
    rng = np.random.default_rng(5)
    mismatches = 0
    infeasible = 0
    for _ in range(100):
        layers = int(rng.integers(2, 9))
        samples = int(rng.integers(2, 9))
        rate = float(rng.uniform(0.5, 4.0))
        ys = yaw_samples(samples)
        adj = rate_adjacency(ys, rate)
        gains = [rng.random((samples, samples)) for _ in range(layers - 1)]
        graph = YawGraph(ys, gains, [adj] * (layers - 1), 1.0, rate)
        best = enumerate_best_gain(gains, graph.adjacency)
        try:
            gain = solve_primitives(graph).gain
        except InfeasibleYawError:
            infeasible += 1
            mismatches += best is not None
            continue
        mismatches += best is None or gain != best
    report(5, "layered search gain equals enumeration (100 instances, exact)", mismatches == 0,
           f"{mismatches} mismatches, {infeasible} infeasible instances")


def test_criterion_6_end_to_end(cluster_plan, cluster_baseline):
    config = load_config(CONFIGS / "textured_cluster.json")
    fresh = run_pipeline(config)  # timed on its own, outside the session fixtures
    m, b = cluster_plan.metrics, cluster_baseline.metrics
    assert fresh.metrics.covisible_counts == m.covisible_counts
    ok = m.parallax_violations == 0 and m.mean_count > b.mean_count and fresh.generation_time < 1.0
    detail = (f"violations {m.parallax_violations}, mean count {m.mean_count:.2f} vs baseline {b.mean_count:.2f}, "
              f"generation {fresh.generation_time:.3f} s")
    report(6, "textured cluster end to end at 20 Hz", ok, detail)


def test_criterion_7_not_reproducible():
    RESULTS.append("criterion 7 [N/A] goal error and RMSE need a visual-inertial estimator in a rendering loop")
    pytest.skip("requires a visual-inertial estimator and photorealistic rendering; out of scope")
