"""Limited-memory BFGS with projected backtracking line search.

Only simple lower bounds are supported, which is all the planners need
(the knot span is bounded below). The best iterate seen is always returned.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

logger = logging.getLogger(__name__)


@dataclass
class OptimizeResult:
    x: np.ndarray
    cost: float
    initial_cost: float
    iterations: int
    evaluations: int
    converged: bool
    message: str
    trace: list = field(default_factory=list)


def _project(x, lower):
    return x if lower is None else np.maximum(x, lower)


def minimize_lbfgs(
    fun: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x0,
    lower=None,
    max_iterations: int = 200,
    gradient_tolerance: float = 1e-6,
    relative_cost_tolerance: float = 1e-7,
    memory: int = 10,
    armijo: float = 1e-4,
    max_backtracks: int = 40,
) -> OptimizeResult:
    """Minimise ``fun`` (returning value and gradient) from ``x0``.

    Stops on projected-gradient norm below ``gradient_tolerance``, relative
    cost decrease below ``relative_cost_tolerance``, a failed line search or
    ``max_iterations``. Non-finite objective values are treated as +inf and
    rejected by the line search.
    """
    x = _project(np.array(x0, dtype=float), lower)
    lower = None if lower is None else np.broadcast_to(np.asarray(lower, dtype=float), x.shape)
    f, g = fun(x)
    n_eval = 1
    if not np.isfinite(f):
        raise ValueError("objective is not finite at the initial point")
    initial = f
    trace = [float(f)]
    best_x, best_f = x.copy(), f
    s_hist: deque = deque(maxlen=memory)
    y_hist: deque = deque(maxlen=memory)
    converged = False
    message = "maximum iterations reached"

    def active(x, g):
        if lower is None:
            return np.zeros(x.shape, dtype=bool)
        return (x <= lower) & (g > 0)

    it = 0
    for it in range(1, max_iterations + 1):
        act = active(x, g)
        pg = np.where(act, 0.0, g)
        if np.linalg.norm(pg) < gradient_tolerance:
            converged, message = True, "gradient tolerance reached"
            it -= 1
            break

        # two-loop recursion on the free variables
        q = pg.copy()
        alphas = []
        for s, y in zip(reversed(s_hist), reversed(y_hist)):
            rho = 1.0 / np.dot(y, s)
            a = rho * np.dot(s, q)
            alphas.append(a)
            q -= a * y
        if s_hist:
            s, y = s_hist[-1], y_hist[-1]
            q *= np.dot(s, y) / np.dot(y, y)
        else:
            q /= max(np.linalg.norm(pg), 1.0)
        for (s, y), a in zip(zip(s_hist, y_hist), reversed(alphas)):
            rho = 1.0 / np.dot(y, s)
            b = rho * np.dot(y, q)
            q += (a - b) * s
        direction = np.where(act, 0.0, -q)
        if np.dot(direction, pg) >= 0:
            s_hist.clear()
            y_hist.clear()
            direction = -pg / max(np.linalg.norm(pg), 1.0)

        step = 1.0
        accepted = False
        for _ in range(max_backtracks):
            x_new = _project(x + step * direction, lower)
            f_new, g_new = fun(x_new)
            n_eval += 1
            if np.isfinite(f_new) and f_new <= f + armijo * np.dot(g, x_new - x):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            if s_hist:
                # retry next iteration from steepest descent
                s_hist.clear()
                y_hist.clear()
                continue
            message = "line search failed"
            break

        s_vec = x_new - x
        y_vec = g_new - g
        if np.dot(s_vec, y_vec) > 1e-12 * np.dot(y_vec, y_vec):
            s_hist.append(s_vec)
            y_hist.append(y_vec)
        rel = abs(f - f_new) / max(abs(f), 1e-12)
        x, f, g = x_new, f_new, g_new
        trace.append(float(f))
        if f < best_f:
            best_x, best_f = x.copy(), f
        if rel < relative_cost_tolerance:
            converged, message = True, "relative cost tolerance reached"
            break

    logger.debug("lbfgs: %s after %d iterations, cost %.6g -> %.6g", message, it, initial, best_f)
    return OptimizeResult(best_x, float(best_f), float(initial), it, n_eval, converged, message, trace)
