"""Two-stage planning pipeline: position first, then yaw."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .environment import Environment
from .evaluator import PerceptionMetrics, trajectory_metrics
from .position_planner import PositionPlanConfig, PositionPlanResult, optimize_position
from .visibility import FovSpec, VisibilityParams
from .yaw_planner import PrimitivePath, YawPlanConfig, YawPlanResult, build_yaw_graph, optimize_yaw, solve_primitives


@dataclass
class PlanOutput:
    position: PositionPlanResult
    primitives: PrimitivePath
    yaw: YawPlanResult
    metrics: PerceptionMetrics
    timings: dict = field(default_factory=dict)

    @property
    def generation_time(self) -> float:
        return sum(v for k, v in self.timings.items() if k != "metrics")


def plan_trajectory(
    env: Environment,
    start,
    goal,
    fov: FovSpec,
    params: VisibilityParams,
    position_config: PositionPlanConfig,
    yaw_config: YawPlanConfig,
    nu: float = 20.0,
) -> PlanOutput:
    timings = {}
    t0 = time.perf_counter()
    pos = optimize_position(env, start, goal, fov, params, position_config)
    t1 = time.perf_counter()
    graph = build_yaw_graph(pos.curve, env, fov, params, yaw_config)
    prim = solve_primitives(graph)
    t2 = time.perf_counter()
    yaw = optimize_yaw(pos.curve, prim.yaws, env, fov, params, yaw_config)
    t3 = time.perf_counter()
    metrics = trajectory_metrics(pos.curve, yaw.curve, env, fov, nu, position_config.rho_max, position_config.gravity)
    t4 = time.perf_counter()
    timings.update(position=t1 - t0, primitives=t2 - t1, yaw=t3 - t2, metrics=t4 - t3)
    return PlanOutput(pos, prim, yaw, metrics, timings)
