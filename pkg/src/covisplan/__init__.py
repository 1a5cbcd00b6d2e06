"""Covisibility-aware quadrotor trajectory planning on uniform B-splines."""

from .environment import Environment, astar_initial_path, load_scene
from .evaluator import exact_visibility, model_fidelity, tilt_sensitivity_zeta, trajectory_metrics
from .frames import QuadKnotState, camera_frame, knot_states, thrust_dir
from .pipeline import PlanOutput, plan_trajectory
from .position_planner import PositionPlanConfig, optimize_position
from .splines import UniformBSpline, derivative, evaluate, fit_waypoints, knot_points
from .visibility import FovSpec, VisibilityParams, covisibility, parallax, visibility, visibility_grad
from .yaw_planner import YawPlanConfig, build_yaw_graph, optimize_yaw, solve_primitives

__version__ = "0.1.0"
