"""Command-line front end.

    covisplan plan --config configs/textured_cluster.json --out out/
    covisplan evaluate --config configs/textured_cluster.json --curves out/curves.json --baseline
    covisplan analyze zeta --a-max 2.5

Exit codes: 0 success, 1 configuration or input error, 2 infeasible scene.
Log verbosity comes from the COVISPLAN_LOG environment variable
(DEBUG, INFO, WARNING, ...; default WARNING).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .environment import BlockedEndpointError, Environment, SceneError, UnreachableError, load_scene
from .evaluator import PerceptionMetrics, model_fidelity, tilt_sensitivity_zeta, trajectory_metrics
from .frames import DegenerateFrameError
from .pipeline import PlanOutput, plan_trajectory
from .position_planner import BoundaryState, PositionPlanConfig
from .splines import UniformBSpline, derivative, evaluate
from .visibility import FovSpec, VisibilityParams
from .yaw_planner import InfeasibleYawError, YawPlanConfig

logger = logging.getLogger("covisplan")

LOG_ENV = "COVISPLAN_LOG"
CURVES_SCHEMA = "covisplan.curves/1"
METRICS_SCHEMA = "covisplan.metrics/1"
TRACE_SCHEMA = "covisplan.trace/1"
TRAJECTORY_SCHEMA = "covisplan.trajectory/1"
EVALUATION_SCHEMA = "covisplan.evaluation/1"
ANALYSIS_SCHEMA = "covisplan.analysis/1"
CSV_RATE = 100.0
CSV_COLUMNS = ["t", "x", "y", "z", "vx", "vy", "vz", "ax", "ay", "az", "yaw", "yaw_rate"]

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE = 0, 1, 2


class ConfigError(ValueError):
    pass


class InfeasibleError(RuntimeError):
    pass


# ---------------------------------------------------------------- config


@dataclass
class PlannerConfig:
    """Everything a planning run needs. Angles in the JSON file are in degrees."""

    scene: Path
    start: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.5]))
    goal: np.ndarray = field(default_factory=lambda: np.array([20.0, 0.0, 1.5]))
    start_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    goal_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    fov: FovSpec = field(default_factory=FovSpec)
    visibility: VisibilityParams = field(default_factory=VisibilityParams)
    position: PositionPlanConfig = field(default_factory=PositionPlanConfig)
    yaw: YawPlanConfig = field(default_factory=YawPlanConfig)
    out_dir: Path = Path("out")
    seed: int = 0

    def __post_init__(self):
        if not Path(self.scene).is_file():
            raise ConfigError(f"scene file not found: {self.scene}")
        for name in ("start", "goal", "start_velocity", "goal_velocity"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != (3,) or not np.all(np.isfinite(v)):
                raise ConfigError(f"{name} must be three finite numbers")
            setattr(self, name, v)
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")

    @property
    def start_state(self) -> BoundaryState:
        return BoundaryState(self.start, self.start_velocity, np.zeros(3))

    @property
    def goal_state(self) -> BoundaryState:
        return BoundaryState(self.goal, self.goal_velocity, np.zeros(3))


_DEGREE_KEYS = {"alpha_h_deg": "alpha_h", "alpha_v_deg": "alpha_v", "rho_max_deg": "rho_max", "psi_dot_max_deg": "psi_dot_max"}


def _build(cls, section: dict, where: str, base=None):
    """Dataclass from a JSON section; ``*_deg`` keys are converted to radians."""
    if not isinstance(section, dict):
        raise ConfigError(f"{where} must be an object")
    names = {f.name for f in fields(cls) if f.init}
    values = {}
    for key, value in section.items():
        name = _DEGREE_KEYS.get(key, key)
        if name not in names:
            raise ConfigError(f"{where}: unknown field '{key}'")
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigError(f"{where}.{key} must be a number")
        values[name] = float(np.deg2rad(value)) if key in _DEGREE_KEYS else value
    try:
        return replace(base, **values) if base is not None else cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


TOP_LEVEL_KEYS = {"scene", "start", "goal", "start_velocity", "goal_velocity", "fov", "visibility", "position", "yaw", "out", "seed"}


def config_from_dict(data: dict, base_dir: Path = Path("."), overrides: dict | None = None) -> PlannerConfig:
    """Validate a config document. Relative paths resolve against ``base_dir``;
    ``overrides`` (scene, out, seed) come from command-line flags and win."""
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(data) - TOP_LEVEL_KEYS
    if unknown:
        raise ConfigError(f"unknown config field(s): {', '.join(sorted(unknown))}")
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    fov = _build(FovSpec, data.get("fov", {}), "fov")
    vis_section = dict(data.get("visibility", {}))
    if set(vis_section) - {"k1", "k2", "k3"}:
        raise ConfigError("visibility: only k1, k2 and k3 may be set; cone angles follow the fov")
    try:
        visibility = VisibilityParams.for_fov(fov, **vis_section)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"visibility: {exc}") from exc
    position = _build(PositionPlanConfig, data.get("position", {}), "position")
    yaw = _build(YawPlanConfig, data.get("yaw", {}), "yaw")

    if "scene" in overrides:
        scene = Path(overrides["scene"])
    elif "scene" in data:
        scene = base_dir / data["scene"]
    else:
        raise ConfigError("no scene given (config field 'scene' or --scene)")
    out_dir = Path(overrides["out"]) if "out" in overrides else base_dir / data.get("out", "out")
    seed = overrides.get("seed", data.get("seed", 0))
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("seed must be an integer")
    vectors = {}
    for name in ("start", "goal", "start_velocity", "goal_velocity"):
        if name in data:
            vectors[name] = data[name]
    try:
        return PlannerConfig(
            scene=scene, fov=fov, visibility=visibility, position=position, yaw=yaw, out_dir=out_dir, seed=seed, **vectors
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def load_config(path, overrides: dict | None = None) -> PlannerConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return config_from_dict(data, path.parent, overrides)


def _load_scene(path) -> Environment:
    try:
        return load_scene(path)
    except OSError as exc:
        raise ConfigError(f"cannot read scene {path}: {exc.strerror}") from exc
    except SceneError as exc:
        raise ConfigError(f"invalid scene {path}: {exc}") from exc


# ---------------------------------------------------------------- serialization


def curve_to_dict(curve: UniformBSpline) -> dict:
    return {
        "degree": curve.degree,
        "knot_span": float(curve.knot_span),
        "start_time": float(curve.start_time),
        "control_points": curve.control_points.tolist(),
    }


def curve_from_dict(data: dict) -> UniformBSpline:
    try:
        return UniformBSpline(
            np.asarray(data["control_points"], dtype=float),
            float(data["knot_span"]),
            degree=int(data["degree"]),
            start_time=float(data["start_time"]),
        )
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed curve record: {exc}") from exc


def curves_to_dict(position: UniformBSpline, yaw: UniformBSpline) -> dict:
    return {"schema": CURVES_SCHEMA, "position": curve_to_dict(position), "yaw": curve_to_dict(yaw)}


def load_curves(path) -> tuple[UniformBSpline, UniformBSpline]:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read curves {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict) or data.get("schema") != CURVES_SCHEMA:
        raise ConfigError(f"{path}: expected schema {CURVES_SCHEMA}")
    try:
        return curve_from_dict(data["position"]), curve_from_dict(data["yaw"])
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def sample_trajectory(position: UniformBSpline, yaw: UniformBSpline, rate: float = CSV_RATE) -> np.ndarray:
    """Rows of CSV_COLUMNS sampled at ``rate`` Hz over the position domain."""
    lo, hi = position.domain
    n = int(np.floor((hi - lo) * rate + 1e-9)) + 1
    t = lo + np.arange(n) / rate
    vel_c = derivative(position)
    acc_c = derivative(vel_c)
    yaw_rate = evaluate(derivative(yaw), t)[:, 0]
    return np.column_stack([t, evaluate(position, t), evaluate(vel_c, t), evaluate(acc_c, t), evaluate(yaw, t)[:, 0], yaw_rate])


def write_csv(path: Path, rows: np.ndarray):
    """Trajectory CSV: one '# schema: ...' comment line, a header, then rows."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# schema: {TRAJECTORY_SCHEMA}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow([repr(float(x)) for x in row])


def write_json(path: Path, data):
    Path(path).write_text(json.dumps(data, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _floats(values) -> list:
    return [float(v) for v in np.asarray(values).ravel()]


def metrics_to_dict(metrics: PerceptionMetrics) -> dict:
    d = metrics.to_dict()
    d["rho_max_deg"] = float(np.rad2deg(metrics.rho_max))
    return d


def trace_to_dict(out: PlanOutput, config: PlannerConfig) -> dict:
    pos, prim, yaw = out.position, out.primitives, out.yaw
    return {
        "schema": TRACE_SCHEMA,
        "seed": int(config.seed),
        "initial_path": [_floats(p) for p in pos.path],
        "position": {
            "costs": _floats(pos.trace),
            "iterations": int(pos.iterations),
            "converged": bool(pos.converged),
            "warning": pos.warning,
            "initial_terms": {k: float(v) for k, v in pos.initial_terms.items()},
            "final_terms": {k: float(v) for k, v in pos.terms.items()},
            "initial_knot_span": float(pos.initial_curve.knot_span),
            "final_knot_span": float(pos.curve.knot_span),
        },
        "primitives": {
            "yaws": _floats(prim.yaws),
            "indices": [int(i) for i in prim.indices],
            "gain": float(prim.gain),
            "yaw_change": float(prim.yaw_change),
        },
        "yaw": {
            "costs": _floats(yaw.trace),
            "converged": bool(yaw.converged),
            "initial_covisibility": float(yaw.initial_covisibility),
            "final_covisibility": float(yaw.final_covisibility),
        },
    }


# ---------------------------------------------------------------- commands


def run_pipeline(config: PlannerConfig, env: Environment | None = None, position: PositionPlanConfig | None = None) -> PlanOutput:
    """Plan with ``config`` (optionally a different position config). Infeasible scenes raise InfeasibleError."""
    env = env if env is not None else _load_scene(config.scene)
    try:
        return plan_trajectory(
            env,
            config.start_state,
            config.goal_state,
            config.fov,
            config.visibility,
            position or config.position,
            config.yaw,
            nu=(position or config.position).nu,
        )
    except (BlockedEndpointError, UnreachableError, InfeasibleYawError, DegenerateFrameError) as exc:
        raise InfeasibleError(str(exc)) from exc


def run_plan(config: PlannerConfig) -> PlanOutput:
    """Run the pipeline and write trajectory.csv, curves.json, metrics.json and trace.json."""
    out = run_pipeline(config)
    config.out_dir.mkdir(parents=True, exist_ok=True)
    write_csv(config.out_dir / "trajectory.csv", sample_trajectory(out.position.curve, out.yaw.curve))
    write_json(config.out_dir / "curves.json", curves_to_dict(out.position.curve, out.yaw.curve))
    write_json(config.out_dir / "metrics.json", {"schema": METRICS_SCHEMA, **metrics_to_dict(out.metrics)})
    write_json(config.out_dir / "trace.json", trace_to_dict(out, config))
    m = out.metrics
    logger.info(
        "planned %.2f s trajectory in %.3f s: mean covisible %.1f, min %d, parallax violations %d",
        out.position.curve.duration, out.generation_time, m.mean_count, m.min_count, m.parallax_violations,
    )
    return out


def run_evaluate(config: PlannerConfig, curves_path, baseline: bool = False) -> dict:
    """Metrics of stored curves; with ``baseline`` also re-plans perception-agnostically."""
    env = _load_scene(config.scene)
    position, yaw = load_curves(curves_path)
    nu = config.position.nu
    try:
        metrics = trajectory_metrics(position, yaw, env, config.fov, nu, config.position.rho_max, config.position.gravity)
    except (ValueError, DegenerateFrameError) as exc:
        raise ConfigError(f"cannot evaluate {curves_path}: {exc}") from exc
    report = {"schema": EVALUATION_SCHEMA, "planner": metrics_to_dict(metrics)}
    if baseline:
        agnostic = run_pipeline(config, env, config.position.perception_agnostic())
        report["baseline"] = metrics_to_dict(agnostic.metrics)
        report["baseline_curves"] = curves_to_dict(agnostic.position.curve, agnostic.yaw.curve)
    return report


def run_analysis(kind: str, args) -> dict:
    if kind == "zeta":
        rep = tilt_sensitivity_zeta(
            args.a_max, np.deg2rad(args.alpha_h_deg), args.k3, sphere_points=args.sphere_points, angle_points=args.angle_points
        )
        return {"schema": ANALYSIS_SCHEMA, "kind": "zeta", "zeta_percent": 100.0 * rep.zeta, **rep.to_dict()}
    if kind == "fidelity":
        fov = FovSpec(np.deg2rad(args.alpha_h_deg), np.deg2rad(args.alpha_v_deg), args.d_max)
        params = VisibilityParams.for_fov(fov, args.k1, args.k2, args.k3)
        agreement = model_fidelity(params, fov, args.samples, np.deg2rad(args.margin_deg), args.seed, args.a_max)
        return {
            "schema": ANALYSIS_SCHEMA,
            "kind": "fidelity",
            "agreement": agreement,
            "samples": int(args.samples),
            "margin_deg": float(args.margin_deg),
            "seed": int(args.seed),
            "k": [float(args.k1), float(args.k2), float(args.k3)],
            "alpha_h_deg": float(args.alpha_h_deg),
            "alpha_v_deg": float(args.alpha_v_deg),
        }
    raise ConfigError(f"unknown analysis kind '{kind}' (expected fidelity or zeta)")


# ---------------------------------------------------------------- argument parsing


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with the configuration-error code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="covisplan", description="Covisibility-aware quadrotor trajectory planning.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="JSON planner config")
        p.add_argument("--scene", help="scene JSON (overrides the config)")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--seed", type=_seed, help="seed for every stochastic component")

    p_plan = sub.add_parser("plan", help="plan a trajectory and write its artifacts")
    common(p_plan)

    p_eval = sub.add_parser("evaluate", help="compute perception metrics of planned curves")
    common(p_eval)
    p_eval.add_argument("--curves", help="curves JSON (default: <out>/curves.json)")
    p_eval.add_argument("--baseline", action="store_true", help="also re-plan without perception costs")

    p_an = sub.add_parser("analyze", help="visibility-model analyses")
    p_an.add_argument("kind", help="fidelity or zeta")
    p_an.add_argument("--out", help="write the report here instead of standard output")
    p_an.add_argument("--seed", type=_seed, default=0)
    p_an.add_argument("--a-max", type=float, default=2.5)
    p_an.add_argument("--alpha-h-deg", type=float, default=90.0)
    p_an.add_argument("--alpha-v-deg", type=float, default=60.0)
    p_an.add_argument("--d-max", type=float, default=8.0)
    p_an.add_argument("--k1", type=float, default=40.0)
    p_an.add_argument("--k2", type=float, default=10.0)
    p_an.add_argument("--k3", type=float, default=20.0)
    p_an.add_argument("--samples", type=int, default=100_000)
    p_an.add_argument("--margin-deg", type=float, default=3.0)
    p_an.add_argument("--sphere-points", type=int, default=64 * 64)
    p_an.add_argument("--angle-points", type=int, default=33)
    return parser


def _config_from_args(args) -> PlannerConfig:
    overrides = {"scene": args.scene, "out": args.out, "seed": args.seed}
    if args.config:
        return load_config(args.config, overrides)
    return config_from_dict({}, Path("."), overrides)


def _setup_logging():
    level_name = os.environ.get(LOG_ENV, "WARNING").upper()
    level = logging.getLevelName(level_name)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        if args.command == "plan":
            run_plan(_config_from_args(args))
        elif args.command == "evaluate":
            config = _config_from_args(args)
            curves = args.curves or config.out_dir / "curves.json"
            report = run_evaluate(config, curves, args.baseline)
            config.out_dir.mkdir(parents=True, exist_ok=True)
            write_json(config.out_dir / "evaluation.json", report)
            line = f"planner: mean {report['planner']['mean_count']:.2f} min {report['planner']['min_count']}"
            if "baseline" in report:
                line += f" | baseline: mean {report['baseline']['mean_count']:.2f} min {report['baseline']['min_count']}"
            print(line)
        else:
            try:
                report = run_analysis(args.kind, args)
            except ValueError as exc:
                if isinstance(exc, ConfigError):
                    raise
                raise ConfigError(str(exc)) from exc
            if args.out:
                Path(args.out).parent.mkdir(parents=True, exist_ok=True)
                write_json(Path(args.out), report)
            else:
                sys.stdout.write(json.dumps(report, indent=1, sort_keys=True) + "\n")
    except ConfigError as exc:
        print(f"covisplan: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleError as exc:
        print(f"covisplan: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
