"""Chance-constrained Hybrid-A* over bicycle-model motion primitives with
pluggable per-state collision-probability checkers (learned field, z-test, SPRT)."""

from __future__ import annotations

import heapq
import json
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import mc
from .geometry import ConvexPolygon, Pose2, RobotSpec, intersects, rect_polygon, wrap_angle
from .mc import ObstacleSpec, SprtParams
from .model import EnsembleModel, aggregate, member_predictions


@dataclass(frozen=True)
class PrimitiveParams:
    max_steer: float = 0.8
    arc_lengths: tuple[float, float] = (1.0, 2.0)
    n_steer: int = 5
    speed: float = 2.0
    n_sweep: int = 5  # interior sweep poses per primitive

    def __post_init__(self):
        if not 0 < self.max_steer < math.pi / 2:
            raise ValueError("max_steer must be in (0, pi/2)")


@dataclass(frozen=True)
class MotionPrimitive:
    index: int
    steering: float
    arc_length: float
    duration: float
    # relative poses (dx, dy, dphi, arc fraction) at the sweep points and endpoint
    sweep: tuple[tuple[float, float, float, float], ...]

    @property
    def endpoint(self) -> tuple[float, float, float]:
        return self.sweep[-1][:3]


def _arc_pose(kappa: float, s: float) -> tuple[float, float, float]:
    if abs(kappa) < 1e-12:
        return (s, 0.0, 0.0)
    dphi = kappa * s
    return (math.sin(dphi) / kappa, (1.0 - math.cos(dphi)) / kappa, dphi)


def motion_primitives(robot: RobotSpec, params: PrimitiveParams) -> list[MotionPrimitive]:
    """Steering angles evenly spaced in [-max, +max] crossed with the arc lengths."""
    steerings = np.linspace(-params.max_steer, params.max_steer, params.n_steer)
    prims = []
    idx = 0
    for steer in steerings:
        kappa = math.tan(steer) / robot.wheelbase
        for s in params.arc_lengths:
            fracs = [(k + 1) / (params.n_sweep + 1) for k in range(params.n_sweep)] + [1.0]
            sweep = tuple((*_arc_pose(kappa, f * s), f) for f in fracs)
            prims.append(
                MotionPrimitive(
                    index=idx, steering=float(steer), arc_length=float(s),
                    duration=float(s / params.speed), sweep=sweep,
                )
            )
            idx += 1
    return prims


def apply_relative(pose: Pose2, rel: tuple[float, float, float]) -> Pose2:
    dx, dy, dphi = rel
    c, s = math.cos(pose.phi), math.sin(pose.phi)
    return Pose2(pose.x + c * dx - s * dy, pose.y + s * dx + c * dy, pose.phi + dphi)


def combined_cp(per_obstacle) -> float:
    """Probability of colliding with any of several independent obstacles."""
    total = 1.0
    for p in per_obstacle:
        if not 0.0 <= p <= 1.0:
            raise ValueError("per-obstacle probabilities must be in [0, 1]")
        total *= 1.0 - p
    return 1.0 - total


@dataclass(frozen=True)
class GoalRegion:
    center: tuple[float, float]
    radius: float
    heading: float | None = None
    heading_tol: float = math.pi / 4

    def reached(self, pose: Pose2) -> bool:
        if math.hypot(pose.x - self.center[0], pose.y - self.center[1]) > self.radius:
            return False
        if self.heading is None:
            return True
        return abs(wrap_angle(pose.phi - self.heading)) <= self.heading_tol


@dataclass(frozen=True)
class UncertainObstacle:
    spec: ObstacleSpec
    waypoints: tuple[tuple[float, float, float, float], ...] | None = None  # (t, x, y, phi)
    growth: tuple[float, float, float, float, float] = (0.0,) * 5  # variance growth per second


@dataclass(frozen=True)
class ObstaclePrediction:
    spec: ObstacleSpec
    held_beyond_horizon: bool = False


def predict_obstacle(o: UncertainObstacle, t: float) -> ObstaclePrediction:
    """Mean pose interpolated along the waypoints; variances grow linearly in t."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    x, y, phi, l1, l2 = o.spec.mean
    held = False
    if o.waypoints:
        wps = o.waypoints
        if t <= wps[0][0]:
            _, x, y, phi = wps[0]
        elif t >= wps[-1][0]:
            _, x, y, phi = wps[-1]
            held = t > wps[-1][0]
        else:
            for (t0, x0, y0, p0), (t1, x1, y1, p1) in zip(wps[:-1], wps[1:]):
                if t0 <= t <= t1:
                    u = (t - t0) / (t1 - t0)
                    x = x0 + u * (x1 - x0)
                    y = y0 + u * (y1 - y0)
                    phi = p0 + u * wrap_angle(p1 - p0)
                    break
    sigma = tuple(
        math.sqrt(s * s + t * q) for s, q in zip(o.spec.sigma, o.growth)
    )
    return ObstaclePrediction(
        spec=ObstacleSpec(mean=(x, y, wrap_angle(phi), l1, l2), sigma=sigma),
        held_beyond_horizon=held,
    )


def obstacle_frame_query_row(robot_pose: Pose2, spec: ObstacleSpec) -> np.ndarray:
    """Express the robot pose in the obstacle's mean frame; canonical query layout."""
    ox, oy, ophi, l1, l2 = spec.mean
    c, s = math.cos(ophi), math.sin(ophi)
    dx, dy = robot_pose.x - ox, robot_pose.y - oy
    return np.array(
        [c * dx + s * dy, -s * dx + c * dy, wrap_angle(robot_pose.phi - ophi), l1, l2, *spec.sigma]
    )


def far_skip_distance(robot: RobotSpec, spec: ObstacleSpec) -> float:
    """Center distance beyond which the collision probability is below ~1e-8.

    Circumradii cover all rotations; position and length noise covered to 6 sigma.
    """
    _, _, _, l1, l2 = spec.mean
    sx, sy, _, sl1, sl2 = spec.sigma
    r_robot = 0.5 * math.hypot(robot.width, robot.height)
    r_obst = 0.5 * math.hypot(l1 + 6.0 * sl1, l2 + 6.0 * sl2)
    return r_robot + r_obst + 6.0 * math.hypot(sx, sy)


@dataclass
class Scenario:
    workspace: tuple[float, float, float, float]  # xmin, ymin, xmax, ymax
    static_obstacles: list[ConvexPolygon]
    uncertain_obstacles: list[UncertainObstacle]
    robot: RobotSpec
    start: Pose2
    goal: GoalRegion
    p_max: float
    primitives: PrimitiveParams = PrimitiveParams()
    name: str = ""

    def __post_init__(self):
        if not 0.0 < self.p_max < 1.0:
            raise ValueError("p_max must be in (0, 1)")

    @property
    def dynamic(self) -> bool:
        return any(
            o.waypoints is not None or any(q > 0 for q in o.growth)
            for o in self.uncertain_obstacles
        )


def footprint_inside_workspace(scenario: Scenario, footprint: ConvexPolygon) -> bool:
    xmin, ymin, xmax, ymax = scenario.workspace
    x0, y0, x1, y1 = footprint.bounding_box()
    return x0 >= xmin and y0 >= ymin and x1 <= xmax and y1 <= ymax


def statically_valid(scenario: Scenario, pose: Pose2) -> bool:
    fp = scenario.robot.footprint(pose)
    if not footprint_inside_workspace(scenario, fp):
        return False
    return not any(intersects(fp, obs) for obs in scenario.static_obstacles)


class SafetyChecker:
    """Per-state chance-constraint checker; counts its CP queries and MC samples."""

    name = "base"

    def __init__(self):
        self.queries = 0
        self.samples = 0
        self._cache: dict = {}

    def reset_counters(self):
        self.queries = 0
        self.samples = 0
        self._cache.clear()

    @staticmethod
    def _key(pose: Pose2, t: float):
        return (round(pose.x, 6), round(pose.y, 6), round(pose.phi, 6), round(t, 6))

    def states_safe(self, poses: list[Pose2], times: list[float], scenario: Scenario) -> np.ndarray:
        raise NotImplementedError


class DcpfChecker(SafetyChecker):
    """Neural CP field checker; evaluates all queries of a call as one batch."""

    name = "dcpf"

    def __init__(self, model: EnsembleModel, mode: str = "ci_upper"):
        super().__init__()
        if mode in ("ci_upper", "ci_lower") and model.k < 2:
            raise ValueError("confidence-interval modes need at least 2 members")
        self.model = model
        self.mode = mode

    def states_safe(self, poses, times, scenario) -> np.ndarray:
        out = np.zeros(len(poses), dtype=bool)
        rows = []
        row_owner = []
        pending = []
        pending_base = []  # combined CP from skipped-far obstacles is exactly 0
        for i, (pose, t) in enumerate(zip(poses, times)):
            key = self._key(pose, t)
            if key in self._cache:
                out[i] = self._cache[key]
                continue
            pending.append((i, key))
            pending_base.append(1.0)
            for obstacle in scenario.uncertain_obstacles:
                spec = predict_obstacle(obstacle, t).spec
                dist = math.hypot(pose.x - spec.mean[0], pose.y - spec.mean[1])
                if dist > far_skip_distance(scenario.robot, spec):
                    continue
                rows.append(obstacle_frame_query_row(pose, spec))
                row_owner.append(len(pending) - 1)
        if rows:
            q = np.vstack(rows)
            self.queries += len(rows)
            preds = aggregate(member_predictions(self.model, q), self.mode, self.model.k)
            for owner, p in zip(row_owner, preds):
                pending_base[owner] *= 1.0 - p
        for (i, key), survive in zip(pending, pending_base):
            safe = (1.0 - survive) <= scenario.p_max
            self._cache[key] = safe
            out[i] = safe
        return out


def _joint_hit_sampler(pose: Pose2, robot: RobotSpec, specs: list[ObstacleSpec]):
    def sample_bools(n: int, rng: np.random.Generator) -> np.ndarray:
        hits = np.zeros(n, dtype=bool)
        for spec in specs:
            configs = spec.sample_configs(n, rng)
            hits |= mc.rect_overlap_batch(pose, robot, configs)
        return hits

    return sample_bools


class SamplingChecker(SafetyChecker):
    """Shared machinery for the z-test and SPRT baselines: joint sampling of all
    nearby obstacles, one sequential test per state."""

    def __init__(self, n_max: int, seed: int):
        super().__init__()
        self.n_max = int(n_max)
        self.rng = mc.make_rng(seed, stream=0xC4EC)

    def _near_specs(self, pose: Pose2, t: float, scenario: Scenario) -> list[ObstacleSpec]:
        specs = []
        for obstacle in scenario.uncertain_obstacles:
            spec = predict_obstacle(obstacle, t).spec
            dist = math.hypot(pose.x - spec.mean[0], pose.y - spec.mean[1])
            if dist <= far_skip_distance(scenario.robot, spec):
                specs.append(spec)
        return specs

    def _decide(self, sample_bools, p_max: float) -> mc.SafetyDecision:
        raise NotImplementedError

    def states_safe(self, poses, times, scenario) -> np.ndarray:
        out = np.zeros(len(poses), dtype=bool)
        for i, (pose, t) in enumerate(zip(poses, times)):
            key = self._key(pose, t)
            if key in self._cache:
                out[i] = self._cache[key]
                continue
            specs = self._near_specs(pose, t, scenario)
            if not specs:
                safe = True
            else:
                self.queries += 1
                decision = self._decide(
                    _joint_hit_sampler(pose, scenario.robot, specs), scenario.p_max
                )
                self.samples += decision.samples_used
                safe = decision.is_safe
            self._cache[key] = safe
            out[i] = safe
        return out


class ZTestChecker(SamplingChecker):
    name = "ztest"

    def __init__(self, n_max: int = 100_000, seed: int = 0):
        super().__init__(n_max, seed)

    def _decide(self, sample_bools, p_max):
        def hit_counts(n, rng):
            return int(sample_bools(n, rng).sum())

        return mc.ztest_from_sampler(hit_counts, p_max, self.n_max, self.rng)


class SprtChecker(SamplingChecker):
    name = "sprt"

    def __init__(self, n_max: int = 4_000_000, seed: int = 0, params: SprtParams | None = None):
        super().__init__(n_max, seed)
        self.params = params or SprtParams()

    def _decide(self, sample_bools, p_max):
        return mc.sprt_from_sampler(sample_bools, p_max, self.n_max, self.params, self.rng)


@dataclass
class PlanState:
    pose: Pose2
    t: float
    g_cost: float
    parent: int | None = None
    prim_index: int | None = None


@dataclass
class PlanResult:
    status: str  # solved | infeasible_start | no_path | budget_exhausted | timeout
    path: list[tuple[PlanState, MotionPrimitive | None]]
    cost: float
    expanded: int
    checker_queries: int
    checker_samples: int
    wall_time: float

    @property
    def solved(self) -> bool:
        return self.status == "solved"

    def poses(self) -> list[Pose2]:
        return [state.pose for state, _ in self.path]

    def states(self) -> list[PlanState]:
        return [state for state, _ in self.path]


def _sweep_poses_times(state: PlanState, prim: MotionPrimitive, dynamic: bool):
    poses = []
    times = []
    for dx, dy, dphi, frac in prim.sweep:
        poses.append(apply_relative(state.pose, (dx, dy, dphi)))
        times.append(state.t + frac * prim.duration if dynamic else 0.0)
    return poses, times


def state_safe(state: PlanState, scenario: Scenario, checker: SafetyChecker,
               prim: MotionPrimitive | None = None, parent: PlanState | None = None) -> bool:
    """Static, workspace, and chance-constraint check of a state.

    When the incoming primitive and its parent are given, every sweep pose
    along the primitive is checked as well.
    """
    if prim is not None and parent is not None:
        poses, times = _sweep_poses_times(parent, prim, scenario.dynamic)
    else:
        poses, times = [state.pose], [state.t]
    if not all(statically_valid(scenario, p) for p in poses):
        return False
    return bool(np.all(checker.states_safe(poses, times, scenario)))


@dataclass(frozen=True)
class SearchParams:
    grid_xy: float = 0.5
    n_heading_bins: int = 16
    time_bin: float = 0.5
    node_budget: int = 200_000
    timeout_s: float | None = None


def hybrid_astar(
    scenario: Scenario, checker: SafetyChecker, search: SearchParams = SearchParams()
) -> PlanResult:
    """Best-first search over poses with discretized closed-set keys.

    Cost is accumulated arc length for static scenarios and duration for
    dynamic ones; the heuristic is the Euclidean distance to the goal region
    (scaled by 1/speed for time costs), which never overestimates.
    """
    t_start = time.perf_counter()
    dynamic = scenario.dynamic
    prims = motion_primitives(scenario.robot, scenario.primitives)
    speed = scenario.primitives.speed

    def heuristic(pose: Pose2) -> float:
        d = math.hypot(pose.x - scenario.goal.center[0], pose.y - scenario.goal.center[1])
        d = max(0.0, d - scenario.goal.radius)
        return d / speed if dynamic else d

    def key_of(pose: Pose2, t: float):
        ix = math.floor(pose.x / search.grid_xy)
        iy = math.floor(pose.y / search.grid_xy)
        bin_width = 2.0 * math.pi / search.n_heading_bins
        iphi = int(math.floor((pose.phi + math.pi) / bin_width)) % search.n_heading_bins
        if dynamic:
            return (ix, iy, iphi, math.floor(t / search.time_bin))
        return (ix, iy, iphi)

    def result(status, path, cost, expanded):
        return PlanResult(
            status=status, path=path, cost=cost, expanded=expanded,
            checker_queries=checker.queries, checker_samples=checker.samples,
            wall_time=time.perf_counter() - t_start,
        )

    start_state = PlanState(pose=scenario.start, t=0.0, g_cost=0.0)
    if not state_safe(start_state, scenario, checker):
        return result("infeasible_start", [], math.inf, 0)

    states = [start_state]
    open_heap = []
    counter = 0
    h0 = heuristic(scenario.start)
    heapq.heappush(open_heap, (h0, h0, counter, 0))
    best_g = {key_of(scenario.start, 0.0): 0.0}
    closed = set()
    expanded = 0

    while open_heap:
        if search.timeout_s is not None and time.perf_counter() - t_start > search.timeout_s:
            return result("timeout", [], math.inf, expanded)
        _, _, _, sid = heapq.heappop(open_heap)
        state = states[sid]
        key = key_of(state.pose, state.t)
        if key in closed:
            continue
        closed.add(key)
        expanded += 1
        if scenario.goal.reached(state.pose):
            path = []
            cur: int | None = sid
            while cur is not None:
                st = states[cur]
                prim = prims[st.prim_index] if st.prim_index is not None else None
                path.append((st, prim))
                cur = st.parent
            path.reverse()
            return result("solved", path, state.g_cost, expanded)
        if expanded >= search.node_budget:
            return result("budget_exhausted", [], math.inf, expanded)

        # generate candidate successors, then batch the chance-constraint checks
        candidates = []
        all_poses: list[Pose2] = []
        all_times: list[float] = []
        spans = []
        for prim in prims:
            end_pose = apply_relative(state.pose, prim.endpoint)
            t_child = state.t + prim.duration if dynamic else 0.0
            child_key = key_of(end_pose, t_child)
            if child_key in closed:
                continue
            g_child = state.g_cost + (prim.duration if dynamic else prim.arc_length)
            if g_child >= best_g.get(child_key, math.inf):
                continue
            poses, times = _sweep_poses_times(state, prim, dynamic)
            if not all(statically_valid(scenario, p) for p in poses):
                continue
            spans.append((len(all_poses), len(poses)))
            all_poses.extend(poses)
            all_times.extend(times)
            candidates.append((prim, end_pose, t_child, child_key, g_child))
        if candidates:
            flags = checker.states_safe(all_poses, all_times, scenario)
            for (prim, end_pose, t_child, child_key, g_child), (lo, n) in zip(candidates, spans):
                if not np.all(flags[lo : lo + n]):
                    continue
                if g_child >= best_g.get(child_key, math.inf):
                    continue
                best_g[child_key] = g_child
                counter += 1
                states.append(
                    PlanState(pose=end_pose, t=t_child, g_cost=g_child,
                              parent=sid, prim_index=prim.index)
                )
                h = heuristic(end_pose)
                heapq.heappush(open_heap, (g_child + h, h, counter, len(states) - 1))

    return result("no_path", [], math.inf, expanded)


def make_checker(kind: str, *, model: EnsembleModel | None = None, mode: str = "ci_upper",
                 n_max: int | None = None, seed: int = 0,
                 sprt_params: SprtParams | None = None) -> SafetyChecker:
    if kind == "dcpf":
        if model is None:
            raise ValueError("the dcpf checker needs a model")
        return DcpfChecker(model, mode=mode)
    if kind == "ztest":
        return ZTestChecker(n_max=n_max or 100_000, seed=seed)
    if kind == "sprt":
        return SprtChecker(n_max=n_max or 4_000_000, seed=seed, params=sprt_params)
    raise ValueError(f"unknown checker kind: {kind}")


def scenario_to_json(scenario: Scenario) -> dict:
    return {
        "name": scenario.name,
        "workspace": list(scenario.workspace),
        "static_obstacles": [obs.vertices.tolist() for obs in scenario.static_obstacles],
        "uncertain_obstacles": [
            {
                "mean": list(o.spec.mean),
                "sigma": list(o.spec.sigma),
                "waypoints": [list(w) for w in o.waypoints] if o.waypoints else None,
                "growth": list(o.growth),
            }
            for o in scenario.uncertain_obstacles
        ],
        "robot": {"width": scenario.robot.width, "height": scenario.robot.height,
                  "wheelbase": scenario.robot.wheelbase},
        "start": [scenario.start.x, scenario.start.y, scenario.start.phi],
        "goal": {
            "center": list(scenario.goal.center),
            "radius": scenario.goal.radius,
            "heading": scenario.goal.heading,
            "heading_tol": scenario.goal.heading_tol,
        },
        "p_max": scenario.p_max,
        "primitives": {
            "max_steer": scenario.primitives.max_steer,
            "arc_lengths": list(scenario.primitives.arc_lengths),
            "n_steer": scenario.primitives.n_steer,
            "speed": scenario.primitives.speed,
            "n_sweep": scenario.primitives.n_sweep,
        },
    }


def scenario_from_json(data: dict) -> Scenario:
    prim = data.get("primitives", {})
    return Scenario(
        name=data.get("name", ""),
        workspace=tuple(data["workspace"]),
        static_obstacles=[ConvexPolygon(v) for v in data["static_obstacles"]],
        uncertain_obstacles=[
            UncertainObstacle(
                spec=ObstacleSpec(mean=tuple(o["mean"]), sigma=tuple(o["sigma"])),
                waypoints=tuple(tuple(w) for w in o["waypoints"]) if o.get("waypoints") else None,
                growth=tuple(o.get("growth") or (0.0,) * 5),
            )
            for o in data["uncertain_obstacles"]
        ],
        robot=RobotSpec(**data["robot"]),
        start=Pose2(*data["start"]),
        goal=GoalRegion(
            center=tuple(data["goal"]["center"]),
            radius=data["goal"]["radius"],
            heading=data["goal"].get("heading"),
            heading_tol=data["goal"].get("heading_tol", math.pi / 4),
        ),
        p_max=data["p_max"],
        primitives=PrimitiveParams(
            max_steer=prim.get("max_steer", 0.8),
            arc_lengths=tuple(prim.get("arc_lengths", (1.0, 2.0))),
            n_steer=prim.get("n_steer", 5),
            speed=prim.get("speed", 2.0),
            n_sweep=prim.get("n_sweep", 5),
        ),
    )


def save_scenario(scenario: Scenario, path) -> None:
    Path(path).write_text(json.dumps(scenario_to_json(scenario), indent=1, sort_keys=True) + "\n")


def load_scenario(path) -> Scenario:
    return scenario_from_json(json.loads(Path(path).read_text()))
