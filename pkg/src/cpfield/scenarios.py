"""Benchmark scenario generators: narrow passage, random obstacle maps, and the
dynamic two-lane overtake, plus the overtake outcome classifier."""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np

from . import mc
from .geometry import Pose2, RobotSpec, rect_polygon
from .mc import ObstacleSpec
from .planner import GoalRegion, PlanResult, PrimitiveParams, Scenario, UncertainObstacle

# narrow passage: position/shape uncertainty of the two obstacles
NARROW_SIGMA_1 = (0.05, 0.2, 0.03, 0.0001, 0.0001)
NARROW_SIGMA_2 = (0.15, 0.4, 0.13, 0.01, 0.015)


def make_narrow_passage(scale: float = 1.0, p_max: float = 0.01) -> Scenario:
    """Two uncertain obstacles forming a gap, sealed above by a static wall so the
    only alternatives are the gap or a wide detour over the wall."""
    if scale <= 0:
        raise ValueError("scale must be positive")
    s = scale
    return Scenario(
        name="narrow_passage",
        workspace=(-15 * s, -7 * s, 15 * s, 12 * s),
        static_obstacles=[rect_polygon(7.0 * s, 3.7 * s, Pose2(0.0, 6.75 * s, 0.0))],
        uncertain_obstacles=[
            UncertainObstacle(spec=ObstacleSpec((0.0, 3.27 * s, 0.0, 2.0 * s, 3.0 * s), NARROW_SIGMA_1)),
            UncertainObstacle(spec=ObstacleSpec((0.0, -3.62 * s, 0.0, 2.0 * s, 3.0 * s), NARROW_SIGMA_2)),
        ],
        robot=RobotSpec(),
        start=Pose2(10.0 * s, 0.0, math.pi),
        goal=GoalRegion(center=(-10.0 * s, 0.0), radius=2.0 * s),
        p_max=p_max,
    )


RANDOM_MAP_DENSITY_PER_100M2 = 120.0
RANDOM_MAP_SIDE_BOUNDS = (0.1, 3.0)
RANDOM_MAP_SIGMA_RANGE = (0.001, 0.1)
RANDOM_MAP_DISTANCE_BAND = (35.0, 40.0)


def make_random_map(
    seed: int,
    area: tuple[float, float] = (50.0, 50.0),
    density_per_100m2: float = RANDOM_MAP_DENSITY_PER_100M2,
    sigma_range: tuple[float, float] = RANDOM_MAP_SIGMA_RANGE,
    side_bounds: tuple[float, float] = RANDOM_MAP_SIDE_BOUNDS,
    n_obstacles: int | None = None,
    p_max: float = 1e-3,
) -> Scenario:
    """Rectangular workspace with uniformly placed uncertain rectangles.

    Start and goal are rejection-sampled to the 35-40 m distance band;
    obstacles crowding either endpoint are dropped.
    """
    w, h = area
    if math.hypot(w, h) < RANDOM_MAP_DISTANCE_BAND[0]:
        raise ValueError("workspace too small for the start-goal distance band")
    rng = mc.make_rng(seed, stream=0x3A9)
    robot = RobotSpec()
    margin = 0.5 * math.hypot(robot.width, robot.height) + 0.5
    while True:
        sx, sy = rng.uniform(margin, w - margin), rng.uniform(margin, h - margin)
        gx, gy = rng.uniform(margin, w - margin), rng.uniform(margin, h - margin)
        d = math.hypot(gx - sx, gy - sy)
        if RANDOM_MAP_DISTANCE_BAND[0] <= d <= RANDOM_MAP_DISTANCE_BAND[1]:
            break
    heading = math.atan2(gy - sy, gx - sx)
    n = n_obstacles if n_obstacles is not None else round(density_per_100m2 * w * h / 100.0)
    obstacles = []
    clear_radius = margin + 2.0
    while len(obstacles) < n:
        x, y = rng.uniform(0, w), rng.uniform(0, h)
        l1, l2 = rng.uniform(*side_bounds, size=2)
        phi = rng.uniform(-math.pi, math.pi)
        sigma = tuple(rng.uniform(*sigma_range, size=5))
        if math.hypot(x - sx, y - sy) < clear_radius + max(l1, l2) / 2:
            continue
        if math.hypot(x - gx, y - gy) < clear_radius + max(l1, l2) / 2:
            continue
        obstacles.append(UncertainObstacle(spec=ObstacleSpec((x, y, phi, l1, l2), sigma)))
    return Scenario(
        name=f"random_map_{seed}",
        workspace=(0.0, 0.0, w, h),
        static_obstacles=[],
        uncertain_obstacles=obstacles,
        robot=robot,
        start=Pose2(sx, sy, heading),
        goal=GoalRegion(center=(gx, gy), radius=2.0),
        p_max=p_max,
    )


# overtake corridor layout
LANE_WIDTH = 3.5
LANE_AGENT = LANE_WIDTH / 2
LANE_ONCOMING = 3 * LANE_WIDTH / 2
CORRIDOR_LENGTH = 46.0
CAR_DIMS = (4.07, 1.74)
OVERTAKE_SIGMA0 = (0.05, 0.05, 0.01, 0.01, 0.01)
OVERTAKE_GROWTH = (0.003, 0.003, 0.0003, 0.0, 0.0)
OVERTAKE_HORIZON = 200.0


def _linear_waypoints(x0: float, y: float, phi: float, vx: float) -> tuple:
    return ((0.0, x0, y, phi), (OVERTAKE_HORIZON, x0 + vx * OVERTAKE_HORIZON, y, phi))


def make_overtake(seed: int = 0, p_max: float = 0.1) -> Scenario:
    """Two-lane corridor: a slower lead car in the agent's lane and an oncoming
    car in the opposite lane, both with time-growing uncertainty."""
    rng = mc.make_rng(seed, stream=0x0EE7)
    lead_x0 = rng.uniform(10.0, 14.0)
    lead_v = rng.uniform(1.0, 1.4)
    onc_x0 = rng.uniform(30.0, 44.0)
    onc_v = rng.uniform(1.5, 2.1)
    lead = UncertainObstacle(
        spec=ObstacleSpec((lead_x0, LANE_AGENT, 0.0, *CAR_DIMS), OVERTAKE_SIGMA0),
        waypoints=_linear_waypoints(lead_x0, LANE_AGENT, 0.0, lead_v),
        growth=OVERTAKE_GROWTH,
    )
    oncoming = UncertainObstacle(
        spec=ObstacleSpec((onc_x0, LANE_ONCOMING, math.pi, *CAR_DIMS), OVERTAKE_SIGMA0),
        waypoints=_linear_waypoints(onc_x0, LANE_ONCOMING, math.pi, -onc_v),
        growth=OVERTAKE_GROWTH,
    )
    return Scenario(
        name=f"overtake_{seed}",
        workspace=(0.0, 0.0, CORRIDOR_LENGTH, 2 * LANE_WIDTH),
        static_obstacles=[],
        uncertain_obstacles=[lead, oncoming],
        robot=RobotSpec(),
        start=Pose2(2.5, LANE_AGENT, 0.0),
        goal=GoalRegion(center=(CORRIDOR_LENGTH - 2.0, LANE_AGENT), radius=2.5),
        p_max=p_max,
    )


def _mean_x_at(o: UncertainObstacle, t: float) -> float:
    (t0, x0, *_), (t1, x1, *_) = o.waypoints
    u = min(max((t - t0) / (t1 - t0), 0.0), 1.0)
    return x0 + u * (x1 - x0)


def oncoming_meet_time(scenario: Scenario) -> float:
    """Time at which the oncoming car reaches the lead car's x position."""
    lead, oncoming = scenario.uncertain_obstacles
    lead_x0, lead_v = lead.waypoints[0][1], (lead.waypoints[1][1] - lead.waypoints[0][1]) / OVERTAKE_HORIZON
    onc_x0, onc_v = oncoming.waypoints[0][1], (oncoming.waypoints[1][1] - oncoming.waypoints[0][1]) / OVERTAKE_HORIZON
    closing = lead_v - onc_v
    if closing <= 0:
        return math.inf
    return (onc_x0 - lead_x0) / closing


OVERTAKE_BEFORE = "before"
OVERTAKE_AFTER = "after"
OVERTAKE_NONE = "none"


def classify_overtake(result: PlanResult, scenario: Scenario) -> str:
    """Label a planned path: overtake before/after the oncoming car passes the
    lead car, or no overtake (including unsolved episodes)."""
    if not result.solved:
        return OVERTAKE_NONE
    lead = scenario.uncertain_obstacles[0]
    passed_at = None
    for state in result.states():
        if state.pose.x > _mean_x_at(lead, state.t):
            passed_at = state
            break
    if passed_at is None:
        return OVERTAKE_NONE
    lane_divider = LANE_WIDTH
    t_return = result.states()[-1].t
    seen_pass = False
    for state in result.states():
        if state is passed_at:
            seen_pass = True
        if seen_pass and state.pose.y <= lane_divider - scenario.robot.height / 2:
            t_return = state.t
            break
    return OVERTAKE_BEFORE if t_return < oncoming_meet_time(scenario) else OVERTAKE_AFTER
