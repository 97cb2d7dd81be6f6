"""Matplotlib rendering of scenarios and planned paths to SVG files."""

from __future__ import annotations

import numpy as np
from matplotlib.backends.backend_svg import FigureCanvasSVG
from matplotlib.figure import Figure
from matplotlib.patches import Circle, Polygon as MplPolygon

from . import mc
from .planner import PlanResult, Scenario, predict_obstacle

PATH_GID = "plan-path"

STATIC_STYLE = dict(facecolor="0.45", edgecolor="0.2", zorder=2)
MEAN_STYLE = dict(facecolor="#7fa8d9", edgecolor="#1f4e8c", alpha=0.9, zorder=3)
SAMPLE_STYLE = dict(facecolor="none", edgecolor="#1f4e8c", alpha=0.15, linewidth=0.6, zorder=2)
PATH_STYLE = dict(color="#1a7a2e", linewidth=2.0, zorder=5)


def _poly_patch(vertices, **style):
    return MplPolygon(np.asarray(vertices), closed=True, **style)


def render_scenario(ax, scenario: Scenario, n_obstacle_draws: int = 25, seed: int = 0,
                    at_time: float = 0.0) -> None:
    """Workspace, static obstacles, uncertain obstacle means and sampled outlines."""
    xmin, ymin, xmax, ymax = scenario.workspace
    ax.set_xlim(xmin - 0.5, xmax + 0.5)
    ax.set_ylim(ymin - 0.5, ymax + 0.5)
    ax.set_aspect("equal")
    ax.add_patch(
        MplPolygon(
            [(xmin, ymin), (xmax, ymin), (xmax, ymax), (xmin, ymax)],
            closed=True, fill=False, edgecolor="0.1", linewidth=1.2, zorder=1,
        )
    )
    for obs in scenario.static_obstacles:
        ax.add_patch(_poly_patch(obs.vertices, **STATIC_STYLE))
    rng = mc.make_rng(seed, stream=0x9107)
    from .geometry import Pose2, rect_polygon

    for obstacle in scenario.uncertain_obstacles:
        spec = predict_obstacle(obstacle, at_time).spec
        ax.add_patch(_poly_patch(spec.mean_polygon().vertices, **MEAN_STYLE))
        for cfg in spec.sample_configs(n_obstacle_draws, rng):
            sample = rect_polygon(cfg[3], cfg[4], Pose2(cfg[0], cfg[1], cfg[2]))
            ax.add_patch(_poly_patch(sample.vertices, **SAMPLE_STYLE))
    ax.plot(scenario.start.x, scenario.start.y, marker="^", color="k", markersize=7, zorder=6)
    goal = Circle(scenario.goal.center, scenario.goal.radius, fill=False,
                  edgecolor="#b02a2a", linestyle="--", linewidth=1.2, zorder=4)
    ax.add_patch(goal)


def render_path(ax, result: PlanResult) -> None:
    """Planned path as a single polyline tagged with the plan-path gid."""
    if not result.path:
        return
    xs = [state.pose.x for state in result.states()]
    ys = [state.pose.y for state in result.states()]
    (line,) = ax.plot(xs, ys, **PATH_STYLE)
    line.set_gid(PATH_GID)
    ax.plot(xs, ys, linestyle="none", marker=".", color=PATH_STYLE["color"],
            markersize=4, zorder=6)


def save_cell_svg(path, scenario: Scenario, result: PlanResult, title: str = "",
                  seed: int = 0) -> None:
    """Render one benchmark cell (scenario + planned path) to an SVG file."""
    fig = Figure(figsize=(6.0, 6.0 * _aspect(scenario)))
    FigureCanvasSVG(fig)
    ax = fig.add_subplot(111)
    render_scenario(ax, scenario, seed=seed)
    render_path(ax, result)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    if title:
        ax.set_title(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, format="svg")


def _aspect(scenario: Scenario) -> float:
    xmin, ymin, xmax, ymax = scenario.workspace
    return max(0.25, min(2.5, (ymax - ymin) / (xmax - xmin)))
