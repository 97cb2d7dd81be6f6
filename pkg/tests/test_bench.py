import csv
import math
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from cpfield import bench
from cpfield import mc
from cpfield import planner as pl
from cpfield.geometry import Pose2, RobotSpec


def svg_has_gid(path, gid: str) -> bool:
    tree = ET.parse(path)  # raises on invalid XML
    return any(el.get("id") == gid for el in tree.iter())


def mini_scenario(p_max=0.1):
    return pl.Scenario(
        name="mini",
        workspace=(-3, -6, 26, 6),
        static_obstacles=[],
        uncertain_obstacles=[
            pl.UncertainObstacle(spec=mc.ObstacleSpec((10.0, 2.5, 0.0, 1.5, 1.5), (0.1,) * 5))
        ],
        robot=RobotSpec(),
        start=Pose2(0, 0, 0),
        goal=pl.GoalRegion(center=(20.0, 0.0), radius=1.5),
        p_max=p_max,
    )


class TestOracle:
    def test_deterministic_extremes(self):
        scen = mini_scenario()
        scen.uncertain_obstacles[0] = pl.UncertainObstacle(
            spec=mc.ObstacleSpec((10.0, 0.0, 0.0, 2.0, 2.0), (0.0,) * 5)
        )
        est_hit = bench.oracle_state_cp(Pose2(10.0, 0.0, 0.0), 0.0, scen, n=1000)
        est_miss = bench.oracle_state_cp(Pose2(0.0, 0.0, 0.0), 0.0, scen, n=1000)
        assert est_hit.p_hat == 1.0
        assert est_miss.p_hat == 0.0

    def test_matches_direct_estimate(self):
        scen = mini_scenario()
        pose = Pose2(9.0, 0.5, 0.2)
        est = bench.oracle_state_cp(pose, 0.0, scen, n=200_000, rng=mc.make_rng(5))
        spec = scen.uncertain_obstacles[0].spec
        rng = mc.make_rng(99)
        hits = mc.rect_overlap_batch(pose, scen.robot, spec.sample_configs(200_000, rng))
        direct = hits.mean()
        assert est.p_hat == pytest.approx(direct, abs=4 * est.ci_half_width + 1e-6)


class TestVerifyPath:
    def test_flags_violation_on_unsafe_state(self):
        scen = mini_scenario(p_max=1e-4)
        states = [
            (pl.PlanState(pose=Pose2(10.0, 2.5, 0.0), t=0.0, g_cost=0.0), None)
        ]
        result = pl.PlanResult(status="solved", path=states, cost=0.0, expanded=1,
                               checker_queries=0, checker_samples=0, wall_time=0.0)
        ver = bench.verify_path(result, scen, n=20_000)
        assert ver.violations == 1
        assert not ver.clean

    def test_clean_on_safe_path(self):
        scen = mini_scenario(p_max=0.1)
        res = pl.hybrid_astar(scen, pl.ZTestChecker(seed=1))
        assert res.solved
        ver = bench.verify_path(res, scen, n=50_000)
        assert ver.clean
        assert len(ver.estimates) == len(res.path)


@pytest.fixture(scope="module")
def report_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("bench")
    cfg = bench.BenchConfig(
        p_max_list=(0.1,), checkers=("ztest",), oracle_samples=20_000,
        search=pl.SearchParams(node_budget=20_000), seed=1,
    )
    report = bench.run_bench([mini_scenario()], cfg, out, suite="mini")
    return out, report


class TestRunBench:
    def test_solved_count_matches_nonempty_paths(self, report_dir):
        _, report = report_dir
        for row in report.rows:
            nonempty = sum(
                1 for c in report.cells
                if c.checker == row.checker and c.p_max == row.p_max
                and c.result.solved and c.result.path
            )
            assert row.solved == nonempty

    def test_csv_schema(self, report_dir):
        out, _ = report_dir
        with open(out / "mini_report.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == bench.REPORT_HEADER
        assert all(r[0] == bench.SCHEMA_VERSION for r in rows[1:])
        with open(out / "mini_cells.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == bench.CELL_HEADER

    def test_svg_valid_with_path_polyline(self, report_dir):
        out, report = report_dir
        svgs = sorted(out.glob("*.svg"))
        assert len(svgs) == sum(row.solved for row in report.rows)
        for svg in svgs:
            assert svg_has_gid(svg, "plan-path")

    def test_path_csv_written(self, report_dir):
        out, _ = report_dir
        paths = sorted(out.glob("*_path.csv"))
        assert paths
        with open(paths[0]) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == bench.PATH_HEADER
        assert all(len(r) == len(bench.PATH_HEADER) for r in rows[1:])
        cps = [float(r[5]) for r in rows[1:]]
        assert all(0.0 <= p <= 1.0 for p in cps)

    def test_deterministic_given_seed(self, tmp_path):
        cfg = bench.BenchConfig(
            p_max_list=(0.1,), checkers=("ztest",), oracle_samples=10_000,
            search=pl.SearchParams(node_budget=20_000), seed=3, render_svg=False,
        )
        r1 = bench.run_bench([mini_scenario()], cfg, tmp_path / "a", suite="mini")
        r2 = bench.run_bench([mini_scenario()], cfg, tmp_path / "b", suite="mini")

        def rows_without_times(path):
            drop = {
                bench.REPORT_HEADER.index("mean_plan_time_s"),
                bench.REPORT_HEADER.index("std_plan_time_s"),
            }
            with open(path) as fh:
                return [
                    [v for i, v in enumerate(row) if i not in drop]
                    for row in csv.reader(fh)
                ]

        # identical up to wall-clock columns
        assert rows_without_times(tmp_path / "a" / "mini_report.csv") == rows_without_times(
            tmp_path / "b" / "mini_report.csv"
        )
        assert [c.result.cost for c in r1.cells] == [c.result.cost for c in r2.cells]
        assert [c.result.expanded for c in r1.cells] == [c.result.expanded for c in r2.cells]


class TestTiming:
    def test_orderings_on_small_model(self, tiny_model):
        report = bench.run_timing(tiny_model, seed=0, n_queries=48, repeats=2)
        assert report.batch_speedup > 3.0
        assert report.dcpf_per_sample_b1024 < report.dcpf_per_sample_b1
        assert report.sprt_mean_n_near > report.sprt_mean_n_tenth
        rows = report.csv_rows()
        assert rows[0] == ["schema_version", "metric", "value"]
