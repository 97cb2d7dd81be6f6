import math

import numpy as np
import pytest

from cpfield import mc
from cpfield import planner as pl
from cpfield import scenarios as sc
from cpfield.geometry import Pose2


class TestNarrowPassage:
    def test_paper_covariances_exact(self):
        scen = sc.make_narrow_passage()
        sigmas = [o.spec.sigma for o in scen.uncertain_obstacles]
        assert sigmas[0] == (0.05, 0.2, 0.03, 0.0001, 0.0001)
        assert sigmas[1] == (0.15, 0.4, 0.13, 0.01, 0.015)

    def test_obstacles_clear_of_start_and_goal(self):
        scen = sc.make_narrow_passage()
        for o in scen.uncertain_obstacles:
            poly = o.spec.mean_polygon()
            assert not poly.contains_point(scen.start.x, scen.start.y)
            assert not poly.contains_point(*scen.goal.center)
        assert pl.statically_valid(scen, scen.start)
        assert pl.statically_valid(scen, Pose2(*scen.goal.center, math.pi))

    def test_serialization_round_trip(self, tmp_path):
        scen = sc.make_narrow_passage()
        path = tmp_path / "narrow.json"
        pl.save_scenario(scen, path)
        loaded = pl.load_scenario(path)
        assert pl.scenario_to_json(loaded) == pl.scenario_to_json(scen)

    def test_gap_cp_band(self):
        # the corridor row must be clearly below 0.01 and clearly above 0.001,
        # so each p_max regime has an unambiguous verdict
        scen = sc.make_narrow_passage()
        pose = Pose2(0.0, 0.0, math.pi)
        hits = np.zeros(400_000, dtype=bool)
        rng = mc.make_rng(4242)
        for o in scen.uncertain_obstacles:
            cfgs = o.spec.sample_configs(len(hits), rng)
            hits |= mc.rect_overlap_batch(pose, scen.robot, cfgs)
        p = hits.mean()
        assert 2e-3 < p < 6e-3

    def test_scale_parameter(self):
        scen = sc.make_narrow_passage(scale=2.0)
        assert scen.workspace == (-30, -14, 30, 24)
        assert scen.uncertain_obstacles[0].spec.mean[3] == 4.0
        with pytest.raises(ValueError):
            sc.make_narrow_passage(scale=0.0)


class TestNarrowPassagePlanning:
    def test_gap_threading_and_homotopy_change(self):
        # budget-limited sampling checker: threads the gap at loose budgets,
        # switches homotopy class (detours over the wall) at 1e-3
        from dataclasses import replace

        costs = {}
        threaded = {}
        for p_max in (0.1, 0.001):
            scen = replace(sc.make_narrow_passage(), p_max=p_max)
            res = pl.hybrid_astar(scen, pl.ZTestChecker(n_max=100_000, seed=11))
            assert res.solved
            costs[p_max] = res.cost
            threaded[p_max] = any(
                abs(s.pose.x) <= 1.0 and abs(s.pose.y) <= 1.0 for s in res.states()
            )
        assert threaded[0.1]
        assert not threaded[0.001]
        # tightening the budget never shortens the path
        assert costs[0.001] >= costs[0.1] - 1e-9


class TestRandomMap:
    def test_quoted_parameter_defaults(self):
        assert sc.RANDOM_MAP_DENSITY_PER_100M2 == 120.0
        assert sc.RANDOM_MAP_SIDE_BOUNDS == (0.1, 3.0)
        assert sc.RANDOM_MAP_SIGMA_RANGE == (0.001, 0.1)
        scen = sc.make_random_map(seed=0, n_obstacles=40)
        for o in scen.uncertain_obstacles:
            assert 0.1 <= o.spec.mean[3] <= 3.0
            assert 0.1 <= o.spec.mean[4] <= 3.0
            assert all(0.001 <= s <= 0.1 for s in o.spec.sigma)

    def test_density_controls_count(self):
        scen = sc.make_random_map(seed=1, area=(50.0, 50.0), n_obstacles=None)
        assert len(scen.uncertain_obstacles) == round(120.0 * 2500 / 100)

    def test_start_goal_distance_band(self):
        for seed in range(5):
            scen = sc.make_random_map(seed=seed, n_obstacles=10)
            d = math.hypot(
                scen.goal.center[0] - scen.start.x, scen.goal.center[1] - scen.start.y
            )
            assert 35.0 <= d <= 40.0

    def test_deterministic(self):
        a = sc.make_random_map(seed=7, n_obstacles=25)
        b = sc.make_random_map(seed=7, n_obstacles=25)
        assert pl.scenario_to_json(a) == pl.scenario_to_json(b)

    def test_too_small_area_rejected(self):
        with pytest.raises(ValueError):
            sc.make_random_map(seed=0, area=(10.0, 10.0))


def fake_result(points):
    """PlanResult with the given (t, x, y) states."""
    path = []
    for i, (t, x, y) in enumerate(points):
        state = pl.PlanState(pose=Pose2(x, y, 0.0), t=t, g_cost=t, parent=i - 1 if i else None)
        path.append((state, None))
    return pl.PlanResult(status="solved", path=path, cost=points[-1][0], expanded=1,
                         checker_queries=0, checker_samples=0, wall_time=0.0)


class TestOvertake:
    def test_initial_sigmas(self):
        scen = sc.make_overtake(seed=0)
        for o in scen.uncertain_obstacles:
            assert pl.predict_obstacle(o, 0.0).spec.sigma == o.spec.sigma
            assert o.spec.sigma == sc.OVERTAKE_SIGMA0

    def test_dynamic_with_growth(self):
        scen = sc.make_overtake(seed=1)
        assert scen.dynamic
        lead = scen.uncertain_obstacles[0]
        later = pl.predict_obstacle(lead, 10.0).spec
        assert later.sigma[0] > lead.spec.sigma[0]
        assert later.mean[0] > lead.spec.mean[0]

    def test_deterministic_per_seed(self):
        assert pl.scenario_to_json(sc.make_overtake(3)) == pl.scenario_to_json(sc.make_overtake(3))
        assert pl.scenario_to_json(sc.make_overtake(3)) != pl.scenario_to_json(sc.make_overtake(4))

    def test_classification_none_when_unsolved(self):
        scen = sc.make_overtake(seed=0)
        res = pl.PlanResult(status="no_path", path=[], cost=math.inf, expanded=0,
                            checker_queries=0, checker_samples=0, wall_time=0.0)
        assert sc.classify_overtake(res, scen) == sc.OVERTAKE_NONE

    def test_classification_none_without_pass(self):
        scen = sc.make_overtake(seed=0)
        lead_x0 = scen.uncertain_obstacles[0].spec.mean[0]
        res = fake_result([(0.0, 2.5, 1.75), (5.0, lead_x0 - 6.0, 1.75)])
        assert sc.classify_overtake(res, scen) == sc.OVERTAKE_NONE

    def test_classification_before_and_after(self):
        scen = sc.make_overtake(seed=0)
        t_meet = sc.oncoming_meet_time(scen)
        assert t_meet > 0

        def passing_path(t_pass):
            lead = scen.uncertain_obstacles[0]
            x_ahead = sc._mean_x_at(lead, t_pass) + 3.0
            return fake_result([
                (0.0, 2.5, 1.75),
                (t_pass * 0.5, 6.0, 5.25),
                (t_pass, x_ahead, 5.25),
                (t_pass + 1.0, x_ahead + 2.0, 1.75),
            ])

        early = passing_path(min(2.0, t_meet / 2))
        assert sc.classify_overtake(early, scen) == sc.OVERTAKE_BEFORE
        late = passing_path(t_meet + 5.0)
        assert sc.classify_overtake(late, scen) == sc.OVERTAKE_AFTER
