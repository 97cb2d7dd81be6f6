import csv
import json
import math
from pathlib import Path

import numpy as np
import pytest

from cpfield import cli
from cpfield import dataset as ds
from cpfield import mc
from cpfield import model as mdl
from cpfield import planner as pl
from cpfield.geometry import Pose2, RobotSpec

from _helpers import tiny_arch


@pytest.fixture(scope="module")
def tiny_dataset_path(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "tiny.csv"
    cfg = ds.DatasetConfig(n_records=12, profile=mc.RELAXED_PROFILE, seed=3)
    ds.save_dataset(ds.generate_dataset(cfg, n_workers=1), out)
    return out


@pytest.fixture(scope="module")
def tiny_model_path(tmp_path_factory, tiny_model):
    path = tmp_path_factory.mktemp("cli_model") / "model.cpf"
    mdl.save_model(tiny_model, path)
    return path


@pytest.fixture()
def mini_scenario_path(tmp_path):
    scen = pl.Scenario(
        name="cli_mini",
        workspace=(-3, -6, 26, 6),
        static_obstacles=[],
        uncertain_obstacles=[
            pl.UncertainObstacle(spec=mc.ObstacleSpec((10.0, 3.0, 0.0, 1.0, 1.0), (0.05,) * 5))
        ],
        robot=RobotSpec(),
        start=Pose2(0, 0, 0),
        goal=pl.GoalRegion(center=(20.0, 0.0), radius=1.5),
        p_max=0.1,
    )
    path = tmp_path / "scenario.json"
    pl.save_scenario(scen, path)
    return path


class TestGenDataset:
    def test_writes_csv_and_meta(self, tmp_path):
        out = tmp_path / "data.csv"
        code = cli.main([
            "gen-dataset", "--out", str(out), "--n-records", "6",
            "--seed", "5", "--profile", "relaxed", "--workers", "1",
        ])
        assert code == 0
        loaded = ds.load_dataset(out)
        assert len(loaded) == 6
        assert (tmp_path / "data.csv.meta.json").exists()


class TestTrainEval:
    def test_train_then_eval(self, tmp_path, capsys):
        data_path = tmp_path / "train.csv"
        cfg = ds.DatasetConfig(n_records=30, profile=mc.RELAXED_PROFILE, seed=9)
        ds.save_dataset(ds.generate_dataset(cfg, n_workers=1), data_path)
        model_path = tmp_path / "model.cpf"
        code = cli.main([
            "train", "--dataset", str(data_path), "--out", str(model_path),
            "--epochs", "1", "--arch", "16x2", "--ensemble", "1", "--seed", "1",
        ])
        assert code == 0
        assert model_path.exists()
        out = capsys.readouterr().out
        assert "overall" in out

        metrics_path = tmp_path / "metrics.csv"
        code = cli.main([
            "eval", "--model", str(model_path), "--dataset", str(data_path),
            "--out", str(metrics_path),
        ])
        assert code == 0
        with open(metrics_path) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["bucket", "mae", "pap"]
        assert rows[-1][0] == "overall"


class TestEstimate:
    def test_mc_only(self, capsys):
        code = cli.main([
            "estimate", "--query", "8,0,0,2,1,0.1,0.1,0.1,0.01,0.01",
            "--profile", "relaxed",
        ])
        assert code == 0
        assert "monte-carlo CP" in capsys.readouterr().out

    def test_with_model(self, tiny_model_path, capsys):
        code = cli.main([
            "estimate", "--model", str(tiny_model_path),
            "--query", "8,0,0,2,1,0.1,0.1,0.1,0.01,0.01", "--mc", "--profile", "relaxed",
        ])
        assert code == 0
        out = capsys.readouterr().out
        assert "model CP" in out and "monte-carlo CP" in out

    def test_bad_query_is_error(self, capsys):
        assert cli.main(["estimate", "--query", "1,2,3"]) == cli.EXIT_ERROR


class TestPlan:
    def test_solved_writes_outputs(self, mini_scenario_path, tmp_path):
        out_dir = tmp_path / "plan"
        code = cli.main([
            "plan", "--scenario", str(mini_scenario_path), "--checker", "ztest",
            "--pmax", "0.1", "--out", str(out_dir), "--seed", "2",
        ])
        assert code == 0
        assert list(out_dir.glob("*_path.csv"))
        assert list(out_dir.glob("*.svg"))

    def test_infeasible_exit_code(self, tmp_path, mini_scenario_path):
        scen = pl.load_scenario(mini_scenario_path)
        scen.static_obstacles.append(
            __import__("cpfield.geometry", fromlist=["rect_polygon"]).rect_polygon(
                4.0, 4.0, Pose2(0.0, 0.0, 0.0)
            )
        )
        blocked = tmp_path / "blocked.json"
        pl.save_scenario(scen, blocked)
        code = cli.main([
            "plan", "--scenario", str(blocked), "--checker", "ztest",
            "--out", str(tmp_path / "out"),
        ])
        assert code == cli.EXIT_INFEASIBLE

    def test_dcpf_requires_model(self, mini_scenario_path, tmp_path):
        code = cli.main([
            "plan", "--scenario", str(mini_scenario_path), "--checker", "dcpf",
            "--out", str(tmp_path / "out"),
        ])
        assert code == cli.EXIT_ERROR


class TestBench:
    def test_narrow_suite_ztest_only(self, tmp_path):
        out_dir = tmp_path / "bench"
        code = cli.main([
            "bench", "--suite", "narrow", "--out", str(out_dir),
            "--checkers", "ztest", "--pmax", "0.1", "--oracle-samples", "20000",
        ])
        assert code == 0
        assert (out_dir / "narrow_report.csv").exists()
        assert (out_dir / "narrow_cells.csv").exists()

    def test_timing_suite(self, tmp_path, tiny_model_path):
        out_dir = tmp_path / "timing"
        code = cli.main([
            "bench", "--suite", "timing", "--out", str(out_dir),
            "--model", str(tiny_model_path),
        ])
        assert code == 0
        assert (out_dir / "timing_report.csv").exists()

    def test_dcpf_without_model_is_error(self, tmp_path):
        code = cli.main([
            "bench", "--suite", "narrow", "--out", str(tmp_path / "x"),
        ])
        assert code == cli.EXIT_ERROR

    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.main(["--version"])
        assert exc.value.code == 0
