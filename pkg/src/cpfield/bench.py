"""Benchmark harness: runs scenario x checker x p_max cells, re-verifies returned
paths against a large-sample Monte-Carlo oracle, and writes CSV plus SVG overlays."""

from __future__ import annotations

import csv
import math
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import mc
from .model import EnsembleModel, ensemble_predict
from .planner import (
    PlanResult,
    SafetyChecker,
    Scenario,
    SearchParams,
    far_skip_distance,
    hybrid_astar,
    make_checker,
    obstacle_frame_query_row,
    predict_obstacle,
)
from .plotting import save_cell_svg

SCHEMA_VERSION = "1"
REPORT_HEADER = [
    "schema_version", "suite", "checker", "p_max", "n_instances", "solved",
    "mean_cost", "std_cost", "mean_plan_time_s", "std_plan_time_s",
    "checker_queries", "checker_samples", "min_margin", "oracle_violations",
]
CELL_HEADER = [
    "schema_version", "suite", "scenario", "checker", "p_max", "status", "cost",
    "plan_time_s", "expanded", "checker_queries", "checker_samples",
    "oracle_min_margin", "oracle_violations",
]
PATH_HEADER = ["t", "x", "y", "phi", "primitive_id", "combined_cp_estimate"]

ORACLE_SAMPLES = 1_000_000


def oracle_state_cp(pose, t, scenario: Scenario, n: int = ORACLE_SAMPLES,
                    rng: np.random.Generator | None = None) -> mc.CpEstimate:
    """Fixed-n joint Monte-Carlo estimate of the combined CP at one state."""
    if rng is None:
        rng = mc.make_rng(0, stream=0x0AC1E)
    hits = np.zeros(n, dtype=bool)
    for obstacle in scenario.uncertain_obstacles:
        spec = predict_obstacle(obstacle, t).spec
        dist = math.hypot(pose.x - spec.mean[0], pose.y - spec.mean[1])
        if dist > far_skip_distance(scenario.robot, spec):
            continue  # contribution below 1e-8, invisible at this n
        configs = spec.sample_configs(n, rng)
        hits |= mc.rect_overlap_batch(pose, scenario.robot, configs)
    k = int(hits.sum())
    lo, hi = mc.clt_interval(k, n)
    return mc.CpEstimate(p_hat=k / n, ci_half_width=mc.ci_half_width(k, n), n=n, hits=k)


@dataclass
class PathVerification:
    estimates: list[mc.CpEstimate]
    violations: int
    min_margin: float  # min over states of p_max - p_hat

    @property
    def clean(self) -> bool:
        return self.violations == 0


def verify_path(result: PlanResult, scenario: Scenario, n: int = ORACLE_SAMPLES,
                seed: int = 1) -> PathVerification:
    """Re-verify every state of a returned path: the oracle CI lower bound must
    not exceed the scenario's CP budget."""
    estimates = []
    violations = 0
    min_margin = math.inf
    for i, state in enumerate(result.states()):
        est = oracle_state_cp(state.pose, state.t, scenario, n=n,
                              rng=mc.make_rng(seed, stream=0xE0_0000 + i))
        estimates.append(est)
        lo, _ = mc.clt_interval(est.hits, est.n)
        if lo > scenario.p_max:
            violations += 1
        min_margin = min(min_margin, scenario.p_max - est.p_hat)
    return PathVerification(estimates=estimates, violations=violations, min_margin=min_margin)


@dataclass
class CellResult:
    suite: str
    scenario_name: str
    checker: str
    p_max: float
    result: PlanResult
    verification: PathVerification | None

    def csv_row(self) -> list:
        ver = self.verification
        return [
            SCHEMA_VERSION, self.suite, self.scenario_name, self.checker,
            f"{self.p_max:g}", self.result.status,
            f"{self.result.cost:.6f}" if self.result.solved else "",
            f"{self.result.wall_time:.3f}", self.result.expanded,
            self.result.checker_queries, self.result.checker_samples,
            f"{ver.min_margin:.3e}" if ver is not None and ver.estimates else "",
            ver.violations if ver is not None else "",
        ]


@dataclass
class BenchRow:
    suite: str
    checker: str
    p_max: float
    n_instances: int
    solved: int
    mean_cost: float
    std_cost: float
    mean_plan_time: float
    std_plan_time: float
    checker_queries: int
    checker_samples: int
    min_margin: float
    oracle_violations: int

    def csv_row(self) -> list:
        return [
            SCHEMA_VERSION, self.suite, self.checker, f"{self.p_max:g}",
            self.n_instances, self.solved,
            f"{self.mean_cost:.6f}" if self.solved else "",
            f"{self.std_cost:.6f}" if self.solved > 1 else "",
            f"{self.mean_plan_time:.3f}", f"{self.std_plan_time:.3f}",
            self.checker_queries, self.checker_samples,
            f"{self.min_margin:.3e}" if math.isfinite(self.min_margin) else "",
            self.oracle_violations,
        ]


@dataclass
class BenchReport:
    suite: str
    rows: list[BenchRow]
    cells: list[CellResult]

    def write_csv(self, out_dir) -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        report_path = out_dir / f"{self.suite}_report.csv"
        with open(report_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(REPORT_HEADER)
            for row in self.rows:
                writer.writerow(row.csv_row())
        cells_path = out_dir / f"{self.suite}_cells.csv"
        with open(cells_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CELL_HEADER)
            for cell in self.cells:
                writer.writerow(cell.csv_row())
        return report_path, cells_path


@dataclass
class BenchConfig:
    p_max_list: tuple[float, ...] = (0.1, 0.01, 0.001)
    checkers: tuple[str, ...] = ("dcpf", "ztest", "sprt")
    ztest_cap: int = 100_000
    sprt_cap: int = 4_000_000
    dcpf_mode: str = "ci_upper"
    oracle_samples: int = ORACLE_SAMPLES
    search: SearchParams = SearchParams()
    seed: int = 0
    render_svg: bool = True
    verify: bool = True


def write_path_csv(path, result: PlanResult, scenario: Scenario,
                   cp_samples: int = 100_000, seed: int = 2) -> None:
    """Path output: one row per state with a fixed-n MC estimate of the combined CP."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PATH_HEADER)
        for i, (state, prim) in enumerate(result.path):
            est = oracle_state_cp(state.pose, state.t, scenario, n=cp_samples,
                                  rng=mc.make_rng(seed, stream=0xCB_0000 + i))
            writer.writerow([
                f"{state.t:.3f}", f"{state.pose.x:.6f}", f"{state.pose.y:.6f}",
                f"{state.pose.phi:.6f}", prim.index if prim is not None else "",
                f"{est.p_hat:.6e}",
            ])


def run_bench(
    scenarios: list[Scenario],
    cfg: BenchConfig,
    out_dir,
    suite: str,
    model: EnsembleModel | None = None,
) -> BenchReport:
    """Run every (scenario x checker x p_max) cell; aggregate per (checker, p_max)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cells: list[CellResult] = []
    for checker_kind in cfg.checkers:
        for p_max in cfg.p_max_list:
            for idx, base_scenario in enumerate(scenarios):
                scenario = _with_p_max(base_scenario, p_max)
                cap = cfg.ztest_cap if checker_kind == "ztest" else cfg.sprt_cap
                checker = make_checker(
                    checker_kind, model=model, mode=cfg.dcpf_mode,
                    n_max=cap, seed=cfg.seed + 7919 * idx,
                )
                result = hybrid_astar(scenario, checker, cfg.search)
                verification = None
                if cfg.verify and result.solved:
                    verification = verify_path(
                        result, scenario, n=cfg.oracle_samples, seed=cfg.seed + idx
                    )
                cell = CellResult(
                    suite=suite, scenario_name=scenario.name or f"scenario_{idx}",
                    checker=checker_kind, p_max=p_max, result=result,
                    verification=verification,
                )
                cells.append(cell)
                if cfg.render_svg and result.solved:
                    svg_name = f"{suite}_{cell.scenario_name}_{checker_kind}_p{p_max:g}.svg"
                    save_cell_svg(out_dir / svg_name, scenario, result,
                                  title=f"{checker_kind} p_max={p_max:g}", seed=cfg.seed)
                    path_name = f"{suite}_{cell.scenario_name}_{checker_kind}_p{p_max:g}_path.csv"
                    write_path_csv(out_dir / path_name, result, scenario, seed=cfg.seed)
    rows = _aggregate(suite, cells)
    report = BenchReport(suite=suite, rows=rows, cells=cells)
    report.write_csv(out_dir)
    return report


def _with_p_max(scenario: Scenario, p_max: float) -> Scenario:
    from dataclasses import replace

    return replace(scenario, p_max=p_max)


def _aggregate(suite: str, cells: list[CellResult]) -> list[BenchRow]:
    rows = []
    keys = sorted({(c.checker, c.p_max) for c in cells}, key=lambda k: (k[0], -k[1]))
    for checker, p_max in keys:
        group = [c for c in cells if c.checker == checker and c.p_max == p_max]
        solved = [c for c in group if c.result.solved and c.result.path]
        costs = [c.result.cost for c in solved]
        times = [c.result.wall_time for c in group]
        margins = [
            c.verification.min_margin
            for c in solved
            if c.verification is not None and c.verification.estimates
        ]
        rows.append(
            BenchRow(
                suite=suite, checker=checker, p_max=p_max,
                n_instances=len(group), solved=len(solved),
                mean_cost=statistics.mean(costs) if costs else math.nan,
                std_cost=statistics.stdev(costs) if len(costs) > 1 else 0.0,
                mean_plan_time=statistics.mean(times),
                std_plan_time=statistics.stdev(times) if len(times) > 1 else 0.0,
                checker_queries=sum(c.result.checker_queries for c in group),
                checker_samples=sum(c.result.checker_samples for c in group),
                min_margin=min(margins) if margins else math.inf,
                oracle_violations=sum(
                    c.verification.violations for c in group if c.verification is not None
                ),
            )
        )
    return rows


@dataclass
class TimingReport:
    dcpf_per_sample_b1: float
    dcpf_per_sample_b1024: float
    dcpf_latency_cv: float
    sprt_latency_cv: float
    sprt_mean_n_near: float
    sprt_mean_n_tenth: float

    @property
    def batch_speedup(self) -> float:
        return self.dcpf_per_sample_b1 / self.dcpf_per_sample_b1024

    @property
    def sprt_n_ratio(self) -> float:
        return self.sprt_mean_n_near / self.sprt_mean_n_tenth

    def csv_rows(self) -> list[list]:
        return [
            ["schema_version", "metric", "value"],
            [SCHEMA_VERSION, "dcpf_per_sample_b1_s", f"{self.dcpf_per_sample_b1:.3e}"],
            [SCHEMA_VERSION, "dcpf_per_sample_b1024_s", f"{self.dcpf_per_sample_b1024:.3e}"],
            [SCHEMA_VERSION, "dcpf_batch_speedup", f"{self.batch_speedup:.2f}"],
            [SCHEMA_VERSION, "dcpf_latency_cv", f"{self.dcpf_latency_cv:.3f}"],
            [SCHEMA_VERSION, "sprt_latency_cv", f"{self.sprt_latency_cv:.3f}"],
            [SCHEMA_VERSION, "sprt_mean_n_near_pmax", f"{self.sprt_mean_n_near:.1f}"],
            [SCHEMA_VERSION, "sprt_mean_n_pmax_tenth", f"{self.sprt_mean_n_tenth:.1f}"],
            [SCHEMA_VERSION, "sprt_n_ratio", f"{self.sprt_n_ratio:.2f}"],
        ]


def _reciprocal_query_mix(n: int, seed: int) -> np.ndarray:
    """Queries whose CP spans several decades (roughly reciprocal density):
    radial sweep through one obstacle's transition band."""
    rng = mc.make_rng(seed, stream=0x71E)
    r = np.exp(rng.uniform(math.log(2.0), math.log(14.0), size=n))
    ang = rng.uniform(-math.pi, math.pi, size=n)
    rows = np.column_stack([
        r * np.cos(ang), r * np.sin(ang), rng.uniform(-math.pi, math.pi, size=n),
        np.full(n, 2.0), np.full(n, 1.0),
        np.tile(np.array([0.4, 0.4, 0.2, 0.05, 0.05]), (n, 1)),
    ])
    return rows


def run_timing(model: EnsembleModel, seed: int = 0, n_queries: int = 192,
               p_max: float = 1e-3, repeats: int = 3) -> TimingReport:
    """Latency orderings: batched vs single inference, and SPRT sample counts."""
    queries = _reciprocal_query_mix(n_queries, seed)
    ensemble_predict(model, queries[:4])  # warm up BLAS paths

    single_times = []
    for row in queries:
        t0 = time.perf_counter()
        ensemble_predict(model, row)
        single_times.append(time.perf_counter() - t0)
    big = np.tile(queries, (max(1, 1024 // n_queries + 1), 1))[:1024]
    batch_times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        ensemble_predict(model, big)
        batch_times.append((time.perf_counter() - t0) / 1024)

    robot = model.robot
    sprt_times = []
    rng = mc.make_rng(seed, stream=0x5717)
    for row in queries[: min(n_queries, 96)]:
        q = mc.query_from_vector(row, robot)
        t0 = time.perf_counter()
        mc.sprt_check(q, 0.01, 4_000_000, mc.SprtParams(), rng=rng)
        sprt_times.append(time.perf_counter() - t0)

    def mean_n(p: float, base: int) -> float:
        total = 0
        runs = 30
        for i in range(runs):
            d = mc.sprt_from_sampler(
                mc.bernoulli_bool_sampler(p), p_max, 4_000_000, mc.SprtParams(),
                mc.make_rng(base + i),
            )
            total += d.samples_used
        return total / runs

    def cv(xs) -> float:
        m = statistics.mean(xs)
        return statistics.stdev(xs) / m if m > 0 else math.inf

    return TimingReport(
        dcpf_per_sample_b1=statistics.mean(single_times),
        dcpf_per_sample_b1024=min(batch_times),
        dcpf_latency_cv=cv(single_times),
        sprt_latency_cv=cv(sprt_times),
        sprt_mean_n_near=mean_n(p_max * 0.9, 40_000),
        sprt_mean_n_tenth=mean_n(p_max / 10.0, 50_000),
    )
