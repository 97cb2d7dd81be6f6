"""Command-line interface: dataset generation, training, evaluation, CP estimation,
planning, and the benchmark suites."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, bench, dataset, mc, model as mdl, planner, scenarios, training

log = logging.getLogger("cpfield")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INFEASIBLE = 2


def _profile_by_name(name: str) -> mc.AccuracyProfile:
    return {"paper": mc.PAPER_PROFILE, "relaxed": mc.RELAXED_PROFILE}[name]


def _parse_arch(text: str) -> mdl.ArchConfig:
    named = {"desk": mdl.DESK_ARCH, "paper": mdl.PAPER_ARCH}
    if text.lower() in named:
        return named[text.lower()]
    try:
        width, depth = text.lower().split("x")
        return mdl.ArchConfig(main_width=int(width), main_depth=int(depth))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(
            f"arch must be WIDTHxDEPTH (e.g. 256x4), 'desk', or 'paper'; got {text!r}"
        ) from exc


def cmd_gen_dataset(args) -> int:
    cfg = dataset.DatasetConfig(
        n_records=args.n_records,
        profile=_profile_by_name(args.profile),
        seed=args.seed,
    )
    data = dataset.generate_dataset(cfg, n_workers=args.workers)
    dataset.save_dataset(data, args.out)
    counts = data.bucket_counts()
    print(f"wrote {len(data)} records to {args.out} "
          f"(buckets {counts}, attempts {data.attempts})")
    return EXIT_OK


def cmd_train(args) -> int:
    data = dataset.load_dataset(args.dataset)
    train_set, val_set, test_set = dataset.split(data, (0.8, 0.1, 0.1), seed=args.seed)
    cfg = training.TrainConfig(
        learning_rate=args.lr, gamma=args.gamma, epochs=args.epochs,
        batch_size=args.batch_size, seed=args.seed, ensemble_size=args.ensemble,
        arch=args.arch,
    )
    result = training.train(train_set, val_set, cfg)
    mdl.save_model(result.model, args.out)
    metrics = training.evaluate(result.model, test_set)
    print(f"saved ensemble (K={result.model.k}) to {args.out}")
    _print_metrics(metrics)
    return EXIT_OK


def _print_metrics(metrics: training.Metrics) -> None:
    buckets = ["[0,0.01)", "[0.01,0.1)", "[0.1,1]"]
    print(f"{'bucket':>12} {'MAE':>12} {'PAP':>8}")
    for name, mae, pap in zip(buckets, metrics.mae_per_bucket, metrics.pap_per_bucket):
        print(f"{name:>12} {mae:>12.6f} {pap:>8.4f}")
    print(f"{'overall':>12} {metrics.mae_overall:>12.6f} {metrics.pap_overall:>8.4f}")


def cmd_eval(args) -> int:
    data = dataset.load_dataset(args.dataset)
    model = mdl.load_model(args.model)
    metrics = training.evaluate(model, data)
    _print_metrics(metrics)
    out = Path(args.out) if args.out else Path(args.dataset).with_suffix(".metrics.csv")
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bucket", "mae", "pap"])
        buckets = ["[0,0.01)", "[0.01,0.1)", "[0.1,1]"]
        for name, mae, pap in zip(buckets, metrics.mae_per_bucket, metrics.pap_per_bucket):
            writer.writerow([name, f"{mae:.8f}", f"{pap:.6f}"])
        writer.writerow(["overall", f"{metrics.mae_overall:.8f}", f"{metrics.pap_overall:.6f}"])
    print(f"metrics written to {out}")
    return EXIT_OK


def cmd_estimate(args) -> int:
    values = [float(v) for v in args.query.split(",")]
    if len(values) != 10:
        raise ValueError("query must have 10 comma-separated values: "
                         "rx,ry,rphi,l1,l2,sx,sy,sphi,sl1,sl2")
    robot = None
    if args.model:
        model = mdl.load_model(args.model)
        robot = model.robot
        pred = mdl.ensemble_predict(model, np.array(values))
        print(f"model CP ({model.mode}, K={model.k}): {pred:.6e}")
    if args.mc or not args.model:
        query = mc.query_from_vector(values, robot or planner.RobotSpec())
        est = mc.estimate_cp_adaptive(
            query, _profile_by_name(args.profile), mc.make_rng(args.seed)
        )
        print(f"monte-carlo CP: {est.p_hat:.6e} "
              f"(ci half-width {est.ci_half_width:.2e}, n={est.n})")
    return EXIT_OK


def _build_checker(args, scenario) -> planner.SafetyChecker:
    model = mdl.load_model(args.model) if args.model else None
    return planner.make_checker(
        args.checker, model=model, mode=args.dcpf_mode, n_max=args.samples_cap,
        seed=args.seed,
    )


def cmd_plan(args) -> int:
    scenario = planner.load_scenario(args.scenario)
    if args.pmax is not None:
        from dataclasses import replace

        scenario = replace(scenario, p_max=args.pmax)
    checker = _build_checker(args, scenario)
    search = planner.SearchParams(node_budget=args.node_budget, timeout_s=args.timeout)
    result = planner.hybrid_astar(scenario, checker, search)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    print(f"status: {result.status}  cost: {result.cost:.3f}  "
          f"expanded: {result.expanded}  queries: {result.checker_queries}  "
          f"wall: {result.wall_time:.2f}s")
    if not result.solved:
        return EXIT_INFEASIBLE
    stem = Path(args.scenario).stem + f"_{args.checker}_p{scenario.p_max:g}"
    bench.write_path_csv(out_dir / f"{stem}_path.csv", result, scenario, seed=args.seed)
    from .plotting import save_cell_svg

    save_cell_svg(out_dir / f"{stem}.svg", scenario, result,
                  title=f"{args.checker} p_max={scenario.p_max:g}", seed=args.seed)
    print(f"wrote {stem}_path.csv and {stem}.svg to {out_dir}")
    return EXIT_OK


def cmd_bench(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    model = mdl.load_model(args.model) if args.model else None
    p_max_list = tuple(float(v) for v in args.pmax.split(","))
    checkers = tuple(args.checkers.split(","))
    if "dcpf" in checkers and model is None:
        raise ValueError("--model is required when the dcpf checker is benchmarked")
    cfg = bench.BenchConfig(
        p_max_list=p_max_list, checkers=checkers, seed=args.seed,
        ztest_cap=args.ztest_cap, sprt_cap=args.sprt_cap,
        oracle_samples=args.oracle_samples,
        search=planner.SearchParams(node_budget=args.node_budget, timeout_s=args.timeout),
    )
    if args.suite == "narrow":
        report = bench.run_bench([scenarios.make_narrow_passage()], cfg, out_dir,
                                 suite="narrow", model=model)
    elif args.suite == "random":
        maps = [
            scenarios.make_random_map(seed, n_obstacles=args.n_obstacles)
            for seed in range(args.seeds)
        ]
        report = bench.run_bench(maps, cfg, out_dir, suite="random", model=model)
    elif args.suite == "overtake":
        if model is None:
            raise ValueError("--model is required for the overtake suite")
        report = run_overtake_suite(model, cfg, out_dir, n_seeds=args.seeds)
    elif args.suite == "timing":
        if model is None:
            raise ValueError("--model is required for the timing suite")
        timing = bench.run_timing(model, seed=args.seed)
        with open(out_dir / "timing_report.csv", "w", newline="") as fh:
            csv.writer(fh).writerows(timing.csv_rows())
        print(f"batch speedup {timing.batch_speedup:.1f}x, "
              f"dcpf cv {timing.dcpf_latency_cv:.2f}, sprt cv {timing.sprt_latency_cv:.2f}, "
              f"sprt n ratio {timing.sprt_n_ratio:.1f}x")
        return EXIT_OK
    else:
        raise ValueError(f"unknown suite {args.suite}")
    for row in report.rows:
        print(f"{row.checker:>6} p_max={row.p_max:<7g} solved {row.solved}/{row.n_instances} "
              f"mean cost {row.mean_cost:.2f} violations {row.oracle_violations}")
    return EXIT_OK


def run_overtake_suite(model, cfg: bench.BenchConfig, out_dir, n_seeds: int = 20) -> bench.BenchReport:
    """Overtake classification counts per p_max (Table-style CSV) plus oracle checks."""
    out_dir = Path(out_dir)
    maps = [scenarios.make_overtake(seed) for seed in range(n_seeds)]
    dcpf_cfg = bench.BenchConfig(
        p_max_list=cfg.p_max_list, checkers=("dcpf",), dcpf_mode=cfg.dcpf_mode,
        oracle_samples=cfg.oracle_samples, search=cfg.search, seed=cfg.seed,
        render_svg=cfg.render_svg, verify=cfg.verify,
    )
    report = bench.run_bench(maps, dcpf_cfg, out_dir, suite="overtake", model=model)
    class_rows = [["schema_version", "p_max", "before", "after", "none", "violations"]]
    for p_max in cfg.p_max_list:
        counts = {"before": 0, "after": 0, "none": 0}
        violations = 0
        for cell in report.cells:
            if cell.p_max != p_max:
                continue
            idx = int(cell.scenario_name.rsplit("_", 1)[1])
            label = scenarios.classify_overtake(cell.result, maps[idx])
            counts[label] += 1
            if cell.verification is not None:
                violations += cell.verification.violations
        class_rows.append([bench.SCHEMA_VERSION, f"{p_max:g}", counts["before"],
                           counts["after"], counts["none"], violations])
    with open(out_dir / "overtake_classes.csv", "w", newline="") as fh:
        csv.writer(fh).writerows(class_rows)
    return report


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cpfield",
        description="Collision-probability fields: dataset generation, training, "
                    "estimation, and chance-constrained planning.",
    )
    parser.add_argument("--version", action="version", version=f"cpfield {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="info-level logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-dataset", help="generate a balanced labeled CP dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n-records", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--profile", choices=("paper", "relaxed"), default="paper")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(fn=cmd_gen_dataset)

    p = sub.add_parser("train", help="train an ensemble on a dataset (80/10/10 split)")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--lr", type=float, default=2.4e-4)
    p.add_argument("--gamma", type=float, default=0.01)
    p.add_argument("--batch-size", type=int, default=1024)
    p.add_argument("--arch", type=_parse_arch, default=mdl.DESK_ARCH,
                   help="main net as WIDTHxDEPTH (e.g. 256x4), or 'desk'/'paper'")
    p.add_argument("--ensemble", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a model on a labeled dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("estimate", help="estimate the CP of one query")
    p.add_argument("--model", default=None)
    p.add_argument("--query", required=True,
                   help="rx,ry,rphi,l1,l2,sx,sy,sphi,sl1,sl2")
    p.add_argument("--mc", action="store_true", help="also run the Monte-Carlo estimator")
    p.add_argument("--profile", choices=("paper", "relaxed"), default="relaxed")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_estimate)

    p = sub.add_parser("plan", help="plan a path through a scenario file")
    p.add_argument("--scenario", required=True)
    p.add_argument("--checker", choices=("dcpf", "ztest", "sprt"), required=True)
    p.add_argument("--pmax", type=float, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--model", default=None)
    p.add_argument("--dcpf-mode", default="ci_upper", choices=mdl.MODES)
    p.add_argument("--samples-cap", type=int, default=None)
    p.add_argument("--node-budget", type=int, default=200_000)
    p.add_argument("--timeout", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_plan)

    p = sub.add_parser("bench", help="run a benchmark suite")
    p.add_argument("--suite", choices=("narrow", "random", "overtake", "timing"), required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--model", default=None)
    p.add_argument("--checkers", default="dcpf,ztest,sprt")
    p.add_argument("--pmax", default="0.1,0.01,0.001")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--n-obstacles", type=int, default=50)
    p.add_argument("--ztest-cap", type=int, default=100_000)
    p.add_argument("--sprt-cap", type=int, default=4_000_000)
    p.add_argument("--oracle-samples", type=int, default=bench.ORACLE_SAMPLES)
    p.add_argument("--node-budget", type=int, default=200_000)
    p.add_argument("--timeout", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_bench)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.fn(args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
