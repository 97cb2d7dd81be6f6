"""Balanced CP dataset generation: Minkowski-sum placement heuristic, adaptive
Monte-Carlo labeling, stratified splits, and the on-disk CSV format."""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import mc
from .geometry import ConvexPolygon, Pose2, RobotSpec, convex_hull, ellipse_polygon, minkowski_sum, rect_polygon
from .mc import AccuracyProfile, CpQuery, ObstacleSpec

CSV_HEADER = [
    "rx", "ry", "rphi", "l1", "l2",
    "s_x", "s_y", "s_phi", "s_l1", "s_l2",
    "p_bar", "ci_half_width", "n_samples",
]
META_FORMAT = "cpfield-dataset-v1"
N_BUCKETS = 3


class PartialDatasetError(RuntimeError):
    """A bucket could not be filled within the attempt budget; carries what was built."""

    def __init__(self, message: str, dataset: "Dataset"):
        super().__init__(message)
        self.dataset = dataset


@dataclass(frozen=True)
class DatasetRecord:
    rx: float
    ry: float
    rphi: float
    l1: float
    l2: float
    s_x: float
    s_y: float
    s_phi: float
    s_l1: float
    s_l2: float
    p_bar: float
    ci_half_width: float
    n_samples: int
    candidate_index: int = -1  # derivation index for label reproducibility; not a CSV column

    def query_vector(self) -> np.ndarray:
        return np.array(
            [self.rx, self.ry, self.rphi, self.l1, self.l2,
             self.s_x, self.s_y, self.s_phi, self.s_l1, self.s_l2]
        )

    def csv_row(self) -> list[str]:
        vals = [self.rx, self.ry, self.rphi, self.l1, self.l2,
                self.s_x, self.s_y, self.s_phi, self.s_l1, self.s_l2,
                self.p_bar, self.ci_half_width]
        return [f"{v:.17g}" for v in vals] + [str(self.n_samples)]


@dataclass(frozen=True)
class HeuristicShape:
    """Convex region tracking the nontrivial-CP band around an obstacle."""

    boundary: ConvexPolygon


@dataclass(frozen=True)
class DatasetConfig:
    n_records: int
    quotas: tuple[int, int, int] | None = None
    sigma_bounds: tuple[float, float] = (0.0, math.sqrt(2.0))
    # covers both map-clutter obstacles and car-sized rectangles
    length_bounds: tuple[float, float] = (0.1, 4.5)
    robot: RobotSpec = field(default_factory=RobotSpec)
    profile: AccuracyProfile = mc.PAPER_PROFILE
    seed: int = 0

    def __post_init__(self):
        if self.n_records < 1:
            raise ValueError("n_records must be >= 1")
        if self.quotas is not None and sum(self.quotas) != self.n_records:
            raise ValueError("bucket quotas must sum to n_records")

    def effective_quotas(self) -> tuple[int, int, int]:
        if self.quotas is not None:
            return self.quotas
        base = self.n_records // N_BUCKETS
        rem = self.n_records - base * N_BUCKETS
        return tuple(base + (1 if i < rem else 0) for i in range(N_BUCKETS))


@dataclass
class Dataset:
    records: list[DatasetRecord]
    config: DatasetConfig | None = None
    attempts: int = 0

    def __len__(self) -> int:
        return len(self.records)

    def profile(self) -> AccuracyProfile:
        return self.config.profile if self.config is not None else mc.PAPER_PROFILE

    def bucket_counts(self) -> list[int]:
        profile = self.profile()
        counts = [0] * N_BUCKETS
        for r in self.records:
            counts[profile.bucket_of(r.p_bar)] += 1
        return counts

    def labels(self) -> np.ndarray:
        return np.array([r.p_bar for r in self.records])

    def query_matrix(self) -> np.ndarray:
        return np.array([r.query_vector() for r in self.records])

    def ci_half_widths(self) -> np.ndarray:
        return np.array([r.ci_half_width for r in self.records])


def heuristic_shape(robot: RobotSpec, obstacle: ObstacleSpec, rng: np.random.Generator) -> HeuristicShape:
    """Inflated Minkowski region around the obstacle whose boundary tracks CP isolines.

    The obstacle rectangle (at three headings spanning the rotational
    uncertainty) is summed with an uncertainty ellipse and the robot footprint;
    the rotational union is approximated by the convex hull of all vertices.
    """
    _, _, _, l1, l2 = obstacle.mean
    sx, sy, sphi, sl1, sl2 = obstacle.sigma
    phi_m = rng.uniform(sphi, 3.1 * sphi)
    rotations = (-phi_m, 0.0, phi_m) if phi_m > 0 else (0.0,)
    robot_rect = rect_polygon(robot.width, robot.height)
    ax, ay = sx + sl1, sy + sl2
    ellipse = None
    if max(ax, ay) > 1e-4:
        ellipse = ellipse_polygon(max(ax, 1e-4), max(ay, 1e-4), n=32)
    points = []
    for phi in rotations:
        shape = rect_polygon(l1, l2, Pose2(0.0, 0.0, phi))
        if ellipse is not None:
            shape = minkowski_sum(shape, ellipse)
        shape = minkowski_sum(shape, robot_rect)
        points.append(shape.vertices)
    boundary = convex_hull(np.vstack(points)) if len(points) > 1 else ConvexPolygon(points[0])
    return HeuristicShape(boundary=boundary)


def boundary_point(shape: HeuristicShape, fraction: float) -> np.ndarray:
    """Point at the given perimeter fraction of the shape boundary."""
    v = shape.boundary.vertices
    e = np.roll(v, -1, axis=0) - v
    lengths = np.hypot(e[:, 0], e[:, 1])
    target = (fraction % 1.0) * lengths.sum()
    acc = 0.0
    for i, ell in enumerate(lengths):
        if target <= acc + ell or i == len(lengths) - 1:
            t = (target - acc) / ell
            return v[i] + t * e[i]
        acc += ell
    raise AssertionError("unreachable")


BOUNDARY_MIX = 0.8
SCALE_RANGE = (0.5, 2.0)
BACKGROUND_INFLATION = 3.0


def sample_robot_config(shape: HeuristicShape, rng: np.random.Generator) -> Pose2:
    """Robot pose proposal: boundary points scaled radially (80%) or a uniform
    draw in the 3x inflated bounding box (20%); heading uniform."""
    if rng.random() < BOUNDARY_MIX:
        pt = boundary_point(shape, rng.random())
        pt = pt * rng.uniform(*SCALE_RANGE)
    else:
        x0, y0, x1, y1 = shape.boundary.bounding_box()
        cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
        hx = (x1 - x0) / 2 * BACKGROUND_INFLATION
        hy = (y1 - y0) / 2 * BACKGROUND_INFLATION
        pt = np.array([rng.uniform(cx - hx, cx + hx), rng.uniform(cy - hy, cy + hy)])
    heading = rng.uniform(-math.pi, math.pi)
    return Pose2(pt[0], pt[1], heading)


def label_candidate(cfg: DatasetConfig, index: int) -> DatasetRecord:
    """Draw obstacle parameters and a robot pose for candidate `index` and label
    it with the adaptive estimator. Fully determined by (cfg.seed, index)."""
    rng = mc.make_rng(cfg.seed, index)
    l1, l2 = rng.uniform(*cfg.length_bounds, size=2)
    sigma = tuple(rng.uniform(*cfg.sigma_bounds, size=5))
    obstacle = ObstacleSpec((0.0, 0.0, 0.0, l1, l2), sigma)
    shape = heuristic_shape(cfg.robot, obstacle, rng)
    pose = sample_robot_config(shape, rng)
    est = mc.estimate_cp_adaptive(CpQuery(pose, cfg.robot, obstacle), cfg.profile, rng)
    return DatasetRecord(
        rx=pose.x, ry=pose.y, rphi=pose.phi, l1=l1, l2=l2,
        s_x=sigma[0], s_y=sigma[1], s_phi=sigma[2], s_l1=sigma[3], s_l2=sigma[4],
        p_bar=est.p_hat, ci_half_width=est.ci_half_width, n_samples=est.n,
        candidate_index=index,
    )


def _label_star(args) -> DatasetRecord:
    return label_candidate(*args)


ATTEMPT_FACTOR = 100


def generate_dataset(cfg: DatasetConfig, n_workers: int | None = None) -> Dataset:
    """Fill per-bucket quotas by labeling candidates in index order.

    Candidates are labeled in parallel but bucket slots are claimed strictly in
    candidate order, so the output is identical for any worker count.
    """
    quotas = list(cfg.effective_quotas())
    counts = [0, 0, 0]
    picked: list[DatasetRecord] = []
    max_attempts = ATTEMPT_FACTOR * cfg.n_records
    if n_workers is None:
        n_workers = min(4, os.cpu_count() or 1)

    def consume(record: DatasetRecord) -> bool:
        bucket = cfg.profile.bucket_of(record.p_bar)
        if counts[bucket] < quotas[bucket]:
            counts[bucket] += 1
            picked.append(record)
        return counts == quotas

    attempts = 0
    if n_workers <= 1:
        for index in range(max_attempts):
            attempts = index + 1
            if consume(label_candidate(cfg, index)):
                return Dataset(records=picked, config=cfg, attempts=attempts)
    else:
        chunk = max(8 * n_workers, cfg.n_records // 8)
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            start = 0
            done = False
            while start < max_attempts and not done:
                stop = min(start + chunk, max_attempts)
                args = [(cfg, i) for i in range(start, stop)]
                for record in pool.map(_label_star, args, chunksize=16):
                    attempts += 1
                    if consume(record):
                        done = True
                        break
                start = stop
            if done:
                return Dataset(records=picked, config=cfg, attempts=attempts)
    raise PartialDatasetError(
        f"bucket quotas unfilled after {attempts} attempts (counts={counts}, quotas={quotas})",
        Dataset(records=picked, config=cfg, attempts=attempts),
    )


def split(ds: Dataset, ratios: tuple[float, float, float], seed: int) -> tuple[Dataset, Dataset, Dataset]:
    """Stratified-by-bucket split with largest-remainder apportionment per bucket."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("split ratios must sum to 1")
    profile = ds.profile()
    buckets: list[list[int]] = [[] for _ in range(N_BUCKETS)]
    for i, r in enumerate(ds.records):
        buckets[profile.bucket_of(r.p_bar)].append(i)
    if any(len(b) == 0 for b in buckets):
        raise ValueError("cannot split: a CP bucket is empty")
    rng = mc.make_rng(seed, stream=0x5B117)
    parts: list[list[int]] = [[], [], []]
    for idxs in buckets:
        idxs = list(np.array(idxs)[rng.permutation(len(idxs))])
        n = len(idxs)
        exact = [r * n for r in ratios]
        sizes = [int(math.floor(x)) for x in exact]
        order = sorted(range(3), key=lambda k: exact[k] - sizes[k], reverse=True)
        for k in order[: n - sum(sizes)]:
            sizes[k] += 1
        pos = 0
        for part, size in zip(parts, sizes):
            part.extend(idxs[pos : pos + size])
            pos += size
    out = []
    for part in parts:
        out.append(Dataset(records=[ds.records[i] for i in sorted(part)], config=ds.config))
    return tuple(out)


def _meta_path(csv_path: Path) -> Path:
    return csv_path.with_name(csv_path.name + ".meta.json")


def _config_to_json(cfg: DatasetConfig) -> dict:
    return {
        "n_records": cfg.n_records,
        "quotas": list(cfg.quotas) if cfg.quotas is not None else None,
        "sigma_bounds": list(cfg.sigma_bounds),
        "length_bounds": list(cfg.length_bounds),
        "robot": {"width": cfg.robot.width, "height": cfg.robot.height, "wheelbase": cfg.robot.wheelbase},
        "profile": {
            "boundaries": list(cfg.profile.boundaries),
            "accuracies": list(cfg.profile.accuracies),
            "batch_size": cfg.profile.batch_size,
            "max_samples": cfg.profile.max_samples,
        },
        "seed": cfg.seed,
    }


def _config_from_json(d: dict) -> DatasetConfig:
    return DatasetConfig(
        n_records=d["n_records"],
        quotas=tuple(d["quotas"]) if d["quotas"] is not None else None,
        sigma_bounds=tuple(d["sigma_bounds"]),
        length_bounds=tuple(d["length_bounds"]),
        robot=RobotSpec(**d["robot"]),
        profile=AccuracyProfile(
            boundaries=tuple(d["profile"]["boundaries"]),
            accuracies=tuple(d["profile"]["accuracies"]),
            batch_size=d["profile"]["batch_size"],
            max_samples=d["profile"]["max_samples"],
        ),
        seed=d["seed"],
    )


def save_dataset(ds: Dataset, csv_path: str | Path) -> None:
    csv_path = Path(csv_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for r in ds.records:
            writer.writerow(r.csv_row())
    meta = {
        "format": META_FORMAT,
        "attempts": ds.attempts,
        "candidate_indices": [r.candidate_index for r in ds.records],
        "config": _config_to_json(ds.config) if ds.config is not None else None,
    }
    with open(_meta_path(csv_path), "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_dataset(csv_path: str | Path) -> Dataset:
    csv_path = Path(csv_path)
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != CSV_HEADER:
            raise ValueError(f"unexpected dataset header: {header}")
        rows = [row for row in reader]
    meta_path = _meta_path(csv_path)
    indices = [-1] * len(rows)
    config = None
    attempts = 0
    if meta_path.exists():
        with open(meta_path) as fh:
            meta = json.load(fh)
        if meta.get("format") != META_FORMAT:
            raise ValueError(f"unexpected dataset metadata format: {meta.get('format')}")
        if meta.get("config") is not None:
            config = _config_from_json(meta["config"])
        stored = meta.get("candidate_indices", [])
        if len(stored) == len(rows):
            indices = stored
        attempts = meta.get("attempts", 0)
    records = []
    for row, idx in zip(rows, indices):
        vals = [float(v) for v in row[:12]]
        records.append(DatasetRecord(*vals, n_samples=int(row[12]), candidate_index=idx))
    return Dataset(records=records, config=config, attempts=attempts)
