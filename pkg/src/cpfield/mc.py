"""Monte-Carlo collision-probability estimation with interval-adaptive stopping,
plus the one-sided z-test and Wald SPRT safety checkers used as planning baselines."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .geometry import TOL, ConvexPolygon, Pose2, RobotSpec, intersects, rect_polygon

Z_95_TWO_SIDED = 1.96
Z_95_ONE_SIDED = 1.645
MIN_SIDE = 1e-3  # clamp for drawn side lengths; Gaussian tails can go nonpositive

SAFE = "safe"
UNSAFE = "unsafe"


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based Philox stream; distinct (seed, stream) keys are independent."""
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, stream & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class ObstacleSpec:
    """Rectangular obstacle: mean [x, y, phi, l1, l2] and per-dimension std devs (diagonal covariance).

    Positional noise is expressed in the frame aligned with the obstacle's mean heading.
    """

    mean: tuple[float, float, float, float, float]
    sigma: tuple[float, float, float, float, float]

    def __post_init__(self):
        mean = tuple(float(v) for v in self.mean)
        sigma = tuple(float(v) for v in self.sigma)
        if len(mean) != 5 or len(sigma) != 5:
            raise ValueError("mean and sigma must have 5 entries [x, y, phi, l1, l2]")
        if mean[3] <= 0 or mean[4] <= 0:
            raise ValueError("mean side lengths must be positive")
        if any(s < 0 for s in sigma):
            raise ValueError("std devs must be nonnegative")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "sigma", sigma)

    def mean_polygon(self) -> ConvexPolygon:
        x, y, phi, l1, l2 = self.mean
        return rect_polygon(l1, l2, Pose2(x, y, phi))

    def sample_configs(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draw n obstacle configurations [x, y, phi, l1, l2] in the world frame.

        Zero-sigma dimensions come out as exact constants. Side lengths are
        clamped to MIN_SIDE.
        """
        noise = rng.standard_normal((n, 5)) * np.asarray(self.sigma)
        x0, y0, phi0, l1, l2 = self.mean
        c, s = math.cos(phi0), math.sin(phi0)
        out = np.empty((n, 5))
        out[:, 0] = x0 + c * noise[:, 0] - s * noise[:, 1]
        out[:, 1] = y0 + s * noise[:, 0] + c * noise[:, 1]
        out[:, 2] = phi0 + noise[:, 2]
        out[:, 3] = np.maximum(l1 + noise[:, 3], MIN_SIDE)
        out[:, 4] = np.maximum(l2 + noise[:, 4], MIN_SIDE)
        return out


@dataclass(frozen=True)
class CpQuery:
    """Robot pose relative to an obstacle, in the obstacle's mean frame (obstacle mean pose is zero)."""

    robot_pose: Pose2
    robot: RobotSpec
    obstacle: ObstacleSpec

    def __post_init__(self):
        if any(abs(v) > 0 for v in self.obstacle.mean[:3]):
            raise ValueError("CpQuery expects the obstacle-centric frame (zero mean pose)")

    def vector(self) -> np.ndarray:
        """Canonical layout [rx, ry, rphi, l1, l2, sx, sy, sphi, sl1, sl2]."""
        return np.array(
            [
                self.robot_pose.x,
                self.robot_pose.y,
                self.robot_pose.phi,
                self.obstacle.mean[3],
                self.obstacle.mean[4],
                *self.obstacle.sigma,
            ]
        )


def query_from_vector(v, robot: RobotSpec) -> CpQuery:
    v = np.asarray(v, dtype=float)
    if v.shape != (10,):
        raise ValueError("query vector must have 10 entries")
    return CpQuery(
        robot_pose=Pose2(v[0], v[1], v[2]),
        robot=robot,
        obstacle=ObstacleSpec(mean=(0.0, 0.0, 0.0, v[3], v[4]), sigma=tuple(v[5:10])),
    )


@dataclass(frozen=True)
class CpEstimate:
    p_hat: float
    ci_half_width: float
    n: int
    hits: int


@dataclass(frozen=True)
class AccuracyProfile:
    """CP intervals, their target CI half-widths, and the sampling batch/cap sizes."""

    boundaries: tuple[float, ...] = (0.01, 0.1)
    accuracies: tuple[float, ...] = (1e-4, 1e-3, 1e-2)
    batch_size: int = 40_000
    max_samples: int = 4_000_000

    def __post_init__(self):
        if list(self.boundaries) != sorted(self.boundaries):
            raise ValueError("interval boundaries must be strictly increasing")
        if len(set(self.boundaries)) != len(self.boundaries):
            raise ValueError("interval boundaries must be strictly increasing")
        if len(self.accuracies) != len(self.boundaries) + 1:
            raise ValueError("need one accuracy per interval")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def accuracy_for(self, p: float) -> float:
        for bound, acc in zip(self.boundaries, self.accuracies):
            if p < bound:
                return acc
        return self.accuracies[-1]

    def bucket_of(self, p: float) -> int:
        for i, bound in enumerate(self.boundaries):
            if p < bound:
                return i
        return len(self.boundaries)


PAPER_PROFILE = AccuracyProfile()
# Desk-scale profile: looser accuracies, batch/cap scaled down accordingly.
RELAXED_PROFILE = AccuracyProfile(
    accuracies=(1e-3, 1e-2, 1e-2), batch_size=4_000, max_samples=40_000
)


@dataclass(frozen=True)
class SafetyDecision:
    verdict: str
    samples_used: int
    undecided_budget_exhausted: bool = False

    def __post_init__(self):
        if self.verdict not in (SAFE, UNSAFE):
            raise ValueError("verdict must be 'safe' or 'unsafe'")
        if self.undecided_budget_exhausted and self.verdict != UNSAFE:
            raise ValueError("budget exhaustion implies an unsafe verdict")

    @property
    def is_safe(self) -> bool:
        return self.verdict == SAFE


def rect_overlap_batch(
    robot_pose: Pose2,
    robot: RobotSpec,
    configs: np.ndarray,
    tol: float = TOL,
) -> np.ndarray:
    """Vectorized SAT for one robot rectangle against N obstacle rectangles.

    configs is (N, 5) rows [x, y, phi, l1, l2]. Closed-set semantics: touching
    counts as overlap. Matches geometry.intersects on rectangle pairs.
    """
    rx, ry, rphi = robot_pose.x, robot_pose.y, robot_pose.phi
    w2, h2 = robot.width / 2.0, robot.height / 2.0
    cr, sr = math.cos(rphi), math.sin(rphi)
    co = np.cos(configs[:, 2])
    so = np.sin(configs[:, 2])
    a2 = configs[:, 3] / 2.0
    b2 = configs[:, 4] / 2.0
    dx = configs[:, 0] - rx
    dy = configs[:, 1] - ry
    # cos/sin of the relative heading drive all four projection radii
    t1 = np.abs(co * cr + so * sr)
    t2 = np.abs(so * cr - co * sr)
    ok = np.abs(dx * cr + dy * sr) <= w2 + a2 * t1 + b2 * t2 + tol
    ok &= np.abs(dy * cr - dx * sr) <= h2 + a2 * t2 + b2 * t1 + tol
    ok &= np.abs(dx * co + dy * so) <= a2 + w2 * t1 + h2 * t2 + tol
    ok &= np.abs(dy * co - dx * so) <= b2 + w2 * t2 + h2 * t1 + tol
    return ok


def sample_collisions(q: CpQuery, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw n obstacle configurations and test each against the robot footprint."""
    configs = q.obstacle.sample_configs(n, rng)
    return rect_overlap_batch(q.robot_pose, q.robot, configs)


def sample_collision(q: CpQuery, rng: np.random.Generator) -> bool:
    """Single indicator draw: obstacle config from its Gaussian, SAT against the robot rectangle."""
    config = q.obstacle.sample_configs(1, rng)[0]
    obstacle = rect_polygon(config[3], config[4], Pose2(config[0], config[1], config[2]))
    return intersects(q.robot.footprint(q.robot_pose), obstacle)


def clt_interval(hits: int, n: int) -> tuple[float, float]:
    """CLT 95% confidence interval for a Bernoulli proportion.

    The all-or-nothing cases use the exact tail bounds 1 - 0.05**(1/n) and
    0.05**(1/n) instead of the degenerate normal interval.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0 <= hits <= n:
        raise ValueError("hits must be in [0, n]")
    if hits == 0:
        return 0.0, 1.0 - 0.05 ** (1.0 / n)
    if hits == n:
        return 0.05 ** (1.0 / n), 1.0
    p = hits / n
    half = Z_95_TWO_SIDED * math.sqrt(p * (1.0 - p) / n)
    return max(0.0, p - half), min(1.0, p + half)


def ci_half_width(hits: int, n: int) -> float:
    """Largest deviation of the 95% CI from the point estimate."""
    p = hits / n
    lo, hi = clt_interval(hits, n)
    return max(hi - p, p - lo)


HitSampler = Callable[[int, np.random.Generator], int]
BoolSampler = Callable[[int, np.random.Generator], np.ndarray]


def collision_hit_sampler(q: CpQuery) -> HitSampler:
    def sampler(n: int, rng: np.random.Generator) -> int:
        return int(sample_collisions(q, n, rng).sum())

    return sampler


def bernoulli_hit_sampler(p: float) -> HitSampler:
    def sampler(n: int, rng: np.random.Generator) -> int:
        return int(rng.binomial(n, p))

    return sampler


def adaptive_estimate(
    sample_hits: HitSampler, profile: AccuracyProfile, rng: np.random.Generator
) -> CpEstimate:
    """Draw whole batches until the CI half-width meets the accuracy of the
    interval containing the current estimate, or the sample cap is reached."""
    hits = 0
    n = 0
    while True:
        hits += sample_hits(profile.batch_size, rng)
        n += profile.batch_size
        p = hits / n
        half = ci_half_width(hits, n)
        if half <= profile.accuracy_for(p) or n >= profile.max_samples:
            return CpEstimate(p_hat=p, ci_half_width=half, n=n, hits=hits)


def estimate_cp_adaptive(
    q: CpQuery, profile: AccuracyProfile, rng: np.random.Generator
) -> CpEstimate:
    return adaptive_estimate(collision_hit_sampler(q), profile, rng)


def max_samples(profile: AccuracyProfile) -> int:
    """Worst-case sample count over all CP values for the profile's accuracy map.

    Supremum of ceil(1.96^2 p (1-p) / eps(p)^2); interval endpoints are
    evaluated as closure points, so open boundaries contribute their limit.
    """
    z2 = Z_95_TWO_SIDED**2
    edges = [0.0, *profile.boundaries, 1.0]
    worst = 0
    for i, eps in enumerate(profile.accuracies):
        a, b = edges[i], edges[i + 1]
        candidates = [a, b]
        if a <= 0.5 <= b:
            candidates.append(0.5)
        peak = max(p * (1.0 - p) for p in candidates)
        # guard against fp noise pushing an exact integer over the next ceil
        worst = max(worst, math.ceil(z2 * peak / eps**2 - 1e-8))
    return worst


def ztest_from_sampler(
    sample_hits: HitSampler,
    p_max: float,
    n_max: int,
    rng: np.random.Generator,
    small_batch: int = 1_000,
    large_batch: int = 10_000,
    switch_at: int = 100_000,
) -> SafetyDecision:
    """One-sided 95% proportion test: safe when the upper bound drops below p_max,
    unsafe when the lower bound exceeds it, unsafe with flag at the budget."""
    if not 0.0 < p_max < 1.0:
        raise ValueError("p_max must be in (0, 1)")
    hits = 0
    n = 0
    while n < n_max:
        batch = small_batch if n < switch_at else large_batch
        batch = min(batch, n_max - n)
        hits += sample_hits(batch, rng)
        n += batch
        p = hits / n
        if hits == 0:
            upper = 1.0 - 0.05 ** (1.0 / n)
            lower = 0.0
        elif hits == n:
            upper = 1.0
            lower = 0.05 ** (1.0 / n)
        else:
            se = math.sqrt(p * (1.0 - p) / n)
            upper = p + Z_95_ONE_SIDED * se
            lower = p - Z_95_ONE_SIDED * se
        if upper < p_max:
            return SafetyDecision(SAFE, n)
        if lower > p_max:
            return SafetyDecision(UNSAFE, n)
    return SafetyDecision(UNSAFE, n, undecided_budget_exhausted=True)


def ztest_check(
    q: CpQuery, p_max: float, n_max: int, rng: np.random.Generator, **kwargs
) -> SafetyDecision:
    return ztest_from_sampler(collision_hit_sampler(q), p_max, n_max, rng, **kwargs)


@dataclass(frozen=True)
class SprtParams:
    delta: float = 0.5
    alpha: float = 0.05
    beta: float = 0.05

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must be in (0, 1)")
        if not (0.0 < self.alpha < 0.5 and 0.0 < self.beta < 0.5):
            raise ValueError("alpha and beta must be in (0, 0.5)")


def collision_bool_sampler(q: CpQuery) -> BoolSampler:
    def sampler(n: int, rng: np.random.Generator) -> np.ndarray:
        return sample_collisions(q, n, rng)

    return sampler


def bernoulli_bool_sampler(p: float) -> BoolSampler:
    def sampler(n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.random(n) < p

    return sampler


def sprt_from_sampler(
    sample_bools: BoolSampler,
    p_max: float,
    n_max: int,
    params: SprtParams,
    rng: np.random.Generator,
    batch: int = 4_096,
) -> SafetyDecision:
    """Wald SPRT of p = p_max(1-delta) (safe) against p = p_max(1+delta) (unsafe).

    The log-likelihood ratio of the unsafe over the safe hypothesis is accumulated
    per sample; crossing log(beta/(1-alpha)) accepts safe, log((1-beta)/alpha)
    accepts unsafe. Batched drawing preserves the sequential stopping sample count.
    """
    p_safe = p_max * (1.0 - params.delta)
    p_unsafe = p_max * (1.0 + params.delta)
    if p_unsafe >= 1.0:
        raise ValueError("p_max * (1 + delta) must be < 1")
    inc_hit = math.log(p_unsafe / p_safe)
    inc_miss = math.log((1.0 - p_unsafe) / (1.0 - p_safe))
    accept_safe = math.log(params.beta / (1.0 - params.alpha))
    accept_unsafe = math.log((1.0 - params.beta) / params.alpha)
    llr = 0.0
    n = 0
    while n < n_max:
        m = min(batch, n_max - n)
        x = sample_bools(m, rng)
        cum = llr + np.cumsum(np.where(x, inc_hit, inc_miss))
        crossed = (cum <= accept_safe) | (cum >= accept_unsafe)
        if crossed.any():
            k = int(np.argmax(crossed))
            verdict = SAFE if cum[k] <= accept_safe else UNSAFE
            return SafetyDecision(verdict, n + k + 1)
        llr = float(cum[-1])
        n += m
    return SafetyDecision(UNSAFE, n, undecided_budget_exhausted=True)


def sprt_check(
    q: CpQuery,
    p_max: float,
    n_max: int,
    params: SprtParams | None = None,
    rng: np.random.Generator | None = None,
    **kwargs,
) -> SafetyDecision:
    if params is None:
        params = SprtParams()
    if rng is None:
        raise ValueError("sprt_check needs an rng")
    return sprt_from_sampler(collision_bool_sampler(q), p_max, n_max, params, rng, **kwargs)
