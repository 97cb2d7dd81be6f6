"""From-scratch training for CP field members: BCE + threshold regularizer loss,
reverse-mode gradients, Adam, and the MAE/PAP evaluation metrics."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset
from .geometry import RobotSpec
from .mc import make_rng
from .model import (
    ALPHA_SPAN,
    DESK_ARCH,
    RHO1_SPAN,
    ArchConfig,
    DcpfMember,
    EnsembleModel,
    LayerStack,
    NetworkParams,
    encode_inputs,
    ensemble_predict,
    gelu,
    gelu_grad,
    init_member,
    member_forward,
    sigmoid,
    softplus,
)

log = logging.getLogger(__name__)

P_CLAMP = 1e-7  # BCE probability clamp; labels of exactly 0/1 are common far afield


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 2.4e-4
    gamma: float = 0.01
    batch_size: int = 1024
    epochs: int = 20
    seed: int = 0
    ensemble_size: int = 3
    arch: ArchConfig = DESK_ARCH
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


@dataclass(frozen=True)
class Metrics:
    mae_overall: float
    mae_per_bucket: tuple[float, float, float]
    pap_overall: float
    pap_per_bucket: tuple[float, float, float]


@dataclass
class TrainResult:
    model: EnsembleModel
    history: list[list[dict]]  # per member, per epoch: {"epoch", "train_loss", "val_loss"}


def _param_list(params: NetworkParams) -> list[np.ndarray]:
    return (
        params.main.weights + params.main.biases + params.shaping.weights + params.shaping.biases
    )


def _grads_like(params: NetworkParams) -> "NetworkParams":
    return NetworkParams(
        main=LayerStack(
            weights=[np.zeros_like(w) for w in params.main.weights],
            biases=[np.zeros_like(b) for b in params.main.biases],
        ),
        shaping=LayerStack(
            weights=[np.zeros_like(w) for w in params.shaping.weights],
            biases=[np.zeros_like(b) for b in params.shaping.biases],
        ),
    )


def _stack_backward(stack: LayerStack, cache: list, gout: np.ndarray) -> tuple[list, list, np.ndarray]:
    n = len(stack.weights)
    gw = [None] * n
    gb = [None] * n
    g = gout
    for i in range(n - 1, -1, -1):
        h_in, z = cache[i]
        gz = g if i == n - 1 else g * gelu_grad(z)
        gw[i] = h_in.T @ gz
        gb[i] = gz.sum(axis=0)
        g = gz @ stack.weights[i].T
    return gw, gb, g


def _forward_core(member: DcpfMember, queries: np.ndarray, with_cache: bool):
    xm, xs, nx = encode_inputs(member.encoder, queries)
    main_cache = [] if with_cache else None
    shape_cache = [] if with_cache else None
    f_raw = member.params.main.forward(xm, main_cache)[:, 0]
    raw = member.params.shaping.forward(xs, shape_cache)
    f = sigmoid(f_raw)
    sa1 = sigmoid(raw[:, 0])
    sa2 = sigmoid(raw[:, 1])
    sr1 = sigmoid(raw[:, 2])
    alpha1 = 1.0 + ALPHA_SPAN * sa1
    alpha2 = 1.0 + ALPHA_SPAN * sa2
    rho1 = RHO1_SPAN * sr1
    rho2 = softplus(raw[:, 3])
    u1 = alpha1 * (rho1 - nx)
    u2 = -alpha2 * (rho2 - nx)
    s1 = sigmoid(u1)
    s2 = sigmoid(u2)
    p = (1.0 - s1) * ((1.0 - s2) * f) + s1
    state = dict(
        nx=nx, f=f, raw=raw, sa1=sa1, sa2=sa2, sr1=sr1,
        alpha1=alpha1, alpha2=alpha2, rho1=rho1, rho2=rho2,
        s1=s1, s2=s2, p=p, main_cache=main_cache, shape_cache=shape_cache,
    )
    return state


def _loss_terms(state: dict, labels: np.ndarray, gamma: float):
    pc = np.clip(state["p"], P_CLAMP, 1.0 - P_CLAMP)
    bce = -(labels * np.log(pc) + (1.0 - labels) * np.log(1.0 - pc))
    drho = state["rho2"] - state["rho1"]
    t1 = state["alpha1"] * drho / 2.0
    t2 = -state["alpha2"] * drho / 2.0
    reg = np.abs(drho) + sigmoid(t1) + sigmoid(t2)
    total = float(bce.mean() + gamma * reg.mean())
    return total, pc, drho, t1, t2


def loss(member: DcpfMember, queries: np.ndarray, labels: np.ndarray, gamma: float) -> float:
    """Mean BCE against the labeled CP plus gamma times the threshold regularizer."""
    state = _forward_core(member, np.atleast_2d(queries), with_cache=False)
    total, *_ = _loss_terms(state, np.asarray(labels, dtype=float), gamma)
    return total


def gradients(
    member: DcpfMember, queries: np.ndarray, labels: np.ndarray, gamma: float
) -> tuple[float, NetworkParams]:
    """Loss value and exact reverse-mode gradients for every weight and bias."""
    queries = np.atleast_2d(queries)
    labels = np.asarray(labels, dtype=float)
    n = len(labels)
    state = _forward_core(member, queries, with_cache=True)
    total, pc, drho, t1, t2 = _loss_terms(state, labels, gamma)

    f, s1, s2 = state["f"], state["s1"], state["s2"]
    alpha1, alpha2 = state["alpha1"], state["alpha2"]
    rho1, rho2, nx = state["rho1"], state["rho2"], state["nx"]
    p = state["p"]

    # BCE path; clamp freezes the gradient outside (P_CLAMP, 1 - P_CLAMP)
    gpc = (pc - labels) / (pc * (1.0 - pc)) / n
    gp = np.where((p > P_CLAMP) & (p < 1.0 - P_CLAMP), gpc, 0.0)
    gf = gp * (1.0 - s1) * (1.0 - s2)
    gs1 = gp * (1.0 - (1.0 - s2) * f)
    gs2 = gp * (-(1.0 - s1) * f)
    gu1 = gs1 * s1 * (1.0 - s1)
    gu2 = gs2 * s2 * (1.0 - s2)
    galpha1 = gu1 * (rho1 - nx)
    grho1 = gu1 * alpha1
    galpha2 = gu2 * (nx - rho2)
    grho2 = gu2 * (-alpha2)

    # regularizer path
    w = gamma / n
    sp1 = sigmoid(t1)
    sp2 = sigmoid(t2)
    gdrho = w * (np.sign(drho) + sp1 * (1.0 - sp1) * alpha1 / 2.0 - sp2 * (1.0 - sp2) * alpha2 / 2.0)
    galpha1 = galpha1 + w * sp1 * (1.0 - sp1) * drho / 2.0
    galpha2 = galpha2 - w * sp2 * (1.0 - sp2) * drho / 2.0
    grho2 = grho2 + gdrho
    grho1 = grho1 - gdrho

    # heads back to the raw shaping outputs
    sa1, sa2, sr1 = state["sa1"], state["sa2"], state["sr1"]
    raw3 = state["raw"][:, 3]
    graw = np.stack(
        [
            galpha1 * ALPHA_SPAN * sa1 * (1.0 - sa1),
            galpha2 * ALPHA_SPAN * sa2 * (1.0 - sa2),
            grho1 * RHO1_SPAN * sr1 * (1.0 - sr1),
            grho2 * sigmoid(raw3),
        ],
        axis=1,
    )
    gf_raw = (gf * f * (1.0 - f))[:, None]

    grads = _grads_like(member.params)
    gw, gb, _ = _stack_backward(member.params.main, state["main_cache"], gf_raw)
    grads.main.weights, grads.main.biases = gw, gb
    gw, gb, _ = _stack_backward(member.params.shaping, state["shape_cache"], graw)
    grads.shaping.weights, grads.shaping.biases = gw, gb
    return total, grads


class Adam:
    """Canonical Adam over a flat list of parameter arrays."""

    def __init__(self, params: list[np.ndarray], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def _dataset_arrays(ds: Dataset) -> tuple[np.ndarray, np.ndarray]:
    return ds.query_matrix(), ds.labels()


def _epoch_loss(member: DcpfMember, queries, labels, gamma, batch=8192) -> float:
    tot = 0.0
    for i in range(0, len(labels), batch):
        chunk = slice(i, i + batch)
        tot += loss(member, queries[chunk], labels[chunk], gamma) * len(labels[chunk])
    return tot / len(labels)


def train_member(
    queries: np.ndarray,
    labels: np.ndarray,
    val_queries: np.ndarray,
    val_labels: np.ndarray,
    cfg: TrainConfig,
    member_seed: int,
) -> tuple[DcpfMember, list[dict]]:
    member = init_member(cfg.arch, member_seed)
    params = _param_list(member.params)
    opt = Adam(params, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    rng = make_rng(member_seed, stream=0x5F0FF1E)
    history = [
        {
            "epoch": 0,
            "train_loss": _epoch_loss(member, queries, labels, cfg.gamma),
            "val_loss": _epoch_loss(member, val_queries, val_labels, cfg.gamma),
        }
    ]
    n = len(labels)
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(n)
        running = 0.0
        seen = 0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            value, grads = gradients(member, queries[idx], labels[idx], cfg.gamma)
            if not math.isfinite(value):
                raise RuntimeError(
                    f"training diverged: non-finite loss at epoch {epoch} (seed {member_seed})"
                )
            opt.step(params, _param_list(grads))
            running += value * len(idx)
            seen += len(idx)
        entry = {
            "epoch": epoch,
            "train_loss": running / seen,
            "val_loss": _epoch_loss(member, val_queries, val_labels, cfg.gamma),
        }
        history.append(entry)
        log.info(
            "member %d epoch %d train %.6f val %.6f",
            member_seed, epoch, entry["train_loss"], entry["val_loss"],
        )
    return member, history


def train(train_ds: Dataset, val_ds: Dataset, cfg: TrainConfig) -> TrainResult:
    """Train an ensemble of independently seeded members; deterministic given cfg.seed."""
    if len(train_ds) == 0 or len(val_ds) == 0:
        raise ValueError("train and validation splits must be nonempty")
    queries, labels = _dataset_arrays(train_ds)
    val_queries, val_labels = _dataset_arrays(val_ds)
    members = []
    history = []
    for k in range(cfg.ensemble_size):
        member_seed = cfg.seed * 100_003 + k
        member, hist = train_member(queries, labels, val_queries, val_labels, cfg, member_seed)
        members.append(member)
        history.append(hist)
    robot = train_ds.config.robot if train_ds.config is not None else RobotSpec()
    model = EnsembleModel(members=members, mode="mean", arch=cfg.arch, robot=robot)
    return TrainResult(model=model, history=history)


BUCKET_EDGES = (0.01, 0.1)


def _bucket_index(p: np.ndarray) -> np.ndarray:
    return np.digitize(p, BUCKET_EDGES)


def evaluate(model: EnsembleModel, ds: Dataset, batch: int = 8192) -> Metrics:
    """MAE and percentage of predictions falling inside each label's MC confidence interval."""
    queries, labels = _dataset_arrays(ds)
    ci = ds.ci_half_widths()
    preds = np.concatenate(
        [ensemble_predict(model, queries[i : i + batch]) for i in range(0, len(labels), batch)]
    )
    err = np.abs(preds - labels)
    accurate = err <= ci
    buckets = _bucket_index(labels)
    mae_b, pap_b = [], []
    for b in range(3):
        mask = buckets == b
        mae_b.append(float(err[mask].mean()) if mask.any() else float("nan"))
        pap_b.append(float(accurate[mask].mean()) if mask.any() else float("nan"))
    return Metrics(
        mae_overall=float(err.mean()),
        mae_per_bucket=tuple(mae_b),
        pap_overall=float(accurate.mean()),
        pap_per_bucket=tuple(pap_b),
    )


def mean_abs_delta_rho(model: EnsembleModel, queries: np.ndarray, batch: int = 8192) -> float:
    """Mean |rho2 - rho1| across members over a query set (regularizer effect probe)."""
    queries = np.atleast_2d(queries)
    vals = []
    for member in model.members:
        for i in range(0, len(queries), batch):
            out = member_forward(member, queries[i : i + batch])
            vals.append(np.abs(out["rho2"] - out["rho1"]))
    return float(np.concatenate(vals).mean())
