"""Collision-probability field networks: Fourier input encoding, main and shaping
MLPs, the distance-bias output combination, and ensemble aggregation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import erf, expit

from .geometry import RobotSpec
from .mc import CpQuery

MAGIC = b"CPFLDM01"
FORMAT_VERSION = 1

# query-vector layout: [rx, ry, rphi, l1, l2, sx, sy, sphi, sl1, sl2]
GROUP_DIMS = {"position": 2, "angle": 1, "heading": 1, "lengths": 2, "sigma": 5}
MAIN_GROUPS = ("position", "heading", "lengths", "sigma")
SHAPING_GROUPS = ("angle", "heading", "lengths", "sigma")

MODES = ("single", "mean", "max", "ci_upper", "ci_lower")


class ModelFormatError(ValueError):
    """Model file has a bad magic, version, or is truncated."""


def sigmoid(x):
    return expit(x)


def softplus(x):
    return np.logaddexp(0.0, x)


def gelu(x):
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def gelu_grad(x):
    cdf = 0.5 * (1.0 + erf(x / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return cdf + x * pdf


@dataclass(frozen=True)
class ArchConfig:
    main_width: int = 256
    main_depth: int = 4
    shaping_width: int = 128
    shaping_depth: int = 3
    n_frequencies: int = 16
    # low-frequency encoding: the CP field is smooth at meter scale
    fourier_scale: float = 0.15


DESK_ARCH = ArchConfig()
PAPER_ARCH = ArchConfig(main_width=1024, main_depth=6, shaping_width=512, shaping_depth=3)


@dataclass
class FourierEncoder:
    """Per-group random Fourier frequency matrices, drawn once and persisted."""

    frequencies: dict[str, np.ndarray]
    seed: int
    scale: float = 1.0
    n_frequencies: int = 16

    @classmethod
    def create(cls, seed: int, scale: float = 1.0, n_frequencies: int = 16) -> "FourierEncoder":
        from .mc import make_rng

        freqs = {}
        for i, (name, dim) in enumerate(sorted(GROUP_DIMS.items())):
            rng = make_rng(seed, stream=0xF0_00 + i)
            freqs[name] = rng.standard_normal((n_frequencies, dim)) * scale
        return cls(frequencies=freqs, seed=seed, scale=scale, n_frequencies=n_frequencies)

    def encode_group(self, name: str, values: np.ndarray) -> np.ndarray:
        freq = self.frequencies[name]
        values = np.atleast_2d(values)
        if values.shape[1] != freq.shape[1]:
            raise ValueError(f"group '{name}' expects dim {freq.shape[1]}, got {values.shape[1]}")
        proj = 2.0 * math.pi * values @ freq.T
        return np.concatenate([np.sin(proj), np.cos(proj)], axis=1)

    def feature_dim(self, groups) -> int:
        return 2 * self.n_frequencies * len(groups)


def query_groups(queries: np.ndarray) -> dict[str, np.ndarray]:
    """Split canonical (B, 10) query vectors into the semantic input groups."""
    q = np.atleast_2d(np.asarray(queries, dtype=float))
    if q.shape[1] != 10:
        raise ValueError("queries must have 10 columns")
    if not np.all(np.isfinite(q)):
        raise ValueError("queries contain non-finite values")
    return {
        "position": q[:, 0:2],
        "angle": np.arctan2(q[:, 1], q[:, 0])[:, None],
        "heading": q[:, 2:3],
        "lengths": q[:, 3:5],
        "sigma": q[:, 5:10],
    }


def encode_inputs(enc: FourierEncoder, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (main features, shaping features, center distance) for a query batch."""
    groups = query_groups(queries)
    xm = np.concatenate([enc.encode_group(g, groups[g]) for g in MAIN_GROUPS], axis=1)
    xs = np.concatenate([enc.encode_group(g, groups[g]) for g in SHAPING_GROUPS], axis=1)
    nx = np.hypot(groups["position"][:, 0], groups["position"][:, 1])
    return xm, xs, nx


@dataclass
class LayerStack:
    """Plain MLP parameters; GeLU hidden activations, linear output layer."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def init(cls, sizes: list[int], rng: np.random.Generator) -> "LayerStack":
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / math.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(rng.uniform(-bound, bound, size=fan_out))
        return cls(weights=weights, biases=biases)

    def forward(self, x: np.ndarray, cache: list | None = None) -> np.ndarray:
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            if i < last:
                if cache is not None:
                    cache.append((h, z))
                h = gelu(z)
            else:
                if cache is not None:
                    cache.append((h, z))
                h = z
        return h


@dataclass
class NetworkParams:
    main: LayerStack
    shaping: LayerStack


@dataclass
class DcpfMember:
    encoder: FourierEncoder
    params: NetworkParams
    seed: int = 0


@dataclass
class EnsembleModel:
    members: list[DcpfMember]
    mode: str = "mean"
    arch: ArchConfig = DESK_ARCH
    robot: RobotSpec = field(default_factory=RobotSpec)

    def __post_init__(self):
        if len(self.members) < 1:
            raise ValueError("ensemble needs at least one member")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.mode in ("ci_upper", "ci_lower") and len(self.members) < 2:
            raise ValueError("confidence-interval modes need at least 2 members")

    @property
    def k(self) -> int:
        return len(self.members)

    def with_mode(self, mode: str) -> "EnsembleModel":
        return replace(self, mode=mode)


RHO1_INIT_BIAS = -3.0  # start the inner threshold small so p does not init to 1 everywhere
RHO2_INIT_BIAS = 1.0


def init_member(arch: ArchConfig, seed: int) -> DcpfMember:
    from .mc import make_rng

    enc = FourierEncoder.create(seed, scale=arch.fourier_scale, n_frequencies=arch.n_frequencies)
    rng = make_rng(seed, stream=0xA110C)
    in_main = 2 * arch.n_frequencies * len(MAIN_GROUPS)
    in_shape = 2 * arch.n_frequencies * len(SHAPING_GROUPS)
    main = LayerStack.init([in_main] + [arch.main_width] * arch.main_depth + [1], rng)
    shaping = LayerStack.init([in_shape] + [arch.shaping_width] * arch.shaping_depth + [4], rng)
    shaping.biases[-1][2] += RHO1_INIT_BIAS
    shaping.biases[-1][3] += RHO2_INIT_BIAS
    return DcpfMember(encoder=enc, params=NetworkParams(main=main, shaping=shaping), seed=seed)


ALPHA_SPAN = 20.0  # alpha = 1 + 20 * sigmoid(raw) in [1, 21]
RHO1_SPAN = 12.0  # rho1 = 12 * sigmoid(raw) in [0, 12]


def shaping_heads(raw: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    alpha1 = 1.0 + ALPHA_SPAN * sigmoid(raw[:, 0])
    alpha2 = 1.0 + ALPHA_SPAN * sigmoid(raw[:, 1])
    rho1 = RHO1_SPAN * sigmoid(raw[:, 2])
    rho2 = softplus(raw[:, 3])
    return alpha1, alpha2, rho1, rho2


def combine_field(f, alpha1, alpha2, rho1, rho2, nx):
    """Distance-bias combination: forces CP -> 1 inside rho1, -> 0 far outside rho2."""
    s1 = sigmoid(alpha1 * (rho1 - nx))
    s2 = sigmoid(-alpha2 * (rho2 - nx))
    p = (1.0 - s1) * ((1.0 - s2) * f) + s1
    return p, s1, s2


def member_forward(member: DcpfMember, queries: np.ndarray) -> dict[str, np.ndarray]:
    """Batch forward pass; returns p_hat plus all head intermediates."""
    xm, xs, nx = encode_inputs(member.encoder, queries)
    f = sigmoid(member.params.main.forward(xm)[:, 0])
    raw = member.params.shaping.forward(xs)
    alpha1, alpha2, rho1, rho2 = shaping_heads(raw)
    p, _, _ = combine_field(f, alpha1, alpha2, rho1, rho2, nx)
    return {"p_hat": p, "f": f, "alpha1": alpha1, "alpha2": alpha2, "rho1": rho1, "rho2": rho2}


def forward(member: DcpfMember, q: CpQuery | np.ndarray) -> dict[str, float]:
    """Single-query forward pass with scalar outputs."""
    vec = q.vector() if isinstance(q, CpQuery) else np.asarray(q, dtype=float)
    out = member_forward(member, vec[None, :])
    return {k: float(v[0]) for k, v in out.items()}


def member_predictions(model: EnsembleModel, queries: np.ndarray) -> np.ndarray:
    """(K, B) matrix of member CP predictions."""
    q = np.atleast_2d(np.asarray(queries, dtype=float))
    return np.stack([member_forward(m, q)["p_hat"] for m in model.members])


def aggregate(preds: np.ndarray, mode: str, k: int) -> np.ndarray:
    if mode == "single":
        out = preds[0]
    elif mode == "mean":
        out = preds.mean(axis=0)
    elif mode == "max":
        out = preds.max(axis=0)
    elif mode in ("ci_upper", "ci_lower"):
        if k < 2:
            raise ValueError("confidence-interval modes need at least 2 members")
        mean = preds.mean(axis=0)
        s = preds.std(axis=0, ddof=1)
        shift = 1.96 * s / math.sqrt(k)
        out = mean + shift if mode == "ci_upper" else mean - shift
    else:
        raise ValueError(f"unknown mode {mode}")
    return np.clip(out, 0.0, 1.0)


def ensemble_predict(model: EnsembleModel, queries, mode: str | None = None) -> np.ndarray | float:
    """Aggregated CP prediction for one query vector/CpQuery or a (B, 10) batch."""
    if isinstance(queries, CpQuery):
        queries = queries.vector()
    q = np.asarray(queries, dtype=float)
    scalar = q.ndim == 1
    preds = member_predictions(model, q)
    out = aggregate(preds, mode or model.mode, model.k)
    return float(out[0]) if scalar else out


def _member_arrays(member: DcpfMember) -> list[tuple[str, np.ndarray]]:
    arrays = []
    for name in sorted(member.encoder.frequencies):
        arrays.append((f"encoder/{name}", member.encoder.frequencies[name]))
    for net_name, stack in (("main", member.params.main), ("shaping", member.params.shaping)):
        for i, (w, b) in enumerate(zip(stack.weights, stack.biases)):
            arrays.append((f"{net_name}/W{i}", w))
            arrays.append((f"{net_name}/b{i}", b))
    return arrays


def save_model(model: EnsembleModel, path) -> None:
    """Container format: magic, JSON header, little-endian float64 blobs in header order."""
    members_meta = []
    blobs = []
    for member in model.members:
        arrays = _member_arrays(member)
        members_meta.append(
            {
                "seed": member.seed,
                "encoder": {"seed": member.encoder.seed, "scale": member.encoder.scale,
                            "n_frequencies": member.encoder.n_frequencies},
                "arrays": [[name, list(a.shape)] for name, a in arrays],
            }
        )
        blobs.extend(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in arrays)
    header = {
        "format_version": FORMAT_VERSION,
        "mode": model.mode,
        "k": model.k,
        "arch": {
            "main_width": model.arch.main_width,
            "main_depth": model.arch.main_depth,
            "shaping_width": model.arch.shaping_width,
            "shaping_depth": model.arch.shaping_depth,
            "n_frequencies": model.arch.n_frequencies,
            "fourier_scale": model.arch.fourier_scale,
        },
        "activations": {"hidden": "gelu", "f": "sigmoid", "alpha": "1+20*sigmoid",
                        "rho1": "12*sigmoid", "rho2": "softplus"},
        "robot": {"width": model.robot.width, "height": model.robot.height,
                  "wheelbase": model.robot.wheelbase},
        "members": members_meta,
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(head).to_bytes(8, "little"))
        fh.write(head)
        for blob in blobs:
            fh.write(blob)


def load_model(path) -> EnsembleModel:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < len(MAGIC) + 8 or data[: len(MAGIC)] != MAGIC:
        raise ModelFormatError("bad magic bytes")
    head_len = int.from_bytes(data[len(MAGIC) : len(MAGIC) + 8], "little")
    off = len(MAGIC) + 8
    if len(data) < off + head_len:
        raise ModelFormatError("truncated header")
    try:
        header = json.loads(data[off : off + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError("unreadable header") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported format version {header.get('format_version')}")
    off += head_len
    arch = ArchConfig(**header["arch"])
    robot = RobotSpec(**header["robot"])
    members = []
    for meta in header["members"]:
        freqs = {}
        stacks = {"main": ([], []), "shaping": ([], [])}
        for name, shape in meta["arrays"]:
            count = int(np.prod(shape))
            nbytes = count * 8
            if len(data) < off + nbytes:
                raise ModelFormatError("truncated weight blob")
            a = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(shape).copy()
            off += nbytes
            kind, key = name.split("/", 1)
            if kind == "encoder":
                freqs[key] = a
            else:
                stacks[kind][0 if key.startswith("W") else 1].append(a)
        enc = FourierEncoder(
            frequencies=freqs,
            seed=meta["encoder"]["seed"],
            scale=meta["encoder"]["scale"],
            n_frequencies=meta["encoder"]["n_frequencies"],
        )
        params = NetworkParams(
            main=LayerStack(weights=stacks["main"][0], biases=stacks["main"][1]),
            shaping=LayerStack(weights=stacks["shaping"][0], biases=stacks["shaping"][1]),
        )
        members.append(DcpfMember(encoder=enc, params=params, seed=meta["seed"]))
    return EnsembleModel(members=members, mode=header["mode"], arch=arch, robot=robot)
