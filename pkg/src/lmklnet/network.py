"""Attentional gating network and MLP classifier over per-sample kernel slices.

A sample ``z`` enters as its kernel slice ``K(z)`` of shape (N, M): column
``m`` holds kernel ``m`` evaluated against all N training samples.

Gating (AN): every kernel column goes through the same two FC layers,
``u_m = relu(W0 K[:, m] + b0)`` then ``s_m = Wa u_m + ba``, and a single
softmax over all N*M scores yields ``h``, a point on the (NM-1)-simplex.

Fusion: ``v_i = sum_m h[i, m] K[i, m]`` (``pool="mean"`` divides by M).

MLP: ``FC(N->H) -> BN -> relu -> FC(H->H) -> relu -> FC(H->C)``. In the
``shared`` architecture the first FC reuses ``(W0, b0)`` from the AN, which
works because kernel columns and the fused vector are both N-dimensional.
In the ``separate`` architecture the first MLP layer ``W0_mlp`` has no bias:
batch norm subtracts the batch mean right after it, so a bias there would
receive an identically zero gradient.
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, SizeError

__all__ = [
    "ARCHITECTURES",
    "POOL_MODES",
    "BatchNormState",
    "ModelParams",
    "ForwardTrace",
    "init_params",
    "softmax",
    "an_forward",
    "fuse",
    "batchnorm_forward",
    "forward",
    "save_checkpoint",
    "load_checkpoint",
    "describe_params",
]

ARCHITECTURES = ("separate", "shared")
POOL_MODES = ("sum", "mean")


@dataclass
class BatchNormState:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    # weight given to the current batch when updating running statistics
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def fresh(cls, H, momentum=0.1, eps=1e-5):
        return cls(np.ones(H), np.zeros(H), np.zeros(H), np.ones(H), momentum, eps)

    def copy(self):
        return BatchNormState(
            self.gamma.copy(),
            self.beta.copy(),
            self.running_mean.copy(),
            self.running_var.copy(),
            self.momentum,
            self.eps,
        )


@dataclass
class ModelParams:
    """All network weights.

    Shapes: ``W0`` (H, N), ``Wa`` (N, H), ``W1`` (H, H), ``W2`` (C, H) and
    ``W0_mlp`` (H, N) in the ``separate`` architecture only.
    """

    architecture: str
    pool: str
    W0: np.ndarray
    b0: np.ndarray
    Wa: np.ndarray
    ba: np.ndarray
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    bn: BatchNormState
    W0_mlp: np.ndarray = None
    seed: int = None

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"architecture must be one of {ARCHITECTURES}, got {self.architecture!r}")
        if self.pool not in POOL_MODES:
            raise ValueError(f"pool must be one of {POOL_MODES}, got {self.pool!r}")
        has_mlp = self.W0_mlp is not None
        if has_mlp != (self.architecture == "separate"):
            raise ValueError("W0_mlp must be present exactly in the separate architecture")
        H, N = self.W0.shape
        C = self.W2.shape[0]
        expected = {
            "W0": (H, N), "b0": (H,), "Wa": (N, H), "ba": (N,),
            "W1": (H, H), "b1": (H,), "W2": (C, H), "b2": (C,),
            "bn.gamma": (H,), "bn.beta": (H,),
        }
        if has_mlp:
            expected["W0_mlp"] = (H, N)
        for name, arr in self.trainable().items():
            if arr.shape != expected[name]:
                raise ValueError(f"{name} has shape {arr.shape}, expected {expected[name]}")

    @property
    def N(self):
        return self.W0.shape[1]

    @property
    def H(self):
        return self.W0.shape[0]

    @property
    def C(self):
        return self.W2.shape[0]

    def trainable(self):
        """Name -> array for every parameter that receives a gradient.

        The arrays are the live storage, so in-place edits change the model.
        """
        out = {"W0": self.W0, "b0": self.b0}
        if self.architecture == "separate":
            out["W0_mlp"] = self.W0_mlp
        out.update(
            Wa=self.Wa, ba=self.ba, W1=self.W1, b1=self.b1, W2=self.W2, b2=self.b2,
        )
        out["bn.gamma"] = self.bn.gamma
        out["bn.beta"] = self.bn.beta
        return out

    def first_fc(self):
        """Weight and bias (None when absent) of the MLP's first FC layer."""
        if self.architecture == "shared":
            return self.W0, self.b0
        return self.W0_mlp, None

    def copy(self):
        return ModelParams(
            self.architecture,
            self.pool,
            self.W0.copy(), self.b0.copy(), self.Wa.copy(), self.ba.copy(),
            self.W1.copy(), self.b1.copy(), self.W2.copy(), self.b2.copy(),
            self.bn.copy(),
            None if self.W0_mlp is None else self.W0_mlp.copy(),
            self.seed,
        )

    def equals(self, other):
        """Bitwise equality of every tensor, running statistics included."""
        if (self.architecture, self.pool) != (other.architecture, other.pool):
            return False
        a, b = _all_tensors(self), _all_tensors(other)
        return a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)


def _all_tensors(params):
    out = dict(params.trainable())
    out["bn.running_mean"] = params.bn.running_mean
    out["bn.running_var"] = params.bn.running_var
    return out


@dataclass
class ForwardTrace:
    """Activations of one batch, kept for backpropagation."""

    K: np.ndarray           # (B, N, M)
    X: np.ndarray           # (B, M, N) kernel columns
    A0: np.ndarray          # (B, M, H) AN hidden pre-activation
    U: np.ndarray           # (B, M, H)
    S: np.ndarray           # (B, M, N) gating scores
    h: np.ndarray           # (B, N, M)
    v: np.ndarray           # (B, N) fused vector
    z1: np.ndarray          # (B, H) first FC output
    bn_cache: dict = field(default_factory=dict)
    y1: np.ndarray = None   # (B, H) after batch norm
    r1: np.ndarray = None
    a2: np.ndarray = None
    r2: np.ndarray = None
    logits: np.ndarray = None
    mode: str = "train"


def init_params(N, H, C, seed, std=0.05, architecture="shared", pool="sum", bn_momentum=0.1, bn_eps=1e-5):
    """Gaussian N(0, std^2) weights, zero biases, identity batch norm."""
    if min(N, H, C) < 1:
        raise ValueError(f"N, H, C must be >= 1, got {(N, H, C)}")
    if not std > 0:
        raise ValueError(f"std must be positive, got {std}")
    rng = np.random.default_rng(seed)
    W0 = rng.normal(0.0, std, (H, N))
    W0_mlp = rng.normal(0.0, std, (H, N)) if architecture == "separate" else None
    Wa = rng.normal(0.0, std, (N, H))
    W1 = rng.normal(0.0, std, (H, H))
    W2 = rng.normal(0.0, std, (C, H))
    return ModelParams(
        architecture,
        pool,
        W0, np.zeros(H),
        Wa, np.zeros(N),
        W1, np.zeros(H),
        W2, np.zeros(C),
        BatchNormState.fresh(H, bn_momentum, bn_eps),
        W0_mlp,
        seed,
    )


def softmax(v, axis=-1):
    """Numerically stable softmax along ``axis``."""
    v = np.asarray(v, dtype=np.float64)
    e = np.exp(v - np.max(v, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


def _batched(K, N=None):
    K = np.asarray(K, dtype=np.float64)
    single = K.ndim == 2
    if single:
        K = K[None]
    if K.ndim != 3:
        raise ValueError(f"kernel input must be (N, M) or (B, N, M), got shape {K.shape}")
    if N is not None and K.shape[1] != N:
        raise ValueError(f"kernel slice has {K.shape[1]} rows but the model expects N={N}")
    return K, single


def _gating(params, K):
    X = K.transpose(0, 2, 1)
    A0 = X @ params.W0.T + params.b0
    U = np.maximum(A0, 0.0)
    S = U @ params.Wa.T + params.ba
    B, M, N = S.shape
    h = softmax(S.reshape(B, M * N), axis=1).reshape(B, M, N).transpose(0, 2, 1)
    return X, A0, U, S, h


def an_forward(params, K):
    """Gating matrix ``h`` for one slice (N, M) or a batch (B, N, M)."""
    Kb, single = _batched(K, params.N)
    h = _gating(params, Kb)[-1]
    return h[0] if single else h


def fuse(h, K, pool="sum"):
    """Kernel-wise weighted pooling: ``v_i = sum_m h[i, m] K[i, m]``."""
    h = np.asarray(h, dtype=np.float64)
    K = np.asarray(K, dtype=np.float64)
    if h.shape != K.shape:
        raise ValueError(f"gating shape {h.shape} does not match kernel shape {K.shape}")
    v = np.sum(h * K, axis=-1)
    if pool == "mean":
        v = v / K.shape[-1]
    elif pool != "sum":
        raise ValueError(f"unknown pool mode {pool!r}")
    return v


def batchnorm_forward(X, bn, mode="train", update_stats=True, return_cache=False):
    """Batch normalization over the batch axis of a (B, H) array.

    In train mode the batch mean and biased variance are used and, unless
    ``update_stats`` is false, the running statistics move towards them.
    """
    X = np.asarray(X, dtype=np.float64)
    if mode == "train":
        if X.shape[0] < 2:
            raise ValueError("batch norm in train mode needs a batch of at least 2")
        mean = X.mean(axis=0)
        var = X.var(axis=0)
        if update_stats:
            bn.running_mean[...] = (1.0 - bn.momentum) * bn.running_mean + bn.momentum * mean
            bn.running_var[...] = (1.0 - bn.momentum) * bn.running_var + bn.momentum * var
    elif mode == "infer":
        mean = bn.running_mean
        var = bn.running_var
    else:
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    inv_std = 1.0 / np.sqrt(var + bn.eps)
    xhat = (X - mean) * inv_std
    out = bn.gamma * xhat + bn.beta
    if return_cache:
        return out, {"xhat": xhat, "inv_std": inv_std, "mean": mean, "var": var}
    return out


def forward(params, K, mode="train", update_stats=True):
    """Logits for one slice (N, M) or a batch (B, N, M).

    Returns ``(logits, trace)``. Train mode uses batch statistics and, when
    ``update_stats`` is set, updates the batch-norm running averages.
    """
    Kb, single = _batched(K, params.N)
    X, A0, U, S, h = _gating(params, Kb)
    v = fuse(h, Kb, params.pool)
    Wf, bf = params.first_fc()
    z1 = v @ Wf.T
    if bf is not None:
        z1 = z1 + bf
    y1, cache = batchnorm_forward(z1, params.bn, mode, update_stats, return_cache=True)
    r1 = np.maximum(y1, 0.0)
    a2 = r1 @ params.W1.T + params.b1
    r2 = np.maximum(a2, 0.0)
    logits = r2 @ params.W2.T + params.b2
    trace = ForwardTrace(Kb, X, A0, U, S, h, v, z1, cache, y1, r1, a2, r2, logits, mode)
    return (logits[0] if single else logits), trace


# Checkpoints
# -----------
# 8-byte magic, u32 version, u64 length of a JSON metadata block, the JSON
# (UTF-8, sorted keys), then every tensor as little-endian f64 in the order
# listed under "tensors". No timestamps, so equal models give equal bytes.

CKPT_MAGIC = b"LMKLCKPT"
CKPT_VERSION = 1
_CKPT_HEADER = struct.Struct("<8sIQ")


def save_checkpoint(params, path, extra=None):
    tensors = _all_tensors(params)
    meta = {
        "architecture": params.architecture,
        "pool": params.pool,
        "N": params.N,
        "H": params.H,
        "C": params.C,
        "seed": params.seed,
        "bn_momentum": params.bn.momentum,
        "bn_eps": params.bn.eps,
        "tensors": [[name, list(arr.shape)] for name, arr in tensors.items()],
    }
    if extra:
        meta["extra"] = extra
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CKPT_HEADER.pack(CKPT_MAGIC, CKPT_VERSION, len(blob)))
        fh.write(blob)
        for arr in tensors.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Return ``(params, meta)``."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _CKPT_HEADER.size:
        raise SizeError(f"{path}: too short for a checkpoint")
    magic, version, n = _CKPT_HEADER.unpack_from(data)
    if magic != CKPT_MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic {magic!r}")
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    start = _CKPT_HEADER.size
    meta = json.loads(data[start:start + n].decode("utf-8"))
    offset = start + n
    tensors = {}
    for name, shape in meta["tensors"]:
        count = int(np.prod(shape, dtype=np.int64))
        end = offset + 8 * count
        if end > len(data):
            raise SizeError(f"{path}: truncated at tensor {name}")
        tensors[name] = np.frombuffer(data[offset:end], dtype="<f8").astype(np.float64).reshape(shape)
        offset = end
    if offset != len(data):
        raise SizeError(f"{path}: {len(data) - offset} trailing bytes")
    bn = BatchNormState(
        tensors["bn.gamma"], tensors["bn.beta"], tensors["bn.running_mean"], tensors["bn.running_var"],
        meta["bn_momentum"], meta["bn_eps"],
    )
    params = ModelParams(
        meta["architecture"], meta["pool"],
        tensors["W0"], tensors["b0"], tensors["Wa"], tensors["ba"],
        tensors["W1"], tensors["b1"], tensors["W2"], tensors["b2"],
        bn, tensors.get("W0_mlp"), meta.get("seed"),
    )
    return params, meta


def describe_params(params):
    """Shapes and norms of every tensor as a JSON document."""
    doc = {
        "architecture": params.architecture,
        "pool": params.pool,
        "N": params.N,
        "H": params.H,
        "C": params.C,
        "seed": params.seed,
        "tensors": {
            name: {
                "shape": list(arr.shape),
                "l2_norm": float(np.linalg.norm(arr)),
                "max_abs": float(np.max(np.abs(arr))) if arr.size else 0.0,
            }
            for name, arr in _all_tensors(params).items()
        },
    }
    return json.dumps(doc, indent=2, sort_keys=True)
