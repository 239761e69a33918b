"""A small 1D CNN binary classifier implemented directly on numpy.

Architecture: two valid-mode convolutions, each followed by batch
normalization and ReLU, dropout, global average pooling over time, a hidden
linear layer with ReLU, dropout, and a final linear layer to a sigmoid
score. The global pooling makes the dense head independent of the input
window length.

Everything (forward, backward, Adam) is in this file; there is no ML
framework underneath. Internally activations are kept in channel-minor
``(batch, length, channels)`` layout so the convolutions reduce to one
im2col copy plus one SGEMM, which is what keeps W=7500 windows tractable
on a laptop CPU.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import as_strided, sliding_window_view

from .dataset import DatasetSplit, SplitClassMissing

BN_EPS = 1e-5
BN_MOMENTUM = 0.1  # fraction of the batch statistic folded into running stats
PROB_CLAMP = 1e-7  # keeps log() and downstream ratios finite

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

MODEL_MAGIC = b"NSTKMDL1"
_MODEL_VERSION = 1


class InputNotFinite(ValueError):
    """Classifier input contained NaN or Inf."""


class TrainingDiverged(RuntimeError):
    """Loss became non-finite during optimization."""


class ModelFormatError(ValueError):
    """Model file is corrupt, truncated, or shape-inconsistent."""


@dataclass(frozen=True)
class ArchConfig:
    conv1_filters: int = 16
    conv2_filters: int = 32
    kernel_size: int = 7
    dropout_p1: float = 0.3
    dropout_p2: float = 0.3
    hidden_units: int = 32

    def __post_init__(self):
        if min(self.conv1_filters, self.conv2_filters, self.hidden_units) < 1:
            raise ValueError("filter and hidden unit counts must be positive")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be a positive odd integer")
        for p in (self.dropout_p1, self.dropout_p2):
            if not 0.0 <= p < 1.0:
                raise ValueError("dropout probabilities must be in [0, 1)")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    learning_rate: float = 1e-3
    max_epochs: int = 100
    early_stop_patience: int = 5
    rng_seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.early_stop_patience < 1:
            raise ValueError("early_stop_patience must be at least 1")


# Trainable arrays in a fixed order (Adam state and the file format rely on it).
PARAM_FIELDS = (
    "conv1_w", "conv1_b", "bn1_gamma", "bn1_beta",
    "conv2_w", "conv2_b", "bn2_gamma", "bn2_beta",
    "dense1_w", "dense1_b", "dense2_w", "dense2_b",
)
RUNNING_FIELDS = ("bn1_mean", "bn1_var", "bn2_mean", "bn2_var")


@dataclass
class CnnParams:
    """All weights, biases, and batch-norm state of one classifier."""

    arch: ArchConfig
    window_samples: int
    arrays: dict[str, np.ndarray]

    def __getattr__(self, name):
        try:
            return self.arrays[name]
        except KeyError:
            raise AttributeError(name) from None

    @property
    def dtype(self):
        return self.arrays["conv1_w"].dtype

    def copy(self) -> "CnnParams":
        return CnnParams(
            arch=self.arch,
            window_samples=self.window_samples,
            arrays={k: v.copy() for k, v in self.arrays.items()},
        )

    def n_parameters(self) -> int:
        """Trainable parameter count (running statistics excluded)."""
        return sum(int(self.arrays[k].size) for k in PARAM_FIELDS)


def _expected_shapes(arch: ArchConfig) -> dict[str, tuple[int, ...]]:
    k, c1, c2, h = arch.kernel_size, arch.conv1_filters, arch.conv2_filters, arch.hidden_units
    return {
        "conv1_w": (k, c1), "conv1_b": (c1,),
        "bn1_gamma": (c1,), "bn1_beta": (c1,), "bn1_mean": (c1,), "bn1_var": (c1,),
        "conv2_w": (k, c1, c2), "conv2_b": (c2,),
        "bn2_gamma": (c2,), "bn2_beta": (c2,), "bn2_mean": (c2,), "bn2_var": (c2,),
        "dense1_w": (c2, h), "dense1_b": (h,),
        "dense2_w": (h, 1), "dense2_b": (1,),
    }


def init_params(
    arch: ArchConfig,
    window_samples: int,
    seed: int = 0,
    *,
    dtype=np.float32,
    zero: bool = False,
) -> CnnParams:
    """Fan-in-scaled uniform initialization, deterministic per seed.

    ``zero=True`` is a test hook: all weights and biases zero, so the
    forward pass emits sigmoid(0) = 0.5 for any input.
    """
    k = arch.kernel_size
    if 2 * (k - 1) >= window_samples:
        raise ValueError(
            f"kernel_size {k} too large for window of {window_samples} samples"
        )
    rng = np.random.default_rng(seed)
    shapes = _expected_shapes(arch)
    arrays: dict[str, np.ndarray] = {}

    def uniform(name, fan_in):
        limit = 1.0 / np.sqrt(fan_in)
        if zero:
            arrays[name] = np.zeros(shapes[name], dtype=dtype)
        else:
            arrays[name] = rng.uniform(-limit, limit, size=shapes[name]).astype(dtype)

    uniform("conv1_w", k)
    uniform("conv2_w", k * arch.conv1_filters)
    uniform("dense1_w", arch.conv2_filters)
    uniform("dense2_w", arch.hidden_units)
    for name, shape in shapes.items():
        if name in arrays:
            continue
        if name.endswith("_gamma") or name.endswith("_var"):
            arrays[name] = np.ones(shape, dtype=dtype)
        else:
            arrays[name] = np.zeros(shape, dtype=dtype)
    return CnnParams(arch=arch, window_samples=window_samples, arrays=arrays)


# ---------------------------------------------------------------------------
# Forward / backward cores (channel-minor layout)
# ---------------------------------------------------------------------------


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _im2col_1d(x: np.ndarray, k: int) -> np.ndarray:
    """(B, W) -> (B*L, k) patch matrix, L = W - k + 1."""
    v = sliding_window_view(x, k, axis=1)
    return v.reshape(-1, k)


def _im2col_cm(h: np.ndarray, k: int) -> np.ndarray:
    """(B, L, C) -> (B*Lo, k*C) patch matrix with contiguous patch rows."""
    b, l, c = h.shape
    lo = l - k + 1
    s0, s1, s2 = h.strides
    v = as_strided(h, shape=(b, lo, k, c), strides=(s0, s1, s1, s2))
    return v.reshape(b * lo, k * c)


def _bn_forward_train(a, gamma, beta):
    mu = a.mean(axis=(0, 1))
    var = a.var(axis=(0, 1))
    inv = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (a - mu) * inv
    return gamma * xhat + beta, xhat, inv, mu, var


def _forward_batch(params: CnnParams, x: np.ndarray, mode: str,
                   rng: np.random.Generator | None = None,
                   update_running: bool = False,
                   want_cache: bool = False):
    """Batched forward pass. ``x`` is (B, W) in the params dtype.

    Returns (logits, cache). ``mode`` is "train" (batch-norm batch
    statistics, dropout active) or "infer" (running statistics, no
    dropout). Running statistics only move when ``update_running`` is set,
    so loss probes never mutate the model.
    """
    arch = params.arch
    k = arch.kernel_size
    A = params.arrays
    b, w = x.shape
    l1 = w - k + 1
    train = mode == "train"
    cache: dict = {}

    xc = _im2col_1d(x, k)
    a1 = (xc @ A["conv1_w"]).reshape(b, l1, arch.conv1_filters)
    a1 += A["conv1_b"]

    if train:
        h1, xhat1, inv1, mu1, var1 = _bn_forward_train(a1, A["bn1_gamma"], A["bn1_beta"])
        if update_running:
            _update_running(A, "bn1", mu1, var1)
        if want_cache:
            cache.update(xc=xc, xhat1=xhat1, inv1=inv1, mask_r1=h1 > 0)
    else:
        scale = (A["bn1_gamma"] / np.sqrt(A["bn1_var"] + BN_EPS)).astype(params.dtype)
        shift = (A["bn1_beta"] - A["bn1_mean"] * scale).astype(params.dtype)
        a1 *= scale
        a1 += shift
        h1 = a1
    np.maximum(h1, 0, out=h1)

    p2 = _im2col_cm(np.ascontiguousarray(h1), k)
    l2 = l1 - k + 1
    a2 = (p2 @ A["conv2_w"].reshape(k * arch.conv1_filters, arch.conv2_filters))
    a2 = a2.reshape(b, l2, arch.conv2_filters)
    a2 += A["conv2_b"]

    if train:
        h2, xhat2, inv2, mu2, var2 = _bn_forward_train(a2, A["bn2_gamma"], A["bn2_beta"])
        if update_running:
            _update_running(A, "bn2", mu2, var2)
        if want_cache:
            mask_r2 = h2 > 0
    else:
        scale = (A["bn2_gamma"] / np.sqrt(A["bn2_var"] + BN_EPS)).astype(params.dtype)
        shift = (A["bn2_beta"] - A["bn2_mean"] * scale).astype(params.dtype)
        a2 *= scale
        a2 += shift
        h2 = a2
    np.maximum(h2, 0, out=h2)

    if train and arch.dropout_p1 > 0:
        if rng is None:
            rng = np.random.default_rng(0)
        keep = (rng.random(h2.shape, dtype=np.float32) >= arch.dropout_p1)
        drop1 = keep.astype(params.dtype) / (1.0 - arch.dropout_p1)
        h2 = h2 * drop1
    else:
        drop1 = None

    pooled = h2.mean(axis=1)
    d1 = pooled @ A["dense1_w"] + A["dense1_b"]
    mask_rd = d1 > 0
    r = np.maximum(d1, 0)

    if train and arch.dropout_p2 > 0:
        if rng is None:
            rng = np.random.default_rng(0)
        keep = (rng.random(r.shape, dtype=np.float32) >= arch.dropout_p2)
        drop2 = keep.astype(params.dtype) / (1.0 - arch.dropout_p2)
        rd = r * drop2
    else:
        drop2 = None
        rd = r

    z = (rd @ A["dense2_w"] + A["dense2_b"]).reshape(-1)

    if train and want_cache:
        cache.update(
            p2=p2, xhat2=xhat2, inv2=inv2, mask_r2=mask_r2, drop1=drop1,
            pooled=pooled, mask_rd=mask_rd, rd=rd, drop2=drop2, l1=l1, l2=l2,
        )
    return z, cache


def _update_running(arrays, prefix, mu, var):
    dtype = arrays[f"{prefix}_mean"].dtype
    arrays[f"{prefix}_mean"] *= 1.0 - BN_MOMENTUM
    arrays[f"{prefix}_mean"] += (BN_MOMENTUM * mu).astype(dtype)
    arrays[f"{prefix}_var"] *= 1.0 - BN_MOMENTUM
    arrays[f"{prefix}_var"] += (BN_MOMENTUM * var).astype(dtype)


def _bn_backward(dh, xhat, inv, gamma):
    """Gradient through train-mode batch norm (statistics over axes 0, 1)."""
    dgamma = (dh * xhat).sum(axis=(0, 1))
    dbeta = dh.sum(axis=(0, 1))
    n = dh.shape[0] * dh.shape[1]
    da = (gamma * inv) * (dh - dbeta / n - xhat * (dgamma / n))
    return da, dgamma, dbeta


def _backward_batch(params: CnnParams, x, y, z, cache) -> dict[str, np.ndarray]:
    """Gradients of the mean binary cross-entropy over a batch."""
    arch = params.arch
    k = arch.kernel_size
    A = params.arrays
    b = x.shape[0]
    l1, l2 = cache["l1"], cache["l2"]

    dz = ((_sigmoid(z) - y.astype(np.float64)) / b).astype(params.dtype)[:, None]

    grads: dict[str, np.ndarray] = {}
    grads["dense2_w"] = cache["rd"].T @ dz
    grads["dense2_b"] = dz.sum(axis=0)
    dr = dz @ A["dense2_w"].T
    if cache["drop2"] is not None:
        dr = dr * cache["drop2"]
    dr *= cache["mask_rd"]
    grads["dense1_w"] = cache["pooled"].T @ dr
    grads["dense1_b"] = dr.sum(axis=0)
    dpool = dr @ A["dense1_w"].T

    dh2 = np.broadcast_to(dpool[:, None, :] / l2, (b, l2, arch.conv2_filters)).copy()
    if cache["drop1"] is not None:
        dh2 *= cache["drop1"]
    dh2 *= cache["mask_r2"]
    da2, grads["bn2_gamma"], grads["bn2_beta"] = _bn_backward(
        dh2, cache["xhat2"], cache["inv2"], A["bn2_gamma"]
    )

    da2f = da2.reshape(b * l2, arch.conv2_filters).astype(params.dtype)
    grads["conv2_b"] = da2f.sum(axis=0)
    grads["conv2_w"] = (cache["p2"].T @ da2f).reshape(
        k, arch.conv1_filters, arch.conv2_filters
    )
    dp2 = (da2f @ A["conv2_w"].reshape(-1, arch.conv2_filters).T).reshape(
        b, l2, k, arch.conv1_filters
    )
    dh1 = np.zeros((b, l1, arch.conv1_filters), dtype=params.dtype)
    for j in range(k):
        dh1[:, j : j + l2, :] += dp2[:, :, j, :]

    dh1 *= cache["mask_r1"]
    da1, grads["bn1_gamma"], grads["bn1_beta"] = _bn_backward(
        dh1, cache["xhat1"], cache["inv1"], A["bn1_gamma"]
    )
    da1f = da1.reshape(b * l1, arch.conv1_filters).astype(params.dtype)
    grads["conv1_b"] = da1f.sum(axis=0)
    grads["conv1_w"] = cache["xc"].T @ da1f
    return {name: grads[name].astype(params.dtype) for name in PARAM_FIELDS}


def _validate_input(x: np.ndarray, window_samples: int):
    if x.shape[-1] != window_samples:
        raise ValueError(
            f"input length {x.shape[-1]} does not match model window "
            f"{window_samples}"
        )
    if not np.isfinite(x).all():
        raise InputNotFinite("classifier input contains NaN or Inf")


def forward(
    params: CnnParams,
    x: np.ndarray,
    mode: str = "infer",
    *,
    rng: np.random.Generator | None = None,
) -> float:
    """Score one window. Output is clamped into (0, 1)."""
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    x = np.asarray(x, dtype=params.dtype).reshape(1, -1)
    _validate_input(x, params.window_samples)
    z, _ = _forward_batch(params, x, mode, rng=rng)
    p = _sigmoid(z)[0]
    return float(np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP))


def predict_batch(
    params: CnnParams, windows: Sequence[np.ndarray] | np.ndarray,
    *, batch_size: int = 256,
) -> np.ndarray:
    """Vectorized infer-mode scoring; output order matches input order."""
    x = np.asarray(windows, dtype=params.dtype)
    if x.ndim == 1:
        x = x[None, :]
    _validate_input(x, params.window_samples)
    probs = np.empty(x.shape[0], dtype=np.float64)
    for lo in range(0, x.shape[0], batch_size):
        hi = min(lo + batch_size, x.shape[0])
        z, _ = _forward_batch(params, x[lo:hi], "infer")
        probs[lo:hi] = _sigmoid(z)
    return np.clip(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)


def loss(probabilities: np.ndarray, labels: np.ndarray) -> float:
    """Mean binary cross-entropy with probabilities clamped at 1e-7."""
    p = np.asarray(probabilities, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.shape != y.shape:
        raise ValueError(f"length mismatch: {p.shape} probabilities vs {y.shape} labels")
    p = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


def batch_loss(
    params: CnnParams,
    x: np.ndarray,
    y: np.ndarray,
    mode: str = "train",
    *,
    rng: np.random.Generator | None = None,
) -> float:
    """Loss of one batch straight from logits (numerically exact pair to the
    analytic gradient; finite-difference checks probe this function)."""
    x = np.asarray(x, dtype=params.dtype)
    _validate_input(x, params.window_samples)
    z, _ = _forward_batch(params, x, mode, rng=rng)
    zf = z.astype(np.float64)
    yf = np.asarray(y, dtype=np.float64)
    softplus = np.maximum(zf, 0) + np.log1p(np.exp(-np.abs(zf)))
    return float(np.mean(softplus - zf * yf))


def batch_gradients(
    params: CnnParams, x: np.ndarray, y: np.ndarray
) -> tuple[float, dict[str, np.ndarray]]:
    """Loss and analytic gradients for one batch (no dropout, no parameter
    update). Exposed for gradient verification."""
    x = np.asarray(x, dtype=params.dtype)
    _validate_input(x, params.window_samples)
    z, cache = _forward_batch(params, x, "train", want_cache=True)
    zf = z.astype(np.float64)
    yf = np.asarray(y, dtype=np.float64)
    softplus = np.maximum(zf, 0) + np.log1p(np.exp(-np.abs(zf)))
    value = float(np.mean(softplus - zf * yf))
    grads = _backward_batch(params, x, np.asarray(y), z, cache)
    return value, grads


@dataclass
class AdamState:
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def backward_and_step(
    params: CnnParams,
    x: np.ndarray,
    y: np.ndarray,
    config: TrainConfig,
    *,
    state: AdamState | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[float, AdamState]:
    """One forward/backward pass and one Adam update, in place.

    Returns the batch loss (computed before the update) and the optimizer
    state to thread into the next call.
    """
    x = np.asarray(x, dtype=params.dtype)
    y = np.asarray(y)
    if x.shape[0] == 0:
        raise ValueError("batch must be non-empty")
    _validate_input(x, params.window_samples)
    if state is None:
        state = AdamState()

    z, cache = _forward_batch(params, x, "train", rng=rng, update_running=True,
                              want_cache=True)
    zf = z.astype(np.float64)
    yf = y.astype(np.float64)
    softplus = np.maximum(zf, 0) + np.log1p(np.exp(-np.abs(zf)))
    value = float(np.mean(softplus - zf * yf))
    if not np.isfinite(value):
        raise TrainingDiverged(f"batch loss is {value}")

    grads = _backward_batch(params, x, y, z, cache)
    state.t += 1
    bc1 = 1.0 - ADAM_BETA1 ** state.t
    bc2 = 1.0 - ADAM_BETA2 ** state.t
    for name in PARAM_FIELDS:
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        m = state.m[name]
        v = state.v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * np.square(g)
        step = config.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
        params.arrays[name] -= step.astype(params.dtype)
    return value, state


def ranking_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Area under the ROC curve via the rank statistic (ties averaged).
    Returns NaN when either class is absent."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int(labels.sum())
    n_neg = labels.shape[0] - n_pos
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(scores.shape[0], dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(sorted_scores):
        j = i
        while j + 1 < len(sorted_scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    pos_ranks = ranks[labels == 1].sum()
    return float((pos_ranks - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


@dataclass
class TrainingHistory:
    epochs: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_auc: list[float] = field(default_factory=list)
    best_epoch: int = 0


def save_history_csv(history: TrainingHistory, path: str | Path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss", "val_auc"])
        for row in zip(history.epochs, history.train_loss, history.val_loss,
                       history.val_auc):
            writer.writerow(row)


def _stack_windows(group) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([w.x for w in group])
    y = np.array([w.y for w in group], dtype=np.int8)
    return x, y


def train(
    splits: DatasetSplit,
    arch: ArchConfig,
    config: TrainConfig,
    *,
    dtype=np.float32,
    verbose: bool = False,
) -> tuple[CnnParams, TrainingHistory]:
    """Mini-batch Adam with early stopping on validation loss.

    Returns the parameters from the epoch with the lowest validation loss
    and the per-epoch history. Stops once the validation loss has not
    improved for ``early_stop_patience`` consecutive epochs.
    """
    if not splits.train or not splits.val:
        raise ValueError("train and val splits must be non-empty")
    train_y = {w.y for w in splits.train}
    if train_y != {0, 1}:
        raise SplitClassMissing("training split must contain both classes")

    window_samples = splits.train[0].window_size_samples
    x_train, y_train = _stack_windows(splits.train)
    x_val, y_val = _stack_windows(splits.val)
    x_train = x_train.astype(dtype)
    x_val = x_val.astype(dtype)

    ss = np.random.SeedSequence(config.rng_seed)
    init_seed, shuffle_seed, dropout_seed = ss.spawn(3)
    params = init_params(arch, window_samples, seed=init_seed, dtype=dtype)
    shuffle_rng = np.random.default_rng(shuffle_seed)
    dropout_rng = np.random.default_rng(dropout_seed)

    history = TrainingHistory()
    state = AdamState()
    best_val = np.inf
    best_params = params.copy()
    wait = 0
    n = x_train.shape[0]

    for epoch in range(1, config.max_epochs + 1):
        order = shuffle_rng.permutation(n)
        losses = []
        for lo in range(0, n, config.batch_size):
            idx = order[lo : lo + config.batch_size]
            value, state = backward_and_step(
                params, x_train[idx], y_train[idx], config,
                state=state, rng=dropout_rng,
            )
            losses.append(value)
        val_probs = predict_batch(params, x_val)
        val_loss = loss(val_probs, y_val)
        if not np.isfinite(val_loss):
            raise TrainingDiverged(f"validation loss is {val_loss}")
        history.epochs.append(epoch)
        history.train_loss.append(float(np.mean(losses)))
        history.val_loss.append(val_loss)
        history.val_auc.append(ranking_auc(val_probs, y_val))
        if verbose:
            print(
                f"epoch {epoch:3d}  train {history.train_loss[-1]:.4f}  "
                f"val {val_loss:.4f}  auc {history.val_auc[-1]:.4f}"
            )
        if val_loss < best_val:
            best_val = val_loss
            best_params = params.copy()
            history.best_epoch = epoch
            wait = 0
        else:
            wait += 1
            if wait >= config.early_stop_patience:
                break
    return best_params, history


@dataclass
class TuneResult:
    params: CnnParams
    arch: ArchConfig
    config: TrainConfig
    history: TrainingHistory
    table: list[dict]


def tune(
    splits: DatasetSplit,
    config: TrainConfig,
    *,
    filters: Sequence[int] = (8, 16, 32),
    learning_rates: Sequence[float] = (1e-3, 3e-4),
    dtype=np.float32,
) -> TuneResult:
    """Small explicit grid over filter counts and learning rates, selected
    by best validation AUC (validation loss breaks ties)."""
    best = None
    table = []
    for f in filters:
        for lr in learning_rates:
            arch = ArchConfig(conv1_filters=f, conv2_filters=2 * f)
            cfg = TrainConfig(
                batch_size=config.batch_size,
                learning_rate=lr,
                max_epochs=config.max_epochs,
                early_stop_patience=config.early_stop_patience,
                rng_seed=config.rng_seed,
            )
            params, history = train(splits, arch, cfg, dtype=dtype)
            i = history.best_epoch - 1
            row = {
                "filters": f,
                "learning_rate": lr,
                "val_auc": history.val_auc[i],
                "val_loss": history.val_loss[i],
            }
            table.append(row)
            key = (-row["val_auc"], row["val_loss"])
            if best is None or key < best[0]:
                best = (key, TuneResult(params, arch, cfg, history, table))
    result = best[1]
    result.table = table
    return result


# ---------------------------------------------------------------------------
# Model file format
# ---------------------------------------------------------------------------


def save_model(params: CnnParams, path: str | Path):
    """Versioned header, architecture fields, named shapes, then
    little-endian float32 array data."""
    arch = params.arch
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<H", _MODEL_VERSION))
        fh.write(
            struct.pack(
                "<IIIIffI",
                arch.conv1_filters, arch.conv2_filters, arch.kernel_size,
                arch.hidden_units, arch.dropout_p1, arch.dropout_p2,
                params.window_samples,
            )
        )
        names = PARAM_FIELDS + RUNNING_FIELDS
        fh.write(struct.pack("<H", len(names)))
        for name in names:
            arr = params.arrays[name]
            nb = name.encode("ascii")
            fh.write(struct.pack("<B", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        for name in names:
            fh.write(np.ascontiguousarray(params.arrays[name], dtype="<f4").tobytes())


def load_model(path: str | Path) -> CnnParams:
    def read(fh, n):
        data = fh.read(n)
        if len(data) != n:
            raise ModelFormatError(f"{path}: truncated model file")
        return data

    with open(path, "rb") as fh:
        if read(fh, len(MODEL_MAGIC)) != MODEL_MAGIC:
            raise ModelFormatError(f"{path}: bad magic, not a needlestack model")
        (version,) = struct.unpack("<H", read(fh, 2))
        if version != _MODEL_VERSION:
            raise ModelFormatError(f"{path}: unsupported model version {version}")
        c1, c2, k, hidden, p1, p2, window = struct.unpack("<IIIIffI", read(fh, 28))
        arch = ArchConfig(
            conv1_filters=c1, conv2_filters=c2, kernel_size=k,
            dropout_p1=float(p1), dropout_p2=float(p2), hidden_units=hidden,
        )
        expected = _expected_shapes(arch)
        (n_arrays,) = struct.unpack("<H", read(fh, 2))
        shapes: list[tuple[str, tuple[int, ...]]] = []
        for _ in range(n_arrays):
            (name_len,) = struct.unpack("<B", read(fh, 1))
            name = read(fh, name_len).decode("ascii")
            (ndim,) = struct.unpack("<B", read(fh, 1))
            shape = struct.unpack(f"<{ndim}I", read(fh, 4 * ndim))
            if name not in expected:
                raise ModelFormatError(f"{path}: unknown array {name!r}")
            if tuple(shape) != expected[name]:
                raise ModelFormatError(
                    f"{path}: array {name!r} has shape {shape}, expected "
                    f"{expected[name]} for the declared architecture"
                )
            shapes.append((name, tuple(shape)))
        if {n for n, _ in shapes} != set(expected):
            raise ModelFormatError(f"{path}: missing arrays")
        arrays = {}
        for name, shape in shapes:
            count = int(np.prod(shape)) if shape else 1
            data = read(fh, 4 * count)
            arrays[name] = np.frombuffer(data, dtype="<f4").reshape(shape).astype(
                np.float32
            )
    return CnnParams(arch=arch, window_samples=int(window), arrays=arrays)
