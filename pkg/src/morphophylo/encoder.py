"""Small metric-learning encoder: 402 -> 150 -> 150 -> 128 MLP.

Each hidden layer is affine -> batch norm -> ReLU; the last layer is affine
only. Everything is float64 numpy with hand-written backpropagation, and the
whole training run is deterministic for a given seed.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, InputError, NumericError

log = logging.getLogger(__name__)

DEFAULT_DIMS = (402, 150, 150, 128)
BN_EPS = 1e-5
BN_MOMENTUM = 0.1
MINING_MODES = ("batch-hard", "random")


@dataclass
class EncoderParams:
    dims: tuple[int, ...]
    weights: dict[str, np.ndarray]
    running: dict[str, np.ndarray]
    input_mean: np.ndarray | None = None
    input_std: np.ndarray | None = None
    normalize_output: bool = False

    @property
    def n_layers(self) -> int:
        return len(self.dims) - 1

    def copy(self) -> EncoderParams:
        return EncoderParams(
            self.dims,
            {k: v.copy() for k, v in self.weights.items()},
            {k: v.copy() for k, v in self.running.items()},
            None if self.input_mean is None else self.input_mean.copy(),
            None if self.input_std is None else self.input_std.copy(),
            self.normalize_output,
        )


def init_encoder(seed: int, dims=DEFAULT_DIMS) -> EncoderParams:
    """He-uniform weights, zero biases, identity batch norm."""
    dims = tuple(int(d) for d in dims)
    rng = np.random.default_rng(seed)
    weights, running = {}, {}
    for layer in range(1, len(dims)):
        fan_in, fan_out = dims[layer - 1], dims[layer]
        bound = math.sqrt(6.0 / fan_in)
        weights[f"W{layer}"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        weights[f"b{layer}"] = np.zeros(fan_out)
        if layer < len(dims) - 1:
            weights[f"gamma{layer}"] = np.ones(fan_out)
            weights[f"beta{layer}"] = np.zeros(fan_out)
            running[f"mean{layer}"] = np.zeros(fan_out)
            running[f"var{layer}"] = np.ones(fan_out)
    return EncoderParams(dims, weights, running)


def param_count(p: EncoderParams) -> int:
    """Trainable parameters only; batch-norm running statistics are excluded."""
    return int(sum(v.size for v in p.weights.values()))


def forward(p: EncoderParams, x, mode: str = "train", update_running: bool = True):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != p.dims[0]:
        raise ContractError(f"expected a batch of shape (n, {p.dims[0]}), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite values in encoder input")
    if mode not in ("train", "eval"):
        raise ContractError(f"unknown mode {mode!r}")
    n = x.shape[0]
    if mode == "train" and n < 2:
        raise ContractError("train-mode batch norm needs at least 2 rows")

    w = p.weights
    cache = {"x": x, "mode": mode, "layers": []}
    a = x
    for layer in range(1, p.n_layers + 1):
        h = a @ w[f"W{layer}"]
        if f"b{layer}" in w:
            h = h + w[f"b{layer}"]
        entry = {"a_prev": a}
        if layer == p.n_layers:
            cache["layers"].append(entry)
            a = h
            break
        if mode == "train":
            mu = h.mean(axis=0)
            var = h.var(axis=0)
            if update_running:
                rm, rv = p.running[f"mean{layer}"], p.running[f"var{layer}"]
                rm *= 1 - BN_MOMENTUM
                rm += BN_MOMENTUM * mu
                rv *= 1 - BN_MOMENTUM
                rv += BN_MOMENTUM * var * n / (n - 1)
        else:
            mu = p.running[f"mean{layer}"]
            var = p.running[f"var{layer}"]
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (h - mu) * inv_std
        y = xhat
        if f"gamma{layer}" in w:
            y = y * w[f"gamma{layer}"]
        if f"beta{layer}" in w:
            y = y + w[f"beta{layer}"]
        active = y > 0
        entry.update(xhat=xhat, inv_std=inv_std, active=active)
        cache["layers"].append(entry)
        a = np.where(active, y, 0.0)
    return a, cache


def backward(p: EncoderParams, cache, grad_out, return_input_grad: bool = False):
    """Exact gradients of a scalar loss given d(loss)/d(output)."""
    layers = cache["layers"]
    g = np.asarray(grad_out, dtype=np.float64)
    expected = (cache["x"].shape[0], p.dims[-1])
    if g.shape != expected:
        raise ContractError(f"gradient shape {g.shape} does not match output {expected}")
    if cache["mode"] != "train":
        raise ContractError("backward needs a train-mode cache")
    w = p.weights
    grads = {}
    for layer in range(p.n_layers, 0, -1):
        entry = layers[layer - 1]
        if layer < p.n_layers:
            g = g * entry["active"]
            xhat = entry["xhat"]
            if f"beta{layer}" in w:
                grads[f"beta{layer}"] = g.sum(axis=0)
            if f"gamma{layer}" in w:
                grads[f"gamma{layer}"] = (g * xhat).sum(axis=0)
                g = g * w[f"gamma{layer}"]
            n = g.shape[0]
            # batch-norm backward through the batch mean and variance
            g = entry["inv_std"] / n * (n * g - g.sum(axis=0) - xhat * (g * xhat).sum(axis=0))
        a_prev = entry["a_prev"]
        grads[f"W{layer}"] = a_prev.T @ g
        if f"b{layer}" in w:
            grads[f"b{layer}"] = g.sum(axis=0)
        g = g @ w[f"W{layer}"].T
    if return_input_grad:
        return grads, g
    return grads


def l2_normalize(e):
    return e / np.linalg.norm(e, axis=1, keepdims=True)


def l2_normalize_backward(e, grad):
    norm = np.linalg.norm(e, axis=1, keepdims=True)
    u = e / norm
    return (grad - u * (u * grad).sum(axis=1, keepdims=True)) / norm


def valid_anchors(labels) -> np.ndarray:
    labels = np.asarray(labels)
    same = labels[:, None] == labels[None, :]
    np.fill_diagonal(same, False)
    diff = labels[:, None] != labels[None, :]
    return same.any(axis=1) & diff.any(axis=1)


def triplet_loss(embeddings, labels, margin: float = 0.2, mining: str = "batch-hard", rng=None):
    """Mean hinge max(0, d(a,p) - d(a,n) + margin) over valid anchors.

    Returns the loss and its gradient with respect to the embeddings. An
    anchor is valid when the batch holds at least one positive and one
    negative for it; a batch without valid anchors gives zero loss.
    """
    e = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    if mining not in MINING_MODES:
        raise ContractError(f"unknown mining mode {mining!r}")
    n = e.shape[0]
    diff = e[:, None, :] - e[None, :, :]
    dist = np.sqrt((diff ** 2).sum(axis=2))
    same = labels[:, None] == labels[None, :]
    pos_mask = same.copy()
    np.fill_diagonal(pos_mask, False)
    neg_mask = ~same
    valid = pos_mask.any(axis=1) & neg_mask.any(axis=1)
    grad = np.zeros_like(e)
    n_valid = int(valid.sum())
    if n_valid == 0:
        return 0.0, grad
    if mining == "random" and rng is None:
        raise ContractError("random mining needs an rng")

    total = 0.0
    for a in np.flatnonzero(valid):
        pos = np.flatnonzero(pos_mask[a])
        neg = np.flatnonzero(neg_mask[a])
        if mining == "batch-hard":
            p = pos[np.argmax(dist[a, pos])]
            q = neg[np.argmin(dist[a, neg])]
        else:
            p = pos[rng.integers(len(pos))]
            q = neg[rng.integers(len(neg))]
        hinge = dist[a, p] - dist[a, q] + margin
        if hinge <= 0:
            continue
        total += hinge
        if dist[a, p] > 0:
            u = diff[a, p] / dist[a, p]
            grad[a] += u / n_valid
            grad[p] -= u / n_valid
        if dist[a, q] > 0:
            u = diff[a, q] / dist[a, q]
            grad[a] -= u / n_valid
            grad[q] += u / n_valid
    return total / n_valid, grad


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def optimizer_step(p: EncoderParams, grads: dict, state: AdamState, lr: float) -> bool:
    """One bias-corrected Adam update in place. Returns False if the step was aborted."""
    for key, g in grads.items():
        if not np.all(np.isfinite(g)):
            log.warning("non-finite gradient in %s; optimizer step aborted", key)
            return False
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1 ** state.t
    c2 = 1 - b2 ** state.t
    for key, g in grads.items():
        m = state.m.setdefault(key, np.zeros_like(g))
        v = state.v.setdefault(key, np.zeros_like(g))
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p.weights[key] -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return True


@dataclass
class TrainConfig:
    epochs: int = 50
    mini_batch: int = 8
    accumulation_steps: int = 14
    margin: float = 0.2
    learning_rate: float = 1e-4
    seed: int = 0
    mining: str = "batch-hard"
    per_class: int = 2
    normalize_embeddings: bool = False
    standardize: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ContractError("epochs must be >= 1")
        if self.margin <= 0:
            raise ContractError("margin must be > 0")
        if self.learning_rate <= 0:
            raise ContractError("learning_rate must be > 0")
        if self.accumulation_steps < 1:
            raise ContractError("accumulation_steps must be >= 1")
        if self.per_class < 2 or self.mini_batch % self.per_class or self.mini_batch < 2 * self.per_class:
            raise ContractError("mini_batch must be a multiple of per_class covering >= 2 classes")
        if self.mining not in MINING_MODES:
            raise ContractError(f"mining must be one of {MINING_MODES}")

    @property
    def effective_batch(self) -> int:
        return self.mini_batch * self.accumulation_steps


@dataclass
class TrainHistory:
    epoch_loss: list[float] = field(default_factory=list)
    samples_per_step: int = 0
    steps: int = 0
    skipped_steps: int = 0
    empty_batches: int = 0


class BalancedSampler:
    """Mini-batches of `classes` species x `per_class` distinct specimens."""

    def __init__(self, labels, classes: int, per_class: int, rng):
        labels = np.asarray(labels)
        self.rng = rng
        self.per_class = per_class
        self.groups = [np.flatnonzero(labels == c) for c in sorted(set(labels.tolist()))]
        self.classes = min(classes, len(self.groups))

    def __call__(self) -> np.ndarray:
        picked = self.rng.choice(len(self.groups), size=self.classes, replace=False)
        rows = [self.rng.choice(self.groups[c], size=self.per_class, replace=False) for c in picked]
        return np.concatenate(rows)


def prepare_inputs(p: EncoderParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if p.input_mean is not None:
        x = (x - p.input_mean) / p.input_std
    return x


def _check_dataset(descriptors, labels):
    x = np.asarray(descriptors, dtype=np.float64)
    labels = np.asarray(labels)
    if x.ndim != 2 or len(x) != len(labels):
        raise ContractError("descriptors must be a 2-d array with one label per row")
    species, counts = np.unique(labels, return_counts=True)
    if len(species) < 2:
        raise ContractError("training needs at least 2 species")
    if counts.min() < 2:
        raise ContractError(f"species with fewer than 2 specimens: {species[counts < 2].tolist()}")
    return x, labels


def train(config: TrainConfig, descriptors, labels, dims=None):
    x, labels = _check_dataset(descriptors, labels)
    dims = tuple(dims) if dims is not None else (x.shape[1],) + DEFAULT_DIMS[1:]
    init_seq, sample_seq = np.random.SeedSequence(config.seed).spawn(2)
    p = init_encoder(int(init_seq.generate_state(1)[0]), dims)
    if config.standardize:
        p.input_mean = x.mean(axis=0)
        std = x.std(axis=0)
        p.input_std = np.where(std > 0, std, 1.0)
    p.normalize_output = config.normalize_embeddings
    x = prepare_inputs(p, x)

    rng = np.random.default_rng(sample_seq)
    sampler = BalancedSampler(labels, config.mini_batch // config.per_class, config.per_class, rng)
    state = AdamState()
    history = TrainHistory(samples_per_step=config.effective_batch)
    steps_per_epoch = max(1, math.ceil(len(x) / config.effective_batch))
    log.info("effective batch: %d x %d = %d samples per optimizer step",
             config.mini_batch, config.accumulation_steps, config.effective_batch)

    for epoch in range(config.epochs):
        losses = []
        for _ in range(steps_per_epoch):
            acc = {k: np.zeros_like(v) for k, v in p.weights.items()}
            for _ in range(config.accumulation_steps):
                rows = sampler()
                out, cache = forward(p, x[rows], "train")
                emb = l2_normalize(out) if p.normalize_output else out
                loss, g = triplet_loss(emb, labels[rows], config.margin, config.mining, rng)
                if not valid_anchors(labels[rows]).any():
                    history.empty_batches += 1
                    log.warning("mini-batch without a valid triplet")
                if p.normalize_output:
                    g = l2_normalize_backward(out, g)
                for k, v in backward(p, cache, g).items():
                    acc[k] += v
                losses.append(loss)
            for k in acc:
                acc[k] /= config.accumulation_steps
            if optimizer_step(p, acc, state, config.learning_rate):
                history.steps += 1
            else:
                history.skipped_steps += 1
        history.epoch_loss.append(float(np.mean(losses)))
        log.debug("epoch %d mean loss %.6f", epoch + 1, history.epoch_loss[-1])
    return p, history


@dataclass
class EmbeddingMatrix:
    rows: np.ndarray
    labels: list[str]
    ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        self.labels = [str(s) for s in self.labels]
        if len(self.rows) != len(self.labels):
            raise ContractError("one label per embedding row required")
        if not np.all(np.isfinite(self.rows)):
            raise NumericError("non-finite embedding values")
        if not self.ids:
            self.ids = [str(i) for i in range(len(self.labels))]


def embed(p: EncoderParams, descriptors, labels, ids=None) -> EmbeddingMatrix:
    out, _ = forward(p, prepare_inputs(p, descriptors), "eval")
    if p.normalize_output:
        out = l2_normalize(out)
    return EmbeddingMatrix(out, list(labels), list(ids) if ids is not None else [])


# checkpoint layout: b"DSEQ", u32 version, u32 n_dims, u32 dims..., u32 flags,
# then little-endian f64 arrays; flags bit 0 = input standardization block,
# bit 1 = L2-normalized output
_MAGIC = b"DSEQ"
_VERSION = 1


def _array_order(dims):
    keys = []
    n_layers = len(dims) - 1
    for layer in range(1, n_layers + 1):
        keys += [("w", f"W{layer}"), ("w", f"b{layer}")]
        if layer < n_layers:
            keys += [("w", f"gamma{layer}"), ("w", f"beta{layer}"),
                     ("r", f"mean{layer}"), ("r", f"var{layer}")]
    return keys


def save_checkpoint(p: EncoderParams, path, history: TrainHistory | None = None) -> None:
    flags = (1 if p.input_mean is not None else 0) | (2 if p.normalize_output else 0)
    chunks = [_MAGIC, struct.pack("<II", _VERSION, len(p.dims)),
              struct.pack(f"<{len(p.dims)}I", *p.dims), struct.pack("<I", flags)]
    for kind, key in _array_order(p.dims):
        arr = (p.weights if kind == "w" else p.running)[key]
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    if p.input_mean is not None:
        chunks.append(np.ascontiguousarray(p.input_mean, dtype="<f8").tobytes())
        chunks.append(np.ascontiguousarray(p.input_std, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))
    if history is not None:
        lines = ["epoch,mean_loss"] + [f"{i + 1},{v!r}" for i, v in enumerate(history.epoch_loss)]
        Path(str(path) + ".history.csv").write_text("\n".join(lines) + "\n")


def load_checkpoint(path) -> EncoderParams:
    data = Path(path).read_bytes()
    if data[:4] != _MAGIC:
        raise InputError(f"{path}: not an encoder checkpoint")
    try:
        version, n_dims = struct.unpack_from("<II", data, 4)
        if version != _VERSION:
            raise InputError(f"{path}: unsupported checkpoint version {version}")
        dims = struct.unpack_from(f"<{n_dims}I", data, 12)
        off = 12 + 4 * n_dims
        (flags,) = struct.unpack_from("<I", data, off)
        off += 4
        p = init_encoder(0, dims)

        def take(shape):
            nonlocal off
            count = int(np.prod(shape))
            arr = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(shape)
            off += 8 * count
            return arr.astype(np.float64)

        for kind, key in _array_order(dims):
            target = p.weights if kind == "w" else p.running
            target[key] = take(target[key].shape)
        if flags & 1:
            p.input_mean = take((dims[0],))
            p.input_std = take((dims[0],))
        p.normalize_output = bool(flags & 2)
    except (struct.error, ValueError) as exc:
        raise InputError(f"{path}: truncated checkpoint ({exc})") from None
    if off != len(data):
        raise InputError(f"{path}: trailing bytes in checkpoint")
    return p
