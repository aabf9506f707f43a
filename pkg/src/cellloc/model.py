"""Softmax MLP over grid cells: forward pass, loss, backprop, SGD training and artifacts."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from cellloc.domain import FeatureVector, InvalidInput, LabeledSample, TowerRegistry
from cellloc.grid import VirtualGrid, cells_of

log = logging.getLogger(__name__)

ARTIFACT_VERSION = "cellloc-model/1"
PROB_FLOOR = 1e-12
DEFAULT_RSS_BOUNDS = (-113.0, -40.0)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class NetworkConfig:
    hidden_layers: tuple[int, ...] = (256, 128, 64)
    dropout_rate: float = 0.2
    learning_rate: float = 1e-4
    epochs: int = 500
    batch_size: int = 32
    seed: int = 0
    optimizer: str = "sgd"
    rss_bounds: tuple[float, float] = DEFAULT_RSS_BOUNDS
    prune_empty_cells: bool = False

    def __post_init__(self):
        if any(w < 1 for w in self.hidden_layers):
            raise InvalidInput("hidden layer widths must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise InvalidInput("dropout_rate must lie in [0, 1)")
        if not self.learning_rate > 0:
            raise InvalidInput("learning_rate must be positive")
        if self.epochs < 1:
            raise InvalidInput("epochs must be at least 1")
        if self.batch_size < 1:
            raise InvalidInput("batch_size must be at least 1")
        if self.optimizer not in ("sgd", "adam"):
            raise InvalidInput(f"unknown optimizer {self.optimizer!r}")
        lo, hi = self.rss_bounds
        if not hi > lo:
            raise InvalidInput("rss_bounds must be (min, max) with max > min")


@dataclass
class TrainingTrace:
    epoch_losses: list[float] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.epoch_losses[-1] if self.epoch_losses else float("nan")


# ---------------------------------------------------------------------------
# numerical core


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction; works on 1-d or 2-d input."""
    z = np.asarray(logits, dtype=float)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(p: np.ndarray, l: np.ndarray) -> float:
    p = np.asarray(p, dtype=float)
    l = np.asarray(l, dtype=float)
    if p.shape != l.shape:
        raise InvalidInput(f"shape mismatch {p.shape} vs {l.shape}")
    return float(-np.sum(l * np.log(np.maximum(p, PROB_FLOOR))))


def relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


def normalize_features(
    X: np.ndarray, rss_bounds: tuple[float, float], feature_mask: np.ndarray | None = None
) -> np.ndarray:
    """Min-max scale the RSS half of raw (N, 2M) features; unheard (0) stays 0.

    Readings outside ``rss_bounds`` extrapolate linearly rather than clip.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    m = X.shape[1] // 2
    lo, hi = rss_bounds
    rss = X[:, :m]
    scaled = np.where(rss != 0.0, (rss - lo) / (hi - lo), 0.0)
    out = np.concatenate([scaled, X[:, m:]], axis=1)
    if feature_mask is not None:
        out = out * feature_mask
    return out


@dataclass
class NetworkModel:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    registry: TowerRegistry
    grid: VirtualGrid
    rss_bounds: tuple[float, float] = DEFAULT_RSS_BOUNDS
    dropout_rate: float = 0.0
    feature_mask: np.ndarray | None = None
    # output unit j scores grid cell cell_ids[j]; identity unless empty cells were pruned
    cell_ids: np.ndarray | None = None
    # lat/lon the planar frame is anchored at, if known
    origin: tuple[float, float] | None = None

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise InvalidInput("need one bias per weight matrix")
        d = 2 * len(self.registry)
        for W, b in zip(self.weights, self.biases):
            if W.shape[0] != d or b.shape != (W.shape[1],):
                raise InvalidInput("layer shapes do not chain")
            d = W.shape[1]
        if self.cell_ids is None:
            self.cell_ids = np.arange(self.grid.K)
        self.cell_ids = np.asarray(self.cell_ids, dtype=int)
        if d != len(self.cell_ids):
            raise InvalidInput(f"output width {d} != number of output cells {len(self.cell_ids)}")
        if self.feature_mask is None:
            self.feature_mask = np.ones(2 * len(self.registry))

    @property
    def input_dim(self) -> int:
        return 2 * len(self.registry)

    @property
    def n_parameters(self) -> int:
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def prepare(self, X_raw: np.ndarray) -> np.ndarray:
        X_raw = np.atleast_2d(np.asarray(X_raw, dtype=float))
        if X_raw.shape[1] != self.input_dim:
            raise InvalidInput(f"expected {self.input_dim} features, got {X_raw.shape[1]}")
        return normalize_features(X_raw, self.rss_bounds, self.feature_mask)

    def logits(self, X: np.ndarray) -> np.ndarray:
        """Infer-mode logits for already-normalised input."""
        h = X
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W + b
            if i < last:
                h = relu(h)
        return h

    def predict_proba(self, X_raw: np.ndarray) -> np.ndarray:
        """Distribution over all K grid cells for raw (N, 2M) features."""
        p = softmax(self.logits(self.prepare(X_raw)))
        if len(self.cell_ids) == self.grid.K:
            return p
        full = np.zeros((p.shape[0], self.grid.K))
        full[:, self.cell_ids] = p
        return full

    def copy(self) -> "NetworkModel":
        return NetworkModel(
            [W.copy() for W in self.weights], [b.copy() for b in self.biases],
            self.registry, self.grid, self.rss_bounds, self.dropout_rate,
            self.feature_mask.copy(), self.cell_ids.copy(), self.origin,
        )


def forward_batch(
    net: NetworkModel, X: np.ndarray, train: bool = False, rng: np.random.Generator | None = None
):
    """Forward pass on normalised input; returns (probabilities, cache for backprop).

    In train mode each hidden unit is dropped with ``net.dropout_rate`` and
    survivors are scaled by 1/(1-rate).
    """
    X = np.atleast_2d(X)
    if X.shape[1] != net.input_dim:
        raise InvalidInput(f"expected {net.input_dim} features, got {X.shape[1]}")
    rate = net.dropout_rate if train else 0.0
    if rate > 0 and rng is None:
        raise InvalidInput("train-mode dropout needs a seeded generator")
    acts = [X]
    masks = []
    h = X
    last = len(net.weights) - 1
    for i, (W, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ W + b
        if i == last:
            h = z
            break
        h = relu(z)
        if rate > 0:
            mask = (rng.random(h.shape) >= rate) / (1.0 - rate)
            h = h * mask
        else:
            mask = None
        masks.append(mask)
        acts.append(h)
    return softmax(h), (acts, masks)


def forward(net: NetworkModel, x: FeatureVector | np.ndarray, mode: str = "infer",
            rng: np.random.Generator | None = None) -> np.ndarray:
    """Probability vector for a single raw feature vector."""
    if mode not in ("train", "infer"):
        raise InvalidInput(f"mode must be 'train' or 'infer', not {mode!r}")
    raw = x.flatten() if isinstance(x, FeatureVector) else np.asarray(x, dtype=float)
    p, _ = forward_batch(net, net.prepare(raw), train=(mode == "train"), rng=rng)
    return p[0]


def backward(net: NetworkModel, probs: np.ndarray, targets: np.ndarray, cache):
    """Gradients of mean cross-entropy w.r.t. every weight and bias.

    ``targets`` are output-unit indices. Dropped units get zero gradient
    through their mask.
    """
    acts, masks = cache
    n = probs.shape[0]
    delta = probs.copy()
    delta[np.arange(n), targets] -= 1.0
    delta /= n
    gW = [None] * len(net.weights)
    gb = [None] * len(net.weights)
    for i in range(len(net.weights) - 1, -1, -1):
        gW[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i == 0:
            break
        delta = delta @ net.weights[i].T
        mask = masks[i - 1]
        if mask is not None:
            delta = delta * mask
        delta = delta * (acts[i] > 0)
    return gW, gb


def batch_loss(probs: np.ndarray, targets: np.ndarray) -> float:
    picked = probs[np.arange(len(targets)), targets]
    return float(-np.mean(np.log(np.maximum(picked, PROB_FLOOR))))


def loss(net: NetworkModel, dataset: Sequence[tuple[FeatureVector, int]]) -> float:
    """Mean infer-mode cross-entropy over (features, grid cell) pairs."""
    if not dataset:
        raise InvalidInput("loss over an empty dataset")
    X = np.array([fv.flatten() for fv, _ in dataset])
    cells = np.array([c for _, c in dataset], dtype=int)
    targets = _cells_to_outputs(net, cells)
    probs, _ = forward_batch(net, net.prepare(X))
    return batch_loss(probs, targets)


def _cells_to_outputs(net: NetworkModel, cells: np.ndarray) -> np.ndarray:
    lookup = -np.ones(net.grid.K, dtype=int)
    lookup[net.cell_ids] = np.arange(len(net.cell_ids))
    out = lookup[cells]
    if np.any(out < 0):
        raise InvalidInput("some target cells are not in the model's output space")
    return out


# ---------------------------------------------------------------------------
# training


def init_network(
    registry: TowerRegistry,
    grid: VirtualGrid,
    cfg: NetworkConfig,
    rng: np.random.Generator,
    cell_ids: np.ndarray | None = None,
    feature_mask: np.ndarray | None = None,
) -> NetworkModel:
    """Glorot-uniform weights, zero biases."""
    n_out = grid.K if cell_ids is None else len(cell_ids)
    dims = [2 * len(registry), *cfg.hidden_layers, n_out]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return NetworkModel(weights, biases, registry, grid, tuple(cfg.rss_bounds),
                        cfg.dropout_rate, feature_mask, cell_ids)


class _Adam:
    def __init__(self, params, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def samples_to_arrays(data: Sequence[LabeledSample]) -> tuple[np.ndarray, np.ndarray]:
    X = np.array([s.features.flatten() for s in data])
    xy = np.array([[s.location.x, s.location.y] for s in data])
    return X, xy


def train(
    data: Sequence[LabeledSample],
    grid: VirtualGrid,
    registry: TowerRegistry,
    cfg: NetworkConfig,
    feature_mask: np.ndarray | None = None,
) -> tuple[NetworkModel, TrainingTrace]:
    if not data:
        raise InvalidInput("cannot train on an empty dataset")
    X_raw, xy = samples_to_arrays(data)
    cells = cells_of(xy, grid)
    return train_arrays(X_raw, cells, grid, registry, cfg, feature_mask)


def train_arrays(
    X_raw: np.ndarray,
    cells: np.ndarray,
    grid: VirtualGrid,
    registry: TowerRegistry,
    cfg: NetworkConfig,
    feature_mask: np.ndarray | None = None,
) -> tuple[NetworkModel, TrainingTrace]:
    rng_init, rng_shuffle, rng_drop = np.random.default_rng(cfg.seed).spawn(3)
    cell_ids = np.unique(cells) if cfg.prune_empty_cells else None
    net = init_network(registry, grid, cfg, rng_init, cell_ids, feature_mask)
    X = net.prepare(X_raw)
    targets = _cells_to_outputs(net, np.asarray(cells, dtype=int))
    n = len(X)
    params = net.weights + net.biases
    opt = _Adam(params, cfg.learning_rate) if cfg.optimizer == "adam" else None
    trace = TrainingTrace()
    for epoch in range(cfg.epochs):
        order = rng_shuffle.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            probs, cache = forward_batch(net, X[idx], train=True, rng=rng_drop)
            total += batch_loss(probs, targets[idx]) * len(idx)
            gW, gb = backward(net, probs, targets[idx], cache)
            if opt is not None:
                opt.step(params, gW + gb)
            else:
                for p, g in zip(params, gW + gb):
                    p -= cfg.learning_rate * g
        epoch_loss = total / n
        if not np.isfinite(epoch_loss):
            raise TrainingDiverged(
                f"loss became {epoch_loss} at epoch {epoch}; "
                f"learning_rate={cfg.learning_rate}, max |w|="
                f"{max(float(np.abs(W).max()) for W in net.weights):.3g}"
            )
        trace.epoch_losses.append(epoch_loss)
        if epoch % 100 == 0:
            log.debug("epoch %d loss %.5f", epoch, epoch_loss)
    return net, trace


# ---------------------------------------------------------------------------
# artifact


def save_model(net: NetworkModel, path: str | Path) -> None:
    meta = {
        "version": ARTIFACT_VERSION,
        "towers": list(net.registry.tower_ids),
        "grid": net.grid.to_dict(),
        "rss_bounds": list(net.rss_bounds),
        "dropout_rate": net.dropout_rate,
        "layer_shapes": [list(W.shape) for W in net.weights],
        "activation": {"hidden": "relu", "output": "softmax"},
        "origin": list(net.origin) if net.origin is not None else None,
    }
    arrays = {"meta": np.array(json.dumps(meta)), "feature_mask": net.feature_mask,
              "cell_ids": net.cell_ids}
    for i, (W, b) in enumerate(zip(net.weights, net.biases)):
        arrays[f"W{i}"] = W
        arrays[f"b{i}"] = b
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_model(path: str | Path) -> NetworkModel:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        if meta.get("version") != ARTIFACT_VERSION:
            raise InvalidInput(f"unsupported model artifact version {meta.get('version')!r}")
        n = len(meta["layer_shapes"])
        weights = [z[f"W{i}"].copy() for i in range(n)]
        biases = [z[f"b{i}"].copy() for i in range(n)]
        mask = z["feature_mask"].copy()
        cell_ids = z["cell_ids"].copy()
    return NetworkModel(
        weights, biases, TowerRegistry(tuple(meta["towers"])), VirtualGrid.from_dict(meta["grid"]),
        tuple(meta["rss_bounds"]), float(meta["dropout_rate"]), mask, cell_ids,
        tuple(meta["origin"]) if meta.get("origin") is not None else None,
    )
