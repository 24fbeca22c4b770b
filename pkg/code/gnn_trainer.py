"""Two-layer GCN with hand-written backpropagation and a full-batch Adam training loop.

logits = A_hat . dropout(relu(A_hat . x . W1 + b1)) . W2 + b2, where x comes from an
embedding scheme and the gradient w.r.t. x is handed back to that scheme.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from embedding_schemes import EmbeddingScheme, Parameter
from errors import DataError, NumericError
from graph_core import Graph, LabeledDataset, SparseMatrix, normalized_adjacency, spmm
from hashing import derive_seed

log = logging.getLogger(__name__)

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    lr: float = Field(0.01, gt=0.0)
    epochs: int = Field(200, ge=1)
    weight_decay: float = Field(0.0, ge=0.0)
    seed: int = 0
    repeats: int = Field(5, ge=1)
    hidden: int = Field(64, ge=1)
    dropout: float = Field(0.0, ge=0.0, lt=1.0)


class GcnModel:
    def __init__(self, w1: np.ndarray, w2: np.ndarray, b1: np.ndarray | None = None, b2: np.ndarray | None = None):
        w1, w2 = np.asarray(w1, dtype=np.float64), np.asarray(w2, dtype=np.float64)
        if w1.ndim != 2 or w2.ndim != 2 or w1.shape[1] != w2.shape[0]:
            raise ValueError(f"inconsistent GCN weights: {w1.shape}, {w2.shape}")
        self.w1 = Parameter("gcn.W1", w1)
        self.w2 = Parameter("gcn.W2", w2)
        self.b1 = Parameter("gcn.b1", np.zeros(w1.shape[1]) if b1 is None else b1, decay=False)
        self.b2 = Parameter("gcn.b2", np.zeros(w2.shape[1]) if b2 is None else b2, decay=False)

    @classmethod
    def init(cls, in_dim: int, hidden: int, num_classes: int, seed: int) -> "GcnModel":
        rng = np.random.default_rng(derive_seed(seed, "model", 0))

        def glorot(fan_in: int, fan_out: int) -> np.ndarray:
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-bound, bound, size=(fan_in, fan_out))

        return cls(glorot(in_dim, hidden), glorot(hidden, num_classes))

    @property
    def in_dim(self) -> int:
        return self.w1.values.shape[0]

    @property
    def hidden(self) -> int:
        return self.w1.values.shape[1]

    @property
    def num_classes(self) -> int:
        return self.w2.values.shape[1]

    def parameters(self) -> list[Parameter]:
        return [self.w1, self.b1, self.w2, self.b2]

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()


@dataclass
class GcnCache:
    adj: SparseMatrix
    x: np.ndarray
    z1: np.ndarray
    h: np.ndarray
    scale: np.ndarray | None


def gcn_forward_cached(
    adj: SparseMatrix, x: np.ndarray, model: GcnModel, keep: np.ndarray | None = None, rate: float = 0.0
) -> tuple[np.ndarray, GcnCache]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != adj.shape[0] or x.shape[1] != model.in_dim:
        raise ValueError(f"GCN input shape {x.shape} does not match adjacency {adj.shape} / W1 {model.w1.values.shape}")
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite GCN input")
    z1 = spmm(adj, x @ model.w1.values) + model.b1.values
    h = np.maximum(z1, 0.0)
    scale = None
    if keep is not None:
        scale = keep / (1.0 - rate)
        h = h * scale
    logits = spmm(adj, h @ model.w2.values) + model.b2.values
    return logits, GcnCache(adj, x, z1, h, scale)


def gcn_forward(adj: SparseMatrix, x: np.ndarray, model: GcnModel) -> np.ndarray:
    return gcn_forward_cached(adj, x, model)[0]


def gcn_backward(cache: GcnCache, dlogits: np.ndarray, model: GcnModel) -> np.ndarray:
    """Accumulates model gradients and returns dLoss/dx."""
    # A_hat is symmetric, so A_hat^T g == A_hat g
    dhw = spmm(cache.adj, dlogits)
    model.b2.grad += dlogits.sum(axis=0)
    model.w2.grad += cache.h.T @ dhw
    dh = dhw @ model.w2.values.T
    if cache.scale is not None:
        dh = dh * cache.scale
    dz1 = dh * (cache.z1 > 0.0)
    model.b1.grad += dz1.sum(axis=0)
    dxw = spmm(cache.adj, dz1)
    model.w1.grad += cache.x.T @ dxw
    return dxw @ model.w1.values.T


def _masked(labels: np.ndarray, mask: np.ndarray) -> np.ndarray:
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        raise DataError("mask selects no nodes")
    return idx


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> tuple[float, np.ndarray]:
    idx = _masked(labels, mask)
    z = logits[idx] - logits[idx].max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    picked = z[np.arange(idx.size), labels[idx]]
    loss = float(np.mean(log_norm - picked))

    probs = np.exp(z - log_norm[:, None])
    probs[np.arange(idx.size), labels[idx]] -= 1.0
    grad = np.zeros_like(logits, dtype=np.float64)
    grad[idx] = probs / idx.size
    return loss, grad


def cross_entropy(logits: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> float:
    return softmax_cross_entropy(logits, labels, mask)[0]


def evaluate(logits: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> float:
    idx = _masked(labels, mask)
    # argmax returns the first maximum: ties go to the lowest class id
    return float(np.mean(np.argmax(logits[idx], axis=1) == labels[idx]))


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]

    @classmethod
    def zeros_like(cls, params: list[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(
    params: list[np.ndarray], grads: list[np.ndarray], state: AdamState, lr: float, weight_decay: float,
    t: int, decay: list[bool] | None = None, names: list[str] | None = None,
) -> None:
    """One in-place Adam update with bias correction and decoupled weight decay."""
    if t < 1:
        raise ValueError("Adam step counter starts at 1")
    decay = decay if decay is not None else [True] * len(params)
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            name = names[i] if names else f"#{i}"
            raise NumericError(f"non-finite gradient for parameter {name} at step {t}")

    c1 = 1.0 - BETA1 ** t
    c2 = 1.0 - BETA2 ** t
    for p, g, m, v, wd in zip(params, grads, state.m, state.v, decay):
        m *= BETA1
        m += (1.0 - BETA1) * g
        v *= BETA2
        v += (1.0 - BETA2) * g * g
        if wd and weight_decay:
            p -= lr * weight_decay * p
        p -= lr * (m / c1) / (np.sqrt(v / c2) + EPS)


class Adam:
    def __init__(self, params: list[Parameter], lr: float, weight_decay: float = 0.0):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.state = AdamState.zeros_like([p.values for p in params])
        self.t = 0

    def step(self) -> None:
        self.t += 1
        adam_step(
            [p.values for p in self.params], [p.grad for p in self.params], self.state,
            self.lr, self.weight_decay, self.t,
            decay=[p.decay for p in self.params], names=[p.name for p in self.params],
        )


@dataclass(frozen=True)
class TrainReport:
    seed: int
    epochs: int
    steps: int
    train_loss: tuple[float, ...]
    valid_accuracy: tuple[float, ...]
    best_epoch: int
    best_valid_accuracy: float
    test_accuracy: float
    scheme_params: int
    model_params: int
    wall_seconds: float = field(default=0.0, compare=False)

    def as_dict(self) -> dict:
        return {
            "seed": self.seed,
            "epochs": self.epochs,
            "steps": self.steps,
            "best_epoch": self.best_epoch,
            "best_valid_accuracy": self.best_valid_accuracy,
            "test_accuracy": self.test_accuracy,
            "scheme_params": self.scheme_params,
            "model_params": self.model_params,
            "wall_seconds": self.wall_seconds,
            "train_loss": list(self.train_loss),
            "valid_accuracy": list(self.valid_accuracy),
        }


def train(
    g: Graph, ds: LabeledDataset, scheme: EmbeddingScheme, model: GcnModel, cfg: TrainConfig,
    adj: SparseMatrix | None = None,
) -> TrainReport:
    if scheme.num_nodes != g.num_nodes or ds.num_nodes != g.num_nodes:
        raise DataError(f"graph ({g.num_nodes}), labels ({ds.num_nodes}) and scheme ({scheme.num_nodes}) sizes differ")
    if scheme.dim != model.in_dim:
        raise ValueError(f"scheme width {scheme.dim} != GCN input width {model.in_dim}")
    if model.num_classes != ds.num_classes:
        raise ValueError(f"GCN has {model.num_classes} outputs for {ds.num_classes} classes")
    for name in ("train_mask", "valid_mask", "test_mask"):
        if not getattr(ds, name).any():
            raise DataError(f"{name} selects no nodes")

    started = time.perf_counter()
    adj = adj if adj is not None else normalized_adjacency(g)
    ids = np.arange(g.num_nodes, dtype=np.int64)
    rng = np.random.default_rng(derive_seed(cfg.seed, "dropout", 0))
    opt = Adam(scheme.parameters() + model.parameters(), cfg.lr, cfg.weight_decay)

    losses: list[float] = []
    valid: list[float] = []
    best_epoch, best_valid, best_test = -1, -1.0, 0.0
    for epoch in range(cfg.epochs):
        scheme.zero_grad()
        model.zero_grad()
        keep = rng.random((g.num_nodes, model.hidden)) >= cfg.dropout if cfg.dropout > 0.0 else None
        logits, cache = gcn_forward_cached(adj, scheme.forward(ids), model, keep, cfg.dropout)
        loss, dlogits = softmax_cross_entropy(logits, ds.labels, ds.train_mask)
        if not math.isfinite(loss):
            raise NumericError(f"non-finite training loss at epoch {epoch}")
        scheme.backward(ids, gcn_backward(cache, dlogits, model))
        opt.step()

        logits = gcn_forward(adj, scheme.forward(ids), model)
        acc = evaluate(logits, ds.labels, ds.valid_mask)
        losses.append(loss)
        valid.append(acc)
        if acc > best_valid:
            best_epoch, best_valid = epoch, acc
            best_test = evaluate(logits, ds.labels, ds.test_mask)
        log.debug("epoch %d loss=%.6f valid=%.4f", epoch, loss, acc)

    return TrainReport(
        seed=cfg.seed,
        epochs=cfg.epochs,
        steps=opt.t,
        train_loss=tuple(losses),
        valid_accuracy=tuple(valid),
        best_epoch=best_epoch,
        best_valid_accuracy=best_valid,
        test_accuracy=best_test,
        scheme_params=scheme.param_count(),
        model_params=model.param_count(),
        wall_seconds=time.perf_counter() - started,
    )
