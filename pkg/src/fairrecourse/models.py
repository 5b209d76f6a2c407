"""Binary classifiers in plain numpy: logistic regression and a ReLU MLP.

Both share one representation, a list of dense layers ending in a single
logit. Training minimises the mean of per-sample weighted binary
cross-entropy with minibatch Adam. Exact input gradients of the output
probability are exposed for gradient-based recourse.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
_P_LO = np.finfo(np.float64).tiny
_P_HI = 1.0 - np.finfo(np.float64).epsneg


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    kind: str = "mlp"  # "logistic" | "mlp"
    hidden: tuple[int, ...] = (128, 128)
    activation: str = "relu"

    def __post_init__(self):
        if self.kind not in ("logistic", "mlp"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden) if self.kind == "mlp" else ())
        if any(h <= 0 for h in self.hidden):
            raise ValueError("hidden sizes must be positive")
        if self.activation != "relu":
            raise ValueError("only relu hidden activations are supported")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 256
    epochs: int = 6
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch size must be at least 1")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")


@dataclass
class Model:
    spec: ModelSpec
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    seed: int = 0
    history: list[float] = field(default_factory=list, compare=False)

    @property
    def d(self) -> int:
        return self.weights[0].shape[0]

    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "Model":
        return Model(self.spec, [w.copy() for w in self.weights], [b.copy() for b in self.biases], self.seed)

    def flat_params(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "spec": {"kind": self.spec.kind, "hidden": list(self.spec.hidden), "activation": self.spec.activation},
            "seed": self.seed,
            "layers": [
                {"shape": list(w.shape), "weight": w.ravel().tolist(), "bias": b.tolist()}
                for w, b in zip(self.weights, self.biases)
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Model":
        if d.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model format version {d.get('format_version')!r}")
        spec = ModelSpec(d["spec"]["kind"], tuple(d["spec"]["hidden"]), d["spec"]["activation"])
        weights = [np.asarray(L["weight"], dtype=np.float64).reshape(L["shape"]) for L in d["layers"]]
        biases = [np.asarray(L["bias"], dtype=np.float64) for L in d["layers"]]
        return cls(spec, weights, biases, d.get("seed", 0))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> "Model":
        return cls.from_dict(json.loads(Path(path).read_text()))


def init_model(spec: ModelSpec, d: int, seed: int) -> Model:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases zero."""
    if d < 1:
        raise ValueError("input dimension must be at least 1")
    rng = np.random.default_rng(seed)
    sizes = [d, *spec.hidden, 1]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Model(spec, weights, biases, seed)


def _as_batch(m: Model, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != m.d:
        raise ValueError(f"expected input of dimension {m.d}, got shape {x.shape}")
    return X, single


def _forward(m: Model, X: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Return logits (n,) and the list of layer inputs/pre-activations."""
    acts = [X]
    h = X
    last = len(m.weights) - 1
    for k, (W, b) in enumerate(zip(m.weights, m.biases)):
        z = h @ W + b
        if k < last:
            acts.append(z)
            h = np.maximum(z, 0.0)
    return z[:, 0], acts


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def decision_logit(m: Model, x):
    X, single = _as_batch(m, x)
    z, _ = _forward(m, X)
    return z[0] if single else z


def predict_proba(m: Model, x):
    """Probability of the positive class; accepts one vector or a row batch.

    Values are clipped to the open interval (0, 1) so saturated logits
    never report exact 0 or 1.
    """
    X, single = _as_batch(m, x)
    z, _ = _forward(m, X)
    p = np.clip(sigmoid(z), _P_LO, _P_HI)
    return p[0] if single else p


def predict(m: Model, x, threshold: float = 0.5):
    """Hard label: 1 iff probability >= threshold (ties go to 1)."""
    p = predict_proba(m, x)
    return (np.asarray(p) >= threshold).astype(np.int64) if np.ndim(p) else int(p >= threshold)


def input_gradient(m: Model, x):
    """d predict_proba / dx, exact. ReLU derivative at 0 is taken as 0."""
    X, single = _as_batch(m, x)
    z, acts = _forward(m, X)
    p = sigmoid(z)
    g = (p * (1.0 - p))[:, None]  # d p / d logit
    for k in range(len(m.weights) - 1, -1, -1):
        g = g @ m.weights[k].T
        if k > 0:
            g = g * (acts[k] > 0.0)
    return g[0] if single else g


def _bce_from_logits(z: np.ndarray, y: np.ndarray) -> np.ndarray:
    # softplus(z) - y z, computed stably
    return np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))


def weighted_loss_and_grads(m: Model, X: np.ndarray, y: np.ndarray, w: np.ndarray):
    """Mean weighted BCE over the rows and its gradients w.r.t. all parameters."""
    z, acts = _forward(m, X)
    n = len(y)
    loss = float(np.dot(w, _bce_from_logits(z, y)) / n)
    delta = ((sigmoid(z) - y) * w / n)[:, None]
    gW = [None] * len(m.weights)
    gb = [None] * len(m.weights)
    for k in range(len(m.weights) - 1, -1, -1):
        h_in = acts[0] if k == 0 else np.maximum(acts[k], 0.0)
        gW[k] = h_in.T @ delta
        gb[k] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ m.weights[k].T) * (acts[k] > 0.0)
    return loss, gW, gb


class Adam:
    def __init__(self, params: list[np.ndarray], cfg: TrainConfig):
        self.params = params
        self.cfg = cfg
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            p -= c.lr * (m / bc1) / (np.sqrt(v / bc2) + c.eps)


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def train_weighted(
    m: Model,
    X: np.ndarray,
    y: np.ndarray,
    w: np.ndarray | None,
    cfg: TrainConfig,
    *,
    start_epoch: int = 0,
    batch_weights: Callable[[np.ndarray], np.ndarray] | None = None,
) -> Model:
    """Minibatch Adam on the mean of weighted per-sample losses.

    Returns a new model; ``m`` is left untouched. Shuffling is keyed by
    ``(cfg.seed, start_epoch + e)`` so that training split over several
    calls visits batches in the same order as one long call. Optimizer
    state starts fresh on every call. ``batch_weights``, when given,
    maps the row indices of a batch to that batch's weights and overrides
    ``w``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    if w is None:
        w = np.ones(n)
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (n,):
        raise ValueError(f"expected {n} sample weights, got shape {w.shape}")
    if (w < 0).any():
        raise ValueError("sample weights must be non-negative")
    out = m.copy()
    params = [a for pair in zip(out.weights, out.biases) for a in pair]
    opt = Adam(params, cfg)
    for e in range(cfg.epochs):
        order = epoch_order(n, cfg.seed, start_epoch + e)
        total = 0.0
        for s in range(0, n, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            wb = batch_weights(idx) if batch_weights is not None else w[idx]
            loss, gW, gb = weighted_loss_and_grads(out, X[idx], y[idx], wb)
            if not np.isfinite(loss):
                raise TrainingError(
                    f"non-finite training loss at epoch {start_epoch + e}; "
                    f"try a smaller learning rate than {cfg.lr}")
            opt.step([g for pair in zip(gW, gb) for g in pair])
            total += loss * len(idx)
        out.history.append(total / n)
        logger.debug("epoch %d: mean weighted loss %.6f", start_epoch + e, total / n)
    if out.history:
        logger.info("trained %d epochs, final epoch loss %.6f", cfg.epochs, out.history[-1])
    return out


def train_dataset(m: Model, ds, w, cfg: TrainConfig, **kwargs) -> Model:
    """:func:`train_weighted` on a :class:`~fairrecourse.data.Dataset` (reads X and y only)."""
    return train_weighted(m, ds.X, ds.y, w, cfg, **kwargs)
