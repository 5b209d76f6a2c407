"""Burden-reweighted training (MISOB).

After a warm-up phase of ordinary training, each round estimates every
training instance's social burden under the current model (the recourse
cost of qualified instances the model rejects) and retrains for one epoch
with per-instance loss weights ``1 + C * N * b_i / sum(b)``.

Only the feature matrix and the labels are ever read; the sensitive table
of the dataset is not an input to any step.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .models import Model, ModelSpec, TrainConfig, init_model, predict, train_weighted
from .recourse import GrowingSpheres, RecourseMethod, recourse_costs_population

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MisobConfig:
    C: float = 0.3
    warmup_epochs: int = 3
    rounds: int = 3
    train: TrainConfig = TrainConfig()
    method: RecourseMethod = field(default_factory=GrowingSpheres)
    failure_policy: str = "max_observed"
    per_batch: bool = False

    def __post_init__(self):
        if self.C < 0:
            raise ValueError("C must be non-negative")
        if self.rounds < 0 or self.warmup_epochs < 0:
            raise ValueError("rounds and warm-up epochs must be non-negative")
        if self.failure_policy == "drop":
            raise ValueError("burden estimation needs a finite cost for failed recourse; use max_observed or penalize")


@dataclass
class BurdenLedger:
    burdens: np.ndarray
    round: int = 0
    failures: int = 0

    @property
    def total(self) -> float:
        return float(self.burdens.sum())

    def __len__(self) -> int:
        return len(self.burdens)


@dataclass
class RoundRecord:
    round: int
    total_burden: float
    failures: int
    mean_weight: float
    train_loss: float


def compute_burdens(m: Model, X, y, method: RecourseMethod, mask=None,
                    failure_policy: str = "max_observed", round_index: int = 0) -> BurdenLedger:
    """b_i = recourse cost for rows with y_i = 1 that ``m`` rejects; 0 otherwise."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    needs = (y == 1) & (predict(m, X) == 0)
    pop = recourse_costs_population(m, X, method, mask, needs=needs, failure_policy=failure_policy)
    burdens = np.where(needs, pop.costs, 0.0)
    failures = int((needs & ~pop.success).sum())
    return BurdenLedger(burdens, round_index, failures)


def phi_weights(burdens, C: float, N: int | None = None) -> np.ndarray:
    """Loss weights 1 + C N b_i / B, or all ones when the total burden B is 0."""
    b = np.asarray(getattr(burdens, "burdens", burdens), dtype=np.float64)
    if N is None:
        N = len(b)
    if len(b) != N:
        raise ValueError(f"ledger has {len(b)} entries, expected N={N}")
    B = b.sum()
    if B <= 0.0:
        return np.ones(N)
    return 1.0 + C * N * b / B


def misob_train(
    ds,
    spec: ModelSpec,
    cfg: MisobConfig = MisobConfig(),
    *,
    mask=None,
    warm_model: Model | None = None,
    history: list[RoundRecord] | None = None,
) -> Model:
    """Warm-up training followed by ``cfg.rounds`` burden-reweighted epochs.

    ``ds`` only needs ``X`` and ``y`` attributes. Round ``t`` trains one
    epoch whose shuffle is keyed by epoch index ``warmup_epochs + t - 1``,
    so with ``C = 0`` the result equals continuing uniform training one
    epoch per call. Adam state is reset every round. A pre-trained
    ``warm_model`` (e.g. shared with a baseline) skips the warm-up.
    """
    X, y = ds.X, ds.y
    N = len(y)
    if warm_model is None:
        model = init_model(spec, X.shape[1], cfg.train.seed)
        model = train_weighted(model, X, y, None, replace(cfg.train, epochs=cfg.warmup_epochs))
    else:
        model = warm_model.copy()
    one_epoch = replace(cfg.train, epochs=1)
    for t in range(1, cfg.rounds + 1):
        ledger = compute_burdens(model, X, y, cfg.method, mask, cfg.failure_policy, t)
        if cfg.per_batch:
            b = ledger.burdens

            def batch_weights(idx, b=b):
                return phi_weights(b[idx], cfg.C)

            model = train_weighted(model, X, y, None, one_epoch,
                                   start_epoch=cfg.warmup_epochs + t - 1, batch_weights=batch_weights)
            mean_w = float(np.mean(phi_weights(b, cfg.C)))
        else:
            weights = phi_weights(ledger, cfg.C, N)
            model = train_weighted(model, X, y, weights, one_epoch, start_epoch=cfg.warmup_epochs + t - 1)
            mean_w = float(weights.mean())
        rec = RoundRecord(t, ledger.total, ledger.failures, mean_w, model.history[-1] if model.history else float("nan"))
        logger.info("misob round %d: B=%.4f failures=%d mean_phi=%.4f loss=%.5f",
                    t, rec.total_burden, rec.failures, rec.mean_weight, rec.train_loss)
        if history is not None:
            history.append(rec)
    return model


def write_round_log(path: str | Path, records: list[RoundRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["round", "total_burden", "failures", "mean_phi", "train_loss"])
        for r in records:
            w.writerow([r.round, repr(r.total_burden), r.failures, repr(r.mean_weight), repr(r.train_loss)])
