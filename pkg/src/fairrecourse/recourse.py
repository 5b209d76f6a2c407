"""Counterfactual recourse for negatively classified instances.

Two methods are provided behind a common interface:

* Growing Spheres: random search in expanding spherical shells around the
  instance, followed by radius bisection inside the first shell that
  contains a positively classified point.
* Wachter: gradient-based minimisation of a squared distance to a target
  probability plus an l1 proximity penalty.

All search happens in the encoded feature space, restricted to mutable
coordinates and to the unit box.
"""
from __future__ import annotations

import csv
import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np

from .models import Model, input_gradient, predict, predict_proba

logger = logging.getLogger(__name__)

EVAL_SCALE = 100.0
FAILURE_POLICIES = ("max_observed", "drop", "penalize")


class RecourseError(RuntimeError):
    pass


def eval_cost(x, x_cf) -> float:
    """Evaluation cost: 100 times the l2 distance."""
    x = np.asarray(x, dtype=np.float64)
    x_cf = np.asarray(x_cf, dtype=np.float64)
    if x.shape != x_cf.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {x_cf.shape}")
    return float(EVAL_SCALE * np.sqrt(np.sum((x_cf - x) ** 2)))


@dataclass(frozen=True)
class CostFunction:
    norm: str = "l2"
    scale: float = EVAL_SCALE
    mask: tuple[bool, ...] | None = None

    def __post_init__(self):
        if self.norm not in ("l1", "l2"):
            raise ValueError(f"unknown norm {self.norm!r}")
        if self.scale <= 0:
            raise ValueError("scale must be positive")

    def __call__(self, x, x_cf) -> float:
        diff = np.asarray(x_cf, dtype=np.float64) - np.asarray(x, dtype=np.float64)
        if self.mask is not None:
            if len(self.mask) != diff.shape[-1]:
                raise ValueError("mask length does not match input dimension")
            diff = diff[..., np.asarray(self.mask)]
        if self.norm == "l1":
            return float(self.scale * np.abs(diff).sum())
        return float(self.scale * np.sqrt(np.sum(diff ** 2)))


@dataclass
class RecourseResult:
    counterfactual: np.ndarray
    success: bool
    eval_cost: float
    iterations: int
    method: str


@dataclass(frozen=True)
class GsConfig:
    n_samples: int = 200
    initial_radius: float = 0.1
    growth: float = 2.0
    max_shells: int = 20
    bisection_steps: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1 or self.initial_radius <= 0 or self.max_shells < 1 or self.bisection_steps < 0:
            raise ValueError("GS settings must be positive")
        if self.growth <= 1.0:
            raise ValueError("growth factor must exceed 1")


@dataclass(frozen=True)
class WtConfig:
    lr: float = 0.01
    lam: float = 0.01
    max_iter: int = 1000
    norm: int = 1
    clamp: bool = True
    target: float = 0.55

    def __post_init__(self):
        if self.lr <= 0 or self.lam < 0:
            raise ValueError("step size must be positive and lambda non-negative")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.norm != 1:
            raise ValueError("only the l1 proximity penalty is supported")


def _mask_or_all(mask, d: int) -> np.ndarray:
    if mask is None:
        return np.ones(d, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (d,):
        raise ValueError(f"mask of length {mask.shape} for dimension {d}")
    return mask


def _instance_rng(x: np.ndarray, seed: int) -> np.random.Generator:
    digest = hashlib.blake2b(np.ascontiguousarray(x, dtype=np.float64).tobytes(), digest_size=8).digest()
    return np.random.default_rng([seed, int.from_bytes(digest, "little")])


def _sample_shell(rng, x, mask, lo, hi, n):
    """Uniform samples in the shell lo <= |z - x| <= hi over masked coordinates, clamped."""
    k = int(mask.sum())
    direction = rng.standard_normal((n, k))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    u = rng.random(n)
    radius = (lo ** k + u * (hi ** k - lo ** k)) ** (1.0 / k)
    pts = np.repeat(x[None, :], n, axis=0)
    pts[:, mask] += direction * radius[:, None]
    return np.clip(pts, 0.0, 1.0)


def _nearest_positive(m: Model, x, pts):
    pos = predict(m, pts) == 1
    if not pos.any():
        return None, np.inf
    cand = pts[pos]
    dist = np.sqrt(((cand - x) ** 2).sum(axis=1))
    j = int(np.argmin(dist))
    return cand[j], dist[j]


def growing_spheres(m: Model, x, cfg: GsConfig = GsConfig(), mask=None) -> RecourseResult:
    """Growing Spheres search for one instance.

    Shells are [0, r0], [r0, g r0], [g r0, g^2 r0], ... On the first shell
    holding a positive point, the shell is bisected ``bisection_steps``
    times, keeping the nearest positive point seen. The random stream is
    keyed by ``cfg.seed`` and the bytes of ``x``, so the result does not
    depend on which other instances are processed alongside.
    """
    x = np.asarray(x, dtype=np.float64)
    mask = _mask_or_all(mask, len(x))
    if not mask.any():
        return RecourseResult(x.copy(), False, 0.0, 0, "gs")
    rng = _instance_rng(x, cfg.seed)
    lo, hi = 0.0, cfg.initial_radius
    best, best_d = None, np.inf
    shells = 0
    for _ in range(cfg.max_shells):
        shells += 1
        best, best_d = _nearest_positive(m, x, _sample_shell(rng, x, mask, lo, hi, cfg.n_samples))
        if best is not None:
            break
        lo, hi = hi, hi * cfg.growth
    if best is None:
        return RecourseResult(x.copy(), False, 0.0, shells, "gs")
    for _ in range(cfg.bisection_steps):
        mid = 0.5 * (lo + hi)
        cand, cand_d = _nearest_positive(m, x, _sample_shell(rng, x, mask, lo, mid, cfg.n_samples))
        if cand is not None:
            hi = mid
            if cand_d < best_d:
                best, best_d = cand, cand_d
        else:
            lo = mid
    x_cf = x.copy()
    x_cf[mask] = best[mask]  # clamping never moves frozen coordinates, but keep them bit-exact
    success = bool(predict(m, x_cf) == 1)
    return RecourseResult(x_cf, success, eval_cost(x, x_cf), shells, "gs")


def wachter_batch(m: Model, X, cfg: WtConfig = WtConfig(), mask=None) -> list[RecourseResult]:
    """Wachter counterfactuals for a batch of instances, optimised jointly.

    Minimises (p(x') - target)^2 + lam * |x' - x|_1 per row, starting at
    x' = x, by proximal gradient descent: a gradient step on the squared
    error, then soft-thresholding of x' - x by lr * lam (the exact step for
    the l1 term), then clamping to [0, 1]. Rows stop as soon as they are
    classified positive. Rows are independent, so batching does not change
    any row's result.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n, d = X.shape
    mask = _mask_or_all(mask, d)
    Xcf = X.copy()
    active = predict(m, Xcf) == 0
    iters = np.zeros(n, dtype=np.int64)
    shrink = cfg.lr * cfg.lam
    for it in range(1, cfg.max_iter + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        x0, xc = X[idx], Xcf[idx]
        p = predict_proba(m, xc)
        grad = 2.0 * (p - cfg.target)[:, None] * input_gradient(m, xc)
        objective = (p - cfg.target) ** 2 + cfg.lam * np.abs(xc - x0).sum(axis=1)
        if not np.all(np.isfinite(objective)) or not np.all(np.isfinite(grad)):
            raise RecourseError("non-finite Wachter objective; check the model parameters")
        delta = xc - cfg.lr * grad - x0
        delta = np.sign(delta) * np.maximum(np.abs(delta) - shrink, 0.0)
        xc = x0 + delta
        if cfg.clamp:
            xc = np.clip(xc, 0.0, 1.0)
        xc[:, ~mask] = x0[:, ~mask]
        Xcf[idx] = xc
        iters[idx] = it
        active[idx] = predict(m, xc) == 0
    success = predict(m, Xcf) == 1
    return [
        RecourseResult(Xcf[i], bool(success[i]), eval_cost(X[i], Xcf[i]), int(iters[i]), "wt")
        for i in range(n)
    ]


def wachter(m: Model, x, cfg: WtConfig = WtConfig(), mask=None) -> RecourseResult:
    return wachter_batch(m, np.asarray(x, dtype=np.float64)[None, :], cfg, mask)[0]


class RecourseMethod(Protocol):
    name: str

    def generate(self, m: Model, X: np.ndarray, mask=None) -> list[RecourseResult]: ...


@dataclass(frozen=True)
class GrowingSpheres:
    cfg: GsConfig = GsConfig()
    name: str = "gs"

    def generate(self, m: Model, X, mask=None) -> list[RecourseResult]:
        return [growing_spheres(m, x, self.cfg, mask) for x in np.atleast_2d(X)]


@dataclass(frozen=True)
class Wachter:
    cfg: WtConfig = WtConfig()
    name: str = "wt"
    chunk: int = 4096

    def generate(self, m: Model, X, mask=None) -> list[RecourseResult]:
        X = np.atleast_2d(X)
        out: list[RecourseResult] = []
        for s in range(0, len(X), self.chunk):
            out.extend(wachter_batch(m, X[s:s + self.chunk], self.cfg, mask))
        return out


def make_method(name: str, gs: GsConfig | None = None, wt: WtConfig | None = None) -> RecourseMethod:
    name = name.lower()
    if name == "gs":
        return GrowingSpheres(gs or GsConfig())
    if name == "wt":
        return Wachter(wt or WtConfig())
    raise ValueError(f"unknown recourse method {name!r} (expected 'gs' or 'wt')")


@dataclass
class PopulationCosts:
    """Per-row costs of a population; positively predicted rows cost 0.

    ``needs_recourse`` marks rows that were sent to the recourse method;
    ``success`` is True for rows that needed nothing or got a valid
    counterfactual. Failed rows carry the cost chosen by the failure
    policy (NaN under ``"drop"``).
    """

    costs: np.ndarray
    success: np.ndarray
    needs_recourse: np.ndarray
    results: dict[int, RecourseResult]
    d: int = 0

    def restrict(self, needs, failure_policy: str = "max_observed") -> "PopulationCosts":
        """Costs under a different set of rejected rows (e.g. post-processed decisions).

        Rows rejected here but not sent to the method originally were
        accepted by the model itself; no counterfactual can help them, so
        they count as failures. Rows no longer rejected cost 0.
        """
        needs = np.asarray(needs, dtype=bool)
        costs = np.where(needs & self.needs_recourse, self.raw_costs, 0.0)
        success = np.where(needs & self.needs_recourse, self.raw_success, True)
        success[needs & ~self.needs_recourse] = False
        results = {i: r for i, r in self.results.items() if needs[i]}
        out = PopulationCosts(costs, success, needs, results, self.d)
        out._fill_failures(failure_policy)
        return out

    @property
    def raw_costs(self) -> np.ndarray:
        c = np.zeros(len(self.costs))
        for i, r in self.results.items():
            c[i] = r.eval_cost
        return c

    @property
    def raw_success(self) -> np.ndarray:
        s = ~self.needs_recourse.copy()
        for i, r in self.results.items():
            s[i] = r.success
        return s

    def _fill_failures(self, policy: str) -> None:
        failed = self.needs_recourse & ~self.success
        if failed.any():
            fill = failure_cost(self.costs, self.success, self.needs_recourse, policy, self.d)
            self.costs[failed] = fill
            logger.info("%d of %d recourse attempts failed; filled with %s cost %.3f",
                        int(failed.sum()), int(self.needs_recourse.sum()), policy, fill)

    @property
    def failure_rate(self) -> float:
        k = int(self.needs_recourse.sum())
        return float((~self.success[self.needs_recourse]).sum() / k) if k else 0.0


def failure_cost(costs: np.ndarray, success: np.ndarray, needs: np.ndarray, policy: str, d: int) -> float:
    if policy == "drop":
        return np.nan
    if policy == "penalize":
        return EVAL_SCALE * np.sqrt(d)
    if policy == "max_observed":
        ok = needs & success
        return float(costs[ok].max()) if ok.any() else EVAL_SCALE * np.sqrt(d)
    raise ValueError(f"unknown failure policy {policy!r}; expected one of {FAILURE_POLICIES}")


def recourse_costs_population(
    m: Model,
    X,
    method: RecourseMethod,
    mask=None,
    *,
    needs: np.ndarray | None = None,
    failure_policy: str = "max_observed",
) -> PopulationCosts:
    """Run ``method`` on every row that needs recourse and collect costs.

    By default the rows needing recourse are those the model predicts 0.
    A caller may pass ``needs`` explicitly (post-processed decisions).
    Rows that need recourse but are already positive under ``m`` cannot be
    helped by the method and count as failures.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n = len(X)
    pred = predict(m, X) if n else np.zeros(0, dtype=np.int64)
    needs = (pred == 0) if needs is None else np.asarray(needs, dtype=bool)
    costs = np.zeros(n)
    success = np.ones(n, dtype=bool)
    results: dict[int, RecourseResult] = {}
    todo = np.flatnonzero(needs & (pred == 0))
    stuck = np.flatnonzero(needs & (pred == 1))
    success[stuck] = False
    if todo.size:
        for i, r in zip(todo, method.generate(m, X[todo], mask)):
            results[int(i)] = r
            costs[i] = r.eval_cost
            success[i] = r.success
    pop = PopulationCosts(costs, success, needs, results, X.shape[1])
    pop._fill_failures(failure_policy)
    return pop


def write_trace(path: str | Path, X: np.ndarray, pop: PopulationCosts) -> None:
    """One CSV record per recourse attempt: x, x', cost, success, iterations, method."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "method", "success", "cost", "iterations", "x", "x_cf"])
        for i in sorted(pop.results):
            r = pop.results[i]
            w.writerow([i, r.method, int(r.success), f"{r.eval_cost:.10g}", r.iterations,
                        " ".join(f"{v:.10g}" for v in X[i]), " ".join(f"{v:.10g}" for v in r.counterfactual)])
