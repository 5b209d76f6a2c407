"""Equality-of-opportunity post-processing by randomized decision flipping.

Each group g gets a pair (p1, p0): a base-positive decision is kept with
probability p1 and a base-negative decision is turned positive with
probability p0. The pairs are chosen so that every group's expected TPR on
the fitting data equals one common target, and the target is chosen to
maximise expected accuracy on that data.

Unlike burden reweighting, this needs every individual's group membership
both when fitting and when deciding.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Hashable, Sequence

import numpy as np

N_TARGETS = 101


@dataclass(frozen=True)
class GroupPolicy:
    p1: float
    p0: float
    tpr: float
    fpr: float


@dataclass
class FlipPolicy:
    groups: dict[Hashable, GroupPolicy]
    target_tpr: float

    def to_dict(self) -> dict:
        return {
            "target_tpr": self.target_tpr,
            "groups": {str(k): vars(v) for k, v in sorted(self.groups.items(), key=lambda kv: str(kv[0]))},
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_dict(cls, d: dict) -> "FlipPolicy":
        return cls({k: GroupPolicy(**v) for k, v in d["groups"].items()}, d["target_tpr"])


def _rates(preds, labels):
    pos, neg = labels == 1, labels == 0
    tpr = float(preds[pos].mean()) if pos.any() else np.nan
    fpr = float(preds[neg].mean()) if neg.any() else 0.0
    return tpr, fpr


def solve_group(tpr: float, fpr: float, target: float) -> tuple[float, float]:
    """Flip probabilities (p1, p0) giving expected TPR ``target``, with the fewest false positives.

    Expected TPR is p1*tpr + p0*(1 - tpr) and expected FPR is
    p1*fpr + p0*(1 - fpr); both are linear along the feasible segment, so
    the optimum sits at one of its two endpoints.
    """
    if not 0.0 <= target <= 1.0:
        raise ValueError("target TPR must lie in [0, 1]")
    if tpr == target:
        return 1.0, 0.0
    if tpr >= 1.0:
        return target, 0.0
    if tpr <= 0.0:
        return 1.0, target
    # endpoint A: keep p0 as small as possible
    a = (target / tpr, 0.0) if target <= tpr else (1.0, (target - tpr) / (1.0 - tpr))
    # endpoint B: keep p1 as small as possible
    b = (0.0, target / (1.0 - tpr)) if target <= 1.0 - tpr else ((target - (1.0 - tpr)) / tpr, 1.0)
    fpr_a = a[0] * fpr + a[1] * (1.0 - fpr)
    fpr_b = b[0] * fpr + b[1] * (1.0 - fpr)
    return a if fpr_a <= fpr_b else b


def fit_postpro(preds, labels, groups: Sequence[Hashable], target: float | None = None) -> FlipPolicy:
    """Fit per-group flip probabilities that equalise expected TPR.

    Without an explicit ``target`` the common TPR is searched over a grid
    of 101 values in [0, 1] plus the observed group TPRs, keeping the one
    with the highest expected accuracy (earliest candidate on ties).
    """
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    groups = np.asarray(groups, dtype=object)
    keys = sorted(set(groups.tolist()), key=str)
    stats = {}
    for k in keys:
        sel = groups == k
        if not np.any(labels[sel] == 1):
            raise ValueError(f"group {k} has no positive labels; TPR is undefined")
        tpr, fpr = _rates(preds[sel], labels[sel])
        stats[k] = (tpr, fpr, int(np.sum(labels[sel] == 1)), int(np.sum(labels[sel] == 0)))

    def expected_accuracy(t):
        correct = 0.0
        for k, (tpr, fpr, n_pos, n_neg) in stats.items():
            p1, p0 = solve_group(tpr, fpr, t)
            correct += n_pos * t + n_neg * (1.0 - (p1 * fpr + p0 * (1.0 - fpr)))
        return correct / len(labels)

    if target is None:
        candidates = sorted({s[0] for s in stats.values()}) + list(np.linspace(0.0, 1.0, N_TARGETS))
        scores = [expected_accuracy(t) for t in candidates]
        target = float(candidates[int(np.argmax(scores))])
    policies = {}
    for k, (tpr, fpr, _, _) in stats.items():
        p1, p0 = solve_group(tpr, fpr, target)
        policies[k] = GroupPolicy(float(p1), float(p0), tpr, fpr)
    return FlipPolicy(policies, float(target))


def apply_postpro(policy: FlipPolicy, preds, groups: Sequence[Hashable], seed: int) -> np.ndarray:
    """Randomized decisions; row i uses the i-th uniform draw of the seeded stream."""
    preds = np.asarray(preds)
    groups = list(groups)
    missing = {g for g in groups if g not in policy.groups}
    if missing:
        raise KeyError(f"policy has no entry for groups {sorted(map(str, missing))}")
    p1 = np.array([policy.groups[g].p1 for g in groups])
    p0 = np.array([policy.groups[g].p0 for g in groups])
    u = np.random.default_rng(seed).random(len(preds))
    prob = np.where(preds == 1, p1, p0)
    return (u < prob).astype(np.int64)
