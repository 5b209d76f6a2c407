"""Group fairness metrics over a decision pipeline with recourse.

Per group we report the acceptance-rate-weighted recourse cost, the social
burden carried by truly positive members, the usual TPR / acceptance rate,
and then worst-group and gap aggregates across groups.

The factored forms (conditional mean cost times the rejection rate) are
always cross-checked against the plain group means they reduce to when
accepted rows carry zero cost.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .data import GroupKey, groups_from_table

# (metric, direction): which extreme is the worst group
AGGREGATED = (("burden", "max"), ("tpr", "min"), ("cost", "max"), ("ar", "min"))
IDENTITY_TOL = 1e-9


class MetricConsistencyError(AssertionError):
    """The factored and plain-mean forms of a metric disagree."""


def _check_identity(factored: float, plain: float, what: str) -> None:
    if abs(factored - plain) > IDENTITY_TOL * max(1.0, abs(plain)):
        raise MetricConsistencyError(f"{what}: factored {factored!r} != plain mean {plain!r}")


def _valid_rows(costs: np.ndarray, rows: np.ndarray) -> np.ndarray:
    # rows whose recourse failed under the "drop" policy carry NaN and are excluded
    return rows[~np.isnan(costs[rows])]


def group_cost(costs, preds, rows) -> float:
    """Expected recourse cost of a group, weighted by its rejection rate.

    mean(cost | pred = 0) * (1 - AR); zero when nobody in the group is
    rejected. Requires cost 0 on accepted rows.
    """
    costs = np.asarray(costs, dtype=np.float64)
    preds = np.asarray(preds)
    rows = _valid_rows(costs, np.asarray(rows))
    if rows.size == 0:
        raise ValueError("empty group")
    c, p = costs[rows], preds[rows]
    if np.any(c[p == 1] != 0.0):
        raise ValueError("positively predicted rows must carry zero cost")
    neg = p == 0
    ar = float(np.mean(p == 1))
    factored = float(c[neg].mean()) * (1.0 - ar) if neg.any() else 0.0
    _check_identity(factored, float(c.mean()), "group cost")
    return factored


def group_burden(costs, preds, labels, rows) -> float:
    """Social burden: mean(cost | y = 1, pred = 0) * (1 - TPR).

    Returns 0 for groups with no positive labels or no false negatives.
    """
    costs = np.asarray(costs, dtype=np.float64)
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    rows = _valid_rows(costs, np.asarray(rows))
    qualified = rows[labels[rows] == 1]
    if qualified.size == 0:
        return 0.0
    c, p = costs[qualified], preds[qualified]
    if np.any(c[p == 1] != 0.0):
        raise ValueError("positively predicted rows must carry zero cost")
    fn = p == 0
    tpr = float(np.mean(p == 1))
    factored = float(c[fn].mean()) * (1.0 - tpr) if fn.any() else 0.0
    _check_identity(factored, float(c.mean()), "social burden")
    return factored


def group_rates(preds, labels, rows) -> tuple[float, float, float]:
    """(TPR, acceptance rate, accuracy) of a group; TPR is NaN without positive labels."""
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    rows = np.asarray(rows)
    if rows.size == 0:
        raise ValueError("empty group")
    p, y = preds[rows], labels[rows]
    tpr = float(np.mean(p[y == 1] == 1)) if np.any(y == 1) else math.nan
    return tpr, float(np.mean(p == 1)), float(np.mean(p == y))


@dataclass
class GroupMetrics:
    group: GroupKey
    n: int
    cost: float
    burden: float
    tpr: float
    ar: float
    accuracy: float
    mean_cost_negative: float
    mean_cost_false_negative: float
    flags: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["group"] = str(self.group)
        d["flags"] = list(self.flags)
        return d


def group_metrics(key: GroupKey, costs, preds, labels, rows) -> GroupMetrics:
    costs = np.asarray(costs, dtype=np.float64)
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    rows = np.asarray(rows)
    valid = _valid_rows(costs, rows)
    tpr, ar, acc = group_rates(preds, labels, rows)
    neg = valid[preds[valid] == 0]
    fn = valid[(preds[valid] == 0) & (labels[valid] == 1)]
    flags = []
    if neg.size == 0:
        flags.append("no_negative_predictions")
    if not np.any(labels[rows] == 1):
        flags.append("no_positive_labels")
    if valid.size < rows.size:
        flags.append("dropped_failed_recourse")
    return GroupMetrics(
        group=key,
        n=int(rows.size),
        cost=group_cost(costs, preds, rows),
        burden=group_burden(costs, preds, labels, rows),
        tpr=tpr,
        ar=ar,
        accuracy=acc,
        mean_cost_negative=float(costs[neg].mean()) if neg.size else 0.0,
        mean_cost_false_negative=float(costs[fn].mean()) if fn.size else 0.0,
        flags=tuple(flags),
    )


@dataclass
class FairnessReport:
    accuracy: float
    groups: list[GroupMetrics]
    worst: dict[str, float]
    gap: dict[str, float]
    failure_rate: float = 0.0
    attrs: tuple[str, ...] = ()

    def summary(self) -> dict[str, float]:
        """Flat Table-2 style row: acc, then worst/gap for burden, tpr, cost, ar."""
        row = {"acc": self.accuracy}
        for metric, _ in AGGREGATED:
            row[f"{metric}_worst"] = self.worst[metric]
            row[f"{metric}_gap"] = self.gap[metric]
        row["failure_rate"] = self.failure_rate
        return row

    def to_dict(self) -> dict:
        return {
            "attrs": list(self.attrs),
            "summary": self.summary(),
            "groups": [g.to_dict() for g in self.groups],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = ["n", "cost", "burden", "tpr", "ar", "accuracy", "mean_cost_negative", "mean_cost_false_negative"]
        w.writerow(["row", *cols, "flags"])
        for g in self.groups:
            w.writerow([str(g.group), *[repr(getattr(g, c)) for c in cols], ";".join(g.flags)])
        for k, v in self.summary().items():
            w.writerow([f"aggregate:{k}", repr(v)] + [""] * len(cols))
        return buf.getvalue()


def aggregate_report(
    groups: Sequence[GroupMetrics], accuracy: float, failure_rate: float = 0.0, attrs: Sequence[str] = ()
) -> FairnessReport:
    """Worst-group value and gap (max - min) for burden, TPR, cost and AR.

    Groups with undefined TPR are left out of the TPR aggregates.
    """
    if not groups:
        raise ValueError("need at least one group")
    worst, gap = {}, {}
    for metric, direction in AGGREGATED:
        vals = [getattr(g, metric) for g in groups]
        vals = [v for v in vals if not math.isnan(v)]
        if not vals:
            worst[metric] = gap[metric] = math.nan
            continue
        worst[metric] = max(vals) if direction == "max" else min(vals)
        gap[metric] = max(vals) - min(vals)
    return FairnessReport(float(accuracy), list(groups), worst, gap, float(failure_rate), tuple(attrs))


def fairness_report(S, labels, preds, costs, attrs: Sequence[str], failure_rate: float = 0.0) -> FairnessReport:
    """Per-group metrics for the groups spanned by ``attrs`` in table ``S``."""

    labels = np.asarray(labels)
    preds = np.asarray(preds)
    groups = [group_metrics(key, costs, preds, labels, idx) for key, idx in groups_from_table(S, attrs)]
    return aggregate_report(groups, float(np.mean(preds == labels)), failure_rate, attrs)
