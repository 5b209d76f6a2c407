"""Synthetic populations where equal per-rejection recourse cost hides unequal burden.

Two groups share the same size, the same label rate and the same mean
recourse cost among rejected members, but differ in acceptance rate.
Predictions are planted (no classifier is trained), so acceptance counts
are exact.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .data import Dataset, Feature, FeatureSchema, groups_from_table
from .metrics import group_cost


@dataclass(frozen=True)
class ParadoxSpec:
    sizes: tuple[int, ...] = (1000, 1000)
    acceptance_rates: tuple[float, ...] = (0.0, 0.9)
    mean_cost: float = 0.1
    label_rates: tuple[float, ...] = (0.5, 0.5)
    noise: float = 0.01
    seed: int = 0

    def __post_init__(self):
        k = len(self.sizes)
        if not (len(self.acceptance_rates) == len(self.label_rates) == k):
            raise ValueError("sizes, acceptance_rates and label_rates must have equal length")
        if any(s < 1 for s in self.sizes):
            raise ValueError("group sizes must be at least 1")
        if any(not 0.0 <= r <= 1.0 for r in (*self.acceptance_rates, *self.label_rates)):
            raise ValueError("rates must lie in [0, 1]")
        if self.mean_cost < 0 or self.noise < 0:
            raise ValueError("mean cost and noise must be non-negative")

    @classmethod
    def from_json(cls, path: str | Path) -> "ParadoxSpec":
        d = json.loads(Path(path).read_text())
        for key in ("sizes", "acceptance_rates", "label_rates"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def generate_paradox(spec: ParadoxSpec = ParadoxSpec()) -> tuple[Dataset, np.ndarray, np.ndarray]:
    """Return (dataset, planted predictions, planted per-row costs).

    Rejected rows get cost ``mean_cost + noise * N(0, 1)`` clipped at 0;
    accepted rows cost 0. The two features in ``X`` are uniform noise.
    """
    rng = np.random.default_rng(spec.seed)
    preds, labels, costs, group = [], [], [], []
    for g, (size, ar, lr) in enumerate(zip(spec.sizes, spec.acceptance_rates, spec.label_rates)):
        p = np.zeros(size, dtype=np.int64)
        p[rng.permutation(size)[: int(round(size * ar))]] = 1
        y = np.zeros(size, dtype=np.int64)
        y[rng.permutation(size)[: int(round(size * lr))]] = 1
        c = np.maximum(spec.mean_cost + spec.noise * rng.standard_normal(size), 0.0)
        c[p == 1] = 0.0
        preds.append(p)
        labels.append(y)
        costs.append(c)
        group.extend([str(g)] * size)
    n = len(group)
    schema = FeatureSchema(
        (
            Feature("x1", "numeric", minmax=(0.0, 1.0)),
            Feature("x2", "numeric", minmax=(0.0, 1.0)),
            Feature("group", "categorical", mutable=False, sensitive=True,
                    categories=tuple(str(g) for g in range(len(spec.sizes)))),
        ),
        label="y",
    )
    ds = Dataset(rng.random((n, 2)), np.concatenate(labels), pd.DataFrame({"group": group}), schema, "paradox")
    return ds, np.concatenate(preds), np.concatenate(costs)


def paradox_table(ds: Dataset, preds, costs) -> list[dict]:
    """Per group: conventional cost (mean over rejected) next to the AR-weighted cost."""
    rows = []
    for key, idx in groups_from_table(ds.S, ["group"]):
        rejected = idx[preds[idx] == 0]
        rows.append({
            "group": key.items[0][1],
            "n": int(idx.size),
            "acceptance_rate": float(np.mean(preds[idx] == 1)),
            "conventional_cost": float(costs[rejected].mean()) if rejected.size else 0.0,
            "holistic_cost": group_cost(costs, preds, idx),
        })
    return rows


def relative_gap(values) -> float:
    """(max - min) / min; infinite when the minimum is 0 and the values differ."""
    lo, hi = min(values), max(values)
    if lo == 0.0:
        return 0.0 if hi == 0.0 else float("inf")
    return (hi - lo) / lo


def table_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()
