from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from fairrecourse.data import Dataset, Feature, FeatureSchema

ROOT = Path(__file__).resolve().parents[1]
ADULT_CSV = ROOT / "data" / "adult.csv"
ADULT_SCHEMA = ROOT / "data" / "adult.schema.json"

# pass/fail lines collected by test_acceptance.py
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)


def write_csv(path: Path, rows: list[dict]) -> Path:
    pd.DataFrame(rows).to_csv(path, index=False)
    return path


def numeric_dataset(X, y, groups=None, name="toy") -> Dataset:
    """Dataset whose features are plain [0,1] numerics and one sensitive column ``g``."""
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    groups = ["a"] * n if groups is None else [str(g) for g in groups]
    feats = tuple(Feature(f"x{j}", "numeric", minmax=(0.0, 1.0)) for j in range(d))
    feats += (Feature("g", "categorical", mutable=False, sensitive=True, categories=tuple(sorted(set(groups)))),)
    schema = FeatureSchema(feats, label="y")
    return Dataset(X, y, pd.DataFrame({"g": groups}), schema, name)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def toy_files(tmp_path):
    rng = np.random.default_rng(0)
    n = 300
    X = rng.random((n, 2))
    y = (X[:, 0] + X[:, 1] > 1.0).astype(int)
    sex = rng.choice(["F", "M"], n)
    rows = [{"a": f"{a:.6f}", "b": f"{b:.6f}", "color": rng.choice(["red", "blue"]), "sex": s, "y": int(t)}
            for (a, b), s, t in zip(X, sex, y)]
    data = write_csv(tmp_path / "toy.csv", rows)
    schema = {
        "label": "y", "ignored": [],
        "features": [
            {"name": "a", "kind": "numeric", "mutable": True, "sensitive": False, "minmax": [0.0, 1.0]},
            {"name": "b", "kind": "numeric", "mutable": True, "sensitive": False, "minmax": [0.0, 1.0]},
            {"name": "color", "kind": "categorical", "mutable": False, "sensitive": False, "categories": ["blue", "red"]},
            {"name": "sex", "kind": "categorical", "mutable": False, "sensitive": True, "categories": ["F", "M"]},
        ],
    }
    (tmp_path / "toy.schema.json").write_text(json.dumps(schema))
    return data, tmp_path / "toy.schema.json"
