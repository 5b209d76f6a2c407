"""Tabular dataset loading, encoding, grouping and splitting.

Raw CSV files are read against a :class:`FeatureSchema`. Non-sensitive
features are encoded into a numeric matrix in ``[0, 1]`` (min-max scaling
for numerics, one-hot for categoricals). Sensitive attributes never enter
the encoded matrix; they are kept as strings in a separate table that is
only consulted for evaluation and for post-processing baselines.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

MISSING_TOKENS = ("", "?", "NA", "N/A", "nan", "NaN", "null")
ROLES = ("label", "sensitive", "numeric", "categorical", "ignore")


class SchemaError(ValueError):
    """Schema is malformed or does not match a data file."""


class DataError(ValueError):
    """A data file contains a value that cannot be encoded."""

    def __init__(self, message: str, row: int | None = None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


@dataclass(frozen=True)
class Feature:
    name: str
    kind: str  # "numeric" | "categorical"
    mutable: bool = True
    sensitive: bool = False
    minmax: tuple[float, float] | None = None
    categories: tuple[str, ...] | None = None
    # sensitive numerics are binned at this value into "<=t" / ">t"
    threshold: float | None = None

    def __post_init__(self):
        if self.kind not in ("numeric", "categorical"):
            raise SchemaError(f"feature {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "categorical":
            if not self.categories:
                raise SchemaError(f"feature {self.name!r}: empty category list")
            if len(set(self.categories)) != len(self.categories):
                raise SchemaError(f"feature {self.name!r}: duplicate categories")
        elif not self.sensitive:
            if self.minmax is None:
                raise SchemaError(f"feature {self.name!r}: numeric feature needs minmax")
            lo, hi = self.minmax
            if not lo < hi:
                raise SchemaError(f"feature {self.name!r}: constant column (min == max == {lo})")

    @property
    def width(self) -> int:
        if self.sensitive:
            return 0
        return 1 if self.kind == "numeric" else len(self.categories)


@dataclass(frozen=True)
class FeatureSchema:
    features: tuple[Feature, ...]
    label: str
    ignored: tuple[str, ...] = ()

    def __post_init__(self):
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate feature names")
        if self.label in names:
            raise SchemaError(f"label {self.label!r} is also listed as a feature")

    @property
    def model_features(self) -> list[Feature]:
        return [f for f in self.features if not f.sensitive]

    @property
    def sensitive_features(self) -> list[Feature]:
        return [f for f in self.features if f.sensitive]

    @property
    def sensitive_names(self) -> list[str]:
        return [f.name for f in self.sensitive_features]

    @property
    def width(self) -> int:
        return sum(f.width for f in self.features)

    def encoded_names(self) -> list[str]:
        names = []
        for f in self.model_features:
            if f.kind == "numeric":
                names.append(f.name)
            else:
                names.extend(f"{f.name}={c}" for c in f.categories)
        return names

    def mutable_mask(self) -> np.ndarray:
        """Boolean mask over encoded columns; True where recourse may act."""
        return np.concatenate(
            [np.full(f.width, f.mutable, dtype=bool) for f in self.model_features]
        ) if self.model_features else np.zeros(0, dtype=bool)

    def columns(self) -> list[str]:
        return [f.name for f in self.features] + [self.label] + list(self.ignored)

    def to_dict(self) -> dict:
        feats = []
        for f in self.features:
            rec = {"name": f.name, "kind": f.kind, "mutable": f.mutable, "sensitive": f.sensitive}
            if f.minmax is not None:
                rec["minmax"] = list(f.minmax)
            if f.categories is not None:
                rec["categories"] = list(f.categories)
            if f.threshold is not None:
                rec["threshold"] = f.threshold
            feats.append(rec)
        return {"label": self.label, "ignored": list(self.ignored), "features": feats}

    @classmethod
    def from_dict(cls, d: Mapping) -> "FeatureSchema":
        try:
            feats = tuple(
                Feature(
                    name=r["name"],
                    kind=r["kind"],
                    mutable=bool(r.get("mutable", True)),
                    sensitive=bool(r.get("sensitive", False)),
                    minmax=tuple(r["minmax"]) if r.get("minmax") is not None else None,
                    categories=tuple(str(c) for c in r["categories"]) if r.get("categories") else None,
                    threshold=r.get("threshold"),
                )
                for r in d["features"]
            )
            return cls(features=feats, label=d["label"], ignored=tuple(d.get("ignored", ())))
        except KeyError as exc:
            raise SchemaError(f"schema is missing field {exc}") from None

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "FeatureSchema":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True, order=True)
class GroupKey:
    """A (possibly intersectional) sensitive group, e.g. race=White & gender=Female."""

    items: tuple[tuple[str, str], ...]

    def __post_init__(self):
        names = [a for a, _ in self.items]
        if len(set(names)) != len(names):
            raise ValueError(f"attribute repeated in group key {self.items}")

    @property
    def attrs(self) -> tuple[str, ...]:
        return tuple(a for a, _ in self.items)

    def __str__(self) -> str:
        return " & ".join(f"{a}={v}" for a, v in self.items)


class Dataset:
    """Encoded features ``X``, binary labels ``y`` and the sensitive table ``S``.

    ``S`` is exposed through a property so that every read of sensitive data
    goes through a single accessor.
    """

    def __init__(self, X, y, S: pd.DataFrame, schema: FeatureSchema, name: str = ""):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y)
        if X.ndim != 2:
            raise ValueError("X must be two-dimensional")
        if not (len(X) == len(y) == len(S)):
            raise ValueError(f"row counts disagree: X={len(X)} y={len(y)} S={len(S)}")
        if len(y) and not np.isin(y, (0, 1)).all():
            raise ValueError("labels must be 0/1")
        if X.size and (X.min() < 0.0 or X.max() > 1.0):
            raise ValueError("encoded features must lie in [0, 1]")
        if X.shape[1] != schema.width:
            raise ValueError(f"X has {X.shape[1]} columns, schema encodes {schema.width}")
        X.setflags(write=False)
        y = y.astype(np.int64)
        y.setflags(write=False)
        self.X = X
        self.y = y
        self._S = S.reset_index(drop=True)
        self.schema = schema
        self.name = name

    @property
    def S(self) -> pd.DataFrame:
        return self._S

    def __len__(self) -> int:
        return len(self.y)

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.X[idx], self.y[idx], self._S.iloc[idx], self.schema, self.name)

    def with_labels(self, y) -> "Dataset":
        return Dataset(self.X, y, self._S, self.schema, self.name)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.X).tobytes())
        h.update(np.ascontiguousarray(self.y).tobytes())
        return h.hexdigest()[:16]


# ---------------------------------------------------------------------------
# reading and encoding


def _read_raw(path: str | Path) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True, encoding="utf-8")
    return frame.apply(lambda col: col.str.strip())


def _parse_numeric(col: pd.Series, name: str, offset: int = 0) -> np.ndarray:
    values = pd.to_numeric(col, errors="coerce")
    bad = values.isna().to_numpy()
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise DataError(f"column {name!r}: cannot parse {col.iloc[i]!r} as a number", row=int(col.index[i]) + offset)
    return values.to_numpy(dtype=np.float64)


def _parse_labels(col: pd.Series, name: str) -> np.ndarray:
    y = _parse_numeric(col, name)
    if not np.isin(y, (0.0, 1.0)).all():
        extra = sorted(set(np.unique(y)) - {0.0, 1.0})
        raise SchemaError(f"label column {name!r} is not binary (found {extra})")
    return y.astype(np.int64)


def read_table(path: str | Path, schema: FeatureSchema) -> pd.DataFrame:
    """Read a CSV as strings, check its header and drop rows with missing cells.

    The returned frame keeps the original 0-based data-row numbers as index.
    """
    frame = _read_raw(path)
    missing_cols = [c for c in schema.columns() if c not in frame.columns]
    if missing_cols:
        raise SchemaError(f"{path}: missing columns {missing_cols}")
    used = [f.name for f in schema.features] + [schema.label]
    frame = frame[used]
    missing = frame.isin(MISSING_TOKENS).any(axis=1)
    if missing.any():
        logger.info("%s: dropping %d rows with missing values", Path(path).name, int(missing.sum()))
        frame = frame[~missing]
    return frame


def sensitive_value(feature: Feature, raw: str) -> str:
    if feature.threshold is None:
        return raw
    v = float(raw)
    t = feature.threshold
    return f"<={t:g}" if v <= t else f">{t:g}"


def encode(frame: pd.DataFrame, schema: FeatureSchema, name: str = "", clip: bool = False) -> Dataset:
    """Encode a string frame (as returned by :func:`read_table`).

    With ``clip=True`` numeric values outside the schema range are clipped
    into ``[0, 1]``; this is used when encoding a test split with ranges
    fitted on the training split.
    """
    n = len(frame)
    blocks = []
    for f in schema.model_features:
        col = frame[f.name]
        if f.kind == "numeric":
            v = _parse_numeric(col, f.name)
            lo, hi = f.minmax
            z = (v - lo) / (hi - lo)
            if clip:
                z = np.clip(z, 0.0, 1.0)
            elif n and (z.min() < 0.0 or z.max() > 1.0):
                i = int(np.argmax((z < 0.0) | (z > 1.0)))
                raise DataError(f"column {f.name!r}: value {v[i]} outside schema range {f.minmax}", row=int(frame.index[i]))
            blocks.append(z[:, None])
        else:
            lookup = {c: j for j, c in enumerate(f.categories)}
            codes = col.map(lookup)
            unknown = codes.isna().to_numpy()
            if unknown.any():
                vals = sorted(set(col[unknown]))
                raise DataError(f"column {f.name!r}: unknown categories {vals}", row=int(frame.index[np.flatnonzero(unknown)[0]]))
            onehot = np.zeros((n, len(f.categories)))
            onehot[np.arange(n), codes.to_numpy(dtype=np.int64)] = 1.0
            blocks.append(onehot)
    X = np.hstack(blocks) if blocks else np.zeros((n, 0))
    S = pd.DataFrame(
        {f.name: [sensitive_value(f, v) for v in frame[f.name]] for f in schema.sensitive_features},
        index=range(n),
    )
    y = _parse_labels(frame[schema.label], schema.label)
    ds = Dataset(X, y, S, schema, name)
    logger.debug("encoded %s: n=%d d=%d fingerprint=%s", name or "dataset", n, ds.d, ds.fingerprint())
    return ds


def load_csv(path: str | Path, schema: FeatureSchema, name: str | None = None) -> Dataset:
    frame = read_table(path, schema)
    ds = encode(frame, schema, name=name or Path(path).stem)
    logger.info("loaded %s: %d rows, fingerprint %s", path, len(ds), ds.fingerprint())
    return ds


def infer_schema(
    path: str | Path,
    column_roles: Mapping[str, str],
    mutability: Mapping[str, bool] | None = None,
    thresholds: Mapping[str, float] | None = None,
) -> FeatureSchema:
    """Scan a CSV once and build a schema from per-column roles.

    Numeric columns get their observed (min, max); categorical columns get
    their sorted unique values. Sensitive columns are stored as categorical
    unless a binning threshold is given for them.
    """
    mutability = dict(mutability or {})
    thresholds = dict(thresholds or {})
    frame = _read_raw(path)
    if len(frame) == 0:
        raise SchemaError(f"{path}: file has no data rows")
    uncovered = [c for c in frame.columns if c not in column_roles]
    if uncovered:
        raise SchemaError(f"no role given for columns {uncovered}")
    for c, role in column_roles.items():
        if role not in ROLES:
            raise SchemaError(f"column {c!r}: unknown role {role!r}")
        if c not in frame.columns:
            raise SchemaError(f"column {c!r} not found in {path}")
    labels = [c for c, r in column_roles.items() if r == "label"]
    if len(labels) != 1:
        raise SchemaError(f"expected exactly one label column, got {labels}")
    ignored = tuple(c for c in frame.columns if column_roles[c] == "ignore")

    frame = frame[~frame.isin(MISSING_TOKENS).any(axis=1)]
    if len(frame) == 0:
        raise SchemaError(f"{path}: no complete rows")
    _parse_labels(frame[labels[0]], labels[0])

    feats = []
    for c in frame.columns:
        role = column_roles[c]
        if role in ("label", "ignore"):
            continue
        mutable = mutability.get(c, role != "sensitive")
        if role == "numeric":
            v = _parse_numeric(frame[c], c)
            lo, hi = float(v.min()), float(v.max())
            if lo == hi:
                raise SchemaError(f"numeric column {c!r} is constant ({lo})")
            feats.append(Feature(c, "numeric", mutable, False, minmax=(lo, hi)))
        elif role == "categorical":
            feats.append(Feature(c, "categorical", mutable, False, categories=tuple(sorted(frame[c].unique()))))
        else:
            if c in thresholds:
                _parse_numeric(frame[c], c)
                feats.append(Feature(c, "numeric", False, True, threshold=float(thresholds[c])))
            else:
                feats.append(Feature(c, "categorical", False, True, categories=tuple(sorted(frame[c].unique()))))
    return FeatureSchema(tuple(feats), labels[0], ignored)


def fit_numeric_ranges(schema: FeatureSchema, frame: pd.DataFrame) -> FeatureSchema:
    """Return a copy of ``schema`` with numeric (min, max) refitted on ``frame``."""
    feats = []
    for f in schema.features:
        if f.kind == "numeric" and not f.sensitive:
            v = _parse_numeric(frame[f.name], f.name)
            lo, hi = float(v.min()), float(v.max())
            if lo == hi:
                raise SchemaError(f"numeric column {f.name!r} is constant on the fitting rows")
            f = replace(f, minmax=(lo, hi))
        feats.append(f)
    return replace(schema, features=tuple(feats))


def decode_numeric(schema: FeatureSchema, name: str, v):
    f = next(f for f in schema.model_features if f.name == name)
    lo, hi = f.minmax
    return lo + np.asarray(v) * (hi - lo)


# ---------------------------------------------------------------------------
# splitting, grouping, resampling


def split_indices(n: int, test_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    if n < 2:
        raise ValueError("need at least two rows to split")
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must be in (0, 1)")
    perm = np.random.default_rng(seed).permutation(n)
    n_test = int(round(n * test_fraction))
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def train_test_split(ds: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    train_idx, test_idx = split_indices(len(ds), test_fraction, seed)
    return ds.subset(train_idx), ds.subset(test_idx)


def enumerate_groups(ds: Dataset, attrs: Sequence[str]) -> list[tuple[GroupKey, np.ndarray]]:
    """One entry per observed combination of ``attrs``; index lists partition the rows."""
    return groups_from_table(ds.S, attrs)


def groups_from_table(S: pd.DataFrame, attrs: Sequence[str]) -> list[tuple[GroupKey, np.ndarray]]:
    attrs = list(attrs)
    if not attrs:
        raise ValueError("attrs must be non-empty")
    unknown = [a for a in attrs if a not in S.columns]
    if unknown:
        raise KeyError(f"unknown sensitive attributes {unknown}")
    if len(set(attrs)) != len(attrs):
        raise ValueError(f"attribute repeated in {attrs}")
    out = []
    for values, idx in S.groupby(attrs, sort=True).indices.items():
        if not isinstance(values, tuple):
            values = (values,)
        key = GroupKey(tuple(zip(attrs, (str(v) for v in values))))
        out.append((key, np.sort(np.asarray(idx))))
    return out


def group_labels(S: pd.DataFrame, attrs: Sequence[str]) -> np.ndarray:
    """Per-row GroupKey array for ``attrs``."""
    labels = np.empty(len(S), dtype=object)
    for key, idx in groups_from_table(S, attrs):
        for i in idx:
            labels[i] = key
    return labels


def balanced_indices(y, seed: int) -> np.ndarray:
    """Sorted row indices keeping every minority row and an equal-size majority sample."""
    y = np.asarray(y)
    pos = np.flatnonzero(y == 1)
    neg = np.flatnonzero(y == 0)
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("balancing needs both classes present")
    minority, majority = (pos, neg) if len(pos) <= len(neg) else (neg, pos)
    keep = np.random.default_rng(seed).choice(majority, size=len(minority), replace=False)
    return np.sort(np.concatenate([minority, keep]))


def balance_downsample(ds: Dataset, seed: int) -> Dataset:
    """Downsample the majority class to the minority count (row order kept)."""
    return ds.subset(balanced_indices(ds.y, seed))


def flip_labels(ds: Dataset) -> Dataset:
    return ds.with_labels(1 - ds.y)
