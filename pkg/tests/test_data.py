from __future__ import annotations

import json

import numpy as np
import pandas as pd
import pytest

from fairrecourse.data import (
    DataError,
    Feature,
    FeatureSchema,
    GroupKey,
    SchemaError,
    balance_downsample,
    decode_numeric,
    encode,
    enumerate_groups,
    fit_numeric_ranges,
    flip_labels,
    group_labels,
    infer_schema,
    load_csv,
    read_table,
    train_test_split,
)
from fairrecourse.datasets import ADULT_ROLES, GERMAN_ROLES, adult_schema

from conftest import ADULT_CSV, ADULT_SCHEMA, numeric_dataset, write_csv


@pytest.fixture
def small_csv(tmp_path):
    rows = [
        {"amount": 10, "color": "a", "sex": "F", "y": 0},
        {"amount": 20, "color": "b", "sex": "M", "y": 1},
        {"amount": 30, "color": "a", "sex": "F", "y": 1},
    ]
    return write_csv(tmp_path / "small.csv", rows)


def small_roles():
    return {"amount": "numeric", "color": "categorical", "sex": "sensitive", "y": "label"}


def test_min_max_scaling_endpoints(small_csv):
    schema = infer_schema(small_csv, small_roles())
    ds = load_csv(small_csv, schema)
    assert ds.X[:, 0].tolist() == [0.0, 0.5, 1.0]


def test_one_hot_follows_category_order(small_csv):
    schema = infer_schema(small_csv, small_roles())
    ds = load_csv(small_csv, schema)
    assert schema.encoded_names() == ["amount", "color=a", "color=b"]
    assert ds.X[1, 1:].tolist() == [0.0, 1.0]


def test_sensitive_columns_go_to_s_only(small_csv):
    schema = infer_schema(small_csv, small_roles())
    ds = load_csv(small_csv, schema)
    assert ds.S["sex"].tolist() == ["F", "M", "F"]
    assert ds.d == sum(f.width for f in schema.features if not f.sensitive) == 3
    assert not any("sex" in n for n in schema.encoded_names())


def test_infer_schema_examples(tmp_path):
    path = write_csv(tmp_path / "t.csv", [{"c": "A", "n": 5, "y": 0}, {"c": "B", "n": 7, "y": 1}, {"c": "A", "n": 5, "y": 1}])
    schema = infer_schema(path, {"c": "categorical", "n": "numeric", "y": "label"})
    by_name = {f.name: f for f in schema.features}
    assert by_name["c"].categories == ("A", "B")
    assert by_name["n"].minmax == (5.0, 7.0)


def test_infer_schema_rejects_non_binary_label(tmp_path):
    path = write_csv(tmp_path / "t.csv", [{"n": i, "y": i} for i in range(3)])
    with pytest.raises(SchemaError, match="not binary"):
        infer_schema(path, {"n": "numeric", "y": "label"})


def test_infer_schema_rejects_constant_and_empty(tmp_path):
    path = write_csv(tmp_path / "t.csv", [{"n": 1, "y": 0}, {"n": 1, "y": 1}])
    with pytest.raises(SchemaError, match="constant"):
        infer_schema(path, {"n": "numeric", "y": "label"})
    empty = tmp_path / "e.csv"
    empty.write_text("n,y\n")
    with pytest.raises(SchemaError):
        infer_schema(empty, {"n": "numeric", "y": "label"})


def test_infer_schema_needs_roles_for_every_column(small_csv):
    roles = small_roles()
    del roles["color"]
    with pytest.raises(SchemaError, match="no role"):
        infer_schema(small_csv, roles)


def test_load_errors(small_csv, tmp_path):
    schema = infer_schema(small_csv, small_roles())
    bad = write_csv(tmp_path / "bad.csv", [{"amount": 10, "color": "a", "sex": "F", "y": 0},
                                           {"amount": "lots", "color": "a", "sex": "F", "y": 1}])
    with pytest.raises(DataError) as exc:
        load_csv(bad, schema)
    assert exc.value.row == 1
    unknown = write_csv(tmp_path / "unk.csv", [{"amount": 10, "color": "z", "sex": "F", "y": 0}])
    with pytest.raises(DataError, match="'z'"):
        load_csv(unknown, schema)
    missing_col = write_csv(tmp_path / "mc.csv", [{"amount": 10, "sex": "F", "y": 0}])
    with pytest.raises(SchemaError, match="color"):
        load_csv(missing_col, schema)


def test_missing_rows_are_dropped(small_csv, tmp_path, caplog):
    schema = infer_schema(small_csv, small_roles())
    path = write_csv(tmp_path / "m.csv", [{"amount": 10, "color": "a", "sex": "F", "y": 0},
                                          {"amount": 20, "color": "?", "sex": "M", "y": 1}])
    with caplog.at_level("INFO"):
        ds = load_csv(path, schema)
    assert len(ds) == 1
    assert "dropping 1 rows" in caplog.text


def test_schema_validation():
    with pytest.raises(SchemaError):
        Feature("c", "categorical", categories=())
    with pytest.raises(SchemaError):
        Feature("c", "categorical", categories=("a", "a"))
    with pytest.raises(SchemaError):
        Feature("n", "numeric", minmax=(3.0, 3.0))
    with pytest.raises(SchemaError):
        Feature("n", "ordinal")


def test_schema_json_round_trip(small_csv, tmp_path):
    schema = infer_schema(small_csv, small_roles(), mutability={"amount": False})
    schema.save(tmp_path / "s.json")
    again = FeatureSchema.load(tmp_path / "s.json")
    assert again == schema
    assert again.mutable_mask().tolist() == [False, True, True]


def test_encoding_round_trip(rng, tmp_path):
    raw = rng.uniform(-50, 250, size=200)
    path = write_csv(tmp_path / "r.csv", [{"v": repr(float(v)), "y": i % 2} for i, v in enumerate(raw)])
    schema = infer_schema(path, {"v": "numeric", "y": "label"})
    ds = load_csv(path, schema)
    assert np.max(np.abs(decode_numeric(schema, "v", ds.X[:, 0]) - raw)) < 1e-9


def test_test_split_is_clipped_to_train_ranges(small_csv):
    schema = infer_schema(small_csv, small_roles())
    frame = read_table(small_csv, schema)
    fitted = fit_numeric_ranges(schema, frame.iloc[:2])
    assert fitted.features[0].minmax == (10.0, 20.0)
    with pytest.raises(DataError):
        encode(frame, fitted)
    assert encode(frame, fitted, clip=True).X[:, 0].tolist() == [0.0, 1.0, 1.0]


def test_split_sizes_and_determinism(rng):
    ds = numeric_dataset(rng.random((10, 2)), rng.integers(0, 2, 10))
    tr, te = train_test_split(ds, 0.3, seed=1)
    assert (len(tr), len(te)) == (7, 3)
    tr2, te2 = train_test_split(ds, 0.3, seed=1)
    assert np.array_equal(tr.X, tr2.X) and np.array_equal(te.X, te2.X)
    # partitions are disjoint and exhaustive: compare row fingerprints
    rows = {tuple(r) for r in ds.X}
    assert {tuple(r) for r in tr.X} | {tuple(r) for r in te.X} == rows
    assert not ({tuple(r) for r in tr.X} & {tuple(r) for r in te.X})


def test_split_seeds_differ(rng):
    ds = numeric_dataset(rng.random((1000, 2)), rng.integers(0, 2, 1000))
    _, a = train_test_split(ds, 0.3, seed=1)
    _, b = train_test_split(ds, 0.3, seed=2)
    assert {tuple(r) for r in a.X} != {tuple(r) for r in b.X}


def test_enumerate_groups_partitions_rows():
    ds = numeric_dataset(np.zeros((6, 1)), [0, 1, 0, 1, 0, 1], groups="MFMFMM")
    groups = enumerate_groups(ds, ["g"])
    assert [str(k) for k, _ in groups] == ["g=F", "g=M"]
    assert sorted(np.concatenate([i for _, i in groups]).tolist()) == list(range(6))


def test_intersectional_groups_and_absent_combinations():
    S = pd.DataFrame({"race": ["W", "W", "N", "N", "W"], "sex": ["M", "F", "M", "F", "M"]})
    ds = numeric_dataset(np.zeros((5, 1)), [0] * 5)
    ds._S = S  # replace the one-column table with two attributes
    groups = enumerate_groups(ds, ["race", "sex"])
    assert len(groups) == 4
    three = enumerate_groups(ds.subset(np.array([0, 1, 2])), ["race", "sex"])
    assert len(three) == 3
    assert GroupKey((("race", "N"), ("sex", "F"))) not in {k for k, _ in three}
    with pytest.raises(KeyError):
        enumerate_groups(ds, ["age"])


def test_group_key_rejects_repeats():
    with pytest.raises(ValueError):
        GroupKey((("a", "1"), ("a", "2")))


def test_group_labels_align_with_groups():
    S = pd.DataFrame({"g": ["x", "y", "x"]})
    labels = group_labels(S, ["g"])
    assert [str(k) for k in labels] == ["g=x", "g=y", "g=x"]


def test_balance_downsample(rng):
    y = np.r_[np.zeros(1000, int), np.ones(100, int)]
    ds = numeric_dataset(rng.random((1100, 1)), y)
    bal = balance_downsample(ds, seed=3)
    assert np.bincount(bal.y).tolist() == [100, 100]
    # every minority row survives
    assert {tuple(r) for r in ds.X[y == 1]} <= {tuple(r) for r in bal.X}
    assert np.array_equal(balance_downsample(ds, seed=3).X, bal.X)
    even = numeric_dataset(rng.random((20, 1)), [0, 1] * 10)
    assert np.array_equal(balance_downsample(even, seed=0).X, even.X)
    with pytest.raises(ValueError):
        balance_downsample(numeric_dataset(rng.random((5, 1)), [1] * 5), seed=0)


def test_flip_labels():
    ds = numeric_dataset(np.zeros((3, 1)), [0, 1, 1])
    assert flip_labels(ds).y.tolist() == [1, 0, 0]
    assert np.array_equal(flip_labels(flip_labels(ds)).y, ds.y)
    assert np.bincount(flip_labels(ds).y).tolist() == np.bincount(ds.y).tolist()[::-1]


def test_dataset_invariants():
    with pytest.raises(ValueError):
        numeric_dataset(np.full((2, 1), 1.5), [0, 1])
    with pytest.raises(ValueError):
        numeric_dataset(np.zeros((2, 1)), [0, 2])
    with pytest.raises(ValueError):
        numeric_dataset(np.zeros((2, 1)), [0, 1, 1])


def test_sensitive_numeric_is_binned(tmp_path):
    path = write_csv(tmp_path / "a.csv", [{"age": a, "n": i, "y": i % 2} for i, a in enumerate([25, 30, 31, 60])])
    schema = infer_schema(path, {"age": "sensitive", "n": "numeric", "y": "label"}, thresholds={"age": 30})
    assert load_csv(path, schema).S["age"].tolist() == ["<=30", "<=30", ">30", ">30"]


@pytest.mark.skipif(not ADULT_CSV.exists(), reason="Adult CSV not prepared")
def test_adult_file_layout():
    header = ADULT_CSV.read_text().split("\n", 1)[0].split(",")
    assert len(header) - 1 == 14  # raw attributes besides the label
    schema = FeatureSchema.load(ADULT_SCHEMA)
    assert set(schema.sensitive_names) == {"race", "gender"}
    assert len(schema.features) + len(schema.ignored) == 14
    assert schema == adult_schema(ADULT_CSV)
    ds = load_csv(ADULT_CSV, schema)
    assert list(ds.S.columns) == ["race", "gender"]
    assert len(ds) == 45222
    assert set(ADULT_ROLES) == set(header)
    assert GERMAN_ROLES["age"] == "sensitive"


def test_schema_file_is_json(small_csv, tmp_path):
    schema = infer_schema(small_csv, small_roles())
    schema.save(tmp_path / "s.json")
    d = json.loads((tmp_path / "s.json").read_text())
    assert {f["name"] for f in d["features"]} == {"amount", "color", "sex"}
