"""Multi-split experiment orchestration and aggregation.

A run trains a base classifier per split, applies each fairness strategy
(none, post-processing, burden reweighting), computes recourse on the test
split for every recourse method, and writes one report per
(method, strategy, attribute set). Aggregates are mean and population std
over splits.
"""
from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import FeatureSchema, balanced_indices, encode, fit_numeric_ranges, group_labels, read_table, split_indices
from .metrics import AGGREGATED, fairness_report
from .misob import MisobConfig, misob_train, write_round_log
from .models import ModelSpec, TrainConfig, init_model, predict, train_weighted
from .postpro import apply_postpro, fit_postpro
from .recourse import FAILURE_POLICIES, GsConfig, WtConfig, make_method, recourse_costs_population, write_trace

logger = logging.getLogger(__name__)

STRATEGIES = ("none", "postpro", "misob")
METRIC_COLUMNS = ["acc"] + [f"{m}_{k}" for m, _ in AGGREGATED for k in ("worst", "gap")] + ["failure_rate"]
OUTPUT_ENV = "FAIRRECOURSE_OUTPUT_DIR"


class ConfigError(ValueError):
    pass


class ExperimentError(RuntimeError):
    """One or more splits failed."""


@dataclass
class ExperimentConfig:
    dataset: str
    schema: str
    output_dir: str = "runs/experiment"
    attribute_sets: list[list[str]] = field(default_factory=lambda: [["race"], ["gender"], ["race", "gender"]])
    model: dict = field(default_factory=lambda: {"kind": "mlp", "hidden": [128, 128]})
    strategies: list[str] = field(default_factory=lambda: list(STRATEGIES))
    methods: list[str] = field(default_factory=lambda: ["gs", "wt"])
    n_splits: int = 10
    test_fraction: float = 0.3
    master_seed: int = 0
    epochs: int = 6
    lr: float = 1e-3
    batch_size: int = 256
    C: float = 0.3
    warmup_epochs: int = 3
    rounds: int = 3
    per_batch: bool = False
    failure_policy: str = "max_observed"
    flip_labels: bool = False
    balance: bool = False
    gs: dict = field(default_factory=dict)
    wt: dict = field(default_factory=dict)
    postpro_seed: int = 0
    jobs: int = 1
    save_traces: bool = False

    def validate(self) -> None:
        if self.n_splits < 1:
            raise ConfigError("n_splits must be at least 1")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("test_fraction must be in (0, 1)")
        bad = [s for s in self.strategies if s not in STRATEGIES]
        if bad or not self.strategies:
            raise ConfigError(f"unknown strategies {bad}; choose from {STRATEGIES}")
        bad = [m for m in self.methods if m not in ("gs", "wt")]
        if bad or not self.methods:
            raise ConfigError(f"unknown recourse methods {bad}")
        if not self.attribute_sets or any(not a for a in self.attribute_sets):
            raise ConfigError("attribute_sets must be a non-empty list of non-empty lists")
        keys = [attrs_key(a) for a in self.attribute_sets]
        if len(set(keys)) != len(keys) or any(len(set(a)) != len(a) for a in self.attribute_sets):
            raise ConfigError(f"attribute_sets contain duplicates: {self.attribute_sets}")
        if self.failure_policy not in FAILURE_POLICIES:
            raise ConfigError(f"failure_policy must be one of {FAILURE_POLICIES}")
        if "misob" in self.strategies and self.failure_policy == "drop":
            raise ConfigError("the misob strategy needs failure_policy max_observed or penalize")
        if self.C < 0:
            raise ConfigError("C must be non-negative")
        try:
            self.model_spec()
            self.train_config(0)
            GsConfig(**self.gs)
            WtConfig(**self.wt)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def model_spec(self) -> ModelSpec:
        return ModelSpec(self.model.get("kind", "mlp"), tuple(self.model.get("hidden", (128, 128))))

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(lr=self.lr, batch_size=self.batch_size, epochs=self.epochs, seed=seed)

    def method(self, name: str, seed: int = 0):
        gs = GsConfig(**{"seed": seed, **self.gs})
        return make_method(name, gs=gs, wt=WtConfig(**self.wt))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config fields {unknown}")
        for req in ("dataset", "schema"):
            if req not in d:
                raise ConfigError(f"config is missing {req!r}")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(d)


def split_seeds(master_seed: int, n: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(master_seed).generate_state(n)]


def attrs_key(attrs) -> str:
    return "+".join(attrs)


def prepare_split(cfg: ExperimentConfig, split: int):
    """Load, optionally flip/balance, split and encode (ranges fitted on train)."""
    schema = FeatureSchema.load(cfg.schema)
    frame = read_table(cfg.dataset, schema)
    seed = split_seeds(cfg.master_seed, cfg.n_splits)[split]
    if cfg.flip_labels or cfg.balance:
        y = encode(frame, schema).y
        if cfg.flip_labels:
            y = 1 - y
            frame = frame.assign(**{schema.label: [str(v) for v in y]})
        if cfg.balance:
            frame = frame.iloc[balanced_indices(y, cfg.master_seed)]
    train_idx, test_idx = split_indices(len(frame), cfg.test_fraction, seed)
    fitted = fit_numeric_ranges(schema, frame.iloc[train_idx])
    train = encode(frame.iloc[train_idx], fitted, name="train")
    test = encode(frame.iloc[test_idx], fitted, name="test", clip=True)
    return train, test, seed


def _reports(method, strategy, test, preds, pop, cfg):
    return [
        ((method, strategy, attrs_key(attrs)), fairness_report(test.S, test.y, preds, pop.costs, attrs, pop.failure_rate))
        for attrs in cfg.attribute_sets
    ]


def postpro_decisions(train, train_pred, test, test_pred, attrs, seed: int):
    """Fit the flip policy on train and apply it to test; the only training-side use of S."""
    policy = fit_postpro(train_pred, train.y, group_labels(train.S, attrs))
    return policy, apply_postpro(policy, test_pred, group_labels(test.S, attrs), seed)


def run_split(cfg: ExperimentConfig, split: int) -> dict:
    """Run one split and persist its reports; returns {(method, strategy, attrs): summary}."""
    out_dir = Path(cfg.output_dir) / f"split_{split:02d}"
    out_dir.mkdir(parents=True, exist_ok=True)
    train, test, seed = prepare_split(cfg, split)
    spec = cfg.model_spec()
    tcfg = cfg.train_config(seed)
    mask = train.schema.mutable_mask()
    logger.info("split %d: seed %d, train %d rows, test %d rows", split, seed, len(train), len(test))

    base = train_weighted(init_model(spec, train.d, seed), train.X, train.y, None, tcfg)
    train.schema.save(out_dir / "schema_fitted.json")
    base.save(out_dir / "model_base.json")
    base_test_pred = predict(base, test.X)
    results = []
    for mname in cfg.methods:
        method = cfg.method(mname, seed)
        base_pop = None
        if "none" in cfg.strategies or "postpro" in cfg.strategies:
            base_pop = recourse_costs_population(base, test.X, method, mask, failure_policy=cfg.failure_policy)
            if cfg.save_traces:
                write_trace(out_dir / f"trace_{mname}_none.csv", test.X, base_pop)
        if "none" in cfg.strategies:
            results += _reports(mname, "none", test, base_test_pred, base_pop, cfg)
        if "postpro" in cfg.strategies:
            train_pred = predict(base, train.X)
            for attrs in cfg.attribute_sets:
                policy, adj = postpro_decisions(train, train_pred, test, base_test_pred, attrs, cfg.postpro_seed)
                policy.save(out_dir / f"postpro_{attrs_key(attrs)}.json")
                pop = base_pop.restrict(adj == 0, cfg.failure_policy)
                rep = fairness_report(test.S, test.y, adj, pop.costs, attrs, pop.failure_rate)
                results.append(((mname, "postpro", attrs_key(attrs)), rep))
        if "misob" in cfg.strategies:
            history = []
            mcfg = MisobConfig(C=cfg.C, warmup_epochs=cfg.warmup_epochs, rounds=cfg.rounds,
                               train=tcfg, method=method, failure_policy=cfg.failure_policy,
                               per_batch=cfg.per_batch)
            model = misob_train(train, spec, mcfg, mask=mask, history=history)
            model.save(out_dir / f"model_misob_{mname}.json")
            write_round_log(out_dir / f"misob_log_{mname}.csv", history)
            pop = recourse_costs_population(model, test.X, method, mask, failure_policy=cfg.failure_policy)
            results += _reports(mname, "misob", test, predict(model, test.X), pop, cfg)

    reports = {}
    for key, rep in results:
        name = "__".join(key)
        (out_dir / f"report__{name}.json").write_text(rep.to_json() + "\n")
        (out_dir / f"report__{name}.csv").write_text(rep.to_csv())
        reports[key] = rep.summary()
    return reports


def aggregate(per_split: list[dict]) -> list[dict]:
    """Mean and population std (ddof=0) of every summary column across splits."""
    keys = list(per_split[0])
    rows = []
    for key in keys:
        method, strategy, attrs = key
        row = {"method": method, "strategy": strategy, "attrs": attrs, "n_splits": len(per_split)}
        for col in METRIC_COLUMNS:
            vals = np.array([s[key][col] for s in per_split], dtype=np.float64)
            row[f"{col}_mean"] = float(np.mean(vals))
            row[f"{col}_std"] = float(np.std(vals))
        rows.append(row)
    return rows


def write_table(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def _run_split_safe(args):
    cfg, k = args
    try:
        return run_split(cfg, k)
    except Exception as exc:  # noqa: BLE001 - every failure is reported per split
        logger.exception("split %d failed", k)
        return exc


def _with_env_output(cfg: ExperimentConfig) -> ExperimentConfig:
    if os.environ.get(OUTPUT_ENV):
        return replace(cfg, output_dir=os.environ[OUTPUT_ENV])
    return cfg


def run_experiment(cfg: ExperimentConfig) -> list[dict]:
    """Run all splits, write per-split reports plus ``aggregate.csv`` / ``aggregate.json``.

    The output directory can be overridden with the environment variable
    ``FAIRRECOURSE_OUTPUT_DIR``.
    """
    return _run(_with_env_output(cfg))


def check_attributes(cfg: ExperimentConfig) -> None:
    """Every evaluated attribute must be a sensitive feature of the schema."""
    try:
        schema = FeatureSchema.load(cfg.schema)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read schema {cfg.schema}: {exc}") from None
    unknown = sorted({a for attrs in cfg.attribute_sets for a in attrs} - set(schema.sensitive_names))
    if unknown:
        raise ConfigError(f"attributes {unknown} are not sensitive features of the schema ({schema.sensitive_names})")


def _run(cfg: ExperimentConfig) -> list[dict]:
    cfg.validate()
    check_attributes(cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    jobs = [(cfg, k) for k in range(cfg.n_splits)]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            per_split = list(pool.map(_run_split_safe, jobs))
    else:
        per_split = [_run_split_safe(j) for j in jobs]
    failed = [(k, r) for k, r in enumerate(per_split) if isinstance(r, Exception)]
    if failed:
        detail = "; ".join(f"split {k}: {type(e).__name__}: {e}" for k, e in failed)
        raise ExperimentError(f"{len(failed)} of {cfg.n_splits} splits failed ({detail})")
    rows = aggregate(per_split)
    write_table(out / "aggregate.csv", rows)
    (out / "aggregate.json").write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")
    return rows


def sweep_c(cfg: ExperimentConfig, c_values) -> list[dict]:
    """Run the misob strategy once per C; writes ``sweep_c.csv`` in long format."""
    c_values = [float(c) for c in c_values]
    if not c_values:
        raise ConfigError("need at least one C value")
    if len(set(c_values)) != len(c_values):
        raise ConfigError(f"duplicate C values in {c_values}")
    if any(c < 0 for c in c_values):
        raise ConfigError("C values must be non-negative")
    cfg = _with_env_output(cfg)
    base_dir = Path(cfg.output_dir)
    long_rows = []
    for c in c_values:
        sub = replace(cfg, C=c, strategies=["misob"], output_dir=str(base_dir / f"C_{c:g}"))
        for row in _run(sub):
            for col in METRIC_COLUMNS:
                long_rows.append({
                    "C": c, "method": row["method"], "attrs": row["attrs"], "metric": col,
                    "mean": row[f"{col}_mean"], "std": row[f"{col}_std"],
                })
    base_dir.mkdir(parents=True, exist_ok=True)
    write_table(base_dir / "sweep_c.csv", long_rows)
    return long_rows
