"""Command-line entry point.

Subcommands::

    fairrecourse ingest DATA --label L --sensitive A [...] -o schema.json
    fairrecourse prepare adult|german|gmsc RAW... -o out.csv [--schema-out s.json]
    fairrecourse run [--config cfg.json] [flags]
    fairrecourse sweep-c --c-values 0 0.3 0.6 [--config cfg.json] [flags]
    fairrecourse demo-paradox [SPEC.json] [-o paradox.csv]
    fairrecourse recourse --model m.json --data d.csv --schema s.json --row 17

Exit codes: 0 success, 1 configuration error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .data import (
    MISSING_TOKENS,
    DataError,
    FeatureSchema,
    SchemaError,
    decode_numeric,
    encode,
    infer_schema,
    read_table,
)
from .datasets import (
    adult_schema,
    german_schema,
    give_me_some_credit_schema,
    prepare_adult,
    prepare_german,
    prepare_give_me_some_credit,
)
from .experiment import ConfigError, ExperimentConfig, run_experiment, sweep_c
from .models import Model, predict, predict_proba
from .recourse import GsConfig, WtConfig, eval_cost, make_method
from .synth import ParadoxSpec, generate_paradox, paradox_table, relative_gap, table_to_csv

logger = logging.getLogger("fairrecourse")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _attr_set(text: str) -> list[str]:
    return [a.strip() for a in text.split(",") if a.strip()]


def _add_experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON experiment config; flags below override its fields")
    p.add_argument("--dataset")
    p.add_argument("--schema")
    p.add_argument("--output-dir", dest="output_dir")
    p.add_argument("--attrs", dest="attribute_sets", action="append", type=_attr_set,
                   help="comma-separated attribute set, repeatable (e.g. --attrs race --attrs race,gender)")
    p.add_argument("--model-kind", choices=("mlp", "logistic"))
    p.add_argument("--hidden", type=int, nargs="*", help="hidden widths of the MLP")
    p.add_argument("--strategies", nargs="+")
    p.add_argument("--methods", nargs="+")
    p.add_argument("--n-splits", dest="n_splits", type=int)
    p.add_argument("--test-fraction", dest="test_fraction", type=float)
    p.add_argument("--seed", dest="master_seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("-C", "--C", dest="C", type=float)
    p.add_argument("--warmup-epochs", dest="warmup_epochs", type=int)
    p.add_argument("--rounds", type=int)
    p.add_argument("--per-batch", dest="per_batch", action="store_true", default=None)
    p.add_argument("--failure-policy", dest="failure_policy")
    p.add_argument("--flip-labels", dest="flip_labels", action="store_true", default=None)
    p.add_argument("--balance", action="store_true", default=None)
    p.add_argument("--postpro-seed", dest="postpro_seed", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--save-traces", dest="save_traces", action="store_true", default=None)


_PLAIN_FIELDS = (
    "dataset", "schema", "output_dir", "attribute_sets", "strategies", "methods", "n_splits",
    "test_fraction", "master_seed", "epochs", "lr", "batch_size", "C", "warmup_epochs", "rounds",
    "per_batch", "failure_policy", "flip_labels", "balance", "postpro_seed", "jobs", "save_traces",
)


def config_from_args(args) -> ExperimentConfig:
    """Config file first, then every flag that was given on the command line."""
    base: dict = {}
    if args.config:
        try:
            base = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(base, dict):
            raise ConfigError("config file must hold a JSON object")
    for name in _PLAIN_FIELDS:
        v = getattr(args, name, None)
        if v is not None:
            base[name] = v
    if args.model_kind is not None or args.hidden is not None:
        model = dict(base.get("model", {}))
        if args.model_kind is not None:
            model["kind"] = args.model_kind
        if args.hidden is not None:
            model["hidden"] = args.hidden
        base["model"] = model
    return ExperimentConfig.from_dict(base)


def _print_table(rows: list[dict], cols: list[str]) -> None:
    print("\t".join(cols))
    for r in rows:
        print("\t".join(f"{r[c]:.4f}" if isinstance(r[c], float) else str(r[c]) for c in cols))


def cmd_run(args) -> int:
    cfg = config_from_args(args)
    rows = run_experiment(cfg)
    _print_table(rows, ["method", "strategy", "attrs", "acc_mean", "burden_worst_mean",
                        "tpr_gap_mean", "cost_worst_mean", "failure_rate_mean"])
    return EXIT_OK


def cmd_sweep_c(args) -> int:
    cfg = config_from_args(args)
    rows = sweep_c(cfg, args.c_values)
    _print_table([r for r in rows if r["metric"] in ("acc", "burden_worst", "tpr_worst")],
                 ["C", "method", "attrs", "metric", "mean", "std"])
    return EXIT_OK


def cmd_demo_paradox(args) -> int:
    try:
        spec = ParadoxSpec.from_json(args.spec) if args.spec else ParadoxSpec()
    except (OSError, json.JSONDecodeError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad paradox spec {args.spec}: {exc}") from None
    ds, preds, costs = generate_paradox(spec)
    rows = paradox_table(ds, preds, costs)
    print(f"{'group':>6} {'n':>6} {'AR':>6} {'cost|rejected':>14} {'group cost':>11}")
    for r in rows:
        print(f"{r['group']:>6} {r['n']:>6} {r['acceptance_rate']:>6.3f} "
              f"{r['conventional_cost']:>14.4f} {r['holistic_cost']:>11.4f}")
    conv = relative_gap([r["conventional_cost"] for r in rows])
    hol = relative_gap([r["holistic_cost"] for r in rows])
    print(f"relative gap, cost among rejected: {conv:.1%}")
    print(f"relative gap, group cost:          {hol:.1%}")
    if args.output:
        Path(args.output).write_text(table_to_csv(rows), encoding="utf-8")
        print(f"wrote {args.output}")
    return EXIT_OK


def _role_map(args, frame: pd.DataFrame) -> dict[str, str]:
    roles = {args.label: "label"}
    for role, names in (("sensitive", args.sensitive), ("ignore", args.ignore),
                        ("categorical", args.categorical), ("numeric", args.numeric)):
        for c in names or ():
            if c in roles:
                raise ConfigError(f"column {c!r} given two roles")
            roles[c] = role
    for c in frame.columns:
        if c not in roles:
            vals = frame[c].str.strip()
            vals = vals[~vals.isin(MISSING_TOKENS)]
            roles[c] = "numeric" if pd.to_numeric(vals, errors="coerce").notna().all() else "categorical"
    return roles


def cmd_ingest(args) -> int:
    frame = pd.read_csv(args.data, dtype=str, keep_default_na=False, skipinitialspace=True)
    frame.columns = [c.strip() for c in frame.columns]
    roles = _role_map(args, frame)
    thresholds = {}
    for item in args.threshold or ():
        name, _, value = item.partition("=")
        try:
            thresholds[name] = float(value)
        except ValueError:
            raise ConfigError(f"bad threshold {item!r}; expected NAME=VALUE") from None
    mutability = {c: False for c in args.immutable or ()}
    schema = infer_schema(args.data, roles, mutability, thresholds)
    schema.save(args.output)
    print(f"wrote {args.output}: {len(schema.model_features)} model features "
          f"({schema.width} encoded columns), sensitive {schema.sensitive_names}, label {schema.label!r}")
    return EXIT_OK


_PREPARERS = {
    "adult": (2, lambda raw, out: prepare_adult(raw[0], raw[1], out), adult_schema),
    "german": (1, lambda raw, out: prepare_german(raw[0], out), german_schema),
    "gmsc": (1, lambda raw, out: prepare_give_me_some_credit(raw[0], out), give_me_some_credit_schema),
}


def cmd_prepare(args) -> int:
    n_raw, prep, schema_fn = _PREPARERS[args.name]
    if len(args.raw) != n_raw:
        raise ConfigError(f"{args.name} needs {n_raw} raw file(s), got {len(args.raw)}")
    n = prep(args.raw, args.output)
    print(f"wrote {args.output}: {n} rows")
    if args.schema_out:
        schema_fn(args.output).save(args.schema_out)
        print(f"wrote {args.schema_out}")
    return EXIT_OK


def _decode_row(schema, x: np.ndarray) -> dict:
    out, j = {}, 0
    for f in schema.model_features:
        if f.kind == "numeric":
            out[f.name] = float(decode_numeric(schema, f.name, x[j]))
        else:
            block = x[j:j + f.width]
            out[f.name] = f.categories[int(np.argmax(block))]
        j += f.width
    return out


def cmd_recourse(args) -> int:
    schema = FeatureSchema.load(args.schema)
    model = Model.load(args.model)
    frame = read_table(args.data, schema)
    if not 0 <= args.row < len(frame):
        raise ConfigError(f"row {args.row} out of range (table has {len(frame)} complete rows)")
    ds = encode(frame.iloc[[args.row]], schema, name="query", clip=True)
    if ds.d != model.d:
        raise ConfigError(f"model expects {model.d} features, schema encodes {ds.d}")
    x = ds.X[0]
    method = make_method(args.method, gs=GsConfig(seed=args.seed), wt=WtConfig())
    res = method.generate(model, x[None, :], schema.mutable_mask())[0]
    before = _decode_row(schema, x)
    after = _decode_row(schema, res.counterfactual)
    report = {
        "row": args.row,
        "method": args.method,
        "prob_before": float(predict_proba(model, x)),
        "prob_after": float(predict_proba(model, res.counterfactual)),
        "pred_before": int(predict(model, x)),
        "success": bool(res.success),
        "eval_cost": float(eval_cost(x, res.counterfactual)),
        "iterations": int(res.iterations),
        "changes": {k: {"from": before[k], "to": after[k]} for k in before if before[k] != after[k]},
    }
    print(json.dumps(report, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fairrecourse", description="Recourse-aware fairness experiments.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    q = sub.add_parser("ingest", help="infer a feature schema from a CSV")
    q.add_argument("data")
    q.add_argument("--label", required=True)
    q.add_argument("--sensitive", nargs="+", required=True)
    q.add_argument("--ignore", nargs="*")
    q.add_argument("--categorical", nargs="*", help="force columns to categorical (others auto-detected)")
    q.add_argument("--numeric", nargs="*", help="force columns to numeric")
    q.add_argument("--immutable", nargs="*", help="features recourse may not change")
    q.add_argument("--threshold", action="append", help="bin a numeric sensitive column, NAME=VALUE")
    q.add_argument("-o", "--output", required=True)
    q.set_defaults(func=cmd_ingest)

    q = sub.add_parser("prepare", help="convert a raw benchmark download into CSV")
    q.add_argument("name", choices=sorted(_PREPARERS))
    q.add_argument("raw", nargs="+", help="raw files (adult: adult.data adult.test)")
    q.add_argument("-o", "--output", required=True)
    q.add_argument("--schema-out")
    q.set_defaults(func=cmd_prepare)

    q = sub.add_parser("run", help="run a multi-split experiment")
    _add_experiment_flags(q)
    q.set_defaults(func=cmd_run)

    q = sub.add_parser("sweep-c", help="run the reweighting strategy for several C values")
    _add_experiment_flags(q)
    q.add_argument("--c-values", type=float, nargs="+", required=True)
    q.set_defaults(func=cmd_sweep_c)

    q = sub.add_parser("demo-paradox", help="equal cost among the rejected, unequal group cost")
    q.add_argument("spec", nargs="?", help="optional JSON with ParadoxSpec fields")
    q.add_argument("-o", "--output", help="write the per-group table as CSV")
    q.set_defaults(func=cmd_demo_paradox)

    q = sub.add_parser("recourse", help="explain a single row")
    q.add_argument("--model", required=True)
    q.add_argument("--data", required=True)
    q.add_argument("--schema", required=True, help="schema the model was trained with (schema_fitted.json)")
    q.add_argument("--row", type=int, required=True, help="0-based index among complete rows")
    q.add_argument("--method", choices=("gs", "wt"), default="wt")
    q.add_argument("--seed", type=int, default=0)
    q.set_defaults(func=cmd_recourse)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, SchemaError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        logger.debug("traceback", exc_info=True)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
