"""Preparation of the raw benchmark files into schema-ready CSVs.

Nothing here downloads anything: every function takes paths to the raw
files as distributed by their original sources.
"""
from __future__ import annotations

import csv
from pathlib import Path

import pandas as pd

from .data import FeatureSchema, infer_schema

ADULT_RAW_COLUMNS = [
    "age", "workclass", "fnlwgt", "education", "education-num", "marital-status",
    "occupation", "relationship", "race", "gender", "capital-gain", "capital-loss",
    "hours-per-week", "native-country", "income",
]

ADULT_ROLES = {
    "age": "numeric",
    "workclass": "categorical",
    "fnlwgt": "numeric",
    "education": "ignore",  # redundant with education-num
    "education-num": "numeric",
    "marital-status": "categorical",
    "occupation": "categorical",
    "relationship": "categorical",
    "race": "sensitive",
    "gender": "sensitive",
    "capital-gain": "numeric",
    "capital-loss": "numeric",
    "hours-per-week": "numeric",
    "native-country": "categorical",
    "income": "label",
}
ADULT_MUTABILITY = {"age": False}

GERMAN_RAW_COLUMNS = [
    "status", "duration", "credit_history", "purpose", "credit_amount", "savings",
    "present_employment", "installment_rate", "personal_status_sex", "other_debtors",
    "present_residence_since", "property", "age", "installment_plans", "housing",
    "number_of_existing_credits", "job", "number_of_people_liable_for", "telephone",
    "foreign_worker", "credit",
]
_GERMAN_NUMERIC = {
    "duration", "credit_amount", "installment_rate", "present_residence_since",
    "number_of_existing_credits", "number_of_people_liable_for",
}
GERMAN_ROLES = {
    c: ("numeric" if c in _GERMAN_NUMERIC else "categorical") for c in GERMAN_RAW_COLUMNS
}
GERMAN_ROLES.update({"age": "sensitive", "credit": "label"})
GERMAN_MUTABILITY = {"personal_status_sex": False, "foreign_worker": False}

GMSC_LABEL = "SeriousDlqin2yrs"
GMSC_ROLES = {
    GMSC_LABEL: "label",
    "RevolvingUtilizationOfUnsecuredLines": "numeric",
    "age": "sensitive",
    "NumberOfTime30-59DaysPastDueNotWorse": "numeric",
    "DebtRatio": "numeric",
    "MonthlyIncome": "numeric",
    "NumberOfOpenCreditLinesAndLoans": "numeric",
    "NumberOfTimes90DaysLate": "numeric",
    "NumberRealEstateLoansOrLineOfCredit": "numeric",
    "NumberOfTime60-89DaysPastDueNotWorse": "numeric",
    "NumberOfDependents": "numeric",
}
AGE_THRESHOLD = 30.0


def _binarize(value: str, positive: set[str], yes: str, no: str) -> str:
    if value == "?":
        return value
    return yes if value in positive else no


def prepare_adult(data_path: str | Path, test_path: str | Path, out_path: str | Path) -> int:
    """Merge the UCI ``adult.data`` / ``adult.test`` files into one CSV.

    Categorical attributes are collapsed to two levels the way common
    recourse benchmarks do (Private / Non-Private workclass, Married /
    Non-Married, and so on). ``?`` cells are kept so that loading drops
    those rows. Returns the number of rows written.
    """
    frames = []
    for path in (data_path, test_path):
        df = pd.read_csv(path, header=None, names=ADULT_RAW_COLUMNS, dtype=str,
                         skipinitialspace=True, comment="|", keep_default_na=False)
        frames.append(df[df["age"].str.len() > 0])
    df = pd.concat(frames, ignore_index=True).apply(lambda c: c.str.strip())
    df["income"] = df["income"].str.rstrip(".").map({"<=50K": "0", ">50K": "1"})
    df["workclass"] = df["workclass"].map(lambda v: _binarize(v, {"Private"}, "Private", "Non-Private"))
    df["marital-status"] = df["marital-status"].map(
        lambda v: _binarize(v, {"Married-civ-spouse", "Married-AF-spouse"}, "Married", "Non-Married"))
    df["occupation"] = df["occupation"].map(
        lambda v: _binarize(v, {"Exec-managerial", "Prof-specialty"}, "Managerial-Specialist", "Other"))
    df["relationship"] = df["relationship"].map(lambda v: _binarize(v, {"Husband"}, "Husband", "Non-Husband"))
    df["race"] = df["race"].map(lambda v: _binarize(v, {"White"}, "White", "Non-White"))
    df["native-country"] = df["native-country"].map(lambda v: _binarize(v, {"United-States"}, "US", "Non-US"))
    if df["income"].isna().any():
        raise ValueError("unexpected income values in raw Adult files")
    df.to_csv(out_path, index=False, quoting=csv.QUOTE_MINIMAL)
    return len(df)


def prepare_german(raw_path: str | Path, out_path: str | Path) -> int:
    """Convert UCI ``german.data`` (space separated, coded) to CSV.

    The label ``credit`` becomes 1 for good and 0 for bad credit risk.
    """
    df = pd.read_csv(raw_path, sep=r"\s+", header=None, names=GERMAN_RAW_COLUMNS, dtype=str)
    df["credit"] = df["credit"].map({"1": "1", "2": "0"})
    if df["credit"].isna().any():
        raise ValueError("unexpected credit codes in german.data")
    df.to_csv(out_path, index=False)
    return len(df)


def prepare_give_me_some_credit(raw_path: str | Path, out_path: str | Path) -> int:
    """Drop the unnamed index column of Kaggle's ``cs-training.csv``.

    Labels are left as distributed (1 = distress); flipping and
    class balancing happen at experiment time.
    """
    df = pd.read_csv(raw_path, dtype=str, keep_default_na=False)
    df = df[[c for c in df.columns if c in GMSC_ROLES]]
    df.to_csv(out_path, index=False)
    return len(df)


def adult_schema(csv_path: str | Path) -> FeatureSchema:
    return infer_schema(csv_path, ADULT_ROLES, ADULT_MUTABILITY)


def german_schema(csv_path: str | Path) -> FeatureSchema:
    return infer_schema(csv_path, GERMAN_ROLES, GERMAN_MUTABILITY, thresholds={"age": AGE_THRESHOLD})


def give_me_some_credit_schema(csv_path: str | Path) -> FeatureSchema:
    return infer_schema(csv_path, GMSC_ROLES, thresholds={"age": AGE_THRESHOLD})
