"""Loaders for the two small public reproduction datasets.

Neither file ships with the package. The MNIST subset comes from the optional
``mlxtend`` dependency (500 images per digit); the obesity survey is read from
a local copy of the UCI CSV whose path is given explicitly or through
``SPRINT_OBESITY_CSV``.
"""
from __future__ import annotations

import csv
import os
from pathlib import Path

import numpy as np

from .data import DataError, SessionSchedule, TabularDataset, stratified_split

OBESITY_ENV = "SPRINT_OBESITY_CSV"
OBESITY_FILE = "ObesityDataSet_raw_and_data_sinthetic.csv"
OBESITY_LABEL = "NObeyesdad"
OBESITY_NUMERIC = ("Age", "Height", "Weight", "FCVC", "NCP", "CH2O", "FAF", "TUE")
# fixed category lists keep the one-hot width at 23 whatever subset is loaded
OBESITY_CATEGORICAL = {
    "Gender": ("Female", "Male"),
    "family_history_with_overweight": ("no", "yes"),
    "FAVC": ("no", "yes"),
    "CAEC": ("no", "Sometimes", "Frequently", "Always"),
    "SMOKE": ("no", "yes"),
    "SCC": ("no", "yes"),
    "CALC": ("no", "Sometimes", "Frequently", "Always"),
    "MTRANS": ("Public_Transportation", "Walking", "Automobile", "Motorbike", "Bike"),
}
OBESITY_BASE = ("Insufficient_Weight", "Normal_Weight", "Overweight_Level_I", "Overweight_Level_II")
OBESITY_NOVEL = ("Obesity_Type_I", "Obesity_Type_II", "Obesity_Type_III")


def find_obesity_csv(path: str | Path | None = None) -> Path:
    """Resolve the obesity CSV from an explicit path, the env var, or ./data/."""
    candidates = [path, os.environ.get(OBESITY_ENV), Path("data") / OBESITY_FILE]
    for c in candidates:
        if c and Path(c).is_file():
            return Path(c)
    raise DataError(
        f"obesity CSV not found; download {OBESITY_FILE} from the UCI repository "
        f"and set {OBESITY_ENV} to its path"
    )


def load_obesity(
    path: str | Path | None = None, test_fraction: float = 0.2, seed: int = 0
) -> tuple[TabularDataset, SessionSchedule]:
    """Raw survey CSV -> 8 numeric + 23 one-hot features, 4 base and 3 novel classes."""
    path = find_obesity_csv(path)
    classes = OBESITY_BASE + OBESITY_NOVEL
    names = list(OBESITY_NUMERIC) + [f"{col}={v}" for col, vals in OBESITY_CATEGORICAL.items() for v in vals]
    rows, labels = [], []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {OBESITY_LABEL, *OBESITY_NUMERIC, *OBESITY_CATEGORICAL} - set(reader.fieldnames or ())
        if missing:
            raise DataError(f"{path}: missing columns {sorted(missing)}")
        for lineno, rec in enumerate(reader, start=2):
            try:
                vals = [float(rec[c]) for c in OBESITY_NUMERIC]
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            for col, cats in OBESITY_CATEGORICAL.items():
                v = rec[col].strip()
                if v not in cats:
                    raise DataError(f"{path}:{lineno}: unexpected {col} value {v!r}")
                vals.extend(float(v == c) for c in cats)
            lab = rec[OBESITY_LABEL].strip()
            if lab not in classes:
                raise DataError(f"{path}:{lineno}: unknown class {lab!r}")
            rows.append(vals)
            labels.append(classes.index(lab))
    ds = TabularDataset(np.array(rows), np.array(labels, dtype=np.int64), classes, tuple(names))
    ds = stratified_split(ds, test_fraction, seed)
    schedule = SessionSchedule(tuple(range(4)), ((4,), (5,), (6,)))
    return ds, schedule


def load_mnist_subset(test_fraction: float = 0.2, seed: int = 0) -> tuple[TabularDataset, SessionSchedule]:
    """5000 flattened MNIST digits in [0, 1]; digits 0-5 base, 6-9 one per session."""
    try:
        from mlxtend.data import mnist_data
    except ImportError:
        raise DataError("the MNIST subset needs the optional 'mlxtend' package (pip install artifact[mnist])") from None
    x, y = mnist_data()
    ds = TabularDataset(
        x.astype(np.float64) / 255.0,
        y.astype(np.int64),
        tuple(str(d) for d in range(10)),
        tuple(f"px{i}" for i in range(x.shape[1])),
    )
    ds = stratified_split(ds, test_fraction, seed)
    return ds, SessionSchedule(tuple(range(6)), ((6,), (7,), (8,), (9,)))
