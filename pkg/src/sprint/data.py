"""Tabular datasets, class schedules, the base memory buffer and unlabeled pools."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import yaml

log = logging.getLogger(__name__)

STRATA = ("base", "current", "future")
DEFAULT_COMPOSITION = (0.4, 0.4, 0.2)


class DataError(ValueError):
    """Malformed dataset, schedule or split configuration."""


@dataclass(frozen=True)
class TabularDataset:
    features: np.ndarray  # (N, D) float64
    labels: np.ndarray  # (N,) int64 in [0, C)
    class_names: tuple[str, ...]
    feature_names: tuple[str, ...] = ()
    train_idx: np.ndarray | None = None
    test_idx: np.ndarray | None = None

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise DataError("features must be (N, D) with one label per row")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise DataError("label ids must lie in [0, n_classes)")

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def class_id(self, name: str) -> int:
        try:
            return self.class_names.index(name)
        except ValueError:
            raise DataError(f"unknown class {name!r}") from None

    def rows_of(self, class_id: int, split: str = "train") -> np.ndarray:
        idx = {"train": self.train_idx, "test": self.test_idx}[split]
        if idx is None:
            idx = np.arange(self.n_rows)
        return idx[self.labels[idx] == class_id]


@dataclass(frozen=True)
class SessionSchedule:
    base_classes: tuple[int, ...]
    sessions: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        seen: set[int] = set()
        for group in (self.base_classes, *self.sessions):
            if not group:
                raise DataError("every session needs at least one class")
            if seen & set(group) or len(set(group)) != len(group):
                raise DataError("session class lists must be pairwise disjoint")
            seen |= set(group)

    @property
    def n_sessions(self) -> int:
        """Number of incremental sessions T."""
        return len(self.sessions)

    def novel(self, t: int) -> tuple[int, ...]:
        return self.base_classes if t == 0 else self.sessions[t - 1]

    def seen(self, t: int) -> tuple[int, ...]:
        """All classes observed up to and including session t."""
        out = list(self.base_classes)
        for group in self.sessions[:t]:
            out.extend(group)
        return tuple(out)

    def future(self, t: int) -> tuple[int, ...]:
        return tuple(c for group in self.sessions[t:] for c in group)

    def validate_for(self, ds: TabularDataset) -> None:
        for c in self.seen(self.n_sessions):
            if not 0 <= c < ds.n_classes:
                raise DataError(f"schedule references class id {c} outside the dataset")


@dataclass(frozen=True)
class NormalizationStats:
    mean: np.ndarray
    std: np.ndarray


@dataclass(frozen=True)
class MemoryBuffer:
    per_class: Mapping[int, np.ndarray]  # class id -> dataset row indices
    budget: int

    @property
    def classes(self) -> tuple[int, ...]:
        return tuple(sorted(self.per_class))

    def all_indices(self) -> np.ndarray:
        return np.concatenate([self.per_class[c] for c in self.classes])

    def all_labels(self) -> np.ndarray:
        return np.concatenate([np.full(len(self.per_class[c]), c) for c in self.classes])

    def __len__(self) -> int:
        return sum(len(v) for v in self.per_class.values())


@dataclass(frozen=True)
class UnlabeledPool:
    """Unlabeled sample indices. True labels are kept for auditing only."""

    indices: np.ndarray
    _hidden_labels: np.ndarray = field(repr=False)
    composition: tuple[float, float, float]
    strata_counts: Mapping[str, int]
    warnings: tuple[str, ...] = ()

    @property
    def size(self) -> int:
        return len(self.indices)

    def features(self, ds: TabularDataset) -> np.ndarray:
        return ds.features[self.indices]

    def audit_labels(self) -> np.ndarray:
        return self._hidden_labels


# ---------------------------------------------------------------- loading


def load_csv(
    path: str | Path,
    label_column: str,
    class_order: Sequence[str] | None = None,
) -> TabularDataset:
    """Parse a headed CSV of numeric features plus one label column.

    Label strings map to dense ids in ``class_order`` when given, otherwise in
    order of first appearance.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"dataset file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if label_column not in header:
            raise DataError(f"{path}: label column {label_column!r} not in header")
        li = header.index(label_column)
        feature_names = tuple(h for i, h in enumerate(header) if i != li)
        names: list[str] = list(class_order) if class_order is not None else []
        lookup = {n: i for i, n in enumerate(names)}
        rows, labels = [], []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(rec)}")
            lab = rec[li].strip()
            if lab not in lookup:
                if class_order is not None:
                    raise DataError(f"{path}:{lineno}: label {lab!r} not declared in class order")
                lookup[lab] = len(names)
                names.append(lab)
            vals = []
            for j, cell in enumerate(rec):
                if j == li:
                    continue
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(
                        f"{path}:{lineno}: non-numeric value {cell!r} in column {header[j]!r}"
                    ) from None
                if not math.isfinite(v):
                    raise DataError(f"{path}:{lineno}: missing or non-finite value in {header[j]!r}")
                vals.append(v)
            rows.append(vals)
            labels.append(lookup[lab])
    features = np.array(rows, dtype=np.float64).reshape(len(rows), len(feature_names))
    log.info("loaded %s: %d rows, %d features, %d classes", path.name, *features.shape, len(names))
    return TabularDataset(features, np.array(labels, dtype=np.int64), tuple(names), feature_names)


def stratified_split(ds: TabularDataset, test_fraction: float, seed: int) -> TabularDataset:
    """Per-class random train/test split; every class with >= 2 rows gets >= 1 test row."""
    if not 0.0 < test_fraction < 1.0:
        raise DataError("test_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c in range(ds.n_classes):
        rows = rng.permutation(np.flatnonzero(ds.labels == c))
        n_test = min(len(rows) - 1, max(1, round(test_fraction * len(rows)))) if len(rows) > 1 else 0
        test.append(rows[:n_test])
        train.append(rows[n_test:])
    return replace(ds, train_idx=np.sort(np.concatenate(train)), test_idx=np.sort(np.concatenate(test)))


def with_test_file(train: TabularDataset, test: TabularDataset) -> TabularDataset:
    """Stack a separate test file under the training rows."""
    if train.class_names != test.class_names or train.n_features != test.n_features:
        raise DataError("train and test files disagree on classes or feature count")
    n = train.n_rows
    return TabularDataset(
        np.vstack([train.features, test.features]),
        np.concatenate([train.labels, test.labels]),
        train.class_names,
        train.feature_names,
        np.arange(n),
        np.arange(n, n + test.n_rows),
    )


# ------------------------------------------------------------ normalizing


def fit_normalizer(ds: TabularDataset, indices) -> NormalizationStats:
    indices = np.asarray(indices)
    if indices.size == 0:
        raise DataError("cannot fit normalizer on an empty index set")
    x = ds.features[indices]
    std = x.std(axis=0)
    std[std == 0] = 1.0
    return NormalizationStats(x.mean(axis=0), std)


def apply_normalizer(stats: NormalizationStats, x: np.ndarray) -> np.ndarray:
    return (x - stats.mean) / stats.std


def normalized(ds: TabularDataset, stats: NormalizationStats) -> TabularDataset:
    return replace(ds, features=apply_normalizer(stats, ds.features))


# ---------------------------------------------------------- memory / pool


def build_memory_buffer(
    ds: TabularDataset, schedule: SessionSchedule, budget: int, seed: int | np.random.Generator
) -> MemoryBuffer:
    """Uniform subset (without replacement) of at most ``budget`` train rows per base class."""
    if budget < 1:
        raise DataError("memory budget must be >= 1")
    rng = np.random.default_rng(seed)
    per_class = {}
    for c in schedule.base_classes:
        rows = ds.rows_of(c, "train")
        if rows.size == 0:
            raise DataError(f"base class {ds.class_names[c]!r} has no training rows")
        if rows.size > budget:
            rows = np.sort(rng.choice(rows, size=budget, replace=False))
        per_class[c] = rows
    return MemoryBuffer(per_class, budget)


def sample_support(
    ds: TabularDataset, classes: Sequence[int], k: int, rng: np.random.Generator
) -> dict[int, np.ndarray]:
    """k labeled training rows per novel class."""
    out = {}
    for c in classes:
        rows = ds.rows_of(c, "train")
        if rows.size < k:
            raise DataError(f"class {ds.class_names[c]!r} has {rows.size} rows, fewer than k={k}")
        out[c] = rng.choice(rows, size=k, replace=False)
    return out


def _largest_remainder(total: int, weights: np.ndarray) -> np.ndarray:
    raw = total * weights
    counts = np.floor(raw).astype(int)
    short = total - counts.sum()
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:short]] += 1
    return counts


def draw_unlabeled_pool(
    ds: TabularDataset,
    schedule: SessionSchedule,
    t: int,
    u: int,
    composition: Sequence[float] = DEFAULT_COMPOSITION,
    seed: int | np.random.Generator = 0,
    exclude: np.ndarray | None = None,
) -> UnlabeledPool:
    """Mix of base, current-novel and future-class training rows for session t.

    ``exclude`` (the session's labeled support rows) never enters the pool.
    Empty strata with positive weight are dropped and the remaining weights
    renormalized; if a stratum cannot supply its share, ``u`` is reduced so the
    composition is kept. Both events are recorded in ``warnings``.
    """
    if u < 1:
        raise DataError("pool size u must be >= 1")
    comp = np.asarray(composition, dtype=float)
    if comp.shape != (3,) or np.any(comp < 0) or abs(comp.sum() - 1.0) > 1e-9:
        raise DataError("composition must be three non-negative fractions summing to 1")
    rng = np.random.default_rng(seed)
    excluded = np.array([], dtype=np.int64) if exclude is None else np.ravel(exclude)
    groups = (schedule.base_classes, schedule.novel(t), schedule.future(t))
    strata = []
    for classes in groups:
        rows = np.concatenate([ds.rows_of(c, "train") for c in classes]) if classes else np.array([], int)
        strata.append(rows[~np.isin(rows, excluded)].astype(np.int64))

    warnings = []
    for name, rows, w in zip(STRATA, strata, comp):
        if w > 0 and rows.size == 0:
            warnings.append(f"stratum {name!r} is empty; renormalizing composition")
    comp = np.where([s.size > 0 for s in strata], comp, 0.0)
    if comp.sum() == 0:
        raise DataError("every requested stratum of the unlabeled pool is empty")
    comp = comp / comp.sum()

    feasible = min((s.size / w for s, w in zip(strata, comp) if w > 0), default=u)
    if feasible < u:
        new_u = int(math.floor(feasible + 1e-9))
        warnings.append(f"pool capped from u={u} to {new_u} by available rows")
        u = new_u
    counts = _largest_remainder(u, comp)
    counts = np.minimum(counts, [s.size for s in strata])

    chosen = [rng.choice(s, size=n, replace=False) if n else np.array([], int) for s, n in zip(strata, counts)]
    indices = np.concatenate(chosen).astype(np.int64)
    perm = rng.permutation(indices.size)
    indices = indices[perm]
    for w in warnings:
        log.warning("session %d: %s", t, w)
    return UnlabeledPool(
        indices,
        ds.labels[indices],
        tuple(float(c) for c in comp),
        dict(zip(STRATA, (int(n) for n in counts))),
        tuple(warnings),
    )


# ---------------------------------------------------------- split config

SPLIT_KEYS = {
    "dataset", "label_column", "base_classes", "sessions", "M0_per_class", "u",
    "composition", "test_fraction", "test_file", "split_seed", "name",
}


@dataclass(frozen=True)
class SplitConfig:
    dataset: Path
    label_column: str
    base_classes: tuple[str, ...]
    sessions: tuple[tuple[str, ...], ...]
    M0_per_class: int = 2000
    u: int = 30000
    composition: tuple[float, float, float] = DEFAULT_COMPOSITION
    test_fraction: float | None = 0.2
    test_file: Path | None = None
    split_seed: int = 0
    name: str = ""

    @property
    def class_order(self) -> tuple[str, ...]:
        return self.base_classes + tuple(c for s in self.sessions for c in s)


def parse_split_config(raw: Mapping, base_dir: Path | None = None) -> SplitConfig:
    unknown = set(raw) - SPLIT_KEYS
    if unknown:
        raise DataError(f"unknown split config keys: {sorted(unknown)}")
    for key in ("dataset", "label_column", "base_classes", "sessions"):
        if key not in raw:
            raise DataError(f"split config missing required key {key!r}")
    base_dir = base_dir or Path.cwd()

    def resolve(p):
        p = Path(p).expanduser()
        return p if p.is_absolute() else base_dir / p

    sessions = tuple(tuple(str(c) for c in (s if isinstance(s, list) else [s])) for s in raw["sessions"])
    return SplitConfig(
        dataset=resolve(raw["dataset"]),
        label_column=str(raw["label_column"]),
        base_classes=tuple(str(c) for c in raw["base_classes"]),
        sessions=sessions,
        M0_per_class=int(raw.get("M0_per_class", 2000)),
        u=int(raw.get("u", 30000)),
        composition=tuple(float(c) for c in raw.get("composition", DEFAULT_COMPOSITION)),
        test_fraction=raw.get("test_fraction", None if "test_file" in raw else 0.2),
        test_file=resolve(raw["test_file"]) if raw.get("test_file") else None,
        split_seed=int(raw.get("split_seed", 0)),
        name=str(raw.get("name", Path(raw["dataset"]).stem)),
    )


def load_split_config(path: str | Path) -> SplitConfig:
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        raw = yaml.safe_load(fh) or {}
    return parse_split_config(raw, path.parent)


def load_split(cfg: SplitConfig) -> tuple[TabularDataset, SessionSchedule]:
    """Load the dataset named by ``cfg`` and build its train/test split and schedule."""
    ds = load_csv(cfg.dataset, cfg.label_column, cfg.class_order)
    if cfg.test_file is not None:
        ds = with_test_file(ds, load_csv(cfg.test_file, cfg.label_column, cfg.class_order))
    else:
        ds = stratified_split(ds, float(cfg.test_fraction), cfg.split_seed)
    schedule = SessionSchedule(
        tuple(ds.class_id(c) for c in cfg.base_classes),
        tuple(tuple(ds.class_id(c) for c in s) for s in cfg.sessions),
    )
    schedule.validate_for(ds)
    return ds, schedule
