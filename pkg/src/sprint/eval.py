"""Session evaluation, forgetting metrics, multi-run aggregation and significance tests."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Protocol, Sequence

import numpy as np
from scipy import stats as sps

from .data import SessionSchedule, TabularDataset


class Predictor(Protocol):
    def predict_rows(self, ds: TabularDataset, rows: np.ndarray) -> np.ndarray: ...


@dataclass
class SessionReport:
    session: int
    accuracy: float  # A_t over all classes seen so far, as a fraction
    base_accuracy: float
    novel_accuracy: float  # NaN in session 0
    harmonic_mean: float
    per_class_accuracy: dict[int, float]
    classes: tuple[int, ...]
    confusion: np.ndarray  # rows: true class, cols: predicted, over ``classes``
    mode: str  # "episodic" or "full"
    pseudo_precision: dict[int, float] = field(default_factory=dict)
    pseudo_counts: dict[int, int] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)
    warnings: tuple[str, ...] = ()


def harmonic_mean(a: float, b: float) -> float:
    """2ab/(a+b); zero when either argument is zero."""
    if a <= 0.0 or b <= 0.0:
        return 0.0
    return 2.0 * a * b / (a + b)


def performance_dropping(accuracies: Sequence[float]) -> float:
    """A_0 - A_last (same units as the input; negative means improvement)."""
    if len(accuracies) < 2:
        raise ValueError("PD needs at least two sessions")
    return accuracies[0] - accuracies[-1]


def _confusion(true: np.ndarray, pred: np.ndarray, classes: Sequence[int]) -> np.ndarray:
    pos = {c: i for i, c in enumerate(classes)}
    cm = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for t, p in zip(true, pred):
        cm[pos[int(t)], pos[int(p)]] += 1
    return cm


def _subset_mean(correct: np.ndarray, labels: np.ndarray, classes: Sequence[int]) -> float:
    mask = np.isin(labels, classes)
    return float(correct[mask].mean()) if mask.any() else float("nan")


def evaluate_session(
    predictor: Predictor,
    ds: TabularDataset,
    schedule: SessionSchedule,
    t: int,
    n_episodes: int = 500,
    q: int = 15,
    full_test: bool = False,
    rng: np.random.Generator | None = None,
    episode_predict: Callable[[np.ndarray, np.random.Generator], np.ndarray] | None = None,
) -> SessionReport:
    """Top-1 accuracy over all classes seen up to session t.

    Episodic mode averages over ``n_episodes`` test episodes of ``q`` queries
    per seen class; full mode scores every test row once. The confusion matrix
    is always taken over the full test split, so its row sums equal per-class
    test counts. ``episode_predict(rows, rng)``, when given, replaces the fixed
    predictions inside each episode (episode-sampled prototypes).
    """
    rng = np.random.default_rng() if rng is None else rng
    seen = schedule.seen(t)
    base = schedule.base_classes
    novel = tuple(c for c in seen if c not in base)
    test_rows = {c: ds.rows_of(c, "test") for c in seen}
    empty = [ds.class_names[c] for c, r in test_rows.items() if r.size == 0]
    if empty:
        raise ValueError(f"classes absent from the test split: {empty}")

    rows = np.concatenate([test_rows[c] for c in seen])
    labels = ds.labels[rows]
    preds = predictor.predict_rows(ds, rows)
    confusion = _confusion(labels, preds, seen)

    if full_test:
        correct = preds == labels
        lab = labels
        mode = "full"
    else:
        pos_of = {c: np.flatnonzero(labels == c) for c in seen}
        corr, labs = [], []
        for _ in range(n_episodes):
            pick = np.concatenate([
                rng.choice(pos_of[c], size=q, replace=pos_of[c].size < q) for c in seen
            ])
            if episode_predict is None:
                p = preds[pick]
            else:
                p = episode_predict(rows[pick], rng)
            corr.append(p == labels[pick])
            labs.append(labels[pick])
        correct = np.concatenate(corr)
        lab = np.concatenate(labs)
        mode = "episodic"

    per_class = {int(c): float(correct[lab == c].mean()) for c in seen}
    acc = float(correct.mean())
    base_acc = _subset_mean(correct, lab, base)
    novel_acc = _subset_mean(correct, lab, novel) if novel else float("nan")
    hm = harmonic_mean(base_acc, novel_acc) if novel else float("nan")
    return SessionReport(t, acc, base_acc, novel_acc, hm, per_class, tuple(seen), confusion, mode)


# ------------------------------------------------------------ aggregation


@dataclass
class RunSummary:
    mean: np.ndarray  # per-session mean accuracy over runs
    std: np.ndarray
    pd_per_run: np.ndarray
    pd_mean: float
    pd_std: float
    hm_last_mean: float
    raw: np.ndarray  # (runs, sessions) accuracies

    def as_dict(self, percent: bool = True) -> dict:
        s = 100.0 if percent else 1.0

        def r(x):
            return round(float(x) * s, 2) if np.isfinite(x) else None

        return {
            "sessions": len(self.mean),
            "runs": int(self.raw.shape[0]),
            "acc_mean": [r(x) for x in self.mean],
            "acc_std": [r(x) for x in self.std],
            "final_acc_mean": r(self.mean[-1]),
            "pd_mean": r(self.pd_mean),
            "pd_std": r(self.pd_std),
            "pd_per_run": [r(x) for x in self.pd_per_run],
            "hm_last_mean": r(self.hm_last_mean),
        }


def summarize_runs(runs: Sequence[Sequence[SessionReport]]) -> RunSummary:
    """Aggregate runs; PD is computed per run and then averaged."""
    raw = np.array([[r.accuracy for r in run] for run in runs])
    pds = np.array([performance_dropping(row) for row in raw]) if raw.shape[1] > 1 else np.full(len(raw), np.nan)
    hms = np.array([run[-1].harmonic_mean for run in runs])
    ddof = 1 if len(raw) > 1 else 0
    return RunSummary(
        raw.mean(axis=0),
        raw.std(axis=0, ddof=ddof),
        pds,
        float(pds.mean()),
        float(pds.std(ddof=ddof)),
        float(np.nanmean(hms)) if np.isfinite(hms).any() else float("nan"),
        raw,
    )


# ------------------------------------------------------------ statistics


@dataclass(frozen=True)
class WelchResult:
    t: float
    dof: float
    p: float


def welch_one_sided(a: Sequence[float], b: Sequence[float]) -> WelchResult:
    """Welch's t-test for H1: mean(a) > mean(b).

    Two zero-variance groups give t=+-inf (p=0 or 1) when the means differ and
    p=0.5 when they are equal.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size < 2 or b.size < 2:
        raise ValueError("need at least two samples per group")
    va, vb = a.var(ddof=1) / a.size, b.var(ddof=1) / b.size
    diff = a.mean() - b.mean()
    se2 = va + vb
    if se2 == 0.0:
        if diff == 0.0:
            return WelchResult(0.0, float(a.size + b.size - 2), 0.5)
        return WelchResult(math.copysign(math.inf, diff), float(a.size + b.size - 2), 0.0 if diff > 0 else 1.0)
    t = diff / math.sqrt(se2)
    dof = se2**2 / (va**2 / (a.size - 1) + vb**2 / (b.size - 1))
    return WelchResult(float(t), float(dof), float(sps.t.sf(t, dof)))


def bonferroni(p_values: Sequence[float], k: int | None = None) -> list[float]:
    """Multiply each p by the number of comparisons and clamp to 1."""
    k = len(p_values) if k is None else k
    return [min(1.0, float(p) * k) for p in p_values]


def cohens_d(a: Sequence[float], b: Sequence[float]) -> float:
    """Standardized mean difference using the pooled standard deviation."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    na, nb = a.size, b.size
    pooled = math.sqrt(((na - 1) * a.var(ddof=1) + (nb - 1) * b.var(ddof=1)) / (na + nb - 2))
    diff = a.mean() - b.mean()
    if pooled == 0.0:
        return 0.0 if diff == 0.0 else math.copysign(math.inf, diff)
    return float(diff / pooled)


def significance_table(
    reference: Sequence[float], others: Mapping[str, Sequence[float]]
) -> list[dict]:
    """Reference vs each competitor: mean delta, Cohen's d and Bonferroni p."""
    names = list(others)
    raw = [welch_one_sided(reference, others[n]) for n in names]
    corrected = bonferroni([r.p for r in raw])
    return [
        {
            "compared_to": n,
            "mean_delta": float(np.mean(reference) - np.mean(others[n])),
            "cohens_d": cohens_d(reference, others[n]),
            "t": r.t,
            "dof": r.dof,
            "p": r.p,
            "p_bonferroni": pc,
        }
        for n, r, pc in zip(names, raw, corrected)
    ]
