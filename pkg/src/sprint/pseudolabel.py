"""Session-start pseudo-labeling with top-m nearest-prototype filtering."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .numkernel import EncoderParams, embed
from .protocore import PrototypeSet, compute_prototypes, distances, nearest_prototype_classify


@dataclass(frozen=True)
class PseudoLabelResult:
    pool_indices: np.ndarray  # dataset rows of the pool, in pool order
    assigned: np.ndarray  # nearest active class per pool sample
    assigned_distance: np.ndarray  # distance to that class's prototype
    selected: Mapping[int, np.ndarray]  # novel class -> positions into the pool, nearest first

    def selected_rows(self, c: int) -> np.ndarray:
        """Dataset row indices of the pseudo-labeled samples of class ``c``."""
        return self.pool_indices[self.selected[c]]

    def fingerprint(self) -> tuple:
        return tuple((c, tuple(self.selected[c].tolist())) for c in sorted(self.selected))


def empty_result(novel_classes: Iterable[int]) -> PseudoLabelResult:
    none = np.array([], dtype=np.int64)
    return PseudoLabelResult(none, none, np.array([]), {int(c): none for c in novel_classes})


def init_novel_prototypes(
    params: EncoderParams,
    support_x: np.ndarray,
    support_labels,
    k: int,
    metric: str = "euclidean",
) -> PrototypeSet:
    """Mean embedding of the k labeled rows of each novel class."""
    support_labels = np.asarray(support_labels)
    classes, counts = np.unique(support_labels, return_counts=True)
    bad = classes[counts != k]
    if bad.size:
        raise ValueError(f"classes {bad.tolist()} do not have exactly k={k} support rows")
    return compute_prototypes(embed(params, support_x), support_labels, metric)


def select_top_m(
    assigned: np.ndarray, dist: np.ndarray, novel_classes: Sequence[int], m: int
) -> dict[int, np.ndarray]:
    """For each novel class keep its ``m`` nearest assignees (ties: lower pool position)."""
    out = {}
    for c in novel_classes:
        members = np.flatnonzero(assigned == c)
        order = np.lexsort((members, dist[members]))
        out[int(c)] = members[order[:m]]
    return out


def assign_and_filter(
    params: EncoderParams,
    pool_x: np.ndarray,
    pool_indices: np.ndarray,
    protos: PrototypeSet,
    novel_classes: Sequence[int],
    m: int,
    chunk_size: int = 4096,
) -> PseudoLabelResult:
    """Assign every pool sample to its nearest active prototype, base classes
    included, and keep the top-m closest per novel class. Samples nearest to a
    base (or earlier novel) prototype are discarded."""
    if m < 1:
        raise ValueError("m must be >= 1")
    missing = set(int(c) for c in novel_classes) - set(protos.class_ids.tolist())
    if missing:
        raise ValueError(f"no prototype for novel classes {sorted(missing)}")
    if len(pool_indices) == 0:
        return empty_result(novel_classes)
    z = embed(params, pool_x, chunk_size)
    d = distances(z, protos)
    assigned = nearest_prototype_classify(z, protos)
    col = protos.index_of(assigned)
    assigned_d = d[np.arange(len(z)), col]
    return PseudoLabelResult(
        np.asarray(pool_indices), assigned, assigned_d, select_top_m(assigned, assigned_d, novel_classes, m)
    )


def audit_pseudo_accuracy(result: PseudoLabelResult, hidden_labels: np.ndarray) -> dict[int, float]:
    """Per-class precision of the selected pseudo-labels (NaN when nothing was selected).

    ``hidden_labels`` are the pool's true labels in pool order. Audit only;
    never fed back into training.
    """
    out = {}
    for c, pos in result.selected.items():
        out[c] = float(np.mean(hidden_labels[pos] == c)) if len(pos) else float("nan")
    return out


AUDIT_COLUMNS = ("run_id", "session", "class", "selected_count", "precision")


def write_audit_csv(path: str | Path, rows: Iterable[Mapping]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=AUDIT_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: r.get(k, "") for k in AUDIT_COLUMNS})
