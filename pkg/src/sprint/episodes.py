"""N-way / k-shot episode construction over dataset row indices."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

LABELED, PSEUDO, MEMORY = "labeled", "pseudo", "memory"


@dataclass(frozen=True)
class Episode:
    """Support and query rows (dataset indices) with the labels used for training.

    For pseudo-labeled rows the label is the assigned class, which may differ
    from the hidden ground truth.
    """

    support_idx: np.ndarray
    support_labels: np.ndarray
    support_origin: np.ndarray
    query_idx: np.ndarray
    query_labels: np.ndarray
    query_origin: np.ndarray
    way: int
    k: int
    q: int
    resampled: bool = False  # some class could not supply k+q distinct rows

    @property
    def n_rows(self) -> int:
        return len(self.support_idx) + len(self.query_idx)

    @property
    def classes(self) -> np.ndarray:
        return np.unique(self.support_labels)


@dataclass(frozen=True)
class CombinedPool:
    """Labeled k-shot rows plus frozen pseudo-labeled rows of one novel class."""

    labeled: np.ndarray
    pseudo: np.ndarray

    def __len__(self) -> int:
        return len(self.labeled) + len(self.pseudo)


def _draw_class(rows: np.ndarray, n: int, rng: np.random.Generator) -> tuple[np.ndarray, bool]:
    if rows.size >= n:
        return rng.choice(rows, size=n, replace=False), False
    short = n - rows.size
    return np.concatenate([rng.permutation(rows), rng.choice(rows, size=short, replace=True)]), True


def _assemble(parts, way, k, q, resampled) -> Episode:
    s_idx, s_lab, s_org, q_idx, q_lab, q_org = ([] for _ in range(6))
    for idx, lab, org in parts:
        s_idx.append(idx[:k])
        q_idx.append(idx[k:])
        s_lab.append(np.full(k, lab, dtype=np.int64))
        q_lab.append(np.full(q, lab, dtype=np.int64))
        s_org.append(org[:k])
        q_org.append(org[k:])
    cat = np.concatenate
    return Episode(cat(s_idx), cat(s_lab), cat(s_org), cat(q_idx), cat(q_lab), cat(q_org), way, k, q, resampled)


def base_parts(
    pools: Mapping[int, np.ndarray], n_way: int, k: int, q: int, rng: np.random.Generator, origin: str
):
    classes = np.array(sorted(pools))
    if n_way > len(classes):
        raise ValueError(f"n_way={n_way} exceeds the {len(classes)} available base classes")
    chosen = rng.choice(classes, size=n_way, replace=False)
    parts, resampled = [], False
    for c in chosen:
        idx, short = _draw_class(np.asarray(pools[c]), k + q, rng)
        resampled |= short
        parts.append((idx, int(c), np.full(k + q, origin, dtype=object)))
    return parts, resampled


def sample_base_episode(
    pools: Mapping[int, np.ndarray],
    n_way: int,
    k: int,
    q: int,
    rng: np.random.Generator,
    origin: str = MEMORY,
) -> Episode:
    """Draw ``n_way`` classes uniformly without replacement, then k support and
    q query rows per class. Classes short of k+q rows are topped up with
    replacement and the episode is flagged ``resampled``."""
    parts, resampled = base_parts(pools, n_way, k, q, rng, origin)
    return _assemble(parts, n_way, k, q, resampled)


def sample_mixed_episode(
    combined: Mapping[int, CombinedPool],
    buffer: Mapping[int, np.ndarray],
    n_way: int,
    k: int,
    q: int,
    rng: np.random.Generator,
    base_episode: Episode | None = None,
) -> Episode:
    """Base classes from the memory buffer plus every current novel class.

    Novel rows come from the labeled + pseudo-labeled pool; when it holds fewer
    than k+q rows, labeled rows are oversampled with replacement. Passing
    ``base_episode`` reuses its base draw instead of sampling a new one.
    """
    if base_episode is not None:
        parts = []
        for c in dict.fromkeys(base_episode.support_labels.tolist()):
            s = base_episode.support_labels == c
            qm = base_episode.query_labels == c
            idx = np.concatenate([base_episode.support_idx[s], base_episode.query_idx[qm]])
            org = np.concatenate([base_episode.support_origin[s], base_episode.query_origin[qm]])
            parts.append((idx, int(c), org))
        resampled = base_episode.resampled
        n_way = base_episode.way
    else:
        parts, resampled = base_parts(buffer, n_way, k, q, rng, MEMORY)

    for c in sorted(combined):
        pool = combined[c]
        if len(pool) == 0:
            raise ValueError(f"novel class {c} has an empty combined pool")
        rows = np.concatenate([pool.labeled, pool.pseudo]).astype(np.int64)
        tags = np.array([LABELED] * len(pool.labeled) + [PSEUDO] * len(pool.pseudo), dtype=object)
        n = k + q
        if rows.size >= n:
            pick = rng.choice(rows.size, size=n, replace=False)
            idx, org = rows[pick], tags[pick]
        else:
            if pool.labeled.size == 0:
                raise ValueError(f"novel class {c} has no labeled rows to oversample")
            order = rng.permutation(rows.size)
            extra = rng.choice(pool.labeled, size=n - rows.size, replace=True)
            idx = np.concatenate([rows[order], extra])
            org = np.concatenate([tags[order], np.full(extra.size, LABELED, dtype=object)])
            resampled = True
        parts.append((idx, int(c), org))
    return _assemble(parts, n_way + len(combined), k, q, resampled)
