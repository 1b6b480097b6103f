"""Gaussian-blob FSCIL streams for desk-scale verification."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import SessionSchedule, TabularDataset, stratified_split


@dataclass(frozen=True)
class BlobSpec:
    n_classes: int = 6
    n_base: int = 4
    dim: int = 16
    center_spacing: float = 10.0  # pairwise distance between class centers
    within_sigma: float = 0.1
    n_per_class: int = 600
    classes_per_session: int = 1
    test_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 3 or self.n_base < 2 or self.n_base >= self.n_classes:
            raise ValueError("need >= 2 base classes and >= 1 novel class")
        if self.within_sigma <= 0 or self.center_spacing <= 0:
            raise ValueError("sigmas and spacing must be positive")
        if self.dim < self.n_classes:
            raise ValueError("dim must be >= n_classes")

    @property
    def separation_ratio(self) -> float:
        return self.center_spacing / self.within_sigma


def make_synthetic(spec: BlobSpec = BlobSpec()) -> tuple[TabularDataset, SessionSchedule]:
    """Isotropic blobs with centers on a randomly rotated simplex.

    Centers sit at ``spacing / sqrt(2)`` along distinct axes, so every pair of
    classes is exactly ``center_spacing`` apart; a random rotation spreads them
    over all ``dim`` features.
    """
    rng = np.random.default_rng(spec.seed)
    rot, _ = np.linalg.qr(rng.standard_normal((spec.dim, spec.dim)))
    centers = (spec.center_spacing / np.sqrt(2.0)) * np.eye(spec.n_classes, spec.dim) @ rot
    x = np.concatenate([
        c + spec.within_sigma * rng.standard_normal((spec.n_per_class, spec.dim)) for c in centers
    ])
    y = np.repeat(np.arange(spec.n_classes), spec.n_per_class)
    ds = TabularDataset(
        x,
        y.astype(np.int64),
        tuple(f"blob{i}" for i in range(spec.n_classes)),
        tuple(f"f{j}" for j in range(spec.dim)),
    )
    ds = stratified_split(ds, spec.test_fraction, spec.seed)
    novel = list(range(spec.n_base, spec.n_classes))
    step = spec.classes_per_session
    schedule = SessionSchedule(
        tuple(range(spec.n_base)),
        tuple(tuple(novel[i : i + step]) for i in range(0, len(novel), step)),
    )
    return ds, schedule


# desk-scale encoder and pool settings that go with the blob presets
DESK_TRAIN = {"hidden": (64, 64), "embed_dim": 32, "m": 20, "u": 2000}

# named blob sets for the CLI, each with its train overrides
PRESETS: dict[str, tuple[BlobSpec, dict]] = {
    "blobs": (BlobSpec(), DESK_TRAIN),
    "blobs-hard": (BlobSpec(within_sigma=1.5, n_per_class=1500), DESK_TRAIN),
}


def preset(name: str) -> tuple[BlobSpec, dict]:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown synthetic preset {name!r}; choose from {sorted(PRESETS)}") from None
