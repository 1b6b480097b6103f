"""Base-session episodic training, mixed incremental sessions, and the two
classifier baselines (dense replay and neuron expansion)."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from . import numkernel as nk
from .data import MemoryBuffer, SessionSchedule, TabularDataset, UnlabeledPool, build_memory_buffer
from .episodes import MEMORY, LABELED, CombinedPool, Episode, sample_base_episode, sample_mixed_episode
from .protocore import (
    PrototypeSet,
    compute_prototypes,
    episode_loss,
    joint_loss,
    log_softmax,
    nearest_prototype_classify,
)
from .pseudolabel import PseudoLabelResult, assign_and_filter, empty_result, init_novel_prototypes

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class NumericalError(RuntimeError):
    """Non-finite loss or gradient during training."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class TrainConfig:
    n_way: int | None = None  # None -> min(5, |base classes|)
    k: int = 5
    q: int = 15
    k_train: int | None = None  # base-session shots; None -> k
    episodes: int = 300
    episodes_base: int | None = None  # None -> episodes
    beta: float = 0.5
    lr: float = 1e-3
    m: int = 100
    u: int = 30000
    M0_per_class: int = 2000
    composition: tuple[float, float, float] = (0.4, 0.4, 0.2)
    seed: int = 0
    metric: str = "euclidean"
    temperature: float = 1.0
    share_base_draw: bool = False
    proto_source: str = "buffer"  # or "episode": per-test-episode prototypes
    hidden: tuple[int, int] = (1024, 1024)
    embed_dim: int = 1024
    chunk_size: int = 4096
    test_episodes: int = 500
    full_test: bool = False
    # classifier baselines
    ce_epochs_base: int = 20
    batch_size: int = 128
    dense_epochs: int = 100
    ne_epochs: int = 30
    ne_batches_per_epoch: int = 3

    def __post_init__(self):
        for name in ("k", "q", "episodes", "u", "M0_per_class", "batch_size", "test_episodes", "embed_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.n_way is not None and self.n_way < 1:
            raise ValueError("n_way must be >= 1")
        if self.m < 0:
            raise ValueError("m must be >= 0")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if self.metric not in ("euclidean", "cosine"):
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.proto_source not in ("buffer", "episode"):
            raise ValueError(f"unknown proto_source {self.proto_source!r}")

    def resolved_n_way(self, n_base: int) -> int:
        return min(5, n_base) if self.n_way is None else self.n_way

    def to_dict(self) -> dict:
        return {f.name: (list(v) if isinstance(v := getattr(self, f.name), tuple) else v)
                for f in dataclasses.fields(self)}

    @classmethod
    def from_dict(cls, raw: Mapping) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - names
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        vals = {k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()}
        return cls(**vals)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


class Streams:
    """Independent RNG streams derived from one seed."""

    NAMES = ("init", "episodes", "buffer", "support", "pool", "eval", "baseline")

    def __init__(self, seed: int):
        children = np.random.SeedSequence(seed).spawn(len(self.NAMES))
        for name, child in zip(self.NAMES, children):
            setattr(self, name, np.random.default_rng(child))


@dataclass
class LearnerState:
    params: nk.EncoderParams
    adam: nk.AdamState
    prototypes: PrototypeSet
    buffer: MemoryBuffer
    session: int = 0
    novel_pools: dict[int, CombinedPool] = field(default_factory=dict)
    pseudo: dict[int, PseudoLabelResult] = field(default_factory=dict)
    losses: dict[int, list[float]] = field(default_factory=dict)
    rows_per_episode: dict[int, list[int]] = field(default_factory=dict)

    def predict_rows(self, ds: TabularDataset, rows: np.ndarray) -> np.ndarray:
        return nearest_prototype_classify(nk.embed(self.params, ds.features[rows]), self.prototypes)


@dataclass
class SessionTrainLog:
    session: int
    losses: list[float]
    phase1_s: float = 0.0
    phase2_s: float = 0.0
    pseudo: PseudoLabelResult | None = None
    rows_per_episode: list[int] = field(default_factory=list)


def _episode_step(params, ep: Episode, ds: TabularDataset, cfg: TrainConfig):
    x = ds.features[np.concatenate([ep.support_idx, ep.query_idx])]
    z, tape = nk.forward(params, x)
    ns = len(ep.support_idx)
    loss = episode_loss(z[:ns], ep.support_labels, z[ns:], ep.query_labels, cfg.metric, cfg.temperature)
    return loss, tape


def _check_finite(value, grads, context: dict):
    if not math.isfinite(value) or not nk.is_finite(grads):
        raise NumericalError(f"non-finite loss/gradient ({value})", context)


def _prototypes_from_pools(params, ds, pools: Mapping[int, np.ndarray], metric, chunk) -> PrototypeSet:
    classes = sorted(pools)
    rows = np.concatenate([pools[c] for c in classes])
    labels = np.concatenate([np.full(len(pools[c]), c) for c in classes])
    return compute_prototypes(nk.embed(params, ds.features[rows], chunk), labels, metric)


def prototype_pools(state: LearnerState) -> dict[int, np.ndarray]:
    """Rows that define each active prototype: buffer for base, S u U* for novel."""
    pools = {c: state.buffer.per_class[c] for c in state.buffer.classes}
    for c, pool in state.novel_pools.items():
        pools[c] = np.concatenate([pool.labeled, pool.pseudo]).astype(np.int64)
    return pools


def train_base_session(
    cfg: TrainConfig,
    ds: TabularDataset,
    schedule: SessionSchedule,
    streams: Streams,
) -> LearnerState:
    """Episodic ProtoNet training on the full base training split."""
    if len(schedule.base_classes) < 2:
        raise ValueError("base session needs at least two classes")
    params = nk.init_encoder(ds.n_features, cfg.hidden, cfg.embed_dim, streams.init)
    adam = nk.AdamState.for_params(params, lr=cfg.lr)
    pools = {c: ds.rows_of(c, "train") for c in schedule.base_classes}
    n_way = cfg.resolved_n_way(len(schedule.base_classes))
    k = cfg.k_train or cfg.k
    n_ep = cfg.episodes if cfg.episodes_base is None else cfg.episodes_base
    losses = []
    for e in range(n_ep):
        ep = sample_base_episode(pools, n_way, k, cfg.q, streams.episodes, origin=LABELED)
        loss, tape = _episode_step(params, ep, ds, cfg)
        grads = nk.backward(tape, np.vstack([loss.grad_support, loss.grad_query]))
        _check_finite(loss.value, grads, {"session": 0, "episode": e, "support": ep.support_idx.tolist()})
        params = nk.adam_step(params, grads, adam)
        losses.append(loss.value)
    buffer = build_memory_buffer(ds, schedule, cfg.M0_per_class, streams.buffer)
    protos = _prototypes_from_pools(params, ds, buffer.per_class, cfg.metric, cfg.chunk_size)
    return LearnerState(params, adam, protos, buffer, 0, losses={0: losses})


def train_incremental_session(
    state: LearnerState,
    cfg: TrainConfig,
    ds: TabularDataset,
    schedule: SessionSchedule,
    t: int,
    support: Mapping[int, np.ndarray],
    pool: UnlabeledPool,
    streams: Streams,
) -> tuple[LearnerState, SessionTrainLog]:
    """Phase 1: pseudo-label once with the frozen session-start encoder.
    Phase 2: mixed rehearsal + semi-supervised episodes, one Adam step each."""
    if t != state.session + 1:
        raise ValueError(f"expected session {state.session + 1}, got {t}")
    novel = schedule.novel(t)
    if set(support) != set(novel) or any(len(support[c]) == 0 for c in novel):
        raise ValueError("support must hold labeled rows for every novel class")
    n_way = cfg.resolved_n_way(len(schedule.base_classes))

    t0 = time.perf_counter()
    s_rows = np.concatenate([support[c] for c in novel])
    s_labels = np.concatenate([np.full(len(support[c]), c) for c in novel])
    novel_protos = init_novel_prototypes(state.params, ds.features[s_rows], s_labels, cfg.k, cfg.metric)
    active = state.prototypes.extend(novel_protos)
    if cfg.m >= 1:
        pseudo = assign_and_filter(
            state.params, pool.features(ds), pool.indices, active, novel, cfg.m, cfg.chunk_size
        )
    else:
        pseudo = empty_result(novel)
    combined = {
        c: CombinedPool(np.asarray(support[c], dtype=np.int64), pseudo.selected_rows(c).astype(np.int64))
        for c in novel
    }
    frozen = pseudo.fingerprint()
    phase1 = time.perf_counter() - t0

    t0 = time.perf_counter()
    params, adam = state.params, state.adam
    losses, rows = [], []
    for e in range(cfg.episodes):
        ep1 = sample_base_episode(state.buffer.per_class, n_way, cfg.k, cfg.q, streams.episodes, MEMORY)
        ep2 = sample_mixed_episode(
            combined, state.buffer.per_class, n_way, cfg.k, cfg.q, streams.episodes,
            base_episode=ep1 if cfg.share_base_draw else None,
        )
        l1, tape1 = _episode_step(params, ep1, ds, cfg)
        l2, tape2 = _episode_step(params, ep2, ds, cfg)
        jl = joint_loss(l1, l2, cfg.beta)
        g1 = nk.backward(tape1, np.vstack([jl.proto.grad_support, jl.proto.grad_query]))
        g2 = nk.backward(tape2, np.vstack([jl.semi.grad_support, jl.semi.grad_query]))
        grads = nk.add_grads(g1, g2)
        _check_finite(jl.value, grads, {"session": t, "episode": e,
                                        "base_rows": ep1.support_idx.tolist(),
                                        "mixed_rows": ep2.support_idx.tolist()})
        params = nk.adam_step(params, grads, adam)
        losses.append(jl.value)
        rows.append(ep1.n_rows + ep2.n_rows)
    if pseudo.fingerprint() != frozen:
        raise AssertionError("pseudo-label pool changed during the session")
    phase2 = time.perf_counter() - t0

    new_state = dataclasses.replace(
        state,
        params=params,
        adam=adam,
        session=t,
        novel_pools={**state.novel_pools, **combined},
        pseudo={**state.pseudo, t: pseudo},
        losses={**state.losses, t: losses},
        rows_per_episode={**state.rows_per_episode, t: rows},
    )
    new_state.prototypes = _prototypes_from_pools(
        params, ds, prototype_pools(new_state), cfg.metric, cfg.chunk_size
    )
    return new_state, SessionTrainLog(t, losses, phase1, phase2, pseudo, rows)


def episode_prototype_predictor(state: LearnerState, ds: TabularDataset, cfg: TrainConfig):
    """Predictor that rebuilds prototypes from k rows per class for each test episode."""
    pools = prototype_pools(state)
    classes = sorted(pools)

    def predict(rows: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        picks = [rng.choice(pools[c], size=cfg.k, replace=len(pools[c]) < cfg.k) for c in classes]
        sup = np.concatenate(picks)
        lab = np.repeat(classes, cfg.k)
        protos = compute_prototypes(nk.embed(state.params, ds.features[sup]), lab, cfg.metric)
        return nearest_prototype_classify(nk.embed(state.params, ds.features[rows]), protos)

    return predict


# ------------------------------------------------------------- checkpoints


def save_checkpoint(path: str | Path, state: LearnerState, cfg: TrainConfig) -> None:
    """``.npz`` dump of encoder weights and prototypes plus JSON metadata."""
    arrays = {f"param_{k}": v for k, v in nk.param_arrays(state.params).items()}
    arrays["proto_ids"] = state.prototypes.class_ids
    arrays["proto_centroids"] = state.prototypes.centroids
    meta = {
        "version": CHECKPOINT_VERSION,
        "session": state.session,
        "metric": state.prototypes.metric,
        "config": cfg.to_dict(),
        "config_hash": cfg.digest(),
    }
    with Path(path).open("wb") as fh:
        np.savez(fh, meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)


def load_checkpoint(path: str | Path) -> tuple[nk.EncoderParams, PrototypeSet, dict]:
    with np.load(path) as z:
        meta = json.loads(z["meta"].tobytes().decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        params = nk.EncoderParams(**{k[6:]: z[k] for k in z.files if k.startswith("param_")})
        protos = PrototypeSet(z["proto_ids"], z["proto_centroids"], meta["metric"])
    return params, protos, meta


# ------------------------------------------------------- classifier baselines


@dataclass
class ClassifierState:
    """Shared MLP backbone plus a linear head over ``classes`` (column order)."""

    params: nk.EncoderParams
    head: nk.LinearHead
    classes: list[int]
    session: int = 0

    def logits(self, x: np.ndarray) -> np.ndarray:
        return nk.head_forward(self.head, nk.embed(self.params, x))

    def predict_rows(self, ds: TabularDataset, rows: np.ndarray) -> np.ndarray:
        return np.asarray(self.classes)[np.argmax(self.logits(ds.features[rows]), axis=1)]


def _ce_step(st: ClassifierState, x, y, opt_enc: nk.AdamState, opt_head: nk.AdamState) -> float:
    col = {c: i for i, c in enumerate(st.classes)}
    yi = np.array([col[int(c)] for c in y])
    z, tape = nk.forward(st.params, x)
    logits = nk.head_forward(st.head, z)
    logp = log_softmax(logits)
    n = len(yi)
    loss = -float(logp[np.arange(n), yi].mean())
    g = np.exp(logp)
    g[np.arange(n), yi] -= 1.0
    g /= n
    g_head, g_z = nk.head_backward(st.head, z, g)
    g_enc = nk.backward(tape, g_z)
    _check_finite(loss, g_enc, {"classes": st.classes})
    st.params = nk.adam_step(st.params, g_enc, opt_enc)
    st.head = nk.adam_step(st.head, g_head, opt_head)
    return loss


def train_classifier_base(
    cfg: TrainConfig, ds: TabularDataset, schedule: SessionSchedule, streams: Streams
) -> tuple[ClassifierState, MemoryBuffer]:
    """Cross-entropy pre-training on the full base split (both baselines)."""
    params = nk.init_encoder(ds.n_features, cfg.hidden, cfg.embed_dim, streams.init)
    classes = list(schedule.base_classes)
    st = ClassifierState(params, nk.init_head(cfg.embed_dim, len(classes), streams.init), classes)
    opt_enc = nk.AdamState.for_params(st.params, lr=cfg.lr)
    opt_head = nk.AdamState.for_params(st.head, lr=cfg.lr)
    rows = np.concatenate([ds.rows_of(c, "train") for c in classes])
    for _ in range(cfg.ce_epochs_base):
        order = streams.baseline.permutation(rows)
        for i in range(0, len(order), cfg.batch_size):
            b = order[i : i + cfg.batch_size]
            _ce_step(st, ds.features[b], ds.labels[b], opt_enc, opt_head)
    buffer = build_memory_buffer(ds, schedule, cfg.M0_per_class, streams.buffer)
    return st, buffer


def expand_head(st: ClassifierState, new_classes, rng: np.random.Generator) -> ClassifierState:
    """Append one output neuron per new class; old columns are copied verbatim."""
    n_new = len(new_classes)
    fresh = nk.init_head(st.head.W.shape[0], n_new, rng)
    head = nk.LinearHead(
        W=np.hstack([st.head.W, fresh.W]),
        b=np.concatenate([st.head.b, fresh.b]),
    )
    return ClassifierState(st.params, head, st.classes + [int(c) for c in new_classes], st.session)


@dataclass
class DenseReplayLog:
    session: int
    epochs: int
    steps_per_epoch: int
    wallclock_s: float


def dense_replay_session(
    st: ClassifierState,
    cfg: TrainConfig,
    ds: TabularDataset,
    buffer: MemoryBuffer,
    t: int,
    support: Mapping[int, np.ndarray],
    stored_novel: Mapping[int, np.ndarray],
    streams: Streams,
    epochs: int | None = None,
) -> tuple[ClassifierState, DenseReplayLog]:
    """Fine-tune on full passes over buffer u all stored novel rows, batch ``cfg.batch_size``."""
    epochs = cfg.dense_epochs if epochs is None else epochs
    st = expand_head(st, sorted(support), streams.baseline)
    st.session = t
    opt_enc = nk.AdamState.for_params(st.params, lr=cfg.lr)
    opt_head = nk.AdamState.for_params(st.head, lr=cfg.lr)
    rows = np.concatenate([buffer.all_indices(), *stored_novel.values(), *support.values()]).astype(np.int64)
    steps = math.ceil(len(rows) / cfg.batch_size)
    t0 = time.perf_counter()
    for _ in range(epochs):
        order = streams.baseline.permutation(rows)
        for i in range(0, len(order), cfg.batch_size):
            b = order[i : i + cfg.batch_size]
            _ce_step(st, ds.features[b], ds.labels[b], opt_enc, opt_head)
    return st, DenseReplayLog(t, epochs, steps, time.perf_counter() - t0)


def neuron_expansion_session(
    st: ClassifierState,
    cfg: TrainConfig,
    ds: TabularDataset,
    buffer: MemoryBuffer,
    t: int,
    support: Mapping[int, np.ndarray],
    stored_novel: Mapping[int, np.ndarray],
    streams: Streams,
) -> ClassifierState:
    """Expand the head, then fine-tune on balanced batches: the K-shot rows of
    each new class plus an equal number of rows replayed from stored data."""
    st = expand_head(st, sorted(support), streams.baseline)
    st.session = t
    opt_enc = nk.AdamState.for_params(st.params, lr=cfg.lr)
    opt_head = nk.AdamState.for_params(st.head, lr=cfg.lr)
    new_rows = np.concatenate([support[c] for c in sorted(support)]).astype(np.int64)
    stored = {**buffer.per_class, **stored_novel}
    old_classes = np.array(sorted(stored))
    rng = streams.baseline
    for _ in range(cfg.ne_epochs):
        for _ in range(cfg.ne_batches_per_epoch):
            # replay is class-balanced over old classes, one row per draw
            drawn = rng.choice(old_classes, size=len(new_rows))
            replay = np.array([rng.choice(stored[c]) for c in drawn], dtype=np.int64)
            b = np.concatenate([new_rows, replay])
            _ce_step(st, ds.features[b], ds.labels[b], opt_enc, opt_head)
    return st
