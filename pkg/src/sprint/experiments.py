"""One full session schedule for one method and seed."""
from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .data import (
    SessionSchedule,
    TabularDataset,
    draw_unlabeled_pool,
    fit_normalizer,
    normalized,
    sample_support,
)
from .eval import SessionReport, evaluate_session
from .pseudolabel import audit_pseudo_accuracy
from .trainer import (
    LearnerState,
    Streams,
    TrainConfig,
    dense_replay_session,
    episode_prototype_predictor,
    neuron_expansion_session,
    train_base_session,
    train_classifier_base,
    train_incremental_session,
)

log = logging.getLogger(__name__)

METHODS = ("sprint", "protonet", "dense_replay", "neuron_expansion")


@dataclass
class RunResult:
    method: str
    seed: int
    reports: list[SessionReport]
    final_state: object = None
    audit: list[dict] = field(default_factory=list)

    @property
    def accuracies(self) -> list[float]:
        return [r.accuracy for r in self.reports]

    @property
    def pd(self) -> float:
        return self.accuracies[0] - self.accuracies[-1]

    @property
    def incremental_seconds(self) -> float:
        """Training wall-clock summed over sessions 1..T."""
        return float(sum(r.timings.get("train", 0.0) for r in self.reports[1:]))


def prepare(ds: TabularDataset, schedule: SessionSchedule) -> TabularDataset:
    """z-score every row with statistics of the base training rows only."""
    base_rows = np.concatenate([ds.rows_of(c, "train") for c in schedule.base_classes])
    return normalized(ds, fit_normalizer(ds, base_rows))


def _evaluate(predictor, ds, schedule, t, cfg, streams, episode_predict=None):
    return evaluate_session(
        predictor, ds, schedule, t, cfg.test_episodes, cfg.q, cfg.full_test, streams.eval, episode_predict
    )


def run_single(
    method: str,
    ds: TabularDataset,
    schedule: SessionSchedule,
    cfg: TrainConfig,
    seed: int | None = None,
    normalize: bool = True,
) -> RunResult:
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    seed = cfg.seed if seed is None else seed
    if method == "protonet":
        cfg = dataclasses.replace(cfg, m=0)
    streams = Streams(seed)
    if normalize:
        ds = prepare(ds, schedule)
    if method in ("sprint", "protonet"):
        return _run_proto(method, ds, schedule, cfg, seed, streams)
    return _run_classifier(method, ds, schedule, cfg, seed, streams)


def _run_proto(method, ds, schedule, cfg, seed, streams) -> RunResult:
    t0 = time.perf_counter()
    state: LearnerState = train_base_session(cfg, ds, schedule, streams)
    train_s = time.perf_counter() - t0
    reports = []

    def evaluate(t):
        ep = episode_prototype_predictor(state, ds, cfg) if cfg.proto_source == "episode" else None
        t1 = time.perf_counter()
        rep = _evaluate(state, ds, schedule, t, cfg, streams, ep)
        rep.timings["eval"] = time.perf_counter() - t1
        return rep

    rep = evaluate(0)
    rep.timings["train"] = train_s
    reports.append(rep)
    audit = []
    for t in range(1, schedule.n_sessions + 1):
        novel = schedule.novel(t)
        support = sample_support(ds, novel, cfg.k, streams.support)
        exclude = np.concatenate(list(support.values()))
        pool = draw_unlabeled_pool(ds, schedule, t, cfg.u, cfg.composition, streams.pool, exclude)
        state, tlog = train_incremental_session(state, cfg, ds, schedule, t, support, pool, streams)
        rep = evaluate(t)
        rep.timings.update(phase1=tlog.phase1_s, phase2=tlog.phase2_s, train=tlog.phase1_s + tlog.phase2_s)
        rep.warnings = pool.warnings
        if cfg.m >= 1:
            prec = audit_pseudo_accuracy(tlog.pseudo, pool.audit_labels())
            rep.pseudo_precision = prec
            rep.pseudo_counts = {c: len(v) for c, v in tlog.pseudo.selected.items()}
            for c, p in prec.items():
                audit.append({"session": t, "class": ds.class_names[c],
                              "selected_count": rep.pseudo_counts[c], "precision": p})
        reports.append(rep)
        log.info("%s seed=%d session %d acc=%.4f", method, seed, t, rep.accuracy)
    return RunResult(method, seed, reports, state, audit)


def _run_classifier(method, ds, schedule, cfg, seed, streams) -> RunResult:
    t0 = time.perf_counter()
    st, buffer = train_classifier_base(cfg, ds, schedule, streams)
    rep = _evaluate(st, ds, schedule, 0, cfg, streams)
    rep.timings["train"] = time.perf_counter() - t0
    reports = [rep]
    stored: dict[int, np.ndarray] = {}
    for t in range(1, schedule.n_sessions + 1):
        support = sample_support(ds, schedule.novel(t), cfg.k, streams.support)
        t1 = time.perf_counter()
        if method == "dense_replay":
            st, dlog = dense_replay_session(st, cfg, ds, buffer, t, support, stored, streams)
            train_s = dlog.wallclock_s
        else:
            st = neuron_expansion_session(st, cfg, ds, buffer, t, support, stored, streams)
            train_s = time.perf_counter() - t1
        stored.update(support)
        rep = _evaluate(st, ds, schedule, t, cfg, streams)
        rep.timings["train"] = train_s
        reports.append(rep)
    return RunResult(method, seed, reports, st)
