"""Prototypes, distances, the negative-distance softmax and episode losses.

Losses return gradients with respect to the *embeddings* (support and query);
composing them with :func:`sprint.numkernel.backward` yields parameter
gradients. Prototypes are not detached: every support embedding of class c
receives 1/|S_c| of that prototype's gradient.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

METRICS = ("euclidean", "cosine")
NORM_FLOOR = 1e-12
_DIFF_BUDGET = 1 << 22  # floats per difference block


@dataclass(frozen=True)
class PrototypeSet:
    class_ids: np.ndarray  # (C,) int, no duplicates
    centroids: np.ndarray  # (C, M)
    metric: str = "euclidean"

    def __post_init__(self):
        ids = np.asarray(self.class_ids)
        if len(np.unique(ids)) != len(ids):
            raise ValueError("duplicate class ids in prototype set")
        if self.centroids.shape[0] != len(ids):
            raise ValueError("one centroid per class id required")
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")

    def __len__(self) -> int:
        return len(self.class_ids)

    def index_of(self, labels) -> np.ndarray:
        lookup = {int(c): i for i, c in enumerate(self.class_ids)}
        try:
            return np.array([lookup[int(y)] for y in np.ravel(labels)], dtype=np.int64)
        except KeyError as exc:
            raise ValueError(f"label {exc.args[0]} has no prototype") from None

    def extend(self, other: "PrototypeSet") -> "PrototypeSet":
        return PrototypeSet(
            np.concatenate([self.class_ids, other.class_ids]),
            np.vstack([self.centroids, other.centroids]),
            self.metric,
        )

    def subset(self, class_ids) -> "PrototypeSet":
        idx = self.index_of(class_ids)
        return PrototypeSet(self.class_ids[idx], self.centroids[idx], self.metric)


def compute_prototypes(embeddings: np.ndarray, labels, metric: str = "euclidean") -> PrototypeSet:
    """Class means of ``embeddings``; class ids returned in ascending order."""
    labels = np.asarray(labels)
    if embeddings.shape[0] != labels.shape[0]:
        raise ValueError("one label per embedding required")
    if labels.size == 0:
        raise ValueError("cannot compute prototypes from an empty support set")
    classes, inverse, counts = np.unique(labels, return_inverse=True, return_counts=True)
    sums = np.zeros((len(classes), embeddings.shape[1]))
    np.add.at(sums, inverse, embeddings)
    return PrototypeSet(classes.astype(np.int64), sums / counts[:, None], metric)


def squared_euclidean(x: np.ndarray, p: np.ndarray) -> np.ndarray:
    """``(N, C)`` matrix of ||x_i - p_c||^2, computed from explicit differences."""
    out = np.empty((x.shape[0], p.shape[0]))
    step = max(1, _DIFF_BUDGET // max(1, p.shape[0] * p.shape[1]))
    for i in range(0, x.shape[0], step):
        diff = x[i : i + step, None, :] - p[None, :, :]
        out[i : i + step] = np.einsum("ncm,ncm->nc", diff, diff)
    return out


def _cosine_parts(x, p):
    nx = np.maximum(np.linalg.norm(x, axis=1), NORM_FLOOR)
    npr = np.maximum(np.linalg.norm(p, axis=1), NORM_FLOOR)
    cos = (x @ p.T) / (nx[:, None] * npr[None, :])
    return cos, nx, npr


def distances(x: np.ndarray, protos: PrototypeSet) -> np.ndarray:
    if len(protos) == 0:
        raise ValueError("empty prototype set")
    if x.shape[1] != protos.centroids.shape[1]:
        raise ValueError("embedding dimension does not match prototypes")
    if protos.metric == "cosine":
        return 1.0 - _cosine_parts(x, protos.centroids)[0]
    return squared_euclidean(x, protos.centroids)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def class_posteriors(x: np.ndarray, protos: PrototypeSet, temperature: float = 1.0) -> np.ndarray:
    """Posterior over ``protos.class_ids`` for each query row."""
    return softmax(-distances(x, protos) / temperature)


def nearest_prototype_classify(x: np.ndarray, protos: PrototypeSet) -> np.ndarray:
    """Argmin distance; exact ties go to the lowest class id."""
    d = distances(x, protos)
    order = np.argsort(protos.class_ids, kind="stable")
    # argmin returns the first minimum, so scanning columns in id order breaks ties low.
    return protos.class_ids[order][np.argmin(d[:, order], axis=1)]


@dataclass
class EpisodeLoss:
    value: float
    grad_support: np.ndarray
    grad_query: np.ndarray


def episode_loss(
    support: np.ndarray,
    support_labels,
    query: np.ndarray,
    query_labels,
    metric: str = "euclidean",
    temperature: float = 1.0,
) -> EpisodeLoss:
    """Mean negative log posterior of the query labels under support prototypes."""
    support_labels = np.asarray(support_labels)
    protos = compute_prototypes(support, support_labels, metric)
    q_idx = protos.index_of(query_labels)
    s_idx = protos.index_of(support_labels)
    n_q = query.shape[0]
    P = protos.centroids

    d = distances(query, protos)
    logp = log_softmax(-d / temperature)
    value = -float(logp[np.arange(n_q), q_idx].mean())

    probs = np.exp(logp)
    onehot = np.zeros_like(probs)
    onehot[np.arange(n_q), q_idx] = 1.0
    grad_d = -(probs - onehot) / (n_q * temperature)  # dL/dd, (Nq, C)

    if metric == "euclidean":
        grad_query = 2.0 * (query * grad_d.sum(axis=1, keepdims=True) - grad_d @ P)
        grad_proto = -2.0 * (grad_d.T @ query - P * grad_d.sum(axis=0)[:, None])
    else:
        cos, nx, npr = _cosine_parts(query, P)
        # d = 1 - cos; a norm clamped at the floor is treated as a constant.
        gx_active = (np.linalg.norm(query, axis=1) > NORM_FLOOR)[:, None]
        gp_active = (np.linalg.norm(P, axis=1) > NORM_FLOOR)[:, None]
        grad_cos = -grad_d
        w = grad_cos / (nx[:, None] * npr[None, :])
        grad_query = w @ P - gx_active * ((grad_cos * cos).sum(axis=1) / nx**2)[:, None] * query
        grad_proto = w.T @ query - gp_active * ((grad_cos * cos).sum(axis=0) / npr**2)[:, None] * P

    counts = np.bincount(s_idx, minlength=len(protos)).astype(float)
    grad_support = grad_proto[s_idx] / counts[s_idx, None]
    return EpisodeLoss(value, grad_support, grad_query)


def _scaled(loss: EpisodeLoss, w: float) -> EpisodeLoss:
    return EpisodeLoss(w * loss.value, w * loss.grad_support, w * loss.grad_query)


@dataclass
class JointLoss:
    value: float
    proto: EpisodeLoss  # already multiplied by beta
    semi: EpisodeLoss  # already multiplied by 1 - beta


def joint_loss(proto: EpisodeLoss, semi: EpisodeLoss, beta: float) -> JointLoss:
    """``beta * proto + (1 - beta) * semi``.

    The two terms live on different embedding batches, so their gradients are
    kept as separate weighted blocks; backpropagating both and summing gives
    the gradient of the combined loss.
    """
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    value = beta * proto.value + (1.0 - beta) * semi.value
    return JointLoss(value, _scaled(proto, beta), _scaled(semi, 1.0 - beta))
