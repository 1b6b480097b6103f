"""Dense numerical core: the 3-layer MLP encoder, its hand-written backward
pass, and an Adam optimizer that works on any dataclass of arrays.

All arrays are 2-D (weights) or 1-D (biases) ``float64`` numpy arrays.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any, TypeVar

import numpy as np

DTYPE = np.float64

P = TypeVar("P")


class ShapeError(ValueError):
    """Raised when array shapes do not chain as required."""


@dataclass(frozen=True)
class EncoderParams:
    """Weights of f(x) = relu(relu(x W1 + b1) W2 + b2) W3 + b3."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray

    def __post_init__(self):
        d, h1 = self.W1.shape
        if self.W2.shape[0] != h1 or self.W3.shape[0] != self.W2.shape[1]:
            raise ShapeError(
                f"layer shapes do not chain: {self.W1.shape}, {self.W2.shape}, {self.W3.shape}"
            )
        for w, b in ((self.W1, self.b1), (self.W2, self.b2), (self.W3, self.b3)):
            if b.shape != (w.shape[1],):
                raise ShapeError(f"bias shape {b.shape} does not match weight {w.shape}")

    @property
    def in_dim(self) -> int:
        return self.W1.shape[0]

    @property
    def out_dim(self) -> int:
        return self.W3.shape[1]

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return (self.W1.shape[0], self.W1.shape[1], self.W2.shape[1], self.W3.shape[1])


# Gradients have exactly the parameter layout.
ParamGradients = EncoderParams


@dataclass(frozen=True)
class LinearHead:
    """Linear classifier on top of the encoder (baselines only)."""

    W: np.ndarray
    b: np.ndarray

    @property
    def n_classes(self) -> int:
        return self.W.shape[1]


@dataclass
class GradientTape:
    """Activations cached by :func:`forward`; consumed by :func:`backward`."""

    x: np.ndarray
    z1: np.ndarray
    a1: np.ndarray
    z2: np.ndarray
    a2: np.ndarray
    params: EncoderParams
    out_shape: tuple[int, int]


def glorot_uniform(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(DTYPE)


def init_encoder(
    in_dim: int,
    hidden: tuple[int, int] = (1024, 1024),
    out_dim: int = 1024,
    rng: np.random.Generator | None = None,
) -> EncoderParams:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng() if rng is None else rng
    h1, h2 = hidden
    return EncoderParams(
        W1=glorot_uniform(in_dim, h1, rng),
        b1=np.zeros(h1, dtype=DTYPE),
        W2=glorot_uniform(h1, h2, rng),
        b2=np.zeros(h2, dtype=DTYPE),
        W3=glorot_uniform(h2, out_dim, rng),
        b3=np.zeros(out_dim, dtype=DTYPE),
    )


def init_head(in_dim: int, n_classes: int, rng: np.random.Generator) -> LinearHead:
    return LinearHead(W=glorot_uniform(in_dim, n_classes, rng), b=np.zeros(n_classes, dtype=DTYPE))


def forward(params: EncoderParams, batch: np.ndarray) -> tuple[np.ndarray, GradientTape]:
    """Embed a ``(B, D)`` batch; returns ``(B, M)`` embeddings and the tape."""
    x = np.asarray(batch, dtype=DTYPE)
    if x.ndim != 2 or x.shape[1] != params.in_dim:
        raise ShapeError(f"batch shape {x.shape} incompatible with input dim {params.in_dim}")
    z1 = x @ params.W1 + params.b1
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ params.W2 + params.b2
    a2 = np.maximum(z2, 0.0)
    out = a2 @ params.W3 + params.b3
    return out, GradientTape(x, z1, a1, z2, a2, params, out.shape)


def embed(params: EncoderParams, batch: np.ndarray, chunk_size: int = 4096) -> np.ndarray:
    """Forward pass without a tape, chunked over rows."""
    x = np.asarray(batch, dtype=DTYPE)
    if x.shape[0] <= chunk_size:
        return forward(params, x)[0]
    return np.concatenate(
        [forward(params, x[i : i + chunk_size])[0] for i in range(0, x.shape[0], chunk_size)]
    )


def backward(tape: GradientTape, grad_embeddings: np.ndarray) -> ParamGradients:
    """Backpropagate dL/d(embeddings) to every encoder parameter."""
    g = np.asarray(grad_embeddings, dtype=DTYPE)
    if g.shape != tape.out_shape:
        raise ShapeError(f"gradient shape {g.shape} does not match forward output {tape.out_shape}")
    p = tape.params
    dW3 = tape.a2.T @ g
    db3 = g.sum(axis=0)
    g2 = (g @ p.W3.T) * (tape.z2 > 0)
    dW2 = tape.a1.T @ g2
    db2 = g2.sum(axis=0)
    g1 = (g2 @ p.W2.T) * (tape.z1 > 0)
    dW1 = tape.x.T @ g1
    db1 = g1.sum(axis=0)
    return EncoderParams(W1=dW1, b1=db1, W2=dW2, b2=db2, W3=dW3, b3=db3)


def backward_input(tape: GradientTape, grad_embeddings: np.ndarray) -> np.ndarray:
    """Gradient with respect to the input batch (used only by gradient checks)."""
    p = tape.params
    g2 = (grad_embeddings @ p.W3.T) * (tape.z2 > 0)
    g1 = (g2 @ p.W2.T) * (tape.z1 > 0)
    return g1 @ p.W1.T


def head_forward(head: LinearHead, features: np.ndarray) -> np.ndarray:
    """Logits computed one output column at a time.

    A blocked matrix product may round differently once columns are added, so
    per-column products keep every logit independent of the head's width.
    """
    W = np.asarray(head.W)
    cols = [features @ np.ascontiguousarray(W[:, j]) for j in range(W.shape[1])]
    return np.stack(cols, axis=1) + head.b


def head_backward(head: LinearHead, features: np.ndarray, grad_logits: np.ndarray):
    """Returns (head gradients, gradient w.r.t. the head's input features)."""
    return (
        LinearHead(W=features.T @ grad_logits, b=grad_logits.sum(axis=0)),
        grad_logits @ head.W.T,
    )


def _arrays(obj) -> dict[str, np.ndarray]:
    return {f.name: getattr(obj, f.name) for f in dataclasses.fields(obj)}


@dataclass
class AdamState:
    """Adam moment accumulators keyed by parameter field name."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: Any, lr: float = 1e-3, **kwargs) -> "AdamState":
        arrays = _arrays(params)
        return cls(
            lr=lr,
            m={k: np.zeros_like(a) for k, a in arrays.items()},
            v={k: np.zeros_like(a) for k, a in arrays.items()},
            **kwargs,
        )

    def copy(self) -> "AdamState":
        return dataclasses.replace(
            self,
            m={k: a.copy() for k, a in self.m.items()},
            v={k: a.copy() for k, a in self.v.items()},
        )


def adam_step(params: P, grads: P, state: AdamState) -> P:
    """One bias-corrected Adam update (no weight decay).

    Returns new parameters; ``state`` is advanced in place.
    """
    p_arrays = _arrays(params)
    g_arrays = _arrays(grads)
    if set(state.m) != set(p_arrays):
        raise ShapeError("optimizer state does not match parameter layout")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    new = {}
    for name, p in p_arrays.items():
        g = g_arrays[name]
        if g.shape != p.shape or state.m[name].shape != p.shape:
            raise ShapeError(f"shape mismatch for {name}: param {p.shape}, grad {g.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / c1
        v_hat = v / c2
        new[name] = p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return dataclasses.replace(params, **new)


def add_grads(a: P, b: P, wa: float = 1.0, wb: float = 1.0) -> P:
    """Weighted sum ``wa*a + wb*b`` of two gradient dataclasses."""
    ga, gb = _arrays(a), _arrays(b)
    return dataclasses.replace(a, **{k: wa * ga[k] + wb * gb[k] for k in ga})


def is_finite(obj) -> bool:
    return all(np.all(np.isfinite(a)) for a in _arrays(obj).values())


def param_arrays(obj) -> dict[str, np.ndarray]:
    """Name -> array view of a params/gradients dataclass."""
    return _arrays(obj)
