"""Float64 math shared by the taggers, the distillation loop and language ID.

Tensors are plain ``numpy.ndarray`` objects of dtype float64 and a
probability distribution is a 1-D array on the simplex.  Nothing here keeps
state except :class:`AdamState`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from tsner.errors import InvalidInputError

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


def _as_finite(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite values")
    return arr


def softmax(logits) -> np.ndarray:
    """Max-shifted softmax over the last axis.

    Accepts a single logit vector or a stack of them (one row per token).
    """
    z = _as_finite(logits, "logits")
    if z.size == 0 or z.ndim == 0:
        raise InvalidInputError("logits must be a non-empty vector")
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def mse_mean(p, q) -> float:
    """Mean over components of the squared difference of two distributions."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise InvalidInputError(f"mse_mean needs equal-length vectors, got {p.shape} and {q.shape}")
    d = p - q
    return float(np.dot(d, d) / d.size)


def nll(q, k: int) -> float:
    """Negative log-likelihood of class ``k`` under ``q``.

    Probabilities below 1e-12 are clamped to that floor and a warning is
    logged instead of returning ``inf``.
    """
    q = np.asarray(q, dtype=np.float64)
    if not 0 <= k < q.size:
        raise InvalidInputError(f"class index {k} outside [0, {q.size})")
    qk = q[k]
    if qk < PROB_FLOOR:
        logger.warning("nll: probability %.3g clamped to %.0e", qk, PROB_FLOOR)
        qk = PROB_FLOOR
    return float(-np.log(qk))


def ortho_penalty(P, gram: str = "outer") -> float:
    """Squared Frobenius norm of ``P Pᵀ - I`` (``gram="outer"``) or ``Pᵀ P - I``."""
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 2:
        raise InvalidInputError(f"P must be two-dimensional, got shape {P.shape}")
    G = _gram(P, gram)
    D = G - np.eye(G.shape[0])
    return float(np.sum(D * D))


def ortho_penalty_grad(P, gram: str = "outer") -> np.ndarray:
    """Gradient of :func:`ortho_penalty` with respect to ``P``."""
    P = np.asarray(P, dtype=np.float64)
    G = _gram(P, gram)
    D = G - np.eye(G.shape[0])
    return 4.0 * (D @ P) if gram == "outer" else 4.0 * (P @ D)


def _gram(P: np.ndarray, gram: str) -> np.ndarray:
    if gram == "outer":
        return P @ P.T
    if gram == "inner":
        return P.T @ P
    raise InvalidInputError(f"gram must be 'outer' or 'inner', got {gram!r}")


@dataclass
class AdamState:
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray]) -> "AdamState":
        return cls(0, [np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.01,
) -> tuple[list[np.ndarray], AdamState]:
    """One AdamW update.  Returns fresh arrays; inputs are left untouched.

    Weight decay shrinks the parameters by ``lr * weight_decay`` before the
    bias-corrected adaptive step is applied, independently of the gradient.
    """
    if lr <= 0:
        raise InvalidInputError("lr must be positive")
    if len(params) != len(grads):
        raise InvalidInputError("params and grads differ in length")
    if not state.m:
        state = AdamState.zeros_like(params)
    if len(state.m) != len(params):
        raise InvalidInputError("optimizer state does not match the parameter list")

    t = state.step + 1
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise InvalidInputError(f"shape mismatch: param {p.shape}, grad {g.shape}")
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        p = p * (1.0 - lr * weight_decay)
        p = p - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        new_params.append(p)
        new_m.append(m)
        new_v.append(v)
    return new_params, AdamState(t, new_m, new_v)


def finite_diff_grad(
    f: Callable[[list[np.ndarray]], float],
    params: Sequence[np.ndarray],
    eps: float = 1e-5,
) -> list[np.ndarray]:
    """Central-difference gradient of ``f`` at ``params``, coordinate by coordinate."""
    work = [np.array(p, dtype=np.float64, copy=True) for p in params]
    out = []
    for p in work:
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = f(work)
            flat[i] = orig - eps
            fm = f(work)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * eps)
        out.append(g)
    return out


def max_relative_error(analytic: Sequence[np.ndarray], numeric: Sequence[np.ndarray], floor: float = 1e-8) -> float:
    """Largest coordinate-wise ``|a - n| / max(|a|, |n|, floor)`` over all blocks."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        a = np.asarray(a, dtype=np.float64)
        n = np.asarray(n, dtype=np.float64)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        if a.size:
            worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def population_variance(values) -> float:
    v = np.asarray(values, dtype=np.float64)
    return float(np.mean((v - v.mean()) ** 2))
