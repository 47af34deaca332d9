"""Combining several teachers, and weighting them by language similarity.

The similarity between a sentence and source language ``k`` is a low-rank
bilinear form ``s = (U g)ᵀ (V μ_k)`` of the sentence embedding ``g`` (mean
of frozen embedding rows) and a learned language embedding ``μ_k``.  ``U``,
``V`` and ``P = [μ_1 … μ_K]`` are fitted by classifying source sentences
into their language; the teacher weights are the target corpus average of
``softmax(s / τ)``, with τ the population variance of all target scores.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from tsner.errors import ConfigError, InvalidInputError
from tsner.numerics import AdamState, adam_step, ortho_penalty, ortho_penalty_grad, population_variance, softmax

logger = logging.getLogger(__name__)

SIMPLEX_TOL = 1e-12
DEGENERATE_VARIANCE = 1e-12


def uniform_weights(K: int) -> np.ndarray:
    if K < 1:
        raise InvalidInputError("need at least one teacher")
    return np.full(K, 1.0 / K)


def is_simplex(alpha, tol: float = SIMPLEX_TOL) -> bool:
    a = np.asarray(alpha, dtype=np.float64)
    return a.ndim == 1 and a.size > 0 and bool(np.all(a >= 0)) and abs(float(a.sum()) - 1.0) <= tol


def combine(dists, alpha) -> np.ndarray:
    """Weighted sum of K distributions for one token; ``dists`` is (K, C)."""
    dists = np.asarray(dists, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    if dists.ndim != 2 or dists.shape[0] != alpha.shape[0]:
        raise InvalidInputError(f"{alpha.shape[0]} weights for {dists.shape[0]} distributions")
    return alpha @ dists


def combine_many(dists, alpha) -> np.ndarray:
    """:func:`combine` applied to every token: (K, L, C) -> (L, C)."""
    dists = np.asarray(dists, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    if dists.ndim != 3 or dists.shape[0] != alpha.shape[0]:
        raise InvalidInputError(f"{alpha.shape[0]} weights for {dists.shape[0]} teachers")
    return np.tensordot(alpha, dists, axes=1)


def average_embeddings(tables: Sequence[np.ndarray]) -> np.ndarray:
    """Element-wise mean of several embedding tables (the frozen sentence encoder)."""
    if not tables:
        raise InvalidInputError("no embedding tables")
    out = np.zeros_like(tables[0])
    for t in tables:
        out = out + t
    return out / len(tables)


def sentence_embedding(Eg: np.ndarray, sentence) -> np.ndarray:
    ids = np.asarray(sentence, dtype=np.int64)
    if ids.size == 0:
        raise InvalidInputError("empty sentence")
    if ids.min() < 0 or ids.max() >= Eg.shape[0]:
        raise InvalidInputError(f"token id outside [0, {Eg.shape[0]})")
    return Eg[ids].mean(axis=0)


def sentence_embeddings(Eg: np.ndarray, sentences: Sequence) -> np.ndarray:
    return np.stack([sentence_embedding(Eg, s) for s in sentences])


def bilinear_similarity(g, U, V, mu) -> float:
    """``gᵀ Uᵀ V μ`` evaluated as ``(U g)·(V μ)``."""
    g, U, V, mu = (np.asarray(x, dtype=np.float64) for x in (g, U, V, mu))
    if U.shape != V.shape or U.ndim != 2 or g.shape != (U.shape[1],) or mu.shape != (V.shape[1],):
        raise InvalidInputError(f"inconsistent shapes g{g.shape} U{U.shape} V{V.shape} mu{mu.shape}")
    return float((U @ g) @ (V @ mu))


@dataclass
class LangIdParams:
    Eg: np.ndarray
    U: np.ndarray
    V: np.ndarray
    P: np.ndarray

    def __post_init__(self):
        m = self.Eg.shape[1]
        if self.U.shape != self.V.shape or self.U.shape[1] != m or self.P.shape[0] != m:
            raise InvalidInputError(
                f"inconsistent shapes Eg{self.Eg.shape} U{self.U.shape} V{self.V.shape} P{self.P.shape}"
            )
        self.Eg.setflags(write=False)

    @property
    def n_languages(self) -> int:
        return self.P.shape[1]

    def trainable(self) -> list[np.ndarray]:
        return [self.U, self.V, self.P]

    def named(self) -> dict[str, np.ndarray]:
        return {"Eg": self.Eg, "U": self.U, "V": self.V, "P": self.P}

    def scores(self, G: np.ndarray) -> np.ndarray:
        """(N, K) similarities for a stack of sentence embeddings."""
        return (G @ self.U.T) @ (self.V @ self.P)


@dataclass
class LangIdConfig:
    rank: int = 8
    gamma: float = 0.01
    gram: str = "outer"
    temperature: str | float = "variance"
    epochs: int = 5
    lr: float = 1e-2
    batch_size: int = 32
    weight_decay: float = 0.01
    seed: int = 0

    def validate(self, path: str = "ensemble.langid") -> None:
        if self.rank < 1:
            raise ConfigError(f"{path}.rank", "must be >= 1")
        if self.gamma < 0:
            raise ConfigError(f"{path}.gamma", "must be >= 0")
        if self.gram not in ("outer", "inner"):
            raise ConfigError(f"{path}.gram", "must be 'outer' or 'inner'")
        t = self.temperature
        if isinstance(t, bool) or not (t == "variance" or (isinstance(t, (int, float)) and t > 0)):
            raise ConfigError(f"{path}.temperature", "must be 'variance' or a positive number")
        if self.epochs < 1:
            raise ConfigError(f"{path}.epochs", "must be >= 1")
        if not self.lr > 0:
            raise ConfigError(f"{path}.lr", "must be > 0")
        if self.batch_size < 1:
            raise ConfigError(f"{path}.batch_size", "must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def langid_loss_and_grad_embedded(
    G: np.ndarray, ks, U: np.ndarray, V: np.ndarray, P: np.ndarray, gamma: float, gram: str = "outer"
) -> tuple[float, list[np.ndarray]]:
    """Language-ID loss on precomputed sentence embeddings ``G`` (Z, m).

    Returns ``(loss, [dU, dV, dP])`` for
    ``mean_z -log softmax(g_z Uᵀ V P)[k_z] + gamma * ortho_penalty(P)``.
    """
    ks = np.asarray(ks, dtype=np.int64)
    Z = G.shape[0]
    if Z == 0:
        raise InvalidInputError("empty batch")
    K = P.shape[1]
    if ks.min() < 0 or ks.max() >= K:
        raise InvalidInputError(f"language index outside [0, {K})")
    A = G @ U.T
    B = V @ P
    q = softmax(A @ B)
    rows = np.arange(Z)
    ce = float(np.mean(-np.log(np.maximum(q[rows, ks], 1e-12))))
    loss = ce + gamma * ortho_penalty(P, gram)
    dS = q.copy()
    dS[rows, ks] -= 1.0
    dS /= Z
    dA = dS @ B.T
    dB = A.T @ dS
    dU = dA.T @ G
    dV = dB @ P.T
    dP = V.T @ dB + gamma * ortho_penalty_grad(P, gram)
    return loss, [dU, dV, dP]


def langid_loss_and_grad(
    params: LangIdParams, batch: Sequence[tuple], gamma: float, gram: str = "outer"
) -> tuple[float, list[np.ndarray]]:
    """Loss and ``[dU, dV, dP]`` for a batch of ``(sentence ids, language index)`` pairs."""
    if not batch:
        raise InvalidInputError("empty batch")
    G = sentence_embeddings(params.Eg, [s for s, _ in batch])
    ks = [k for _, k in batch]
    return langid_loss_and_grad_embedded(G, ks, params.U, params.V, params.P, gamma, gram)


def init_language_embeddings(Eg: np.ndarray, datasets: Sequence[Sequence]) -> np.ndarray:
    """(m, K) matrix whose column k is the mean sentence embedding of language k."""
    cols = []
    for k, ds in enumerate(datasets):
        if len(ds) == 0:
            raise InvalidInputError(f"dataset {k} is empty")
        cols.append(sentence_embeddings(Eg, ds).mean(axis=0))
    return np.stack(cols, axis=1)


def train_langid(
    datasets: Sequence[Sequence], Eg: np.ndarray, cfg: LangIdConfig, history: list | None = None
) -> LangIdParams:
    """Fit U, V and P on per-language sentence id lists (index = language)."""
    K = len(datasets)
    if K < 2:
        raise InvalidInputError("language identification needs at least two languages")
    Eg = np.array(Eg, dtype=np.float64, copy=True)
    m = Eg.shape[1]
    G = np.concatenate([sentence_embeddings(Eg, ds) for ds in datasets])
    ks = np.concatenate([np.full(len(ds), k, dtype=np.int64) for k, ds in enumerate(datasets)])
    P = init_language_embeddings(Eg, datasets)
    rng = np.random.default_rng(cfg.seed)
    bound = np.sqrt(6.0 / (cfg.rank + m))
    U = rng.uniform(-bound, bound, size=(cfg.rank, m))
    V = rng.uniform(-bound, bound, size=(cfg.rank, m))

    params = [U, V, P]
    state = AdamState()
    n = G.shape[0]
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grads = langid_loss_and_grad_embedded(G[idx], ks[idx], *params, cfg.gamma, cfg.gram)
            total += loss * idx.size
            params, state = adam_step(params, grads, state, cfg.lr, weight_decay=cfg.weight_decay)
        logger.info("langid epoch %d/%d loss %.6f", epoch + 1, cfg.epochs, total / n)
        if history is not None:
            history.append(total / n)
    return LangIdParams(Eg, *params)


def langid_accuracy(params: LangIdParams, datasets: Sequence[Sequence]) -> float:
    right = total = 0
    for k, ds in enumerate(datasets):
        pred = np.argmax(params.scores(sentence_embeddings(params.Eg, ds)), axis=1)
        right += int(np.sum(pred == k))
        total += len(ds)
    return right / total


def similarity_table(params: LangIdParams, target: Sequence) -> np.ndarray:
    """(N, K) bilinear similarities of every target sentence to every source language."""
    if len(target) == 0:
        raise InvalidInputError("empty target corpus")
    return params.scores(sentence_embeddings(params.Eg, target))


@dataclass
class WeightResult:
    alpha: np.ndarray
    tau: float | None
    degenerate: bool

    def to_dict(self) -> dict:
        return {"alpha": [float(a) for a in self.alpha], "tau": self.tau, "degenerate": self.degenerate}


def weights_from_similarities(S, temperature: str | float = "variance") -> WeightResult:
    """Average over sentences of ``softmax(s / τ)``.

    With ``temperature="variance"`` τ is the population variance of every
    entry of ``S``; if that falls below 1e-12 the weights fall back to
    uniform and a warning is logged.
    """
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] == 0:
        raise InvalidInputError("similarity table must be (N>0, K)")
    K = S.shape[1]
    if temperature == "variance":
        tau = population_variance(S)
        if tau < DEGENERATE_VARIANCE:
            logger.warning(
                "similarity variance %.3g below %.0e; falling back to uniform teacher weights",
                tau,
                DEGENERATE_VARIANCE,
            )
            return WeightResult(uniform_weights(K), tau, True)
    else:
        tau = float(temperature)
        if tau <= 0:
            raise InvalidInputError("temperature must be positive")
    alpha = softmax(S / tau).mean(axis=0)
    return WeightResult(alpha / alpha.sum(), tau, False)


def similarity_weights(params: LangIdParams, target: Sequence, temperature: str | float = "variance") -> np.ndarray:
    return weights_from_similarities(similarity_table(params, target), temperature).alpha


def similarity_summary(S: np.ndarray) -> dict:
    S = np.asarray(S, dtype=np.float64)
    return {
        "n_sentences": int(S.shape[0]),
        "mean": [float(x) for x in S.mean(axis=0)],
        "std": [float(x) for x in S.std(axis=0)],
        "min": [float(x) for x in S.min(axis=0)],
        "max": [float(x) for x in S.max(axis=0)],
        "argmax_share": [float(x) for x in np.bincount(np.argmax(S, axis=1), minlength=S.shape[1]) / S.shape[0]],
    }
