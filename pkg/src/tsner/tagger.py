"""Window feedforward tagger with hand-derived gradients.

Each token is represented by the concatenated embeddings of the ``2r+1``
tokens around it (out-of-range positions use the boundary id 0), passed
through one tanh layer and a linear softmax classifier::

    h_i = tanh(W1 · [E[x_{i-r}]; …; E[x_{i+r}]] + b1)
    p_i = softmax(W · h_i + b)

Batches are handled by concatenating the windows of all sentences into one
matrix, so a mini-batch costs one matmul per layer.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from tsner.errors import InvalidInputError
from tsner.numerics import PROB_FLOOR, softmax

N_LABELS = 9
UNKNOWN_ID = 1


@dataclass(frozen=True)
class TaggerConfig:
    vocab_size: int
    emb_dim: int = 32
    radius: int = 2
    hidden: int = 64
    n_labels: int = N_LABELS

    def __post_init__(self):
        if self.radius < 0:
            raise InvalidInputError("radius must be >= 0")
        for name in ("vocab_size", "emb_dim", "hidden", "n_labels"):
            if getattr(self, name) <= 0:
                raise InvalidInputError(f"{name} must be positive")
        if self.vocab_size < 2:
            raise InvalidInputError("vocab_size must cover the two reserved ids")
        if self.n_labels != N_LABELS:
            raise InvalidInputError(f"n_labels is fixed to {N_LABELS} by the BIO tag set")

    @property
    def window(self) -> int:
        return 2 * self.radius + 1

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {
            "E": (self.vocab_size, self.emb_dim),
            "W1": (self.hidden, self.window * self.emb_dim),
            "b1": (self.hidden,),
            "W": (self.n_labels, self.hidden),
            "b": (self.n_labels,),
        }


@dataclass
class TaggerParams:
    E: np.ndarray
    W1: np.ndarray
    b1: np.ndarray
    W: np.ndarray
    b: np.ndarray

    NAMES = ("E", "W1", "b1", "W", "b")

    def arrays(self) -> list[np.ndarray]:
        return [self.E, self.W1, self.b1, self.W, self.b]

    @classmethod
    def from_arrays(cls, arrays: Sequence[np.ndarray]) -> "TaggerParams":
        return cls(*arrays)

    def named(self) -> dict[str, np.ndarray]:
        return dict(zip(self.NAMES, self.arrays()))

    def copy(self) -> "TaggerParams":
        return TaggerParams(*(a.copy() for a in self.arrays()))

    @property
    def config(self) -> TaggerConfig:
        V, m = self.E.shape
        window = self.W1.shape[1] // m
        return TaggerConfig(V, m, (window - 1) // 2, self.W1.shape[0], self.W.shape[0])

    def equals(self, other: "TaggerParams") -> bool:
        return all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))


def _glorot(rng: np.random.Generator, shape: tuple[int, int], fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_params(config: TaggerConfig, seed: int) -> TaggerParams:
    """Glorot-uniform weights, zero biases, and a zero row for the unknown token."""
    rng = np.random.default_rng(seed)
    s = config.shapes()
    E = _glorot(rng, s["E"], config.vocab_size, config.emb_dim)
    # unknown tokens carry no lexical evidence
    E[UNKNOWN_ID] = 0.0
    W1 = _glorot(rng, s["W1"], s["W1"][1], config.hidden)
    W = _glorot(rng, s["W"], config.hidden, config.n_labels)
    return TaggerParams(E, W1, np.zeros(s["b1"]), W, np.zeros(s["b"]))


def _check_ids(ids, vocab_size: int) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise InvalidInputError("a sentence must be a non-empty 1-D id sequence")
    if ids.min() < 0 or ids.max() >= vocab_size:
        raise InvalidInputError(f"token id outside [0, {vocab_size})")
    return ids


def window_ids(ids: np.ndarray, radius: int) -> np.ndarray:
    """(L, 2r+1) ids of each token's window, boundary-padded with id 0."""
    padded = np.concatenate([np.zeros(radius, np.int64), ids, np.zeros(radius, np.int64)])
    L = ids.size
    return np.stack([padded[j : j + L] for j in range(2 * radius + 1)], axis=1)


def batch_windows(params: TaggerParams, sentences: Sequence) -> tuple[np.ndarray, np.ndarray]:
    """Windows of every token in ``sentences`` and each token's sentence index."""
    V = params.E.shape[0]
    r = params.config.radius
    wins, owner = [], []
    for j, s in enumerate(sentences):
        ids = _check_ids(s, V)
        wins.append(window_ids(ids, r))
        owner.append(np.full(ids.size, j, dtype=np.int64))
    return np.concatenate(wins), np.concatenate(owner)


@dataclass
class Forward:
    win: np.ndarray
    X: np.ndarray
    h: np.ndarray
    p: np.ndarray


def forward(params: TaggerParams, win: np.ndarray) -> Forward:
    X = params.E[win].reshape(win.shape[0], -1)
    h = np.tanh(X @ params.W1.T + params.b1)
    p = softmax(h @ params.W.T + params.b)
    return Forward(win, X, h, p)


def backward(params: TaggerParams, fw: Forward, dz: np.ndarray) -> TaggerParams:
    """Gradients of all parameters given the loss gradient at the logits."""
    dW = dz.T @ fw.h
    db = dz.sum(axis=0)
    da = (dz @ params.W) * (1.0 - fw.h * fw.h)
    dW1 = da.T @ fw.X
    db1 = da.sum(axis=0)
    dX = (da @ params.W1).reshape(fw.win.shape[0], fw.win.shape[1], -1)
    dE = np.zeros_like(params.E)
    np.add.at(dE, fw.win.reshape(-1), dX.reshape(-1, params.E.shape[1]))
    return TaggerParams(dE, dW1, db1, dW, db)


def encode(params: TaggerParams, sentence) -> np.ndarray:
    ids = _check_ids(sentence, params.E.shape[0])
    win = window_ids(ids, params.config.radius)
    X = params.E[win].reshape(ids.size, -1)
    return np.tanh(X @ params.W1.T + params.b1)


def predict_dist(params: TaggerParams, sentence) -> np.ndarray:
    """(L, 9) label distribution for every token."""
    h = encode(params, sentence)
    return softmax(h @ params.W.T + params.b)


def predict_labels(params: TaggerParams, sentence) -> np.ndarray:
    """Argmax label ids; ``np.argmax`` resolves ties toward the lowest index."""
    return np.argmax(predict_dist(params, sentence), axis=-1)


def predict_dist_batch(params: TaggerParams, sentences: Sequence) -> list[np.ndarray]:
    if not sentences:
        return []
    win, owner = batch_windows(params, sentences)
    p = forward(params, win).p
    bounds = np.cumsum([len(s) for s in sentences])[:-1]
    return np.split(p, bounds)


def token_weights(owner: np.ndarray, n_sentences: int) -> np.ndarray:
    """Per-token weight 1/(B·L_s): mean over tokens, then over sentences."""
    lengths = np.bincount(owner, minlength=n_sentences)
    return 1.0 / (n_sentences * lengths[owner])


def supervised_batch_loss_and_grad(
    params: TaggerParams, sentences: Sequence, gold: Sequence
) -> tuple[float, TaggerParams]:
    """Token NLL averaged within each sentence, then over the batch."""
    win, owner = batch_windows(params, sentences)
    y = np.concatenate([np.asarray(g, dtype=np.int64) for g in gold])
    if y.size != win.shape[0]:
        raise InvalidInputError("labels are not aligned with tokens")
    fw = forward(params, win)
    w = token_weights(owner, len(sentences))
    rows = np.arange(y.size)
    py = np.maximum(fw.p[rows, y], PROB_FLOOR)
    loss = float(np.sum(w * -np.log(py)))
    dz = fw.p.copy()
    dz[rows, y] -= 1.0
    dz *= w[:, None]
    return loss, backward(params, fw, dz)


def supervised_loss_and_grad(params: TaggerParams, sentence, labels) -> tuple[float, TaggerParams]:
    return supervised_batch_loss_and_grad(params, [sentence], [labels])
