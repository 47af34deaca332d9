"""Teacher training and teacher-student distillation."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from tsner.corpus import Dataset, Vocab, label_ids
from tsner.ensemble import combine_many, uniform_weights
from tsner.errors import ConfigError, InvalidInputError
from tsner.numerics import AdamState, adam_step
from tsner.tagger import (
    TaggerConfig,
    TaggerParams,
    backward,
    batch_windows,
    forward,
    init_params,
    predict_dist_batch,
    supervised_batch_loss_and_grad,
    token_weights,
)

logger = logging.getLogger(__name__)

LABEL_MODES = ("soft", "hard")


@dataclass
class TrainConfig:
    batch_size: int = 32
    epochs: int = 3
    lr: float = 5e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    seed: int = 0
    label_mode: str = "soft"
    init_from_teacher: bool = False

    def validate(self, path: str = "train") -> None:
        if self.batch_size < 1:
            raise ConfigError(f"{path}.batch_size", "must be >= 1")
        if self.epochs < 1:
            raise ConfigError(f"{path}.epochs", "must be >= 1")
        if not self.lr > 0:
            raise ConfigError(f"{path}.lr", "must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError(f"{path}.beta1", "betas must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError(f"{path}.weight_decay", "must be >= 0")
        if self.label_mode not in LABEL_MODES:
            raise ConfigError(f"{path}.label_mode", f"must be one of {LABEL_MODES}")

    def to_dict(self) -> dict:
        return asdict(self)


def harden(dist) -> np.ndarray:
    """One-hot at the argmax of the last axis (lowest index wins ties)."""
    d = np.asarray(dist, dtype=np.float64)
    out = np.zeros_like(d)
    np.put_along_axis(out, np.argmax(d, axis=-1)[..., None], 1.0, axis=-1)
    return out


def distill_batch_loss_and_grad(
    student: TaggerParams, sentences: Sequence, teacher_dists: Sequence[np.ndarray]
) -> tuple[float, TaggerParams]:
    """Mean over sentences of the token-averaged MSE to the teacher distributions.

    Within a token the squared error is averaged over the label set.  Teacher
    distributions are constants.
    """
    win, owner = batch_windows(student, sentences)
    q = np.concatenate([np.asarray(t, dtype=np.float64) for t in teacher_dists])
    if q.shape[0] != win.shape[0]:
        raise InvalidInputError("teacher distributions are not aligned with tokens")
    fw = forward(student, win)
    C = fw.p.shape[1]
    w = token_weights(owner, len(sentences))
    diff = fw.p - q
    loss = float(np.sum(w * np.sum(diff * diff, axis=1)) / C)
    gp = (2.0 / C) * diff * w[:, None]
    dz = fw.p * (gp - np.sum(gp * fw.p, axis=1, keepdims=True))
    return loss, backward(student, fw, dz)


def distill_loss_and_grad(student: TaggerParams, teacher_dists, sentence) -> tuple[float, TaggerParams]:
    teacher_dists = np.asarray(teacher_dists, dtype=np.float64)
    if teacher_dists.ndim != 2 or teacher_dists.shape[0] != len(sentence):
        raise InvalidInputError(
            f"need one teacher distribution per token ({len(sentence)}), got {teacher_dists.shape}"
        )
    return distill_batch_loss_and_grad(student, [sentence], [teacher_dists])


def corpus_distill_loss(student: TaggerParams, sentences: Sequence, teacher_dists: Sequence) -> float:
    """Sum of per-sentence distillation losses over a corpus."""
    return float(sum(distill_loss_and_grad(student, q, s)[0] for s, q in zip(sentences, teacher_dists)))


def _train_loop(
    params: TaggerParams,
    n: int,
    step_fn: Callable[[TaggerParams, np.ndarray], tuple[float, TaggerParams]],
    cfg: TrainConfig,
    history: list | None,
    what: str,
) -> TaggerParams:
    rng = np.random.default_rng([cfg.seed, 1])
    state = AdamState()
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grads = step_fn(params, idx)
            total += loss * idx.size
            new, state = adam_step(
                params.arrays(), grads.arrays(), state, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay
            )
            params = TaggerParams.from_arrays(new)
        mean = total / n
        logger.info("%s epoch %d/%d loss %.6f", what, epoch + 1, cfg.epochs, mean)
        if history is not None:
            history.append(mean)
    return params


def train_teacher(
    dataset: Dataset,
    vocab: Vocab,
    tagger_config: TaggerConfig,
    cfg: TrainConfig,
    history: list | None = None,
) -> TaggerParams:
    """Supervised token-NLL training with shuffled mini-batches and AdamW."""
    if not dataset.labeled:
        raise InvalidInputError("a teacher needs a labeled dataset")
    if len(dataset) == 0:
        raise InvalidInputError("empty training set")
    ids = vocab.encode_dataset(dataset)
    gold = [label_ids(s.labels) for s in dataset.sentences]
    params = init_params(tagger_config, cfg.seed)

    def step(p, idx):
        return supervised_batch_loss_and_grad(p, [ids[i] for i in idx], [gold[i] for i in idx])

    return _train_loop(params, len(ids), step, cfg, history, f"teacher[{dataset.language}]")


def teacher_distributions(
    teachers: Sequence[TaggerParams], alpha, sentences: Sequence, hard: bool = False
) -> list[np.ndarray]:
    """Per-sentence (L, 9) targets: weighted teacher mixture, optionally hardened."""
    per_teacher = [predict_dist_batch(t, sentences) for t in teachers]
    out = []
    for j in range(len(sentences)):
        q = combine_many(np.stack([d[j] for d in per_teacher]), alpha)
        out.append(harden(q) if hard else q)
    return out


def train_student(
    teachers: Sequence[TaggerParams],
    dataset: Dataset,
    vocab: Vocab,
    tagger_config: TaggerConfig,
    cfg: TrainConfig,
    weights=None,
    history: list | None = None,
) -> TaggerParams:
    """Distill a student on unlabeled target text.

    ``weights`` defaults to uniform over ``teachers``.  Teachers are frozen
    and their (combined) distributions are recomputed for every batch.
    """
    if len(teachers) == 0:
        raise InvalidInputError("at least one teacher is required")
    if dataset.labeled:
        raise InvalidInputError("the student trains on unlabeled target text")
    if cfg.label_mode not in LABEL_MODES:
        raise InvalidInputError(f"label_mode must be one of {LABEL_MODES}")
    alpha = uniform_weights(len(teachers)) if weights is None else np.asarray(weights, dtype=np.float64)
    if alpha.shape != (len(teachers),):
        raise InvalidInputError("one weight per teacher is required")
    ids = vocab.encode_dataset(dataset)
    if cfg.init_from_teacher:
        if len(teachers) != 1:
            raise InvalidInputError("init_from_teacher needs exactly one teacher")
        params = teachers[0].copy()
    else:
        params = init_params(tagger_config, cfg.seed)
    hard = cfg.label_mode == "hard"

    def step(p, idx):
        batch = [ids[i] for i in idx]
        targets = teacher_distributions(teachers, alpha, batch, hard=hard)
        return distill_batch_loss_and_grad(p, batch, targets)

    return _train_loop(params, len(ids), step, cfg, history, f"student[{dataset.language},{cfg.label_mode}]")
