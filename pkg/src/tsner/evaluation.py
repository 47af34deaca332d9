"""Phrase-level F1 and the teacher-correction histogram."""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from tsner.corpus import ENTITY_TYPES, LABEL_INDEX, LABELS, Dataset
from tsner.errors import InvalidInputError


class Span(NamedTuple):
    start: int
    end: int  # inclusive
    type: str


def _tag_name(tag) -> str:
    if isinstance(tag, (int, np.integer)):
        if not 0 <= tag < len(LABELS):
            raise InvalidInputError(f"label id {tag} out of range")
        return LABELS[tag]
    if tag not in LABEL_INDEX:
        raise InvalidInputError(f"unknown tag {tag!r}")
    return tag


def extract_spans(labels: Sequence) -> list[Span]:
    """Decode BIO tags (strings or label ids) into entity spans.

    Follows conlleval: an ``I-X`` that does not continue an open ``X`` span
    opens a new one.
    """
    spans = []
    start, kind = None, None
    for i, raw in enumerate(labels):
        tag = _tag_name(raw)
        if tag == "O":
            if kind is not None:
                spans.append(Span(start, i - 1, kind))
            start, kind = None, None
            continue
        prefix, typ = tag.split("-", 1)
        if prefix == "I" and kind == typ:
            continue
        if kind is not None:
            spans.append(Span(start, i - 1, kind))
        start, kind = i, typ
    if kind is not None:
        spans.append(Span(start, len(labels) - 1, kind))
    return spans


def spans_to_bio(spans: Sequence[Span], length: int) -> list[str]:
    tags = ["O"] * length
    for s in spans:
        tags[s.start] = f"B-{s.type}"
        for i in range(s.start + 1, s.end + 1):
            tags[i] = f"I-{s.type}"
    return tags


def _prf(correct: int, gold: int, predicted: int) -> dict:
    p = correct / predicted if predicted else 0.0
    r = correct / gold if gold else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return {"precision": p, "recall": r, "f1": f, "gold": gold, "predicted": predicted, "correct": correct}


@dataclass
class F1Report:
    precision: float
    recall: float
    f1: float
    gold: int
    predicted: int
    correct: int
    per_type: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "gold": self.gold,
            "predicted": self.predicted,
            "correct": self.correct,
            "per_type": {t: dict(self.per_type[t]) for t in ENTITY_TYPES},
        }


def f1_from_sequences(gold_seqs: Sequence[Sequence], pred_seqs: Sequence[Sequence]) -> F1Report:
    if len(gold_seqs) != len(pred_seqs):
        raise InvalidInputError(f"{len(gold_seqs)} gold sentences but {len(pred_seqs)} predictions")
    n_gold: Counter = Counter()
    n_pred: Counter = Counter()
    n_ok: Counter = Counter()
    for j, (g, p) in enumerate(zip(gold_seqs, pred_seqs)):
        if len(g) != len(p):
            raise InvalidInputError(f"sentence {j}: {len(g)} gold labels but {len(p)} predicted")
        gs, ps = set(extract_spans(g)), set(extract_spans(p))
        n_gold.update(s.type for s in gs)
        n_pred.update(s.type for s in ps)
        n_ok.update(s.type for s in gs & ps)
    per_type = {t: _prf(n_ok[t], n_gold[t], n_pred[t]) for t in ENTITY_TYPES}
    total = _prf(sum(n_ok.values()), sum(n_gold.values()), sum(n_pred.values()))
    return F1Report(per_type=per_type, **total)


def f1_report(gold: Dataset, predicted: Sequence[Sequence]) -> F1Report:
    """Exact-match (start, end, type) span precision, recall and F1."""
    if not gold.labeled:
        raise InvalidInputError("gold dataset must be labeled")
    return f1_from_sequences([s.labels for s in gold.sentences], predicted)


@dataclass
class CorrectionHistogram:
    edges: list[float]
    counts: list[int]
    corrected: list[int]

    @property
    def fractions(self) -> list[float | None]:
        return [c / n if n else None for c, n in zip(self.corrected, self.counts)]

    @property
    def total(self) -> int:
        return sum(self.counts)

    def nonempty_extremes(self) -> tuple[float, float] | None:
        """Corrected fraction in the lowest and in the highest non-empty bin."""
        fr = [f for f in self.fractions if f is not None]
        return (fr[0], fr[-1]) if fr else None

    def to_dict(self) -> dict:
        return {
            "edges": list(self.edges),
            "counts": list(self.counts),
            "corrected": list(self.corrected),
            "fractions": self.fractions,
        }

    def write_csv(self, path, seed: int | None = None, append: bool = False) -> None:
        with open(path, "a" if append else "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if not append:
                w.writerow(["seed", "bin_lo", "bin_hi", "count", "corrected", "fraction"])
            for i, (n, c) in enumerate(zip(self.counts, self.corrected)):
                frac = "" if n == 0 else repr(c / n)
                w.writerow(["" if seed is None else seed, repr(self.edges[i]), repr(self.edges[i + 1]), n, c, frac])


def default_edges(width: float = 0.1, low: float = 0.1) -> list[float]:
    n = int(round((1.0 - low) / width))
    return [round(low + i * width, 12) for i in range(n + 1)]


def correction_histogram_from_dists(
    teacher_dists: Sequence[np.ndarray],
    student_labels: Sequence[Sequence[int]],
    gold: Dataset,
    edges: Sequence[float] | None = None,
) -> CorrectionHistogram:
    """Bucket the teacher's wrong tokens by teacher confidence; count student fixes.

    A token is counted when the teacher's argmax differs from gold; it is
    corrected when the student's label equals gold.  Confidences below the
    first edge go to the first bin, the last bin is closed on the right.
    """
    if not gold.labeled:
        raise InvalidInputError("the correction analysis needs a labeled test set")
    if len(teacher_dists) != len(gold) or len(student_labels) != len(gold):
        raise InvalidInputError("teacher, student and gold are not aligned")
    edges = list(default_edges() if edges is None else edges)
    nb = len(edges) - 1
    counts = [0] * nb
    fixed = [0] * nb
    inner = np.asarray(edges[1:-1])
    for q, st, s in zip(teacher_dists, student_labels, gold.sentences):
        q = np.asarray(q)
        y = np.array([LABEL_INDEX[t] for t in s.labels])
        st = np.asarray(st)
        if q.shape[0] != y.size or st.size != y.size:
            raise InvalidInputError("sentence length mismatch")
        wrong = np.argmax(q, axis=1) != y
        conf = q.max(axis=1)[wrong]
        bins = np.searchsorted(inner, conf, side="right")
        ok = (st == y)[wrong]
        for b, c in zip(bins, ok):
            counts[b] += 1
            fixed[b] += int(c)
    return CorrectionHistogram(edges, counts, fixed)


def correction_histogram(teacher, student, gold: Dataset, vocab, bin_width: float = 0.1, low: float = 0.1):
    """Correction histogram for a teacher/student pair of :class:`TaggerParams`."""
    from tsner.tagger import predict_dist_batch

    if not gold.labeled:
        raise InvalidInputError("the correction analysis needs a labeled test set")
    ids = vocab.encode_dataset(gold)
    tq = predict_dist_batch(teacher, ids)
    sl = [np.argmax(p, axis=1) for p in predict_dist_batch(student, ids)]
    return correction_histogram_from_dists(tq, sl, gold, default_edges(bin_width, low))
