"""Synthetic multilingual corpora, CoNLL I/O and the shared vocabulary.

Languages are generated from syllable words so that the amount of shared
material between two languages is known exactly.  A *related* language
copies a rho-fraction of the base language's function words, templates and
entity names verbatim; everything else gets a private surface form.  The
shared subsets are nested: for one base language, the words shared at
``rho=0.5`` are a subset of those shared at ``rho=0.9``.

A function word directly in front of an entity slot is, with probability
``CUE_PROB``, drawn from a small per-type cue subset of the lexicon (the
first ``4 * CUE_WORDS`` entries, in PER, LOC, ORG, MISC order), so that
context carries partial evidence about the entity type.
"""

from __future__ import annotations

import hashlib
import json
import os
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from tsner.errors import ConfigError, ConllParseError, InvalidInputError

ENTITY_TYPES = ("PER", "LOC", "ORG", "MISC")
LABELS = ("O", "B-PER", "I-PER", "B-LOC", "I-LOC", "B-ORG", "I-ORG", "B-MISC", "I-MISC")
LABEL_INDEX = {tag: i for i, tag in enumerate(LABELS)}
SLOTS = ("FW",) + ENTITY_TYPES

CUE_WORDS = 5
CUE_PROB = 0.5
MAX_NAME_TOKENS = {"PER": 2, "LOC": 2, "ORG": 3, "MISC": 2}

BOUNDARY, UNKNOWN = "<s>", "<unk>"

_CONSONANTS = "bcdfghjklmnprstvwz"  # no 'q': private forms are marked with it
_VOWELS = "aeiou"


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from any mix of ints and strings."""
    h = hashlib.sha256("\x1f".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(h[:8], "little") >> 1


@dataclass
class TaggedSentence:
    tokens: list[str]
    labels: list[str] | None = None

    def __post_init__(self):
        self.tokens = list(self.tokens)
        if not self.tokens:
            raise InvalidInputError("a sentence needs at least one token")
        if self.labels is not None:
            self.labels = list(self.labels)
            if len(self.labels) != len(self.tokens):
                raise InvalidInputError(
                    f"{len(self.tokens)} tokens but {len(self.labels)} labels"
                )
            bad = [t for t in self.labels if t not in LABEL_INDEX]
            if bad:
                raise InvalidInputError(f"unknown tag {bad[0]!r}")

    def __len__(self):
        return len(self.tokens)


@dataclass
class Dataset:
    language: str
    sentences: list[TaggedSentence] = field(default_factory=list)
    labeled: bool = True

    def __post_init__(self):
        for i, s in enumerate(self.sentences):
            if self.labeled and s.labels is None:
                raise InvalidInputError(f"sentence {i} of a labeled dataset has no labels")
            if not self.labeled and s.labels is not None:
                raise InvalidInputError(f"sentence {i} of an unlabeled dataset carries labels")

    def __len__(self):
        return len(self.sentences)

    def __iter__(self):
        return iter(self.sentences)

    def unlabeled(self) -> "Dataset":
        return Dataset(self.language, [TaggedSentence(s.tokens) for s in self.sentences], labeled=False)


# ---------------------------------------------------------------------------
# language specs


@dataclass
class LanguageSpec:
    language: str
    function_words: list[str]
    entities: dict[str, list[str]]
    templates: list[list[str]]
    rho: float = 1.0

    def __post_init__(self):
        if not self.language:
            raise ConfigError("language", "must be non-empty")
        if not self.function_words:
            raise ConfigError("function_words", "lexicon is empty")
        for t in ENTITY_TYPES:
            if not self.entities.get(t):
                raise ConfigError(f"entities.{t}", "lexicon is empty")
        if not self.templates:
            raise ConfigError("templates", "no templates")
        for i, tpl in enumerate(self.templates):
            if not tpl or "FW" not in tpl:
                raise ConfigError(f"templates[{i}]", "needs at least one FW slot")
            bad = [s for s in tpl if s not in SLOTS]
            if bad:
                raise ConfigError(f"templates[{i}]", f"unknown slot {bad[0]!r}")
        if not 0.0 <= self.rho <= 1.0:
            raise ConfigError("rho", f"must lie in [0, 1], got {self.rho}")

    def to_dict(self) -> dict:
        return {
            "language": self.language,
            "function_words": list(self.function_words),
            "entities": {t: list(self.entities[t]) for t in ENTITY_TYPES},
            "templates": [list(t) for t in self.templates],
            "rho": self.rho,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LanguageSpec":
        expected = {"language", "function_words", "entities", "templates", "rho"}
        extra = set(d) - expected
        if extra:
            raise ConfigError(sorted(extra)[0], "unknown field")
        missing = expected - set(d)
        if missing:
            raise ConfigError(sorted(missing)[0], "missing field")
        return cls(
            language=d["language"],
            function_words=list(d["function_words"]),
            entities={t: list(v) for t, v in d["entities"].items()},
            templates=[list(t) for t in d["templates"]],
            rho=float(d["rho"]),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "LanguageSpec":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


class _WordMaker:
    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.seen: set[str] = set()

    def word(self, min_syl: int, max_syl: int) -> str:
        while True:
            n = int(self.rng.integers(min_syl, max_syl + 1))
            w = "".join(
                _CONSONANTS[self.rng.integers(len(_CONSONANTS))] + _VOWELS[self.rng.integers(len(_VOWELS))]
                for _ in range(n)
            )
            if w not in self.seen:
                self.seen.add(w)
                return w


def _random_template(rng: np.random.Generator, with_entities: bool, min_slots=5, max_slots=16) -> list[str]:
    n = int(rng.integers(min_slots, max_slots + 1))
    slots = ["FW"] * n
    if with_entities:
        n_ent = int(rng.integers(1, 3))
        # entity positions >= 1, never adjacent, so each one follows a cue FW
        candidates = list(range(1, n))
        chosen: list[int] = []
        while len(chosen) < n_ent and candidates:
            p = int(candidates[rng.integers(len(candidates))])
            chosen.append(p)
            candidates = [c for c in candidates if abs(c - p) > 1]
        for p in chosen:
            slots[p] = ENTITY_TYPES[rng.integers(len(ENTITY_TYPES))]
    return slots


def random_language_spec(
    language: str,
    seed: int,
    n_function_words: int = 60,
    names_per_type: int = 40,
    n_templates: int = 10,
    n_entity_templates: int = 6,
) -> LanguageSpec:
    """A fresh base language (rho = 1 with respect to itself)."""
    if n_entity_templates > n_templates:
        raise ConfigError("n_entity_templates", "exceeds n_templates")
    rng = np.random.default_rng(seed)
    maker = _WordMaker(rng)
    fws = [maker.word(1, 2) for _ in range(n_function_words)]
    entities = {}
    for t in ENTITY_TYPES:
        names = []
        for _ in range(names_per_type):
            k = int(rng.integers(1, MAX_NAME_TOKENS[t] + 1))
            names.append(" ".join(maker.word(2, 3) for _ in range(k)))
        entities[t] = names
    templates = [_random_template(rng, i < n_entity_templates) for i in range(n_templates)]
    return LanguageSpec(language, fws, entities, templates, rho=1.0)


def _private(surface: str, language: str) -> str:
    return " ".join(f"{tok}q{language}" for tok in surface.split())


def _share_order(base: LanguageSpec, what: str, n: int) -> np.ndarray:
    # depends on the base only, which makes the shared subsets nested in rho
    rng = np.random.default_rng(derive_seed("share", what, base.language, *base.function_words))
    return rng.permutation(n)


def _shared_mask(base: LanguageSpec, what: str, n: int, rho: float) -> np.ndarray:
    k = int(round(rho * n))
    mask = np.zeros(n, dtype=bool)
    mask[_share_order(base, what, n)[:k]] = True
    return mask


def related_language_spec(base: LanguageSpec, language: str, rho: float, seed: int) -> LanguageSpec:
    """A language sharing a rho-fraction of function words, templates and names with ``base``.

    Function words keep their lexicon slot (and therefore their cue role).
    Unshared entries get a private surface form marked with the language id.
    """
    if not language or not language.isalnum() or language != language.lower():
        raise ConfigError("language", f"must be lowercase alphanumeric, got {language!r}")
    if language == base.language:
        raise ConfigError("language", "must differ from the base language")
    if not 0.0 <= rho <= 1.0:
        raise ConfigError("rho", f"must lie in [0, 1], got {rho}")

    fw_mask = _shared_mask(base, "fw", len(base.function_words), rho)
    fws = [w if keep else _private(w, language) for w, keep in zip(base.function_words, fw_mask)]

    entities = {}
    for t in ENTITY_TYPES:
        names = base.entities[t]
        mask = _shared_mask(base, f"ent-{t}", len(names), rho)
        entities[t] = [nm if keep else _private(nm, language) for nm, keep in zip(names, mask)]

    n_tpl = len(base.templates)
    tpl_mask = _shared_mask(base, "tpl", n_tpl, rho)
    shared = [list(tp) for tp, keep in zip(base.templates, tpl_mask) if keep]
    n_base_ent = sum(any(s != "FW" for s in tp) for tp in base.templates)
    n_shared_ent = sum(any(s != "FW" for s in tp) for tp in shared)
    rng = np.random.default_rng(seed)
    fresh_ent = max(0, n_base_ent - n_shared_ent)
    fresh = [_random_template(rng, i < fresh_ent) for i in range(n_tpl - len(shared))]
    return LanguageSpec(language, fws, entities, shared + fresh, rho=float(rho))


def function_word_overlap(a: LanguageSpec, b: LanguageSpec) -> float:
    """Jaccard overlap of the two function-word lexicons."""
    sa, sb = set(a.function_words), set(b.function_words)
    union = sa | sb
    return len(sa & sb) / len(union) if union else 0.0


# ---------------------------------------------------------------------------
# generation


def _fw_pool(spec: LanguageSpec, next_slot: str | None, rng: np.random.Generator) -> Sequence[str]:
    fws = spec.function_words
    if len(fws) <= CUE_WORDS * len(ENTITY_TYPES):
        return fws
    if next_slot in ENTITY_TYPES and rng.random() < CUE_PROB:
        k = ENTITY_TYPES.index(next_slot)
        return fws[k * CUE_WORDS : (k + 1) * CUE_WORDS]
    return fws[CUE_WORDS * len(ENTITY_TYPES) :]


def fill_template(spec: LanguageSpec, template: Sequence[str], rng: np.random.Generator) -> TaggedSentence:
    tokens: list[str] = []
    labels: list[str] = []
    for i, slot in enumerate(template):
        if slot == "FW":
            nxt = template[i + 1] if i + 1 < len(template) else None
            pool = _fw_pool(spec, nxt, rng)
            tokens.append(pool[rng.integers(len(pool))])
            labels.append("O")
        else:
            names = spec.entities[slot]
            parts = names[rng.integers(len(names))].split()
            tokens.extend(parts)
            labels.extend([f"B-{slot}"] + [f"I-{slot}"] * (len(parts) - 1))
    return TaggedSentence(tokens, labels)


def generate_corpus(spec: LanguageSpec, n_sentences: int, seed: int) -> Dataset:
    """Labeled sentences drawn template by template; deterministic in (spec, n, seed)."""
    if n_sentences < 1:
        raise InvalidInputError("n_sentences must be >= 1")
    rng = np.random.default_rng(seed)
    sents = []
    for _ in range(n_sentences):
        tpl = spec.templates[rng.integers(len(spec.templates))]
        sents.append(fill_template(spec, tpl, rng))
    return Dataset(spec.language, sents, labeled=True)


# ---------------------------------------------------------------------------
# CoNLL


def write_conll(dataset: Dataset, path) -> None:
    lines = []
    for s in dataset.sentences:
        for i, tok in enumerate(s.tokens):
            lines.append(f"{tok} {s.labels[i]}" if dataset.labeled else tok)
        lines.append("")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("".join(line + "\n" for line in lines))


def read_conll(path, language: str | None = None) -> Dataset:
    """Read a one-token-per-line file.  The last column is the tag.

    A file whose first token line has a single column is read as unlabeled.
    ``-DOCSTART-`` lines are skipped.
    """
    if language is None:
        language = Path(path).name.split(".")[0]
    sentences: list[TaggedSentence] = []
    labeled: bool | None = None
    toks: list[str] = []
    tags: list[str] = []

    def flush():
        if toks:
            sentences.append(TaggedSentence(list(toks), list(tags) if labeled else None))
            toks.clear()
            tags.clear()

    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip():
                flush()
                continue
            cols = line.split()
            if cols[0] == "-DOCSTART-":
                continue
            if labeled is None:
                labeled = len(cols) >= 2
            if labeled:
                if len(cols) < 2:
                    raise ConllParseError(lineno, "expected a token and a tag")
                if cols[-1] not in LABEL_INDEX:
                    raise ConllParseError(lineno, f"tag {cols[-1]!r} is not in the BIO tag set")
                tags.append(cols[-1])
            elif len(cols) != 1:
                raise ConllParseError(lineno, "tagged line in an unlabeled file")
            toks.append(cols[0])
    flush()
    return Dataset(language, sentences, labeled=bool(labeled))


# ---------------------------------------------------------------------------
# vocabulary


@dataclass
class Vocab:
    itos: list[str]
    stoi: dict[str, int] = field(init=False, repr=False)

    BOUNDARY_ID = 0
    UNKNOWN_ID = 1

    def __post_init__(self):
        if self.itos[:2] != [BOUNDARY, UNKNOWN]:
            raise InvalidInputError("ids 0 and 1 are reserved for boundary and unknown")
        self.stoi = {s: i for i, s in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise InvalidInputError("duplicate vocabulary entries")

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def id(self, token: str) -> int:
        return self.stoi.get(token, self.UNKNOWN_ID)

    def encode(self, tokens: Iterable[str]) -> np.ndarray:
        return np.array([self.stoi.get(t, self.UNKNOWN_ID) for t in tokens], dtype=np.int64)

    def encode_dataset(self, dataset: Dataset) -> list[np.ndarray]:
        return [self.encode(s.tokens) for s in dataset.sentences]

    def to_dict(self) -> dict:
        return {"tokens": list(self.itos)}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocab":
        return cls(list(d["tokens"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def build_vocab(datasets: Sequence[Dataset], min_count: int = 1) -> Vocab:
    """One vocabulary over every language, content ids in sorted token order."""
    if not datasets:
        raise InvalidInputError("build_vocab needs at least one dataset")
    counts: Counter[str] = Counter()
    for ds in datasets:
        for s in ds.sentences:
            counts.update(s.tokens)
    kept = sorted(t for t, c in counts.items() if c >= min_count and t not in (BOUNDARY, UNKNOWN))
    return Vocab([BOUNDARY, UNKNOWN] + kept)


def label_ids(labels: Sequence[str]) -> np.ndarray:
    return np.array([LABEL_INDEX[t] for t in labels], dtype=np.int64)


def ensure_dir(path) -> Path:
    p = Path(path)
    os.makedirs(p, exist_ok=True)
    return p
