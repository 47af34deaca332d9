"""Experiment configuration: one JSON document, every field optional.

Errors name the dotted path of the offending field (``train.student.lr``).
The per-run seed is not part of the training sections; each training stage
derives its seed from the experiment seed.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from tsner.distill import TrainConfig
from tsner.ensemble import LangIdConfig
from tsner.errors import ConfigError

MODES = ("single", "multi")
ARMS = ("ours", "hl", "mt")
WEIGHTINGS = ("avg", "sim")


def _valid_language(name: str) -> bool:
    return bool(name) and name.isascii() and name.isalnum() and name == name.lower()


@dataclass
class SourceConfig:
    language: str
    rho: float


DEFAULT_SINGLE_SOURCES = (SourceConfig("src", 0.5),)
DEFAULT_MULTI_SOURCES = (SourceConfig("s1", 0.9), SourceConfig("s2", 0.5), SourceConfig("s3", 0.1))


@dataclass
class CorpusConfig:
    target: str = "tgt"
    sources: list[SourceConfig] | None = None
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    n_train: int = 2000
    n_target_train: int = 2000
    n_test: int = 500
    n_function_words: int = 60
    names_per_type: int = 40
    n_templates: int = 10
    n_entity_templates: int = 6
    min_count: int = 1


@dataclass
class TaggerSection:
    emb_dim: int = 32
    radius: int = 2
    hidden: int = 64
    student_radius: int = 0


def _teacher_train() -> TrainConfig:
    return TrainConfig(lr=5e-3)


def _student_train() -> TrainConfig:
    return TrainConfig(lr=1e-2)


@dataclass
class TrainSection:
    teacher: TrainConfig = field(default_factory=_teacher_train)
    student: TrainConfig = field(default_factory=_student_train)


@dataclass
class EnsembleSection:
    langid: LangIdConfig = field(default_factory=LangIdConfig)
    weighting: list[str] = field(default_factory=lambda: ["avg", "sim"])


@dataclass
class HistogramConfig:
    bin_width: float = 0.1
    low: float = 0.1


@dataclass
class ExperimentConfig:
    mode: str = "single"
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    tagger: TaggerSection = field(default_factory=TaggerSection)
    train: TrainSection = field(default_factory=TrainSection)
    ensemble: EnsembleSection = field(default_factory=EnsembleSection)
    arms: list[str] = field(default_factory=lambda: list(ARMS))
    histogram: HistogramConfig = field(default_factory=HistogramConfig)

    @property
    def sources(self) -> list[SourceConfig]:
        if self.corpus.sources is not None:
            return self.corpus.sources
        return list(DEFAULT_MULTI_SOURCES if self.mode == "multi" else DEFAULT_SINGLE_SOURCES)

    @property
    def weightings(self) -> list[str]:
        """Teacher weightings in effect; single-source runs have only one teacher."""
        return ["avg"] if self.mode == "single" else list(self.ensemble.weighting)

    @property
    def primary_weighting(self) -> str:
        """Weighting used by the hard-label and direct-transfer arms."""
        return "sim" if "sim" in self.weightings else "avg"

    def validate(self) -> "ExperimentConfig":
        if self.mode not in MODES:
            raise ConfigError("mode", f"must be one of {MODES}")
        c = self.corpus
        if not c.seeds:
            raise ConfigError("corpus.seeds", "at least one seed is required")
        if len(set(c.seeds)) != len(c.seeds):
            raise ConfigError("corpus.seeds", "seeds must be distinct")
        for name in ("n_train", "n_target_train", "n_test", "n_function_words", "names_per_type", "n_templates"):
            if getattr(c, name) < 1:
                raise ConfigError(f"corpus.{name}", "must be >= 1")
        if not 0 <= c.n_entity_templates <= c.n_templates:
            raise ConfigError("corpus.n_entity_templates", "must lie in [0, n_templates]")
        if c.min_count < 1:
            raise ConfigError("corpus.min_count", "must be >= 1")
        sources = self.sources
        if not sources:
            raise ConfigError("corpus.sources", "at least one source language is required")
        if self.mode == "single" and len(sources) != 1:
            raise ConfigError("corpus.sources", "single-source mode takes exactly one source")
        if self.mode == "multi" and len(sources) < 2:
            raise ConfigError("corpus.sources", "multi-source mode needs at least two sources")
        names = [s.language for s in sources]
        for i, s in enumerate(sources):
            if not 0.0 <= s.rho <= 1.0:
                raise ConfigError(f"corpus.sources[{i}].rho", "must lie in [0, 1]")
            if not _valid_language(s.language) or s.language == c.target or names.count(s.language) > 1:
                raise ConfigError(
                    f"corpus.sources[{i}].language", "must be lowercase alphanumeric, unique and differ from the target"
                )
        if not _valid_language(c.target):
            raise ConfigError("corpus.target", "must be lowercase alphanumeric")
        t = self.tagger
        for name in ("emb_dim", "hidden"):
            if getattr(t, name) < 1:
                raise ConfigError(f"tagger.{name}", "must be >= 1")
        for name in ("radius", "student_radius"):
            if getattr(t, name) < 0:
                raise ConfigError(f"tagger.{name}", "must be >= 0")
        self.train.teacher.validate("train.teacher")
        self.train.student.validate("train.student")
        if self.train.student.init_from_teacher:
            if self.mode != "single":
                raise ConfigError("train.student.init_from_teacher", "only defined for a single teacher")
            if t.student_radius != t.radius:
                raise ConfigError("train.student.init_from_teacher", "requires tagger.student_radius == tagger.radius")
        self.ensemble.langid.validate("ensemble.langid")
        w = self.ensemble.weighting
        if not w or any(x not in WEIGHTINGS for x in w) or len(set(w)) != len(w):
            raise ConfigError("ensemble.weighting", f"must be a non-empty list of distinct values from {WEIGHTINGS}")
        if not self.arms or any(a not in ARMS for a in self.arms) or len(set(self.arms)) != len(self.arms):
            raise ConfigError("arms", f"must be a non-empty list of distinct values from {ARMS}")
        h = self.histogram
        if not 0 < h.bin_width <= 1 or not 0 <= h.low < 1:
            raise ConfigError("histogram", "need 0 < bin_width <= 1 and 0 <= low < 1")
        n_bins = (1.0 - h.low) / h.bin_width
        if abs(n_bins - round(n_bins)) > 1e-9:
            raise ConfigError("histogram.bin_width", "must divide 1 - low into whole bins")
        return self

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["corpus"]["sources"] = [dataclasses.asdict(s) for s in self.sources]
        for role in ("teacher", "student"):
            for hidden in _HIDDEN_TRAIN_FIELDS:
                d["train"][role].pop(hidden)
        d["ensemble"]["langid"].pop("seed")
        return d


# Seeds come from the experiment seed and the label mode from the arm.
_HIDDEN_TRAIN_FIELDS = ("seed", "label_mode")
_HIDDEN = {TrainConfig: _HIDDEN_TRAIN_FIELDS, LangIdConfig: ("seed",)}


def _type_name(tp) -> str:
    return getattr(tp, "__name__", str(tp))


def _coerce_scalar(value, tp, path: str):
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected a boolean, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    raise ConfigError(path, f"unsupported field type {_type_name(tp)}")


def _build(cls, data: Any, path: str):
    if not isinstance(data, dict):
        raise ConfigError(path, "expected a JSON object")
    hidden = _HIDDEN.get(cls, ())
    fields = {f.name: f for f in dataclasses.fields(cls) if f.name not in hidden}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        where = f"{path}.{unknown[0]}" if path else unknown[0]
        raise ConfigError(where, "unknown field")
    kwargs = {}
    for name, value in data.items():
        sub = f"{path}.{name}" if path else name
        kwargs[name] = _field_value(cls, name, value, sub)
    return cls(**kwargs)


def _field_value(cls, name: str, value, path: str):
    if cls is ExperimentConfig and name in ("corpus", "tagger", "train", "ensemble", "histogram"):
        sub = {"corpus": CorpusConfig, "tagger": TaggerSection, "train": TrainSection,
               "ensemble": EnsembleSection, "histogram": HistogramConfig}[name]
        return _build(sub, value, path)
    if cls is TrainSection:
        return _build(TrainConfig, value, path)
    if cls is EnsembleSection and name == "langid":
        return _build(LangIdConfig, value, path)
    if (cls, name) in ((ExperimentConfig, "arms"), (EnsembleSection, "weighting")):
        if isinstance(value, str):
            value = [value]
        if not isinstance(value, list):
            raise ConfigError(path, "expected a string or a list of strings")
        return [_coerce_scalar(v, str, f"{path}[{i}]") for i, v in enumerate(value)]
    if cls is CorpusConfig and name == "seeds":
        if not isinstance(value, list):
            raise ConfigError(path, "expected a list of integers")
        return [_coerce_scalar(v, int, f"{path}[{i}]") for i, v in enumerate(value)]
    if cls is CorpusConfig and name == "sources":
        if value is None:
            return None
        if not isinstance(value, list):
            raise ConfigError(path, "expected a list of {language, rho} objects")
        out = []
        for i, s in enumerate(value):
            p = f"{path}[{i}]"
            if not isinstance(s, dict) or set(s) != {"language", "rho"}:
                raise ConfigError(p, "expected exactly the fields language and rho")
            out.append(SourceConfig(_coerce_scalar(s["language"], str, f"{p}.language"),
                                    _coerce_scalar(s["rho"], float, f"{p}.rho")))
        return out
    if cls is LangIdConfig and name == "temperature":
        if isinstance(value, str):
            if value != "variance":
                raise ConfigError(path, 'must be "variance" or a positive number')
            return value
        t = _coerce_scalar(value, float, path)
        if not t > 0:
            raise ConfigError(path, "a fixed temperature must be positive")
        return t
    return _coerce_scalar(value, type(getattr(cls(), name)), path)


def config_from_dict(data: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, data, "").validate()


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("", f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"{path} is not valid JSON: {exc}") from exc
    return config_from_dict(data)


def default_config(mode: str = "single") -> ExperimentConfig:
    return ExperimentConfig(mode=mode).validate()
