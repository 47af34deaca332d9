"""Teacher-student cross-lingual sequence labeling at desk scale."""

from tsner.corpus import LABELS, Dataset, LanguageSpec, TaggedSentence, Vocab
from tsner.errors import (
    CheckpointError,
    ConfigError,
    ConllParseError,
    InvalidInputError,
)
from tsner.tagger import TaggerConfig, TaggerParams

__version__ = "0.1.0"

__all__ = [
    "LABELS",
    "CheckpointError",
    "ConfigError",
    "ConllParseError",
    "Dataset",
    "InvalidInputError",
    "LanguageSpec",
    "TaggedSentence",
    "TaggerConfig",
    "TaggerParams",
    "Vocab",
]
