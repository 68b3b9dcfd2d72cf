"""Dialogue-oriented pre-training workbench."""

from ._dopt import (
    ConfigError,
    FormatError,
    Model,
    Vocab,
    evaluate,
    generate,
    ingest_jsonl,
    partition_articles,
    split_sentences,
    synthetic_corpus,
    synthetic_dialogues,
    tokenize,
    validate_samples,
)

__all__ = [
    "ConfigError",
    "FormatError",
    "Model",
    "Vocab",
    "evaluate",
    "generate",
    "ingest_jsonl",
    "partition_articles",
    "split_sentences",
    "synthetic_corpus",
    "synthetic_dialogues",
    "tokenize",
    "validate_samples",
]
