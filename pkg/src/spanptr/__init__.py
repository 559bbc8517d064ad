"""Span pointer networks for non-autoregressive intent/slot semantic parsing."""

__version__ = "0.1.0"

from .frames import (  # noqa: E402
    CANONICAL,
    INDEX,
    SPAN,
    Frame,
    FrameError,
    FrameNode,
    LeafArg,
    LengthStats,
    Utterance,
    exact_match,
    from_span_form,
    length_stats,
    linearize,
    parse_frame,
    serialize_frame,
    to_form,
    to_index_form,
    to_span_form,
)
from .data import (  # noqa: E402
    Corpus,
    Example,
    SyntheticGrammarConfig,
    Vocabulary,
    build_vocab,
    compute_length_stats,
    generate_synthetic,
    load_tsv,
    spis_sample,
    write_tsv,
)

__all__ = [
    "CANONICAL", "INDEX", "SPAN", "Frame", "FrameError", "FrameNode", "LeafArg", "LengthStats",
    "Utterance", "exact_match", "from_span_form", "length_stats", "linearize", "parse_frame",
    "serialize_frame", "to_form", "to_index_form", "to_span_form", "Corpus", "Example",
    "SyntheticGrammarConfig", "Vocabulary", "build_vocab", "compute_length_stats",
    "generate_synthetic", "load_tsv", "spis_sample", "write_tsv",
]
