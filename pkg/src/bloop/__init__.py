"""Bigram lookahead promotion: a training-free, decode-time logit adjustment
that biases generation toward source-document bigrams, with a deterministic
beam-search engine, a reference n-gram backend, a wire-protocol client for
external models, and a summarization metric suite.
"""

from .backends import ContextTooLongError, NgramLM, TokenScorer
from .cache import BigramCache, LookupCounter
from .decoding import (
    BackendScoreError,
    BatchItem,
    BeamHypothesis,
    DecodeConfig,
    DecodeResult,
    StepRecord,
    TraceSummary,
    batch_decode,
    decode,
)
from .metrics import (
    MetricsReport,
    bartscore_prob,
    evaluate_records,
    novel_ngram_prf,
    rouge,
    trace_stats,
)
from .promotion import PromotionConfig, PromotionResult, promote
from .stats import benjamini_hochberg, significance_report, wilcoxon_signed_rank
from .text import Document, UnknownTokenError, Vocabulary, detokenize, tokenize
from .tuner import GridSpec, grid_search

__version__ = "0.1.0"

__all__ = [
    "BackendScoreError",
    "BatchItem",
    "BeamHypothesis",
    "BigramCache",
    "ContextTooLongError",
    "DecodeConfig",
    "DecodeResult",
    "Document",
    "GridSpec",
    "LookupCounter",
    "MetricsReport",
    "NgramLM",
    "PromotionConfig",
    "PromotionResult",
    "StepRecord",
    "TokenScorer",
    "TraceSummary",
    "UnknownTokenError",
    "Vocabulary",
    "bartscore_prob",
    "batch_decode",
    "benjamini_hochberg",
    "decode",
    "detokenize",
    "evaluate_records",
    "grid_search",
    "novel_ngram_prf",
    "promote",
    "rouge",
    "significance_report",
    "tokenize",
    "trace_stats",
    "wilcoxon_signed_rank",
]
