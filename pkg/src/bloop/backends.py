"""Token-scoring backends.

A backend produces one dense logit vector per context. The engine ships a
deterministic additive-smoothed n-gram language model as a desk-scale
stand-in for a neural model; external models are reached through
:class:`bloop.bridge_client.BridgeClient`, which implements the same
interface over the wire protocol.
"""

from __future__ import annotations

from typing import Collection, Iterable, Protocol, Sequence, runtime_checkable

import numpy as np

from .text import Document


class ContextTooLongError(ValueError):
    def __init__(self, length: int, limit: int):
        super().__init__(
            f"context of {length} tokens exceeds the backend limit of {limit}; "
            "truncate the prompt (the CLI truncates to half the declared limit)"
        )
        self.length = length
        self.limit = limit


@runtime_checkable
class TokenScorer(Protocol):
    """Backend contract: deterministic per-context logits.

    Implementations must return identical vectors for identical contexts.
    ``must_score`` hints which ids need exact scores (the current follower
    set); backends with full local vocabularies may ignore it.
    """

    vocab_size: int
    concurrency_safe: bool
    context_limit: int | None

    def score(self, context: Sequence[int], must_score: Collection[int] = ()) -> np.ndarray:
        ...


class NgramLM:
    """Additive-smoothed n-gram language model over token ids.

    Scores are conditional log-probabilities computed at the longest context
    suffix (up to ``order - 1`` tokens) observed in training; a context with
    no observed suffix falls back level by level down to the unigram
    distribution. Each returned distribution is exactly normalized.
    """

    concurrency_safe = True

    def __init__(
        self,
        vocab_size: int,
        order: int = 3,
        delta: float = 0.1,
        context_limit: int | None = 32768,
    ):
        if vocab_size < 1:
            raise ValueError("vocab_size must be positive")
        if order < 1:
            raise ValueError("order must be >= 1")
        if delta <= 0:
            raise ValueError("smoothing delta must be > 0")
        self.vocab_size = vocab_size
        self.order = order
        self.delta = delta
        self.context_limit = context_limit
        # counts[ctx][token] for every context length 0 .. order-1
        self._counts: dict[tuple[int, ...], dict[int, int]] = {}
        self._totals: dict[tuple[int, ...], int] = {}
        self._fitted = False

    def fit(self, corpus: Iterable[Document]) -> "NgramLM":
        """Count n-grams over the flattened token stream of each document."""
        streams = [doc.flatten() for doc in corpus]
        if not any(streams):
            raise ValueError("empty corpus: no tokens to train on")
        for stream in streams:
            for tid in stream:
                if not 0 <= tid < self.vocab_size:
                    raise ValueError(f"token id {tid} outside vocabulary of size {self.vocab_size}")
            for width in range(self.order):
                for i in range(width, len(stream)):
                    ctx = tuple(stream[i - width : i])
                    token = stream[i]
                    by_token = self._counts.setdefault(ctx, {})
                    by_token[token] = by_token.get(token, 0) + 1
                    self._totals[ctx] = self._totals.get(ctx, 0) + 1
        self._fitted = True
        return self

    def score(self, context: Sequence[int], must_score: Collection[int] = ()) -> np.ndarray:
        if not self._fitted:
            raise RuntimeError("NgramLM.score called before fit")
        if self.context_limit is not None and len(context) > self.context_limit:
            raise ContextTooLongError(len(context), self.context_limit)
        context = tuple(int(t) for t in context)
        width = min(self.order - 1, len(context))
        ctx = context[len(context) - width :]
        while ctx not in self._totals:
            ctx = ctx[1:]  # () is always present after fit, so this terminates
        counts = np.full(self.vocab_size, self.delta, dtype=np.float64)
        for token, c in self._counts[ctx].items():
            counts[token] += c
        total = self._totals[ctx] + self.delta * self.vocab_size
        return np.log(counts) - np.log(total)
