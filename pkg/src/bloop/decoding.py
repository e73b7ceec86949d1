"""Deterministic beam search over promoted logits, with per-step tracing.

Hypotheses are scored by the cumulative sum of their selected tokens'
promoted logits. All tie-breaks are fixed (higher score, then shorter, then
lexicographically smaller id sequence; argmax ties go to the lowest id), so
a decode is bit-identical across runs given identical inputs.

Stop conditions per hypothesis:

* any configured stop string occurs in the detokenized generated text (the
  text is cut at the match; a vocabulary is required for this check);
* the selected token id is in ``stop_token_ids`` (the terminator token is
  kept in ``ids`` for score/trace consistency but excluded from ``text``);
* the generated length reaches ``max_new_tokens``.

The search banks finished hypotheses aside and ends once the bank holds
``beam_width`` of them (or no live hypothesis remains); the result is the
banked hypothesis with the best length-adjusted score.

A single decode is sequential (each step depends on the last). Separate
decodes may run concurrently against the same immutable cache, and against
the same backend when it declares itself concurrency-safe.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .cache import BigramCache, LookupCounter
from .promotion import PromotionConfig, promote
from .text import Document, Vocabulary, detokenize

_FULL_SORT_MAX_VOCAB = 4096

STOP_STRING = "stop_string"
STOP_TOKEN = "stop_token"
MAX_LENGTH = "max_length"


class BackendScoreError(RuntimeError):
    """Backend failure during decoding, annotated with the failing step."""

    def __init__(self, step: int, cause: Exception):
        super().__init__(f"backend failed at generation step {step}: {cause}")
        self.step = step
        self.cause = cause


@dataclass(frozen=True)
class StepRecord:
    step: int
    looked_up: bool
    cache_hit: bool
    promotion_applied: bool
    argmax_changed: bool
    raw_argmax: int
    final_argmax: int


@dataclass(frozen=True)
class DecodeConfig:
    beam_width: int = 4
    promotion: PromotionConfig = field(default_factory=PromotionConfig)
    max_new_tokens: int = 64
    stop_strings: tuple[str, ...] = (".\n",)
    stop_token_ids: frozenset[int] = field(default_factory=frozenset)
    length_penalty: float = 0.0

    def __post_init__(self):
        if self.beam_width < 1:
            raise ValueError("beam_width must be >= 1")
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be >= 1")
        if any(s == "" for s in self.stop_strings):
            raise ValueError("stop strings must be non-empty")


@dataclass(frozen=True)
class BeamHypothesis:
    ids: tuple[int, ...]
    score: float
    finished: bool = False
    finish_reason: str | None = None
    text: str | None = None
    trace: tuple[StepRecord, ...] = ()

    def adjusted_score(self, length_penalty: float) -> float:
        return self.score + length_penalty * len(self.ids)

    def sort_key(self, length_penalty: float):
        return (-self.adjusted_score(length_penalty), len(self.ids), self.ids)


@dataclass
class DecodeResult:
    best: BeamHypothesis
    finished: list[BeamHypothesis]
    counter: LookupCounter
    natural_stop: bool


def _top_candidates(logits: np.ndarray, fanout: int) -> np.ndarray:
    """Indices of the ``fanout`` best logits, descending, ties to lowest id.

    Small vocabularies use a full stable argsort. Larger ones pre-select with
    argpartition and re-sort exactly; a tie straddling the partition boundary
    is then resolved by the partition (never observed with real-valued
    logits, noted here for completeness).
    """
    n = len(logits)
    if fanout >= n or n <= _FULL_SORT_MAX_VOCAB:
        return np.argsort(-logits, kind="stable")[:fanout]
    part = np.argpartition(-logits, fanout - 1)[:fanout]
    part.sort()  # restore id order so the stable sort breaks ties toward low ids
    return part[np.argsort(-logits[part], kind="stable")]


def decode(
    backend,
    prompt_context: Sequence[int],
    cache: BigramCache,
    cfg: DecodeConfig,
    vocab: Vocabulary | None = None,
) -> DecodeResult:
    """Beam-search generation conditioned on ``prompt_context``.

    ``vocab`` enables stop-string detection and hypothesis text rendering;
    without it only token/length stops apply and ``text`` is None.
    """
    prompt = [int(t) for t in prompt_context]
    counter = LookupCounter()
    fanout = 2 * cfg.beam_width
    live = [BeamHypothesis(ids=(), score=0.0)]
    banked: list[BeamHypothesis] = []

    for step in range(1, cfg.max_new_tokens + 1):
        candidates: list[BeamHypothesis] = []
        for hyp in live:
            prev = hyp.ids[-1] if hyp.ids else None
            must_score = cache.lookup(prev) if prev is not None else ()
            try:
                logits = backend.score(prompt + list(hyp.ids), must_score)
            except Exception as exc:
                raise BackendScoreError(step, exc) from exc
            outcome = promote(logits, prev, cache, cfg.promotion, step, counter)
            record = StepRecord(
                step=step,
                looked_up=outcome.looked_up,
                cache_hit=outcome.cache_hit,
                promotion_applied=outcome.applied,
                argmax_changed=outcome.argmax_changed,
                raw_argmax=outcome.raw_argmax,
                final_argmax=outcome.final_argmax,
            )
            promoted = outcome.logits
            for v in _top_candidates(promoted, fanout):
                v = int(v)
                candidates.append(
                    BeamHypothesis(
                        ids=hyp.ids + (v,),
                        score=hyp.score + float(promoted[v]),
                        trace=hyp.trace + (record,),
                    )
                )

        candidates.sort(key=lambda c: (-c.score, c.ids))
        survivors = candidates[: cfg.beam_width]

        live = []
        for hyp in survivors:
            finished = _apply_stops(hyp, cfg, vocab, step)
            if finished is not None:
                banked.append(finished)
            else:
                live.append(hyp)
        if len(banked) >= cfg.beam_width or not live:
            break

    if banked:
        pool = banked
        natural = True
    else:
        # unreachable with a non-empty vocabulary (the final step banks every
        # survivor via the max-length stop); kept as a guard
        pool = live
        natural = False
    pool = sorted(pool, key=lambda h: h.sort_key(cfg.length_penalty))
    best = pool[0]
    finished_sorted = sorted(banked, key=lambda h: h.sort_key(cfg.length_penalty))
    natural = natural and best.finish_reason in (STOP_STRING, STOP_TOKEN)
    return DecodeResult(best=best, finished=finished_sorted, counter=counter, natural_stop=natural)


def _apply_stops(
    hyp: BeamHypothesis, cfg: DecodeConfig, vocab: Vocabulary | None, step: int
) -> BeamHypothesis | None:
    """Finished version of ``hyp`` if a stop condition fired, else None."""
    last = hyp.ids[-1]
    if last in cfg.stop_token_ids:
        text = detokenize(hyp.ids[:-1], vocab) if vocab is not None else None
        return replace(hyp, finished=True, finish_reason=STOP_TOKEN, text=text)
    if vocab is not None:
        text = detokenize(hyp.ids, vocab)
        if cfg.stop_strings:
            cut = min(
                (idx for idx in (text.find(s) for s in cfg.stop_strings) if idx != -1),
                default=-1,
            )
            if cut != -1:
                return replace(
                    hyp, finished=True, finish_reason=STOP_STRING, text=text[:cut]
                )
    else:
        text = None
    if step >= cfg.max_new_tokens:
        return replace(hyp, finished=True, finish_reason=MAX_LENGTH, text=text)
    return None


@dataclass
class TraceSummary:
    """Per-decode statistics over the winning hypothesis's step records."""

    steps: int
    lookups: int
    hits: int
    argmax_changes: int

    @property
    def hit_rate(self) -> float | None:
        return self.hits / self.lookups if self.lookups else None

    @property
    def argmax_change_rate(self) -> float | None:
        return self.argmax_changes / self.steps if self.steps else None

    @classmethod
    def from_records(cls, records: Sequence[StepRecord]) -> "TraceSummary":
        return cls(
            steps=len(records),
            lookups=sum(1 for r in records if r.looked_up),
            hits=sum(1 for r in records if r.cache_hit),
            argmax_changes=sum(1 for r in records if r.argmax_changed),
        )


@dataclass
class BatchItem:
    index: int
    result: DecodeResult | None
    summary: TraceSummary | None
    error: str | None = None


def batch_decode(
    backend,
    documents: Sequence[Document],
    cfg: DecodeConfig,
    vocab: Vocabulary | None = None,
    caches: Sequence[BigramCache] | None = None,
) -> list[BatchItem]:
    """Decode one summary per document against a shared backend.

    Each document conditions on its own flattened token ids and promotes
    against its own cache (built on the fly unless supplied). Per-document
    failures are recorded on the item instead of aborting the batch.
    """
    items: list[BatchItem] = []
    for i, doc in enumerate(documents):
        cache = caches[i] if caches is not None else BigramCache.build(doc)
        try:
            result = decode(backend, doc.flatten(), cache, cfg, vocab)
        except Exception as exc:
            items.append(BatchItem(index=i, result=None, summary=None, error=str(exc)))
            continue
        summary = TraceSummary.from_records(result.best.trace)
        items.append(BatchItem(index=i, result=result, summary=summary))
    return items
