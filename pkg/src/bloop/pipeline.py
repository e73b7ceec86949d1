"""End-to-end per-example summarization runners shared by the CLI and tuner.

Reference mode builds everything from the example itself: the vocabulary and
document come from tokenizing the source, the n-gram language model is
trained on that document, the prompt is the (truncated) source token stream,
and the stop set derives from the vocabulary's newline mask. Bridge mode
delegates tokenization and prompt rendering to the external process: one raw
``open`` fetches the article's token ids for the bigram cache, a second
templated ``open`` yields the prompt ids the decode conditions on.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .backends import NgramLM
from .bridge_client import BridgeClient
from .cache import BigramCache
from .decoding import DecodeConfig, DecodeResult, TraceSummary, decode
from .text import Document, Vocabulary, detokenize, tokenize

DEFAULT_PROMPT_TEMPLATE = (
    "Write a paragraph summarizing the given article without preamble.\n\n{article}"
)


@dataclass
class ReferenceSettings:
    lm_order: int = 3
    lm_delta: float = 0.1
    context_budget: int | None = None  # default: half the backend context limit
    extra_training_docs: tuple[Document, ...] = ()


@dataclass
class ExampleOutcome:
    prediction: str
    result: DecodeResult
    summary: TraceSummary
    prompt_tokens: int

    def trace_record(self, example_id) -> dict:
        s = self.summary
        return {
            "id": example_id,
            "steps": s.steps,
            "lookups": s.lookups,
            "hits": s.hits,
            "argmax_changes": s.argmax_changes,
            "hit_rate": s.hit_rate,
            "argmax_change_rate": s.argmax_change_rate,
            "prompt_tokens": self.prompt_tokens,
            "finish_reason": self.result.best.finish_reason,
            "score": self.result.best.score,
        }


def _resolve_budget(context_budget: int | None, context_limit: int | None) -> int | None:
    if context_budget is not None:
        if context_budget <= 0:
            raise ValueError("context budget must be positive")
        return context_budget
    if context_limit is not None:
        return context_limit // 2
    return None


def _with_stop_set(cfg: DecodeConfig, newline_ids: frozenset[int]) -> DecodeConfig:
    """Default the promotion stop set to the newline-bearing ids."""
    if cfg.promotion.stop_set or not newline_ids:
        return cfg
    return replace(cfg, promotion=replace(cfg.promotion, stop_set=newline_ids))


def summarize_with_reference(
    source: str,
    cfg: DecodeConfig,
    settings: ReferenceSettings | None = None,
) -> ExampleOutcome:
    """Reference-backend run: self-trained n-gram LM over the source."""
    settings = settings or ReferenceSettings()
    doc, vocab = tokenize(source)
    if doc.token_count == 0:
        raise ValueError("source has no tokens")
    lm = NgramLM(len(vocab), order=settings.lm_order, delta=settings.lm_delta)
    lm.fit([doc, *settings.extra_training_docs])
    cache = BigramCache.build(doc)

    prompt = doc.flatten()
    budget = _resolve_budget(settings.context_budget, lm.context_limit)
    if budget is not None:
        prompt = prompt[:budget]

    cfg = _with_stop_set(cfg, vocab.newline_token_ids)
    result = decode(lm, prompt, cache, cfg, vocab)
    best = result.best
    text = best.text if best.text is not None else detokenize(best.ids, vocab)
    return ExampleOutcome(
        prediction=text,
        result=result,
        summary=TraceSummary.from_records(best.trace),
        prompt_tokens=len(prompt),
    )


def summarize_with_bridge(
    client: BridgeClient,
    article: str,
    cfg: DecodeConfig,
    prompt_template: str = DEFAULT_PROMPT_TEMPLATE,
    context_budget: int | None = None,
    vocab: Vocabulary | None = None,
) -> ExampleOutcome:
    """Bridge-backend run over freshly opened sessions.

    Without a surface-form vocabulary the stop strings cannot be checked, so
    generation instead halts on the handshake's newline token ids.
    """
    budget = _resolve_budget(context_budget, client.context_limit)
    if budget is None:
        raise ValueError("bridge did not declare a context limit and no budget was given")

    _, article_ids = client.open_session(article, budget, raw=True)
    cache = BigramCache.build(_segment_by_newlines(article_ids, client.newline_token_ids, article))

    # literal substitution: articles and custom templates may contain braces
    prompt_text = prompt_template.replace("{article}", article)
    _, prompt_ids = client.open_session(prompt_text, budget)

    cfg = _with_stop_set(cfg, client.newline_token_ids)
    if vocab is None:
        cfg = replace(
            cfg,
            stop_strings=(),
            stop_token_ids=cfg.stop_token_ids | client.newline_token_ids,
        )

    result = decode(client, prompt_ids, cache, cfg, vocab)
    best = result.best
    if best.text is not None:
        text = best.text
    elif vocab is not None:
        text = detokenize(best.ids, vocab)
    else:
        text = " ".join(str(t) for t in best.ids)
    return ExampleOutcome(
        prediction=text,
        result=result,
        summary=TraceSummary.from_records(best.trace),
        prompt_tokens=len(prompt_ids),
    )


def _segment_by_newlines(ids, newline_ids: frozenset[int], raw: str) -> Document:
    """Sentence-split a neural-token stream at newline-bearing ids.

    Newlines are the only boundary signal the handshake provides; within a
    line, all adjacent pairs count as intra-sentence bigrams.
    """
    sentences: list[tuple[int, ...]] = []
    current: list[int] = []
    for tid in ids:
        current.append(int(tid))
        if tid in newline_ids:
            sentences.append(tuple(current))
            current = []
    if current:
        sentences.append(tuple(current))
    return Document(tuple(sentences), raw)
