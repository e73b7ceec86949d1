import itertools
import random

import numpy as np
import pytest

from bloop.backends import NgramLM
from bloop.cache import BigramCache
from bloop.decoding import (
    BackendScoreError,
    DecodeConfig,
    TraceSummary,
    batch_decode,
    decode,
)
from bloop.promotion import PromotionConfig, promote
from bloop.text import Document, Vocabulary, tokenize

from conftest import random_document


def random_instance(rng: random.Random, vocab_size: int = 4):
    """Random trained LM + cache + prompt over a tiny id space."""
    corpus_doc = random_document(rng, vocab_size, max_tokens=60)
    while corpus_doc.token_count == 0:
        corpus_doc = random_document(rng, vocab_size, max_tokens=60)
    cache_doc = random_document(rng, vocab_size, max_tokens=40)
    lm = NgramLM(vocab_size, order=rng.choice([2, 3]), delta=rng.choice([0.1, 0.5])).fit(
        [corpus_doc]
    )
    cache = BigramCache.build(cache_doc)
    prompt = [rng.randrange(vocab_size) for _ in range(rng.randint(1, 5))]
    return lm, cache, prompt


def replay_score(lm, cache, prompt, ids, promo: PromotionConfig) -> float:
    """Oracle scoring: promote each step's logits and sum the selected entries."""
    total = 0.0
    for t, token in enumerate(ids, start=1):
        context = list(prompt) + list(ids[: t - 1])
        prev = ids[t - 2] if t >= 2 else None
        out = promote(lm.score(context), prev, cache, promo, t)
        total += float(out.logits[token])
    return total


def exhaustive_best(lm, cache, prompt, horizon, promo, vocab_size):
    """Enumerate every length-``horizon`` sequence; max total score, decode ties."""
    best_ids, best_score = None, None
    for ids in itertools.product(range(vocab_size), repeat=horizon):
        score = replay_score(lm, cache, prompt, ids, promo)
        if best_score is None or score > best_score or (score == best_score and ids < best_ids):
            best_ids, best_score = ids, score
    return best_ids, best_score


def greedy_oracle(lm, cache, prompt, steps, promo):
    ids = []
    for t in range(1, steps + 1):
        prev = ids[-1] if ids else None
        out = promote(lm.score(list(prompt) + ids), prev, cache, promo, t)
        ids.append(int(np.argmax(out.logits)))
    return tuple(ids)


def test_beam_oracle_small():
    rng = random.Random(31)
    for trial in range(15):
        lm, cache, prompt = random_instance(rng)
        alpha = rng.choice([0.0, 1.5, 3.0, -2.0])
        promo = PromotionConfig(alpha=alpha)
        cfg = DecodeConfig(
            beam_width=256, promotion=promo, max_new_tokens=4, stop_strings=()
        )
        result = decode(lm, prompt, cache, cfg)
        oracle_ids, oracle_score = exhaustive_best(lm, cache, prompt, 4, promo, 4)
        assert result.best.ids == oracle_ids
        assert result.best.score == pytest.approx(oracle_score, abs=1e-12)


def test_greedy_equals_stepwise_argmax():
    rng = random.Random(32)
    for trial in range(25):
        lm, cache, prompt = random_instance(rng)
        promo = PromotionConfig(alpha=rng.choice([0.0, 2.0, -1.0]))
        cfg = DecodeConfig(beam_width=1, promotion=promo, max_new_tokens=6, stop_strings=())
        result = decode(lm, prompt, cache, cfg)
        assert result.best.ids == greedy_oracle(lm, cache, prompt, 6, promo)


def test_zero_alpha_equals_promotion_free_decode():
    rng = random.Random(33)
    empty_cache = BigramCache.build(Document((), ""))
    for _ in range(10):
        lm, cache, prompt = random_instance(rng)
        cfg = DecodeConfig(beam_width=3, promotion=PromotionConfig(alpha=0.0),
                           max_new_tokens=5, stop_strings=())
        with_cache = decode(lm, prompt, cache, cfg)
        without = decode(lm, prompt, empty_cache, cfg)
        assert with_cache.best.ids == without.best.ids
        assert with_cache.best.score == without.best.score


def test_score_consistency_replay():
    rng = random.Random(34)
    for _ in range(10):
        lm, cache, prompt = random_instance(rng)
        promo = PromotionConfig(alpha=2.0)
        cfg = DecodeConfig(beam_width=4, promotion=promo, max_new_tokens=5, stop_strings=())
        best = decode(lm, prompt, cache, cfg).best
        assert best.score == pytest.approx(
            replay_score(lm, cache, prompt, best.ids, promo), abs=1e-9
        )


@pytest.mark.xfail(
    reason="width monotonicity is not a theorem of beam search: a wider beam's "
    "extra hypotheses can crowd the narrow beam's winning path out of an "
    "intermediate top-k (seed 35, instance 7 is a concrete counterexample "
    "where width 3 finds the exhaustive optimum and width 4 does not)",
    strict=False,
)
def test_monotone_beam_widths():
    rng = random.Random(35)
    for _ in range(10):
        lm, cache, prompt = random_instance(rng, vocab_size=5)
        promo = PromotionConfig(alpha=1.0)
        scores = []
        for width in range(1, 6):
            cfg = DecodeConfig(beam_width=width, promotion=promo,
                               max_new_tokens=5, stop_strings=())
            scores.append(decode(lm, prompt, cache, cfg).best.score)
        for narrow, wide in zip(scores, scores[1:]):
            assert wide >= narrow - 1e-12


def test_exhaustive_width_dominates_every_width():
    # the provable direction: a beam wide enough to be exhaustive scores at
    # least as high as any narrower beam
    rng = random.Random(40)
    for _ in range(8):
        lm, cache, prompt = random_instance(rng)
        promo = PromotionConfig(alpha=1.5)
        full = decode(
            lm, prompt, cache,
            DecodeConfig(beam_width=256, promotion=promo, max_new_tokens=4, stop_strings=()),
        ).best.score
        for width in (1, 2, 3, 4, 8):
            cfg = DecodeConfig(beam_width=width, promotion=promo,
                               max_new_tokens=4, stop_strings=())
            assert full >= decode(lm, prompt, cache, cfg).best.score - 1e-12


def test_trace_completeness_and_step_records():
    rng = random.Random(36)
    lm, cache, prompt = random_instance(rng)
    cfg = DecodeConfig(beam_width=3, promotion=PromotionConfig(alpha=1.0),
                       max_new_tokens=6, stop_strings=())
    best = decode(lm, prompt, cache, cfg).best
    assert len(best.trace) == len(best.ids)
    assert [r.step for r in best.trace] == list(range(1, len(best.ids) + 1))
    assert not best.trace[0].looked_up  # first step has no previous token
    for rec in best.trace:
        assert rec.argmax_changed <= rec.promotion_applied


def test_stop_string_finishes_and_trims():
    source = "one two three four. one two three four."
    doc, vocab = tokenize(source)
    lm = NgramLM(len(vocab), order=3, delta=0.01).fit([doc])
    cache = BigramCache.build(doc)
    cfg = DecodeConfig(beam_width=2, promotion=PromotionConfig(alpha=1.0),
                       max_new_tokens=20, stop_strings=(".",))
    result = decode(lm, doc.flatten(), cache, cfg, vocab)
    assert result.best.finish_reason == "stop_string"
    assert result.natural_stop
    assert "." not in result.best.text
    assert result.best.text  # non-empty text before the stop


def test_stop_string_spanning_two_tokens():
    vocab = Vocabulary(["a", "b", "c"])
    doc = Document(((0, 1, 2),), "a b c")

    class Scripted:
        vocab_size = 3
        concurrency_safe = True
        context_limit = None

        def score(self, context, must_score=()):
            # always prefer a, then b, then c
            return np.array([3.0, 2.0, 1.0]) - 0.1 * len(context)

    cfg = DecodeConfig(beam_width=1, promotion=PromotionConfig(),
                       max_new_tokens=5, stop_strings=("a a",))
    result = decode(Scripted(), [2], BigramCache.build(doc), cfg, vocab)
    # greedy emits a, a -> detokenized "a a" matches across the token boundary
    assert result.best.ids == (0, 0)
    assert result.best.finish_reason == "stop_string"
    assert result.best.text == ""  # match starts at offset 0


def test_stop_token_halts_and_trims():
    vocab = Vocabulary(["x", ".\n", "y"])

    class Scripted:
        vocab_size = 3
        concurrency_safe = True
        context_limit = None

        def __init__(self):
            self.calls = 0

        def score(self, context, must_score=()):
            self.calls += 1
            if self.calls < 3:
                return np.array([1.0, 0.0, -1.0])
            return np.array([0.0, 1.0, -1.0])

    cache = BigramCache.build(Document((), ""))
    cfg = DecodeConfig(beam_width=1, promotion=PromotionConfig(), max_new_tokens=10,
                       stop_strings=(), stop_token_ids=frozenset({1}))
    result = decode(Scripted(), [0], cache, cfg, vocab)
    assert result.best.ids == (0, 0, 1)
    assert result.best.finish_reason == "stop_token"
    assert result.best.text == "x x"
    assert result.natural_stop


def test_stop_token_takes_priority_over_stop_string():
    vocab = Vocabulary(["a", ".\n"])

    class Scripted:
        vocab_size = 2
        concurrency_safe = True
        context_limit = None

        def __init__(self):
            self.calls = 0

        def score(self, context, must_score=()):
            self.calls += 1
            return np.array([1.0, 0.0]) if self.calls < 2 else np.array([0.0, 1.0])

    cache = BigramCache.build(Document((), ""))
    cfg = DecodeConfig(beam_width=1, promotion=PromotionConfig(), max_new_tokens=6,
                       stop_strings=(".\n",), stop_token_ids=frozenset({1}))
    result = decode(Scripted(), [0], cache, cfg, vocab)
    # both conditions fire on the same token; the terminator is trimmed either way
    assert result.best.finish_reason == "stop_token"
    assert result.best.text == "a"
    assert result.natural_stop


def test_max_length_flagged_not_natural():
    rng = random.Random(37)
    lm, cache, prompt = random_instance(rng)
    cfg = DecodeConfig(beam_width=2, promotion=PromotionConfig(), max_new_tokens=3,
                       stop_strings=())
    result = decode(lm, prompt, cache, cfg)
    assert result.best.finished
    assert result.best.finish_reason == "max_length"
    assert not result.natural_stop


def test_backend_error_carries_step():
    class Flaky:
        vocab_size = 4
        concurrency_safe = True
        context_limit = None

        def __init__(self):
            self.calls = 0

        def score(self, context, must_score=()):
            self.calls += 1
            if self.calls >= 3:
                raise RuntimeError("backend exploded")
            return np.zeros(4)

    cache = BigramCache.build(Document((), ""))
    cfg = DecodeConfig(beam_width=1, promotion=PromotionConfig(), max_new_tokens=8,
                       stop_strings=())
    with pytest.raises(BackendScoreError, match="step 3") as err:
        decode(Flaky(), [0], cache, cfg)
    assert err.value.step == 3


def test_decode_determinism_bitwise():
    rng = random.Random(38)
    lm, cache, prompt = random_instance(rng)
    cfg = DecodeConfig(beam_width=4, promotion=PromotionConfig(alpha=2.0),
                       max_new_tokens=6, stop_strings=())
    a = decode(lm, prompt, cache, cfg)
    b = decode(lm, prompt, cache, cfg)
    assert a.best.ids == b.best.ids
    assert a.best.score.hex() == b.best.score.hex()
    assert [h.ids for h in a.finished] == [h.ids for h in b.finished]


def test_length_penalty_orders_final_pool():
    source = "one two three four. one two three four."
    doc, vocab = tokenize(source)
    lm = NgramLM(len(vocab), order=3, delta=0.3).fit([doc])
    cache = BigramCache.build(doc)
    for penalty in (0.0, 0.5, -0.5):
        cfg = DecodeConfig(beam_width=4, promotion=PromotionConfig(alpha=1.0),
                           max_new_tokens=8, stop_strings=(".",),
                           length_penalty=penalty)
        result = decode(lm, doc.flatten(), cache, cfg, vocab)
        best_adjusted = max(h.adjusted_score(penalty) for h in result.finished)
        assert result.best.adjusted_score(penalty) == best_adjusted
        assert result.best.adjusted_score(penalty) == (
            result.best.score + penalty * len(result.best.ids)
        )


def test_config_validation():
    with pytest.raises(ValueError):
        DecodeConfig(beam_width=0)
    with pytest.raises(ValueError):
        DecodeConfig(max_new_tokens=0)
    with pytest.raises(ValueError):
        DecodeConfig(stop_strings=("",))


def test_batch_decode_empty_and_errors():
    doc, vocab = tokenize("a b a b")
    lm = NgramLM(len(vocab), order=2, delta=0.1).fit([doc])
    cfg = DecodeConfig(beam_width=2, promotion=PromotionConfig(alpha=1.0),
                       max_new_tokens=4, stop_strings=())
    assert batch_decode(lm, [], cfg) == []

    bad = Document(((0, 99),), "")  # id outside the LM vocabulary
    items = batch_decode(lm, [doc, bad, doc], cfg, vocab)
    assert [i.error is None for i in items] == [True, False, True]
    assert items[0].result.best.ids == items[2].result.best.ids
    assert items[1].result is None and items[1].summary is None


def test_batch_decode_order_invariance():
    rng = random.Random(39)
    docs = [random_document(rng, 5, max_tokens=30) for _ in range(3)]
    docs = [d for d in docs if d.token_count > 1]
    corpus = Document(tuple(s for d in docs for s in d.sentences), "")
    lm = NgramLM(5, order=2, delta=0.2).fit([corpus])
    cfg = DecodeConfig(beam_width=2, promotion=PromotionConfig(alpha=1.0),
                       max_new_tokens=4, stop_strings=())
    forward = batch_decode(lm, docs, cfg)
    backward = batch_decode(lm, list(reversed(docs)), cfg)
    for i, item in enumerate(forward):
        mirror = backward[len(docs) - 1 - i]
        assert item.result.best.ids == mirror.result.best.ids
        assert item.summary == mirror.summary


def test_repeated_sentence_doc_hits_every_lookup():
    source = "red green blue yellow pink." * 4
    doc, vocab = tokenize(source)
    lm = NgramLM(len(vocab), order=3, delta=0.01).fit([doc])
    cache = BigramCache.build(doc)
    cfg = DecodeConfig(beam_width=1, promotion=PromotionConfig(alpha=1.0),
                       max_new_tokens=10, stop_strings=(".",))
    result = decode(lm, doc.flatten(), cache, cfg, vocab)
    summary = TraceSummary.from_records(result.best.trace)
    assert summary.lookups > 0
    assert summary.hit_rate == 1.0
