"""Logit promotion toward source-document bigram continuations.

Given the raw next-token logits and the previously generated token, every
candidate that would extend the previous token into a bigram present in the
source document gets a constant bonus ``alpha`` added to its logit (or
``alpha * pair_count`` under the frequency-weighted variant). Because the
bonus is uniform across the follower set in the plain variant, the relative
order *within* the follower set is untouched; the adjustment only shifts
probability mass toward or away from source continuations as a group.

The promotion is skipped entirely when

* there is no previous generated token yet (``first_step_exempt``), or
* the raw argmax already lands in the stop set (tokens whose surface form
  contains a newline) so that a naturally ending summary is never extended
  artificially, or
* the previous token has no followers in the source.

In those cases the input logits object is returned unchanged (bitwise
identity, no copy).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cache import BigramCache, LookupCounter

PLAIN = "plain"
FREQUENCY_WEIGHTED = "frequency_weighted"
_VARIANTS = (PLAIN, FREQUENCY_WEIGHTED)


@dataclass(frozen=True)
class PromotionConfig:
    """Settings for the per-step logit adjustment.

    ``alpha`` may be any real number; negative values demote source
    continuations. ``stop_set`` is the set of token ids whose surface form
    marks the end of a summary (typically the newline-bearing ids).
    """

    alpha: float = 0.0
    variant: str = PLAIN
    stop_set: frozenset[int] = field(default_factory=frozenset)
    first_step_exempt: bool = True

    def __post_init__(self):
        if self.variant not in _VARIANTS:
            raise ValueError(f"variant must be one of {_VARIANTS}, got {self.variant!r}")


@dataclass(frozen=True)
class PromotionResult:
    logits: np.ndarray
    applied: bool
    argmax_changed: bool
    looked_up: bool
    cache_hit: bool
    raw_argmax: int
    final_argmax: int


def promote(
    logits: np.ndarray,
    prev_token: int | None,
    cache: BigramCache,
    config: PromotionConfig,
    step: int,
    counter: LookupCounter | None = None,
) -> PromotionResult:
    """Apply the bigram promotion to one step's logits.

    ``step`` is 1-based; ``prev_token`` is the last *generated* token (None on
    the first step). The follower lookup happens on every step that has a
    previous token — also when the promotion itself ends up exempted or
    ``alpha`` is zero — so hit-rate statistics are comparable between promoted
    and unpromoted runs. Ties in the argmax are broken toward the lowest id.
    """
    logits = np.asarray(logits)
    if logits.ndim != 1:
        raise ValueError(f"logits must be one-dimensional, got shape {logits.shape}")
    if not np.isfinite(logits).all():
        raise ValueError("non-finite logit in input (corrupt backend output)")
    if step < 1:
        raise ValueError(f"step must be >= 1, got {step}")

    raw_argmax = int(np.argmax(logits))

    def identity(looked_up: bool, cache_hit: bool) -> PromotionResult:
        return PromotionResult(
            logits=logits,
            applied=False,
            argmax_changed=False,
            looked_up=looked_up,
            cache_hit=cache_hit,
            raw_argmax=raw_argmax,
            final_argmax=raw_argmax,
        )

    if prev_token is None:
        return identity(looked_up=False, cache_hit=False)
    if step == 1 and config.first_step_exempt:
        return identity(looked_up=False, cache_hit=False)

    followers = cache.lookup(prev_token, counter)
    hit = bool(len(followers))

    if raw_argmax in config.stop_set:
        return identity(looked_up=True, cache_hit=hit)
    if not hit:
        return identity(looked_up=True, cache_hit=False)

    if config.alpha == 0.0:
        # Zero bonus: keep the exact input array (avoids -0.0 bit churn).
        promoted = logits
        final_argmax = raw_argmax
    else:
        oversized = followers[followers >= len(logits)]
        if len(oversized):
            raise ValueError(
                f"follower id {int(oversized[0])} outside vocabulary of size {len(logits)}"
            )
        promoted = logits.copy()
        if config.variant == FREQUENCY_WEIGHTED:
            promoted[followers] += config.alpha * cache.follower_counts(prev_token)
        else:
            promoted[followers] += config.alpha
        final_argmax = int(np.argmax(promoted))

    return PromotionResult(
        logits=promoted,
        applied=True,
        argmax_changed=final_argmax != raw_argmax,
        looked_up=True,
        cache_hit=True,
        raw_argmax=raw_argmax,
        final_argmax=final_argmax,
    )
