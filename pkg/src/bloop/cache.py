"""Intra-sentence bigram cache with constant-time follower lookup.

The cache maps each token id to the deduplicated, sorted set of ids that
immediately follow it inside some sentence of the source document, plus the
occurrence count of every such pair (used by the frequency-weighted
promotion variant). Pairs never span sentence boundaries.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .text import Document

_EMPTY = np.empty(0, dtype=np.int64)
_EMPTY.flags.writeable = False


@dataclass
class LookupCounter:
    """Per-decode-session hit/miss instrumentation (a hit is a non-empty result)."""

    hits: int = 0
    misses: int = 0

    @property
    def lookups(self) -> int:
        return self.hits + self.misses

    @property
    def hit_rate(self) -> float | None:
        total = self.lookups
        return self.hits / total if total else None


class BigramCache:
    """Follower table over a document's intra-sentence adjacent token pairs.

    Immutable after build and safely shared across concurrent decodes;
    hit/miss instrumentation lives in per-session :class:`LookupCounter`
    objects passed to :meth:`lookup`, never in the cache itself.
    """

    def __init__(
        self,
        followers: dict[int, np.ndarray],
        counts: dict[int, np.ndarray],
        source_doc_id: str | None = None,
    ):
        self._followers = followers
        self._counts = counts
        self.source_doc_id = source_doc_id
        for arr in followers.values():
            arr.flags.writeable = False
        for arr in counts.values():
            arr.flags.writeable = False

    @classmethod
    def build(cls, doc: Document, source_doc_id: str | None = None) -> "BigramCache":
        pair_counts: dict[int, dict[int, int]] = {}
        for sentence in doc.sentences:
            for a, b in zip(sentence, sentence[1:]):
                by_follower = pair_counts.setdefault(a, {})
                by_follower[b] = by_follower.get(b, 0) + 1
        followers = {}
        counts = {}
        for a, by_follower in pair_counts.items():
            ids = np.array(sorted(by_follower), dtype=np.int64)
            followers[a] = ids
            counts[a] = np.array([by_follower[b] for b in ids], dtype=np.int64)
        return cls(followers, counts, source_doc_id)

    def lookup(self, prev: int, counter: LookupCounter | None = None) -> np.ndarray:
        """Sorted follower ids of ``prev`` (empty array when none).

        Unknown ids are valid queries and return the empty set. When a
        ``counter`` is supplied the lookup is recorded as a hit iff the
        result is non-empty.
        """
        result = self._followers.get(prev, _EMPTY)
        if counter is not None:
            if len(result):
                counter.hits += 1
            else:
                counter.misses += 1
        return result

    def follower_counts(self, prev: int) -> np.ndarray:
        """Pair counts aligned with ``lookup(prev)``."""
        return self._counts.get(prev, _EMPTY)

    def pair_count(self, a: int, b: int) -> int:
        ids = self._followers.get(a)
        if ids is None:
            return 0
        pos = int(np.searchsorted(ids, b))
        if pos < len(ids) and ids[pos] == b:
            return int(self._counts[a][pos])
        return 0

    @property
    def num_pairs(self) -> int:
        return sum(len(v) for v in self._followers.values())

    def to_triples(self) -> list[tuple[int, int, int]]:
        """All ``(token, follower, count)`` triples, sorted lexicographically."""
        triples = []
        for a in sorted(self._followers):
            ids = self._followers[a]
            cnts = self._counts[a]
            for b, c in zip(ids.tolist(), cnts.tolist()):
                triples.append((a, b, c))
        return triples

    @classmethod
    def from_triples(
        cls, triples, source_doc_id: str | None = None
    ) -> "BigramCache":
        by_token: dict[int, dict[int, int]] = {}
        for a, b, c in triples:
            if c < 1:
                raise ValueError(f"pair ({a}, {b}) has count {c} < 1")
            by_follower = by_token.setdefault(int(a), {})
            if int(b) in by_follower:
                raise ValueError(f"duplicate pair ({a}, {b})")
            by_follower[int(b)] = int(c)
        followers = {}
        counts = {}
        for a, by_follower in by_token.items():
            ids = np.array(sorted(by_follower), dtype=np.int64)
            followers[a] = ids
            counts[a] = np.array([by_follower[b] for b in ids], dtype=np.int64)
        return cls(followers, counts, source_doc_id)

    def __eq__(self, other) -> bool:
        if not isinstance(other, BigramCache):
            return NotImplemented
        return self.to_triples() == other.to_triples()

    def to_json(self) -> str:
        """Canonical JSON form: sorted triples, no float fields; byte-stable."""
        payload = {
            "source_doc_id": self.source_doc_id,
            "triples": [list(t) for t in self.to_triples()],
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "BigramCache":
        payload = json.loads(text)
        return cls.from_triples(payload["triples"], payload.get("source_doc_id"))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_json())
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "BigramCache":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(fh.read())
