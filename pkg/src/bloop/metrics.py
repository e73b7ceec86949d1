"""Summary-quality metrics: ROUGE, novel n-gram overlap, trace statistics,
and the exp-of-score probability transform for externally supplied scores.

Text inputs are preprocessed canonically: lowercased and split on
non-alphanumeric characters (an optional Porter-stemming toggle is provided;
default off). Pre-tokenized sequences are used as-is, so all metrics can run
either on words or on token ids.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import Mapping, Sequence

from .stemming import porter_stem

_WORD_RE = re.compile(r"[a-z0-9]+")


def words(text: str, stem: bool = False) -> list[str]:
    """Lowercase alphanumeric word stream of ``text``."""
    toks = _WORD_RE.findall(text.lower())
    if stem:
        toks = [porter_stem(t) for t in toks]
    return toks


def _as_units(seq, stem: bool) -> list:
    if isinstance(seq, str):
        return words(seq, stem=stem)
    return list(seq)


def _ngrams(units: Sequence, n: int) -> list[tuple]:
    return [tuple(units[i : i + n]) for i in range(len(units) - n + 1)]


def _prf(match: float, pred_total: float, ref_total: float) -> dict[str, float]:
    precision = match / pred_total if pred_total else 0.0
    recall = match / ref_total if ref_total else 0.0
    f1 = (
        2 * precision * recall / (precision + recall)
        if precision + recall
        else 0.0
    )
    return {"precision": precision, "recall": recall, "f1": f1}


def lcs_length(a: Sequence, b: Sequence) -> int:
    """Longest-common-subsequence length by dynamic programming."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        curr = [0]
        for j, y in enumerate(b, 1):
            if x == y:
                curr.append(prev[j - 1] + 1)
            else:
                curr.append(max(prev[j], curr[-1]))
        prev = curr
    return prev[-1]


def rouge(pred, ref, n, stem: bool = False) -> dict[str, float]:
    """ROUGE-N (clipped n-gram counts) or ROUGE-L (``n="L"``) P/R/F1.

    ``pred``/``ref`` may be raw strings (preprocessed canonically) or
    pre-tokenized sequences. Empty vs. empty scores all zeros.
    """
    p = _as_units(pred, stem)
    r = _as_units(ref, stem)
    if n == "L" or n == "l":
        lcs = lcs_length(p, r)
        return _prf(lcs, len(p), len(r))
    n = int(n)
    if n < 1:
        raise ValueError("n must be >= 1 or 'L'")
    cp = Counter(_ngrams(p, n))
    cr = Counter(_ngrams(r, n))
    match = sum((cp & cr).values())
    return _prf(match, sum(cp.values()), sum(cr.values()))


def novel_ngrams(units: Sequence, source_units: Sequence, n: int) -> set[tuple]:
    """Distinct n-grams of ``units`` that never occur in ``source_units``."""
    source = set(_ngrams(source_units, n))
    return {g for g in _ngrams(units, n) if g not in source}


def novel_ngram_prf(pred, ref, source, n: int, stem: bool = False) -> dict[str, float]:
    """Overlap of prediction and reference *novel* n-grams (absent from source).

    Precision divides by the prediction's novel set size, recall by the
    reference's; 0/0 is defined as 0.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    src = _as_units(source, stem)
    novel_pred = novel_ngrams(_as_units(pred, stem), src, n)
    novel_ref = novel_ngrams(_as_units(ref, stem), src, n)
    match = len(novel_pred & novel_ref)
    return _prf(match, len(novel_pred), len(novel_ref))


def trace_stats(records: Sequence) -> dict[str, float | None]:
    """Hit rate over lookups and argmax-change rate over steps.

    An empty trace reports both rates as ``None`` (absent), not 0.
    """
    steps = len(records)
    lookups = sum(1 for r in records if r.looked_up)
    hits = sum(1 for r in records if r.cache_hit)
    changes = sum(1 for r in records if r.argmax_changed)
    return {
        "hit_rate": hits / lookups if lookups else None,
        "argmax_change_rate": changes / steps if steps else None,
    }


def bartscore_prob(score: float) -> float:
    """e**score; the per-summary probability form of an external log score."""
    score = float(score)
    if not math.isfinite(score):
        raise ValueError(f"non-finite score {score!r}")
    return math.exp(score)


NOVEL_NGRAM_ORDERS = (1, 2, 3)


@dataclass
class MetricsReport:
    """Unweighted per-example means of the metric suite.

    ``count`` is the number of scored examples; records with no prediction
    (for instance per-example decode failures) are excluded from every mean
    and tallied in ``skipped``.
    """

    count: int
    rouge1: dict[str, float]
    rouge2: dict[str, float]
    rougeL: dict[str, float]
    novel_ngram: dict[int, dict[str, float]]
    skipped: int = 0
    hit_rate: float | None = None
    argmax_change_rate: float | None = None
    bartscore_prob: float | None = None
    bartscore_prob_pct: float | None = None

    def to_dict(self) -> dict:
        out = {
            "count": self.count,
            "skipped": self.skipped,
            "rouge1": self.rouge1,
            "rouge2": self.rouge2,
            "rougeL": self.rougeL,
            "novel_ngram": {str(n): v for n, v in self.novel_ngram.items()},
        }
        for name in ("hit_rate", "argmax_change_rate", "bartscore_prob", "bartscore_prob_pct"):
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        return out


def _mean_prf(rows: list[dict[str, float]]) -> dict[str, float]:
    if not rows:
        return {"precision": 0.0, "recall": 0.0, "f1": 0.0}
    keys = ("precision", "recall", "f1")
    return {k: sum(r[k] for r in rows) / len(rows) for k in keys}


def evaluate_records(
    records: Sequence[Mapping],
    scores_by_id: Mapping[str, float] | None = None,
    stem: bool = False,
) -> MetricsReport:
    """Aggregate the metric suite over prediction records.

    Each record needs ``prediction`` and ``reference``; ``source`` enables the
    novel n-gram metrics and per-example ``hit_rate``/``argmax_change_rate``
    fields are averaged when present. ``scores_by_id`` maps record ids to
    externally computed log scores; the report then carries the mean of the
    per-example probabilities (and its x100 percent form).
    """
    r1, r2, rl = [], [], []
    novel: dict[int, list[dict[str, float]]] = {n: [] for n in NOVEL_NGRAM_ORDERS}
    hit_rates: list[float] = []
    change_rates: list[float] = []
    probs: list[float] = []
    skipped = 0
    for rec in records:
        pred = rec.get("prediction")
        if pred is None:
            skipped += 1
            continue
        ref = rec.get("reference", "")
        r1.append(rouge(pred, ref, 1, stem=stem))
        r2.append(rouge(pred, ref, 2, stem=stem))
        rl.append(rouge(pred, ref, "L", stem=stem))
        source = rec.get("source")
        if source is not None:
            for n in NOVEL_NGRAM_ORDERS:
                novel[n].append(novel_ngram_prf(pred, ref, source, n, stem=stem))
        if rec.get("hit_rate") is not None:
            hit_rates.append(float(rec["hit_rate"]))
        if rec.get("argmax_change_rate") is not None:
            change_rates.append(float(rec["argmax_change_rate"]))
        if scores_by_id is not None:
            rec_id = str(rec.get("id"))
            if rec_id in scores_by_id:
                probs.append(bartscore_prob(scores_by_id[rec_id]))
    mean_prob = sum(probs) / len(probs) if probs else None
    return MetricsReport(
        count=len(records) - skipped,
        skipped=skipped,
        rouge1=_mean_prf(r1),
        rouge2=_mean_prf(r2),
        rougeL=_mean_prf(rl),
        novel_ngram={n: _mean_prf(rows) for n, rows in novel.items()},
        hit_rate=sum(hit_rates) / len(hit_rates) if hit_rates else None,
        argmax_change_rate=sum(change_rates) / len(change_rates) if change_rates else None,
        bartscore_prob=mean_prob,
        bartscore_prob_pct=mean_prob * 100 if mean_prob is not None else None,
    )
