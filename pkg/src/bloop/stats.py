"""Paired significance testing: two-sided Wilcoxon signed-rank tests with
exact small-sample p-values, Benjamini-Hochberg false-discovery-rate
adjustment within a declared metric family, and rank-biserial effect sizes.

Differences are taken as ``b - a`` (positive when the second system improves
on the first); zero differences are dropped before ranking. Tied absolute
differences receive midranks. For n up to ``EXACT_LIMIT`` the p-value comes
from the exact null distribution of the signed-rank sum (computed by dynamic
programming over doubled ranks so midranks stay integral); larger samples use
the normal approximation with tie-corrected variance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

EXACT_LIMIT = 20


@dataclass
class WilcoxonResult:
    p_value: float
    w_plus: float
    w_minus: float
    n_effective: int
    rank_biserial: float
    degenerate: bool
    method: str  # "exact" | "approx" | "degenerate"


def _midranks(values: Sequence[float]) -> list[float]:
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2 + 1
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def _exact_p_two_sided(doubled_ranks: list[int], doubled_w: int) -> float:
    """P-value from the exact distribution of the doubled signed-rank sum.

    ``counts[s]`` is the number of sign assignments with doubled W+ equal to
    ``s``; built by convolving ``(1 + z**r)`` over all doubled ranks.
    """
    total = sum(doubled_ranks)
    counts = [0] * (total + 1)
    counts[0] = 1
    for r in doubled_ranks:
        for s in range(total - r, -1, -1):
            if counts[s]:
                counts[s + r] += counts[s]
    n_assignments = 2 ** len(doubled_ranks)
    low = sum(counts[: doubled_w + 1])
    high = sum(counts[doubled_w:])
    p = 2 * min(low, high) / n_assignments
    return min(1.0, p)


def _normal_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def wilcoxon_signed_rank(a: Sequence[float], b: Sequence[float]) -> WilcoxonResult:
    """Two-sided Wilcoxon signed-rank test on paired samples.

    Requires equal lengths of at least 5. All-zero differences yield the
    degenerate result (p = 1, effect size 0).
    """
    if len(a) != len(b):
        raise ValueError(f"paired samples differ in length: {len(a)} vs {len(b)}")
    if len(a) < 5:
        raise ValueError(f"need at least 5 pairs, got {len(a)}")
    diffs = [float(y) - float(x) for x, y in zip(a, b)]
    diffs = [d for d in diffs if d != 0.0]
    n = len(diffs)
    if n == 0:
        return WilcoxonResult(
            p_value=1.0, w_plus=0.0, w_minus=0.0, n_effective=0,
            rank_biserial=0.0, degenerate=True, method="degenerate",
        )
    ranks = _midranks([abs(d) for d in diffs])
    w_plus = sum(r for r, d in zip(ranks, diffs) if d > 0)
    w_minus = sum(r for r, d in zip(ranks, diffs) if d < 0)
    total = w_plus + w_minus  # n(n+1)/2

    if n <= EXACT_LIMIT:
        doubled = [round(2 * r) for r in ranks]
        p = _exact_p_two_sided(doubled, round(2 * w_plus))
        method = "exact"
    else:
        mean = n * (n + 1) / 4
        var = n * (n + 1) * (2 * n + 1) / 24
        # tie correction: subtract sum(t^3 - t)/48 over groups of tied |d|
        seen: dict[float, int] = {}
        for d in diffs:
            seen[abs(d)] = seen.get(abs(d), 0) + 1
        var -= sum(t**3 - t for t in seen.values()) / 48
        if var <= 0:
            p = 1.0
        else:
            z = (w_plus - mean) / math.sqrt(var)
            p = min(1.0, 2 * _normal_sf(abs(z)))
        method = "approx"

    return WilcoxonResult(
        p_value=p,
        w_plus=w_plus,
        w_minus=w_minus,
        n_effective=n,
        rank_biserial=(w_plus - w_minus) / total,
        degenerate=False,
        method=method,
    )


def benjamini_hochberg(p_values: Sequence[float]) -> list[float]:
    """BH step-up adjusted p-values (monotone, clipped to 1)."""
    m = len(p_values)
    if m == 0:
        return []
    order = sorted(range(m), key=lambda i: p_values[i])
    adjusted = [0.0] * m
    running = 1.0
    for rank in range(m, 0, -1):
        i = order[rank - 1]
        running = min(running, p_values[i] * m / rank)
        adjusted[i] = min(1.0, running)
    return adjusted


@dataclass
class MetricComparison:
    metric: str
    family: str
    mean_a: float
    mean_b: float
    p_value: float
    p_adjusted: float
    rank_biserial: float
    n: int
    n_effective: int
    degenerate: bool
    method: str

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def significance_report(
    metrics_a: Mapping[str, Sequence[float]],
    metrics_b: Mapping[str, Sequence[float]],
    families: Mapping[str, Sequence[str]] | None = None,
) -> list[MetricComparison]:
    """Wilcoxon tests per metric with BH adjustment within each family.

    ``metrics_a``/``metrics_b`` map metric names to per-example values in the
    same example order. ``families`` groups metric names for the FDR
    correction; by default all metrics form one family.
    """
    names = [name for name in metrics_a if name in metrics_b]
    if families is None:
        families = {"all": names}
    family_of: dict[str, str] = {}
    for family, members in families.items():
        for name in members:
            family_of[name] = family

    results: dict[str, WilcoxonResult] = {
        name: wilcoxon_signed_rank(metrics_a[name], metrics_b[name]) for name in names
    }
    adjusted: dict[str, float] = {}
    for family, members in families.items():
        members = [name for name in members if name in results]
        adj = benjamini_hochberg([results[name].p_value for name in members])
        adjusted.update(dict(zip(members, adj)))

    report = []
    for name in names:
        res = results[name]
        va, vb = metrics_a[name], metrics_b[name]
        report.append(
            MetricComparison(
                metric=name,
                family=family_of.get(name, "all"),
                mean_a=sum(va) / len(va),
                mean_b=sum(vb) / len(vb),
                p_value=res.p_value,
                p_adjusted=adjusted.get(name, res.p_value),
                rank_biserial=res.rank_biserial,
                n=len(va),
                n_effective=res.n_effective,
                degenerate=res.degenerate,
                method=res.method,
            )
        )
    return report
