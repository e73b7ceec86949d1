"""Grid search over the promotion strength and beam width.

Every grid cell is evaluated on the same seeded validation subset; results
are ranked by the mean of the chosen objective metric with a deterministic
tie-break (smaller beam width first, then the promotion strength closest to
zero). A journal file makes long grids resumable: completed cells are read
back and skipped, and cell order never affects the table.
"""

from __future__ import annotations

import csv
import io
import json
import os
import random
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

from .decoding import DecodeConfig
from .metrics import rouge
from .pipeline import ReferenceSettings, summarize_with_reference

OBJECTIVES = ("rouge1", "rouge2", "rougeL")

# Settings reported to work best per public model family (promotion strength,
# beam width), kept as reference defaults for users of those backends.
KNOWN_GOOD_SETTINGS = {
    "llama-3.1-8b-instruct": (3, 12),
    "mistral-nemo-instruct-2407": (4, 5),
    "gemma-2-9b-it": (6, 4),
}


@dataclass(frozen=True)
class GridSpec:
    alphas: tuple[float, ...] = tuple(float(a) for a in range(-8, 3))
    beam_widths: tuple[int, ...] = tuple(range(1, 21))
    objective: str = "rougeL"
    subset_fraction: float = 0.10
    seed: int = 0

    def __post_init__(self):
        if not self.alphas or not self.beam_widths:
            raise ValueError("alpha and beam width grids must be non-empty")
        if not 0 < self.subset_fraction <= 1:
            raise ValueError("subset_fraction must be in (0, 1]")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if any(w < 1 for w in self.beam_widths):
            raise ValueError("beam widths must be positive")


@dataclass
class GridCell:
    alpha: float
    beam_width: int
    objective_value: float | None
    status: str  # "ok" | "failed"
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "beam_width": self.beam_width,
            "objective_value": self.objective_value,
            "status": self.status,
            "error": self.error,
        }


@dataclass
class GridResult:
    spec: GridSpec
    subset_indices: list[int]
    cells: list[GridCell]  # grid order: alphas x beam_widths

    @property
    def ranked(self) -> list[GridCell]:
        ok = [c for c in self.cells if c.status == "ok"]
        return sorted(
            ok,
            key=lambda c: (-c.objective_value, c.beam_width, abs(c.alpha), c.alpha),
        )

    def to_json(self) -> str:
        payload = {
            "objective": self.spec.objective,
            "seed": self.spec.seed,
            "subset_fraction": self.spec.subset_fraction,
            "subset_indices": self.subset_indices,
            "cells": [c.to_dict() for c in self.cells],
            "ranked": [c.to_dict() for c in self.ranked],
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["alpha", "beam_width", "objective_value", "status", "error"])
        for c in self.cells:
            writer.writerow(
                [
                    c.alpha,
                    c.beam_width,
                    "" if c.objective_value is None else repr(c.objective_value),
                    c.status,
                    c.error or "",
                ]
            )
        return buf.getvalue()


def select_subset(size: int, fraction: float, seed: int) -> list[int]:
    """Deterministic seeded subset of ``range(size)``, ascending."""
    count = max(1, round(size * fraction))
    rng = random.Random(seed)
    return sorted(rng.sample(range(size), min(count, size)))


def _journal_key(alpha: float, beam_width: int) -> str:
    return f"{float(alpha)!r}|{beam_width}"


def _journal_meta(spec: GridSpec, dataset_size: int) -> dict:
    return {
        "type": "meta",
        "objective": spec.objective,
        "seed": spec.seed,
        "subset_fraction": spec.subset_fraction,
        "dataset_size": dataset_size,
    }


def _read_journal(path, expected_meta: dict) -> dict[str, GridCell]:
    """Completed cells from a journal, verifying it belongs to this search."""
    done = {}
    try:
        fh = open(path, "r", encoding="utf-8")
    except FileNotFoundError:
        return done
    with fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if rec.get("type") == "meta":
                if rec != expected_meta:
                    raise ValueError(
                        f"journal {path} was written for a different search "
                        f"({rec}); delete it or change --journal"
                    )
                continue
            cell = GridCell(
                alpha=rec["alpha"],
                beam_width=rec["beam_width"],
                objective_value=rec["objective_value"],
                status=rec["status"],
                error=rec.get("error"),
            )
            done[_journal_key(cell.alpha, cell.beam_width)] = cell
    return done


def grid_search(
    spec: GridSpec,
    dataset: Sequence[Mapping],
    decode_defaults: DecodeConfig | None = None,
    settings: ReferenceSettings | None = None,
    journal_path=None,
) -> GridResult:
    """Evaluate the full grid against the reference backend.

    ``dataset`` records need ``source`` and ``reference`` fields. A failed
    cell is kept in the table with its error but excluded from the ranking.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    base = decode_defaults or DecodeConfig()
    subset = select_subset(len(dataset), spec.subset_fraction, spec.seed)
    examples = [dataset[i] for i in subset]
    meta = _journal_meta(spec, len(dataset))
    done = _read_journal(journal_path, meta) if journal_path else {}
    journal = None
    if journal_path:
        try:
            fresh = os.path.getsize(journal_path) == 0
        except OSError:
            fresh = True
        journal = open(journal_path, "a", encoding="utf-8")
        if fresh:
            journal.write(json.dumps(meta, sort_keys=True) + "\n")
            journal.flush()

    cells = []
    try:
        for alpha in spec.alphas:
            for width in spec.beam_widths:
                key = _journal_key(alpha, width)
                if key in done:
                    cells.append(done[key])
                    continue
                cell = _evaluate_cell(alpha, width, spec.objective, examples, base, settings)
                cells.append(cell)
                if journal is not None:
                    journal.write(json.dumps(cell.to_dict(), sort_keys=True) + "\n")
                    journal.flush()
    finally:
        if journal is not None:
            journal.close()
    return GridResult(spec=spec, subset_indices=subset, cells=cells)


def _evaluate_cell(
    alpha: float,
    width: int,
    objective: str,
    examples: Sequence[Mapping],
    base: DecodeConfig,
    settings: ReferenceSettings | None,
) -> GridCell:
    cfg = replace(
        base,
        beam_width=width,
        promotion=replace(base.promotion, alpha=float(alpha)),
    )
    rouge_n = {"rouge1": 1, "rouge2": 2, "rougeL": "L"}[objective]
    values = []
    try:
        for record in examples:
            outcome = summarize_with_reference(record["source"], cfg, settings)
            values.append(rouge(outcome.prediction, record.get("reference", ""), rouge_n)["f1"])
    except Exception as exc:
        return GridCell(float(alpha), width, None, "failed", f"{type(exc).__name__}: {exc}")
    return GridCell(float(alpha), width, sum(values) / len(values), "ok")
