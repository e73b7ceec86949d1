import json

import pytest

from bloop.decoding import DecodeConfig
from bloop.promotion import PromotionConfig
from bloop.tuner import (
    KNOWN_GOOD_SETTINGS,
    GridCell,
    GridResult,
    GridSpec,
    grid_search,
    select_subset,
)

from conftest import make_fixture_corpus


def small_dataset():
    return make_fixture_corpus(count=8, seed=5)


def quick_config():
    return DecodeConfig(
        beam_width=2,
        promotion=PromotionConfig(alpha=0.0),
        max_new_tokens=6,
        stop_strings=(".",),
    )


def test_subset_determinism():
    first = select_subset(100, 0.1, seed=7)
    second = select_subset(100, 0.1, seed=7)
    assert first == second
    assert len(first) == 10
    assert first == sorted(first)
    assert select_subset(100, 0.1, seed=8) != first
    assert select_subset(3, 1.0, seed=0) == [0, 1, 2]


def test_single_cell_grid():
    spec = GridSpec(alphas=(2.0,), beam_widths=(2,), subset_fraction=0.5, seed=1)
    result = grid_search(spec, small_dataset(), quick_config())
    assert len(result.cells) == 1
    assert result.cells[0].status == "ok"
    assert result.ranked[0].alpha == 2.0 and result.ranked[0].beam_width == 2


def test_grid_table_byte_determinism():
    spec = GridSpec(alphas=(0.0, 2.0), beam_widths=(1, 2), subset_fraction=0.5, seed=3)
    first = grid_search(spec, small_dataset(), quick_config())
    second = grid_search(spec, small_dataset(), quick_config())
    assert first.to_json() == second.to_json()
    assert first.to_csv() == second.to_csv()


def test_cell_order_invariance():
    data = small_dataset()
    spec = GridSpec(alphas=(0.0, 2.0), beam_widths=(1, 2), subset_fraction=0.5, seed=3)
    reversed_spec = GridSpec(alphas=(2.0, 0.0), beam_widths=(2, 1), subset_fraction=0.5, seed=3)
    forward = grid_search(spec, data, quick_config())
    backward = grid_search(reversed_spec, data, quick_config())
    key = lambda c: (c.alpha, c.beam_width)
    by_cell_f = {key(c): c.objective_value for c in forward.cells}
    by_cell_b = {key(c): c.objective_value for c in backward.cells}
    assert by_cell_f == by_cell_b
    assert [key(c) for c in forward.ranked] == [key(c) for c in backward.ranked]


def test_failed_cells_preserved_but_unranked():
    data = [{"id": "bad", "source": "", "reference": "x"}] + small_dataset()[:1]
    spec = GridSpec(alphas=(0.0,), beam_widths=(1, 2), subset_fraction=1.0, seed=0)
    result = grid_search(spec, data, quick_config())
    assert all(c.status == "failed" for c in result.cells)
    assert all(c.error for c in result.cells)
    assert result.ranked == []
    assert len(result.cells) == 2  # still present in the table


def test_journal_resume_skips_completed_cells(tmp_path):
    journal = tmp_path / "cells.jsonl"
    data = small_dataset()
    spec = GridSpec(alphas=(0.0, 2.0), beam_widths=(1,), subset_fraction=0.5, seed=3)
    first = grid_search(spec, data, quick_config(), journal_path=journal)
    lines = journal.read_text().strip().splitlines()
    assert len(lines) == 3  # meta header + two cells
    assert json.loads(lines[0])["type"] == "meta"

    # poison one journal entry; a resumed run must take the journal value,
    # proving the cell was not re-evaluated
    records = [json.loads(line) for line in lines]
    records[1]["objective_value"] = 0.123456789
    journal.write_text("\n".join(json.dumps(r, sort_keys=True) for r in records) + "\n")
    resumed = grid_search(spec, data, quick_config(), journal_path=journal)
    poisoned = [c for c in resumed.cells if c.objective_value == 0.123456789]
    assert len(poisoned) == 1
    # and no duplicate journal lines were appended
    assert len(journal.read_text().strip().splitlines()) == 3


def test_journal_from_different_search_is_rejected(tmp_path):
    journal = tmp_path / "cells.jsonl"
    data = small_dataset()
    spec = GridSpec(alphas=(0.0,), beam_widths=(1,), subset_fraction=0.5, seed=3)
    grid_search(spec, data, quick_config(), journal_path=journal)
    other = GridSpec(alphas=(0.0,), beam_widths=(1,), subset_fraction=0.5, seed=4)
    with pytest.raises(ValueError, match="different search"):
        grid_search(other, data, quick_config(), journal_path=journal)


def test_known_good_settings_fixture():
    assert KNOWN_GOOD_SETTINGS["llama-3.1-8b-instruct"] == (3, 12)
    assert KNOWN_GOOD_SETTINGS["mistral-nemo-instruct-2407"] == (4, 5)
    assert KNOWN_GOOD_SETTINGS["gemma-2-9b-it"] == (6, 4)


def planted_optimum_source(n_steer: int = 12) -> str:
    """Source with exactly one cached bigram, (a, b), reachable only by a
    promotion strength above the learned log-odds gap.

    Newlines segment sentences, so the oscillation evidence (bare "m"/"a"
    lines) trains the language model without entering the cache: after "a"
    the model prefers "m" by about ln(n_steer / delta) ~ 4.8 nats. Promotion
    strength 6 overcomes the gap and the decode walks the reference chain
    "a b ..."; strengths 3 and 4 do not, at any beam width, because no other
    pair in the document carries a bonus.
    """
    lines = ["a b", "c", "d"]  # single multi-token line -> single cache pair
    lines += ["m", "a"] * n_steer
    lines.append("m")
    return "\n".join(lines)


def test_planted_optimum_ranks_first():
    # grid of exactly the known-good cells; only promotion strength 6 flips
    # the step-2 prediction onto the reference chain (verified exhaustively
    # over the grid below), so the (6, 4) cell provably maximizes the metric
    source = planted_optimum_source()
    reference = "a b c d"
    data = [{"id": "planted", "source": source, "reference": reference}]
    base = DecodeConfig(
        beam_width=1, promotion=PromotionConfig(alpha=0.0),
        max_new_tokens=4, stop_strings=(),
    )
    spec = GridSpec(
        alphas=(3.0, 4.0, 6.0), beam_widths=(12, 5, 4), subset_fraction=1.0, seed=0
    )
    result = grid_search(spec, data, base)
    by_cell = {(c.alpha, c.beam_width): c.objective_value for c in result.cells}
    assert len(by_cell) == 9  # full cross product
    for (alpha, width), value in by_cell.items():
        if alpha == 6.0:
            # flipped decode shares the "a b" prefix with the reference
            assert value == 0.5
        else:
            # unflipped decodes produce "a m a m" and share only "a"
            assert value == 0.25
    # all strength-6 cells tie; the smaller-beam tie-break ranks (6, 4) first
    top = result.ranked[0]
    assert (top.alpha, top.beam_width) == (6.0, 4)


def test_grid_spec_validation():
    with pytest.raises(ValueError):
        GridSpec(alphas=())
    with pytest.raises(ValueError):
        GridSpec(subset_fraction=0.0)
    with pytest.raises(ValueError):
        GridSpec(objective="bleu")
    with pytest.raises(ValueError):
        GridSpec(beam_widths=(0,))
    with pytest.raises(ValueError, match="empty"):
        grid_search(GridSpec(alphas=(1.0,), beam_widths=(1,)), [], quick_config())


def test_ranking_tie_breaks():
    cells = [
        GridCell(2.0, 3, 0.5, "ok"),
        GridCell(-1.0, 2, 0.5, "ok"),
        GridCell(1.0, 2, 0.5, "ok"),
        GridCell(0.0, 2, 0.9, "ok"),
    ]
    result = GridResult(GridSpec(alphas=(1.0,), beam_widths=(1,)), [0], cells)
    ranked = [(c.alpha, c.beam_width) for c in result.ranked]
    # highest value first; ties by smaller beam, then |alpha|, then alpha
    assert ranked == [(0.0, 2), (-1.0, 2), (1.0, 2), (2.0, 3)]
