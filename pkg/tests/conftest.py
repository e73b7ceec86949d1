import json
import random

import pytest

from bloop.text import Document, tokenize


def pytest_runtest_logreport(report):
    """One visible pass/fail line per acceptance criterion."""
    if report.when != "call" or "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.split("::", 1)[1]
    status = "PASS" if report.passed else "FAIL"
    print(f"\nACCEPTANCE {status}: {name}", flush=True)

WORDS = [
    "alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel",
    "india", "juliet", "kilo", "lima", "mike", "november", "oscar", "papa",
    "quebec", "romeo", "sierra", "tango", "uniform", "victor", "whiskey",
    "xray", "yankee", "zulu",
]

CORPUS_SEED = 20240811


def make_source_text(rng: random.Random) -> str:
    """One synthetic article: Markov-flavored sentences over a small word bank."""
    vocab = rng.sample(WORDS, rng.randint(10, 14))
    preferred = {w: rng.sample(vocab, 3) for w in vocab}
    sentences = []
    for _ in range(rng.randint(5, 8)):
        w = rng.choice(vocab)
        sent = [w]
        for _ in range(rng.randint(5, 9)):
            w = rng.choice(preferred[w]) if rng.random() < 0.7 else rng.choice(vocab)
            sent.append(w)
        sentences.append(" ".join(sent) + ".")
    return " ".join(sentences)


def make_fixture_corpus(count: int = 50, seed: int = CORPUS_SEED) -> list[dict]:
    """Deterministic article/reference records (reference = lead two sentences)."""
    rng = random.Random(seed)
    records = []
    for i in range(count):
        source = make_source_text(rng)
        lead = source.split(".")[:2]
        records.append(
            {
                "id": f"doc{i:03d}",
                "source": source,
                "reference": ".".join(lead) + ".",
            }
        )
    return records


def scrambled_document(doc: Document, seed: int) -> Document:
    """Same token multiset, shuffled and re-split: off-source bigram noise."""
    rng = random.Random(seed)
    ids = list(doc.flatten())
    rng.shuffle(ids)
    sentences, current = [], []
    for tid in ids:
        current.append(tid)
        if len(current) >= 8:
            sentences.append(tuple(current))
            current = []
    if current:
        sentences.append(tuple(current))
    return Document(tuple(sentences), "")


def write_jsonl(path, records) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")


@pytest.fixture(scope="session")
def fixture_corpus() -> list[dict]:
    return make_fixture_corpus()


@pytest.fixture()
def corpus_path(fixture_corpus, tmp_path):
    path = tmp_path / "corpus.jsonl"
    write_jsonl(path, fixture_corpus)
    return path


def random_document(rng: random.Random, vocab_size: int, max_tokens: int = 50) -> Document:
    """Random id-level document with a handful of sentences."""
    total = rng.randint(0, max_tokens)
    ids = [rng.randrange(vocab_size) for _ in range(total)]
    sentences, current = [], []
    for tid in ids:
        current.append(tid)
        if rng.random() < 0.2 and current:
            sentences.append(tuple(current))
            current = []
    if current:
        sentences.append(tuple(current))
    return Document(tuple(sentences), "")


def tokenized(text: str):
    doc, vocab = tokenize(text)
    return doc, vocab
