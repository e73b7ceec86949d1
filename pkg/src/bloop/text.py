"""Deterministic word-level tokenization, sentence segmentation, and vocabularies.

The reference pipeline works over a fixed, documented tokenization so that
every downstream artifact (bigram caches, decode outputs, golden files) is
reproducible byte for byte:

* tokens are runs of non-whitespace characters, except that the punctuation
  characters ``.,;:!?"'()`` are always split off as single-character tokens;
* a sentence ends at ``.``, ``!`` or ``?`` followed by whitespace or end of
  input, or at a newline;
* detokenization joins tokens with single spaces, omitting the space before
  punctuation tokens. Round-tripping text therefore preserves the token id
  sequence exactly and the character stream up to whitespace normalization.

When an external neural backend is used its own token ids flow through the
engine unchanged; this module then only supplies a :class:`Vocabulary` built
from the backend's reported surface-form table (``raw_join=True``), which is
needed for newline masking and stop-string detection.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

PUNCTUATION_CHARS = frozenset(".,;:!?\"'()")
SENTENCE_END_CHARS = frozenset(".!?")


class UnknownTokenError(ValueError):
    """Raised in frozen mode for a surface form absent from the vocabulary."""

    def __init__(self, token: str, byte_offset: int):
        self.token = token
        self.byte_offset = byte_offset
        super().__init__(
            f"token {token!r} at byte offset {byte_offset} is not in the "
            "vocabulary and no unknown id is configured"
        )


class Vocabulary:
    """Immutable token-string <-> dense-token-id table.

    Ids are assigned densely in ``[0, len(vocab))`` in first-appearance order.
    ``newline_token_ids`` holds every id whose surface form contains ``"\\n"``.

    ``raw_join=True`` marks vocabularies whose surfaces carry their own
    spacing (neural tokenizer tables); detokenization then concatenates
    surfaces verbatim instead of applying the canonical spacing rule. Such
    tables may contain duplicate surfaces (several neural-tokenizer ids can
    decode to the same text), so only there ``id_of`` maps a duplicated
    surface to its first id; build-mode vocabularies stay strictly bijective.
    """

    __slots__ = ("_tokens", "_index", "_newline_ids", "unk_id", "raw_join")

    def __init__(
        self,
        tokens: Iterable[str] = (),
        unk_id: int | None = None,
        raw_join: bool = False,
    ):
        self._tokens: tuple[str, ...] = tuple(tokens)
        self._index: dict[str, int] = {}
        for i, tok in enumerate(self._tokens):
            if tok in self._index:
                if not raw_join:
                    raise ValueError(
                        f"duplicate token {tok!r} at ids {self._index[tok]} and {i}"
                    )
                continue
            self._index[tok] = i
        self._newline_ids = frozenset(
            i for i, tok in enumerate(self._tokens) if "\n" in tok
        )
        if unk_id is not None and not 0 <= unk_id < len(self._tokens):
            raise ValueError(f"unk_id {unk_id} out of range for size {len(self._tokens)}")
        self.unk_id = unk_id
        self.raw_join = raw_join

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    @property
    def tokens(self) -> tuple[str, ...]:
        return self._tokens

    @property
    def newline_token_ids(self) -> frozenset[int]:
        return self._newline_ids

    def id_of(self, token: str) -> int | None:
        return self._index.get(token)

    def token(self, token_id: int) -> str:
        if not 0 <= token_id < len(self._tokens):
            raise ValueError(f"token id {token_id} out of range for size {len(self._tokens)}")
        return self._tokens[token_id]

    def contains_newline(self, token_id: int) -> bool:
        return token_id in self._newline_ids

    def extended(self, new_tokens: Iterable[str]) -> "Vocabulary":
        """New vocabulary with ``new_tokens`` appended (existing ids unchanged)."""
        return Vocabulary(self._tokens + tuple(new_tokens), self.unk_id, self.raw_join)

    def save(self, path) -> None:
        """Write one token per line; id = line number. Escapes ``\\``, newline, CR."""
        with open(path, "w", encoding="utf-8", newline="") as fh:
            for tok in self._tokens:
                fh.write(_escape_token(tok))
                fh.write("\n")

    @classmethod
    def load(cls, path, unk_id: int | None = None, raw_join: bool = False) -> "Vocabulary":
        with open(path, "r", encoding="utf-8", newline="") as fh:
            data = fh.read()
        lines = data.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls((_unescape_token(line) for line in lines), unk_id, raw_join)


def _escape_token(token: str) -> str:
    return token.replace("\\", "\\\\").replace("\n", "\\n").replace("\r", "\\r")


def _unescape_token(line: str) -> str:
    out = []
    i = 0
    while i < len(line):
        ch = line[i]
        if ch == "\\" and i + 1 < len(line):
            nxt = line[i + 1]
            if nxt == "n":
                out.append("\n")
            elif nxt == "r":
                out.append("\r")
            else:
                out.append(nxt)
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


@dataclass(frozen=True)
class Document:
    """Sentence-segmented token-id sequences plus the originating text."""

    sentences: tuple[tuple[int, ...], ...]
    raw: str

    def flatten(self) -> list[int]:
        return [tid for sent in self.sentences for tid in sent]

    @property
    def token_count(self) -> int:
        return sum(len(s) for s in self.sentences)


def _scan_surfaces(text: str):
    """Return ``(surface, byte_offset, ends_sentence)`` word/punctuation pieces.

    ``ends_sentence`` is true when a sentence boundary falls immediately after
    the piece (terminal punctuation before whitespace/EOF, or a newline in the
    following whitespace run).
    """
    pieces: list[list] = []  # [surface, byte_offset, ends_sentence]
    word_start_byte = 0
    word: list[str] = []
    byte_pos = 0
    n = len(text)

    def flush_word():
        if word:
            pieces.append(["".join(word), word_start_byte, False])
            word.clear()

    for i, ch in enumerate(text):
        if ch.isspace():
            flush_word()
            if ch == "\n" and pieces:
                pieces[-1][2] = True
        elif ch in PUNCTUATION_CHARS:
            flush_word()
            next_ch = text[i + 1] if i + 1 < n else ""
            ends = ch in SENTENCE_END_CHARS and (next_ch == "" or next_ch.isspace())
            pieces.append([ch, byte_pos, ends])
        else:
            if not word:
                word_start_byte = byte_pos
            word.append(ch)
        byte_pos += len(ch.encode("utf-8"))
    flush_word()
    return [(s, off, ends) for s, off, ends in pieces]


def tokenize(
    text: str,
    vocab: Vocabulary | None = None,
    *,
    frozen: bool = False,
) -> tuple[Document, Vocabulary]:
    """Tokenize and sentence-segment ``text``.

    In build mode (``frozen=False``) the returned vocabulary extends ``vocab``
    with unseen surfaces in first-appearance order. In frozen mode every
    surface must be present in ``vocab`` or map to ``vocab.unk_id``;
    otherwise :class:`UnknownTokenError` identifies the token and byte offset.
    """
    if vocab is None:
        if frozen:
            raise ValueError("frozen mode requires a vocabulary")
        vocab = Vocabulary()

    pieces = _scan_surfaces(text)

    if not frozen:
        new_tokens = []
        seen = set()
        for surface, _, _ in pieces:
            if surface not in vocab and surface not in seen:
                new_tokens.append(surface)
                seen.add(surface)
        if new_tokens:
            vocab = vocab.extended(new_tokens)

    sentences: list[tuple[int, ...]] = []
    current: list[int] = []
    for surface, byte_offset, ends_sentence in pieces:
        tid = vocab.id_of(surface)
        if tid is None:
            if vocab.unk_id is None:
                raise UnknownTokenError(surface, byte_offset)
            tid = vocab.unk_id
        current.append(tid)
        if ends_sentence:
            sentences.append(tuple(current))
            current = []
    if current:
        sentences.append(tuple(current))

    return Document(tuple(sentences), text), vocab


def detokenize(ids: Sequence[int], vocab: Vocabulary) -> str:
    """Render token ids as text under the canonical spacing rule.

    For ``raw_join`` vocabularies surfaces are concatenated verbatim.
    """
    parts: list[str] = []
    for tid in ids:
        tok = vocab.token(int(tid))  # raises on out-of-range ids
        if vocab.raw_join:
            parts.append(tok)
        else:
            if parts and not (len(tok) == 1 and tok in PUNCTUATION_CHARS):
                parts.append(" ")
            parts.append(tok)
    return "".join(parts)
