"""Scoring backends: echo arithmetic for protocol testing, and causal
language models loaded through Hugging Face transformers.

Every backend answers three questions: the handshake metadata (vocabulary
size, context limit, newline-bearing token ids), prompt preparation
(chat-template rendering or raw tokenization, with tail truncation to a
token budget), and next-token logits for a context. Scoring recomputes the
full forward pass per request: no cross-request state, so identical
contexts give bitwise-identical logits within a process.
"""

from __future__ import annotations

import numpy as np

ECHO_VOCAB_SIZE = 257
ECHO_CONTEXT_LIMIT = 4096


class EchoBackend:
    """Deterministic position-dependent logits from pinned integer arithmetic.

    For vocabulary size N, context c, candidate v::

        last = c[-1] if c else 0
        r(v) = (1103515245 * (v + 31*len(c) + 131*last + 17) + 12345) mod 65536
        logit(v) = r(v) / 65536 - 0.5

    Prompt ids are the UTF-8 bytes of the text modulo N (no chat template).
    """

    def __init__(self, vocab_size: int = ECHO_VOCAB_SIZE, context_limit: int = ECHO_CONTEXT_LIMIT):
        self.vocab_size = vocab_size
        self.context_limit = context_limit

    @property
    def newline_token_ids(self) -> list[int]:
        return [10] if self.vocab_size > 10 else []

    def prompt_ids(self, text: str, max_prompt_tokens: int, raw: bool) -> list[int]:
        ids = [b % self.vocab_size for b in text.encode("utf-8")]
        return ids[:max_prompt_tokens]

    def score(self, context) -> np.ndarray:
        v = np.arange(self.vocab_size, dtype=np.int64)
        last = int(context[-1]) if len(context) else 0
        r = (1103515245 * (v + 31 * len(context) + 131 * last + 17) + 12345) % 65536
        return r / 65536 - 0.5


_FALLBACK_CHAT_TEMPLATE = (
    "{% for message in messages %}{{ message['role'] }} : {{ message['content'] }}\n"
    "{% endfor %}assistant :"
)


class CausalLMBackend:
    """Next-token logits from a transformers causal LM, scored step by step."""

    def __init__(self, model, tokenizer, context_limit: int | None = None):
        import torch

        self._torch = torch
        self.model = model.eval()
        self.tokenizer = tokenizer
        self.vocab_size = int(model.get_output_embeddings().weight.shape[0])
        if context_limit is None:
            context_limit = getattr(model.config, "n_positions", None) or getattr(
                model.config, "max_position_embeddings", 4096
            )
        self.context_limit = int(context_limit)
        if getattr(tokenizer, "chat_template", None) is None:
            tokenizer.chat_template = _FALLBACK_CHAT_TEMPLATE
        self._newline_ids: list[int] | None = None

    @classmethod
    def from_pretrained(cls, name: str) -> "CausalLMBackend":
        from transformers import AutoModelForCausalLM, AutoTokenizer

        tokenizer = AutoTokenizer.from_pretrained(name)
        model = AutoModelForCausalLM.from_pretrained(name)
        return cls(model, tokenizer)

    @classmethod
    def tiny_random(cls, seed: int = 0) -> "CausalLMBackend":
        """Deterministically seeded random-weight model with a word-level
        tokenizer whose vocabulary includes newline-bearing tokens. Exercises
        the full real-model path without downloading weights."""
        import torch
        from tokenizers import Tokenizer
        from tokenizers.models import WordLevel
        from tokenizers.pre_tokenizers import WhitespaceSplit
        from transformers import GPT2Config, GPT2LMHeadModel, PreTrainedTokenizerFast

        words = [
            "user", "assistant", ":", "the", "a", "cat", "dog", "fox", "bird",
            "sat", "ran", "slept", "jumped", "on", "over", "under", "mat",
            "rug", "log", "fence", "quick", "lazy", "brown", "grey", "and",
            "then", "while", "article", "summary", "write", "paragraph",
            "summarizing", "given", "without", "preamble", ".", ",",
        ]
        vocab = {"[UNK]": 0, "[PAD]": 1, "\n": 2, ".\n": 3, "\n\n": 4}
        for word in words:
            vocab[word] = len(vocab)
        tok = Tokenizer(WordLevel(vocab, unk_token="[UNK]"))
        tok.pre_tokenizer = WhitespaceSplit()
        tokenizer = PreTrainedTokenizerFast(
            tokenizer_object=tok, unk_token="[UNK]", pad_token="[PAD]"
        )
        torch.manual_seed(seed)
        config = GPT2Config(
            vocab_size=len(vocab), n_positions=256, n_embd=32, n_layer=2,
            n_head=2, bos_token_id=None, eos_token_id=None,
        )
        return cls(GPT2LMHeadModel(config), tokenizer)

    @property
    def newline_token_ids(self) -> list[int]:
        if self._newline_ids is None:
            self._newline_ids = [
                i for i in range(self.vocab_size)
                if "\n" in self.tokenizer.decode([i])
            ]
        return self._newline_ids

    def _encode(self, text: str) -> list[int]:
        return list(self.tokenizer(text, add_special_tokens=False)["input_ids"])

    def prompt_ids(self, text: str, max_prompt_tokens: int, raw: bool) -> list[int]:
        if raw:
            return self._encode(text)[:max_prompt_tokens]
        message_ids = self._encode(text)
        while True:
            rendered = self.tokenizer.apply_chat_template(
                [{"role": "user", "content": self.tokenizer.decode(message_ids)}],
                tokenize=True,
                add_generation_prompt=True,
            )
            if hasattr(rendered, "keys"):
                rendered = rendered["input_ids"]
            rendered = list(rendered)
            if len(rendered) <= max_prompt_tokens or not message_ids:
                return rendered[:max_prompt_tokens]
            # template overhead stays put; trim the message tail to fit
            excess = len(rendered) - max_prompt_tokens
            message_ids = message_ids[: max(0, len(message_ids) - excess)]

    def score(self, context) -> np.ndarray:
        torch = self._torch
        ids = [int(t) for t in context]
        if not ids:
            ids = [int(self.tokenizer.pad_token_id or 0)]
        with torch.no_grad():
            logits = self.model(torch.tensor([ids], dtype=torch.long)).logits[0, -1]
        return logits.to(torch.float64).numpy()


def vocab_surface_table(tokenizer, vocab_size: int) -> list[str]:
    """Per-id decoded surface forms, for the engine-side vocabulary dump."""
    return [tokenizer.decode([i]) for i in range(vocab_size)]
