"""Deterministic word tokenization shared by every metric and the prompt budget.

Rules: lowercase, punctuation split into standalone tokens, whitespace
collapsed.  The same tokenizer is used for metric inputs and for counting
document tokens against the prompt budget, so token counts are consistent
across the toolkit (and deliberately independent of any model's subword
vocabulary).
"""

from __future__ import annotations

import re
from dataclasses import dataclass

# A token is a run of word characters or a single non-space symbol.
_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


@dataclass(frozen=True)
class TokenSequence:
    """Lowercased word tokens plus the exact text they came from."""

    tokens: tuple[str, ...]
    source_text: str = ""

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)

    def __post_init__(self):
        for tok in self.tokens:
            if not tok or any(ch.isspace() for ch in tok):
                raise ValueError(f"invalid token {tok!r}: empty or contains whitespace")


def tokenize(text: str) -> TokenSequence:
    """Split ``text`` into lowercase tokens; empty input yields an empty sequence."""
    return TokenSequence(tokens=tuple(m.group().lower() for m in _TOKEN_RE.finditer(text)), source_text=text)


def token_spans(text: str) -> list[tuple[int, int]]:
    """Character (start, end) offsets of each token in ``text``."""
    return [m.span() for m in _TOKEN_RE.finditer(text)]


def count_tokens(text: str) -> int:
    return sum(1 for _ in _TOKEN_RE.finditer(text))


def truncate_to_tokens(text: str, max_tokens: int) -> str:
    """Cut ``text`` at the end of its ``max_tokens``-th token.

    The original text is preserved up to the cut, so retokenizing the result
    gives exactly the first ``max_tokens`` tokens.
    """
    if max_tokens <= 0:
        return ""
    spans = token_spans(text)
    if len(spans) <= max_tokens:
        return text
    return text[: spans[max_tokens - 1][1]]
