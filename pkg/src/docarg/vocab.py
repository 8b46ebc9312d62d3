"""Deterministic whole-token vocabulary built from corpora and templates."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from .corpus import Corpus, close_marker, open_marker
from .templates import PROMPT_SEPARATOR, PromptTemplate

UNK = "<unk>"


@dataclass(frozen=True)
class Vocab:
    tokens: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        index = self._index
        unk = index[UNK]
        return [index.get(t, unk) for t in tokens]

    def __contains__(self, token: str) -> bool:
        return token in self._index


def build_vocab(corpora: Sequence[Corpus], templates: Mapping[str, PromptTemplate]) -> Vocab:
    """Specials, trigger markers, template tokens, then corpus tokens in
    first-appearance order. Marker slots cover the largest event count seen."""
    seen: dict[str, None] = {}
    for tok in (UNK, PROMPT_SEPARATOR):
        seen.setdefault(tok, None)
    max_events = 0
    for corpus in corpora:
        for _, events in corpus:
            max_events = max(max_events, len(events))
    for k in [-1] + list(range(max(0, max_events - 1))):
        seen.setdefault(open_marker(k), None)
        seen.setdefault(close_marker(k), None)
    for tpl in templates.values():
        for tok in tpl.template_tokens:
            seen.setdefault(tok, None)
    for corpus in corpora:
        for doc, _ in corpus:
            for tok in doc.tokens:
                seen.setdefault(tok, None)
    return Vocab(tokens=tuple(seen))
