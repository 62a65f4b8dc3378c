"""Closed toy token vocabulary and text conditions.

The vocabulary is deliberately tiny: a padding/null token, a scene word,
the degradation concepts, and two intensity modifiers. Captions emitted by
the scene generator are "scene", "scene light rain", "scene heavy rain"
(and the snow analogs, which carry no acceptance weight).

A condition is a fixed-length id sequence; slots may instead carry a pinned
embedding vector (a "pseudo-token"), which is how the mean-of-embeddings
negative prompt is injected.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

PAD = "<pad>"
TOKENS = (PAD, "scene", "rain", "light", "heavy", "snow")
TOKEN_IDS = {tok: i for i, tok in enumerate(TOKENS)}
PAD_ID = TOKEN_IDS[PAD]
VOCAB_SIZE = len(TOKENS)

DEFAULT_TEXT_LEN = 4


@dataclass(frozen=True)
class TextCondition:
    """Fixed-length token-id prompt, with optional per-slot pinned embeddings.

    pseudo_embeddings maps slot index -> embedding vector; at embed time the
    vector is used verbatim for that slot (no token or positional lookup).
    """

    token_ids: tuple[int, ...]
    pseudo_embeddings: tuple[tuple[int, tuple[float, ...]], ...] = ()

    def __post_init__(self):
        for tid in self.token_ids:
            if not (0 <= tid < VOCAB_SIZE):
                raise ValueError(f"unknown token id {tid}")
        for slot, _ in self.pseudo_embeddings:
            if not (0 <= slot < len(self.token_ids)):
                raise ValueError(f"pseudo-token slot {slot} out of range")

    @property
    def text_len(self) -> int:
        return len(self.token_ids)

    def pseudo_map(self) -> dict[int, torch.Tensor]:
        return {
            slot: torch.tensor(vec, dtype=torch.float32)
            for slot, vec in self.pseudo_embeddings
        }

    def is_null(self) -> bool:
        return all(t == PAD_ID for t in self.token_ids) and not self.pseudo_embeddings

    def words(self) -> list[str]:
        return [TOKENS[t] for t in self.token_ids if t != PAD_ID]


def condition_from_words(words: list[str] | str, text_len: int = DEFAULT_TEXT_LEN) -> TextCondition:
    """Build a condition from whitespace-separated words, right-padded."""
    if isinstance(words, str):
        words = words.split()
    if len(words) > text_len:
        raise ValueError(f"prompt longer than text_len={text_len}: {words}")
    unknown = [w for w in words if w not in TOKEN_IDS]
    if unknown:
        raise ValueError(f"unknown tokens {unknown}; vocabulary is {TOKENS}")
    ids = [TOKEN_IDS[w] for w in words] + [PAD_ID] * (text_len - len(words))
    return TextCondition(token_ids=tuple(ids))


def null_condition(text_len: int = DEFAULT_TEXT_LEN) -> TextCondition:
    """The canonical empty prompt (all padding)."""
    return TextCondition(token_ids=(PAD_ID,) * text_len)


def caption_for_intensity(intensity: str, concept: str = "rain") -> list[str]:
    """Caption words for a generated scene: none -> "scene", light/heavy ->
    "scene <intensity> <concept>"."""
    if intensity == "none":
        return ["scene"]
    if intensity in ("light", "heavy"):
        return ["scene", intensity, concept]
    raise ValueError(f"unknown intensity class {intensity!r}")
