"""Negative-prompt guidance: the amplified-difference score estimate and the
dual-pass (null + negative condition) orchestration per timestep."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import torch

from .attention_control import MODE_CAPTURE, MODE_SWITCH, AttentionControl
from .vocab import (
    DEFAULT_TEXT_LEN,
    TOKEN_IDS,
    TextCondition,
    condition_from_words,
    null_condition,
)

Tensor = torch.Tensor


@dataclass(frozen=True)
class GuidanceSpec:
    """Trade-off factor, skip step count, and the two conditions.

    The first `t_skip` denoising steps follow the pure reconstruction path;
    the guided estimate is used strictly after them.
    """

    lam: float
    t_skip: int
    negative_condition: TextCondition
    null_condition: TextCondition
    steps: int

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if not (0 <= self.t_skip <= self.steps):
            raise ValueError("t_skip must lie in [0, steps]")
        if self.lam > 0 and self.negative_condition == self.null_condition:
            warnings.warn(
                "negative condition equals the null condition; guidance is a no-op",
                stacklevel=2,
            )

    def guided_at(self, t: int) -> bool:
        """True when step t (level index) is past the skip window."""
        return t < self.steps - self.t_skip


def guided_eps(eps_null: Tensor, eps_cond: Tensor, lam: float) -> Tensor:
    """eps_null + lam * (eps_null - eps_cond)."""
    if eps_null.shape != eps_cond.shape:
        raise ValueError(
            f"shape mismatch {tuple(eps_null.shape)} vs {tuple(eps_cond.shape)}"
        )
    return eps_null + lam * (eps_null - eps_cond)


def dual_pass(
    x_t: Tensor,
    t: int,
    spec: GuidanceSpec,
    model,
    control: AttentionControl | None = None,
) -> Tensor:
    """Guided noise estimate at one timestep.

    Inside the skip window (or at lam = 0) this is a single null-prompt
    prediction. Otherwise the null pass runs first (capture mode when a
    controller is supplied), then the negative-condition pass (switch mode),
    and the two are combined.
    """
    if not spec.guided_at(t) or spec.lam == 0.0:
        return model.predict_eps(x_t, t, spec.null_condition)
    if control is not None:
        control.begin_step(t, MODE_CAPTURE)
        eps_null = model.predict_eps(x_t, t, spec.null_condition, control)
        control.set_mode(MODE_SWITCH)
        eps_cond = model.predict_eps(x_t, t, spec.negative_condition, control)
    else:
        eps_null = model.predict_eps(x_t, t, spec.null_condition)
        eps_cond = model.predict_eps(x_t, t, spec.negative_condition)
    return guided_eps(eps_null, eps_cond, spec.lam)


def build_negative_condition(
    mode: str,
    concept: str = "rain",
    model=None,
    corpus: list[list[str]] | None = None,
    text_len: int = DEFAULT_TEXT_LEN,
) -> TextCondition:
    """Construct the degradation condition used as the negative prompt.

    simple          -> the bare concept token.
    contextual      -> the concept with its intensity context ("light rain").
    mean_embedding  -> the arithmetic mean of the concept token's embedding
                       across every corpus caption containing it, injected
                       as a pseudo-token (needs `model` and `corpus`).
    """
    if concept not in TOKEN_IDS:
        raise ValueError(f"unknown concept token {concept!r}")
    if mode == "simple":
        return condition_from_words([concept], text_len)
    if mode == "contextual":
        return condition_from_words(["light", concept], text_len)
    if mode == "mean_embedding":
        if model is None:
            raise ValueError("mean_embedding mode needs the denoiser for embeddings")
        if not corpus:
            raise ValueError("mean_embedding mode needs a non-empty caption corpus")
        vectors = []
        for caption in corpus:
            for slot, word in enumerate(caption):
                if word == concept:
                    vectors.append(model.occurrence_embedding(TOKEN_IDS[word], slot))
        if not vectors:
            raise ValueError(f"concept {concept!r} absent from the corpus")
        mean_vec = torch.stack(vectors).mean(dim=0)
        base = null_condition(text_len)
        return TextCondition(
            token_ids=base.token_ids,
            pseudo_embeddings=((0, tuple(float(v) for v in mean_vec)),),
        )
    raise ValueError(f"unknown prompt mode {mode!r}")
