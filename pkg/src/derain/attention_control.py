"""Stateful controller for KV attention switching in the joint denoiser.

The controller is threaded through denoiser forward passes. In `capture`
mode it records the text-token hidden features entering each selected block
(the null-prompt pass). In `switch` mode those buffered features replace
the text inputs of K/V at the selected blocks of the conditional pass; for
the early selected blocks a split application additionally preserves the
conditional text stream.

Buffers are keyed by (block index, timestep) so a capture pass and a switch
pass must agree on the timestep; pipelines clear buffers at every step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

Tensor = torch.Tensor

MODE_OFF = "off"
MODE_CAPTURE = "capture"
MODE_SWITCH = "switch"


class ControlError(RuntimeError):
    """Raised on mode misuse or missing capture buffers."""


def default_block_sets(num_blocks: int) -> tuple[frozenset[int], frozenset[int]]:
    """Fractional mapping of the reference selection onto `num_blocks`:
    the first sixth and the last half of the blocks (8 blocks -> {0, 4..7});
    the initial set is the first-segment part. A per-model selection from
    block_impact_study is preferred when available."""
    first = max(1, round(num_blocks / 6))
    last = max(1, round(num_blocks / 2))
    block_set = frozenset(range(first)) | frozenset(range(num_blocks - last, num_blocks))
    initial = frozenset(range(first))
    return block_set, initial


def initial_from_selection(block_set: frozenset[int]) -> frozenset[int]:
    """The leading contiguous run of a block selection: the early blocks
    whose split application keeps conditional text flowing into the rest."""
    initial = set()
    b = 0
    while b in block_set:
        initial.add(b)
        b += 1
    return frozenset(initial)


class AttentionControl:
    """Block-set configuration plus the null-pass text-feature buffer."""

    def __init__(
        self,
        block_set: frozenset[int] | set[int],
        initial_set: frozenset[int] | set[int] | None = None,
        mode: str = MODE_OFF,
    ):
        self.block_set = frozenset(block_set)
        self.initial_set = frozenset(initial_set) if initial_set is not None else frozenset()
        if not self.initial_set <= self.block_set:
            raise ValueError("initial_set must be a subset of block_set")
        if mode not in (MODE_OFF, MODE_CAPTURE, MODE_SWITCH):
            raise ValueError(f"unknown mode {mode!r}")
        self.mode = mode
        self._buffers: dict[tuple[int, int], Tensor] = {}
        self.current_t: int | None = None

    @classmethod
    def for_model(cls, num_blocks: int, mode: str = MODE_OFF) -> "AttentionControl":
        bs, bi = default_block_sets(num_blocks)
        return cls(bs, bi, mode=mode)

    # -- step lifecycle -------------------------------------------------

    def begin_step(self, t: int, mode: str) -> None:
        """Enter a denoising step: drop buffers from other timesteps."""
        if self.current_t is not None and self.current_t != t:
            self._buffers.clear()
        self.current_t = t
        self.set_mode(mode)

    def set_mode(self, mode: str) -> None:
        if mode not in (MODE_OFF, MODE_CAPTURE, MODE_SWITCH):
            raise ValueError(f"unknown mode {mode!r}")
        self.mode = mode

    def clear(self) -> None:
        self._buffers.clear()
        self.current_t = None

    # -- buffer access ----------------------------------------------------

    def capture_null_text(self, block_index: int, h_text: Tensor, t: int) -> None:
        """Store the null-pass text features entering `block_index` at step t."""
        if self.mode != MODE_CAPTURE:
            raise ControlError(f"capture_null_text called in mode {self.mode!r}")
        self._buffers[(block_index, t)] = h_text.detach().clone()

    def fetch_null_text(self, block_index: int, t: int) -> Tensor:
        try:
            return self._buffers[(block_index, t)]
        except KeyError:
            raise ControlError(
                f"no captured null text features for block {block_index} at t={t}; "
                "run a capture pass for this timestep first"
            ) from None

    def has_buffer(self, block_index: int, t: int) -> bool:
        return (block_index, t) in self._buffers

    # -- switching math -----------------------------------------------------

    def switched_kv(
        self,
        block_index: int,
        h_text_cond: Tensor,
        h_img_cond: Tensor,
        params,
        t,
    ) -> tuple[Tensor, Tensor]:
        """K and V for the joint sequence with the text segment sourced from
        the null buffer: K = P_K(h_text_null | h_img_cond), same for V.

        `params` is a denoiser block exposing norm1m / P_K / P_V. The query
        side is untouched here; callers keep Q from the conditional state.
        """
        if self.mode != MODE_SWITCH:
            raise ControlError(f"switched_kv called in mode {self.mode!r}")
        if block_index not in self.block_set:
            raise ControlError(f"block {block_index} is not in the switch set")
        key_t = t if isinstance(t, int) else int(t.reshape(-1)[0])
        h_text_null = self.fetch_null_text(block_index, key_t)
        if h_text_null.shape != h_text_cond.shape:
            raise ControlError(
                f"buffered text features {tuple(h_text_null.shape)} do not match "
                f"conditional ones {tuple(h_text_cond.shape)}"
            )
        spliced = torch.cat([h_text_null, h_img_cond], dim=-2)
        a = params.norm1m(spliced, t)
        return params.P_K(a), params.P_V(a)

    def split_block_advance(
        self,
        block_index: int,
        h_text_cond: Tensor,
        h_img_cond: Tensor,
        h_img_pure: Tensor,
        params,
        t,
    ) -> tuple[Tensor, Tensor, Tensor]:
        """Two-path block application for early switched blocks.

        The text path is a plain block evaluation on the fully conditional
        (hook-free) state, so conditional text features survive bit-exactly
        into the blocks after the initial segment; its image output is the
        advanced pure stream. The image path is the switched evaluation on
        the working state. Returns (text_next, img_next, img_pure_next).
        Exactly two attention evaluations.
        """
        if block_index not in self.initial_set:
            raise ControlError(f"block {block_index} is not in the initial split set")
        text_len = h_text_cond.shape[-2]
        h_pure = torch.cat([h_text_cond, h_img_pure], dim=-2)
        h_run = torch.cat([h_text_cond, h_img_cond], dim=-2)
        pure_out = params.post_attention(h_pure, params.attn_standard(h_pure, t), t)
        attn_swi = params.attn_switched(h_run, t, self, block_index, text_len)
        run_out = params.post_attention(h_run, attn_swi, t)
        return (
            pure_out[..., :text_len, :],
            run_out[..., text_len:, :],
            pure_out[..., text_len:, :],
        )

    def split_block_forward(
        self,
        block_index: int,
        h_text_cond: Tensor,
        h_img_cond: Tensor,
        params,
        t,
    ) -> tuple[Tensor, Tensor]:
        """Single-state view of the split application (the pure image stream
        coincides with the working one, as at the first switched block)."""
        text_next, img_next, _ = self.split_block_advance(
            block_index, h_text_cond, h_img_cond, h_img_cond, params, t
        )
        return text_next, img_next


@dataclass
class BlockSelection:
    """Per-block PSNR impact scores and the thresholded low-impact set."""

    impact_scores: list[float]
    selected: frozenset[int]

    def __post_init__(self):
        n = len(self.impact_scores)
        if any(not (0 <= b < n) for b in self.selected):
            raise ValueError("selected block indices out of range")


def block_impact_study(
    model,
    prompts: list,
    schedule,
    seeds: list[int],
) -> BlockSelection:
    """Measure how much each block's text conditioning matters: generate with
    block b's conditional text features replaced by null-pass features and
    compare (PSNR) to the all-blocks-active generation, averaged over
    prompts and seeds. High PSNR = low impact = a candidate for switching.
    """
    from .metrics import psnr
    from .sampling import sample_video

    if not prompts:
        raise ValueError("need at least one prompt")
    n_blocks = model.config.num_blocks
    scores = np.zeros(n_blocks, dtype=np.float64)
    count = 0
    for prompt in prompts:
        for seed in seeds:
            base = sample_video(model, prompt, schedule, seed=seed)
            for b in range(n_blocks):
                control = AttentionControl(frozenset({b}), frozenset())
                out = sample_video(
                    model, prompt, schedule, seed=seed,
                    control=control, null_capture=True,
                )
                scores[b] += psnr(out.numpy(), base.numpy(), peak=1.0)
            count += 1
    scores /= count
    finite = scores[np.isfinite(scores)]
    threshold = float(np.mean(finite)) if finite.size else np.inf
    selected = frozenset(int(b) for b in range(n_blocks) if scores[b] >= threshold)
    return BlockSelection(impact_scores=[float(v) for v in scores], selected=selected)
