"""Ancestral sampling helpers shared by generation-based studies."""

from __future__ import annotations

import torch

from .attention_control import MODE_CAPTURE, MODE_SWITCH, AttentionControl
from .schedule import NoiseSchedule, ddpm_step
from .vocab import TextCondition, null_condition

Tensor = torch.Tensor


def ancestral_denoise(
    x: Tensor,
    t_start: int,
    cond: TextCondition,
    model,
    s: NoiseSchedule,
    generator: torch.Generator,
    control: AttentionControl | None = None,
    null_capture: bool = False,
) -> Tensor:
    """Run the stochastic sampler from level t_start down to the clean
    sample, drawing fresh step noise from `generator`.

    With `null_capture`, every step first runs a null-prompt pass in capture
    mode so that a switch-mode conditional pass can consume the buffers
    (used by the block-impact study).
    """
    s.check_t(t_start)
    for t in range(t_start, -1, -1):
        if control is not None and null_capture:
            control.begin_step(t, MODE_CAPTURE)
            model.predict_eps(x, t, null_condition(model.config.text_len), control)
            control.set_mode(MODE_SWITCH)
        eps = model.predict_eps(x, t, cond, control)
        z = torch.randn(x.shape, generator=generator, dtype=x.dtype)
        x = ddpm_step(x, eps, t, z, s)
    return x


def sample_video(
    model,
    cond: TextCondition,
    s: NoiseSchedule,
    seed: int,
    control: AttentionControl | None = None,
    null_capture: bool = False,
) -> Tensor:
    """Generate a video from pure noise under a text condition."""
    g = torch.Generator().manual_seed(seed)
    x = torch.randn(model.config.video_shape, generator=g)
    return ancestral_denoise(
        x, s.num_steps - 1, cond, model, s, g,
        control=control, null_capture=null_capture,
    )
