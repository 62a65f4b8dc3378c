"""Video inversion: noise-add (SDEdit-style), deterministic (DDIM), and the
edit-friendly stochastic inversion that stores per-step noise maps, plus the
reconstruction-from-noise-maps procedure."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .attention_control import AttentionControl
from .container import read_container, write_container
from .guidance import GuidanceSpec, dual_pass
from .schedule import (
    NoiseSchedule,
    ddim_invert_step,
    ddim_step,
    ddpm_mu,
    ddpm_step,
    forward_noise,
)
from .vocab import TextCondition

Tensor = torch.Tensor


@dataclass
class InversionRecord:
    """Terminal latent plus the per-step noise maps extracted along the way.

    noise_maps[t] is the draw that reproduces the step t -> t-1; trajectory
    (when retained) holds the noisy latent at every level so guided runs can
    start mid-chain.
    """

    x_T: Tensor
    noise_maps: Tensor
    condition_used: TextCondition
    schedule_key: tuple
    trajectory: Tensor | None = None

    @property
    def num_steps(self) -> int:
        return self.noise_maps.shape[0]

    def start_latent(self, t: int) -> Tensor:
        if t == self.num_steps - 1:
            return self.x_T
        if self.trajectory is None:
            raise ValueError("record did not retain intermediate latents")
        return self.trajectory[t]


def sdedit_invert(x0: Tensor, t_start: int, seed: int, s: NoiseSchedule) -> Tensor:
    """Plain noise-add inversion: jump straight to level t_start."""
    s.check_t(t_start)
    g = torch.Generator().manual_seed(seed)
    eps = torch.randn(x0.shape, generator=g, dtype=x0.dtype)
    return forward_noise(x0, t_start, eps, s)


def ddim_invert(
    x0: Tensor, cond: TextCondition, model, s: NoiseSchedule
) -> Tensor:
    """Deterministic inversion: rearrange the sampling update, estimating the
    noise at each step from the current (less noisy) latent. Returns the
    trajectory with entry t at level t."""
    if x0.numel() == 0:
        raise ValueError("empty latent video")
    xs = torch.empty((s.num_steps,) + tuple(x0.shape), dtype=x0.dtype)
    x = x0
    for t in range(s.num_steps):
        eps = model.predict_eps(x, t, cond)
        x = ddim_invert_step(x, eps, t, s)
        xs[t] = x
    return xs


def ddim_reconstruct(
    x_start: Tensor, t_start: int, cond: TextCondition, model, s: NoiseSchedule
) -> Tensor:
    """Deterministic reconstruction from level t_start down to the sample."""
    x = x_start
    for t in range(t_start, -1, -1):
        eps = model.predict_eps(x, t, cond)
        x = ddim_step(x, eps, t, s)
    return x


def ddpm_invert(
    x0: Tensor,
    cond: TextCondition,
    model,
    s: NoiseSchedule,
    seed: int,
    keep_trajectory: bool = True,
) -> InversionRecord:
    """Edit-friendly inversion: draw an independent noisy latent per level,
    then back out the per-step noise map that the sampler would need to walk
    the recorded chain exactly."""
    if x0.numel() == 0:
        raise ValueError("empty latent video")
    if np.any(s.posterior_sigmas <= 0):
        raise ValueError("schedule has a non-positive step sigma; inversion undefined")
    g = torch.Generator().manual_seed(seed)
    T = s.num_steps
    xs = torch.empty((T,) + tuple(x0.shape), dtype=x0.dtype)
    for t in range(T):
        eps_t = torch.randn(x0.shape, generator=g, dtype=x0.dtype)
        xs[t] = forward_noise(x0, t, eps_t, s)
    zs = torch.empty_like(xs)
    for t in range(T - 1, -1, -1):
        eps_hat = model.predict_eps(xs[t], t, cond)
        mu = ddpm_mu(xs[t], eps_hat, t, s)
        lower = xs[t - 1] if t > 0 else x0
        zs[t] = (lower - mu) / float(s.posterior_sigmas[t])
    return InversionRecord(
        x_T=xs[T - 1].clone(),
        noise_maps=zs,
        condition_used=cond,
        schedule_key=s.key,
        trajectory=xs if keep_trajectory else None,
    )


def reconstruct(
    record: InversionRecord,
    cond: TextCondition,
    model,
    s: NoiseSchedule,
    guidance: GuidanceSpec | None = None,
    control: AttentionControl | None = None,
    start_level: int | None = None,
) -> Tensor:
    """Walk the recorded chain: predict, step, and re-inject the stored noise
    map at every level. With a GuidanceSpec the per-step estimate comes from
    the dual pass once past the skip window; without one this is the pure
    reconstruction."""
    if record.schedule_key != s.key:
        raise ValueError(
            f"record built for schedule {record.schedule_key}, got {s.key}"
        )
    t_start = record.num_steps - 1 if start_level is None else start_level
    s.check_t(t_start)
    x = record.start_latent(t_start)
    for t in range(t_start, -1, -1):
        if guidance is not None:
            eps = dual_pass(x, t, guidance, model, control)
        else:
            eps = model.predict_eps(x, t, cond)
        x = ddpm_step(x, eps, t, record.noise_maps[t], s)
    return x


def save_record(record: InversionRecord, path: str | Path) -> None:
    """Persist a record as a tensor container with a JSON sidecar holding
    the condition and schedule identity."""
    path = Path(path)
    tensors = {"x_T": record.x_T, "noise_maps": record.noise_maps}
    if record.trajectory is not None:
        tensors["trajectory"] = record.trajectory
    write_container(path, tensors)
    meta = {
        "condition_ids": list(record.condition_used.token_ids),
        "schedule_key": list(record.schedule_key),
    }
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta, indent=2))


def load_record(path: str | Path) -> InversionRecord:
    path = Path(path)
    tensors = read_container(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    key = meta["schedule_key"]
    return InversionRecord(
        x_T=torch.from_numpy(tensors["x_T"].copy()),
        noise_maps=torch.from_numpy(tensors["noise_maps"].copy()),
        condition_used=TextCondition(token_ids=tuple(meta["condition_ids"])),
        schedule_key=(int(key[0]), str(key[1]), float(key[2]), float(key[3])),
        trajectory=(
            torch.from_numpy(tensors["trajectory"].copy())
            if "trajectory" in tensors
            else None
        ),
    )
