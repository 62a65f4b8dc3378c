"""Discrete DDPM noise schedule and the elementary per-step transforms.

All schedule tables are kept in float64; per-step coefficients are cast to
the latent's dtype at the point of use. A "latent video" throughout the
package is a plain torch tensor of shape (frames, channels, height, width),
optionally with a leading batch dimension.

Step indexing: t runs over 0..T-1. forward_noise(x0, t) produces the noisy
latent at level t; the denoising step at t maps level t to level t-1, where
level -1 is the clean sample itself (alpha_bar_{-1} := 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

Tensor = torch.Tensor


@dataclass(frozen=True)
class NoiseSchedule:
    """Beta/alpha-bar/sigma tables for a T-step diffusion process.

    posterior_sigmas[t] is the ancestral-sampling std for the step t -> t-1.
    For t >= 1 it is the standard posterior value
    sqrt((1 - alpha_bar_{t-1}) / (1 - alpha_bar_t) * beta_t). At t = 0 the
    posterior value degenerates to 0 (alpha_bar_{-1} = 1), which would make
    the per-step noise map of the inversion undefined there; we clamp it to
    sqrt(beta_0) so the final step stays invertible.
    """

    num_steps: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    posterior_sigmas: np.ndarray
    kind: str = "linear"

    def __post_init__(self):
        T = self.num_steps
        for name in ("betas", "alphas", "alpha_bars", "posterior_sigmas"):
            arr = getattr(self, name)
            if arr.shape != (T,):
                raise ValueError(f"{name} must have shape ({T},), got {arr.shape}")
        if np.any(self.betas <= 0) or np.any(self.betas >= 1):
            raise ValueError("betas must lie in (0, 1)")
        if np.any(np.diff(self.alpha_bars) >= 0):
            raise ValueError("alpha_bars must be strictly decreasing")

    @property
    def key(self) -> tuple:
        """Identity tuple used to match inversion records to schedules."""
        return (self.num_steps, self.kind, float(self.betas[0]), float(self.betas[-1]))

    def alpha_bar_prev(self, t: int) -> float:
        return 1.0 if t == 0 else float(self.alpha_bars[t - 1])

    def check_t(self, t) -> None:
        if isinstance(t, int):
            tmin = tmax = t
        else:
            vals = t.detach().cpu().numpy() if isinstance(t, torch.Tensor) else np.asarray(t)
            tmin, tmax = int(vals.min()), int(vals.max())
        if tmin < 0 or tmax >= self.num_steps:
            raise ValueError(f"step index {t} out of range [0, {self.num_steps})")


def build_schedule(
    num_steps: int,
    beta_start: float = 1e-4,
    beta_end: float = 0.02,
    kind: str = "linear",
) -> NoiseSchedule:
    """Construct a T-step schedule. `kind` is "linear" or "cosine".

    The cosine schedule follows the squared-cosine alpha-bar curve with the
    usual 0.008 offset and a 0.999 cap on betas; beta_start/beta_end are
    ignored for it.
    """
    if num_steps < 2:
        raise ValueError("num_steps must be >= 2")
    if kind == "linear":
        if not (0.0 < beta_start <= beta_end < 1.0):
            raise ValueError("need 0 < beta_start <= beta_end < 1")
        betas = np.linspace(beta_start, beta_end, num_steps, dtype=np.float64)
    elif kind == "cosine":
        s = 0.008

        def f(u):
            return math.cos((u + s) / (1 + s) * math.pi / 2) ** 2

        bars = np.array([f((i + 1) / num_steps) / f(0.0) for i in range(num_steps)])
        prev = np.concatenate([[1.0], bars[:-1]])
        betas = np.clip(1.0 - bars / prev, 1e-8, 0.999)
    else:
        raise ValueError(f"unknown schedule kind {kind!r}")

    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    sigmas = np.empty(num_steps, dtype=np.float64)
    sigmas[0] = math.sqrt(betas[0])  # clamped: posterior value degenerates to 0
    if num_steps > 1:
        sigmas[1:] = np.sqrt(
            (1.0 - alpha_bars[:-1]) / (1.0 - alpha_bars[1:]) * betas[1:]
        )
    return NoiseSchedule(
        num_steps=num_steps,
        betas=betas,
        alphas=alphas,
        alpha_bars=alpha_bars,
        posterior_sigmas=sigmas,
        kind=kind,
    )


def _coeff(values: np.ndarray, t, like: Tensor) -> Tensor:
    """Index a schedule table at t (int or 1-D tensor) and shape the result
    so it broadcasts against `like` over a leading batch dimension."""
    if isinstance(t, int):
        return torch.tensor(float(values[t]), dtype=like.dtype)
    idx = t.detach().cpu().numpy()
    out = torch.as_tensor(values[idx], dtype=like.dtype)
    return out.reshape((-1,) + (1,) * (like.ndim - 1))


def _check_shapes(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def forward_noise(x0: Tensor, t, eps: Tensor, s: NoiseSchedule) -> Tensor:
    """Noise a clean latent to level t: sqrt(ab_t) x0 + sqrt(1 - ab_t) eps."""
    _check_shapes(x0, eps, "forward_noise")
    s.check_t(t)
    ab = _coeff(s.alpha_bars, t, x0)
    return torch.sqrt(ab) * x0 + torch.sqrt(1.0 - ab) * eps


def ddpm_mu(x_t: Tensor, eps_hat: Tensor, t, s: NoiseSchedule) -> Tensor:
    """Posterior mean of x_{t-1}: (x_t - beta_t / sqrt(1-ab_t) * eps) / sqrt(alpha_t).

    At t = 0 this reduces exactly to the predicted clean sample.
    """
    _check_shapes(x_t, eps_hat, "ddpm_mu")
    s.check_t(t)
    beta = _coeff(s.betas, t, x_t)
    ab = _coeff(s.alpha_bars, t, x_t)
    alpha = _coeff(s.alphas, t, x_t)
    return (x_t - beta / torch.sqrt(1.0 - ab) * eps_hat) / torch.sqrt(alpha)


def ddpm_step(x_t: Tensor, eps_hat: Tensor, t, z: Tensor, s: NoiseSchedule) -> Tensor:
    """One ancestral step t -> t-1 with an explicit noise draw z."""
    _check_shapes(x_t, z, "ddpm_step")
    mu = ddpm_mu(x_t, eps_hat, t, s)
    sigma = _coeff(s.posterior_sigmas, t, x_t)
    return mu + sigma * z


def predict_x0(x_t: Tensor, eps_hat: Tensor, t, s: NoiseSchedule) -> Tensor:
    """Clean-sample estimate implied by a noise prediction at level t."""
    _check_shapes(x_t, eps_hat, "predict_x0")
    s.check_t(t)
    ab = _coeff(s.alpha_bars, t, x_t)
    return (x_t - torch.sqrt(1.0 - ab) * eps_hat) / torch.sqrt(ab)


def ddim_step(x_t: Tensor, eps_hat: Tensor, t: int, s: NoiseSchedule) -> Tensor:
    """Deterministic (eta = 0) step t -> t-1."""
    s.check_t(t)
    x0_hat = predict_x0(x_t, eps_hat, t, s)
    ab_prev = s.alpha_bar_prev(t)
    return math.sqrt(ab_prev) * x0_hat + math.sqrt(1.0 - ab_prev) * eps_hat


def ddim_invert_step(x_prev: Tensor, eps_hat: Tensor, t: int, s: NoiseSchedule) -> Tensor:
    """Algebraic inverse of ddim_step: produce x_t from x_{t-1} at fixed eps."""
    _check_shapes(x_prev, eps_hat, "ddim_invert_step")
    s.check_t(t)
    ab_prev = s.alpha_bar_prev(t)
    ab = float(s.alpha_bars[t])
    x0_hat = (x_prev - math.sqrt(1.0 - ab_prev) * eps_hat) / math.sqrt(ab_prev)
    return math.sqrt(ab) * x0_hat + math.sqrt(1.0 - ab) * eps_hat
