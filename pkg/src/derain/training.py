"""Toy training loop: denoising score matching with text conditions and
condition dropout, plus checkpoint persistence."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .container import read_container, write_container
from .denoiser import DenoiserConfig, JointDenoiser
from .schedule import NoiseSchedule, forward_noise
from .synthetic_rain import SceneBundle
from .vocab import PAD_ID, TOKEN_IDS, condition_from_words

Tensor = torch.Tensor


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 3000
    batch_size: int = 12
    lr: float = 2e-3
    p_drop: float = 0.1          # whole-condition dropout to NULL
    p_drop_scene: float = 0.15   # drop the "scene" word
    p_drop_intensity: float = 0.15  # drop the intensity word
    seed: int = 0
    log_every: int = 200
    ema_decay: float = 0.98


@dataclass
class TrainHistory:
    ema_losses: list[float] = field(default_factory=list)
    raw_losses: list[float] = field(default_factory=list)

    @property
    def first_ema(self) -> float:
        return self.ema_losses[0] if self.ema_losses else float("nan")

    @property
    def last_ema(self) -> float:
        return self.ema_losses[-1] if self.ema_losses else float("nan")


def training_pairs(dataset: list[SceneBundle]) -> tuple[Tensor, list[list[str]]]:
    """Flatten bundles into (videos, caption-word-lists): every clean video
    with the "scene" caption, every degraded one with its own caption."""
    videos, captions = [], []
    for b in dataset:
        videos.append(torch.from_numpy(b.clean))
        captions.append(["scene"])
        if b.spec.intensity != "none":
            videos.append(torch.from_numpy(b.rainy))
            captions.append(list(b.caption))
    return torch.stack(videos), captions


def caption_corpus(dataset: list[SceneBundle]) -> list[list[str]]:
    """All caption word lists of a dataset (for mean-embedding prompts)."""
    return [list(b.caption) for b in dataset if b.spec.intensity != "none"] + [
        ["scene"] for b in dataset if b.spec.intensity == "none"
    ]


def _caption_ids(
    words: list[str], text_len: int, u: np.ndarray, cfg: TrainConfig
) -> list[int]:
    """Token ids for one caption with word/condition dropout applied.
    u holds three uniform draws: full-drop, scene-drop, intensity-drop.
    At most one word is dropped, so a degradation concept never appears
    bare: its token only ever occurs in context."""
    if u[0] < cfg.p_drop:
        return [PAD_ID] * text_len
    kept = list(words)
    if u[1] < cfg.p_drop_scene and "scene" in kept and len(kept) > 1:
        kept.remove("scene")
    elif u[2] < cfg.p_drop_intensity:
        for w in ("light", "heavy"):
            if w in kept:
                kept.remove(w)
    ids = [TOKEN_IDS[w] for w in kept]
    return ids + [PAD_ID] * (text_len - len(ids))


def train_toy(
    dataset: list[SceneBundle],
    model_cfg: DenoiserConfig,
    schedule: NoiseSchedule,
    train_cfg: TrainConfig,
    out_path: str | Path | None = None,
) -> tuple[JointDenoiser, TrainHistory]:
    """Train a fresh denoiser on the dataset; optionally persist a checkpoint.

    Raises on an empty dataset and aborts with a diagnostic if the loss goes
    non-finite. steps = 0 leaves the seeded initialization untouched.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    torch.manual_seed(train_cfg.seed)
    model = JointDenoiser(model_cfg)
    videos, captions = training_pairs(dataset)
    if videos.shape[1:] != model_cfg.video_shape:
        raise ValueError(
            f"dataset videos {tuple(videos.shape[1:])} do not match the model "
            f"config {model_cfg.video_shape}"
        )
    history = TrainHistory()
    if train_cfg.steps > 0:
        opt = torch.optim.Adam(model.parameters(), lr=train_cfg.lr)
        rng = np.random.default_rng(train_cfg.seed)
        g = torch.Generator().manual_seed(train_cfg.seed)
        n = videos.shape[0]
        ema = None
        model.train()
        for step in range(train_cfg.steps):
            idx = rng.integers(0, n, train_cfg.batch_size)
            x0 = videos[idx]
            t = torch.from_numpy(
                rng.integers(0, schedule.num_steps, train_cfg.batch_size)
            ).long()
            drop_u = rng.random((train_cfg.batch_size, 3))
            ids = torch.tensor(
                [
                    _caption_ids(captions[i], model_cfg.text_len, drop_u[j], train_cfg)
                    for j, i in enumerate(idx)
                ],
                dtype=torch.long,
            )
            eps = torch.randn(x0.shape, generator=g)
            x_t = forward_noise(x0, t, eps, schedule)
            pred = model(x_t, t, ids)
            loss = F.mse_loss(pred, eps)
            if not torch.isfinite(loss):
                raise RuntimeError(
                    f"non-finite training loss at step {step}: {loss.item()}"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            val = float(loss.item())
            ema = val if ema is None else (
                train_cfg.ema_decay * ema + (1 - train_cfg.ema_decay) * val
            )
            history.raw_losses.append(val)
            history.ema_losses.append(ema)
    model.eval()
    if out_path is not None:
        save_checkpoint(model, out_path)
    return model, history


def save_checkpoint(model: JointDenoiser, path: str | Path) -> None:
    """Persist parameters in the tensor container format with a JSON config
    sidecar (same path with .json appended)."""
    path = Path(path)
    tensors = {name: p.detach() for name, p in model.state_dict().items()}
    write_container(path, tensors)
    sidecar = path.with_suffix(path.suffix + ".json")
    sidecar.write_text(json.dumps(model.config.to_dict(), indent=2))


def load_checkpoint(path: str | Path) -> JointDenoiser:
    path = Path(path)
    sidecar = path.with_suffix(path.suffix + ".json")
    cfg = DenoiserConfig(**json.loads(sidecar.read_text()))
    model = JointDenoiser(cfg)
    tensors = read_container(path)
    state = {name: torch.from_numpy(arr.copy()) for name, arr in tensors.items()}
    model.load_state_dict(state)
    model.eval()
    return model
