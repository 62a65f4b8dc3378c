"""Zero-shot video deraining on toy scenes: diffusion inversion,
negative-prompt guidance, and KV attention switching for a joint-attention
denoiser, with procedural rainy-video generation and ground-truth metrics."""

from .attention_control import (
    AttentionControl,
    BlockSelection,
    block_impact_study,
    default_block_sets,
)
from .denoiser import DenoiserConfig, HiddenState, JointDenoiser
from .guidance import GuidanceSpec, build_negative_condition, dual_pass, guided_eps
from .inversion import (
    InversionRecord,
    ddim_invert,
    ddim_reconstruct,
    ddpm_invert,
    reconstruct,
    sdedit_invert,
)
from .metrics import MetricsReport, evaluate_video, psnr, rain_residual, warp_error
from .sampling import sample_video
from .schedule import (
    NoiseSchedule,
    build_schedule,
    ddim_invert_step,
    ddim_step,
    ddpm_mu,
    ddpm_step,
    forward_noise,
)
from .synthetic_rain import RainSceneSpec, SceneBundle, make_dataset, render
from .training import TrainConfig, load_checkpoint, save_checkpoint, train_toy
from .vocab import TextCondition, condition_from_words, null_condition

__all__ = [
    "AttentionControl", "BlockSelection", "block_impact_study",
    "default_block_sets", "DenoiserConfig", "HiddenState", "JointDenoiser",
    "GuidanceSpec", "build_negative_condition", "dual_pass", "guided_eps",
    "InversionRecord", "ddim_invert", "ddim_reconstruct", "ddpm_invert",
    "reconstruct", "sdedit_invert", "MetricsReport", "evaluate_video", "psnr",
    "rain_residual", "warp_error", "sample_video", "NoiseSchedule",
    "build_schedule", "ddim_invert_step", "ddim_step", "ddpm_mu", "ddpm_step",
    "forward_noise", "RainSceneSpec", "SceneBundle", "make_dataset", "render",
    "TrainConfig", "load_checkpoint", "save_checkpoint", "train_toy",
    "TextCondition", "condition_from_words", "null_condition",
]
