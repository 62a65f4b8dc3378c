import dataclasses
import hashlib
import json
from pathlib import Path

import pytest
import torch

from derain import DenoiserConfig, JointDenoiser, build_schedule, make_dataset
from derain.attention_control import block_impact_study, initial_from_selection
from derain.training import TrainConfig, load_checkpoint, train_toy
from derain.vocab import condition_from_words


TINY_CFG = DenoiserConfig(
    num_blocks=4, dim=32, heads=2, text_len=4,
    patch_size=4, frames=2, channels=1, height=8, width=8,
)

# frozen toy recipe: all quantitative thresholds in the suite were
# calibrated against the model this produces (see scripts/bringup_*.py)
TRAIN_DATA_N = 120
TRAIN_DATA_SEED = 10
SCHEDULE_ARGS = (100, 1e-4, 0.02, "linear")
CACHE_DIR = Path(__file__).parent / "_cache"


def randomized_model(cfg: DenoiserConfig = TINY_CFG, seed: int = 0) -> JointDenoiser:
    """Untrained model with non-degenerate weights (the zero-initialized
    output head would otherwise make every prediction zero)."""
    torch.manual_seed(seed)
    model = JointDenoiser(cfg)
    with torch.no_grad():
        for p in model.parameters():
            p.normal_(std=0.2)
    model.eval()
    return model


@pytest.fixture(scope="session")
def tiny_model() -> JointDenoiser:
    return randomized_model()


@pytest.fixture(scope="session")
def tiny_schedule():
    return build_schedule(12, 1e-3, 0.2)


@pytest.fixture()
def tiny_video():
    g = torch.Generator().manual_seed(42)
    return torch.rand(TINY_CFG.video_shape, generator=g)


def _recipe_digest(model_cfg: DenoiserConfig, train_cfg: TrainConfig) -> str:
    payload = json.dumps(
        {
            "model": model_cfg.to_dict(),
            "train": dataclasses.asdict(train_cfg),
            "data": [TRAIN_DATA_N, TRAIN_DATA_SEED],
            "schedule": SCHEDULE_ARGS,
        },
        sort_keys=True,
    )
    return hashlib.sha1(payload.encode()).hexdigest()[:10]


@pytest.fixture(scope="session")
def full_schedule():
    return build_schedule(*SCHEDULE_ARGS[:3], kind=SCHEDULE_ARGS[3])


@pytest.fixture(scope="session")
def train_dataset():
    return make_dataset(TRAIN_DATA_N, seed=TRAIN_DATA_SEED)


@pytest.fixture(scope="session")
def trained_model(full_schedule, train_dataset) -> JointDenoiser:
    """The toy denoiser every quantitative test runs against. Trained once
    and cached on disk; delete tests/_cache to retrain from scratch."""
    model_cfg = DenoiserConfig()
    train_cfg = TrainConfig()
    path = CACHE_DIR / f"toy-model-{_recipe_digest(model_cfg, train_cfg)}.vdt"
    if path.exists():
        return load_checkpoint(path)
    CACHE_DIR.mkdir(exist_ok=True)
    model, history = train_toy(
        train_dataset, model_cfg, full_schedule, train_cfg, out_path=path
    )
    assert history.last_ema < history.first_ema
    return model


@pytest.fixture(scope="session")
def heldout_light(full_schedule):
    """Held-out light-rain scenes: the calibration regime for the universal
    contextual prompt (the toy counterpart of real-world test rain)."""
    pool = make_dataset(30, seed=999)
    return [b for b in pool if b.spec.intensity == "light"]


@pytest.fixture(scope="session")
def heldout_heavy():
    pool = make_dataset(30, seed=999)
    return [b for b in pool if b.spec.intensity == "heavy"]


@pytest.fixture(scope="session")
def derived_blocks(trained_model, full_schedule):
    """Switch-set selection from the block-impact study on the trained
    model, as the method prescribes; the initial set is its leading run."""
    prompts = [
        condition_from_words("scene light rain"),
        condition_from_words("scene heavy rain"),
    ]
    sel = block_impact_study(trained_model, prompts, full_schedule, seeds=[0, 1])
    block_set = sel.selected
    return block_set, initial_from_selection(block_set)
