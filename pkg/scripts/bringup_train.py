#!/usr/bin/env python3
"""Training bring-up: check loss dynamics, conditional separation, and the
held-out denoising improvement for candidate model/schedule sizes."""

import argparse
import time

import numpy as np
import torch

from derain.denoiser import DenoiserConfig, JointDenoiser
from derain.schedule import build_schedule, forward_noise
from derain.synthetic_rain import make_dataset
from derain.training import TrainConfig, train_toy, training_pairs
from derain.vocab import condition_from_words, null_condition


def heldout_mse(model, bundles, schedule, seed=123):
    """Noise-prediction MSE on held-out pairs with the true captions."""
    videos, captions = training_pairs(bundles)
    g = torch.Generator().manual_seed(seed)
    total, n = 0.0, 0
    with torch.no_grad():
        for i in range(videos.shape[0]):
            x0 = videos[i]
            cond = condition_from_words(captions[i])
            for t in (5, 25, 50, 75, 95):
                if t >= schedule.num_steps:
                    continue
                eps = torch.randn(x0.shape, generator=g)
                x_t = forward_noise(x0, t, eps, schedule)
                pred = model.predict_eps(x_t, t, cond)
                total += float(((pred - eps) ** 2).mean())
                n += 1
    return total / n


def conditional_separation(model, bundles, schedule, seed=7):
    """How much the noise prediction moves between null and rain prompts on
    rainy inputs, relative to the prediction scale."""
    g = torch.Generator().manual_seed(seed)
    diffs = []
    for b in bundles:
        if b.spec.intensity == "none":
            continue
        x0 = torch.from_numpy(b.rainy)
        for t in (30, 60):
            eps = torch.randn(x0.shape, generator=g)
            x_t = forward_noise(x0, t, eps, schedule)
            e_null = model.predict_eps(x_t, t, null_condition())
            e_rain = model.predict_eps(x_t, t, condition_from_words("light rain"))
            diffs.append(float((e_null - e_rain).abs().mean()))
    return float(np.mean(diffs))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=3000)
    ap.add_argument("--dim", type=int, default=96)
    ap.add_argument("--blocks", type=int, default=8)
    ap.add_argument("--batch", type=int, default=16)
    ap.add_argument("--lr", type=float, default=2e-3)
    ap.add_argument("--beta-end", type=float, default=0.02)
    ap.add_argument("--n-train", type=int, default=120)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()

    cfg = DenoiserConfig(num_blocks=args.blocks, dim=args.dim)
    schedule = build_schedule(100, 1e-4, args.beta_end)
    train = make_dataset(args.n_train, seed=10)
    held = make_dataset(12, seed=999)

    torch.manual_seed(0)
    untrained = JointDenoiser(cfg)
    with torch.no_grad():
        for p in untrained.parameters():
            p.normal_(std=0.1)
    untrained.eval()
    base_mse = heldout_mse(untrained, held, schedule)
    print(f"untrained held-out mse: {base_mse:.4f}")

    t0 = time.time()
    tc = TrainConfig(
        steps=args.steps, batch_size=args.batch, lr=args.lr, seed=args.seed
    )
    model, hist = train_toy(train, cfg, schedule, tc, out_path=args.out)
    dt = time.time() - t0
    print(
        f"trained {args.steps} steps in {dt:.0f}s "
        f"({1000 * dt / max(args.steps, 1):.0f} ms/step); "
        f"ema {hist.first_ema:.4f} -> {hist.last_ema:.4f}"
    )
    mse = heldout_mse(model, held, schedule)
    sep = conditional_separation(model, held, schedule)
    print(f"trained held-out mse: {mse:.4f} (improvement x{base_mse / mse:.2f})")
    print(f"null-vs-rain prediction separation: {sep:.4f}")


if __name__ == "__main__":
    main()
