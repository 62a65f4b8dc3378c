#!/usr/bin/env python3
"""Derain-pipeline bring-up: measure rain residual, PSNR, and warp error of
the guided reconstruction across prompt modes and lambdas on held-out rainy
videos."""

import argparse

import numpy as np
import torch

from derain.attention_control import AttentionControl, default_block_sets
from derain.guidance import GuidanceSpec, build_negative_condition
from derain.inversion import ddpm_invert, reconstruct
from derain.metrics import psnr, rain_residual, warp_error
from derain.schedule import build_schedule
from derain.synthetic_rain import make_dataset
from derain.training import load_checkpoint, caption_corpus
from derain.vocab import condition_from_words, null_condition


def run_one(model, schedule, bundle, negative, lam, t_skip, switch, seed=0,
            invert_cond=None, guidance=True):
    rainy = torch.from_numpy(bundle.rainy)
    null = null_condition(model.config.text_len)
    inv_cond = invert_cond if invert_cond is not None else null
    record = ddpm_invert(rainy, inv_cond, model, schedule, seed=seed)
    spec = None
    control = None
    if guidance:
        spec = GuidanceSpec(lam, t_skip, negative, null, steps=schedule.num_steps)
        if switch:
            control = AttentionControl.for_model(model.config.num_blocks)
    out = reconstruct(record, null, model, schedule, guidance=spec, control=control)
    out_np = out.numpy()
    return {
        "residual": rain_residual(out_np, bundle.clean, bundle.rain_mask),
        "psnr": psnr(out_np, bundle.clean),
        "warp": warp_error(out_np, bundle.flow),
    }


def summarize(name, rows, base):
    res = np.mean([r["residual"] for r in rows])
    ps = np.mean([r["psnr"] for r in rows])
    wp = np.mean([r["warp"] for r in rows])
    print(
        f"{name:34s} residual={res:.4f} ({res / base['residual']:.2f}x input)  "
        f"psnr={ps:5.2f} (input {base['psnr']:5.2f})  "
        f"warp={wp:.4f} (input {base['warp']:.4f})"
    )
    return {"residual": res, "psnr": ps, "warp": wp}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--checkpoint", required=True)
    ap.add_argument("--beta-end", type=float, default=0.02)
    ap.add_argument("--n", type=int, default=6)
    ap.add_argument("--t-skip", type=int, default=40)
    ap.add_argument("--quick", action="store_true", help="contextual prompt only")
    args = ap.parse_args()

    model = load_checkpoint(args.checkpoint)
    schedule = build_schedule(100, 1e-4, args.beta_end)
    held = [b for b in make_dataset(3 * args.n, seed=999) if b.spec.intensity != "none"][: args.n]
    train_caps = caption_corpus(make_dataset(120, seed=10))

    base = {
        "residual": np.mean(
            [rain_residual(b.rainy, b.clean, b.rain_mask) for b in held]
        ),
        "psnr": np.mean([psnr(b.rainy, b.clean) for b in held]),
        "warp": np.mean([warp_error(b.rainy, b.flow) for b in held]),
    }
    print(f"{'input':34s} residual={base['residual']:.4f}  psnr={base['psnr']:5.2f}  "
          f"warp={base['warp']:.4f}   [n={len(held)}]")

    contextual = build_negative_condition("contextual", "rain")
    simple = build_negative_condition("simple", "rain")
    mean_c = build_negative_condition(
        "mean_embedding", "rain", model=model, corpus=train_caps
    )

    jobs = [
        ("recon only (no guidance)", dict(negative=contextual, lam=0, guidance=False)),
        ("contextual l15 no-switch", dict(negative=contextual, lam=15, switch=False)),
        ("contextual l25 switch", dict(negative=contextual, lam=25, switch=True)),
    ]
    if not args.quick:
        jobs += [
            ("contextual l15 switch", dict(negative=contextual, lam=15, switch=True)),
            ("contextual l25 no-switch", dict(negative=contextual, lam=25, switch=False)),
            ("simple l25 switch", dict(negative=simple, lam=25, switch=True)),
            ("mean l25 switch", dict(negative=mean_c, lam=25, switch=True)),
            ("implicit (invert rain, recon null)",
             dict(negative=contextual, lam=0, guidance=False,
                  invert_cond=condition_from_words("rain"))),
        ]
    for name, kw in jobs:
        kw.setdefault("switch", False)
        kw.setdefault("lam", 0)
        rows = [
            run_one(model, schedule, b, t_skip=args.t_skip, seed=i, **kw)
            for i, b in enumerate(held)
        ]
        summarize(name, rows, base)


if __name__ == "__main__":
    main()
