"""Command-line entry point: data generation, toy training, inversion, the
end-to-end derain pipeline, studies, and evaluation.

Every subcommand writes under a run directory: tensors in the container
format, PPM frames, CSV/JSON reports, and a manifest recording the resolved
configuration and seeds. Replaying a manifest reproduces the run byte for
byte. Flags override values from --config; the environment variable
DERAIN_RUN_DIR overrides the output root for relative run directories.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .analysis import inversion_sweep, prompt_probe
from .attention_control import AttentionControl, block_impact_study, default_block_sets
from .denoiser import DenoiserConfig
from .guidance import GuidanceSpec, build_negative_condition
from .inversion import ddpm_invert, load_record, reconstruct, save_record
from .metrics import evaluate_video
from .schedule import build_schedule
from .synthetic_rain import RainSceneSpec, SceneBundle, make_dataset, render
from .training import TrainConfig, load_checkpoint, train_toy
from .vocab import TextCondition, condition_from_words, null_condition
from .container import read_container, write_container, write_ppm

DEFAULT_LAMBDA_PLAIN = 15.0
DEFAULT_LAMBDA_SWITCHED = 25.0


@dataclass
class RunConfig:
    """Resolved configuration for one run; serialized into the manifest."""

    seed: int = 0
    steps: int = 100
    beta_start: float = 1e-4
    beta_end: float = 0.02
    schedule_kind: str = "linear"
    lam: float | None = None
    t_skip: int | None = None  # default: 40% of steps (40 of 100)
    prompt_mode: str = "contextual"  # simple | mean | contextual
    invert_with: str = "null"        # null | concept
    attn_switch: bool = True
    blocks: list[int] | None = None
    blocks_initial: list[int] | None = None
    checkpoint: str | None = None
    input: str | None = None
    derained: str | None = None
    data_dir: str | None = None
    out_dir: str = "run"
    n: int = 12
    train_steps: int = 3000
    batch_size: int = 12
    lr: float = 2e-3
    prompts: list[str] = field(default_factory=lambda: ["scene light rain"])
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3])
    t_skips: list[int] = field(default_factory=lambda: [0, 25, 50])

    def validate(self) -> None:
        if self.steps < 2:
            raise ValueError("steps must be >= 2")
        if not (0.0 < self.beta_start <= self.beta_end < 1.0):
            raise ValueError("betas must satisfy 0 < start <= end < 1")
        if self.lam is not None and self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.t_skip is not None and not (0 <= self.t_skip <= self.steps):
            raise ValueError("t-skip must lie in [0, steps]")
        if self.prompt_mode not in ("simple", "mean", "contextual"):
            raise ValueError(f"unknown prompt mode {self.prompt_mode!r}")
        if self.invert_with not in ("null", "concept"):
            raise ValueError(f"unknown inversion condition {self.invert_with!r}")

    @property
    def effective_lambda(self) -> float:
        if self.lam is not None:
            return self.lam
        return DEFAULT_LAMBDA_SWITCHED if self.attn_switch else DEFAULT_LAMBDA_PLAIN

    @property
    def effective_t_skip(self) -> int:
        if self.t_skip is not None:
            return self.t_skip
        return self.steps * 40 // 100

    def resolved_out_dir(self) -> Path:
        out = Path(self.out_dir)
        if not out.is_absolute():
            root = os.environ.get("DERAIN_RUN_DIR")
            if root:
                out = Path(root) / out
        return out


def _config_from_sources(args: argparse.Namespace) -> RunConfig:
    """Defaults, then --config file values, then explicit flags."""
    cfg = RunConfig()
    if args.config:
        raw = json.loads(Path(args.config).read_text())
        if "config" in raw and isinstance(raw["config"], dict):
            raw = raw["config"]  # allow replaying a manifest directly
        for k, v in raw.items():
            if hasattr(cfg, k):
                setattr(cfg, k, v)
            else:
                raise ValueError(f"unknown config key {k!r}")
    for k, v in vars(args).items():
        if k in ("config", "command", "func") or v is None:
            continue
        if hasattr(cfg, k):
            setattr(cfg, k, v)
    cfg.validate()
    return cfg


class RunDir:
    """Output directory with a manifest that is finalized on success."""

    def __init__(self, command: str, cfg: RunConfig):
        self.command = command
        self.cfg = cfg
        self.path = cfg.resolved_out_dir()
        self.path.mkdir(parents=True, exist_ok=True)
        self.outputs: list[str] = []
        self._write(status="incomplete")

    def _write(self, status: str) -> None:
        manifest = {
            "subcommand": self.command,
            "config": dataclasses.asdict(self.cfg),
            "status": status,
            "outputs": sorted(self.outputs),
        }
        (self.path / "manifest.json").write_text(json.dumps(manifest, indent=2))

    def record(self, *relpaths: str) -> None:
        self.outputs.extend(relpaths)

    def finalize(self) -> None:
        self._write(status="complete")


# -- bundle persistence ------------------------------------------------------


def save_bundle(bundle: SceneBundle, stem: Path) -> list[str]:
    """Write one scene bundle: container + caption/spec sidecar + PPM frames."""
    write_container(
        stem.with_suffix(".vdt"),
        {
            "clean": bundle.clean,
            "rainy": bundle.rainy,
            "rain_mask": bundle.rain_mask,
            "flow": bundle.flow,
        },
    )
    meta = {"caption": bundle.caption, "spec": dataclasses.asdict(bundle.spec)}
    stem.with_suffix(".json").write_text(json.dumps(meta, indent=2))
    written = [stem.with_suffix(".vdt").name, stem.with_suffix(".json").name]
    for f in range(bundle.rainy.shape[0]):
        for name, video in (("clean", bundle.clean), ("rainy", bundle.rainy)):
            p = stem.parent / f"{stem.name}_{name}_f{f}.ppm"
            write_ppm(p, video[f])
            written.append(p.name)
    return written


def load_bundle(path: str | Path) -> SceneBundle:
    path = Path(path)
    tensors = read_container(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    spec_kwargs = dict(meta["spec"])
    spec_kwargs["camera_velocity"] = tuple(spec_kwargs["camera_velocity"])
    return SceneBundle(
        clean=tensors["clean"],
        rainy=tensors["rainy"],
        rain_mask=tensors["rain_mask"],
        flow=tensors["flow"],
        caption=list(meta["caption"]),
        spec=RainSceneSpec(**spec_kwargs),
    )


def load_dataset(data_dir: str | Path) -> list[SceneBundle]:
    paths = sorted(Path(data_dir).glob("bundle_*.vdt"))
    if not paths:
        raise FileNotFoundError(f"no bundle_*.vdt files under {data_dir}")
    return [load_bundle(p) for p in paths]


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _plot_series(path: Path, xs, series: dict[str, list[float]], xlabel: str, ylabel: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.2))
    for label, ys in series.items():
        ax.plot(xs, ys, marker="o", label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


# -- pipeline helpers -----------------------------------------------------


def _schedule_from(cfg: RunConfig):
    return build_schedule(cfg.steps, cfg.beta_start, cfg.beta_end, cfg.schedule_kind)


def _control_from(cfg: RunConfig, num_blocks: int) -> AttentionControl | None:
    if not cfg.attn_switch:
        return None
    if cfg.blocks is None:
        block_set, initial = default_block_sets(num_blocks)
    else:
        block_set = frozenset(cfg.blocks)
        if cfg.blocks_initial is not None:
            initial = frozenset(cfg.blocks_initial)
        else:
            _, default_initial = default_block_sets(num_blocks)
            initial = block_set & default_initial
    return AttentionControl(block_set, initial)


def _negative_condition(cfg: RunConfig, model, concept: str = "rain") -> TextCondition:
    mode = {"simple": "simple", "contextual": "contextual", "mean": "mean_embedding"}[
        cfg.prompt_mode
    ]
    corpus = None
    if mode == "mean_embedding":
        if not cfg.data_dir:
            raise ValueError("prompt-mode mean needs --data-dir for the caption corpus")
        corpus = [list(b.caption) for b in load_dataset(cfg.data_dir)]
    return build_negative_condition(
        mode, concept, model=model, corpus=corpus, text_len=model.config.text_len
    )


def derain_video(
    rainy: torch.Tensor,
    model,
    cfg: RunConfig,
    concept: str = "rain",
    corpus: list[list[str]] | None = None,
) -> tuple[torch.Tensor, dict]:
    """The end-to-end pipeline: invert, then reconstruct with the guided
    estimate (and attention switching unless disabled). Returns the derained
    latent and a small info dict."""
    s = _schedule_from(cfg)
    text_len = model.config.text_len
    null = null_condition(text_len)
    if cfg.invert_with == "concept":
        invert_cond = condition_from_words([concept], text_len)
        recon_guidance = None  # implicit editing: just drop the condition
    else:
        invert_cond = null
        mode = {"simple": "simple", "contextual": "contextual", "mean": "mean_embedding"}[
            cfg.prompt_mode
        ]
        negative = build_negative_condition(
            mode, concept, model=model, corpus=corpus, text_len=text_len
        )
        recon_guidance = GuidanceSpec(
            lam=cfg.effective_lambda,
            t_skip=cfg.effective_t_skip,
            negative_condition=negative,
            null_condition=null,
            steps=s.num_steps,
        )
    record = ddpm_invert(rainy, invert_cond, model, s, seed=cfg.seed)
    control = _control_from(cfg, model.config.num_blocks) if recon_guidance else None
    out = reconstruct(record, null, model, s, guidance=recon_guidance, control=control)
    info = {
        "lambda": cfg.effective_lambda if recon_guidance else 0.0,
        "t_skip": cfg.effective_t_skip,
        "invert_with": cfg.invert_with,
        "prompt_mode": cfg.prompt_mode,
        "attn_switch": bool(control),
    }
    return out, info


# -- subcommands ----------------------------------------------------------


def cmd_gen_data(cfg: RunConfig) -> None:
    run = RunDir("gen-data", cfg)
    bundles = make_dataset(cfg.n, cfg.seed)
    for i, bundle in enumerate(bundles):
        written = save_bundle(bundle, run.path / f"bundle_{i:03d}")
        run.record(*written)
    run.finalize()
    print(f"wrote {len(bundles)} bundles to {run.path}")


def cmd_train_toy(cfg: RunConfig) -> None:
    if not cfg.data_dir:
        raise ValueError("train-toy needs --data-dir")
    run = RunDir("train-toy", cfg)
    dataset = load_dataset(cfg.data_dir)
    s = _schedule_from(cfg)
    tc = TrainConfig(
        steps=cfg.train_steps, batch_size=cfg.batch_size, lr=cfg.lr, seed=cfg.seed
    )
    ckpt = run.path / "model.vdt"
    _, history = train_toy(dataset, DenoiserConfig(), s, tc, out_path=ckpt)
    _write_csv(
        run.path / "loss.csv",
        ["step", "loss", "ema"],
        [
            [i, history.raw_losses[i], history.ema_losses[i]]
            for i in range(len(history.raw_losses))
        ],
    )
    run.record("model.vdt", "model.vdt.json", "loss.csv")
    run.finalize()
    if history.ema_losses:
        print(f"trained: ema loss {history.first_ema:.4f} -> {history.last_ema:.4f}")
    print(f"checkpoint at {ckpt}")


def _require_model(cfg: RunConfig):
    if not cfg.checkpoint:
        raise ValueError("this subcommand needs --checkpoint")
    return load_checkpoint(cfg.checkpoint)


def cmd_invert(cfg: RunConfig) -> None:
    if not cfg.input:
        raise ValueError("invert needs --input (a bundle .vdt)")
    model = _require_model(cfg)
    run = RunDir("invert", cfg)
    bundle = load_bundle(cfg.input)
    s = _schedule_from(cfg)
    text_len = model.config.text_len
    cond = (
        condition_from_words(["rain"], text_len)
        if cfg.invert_with == "concept"
        else null_condition(text_len)
    )
    record = ddpm_invert(
        torch.from_numpy(bundle.rainy.copy()), cond, model, s, seed=cfg.seed
    )
    save_record(record, run.path / "record.vdt")
    run.record("record.vdt", "record.vdt.json")
    run.finalize()
    print(f"inversion record at {run.path / 'record.vdt'}")


def cmd_derain(cfg: RunConfig) -> None:
    if not cfg.input:
        raise ValueError("derain needs --input (a bundle .vdt)")
    model = _require_model(cfg)
    run = RunDir("derain", cfg)
    bundle = load_bundle(cfg.input)
    corpus = None
    if cfg.prompt_mode == "mean" and cfg.invert_with == "null":
        if not cfg.data_dir:
            raise ValueError("prompt-mode mean needs --data-dir for the caption corpus")
        corpus = [list(b.caption) for b in load_dataset(cfg.data_dir)]
    rainy = torch.from_numpy(bundle.rainy.copy())
    out, info = derain_video(rainy, model, cfg, corpus=corpus)
    write_container(run.path / "derained.vdt", {"derained": out})
    run.record("derained.vdt")
    arr = out.numpy()
    for f in range(arr.shape[0]):
        p = run.path / f"derained_f{f}.ppm"
        write_ppm(p, np.clip(arr[f], 0.0, 1.0))
        run.record(p.name)
    (run.path / "info.json").write_text(json.dumps(info, indent=2))
    run.record("info.json")
    run.finalize()
    print(f"derained video at {run.path / 'derained.vdt'}")


def cmd_evaluate(cfg: RunConfig) -> None:
    if not cfg.input:
        raise ValueError("evaluate needs --input (bundle), optionally --derained")
    run = RunDir("evaluate", cfg)
    bundle = load_bundle(cfg.input)
    rows = []
    reports = {}
    candidates = {"input": bundle.rainy}
    if cfg.derained:
        derained = read_container(cfg.derained)["derained"]
        candidates["derained"] = derained
    for name, video in candidates.items():
        rep = evaluate_video(video, bundle.clean, bundle.rain_mask, bundle.flow)
        reports[name] = rep.to_dict()
        rows.append([name, rep.psnr_vs_clean, rep.warp_error, rep.rain_residual])
    (run.path / "report.json").write_text(json.dumps(reports, indent=2))
    _write_csv(
        run.path / "report.csv",
        ["video", "psnr_vs_clean", "warp_error", "rain_residual"],
        rows,
    )
    run.record("report.json", "report.csv")
    run.finalize()
    print(json.dumps(reports, indent=2))


def cmd_analyze_blocks(cfg: RunConfig) -> None:
    model = _require_model(cfg)
    run = RunDir("analyze-blocks", cfg)
    s = _schedule_from(cfg)
    prompts = [
        condition_from_words(p, model.config.text_len) for p in cfg.prompts
    ]
    sel = block_impact_study(model, prompts, s, cfg.seeds)
    rows = [[b, sel.impact_scores[b]] for b in range(len(sel.impact_scores))]
    _write_csv(run.path / "block_impact.csv", ["block_index", "mean_psnr_delta"], rows)
    finite = [v for v in sel.impact_scores if np.isfinite(v)]
    cap = (max(finite) + 3.0) if finite else 99.0
    _plot_series(
        run.path / "block_impact.png",
        list(range(len(sel.impact_scores))),
        {"psnr vs all-active": [min(v, cap) for v in sel.impact_scores]},
        "block index",
        "PSNR (dB)",
    )
    (run.path / "selected_blocks.json").write_text(
        json.dumps({"selected": sorted(sel.selected)}, indent=2)
    )
    run.record("block_impact.csv", "block_impact.png", "selected_blocks.json")
    run.finalize()
    print(f"low-impact blocks: {sorted(sel.selected)}")


def cmd_sweep_inversion(cfg: RunConfig) -> None:
    model = _require_model(cfg)
    if not cfg.data_dir:
        raise ValueError("sweep-inversion needs --data-dir")
    run = RunDir("sweep-inversion", cfg)
    s = _schedule_from(cfg)
    bundles = [b for b in load_dataset(cfg.data_dir) if b.spec.intensity != "none"]
    videos = [torch.from_numpy(b.rainy.copy()) for b in bundles]
    rows = inversion_sweep(
        model, videos, null_condition(model.config.text_len), s,
        cfg.t_skips, seed=cfg.seed,
    )
    _write_csv(
        run.path / "inversion_sweep.csv",
        ["method", "t_skip", "psnr_mean"],
        [[r.method, r.t_skip, r.psnr_mean] for r in rows],
    )
    series: dict[str, list[float]] = {}
    for r in rows:
        series.setdefault(r.method, []).append(r.psnr_mean)
    _plot_series(
        run.path / "inversion_sweep.png", cfg.t_skips, series, "t_skip", "PSNR (dB)"
    )
    run.record("inversion_sweep.csv", "inversion_sweep.png")
    run.finalize()
    for r in rows:
        print(f"{r.method:8s} t_skip={r.t_skip:3d}  PSNR={r.psnr_mean:.2f}")


def cmd_probe_prompts(cfg: RunConfig) -> None:
    model = _require_model(cfg)
    run = RunDir("probe-prompts", cfg)
    s = _schedule_from(cfg)
    out = {}
    rows = []
    for prompt in cfg.prompts:
        cond = condition_from_words(prompt, model.config.text_len)
        rep = prompt_probe(model, cond, s, cfg.seeds)
        key = prompt if prompt.strip() else "<null>"
        out[key] = rep.to_dict()
        rows.append([key, rep.rain_energy, rep.background_energy])
    (run.path / "prompt_probe.json").write_text(json.dumps(out, indent=2))
    _write_csv(
        run.path / "prompt_probe.csv",
        ["prompt", "rain_energy", "background_energy"],
        rows,
    )
    run.record("prompt_probe.json", "prompt_probe.csv")
    run.finalize()
    print(json.dumps(out, indent=2))


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.replace(",", " ").split()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="derain", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON config file (or a manifest)")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--steps", type=int, default=None, help="diffusion steps T")
        sp.add_argument("--beta-start", dest="beta_start", type=float, default=None)
        sp.add_argument("--beta-end", dest="beta_end", type=float, default=None)
        sp.add_argument("--out-dir", dest="out_dir", default=None)
        sp.add_argument("--lambda", dest="lam", type=float, default=None)
        sp.add_argument("--t-skip", dest="t_skip", type=int, default=None)
        sp.add_argument(
            "--prompt-mode", dest="prompt_mode",
            choices=["simple", "mean", "contextual"], default=None,
        )
        sp.add_argument("--blocks", type=_int_list, default=None)
        sp.add_argument("--blocks-initial", dest="blocks_initial",
                        type=_int_list, default=None)
        sp.add_argument("--no-attn-switch", dest="attn_switch",
                        action="store_false", default=None)
        sp.add_argument("--invert-with", dest="invert_with",
                        choices=["null", "concept"], default=None)
        sp.add_argument("--checkpoint", default=None)
        sp.add_argument("--input", default=None)
        sp.add_argument("--data-dir", dest="data_dir", default=None)
        return sp

    handlers = {
        "gen-data": cmd_gen_data,
        "train-toy": cmd_train_toy,
        "invert": cmd_invert,
        "derain": cmd_derain,
        "analyze-blocks": cmd_analyze_blocks,
        "sweep-inversion": cmd_sweep_inversion,
        "probe-prompts": cmd_probe_prompts,
        "evaluate": cmd_evaluate,
    }
    for name, fn in handlers.items():
        sp = common(sub.add_parser(name))
        sp.set_defaults(func=fn)
        if name == "gen-data":
            sp.add_argument("--n", type=int, default=None)
        if name == "train-toy":
            sp.add_argument("--train-steps", dest="train_steps", type=int, default=None)
            sp.add_argument("--batch-size", dest="batch_size", type=int, default=None)
            sp.add_argument("--lr", type=float, default=None)
        if name in ("analyze-blocks", "probe-prompts"):
            sp.add_argument("--prompts", nargs="+", default=None)
            sp.add_argument("--probe-seeds", dest="seeds", type=_int_list, default=None)
        if name == "sweep-inversion":
            sp.add_argument("--t-skips", dest="t_skips", type=_int_list, default=None)
        if name == "evaluate":
            sp.add_argument("--derained", default=None,
                            help="container with a 'derained' tensor to score")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    cfg = _config_from_sources(args)
    args.func(cfg)
    return 0


if __name__ == "__main__":
    sys.exit(main())
