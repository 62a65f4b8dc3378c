"""Toy joint-attention diffusion transformer over concatenated text and
video tokens.

The hidden sequence is text-first: h = text tokens | image tokens. Every
block runs plain pre-norm multi-head attention across the full sequence and
consults an AttentionControl for capture/switch behavior at the Q/K/V
boundary. Timestep conditioning is a per-block sinusoidal embedding mapped
to scale/shift modulation of the two norms.

Latents are pixel-space patches (no learned VAE), so inversion round-trips
are exactly testable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .attention_control import MODE_CAPTURE, MODE_SWITCH, AttentionControl
from .vocab import PAD_ID, VOCAB_SIZE, TextCondition

Tensor = torch.Tensor


@dataclass(frozen=True)
class DenoiserConfig:
    num_blocks: int = 8
    dim: int = 64
    heads: int = 4
    text_len: int = 4
    patch_size: int = 4
    frames: int = 4
    channels: int = 1
    height: int = 16
    width: int = 16
    t_embed_dim: int = 32

    def __post_init__(self):
        if self.dim % self.heads != 0:
            raise ValueError("dim must be divisible by heads")
        if self.height % self.patch_size or self.width % self.patch_size:
            raise ValueError("height/width must be divisible by patch_size")
        if self.num_blocks < 1 or self.num_blocks > 30:
            raise ValueError("num_blocks must be in [1, 30]")

    @property
    def img_tokens(self) -> int:
        p = self.patch_size
        return self.frames * (self.height // p) * (self.width // p)

    @property
    def video_shape(self) -> tuple[int, int, int, int]:
        return (self.frames, self.channels, self.height, self.width)

    def to_dict(self) -> dict:
        return {
            "num_blocks": self.num_blocks, "dim": self.dim, "heads": self.heads,
            "text_len": self.text_len, "patch_size": self.patch_size,
            "frames": self.frames, "channels": self.channels,
            "height": self.height, "width": self.width,
            "t_embed_dim": self.t_embed_dim,
        }


@dataclass
class HiddenState:
    """Concatenated-view hidden features: text part first, then image part."""

    text_part: Tensor
    img_part: Tensor

    @property
    def combined(self) -> Tensor:
        return torch.cat([self.text_part, self.img_part], dim=-2)

    @classmethod
    def split(cls, combined: Tensor, text_len: int) -> "HiddenState":
        return cls(combined[..., :text_len, :], combined[..., text_len:, :])


def sinusoidal_embedding(t: Tensor, dim: int) -> Tensor:
    """Standard sin/cos timestep features, shape (B, dim)."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=torch.float64) / max(half - 1, 1)
    )
    args = t.to(torch.float64)[:, None] * freqs[None, :]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
    return emb


def multihead_attention(q: Tensor, k: Tensor, v: Tensor, heads: int) -> Tensor:
    """Plain softmax attention over (B, L, dim) inputs with `heads` heads."""
    B, Lq, dim = q.shape
    Lk = k.shape[1]
    d = dim // heads
    qh = q.reshape(B, Lq, heads, d).transpose(1, 2)
    kh = k.reshape(B, Lk, heads, d).transpose(1, 2)
    vh = v.reshape(B, Lk, heads, d).transpose(1, 2)
    scores = qh @ kh.transpose(-1, -2) / math.sqrt(d)
    probs = torch.softmax(scores, dim=-1)
    out = probs @ vh
    return out.transpose(1, 2).reshape(B, Lq, dim)


class Block(nn.Module):
    """Pre-norm joint-attention transformer block with timestep modulation.

    Exposes separate P_Q/P_K/P_V so the controller can rebuild K and V from
    spliced hidden states without touching Q.
    """

    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        dim = cfg.dim
        self.heads = cfg.heads
        self.text_len = cfg.text_len
        self.t_embed_dim = cfg.t_embed_dim
        self.P_Q = nn.Linear(dim, dim)
        self.P_K = nn.Linear(dim, dim)
        self.P_V = nn.Linear(dim, dim)
        self.P_out = nn.Linear(dim, dim)
        self.ff1 = nn.Linear(dim, 4 * dim)
        self.ff2 = nn.Linear(4 * dim, dim)
        self.norm1 = nn.LayerNorm(dim, elementwise_affine=False)
        self.norm2 = nn.LayerNorm(dim, elementwise_affine=False)
        self.t_mod = nn.Linear(cfg.t_embed_dim, 4 * dim)
        nn.init.zeros_(self.t_mod.weight)
        nn.init.zeros_(self.t_mod.bias)

    def _modulation(self, t, like: Tensor):
        if isinstance(t, int):
            t = torch.tensor([t])
        emb = sinusoidal_embedding(t, self.t_embed_dim).to(like.dtype)
        mods = self.t_mod(emb).unsqueeze(-2)  # (B, 1, 4*dim)
        return mods.chunk(4, dim=-1)

    def norm1m(self, h: Tensor, t) -> Tensor:
        scale, shift, _, _ = self._modulation(t, h)
        return self.norm1(h) * (1.0 + scale) + shift

    def norm2m(self, h: Tensor, t) -> Tensor:
        _, _, scale, shift = self._modulation(t, h)
        return self.norm2(h) * (1.0 + scale) + shift

    def attn_standard(self, h: Tensor, t) -> Tensor:
        a = self.norm1m(h, t)
        q, k, v = self.P_Q(a), self.P_K(a), self.P_V(a)
        return self.P_out(multihead_attention(q, k, v, self.heads))

    def attn_switched(
        self, h: Tensor, t, control: AttentionControl, index: int, text_len: int
    ) -> Tensor:
        a_run = self.norm1m(h, t)
        q = self.P_Q(a_run)
        k, v = control.switched_kv(
            index, h[..., :text_len, :], h[..., text_len:, :], self, t
        )
        return self.P_out(multihead_attention(q, k, v, self.heads))

    def post_attention(self, h: Tensor, attn_out: Tensor, t) -> Tensor:
        h = h + attn_out
        return h + self.ff2(F.gelu(self.ff1(self.norm2m(h, t))))

    def forward(
        self,
        h: Tensor,
        t,
        control: AttentionControl | None = None,
        index: int | None = None,
    ) -> Tensor:
        text_len = self.text_len
        if control is not None and index in control.block_set:
            if control.mode == MODE_CAPTURE:
                key_t = t if isinstance(t, int) else int(t.reshape(-1)[0])
                control.capture_null_text(index, h[..., :text_len, :], key_t)
            elif control.mode == MODE_SWITCH:
                # initial-set blocks are split at the model level
                attn_out = self.attn_switched(h, t, control, index, text_len)
                return self.post_attention(h, attn_out, t)
        return self.post_attention(h, self.attn_standard(h, t), t)


class JointDenoiser(nn.Module):
    """Noise-prediction transformer: embed(text, patchified video) -> blocks
    -> unpatchify. Deterministic given weights and inputs."""

    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        self.config = cfg
        self.token_emb = nn.Embedding(VOCAB_SIZE, cfg.dim)
        self.text_pos = nn.Parameter(torch.zeros(cfg.text_len, cfg.dim))
        patch_dim = cfg.patch_size * cfg.patch_size * cfg.channels
        self.patch_proj = nn.Linear(patch_dim, cfg.dim)
        self.img_pos = nn.Parameter(torch.zeros(cfg.img_tokens, cfg.dim))
        self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.num_blocks))
        self.final_norm = nn.LayerNorm(cfg.dim)
        self.head = nn.Linear(cfg.dim, patch_dim)
        self._init_weights()

    def _init_weights(self):
        nn.init.normal_(self.token_emb.weight, std=0.5)
        nn.init.normal_(self.text_pos, std=0.1)
        nn.init.normal_(self.img_pos, std=0.1)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    # -- embedding ------------------------------------------------------

    def patchify(self, video: Tensor) -> Tensor:
        """(B, F, C, H, W) -> (B, img_tokens, p*p*C), row-major patches."""
        cfg = self.config
        p = cfg.patch_size
        B, Fr, C, H, W = video.shape
        x = video.reshape(B, Fr, C, H // p, p, W // p, p)
        x = x.permute(0, 1, 3, 5, 2, 4, 6)  # B, F, Hp, Wp, C, p, p
        return x.reshape(B, Fr * (H // p) * (W // p), C * p * p)

    def unpatchify(self, tokens: Tensor) -> Tensor:
        cfg = self.config
        p = cfg.patch_size
        B = tokens.shape[0]
        Hp, Wp = cfg.height // p, cfg.width // p
        x = tokens.reshape(B, cfg.frames, Hp, Wp, cfg.channels, p, p)
        x = x.permute(0, 1, 4, 2, 5, 3, 6)
        return x.reshape(B, cfg.frames, cfg.channels, cfg.height, cfg.width)

    def embed_text_ids(self, ids: Tensor, pseudo=None) -> Tensor:
        """(B, text_len) ids -> (B, text_len, dim); pseudo is an optional
        list (one entry per batch row) of {slot: vector} overrides."""
        emb = self.token_emb(ids) + self.text_pos
        if pseudo:
            emb = emb.clone()
            for row, mapping in enumerate(pseudo):
                if not mapping:
                    continue
                for slot, vec in mapping.items():
                    emb[row, slot] = vec.to(emb.dtype)
        return emb

    def occurrence_embedding(self, token_id: int, slot: int) -> Tensor:
        """Embedding vector the text encoder assigns to a token at a slot."""
        return (self.token_emb.weight[token_id] + self.text_pos[slot]).detach()

    def embed_img(self, video: Tensor) -> Tensor:
        return self.patch_proj(self.patchify(video)) + self.img_pos

    def embed(self, cond: TextCondition, video: Tensor, t: int) -> HiddenState:
        """Deterministic embedding of a single (condition, video) pair. The
        timestep does not enter the embedding; it conditions each block."""
        if video.shape != self.config.video_shape:
            raise ValueError(
                f"video shape {tuple(video.shape)} != {self.config.video_shape}"
            )
        if cond.text_len != self.config.text_len:
            raise ValueError("condition length does not match model text_len")
        ids = torch.tensor([cond.token_ids], dtype=torch.long)
        text = self.embed_text_ids(ids, [cond.pseudo_map()])
        img = self.embed_img(video.unsqueeze(0))
        return HiddenState(text_part=text[0], img_part=img[0])

    # -- forward -------------------------------------------------------------

    def forward(
        self,
        video: Tensor,
        t,
        cond_ids: Tensor,
        pseudo=None,
        control: AttentionControl | None = None,
    ) -> Tensor:
        """Batched noise prediction: video (B, F, C, H, W), t int or (B,),
        cond_ids (B, text_len)."""
        text = self.embed_text_ids(cond_ids, pseudo)
        img = self.embed_img(video)
        h = torch.cat([text, img], dim=-2)
        text_len = self.config.text_len
        pure_img = None  # hook-free conditional image stream through B_initial
        for i, block in enumerate(self.blocks):
            if (
                control is not None
                and control.mode == MODE_SWITCH
                and i in control.initial_set
            ):
                h_text, h_img = h[..., :text_len, :], h[..., text_len:, :]
                base_img = h_img if pure_img is None else pure_img
                h_text, h_img, pure_img = control.split_block_advance(
                    i, h_text, h_img, base_img, block, t
                )
                h = torch.cat([h_text, h_img], dim=-2)
            else:
                h = block(h, t, control=control, index=i)
                pure_img = None  # the pure stream ends with the initial segment
        out = self.head(self.final_norm(h[..., text_len:, :]))
        return self.unpatchify(out)

    def predict_eps(
        self,
        video: Tensor,
        t: int,
        cond: TextCondition,
        control: AttentionControl | None = None,
    ) -> Tensor:
        """Predicted noise for a single latent video, shape-preserving."""
        if video.shape != self.config.video_shape:
            raise ValueError(
                f"video shape {tuple(video.shape)} != {self.config.video_shape}"
            )
        if not (0 <= t):
            raise ValueError(f"timestep {t} out of range")
        ids = torch.tensor([cond.token_ids], dtype=torch.long)
        with torch.no_grad():
            out = self.forward(
                video.unsqueeze(0), t, ids, pseudo=[cond.pseudo_map()], control=control
            )
        return out[0]
