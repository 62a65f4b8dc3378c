"""Quantitative evaluation: PSNR, ground-truth-flow warp error, and
masked rain-residual energy."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np


def _as_np(x) -> np.ndarray:
    if hasattr(x, "detach"):
        x = x.detach().cpu().numpy()
    return np.asarray(x, dtype=np.float64)


def psnr(a, b, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE); +inf for identical inputs."""
    a, b = _as_np(a), _as_np(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def warp_backward(frame: np.ndarray, flow: np.ndarray) -> np.ndarray:
    """Bilinear-sample `frame` (C, H, W) at grid + flow (2, H, W), border
    clamped."""
    C, H, W = frame.shape
    yy, xx = np.meshgrid(np.arange(H, dtype=np.float64),
                         np.arange(W, dtype=np.float64), indexing="ij")
    sy = np.clip(yy + flow[0], 0.0, H - 1.0)
    sx = np.clip(xx + flow[1], 0.0, W - 1.0)
    y0 = np.floor(sy).astype(int)
    x0 = np.floor(sx).astype(int)
    y1 = np.minimum(y0 + 1, H - 1)
    x1 = np.minimum(x0 + 1, W - 1)
    wy = sy - y0
    wx = sx - x0
    out = np.empty_like(frame, dtype=np.float64)
    for c in range(C):
        f = frame[c]
        out[c] = (
            f[y0, x0] * (1 - wy) * (1 - wx)
            + f[y0, x1] * (1 - wy) * wx
            + f[y1, x0] * wy * (1 - wx)
            + f[y1, x1] * wy * wx
        )
    return out


def warp_error(video, flow) -> float:
    """Mean absolute photometric residual between frame f and frame f+1
    warped by the ground-truth backward flow, over interior pixels (a border
    of the maximum flow magnitude is excluded) and all frame pairs."""
    video, flow = _as_np(video), _as_np(flow)
    F, C, H, W = video.shape
    if flow.shape != (F - 1, 2, H, W):
        raise ValueError(f"flow shape {flow.shape} does not match video {video.shape}")
    margin = int(np.ceil(np.max(np.abs(flow)))) if flow.size else 0
    ys = slice(margin, H - margin) if H - 2 * margin > 0 else slice(0, H)
    xs = slice(margin, W - margin) if W - 2 * margin > 0 else slice(0, W)
    errs = []
    for f in range(F - 1):
        warped = warp_backward(video[f + 1], flow[f])
        errs.append(float(np.mean(np.abs(video[f] - warped)[:, ys, xs])))
    return float(np.mean(errs))


def rain_residual(output, clean, rain_mask) -> float:
    """Mean squared (output - clean) over pixels where the rain mask is
    positive; 0 (with a warning) when the mask is empty."""
    output, clean, mask = _as_np(output), _as_np(clean), _as_np(rain_mask)
    if not (output.shape == clean.shape == mask.shape):
        raise ValueError(
            f"shape mismatch {output.shape} / {clean.shape} / {mask.shape}"
        )
    sel = mask > 0
    if not np.any(sel):
        warnings.warn("rain mask is empty; residual defined as 0", stacklevel=2)
        return 0.0
    return float(np.mean((output - clean)[sel] ** 2))


@dataclass
class MetricsReport:
    psnr_vs_clean: float
    warp_error: float
    rain_residual: float
    per_frame_psnr: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "psnr_vs_clean": self.psnr_vs_clean,
            "warp_error": self.warp_error,
            "rain_residual": self.rain_residual,
            "per_frame_psnr": self.per_frame_psnr,
        }


def evaluate_video(output, clean, rain_mask, flow, peak: float = 1.0) -> MetricsReport:
    output_np = _as_np(output)
    clean_np = _as_np(clean)
    per_frame = [
        psnr(output_np[f], clean_np[f], peak) for f in range(output_np.shape[0])
    ]
    return MetricsReport(
        psnr_vs_clean=psnr(output_np, clean_np, peak),
        warp_error=warp_error(output_np, flow),
        rain_residual=rain_residual(output_np, clean_np, rain_mask),
        per_frame_psnr=per_frame,
    )
