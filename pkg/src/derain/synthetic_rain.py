"""Procedural toy video scenes with parametric rain overlays.

Scenes are small grayscale videos: a smoothly varying background that
translates by an integer camera velocity per frame, with anti-aliased
streaks composited over it. Everything is evaluated on a torus (period =
frame size), so ground-truth optical flow is exact by construction and
streak motion is a pure cyclic shift.

Compositing rule: rainy = clamp(clean * (1 - a*mask) + a * streak_color * mask)
with opacity a and the per-pixel streak footprint mask in [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .vocab import caption_for_intensity

STREAK_COLOR = 1.0

INTENSITY_COUNTS = {"none": (0, 0), "light": (3, 4), "heavy": (7, 10)}
INTENSITY_OPACITY = {"light": (0.55, 0.7), "heavy": (0.8, 0.95)}
CAMERA_VELOCITIES = ((0, 1), (1, 0), (1, 1), (0, -1), (-1, 1), (1, -1))


@dataclass(frozen=True)
class RainSceneSpec:
    seed: int
    frames: int = 4
    height: int = 16
    width: int = 16
    background: str = "gradient"  # or "shapes"
    camera_velocity: tuple[int, int] = (0, 1)  # (dy, dx) px/frame
    streak_count: int = 0
    streak_angle_deg: float = 30.0  # from vertical, toward +x
    streak_length: float = 6.0
    streak_opacity: float = 0.85
    fall_speed: float = 2.5  # px/frame along the streak axis
    intensity: str = "none"
    streak_kind: str = "rain"  # or "snow"

    def __post_init__(self):
        if self.frames < 2 or self.height < 4 or self.width < 4:
            raise ValueError("degenerate scene dimensions")
        if not (0.0 <= self.streak_opacity <= 1.0):
            raise ValueError("streak opacity must lie in [0, 1]")
        if self.streak_count < 0 or self.streak_length < 0 or self.fall_speed < 0:
            raise ValueError("streak parameters must be nonnegative")
        if self.intensity not in INTENSITY_COUNTS:
            raise ValueError(f"unknown intensity class {self.intensity!r}")
        lo, hi = INTENSITY_COUNTS[self.intensity]
        if not (lo <= self.streak_count <= max(hi, lo)):
            raise ValueError(
                f"streak_count {self.streak_count} inconsistent with "
                f"intensity {self.intensity!r} band {INTENSITY_COUNTS[self.intensity]}"
            )
        if self.background not in ("gradient", "shapes"):
            raise ValueError(f"unknown background kind {self.background!r}")
        if self.streak_kind not in ("rain", "snow"):
            raise ValueError(f"unknown streak kind {self.streak_kind!r}")


@dataclass
class SceneBundle:
    clean: np.ndarray      # (F, 1, H, W) float32 in [0, 1]
    rainy: np.ndarray      # same shape
    rain_mask: np.ndarray  # (F, 1, H, W) float32 in [0, 1]
    flow: np.ndarray       # (F-1, 2, H, W) float32, (dy, dx) backward flow
    caption: list[str]
    spec: RainSceneSpec

    @property
    def rain_layer(self) -> np.ndarray:
        """Effective additive rain contribution (rainy - clean)."""
        return self.rainy - self.clean


def streak_positions(spec: RainSceneSpec) -> np.ndarray:
    """Anchor position of every streak at every frame, shape (F, N, 2).

    Positions at frame f+1 equal frame f positions shifted by the fall
    vector, wrapped on the torus.
    """
    rng = np.random.default_rng(spec.seed + 7919)
    n = spec.streak_count
    starts = np.stack(
        [rng.uniform(0, spec.height, n), rng.uniform(0, spec.width, n)], axis=-1
    )
    theta = math.radians(spec.streak_angle_deg)
    fall = spec.fall_speed * np.array([math.cos(theta), math.sin(theta)])
    out = np.empty((spec.frames, n, 2))
    for f in range(spec.frames):
        pos = starts + f * fall
        out[f] = np.stack(
            [np.mod(pos[:, 0], spec.height), np.mod(pos[:, 1], spec.width)], axis=-1
        )
    return out


def _torus_delta(coord: np.ndarray, center: float, period: int) -> np.ndarray:
    d = np.mod(coord - center + period / 2, period) - period / 2
    return d


def _streak_mask(spec: RainSceneSpec, positions: np.ndarray) -> np.ndarray:
    """Anti-aliased streak footprint per frame, (F, H, W) in [0, 1]."""
    H, W = spec.height, spec.width
    yy, xx = np.meshgrid(np.arange(H, dtype=np.float64),
                         np.arange(W, dtype=np.float64), indexing="ij")
    theta = math.radians(spec.streak_angle_deg)
    uy, ux = math.cos(theta), math.sin(theta)
    half = spec.streak_length / 2.0
    masks = np.zeros((spec.frames, H, W))
    for f in range(spec.frames):
        for (cy, cx) in positions[f]:
            dy = _torus_delta(yy, cy, H)
            dx = _torus_delta(xx, cx, W)
            along = dy * uy + dx * ux
            across = -dy * ux + dx * uy
            along_out = np.maximum(np.abs(along) - half, 0.0)
            dist = np.sqrt(along_out**2 + across**2)
            # saturated core within ~0.65 px of the segment, ramp to 0 at 1 px
            footprint = np.clip((1.0 - dist) / 0.35, 0.0, 1.0)
            masks[f] = np.maximum(masks[f], footprint)
    return masks


def _background(spec: RainSceneSpec, rng: np.random.Generator) -> np.ndarray:
    """Background video (F, H, W), translating by the camera velocity."""
    H, W = spec.height, spec.width
    vy, vx = spec.camera_velocity
    yy, xx = np.meshgrid(np.arange(H, dtype=np.float64),
                         np.arange(W, dtype=np.float64), indexing="ij")
    frames = np.empty((spec.frames, H, W))
    if spec.background == "gradient":
        ky = rng.integers(1, 3)
        kx = rng.integers(1, 3)
        phase = rng.uniform(0, 2 * math.pi)
        base = rng.uniform(0.35, 0.5)
        amp = rng.uniform(0.2, 0.3)
        for f in range(spec.frames):
            arg = 2 * math.pi * (ky * (yy - vy * f) / H + kx * (xx - vx * f) / W)
            frames[f] = base + amp * np.sin(arg + phase)
    else:  # soft blobs drifting with the camera
        n_blobs = rng.integers(2, 5)
        centers = np.stack(
            [rng.uniform(0, H, n_blobs), rng.uniform(0, W, n_blobs)], axis=-1
        )
        sigmas = rng.uniform(1.5, 3.5, n_blobs)
        amps = rng.uniform(0.25, 0.45, n_blobs) * rng.choice([-1.0, 1.0], n_blobs)
        base = rng.uniform(0.35, 0.5)
        for f in range(spec.frames):
            acc = np.full((H, W), base)
            for (cy, cx), sg, am in zip(centers, sigmas, amps):
                dy = _torus_delta(yy, cy + vy * f, H)
                dx = _torus_delta(xx, cx + vx * f, W)
                acc = acc + am * np.exp(-(dy**2 + dx**2) / (2 * sg**2))
            frames[f] = acc
    return np.clip(frames, 0.02, 0.8)


def render(spec: RainSceneSpec) -> SceneBundle:
    """Render one scene bundle; deterministic in the spec's seed."""
    rng = np.random.default_rng(spec.seed)
    clean = _background(spec, rng)
    if spec.streak_count > 0:
        mask = _streak_mask(spec, streak_positions(spec))
    else:
        mask = np.zeros_like(clean)
    a = spec.streak_opacity
    rainy = np.clip(clean * (1.0 - a * mask) + a * STREAK_COLOR * mask, 0.0, 1.0)

    vy, vx = spec.camera_velocity
    flow = np.empty((spec.frames - 1, 2, spec.height, spec.width), dtype=np.float32)
    flow[:, 0] = float(vy)
    flow[:, 1] = float(vx)

    concept = spec.streak_kind
    return SceneBundle(
        clean=clean[:, None].astype(np.float32),
        rainy=rainy[:, None].astype(np.float32),
        rain_mask=mask[:, None].astype(np.float32),
        flow=flow,
        caption=caption_for_intensity(spec.intensity, concept),
        spec=spec,
    )


def _spec_for(seed: int, intensity: str, rng: np.random.Generator) -> RainSceneSpec:
    lo, hi = INTENSITY_COUNTS[intensity]
    count = 0 if intensity == "none" else int(rng.integers(lo, hi + 1))
    op_lo, op_hi = INTENSITY_OPACITY.get(intensity, (0.6, 0.6))
    return RainSceneSpec(
        seed=seed,
        background="gradient" if rng.random() < 0.5 else "shapes",
        camera_velocity=CAMERA_VELOCITIES[rng.integers(len(CAMERA_VELOCITIES))],
        streak_count=count,
        streak_opacity=float(rng.uniform(op_lo, op_hi)),
        streak_length=float(rng.uniform(3.0, 4.5)),
        fall_speed=float(rng.uniform(2.0, 3.0)),
        intensity=intensity,
    )


def make_dataset(n: int, seed: int) -> list[SceneBundle]:
    """n bundles with balanced intensity classes, reproducible in seed."""
    if n <= 0:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    classes = ["none", "light", "heavy"]
    bundles = []
    for i in range(n):
        spec = _spec_for(seed * 1_000_003 + i, classes[i % 3], rng)
        bundles.append(render(spec))
    return bundles
