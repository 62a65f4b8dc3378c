"""Binary tensor container and PPM frame export.

Container layout (little-endian throughout): magic "VDT1", u32 entry count,
then per entry a u32-length-prefixed UTF-8 name, u32 ndim, u32 dims, and the
float32 row-major payload. Round-trips are bit-exact.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"VDT1"


def _to_f32(x) -> np.ndarray:
    if hasattr(x, "detach"):
        x = x.detach().cpu().numpy()
    arr = np.asarray(x, dtype="<f4")
    if arr.ndim and not arr.flags["C_CONTIGUOUS"]:
        arr = np.ascontiguousarray(arr)
    return arr


def write_container(path, tensors: dict[str, "np.ndarray"]) -> None:
    path = Path(path)
    names = list(tensors.keys())
    if len(set(names)) != len(names):
        raise ValueError("tensor names must be unique")
    parts = [MAGIC, struct.pack("<I", len(names))]
    for name in names:
        arr = _to_f32(tensors[name])
        nb = name.encode("utf-8")
        parts.append(struct.pack("<I", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes(order="C"))
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"".join(parts))


def read_container(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: bad magic {data[:4]!r}")
    off = 4
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", data, off)
        off += 4
        name = data[off:off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<I", data, off)
        off += 4
        dims = struct.unpack_from(f"<{ndim}I", data, off)
        off += 4 * ndim
        n = int(np.prod(dims)) if ndim else 1
        arr = np.frombuffer(data, dtype="<f4", count=n, offset=off).reshape(dims)
        off += 4 * n
        if name in out:
            raise ValueError(f"duplicate tensor name {name!r}")
        out[name] = arr.copy()
    if off != len(data):
        raise ValueError("trailing bytes after last container entry")
    return out


def write_ppm(path, frame: np.ndarray) -> None:
    """Write one frame as binary PPM (P6). Accepts (H, W), (1, H, W) or
    (3, H, W) in [0, 1]; grayscale is replicated to RGB."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim == 2:
        frame = frame[None]
    if frame.shape[0] == 1:
        frame = np.repeat(frame, 3, axis=0)
    if frame.shape[0] != 3:
        raise ValueError(f"expected 1 or 3 channels, got {frame.shape}")
    H, W = frame.shape[1:]
    data = np.clip(np.rint(frame * 255.0), 0, 255).astype(np.uint8)
    raw = data.transpose(1, 2, 0).tobytes()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{W} {H}\n255\n".encode("ascii"))
        fh.write(raw)


def read_ppm(path) -> np.ndarray:
    """Read a binary PPM into (3, H, W) float in [0, 1]."""
    data = Path(path).read_bytes()
    fields: list[bytes] = []
    off = 0
    while len(fields) < 4:
        while off < len(data) and data[off:off + 1].isspace():
            off += 1
        if data[off:off + 1] == b"#":
            while data[off:off + 1] not in (b"\n", b""):
                off += 1
            continue
        start = off
        while off < len(data) and not data[off:off + 1].isspace():
            off += 1
        fields.append(data[start:off])
    off += 1  # single whitespace after maxval
    if fields[0] != b"P6":
        raise ValueError("not a P6 PPM")
    W, H, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    raw = np.frombuffer(data, dtype=np.uint8, count=W * H * 3, offset=off)
    img = raw.reshape(H, W, 3).transpose(2, 0, 1).astype(np.float64) / maxval
    return img
