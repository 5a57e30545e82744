"""Image and map serialization: PPM (P6), PNG, raw float32 maps, heatmaps."""

from __future__ import annotations

import struct

import numpy as np
from PIL import Image


def to_uint8(img: np.ndarray) -> np.ndarray:
    return (np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def save_ppm(path, img: np.ndarray) -> None:
    """Write an (h, w, 3) float image in [0,1] as binary PPM (P6)."""
    data = to_uint8(img)
    h, w = data.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def load_ppm(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"P6":
            raise ValueError("not a binary PPM (P6) file")
        dims = f.readline().split()
        w, h = int(dims[0]), int(dims[1])
        maxval = int(f.readline())
        raw = np.frombuffer(f.read(w * h * 3), dtype=np.uint8)
    return raw.reshape(h, w, 3).astype(float) / maxval


def save_png(path, img: np.ndarray) -> None:
    """Write an (h, w, 3) float image in [0,1] as PNG."""
    Image.fromarray(to_uint8(img), mode="RGB").save(path, format="PNG")


def load_png(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"), dtype=float) / 255.0


def save_float_map(path, arr: np.ndarray) -> None:
    """Raw float32 dump with an 8-byte header: width, height as little-endian u32."""
    arr = np.asarray(arr, dtype=np.float32)
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(struct.pack("<II", w, h))
        f.write(arr.astype("<f4").tobytes())


def load_float_map(path) -> np.ndarray:
    with open(path, "rb") as f:
        w, h = struct.unpack("<II", f.read(8))
        raw = np.frombuffer(f.read(4 * w * h), dtype="<f4")
    return raw.reshape(h, w).astype(np.float32)


# sparse inferno-like gradient, interpolated per channel
_HEAT_STOPS = np.array(
    [
        [0.00, 0.001, 0.000, 0.014],
        [0.25, 0.342, 0.062, 0.429],
        [0.50, 0.729, 0.212, 0.333],
        [0.75, 0.965, 0.556, 0.110],
        [1.00, 0.988, 0.998, 0.645],
    ]
)


def heatmap(values: np.ndarray, vmax: float | None = None) -> np.ndarray:
    """False-color (h, w, 3) image for a non-negative scalar map."""
    v = np.asarray(values, dtype=float)
    top = float(v.max()) if vmax is None else float(vmax)
    x = np.zeros_like(v) if top <= 0 else np.clip(v / top, 0.0, 1.0)
    out = np.empty(v.shape + (3,))
    for c in range(3):
        out[..., c] = np.interp(x, _HEAT_STOPS[:, 0], _HEAT_STOPS[:, c + 1])
    return out


def save_heatmap_png(path, values: np.ndarray, vmax: float | None = None) -> None:
    save_png(path, heatmap(values, vmax=vmax))
