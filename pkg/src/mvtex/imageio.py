"""Image and raw-buffer I/O: 8-bit PNGs plus lossless float dumps."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

__all__ = ["write_png", "read_png", "write_float_raw", "read_float_raw"]


def write_png(path: str | Path, image: np.ndarray) -> None:
    """Write an (H, W, 3) float image in [0,1] as an 8-bit PNG."""
    data = np.clip(np.asarray(image), 0.0, 1.0)
    u8 = np.round(data * 255.0).astype(np.uint8)
    Image.fromarray(u8, mode="RGB").save(str(path), format="PNG")


def read_png(path: str | Path) -> np.ndarray:
    """Read a PNG into (H, W, 3) floats in [0,1]."""
    img = Image.open(str(path)).convert("RGB")
    return np.asarray(img, dtype=np.float64) / 255.0


def write_float_raw(path: str | Path, array: np.ndarray) -> None:
    """Dump an array as raw little-endian float64 with a JSON header sidecar."""
    path = Path(path)
    arr = np.ascontiguousarray(array, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(arr.tobytes())
    with open(path.with_suffix(path.suffix + ".json"), "w") as fh:
        json.dump({"dtype": "<f8", "shape": list(arr.shape)}, fh)


def read_float_raw(path: str | Path) -> np.ndarray:
    path = Path(path)
    with open(path.with_suffix(path.suffix + ".json")) as fh:
        header = json.load(fh)
    data = np.frombuffer(open(path, "rb").read(), dtype=header["dtype"])
    return data.reshape(header["shape"]).copy()
