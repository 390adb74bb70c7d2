"""PFM (float maps) and PNG (8-bit colour) helpers."""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ParseError


def write_pfm(path, data: np.ndarray) -> None:
    """Little-endian PFM; rows are stored bottom-to-top as the format requires."""
    arr = np.asarray(data, dtype="<f4")
    if arr.ndim == 2:
        kind, h, w = b"Pf", *arr.shape
    elif arr.ndim == 3 and arr.shape[2] == 3:
        kind, h, w = b"PF", arr.shape[0], arr.shape[1]
    else:
        raise ValueError("PFM holds (H, W) or (H, W, 3) arrays")
    with open(path, "wb") as fh:
        fh.write(kind + b"\n" + f"{w} {h}\n".encode() + b"-1.0\n")
        fh.write(np.ascontiguousarray(arr[::-1]).tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        kind = fh.readline().strip()
        if kind not in (b"PF", b"Pf"):
            raise ParseError(1, f"{path}: not a PFM file")
        w, h = (int(x) for x in fh.readline().split())
        scale = float(fh.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        ch = 3 if kind == b"PF" else 1
        arr = np.frombuffer(fh.read(), dtype=dtype, count=w * h * ch)
    arr = arr.reshape(h, w, ch) if ch == 3 else arr.reshape(h, w)
    return arr[::-1].astype(np.float32)


def write_png(path, rgb: np.ndarray) -> None:
    img = np.clip(np.round(np.asarray(rgb) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(img).save(path)


def read_png(path) -> np.ndarray:
    return np.asarray(Image.open(Path(path)).convert("RGB"), dtype=np.float32) / 255.0
