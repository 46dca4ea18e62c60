"""Shared helpers for the sidecar test suite."""

import base64
import io

import numpy as np
from PIL import Image


def png_b64(array: np.ndarray, mode: str) -> str:
    buf = io.BytesIO()
    Image.fromarray(array, mode=mode).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def decode_png(b64: str) -> np.ndarray:
    with Image.open(io.BytesIO(base64.b64decode(b64))) as im:
        return np.asarray(im)


def gradient_image(side: int = 64) -> np.ndarray:
    yy, xx = np.mgrid[0:side, 0:side]
    return np.stack(
        [(xx * 4) % 256, (yy * 4) % 256, ((xx + yy) * 2) % 256], axis=-1
    ).astype(np.uint8)


def boxed_mask(side: int = 64) -> np.ndarray:
    mask = np.zeros((side, side), dtype=np.uint8)
    mask[20:44, 16:48] = 255
    return mask
