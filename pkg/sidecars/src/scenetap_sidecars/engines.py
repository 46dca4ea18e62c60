"""Model engines behind the sidecar services.

Each service wraps one engine object. The reference engines here are
deterministic stand-ins that exercise the full protocol surface without
model weights: a grid proposer for segmentation, a flat-fill text
painter for inpainting, and a pseudo log-probability scorer. Real
models plug in by implementing the same three call signatures and
loading via a ``module:factory`` spec.

Engines work on plain numpy arrays: images are HxWx3 uint8 RGB, masks
are HxW uint8 with foreground 255.
"""

from __future__ import annotations

import hashlib
import importlib
import math

import numpy as np
from PIL import Image, ImageDraw, ImageFont


class EngineError(Exception):
    """The engine failed on a well-formed request; maps to HTTP 500."""


def _unit(*parts: str) -> float:
    """Deterministic pseudo-random value in [0, 1) from the given strings."""
    digest = hashlib.sha256("\x1f".join(parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") / 2.0 ** 64


class ReferenceSegmenter:
    """Grid proposer standing in for a promptable segmentation model.

    slider controls proposal granularity the way the upstream model's
    density slider does: a value of s yields an s-by-s grid of inset
    rectangular proposals.
    """

    name = "reference-segmenter"

    def __init__(self, slider: int = 3):
        if slider < 1:
            raise ValueError("slider must be at least 1")
        self.slider = slider

    def segment(self, image: np.ndarray) -> list:
        height, width = image.shape[:2]
        s = self.slider
        xs = [round(j * width / s) for j in range(s + 1)]
        ys = [round(i * height / s) for i in range(s + 1)]
        masks = []
        for i in range(s):
            for j in range(s):
                x0, x1 = xs[j], xs[j + 1]
                y0, y1 = ys[i], ys[i + 1]
                # inset so neighbouring proposals do not tile edge-to-edge
                ix = max(1, (x1 - x0) // 10)
                iy = max(1, (y1 - y0) // 10)
                if x1 - x0 > 2 * ix and y1 - y0 > 2 * iy:
                    x0, x1 = x0 + ix, x1 - ix
                    y0, y1 = y0 + iy, y1 - iy
                if x1 <= x0 or y1 <= y0:
                    continue
                mask = np.zeros((height, width), dtype=np.uint8)
                mask[y0:y1, x0:x1] = 255
                masks.append(mask)
        return masks


def _font(height: int):
    try:
        return ImageFont.load_default(size=max(8, height))
    except TypeError:
        return ImageFont.load_default()


class ReferenceInpainter:
    """Flat-fill text painter standing in for a text-aware diffusion model.

    The masked region's bounding box is filled with the region's mean
    colour and the requested text is drawn centred in it, in whichever
    of black or white contrasts better.
    """

    name = "reference-inpainter"

    def inpaint(
        self, image: np.ndarray, mask: np.ndarray, prompt: str, text: str
    ) -> np.ndarray:
        ys, xs = np.nonzero(mask)
        if len(ys) == 0:
            raise EngineError("mask selects no pixels")
        y0, y1 = int(ys.min()), int(ys.max()) + 1
        x0, x1 = int(xs.min()), int(xs.max()) + 1
        out = image.copy()
        fill = image[y0:y1, x0:x1].reshape(-1, 3).mean(axis=0)
        luminance = 0.299 * fill[0] + 0.587 * fill[1] + 0.114 * fill[2]
        ink = (0, 0, 0) if luminance >= 128 else (255, 255, 255)
        # draw on the crop so overlong text clips at the region edge
        region = Image.new("RGB", (x1 - x0, y1 - y0),
                           tuple(int(c) for c in fill))
        draw = ImageDraw.Draw(region)
        font = _font((y1 - y0) // 2)
        left, top, right, bottom = draw.textbbox((0, 0), text, font=font)
        tx = max(0, ((x1 - x0) - (right - left)) // 2) - left
        ty = max(0, ((y1 - y0) - (bottom - top)) // 2) - top
        draw.text((tx, ty), text, fill=ink, font=font)
        out[y0:y1, x0:x1] = np.asarray(region)
        return out


_PALETTE = (
    ("black", (0, 0, 0)),
    ("white", (255, 255, 255)),
    ("gray", (128, 128, 128)),
    ("red", (220, 50, 40)),
    ("green", (60, 160, 70)),
    ("blue", (50, 90, 200)),
    ("yellow", (230, 210, 60)),
    ("brown", (130, 90, 50)),
)


class ReferenceScorer:
    """Pseudo sequence log-probability scorer standing in for an LVLM.

    Each candidate's score is a sum of per-token pseudo log-probs, so
    duplicates score identically by construction and longer candidates
    score lower, the shape a real sequence log-probability has. A small
    luminance-driven term makes scores respond to image edits, which is
    what placement sweeps probe. Answers name the image's dominant
    palette colour.
    """

    name = "reference-scorer"
    convention = "sequence-logprob"

    def score(self, image: np.ndarray, question: str, candidates: list) -> list:
        luminance = float(image.mean()) / 255.0
        scores = []
        for candidate in candidates:
            tokens = candidate.lower().split() or [candidate.lower()]
            logprob = 0.0
            for pos, token in enumerate(tokens):
                base = -0.25 - 3.0 * _unit(question, token, str(pos))
                tilt = 0.6 * (luminance - 0.5) * (2.0 * _unit(token) - 1.0)
                logprob += base + tilt
            scores.append(round(logprob, 6))
        return scores

    def answer(self, image, question: str) -> str:
        if image is None:
            return "unknown"
        mean = image.reshape(-1, 3).mean(axis=0)
        best, best_d = "unknown", math.inf
        for name, rgb in _PALETTE:
            d = sum((float(m) - c) ** 2 for m, c in zip(mean, rgb))
            if d < best_d:
                best, best_d = name, d
        return best


def load_engine(role: str, spec: str = "reference", slider: int = 3):
    """Resolve an engine for a role.

    "reference" builds the in-package stand-in. Anything else must be a
    "module:factory" path; the factory is called with role= and is where
    weight-backed engines load their models, raising EngineError when
    the weights are absent.
    """
    if spec == "reference":
        if role == "segment":
            return ReferenceSegmenter(slider=slider)
        if role == "inpaint":
            return ReferenceInpainter()
        if role == "score":
            return ReferenceScorer()
        raise ValueError(f"unknown role {role!r}")
    module_name, sep, attr = spec.partition(":")
    if not sep or not module_name or not attr:
        raise EngineError(
            f"engine spec {spec!r} is neither 'reference' nor 'module:factory'"
        )
    try:
        module = importlib.import_module(module_name)
        factory = getattr(module, attr)
    except (ImportError, AttributeError) as exc:
        raise EngineError(f"cannot load engine {spec!r}: {exc}") from exc
    return factory(role=role)
