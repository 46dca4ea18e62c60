"""Deterministic bitmap text rendering.

Draws from a bundled 6x8 bitmap font scaled by integer nearest-neighbor,
so identical inputs give bit-identical pixels on every platform. Used for
the center/margin baselines, grid placements, ablation renders, and the
mock inpainting path.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .core import AttackedImage, AttackSpec, ImageBuffer, RectPx

_FONT_CACHE: dict[str, "_Font"] = {}


class _Font:
    def __init__(self, asset: dict):
        self.name = asset["name"]
        self.cell_width = int(asset["cell_width"])
        self.cell_height = int(asset["cell_height"])
        self.fallback = asset["fallback"]
        self.glyphs = {
            ch: np.array([[c == "X" for c in row] for row in rows], dtype=bool)
            for ch, rows in asset["glyphs"].items()
        }

    def glyph(self, ch: str) -> np.ndarray:
        return self.glyphs.get(ch, self.glyphs[self.fallback])


def _load_font(name: str) -> _Font:
    font = _FONT_CACHE.get(name)
    if font is None:
        path = resources.files("scenetap").joinpath(f"assets/fonts/{name}.json")
        font = _Font(json.loads(path.read_text()))
        _FONT_CACHE[name] = font
    return font


@dataclass(frozen=True)
class TextStyle:
    """Visual parameters for direct rendering."""

    glyph_height: int = 16
    fill: tuple[int, int, int] = (0, 0, 0)
    stroke: tuple[int, int, int] = (255, 255, 255)
    stroke_width: int = 1
    font_asset: str = "mono6x8"

    def __post_init__(self):
        if self.glyph_height < 8:
            raise ValueError("glyph_height must be at least 8 px")
        if self.stroke_width not in (0, 1, 2):
            raise ValueError("stroke_width must be 0, 1, or 2")
        for color in (self.fill, self.stroke):
            if len(color) != 3 or any(not (0 <= c <= 255) for c in color):
                raise ValueError(f"bad RGB color {color!r}")
        object.__setattr__(self, "fill", tuple(int(c) for c in self.fill))
        object.__setattr__(self, "stroke", tuple(int(c) for c in self.stroke))

    def to_dict(self) -> dict:
        return {
            "glyph_height": self.glyph_height,
            "fill": list(self.fill),
            "stroke": list(self.stroke),
            "stroke_width": self.stroke_width,
            "font_asset": self.font_asset,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TextStyle":
        return cls(
            glyph_height=int(d["glyph_height"]),
            fill=tuple(d["fill"]),
            stroke=tuple(d["stroke"]),
            stroke_width=int(d["stroke_width"]),
            font_asset=d.get("font_asset", "mono6x8"),
        )


def default_style(image_height: int) -> TextStyle:
    """Black fill with a 1-px white stroke; height scales with the image."""
    return TextStyle(glyph_height=max(12, min(64, image_height // 16)))


def _metrics(text: str, style: TextStyle) -> tuple[int, int, int]:
    """(cell advance, stroke thickness in px, run width before stroke)."""
    font = _load_font(style.font_asset)
    g = style.glyph_height
    cw = (font.cell_width * g) // font.cell_height
    # Stroke thickness scales with the glyph cell so proportions hold at
    # any size; floor(2x) >= 2*floor(x) keeps measurement monotone under
    # doubling of glyph_height.
    t = style.stroke_width * (g // font.cell_height)
    return cw, t, len(text) * cw


def measure_text(text: str, style: TextStyle) -> tuple[int, int]:
    """Bounding box of the rendered run, stroke included."""
    if not text:
        raise ValueError("cannot measure empty text")
    cw, t, run_w = _metrics(text, style)
    return (run_w + 2 * t, style.glyph_height + 2 * t)


def _run_raster(text: str, style: TextStyle) -> np.ndarray:
    """Boolean ink raster of shape (glyph_height, len(text)*cw)."""
    font = _load_font(style.font_asset)
    g = style.glyph_height
    cw, _, run_w = _metrics(text, style)
    ys = (np.arange(g) * font.cell_height) // g
    xs = (np.arange(cw) * font.cell_width) // cw
    out = np.zeros((g, run_w), dtype=bool)
    for k, ch in enumerate(text):
        out[:, k * cw : (k + 1) * cw] = font.glyph(ch)[np.ix_(ys, xs)]
    return out


def _stamp(canvas: np.ndarray, text: str, x: int, y: int, style: TextStyle) -> None:
    """Paint stroke then fill into `canvas` with the box's top-left at (x,y)."""
    ink = _run_raster(text, style)
    g, run_w = ink.shape
    _, t, _ = _metrics(text, style)
    if t > 0:
        halo = np.zeros((g + 2 * t, run_w + 2 * t), dtype=bool)
        for dy in range(-t, t + 1):
            for dx in range(-t, t + 1):
                halo[t + dy : t + dy + g, t + dx : t + dx + run_w] |= ink
        region = canvas[y : y + g + 2 * t, x : x + run_w + 2 * t]
        region[halo] = style.stroke
    region = canvas[y + t : y + t + g, x + t : x + t + run_w]
    region[ink] = style.fill


def render_at(
    image: ImageBuffer,
    text: str,
    anchor: tuple[int, int],
    style: TextStyle,
    method: str = "anchored",
    text_source: str = "fixed_option",
) -> AttackedImage:
    """Draw `text` with its box's top-left at `anchor`, clamped into bounds."""
    w, h = measure_text(text, style)
    if w > image.width or h > image.height:
        raise ValueError(
            f"text box {w}x{h} larger than image {image.width}x{image.height}"
        )
    x = min(max(0, int(anchor[0])), image.width - w)
    y = min(max(0, int(anchor[1])), image.height - h)
    canvas = image.mutable_copy()
    _stamp(canvas, text, x, y, style)
    bbox = RectPx(x, y, w, h)
    spec = AttackSpec(
        method=method, text=text, anchor=(x, y), text_source=text_source
    )
    return AttackedImage(
        image=ImageBuffer(canvas),
        spec=spec,
        provenance=_render_provenance(style, method),
        changed_bbox=bbox,
    )


def render_center(
    image: ImageBuffer, text: str, style: TextStyle, text_source: str = "fixed_option"
) -> AttackedImage:
    """Draw `text` centered on the image."""
    w, h = measure_text(text, style)
    anchor = ((image.width - w) // 2, (image.height - h) // 2)
    return render_at(
        image, text, anchor, style, method="center", text_source=text_source
    )


def render_margin(
    image: ImageBuffer, text: str, style: TextStyle, text_source: str = "fixed_option"
) -> AttackedImage:
    """Append a white band below the image and center `text` inside it."""
    w, h = measure_text(text, style)
    if w > image.width:
        raise ValueError(f"text box width {w} larger than image {image.width}")
    band = max(math.ceil(image.height / 8), h + 8)
    out = np.full((image.height + band, image.width, 3), 255, dtype=np.uint8)
    out[: image.height] = image.pixels
    x = (image.width - w) // 2
    y = image.height + (band - h) // 2
    _stamp(out, text, x, y, style)
    spec = AttackSpec(
        method="margin", text=text, anchor=(x, y), text_source=text_source
    )
    prov = _render_provenance(style, "margin")
    prov["margin_band"] = "bottom"
    return AttackedImage(
        image=ImageBuffer(out),
        spec=spec,
        provenance=prov,
        changed_bbox=RectPx(x, y, w, h),
    )


def draw_label_box(
    canvas: np.ndarray,
    label: str,
    anchor: tuple[int, int],
    style: TextStyle,
    box_color: tuple[int, int, int] = (200, 16, 46),
    pad: int = 2,
) -> None:
    """Paint a filled box centered on `anchor` with `label` inside.

    Mutates `canvas` in place; the box is clamped to stay inside it.
    """
    h_img, w_img = canvas.shape[:2]
    w, h = measure_text(label, style)
    bw, bh = w + 2 * pad, h + 2 * pad
    bx = min(max(0, anchor[0] - bw // 2), max(0, w_img - bw))
    by = min(max(0, anchor[1] - bh // 2), max(0, h_img - bh))
    canvas[by : by + bh, bx : bx + bw] = box_color
    _stamp(canvas, label, bx + pad, by + pad, style)


def _render_provenance(style: TextStyle, method: str) -> dict:
    return {
        "renderer": "bitmap",
        "placement": method,
        "style": json.dumps(style.to_dict(), sort_keys=True),
    }
