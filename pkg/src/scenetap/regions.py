"""Mask geometry and mark bookkeeping for numbered-region prompting.

Provides the largest-inscribed-rectangle computation used to filter tiny
segmentation masks, deterministic mark allocation over the survivors, and
the numbered overlay the planner sees.
"""

from __future__ import annotations

import base64
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .core import ImageBuffer, RectPx

# Minimum center-to-center distance between two mark anchors, in pixels.
# Keeps labels legible at typical 640-px image widths.
ANCHOR_SEPARATION_PX = 12


@dataclass(frozen=True)
class BinaryMask:
    """Row-major boolean raster, dimensioned like its source image."""

    bits: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.bits, dtype=bool)
        if arr.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {arr.shape}")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "bits", arr)

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def area(self) -> int:
        return int(self.bits.sum())

    def bbox(self) -> RectPx:
        """Tight bounding box of the true bits."""
        ys, xs = np.nonzero(self.bits)
        if len(xs) == 0:
            raise ValueError("empty mask")
        x0, x1 = int(xs.min()), int(xs.max())
        y0, y1 = int(ys.min()), int(ys.max())
        return RectPx(x0, y0, x1 - x0 + 1, y1 - y0 + 1)

    def covers(self, rect: RectPx) -> bool:
        """True when every pixel of `rect` is a true bit."""
        if not rect.inside(self.width, self.height):
            return False
        return bool(self.bits[rect.y : rect.y2, rect.x : rect.x2].all())

    @classmethod
    def from_rect(cls, width: int, height: int, rect: RectPx) -> "BinaryMask":
        arr = np.zeros((height, width), dtype=bool)
        arr[rect.y : rect.y2, rect.x : rect.x2] = True
        return cls(arr)

    @classmethod
    def from_png_bytes(cls, data: bytes) -> "BinaryMask":
        with Image.open(io.BytesIO(data)) as im:
            arr = np.asarray(im.convert("L"))
        return cls(arr >= 128)

    @classmethod
    def from_png_base64(cls, data: str) -> "BinaryMask":
        return cls.from_png_bytes(base64.b64decode(data))

    def to_png_bytes(self) -> bytes:
        im = Image.fromarray(np.where(self.bits, 255, 0).astype(np.uint8), mode="L")
        buf = io.BytesIO()
        im.save(buf, format="PNG")
        return buf.getvalue()

    def to_png_base64(self) -> str:
        return base64.b64encode(self.to_png_bytes()).decode("ascii")


@dataclass(frozen=True)
class Region:
    """A mark-numbered candidate placement area."""

    mark_id: int
    mask: BinaryMask
    area: int
    bbox: RectPx
    inscribed: RectPx
    anchor: tuple[int, int]

    def __post_init__(self):
        if self.mark_id < 1:
            raise ValueError("mark_id must be a positive integer")


@dataclass(frozen=True)
class SegmentationSet:
    """Filtered, mark-numbered regions for one image."""

    regions: tuple[Region, ...]
    image_size: tuple[int, int]
    filter_denominator: float

    def __post_init__(self):
        object.__setattr__(self, "regions", tuple(self.regions))
        ids = sorted(r.mark_id for r in self.regions)
        if ids != list(range(1, len(self.regions) + 1)):
            raise ValueError("mark ids must be exactly 1..N with no gaps or duplicates")
        if self.filter_denominator <= 0:
            raise ValueError("filter_denominator must be positive")

    @property
    def mark_ids(self) -> list[int]:
        return [r.mark_id for r in self.regions]


def largest_inscribed_rectangle(mask: BinaryMask) -> RectPx:
    """Maximal-area axis-aligned rectangle fully contained in the true region.

    Ties are broken by smallest top y, then smallest x, then smallest width,
    so the result is unique and deterministic. Histogram-of-heights sweep,
    O(W*H) overall: every maximal rectangle appears as a candidate at its
    bottom row with its exact height, so the global maximum is never missed.
    """
    bits = mask.bits
    h, w = bits.shape
    if not bits.any():
        raise ValueError("empty mask")

    # best = (-area, y_top, x, width, height) lexicographic minimum
    best = None
    heights = np.zeros(w, dtype=np.int64)
    for y in range(h):
        heights = np.where(bits[y], heights + 1, 0)
        stack: list[int] = []  # indices with strictly increasing heights
        for x in range(w + 1):
            cur = heights[x] if x < w else 0
            while stack and heights[stack[-1]] >= cur:
                top = stack.pop()
                rect_h = int(heights[top])
                if rect_h == 0:
                    continue
                left = stack[-1] + 1 if stack else 0
                rect_w = x - left
                key = (-(rect_w * rect_h), y - rect_h + 1, left, rect_w, rect_h)
                if best is None or key < best:
                    best = key
            stack.append(x)

    _, y_top, x_left, rect_w, rect_h = best
    return RectPx(x_left, y_top, rect_w, rect_h)


def filter_masks(
    masks: list[BinaryMask], image_size: tuple[int, int], denominator: float
) -> list[BinaryMask]:
    """Keep masks whose inscribed rectangle spans at least 1/denominator of
    the image in BOTH width and height. Input order is preserved."""
    if denominator <= 0:
        raise ValueError("denominator must be positive")
    width, height = image_size
    min_w = width / denominator
    min_h = height / denominator
    kept = []
    for mask in masks:
        if (mask.width, mask.height) != (width, height):
            raise ValueError(
                f"mask dimensions {mask.width}x{mask.height} do not match "
                f"image {width}x{height}"
            )
        if mask.area == 0:
            continue
        rect = largest_inscribed_rectangle(mask)
        if rect.w >= min_w and rect.h >= min_h:
            kept.append(mask)
    return kept


def _separated(a: tuple[int, int], b: tuple[int, int]) -> bool:
    return math.dist(a, b) >= ANCHOR_SEPARATION_PX


def allocate_marks(
    masks: list[BinaryMask], filter_denominator: float = 12.0
) -> SegmentationSet:
    """Number pre-filtered masks 1..N by descending area and anchor each mark.

    Anchors sit at the center of the inscribed rectangle; when a new anchor
    lands within ANCHOR_SEPARATION_PX of an earlier one it walks along +x
    inside its inscribed rectangle until separated or the rectangle ends.
    """
    if not masks:
        raise ValueError("cannot allocate marks over an empty mask list")
    size = (masks[0].width, masks[0].height)
    decorated = []
    for mask in masks:
        if (mask.width, mask.height) != size:
            raise ValueError("all masks must share the same dimensions")
        bbox = mask.bbox()
        decorated.append((mask, mask.area, bbox))
    decorated.sort(key=lambda t: (-t[1], t[2].y, t[2].x))

    regions = []
    placed: list[tuple[int, int]] = []
    for order, (mask, area, bbox) in enumerate(decorated, start=1):
        inscribed = largest_inscribed_rectangle(mask)
        ax, ay = inscribed.center()
        while not all(_separated((ax, ay), p) for p in placed):
            if ax + 1 >= inscribed.x2:
                break  # rectangle exhausted; keep the furthest position
            ax += 1
        placed.append((ax, ay))
        regions.append(
            Region(
                mark_id=order,
                mask=mask,
                area=area,
                bbox=bbox,
                inscribed=inscribed,
                anchor=(ax, ay),
            )
        )
    return SegmentationSet(
        regions=tuple(regions), image_size=size, filter_denominator=filter_denominator
    )


def region_by_id(seg_set: SegmentationSet, mark_id: int) -> Region:
    """Look up a region by its mark number."""
    for region in seg_set.regions:
        if region.mark_id == mark_id:
            return region
    n = len(seg_set.regions)
    raise KeyError(f"mark not found: {mark_id} (valid marks are 1..{n})")


# Label rendering pulls in the renderer lazily to avoid a module cycle.
def render_som_overlay(image: ImageBuffer, seg_set: SegmentationSet) -> ImageBuffer:
    """Draw each region's mark number in a contrasting box at its anchor.

    Pixels outside the label boxes are left untouched.
    """
    from .render import TextStyle, draw_label_box

    if seg_set.image_size != (image.width, image.height):
        raise ValueError("segmentation set does not match image dimensions")
    canvas = image.mutable_copy()
    style = TextStyle(
        glyph_height=max(12, min(24, image.height // 24)),
        fill=(255, 255, 255),
        stroke=(255, 255, 255),
        stroke_width=0,
    )
    for region in seg_set.regions:
        draw_label_box(
            canvas,
            str(region.mark_id),
            region.anchor,
            style,
            box_color=(200, 16, 46),
            pad=2,
        )
    return ImageBuffer(canvas)


def export_label_map(
    seg_set: SegmentationSet, png_path: str | Path, meta_path: str | Path | None = None
) -> None:
    """Write the region map as 16-bit grayscale PNG plus a metadata record.

    Pixel value 0 is background; value k belongs to the region with mark k.
    Regions are painted in ascending mark order so smaller (later) regions
    stay visible where masks overlap.
    """
    width, height = seg_set.image_size
    label = np.zeros((height, width), dtype=np.uint16)
    for region in seg_set.regions:
        label[region.mask.bits] = region.mark_id
    im = Image.fromarray(label)
    im.save(Path(png_path), format="PNG")
    if meta_path is not None:
        meta = {
            "image_size": list(seg_set.image_size),
            "filter_denominator": seg_set.filter_denominator,
            "regions": [
                {
                    "mark_id": r.mark_id,
                    "area": r.area,
                    "bbox": r.bbox.to_dict(),
                    "inscribed": r.inscribed.to_dict(),
                    "anchor": list(r.anchor),
                }
                for r in seg_set.regions
            ],
        }
        Path(meta_path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
