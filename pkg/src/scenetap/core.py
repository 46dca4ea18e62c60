"""Canonical data types, manifest ingestion, and image buffer handling.

Everything downstream (regions, rendering, planning, evaluation) exchanges
these types. All of them are immutable after construction and safe to share
across worker threads.
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
from PIL import Image

from .errors import ManifestError

QUESTION_TYPES = ("two_choice", "open_ended")
SOURCE_DATASETS = ("typod", "vqav2", "lingoqa", "custom")
ATTACK_METHODS = ("scenetap", "center", "margin", "grid_point", "anchored")
TEXT_SOURCES = ("planned", "fixed_option", "naive_llm")

MIN_IMAGE_SIDE = 64


def normalize_answer(text: str) -> str:
    """Canonical answer form used by all judging and matching.

    Lowercase, strip, drop every Unicode punctuation character, collapse
    internal whitespace runs to single spaces. Idempotent by construction.
    """
    lowered = text.lower()
    kept = "".join(ch for ch in lowered if not unicodedata.category(ch).startswith("P"))
    return " ".join(kept.split())


@dataclass(frozen=True)
class RectPx:
    """Axis-aligned pixel rectangle, top-left origin."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise ValueError(f"rectangle must be at least 1x1, got {self.w}x{self.h}")

    @property
    def x2(self) -> int:
        return self.x + self.w

    @property
    def y2(self) -> int:
        return self.y + self.h

    @property
    def area(self) -> int:
        return self.w * self.h

    def center(self) -> tuple[int, int]:
        return (self.x + self.w // 2, self.y + self.h // 2)

    def inside(self, width: int, height: int) -> bool:
        return self.x >= 0 and self.y >= 0 and self.x2 <= width and self.y2 <= height

    def contains(self, other: "RectPx") -> bool:
        return (
            other.x >= self.x
            and other.y >= self.y
            and other.x2 <= self.x2
            and other.y2 <= self.y2
        )

    def dilate(self, padding: int, width: int, height: int) -> "RectPx":
        """Grow by `padding` on every side, clamped to an image of the given size."""
        x0 = max(0, self.x - padding)
        y0 = max(0, self.y - padding)
        x1 = min(width, self.x2 + padding)
        y1 = min(height, self.y2 + padding)
        return RectPx(x0, y0, x1 - x0, y1 - y0)

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "w": self.w, "h": self.h}

    @classmethod
    def from_dict(cls, d: dict) -> "RectPx":
        return cls(int(d["x"]), int(d["y"]), int(d["w"]), int(d["h"]))


class ImageBuffer:
    """8-bit RGB raster. PNG on disk and in every wire payload.

    Alpha is dropped on load; pixel data is frozen so buffers can be shared
    freely. Encode/decode round-trips are lossless.
    """

    def __init__(self, pixels: np.ndarray):
        arr = np.asarray(pixels, dtype=np.uint8)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"expected HxWx3 uint8 array, got shape {arr.shape}")
        h, w = arr.shape[:2]
        if w < MIN_IMAGE_SIDE or h < MIN_IMAGE_SIDE:
            raise ValueError(
                f"image must be at least {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}, got {w}x{h}"
            )
        arr = arr.copy()
        arr.setflags(write=False)
        self._pixels = arr

    @property
    def pixels(self) -> np.ndarray:
        return self._pixels

    @property
    def width(self) -> int:
        return self._pixels.shape[1]

    @property
    def height(self) -> int:
        return self._pixels.shape[0]

    @property
    def size(self) -> tuple[int, int]:
        return (self.width, self.height)

    def digest(self) -> str:
        return hashlib.sha256(self._pixels.tobytes()).hexdigest()

    def pixel_equal(self, other: "ImageBuffer") -> bool:
        return self._pixels.shape == other._pixels.shape and bool(
            np.array_equal(self._pixels, other._pixels)
        )

    def mutable_copy(self) -> np.ndarray:
        return self._pixels.copy()

    @classmethod
    def from_pil(cls, im: Image.Image) -> "ImageBuffer":
        return cls(np.asarray(im.convert("RGB")))

    @classmethod
    def from_file(cls, path: str | Path) -> "ImageBuffer":
        with Image.open(path) as im:
            return cls.from_pil(im)

    @classmethod
    def from_png_bytes(cls, data: bytes) -> "ImageBuffer":
        return cls.from_pil(Image.open(io.BytesIO(data)))

    @classmethod
    def from_png_base64(cls, data: str) -> "ImageBuffer":
        return cls.from_png_bytes(base64.b64decode(data))

    def to_pil(self) -> Image.Image:
        return Image.fromarray(self._pixels, mode="RGB")

    def to_png_bytes(self) -> bytes:
        buf = io.BytesIO()
        self.to_pil().save(buf, format="PNG")
        return buf.getvalue()

    def to_png_base64(self) -> str:
        return base64.b64encode(self.to_png_bytes()).decode("ascii")

    def to_file(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_png_bytes())

    def __repr__(self):
        return f"ImageBuffer({self.width}x{self.height})"


@dataclass(frozen=True)
class QASample:
    """One image/question/answer record, two-choice or open-ended."""

    id: str
    image_ref: str
    question: str
    question_type: str
    correct_answer: str
    choices: Optional[tuple[str, str]] = None
    source_dataset: str = "custom"
    task_tag: Optional[str] = None

    def __post_init__(self):
        if not self.id:
            raise ValueError("sample id must be nonempty")
        if self.question_type not in QUESTION_TYPES:
            raise ValueError(f"unknown question_type {self.question_type!r}")
        if self.source_dataset not in SOURCE_DATASETS:
            raise ValueError(f"unknown source_dataset {self.source_dataset!r}")
        if self.question_type == "two_choice":
            if self.choices is None or len(self.choices) != 2:
                raise ValueError("two_choice sample requires exactly two choices")
            object.__setattr__(self, "choices", tuple(self.choices))
            matches = [
                c for c in self.choices
                if normalize_answer(c) == normalize_answer(self.correct_answer)
            ]
            if len(matches) != 1:
                raise ValueError(
                    "correct_answer must equal exactly one choice after normalization"
                )
        else:
            if self.choices is not None:
                raise ValueError("open_ended sample must not carry choices")

    def incorrect_choice(self) -> str:
        """The non-correct option of a two-choice sample."""
        if self.question_type != "two_choice":
            raise ValueError("incorrect_choice is defined for two_choice samples only")
        correct_n = normalize_answer(self.correct_answer)
        for c in self.choices:
            if normalize_answer(c) != correct_n:
                return c
        raise AssertionError("unreachable: validated at construction")

    def to_record(self) -> dict:
        rec = {
            "id": self.id,
            "image": self.image_ref,
            "question": self.question,
            "question_type": self.question_type,
            "correct_answer": self.correct_answer,
            "source_dataset": self.source_dataset,
        }
        if self.choices is not None:
            rec["choices"] = list(self.choices)
        if self.task_tag is not None:
            rec["task_tag"] = self.task_tag
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "QASample":
        choices = rec.get("choices")
        return cls(
            id=str(rec["id"]),
            image_ref=str(rec["image"]),
            question=str(rec["question"]),
            question_type=str(rec["question_type"]),
            correct_answer=str(rec["correct_answer"]),
            choices=tuple(choices) if choices is not None else None,
            source_dataset=str(rec.get("source_dataset", "custom")),
            task_tag=rec.get("task_tag"),
        )


def load_manifest(path: str | Path) -> list[QASample]:
    """Load a newline-delimited JSON manifest of QA samples.

    Records are returned in file order. Blank lines are skipped. Any
    malformed or invalid record aborts the load with its line number.
    """
    path = Path(path)
    samples: list[QASample] = []
    seen: set[str] = set()
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            try:
                rec = json.loads(stripped)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"malformed record: {exc.msg}", line_no) from exc
            if not isinstance(rec, dict):
                raise ManifestError("record is not an object", line_no)
            try:
                sample = QASample.from_record(rec)
            except (KeyError, TypeError) as exc:
                raise ManifestError(f"missing or bad field: {exc}", line_no) from exc
            except ValueError as exc:
                raise ManifestError(str(exc), line_no) from exc
            if sample.id in seen:
                raise ManifestError(f"duplicate id {sample.id!r}", line_no)
            seen.add(sample.id)
            samples.append(sample)
    return samples


def dump_manifest(samples: Iterable[QASample], path: str | Path) -> None:
    """Write samples as one JSON object per line (the load_manifest format)."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for sample in samples:
            fh.write(json.dumps(sample.to_record(), sort_keys=True) + "\n")


@dataclass(frozen=True)
class AttackSpec:
    """What was (or will be) inserted where, and where the text came from."""

    method: str
    text: str
    anchor: Optional[tuple[int, int]] = None
    region_id: Optional[int] = None
    text_source: str = "planned"

    def __post_init__(self):
        if self.method not in ATTACK_METHODS:
            raise ValueError(f"unknown attack method {self.method!r}")
        if self.text_source not in TEXT_SOURCES:
            raise ValueError(f"unknown text_source {self.text_source!r}")
        if not self.text:
            raise ValueError("attack text must be nonempty")
        if self.method in ("grid_point", "anchored") and self.anchor is None:
            raise ValueError(f"method {self.method} requires an anchor")
        if self.method == "scenetap" and self.region_id is None:
            raise ValueError("method scenetap requires a region_id")
        if self.anchor is not None:
            object.__setattr__(self, "anchor", (int(self.anchor[0]), int(self.anchor[1])))

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "text": self.text,
            "anchor": list(self.anchor) if self.anchor is not None else None,
            "region_id": self.region_id,
            "text_source": self.text_source,
        }


@dataclass(frozen=True)
class AttackedImage:
    """A modified image with full provenance of how it was produced."""

    image: ImageBuffer
    spec: AttackSpec
    provenance: dict[str, str]
    plan: object = None  # AdversarialPlan when the planner produced one
    changed_bbox: Optional[RectPx] = None

    def __post_init__(self):
        if not self.provenance:
            raise ValueError("provenance must be nonempty")
        object.__setattr__(self, "provenance", dict(self.provenance))

    def provenance_record(self) -> dict:
        rec = {
            "spec": self.spec.to_dict(),
            "provenance": dict(sorted(self.provenance.items())),
            "changed_bbox": self.changed_bbox.to_dict() if self.changed_bbox else None,
        }
        if self.plan is not None:
            rec["plan"] = self.plan.to_dict()
        return rec
