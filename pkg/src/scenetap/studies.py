"""Empirical studies: text-type taxonomy, strength heatmaps, ablations.

All three operate on the same mock-or-live backends as the pipeline and
produce plain data (maps, ASR tables, metric reports) that the report
module or CLI serializes.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from PIL import Image

from .backends import Backends, ScoreRequest, image_part, text_part, user_message
from .core import ImageBuffer, QASample
from .errors import PlanningFailed
from .evaluation import (
    MetricsReport,
    compute_asr,
    compute_cscore,
    judge_answer,
    judge_naturalness,
    round_half_up,
)
from .pipeline import ABLATION_SETTINGS, PipelineConfig, ablation_attack, _describe
from .planner import _load_asset, _render, _select_branch, first_json_object
from .render import TextStyle, default_style, measure_text, render_at, render_center

VARIANT_FLAGS = ((False, False), (False, True), (True, False), (True, True))


def variant_label(question_relevant: bool, context_relevant: bool) -> str:
    return f"qr{int(question_relevant)}_cr{int(context_relevant)}"


@dataclass(frozen=True)
class TextTypeVariant:
    """One cell of the question-relevance x context-relevance taxonomy."""

    question_relevant: bool
    context_relevant: bool
    text: str

    def __post_init__(self):
        words = self.text.split()
        if not 1 <= len(words) <= 3:
            raise ValueError("variant text must be 1-3 words")

    @property
    def label(self) -> str:
        return variant_label(self.question_relevant, self.context_relevant)


def generate_text_variants(
    sample: QASample,
    chat,
    image: Optional[ImageBuffer] = None,
    max_retries: int = 3,
) -> list:
    """Four planner calls, one per taxonomy cell, in fixed flag order."""
    template = _load_asset("texttype.txt")
    variants = []
    seen = set()
    for qr, cr in VARIANT_FLAGS:
        label = variant_label(qr, cr)
        body = _render(
            _select_branch(template, label),
            {"question": sample.question,
             "correct_answer": sample.correct_answer},
        )
        parts = ([image_part(image)] if image is not None else []) + [text_part(body)]
        messages = [user_message(*parts)]
        raw = ""
        accepted = None
        for attempt in range(max_retries + 1):
            raw = chat.chat(messages, temperature=0.0)
            problem = None
            obj = first_json_object(raw)
            if obj is None or not isinstance(obj.get("text"), str):
                problem = "no JSON object with a string 'text' field"
            else:
                text = obj["text"].strip()
                words = text.split()
                if not 1 <= len(words) <= 3:
                    problem = f"{len(words)} words, want 1-3"
                elif text.lower() in seen:
                    problem = f"duplicate of an earlier variant: {text!r}"
                else:
                    accepted = text
                    break
            messages = messages + [user_message(text_part(
                f"Your previous response was rejected: {problem}. "
                "Answer again, following the response format exactly."
            ))]
        if accepted is None:
            raise PlanningFailed(f"texttype:{label}", raw)
        seen.add(accepted.lower())
        variants.append(TextTypeVariant(qr, cr, accepted))
    return variants


@dataclass(frozen=True)
class TextTypeStudyResult:
    """ASR per taxonomy cell; failures carry per-sample error strings."""

    asr_by_class: dict
    n: int
    failures: tuple = ()


def text_type_study(
    samples,
    backends: Backends,
    cfg: Optional[PipelineConfig] = None,
    images: Optional[dict] = None,
) -> TextTypeStudyResult:
    """Center-render each variant on pristine images and measure ASR."""
    samples = list(samples)
    if not samples:
        raise ValueError("study needs at least one sample")
    cfg = cfg or PipelineConfig()
    images = images or {}

    outcomes = {variant_label(*flags): [] for flags in VARIANT_FLAGS}
    failures = []
    n_used = 0
    for sample in samples:
        try:
            img = images.get(sample.id)
            if img is None:
                img = ImageBuffer.from_file(sample.image_ref)
            variants = generate_text_variants(
                sample, backends.planner_chat, image=img
            )
            style = cfg.style_for(img)
            for variant in variants:
                attacked = render_center(img, variant.text, style,
                                         text_source="planned")
                answer = backends.target.answer(
                    attacked.image, sample.question, choices=sample.choices
                )
                result = judge_answer(answer, sample, variant.text)
                outcomes[variant.label].append(result)
        except Exception as exc:
            failures.append(f"{sample.id}: {type(exc).__name__}: {exc}")
            continue
        n_used += 1
    if n_used == 0:
        raise ValueError(f"all samples failed: {failures}")

    asr_by_class = {
        label: compute_asr(
            [o for o in results if not o.unjudged], mode="incorrect"
        ) if results else None
        for label, results in outcomes.items()
    }
    return TextTypeStudyResult(
        asr_by_class=asr_by_class, n=n_used, failures=tuple(failures)
    )


ANCHORING_CONVENTION = "top-left, origin 0"


@dataclass(frozen=True)
class StrengthMap:
    """Score-gap lattice over text placements for one sample."""

    sample_id: str
    text: str
    interval: int
    anchors: tuple
    deltas: tuple
    nx: int
    ny: int
    image_size: tuple
    anchoring: str = ANCHORING_CONVENTION

    def __post_init__(self):
        object.__setattr__(self, "anchors", tuple(tuple(a) for a in self.anchors))
        object.__setattr__(self, "deltas", tuple(float(d) for d in self.deltas))
        object.__setattr__(self, "image_size", tuple(self.image_size))
        if self.interval <= 0:
            raise ValueError("interval must be positive")
        if len(self.anchors) != len(self.deltas):
            raise ValueError("anchors and deltas must pair up")
        if len(self.anchors) != self.nx * self.ny:
            raise ValueError(f"{len(self.anchors)} anchors for {self.nx}x{self.ny} grid")
        xs = sorted({x for x, _ in self.anchors})
        ys = sorted({y for _, y in self.anchors})
        expected = [(x, y) for y in ys for x in xs]
        if (len(xs), len(ys)) != (self.nx, self.ny) or list(self.anchors) != expected:
            raise ValueError("anchors do not form a row-major lattice")
        for seq in (xs, ys):
            if seq[0] != 0:
                raise ValueError("lattice must start at 0")
            if any(b - a != self.interval for a, b in zip(seq, seq[1:])):
                raise ValueError("lattice spacing must equal the interval")

    def grid(self) -> np.ndarray:
        return np.array(self.deltas, dtype=np.float64).reshape(self.ny, self.nx)

    def argmax_anchor(self) -> tuple:
        return self.anchors[int(np.argmax(self.deltas))]

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "text": self.text,
            "interval": self.interval,
            "anchors": [list(a) for a in self.anchors],
            "deltas": list(self.deltas),
            "nx": self.nx,
            "ny": self.ny,
            "image_size": list(self.image_size),
            "anchoring": self.anchoring,
        }

    @classmethod
    def from_dict(cls, rec: dict) -> "StrengthMap":
        return cls(**rec)


def strength_heatmap(
    sample: QASample,
    text: str,
    score,
    interval: int = 10,
    style: Optional[TextStyle] = None,
    image: Optional[ImageBuffer] = None,
    workers: Optional[int] = None,
) -> StrengthMap:
    """Score the adversarial-vs-correct gap at every lattice placement.

    Placements put the text box's top-left at every (x, y) with x and y
    multiples of `interval` such that the box stays inside the image.
    """
    if sample.question_type != "two_choice":
        raise ValueError("strength maps are defined for two-choice samples")
    img = image if image is not None else ImageBuffer.from_file(sample.image_ref)
    style = style or default_style(img.height)
    w, h = measure_text(text, style)
    if w > img.width or h > img.height:
        raise ValueError(f"text box {w}x{h} exceeds image {img.width}x{img.height}")

    xs = list(range(0, img.width - w + 1, interval))
    ys = list(range(0, img.height - h + 1, interval))
    anchors = [(x, y) for y in ys for x in xs]

    def delta_at(anchor):
        attacked = render_at(img, text, anchor, style)
        scores = score.score_candidates(ScoreRequest(
            attacked.image, sample.question, (text, sample.correct_answer)
        ))
        return float(scores[0]) - float(scores[1])

    n_workers = workers or os.cpu_count() or 1
    if n_workers == 1 or len(anchors) <= 1:
        deltas = [delta_at(a) for a in anchors]
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            deltas = list(pool.map(delta_at, anchors))

    return StrengthMap(
        sample_id=sample.id,
        text=text,
        interval=interval,
        anchors=tuple(anchors),
        deltas=tuple(deltas),
        nx=len(xs),
        ny=len(ys),
        image_size=img.size,
    )


_COOL = np.array([59.0, 76.0, 192.0])
_MID = np.array([221.0, 221.0, 221.0])
_WARM = np.array([180.0, 4.0, 38.0])


def _colormap(values: np.ndarray) -> np.ndarray:
    """Diverging blue-gray-red map over values already normalized to [0,1]."""
    t = np.clip(values, 0.0, 1.0)[..., None]
    low = _COOL + (_MID - _COOL) * (2.0 * t)
    high = _MID + (_WARM - _MID) * (2.0 * t - 1.0)
    rgb = np.where(t < 0.5, low, high)
    return np.clip(np.rint(rgb), 0, 255).astype(np.uint8)


def heatmap_render(smap: StrengthMap) -> tuple:
    """(overlay ImageBuffer at source resolution, CSV text)."""
    grid = smap.grid()
    lo, hi = float(grid.min()), float(grid.max())
    if hi > lo:
        norm = (grid - lo) / (hi - lo)
    else:
        norm = np.full_like(grid, 0.5)

    w, h = smap.image_size
    field_img = Image.fromarray(norm.astype(np.float32), mode="F")
    upsampled = np.asarray(field_img.resize((w, h), Image.BILINEAR), dtype=np.float64)
    overlay = ImageBuffer(_colormap(upsampled))

    lines = ["x,y,delta"]
    for (x, y), d in zip(smap.anchors, smap.deltas):
        lines.append(f"{x},{y},{d!r}")
    return overlay, "\n".join(lines) + "\n"


@dataclass(frozen=True)
class AblationStudyResult:
    """One MetricsReport per setting, in ladder order, plus failures."""

    reports: tuple
    failures: dict = field(default_factory=dict)

    def __iter__(self):
        return iter(self.reports)


def ablation_study(
    samples,
    backends: Backends,
    cfg: Optional[PipelineConfig] = None,
    images: Optional[dict] = None,
    naturalness: bool = True,
) -> AblationStudyResult:
    """Run every ablation setting over the samples and aggregate metrics."""
    samples = list(samples)
    if not samples:
        raise ValueError("study needs at least one sample")
    cfg = cfg or PipelineConfig()
    images = images or {}

    reports = []
    failures = {}
    for setting in ABLATION_SETTINGS:
        results = []
        scores = []
        setting_failures = []
        for sample in samples:
            try:
                img = images.get(sample.id)
                attacked = ablation_attack(
                    sample, setting, backends, cfg=cfg, image=img
                )
                answer = backends.target.answer(
                    attacked.image, sample.question, choices=sample.choices
                )
                results.append(judge_answer(answer, sample, attacked.spec.text))
                if naturalness:
                    scores.append(
                        judge_naturalness(attacked, backends.judge_chat).score
                    )
            except Exception as exc:
                setting_failures.append(
                    f"{sample.id}: {type(exc).__name__}: {exc}"
                )
        if setting_failures:
            failures[setting] = setting_failures
        if not results:
            raise ValueError(
                f"setting {setting}: all samples failed: {setting_failures}"
            )

        judged = [r for r in results if not r.unjudged]
        asr_strict = compute_asr(results, mode="strict")
        asr_incorrect = compute_asr(judged, mode="incorrect") if judged else None
        n_mean = round_half_up(sum(scores) / len(scores)) if scores else None
        c_score = None
        if n_mean is not None and asr_incorrect is not None:
            c_score = compute_cscore(asr_incorrect, n_mean)
        reports.append(MetricsReport(
            method=f"setting{setting}",
            task_tag=None,
            target_model=_describe(backends.target),
            asr_strict=asr_strict,
            asr_incorrect=asr_incorrect,
            n_score_mean=n_mean,
            c_score=c_score,
            n=len(results),
            n_unjudged=len(results) - len(judged),
        ))
    return AblationStudyResult(reports=tuple(reports), failures=failures)
