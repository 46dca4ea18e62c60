"""End-to-end attack orchestration.

Wires segmentation, mark allocation, planning, and inpainting into the
full scene-aware attack, provides the two direct-render baselines and the
five-step ablation ladder, and exports print-ready patches. Every output
carries provenance naming the services and settings that produced it.
"""

from __future__ import annotations

import dataclasses
import io
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from PIL import Image

from .backends import Backends, text_part, image_part, user_message
from .core import AttackedImage, AttackSpec, ImageBuffer, QASample, RectPx, normalize_answer
from .errors import NoWritableRegion, ValidationError
from .planner import PlannerConfig, plan, planned_text
from .regions import allocate_marks, filter_masks, region_by_id
from .render import TextStyle, default_style, render_center, render_margin, render_at

DEFAULT_FILTER_DENOMINATOR = 12.0
DATASET_FILTER_DENOMINATORS = {"lingoqa": 15.0}

BASELINE_METHODS = ("center", "margin")
ABLATION_SETTINGS = (1, 2, 3, 4, 5)


def filter_denominator_for(source_dataset: str, override=None) -> float:
    if override is not None:
        return float(override)
    return DATASET_FILTER_DENOMINATORS.get(source_dataset, DEFAULT_FILTER_DENOMINATOR)


@dataclass
class PipelineConfig:
    """Settings shared by all attack flavors."""

    filter_denominator: Optional[float] = None  # None = by dataset tag
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    style: Optional[TextStyle] = None  # direct-render text style
    workers: Optional[int] = None  # None = logical cores

    def style_for(self, image: ImageBuffer) -> TextStyle:
        return self.style or default_style(image.height)


def _describe(client) -> str:
    fn = getattr(client, "describe", None)
    return fn() if fn else type(client).__name__


def _load_image(sample: QASample, image: Optional[ImageBuffer]) -> ImageBuffer:
    if image is not None:
        return image
    return ImageBuffer.from_file(sample.image_ref)


def _diff_bbox(before: ImageBuffer, after: ImageBuffer) -> Optional[RectPx]:
    if before.size != after.size:
        return None
    changed = np.any(before.pixels != after.pixels, axis=2)
    ys, xs = np.nonzero(changed)
    if len(xs) == 0:
        return None
    x0, x1 = int(xs.min()), int(xs.max())
    y0, y1 = int(ys.min()), int(ys.max())
    return RectPx(x0, y0, x1 - x0 + 1, y1 - y0 + 1)


def _merge_provenance(attacked: AttackedImage, extra: dict) -> AttackedImage:
    merged = dict(attacked.provenance)
    merged.update(extra)
    return dataclasses.replace(attacked, provenance=merged)


def scenetap_attack(
    sample: QASample,
    backends: Backends,
    cfg: Optional[PipelineConfig] = None,
    image: Optional[ImageBuffer] = None,
) -> AttackedImage:
    """Segment, filter, mark, plan, and inpaint one sample."""
    cfg = cfg or PipelineConfig()
    img = _load_image(sample, image)
    denominator = filter_denominator_for(sample.source_dataset, cfg.filter_denominator)

    masks = backends.segmenter.segment(img)
    kept = filter_masks(masks, img.size, denominator)
    if not kept:
        raise NoWritableRegion(
            f"none of {len(masks)} masks can hold text at least "
            f"{img.width}/{denominator:g} x {img.height}/{denominator:g} px"
        )
    seg_set = allocate_marks(kept, filter_denominator=denominator)

    the_plan = plan(sample, seg_set, backends.planner_chat, cfg=cfg.planner, image=img)
    region = region_by_id(seg_set, the_plan.region_id)
    out = backends.inpainter.inpaint(
        img, region.mask, the_plan.caption, the_plan.adversarial_text
    )

    spec = AttackSpec(
        method="scenetap",
        text=the_plan.adversarial_text,
        region_id=the_plan.region_id,
        text_source="planned",
    )
    provenance = {
        "sample_id": sample.id,
        "planner_model": _describe(backends.planner_chat),
        "segmentation_service": _describe(backends.segmenter),
        "inpaint_service": _describe(backends.inpainter),
        "filter_denominator": f"{denominator:g}",
        "instruction_set": cfg.planner.instruction_set().version,
    }
    return AttackedImage(
        image=out,
        spec=spec,
        provenance=provenance,
        plan=the_plan,
        changed_bbox=_diff_bbox(img, out),
    )


def naive_incorrect_text(
    sample: QASample, chat, image: Optional[ImageBuffer] = None
) -> str:
    """One-shot wrong-answer generation for open-ended baselines."""
    if sample.question_type != "open_ended":
        raise ValueError("naive text generation is for open-ended samples")
    prompt = (
        "Look at the question about an image and its correct answer.\n"
        f"Question: {sample.question}\n"
        f"Correct answer: {sample.correct_answer}\n\n"
        "Give one incorrect answer to the question, 1-3 simple English "
        "words. Reply with the answer only."
    )
    parts = [text_part(prompt)]
    if image is not None:
        parts.insert(0, image_part(image))
    messages = [user_message(*parts)]

    last_problem = ""
    for attempt in range(2):
        raw = chat.chat(messages, temperature=0.0)
        text = raw.strip().strip('"').strip("'").strip()
        words = text.split()
        if not words:
            last_problem = "empty reply"
        elif len(words) > 3:
            last_problem = f"{len(words)} words, want 1-3"
        elif normalize_answer(text) == normalize_answer(sample.correct_answer):
            last_problem = "matches the correct answer"
        else:
            return text
        if attempt == 0:
            messages = messages + [user_message(text_part(
                f"Your previous reply was rejected: {last_problem}. "
                "Reply with a different 1-3 word incorrect answer only."
            ))]
    raise ValidationError(f"naive text rejected twice: {last_problem}")


def _baseline_text(sample, text_source, chat, image):
    if text_source == "fixed_option":
        if sample.question_type != "two_choice":
            raise ValueError("fixed_option text needs a two-choice sample")
        return sample.incorrect_choice()
    if text_source == "naive_llm":
        return naive_incorrect_text(sample, chat, image=image)
    raise ValueError(f"unsupported baseline text_source {text_source!r}")


def baseline_attack(
    sample: QASample,
    method: str,
    text_source: str,
    backends: Backends,
    cfg: Optional[PipelineConfig] = None,
    image: Optional[ImageBuffer] = None,
) -> AttackedImage:
    """Direct-render baseline: text centered on the image or in a margin band."""
    if method not in BASELINE_METHODS:
        raise ValueError(f"baseline method must be one of {BASELINE_METHODS}")
    cfg = cfg or PipelineConfig()
    img = _load_image(sample, image)
    text = _baseline_text(sample, text_source, backends.planner_chat, img)
    style = cfg.style_for(img)

    render = render_center if method == "center" else render_margin
    attacked = render(img, text, style, text_source=text_source)
    extra = {"sample_id": sample.id}
    if text_source == "naive_llm":
        extra["planner_model"] = _describe(backends.planner_chat)
    return _merge_provenance(attacked, extra)


def _default_text_source(sample: QASample) -> str:
    return "fixed_option" if sample.question_type == "two_choice" else "naive_llm"


def ablation_attack(
    sample: QASample,
    setting: int,
    backends: Backends,
    cfg: Optional[PipelineConfig] = None,
    image: Optional[ImageBuffer] = None,
) -> AttackedImage:
    """One rung of the ablation ladder.

    1: baseline text, centered. 2: planned text, centered. 3: planned text
    rendered at the pre-revision region. 4: same but post-revision.
    5: the full pipeline with inpainting.
    """
    if setting not in ABLATION_SETTINGS:
        raise ValueError(f"setting must be one of {ABLATION_SETTINGS}")
    cfg = cfg or PipelineConfig()
    img = _load_image(sample, image)

    if setting == 1:
        return baseline_attack(
            sample, "center", _default_text_source(sample), backends,
            cfg=cfg, image=img,
        )
    if setting == 2:
        text = planned_text(sample, backends.planner_chat, cfg=cfg.planner, image=img)
        attacked = render_center(img, text, cfg.style_for(img), text_source="planned")
        return _merge_provenance(attacked, {
            "sample_id": sample.id,
            "planner_model": _describe(backends.planner_chat),
            "instruction_set": cfg.planner.instruction_set().version,
        })
    if setting == 5:
        return scenetap_attack(sample, backends, cfg=cfg, image=img)

    # settings 3 and 4: direct render at the planned region's rectangle center
    denominator = filter_denominator_for(sample.source_dataset, cfg.filter_denominator)
    masks = backends.segmenter.segment(img)
    kept = filter_masks(masks, img.size, denominator)
    if not kept:
        raise NoWritableRegion(
            f"none of {len(masks)} masks can hold text at least "
            f"{img.width}/{denominator:g} x {img.height}/{denominator:g} px"
        )
    seg_set = allocate_marks(kept, filter_denominator=denominator)
    the_plan = plan(sample, seg_set, backends.planner_chat, cfg=cfg.planner, image=img)
    chosen = the_plan.prior if (setting == 3 and the_plan.revised) else the_plan
    region = region_by_id(seg_set, chosen.region_id)
    anchor = region.inscribed.center()

    attacked = render_at(
        img, the_plan.adversarial_text, anchor, cfg.style_for(img),
        method="anchored", text_source="planned",
    )
    attacked = dataclasses.replace(attacked, plan=the_plan)
    return _merge_provenance(attacked, {
        "sample_id": sample.id,
        "planner_model": _describe(backends.planner_chat),
        "segmentation_service": _describe(backends.segmenter),
        "filter_denominator": f"{denominator:g}",
        "instruction_set": cfg.planner.instruction_set().version,
        "ablation_plan": "pre_revision" if setting == 3 else "post_revision",
    })


def export_patch(attacked: AttackedImage, padding: int = 10, px_per_cm=None):
    """Crop the changed region (plus padding) for printing.

    Returns (png_bytes, metadata). Physical size is whatever the caller
    supplies as px_per_cm; there is no built-in DPI model.
    """
    if padding < 0:
        raise ValueError("padding must be nonnegative")
    if attacked.changed_bbox is None:
        raise ValueError("attacked image records no changed_bbox to export")
    w, h = attacked.image.size
    crop = attacked.changed_bbox.dilate(padding, w, h)
    pixels = attacked.image.pixels[crop.y : crop.y2, crop.x : crop.x2]
    buf = io.BytesIO()
    Image.fromarray(pixels).save(buf, format="PNG")
    metadata = {
        "sample_id": attacked.provenance.get("sample_id"),
        "crop": crop.to_dict(),
        "changed_bbox": attacked.changed_bbox.to_dict(),
        "padding": padding,
        "px_per_cm": px_per_cm,
        "spec": attacked.spec.to_dict(),
    }
    return buf.getvalue(), metadata


@dataclass(frozen=True)
class AttackResult:
    """Per-sample outcome of a batch run; exactly one of attacked/error set."""

    sample_id: str
    attacked: Optional[AttackedImage] = None
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.attacked is not None


def _attack_one(sample, backends, method, cfg, image):
    if method == "scenetap":
        return scenetap_attack(sample, backends, cfg=cfg, image=image)
    if method in BASELINE_METHODS:
        return baseline_attack(
            sample, method, _default_text_source(sample), backends,
            cfg=cfg, image=image,
        )
    raise ValueError(f"unknown attack method {method!r}")


def run_attacks(
    samples,
    backends: Backends,
    method: str = "scenetap",
    cfg: Optional[PipelineConfig] = None,
    images: Optional[dict] = None,
) -> list:
    """Attack samples concurrently; failures become AttackResult errors.

    `images` optionally maps sample id to a preloaded ImageBuffer. Result
    order matches input order regardless of completion order.
    """
    cfg = cfg or PipelineConfig()
    samples = list(samples)
    images = images or {}
    workers = cfg.workers or os.cpu_count() or 1

    def job(sample):
        try:
            attacked = _attack_one(
                sample, backends, method, cfg, images.get(sample.id)
            )
            return AttackResult(sample_id=sample.id, attacked=attacked)
        except Exception as exc:
            return AttackResult(
                sample_id=sample.id,
                error=f"{type(exc).__name__}: {exc}",
            )

    if workers == 1 or len(samples) <= 1:
        return [job(s) for s in samples]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(job, samples))
