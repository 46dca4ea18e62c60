"""Four-stage attack planning over a chat backend.

Stages run in order at temperature 0: text generation, placement over the
numbered region overlay, insertion-caption writing, and a revision pass
that may relocate the text but never rewrite it. Each stage demands one
structured JSON object; a parse or validation failure re-issues only that
stage with the error appended as corrective feedback.
"""

from __future__ import annotations

import json
import re
import string
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

from .backends import image_part, text_part, user_message
from .core import ImageBuffer, QASample, normalize_answer
from .errors import ParseError, PlanningFailed, SceneTapError, ValidationError
from .regions import SegmentationSet, render_som_overlay

_BRANCH_RE = re.compile(r"\[branch:(\w+)\]\n(.*?)\[/branch\]\n", re.DOTALL)

# Quote characters accepted when checking that a caption embeds the text.
_QUOTE_PAIRS = [('"', '"'), ("'", "'"), ("“", "”"), ("‘", "’")]


def _load_asset(name: str) -> str:
    path = resources.files("scenetap").joinpath(f"assets/instructions/{name}")
    return path.read_text()


@dataclass(frozen=True)
class InstructionSet:
    """The four stage templates, as editable text with $-named slots."""

    textgen_template: str
    placement_template: str
    caption_template: str
    revision_template: str
    version: str = "v1"

    @classmethod
    def bundled(cls) -> "InstructionSet":
        return cls(
            textgen_template=_load_asset("textgen.txt"),
            placement_template=_load_asset("placement.txt"),
            caption_template=_load_asset("caption.txt"),
            revision_template=_load_asset("revision.txt"),
        )


def _select_branch(template: str, branch: str) -> str:
    """Keep the matching [branch:...] block's body, drop the others."""

    def repl(m):
        return m.group(2) if m.group(1) == branch else ""

    return _BRANCH_RE.sub(repl, template)


def _render(template: str, slots: dict) -> str:
    text = string.Template(template).substitute(slots)
    if "$" in text:
        raise ValidationError("unresolved slot in rendered template")
    return text


def quoted_in(text: str, container: str) -> bool:
    """True when `text` appears verbatim inside quotation marks."""
    return any(open_ + text + close in container for open_, close in _QUOTE_PAIRS)


@dataclass(frozen=True)
class AdversarialPlan:
    """Planner output: what to write, where, and the insertion caption."""

    image_analysis: str
    adversarial_text: str
    placement_description: str
    region_id: int
    caption: str
    revised: bool = False
    prior: Optional["AdversarialPlan"] = None

    def __post_init__(self):
        words = self.adversarial_text.split()
        if not 1 <= len(words) <= 3:
            raise ValueError(
                f"adversarial text must be 1-3 words, got {len(words)}"
            )
        for name in ("image_analysis", "placement_description", "caption"):
            if not getattr(self, name).strip():
                raise ValueError(f"plan field {name} must be nonempty")
        if self.region_id < 1:
            raise ValueError("region_id must be a positive mark id")
        if not quoted_in(self.adversarial_text, self.caption):
            raise ValueError(
                "caption must contain the adversarial text inside quotation marks"
            )

    def to_dict(self) -> dict:
        rec = {
            "image_analysis": self.image_analysis,
            "adversarial_text": self.adversarial_text,
            "placement_description": self.placement_description,
            "region_id": self.region_id,
            "caption": self.caption,
            "revised": self.revised,
            "prior": self.prior.to_dict() if self.prior is not None else None,
        }
        return rec


@dataclass(frozen=True)
class PlannerConfig:
    max_retries: int = 3
    temperature: float = 0.0
    instructions: Optional[InstructionSet] = None
    transcript_dir: Optional[str] = None

    def __post_init__(self):
        if self.max_retries < 1:
            raise ValueError("max_retries must be at least 1")

    def instruction_set(self) -> InstructionSet:
        return self.instructions or InstructionSet.bundled()


def _choices_block(sample: QASample) -> str:
    if sample.question_type != "two_choice":
        return ""
    a, b = sample.choices
    return f'The two answer choices are: "{a}" and "{b}".'


def _sample_image(sample: QASample, image: Optional[ImageBuffer]) -> ImageBuffer:
    return image if image is not None else ImageBuffer.from_file(sample.image_ref)


def build_textgen_prompt(
    sample: QASample,
    image: Optional[ImageBuffer] = None,
    instructions: Optional[InstructionSet] = None,
) -> list:
    inst = instructions or InstructionSet.bundled()
    branch = "two_choice" if sample.question_type == "two_choice" else "common_qa"
    body = _render(
        _select_branch(inst.textgen_template, branch),
        {
            "question": sample.question,
            "correct_answer": sample.correct_answer,
            "choices": _choices_block(sample),
        },
    )
    return [user_message(image_part(_sample_image(sample, image)), text_part(body))]


def _marks_list(seg_set: SegmentationSet) -> str:
    return ", ".join(str(i) for i in seg_set.mark_ids)


def build_placement_prompt(
    sample: QASample,
    seg_set: SegmentationSet,
    adv_text: str,
    image: Optional[ImageBuffer] = None,
    overlay: Optional[ImageBuffer] = None,
    instructions: Optional[InstructionSet] = None,
) -> list:
    if not seg_set.regions:
        raise ValueError("placement requires at least one region")
    inst = instructions or InstructionSet.bundled()
    img = _sample_image(sample, image)
    if overlay is None:
        overlay = render_som_overlay(img, seg_set)
    body = _render(
        inst.placement_template,
        {
            "adversarial_text": adv_text,
            "marks": _marks_list(seg_set),
            "question": sample.question,
            "correct_answer": sample.correct_answer,
        },
    )
    return [user_message(image_part(img), image_part(overlay), text_part(body))]


def build_caption_prompt(
    draft: dict, instructions: Optional[InstructionSet] = None
) -> list:
    adv = draft.get("adversarial_text", "").strip()
    placement = draft.get("placement_description", "").strip()
    if not adv or not placement:
        raise ValueError("caption stage needs adversarial_text and placement_description")
    inst = instructions or InstructionSet.bundled()
    body = _render(
        inst.caption_template,
        {"adversarial_text": adv, "placement_description": placement},
    )
    return [user_message(text_part(body))]


def build_revision_prompt(
    plan: AdversarialPlan,
    seg_set: SegmentationSet,
    image: Optional[ImageBuffer] = None,
    overlay: Optional[ImageBuffer] = None,
    instructions: Optional[InstructionSet] = None,
) -> list:
    inst = instructions or InstructionSet.bundled()
    body = _render(
        inst.revision_template,
        {
            "marks": _marks_list(seg_set),
            "prior_plan": json.dumps(plan.to_dict(), indent=2, sort_keys=True),
        },
    )
    parts = []
    if image is not None:
        parts.append(image_part(image))
    if overlay is not None:
        parts.append(image_part(overlay))
    parts.append(text_part(body))
    return [user_message(*parts)]


_KNOWN_STRING_FIELDS = ("image_analysis", "adversarial_text",
                        "placement_description", "caption")


def first_json_object(raw: str):
    """First JSON object embedded in free-form text, or None.

    Models wrap structured replies in prose and code fences; scanning for
    the first decodable '{' tolerates both.
    """
    decoder = json.JSONDecoder()
    for start in range(len(raw)):
        if raw[start] != "{":
            continue
        try:
            candidate, _ = decoder.raw_decode(raw, start)
        except ValueError:
            continue
        if isinstance(candidate, dict):
            return candidate
    return None


def parse_plan_response(raw: str, valid_marks, question_type: str) -> dict:
    """Extract and validate the first JSON object found in `raw`.

    Validation covers whichever plan fields the object carries; stage code
    decides which keys are required. `question_type` is accepted so type-
    specific rules can hang here; both types currently share the same ones.
    """
    obj = first_json_object(raw)
    if obj is None:
        raise ParseError("no parsable object in response")

    out = dict(obj)
    for name in _KNOWN_STRING_FIELDS:
        if name in out:
            if not isinstance(out[name], str) or not out[name].strip():
                raise ValidationError(f"empty field {name}")
            out[name] = out[name].strip()
    if "adversarial_text" in out:
        n_words = len(out["adversarial_text"].split())
        if n_words > 3:
            raise ValidationError("text too long: adversarial_text exceeds 3 words")
    if "region_id" in out:
        rid = out["region_id"]
        if isinstance(rid, str) and rid.strip().isdigit():
            rid = int(rid.strip())
        if isinstance(rid, bool) or not isinstance(rid, int):
            raise ValidationError(f"region_id must be an integer, got {rid!r}")
        if rid not in set(valid_marks):
            raise ValidationError(f"unknown mark: region_id {rid}")
        out["region_id"] = rid
    if "approved" in out and not isinstance(out["approved"], bool):
        raise ValidationError("approved must be a boolean")
    return out


class _StageRunner:
    """Runs one chat stage with corrective-feedback retries and a transcript."""

    def __init__(self, chat, cfg: PlannerConfig):
        self.chat = chat
        self.cfg = cfg
        self.transcript: list = []

    def run(self, stage: str, messages: list, required: tuple,
            valid_marks, question_type: str, extra_check=None) -> dict:
        feedback = None
        raw = ""
        for attempt in range(1, self.cfg.max_retries + 2):
            msgs = messages
            if feedback is not None:
                msgs = messages + [user_message(text_part(
                    f"Your previous response was rejected: {feedback} "
                    "Answer again, following the response format exactly."
                ))]
            try:
                raw = self.chat.chat(msgs, temperature=self.cfg.temperature)
            except SceneTapError as exc:
                exc.stage = stage
                raise
            entry = {"stage": stage, "attempt": attempt, "response": raw}
            try:
                draft = parse_plan_response(raw, valid_marks, question_type)
                missing = [k for k in required if k not in draft]
                if missing:
                    raise ValidationError(f"missing keys: {missing}")
                if extra_check is not None:
                    extra_check(draft)
            except (ParseError, ValidationError) as exc:
                feedback = str(exc) + "."
                entry["rejected"] = str(exc)
                self.transcript.append(entry)
                continue
            entry["accepted"] = True
            self.transcript.append(entry)
            return draft
        raise PlanningFailed(stage, raw)


def plan(
    sample: QASample,
    seg_set: SegmentationSet,
    chat,
    cfg: Optional[PlannerConfig] = None,
    image: Optional[ImageBuffer] = None,
) -> AdversarialPlan:
    """Drive the full textgen -> placement -> caption -> revision sequence."""
    cfg = cfg or PlannerConfig()
    inst = cfg.instruction_set()
    img = _sample_image(sample, image)
    overlay = render_som_overlay(img, seg_set)
    valid = set(seg_set.mark_ids)
    qtype = sample.question_type
    runner = _StageRunner(chat, cfg)

    def check_two_choice(draft):
        if qtype != "two_choice":
            return
        want = normalize_answer(sample.incorrect_choice())
        got = normalize_answer(draft["adversarial_text"])
        if got != want:
            raise ValidationError(
                f"adversarial_text must match the incorrect option {want!r}"
            )

    textgen = runner.run(
        "textgen",
        build_textgen_prompt(sample, image=img, instructions=inst),
        ("image_analysis", "adversarial_text"),
        valid, qtype, extra_check=check_two_choice,
    )
    adv_text = textgen["adversarial_text"]

    placement = runner.run(
        "placement",
        build_placement_prompt(
            sample, seg_set, adv_text, image=img, overlay=overlay, instructions=inst
        ),
        ("placement_description", "region_id"),
        valid, qtype,
    )

    def check_caption(draft):
        if not quoted_in(adv_text, draft["caption"]):
            raise ValidationError(
                "caption must contain the adversarial text inside quotation marks"
            )

    caption = runner.run(
        "caption",
        build_caption_prompt(
            {"adversarial_text": adv_text,
             "placement_description": placement["placement_description"]},
            instructions=inst,
        ),
        ("caption",),
        valid, qtype, extra_check=check_caption,
    )

    draft_plan = AdversarialPlan(
        image_analysis=textgen["image_analysis"],
        adversarial_text=adv_text,
        placement_description=placement["placement_description"],
        region_id=placement["region_id"],
        caption=caption["caption"],
        revised=False,
    )

    def check_revision(draft):
        if draft["approved"]:
            return
        missing = [k for k in ("placement_description", "region_id", "caption")
                   if k not in draft]
        if missing:
            raise ValidationError(f"missing keys: {missing}")
        if "adversarial_text" in draft and draft["adversarial_text"] != adv_text:
            raise ValidationError("revision may not change the adversarial text")
        if not quoted_in(adv_text, draft["caption"]):
            raise ValidationError(
                "caption must contain the adversarial text inside quotation marks"
            )

    revision = runner.run(
        "revision",
        build_revision_prompt(
            draft_plan, seg_set, image=img, overlay=overlay, instructions=inst
        ),
        ("approved",),
        valid, qtype, extra_check=check_revision,
    )

    if revision["approved"]:
        final = draft_plan
    else:
        final = AdversarialPlan(
            image_analysis=draft_plan.image_analysis,
            adversarial_text=adv_text,
            placement_description=revision["placement_description"],
            region_id=revision["region_id"],
            caption=revision["caption"],
            revised=True,
            prior=draft_plan,
        )

    _write_transcript(cfg, sample, runner.transcript)
    return final


def planned_text(
    sample: QASample,
    chat,
    cfg: Optional[PlannerConfig] = None,
    image: Optional[ImageBuffer] = None,
) -> str:
    """Run only the text-generation stage and return the adversarial text.

    Used by the ablation setting that plans the text but places it without
    any region analysis.
    """
    cfg = cfg or PlannerConfig()
    inst = cfg.instruction_set()
    img = _sample_image(sample, image)
    qtype = sample.question_type
    runner = _StageRunner(chat, cfg)

    def check_two_choice(draft):
        if qtype != "two_choice":
            return
        want = normalize_answer(sample.incorrect_choice())
        if normalize_answer(draft["adversarial_text"]) != want:
            raise ValidationError(
                f"adversarial_text must match the incorrect option {want!r}"
            )

    textgen = runner.run(
        "textgen",
        build_textgen_prompt(sample, image=img, instructions=inst),
        ("image_analysis", "adversarial_text"),
        set(), qtype, extra_check=check_two_choice,
    )
    return textgen["adversarial_text"]


def _write_transcript(cfg: PlannerConfig, sample: QASample, transcript: list) -> None:
    if cfg.transcript_dir is None:
        return
    directory = Path(cfg.transcript_dir)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{sample.id}.json"
    path.write_text(
        json.dumps({"sample_id": sample.id, "stages": transcript},
                   indent=2, sort_keys=True) + "\n"
    )
