"""Deterministic in-process stand-ins for the five backend roles.

These let the full pipeline, evaluation, and study code run end to end
with zero network access and bit-reproducible outputs. Each mock mirrors
the corresponding HTTP client's call signature, so production and test
wiring differ only in construction.
"""

from __future__ import annotations

import base64
import hashlib
import json
import math
import re
from typing import Optional

import numpy as np

from .core import ImageBuffer, RectPx, normalize_answer
from .errors import CapabilityUnsupported
from .evaluation import NSCORE_KEYS
from .planner import first_json_object
from .regions import BinaryMask, largest_inscribed_rectangle
from .render import TextStyle, measure_text, render_at


class ScriptedChat:
    """Plays back a fixed queue of responses; records every call.

    Queue items that are exceptions are raised instead of returned, which
    lets tests script transport failures mid-conversation.
    """

    def __init__(self, responses):
        self._queue = list(responses)
        self.calls: list = []

    def chat(self, messages: list, temperature: float = 0.0) -> str:
        self.calls.append({"messages": messages, "temperature": temperature})
        if not self._queue:
            raise IndexError(
                f"scripted chat exhausted after {len(self.calls) - 1} replies"
            )
        item = self._queue.pop(0)
        if isinstance(item, Exception):
            raise item
        return item

    def describe(self) -> str:
        return "scripted-chat (v=test)"


def _all_text(messages: list) -> str:
    chunks = []
    for msg in messages:
        for part in msg.get("content", []):
            if part.get("type") == "text":
                chunks.append(part["text"])
    return "\n".join(chunks)


_QUESTION_RE = re.compile(r"^Question: (.*)$", re.MULTILINE)
_CORRECT_RE = re.compile(r"^Correct answer: (.*)$", re.MULTILINE)
_CHOICES_RE = re.compile(r'The two answer choices are: "(.*?)" and "(.*?)"\.')
_MARKS_RE = re.compile(r"^Marked regions available: (.*)$", re.MULTILINE)
_CAPTION_TEXT_RE = re.compile(r'The caption must contain the exact text "(.*?)"')


class RuleBasedPlanner:
    """Chat mock that answers the four planning stages from prompt content.

    Stage detection keys off each stage's response-format wording, and the
    replies are built from fields parsed back out of the instruction text,
    so the mock stays honest: it only knows what the prompt actually says.
    """

    DEFAULT_TEXTTYPE_WORDS = {
        (False, False): "Jessica",
        (False, True): "Bench",
        (True, False): "Tattoo",
        (True, True): "Bracelet",
    }

    def __init__(
        self,
        default_text: str = "banana",
        text_for: Optional[dict] = None,
        region_for: Optional[dict] = None,
        revise_for: Optional[dict] = None,
        fail_times: Optional[dict] = None,
        texttype_words: Optional[dict] = None,
    ):
        self.default_text = default_text
        self.text_for = dict(text_for or {})
        self.region_for = dict(region_for or {})
        self.revise_for = dict(revise_for or {})
        self._fail_remaining = dict(fail_times or {})
        self.texttype_words = dict(texttype_words or self.DEFAULT_TEXTTYPE_WORDS)
        self.calls: list = []

    def describe(self) -> str:
        return "rule-planner (v=test)"

    def chat(self, messages: list, temperature: float = 0.0) -> str:
        text = _all_text(messages)
        stage = self._detect_stage(text)
        self.calls.append(stage)
        if self._fail_remaining.get(stage, 0) > 0:
            self._fail_remaining[stage] -= 1
            return "Happy to help! The plan sounds good to me."
        reply = getattr(self, f"_reply_{stage}")(text)
        if stage == "naive":
            return reply  # bare text by contract, not JSON
        return "Here is the result:\n" + json.dumps(reply, sort_keys=True)

    @staticmethod
    def _detect_stage(text: str) -> str:
        if '"adversarial_text": the adversarial text' in text:
            return "textgen"
        if '"placement_description": a short phrase' in text:
            return "placement"
        if '"caption": the one-sentence caption' in text:
            return "caption"
        if "Review the plan" in text:
            return "revision"
        if "Give one incorrect answer to the question" in text:
            return "naive"
        if '"text": the chosen word' in text:
            return "texttype"
        raise AssertionError("prompt does not match any known stage")

    def _reply_textgen(self, text: str) -> dict:
        question = _QUESTION_RE.search(text).group(1)
        choices = _CHOICES_RE.search(text)
        if choices:
            correct = _CORRECT_RE.search(text).group(1)
            pair = [choices.group(1), choices.group(2)]
            adv = next(c for c in pair
                       if normalize_answer(c) != normalize_answer(correct))
        else:
            adv = self.default_text
            for key, value in self.text_for.items():
                if key in question:
                    adv = value
                    break
        return {
            "image_analysis": f"A scene relevant to: {question}",
            "adversarial_text": adv,
        }

    def _reply_placement(self, text: str) -> dict:
        marks = [int(m) for m in _MARKS_RE.search(text).group(1).split(", ")]
        adv = re.search(
            r'The adversarial text to insert into the scene is: "(.*?)"', text
        ).group(1)
        rid = self.region_for.get(adv, marks[0])
        return {
            "placement_description": f"on marked region {rid}",
            "region_id": rid,
        }

    def _reply_caption(self, text: str) -> dict:
        adv = _CAPTION_TEXT_RE.search(text).group(1)
        return {"caption": f'The word "{adv}" is written on the chosen surface.'}

    def _reply_texttype(self, text: str) -> dict:
        qr = "must be a plausible answer to the question" in text
        cr = "must name something that belongs in this scene" in text
        return {"text": self.texttype_words[(qr, cr)]}

    def _reply_naive(self, text: str) -> str:
        question = _QUESTION_RE.search(text).group(1)
        correct = _CORRECT_RE.search(text).group(1)
        answer = self.default_text
        for key, value in self.text_for.items():
            if key in question:
                answer = value
                break
        if normalize_answer(answer) == normalize_answer(correct):
            answer = self.default_text
        return answer

    def _reply_revision(self, text: str) -> dict:
        prior = first_json_object(text)
        adv = prior["adversarial_text"]
        replacement = self.revise_for.get(adv)
        if replacement is None:
            return {"approved": True}
        out = {"approved": False}
        out.update(replacement)
        out.setdefault("caption", f'The word "{adv}" appears near the target.')
        return out


class FixtureSegmenter:
    """Returns masks built from fractional rectangles of the image size."""

    def __init__(self, rect_fracs):
        # each entry: (fx, fy, fw, fh) in [0, 1]
        self.rect_fracs = list(rect_fracs)

    def describe(self) -> str:
        return "mock-segment (v=fix-1)"

    def segment(self, image: ImageBuffer) -> list:
        masks = []
        for fx, fy, fw, fh in self.rect_fracs:
            rect = RectPx(
                x=int(round(fx * image.width)),
                y=int(round(fy * image.height)),
                w=max(1, int(round(fw * image.width))),
                h=max(1, int(round(fh * image.height))),
            )
            masks.append(BinaryMask.from_rect(image.width, image.height, rect))
        return masks


class MockInpainter:
    """Paints the text into the largest rectangle inscribed in the mask.

    The glyph height is the largest that fits the rectangle (floor 8), so
    bigger regions get bigger text, mirroring how a real inpainter scales
    insertions to the surface.
    """

    def __init__(self, style: Optional[TextStyle] = None):
        self.style = style

    def describe(self) -> str:
        return "mock-inpaint (v=1)"

    def inpaint(
        self, image: ImageBuffer, mask: BinaryMask, prompt: str, text: str
    ) -> ImageBuffer:
        if (mask.width, mask.height) != (image.width, image.height):
            raise ValueError("mask dimensions must match the image")
        rect = largest_inscribed_rectangle(mask)
        style = self.style or self._fit_style(rect, text)
        tw, th = measure_text(text, style)
        anchor = (rect.x + max(0, (rect.w - tw) // 2),
                  rect.y + max(0, (rect.h - th) // 2))
        attacked = render_at(image, text, anchor, style)
        return attacked.image

    @staticmethod
    def _fit_style(rect: RectPx, text: str) -> TextStyle:
        for g in range(max(8, rect.h), 7, -1):
            style = TextStyle(glyph_height=g)
            tw, th = measure_text(text, style)
            if tw <= rect.w and th <= rect.h:
                return style
        return TextStyle(glyph_height=8)


class HotspotScorer:
    """Candidate scorer whose preference peaks at a planted hotspot.

    The rendered text's location is recovered as the top-left corner of the
    pixel diff against the clean image. With distance d to the hotspot the
    first candidate scores 0.5 + delta/2 and every other candidate
    0.5 - delta/2, where delta = exp(-d^2 / (2 sigma^2)); the first-vs-
    second score gap is therefore exactly delta, a closed form tests can
    check to tight tolerance.
    """

    def __init__(self, clean: ImageBuffer, hotspot, sigma: float = 25.0):
        self.clean = clean
        self.hotspot = (int(hotspot[0]), int(hotspot[1]))
        self.sigma = float(sigma)

    def describe(self) -> str:
        return "hotspot-scorer (v=1)"

    def delta_at(self, anchor) -> float:
        d2 = (anchor[0] - self.hotspot[0]) ** 2 + (anchor[1] - self.hotspot[1]) ** 2
        return math.exp(-d2 / (2.0 * self.sigma**2))

    def _recover_anchor(self, image: ImageBuffer):
        if image.size != self.clean.size:
            raise ValueError("scored image size differs from the clean image")
        changed = np.any(image.pixels != self.clean.pixels, axis=2)
        ys, xs = np.nonzero(changed)
        if len(xs) == 0:
            return None
        return (int(xs.min()), int(ys.min()))

    def score_candidates(self, req) -> list:
        anchor = self._recover_anchor(req.image)
        delta = 0.0 if anchor is None else self.delta_at(anchor)
        scores = [0.5 + delta / 2.0]
        scores.extend(0.5 - delta / 2.0 for _ in req.candidates[1:])
        return scores


class LookupTarget:
    """Answers from a (image digest, question) table; no scoring support."""

    def __init__(self, answers: dict, default: str = "I cannot tell."):
        self.answers = dict(answers)
        self.default = default
        self.calls: list = []

    def describe(self) -> str:
        return "lookup-target (v=1)"

    def answer(self, image: ImageBuffer, question: str, choices=None) -> str:
        self.calls.append((image.digest(), question))
        return self.answers.get((image.digest(), question), self.default)

    def score_candidates(self, req):
        raise CapabilityUnsupported("this target does not expose scoring")


class FlipTarget:
    """Answers correctly on known clean images, flips on listed questions.

    Any image whose digest is not in `clean_digests` counts as attacked;
    questions in `flip` then get the flipped answer, everything else stays
    correct. This gives evaluation tests exact control over the ASR.
    """

    def __init__(self, correct: dict, flip: dict, clean_digests):
        self.correct = dict(correct)
        self.flip = dict(flip)
        self.clean_digests = set(clean_digests)

    def describe(self) -> str:
        return "flip-target (v=1)"

    def answer(self, image: ImageBuffer, question: str, choices=None) -> str:
        if image.digest() not in self.clean_digests and question in self.flip:
            return self.flip[question]
        return self.correct[question]

    def score_candidates(self, req):
        raise CapabilityUnsupported("this target does not expose scoring")


class DigestNaturalnessJudge:
    """Chat mock whose ten criterion booleans derive from the image digest.

    The low bit of each of the first ten hex digits of the attached PNG's
    sha256 drives one criterion, so every image gets a stable, arbitrary
    judgment without any model in the loop.
    """

    def __init__(self):
        self.calls = 0

    def describe(self) -> str:
        return "digest-judge (v=1)"

    def chat(self, messages: list, temperature: float = 0.0) -> str:
        self.calls += 1
        payload = None
        for msg in messages:
            for part in msg.get("content", []):
                if part.get("type") == "image_url":
                    url = part["image_url"]["url"]
                    payload = url.split("base64,", 1)[1]
        if payload is None:
            raise AssertionError("naturalness prompt carries no image")
        digest = hashlib.sha256(base64.b64decode(payload)).hexdigest()
        bits = {k: bool(int(digest[i], 16) & 1) for i, k in enumerate(NSCORE_KEYS)}
        return json.dumps(bits, sort_keys=True)
