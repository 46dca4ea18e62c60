"""Planning stage prompts, parsing, retries, and plan assembly."""

import json

import numpy as np
import pytest

from scenetap.core import ImageBuffer, QASample
from scenetap.errors import ParseError, PlanningFailed, ValidationError
from scenetap.mocks import RuleBasedPlanner, ScriptedChat
from scenetap.planner import (
    AdversarialPlan,
    InstructionSet,
    PlannerConfig,
    build_caption_prompt,
    build_placement_prompt,
    build_revision_prompt,
    build_textgen_prompt,
    first_json_object,
    parse_plan_response,
    plan,
    planned_text,
    quoted_in,
)
from scenetap.regions import BinaryMask, allocate_marks
from scenetap.core import RectPx


def scene():
    return ImageBuffer(np.full((240, 320, 3), 128, np.uint8))


def seg_fixture():
    masks = [
        BinaryMask.from_rect(320, 240, RectPx(30, 20, 130, 120)),
        BinaryMask.from_rect(320, 240, RectPx(180, 90, 100, 100)),
    ]
    return allocate_marks(masks)


def towel_sample():
    return QASample(
        id="towel-1", image_ref="mem", question="What color is the towel?",
        question_type="two_choice", choices=("gray", "white"),
        correct_answer="white", source_dataset="typod",
    )


def fridge_sample():
    return QASample(
        id="fridge-1", image_ref="mem",
        question="What food item is on the top shelf?",
        question_type="open_ended", choices=None,
        correct_answer="milk", source_dataset="vqav2",
    )


def msg_text(messages):
    return "\n".join(
        part["text"]
        for msg in messages
        for part in msg["content"]
        if part["type"] == "text"
    )


GOOD_TEXTGEN = json.dumps(
    {"image_analysis": "A bathroom scene", "adversarial_text": "gray"}
)
GOOD_PLACEMENT = json.dumps(
    {"placement_description": "on the wall tiles", "region_id": 2}
)
GOOD_CAPTION = json.dumps(
    {"caption": 'The word "gray" is painted on the wall tiles.'}
)
APPROVE = json.dumps({"approved": True})


class TestInstructionAssets:
    def test_bundled_templates_load(self):
        inst = InstructionSet.bundled()
        assert inst.version == "v1"
        for template in (inst.textgen_template, inst.placement_template,
                         inst.caption_template, inst.revision_template):
            assert template.strip()

    def test_textgen_branches_differ_by_question_type(self):
        two_choice = msg_text(build_textgen_prompt(towel_sample(), image=scene()))
        open_ended = msg_text(build_textgen_prompt(fridge_sample(), image=scene()))
        assert 'The two answer choices are: "gray" and "white".' in two_choice
        assert "answer choices" not in open_ended
        assert two_choice != open_ended
        for text in (two_choice, open_ended):
            assert "[branch:" not in text
            assert "$" not in text

    def test_textgen_embeds_question_and_answer(self):
        text = msg_text(build_textgen_prompt(towel_sample(), image=scene()))
        assert "Question: What color is the towel?" in text
        assert "Correct answer: white" in text

    def test_placement_prompt_lists_marks_and_two_images(self):
        messages = build_placement_prompt(
            towel_sample(), seg_fixture(), "gray", image=scene()
        )
        parts = messages[0]["content"]
        kinds = [p["type"] for p in parts]
        assert kinds.count("image_url") == 2
        text = msg_text(messages)
        assert "Marked regions available: 1, 2" in text
        assert 'The adversarial text to insert into the scene is: "gray"' in text

    def test_caption_prompt_requires_draft_fields(self):
        draft = {"adversarial_text": "gray",
                 "placement_description": "on the wall"}
        text = msg_text(build_caption_prompt(draft))
        assert 'exact text "gray"' in text
        with pytest.raises(ValueError):
            build_caption_prompt({"adversarial_text": "gray"})

    def test_revision_prompt_embeds_prior_plan(self):
        prior = AdversarialPlan(
            image_analysis="A bathroom scene", adversarial_text="gray",
            placement_description="on the wall tiles", region_id=2,
            caption='The word "gray" is painted on the wall tiles.',
        )
        text = msg_text(build_revision_prompt(prior, seg_fixture(), image=scene()))
        assert "The adversarial text may not be changed." in text
        embedded = first_json_object(text)
        assert embedded["adversarial_text"] == "gray"
        assert embedded["region_id"] == 2


class TestParsePlanResponse:
    def test_prose_wrapped_object_is_found(self):
        raw = 'Sure thing!\n```json\n{"adversarial_text": "gray"}\n```\nDone.'
        assert parse_plan_response(raw, [1, 2], "two_choice") == {
            "adversarial_text": "gray"
        }

    def test_no_object_is_parse_error(self):
        with pytest.raises(ParseError, match="no parsable object"):
            parse_plan_response("I like the wall.", [1, 2], "two_choice")

    def test_five_word_text_rejected(self):
        raw = json.dumps({"adversarial_text": "a very long phrase here"})
        with pytest.raises(ValidationError, match="text too long"):
            parse_plan_response(raw, [1, 2], "two_choice")

    def test_unknown_mark_rejected(self):
        raw = json.dumps({"region_id": 99})
        with pytest.raises(ValidationError, match="unknown mark: region_id 99"):
            parse_plan_response(raw, [1, 2], "two_choice")

    def test_numeric_string_region_is_coerced(self):
        raw = json.dumps({"region_id": "2"})
        assert parse_plan_response(raw, [1, 2], "two_choice")["region_id"] == 2

    def test_boolean_region_rejected(self):
        raw = json.dumps({"region_id": True})
        with pytest.raises(ValidationError, match="region_id must be an integer"):
            parse_plan_response(raw, [1, 2], "two_choice")

    def test_blank_field_rejected(self):
        raw = json.dumps({"caption": "   "})
        with pytest.raises(ValidationError, match="empty field caption"):
            parse_plan_response(raw, [1, 2], "two_choice")


class TestQuotedIn:
    def test_straight_and_curly_quotes(self):
        assert quoted_in("gray", 'The word "gray" appears.')
        assert quoted_in("gray", "The word “gray” appears.")
        assert quoted_in("gray", "The word 'gray' appears.")
        assert not quoted_in("gray", "The word gray appears unquoted.")


class TestPlanAssembly:
    def test_happy_path_approved(self):
        chat = ScriptedChat([GOOD_TEXTGEN, GOOD_PLACEMENT, GOOD_CAPTION, APPROVE])
        result = plan(towel_sample(), seg_fixture(), chat, image=scene())
        assert result.adversarial_text == "gray"
        assert result.region_id == 2
        assert result.revised is False and result.prior is None
        assert quoted_in("gray", result.caption)
        assert len(chat.calls) == 4
        assert all(c["temperature"] == 0.0 for c in chat.calls)

    def test_revision_replacement_links_prior(self):
        replace = json.dumps({
            "approved": False,
            "placement_description": "on the towel itself",
            "region_id": 1,
            "caption": 'The word "gray" is stitched on the towel.',
        })
        chat = ScriptedChat([GOOD_TEXTGEN, GOOD_PLACEMENT, GOOD_CAPTION, replace])
        result = plan(towel_sample(), seg_fixture(), chat, image=scene())
        assert result.revised is True
        assert result.region_id == 1
        assert result.prior is not None and result.prior.region_id == 2
        assert result.adversarial_text == result.prior.adversarial_text

    def test_two_choice_text_must_match_incorrect_option(self):
        wrong = json.dumps(
            {"image_analysis": "A bathroom", "adversarial_text": "white"}
        )
        chat = ScriptedChat([wrong, GOOD_TEXTGEN, GOOD_PLACEMENT,
                             GOOD_CAPTION, APPROVE])
        result = plan(towel_sample(), seg_fixture(), chat, image=scene())
        assert result.adversarial_text == "gray"
        assert len(chat.calls) == 5
        retry_messages = chat.calls[1]["messages"]
        assert "rejected" in msg_text(retry_messages)

    def test_caption_without_quoted_text_is_retried(self):
        bad = json.dumps({"caption": "Some text is painted on the wall."})
        chat = ScriptedChat([GOOD_TEXTGEN, GOOD_PLACEMENT, bad,
                             GOOD_CAPTION, APPROVE])
        result = plan(towel_sample(), seg_fixture(), chat, image=scene())
        assert quoted_in("gray", result.caption)
        assert len(chat.calls) == 5

    def test_revision_may_not_change_text(self):
        mutiny = json.dumps({
            "approved": False,
            "placement_description": "anywhere",
            "region_id": 1,
            "caption": 'The word "teal" is painted on the wall.',
            "adversarial_text": "teal",
        })
        cfg = PlannerConfig(max_retries=1)
        chat = ScriptedChat([GOOD_TEXTGEN, GOOD_PLACEMENT, GOOD_CAPTION,
                             mutiny, mutiny])
        with pytest.raises(PlanningFailed) as exc_info:
            plan(towel_sample(), seg_fixture(), chat, cfg=cfg, image=scene())
        assert exc_info.value.stage == "revision"

    def test_persistent_garbage_fails_with_stage(self):
        cfg = PlannerConfig(max_retries=2)
        chat = ScriptedChat([GOOD_TEXTGEN] + ["no json here"] * 3)
        with pytest.raises(PlanningFailed) as exc_info:
            plan(towel_sample(), seg_fixture(), chat, cfg=cfg, image=scene())
        assert exc_info.value.stage == "placement"
        assert exc_info.value.last_raw == "no json here"

    def test_transcript_written_with_rejections(self, tmp_path):
        cfg = PlannerConfig(transcript_dir=tmp_path)
        chat = ScriptedChat(["garbage", GOOD_TEXTGEN, GOOD_PLACEMENT,
                             GOOD_CAPTION, APPROVE])
        plan(towel_sample(), seg_fixture(), chat, cfg=cfg, image=scene())
        record = json.loads((tmp_path / "towel-1.json").read_text())
        assert record["sample_id"] == "towel-1"
        stages = [e["stage"] for e in record["stages"]]
        assert stages == ["textgen", "textgen", "placement", "caption", "revision"]
        assert "rejected" in record["stages"][0]
        assert "accepted" in record["stages"][1]

    def test_open_ended_planned_text_single_call(self):
        reply = json.dumps(
            {"image_analysis": "A fridge interior", "adversarial_text": "veggies"}
        )
        chat = ScriptedChat([reply])
        text = planned_text(fridge_sample(), chat, image=scene())
        assert text == "veggies"
        assert len(chat.calls) == 1

    def test_rule_based_full_plan_for_open_ended(self):
        chat = RuleBasedPlanner(text_for={"top shelf": "veggies"})
        result = plan(fridge_sample(), seg_fixture(), chat, image=scene())
        assert result.adversarial_text == "veggies"
        assert quoted_in("veggies", result.caption)
        assert result.region_id in (1, 2)

    def test_three_runs_are_byte_identical(self):
        dumps = []
        for _ in range(3):
            chat = RuleBasedPlanner(
                text_for={"top shelf": "veggies"},
                revise_for={"veggies": {
                    "placement_description": "on the fridge door",
                    "region_id": 2,
                }},
            )
            result = plan(fridge_sample(), seg_fixture(), chat, image=scene())
            dumps.append(json.dumps(result.to_dict(), sort_keys=True))
        assert dumps[0] == dumps[1] == dumps[2]
        assert json.loads(dumps[0])["revised"] is True

    def test_plan_to_dict_roundtrips_prior(self):
        chat = RuleBasedPlanner(
            revise_for={"banana": {"placement_description": "moved",
                                   "region_id": 2}},
        )
        result = plan(fridge_sample(), seg_fixture(), chat, image=scene())
        record = result.to_dict()
        assert record["prior"]["region_id"] == 1
        assert record["prior"]["prior"] is None
