import json
import random
import string

import numpy as np
import pytest
from PIL import Image

from scenetap.core import (
    AttackedImage,
    AttackSpec,
    ImageBuffer,
    QASample,
    RectPx,
    dump_manifest,
    load_manifest,
    normalize_answer,
)
from scenetap.errors import ManifestError


class TestNormalizeAnswer:
    def test_examples(self):
        assert normalize_answer("  Proceed. ") == "proceed"
        assert normalize_answer("Garter Snake") == "garter snake"
        assert normalize_answer("") == ""

    def test_unicode_punctuation_removed(self):
        assert normalize_answer("don’t stop…") == "dont stop"
        assert normalize_answer("half-open") == "halfopen"

    def test_whitespace_collapsed(self):
        assert normalize_answer("a \t b\n\nc") == "a b c"

    def test_idempotent_random(self):
        rng = random.Random(123)
        alphabet = string.ascii_letters + string.digits + string.punctuation + "  \t’"
        for _ in range(300):
            s = "".join(rng.choice(alphabet) for _ in range(rng.randrange(0, 30)))
            once = normalize_answer(s)
            assert normalize_answer(once) == once


class TestRectPx:
    def test_degenerate_rejected(self):
        with pytest.raises(ValueError):
            RectPx(0, 0, 0, 5)

    def test_geometry_helpers(self):
        r = RectPx(10, 20, 30, 40)
        assert (r.x2, r.y2, r.area) == (40, 60, 1200)
        assert r.center() == (25, 40)
        assert r.inside(40, 60)
        assert not r.inside(39, 60)
        assert r.contains(RectPx(10, 20, 1, 1))
        assert not r.contains(RectPx(9, 20, 2, 2))

    def test_dilate_clamps(self):
        r = RectPx(40, 45, 20, 10)
        assert r.dilate(10, 100, 100) == RectPx(30, 35, 40, 30)
        edge = RectPx(0, 0, 10, 10)
        assert edge.dilate(5, 100, 100) == RectPx(0, 0, 15, 15)

    def test_dict_roundtrip(self):
        r = RectPx(1, 2, 3, 4)
        assert RectPx.from_dict(r.to_dict()) == r


class TestImageBuffer:
    def test_min_side_enforced(self):
        with pytest.raises(ValueError, match="64"):
            ImageBuffer(np.zeros((63, 64, 3), np.uint8))

    def test_png_roundtrip_lossless(self):
        rng = np.random.default_rng(11)
        for _ in range(5):
            img = ImageBuffer(rng.integers(0, 256, (70, 90, 3), dtype=np.uint8))
            again = ImageBuffer.from_png_bytes(img.to_png_bytes())
            assert again.pixel_equal(img)
            assert again.digest() == img.digest()

    def test_base64_roundtrip(self):
        img = ImageBuffer(np.full((64, 64, 3), 7, np.uint8))
        assert ImageBuffer.from_png_base64(img.to_png_base64()).pixel_equal(img)

    def test_alpha_dropped(self):
        rgba = Image.new("RGBA", (64, 64), (10, 20, 30, 128))
        img = ImageBuffer.from_pil(rgba)
        assert (img.pixels == np.array([10, 20, 30])).all()

    def test_pixels_frozen(self):
        img = ImageBuffer(np.zeros((64, 64, 3), np.uint8))
        with pytest.raises(ValueError):
            img.pixels[0, 0, 0] = 1

    def test_file_roundtrip(self, tmp_path):
        rng = np.random.default_rng(2)
        img = ImageBuffer(rng.integers(0, 256, (64, 64, 3), dtype=np.uint8))
        p = tmp_path / "img.png"
        img.to_file(p)
        assert ImageBuffer.from_file(p).pixel_equal(img)


def two_choice_sample(**over):
    base = dict(
        id="s1",
        image_ref="img/s1.png",
        question="Is the light red or green?",
        question_type="two_choice",
        correct_answer="green",
        choices=("red", "green"),
        source_dataset="custom",
    )
    base.update(over)
    return QASample(**base)


class TestQASample:
    def test_two_choice_requires_matching_correct(self):
        with pytest.raises(ValueError, match="exactly one choice"):
            two_choice_sample(correct_answer="blue")

    def test_two_choice_rejects_both_matching(self):
        with pytest.raises(ValueError, match="exactly one choice"):
            two_choice_sample(choices=("Green", "green!"))

    def test_normalized_match_accepted(self):
        s = two_choice_sample(correct_answer="  Green. ")
        assert s.incorrect_choice() == "red"

    def test_open_ended_rejects_choices(self):
        with pytest.raises(ValueError, match="choices"):
            QASample(
                id="s2",
                image_ref="x.png",
                question="What color?",
                question_type="open_ended",
                correct_answer="green",
                choices=("a", "b"),
            )

    def test_incorrect_choice_open_ended_rejected(self):
        s = QASample(
            id="s3",
            image_ref="x.png",
            question="What color?",
            question_type="open_ended",
            correct_answer="green",
        )
        with pytest.raises(ValueError):
            s.incorrect_choice()

    def test_record_roundtrip(self):
        s = two_choice_sample(task_tag="enumeration", source_dataset="typod")
        assert QASample.from_record(s.to_record()) == s

    def test_record_roundtrip_open_ended(self):
        s = QASample(
            id="s4",
            image_ref="y.png",
            question="How many?",
            question_type="open_ended",
            correct_answer="three",
            source_dataset="vqav2",
        )
        assert QASample.from_record(s.to_record()) == s


class TestManifest:
    def _write(self, tmp_path, lines):
        p = tmp_path / "m.jsonl"
        p.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return p

    def test_two_records_in_order(self, tmp_path):
        recs = [
            two_choice_sample(id="a").to_record(),
            two_choice_sample(id="b").to_record(),
        ]
        p = self._write(tmp_path, [json.dumps(r) for r in recs])
        samples = load_manifest(p)
        assert [s.id for s in samples] == ["a", "b"]

    def test_empty_file(self, tmp_path):
        p = tmp_path / "m.jsonl"
        p.write_text("")
        assert load_manifest(p) == []

    def test_blank_lines_skipped(self, tmp_path):
        rec = json.dumps(two_choice_sample().to_record())
        p = self._write(tmp_path, [rec, "", "   "])
        assert len(load_manifest(p)) == 1

    def test_malformed_line_names_line_number(self, tmp_path):
        rec = json.dumps(two_choice_sample().to_record())
        p = self._write(tmp_path, [rec, "{not json"])
        with pytest.raises(ManifestError) as exc:
            load_manifest(p)
        assert exc.value.line_no == 2

    def test_missing_choices_flagged(self, tmp_path):
        rec = two_choice_sample().to_record()
        del rec["choices"]
        p = self._write(tmp_path, [json.dumps(rec)])
        with pytest.raises(ManifestError) as exc:
            load_manifest(p)
        assert exc.value.line_no == 1

    def test_correct_answer_matches_neither_choice(self, tmp_path):
        rec = two_choice_sample().to_record()
        rec["correct_answer"] = "blue"
        p = self._write(tmp_path, [json.dumps(rec)])
        with pytest.raises(ManifestError, match="exactly one choice"):
            load_manifest(p)

    def test_duplicate_id_flagged(self, tmp_path):
        rec = json.dumps(two_choice_sample().to_record())
        p = self._write(tmp_path, [rec, rec])
        with pytest.raises(ManifestError, match="duplicate id"):
            load_manifest(p)

    def test_dump_load_roundtrip(self, tmp_path):
        samples = [
            two_choice_sample(id="a"),
            QASample(
                id="b",
                image_ref="b.png",
                question="How many cars?",
                question_type="open_ended",
                correct_answer="two",
                source_dataset="lingoqa",
                task_tag="enumeration",
            ),
        ]
        p = tmp_path / "out.jsonl"
        dump_manifest(samples, p)
        assert load_manifest(p) == samples


class TestAttackSpec:
    def test_method_requirements(self):
        with pytest.raises(ValueError, match="anchor"):
            AttackSpec(method="grid_point", text="x")
        with pytest.raises(ValueError, match="region_id"):
            AttackSpec(method="scenetap", text="x")
        with pytest.raises(ValueError, match="nonempty"):
            AttackSpec(method="center", text="")
        with pytest.raises(ValueError, match="unknown attack method"):
            AttackSpec(method="teleport", text="x")

    def test_valid_specs(self):
        AttackSpec(method="center", text="gray", text_source="fixed_option")
        AttackSpec(method="scenetap", text="veggies", region_id=3)
        AttackSpec(method="grid_point", text="t", anchor=(10, 10))


class TestAttackedImage:
    def test_provenance_required(self):
        img = ImageBuffer(np.zeros((64, 64, 3), np.uint8))
        spec = AttackSpec(method="center", text="x", text_source="fixed_option")
        with pytest.raises(ValueError, match="provenance"):
            AttackedImage(image=img, spec=spec, provenance={})

    def test_provenance_record_shape(self):
        img = ImageBuffer(np.zeros((64, 64, 3), np.uint8))
        spec = AttackSpec(method="center", text="x", text_source="fixed_option")
        att = AttackedImage(
            image=img,
            spec=spec,
            provenance={"renderer": "bitmap"},
            changed_bbox=RectPx(1, 2, 3, 4),
        )
        rec = att.provenance_record()
        assert rec["spec"]["method"] == "center"
        assert rec["changed_bbox"] == {"x": 1, "y": 2, "w": 3, "h": 4}
        assert "plan" not in rec
