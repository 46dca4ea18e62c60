import math

import numpy as np
import pytest

from scenetap.core import ImageBuffer, RectPx
from scenetap.regions import (
    ANCHOR_SEPARATION_PX,
    BinaryMask,
    Region,
    SegmentationSet,
    allocate_marks,
    export_label_map,
    filter_masks,
    largest_inscribed_rectangle,
    region_by_id,
    render_som_overlay,
)


def oracle_max_area(bits):
    """Best contained-rectangle area by row-pair column-run sweep."""
    h, w = bits.shape
    best = 0
    for y0 in range(h):
        acc = np.ones(w, dtype=bool)
        for y1 in range(y0, h):
            acc &= bits[y1]
            if not acc.any():
                break
            padded = np.concatenate(([0], acc.astype(np.int8), [0]))
            edges = np.flatnonzero(np.diff(padded))
            run = int((edges[1::2] - edges[::2]).max())
            best = max(best, run * (y1 - y0 + 1))
    return best


def oracle_best_rect(bits):
    """Exhaustive enumeration with the (area desc, y, x, w) tie-break."""
    h, w = bits.shape
    best = None
    for y0 in range(h):
        for x0 in range(w):
            width_cap = w - x0
            for y1 in range(y0, h):
                row = bits[y1, x0 : x0 + width_cap]
                run = 0
                while run < len(row) and row[run]:
                    run += 1
                width_cap = run
                if width_cap == 0:
                    break
                rh = y1 - y0 + 1
                for wd in range(1, width_cap + 1):
                    key = (-(wd * rh), y0, x0, wd)
                    if best is None or key < best:
                        best = key
    assert best is not None
    area, y, x, wd = best
    return RectPx(x, y, wd, (-area) // wd)


def random_mask(rng, max_side=32):
    h = int(rng.integers(1, max_side + 1))
    w = int(rng.integers(1, max_side + 1))
    kind = int(rng.integers(0, 3))
    if kind == 0:
        bits = rng.random((h, w)) < rng.uniform(0.2, 0.9)
    elif kind == 1:
        bits = np.zeros((h, w), dtype=bool)
        for _ in range(int(rng.integers(1, 5))):
            rw = int(rng.integers(1, w + 1))
            rh = int(rng.integers(1, h + 1))
            x = int(rng.integers(0, w - rw + 1))
            y = int(rng.integers(0, h - rh + 1))
            bits[y : y + rh, x : x + rw] = True
    else:
        yy, xx = np.mgrid[0:h, 0:w]
        bits = np.abs(xx - yy) <= int(rng.integers(1, 6))
    if not bits.any():
        bits[int(rng.integers(0, h)), int(rng.integers(0, w))] = True
    return BinaryMask(bits)


class TestLargestInscribedRectangle:
    def test_full_mask(self):
        mask = BinaryMask(np.ones((10, 10), dtype=bool))
        assert largest_inscribed_rectangle(mask) == RectPx(0, 0, 10, 10)

    def test_single_pixel(self):
        bits = np.zeros((8, 8), dtype=bool)
        bits[4, 3] = True
        assert largest_inscribed_rectangle(BinaryMask(bits)) == RectPx(3, 4, 1, 1)

    def test_empty_mask_rejected(self):
        with pytest.raises(ValueError, match="empty mask"):
            largest_inscribed_rectangle(BinaryMask(np.zeros((4, 4), dtype=bool)))

    def test_l_shape_matches_exhaustive(self):
        bits = np.zeros((8, 8), dtype=bool)
        bits[0:3, :] = True
        bits[:, 0:3] = True
        mask = BinaryMask(bits)
        got = largest_inscribed_rectangle(mask)
        assert got == oracle_best_rect(bits)
        # both arms have area 24; min-w tie-break picks the vertical arm
        assert got == RectPx(0, 0, 3, 8)

    def test_crafted_shapes_match_exhaustive(self):
        shapes = []
        u = np.zeros((10, 12), dtype=bool)
        u[:, 0:3] = True
        u[:, 9:12] = True
        u[7:10, :] = True
        shapes.append(u)
        stair = np.fromfunction(lambda y, x: x <= y, (16, 16)).astype(bool)
        shapes.append(stair)
        band = np.fromfunction(lambda y, x: abs(x - y) <= 3, (20, 20)).astype(bool)
        shapes.append(band)
        checker = np.indices((9, 9)).sum(axis=0) % 2 == 0
        shapes.append(checker)
        row = np.zeros((5, 9), dtype=bool)
        row[2] = True
        shapes.append(row)
        col = np.zeros((9, 5), dtype=bool)
        col[:, 3] = True
        shapes.append(col)
        for bits in shapes:
            got = largest_inscribed_rectangle(BinaryMask(bits))
            assert got == oracle_best_rect(bits), bits.astype(int)

    def test_random_masks_area_matches_oracle(self):
        rng = np.random.default_rng(20240917)
        for _ in range(200):
            mask = random_mask(rng)
            rect = largest_inscribed_rectangle(mask)
            assert rect.area == oracle_max_area(mask.bits)
            assert mask.covers(rect)

    def test_small_random_masks_match_full_tiebreak_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(60):
            mask = random_mask(rng, max_side=12)
            assert largest_inscribed_rectangle(mask) == oracle_best_rect(mask.bits)

    def test_result_is_maximal(self):
        rng = np.random.default_rng(99)
        for _ in range(50):
            mask = random_mask(rng, max_side=24)
            r = largest_inscribed_rectangle(mask)
            for grown in (
                RectPx(r.x - 1, r.y, r.w + 1, r.h) if r.x > 0 else None,
                RectPx(r.x, r.y - 1, r.w, r.h + 1) if r.y > 0 else None,
                RectPx(r.x, r.y, r.w + 1, r.h),
                RectPx(r.x, r.y, r.w, r.h + 1),
            ):
                if grown is not None:
                    assert not mask.covers(grown)


class TestFilterMasks:
    def test_threshold_arithmetic_640x480(self):
        size = (640, 480)
        kept_mask = BinaryMask.from_rect(640, 480, RectPx(0, 0, 60, 50))
        out = filter_masks([kept_mask], size, 12)
        assert out == [kept_mask]

        border = BinaryMask.from_rect(640, 480, RectPx(0, 0, 50, 50))
        assert filter_masks([border], size, 12) == []  # 50 < 640/12 = 53.33
        assert filter_masks([border], size, 15) == [border]  # 50 >= 42.67

    def test_both_dimensions_must_pass(self):
        size = (640, 480)
        wide_short = BinaryMask.from_rect(640, 480, RectPx(0, 0, 200, 30))
        assert filter_masks([wide_short], size, 12) == []  # 30 < 480/12 = 40

    def test_order_preserved(self):
        size = (120, 120)
        a = BinaryMask.from_rect(120, 120, RectPx(0, 0, 60, 60))
        b = BinaryMask.from_rect(120, 120, RectPx(50, 50, 40, 40))
        c = BinaryMask.from_rect(120, 120, RectPx(10, 80, 30, 30))
        assert filter_masks([a, b, c], size, 4) == [a, b, c]

    def test_dimension_mismatch_rejected(self):
        bad = BinaryMask.from_rect(100, 100, RectPx(0, 0, 10, 10))
        with pytest.raises(ValueError, match="dimensions"):
            filter_masks([bad], (120, 120), 12)

    def test_empty_mask_dropped_not_crashed(self):
        empty = BinaryMask(np.zeros((64, 64), dtype=bool))
        assert filter_masks([empty], (64, 64), 12) == []

    def test_monotone_in_denominator(self):
        rng = np.random.default_rng(31337)
        size = (64, 48)
        masks = []
        for _ in range(20):
            bits = np.zeros((48, 64), dtype=bool)
            rw = int(rng.integers(1, 64))
            rh = int(rng.integers(1, 48))
            x = int(rng.integers(0, 64 - rw + 1))
            y = int(rng.integers(0, 48 - rh + 1))
            bits[y : y + rh, x : x + rw] = True
            masks.append(BinaryMask(bits))
        denominators = [3, 4, 6, 8, 12, 15]
        for a1, a2 in zip(denominators, denominators[1:]):
            kept1 = {id(m) for m in filter_masks(masks, size, a1)}
            kept2 = {id(m) for m in filter_masks(masks, size, a2)}
            assert kept1 <= kept2


class TestAllocateMarks:
    def test_descending_area_order(self):
        big = BinaryMask.from_rect(200, 200, RectPx(100, 100, 20, 10))
        small = BinaryMask.from_rect(200, 200, RectPx(0, 0, 10, 10))
        ss = allocate_marks([small, big])
        assert ss.mark_ids == [1, 2]
        assert ss.regions[0].area == 200
        assert ss.regions[1].area == 100

    def test_area_ties_broken_by_bbox_position(self):
        upper = BinaryMask.from_rect(200, 200, RectPx(50, 10, 10, 10))
        lower = BinaryMask.from_rect(200, 200, RectPx(10, 50, 10, 10))
        ss = allocate_marks([lower, upper])
        assert ss.regions[0].bbox.y == 10
        assert ss.regions[1].bbox.y == 50

    def test_anchor_is_inscribed_center(self):
        mask = BinaryMask.from_rect(100, 100, RectPx(10, 10, 20, 10))
        ss = allocate_marks([mask])
        assert ss.regions[0].anchor == (20, 15)
        assert ss.regions[0].inscribed == RectPx(10, 10, 20, 10)

    def test_colliding_anchors_pushed_apart(self):
        # same inscribed center (25,25); the smaller region must shift +x
        a = BinaryMask.from_rect(100, 100, RectPx(10, 10, 30, 30))
        b = BinaryMask.from_rect(100, 100, RectPx(12, 10, 26, 30))
        ss = allocate_marks([a, b])
        p1 = ss.regions[0].anchor
        p2 = ss.regions[1].anchor
        assert p1 == (25, 25)
        assert math.dist(p1, p2) >= ANCHOR_SEPARATION_PX
        assert p2[1] == 25 and p2[0] > 25

    def test_exhausted_rectangle_keeps_anchor_inside(self):
        # second region too narrow to ever reach 12 px separation
        a = BinaryMask.from_rect(100, 100, RectPx(20, 20, 12, 12))
        b = BinaryMask.from_rect(100, 100, RectPx(24, 22, 5, 8))
        ss = allocate_marks([a, b])
        r2 = ss.regions[1]
        assert r2.inscribed.x <= r2.anchor[0] < r2.inscribed.x2
        assert r2.mask.bits[r2.anchor[1], r2.anchor[0]]

    def test_anchors_inside_own_masks_random(self):
        rng = np.random.default_rng(4242)
        for _ in range(20):
            masks = []
            for _ in range(int(rng.integers(1, 6))):
                rw = int(rng.integers(4, 40))
                rh = int(rng.integers(4, 40))
                x = int(rng.integers(0, 100 - rw))
                y = int(rng.integers(0, 100 - rh))
                masks.append(BinaryMask.from_rect(100, 100, RectPx(x, y, rw, rh)))
            ss = allocate_marks(masks)
            assert sorted(ss.mark_ids) == list(range(1, len(masks) + 1))
            for r in ss.regions:
                assert r.mask.bits[r.anchor[1], r.anchor[0]]
                assert r.bbox.contains(r.inscribed)

    def test_empty_list_rejected(self):
        with pytest.raises(ValueError):
            allocate_marks([])

    def test_mark_id_gap_rejected(self):
        mask = BinaryMask.from_rect(64, 64, RectPx(0, 0, 20, 20))
        region = Region(
            mark_id=2,
            mask=mask,
            area=mask.area,
            bbox=mask.bbox(),
            inscribed=RectPx(0, 0, 20, 20),
            anchor=(10, 10),
        )
        with pytest.raises(ValueError, match="1..N"):
            SegmentationSet(
                regions=(region,), image_size=(64, 64), filter_denominator=12
            )


class TestOverlayAndLookup:
    def _set(self):
        masks = [
            BinaryMask.from_rect(128, 96, RectPx(8, 8, 48, 40)),
            BinaryMask.from_rect(128, 96, RectPx(70, 50, 40, 30)),
        ]
        return allocate_marks(masks)

    def test_overlay_touches_only_near_anchors(self):
        ss = self._set()
        img = ImageBuffer(np.full((96, 128, 3), 90, np.uint8))
        out = render_som_overlay(img, ss)
        diff = np.any(out.pixels != img.pixels, axis=2)
        assert diff.any()
        ys, xs = np.nonzero(diff)
        anchors = [r.anchor for r in ss.regions]
        for x, y in zip(xs, ys):
            assert min(math.dist((x, y), a) for a in anchors) < 40

    def test_overlay_deterministic(self):
        ss = self._set()
        img = ImageBuffer(np.full((96, 128, 3), 90, np.uint8))
        a = render_som_overlay(img, ss)
        b = render_som_overlay(img, ss)
        assert a.digest() == b.digest()

    def test_overlay_dimension_mismatch(self):
        ss = self._set()
        img = ImageBuffer(np.full((64, 64, 3), 90, np.uint8))
        with pytest.raises(ValueError):
            render_som_overlay(img, ss)

    def test_region_by_id(self):
        ss = self._set()
        assert region_by_id(ss, 1).mark_id == 1
        assert region_by_id(ss, 2).mark_id == 2
        with pytest.raises(KeyError, match="mark not found"):
            region_by_id(ss, 0)
        with pytest.raises(KeyError, match="1..2"):
            region_by_id(ss, 3)


class TestLabelMapExport:
    def test_roundtrip_and_overlap_order(self, tmp_path):
        big = BinaryMask.from_rect(64, 64, RectPx(0, 0, 40, 40))
        small = BinaryMask.from_rect(64, 64, RectPx(30, 30, 20, 20))
        ss = allocate_marks([big, small])
        png = tmp_path / "labels.png"
        meta = tmp_path / "labels.json"
        export_label_map(ss, png, meta)

        from PIL import Image

        arr = np.asarray(Image.open(png))
        assert arr.dtype in (np.uint16, np.int32)
        assert arr.shape == (64, 64)
        assert arr[5, 5] == 1
        assert arr[45, 45] == 2
        assert arr[35, 35] == 2  # overlap: later (higher) mark stays visible
        assert arr[60, 5] == 0

        import json

        rec = json.loads(meta.read_text())
        assert rec["image_size"] == [64, 64]
        assert [r["mark_id"] for r in rec["regions"]] == [1, 2]
        assert rec["regions"][0]["bbox"] == {"x": 0, "y": 0, "w": 40, "h": 40}


class TestBinaryMask:
    def test_png_roundtrip(self):
        rng = np.random.default_rng(5)
        bits = rng.random((33, 47)) < 0.5
        mask = BinaryMask(bits)
        again = BinaryMask.from_png_base64(mask.to_png_base64())
        assert np.array_equal(again.bits, mask.bits)

    def test_bbox_tight(self):
        bits = np.zeros((10, 10), dtype=bool)
        bits[2, 3] = bits[7, 8] = True
        assert BinaryMask(bits).bbox() == RectPx(3, 2, 6, 6)

    def test_immutable(self):
        mask = BinaryMask(np.ones((4, 4), dtype=bool))
        with pytest.raises(ValueError):
            mask.bits[0, 0] = False
