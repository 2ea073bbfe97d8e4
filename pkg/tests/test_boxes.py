import numpy as np
import pytest
from hypothesis import given, strategies as st

from rpldet.boxes import (BBox, ClassCatalog, ClassDistribution, Dataset, Frame,
                          GroundTruthBox, ScoredBox, area, boxes_to_array, iou,
                          pairwise_iou)

from conftest import make_box, make_dist


# dyadic grid keeps every intermediate product exact, so equality-style
# properties hold without tolerance
coords = st.integers(min_value=-200, max_value=200).map(lambda k: k * 0.25)


def boxes_strategy():
    return st.tuples(coords, coords, coords, coords).map(
        lambda t: BBox(min(t[0], t[2]), min(t[1], t[3]), max(t[0], t[2]), max(t[1], t[3])))


class TestBBox:
    def test_inverted_box_rejected(self):
        with pytest.raises(ValueError):
            BBox(2, 0, 1, 5)
        with pytest.raises(ValueError):
            BBox(0, 5, 1, 0)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            BBox(0, 0, float("inf"), 1)

    def test_degenerate_allowed(self):
        b = BBox(1, 1, 1, 5)
        assert area(b) == 0.0


class TestArea:
    def test_rectangle(self):
        assert area(BBox(0, 0, 2, 3)) == 6.0

    def test_zero_width(self):
        assert area(BBox(1, 1, 1, 5)) == 0.0

    def test_square(self):
        assert area(BBox(0, 0, 10, 10)) == 100.0


class TestIoU:
    def test_identity(self):
        assert iou(BBox(0, 0, 2, 2), BBox(0, 0, 2, 2)) == 1.0

    def test_disjoint(self):
        assert iou(BBox(0, 0, 1, 1), BBox(5, 5, 6, 6)) == 0.0

    def test_partial_overlap(self):
        # intersection 1, union 4 + 4 - 1 = 7
        assert iou(BBox(0, 0, 2, 2), BBox(1, 1, 3, 3)) == pytest.approx(1 / 7, abs=1e-15)

    def test_degenerate_pair_is_zero(self):
        b = BBox(1, 1, 1, 1)
        assert iou(b, b) == 0.0

    @given(boxes_strategy(), boxes_strategy())
    def test_symmetry(self, a, b):
        assert iou(a, b) == iou(b, a)

    @given(boxes_strategy(), boxes_strategy())
    def test_range(self, a, b):
        assert 0.0 <= iou(a, b) <= 1.0

    @given(boxes_strategy())
    def test_self_iou_one_when_nondegenerate(self, a):
        if area(a) > 0:
            assert iou(a, a) == 1.0

    @given(boxes_strategy(), boxes_strategy(), coords, coords)
    def test_translation_invariance(self, a, b, tx, ty):
        shift = lambda bx: BBox(bx.x_min + tx, bx.y_min + ty, bx.x_max + tx, bx.y_max + ty)
        assert iou(shift(a), shift(b)) == iou(a, b)

    def test_pairwise_matches_scalar(self, rng):
        boxes_a = []
        boxes_b = []
        for _ in range(12):
            x1, y1 = rng.uniform(0, 10, 2)
            boxes_a.append(BBox(x1, y1, x1 + rng.uniform(0.1, 5), y1 + rng.uniform(0.1, 5)))
            x1, y1 = rng.uniform(0, 10, 2)
            boxes_b.append(BBox(x1, y1, x1 + rng.uniform(0.1, 5), y1 + rng.uniform(0.1, 5)))
        mat = pairwise_iou(boxes_a, boxes_b)
        for i, a in enumerate(boxes_a):
            for j, b in enumerate(boxes_b):
                assert mat[i, j] == iou(a, b)


class TestClassCatalog:
    def test_duplicate_names_rejected(self):
        with pytest.raises(ValueError):
            ClassCatalog(names=("car", "car"))

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            ClassCatalog(names=())

    def test_class_count(self):
        assert ClassCatalog(names=("a", "b", "c")).class_count == 3


class TestClassDistribution:
    def test_probs_must_sum_to_one(self):
        with pytest.raises(ValueError):
            ClassDistribution(probs=np.array([0.5, 0.4]), objectness=0.5)

    def test_objectness_bounds(self):
        with pytest.raises(ValueError):
            ClassDistribution(probs=np.array([1.0]), objectness=1.5)

    def test_argmax(self):
        d = make_dist([0.2, 0.7, 0.1])
        assert d.argmax_class() == 1


class TestScoredBox:
    def test_score_must_match_dist(self):
        with pytest.raises(ValueError):
            ScoredBox(box=BBox(0, 0, 1, 1), class_id=0, score=0.9,
                      dist=make_dist([0.3, 0.7]))

    def test_from_dist_uses_argmax(self):
        sb = ScoredBox.from_dist(BBox(0, 0, 1, 1), make_dist([0.3, 0.7]))
        assert sb.class_id == 1
        assert sb.score == pytest.approx(0.7)

    def test_class_id_out_of_range(self):
        with pytest.raises(ValueError):
            ScoredBox(box=BBox(0, 0, 1, 1), class_id=2, score=0.7,
                      dist=make_dist([0.3, 0.7]))


class TestFrameAndDataset:
    def test_feature_row_mismatch(self):
        sb = make_box((0, 0, 1, 1), [0.6, 0.4])
        with pytest.raises(ValueError):
            Frame(frame_id="f", boxes=(sb,), features=np.zeros((2, 4)))

    def test_duplicate_frame_ids(self):
        f = Frame(frame_id="f", boxes=(), features=np.zeros((0, 4)))
        with pytest.raises(ValueError):
            Dataset(frames=(f, f), catalog=ClassCatalog(names=("a",)))

    def test_gt_alignment(self):
        f = Frame(frame_id="f", boxes=(), features=np.zeros((0, 4)))
        cat = ClassCatalog(names=("a",))
        with pytest.raises(ValueError):
            Dataset(frames=(f,), catalog=cat,
                    ground_truth=((), (GroundTruthBox(0, BBox(0, 0, 1, 1)),)))

    def test_without_ground_truth(self):
        f = Frame(frame_id="f", boxes=(), features=np.zeros((0, 4)))
        cat = ClassCatalog(names=("a",))
        ds = Dataset(frames=(f,), catalog=cat, ground_truth=((),))
        assert ds.without_ground_truth().ground_truth is None

    def test_boxes_to_array_empty(self):
        assert boxes_to_array([]).shape == (0, 4)
