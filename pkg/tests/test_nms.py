import numpy as np
import pytest

from rpldet.boxes import BBox
from rpldet.nms import PseudoBox, group_nms, mean_iou

from conftest import make_box, random_boxes, score_vector
from oracles import ref_group_nms


def boxes_abc():
    probs = lambda s: score_vector(s, 0, 2)
    a = make_box((0, 0, 10, 10), probs(0.9), proposal_index=0)
    b = make_box((1, 1, 11, 11), probs(0.8), proposal_index=1)
    c = make_box((20, 20, 30, 30), probs(0.7), proposal_index=2)
    return [a, b, c]


class TestGroupNms:
    def test_worked_example(self):
        out = group_nms(boxes_abc(), 0.5)
        assert len(out) == 2
        first, second = out
        assert first.survivor.proposal_index == 0
        assert [s.proposal_index for s in first.suppressed] == [1]
        assert first.mean_iou == pytest.approx(81 / 119, abs=1e-12)
        assert second.survivor.proposal_index == 2
        assert second.suppressed == ()
        assert second.mean_iou == 1.0

    def test_single_box(self):
        out = group_nms(boxes_abc()[:1], 0.5)
        assert len(out) == 1
        assert out[0].suppressed == ()

    def test_identical_boxes_different_classes_both_survive(self):
        a = make_box((0, 0, 5, 5), [0.8, 0.2])
        b = make_box((0, 0, 5, 5), [0.2, 0.8])
        out = group_nms([a, b], 0.5)
        assert len(out) == 2
        assert all(pb.suppressed == () for pb in out)

    def test_empty_input(self):
        assert group_nms([], 0.5) == []

    def test_threshold_bounds(self):
        with pytest.raises(ValueError):
            group_nms(boxes_abc(), 0.0)
        with pytest.raises(ValueError):
            group_nms(boxes_abc(), 1.0)

    def test_output_sorted_by_descending_score(self, rng):
        for _ in range(20):
            out = group_nms(random_boxes(rng, 10), 0.5)
            scores = [pb.survivor.score for pb in out]
            assert scores == sorted(scores, reverse=True)

    def test_score_ties_lower_index_first(self):
        probs = score_vector(0.8, 0, 2)
        a = make_box((0, 0, 10, 10), probs, proposal_index=0)
        b = make_box((0.5, 0.5, 10.5, 10.5), probs, proposal_index=1)
        out = group_nms([a, b], 0.5)
        assert len(out) == 1
        assert out[0].survivor.proposal_index == 0

    def test_partition_property(self, rng):
        for _ in range(50):
            boxes = random_boxes(rng, int(rng.integers(1, 12)))
            out = group_nms(boxes, 0.5)
            seen = [pb.survivor.proposal_index for pb in out]
            seen += [s.proposal_index for pb in out for s in pb.suppressed]
            assert sorted(seen) == list(range(len(boxes)))

    def test_threshold_monotonicity(self, rng):
        for _ in range(30):
            boxes = random_boxes(rng, 10)
            counts = [len(group_nms(boxes, t)) for t in (0.2, 0.5, 0.8)]
            assert counts == sorted(counts)

    def test_mean_iou_in_unit_interval(self, rng):
        for _ in range(30):
            for pb in group_nms(random_boxes(rng, 10), 0.5):
                assert 0.0 < pb.mean_iou <= 1.0

    def test_lone_box_default_configurable(self):
        c = make_box((20, 20, 30, 30), score_vector(0.7, 0, 2))
        out = group_nms([c], 0.5, lone_box_mean_iou=0.0)
        assert out[0].mean_iou == 0.0

    def test_oracle_equivalence_small_sweep(self, rng):
        for _ in range(300):
            n = int(rng.integers(1, 11))
            boxes = random_boxes(rng, n, class_count=3, extent=12.0, max_size=6.0)
            got = group_nms(boxes, 0.5)
            want = ref_group_nms([b.box.as_tuple() for b in boxes],
                                 [b.score for b in boxes],
                                 [b.class_id for b in boxes], 0.5)
            assert len(got) == len(want)
            for pb, (si, group, m) in zip(got, want):
                assert pb.survivor.proposal_index == si
                assert sorted(s.proposal_index for s in pb.suppressed) == sorted(group)
                assert pb.mean_iou == pytest.approx(m, abs=1e-12)


class TestMeanIou:
    def test_empty_group_default(self):
        sb = make_box((0, 0, 2, 2), [1.0])
        assert mean_iou(sb, []) == 1.0
        assert mean_iou(sb, [], lone_box_default=0.0) == 0.0

    def test_arithmetic_mean(self):
        # IoUs 0.6 and 0.8 by construction: width-6/10 and width-8/10 slivers
        base = make_box((0, 0, 10, 1), [1.0])
        b1 = make_box((2.5, 0, 10, 1), [1.0])     # overlap 7.5, union 10 -> 0.75
        assert mean_iou(base, [b1]) == pytest.approx(0.75)
        got = mean_iou(base, [b1, b1])
        assert got == pytest.approx(0.75)

    def test_two_known_ious_average(self):
        survivor = make_box((0, 0, 10, 10), [1.0])
        s1 = make_box((0, 0, 10, 5), [1.0])    # iou 0.5
        s2 = make_box((0, 0, 10, 8), [1.0])    # iou 0.8
        assert mean_iou(survivor, [s1, s2]) == pytest.approx(0.65)

    def test_worked_example_pair(self):
        a, b, _ = boxes_abc()
        assert mean_iou(a, [b]) == pytest.approx(81 / 119, abs=1e-15)

    def test_matches_group_nms_mean(self, rng):
        for _ in range(30):
            boxes = random_boxes(rng, 8)
            for pb in group_nms(boxes, 0.4):
                assert mean_iou(pb.survivor, pb.suppressed) == pb.mean_iou


class TestPseudoBoxInvariants:
    def test_suppressed_iou_reaches_threshold(self, rng):
        thr = 0.45
        for _ in range(30):
            boxes = random_boxes(rng, 10)
            for pb in group_nms(boxes, thr):
                from rpldet.boxes import iou
                for s in pb.suppressed:
                    assert iou(pb.survivor.box, s.box) > thr

    def test_survivor_outscores_same_class_suppressed(self, rng):
        for _ in range(30):
            boxes = random_boxes(rng, 10)
            for pb in group_nms(boxes, 0.5):
                for s in pb.suppressed:
                    assert pb.survivor.score >= s.score
