import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from laneformer.errors import FormatError
from laneformer.lanes import N_ROWS, TuSimpleFrame, Lane
from laneformer.metrics import (
    EvalReport,
    aggregate,
    lane_iou,
    match_frame,
    match_ious,
    point_accuracy,
    scaled_line_width,
    tusimple_metrics,
)
from oracles import pixel_mask_oracle

SIZE = (60, 80)
WIDTH = 6.0


def vertical(x, s=0.0, e=1.0):
    return Lane(np.full(N_ROWS, x), s, e)


def random_lane(rng):
    s, e = sorted(rng.uniform(0, 1, 2))
    if e - s < 0.2:
        s, e = 0.1, 0.9
    base = rng.uniform(0.2, 0.8)
    xs = base + rng.uniform(-0.2, 0.2) * (np.linspace(0, 1, N_ROWS) - 0.5) + rng.normal(0, 0.01, N_ROWS)
    return Lane(np.clip(xs, 0, 1), s, e)


class TestLaneIou:
    def test_identical(self):
        a = random_lane(np.random.default_rng(0))
        assert lane_iou(a, a, SIZE, WIDTH) == 1.0

    def test_disjoint(self):
        assert lane_iou(vertical(0.1), vertical(0.9), SIZE, WIDTH) == 0.0

    def test_empty_lane(self):
        empty = Lane(np.zeros(N_ROWS), 0.5 / (N_ROWS - 1), 0.5 / (N_ROWS - 1))
        assert lane_iou(empty, vertical(0.5), SIZE, WIDTH) == 0.0

    def test_width_must_be_at_least_one(self):
        with pytest.raises(ValueError):
            lane_iou(vertical(0.5), vertical(0.5), SIZE, 0.5)

    def test_agrees_with_pixel_count_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            a = random_lane(rng)
            b = Lane(np.clip(a.xs + rng.normal(0, 0.03), 0, 1), a.s, a.e) if rng.uniform() < 0.7 else random_lane(rng)
            ma, mb = pixel_mask_oracle(a, SIZE, WIDTH), pixel_mask_oracle(b, SIZE, WIDTH)
            union = (ma | mb).sum()
            oracle = (ma & mb).sum() / union if union else 0.0
            assert abs(lane_iou(a, b, SIZE, WIDTH) - oracle) <= 0.01

    def test_scaled_line_width(self):
        assert scaled_line_width((590, 1640)) == pytest.approx(30.0)
        assert scaled_line_width((295, 820)) == pytest.approx(15.0)


class TestMatching:
    def test_crafted_fixture_f1_two_thirds(self):
        gts = [vertical(0.2), vertical(0.5), vertical(0.8)]
        preds = [vertical(0.2), vertical(0.5), vertical(0.65)]
        # the third prediction sits between lane 2 and 3, overlapping neither enough
        tp, fp, fn = match_frame(preds, gts, 0.5, SIZE, WIDTH)
        assert (tp, fp, fn) == (2, 1, 1)
        rep = EvalReport(tp, fp, fn)
        assert rep.f1 == 2 * (2 / 3) * (2 / 3) / (2 / 3 + 2 / 3)
        assert rep.f1 == pytest.approx(2 / 3, abs=1e-15)

    def test_one_to_one(self):
        gts = [vertical(0.5)]
        preds = [vertical(0.5), vertical(0.5)]
        assert match_frame(preds, gts, 0.5, SIZE, WIDTH) == (1, 1, 0)

    def test_maximises_hits_not_just_iou(self):
        # greedy on IoU would pair p0-g0 and leave p1 and g1 unmatched
        ious = np.array([[0.9, 0.6], [0.7, 0.1]])
        assert match_ious(ious, 0.5) == (2, 0, 0)

    def test_empty_sides(self):
        assert match_ious(np.zeros((0, 3))) == (0, 0, 3)
        assert match_ious(np.zeros((2, 0))) == (0, 2, 0)

    def test_threshold_inclusive(self):
        assert match_ious(np.array([[0.5]]), 0.5) == (1, 0, 0)


class TestReport:
    def test_zero_denominators(self):
        rep = EvalReport()
        assert rep.precision == rep.recall == rep.f1 == 0.0

    @given(st.integers(0, 50), st.integers(0, 50), st.integers(0, 50))
    def test_formulas(self, tp, fp, fn):
        rep = EvalReport(tp, fp, fn)
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        assert rep.precision == p and rep.recall == r
        assert rep.f1 == (2 * p * r / (p + r) if p + r else 0.0)
        assert 0.0 <= rep.f1 <= 1.0

    @given(st.lists(st.tuples(st.integers(0, 9), st.integers(0, 9), st.integers(0, 9)), min_size=1, max_size=6))
    def test_merge_associative(self, counts):
        reps = {f"c{i}": EvalReport(*c) for i, c in enumerate(counts)}
        total = aggregate(reps)
        assert (total.tp, total.fp, total.fn) == tuple(map(sum, zip(*counts)))
        left = EvalReport()
        for r in reps.values():
            left = left.merge(r)
        assert (left.tp, left.fp, left.fn) == (total.tp, total.fp, total.fn)

    def test_table_and_jsonl(self):
        rep = aggregate({"night": EvalReport(1, 1, 0), "normal": EvalReport(3, 0, 1)})
        lines = rep.table().splitlines()
        assert lines[0].split("|")[-1].strip() == "Total"
        assert "night" in lines[0] and "normal" in lines[0]
        recs = [json.loads(x) for x in rep.to_jsonl().splitlines()]
        assert recs[0]["category"] == "total" and recs[0]["tp"] == 4
        assert {r["category"] for r in recs[1:]} == {"night", "normal"}


class TestTuSimple:
    H = [160, 200, 240, 280, 320, 360, 400, 440, 480, 520, 560, 600, 640, 680, 710]

    def frame(self, lanes, name="a.jpg"):
        return TuSimpleFrame(name, list(self.H), lanes)

    def test_point_accuracy(self):
        gt = np.array([10.0, 20.0, np.nan, 40.0])
        assert point_accuracy(np.array([15.0, 45.0, 0.0, np.nan]), gt) == pytest.approx(1 / 3)
        assert point_accuracy(np.array([1.0]), np.array([np.nan])) == 0.0

    def test_perfect(self):
        lanes = [vertical(0.3), vertical(0.6)]
        acc, fp, fn = tusimple_metrics([self.frame(lanes)], [self.frame(lanes)])
        assert (acc, fp, fn) == (1.0, 0.0, 0.0)

    def test_missing_and_extra(self):
        gt = self.frame([vertical(0.3), vertical(0.6)])
        pred = self.frame([vertical(0.3), vertical(0.9)])
        acc, fp, fn = tusimple_metrics([pred], [gt])
        assert acc == pytest.approx(0.5) and fp == 0.5 and fn == 0.5

    def test_frame_mismatch(self):
        with pytest.raises(FormatError):
            tusimple_metrics([self.frame([], "a.jpg")], [self.frame([], "b.jpg")])
        with pytest.raises(FormatError):
            tusimple_metrics([], [self.frame([])])
