from __future__ import annotations

import numpy as np
import pytest

from shadowtrack.geometry import BinaryMask, st_iou
from shadowtrack.metrics import (
    TAU_GRID,
    TrackVolumeTriple,
    average_precision,
    evaluate_tracks,
    is_tp,
    volume_triple,
)

from bruteforce import evaluate_bruteforce, random_scene


def mask(pixels):
    return BinaryMask(pixels)


def square(size, x0, y0, side):
    pixels = np.zeros((size, size), dtype=bool)
    pixels[y0:y0 + side, x0:x0 + side] = True
    return BinaryMask(pixels)


def triple(size, shadow_frames, object_frames, confidence=1.0, video=""):
    return volume_triple(size, size, shadow_frames, object_frames, confidence, video)


def simple_triple(size=8, frames=3, offset=0, confidence=1.0, video=""):
    shadow = {f: square(size, offset, 0, 3) for f in range(frames)}
    obj = {f: square(size, offset, 4, 3) for f in range(frames)}
    return triple(size, shadow, obj, confidence, video)


class TestTauGrid:
    def test_exactly_ten_thresholds(self):
        assert TAU_GRID == (0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95)


class TestVolumeTriple:
    def test_association_is_per_frame_union(self):
        t = simple_triple()
        for frame, assoc in t.association.frames.items():
            expected = np.logical_or(
                t.shadow.frames[frame].pixels, t.object.frames[frame].pixels
            )
            assert np.array_equal(assoc.pixels, expected)

    def test_single_part_frames_carry_that_part(self):
        t = triple(8, {0: square(8, 0, 0, 2)}, {1: square(8, 4, 4, 2)})
        assert t.association.frames[0] == t.shadow.frames[0]
        assert t.association.frames[1] == t.object.frames[1]


class TestIsTp:
    def test_identical_triples_pass_all_taus(self):
        t = simple_triple()
        for tau in TAU_GRID:
            assert is_tp(t, t, tau)

    def test_conjunction_fails_on_one_bad_volume(self):
        gt = simple_triple()
        # same shadow, object shifted far: object IoU 0, shadow IoU 1
        bad_object = triple(
            8,
            {f: square(8, 0, 0, 3) for f in range(3)},
            {f: square(8, 5, 5, 3) for f in range(3)},
        )
        assert not is_tp(bad_object, gt, 0.5)

    def test_association_dilution_alone_can_fail(self):
        # Shadow and object each match exactly on their own frames, but the
        # prediction misses the shadow-only tail, diluting the association.
        size = 8
        gt = triple(
            size,
            {f: square(size, 0, 0, 4) for f in range(4)},
            {0: square(size, 0, 4, 2)},
        )
        pred = triple(
            size,
            {0: square(size, 0, 0, 4)},
            {0: square(size, 0, 4, 2)},
        )
        assert st_iou(pred.object, gt.object) == pytest.approx(1.0)
        assert not is_tp(pred, gt, 0.5)

    def test_monotone_in_tau(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            preds, gts = random_scene(rng, max_tracks=2)
            for pred in preds:
                for gt in gts:
                    flags = [is_tp(pred, gt, tau) for tau in TAU_GRID]
                    assert flags == sorted(flags, reverse=True)

    def test_tau_range_validated(self):
        t = simple_triple()
        with pytest.raises(ValueError, match="tau"):
            is_tp(t, t, 0.0)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimension mismatch"):
            is_tp(simple_triple(8), simple_triple(10), 0.5)


class TestAveragePrecision:
    def test_perfect_predictions(self):
        gts = [simple_triple(offset=0), simple_triple(offset=4)]
        preds = [simple_triple(offset=0, confidence=0.9), simple_triple(offset=4, confidence=0.8)]
        for mode in ("paired", "association", "instance", "shadow", "object"):
            for tau in TAU_GRID:
                assert average_precision(preds, gts, tau, mode) == 1.0

    def test_no_predictions(self):
        gts = [simple_triple()]
        assert average_precision([], gts, 0.5, "paired") == 0.0

    def test_no_ground_truth(self):
        assert average_precision([], [], 0.5, "paired") == 1.0
        assert average_precision([simple_triple(confidence=0.5)], [], 0.5, "paired") == 0.0

    def test_hand_computed_pr_curve(self):
        # 2 gts; 3 preds ranked so TPs land at ranks 1 and 3.
        gts = [simple_triple(offset=0), simple_triple(offset=4)]
        preds = [
            simple_triple(offset=0, confidence=0.9),  # rank 1, TP
            simple_triple(size=8, frames=1, offset=0, confidence=0.8),  # rank 2, FP (gt 0 taken)
            simple_triple(offset=4, confidence=0.7),  # rank 3, TP
        ]
        ap = average_precision(preds, gts, 0.5, "association")
        assert ap == pytest.approx((1.0 + 2.0 / 3.0) / 2.0)

    def test_lower_ranked_false_positive_never_increases_ap(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            preds, gts = random_scene(rng, max_tracks=3)
            junk = simple_triple(size=8, frames=1, offset=5, confidence=0.0)
            for mode in ("paired", "association", "instance"):
                base = average_precision(preds, gts, 0.5, mode)
                worse = average_precision(preds + [junk], gts, 0.5, mode)
                assert worse <= base + 1e-12

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError, match="mode"):
            average_precision([], [], 0.5, "sideways")

    def test_video_ids_partition_matching(self):
        gt_a = simple_triple(video="a")
        gt_b = simple_triple(video="b")
        pred_wrong_video = simple_triple(confidence=0.9, video="c")
        assert average_precision([pred_wrong_video], [gt_a, gt_b], 0.5, "association") == 0.0
        pred_right = simple_triple(confidence=0.9, video="a")
        assert average_precision([pred_right], [gt_a, gt_b], 0.5, "association") == 0.5


class TestEvaluateTracks:
    def test_perfect_report(self):
        gts = [simple_triple(offset=0), simple_triple(offset=4)]
        preds = [simple_triple(offset=0, confidence=0.9), simple_triple(offset=4, confidence=0.8)]
        report = evaluate_tracks(preds, gts)
        assert report.paired_ap == 1.0
        assert report.association_ap == 1.0
        assert report.instance_ap == 1.0
        for row in report.per_tau:
            assert row.paired.tp == 2 and row.paired.fp == 0 and row.paired.fn == 0
            assert row.instance.tp == 4

    def test_empty_predictions_score_zero(self):
        gts = [simple_triple()]
        report = evaluate_tracks([], gts)
        assert (report.paired_ap, report.association_ap, report.instance_ap) == (0.0, 0.0, 0.0)
        assert report.per_tau[0].paired.fn == 1

    def test_temporally_shifted_predictions_score_zero(self):
        size = 8
        gt = triple(size, {f: square(size, 0, 0, 3) for f in (0, 1)}, {f: square(size, 0, 4, 3) for f in (0, 1)})
        pred = triple(size, {f: square(size, 0, 0, 3) for f in (2, 3)}, {f: square(size, 0, 4, 3) for f in (2, 3)}, 0.9)
        report = evaluate_tracks([pred], [gt])
        assert (report.paired_ap, report.association_ap, report.instance_ap) == (0.0, 0.0, 0.0)

    def test_prediction_order_does_not_matter(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            preds, gts = random_scene(rng, max_tracks=3)
            # distinct confidences so ranking is unambiguous
            preds = [
                TrackVolumeTriple(p.shadow, p.object, p.association, 0.9 - 0.07 * i, p.video_id)
                for i, p in enumerate(preds)
            ]
            base = evaluate_tracks(preds, gts)
            shuffled = list(preds)
            rng.shuffle(shuffled)
            other = evaluate_tracks(shuffled, gts)
            assert base.paired_ap == pytest.approx(other.paired_ap, abs=1e-12)
            assert base.association_ap == pytest.approx(other.association_ap, abs=1e-12)
            assert base.instance_ap == pytest.approx(other.instance_ap, abs=1e-12)

    def test_paired_never_exceeds_association(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            preds, gts = random_scene(rng)
            report = evaluate_tracks(preds, gts)
            assert report.paired_ap <= report.association_ap + 1e-12
            for row in report.per_tau:
                assert row.paired_ap <= row.association_ap + 1e-12

    def test_matches_bruteforce_evaluator(self):
        rng = np.random.default_rng(4)
        for _ in range(30):
            preds, gts = random_scene(rng)
            report = evaluate_tracks(preds, gts)
            oracle = evaluate_bruteforce(preds, gts, TAU_GRID)
            assert report.paired_ap == pytest.approx(oracle["paired_ap"], abs=1e-9)
            assert report.association_ap == pytest.approx(oracle["association_ap"], abs=1e-9)
            assert report.instance_ap == pytest.approx(oracle["instance_ap"], abs=1e-9)

    def test_report_dict_round_trip_fields(self):
        gts = [simple_triple()]
        report = evaluate_tracks([simple_triple(confidence=0.5)], gts)
        payload = report.to_dict()
        assert set(payload) == {"paired_ap", "association_ap", "instance_ap", "per_tau"}
        assert len(payload["per_tau"]) == len(TAU_GRID)
        assert payload["per_tau"][0]["counts"]["paired"] == {"tp": 1, "fp": 0, "fn": 0}
