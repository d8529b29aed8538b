from __future__ import annotations

import math

import numpy as np
import pytest

from shadowtrack.geometry import BinaryMask, Box
from shadowtrack.losses import LocationSample
from shadowtrack.tracking import (
    Assignment,
    InstanceDetection,
    MatchParams,
    PartDetection,
    ShadowObjectTracker,
    TrackingQueue,
    aggregate_instance_embedding,
    assign,
    final_score,
    match_score,
    paired_embedding,
    run_tracking,
    split_detections,
    track_video,
    update_queue,
)

SOFTMAX_2 = math.e / (math.e + 1.0)


def part(embedding, x=0.0, y=0.0, size=2.0):
    mask = BinaryMask.zeros(4, 4)
    return PartDetection(Box(x, y, x + size, y + size), mask, np.asarray(embedding, dtype=float))


def detection(frame, shadow_emb, object_emb, confidence=1.0, x=0.0, gt=None):
    return InstanceDetection(
        frame=frame,
        shadow=part(shadow_emb, x=x, y=0.0),
        object=part(object_emb, x=x, y=2.0),
        confidence=confidence,
        gt_track=gt,
    )


def basis(i, dim=4):
    v = np.zeros(dim)
    v[i] = 1.0
    return v


class TestDetectionTypes:
    def test_needs_at_least_one_part(self):
        with pytest.raises(ValueError, match="at least one part"):
            InstanceDetection(0, None, None, 1.0)

    def test_confidence_range(self):
        with pytest.raises(ValueError, match="confidence"):
            detection(0, basis(0), basis(1), confidence=1.5)

    def test_paired_embedding_layout(self):
        det = detection(0, [1.0, 0.0], [0.0, 2.0])
        assert np.array_equal(paired_embedding(det), [1.0, 0.0, 0.0, 2.0])

    def test_paired_embedding_requires_both_parts(self):
        lone = InstanceDetection(0, part([1.0, 0.0]), None, 1.0)
        with pytest.raises(ValueError, match="both parts"):
            paired_embedding(lone)

    def test_split_detections(self):
        dets = [
            detection(0, basis(0), basis(1)),
            InstanceDetection(0, part(basis(2)), None, 0.5),
            InstanceDetection(0, None, part(basis(3)), 0.5),
        ]
        paired, unpaired = split_detections(dets)
        assert len(paired) == 1
        assert [u.kind for u in unpaired] == ["shadow", "object"]


class TestAggregateEmbedding:
    def test_threshold_excludes_low_scores(self):
        f2, f3 = np.array([1.0, 0.0]), np.array([0.0, 1.0])
        samples = [
            LocationSample(np.array([9.0, 9.0]), 0.04, 0),
            LocationSample(f2, 0.5, 0),
            LocationSample(f3, 0.9, 0),
        ]
        expected = (0.5 * f2 + 0.9 * f3) / 1.4
        assert np.allclose(aggregate_instance_embedding(samples), expected)

    def test_single_qualifying_sample(self):
        samples = [LocationSample(np.array([2.0, 5.0]), 0.6, 0)]
        assert np.allclose(aggregate_instance_embedding(samples), [2.0, 5.0])

    def test_identical_embeddings(self):
        emb = np.array([1.0, 2.0])
        samples = [LocationSample(emb, s, 0) for s in (0.3, 0.6, 0.9)]
        assert np.allclose(aggregate_instance_embedding(samples), emb)

    def test_no_qualifying_sample_rejected(self):
        with pytest.raises(ValueError, match="no sample"):
            aggregate_instance_embedding([LocationSample(np.ones(2), 0.05, 0)])


class TestMatchScore:
    def test_single_pair_is_exactly_one(self):
        score = match_score([[2.0, 1.0]], [[0.5, 3.0]])
        assert score.shape == (1, 1)
        assert score[0, 0] == 1.0

    def test_orthogonal_pairs(self):
        embs = np.array([[1.0, 0.0], [0.0, 1.0]])
        score = match_score(embs, embs)
        assert np.allclose(np.diag(score), SOFTMAX_2)
        assert np.allclose(score[0, 1], 1 - SOFTMAX_2)

    def test_entries_in_unit_interval_and_term_sums(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            m, n, d = rng.integers(1, 6), rng.integers(1, 6), rng.integers(2, 5)
            frame = rng.standard_normal((m, d))
            queue = rng.standard_normal((n, d))
            score = match_score(frame, queue)
            assert np.all(score > 0.0)
            assert np.all(score <= 1.0 + 1e-12)
            # score is the mean of a per-column and a per-row softmax of the
            # cosine matrix: checked by rebuilding both normalisations here
            unit = lambda x: x / np.linalg.norm(x, axis=1, keepdims=True)
            exp = np.exp(unit(frame) @ unit(queue).T)
            over_frame = exp / exp.sum(axis=0, keepdims=True)
            over_queue = exp / exp.sum(axis=1, keepdims=True)
            assert np.allclose(2.0 * score - over_frame, over_queue, atol=1e-12)
            assert np.allclose(over_frame.sum(axis=0), 1.0)
            assert np.allclose(over_queue.sum(axis=1), 1.0)

    def test_scale_invariance(self):
        rng = np.random.default_rng(1)
        frame = rng.standard_normal((3, 4))
        queue = rng.standard_normal((2, 4))
        base = match_score(frame, queue)
        frame_scaled = frame.copy()
        frame_scaled[1] *= 3.0
        assert np.allclose(match_score(frame_scaled, queue), base, atol=1e-12)

    def test_zero_norm_rejected(self):
        with pytest.raises(ValueError, match="zero-norm"):
            match_score([[0.0, 0.0]], [[1.0, 0.0]])


class TestFinalScore:
    def test_reduces_to_score(self):
        p = MatchParams(alpha=1.0, beta=0.0, gamma=0.0)
        assert final_score(0.7, 0.5, 0.9, p) == pytest.approx(0.7)

    def test_reduces_to_confidence(self):
        p = MatchParams(alpha=0.0, beta=0.0, gamma=1.0)
        assert final_score(0.7, 0.5, 0.9, p) == pytest.approx(0.9)

    def test_sums_cues(self):
        p = MatchParams(alpha=1.0, beta=1.0, gamma=1.0)
        assert final_score(0.7, 0.5, 0.9, p) == pytest.approx(2.1)


class TestAssign:
    def test_empty_queue_creates_new_ids(self):
        queue = TrackingQueue()
        result = assign([detection(0, basis(0), basis(1))], queue, MatchParams())
        assert result == [Assignment(0, 0, True)]

    def test_matching_single_entry(self):
        queue = TrackingQueue()
        det0 = detection(0, basis(0), basis(1))
        update_queue(queue, assign([det0], queue, MatchParams()), [det0])
        det1 = detection(1, basis(0), basis(1))
        result = assign([det1], queue, MatchParams(match_threshold=0.2))
        assert not result[0].is_new
        assert result[0].track_id == 0

    def test_orthogonal_pairs_assign_identically(self):
        queue = TrackingQueue()
        frame0 = [detection(0, basis(0), basis(1), x=0.0), detection(0, basis(2), basis(3), x=10.0)]
        update_queue(queue, assign(frame0, queue, MatchParams()), frame0)
        frame1 = [detection(1, basis(0), basis(1), x=0.0), detection(1, basis(2), basis(3), x=10.0)]
        result = assign(frame1, queue, MatchParams())
        assert [a.track_id for a in result] == [0, 1]
        assert not any(a.is_new for a in result)

    def test_each_entry_claimed_once(self):
        queue = TrackingQueue()
        frame0 = [detection(0, basis(0), basis(1))]
        update_queue(queue, assign(frame0, queue, MatchParams()), frame0)
        frame1 = [
            detection(1, basis(0), basis(1), confidence=0.9),
            detection(1, basis(0), basis(1), confidence=0.8),
        ]
        result = assign(frame1, queue, MatchParams())
        ids = [a.track_id for a in result]
        assert len(set(ids)) == 2
        assert result[0].track_id == 0 and not result[0].is_new  # higher confidence wins
        assert result[1].is_new

    def test_below_threshold_opens_new_identity(self):
        queue = TrackingQueue()
        frame0 = [detection(0, basis(0), basis(1), x=0.0), detection(0, basis(2), basis(3), x=10.0)]
        update_queue(queue, assign(frame0, queue, MatchParams()), frame0)
        stranger = detection(1, -basis(0), -basis(1), confidence=0.9, x=20.0)
        mate = detection(1, basis(2), basis(3), confidence=1.0, x=10.0)
        result = assign([stranger, mate], queue, MatchParams(match_threshold=0.6))
        by_index = {a.detection_index: a for a in result}
        assert by_index[1].track_id == 1
        assert by_index[0].is_new

    def test_rejects_mixed_frames(self):
        with pytest.raises(ValueError, match="frames"):
            assign(
                [detection(0, basis(0), basis(1)), detection(1, basis(2), basis(3))],
                TrackingQueue(),
                MatchParams(),
            )


class TestUpdateQueue:
    def test_new_detection_grows_queue(self):
        queue = TrackingQueue()
        det = detection(0, basis(0), basis(1))
        update_queue(queue, assign([det], queue, MatchParams()), [det])
        assert len(queue) == 1
        assert queue.next_id == 1

    def test_matched_detection_replaces_embeddings(self):
        queue = TrackingQueue()
        det0 = detection(0, basis(0), basis(1))
        update_queue(queue, assign([det0], queue, MatchParams()), [det0])
        moved = detection(3, basis(0) * 0.9 + basis(2) * 0.1, basis(1), x=5.0)
        update_queue(queue, assign([moved], queue, MatchParams()), [moved])
        entry = queue.entry(0)
        assert len(queue) == 1
        assert np.array_equal(entry.shadow_embedding, moved.shadow.embedding)
        assert entry.last_box_shadow == moved.shadow.box
        assert entry.last_seen_frame == 3
        frames = [r.frame for r in entry.history]
        assert frames == sorted(frames) == [0, 3]

    def test_unknown_track_id_rejected(self):
        queue = TrackingQueue()
        det = detection(0, basis(0), basis(1))
        with pytest.raises(ValueError, match="unknown track"):
            update_queue(queue, [Assignment(0, 99, False)], [det])


class TestTrackVideo:
    def make_frames(self, n_frames, latents, drop=()):
        frames = []
        for f in range(n_frames):
            row = []
            for i, (sh, ob) in enumerate(latents):
                if (f, i) in drop:
                    continue
                row.append(detection(f, sh, ob, x=float(f + 10 * i), gt=i))
            frames.append(row)
        return frames

    def test_single_pair_single_track(self):
        frames = self.make_frames(6, [(basis(0), basis(1))])
        tracks = track_video(frames)
        assert len(tracks) == 1
        assert [r.frame for r in tracks[0].records] == list(range(6))

    def test_two_pairs_two_tracks(self):
        frames = self.make_frames(6, [(basis(0), basis(1)), (basis(2), basis(3))])
        tracks = track_video(frames)
        assert len(tracks) == 2
        for track in tracks:
            labels = {r.detection.gt_track for r in track.records}
            assert len(labels) == 1

    def test_empty_video(self):
        assert track_video([]) == []
        assert track_video([[], []]) == []

    def test_partition_property(self):
        rng = np.random.default_rng(2)
        latents = [(basis(0, 8), basis(1, 8)), (basis(2, 8), basis(3, 8)), (basis(4, 8), basis(5, 8))]
        drop = {(f, i) for f in range(8) for i in range(3) if rng.random() < 0.3}
        frames = self.make_frames(8, latents, drop)
        total = sum(len(row) for row in frames)
        tracks = track_video(frames)
        assert sum(len(t.records) for t in tracks) == total
        seen = set()
        for track in tracks:
            for record in track.records:
                key = (record.frame, id(record.detection))
                assert key not in seen
                seen.add(key)

    def test_deterministic(self):
        frames = self.make_frames(5, [(basis(0), basis(1)), (basis(2), basis(3))])
        a = track_video(frames)
        b = track_video(frames)
        assert [(t.track_id, [r.frame for r in t.records]) for t in a] == [
            (t.track_id, [r.frame for r in t.records]) for t in b
        ]

    def test_unpaired_detections_are_ignored(self):
        lone = InstanceDetection(0, part(basis(0)), None, 1.0)
        paired = detection(0, basis(0), basis(1))
        tracks = track_video([[lone, paired]])
        assert len(tracks) == 1
        assert len(tracks[0].records) == 1
        assert track_video([[lone]]) == []

    def test_assign_rejects_unpaired(self):
        lone = InstanceDetection(0, part(basis(0)), None, 1.0)
        with pytest.raises(ValueError, match="paired"):
            assign([lone], TrackingQueue(), MatchParams())

    def test_rejects_out_of_order_frames(self):
        frames = self.make_frames(2, [(basis(0), basis(1))])
        with pytest.raises(ValueError, match="order"):
            run_tracking([frames[1], frames[0]])


class TestEstimator:
    def test_get_set_params_roundtrip(self):
        tracker = ShadowObjectTracker(alpha=2.0, match_threshold=0.3)
        params = tracker.get_params()
        assert params["alpha"] == 2.0
        clone = ShadowObjectTracker().set_params(**params)
        assert clone.get_params() == params

    def test_predict_off_matches_track_video(self):
        frames = TestTrackVideo().make_frames(4, [(basis(0), basis(1))])
        direct = track_video(frames)
        via_estimator = ShadowObjectTracker(retrieval="off").predict(frames)
        assert [(t.track_id, [r.frame for r in t.records]) for t in direct] == [
            (t.track_id, [r.frame for r in t.records]) for t in via_estimator
        ]

    def test_unknown_retrieval_mode_rejected(self):
        with pytest.raises(ValueError, match="retrieval"):
            ShadowObjectTracker(retrieval="sideways").predict([])
