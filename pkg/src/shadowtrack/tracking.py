"""Online paired-instance tracking by detection.

Each identity lives in a tracking queue entry holding its latest shadow,
object, and concatenated pair embeddings plus the last seen boxes. Per frame,
detections are scored against the queue with a bidirectional softmax over
cosine similarities, fused with a box-IoU cue and the detection confidence,
and claimed greedily in descending confidence order. Entries are never
evicted, so an identity can be re-acquired after occlusion.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .geometry import BinaryMask, Box, box_iou
from .validation import check_matrix, check_nonzero_rows

PROVENANCE_TRACKED = "tracked"


@dataclass(frozen=True)
class PartDetection:
    """One detected part (a shadow or an object) of a paired instance."""

    box: Box
    mask: BinaryMask
    embedding: np.ndarray


@dataclass(frozen=True)
class InstanceDetection:
    """A frame's detected shadow/object pair; either side may be absent."""

    frame: int
    shadow: PartDetection | None
    object: PartDetection | None
    confidence: float
    gt_track: int | None = None

    def __post_init__(self) -> None:
        if self.shadow is None and self.object is None:
            raise ValueError("detection needs at least one part")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must lie in [0, 1], got {self.confidence}")

    @property
    def is_paired(self) -> bool:
        return self.shadow is not None and self.object is not None


def paired_embedding(detection: InstanceDetection) -> np.ndarray:
    """Concatenated [shadow | object] tracking embedding of a paired detection."""
    if not detection.is_paired:
        raise ValueError("paired embedding requires both parts")
    return np.concatenate([detection.shadow.embedding, detection.object.embedding])


@dataclass(frozen=True)
class UnpairedDetection:
    """A lone shadow or object detection, handled by the retrieval passes."""

    frame: int
    kind: str
    part: PartDetection
    confidence: float
    gt_track: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("shadow", "object"):
            raise ValueError(f"unknown part kind {self.kind!r}")


def split_detections(detections) -> tuple[list[InstanceDetection], list[UnpairedDetection]]:
    """Separate paired detections from single-part ones."""
    paired: list[InstanceDetection] = []
    unpaired: list[UnpairedDetection] = []
    for det in detections:
        if det.is_paired:
            paired.append(det)
        elif det.shadow is not None:
            unpaired.append(
                UnpairedDetection(det.frame, "shadow", det.shadow, det.confidence, det.gt_track)
            )
        else:
            unpaired.append(
                UnpairedDetection(det.frame, "object", det.object, det.confidence, det.gt_track)
            )
    return paired, unpaired


@dataclass(frozen=True)
class MatchParams:
    """Cue weights and the embedding-score gate for detection-to-track matching."""

    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    match_threshold: float = 0.2

    def __post_init__(self) -> None:
        if not 0.0 <= self.match_threshold <= 1.0:
            raise ValueError(
                f"match_threshold must lie in [0, 1], got {self.match_threshold}"
            )


def aggregate_instance_embedding(samples, threshold: float = 0.05) -> np.ndarray:
    """Score-weighted mean embedding over samples scoring strictly above ``threshold``.

    Stands in for suppression over raw location maps when detections arrive
    pre-reduced: confident locations dominate the instance embedding.
    """
    kept = [s for s in samples if s.class_score > threshold]
    if not kept:
        raise ValueError(f"no sample scores above {threshold}")
    weights = np.array([s.class_score for s in kept])
    stacked = np.stack([np.asarray(s.embedding, dtype=float) for s in kept])
    return (weights[:, None] * stacked).sum(axis=0) / weights.sum()


def match_score(frame_embs, queue_embs) -> np.ndarray:
    """Bidirectional-softmax similarity between frame and queue embeddings.

    For the M x N cosine matrix, each entry is normalised once over the
    frame's M detections (per queue column) and once over the N queue entries
    (per frame row), then averaged. Every entry lies in (0, 1]; a 1 x 1 input
    yields exactly 1.
    """
    frame = check_matrix(np.atleast_2d(np.asarray(frame_embs, dtype=float)), "frame embeddings")
    queue = check_matrix(np.atleast_2d(np.asarray(queue_embs, dtype=float)), "queue embeddings")
    if frame.shape[1] != queue.shape[1]:
        raise ValueError(
            f"embedding dims differ: {frame.shape[1]} vs {queue.shape[1]}"
        )
    fn = check_nonzero_rows(frame, "frame embeddings")
    qn = check_nonzero_rows(queue, "queue embeddings")
    cos = (frame / fn[:, None]) @ (queue / qn[:, None]).T
    exp = np.exp(cos - cos.max())
    over_frame = exp / exp.sum(axis=0, keepdims=True)
    over_queue = exp / exp.sum(axis=1, keepdims=True)
    return (over_frame + over_queue) / 2.0


def final_score(score: float, iou: float, confidence: float, params: MatchParams) -> float:
    """Affine fusion of the embedding score, box IoU, and detection confidence."""
    return params.alpha * score + params.beta * iou + params.gamma * confidence


@dataclass(frozen=True)
class TrackRecord:
    """One frame's detection attached to a track, with its attachment provenance."""

    frame: int
    detection: InstanceDetection
    provenance: str = PROVENANCE_TRACKED


@dataclass
class TrackEntry:
    """A tracked identity's latest embeddings, boxes, and full history."""

    track_id: int
    shadow_embedding: np.ndarray
    object_embedding: np.ndarray
    paired_embedding: np.ndarray
    last_box_shadow: Box
    last_box_object: Box
    last_seen_frame: int
    history: list[TrackRecord] = field(default_factory=list)

    @property
    def first_frame(self) -> int:
        return self.history[0].frame

    def has_frame(self, frame: int) -> bool:
        i = bisect.bisect_left([r.frame for r in self.history], frame)
        return i < len(self.history) and self.history[i].frame == frame

    def part_embedding(self, kind: str) -> np.ndarray:
        return self.shadow_embedding if kind == "shadow" else self.object_embedding

    def insert_record(self, record: TrackRecord) -> None:
        frames = [r.frame for r in self.history]
        i = bisect.bisect_left(frames, record.frame)
        if i < len(frames) and frames[i] == record.frame:
            raise ValueError(
                f"track {self.track_id} already has a record at frame {record.frame}"
            )
        self.history.insert(i, record)


def _entry_from_detection(track_id: int, detection: InstanceDetection) -> TrackEntry:
    entry = TrackEntry(
        track_id=track_id,
        shadow_embedding=np.asarray(detection.shadow.embedding, dtype=float),
        object_embedding=np.asarray(detection.object.embedding, dtype=float),
        paired_embedding=paired_embedding(detection),
        last_box_shadow=detection.shadow.box,
        last_box_object=detection.object.box,
        last_seen_frame=detection.frame,
    )
    entry.history.append(TrackRecord(detection.frame, detection))
    return entry


class TrackingQueue:
    """Mutable, single-owner collection of active track entries."""

    def __init__(self) -> None:
        self.entries: list[TrackEntry] = []
        self.next_id: int = 0
        self._by_id: dict[int, TrackEntry] = {}

    def append(self, entry: TrackEntry) -> None:
        if entry.track_id in self._by_id:
            raise ValueError(f"duplicate track id {entry.track_id}")
        self.entries.append(entry)
        self._by_id[entry.track_id] = entry
        self.next_id = max(self.next_id, entry.track_id + 1)

    def entry(self, track_id: int) -> TrackEntry:
        try:
            return self._by_id[track_id]
        except KeyError:
            raise ValueError(f"unknown track id {track_id}") from None

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class Assignment:
    """Outcome of matching one detection: an existing track id or a fresh one."""

    detection_index: int
    track_id: int
    is_new: bool


def _pair_box_iou(detection: InstanceDetection, entry: TrackEntry) -> float:
    """Box cue for a detection vs a queue entry: mean over the present parts."""
    ious = []
    if detection.shadow is not None:
        ious.append(box_iou(detection.shadow.box, entry.last_box_shadow))
    if detection.object is not None:
        ious.append(box_iou(detection.object.box, entry.last_box_object))
    return sum(ious) / len(ious)


def assign(detections, queue: TrackingQueue, params: MatchParams) -> list[Assignment]:
    """Greedy claim of queue entries by the frame's paired detections.

    Detections are processed in descending confidence (stable on ties). Each
    picks the unclaimed entry with the highest fused score; the claim only
    stands if the embedding score clears ``params.match_threshold``, otherwise
    the detection opens a new identity. Fresh ids are allocated in processing
    order starting from ``queue.next_id`` without mutating the queue.
    """
    detections = list(detections)
    if not detections:
        return []
    frames = {det.frame for det in detections}
    if len(frames) != 1:
        raise ValueError(f"detections span multiple frames: {sorted(frames)}")
    for det in detections:
        if not det.is_paired:
            raise ValueError("assign only handles paired detections")

    order = sorted(range(len(detections)), key=lambda i: (-detections[i].confidence, i))
    assignments: dict[int, Assignment] = {}
    fresh_id = queue.next_id

    if len(queue) == 0:
        for i in order:
            assignments[i] = Assignment(i, fresh_id, True)
            fresh_id += 1
        return [assignments[i] for i in range(len(detections))]

    scores = match_score(
        np.stack([paired_embedding(det) for det in detections]),
        np.stack([entry.paired_embedding for entry in queue.entries]),
    )
    fused = np.empty_like(scores)
    for i, det in enumerate(detections):
        for j, entry in enumerate(queue.entries):
            fused[i, j] = final_score(
                scores[i, j], _pair_box_iou(det, entry), det.confidence, params
            )

    claimed: set[int] = set()
    for i in order:
        best_j = -1
        best_value = -np.inf
        for j in range(len(queue)):
            if j in claimed:
                continue
            if fused[i, j] > best_value:
                best_value = fused[i, j]
                best_j = j
        if best_j >= 0 and scores[i, best_j] >= params.match_threshold:
            claimed.add(best_j)
            assignments[i] = Assignment(i, queue.entries[best_j].track_id, False)
        else:
            assignments[i] = Assignment(i, fresh_id, True)
            fresh_id += 1
    return [assignments[i] for i in range(len(detections))]


def update_queue(queue: TrackingQueue, assignments, detections) -> TrackingQueue:
    """Apply a frame's assignments: refresh matched entries, append new ones."""
    detections = list(detections)
    for assignment in assignments:
        detection = detections[assignment.detection_index]
        if assignment.is_new:
            if assignment.track_id < queue.next_id:
                raise ValueError(
                    f"new track id {assignment.track_id} collides with issued ids"
                )
            queue.append(_entry_from_detection(assignment.track_id, detection))
            continue
        entry = queue.entry(assignment.track_id)
        if entry.history and detection.frame <= entry.history[-1].frame:
            raise ValueError(
                f"frame {detection.frame} does not extend track {entry.track_id}"
            )
        entry.shadow_embedding = np.asarray(detection.shadow.embedding, dtype=float)
        entry.object_embedding = np.asarray(detection.object.embedding, dtype=float)
        entry.paired_embedding = paired_embedding(detection)
        entry.last_box_shadow = detection.shadow.box
        entry.last_box_object = detection.object.box
        entry.last_seen_frame = detection.frame
        entry.history.append(TrackRecord(detection.frame, detection))
    return queue


@dataclass(frozen=True)
class Track:
    """A tracked identity's records in frame order."""

    track_id: int
    records: tuple[TrackRecord, ...]

    @property
    def confidence(self) -> float:
        """Track score for ranking: mean of the record confidences."""
        return sum(r.detection.confidence for r in self.records) / len(self.records)

    @property
    def frame_set(self) -> frozenset[int]:
        return frozenset(r.frame for r in self.records)


def queue_to_tracks(queue: TrackingQueue) -> list[Track]:
    return [Track(entry.track_id, tuple(entry.history)) for entry in queue.entries]


def run_tracking(frames, params: MatchParams = MatchParams()) -> TrackingQueue:
    """Fold assign/update over an ordered sequence of per-frame detection lists.

    Only paired detections participate; single-part detections are ignored
    here and belong to the retrieval passes. Frame indices must strictly
    increase.
    """
    queue = TrackingQueue()
    last_frame = None
    for frame_detections in frames:
        frame_detections = [det for det in frame_detections if det.is_paired]
        if not frame_detections:
            continue
        frame = frame_detections[0].frame
        if last_frame is not None and frame <= last_frame:
            raise ValueError(f"frames out of order: {frame} after {last_frame}")
        last_frame = frame
        assignments = assign(frame_detections, queue, params)
        update_queue(queue, assignments, frame_detections)
    return queue


def track_video(frames, params: MatchParams = MatchParams()) -> list[Track]:
    """Track a whole video of paired detections and return the finished tracks."""
    return queue_to_tracks(run_tracking(frames, params))


class ShadowObjectTracker(BaseEstimator):
    """Estimator-style front end over tracking plus optional retrieval.

    ``predict`` consumes per-frame lists of :class:`InstanceDetection` (paired
    and single-part mixed), runs the online tracker over the paired ones, and
    applies the configured retrieval passes to the rest.
    """

    def __init__(
        self,
        alpha: float = 1.0,
        beta: float = 1.0,
        gamma: float = 1.0,
        match_threshold: float = 0.2,
        retrieval: str = "off",
    ):
        self.alpha = alpha
        self.beta = beta
        self.gamma = gamma
        self.match_threshold = match_threshold
        self.retrieval = retrieval

    def _params(self) -> MatchParams:
        return MatchParams(self.alpha, self.beta, self.gamma, self.match_threshold)

    def fit(self, frames=None, y=None):
        """No-op; the tracker has no trainable state."""
        return self

    def predict(self, frames) -> list[Track]:
        from .retrieval import RetrievalParams, retrieve_bidirectional

        if self.retrieval not in ("off", "forward", "reverse", "bidirectional"):
            raise ValueError(f"unknown retrieval mode {self.retrieval!r}")
        frames = [list(dets) for dets in frames]
        queue = run_tracking(frames, self._params())
        if self.retrieval == "off":
            return queue_to_tracks(queue)
        unpaired = [lone for dets in frames for lone in split_detections(dets)[1]]
        rp = RetrievalParams(self.match_threshold, self.retrieval)
        tracks, _ = retrieve_bidirectional(unpaired, queue, rp)
        return tracks
