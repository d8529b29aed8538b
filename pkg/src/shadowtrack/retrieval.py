"""Inference-only retrieval of unpaired shadow/object detections.

After the tracker has processed a video's paired detections, single-part
detections are matched against the same-kind part embeddings of the queue
entries using the bidirectional softmax score. The forward pass walks frames
in ascending order and only considers tracks that had already started by the
detection's frame; the reverse pass walks descending and may attach to tracks
established later. A successful match updates only the matched part's
embedding in the queue; the other part stays untouched. Detections that never
match are dropped and counted.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tracking import (
    InstanceDetection,
    Track,
    TrackingQueue,
    TrackRecord,
    UnpairedDetection,
    match_score,
    queue_to_tracks,
)

PROVENANCE_FORWARD = "retrieved-forward"
PROVENANCE_REVERSE = "retrieved-reverse"


@dataclass(frozen=True)
class RetrievalParams:
    match_threshold: float = 0.2
    direction: str = "bidirectional"

    def __post_init__(self) -> None:
        if not 0.0 <= self.match_threshold <= 1.0:
            raise ValueError(
                f"match_threshold must lie in [0, 1], got {self.match_threshold}"
            )
        if self.direction not in ("forward", "reverse", "bidirectional"):
            raise ValueError(f"unknown retrieval direction {self.direction!r}")


@dataclass
class RetrievalReport:
    """Counts of attachments per pass and of detections left unmatched."""

    attached_forward: int = 0
    attached_reverse: int = 0
    dropped: int = 0
    attached: list[tuple[int, int, str]] = field(default_factory=list)  # (frame, track_id, kind)


def _as_detection(unpaired: UnpairedDetection) -> InstanceDetection:
    shadow = unpaired.part if unpaired.kind == "shadow" else None
    obj = unpaired.part if unpaired.kind == "object" else None
    return InstanceDetection(
        frame=unpaired.frame,
        shadow=shadow,
        object=obj,
        confidence=unpaired.confidence,
        gt_track=unpaired.gt_track,
    )


def _attach(entry, unpaired: UnpairedDetection, provenance: str) -> None:
    entry.insert_record(TrackRecord(unpaired.frame, _as_detection(unpaired), provenance))
    embedding = np.asarray(unpaired.part.embedding, dtype=float)
    if unpaired.kind == "shadow":
        entry.shadow_embedding = embedding
        entry.last_box_shadow = unpaired.part.box
    else:
        entry.object_embedding = embedding
        entry.last_box_object = unpaired.part.box
    entry.paired_embedding = np.concatenate(
        [entry.shadow_embedding, entry.object_embedding]
    )
    entry.last_seen_frame = max(entry.last_seen_frame, unpaired.frame)


def retrieve_pass(
    unpaired,
    queue: TrackingQueue,
    params: RetrievalParams,
    reverse: bool = False,
) -> tuple[list[UnpairedDetection], RetrievalReport]:
    """One matching pass over the unpaired detections.

    Detections are grouped per frame and part kind; scores are computed
    against the queue entries eligible for that frame. An entry is eligible
    when it has no record at that frame yet, and -- in the forward pass --
    when its track had already started by then. Each entry accepts at most one
    attachment per frame. Returns the detections that stayed unmatched plus a
    report of what was attached.
    """
    report = RetrievalReport()
    provenance = PROVENANCE_REVERSE if reverse else PROVENANCE_FORWARD
    remaining: list[UnpairedDetection] = []

    by_frame: dict[int, list[UnpairedDetection]] = {}
    for det in unpaired:
        by_frame.setdefault(det.frame, []).append(det)

    for frame in sorted(by_frame, reverse=reverse):
        claimed: set[int] = set()
        for kind in ("shadow", "object"):
            dets = [d for d in by_frame[frame] if d.kind == kind]
            if not dets:
                continue
            eligible = [
                entry
                for entry in queue.entries
                if entry.track_id not in claimed
                and not entry.has_frame(frame)
                and (reverse or entry.first_frame <= frame)
            ]
            if not eligible:
                remaining.extend(dets)
                continue
            scores = match_score(
                np.stack([np.asarray(d.part.embedding, dtype=float) for d in dets]),
                np.stack([e.part_embedding(kind) for e in eligible]),
            )
            order = sorted(range(len(dets)), key=lambda i: (-dets[i].confidence, i))
            taken: set[int] = set()
            for i in order:
                best_j = -1
                best_value = -np.inf
                for j, entry in enumerate(eligible):
                    if j in taken or entry.track_id in claimed:
                        continue
                    if scores[i, j] > best_value:
                        best_value = scores[i, j]
                        best_j = j
                if best_j >= 0 and best_value >= params.match_threshold:
                    entry = eligible[best_j]
                    taken.add(best_j)
                    claimed.add(entry.track_id)
                    _attach(entry, dets[i], provenance)
                    if reverse:
                        report.attached_reverse += 1
                    else:
                        report.attached_forward += 1
                    report.attached.append((frame, entry.track_id, kind))
                else:
                    remaining.append(dets[i])
    return remaining, report


def retrieve_bidirectional(
    unpaired,
    queue: TrackingQueue,
    params: RetrievalParams = RetrievalParams(),
) -> tuple[list[Track], RetrievalReport]:
    """Run the configured retrieval passes and return the augmented tracks.

    ``direction='forward'`` runs only the ascending pass, ``'reverse'`` only
    the descending one, ``'bidirectional'`` runs both with the reverse pass
    seeing whatever the forward pass could not place. Retrieval never creates
    track ids; it only extends existing tracks.
    """
    remaining = list(unpaired)
    report = RetrievalReport()
    if params.direction in ("forward", "bidirectional"):
        remaining, fwd = retrieve_pass(remaining, queue, params, reverse=False)
        report.attached_forward = fwd.attached_forward
        report.attached.extend(fwd.attached)
    if params.direction in ("reverse", "bidirectional"):
        remaining, rev = retrieve_pass(remaining, queue, params, reverse=True)
        report.attached_reverse = rev.attached_reverse
        report.attached.extend(rev.attached)
    report.dropped = len(remaining)
    return queue_to_tracks(queue), report
