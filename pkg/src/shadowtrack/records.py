"""JSON Lines schemas and file IO for detections, tracks, and loss scenarios.

One JSON object per line. Detection records carry, per part, the box, a
row-major run-length encoded mask (first run is background), the mask
dimensions, and the tracking embedding. Track records add the track id and
the attachment provenance. Files are written atomically (temp file followed
by rename) with full round-trip float precision, so identical inputs always
produce byte-identical outputs.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from collections import defaultdict

import numpy as np

from .geometry import Box, rle_decode, rle_encode
from .losses import ScenarioSample
from .tracking import InstanceDetection, PartDetection, Track, TrackRecord


def _part_to_json(part: PartDetection | None) -> dict | None:
    if part is None:
        return None
    return {
        "box": part.box.as_list(),
        "rle": rle_encode(part.mask),
        "width": part.mask.width,
        "height": part.mask.height,
        "embedding": [float(x) for x in part.embedding],
    }


def _part_from_json(obj: dict | None, line_no: int) -> PartDetection | None:
    if obj is None:
        return None
    try:
        box = Box(*(float(v) for v in obj["box"]))
        mask = rle_decode(obj["rle"], int(obj["width"]), int(obj["height"]))
        embedding = np.asarray(obj["embedding"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"line {line_no}: bad part record: {exc}") from None
    if embedding.ndim != 1 or embedding.size == 0:
        raise ValueError(f"line {line_no}: bad embedding shape")
    return PartDetection(box, mask, embedding)


def detection_to_record(video_id: str, det_id: int, det: InstanceDetection) -> dict:
    record = {
        "video_id": video_id,
        "frame": det.frame,
        "det_id": det_id,
        "confidence": det.confidence,
        "shadow": _part_to_json(det.shadow),
        "object": _part_to_json(det.object),
    }
    if det.gt_track is not None:
        record["gt_track"] = det.gt_track
    return record


def _detection_from_record(obj: dict, line_no: int) -> tuple[str, InstanceDetection]:
    try:
        video_id = str(obj["video_id"])
        frame = int(obj["frame"])
        confidence = float(obj["confidence"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"line {line_no}: bad detection record: {exc}") from None
    shadow = _part_from_json(obj.get("shadow"), line_no)
    part_obj = _part_from_json(obj.get("object"), line_no)
    if shadow is None and part_obj is None:
        raise ValueError(f"line {line_no}: detection has neither part")
    gt_track = obj.get("gt_track")
    try:
        det = InstanceDetection(
            frame=frame,
            shadow=shadow,
            object=part_obj,
            confidence=confidence,
            gt_track=None if gt_track is None else int(gt_track),
        )
    except ValueError as exc:
        raise ValueError(f"line {line_no}: {exc}") from None
    return video_id, det


def _iter_jsonl(path: str):
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"line {line_no}: malformed JSON: {exc}") from None
            if not isinstance(obj, dict):
                raise ValueError(f"line {line_no}: expected a JSON object")
            yield line_no, obj


def _check_uniform_dims(records, path: str) -> None:
    dims = set()
    for det in records:
        for part in (det.shadow, det.object):
            if part is not None:
                dims.add(part.embedding.size)
    if len(dims) > 1:
        raise ValueError(f"{path}: mixed embedding dimensions {sorted(dims)}")


def load_detections(path: str) -> dict[str, list[list[InstanceDetection]]]:
    """Read detection records grouped per video into frame-sorted lists.

    Returns ``{video_id: [frame detections...]}`` where each inner list holds
    one frame's detections in file order and frames ascend.
    """
    per_video: dict[str, dict[int, list[InstanceDetection]]] = defaultdict(
        lambda: defaultdict(list)
    )
    flat: list[InstanceDetection] = []
    for line_no, obj in _iter_jsonl(path):
        video_id, det = _detection_from_record(obj, line_no)
        per_video[video_id][det.frame].append(det)
        flat.append(det)
    _check_uniform_dims(flat, path)
    return {
        video_id: [frames[f] for f in sorted(frames)]
        for video_id, frames in per_video.items()
    }


def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp_path = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


def save_detections(path: str, videos: dict[str, list[list[InstanceDetection]]]) -> None:
    """Write detections as JSONL, det ids sequential per video."""
    lines = []
    for video_id in sorted(videos):
        det_id = 0
        for frame_dets in videos[video_id]:
            for det in frame_dets:
                lines.append(json.dumps(detection_to_record(video_id, det_id, det)))
                det_id += 1
    _atomic_write(path, "".join(line + "\n" for line in lines))


def track_to_records(video_id: str, track: Track) -> list[dict]:
    records = []
    for rec in track.records:
        obj = detection_to_record(video_id, -1, rec.detection)
        del obj["det_id"]
        obj["track_id"] = track.track_id
        obj["provenance"] = rec.provenance
        records.append(obj)
    return records


def save_tracks(path: str, videos: dict[str, list[Track]]) -> None:
    lines = []
    for video_id in sorted(videos):
        for track in videos[video_id]:
            for obj in track_to_records(video_id, track):
                lines.append(json.dumps(obj))
    _atomic_write(path, "".join(line + "\n" for line in lines))


def load_tracks(path: str) -> dict[str, list[Track]]:
    """Read track records back into per-video :class:`Track` lists.

    Enforces (video_id, track_id, frame) uniqueness; records are re-sorted by
    frame within each track and tracks by id within each video.
    """
    per_track: dict[tuple[str, int], list[TrackRecord]] = defaultdict(list)
    seen: set[tuple[str, int, int]] = set()
    for line_no, obj in _iter_jsonl(path):
        video_id, det = _detection_from_record(obj, line_no)
        try:
            track_id = int(obj["track_id"])
        except (KeyError, TypeError, ValueError):
            raise ValueError(f"line {line_no}: missing or bad track_id") from None
        provenance = str(obj.get("provenance", "tracked"))
        key = (video_id, track_id, det.frame)
        if key in seen:
            raise ValueError(
                f"line {line_no}: duplicate record for track {track_id} frame {det.frame}"
            )
        seen.add(key)
        per_track[(video_id, track_id)].append(TrackRecord(det.frame, det, provenance))
    videos: dict[str, list[Track]] = defaultdict(list)
    for (video_id, track_id), recs in per_track.items():
        recs.sort(key=lambda r: r.frame)
        videos[video_id].append(Track(track_id, tuple(recs)))
    for tracks in videos.values():
        tracks.sort(key=lambda t: t.track_id)
    return dict(videos)


def save_scenario(path: str, samples) -> None:
    lines = [
        json.dumps(
            {
                "frame": s.frame,
                "kind": s.kind,
                "instance": s.instance_id,
                "score": s.class_score,
                "embedding": [float(x) for x in s.embedding],
            }
        )
        for s in samples
    ]
    _atomic_write(path, "".join(line + "\n" for line in lines))


def load_scenario(path: str) -> list[ScenarioSample]:
    samples = []
    for line_no, obj in _iter_jsonl(path):
        try:
            samples.append(
                ScenarioSample(
                    frame=int(obj["frame"]),
                    kind=str(obj["kind"]),
                    instance_id=int(obj["instance"]),
                    class_score=float(obj["score"]),
                    embedding=np.asarray(obj["embedding"], dtype=float),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"line {line_no}: bad scenario record: {exc}") from None
    return samples


def write_json(path: str, payload: dict) -> None:
    _atomic_write(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()
