"""Average-precision evaluation of paired tracks over spatio-temporal IoU.

A predicted track is a triple of mask volumes (shadow, object, and their
per-frame union, the association) plus a ranking confidence. Three metrics
are reported, each averaged over the threshold grid 0.50, 0.55, ..., 0.95:

* paired AP   -- a prediction counts only when shadow, object, AND association
  volume IoUs all clear the threshold (matching ranks by the min of the three),
* association AP -- IoU of the association volume alone,
* instance AP -- shadow and object volumes pooled as separate instances of a
  single class.

Matching is greedy in descending prediction confidence (stable on ties by
input order), each ground truth claimed at most once, candidates restricted
to the same video. AP uses all-point interpolation: the area under the
monotone precision envelope of the recall curve.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import BinaryMask, MaskTrackVolume, association_mask, st_iou
from .tracking import Track

#: Evaluation thresholds: 0.50 to 0.95 in steps of 0.05.
TAU_GRID = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))

MODES = ("paired", "association", "shadow", "object", "instance")


@dataclass(frozen=True)
class TrackVolumeTriple:
    """Shadow, object, and association volumes of one track, with a rank score."""

    shadow: MaskTrackVolume
    object: MaskTrackVolume
    association: MaskTrackVolume
    confidence: float = 1.0
    video_id: str = ""


def volume_triple(
    width: int,
    height: int,
    shadow_frames: dict[int, BinaryMask],
    object_frames: dict[int, BinaryMask],
    confidence: float = 1.0,
    video_id: str = "",
) -> TrackVolumeTriple:
    """Build a triple whose association is the per-frame union of the parts."""
    assoc: dict[int, BinaryMask] = {}
    for frame in set(shadow_frames) | set(object_frames):
        sh = shadow_frames.get(frame)
        ob = object_frames.get(frame)
        if sh is None:
            assoc[frame] = ob
        elif ob is None:
            assoc[frame] = sh
        else:
            assoc[frame] = association_mask(sh, ob)
    return TrackVolumeTriple(
        shadow=MaskTrackVolume(width, height, shadow_frames),
        object=MaskTrackVolume(width, height, object_frames),
        association=MaskTrackVolume(width, height, assoc),
        confidence=confidence,
        video_id=video_id,
    )


def track_to_triple(track: Track, width: int, height: int, video_id: str = "") -> TrackVolumeTriple:
    """Collect a track's per-frame part masks into a volume triple."""
    shadow_frames: dict[int, BinaryMask] = {}
    object_frames: dict[int, BinaryMask] = {}
    for record in track.records:
        det = record.detection
        if det.shadow is not None:
            shadow_frames[record.frame] = det.shadow.mask
        if det.object is not None:
            object_frames[record.frame] = det.object.mask
    return volume_triple(
        width, height, shadow_frames, object_frames, track.confidence, video_id
    )


def is_tp(pred: TrackVolumeTriple, gt: TrackVolumeTriple, tau: float) -> bool:
    """True positive under the paired rule: all three volume IoUs >= tau."""
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"tau must lie in (0, 1], got {tau}")
    return (
        st_iou(pred.shadow, gt.shadow) >= tau
        and st_iou(pred.object, gt.object) >= tau
        and st_iou(pred.association, gt.association) >= tau
    )


def _paired_key(pred: TrackVolumeTriple, gt: TrackVolumeTriple) -> float:
    return min(
        st_iou(pred.shadow, gt.shadow),
        st_iou(pred.object, gt.object),
        st_iou(pred.association, gt.association),
    )


def _pool_instances(triples) -> list[tuple[MaskTrackVolume, float, str]]:
    pooled = []
    for triple in triples:
        pooled.append((triple.shadow, triple.confidence, triple.video_id))
        pooled.append((triple.object, triple.confidence, triple.video_id))
    return pooled


def _match_tp_flags(pred_items, gt_items, tau: float, key) -> list[bool]:
    """Greedy best-key matching; returns per-ranked-prediction TP flags.

    ``pred_items``/``gt_items`` are (payload, confidence, video_id) tuples;
    ``key`` scores a (pred payload, gt payload) pair. Predictions are visited
    in descending confidence; each claims the unmatched same-video ground
    truth with the highest key, provided that key reaches ``tau``.
    """
    order = sorted(range(len(pred_items)), key=lambda i: (-pred_items[i][1], i))
    matched: set[int] = set()
    flags = []
    for i in order:
        payload, _, video = pred_items[i]
        best_g = -1
        best_key = -1.0
        for g, (gt_payload, _, gt_video) in enumerate(gt_items):
            if g in matched or gt_video != video:
                continue
            value = key(payload, gt_payload)
            if value > best_key:
                best_key = value
                best_g = g
        if best_g >= 0 and best_key >= tau:
            matched.add(best_g)
            flags.append(True)
        else:
            flags.append(False)
    return flags


def _ap_from_flags(flags, n_gt: int) -> float:
    """All-point-interpolated AP from ranked TP flags."""
    if n_gt == 0:
        return 1.0 if not flags else 0.0
    if not flags:
        return 0.0
    tp = np.cumsum(np.asarray(flags, dtype=float))
    ranks = np.arange(1, len(flags) + 1)
    precision = tp / ranks
    recall = tp / n_gt
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    previous = np.concatenate(([0.0], recall[:-1]))
    return float(((recall - previous) * envelope).sum())


def _items_for_mode(triples, mode: str):
    if mode == "instance":
        return _pool_instances(triples)
    extract = {
        "paired": lambda t: t,
        "association": lambda t: t.association,
        "shadow": lambda t: t.shadow,
        "object": lambda t: t.object,
    }[mode]
    return [(extract(t), t.confidence, t.video_id) for t in triples]


def average_precision(preds, gts, tau: float, mode: str = "association") -> float:
    """AP of predicted volume triples against ground truth at one threshold.

    Modes: ``paired`` (all three IoUs must reach tau; ranked by their min),
    ``association``/``shadow``/``object`` (that single volume's IoU), and
    ``instance`` (shadow+object volumes pooled as separate instances).
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}, expected one of {MODES}")
    flags, n_gt = _mode_flags(list(preds), list(gts), tau, mode)
    return _ap_from_flags(flags, n_gt)


def _mode_flags(preds, gts, tau: float, mode: str) -> tuple[list[bool], int]:
    pred_items = _items_for_mode(preds, mode)
    gt_items = _items_for_mode(gts, mode)
    key = _paired_key if mode == "paired" else st_iou
    return _match_tp_flags(pred_items, gt_items, tau, key), len(gt_items)


@dataclass(frozen=True)
class ModeCounts:
    tp: int
    fp: int
    fn: int


@dataclass(frozen=True)
class TauMetrics:
    tau: float
    paired_ap: float
    association_ap: float
    instance_ap: float
    paired: ModeCounts
    association: ModeCounts
    instance: ModeCounts


@dataclass(frozen=True)
class EvalReport:
    """Aggregate metrics (means over the threshold grid) plus the breakdown."""

    paired_ap: float
    association_ap: float
    instance_ap: float
    per_tau: tuple[TauMetrics, ...]

    def to_dict(self) -> dict:
        return {
            "paired_ap": self.paired_ap,
            "association_ap": self.association_ap,
            "instance_ap": self.instance_ap,
            "per_tau": [
                {
                    "tau": m.tau,
                    "paired_ap": m.paired_ap,
                    "association_ap": m.association_ap,
                    "instance_ap": m.instance_ap,
                    "counts": {
                        "paired": vars(m.paired),
                        "association": vars(m.association),
                        "instance": vars(m.instance),
                    },
                }
                for m in self.per_tau
            ],
        }


def evaluate_tracks(preds, gts, taus=TAU_GRID) -> EvalReport:
    """Full evaluation of predicted triples against ground-truth triples."""
    preds = list(preds)
    gts = list(gts)
    per_tau = []
    for tau in taus:
        row = {}
        counts = {}
        for mode in ("paired", "association", "instance"):
            flags, n_gt = _mode_flags(preds, gts, tau, mode)
            tp = sum(flags)
            row[mode] = _ap_from_flags(flags, n_gt)
            counts[mode] = ModeCounts(tp, len(flags) - tp, n_gt - tp)
        per_tau.append(
            TauMetrics(
                tau=tau,
                paired_ap=row["paired"],
                association_ap=row["association"],
                instance_ap=row["instance"],
                paired=counts["paired"],
                association=counts["association"],
                instance=counts["instance"],
            )
        )
    return EvalReport(
        paired_ap=float(np.mean([m.paired_ap for m in per_tau])),
        association_ap=float(np.mean([m.association_ap for m in per_tau])),
        instance_ap=float(np.mean([m.instance_ap for m in per_tau])),
        per_tau=tuple(per_tau),
    )
