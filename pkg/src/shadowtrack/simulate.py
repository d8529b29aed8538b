"""Deterministic synthetic scenarios: moving objects with cast shadows.

Each pair is an axis-aligned object rectangle plus a sheared shadow rectangle
at a fixed offset (one light direction per scenario). Ground truth excludes
parts inside occlusion windows or outside a pair's lifespan -- those parts are
genuinely invisible. Detector dropout, by contrast, removes a part from the
emitted detections while ground truth keeps it. Part embeddings are the
pair's latent unit vector plus renormalised Gaussian noise; whenever exactly
one part of a pair survives a frame, the detection comes out single-part.

All randomness flows through ``numpy.random.default_rng(seed)`` (the PCG64
generator) with a fixed draw order, so output is a pure function of the
configuration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import BinaryMask
from .metrics import TrackVolumeTriple, volume_triple
from .tracking import InstanceDetection, PartDetection

PART_CHOICES = ("shadow", "object", "both")


@dataclass(frozen=True)
class OcclusionWindow:
    """Hide one part (or both) of a pair for frames [start, stop)."""

    pair: int
    part: str
    start: int
    stop: int

    def __post_init__(self) -> None:
        if self.part not in PART_CHOICES:
            raise ValueError(f"part must be one of {PART_CHOICES}, got {self.part!r}")
        if self.stop < self.start:
            raise ValueError(f"empty window [{self.start}, {self.stop})")

    def hides(self, part: str, frame: int) -> bool:
        return (self.part in (part, "both")) and self.start <= frame < self.stop


@dataclass(frozen=True)
class ScenarioConfig:
    frames: int = 20
    pairs: int = 2
    width: int = 64
    height: int = 64
    embedding_dim: int = 16
    embedding_noise: float = 0.0
    dropout: float = 0.0
    confidence_noise: float = 0.0
    occlusions: tuple[OcclusionWindow, ...] = ()
    lifespans: tuple[tuple[int, int], ...] | None = None  # per pair, default full video
    object_size: tuple[int, int] = (10, 8)
    shadow_size: tuple[int, int] = (10, 6)
    shadow_offset: tuple[int, int] = (4, 8)
    shadow_shear: float = 0.4  # horizontal pixel shift per shadow row
    speed: float = 1.5
    crossing: bool = False
    orthogonal_latents: bool = True
    seed: int = 0
    video_id: str = "sim"

    def __post_init__(self) -> None:
        if self.frames < 1 or self.pairs < 1:
            raise ValueError("frames and pairs must be at least 1")
        if not 0.0 <= self.dropout <= 1.0:
            raise ValueError(f"dropout must lie in [0, 1], got {self.dropout}")
        if self.embedding_noise < 0.0 or self.confidence_noise < 0.0:
            raise ValueError("noise levels must be non-negative")
        if self.lifespans is not None and len(self.lifespans) != self.pairs:
            raise ValueError("lifespans must list one (start, stop) per pair")
        for window in self.occlusions:
            if not 0 <= window.pair < self.pairs:
                raise ValueError(f"occlusion window names unknown pair {window.pair}")

    def lifespan(self, pair: int) -> tuple[int, int]:
        if self.lifespans is None:
            return (0, self.frames)
        return self.lifespans[pair]


@dataclass(frozen=True)
class LatentTrack:
    """A pair's fixed identity: trajectory, footprint, and latent embeddings."""

    pair: int
    lane_y: int
    start_x: int
    velocity: float
    shadow_latent: np.ndarray
    object_latent: np.ndarray


@dataclass(frozen=True)
class SimulationResult:
    config: ScenarioConfig
    latents: tuple[LatentTrack, ...]
    gt_detections: tuple[tuple[InstanceDetection, ...], ...]  # per frame, clean
    detections: tuple[tuple[InstanceDetection, ...], ...]  # per frame, noisy
    gt_triples: tuple[TrackVolumeTriple, ...]


def _render_rect(x: int, y: int, w: int, h: int, width: int, height: int, shear: float = 0.0) -> BinaryMask:
    pixels = np.zeros((height, width), dtype=bool)
    for row in range(h):
        yy = y + row
        if yy < 0 or yy >= height:
            continue
        shift = int(round(shear * row))
        x0 = max(0, x + shift)
        x1 = min(width, x + shift + w)
        if x0 < x1:
            pixels[yy, x0:x1] = True
    return BinaryMask(pixels)


def _pair_footprint(config: ScenarioConfig) -> tuple[int, int]:
    ow, oh = config.object_size
    sw, sh = config.shadow_size
    dx, dy = config.shadow_offset
    shear = int(round(config.shadow_shear * max(0, sh - 1)))
    min_x = min(0, dx)
    max_x = max(ow, dx + sw + max(0, shear))
    min_y = min(0, dy)
    max_y = max(oh, dy + sh)
    return max_x - min_x, max_y - min_y


def _latent_vectors(config: ScenarioConfig, rng: np.random.Generator) -> list[tuple[np.ndarray, np.ndarray]]:
    vectors = []
    if config.orthogonal_latents:
        if 2 * config.pairs > config.embedding_dim:
            raise ValueError(
                f"orthogonal latents need embedding_dim >= {2 * config.pairs}"
            )
        for pair in range(config.pairs):
            shadow = np.zeros(config.embedding_dim)
            shadow[2 * pair] = 1.0
            obj = np.zeros(config.embedding_dim)
            obj[2 * pair + 1] = 1.0
            vectors.append((shadow, obj))
    else:
        for _ in range(config.pairs):
            shadow = rng.standard_normal(config.embedding_dim)
            obj = rng.standard_normal(config.embedding_dim)
            vectors.append(
                (shadow / np.linalg.norm(shadow), obj / np.linalg.norm(obj))
            )
    return vectors


def _build_latents(config: ScenarioConfig, rng: np.random.Generator) -> list[LatentTrack]:
    foot_w, foot_h = _pair_footprint(config)
    if foot_w > config.width or foot_h > config.height:
        raise ValueError(
            f"pair footprint {foot_w}x{foot_h} exceeds image "
            f"{config.width}x{config.height}"
        )
    vectors = _latent_vectors(config, rng)
    latents = []
    max_x = config.width - foot_w
    max_y = config.height - foot_h
    for pair in range(config.pairs):
        if config.pairs == 1:
            lane_y = max_y // 2
        else:
            lane_y = round(max_y * pair / (config.pairs - 1))
        if config.crossing:
            # Pairs share the mid lane and travel toward each other.
            lane_y = max_y // 2
            going_right = pair % 2 == 0
            start_x = 0 if going_right else max_x
            velocity = config.speed if going_right else -config.speed
        else:
            start_x = (pair * 7) % max(1, max_x // 2)
            velocity = config.speed
        shadow_latent, object_latent = vectors[pair]
        latents.append(
            LatentTrack(pair, lane_y, start_x, velocity, shadow_latent, object_latent)
        )
    return latents


def _part_visible(config: ScenarioConfig, pair: int, part: str, frame: int) -> bool:
    start, stop = config.lifespan(pair)
    if not start <= frame < stop:
        return False
    return not any(w.pair == pair and w.hides(part, frame) for w in config.occlusions)


def _render_parts(
    config: ScenarioConfig, latent: LatentTrack, frame: int
) -> tuple[BinaryMask, BinaryMask]:
    foot_w, _ = _pair_footprint(config)
    max_x = config.width - foot_w
    x = int(round(latent.start_x + latent.velocity * frame))
    x = min(max(x, 0), max_x)
    ow, oh = config.object_size
    sw, sh = config.shadow_size
    dx, dy = config.shadow_offset
    base_x = x - min(0, dx)
    base_y = latent.lane_y - min(0, dy)
    obj = _render_rect(base_x, base_y, ow, oh, config.width, config.height)
    shadow = _render_rect(
        base_x + dx, base_y + dy, sw, sh, config.width, config.height, config.shadow_shear
    )
    return shadow, obj


def _noisy_embedding(latent: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    noise = rng.standard_normal(latent.size)
    vec = latent + sigma * noise
    return vec / np.linalg.norm(vec)


def _confidence(noise_level: float, rng: np.random.Generator) -> float:
    draw = rng.standard_normal()
    return float(np.clip(1.0 - noise_level * abs(draw), 0.0, 1.0))


def generate(config: ScenarioConfig) -> SimulationResult:
    """Render a scenario into clean ground truth plus (possibly noisy) detections.

    Draw order per frame and pair: for the shadow then the object (skipping
    parts not visible in ground truth) a dropout draw, the embedding noise
    vector, and a confidence draw. A detection's confidence is the mean over
    its surviving parts' confidence draws.
    """
    rng = np.random.default_rng(config.seed)
    latents = _build_latents(config, rng)

    gt_frames: list[tuple[InstanceDetection, ...]] = []
    det_frames: list[tuple[InstanceDetection, ...]] = []
    shadow_volumes: list[dict[int, BinaryMask]] = [dict() for _ in latents]
    object_volumes: list[dict[int, BinaryMask]] = [dict() for _ in latents]

    for frame in range(config.frames):
        gt_row: list[InstanceDetection] = []
        det_row: list[InstanceDetection] = []
        for latent in latents:
            pair = latent.pair
            shadow_mask, object_mask = _render_parts(config, latent, frame)
            sh_visible = _part_visible(config, pair, "shadow", frame)
            ob_visible = _part_visible(config, pair, "object", frame)
            if not sh_visible and not ob_visible:
                continue

            parts: dict[str, PartDetection | None] = {"shadow": None, "object": None}
            clean: dict[str, PartDetection | None] = {"shadow": None, "object": None}
            confidences: list[float] = []
            for kind, visible, mask, vector in (
                ("shadow", sh_visible, shadow_mask, latent.shadow_latent),
                ("object", ob_visible, object_mask, latent.object_latent),
            ):
                if not visible:
                    continue
                if mask.count == 0:
                    raise ValueError(
                        f"pair {pair} {kind} rendered empty at frame {frame}"
                    )
                clean[kind] = PartDetection(mask.bounds(), mask, vector.copy())
                volumes = shadow_volumes if kind == "shadow" else object_volumes
                volumes[pair][frame] = mask
                dropped = rng.random() < config.dropout
                emb = _noisy_embedding(vector, config.embedding_noise, rng)
                conf = _confidence(config.confidence_noise, rng)
                if not dropped:
                    parts[kind] = PartDetection(mask.bounds(), mask, emb)
                    confidences.append(conf)

            gt_row.append(
                InstanceDetection(
                    frame=frame,
                    shadow=clean["shadow"],
                    object=clean["object"],
                    confidence=1.0,
                    gt_track=pair,
                )
            )
            if confidences:
                det_row.append(
                    InstanceDetection(
                        frame=frame,
                        shadow=parts["shadow"],
                        object=parts["object"],
                        confidence=sum(confidences) / len(confidences),
                        gt_track=pair,
                    )
                )
        gt_frames.append(tuple(gt_row))
        det_frames.append(tuple(det_row))

    triples = tuple(
        volume_triple(
            config.width,
            config.height,
            shadow_volumes[latent.pair],
            object_volumes[latent.pair],
            confidence=1.0,
            video_id=config.video_id,
        )
        for latent in latents
        if shadow_volumes[latent.pair] or object_volumes[latent.pair]
    )
    return SimulationResult(config, tuple(latents), tuple(gt_frames), tuple(det_frames), triples)


PRESETS = ("occluded-object", "late-pair", "two-pairs-crossing", "crowd")


def preset(name: str) -> ScenarioConfig:
    """Fixed scenario configurations exercising the tracker and retrieval.

    * ``occluded-object`` -- two pairs; pair 1 lives only during frames
      [7, 10) and its object is hidden for [8, 10), so frames 8 and 9 emit
      shadow-only detections. The shadow is twice the object's area, which
      drops the untracked portion of the association volume below the lowest
      evaluation threshold unless retrieval re-attaches it.
    * ``late-pair`` -- two pairs; pair 1's object is hidden before frame 8, so
      the pair first appears jointly at frame 8 and the earlier shadow-only
      detections can only be recovered by the reverse retrieval pass.
    * ``two-pairs-crossing`` -- two pairs sharing a lane and moving toward
      each other, boxes crossing mid-video; embedding noise 0.1.
    * ``crowd`` -- five pairs with embedding noise 0.1 and detector dropout
      0.05.
    """
    if name == "occluded-object":
        return ScenarioConfig(
            frames=20,
            pairs=2,
            embedding_noise=0.05,
            lifespans=((0, 20), (7, 10)),
            occlusions=(OcclusionWindow(1, "object", 8, 10),),
            object_size=(8, 8),
            shadow_size=(16, 8),
            shadow_offset=(0, 9),
            shadow_shear=0.0,
            seed=7,
            video_id="occluded-object",
        )
    if name == "late-pair":
        return ScenarioConfig(
            frames=20,
            pairs=2,
            embedding_noise=0.05,
            occlusions=(OcclusionWindow(1, "object", 0, 8),),
            seed=7,
            video_id="late-pair",
        )
    if name == "two-pairs-crossing":
        return ScenarioConfig(
            frames=20,
            pairs=2,
            embedding_noise=0.1,
            crossing=True,
            seed=7,
            video_id="two-pairs-crossing",
        )
    if name == "crowd":
        return ScenarioConfig(
            frames=20,
            pairs=5,
            embedding_noise=0.1,
            dropout=0.05,
            object_size=(10, 6),
            shadow_size=(10, 5),
            shadow_offset=(4, 6),
            seed=7,
            video_id="crowd",
        )
    raise ValueError(f"unknown preset {name!r}, expected one of {PRESETS}")
