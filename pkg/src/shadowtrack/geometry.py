"""Binary masks, boxes, run-length coding, and frame/volume IoU.

All values are immutable after construction and all operations are pure, so
they can be shared freely across threads. IoU with an empty union is defined
as 0 so downstream average-precision computations stay total.
"""

from __future__ import annotations

from dataclasses import dataclass
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np


@dataclass(frozen=True)
class Box:
    """Axis-aligned box over the half-open region [x0, x1) x [y0, y1)."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self) -> None:
        if self.x1 < self.x0 or self.y1 < self.y0:
            raise ValueError(f"inverted box extents: {self}")

    @property
    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    def as_list(self) -> list[float]:
        return [self.x0, self.y0, self.x1, self.y1]


class BinaryMask:
    """Row-major boolean occupancy grid of fixed width x height."""

    __slots__ = ("pixels",)

    def __init__(self, pixels) -> None:
        arr = np.array(pixels, dtype=bool)
        if arr.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"mask dimensions must be positive, got {arr.shape}")
        arr.flags.writeable = False
        object.__setattr__(self, "pixels", arr)

    def __setattr__(self, name, value):
        raise AttributeError("BinaryMask is immutable")

    @classmethod
    def zeros(cls, width: int, height: int) -> "BinaryMask":
        return cls(np.zeros((height, width), dtype=bool))

    @classmethod
    def from_bits(cls, bits: Sequence[int], width: int, height: int) -> "BinaryMask":
        flat = np.asarray(bits, dtype=bool)
        if flat.size != width * height:
            raise ValueError(
                f"expected {width * height} bits for {width}x{height}, got {flat.size}"
            )
        return cls(flat.reshape(height, width))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def count(self) -> int:
        """Number of set pixels."""
        return int(self.pixels.sum())

    def __eq__(self, other) -> bool:
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(
            np.array_equal(self.pixels, other.pixels)
        )

    def __hash__(self):
        return hash((self.pixels.shape, self.pixels.tobytes()))

    def __repr__(self) -> str:
        return f"BinaryMask({self.width}x{self.height}, count={self.count})"

    def bounds(self) -> Box:
        """Tight half-open bounding box of the set pixels (zero box if empty)."""
        ys, xs = np.nonzero(self.pixels)
        if ys.size == 0:
            return Box(0.0, 0.0, 0.0, 0.0)
        return Box(float(xs.min()), float(ys.min()), float(xs.max()) + 1.0, float(ys.max()) + 1.0)


class MaskTrackVolume:
    """Frame-indexed stack of equally sized binary masks.

    Frames absent from the mapping are treated as empty masks by the
    spatio-temporal IoU. A volume may hold no frames at all; its dimensions
    are still carried explicitly so it stays comparable.
    """

    __slots__ = ("width", "height", "frames")

    def __init__(self, width: int, height: int, frames: Mapping[int, BinaryMask]) -> None:
        if width < 1 or height < 1:
            raise ValueError(f"volume dimensions must be positive, got {width}x{height}")
        ordered: dict[int, BinaryMask] = {}
        for index in sorted(frames):
            if not isinstance(index, (int, np.integer)) or index < 0:
                raise ValueError(f"frame indices must be non-negative integers, got {index!r}")
            mask = frames[index]
            if mask.width != width or mask.height != height:
                raise ValueError(
                    f"frame {index} is {mask.width}x{mask.height}, volume is {width}x{height}"
                )
            ordered[int(index)] = mask
        object.__setattr__(self, "width", int(width))
        object.__setattr__(self, "height", int(height))
        object.__setattr__(self, "frames", MappingProxyType(ordered))

    def __setattr__(self, name, value):
        raise AttributeError("MaskTrackVolume is immutable")

    @property
    def frame_indices(self) -> tuple[int, ...]:
        return tuple(self.frames)

    def __eq__(self, other) -> bool:
        if not isinstance(other, MaskTrackVolume):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and dict(self.frames) == dict(other.frames)
        )

    def __repr__(self) -> str:
        return f"MaskTrackVolume({self.width}x{self.height}, frames={list(self.frames)})"


def box_iou(a: Box, b: Box) -> float:
    """Intersection over union of two boxes; 0 when the union has no area."""
    iw = min(a.x1, b.x1) - max(a.x0, b.x0)
    ih = min(a.y1, b.y1) - max(a.y0, b.y0)
    inter = max(0.0, iw) * max(0.0, ih)
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def _check_same_dims(a, b) -> None:
    if a.width != b.width or a.height != b.height:
        raise ValueError(
            f"dimension mismatch: {a.width}x{a.height} vs {b.width}x{b.height}"
        )


def mask_iou(a: BinaryMask, b: BinaryMask) -> float:
    """Pixel IoU of two same-size masks; 0 when both are empty."""
    _check_same_dims(a, b)
    inter = int(np.logical_and(a.pixels, b.pixels).sum())
    union = int(np.logical_or(a.pixels, b.pixels).sum())
    if union == 0:
        return 0.0
    return inter / union


def st_iou(a: MaskTrackVolume, b: MaskTrackVolume) -> float:
    """Spatio-temporal IoU: summed per-frame intersections over summed unions.

    The sums run over the union of frame indices; a frame missing from one
    volume contributes an empty mask there, which penalises temporal
    misalignment. Returns 0 when the total union is empty.
    """
    _check_same_dims(a, b)
    inter_total = 0
    union_total = 0
    for index in set(a.frames) | set(b.frames):
        mask_a = a.frames.get(index)
        mask_b = b.frames.get(index)
        if mask_a is None:
            union_total += mask_b.count
        elif mask_b is None:
            union_total += mask_a.count
        else:
            inter_total += int(np.logical_and(mask_a.pixels, mask_b.pixels).sum())
            union_total += int(np.logical_or(mask_a.pixels, mask_b.pixels).sum())
    if union_total == 0:
        return 0.0
    return inter_total / union_total


def association_mask(shadow: BinaryMask, obj: BinaryMask) -> BinaryMask:
    """Combined shadow+object region: the pixelwise union of the two masks."""
    _check_same_dims(shadow, obj)
    return BinaryMask(np.logical_or(shadow.pixels, obj.pixels))


def rle_encode(mask: BinaryMask) -> list[int]:
    """Run lengths of the row-major scan, starting with a background run.

    The first entry always describes background pixels and may be zero-length
    when the scan opens with a set pixel.
    """
    flat = mask.pixels.ravel()
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], changes, [flat.size]))
    runs = np.diff(bounds).astype(int).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return runs


def rle_decode(runs: Iterable[int], width: int, height: int) -> BinaryMask:
    """Inverse of :func:`rle_encode`; the run lengths must sum to width*height."""
    runs = [int(r) for r in runs]
    if any(r < 0 for r in runs):
        raise ValueError(f"negative run length in {runs}")
    total = sum(runs)
    if total != width * height:
        raise ValueError(f"run lengths sum to {total}, expected {width * height}")
    values = np.arange(len(runs)) % 2 == 1
    flat = np.repeat(values, runs)
    return BinaryMask(flat.reshape(height, width))
