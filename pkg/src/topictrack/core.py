"""Geometry primitives and the domain types shared across the package.

Boxes use the MOT convention: top-left corner plus width/height, in pixels,
interpreted as half-open rectangles ``[x, x + w) x [y, y + h)``.
"""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Optional, Sequence

import numpy as np

from .errors import ContractViolation, InvalidEmbeddingError

if TYPE_CHECKING:
    from .motion import MotionState


@dataclass(frozen=True)
class BoundingBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        vals = (self.x, self.y, self.w, self.h)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite box {vals}")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box must have positive size, got w={self.w}, h={self.h}")

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def center(self) -> tuple[float, float]:
        return self.x + 0.5 * self.w, self.y + 0.5 * self.h

    def to_xyxy(self) -> tuple[float, float, float, float]:
        return self.x, self.y, self.x + self.w, self.y + self.h

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.w, self.h], dtype=np.float64)

    @classmethod
    def from_center(cls, cx: float, cy: float, w: float, h: float) -> "BoundingBox":
        return cls(cx - 0.5 * w, cy - 0.5 * h, w, h)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes, in [0, 1]."""
    iw = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    ih = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return min(1.0, inter / (a.w * a.h + b.w * b.h - inter))


def motion_level(prev: BoundingBox, cur: BoundingBox) -> float:
    """Motion level of an object between two observed boxes: ``1 - iou``."""
    return 1.0 - iou(prev, cur)


def boxes_to_array(boxes: Sequence[BoundingBox]) -> np.ndarray:
    """Stack boxes into an ``(n, 4)`` array of ``x, y, w, h``."""
    if not boxes:
        return np.zeros((0, 4))
    return np.array([(b.x, b.y, b.w, b.h) for b in boxes], dtype=np.float64)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between ``(n, 4)`` and ``(m, 4)`` arrays of xywh boxes.

    Uses the same arithmetic as :func:`iou` so both agree bit for bit.
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    ax1, ay1 = a[:, 0:1], a[:, 1:2]
    ax2, ay2 = ax1 + a[:, 2:3], ay1 + a[:, 3:4]
    bx1, by1 = b[None, :, 0], b[None, :, 1]
    bx2, by2 = bx1 + b[None, :, 2], by1 + b[None, :, 3]
    iw = np.minimum(ax2, bx2) - np.maximum(ax1, bx1)
    ih = np.minimum(ay2, by2) - np.maximum(ay1, by1)
    overlap = (iw > 0) & (ih > 0)
    inter = np.where(overlap, iw * ih, 0.0)
    union = (a[:, 2:3] * a[:, 3:4]) + (b[None, :, 2] * b[None, :, 3]) - inter
    return np.where(overlap, np.minimum(inter / union, 1.0), 0.0)


def as_embedding(values, dim: int | None = None) -> np.ndarray:
    """Validate and convert ``values`` to a 1-D float64 embedding."""
    e = np.asarray(values, dtype=np.float64)
    if e.ndim != 1 or e.size == 0:
        raise InvalidEmbeddingError(f"embedding must be a non-empty vector, got shape {e.shape}")
    if dim is not None and e.size != dim:
        raise InvalidEmbeddingError(f"embedding dim {e.size} != expected {dim}")
    if not np.all(np.isfinite(e)):
        raise InvalidEmbeddingError("embedding contains non-finite values")
    return e


def l2_normalize(e: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(e))
    if norm == 0.0:
        raise InvalidEmbeddingError("zero-norm embedding")
    return e / norm


@dataclass(frozen=True)
class Detection:
    frame: int
    box: BoundingBox
    confidence: float
    embedding: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        if self.frame < 1:
            raise ValueError(f"frame index must be >= 1, got {self.frame}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must lie in [0, 1], got {self.confidence}")


class TrackState(enum.Enum):
    TENTATIVE = "tentative"
    CONFIRMED = "confirmed"
    LOST = "lost"
    REMOVED = "removed"


_ALLOWED = {
    TrackState.TENTATIVE: {TrackState.CONFIRMED, TrackState.REMOVED},
    TrackState.CONFIRMED: {TrackState.LOST},
    TrackState.LOST: {TrackState.CONFIRMED, TrackState.REMOVED},
    TrackState.REMOVED: set(),
}


class Tracklet:
    """A persistent identity: motion filter, appearance gallery and lifecycle.

    ``motion_level`` is derived from the two most recent *associated*
    detection boxes and is 1 until a second box has been observed.
    """

    def __init__(self, track_id: int, box: BoundingBox, motion: "MotionState",
                 gallery_capacity: int = 30):
        if track_id < 1:
            raise ValueError("track ids are positive integers")
        self.id = track_id
        self.state = TrackState.TENTATIVE
        self.motion = motion
        self.gallery: deque[np.ndarray] = deque(maxlen=gallery_capacity)
        self.last_box = box
        self.prev_box: Optional[BoundingBox] = None
        self.motion_level = 1.0
        self.hits = 1
        self.misses = 0
        self.predicted_box: Optional[BoundingBox] = None

    def transition(self, new: TrackState) -> None:
        if new is self.state:
            return
        if new not in _ALLOWED[self.state]:
            raise ContractViolation(f"illegal track transition {self.state.name} -> {new.name}")
        self.state = new

    def observe(self, box: BoundingBox) -> None:
        """Record a newly associated box and refresh the motion level."""
        self.prev_box = self.last_box
        self.last_box = box
        self.motion_level = motion_level(self.prev_box, box)

    def __repr__(self):
        return (f"Tracklet(id={self.id}, state={self.state.name}, hits={self.hits}, "
                f"misses={self.misses}, level={self.motion_level:.3f})")
