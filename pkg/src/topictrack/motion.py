"""Constant-velocity Kalman filter over boxes and the motion cost matrix.

State layout is ``[cx, cy, s, r, vx, vy, vs]`` with ``s`` the box area and
``r`` the aspect ratio ``w / h`` (held constant). Noise is expressed relative
to the scale of the most recent observation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .assoc import FORBIDDEN, CostMatrix
from .core import BoundingBox, Detection, Tracklet, boxes_to_array, iou_matrix

FLOOR = 1e-6

_F = np.eye(7)
_F[0, 4] = _F[1, 5] = _F[2, 6] = 1.0
_H = np.eye(4, 7)


@dataclass(frozen=True)
class MotionConfig:
    process_noise_scale: float = 1e-2
    observation_noise_scale: float = 1e-1
    use_observation_recovery: bool = True
    use_direction_consistency: bool = False
    direction_weight: float = 0.2

    def __post_init__(self):
        for name in ("process_noise_scale", "observation_noise_scale"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be finite and > 0, got {v}")
        if not (math.isfinite(self.direction_weight) and self.direction_weight >= 0):
            raise ValueError(f"direction_weight must be finite and >= 0, got {self.direction_weight}")


def _measure(box: BoundingBox) -> np.ndarray:
    cx, cy = box.center
    return np.array([cx, cy, box.w * box.h, box.w / box.h])


def _scales(box: BoundingBox) -> np.ndarray:
    return np.array([box.w, box.h, box.w * box.h, box.w / box.h])


def state_to_box(mean: np.ndarray) -> BoundingBox:
    s = max(float(mean[2]), FLOOR)
    r = max(float(mean[3]), FLOOR)
    w = math.sqrt(s * r)
    h = s / w
    return BoundingBox.from_center(float(mean[0]), float(mean[1]), w, h)


class MotionState:
    """Kalman state of one tracklet.

    ``age_since_update`` counts predictions since the last measurement;
    ``last_observation`` is the most recent measured box.
    """

    def __init__(self, mean: np.ndarray, covariance: np.ndarray, cfg: MotionConfig,
                 last_observation: Optional[BoundingBox] = None):
        self.mean = mean
        self.covariance = covariance
        self.cfg = cfg
        self.age_since_update = 0
        self.last_observation = last_observation
        self.observations: list[BoundingBox] = [] if last_observation is None else [last_observation]
        # filter snapshot at the last measurement, replayed by observation recovery
        self._frozen: Optional[tuple[np.ndarray, np.ndarray]] = None

    def copy(self) -> "MotionState":
        dup = MotionState(self.mean.copy(), self.covariance.copy(), self.cfg, self.last_observation)
        dup.age_since_update = self.age_since_update
        dup.observations = list(self.observations)
        dup._frozen = None if self._frozen is None else (self._frozen[0].copy(), self._frozen[1].copy())
        return dup

    @property
    def box(self) -> BoundingBox:
        return state_to_box(self.mean)

    def _process_noise(self) -> np.ndarray:
        # positions diffuse at the observation scale, velocities at the process scale
        sc = _scales(self.last_observation or self.box)
        pos = sc * self.cfg.observation_noise_scale
        vel = sc[:3] * self.cfg.process_noise_scale
        return np.diag(np.concatenate([pos, vel]) ** 2)

    def _observation_noise(self, box: BoundingBox) -> np.ndarray:
        return np.diag((_scales(box) * self.cfg.observation_noise_scale) ** 2)

    def _propagate(self) -> None:
        x = self.mean
        if x[2] + x[6] <= 0:
            x[6] = 0.0
        x = _F @ x
        x[2] = max(x[2], FLOOR)
        x[3] = max(x[3], FLOOR)
        P = _F @ self.covariance @ _F.T + self._process_noise()
        self.mean = x
        self.covariance = 0.5 * (P + P.T)

    def _correct(self, box: BoundingBox) -> None:
        z = _measure(box)
        P = self.covariance
        S = _H @ P @ _H.T + self._observation_noise(box)
        K = np.linalg.solve(S, _H @ P).T
        self.mean = self.mean + K @ (z - _H @ self.mean)
        self.mean[2] = max(self.mean[2], FLOOR)
        self.mean[3] = max(self.mean[3], FLOOR)
        A = np.eye(7) - K @ _H
        P = A @ P @ A.T + K @ self._observation_noise(box) @ K.T
        self.covariance = 0.5 * (P + P.T)

    def predict(self) -> BoundingBox:
        self._propagate()
        self.age_since_update += 1
        return self.box

    def update(self, box: BoundingBox) -> "MotionState":
        gap = self.age_since_update
        if (self.cfg.use_observation_recovery and gap >= 2 and self._frozen is not None
                and self.last_observation is not None):
            self._replay(box, gap)
        self._correct(box)
        self.age_since_update = 0
        self.last_observation = box
        self.observations = (self.observations + [box])[-2:]
        self._frozen = (self.mean.copy(), self.covariance.copy())
        return self

    def _replay(self, box: BoundingBox, gap: int) -> None:
        """Re-run the lost interval on a straight virtual path to ``box``.

        Afterwards the filter stands one prediction before the real update,
        as it would have had the object been seen every frame.
        """
        self.mean, self.covariance = self._frozen[0].copy(), self._frozen[1].copy()
        start = self.last_observation.as_array()
        end = box.as_array()
        for k in range(1, gap):
            frac = k / gap
            x, y, w, h = start + (end - start) * frac
            self._propagate()
            self._correct(BoundingBox(x, y, w, h))
        self._propagate()

    def direction(self) -> Optional[np.ndarray]:
        """Unit direction of the last observed displacement, if any."""
        if len(self.observations) < 2:
            return None
        a, b = self.observations[-2].center, self.observations[-1].center
        v = np.array([b[0] - a[0], b[1] - a[1]])
        n = float(np.hypot(*v))
        return v / n if n > 0 else None


def kf_init(box: BoundingBox, cfg: MotionConfig | None = None) -> MotionState:
    """Fresh filter at ``box`` with zero velocity."""
    cfg = cfg or MotionConfig()
    mean = np.concatenate([_measure(box), np.zeros(3)])
    sc = _scales(box)
    pos_var = (2.0 * cfg.observation_noise_scale * sc) ** 2
    vel_var = sc[:3] ** 2
    cov = np.diag(np.concatenate([pos_var, vel_var]))
    state = MotionState(mean, cov, cfg, last_observation=box)
    state._frozen = (mean.copy(), cov.copy())
    return state


def kf_predict(state: MotionState) -> BoundingBox:
    """Advance ``state`` one frame in place and return the predicted box."""
    return state.predict()


def kf_update(state: MotionState, box: BoundingBox) -> MotionState:
    """Measurement update in place; returns ``state`` for chaining."""
    return state.update(box)


def direction_inconsistency(tracklets: Sequence[Tracklet], det_boxes: np.ndarray) -> np.ndarray:
    """Angle between each tracklet's last observed heading and the heading to each detection.

    Normalised to [0, 1] by pi. Zero when either heading is undefined.
    """
    n, m = len(tracklets), len(det_boxes)
    out = np.zeros((n, m))
    if n == 0 or m == 0:
        return out
    det_c = det_boxes[:, :2] + 0.5 * det_boxes[:, 2:]
    for i, t in enumerate(tracklets):
        heading = t.motion.direction()
        if heading is None or t.motion.last_observation is None:
            continue
        ox, oy = t.motion.last_observation.center
        d = det_c - np.array([ox, oy])
        norm = np.hypot(d[:, 0], d[:, 1])
        ok = norm > 0
        cosang = np.clip((d[ok] @ heading) / norm[ok], -1.0, 1.0)
        out[i, ok] = np.arccos(cosang) / math.pi
    return out


def motion_cost_from_iou(ious: np.ndarray, direction: Optional[np.ndarray] = None,
                         direction_weight: float = 0.0) -> CostMatrix:
    ious = np.asarray(ious, dtype=np.float64)
    cost = 1.0 - ious
    if direction is not None:
        cost = cost + direction_weight * direction
    cost = np.where(ious > 0.0, cost, FORBIDDEN)
    return CostMatrix(cost.reshape(np.shape(ious)))


def motion_cost_matrix(tracklets: Sequence[Tracklet], detections: Sequence[Detection],
                       cfg: MotionConfig | None = None) -> CostMatrix:
    """``1 - IoU`` between predicted tracklet boxes and detections.

    Uses ``tracklet.predicted_box`` (set by the tracker's predict step) and
    falls back to the current filter box when no prediction was made.
    """
    cfg = cfg or MotionConfig()
    n, m = len(tracklets), len(detections)
    if n == 0 or m == 0:
        return CostMatrix(np.zeros((n, m)))
    preds = boxes_to_array([t.predicted_box or t.motion.box for t in tracklets])
    dets = boxes_to_array([d.box for d in detections])
    ious = iou_matrix(preds, dets)
    direction = None
    if cfg.use_direction_consistency:
        direction = direction_inconsistency(tracklets, dets)
    return motion_cost_from_iou(ious, direction, cfg.direction_weight)
