"""Frame-by-frame tracking-by-detection loop around the association step."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .appearance import AppearanceConfig, appearance_cost_matrix, gallery_push
from .assoc import (MatchSet, Paradigm, baseline_match, conflicted_pairs,
                    topic_match)
from .core import BoundingBox, Detection, Tracklet, TrackState
from .errors import ConfigError, ContractViolation
from .motion import MotionConfig, kf_init, motion_cost_matrix


@dataclass(frozen=True)
class TrackerConfig:
    alpha: float = 0.5
    paradigm: Paradigm = Paradigm.TOPIC
    det_conf_threshold: float = 0.5
    min_hits: int = 2
    max_age: int = 30
    motion: MotionConfig = field(default_factory=MotionConfig)
    appearance: AppearanceConfig = field(default_factory=AppearanceConfig)
    serial_filter_gate: float = 0.8

    def __post_init__(self):
        object.__setattr__(self, "paradigm", Paradigm.parse(self.paradigm))
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0,1], got {self.alpha}", "alpha")
        if not 0.0 <= self.det_conf_threshold <= 1.0:
            raise ConfigError(f"det_conf_threshold must lie in [0,1], got {self.det_conf_threshold}",
                              "det_conf_threshold")
        if self.min_hits < 1:
            raise ConfigError(f"min_hits must be >= 1, got {self.min_hits}", "min_hits")
        if self.max_age < 1:
            raise ConfigError(f"max_age must be >= 1, got {self.max_age}", "max_age")
        if not self.serial_filter_gate >= 0:
            raise ConfigError(f"serial_filter_gate must be >= 0, got {self.serial_filter_gate}",
                              "serial_filter_gate")

    def with_alpha(self, alpha: float) -> "TrackerConfig":
        return dataclasses.replace(self, alpha=alpha)


@dataclass(frozen=True)
class TrackOutput:
    track_id: int
    box: BoundingBox
    confidence: float


@dataclass
class FrameResult:
    """Emitted tracks of one frame plus association diagnostics.

    ``conflicted_pairs`` / ``candidate_pairs`` count candidate pairs of the
    two pre-matchings (TOPIC only) and give the frame's conflict rate.
    """

    frame: int
    tracks: list[TrackOutput]
    conflicts: int = 0
    appearance_resolutions: int = 0
    motion_resolutions: int = 0
    conflicted_pairs: int = 0
    candidate_pairs: int = 0

    def __post_init__(self):
        ids = [t.track_id for t in self.tracks]
        if len(set(ids)) != len(ids):
            raise ContractViolation(f"duplicate track id in frame {self.frame}")


def resolution_tally(ms: MatchSet) -> tuple[int, int, int]:
    """``(conflicts, appearance resolutions, motion resolutions)`` of a match."""
    return len(ms.conflicts), ms.appearance_resolutions, ms.motion_resolutions


@dataclass
class EmbeddingRecord:
    frame: int
    track_id: int
    embedding: np.ndarray


class Tracker:
    """Mutable state of one sequence.

    Args:
        cfg: tracker configuration.
        record_embeddings: keep every associated raw embedding, keyed by the
            track id it was assigned to (input for representation reports).
    """

    def __init__(self, cfg: TrackerConfig | None = None, record_embeddings: bool = False):
        self.cfg = cfg or TrackerConfig()
        self.tracks: list[Tracklet] = []
        self.next_id = 1
        self.last_frame = 0
        self.embedding_log: Optional[list[EmbeddingRecord]] = [] if record_embeddings else None

    def _associate(self, active: list[Tracklet], dets: list[Detection]) -> tuple[MatchSet, int, int]:
        cfg = self.cfg
        n, m = len(active), len(dets)
        par = cfg.paradigm
        a_cost = m_cost = None
        if par.uses_appearance:
            a_cost = appearance_cost_matrix(active, dets, cfg.appearance)
        if par.uses_motion:
            m_cost = motion_cost_matrix(active, dets, cfg.motion)
        if par is Paradigm.TOPIC:
            ms = topic_match(a_cost, m_cost, [t.motion_level for t in active], cfg.alpha)
            conflicted, total = conflicted_pairs(*ms.prematch)
            return ms, conflicted, total
        ms = baseline_match(par, a_cost, m_cost, cfg.serial_filter_gate)
        return ms, 0, 0

    def _log(self, frame: int, track_id: int, det: Detection) -> None:
        if self.embedding_log is not None and det.embedding is not None:
            self.embedding_log.append(EmbeddingRecord(frame, track_id, np.asarray(det.embedding)))

    def step(self, frame: int, detections: Sequence[Detection]) -> FrameResult:
        cfg = self.cfg
        if frame <= self.last_frame:
            raise ContractViolation(f"frame {frame} does not follow frame {self.last_frame}")
        for d in detections:
            if d.frame != frame:
                raise ContractViolation(f"detection of frame {d.frame} passed to frame {frame}")
        dets = [d for d in detections if d.confidence >= cfg.det_conf_threshold]
        if cfg.paradigm.uses_appearance:
            if any(d.embedding is None for d in dets):
                raise ConfigError(f"paradigm {cfg.paradigm.value} needs embeddings; "
                                  f"frame {frame} has detections without one")
        self.last_frame = frame

        active = self.tracks
        for t in active:
            t.predicted_box = t.motion.predict()

        if active and dets:
            ms, conflicted, candidates = self._associate(active, dets)
        else:
            ms = MatchSet.from_pairs([], len(active), len(dets))
            conflicted = candidates = 0
        n_conf, n_app, n_mot = resolution_tally(ms)

        emitted: list[TrackOutput] = []
        for i, j in ms.pairs:
            t, d = active[i], dets[j]
            t.motion.update(d.box)
            if d.embedding is not None:
                gallery_push(t, d.embedding, cfg.appearance)
            t.observe(d.box)
            t.hits += 1
            t.misses = 0
            if t.state is TrackState.LOST or (t.state is TrackState.TENTATIVE
                                              and t.hits >= cfg.min_hits):
                t.transition(TrackState.CONFIRMED)
            if t.state is TrackState.CONFIRMED:
                emitted.append(TrackOutput(t.id, d.box, d.confidence))
            self._log(frame, t.id, d)

        for i in ms.unmatched_tracklets:
            t = active[i]
            t.misses += 1
            t.hits = 0
            if t.state is TrackState.TENTATIVE:
                t.transition(TrackState.REMOVED)
            elif t.state is TrackState.CONFIRMED:
                t.transition(TrackState.LOST)
            if t.state is TrackState.LOST and t.misses > cfg.max_age:
                t.transition(TrackState.REMOVED)

        survivors = [t for t in active if t.state is not TrackState.REMOVED]
        for j in ms.unmatched_detections:
            d = dets[j]
            t = Tracklet(self.next_id, d.box, kf_init(d.box, cfg.motion), cfg.appearance.gallery_capacity)
            self.next_id += 1
            if d.embedding is not None:
                gallery_push(t, d.embedding, cfg.appearance)
            if t.hits >= cfg.min_hits:
                t.transition(TrackState.CONFIRMED)
                emitted.append(TrackOutput(t.id, d.box, d.confidence))
            survivors.append(t)
            self._log(frame, t.id, d)
        self.tracks = survivors

        emitted.sort(key=lambda o: o.track_id)
        return FrameResult(frame, emitted, n_conf, n_app, n_mot, conflicted, candidates)


def tracker_step(state: Tracker, frame: int, detections: Sequence[Detection],
                 cfg: TrackerConfig | None = None) -> tuple[Tracker, FrameResult]:
    """Functional form of :meth:`Tracker.step`; ``cfg`` must match the state's."""
    if cfg is not None and cfg != state.cfg:
        raise ContractViolation("tracker state was created with a different configuration")
    result = state.step(frame, detections)
    return state, result


def run_sequence(frames: Iterable[tuple[int, Sequence[Detection]]], cfg: TrackerConfig | None = None,
                 tracker: Tracker | None = None) -> list[FrameResult]:
    """Fold the tracker over ``(frame, detections)`` pairs in order."""
    tracker = tracker or Tracker(cfg)
    return [tracker.step(f, dets) for f, dets in frames]


def summarize(results: Sequence[FrameResult]) -> dict[str, float]:
    """Sequence-level association tallies."""
    conflicts = sum(r.conflicts for r in results)
    app = sum(r.appearance_resolutions for r in results)
    mot = sum(r.motion_resolutions for r in results)
    cp = sum(r.conflicted_pairs for r in results)
    cand = sum(r.candidate_pairs for r in results)
    return {
        "frames": len(results),
        "boxes": sum(len(r.tracks) for r in results),
        "tracks": len({t.track_id for r in results for t in r.tracks}),
        "conflicts": conflicts,
        "appearance_resolutions": app,
        "motion_resolutions": mot,
        "conflict_rate": cp / cand if cand else 0.0,
    }
