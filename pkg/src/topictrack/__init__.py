"""Detector-agnostic multi-object association with parallel motion/appearance matching."""

__version__ = "0.1.0"

from .assoc import CostMatrix, MatchSet, Paradigm, baseline_match, hungarian_solve, topic_match
from .appearance import AppearanceConfig, aarm_similarity, aarm_similarity_matrix
from .core import BoundingBox, Detection, Tracklet, TrackState, iou
from .errors import (ConfigError, ContractViolation, DataError, EmptyGalleryError,
                     EmptyReportError, InvalidEmbeddingError, MotParseError, TrackingError)
from .metrics import EvalReport, evaluate, mmsao, mmso
from .motion import MotionConfig
from .tracker import FrameResult, Tracker, TrackerConfig, run_sequence

__all__ = [
    "AppearanceConfig", "BoundingBox", "ConfigError", "ContractViolation", "CostMatrix",
    "DataError", "Detection", "EmptyGalleryError", "EmptyReportError", "EvalReport", "FrameResult",
    "InvalidEmbeddingError", "MatchSet", "MotParseError", "MotionConfig", "Paradigm", "TrackState",
    "Tracker", "TrackerConfig", "TrackingError", "Tracklet", "aarm_similarity",
    "aarm_similarity_matrix", "baseline_match", "evaluate", "hungarian_solve", "iou", "mmsao",
    "mmso", "run_sequence", "topic_match",
]
