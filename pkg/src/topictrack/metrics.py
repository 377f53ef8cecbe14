"""Tracking evaluation and dataset / representation statistics.

Evaluation functions take iterables of rows exposing ``frame``, ``track_id``
and ``box`` (see :class:`topictrack.io.TrackRow`). Rows from several videos
are passed as a mapping ``name -> rows`` or a list of row collections.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np

from .assoc import CostMatrix, FORBIDDEN, hungarian_solve
from .core import BoundingBox, boxes_to_array, iou_matrix
from .errors import DataError, EmptyReportError

Similarity = Callable[[np.ndarray], np.ndarray]


# ---------------------------------------------------------------- CLEAR / IDF1

@dataclass
class EvalReport:
    mota: float
    fp: int
    fn: int
    ids: int
    frag: int
    idf1: float
    num_gt: int
    num_pred: int
    idtp: int
    per_sequence: dict[str, "EvalReport"] = field(default_factory=dict)

    def as_dict(self) -> dict[str, float]:
        return {"MOTA": self.mota, "IDF1": self.idf1, "FP": self.fp, "FN": self.fn,
                "IDs": self.ids, "Frag": self.frag}


@dataclass
class _Clear:
    fp: int = 0
    fn: int = 0
    ids: int = 0
    frag: int = 0
    num_gt: int = 0
    num_pred: int = 0


def _by_frame(rows, what: str) -> dict[int, tuple[list[int], np.ndarray]]:
    grouped: dict[int, list] = defaultdict(list)
    for r in rows:
        grouped[int(r.frame)].append(r)
    out = {}
    for f, rs in grouped.items():
        ids = [int(r.track_id) for r in rs]
        if len(set(ids)) != len(ids):
            dup = next(i for i in ids if ids.count(i) > 1)
            raise DataError(f"{what}: id {dup} appears twice in frame {f}")
        out[f] = (ids, boxes_to_array([r.box for r in rs]))
    return out


def check_alignment(gt, pred) -> None:
    """Predictions must not reference frames past the last ground-truth frame."""
    gt_frames = [int(r.frame) for r in gt]
    pred_frames = [int(r.frame) for r in pred]
    if gt_frames and pred_frames and max(pred_frames) > max(gt_frames):
        raise DataError(f"results reach frame {max(pred_frames)} but ground truth ends at "
                        f"frame {max(gt_frames)}")


def _clear(gt, pred, iou_threshold: float) -> _Clear:
    G = _by_frame(gt, "ground truth")
    P = _by_frame(pred, "results")
    acc = _Clear()
    last_match: dict[int, int] = {}          # gt id -> pred id of its latest match
    tracked: dict[int, list[bool]] = defaultdict(list)
    for f in sorted(set(G) | set(P)):
        g_ids, g_boxes = G.get(f, ([], np.zeros((0, 4))))
        p_ids, p_boxes = P.get(f, ([], np.zeros((0, 4))))
        acc.num_gt += len(g_ids)
        acc.num_pred += len(p_ids)
        ious = iou_matrix(g_boxes, p_boxes)
        p_index = {p: j for j, p in enumerate(p_ids)}
        matched: dict[int, int] = {}
        # keep last correspondences that are still valid
        for i, g in enumerate(g_ids):
            p = last_match.get(g)
            j = p_index.get(p) if p is not None else None
            if j is not None and ious[i, j] >= iou_threshold and j not in matched.values():
                matched[i] = j
        free_g = [i for i in range(len(g_ids)) if i not in matched]
        used = set(matched.values())
        free_p = [j for j in range(len(p_ids)) if j not in used]
        if free_g and free_p:
            sub = ious[np.ix_(free_g, free_p)]
            cost = np.where(sub >= iou_threshold, 1.0 - sub, FORBIDDEN)
            for a, b in hungarian_solve(CostMatrix(cost)).pairs:
                i, j = free_g[a], free_p[b]
                g, p = g_ids[i], p_ids[j]
                if g in last_match and last_match[g] != p:
                    acc.ids += 1
                matched[i] = j
        for i, j in matched.items():
            last_match[g_ids[i]] = p_ids[j]
        for i, g in enumerate(g_ids):
            tracked[g].append(i in matched)
        acc.fn += len(g_ids) - len(matched)
        acc.fp += len(p_ids) - len(matched)
    for flags in tracked.values():
        on = [k for k, v in enumerate(flags) if v]
        if on:
            span = flags[on[0]:on[-1] + 1]
            acc.frag += sum(1 for a, b in zip(span, span[1:]) if not a and b)
    return acc


def _mota(c: _Clear) -> float:
    if c.num_gt == 0:
        return math.nan
    return 1.0 - (c.fn + c.fp + c.ids) / c.num_gt


def clear_eval(gt, pred, iou_threshold: float = 0.5) -> EvalReport:
    """CLEAR MOT counts with persistence of earlier correspondences.

    IDF1 is left at NaN; use :func:`evaluate` for the combined report.
    """
    c = _clear(gt, pred, iou_threshold)
    return EvalReport(_mota(c), c.fp, c.fn, c.ids, c.frag, math.nan, c.num_gt, c.num_pred, 0)


def _idtp(gt, pred, iou_threshold: float) -> tuple[int, int, int]:
    G = _by_frame(gt, "ground truth")
    P = _by_frame(pred, "results")
    counts: dict[tuple[int, int], int] = defaultdict(int)
    n_gt = sum(len(v[0]) for v in G.values())
    n_pred = sum(len(v[0]) for v in P.values())
    for f in set(G) & set(P):
        g_ids, g_boxes = G[f]
        p_ids, p_boxes = P[f]
        ious = iou_matrix(g_boxes, p_boxes)
        for i, j in zip(*np.nonzero(ious >= iou_threshold)):
            counts[(g_ids[i], p_ids[j])] += 1
    if not counts:
        return 0, n_gt, n_pred
    gs = sorted({g for g, _ in counts})
    ps = sorted({p for _, p in counts})
    gi = {g: k for k, g in enumerate(gs)}
    pi = {p: k for k, p in enumerate(ps)}
    overlap = np.zeros((len(gs), len(ps)))
    for (g, p), c in counts.items():
        overlap[gi[g], pi[p]] = c
    # the solver fills min(n, m) slots, so minimising C - count maximises overlap
    ms = hungarian_solve(CostMatrix(overlap.max() - overlap))
    idtp = int(sum(overlap[i, j] for i, j in ms.pairs))
    return idtp, n_gt, n_pred


def idf1_eval(gt, pred, iou_threshold: float = 0.5) -> float:
    """Identity F1 under the optimal one-to-one gt/prediction id correspondence."""
    idtp, n_gt, n_pred = _idtp(gt, pred, iou_threshold)
    if n_gt + n_pred == 0:
        return math.nan
    return 2.0 * idtp / (n_gt + n_pred)


def evaluate(gt, pred, iou_threshold: float = 0.5) -> EvalReport:
    """CLEAR counts and IDF1 for one sequence."""
    gt, pred = list(gt), list(pred)
    check_alignment(gt, pred)
    c = _clear(gt, pred, iou_threshold)
    idtp, n_gt, n_pred = _idtp(gt, pred, iou_threshold)
    idf1 = 2.0 * idtp / (n_gt + n_pred) if n_gt + n_pred else math.nan
    return EvalReport(_mota(c), c.fp, c.fn, c.ids, c.frag, idf1, c.num_gt, c.num_pred, idtp)


def evaluate_sequences(pairs: Mapping[str, tuple[Iterable, Iterable]],
                       iou_threshold: float = 0.5) -> EvalReport:
    """Pooled report over named ``(gt, pred)`` pairs, sorted by name."""
    per = {name: evaluate(*pairs[name], iou_threshold=iou_threshold) for name in sorted(pairs)}
    c = _Clear(sum(r.fp for r in per.values()), sum(r.fn for r in per.values()),
               sum(r.ids for r in per.values()), sum(r.frag for r in per.values()),
               sum(r.num_gt for r in per.values()), sum(r.num_pred for r in per.values()))
    idtp = sum(r.idtp for r in per.values())
    denom = c.num_gt + c.num_pred
    return EvalReport(_mota(c), c.fp, c.fn, c.ids, c.frag, 2.0 * idtp / denom if denom else math.nan,
                      c.num_gt, c.num_pred, idtp, per)


# ---------------------------------------------------------- motion complexity

def motion_intensity(prev: BoundingBox, cur: BoundingBox) -> float:
    """Top-left displacement normalised by the current box size."""
    return math.hypot((cur.x - prev.x) / cur.w, (cur.y - prev.y) / cur.h)


def _videos(dataset) -> list:
    if isinstance(dataset, Mapping):
        return [dataset[k] for k in sorted(dataset)]
    return list(dataset)


def object_speeds(rows) -> dict[int, dict[int, float]]:
    """Per-object ``{frame: S}`` for frames whose predecessor frame also has the object."""
    boxes: dict[int, dict[int, BoundingBox]] = defaultdict(dict)
    for r in rows:
        boxes[int(r.track_id)][int(r.frame)] = r.box
    out: dict[int, dict[int, float]] = {}
    for tid, series in boxes.items():
        out[tid] = {f: motion_intensity(series[f - 1], b) for f, b in series.items()
                    if f - 1 in series}
    return out


@dataclass
class VideoStats:
    frames: int
    objects: int
    frame_range_sum: float
    object_range_sum: float


@dataclass
class DatasetStats:
    mmsao: float
    mmso: float
    per_video: list[VideoStats]


def video_stats(rows, n_frames: Optional[int] = None) -> VideoStats:
    rows = list(rows)
    speeds = object_speeds(rows)
    T = n_frames if n_frames is not None else max((int(r.frame) for r in rows), default=0)
    per_frame: dict[int, list[float]] = defaultdict(list)
    obj_sum = 0.0
    for series in speeds.values():
        for f, s in series.items():
            per_frame[f].append(s)
        if series:
            obj_sum += max(series.values()) - min(series.values())
    frame_sum = math.fsum(max(v) - min(v) for v in per_frame.values())
    return VideoStats(T, len(speeds), frame_sum, obj_sum)


def dataset_stats(dataset, n_frames: Optional[Sequence[int]] = None) -> DatasetStats:
    """Both motion-complexity statistics; each video contributes per its own denominators."""
    videos = _videos(dataset)
    nf = list(n_frames) if n_frames is not None else [None] * len(videos)
    per = [video_stats(v, n) for v, n in zip(videos, nf)]
    T = sum(p.frames for p in per)
    M = sum(p.objects for p in per)
    mmsao_v = math.fsum(p.frame_range_sum for p in per) / T if T else 0.0
    mmso_v = math.fsum(p.object_range_sum for p in per) / M if M else 0.0
    return DatasetStats(mmsao_v, mmso_v, per)


def mmsao(dataset, n_frames: Optional[Sequence[int]] = None) -> float:
    """Mean over frames of the spread of object speeds within the frame."""
    return dataset_stats(dataset, n_frames).mmsao


def mmso(dataset) -> float:
    """Mean over objects of the spread of the object's speed over its lifetime."""
    return dataset_stats(dataset).mmso


# ---------------------------------------------------- representation quality

def cosine_matrix(E: np.ndarray) -> np.ndarray:
    E = np.asarray(E, dtype=np.float64)
    U = E / np.linalg.norm(E, axis=1, keepdims=True)
    return U @ U.T


def aarm_matrix(E: np.ndarray, normalize: bool = True) -> np.ndarray:
    """Pairwise reconstructed similarity of the rows of ``E``."""
    from .appearance import aarm_similarity_matrix
    return aarm_similarity_matrix(E, E, normalize=normalize)


def _offdiag_mean(E, similarity: Similarity) -> float:
    E = np.asarray(E, dtype=np.float64)
    n = len(E)
    if n < 2:
        return 0.0
    S = similarity(E)
    return (S.sum() - np.trace(S)) / n ** 2


def intercs(videos, similarity: Similarity = cosine_matrix) -> float:
    """Cross-object similarity within frames.

    ``videos`` is a list of videos, each a list of frames, each an
    ``(N, dim)`` array of the embeddings present in that frame.
    """
    videos = _videos(videos)
    T = sum(len(v) for v in videos)
    if not any(len(fr) >= 2 for v in videos for fr in v):
        raise EmptyReportError("no frame holds two or more embeddings")
    return math.fsum(_offdiag_mean(fr, similarity) for v in videos for fr in v) / T


def intracs(videos, similarity: Similarity = cosine_matrix) -> float:
    """Within-object similarity across frames.

    ``videos`` is a list of videos, each a list of objects, each an
    ``(L, dim)`` array of that object's embeddings over time.
    """
    videos = _videos(videos)
    n = sum(len(v) for v in videos)
    if not any(len(obj) >= 2 for v in videos for obj in v):
        raise EmptyReportError("no object has embeddings in two or more frames")
    return math.fsum(_offdiag_mean(obj, similarity) for v in videos for obj in v) / n


@dataclass
class RepresentationStats:
    intercs: float
    intracs: float
    aarm_intercs: float
    aarm_intracs: float

    @property
    def gap(self) -> float:
        return self.intracs - self.intercs

    @property
    def aarm_gap(self) -> float:
        return self.aarm_intracs - self.aarm_intercs


def group_records(records) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Split ``(frame, track_id, embedding)`` records into frame and object groups."""
    frames: dict[int, list] = defaultdict(list)
    objects: dict[int, list] = defaultdict(list)
    for r in sorted(records, key=lambda r: (r.frame, r.track_id)):
        frames[r.frame].append(r.embedding)
        objects[r.track_id].append(r.embedding)
    return ([np.stack(frames[f]) for f in sorted(frames)],
            [np.stack(objects[t]) for t in sorted(objects)])


def representation_report(runs, normalize: bool = True) -> RepresentationStats:
    """Raw-cosine and reconstructed statistics over recorded embeddings.

    ``runs`` is one record list (as produced by a tracker's embedding log)
    or a list / mapping of such lists, one per video.
    """
    if isinstance(runs, Mapping):
        runs = [runs[k] for k in sorted(runs)]
    runs = list(runs)
    if runs and not isinstance(runs[0], (list, tuple)):
        runs = [runs]
    if not any(runs):
        raise EmptyReportError("no embeddings were recorded")
    grouped = [group_records(r) for r in runs]
    fr = [g[0] for g in grouped]
    ob = [g[1] for g in grouped]
    aarm = lambda E: aarm_matrix(E, normalize)  # noqa: E731
    return RepresentationStats(intercs(fr), intracs(ob), intercs(fr, aarm), intracs(ob, aarm))
