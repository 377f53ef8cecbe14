"""Linear assignment and the association paradigms.

``topic_match`` is the two-round parallel matcher: appearance and motion
costs are solved independently, agreeing pairs are kept, pairs proposed by
only one metric are kept when nothing competes with them, and the remaining
conflicts are settled one at a time by the tracklet's motion level.
"""

from __future__ import annotations

import enum
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ContractViolation

FORBIDDEN = math.inf

Pair = tuple[int, int]


class Paradigm(enum.Enum):
    TOPIC = "topic"
    MOTION_ONLY = "motion_only"
    APPEARANCE_ONLY = "appearance_only"
    SERIAL_MOTION_PRIMARY = "serial_motion_primary"
    SERIAL_APPEARANCE_PRIMARY = "serial_appearance_primary"

    @property
    def uses_appearance(self) -> bool:
        return self is not Paradigm.MOTION_ONLY

    @property
    def uses_motion(self) -> bool:
        return self is not Paradigm.APPEARANCE_ONLY

    @classmethod
    def parse(cls, name: "str | Paradigm") -> "Paradigm":
        if isinstance(name, Paradigm):
            return name
        key = str(name).strip().lower().replace("-", "_")
        aliases = {"motiononly": "motion_only", "appearanceonly": "appearance_only",
                   "serialmotionprimary": "serial_motion_primary",
                   "serialappearanceprimary": "serial_appearance_primary"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            legal = ", ".join(p.value for p in cls)
            raise ValueError(f"unknown paradigm {name!r} (expected one of: {legal})") from None


@dataclass(frozen=True)
class CostMatrix:
    """An ``n x m`` cost table; ``inf`` entries are forbidden pairs."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            v = v.reshape(0, 0) if v.size == 0 else v
        if v.ndim != 2:
            raise ContractViolation(f"cost matrix must be 2-D, got shape {v.shape}")
        if np.isnan(v).any():
            raise ContractViolation("cost matrix contains NaN")
        if (v < 0).any():
            raise ContractViolation("cost matrix entries must be non-negative")
        object.__setattr__(self, "values", v)

    @classmethod
    def empty(cls, n: int, m: int) -> "CostMatrix":
        return cls(np.full((n, m), FORBIDDEN))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def forbidden(self) -> np.ndarray:
        return ~np.isfinite(self.values)


@dataclass(frozen=True)
class ConflictRecord:
    """One settled conflict between an appearance pair and a motion pair.

    ``tracklet`` is the tracklet whose motion level decided the outcome.
    ``kind`` is ``"tracklet"`` when both pairs share that tracklet and
    ``"detection"`` when they compete for the same detection.
    """

    tracklet: int
    appearance_pair: Optional[Pair]
    motion_pair: Optional[Pair]
    kind: str
    resolution: str

    def __post_init__(self):
        if self.appearance_pair is None and self.motion_pair is None:
            raise ContractViolation("conflict record needs at least one side")
        if self.appearance_pair == self.motion_pair:
            raise ContractViolation("conflict sides must differ")


@dataclass
class MatchSet:
    pairs: list[Pair]
    unmatched_tracklets: list[int]
    unmatched_detections: list[int]
    conflicts: list[ConflictRecord] = field(default_factory=list)
    # per-metric pre-matches, filled by topic_match
    prematch: Optional[tuple["MatchSet", "MatchSet"]] = None

    @classmethod
    def from_pairs(cls, pairs, n: int, m: int, **kw) -> "MatchSet":
        pairs = sorted((int(i), int(j)) for i, j in pairs)
        ti = {i for i, _ in pairs}
        dj = {j for _, j in pairs}
        return cls(pairs, [i for i in range(n) if i not in ti], [j for j in range(m) if j not in dj], **kw)

    def validate(self, n: int, m: int) -> None:
        """Raise ContractViolation unless pairs and unmatched sets partition both ranges."""
        ts = [i for i, _ in self.pairs]
        ds = [j for _, j in self.pairs]
        if len(set(ts)) != len(ts) or len(set(ds)) != len(ds):
            raise ContractViolation("an index is matched twice")
        if sorted(ts + list(self.unmatched_tracklets)) != list(range(n)):
            raise ContractViolation("tracklet indices are not partitioned")
        if sorted(ds + list(self.unmatched_detections)) != list(range(m)):
            raise ContractViolation("detection indices are not partitioned")

    def total_cost(self, cost: CostMatrix) -> float:
        return math.fsum(float(cost.values[i, j]) for i, j in self.pairs)

    @property
    def appearance_resolutions(self) -> int:
        return sum(1 for c in self.conflicts if c.resolution == "appearance")

    @property
    def motion_resolutions(self) -> int:
        return sum(1 for c in self.conflicts if c.resolution == "motion")


def hungarian_solve(cost: CostMatrix) -> MatchSet:
    """Minimum-cost assignment that never uses a forbidden entry.

    Cardinality is maximised first and total cost minimised second; this is
    achieved by replacing forbidden entries with a sentinel larger than any
    achievable finite total and dropping sentinel pairs afterwards.
    """
    n, m = cost.shape
    allowed = np.isfinite(cost.values)
    rows = np.flatnonzero(allowed.any(axis=1))
    cols = np.flatnonzero(allowed.any(axis=0))
    if rows.size == 0 or cols.size == 0:
        return MatchSet.from_pairs([], n, m)
    sub = cost.values[np.ix_(rows, cols)]
    sub_ok = allowed[np.ix_(rows, cols)]
    largest = float(sub[sub_ok].max())
    sentinel = (largest + 1.0) * (min(sub.shape) + 1)
    work = np.where(sub_ok, sub, sentinel)
    r, c = linear_sum_assignment(work)
    keep = sub_ok[r, c]
    pairs = zip(rows[r[keep]].tolist(), cols[c[keep]].tolist())
    return MatchSet.from_pairs(pairs, n, m)


def _check_shapes(a_cost: CostMatrix, m_cost: CostMatrix) -> tuple[int, int]:
    if a_cost.shape != m_cost.shape:
        raise ContractViolation(
            f"appearance cost shape {a_cost.shape} != motion cost shape {m_cost.shape}")
    return a_cost.shape


def prefers_appearance(level: float, alpha: float) -> bool:
    """Conflict rule: trust appearance when the motion level is not below alpha.

    ``alpha == 1`` is the motion-only endpoint and never picks appearance,
    including for tracklets whose level is exactly 1.
    """
    return alpha < 1.0 and level >= alpha


def topic_match(a_cost: CostMatrix, m_cost: CostMatrix, motion_levels: Sequence[float],
                alpha: float) -> MatchSet:
    """Two-round parallel matching.

    Args:
        a_cost: appearance cost matrix (tracklets x detections).
        m_cost: motion cost matrix of the same shape.
        motion_levels: motion level of every tracklet row, in [0, 1].
        alpha: motion-level threshold in [0, 1].

    Returns:
        A MatchSet whose ``conflicts`` list records every resolution in the
        order it was made and whose ``prematch`` holds the two first-round
        solutions.
    """
    n, m = _check_shapes(a_cost, m_cost)
    if len(motion_levels) != n:
        raise ContractViolation(f"{len(motion_levels)} motion levels for {n} tracklets")
    if not 0.0 <= alpha <= 1.0:
        raise ContractViolation(f"alpha must lie in [0, 1], got {alpha}")

    # first round
    m_a = hungarian_solve(a_cost)
    m_m = hungarian_solve(m_cost)
    sa, sm = set(m_a.pairs), set(m_m.pairs)
    accepted = sa & sm
    source: dict[Pair, str] = {p: "a" for p in sa - sm}
    source.update({p: "m" for p in sm - sa})

    # second round
    records: list[ConflictRecord] = []
    while source:
        by_t: dict[int, list[Pair]] = defaultdict(list)
        by_d: dict[int, list[Pair]] = defaultdict(list)
        for p in source:
            by_t[p[0]].append(p)
            by_d[p[1]].append(p)
        free = [p for p in source if len(by_t[p[0]]) == 1 and len(by_d[p[1]]) == 1]
        for p in free:
            accepted.add(p)
            del source[p]
        if not source:
            break

        # each tracklet / detection holds at most one pair per metric
        pending = []
        for i, ps in by_t.items():
            if len(ps) == 2:
                pending.append((i, 0, i, ps))
        for j, ps in by_d.items():
            if len(ps) == 2:
                pending.append((min(p[0] for p in ps), 1, j, ps))
        owner, kind, _, ps = min(pending, key=lambda r: r[:3])
        pa = next(p for p in ps if source[p] == "a")
        pm = next(p for p in ps if source[p] == "m")
        if prefers_appearance(float(motion_levels[owner]), alpha):
            chosen, resolution = pa, "appearance"
        else:
            chosen, resolution = pm, "motion"
        records.append(ConflictRecord(owner, pa, pm, "tracklet" if kind == 0 else "detection",
                                      resolution))
        accepted.add(chosen)
        for p in [q for q in source if q[0] == chosen[0] or q[1] == chosen[1]]:
            del source[p]

    return MatchSet.from_pairs(accepted, n, m, conflicts=records, prematch=(m_a, m_m))


def serial_filter(primary: CostMatrix, secondary: CostMatrix, filter_gate: float) -> CostMatrix:
    """Forbid every primary entry whose secondary cost exceeds ``filter_gate``."""
    vals = primary.values.copy()
    vals[secondary.values > filter_gate] = FORBIDDEN
    return CostMatrix(vals)


def baseline_match(paradigm: "Paradigm | str", a_cost: Optional[CostMatrix],
                   m_cost: Optional[CostMatrix], filter_gate: float = math.inf) -> MatchSet:
    """Single-feature and serial association paradigms."""
    paradigm = Paradigm.parse(paradigm)
    if paradigm is Paradigm.MOTION_ONLY:
        return hungarian_solve(m_cost)
    if paradigm is Paradigm.APPEARANCE_ONLY:
        return hungarian_solve(a_cost)
    _check_shapes(a_cost, m_cost)
    if paradigm is Paradigm.SERIAL_MOTION_PRIMARY:
        return hungarian_solve(serial_filter(m_cost, a_cost, filter_gate))
    if paradigm is Paradigm.SERIAL_APPEARANCE_PRIMARY:
        return hungarian_solve(serial_filter(a_cost, m_cost, filter_gate))
    raise ValueError(f"{paradigm.value} is not a baseline paradigm")


def conflicted_pairs(m_a: MatchSet, m_m: MatchSet) -> tuple[int, int]:
    """Return ``(conflicted, distinct)`` pair counts over the union of two match sets."""
    union = set(m_a.pairs) | set(m_m.pairs)
    t_count: dict[int, int] = defaultdict(int)
    d_count: dict[int, int] = defaultdict(int)
    for i, j in union:
        t_count[i] += 1
        d_count[j] += 1
    conflicted = sum(1 for i, j in union if t_count[i] > 1 or d_count[j] > 1)
    return conflicted, len(union)


def conflict_rate(m_a: MatchSet, m_m: MatchSet) -> float:
    """Fraction of distinct candidate pairs that take part in a conflict."""
    conflicted, total = conflicted_pairs(m_a, m_m)
    return conflicted / total if total else 0.0
