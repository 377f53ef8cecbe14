"""Seeded synthetic scenarios: ground truth, noisy detections, embeddings.

Randomness comes from :class:`SplitMix64`, written out here so the same
seed produces the same scenario in any implementation:

* state advances by ``0x9E3779B97F4A7C15`` (mod 2^64) per draw; the output
  is ``z = state; z = (z ^ z>>30) * 0xBF58476D1CE4E5B9;
  z = (z ^ z>>27) * 0x94D049BB133111EB; z ^ z>>31``;
* a uniform is ``(z >> 11) * 2^-53`` in ``[0, 1)``;
* a normal consumes two uniforms ``u1, u2`` and is
  ``sqrt(-2 ln(1 - u1)) * cos(2 pi u2)``;
* an integer in ``[lo, hi]`` is ``lo + floor(u * (hi - lo + 1))``.

Each concern draws from its own stream, seeded with
``mix(seed + k * 0x9E3779B97F4A7C15)`` for stream ``k``: 1 object setup and
motion, 2 identity prototypes, 3 detector noise, 4 embedding noise,
5 the clustered embedding benchmark.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import BoundingBox, Detection, iou_matrix
from .errors import ConfigError
from .io import (GroundTruthRow, emit_detections, emit_embedding_sidecar, emit_ground_truth,
                 parse_bool, parse_key_values, parse_number, _write, format_value)
from .metrics import DatasetStats, dataset_stats

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


class SplitMix64:
    """Sequential SplitMix64; batch draws equal the same number of single draws."""

    def __init__(self, seed: int):
        self.state = int(seed) & _MASK

    @classmethod
    def stream(cls, seed: int, k: int) -> "SplitMix64":
        base = np.array([(int(seed) + k * int(_GAMMA)) & _MASK], dtype=np.uint64)
        return cls(int(_mix(base)[0]))

    def next_u64(self, n: int) -> np.ndarray:
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + steps * _GAMMA
            out = _mix(z)
        self.state = (self.state + n * int(_GAMMA)) & _MASK
        return out

    def uniform(self, n: int = 1) -> np.ndarray:
        return (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53

    def uniform1(self, lo: float = 0.0, hi: float = 1.0) -> float:
        return lo + (hi - lo) * float(self.uniform(1)[0])

    def normal(self, n: int = 1) -> np.ndarray:
        u = self.uniform(2 * n)
        return np.sqrt(-2.0 * np.log1p(-u[0::2])) * np.cos(2.0 * math.pi * u[1::2])

    def integer(self, lo: int, hi: int) -> int:
        return lo + int(math.floor(float(self.uniform(1)[0]) * (hi - lo + 1)))


class Regime(enum.Enum):
    LINEAR = "linear"
    WAYPOINT = "waypoint"
    DART = "dart"


@dataclass(frozen=True)
class ScenarioConfig:
    """Scenario parameters.

    ``regime`` is a single regime name or ``mixed``. With ``mixed`` the last
    ``round(dart_fraction * objects)`` objects are Dart and the rest Linear.
    Dart objects dwell for a geometric number of frames (per-frame stay
    probability ``dwell_probability``) and then burst in a straight line for
    ``burst_min_frames..burst_max_frames`` frames at
    ``burst_speed * min(width, height)`` pixels per frame.
    Occlusion corruption applies to objects whose regime is listed in
    ``corrupt_regimes``.
    """

    width: float = 640.0
    height: float = 480.0
    objects: int = 10
    frames: int = 300
    regime: str = "mixed"
    dart_fraction: float = 0.5
    dwell_probability: float = 0.7
    burst_speed: float = 0.2
    burst_min_frames: int = 2
    burst_max_frames: int = 6
    speed_min: float = 2.0
    speed_max: float = 6.0
    box_min: float = 40.0
    box_max: float = 80.0
    miss_rate: float = 0.05
    fp_rate: float = 0.1
    jitter: float = 1.0
    emb_dim: int = 128
    emb_noise: float = 0.05
    corruption: float = 0.8
    occlusion_iou: float = 0.3
    corrupt_regimes: str = "linear,waypoint,dart"
    seed: int = 0

    def __post_init__(self):
        def bad(key, legal):
            raise ConfigError(f"{key}: value {getattr(self, key)} is out of legal range {legal}", key)
        if not self.width > 0:
            bad("width", "(0, inf)")
        if not self.height > 0:
            bad("height", "(0, inf)")
        if self.objects < 0:
            bad("objects", "[0, inf)")
        if self.frames < 2:
            bad("frames", "[2, inf)")
        if self.regime not in ("mixed",) + tuple(r.value for r in Regime):
            raise ConfigError(f"regime: unknown value {self.regime!r}", "regime")
        for key in ("dart_fraction", "corruption", "occlusion_iou"):
            if not 0.0 <= getattr(self, key) <= 1.0:
                bad(key, "[0,1]")
        for key in ("dwell_probability", "miss_rate"):
            if not 0.0 <= getattr(self, key) < 1.0:
                bad(key, "[0,1)")
        if not 0.0 < self.burst_speed <= 1.0:
            bad("burst_speed", "(0,1]")
        if not 1 <= self.burst_min_frames <= self.burst_max_frames:
            bad("burst_min_frames", "[1, burst_max_frames]")
        if not 0.0 <= self.speed_min <= self.speed_max:
            bad("speed_min", "[0, speed_max]")
        if not 0.0 < self.box_min <= self.box_max:
            bad("box_min", "(0, box_max]")
        if not self.box_max * 4.0 / 3.0 < min(self.width, self.height):
            bad("box_max", "(0, 0.75 * min(width, height))")
        for key in ("fp_rate", "jitter", "emb_noise"):
            if not (math.isfinite(getattr(self, key)) and getattr(self, key) >= 0):
                bad(key, "[0, inf)")
        if self.emb_dim < 2:
            bad("emb_dim", "[2, inf)")
        for name in self.corrupt_regime_set:
            if name not in tuple(r.value for r in Regime):
                raise ConfigError(f"corrupt_regimes: unknown regime {name!r}", "corrupt_regimes")
        if not 0 <= self.seed < 2 ** 64:
            bad("seed", "[0, 2^64)")

    @property
    def corrupt_regime_set(self) -> frozenset:
        return frozenset(s.strip() for s in self.corrupt_regimes.split(",") if s.strip())

    def regimes(self) -> list[Regime]:
        if self.regime != "mixed":
            return [Regime(self.regime)] * self.objects
        n_dart = int(round(self.dart_fraction * self.objects))
        return [Regime.LINEAR] * (self.objects - n_dart) + [Regime.DART] * n_dart


@dataclass
class Scenario:
    config: ScenarioConfig
    gt: list[GroundTruthRow]
    detections: dict[int, list[Detection]]
    # gt id behind each detection (0 marks a synthetic false positive)
    sources: dict[int, list[int]]
    regimes: list[Regime] = field(default_factory=list)

    @property
    def n_frames(self) -> int:
        return self.config.frames

    def frames(self) -> list[tuple[int, list[Detection]]]:
        return [(f, self.detections.get(f, [])) for f in range(1, self.n_frames + 1)]


# ------------------------------------------------------------------ motion

def _reflect(pos: float, vel: float, lo: float, hi: float) -> tuple[float, float]:
    span = hi - lo
    if span <= 0:
        return lo, 0.0
    p = pos - lo
    period = 2.0 * span
    p = math.fmod(p, period)
    if p < 0:
        p += period
    if p > span:
        return lo + period - p, -vel
    return lo + p, vel


class _Mover:
    def __init__(self, regime: Regime, cfg: ScenarioConfig, rng: SplitMix64):
        self.regime = regime
        self.cfg = cfg
        self.w = rng.uniform1(cfg.box_min, cfg.box_max)
        self.h = self.w * rng.uniform1(0.75, 4.0 / 3.0)
        self.lo = (self.w / 2, self.h / 2)
        self.hi = (cfg.width - self.w / 2, cfg.height - self.h / 2)
        self.cx = rng.uniform1(self.lo[0], self.hi[0])
        self.cy = rng.uniform1(self.lo[1], self.hi[1])
        self.vx = self.vy = 0.0
        self.left = 0
        self.bursting = False
        if regime is Regime.LINEAR:
            self._heading(rng, rng.uniform1(cfg.speed_min, cfg.speed_max))
        elif regime is Regime.WAYPOINT:
            self.speed = rng.uniform1(cfg.speed_min, cfg.speed_max)
            self._waypoint(rng)
        else:
            self.left = self._dwell_length(rng)

    def _heading(self, rng: SplitMix64, speed: float) -> None:
        ang = rng.uniform1(0.0, 2.0 * math.pi)
        self.vx, self.vy = speed * math.cos(ang), speed * math.sin(ang)

    def _waypoint(self, rng: SplitMix64) -> None:
        self.wx = rng.uniform1(self.lo[0], self.hi[0])
        self.wy = rng.uniform1(self.lo[1], self.hi[1])

    def _dwell_length(self, rng: SplitMix64) -> int:
        u = float(rng.uniform(1)[0])
        p = self.cfg.dwell_probability
        if p == 0.0:
            return 1
        return 1 + int(math.floor(math.log1p(-u) / math.log(p)))

    def box(self) -> BoundingBox:
        return BoundingBox.from_center(self.cx, self.cy, self.w, self.h)

    def step(self, rng: SplitMix64) -> None:
        cfg = self.cfg
        if self.regime is Regime.WAYPOINT:
            dx, dy = self.wx - self.cx, self.wy - self.cy
            dist = math.hypot(dx, dy)
            if dist <= self.speed:
                self.cx, self.cy = self.wx, self.wy
                self._waypoint(rng)
                return
            self.vx, self.vy = self.speed * dx / dist, self.speed * dy / dist
        elif self.regime is Regime.DART:
            if self.left == 0:
                self.bursting = not self.bursting
                if self.bursting:
                    self.left = rng.integer(cfg.burst_min_frames, cfg.burst_max_frames)
                    self._heading(rng, cfg.burst_speed * min(cfg.width, cfg.height))
                else:
                    self.left = self._dwell_length(rng)
                    self.vx = self.vy = 0.0
            self.left -= 1
        self.cx, self.vx = _reflect(self.cx + self.vx, self.vx, self.lo[0], self.hi[0])
        self.cy, self.vy = _reflect(self.cy + self.vy, self.vy, self.lo[1], self.hi[1])


# --------------------------------------------------------------- generation

def _unit_rows(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def generate(cfg: ScenarioConfig) -> Scenario:
    """Build ground truth, detections and embeddings for ``cfg``."""
    motion_rng = SplitMix64.stream(cfg.seed, 1)
    proto_rng = SplitMix64.stream(cfg.seed, 2)
    det_rng = SplitMix64.stream(cfg.seed, 3)
    emb_rng = SplitMix64.stream(cfg.seed, 4)

    regimes = cfg.regimes()
    movers = [_Mover(r, cfg, motion_rng) for r in regimes]
    dim = cfg.emb_dim
    protos = _unit_rows(proto_rng.normal(max(1, cfg.objects) * dim).reshape(-1, dim))
    corruptible = np.array([r.value in cfg.corrupt_regime_set for r in regimes], dtype=bool)

    gt: list[GroundTruthRow] = []
    detections: dict[int, list[Detection]] = {}
    sources: dict[int, list[int]] = {}
    for f in range(1, cfg.frames + 1):
        if f > 1:
            for mv in movers:
                mv.step(motion_rng)
        boxes = [mv.box() for mv in movers]
        gt.extend(GroundTruthRow(f, k + 1, b) for k, b in enumerate(boxes))

        # occluder of each object: the overlapping box whose bottom edge is lower
        arr = np.array([(b.x, b.y, b.w, b.h) for b in boxes]).reshape(-1, 4)
        ious = iou_matrix(arr, arr)
        bottoms = arr[:, 1] + arr[:, 3]
        occluder = np.full(len(boxes), -1)
        for i in range(len(boxes)):
            cand = [j for j in range(len(boxes))
                    if j != i and ious[i, j] > cfg.occlusion_iou and bottoms[j] > bottoms[i]]
            if cand:
                occluder[i] = max(cand, key=lambda j: (ious[i, j], -j))

        dets: list[Detection] = []
        src: list[int] = []
        for k, b in enumerate(boxes):
            u_miss, u_conf = det_rng.uniform(2)
            noise = det_rng.normal(4) * cfg.jitter
            e = protos[k] + cfg.emb_noise * emb_rng.normal(dim)
            if u_miss < cfg.miss_rate:
                continue
            e = e / np.linalg.norm(e)
            if occluder[k] >= 0 and corruptible[k] and cfg.corruption > 0:
                e = (1.0 - cfg.corruption) * e + cfg.corruption * protos[occluder[k]]
                e = e / np.linalg.norm(e)
            w = max(1.0, b.w + noise[2])
            h = max(1.0, b.h + noise[3])
            box = BoundingBox(b.x + noise[0], b.y + noise[1], w, h)
            dets.append(Detection(f, box, 0.6 + 0.4 * float(u_conf), e))
            src.append(k + 1)
        n_fp = int(math.floor(cfg.fp_rate))
        if det_rng.uniform1() < cfg.fp_rate - n_fp:
            n_fp += 1
        for _ in range(n_fp if boxes else 0):
            ref = boxes[det_rng.integer(0, len(boxes) - 1)]
            x = det_rng.uniform1(0.0, cfg.width - ref.w)
            y = det_rng.uniform1(0.0, cfg.height - ref.h)
            conf = det_rng.uniform1(0.5, 0.8)
            e = _unit_rows(emb_rng.normal(dim))
            dets.append(Detection(f, BoundingBox(x, y, ref.w, ref.h), conf, e))
            src.append(0)
        if dets:
            detections[f] = dets
            sources[f] = src
    return Scenario(cfg, gt, detections, sources, regimes)


def scenario_stats(s: Scenario) -> DatasetStats:
    """Motion-complexity statistics of the scenario's ground truth."""
    return dataset_stats([s.gt], n_frames=[s.n_frames])


def export(s: Scenario, directory, provenance: bool = True) -> dict[str, Path]:
    """Write ``gt.txt``, ``det.txt`` and ``emb.csv`` (plus ``scenario.cfg``)."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"gt": out / "gt.txt", "det": out / "det.txt", "emb": out / "emb.csv"}
    emit_ground_truth(s.gt, paths["gt"])
    emit_detections([d for f in sorted(s.detections) for d in s.detections[f]], paths["det"])
    emit_embedding_sidecar(s.detections, paths["emb"])
    if provenance:
        paths["scenario"] = out / "scenario.cfg"
        emit_scenario_config(s.config, paths["scenario"])
    return paths


# ------------------------------------------------------------- config files

_SCENARIO_RANGES = {
    "width": (float, 0.0, math.inf), "height": (float, 0.0, math.inf),
    "objects": (int, 0, 10 ** 6), "frames": (int, 2, 10 ** 7),
    "dart_fraction": (float, 0.0, 1.0), "dwell_probability": (float, 0.0, 1.0),
    "burst_speed": (float, 0.0, 1.0), "burst_min_frames": (int, 1, 10 ** 6),
    "burst_max_frames": (int, 1, 10 ** 6), "speed_min": (float, 0.0, math.inf),
    "speed_max": (float, 0.0, math.inf), "box_min": (float, 0.0, math.inf),
    "box_max": (float, 0.0, math.inf), "miss_rate": (float, 0.0, 1.0),
    "fp_rate": (float, 0.0, math.inf), "jitter": (float, 0.0, math.inf),
    "emb_dim": (int, 2, 10 ** 6), "emb_noise": (float, 0.0, math.inf),
    "corruption": (float, 0.0, 1.0), "occlusion_iou": (float, 0.0, 1.0), "seed": (int, 0, 2 ** 64 - 1),
}
SCENARIO_KEYS = tuple(f.name for f in fields(ScenarioConfig))


def load_scenario_config(source=None) -> ScenarioConfig:
    """Flat ``key = value`` scenario file; unknown keys are rejected."""
    values: dict = {}
    if source is not None:
        for _, key, raw in parse_key_values(source):
            if key not in SCENARIO_KEYS:
                raise ConfigError(f"unknown scenario key {key!r} (known: {', '.join(SCENARIO_KEYS)})",
                                  key)
            if key in _SCENARIO_RANGES:
                kind, lo, hi = _SCENARIO_RANGES[key]
                legal = f"[{lo}, {hi}]"
                values[key] = parse_number(key, raw, kind, lo, hi, legal)
            else:
                values[key] = raw.strip()
    return ScenarioConfig(**values)


def emit_scenario_config(cfg: ScenarioConfig, path=None) -> str:
    return _write(path, [f"{k} = {format_value(v)}" for k, v in asdict(cfg).items()])


# ------------------------------------------------------------------ presets

def benchmark_config(seed: int = 7) -> ScenarioConfig:
    """Mixed-motion desk benchmark: Linear objects with occlusion-corrupted
    embeddings and Dart objects with clean ones."""
    return ScenarioConfig(objects=10, frames=300, regime="mixed", dart_fraction=0.5,
                          miss_rate=0.05, jitter=1.0, corrupt_regimes="linear", seed=seed)


def throughput_config(seed: int = 11) -> ScenarioConfig:
    """Large sequence for the throughput check: 50 objects over 1000 frames."""
    return ScenarioConfig(width=1920.0, height=1080.0, objects=50, frames=1000, regime="linear",
                          emb_dim=128, seed=seed)


def cluster_embeddings(n_ids: int = 20, n_samples: int = 20, dim: int = 128,
                       sigma: float = 0.1, seed: int = 0) -> np.ndarray:
    """``(n_ids, n_samples, dim)`` unit embeddings around random unit prototypes."""
    rng = SplitMix64.stream(seed, 5)
    protos = _unit_rows(rng.normal(n_ids * dim).reshape(n_ids, 1, dim))
    noise = rng.normal(n_ids * n_samples * dim).reshape(n_ids, n_samples, dim)
    return _unit_rows(protos + sigma * noise)
