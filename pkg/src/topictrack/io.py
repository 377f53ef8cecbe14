"""MOT-format text files, the embedding sidecar and the run configuration.

All parsers read the whole input, validate every line and only then return,
so a malformed line never leaves partial results behind. Numbers are parsed
with fixed grammars (no locale, no ``nan``/``inf``).
"""

from __future__ import annotations

import enum
import math
import os
import re
from collections import defaultdict
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import IO, Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .appearance import AppearanceConfig
from .assoc import Paradigm
from .core import BoundingBox, Detection
from .errors import ConfigError, DataError, MotParseError
from .motion import MotionConfig
from .tracker import FrameResult, TrackerConfig

Source = Union[str, os.PathLike, bytes, IO]

_INT = re.compile(r"[+-]?\d+")
_REAL = re.compile(r"[+-]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?")
_REAL_ROW = re.compile(rf"\s*{_REAL.pattern}\s*(?:,\s*{_REAL.pattern}\s*)*")


class MotKind(enum.Enum):
    DETECTIONS = "detections"
    GROUND_TRUTH = "gt"
    RESULTS = "results"


_FIELDS = {
    MotKind.DETECTIONS: ("frame", "id", "x", "y", "w", "h", "conf", "x3d", "y3d", "z3d"),
    MotKind.GROUND_TRUTH: ("frame", "id", "x", "y", "w", "h", "flag", "class", "visibility"),
    MotKind.RESULTS: ("frame", "id", "x", "y", "w", "h", "conf", "x3d", "y3d", "z3d"),
}


@dataclass(frozen=True)
class TrackRow:
    """One box of a tracker result (or any identity-labelled box)."""

    frame: int
    track_id: int
    box: BoundingBox
    confidence: float = 1.0


@dataclass(frozen=True)
class GroundTruthRow:
    frame: int
    track_id: int
    box: BoundingBox
    flag: int = 1
    cls: int = 1
    visibility: float = 1.0


@dataclass
class SequenceBundle:
    """Detections of one sequence, optionally with ground truth.

    ``detections[f]`` lists frame ``f``'s detections in file order, which is
    the order the sidecar's ``det_index`` refers to.
    """

    name: str
    n_frames: int
    detections: dict[int, list[Detection]] = field(default_factory=dict)
    gt: Optional[list[GroundTruthRow]] = None

    def frames(self) -> list[tuple[int, list[Detection]]]:
        """Frames ``1..n_frames`` in order, empty frames included."""
        return [(f, self.detections.get(f, [])) for f in range(1, self.n_frames + 1)]

    @property
    def has_embeddings(self) -> bool:
        return any(d.embedding is not None for ds in self.detections.values() for d in ds)


# ------------------------------------------------------------------ reading

def _read_text(source: Source) -> str:
    if isinstance(source, bytes):
        data = source
    elif hasattr(source, "read"):
        data = source.read()
    else:
        data = Path(source).read_bytes()
    if isinstance(data, str):
        return data
    try:
        return data.decode("utf-8-sig")
    except UnicodeDecodeError as exc:
        raise DataError(f"input is not UTF-8: {exc}") from None


def _lines(text: str) -> Iterable[tuple[int, str]]:
    for no, raw in enumerate(text.splitlines(), start=1):
        if raw.strip():
            yield no, raw


def _int(tok: str, line: int, name: str) -> int:
    tok = tok.strip()
    if not _INT.fullmatch(tok):
        raise MotParseError(f"expected an integer, got {tok!r}", line, name)
    return int(tok)


def _real(tok: str, line: int, name: str) -> float:
    tok = tok.strip()
    if not _REAL.fullmatch(tok):
        raise MotParseError(f"expected a real number, got {tok!r}", line, name)
    v = float(tok)
    if not math.isfinite(v):
        raise MotParseError(f"value {tok!r} is out of range", line, name)
    return v


def _real_row(text: str, toks: Sequence[str], line: int) -> np.ndarray:
    """Comma-separated reals; one pattern match per row, per-token only to report errors."""
    if _REAL_ROW.fullmatch(text):
        v = np.array(toks, dtype=np.float64)
        if np.isfinite(v).all():
            return v
    return np.array([_real(t, line, f"v{k + 1}") for k, t in enumerate(toks)])


def _box(toks: Sequence[str], line: int) -> BoundingBox:
    x, y, w, h = (_real(t, line, n) for t, n in zip(toks, ("x", "y", "w", "h")))
    if w <= 0:
        raise MotParseError(f"width must be > 0, got {w}", line, "w")
    if h <= 0:
        raise MotParseError(f"height must be > 0, got {h}", line, "h")
    return BoundingBox(x, y, w, h)


def _frame(tok: str, line: int) -> int:
    f = _int(tok, line, "frame")
    if f < 1:
        raise MotParseError(f"frame indices start at 1, got {f}", line, "frame")
    return f


def parse_mot_file(source: Source, kind: "MotKind | str") -> list:
    """Parse a MOT text file.

    Returns ``Detection`` objects (without embeddings) for detection files,
    ``GroundTruthRow`` for ground truth and ``TrackRow`` for results.
    """
    kind = MotKind(kind) if not isinstance(kind, MotKind) else kind
    names = _FIELDS[kind]
    out = []
    for no, raw in _lines(_read_text(source)):
        toks = raw.split(",")
        if len(toks) != len(names):
            raise MotParseError(f"expected {len(names)} fields, got {len(toks)}", no,
                                names[-1] if len(toks) > len(names) else names[len(toks)])
        frame = _frame(toks[0], no)
        tid = _int(toks[1], no, "id")
        box = _box(toks[2:6], no)
        if kind is MotKind.GROUND_TRUTH:
            if tid < 1:
                raise MotParseError(f"ground-truth ids are positive, got {tid}", no, "id")
            flag = _int(toks[6], no, "flag")
            cls = _int(toks[7], no, "class")
            vis = _real(toks[8], no, "visibility")
            if not 0.0 <= vis <= 1.0:
                raise MotParseError(f"visibility must lie in [0,1], got {vis}", no, "visibility")
            out.append(GroundTruthRow(frame, tid, box, flag, cls, vis))
            continue
        conf = _real(toks[6], no, "conf")
        for t, n in zip(toks[7:], names[7:]):
            _real(t, no, n)
        if kind is MotKind.DETECTIONS:
            if tid != -1:
                raise MotParseError(f"detection id must be -1, got {tid}", no, "id")
            if not 0.0 <= conf <= 1.0:
                raise MotParseError(f"confidence must lie in [0,1], got {conf}", no, "conf")
            out.append(Detection(frame, box, conf))
        else:
            if tid < 1:
                raise MotParseError(f"result ids are positive, got {tid}", no, "id")
            out.append(TrackRow(frame, tid, box, conf))
    return out


def parse_embedding_sidecar(source: Source) -> dict[tuple[int, int], np.ndarray]:
    """Read ``frame,det_index,dim,v1..v_dim`` rows keyed by ``(frame, det_index)``."""
    out: dict[tuple[int, int], np.ndarray] = {}
    dim: Optional[int] = None
    for no, raw in _lines(_read_text(source)):
        toks = raw.split(",")
        if len(toks) < 4:
            raise MotParseError(f"expected at least 4 fields, got {len(toks)}", no)
        frame = _frame(toks[0], no)
        idx = _int(toks[1], no, "det_index")
        if idx < 0:
            raise MotParseError(f"det_index must be >= 0, got {idx}", no, "det_index")
        d = _int(toks[2], no, "dim")
        if d < 1:
            raise MotParseError(f"dim must be >= 1, got {d}", no, "dim")
        if dim is None:
            dim = d
        elif d != dim:
            raise MotParseError(f"dim mismatch: file uses {dim}, row declares {d}", no, "dim")
        if len(toks) - 3 != d:
            raise MotParseError(f"row declares dim {d} but holds {len(toks) - 3} values", no, "dim")
        key = (frame, idx)
        if key in out:
            raise MotParseError(f"duplicate embedding for frame {frame}, det_index {idx}", no,
                                "det_index")
        out[key] = _real_row(raw.split(",", 3)[3], toks[3:], no)
    return out


def attach_embeddings(detections: Mapping[int, Sequence[Detection]],
                      sidecar: Mapping[tuple[int, int], np.ndarray]) -> dict[int, list[Detection]]:
    """Return per-frame detections carrying their sidecar embeddings."""
    for (f, idx) in sorted(sidecar):
        if idx >= len(detections.get(f, ())):
            raise DataError(f"dangling embedding reference: frame {f} has "
                            f"{len(detections.get(f, ()))} detections, sidecar names det_index {idx}")
    out = {}
    for f, dets in detections.items():
        out[f] = [replace(d, embedding=sidecar.get((f, k))) if (f, k) in sidecar else d
                  for k, d in enumerate(dets)]
    return out


def group_by_frame(dets: Iterable[Detection]) -> dict[int, list[Detection]]:
    grouped: dict[int, list[Detection]] = defaultdict(list)
    for d in dets:
        grouped[d.frame].append(d)
    return dict(grouped)


def load_sequence(det_path: Source, emb_path: Optional[Source] = None, name: str = "seq",
                  gt_path: Optional[Source] = None) -> SequenceBundle:
    dets = group_by_frame(parse_mot_file(det_path, MotKind.DETECTIONS))
    if emb_path is not None:
        dets = attach_embeddings(dets, parse_embedding_sidecar(emb_path))
    gt = parse_mot_file(gt_path, MotKind.GROUND_TRUTH) if gt_path is not None else None
    last = max(list(dets) + [r.frame for r in gt or []], default=0)
    return SequenceBundle(name, last, dets, gt)


# ------------------------------------------------------------------ writing

def _g6(v: float) -> str:
    s = f"{v:.6g}"
    return "0" if s == "-0" else s


def _exact(v: float) -> str:
    return repr(float(v))


def _write(path: Union[str, os.PathLike, None], lines: list[str]) -> str:
    text = "".join(line + "\n" for line in lines)
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    return text


def result_rows(results: Iterable[FrameResult]) -> list[TrackRow]:
    return [TrackRow(r.frame, t.track_id, t.box, t.confidence) for r in results for t in r.tracks]


def format_results(rows: Iterable) -> list[str]:
    rows = sorted(rows, key=lambda r: (r.frame, r.track_id))
    return [f"{r.frame},{r.track_id},{_g6(r.box.x)},{_g6(r.box.y)},{_g6(r.box.w)},{_g6(r.box.h)},"
            f"{_g6(r.confidence)},-1,-1,-1" for r in rows]


def emit_results(results, path=None) -> str:
    """Write tracker output (``FrameResult`` list or ``TrackRow`` list) in MOT format.

    Reals are printed with 6 significant digits. Returns the text written.
    """
    results = list(results)
    rows = result_rows(results) if results and isinstance(results[0], FrameResult) else results
    return _write(path, format_results(rows))


def emit_detections(dets: Iterable[Detection], path=None) -> str:
    """Detections in frame order (stable within a frame); exact float round trip."""
    dets = sorted(dets, key=lambda d: d.frame)
    lines = [f"{d.frame},-1,{_exact(d.box.x)},{_exact(d.box.y)},{_exact(d.box.w)},"
             f"{_exact(d.box.h)},{_exact(d.confidence)},-1,-1,-1" for d in dets]
    return _write(path, lines)


def emit_ground_truth(rows: Iterable[GroundTruthRow], path=None) -> str:
    rows = sorted(rows, key=lambda r: (r.frame, r.track_id))
    lines = [f"{r.frame},{r.track_id},{_exact(r.box.x)},{_exact(r.box.y)},{_exact(r.box.w)},"
             f"{_exact(r.box.h)},{r.flag},{r.cls},{_exact(r.visibility)}" for r in rows]
    return _write(path, lines)


def emit_embedding_sidecar(detections: Mapping[int, Sequence[Detection]], path=None) -> str:
    lines = []
    for f in sorted(detections):
        for k, d in enumerate(detections[f]):
            if d.embedding is None:
                continue
            vals = ",".join(_exact(v) for v in d.embedding)
            lines.append(f"{f},{k},{len(d.embedding)},{vals}")
    return _write(path, lines)


# ------------------------------------------------------------------- config

def parse_key_values(source: Source) -> list[tuple[int, str, str]]:
    """Flat ``key = value`` lines; ``#`` starts a comment. Duplicate keys are rejected."""
    out = []
    seen: dict[str, int] = {}
    for no, raw in enumerate(_read_text(source).splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {no}: expected 'key = value', got {raw.strip()!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {no}: missing key")
        if key in seen:
            raise ConfigError(f"line {no}: duplicate key {key!r} (first set on line {seen[key]})", key)
        seen[key] = no
        out.append((no, key, value))
    return out


def parse_bool(key: str, value: str) -> bool:
    v = value.lower()
    if v in ("true", "yes", "on", "1"):
        return True
    if v in ("false", "no", "off", "0"):
        return False
    raise ConfigError(f"{key}: expected true or false, got {value!r}", key)


def parse_number(key: str, value: str, kind: type, lo: float, hi: float,
                 legal: str, allow_inf: bool = False) -> float:
    text = value.strip()
    if allow_inf and text.lower() in ("inf", "+inf", "infinity"):
        v = math.inf
    elif kind is int:
        if not _INT.fullmatch(text):
            raise ConfigError(f"{key}: expected an integer, got {value!r}", key)
        v = int(text)
    else:
        if not _REAL.fullmatch(text):
            raise ConfigError(f"{key}: expected a real number, got {value!r}", key)
        v = float(text)
        if not math.isfinite(v):
            raise ConfigError(f"{key}: value {value!r} is out of legal range {legal}", key)
    if not lo <= v <= hi:
        raise ConfigError(f"{key}: value {value} is out of legal range {legal}", key)
    return v


@dataclass(frozen=True)
class RunConfig:
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    seed: int = 0
    dets: Optional[str] = None
    emb: Optional[str] = None
    gt: Optional[str] = None
    out: Optional[str] = None


# key -> (type, lo, hi, legal range text)
_CONFIG_KEYS = {
    "alpha": (float, 0.0, 1.0, "[0,1]"),
    "paradigm": (Paradigm, None, None, "|".join(p.value for p in Paradigm)),
    "det_conf_threshold": (float, 0.0, 1.0, "[0,1]"),
    "min_hits": (int, 1, 10 ** 9, "[1, 1e9]"),
    "max_age": (int, 1, 10 ** 9, "[1, 1e9]"),
    "gallery_capacity": (int, 1, 10 ** 6, "[1, 1e6]"),
    "appearance_gate": (float, 0.0, 1.0, "[0,1]"),
    "serial_filter_gate": (float, 0.0, math.inf, "[0, inf]"),
    "use_observation_recovery": (bool, None, None, "true|false"),
    "use_direction_consistency": (bool, None, None, "true|false"),
    "direction_weight": (float, 0.0, 1e6, "[0, 1e6]"),
    "seed": (int, 0, 2 ** 64 - 1, "[0, 2^64)"),
    "normalize_reconstructed": (bool, None, None, "true|false"),
}
CONFIG_KEYS = tuple(_CONFIG_KEYS)


def load_config(source: Optional[Source] = None) -> RunConfig:
    """Parse a run configuration; absent keys keep their defaults."""
    values: dict = {}
    if source is not None:
        for _, key, raw in parse_key_values(source):
            if key not in _CONFIG_KEYS:
                raise ConfigError(f"unknown config key {key!r} (known: {', '.join(CONFIG_KEYS)})", key)
            kind, lo, hi, legal = _CONFIG_KEYS[key]
            if kind is bool:
                values[key] = parse_bool(key, raw)
            elif kind is Paradigm:
                try:
                    values[key] = Paradigm.parse(raw)
                except ValueError:
                    raise ConfigError(f"{key}: unknown paradigm {raw!r}, expected one of {legal}",
                                      key) from None
            else:
                values[key] = parse_number(key, raw, kind, lo, hi, legal,
                                           allow_inf=key == "serial_filter_gate")
    return build_run_config(values)


def build_run_config(values: Mapping) -> RunConfig:
    d_motion, d_app, d_trk = MotionConfig(), AppearanceConfig(), TrackerConfig()
    get = lambda k, default: values.get(k, default)  # noqa: E731
    motion = replace(d_motion,
                     use_observation_recovery=get("use_observation_recovery",
                                                  d_motion.use_observation_recovery),
                     use_direction_consistency=get("use_direction_consistency",
                                                   d_motion.use_direction_consistency),
                     direction_weight=float(get("direction_weight", d_motion.direction_weight)))
    app = AppearanceConfig(int(get("gallery_capacity", d_app.gallery_capacity)),
                           float(get("appearance_gate", d_app.appearance_gate)),
                           get("normalize_reconstructed", d_app.normalize_reconstructed))
    trk = TrackerConfig(alpha=float(get("alpha", d_trk.alpha)),
                        paradigm=get("paradigm", d_trk.paradigm),
                        det_conf_threshold=float(get("det_conf_threshold", d_trk.det_conf_threshold)),
                        min_hits=int(get("min_hits", d_trk.min_hits)),
                        max_age=int(get("max_age", d_trk.max_age)),
                        motion=motion, appearance=app,
                        serial_filter_gate=float(get("serial_filter_gate", d_trk.serial_filter_gate)))
    return RunConfig(trk, int(get("seed", 0)))


def config_values(cfg: RunConfig) -> dict:
    t = cfg.tracker
    return {
        "alpha": t.alpha, "paradigm": t.paradigm, "det_conf_threshold": t.det_conf_threshold,
        "min_hits": t.min_hits, "max_age": t.max_age,
        "gallery_capacity": t.appearance.gallery_capacity,
        "appearance_gate": t.appearance.appearance_gate,
        "serial_filter_gate": t.serial_filter_gate,
        "use_observation_recovery": t.motion.use_observation_recovery,
        "use_direction_consistency": t.motion.use_direction_consistency,
        "direction_weight": t.motion.direction_weight,
        "seed": cfg.seed,
        "normalize_reconstructed": t.appearance.normalize_reconstructed,
    }


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, enum.Enum):
        return v.value
    if isinstance(v, float):
        return "inf" if v == math.inf else repr(v)
    return str(v)


def emit_config(cfg: RunConfig, path=None) -> str:
    """Every key with its value; ``load_config`` of the output reproduces ``cfg``."""
    return _write(path, [f"{k} = {format_value(v)}" for k, v in config_values(cfg).items()])
