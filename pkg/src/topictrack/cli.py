"""``topictrack`` command line: track, eval, stats, simulate, compare.

Reports go to stdout as ``key=value`` lines. Exit status is 0 on success,
1 for usage or configuration errors, 2 for bad input data and 3 for
anything unexpected; failures print one ``error: <kind>: <message>`` line
to stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path
from typing import Optional, Sequence, TextIO

from . import __version__
from .assoc import Paradigm
from .errors import ConfigError, DataError, MotParseError, TrackingError
from .io import MotKind, emit_results, load_config, load_sequence, parse_mot_file, result_rows
from .metrics import EvalReport, dataset_stats, evaluate, video_stats
from .simgen import export, generate, load_scenario_config
from .tracker import Tracker, run_sequence, summarize

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3
ALPHA_SWEEP = tuple(round(0.1 * k, 1) for k in range(11))


class UsageError(Exception):
    """Bad command-line usage (exit status 1)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def fmt(v) -> str:
    """Reals with six decimals, integers and strings as they are."""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        out = f"{v:.6f}"
        return "0.000000" if out == "-0.000000" else out
    return str(v)


def _line(stream: TextIO, **kv) -> None:
    stream.write(" ".join(f"{k}={fmt(v)}" for k, v in kv.items()) + "\n")


def _report_fields(rep: EvalReport) -> dict:
    return {"MOTA": rep.mota, "IDF1": rep.idf1, "FP": rep.fp, "FN": rep.fn, "IDs": rep.ids,
            "Frag": rep.frag}


def _load_gt(path: str):
    return [r for r in parse_mot_file(path, MotKind.GROUND_TRUTH) if r.flag != 0]


def _run_config(path: Optional[str]):
    return load_config(path) if path else load_config()


# ------------------------------------------------------------------ commands

def cmd_track(args, out: TextIO) -> int:
    cfg = _run_config(args.config).tracker
    if cfg.paradigm.uses_appearance and not args.emb:
        raise UsageError(f"paradigm {cfg.paradigm.value} uses appearance and needs --emb")
    seq = load_sequence(args.dets, args.emb, name=Path(args.dets).stem)
    results = run_sequence(seq.frames(), cfg)
    emit_results(results, args.out)
    s = summarize(results)
    _line(out, sequence=seq.name, paradigm=cfg.paradigm.value, alpha=cfg.alpha, **s)
    return EXIT_OK


def cmd_eval(args, out: TextIO) -> int:
    gt = _load_gt(args.gt)
    res = parse_mot_file(args.res, MotKind.RESULTS)
    rep = evaluate(gt, res, args.iou)
    for k, v in _report_fields(rep).items():
        _line(out, **{k: v})
    return EXIT_OK


def cmd_stats(args, out: TextIO) -> int:
    videos = [_load_gt(p) for p in args.gt]
    for path, rows in zip(args.gt, videos):
        v = video_stats(rows)
        _line(out, input=path, MMSAO=v.frame_range_sum / v.frames if v.frames else 0.0,
              MMSO=v.object_range_sum / v.objects if v.objects else 0.0)
    agg = dataset_stats(videos)
    _line(out, input="all", MMSAO=agg.mmsao, MMSO=agg.mmso)
    return EXIT_OK


def cmd_simulate(args, out: TextIO) -> int:
    cfg = load_scenario_config(args.scenario_config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    s = generate(cfg)
    paths = export(s, args.out)
    n_det = sum(len(d) for d in s.detections.values())
    _line(out, frames=cfg.frames, objects=cfg.objects, gt_boxes=len(s.gt), detections=n_det,
          seed=cfg.seed, directory=str(Path(args.out)))
    for kind in sorted(paths):
        _line(out, file=kind, path=str(paths[kind]))
    return EXIT_OK


def _compare_row(seq, gt, cfg) -> dict:
    results = run_sequence(seq.frames(), cfg)
    rep = evaluate(gt, result_rows(results))
    s = summarize(results)
    row = _report_fields(rep)
    row.update(conflicts=s["conflicts"], appearance_resolutions=s["appearance_resolutions"],
               motion_resolutions=s["motion_resolutions"], conflict_rate=s["conflict_rate"])
    return row


def cmd_compare(args, out: TextIO) -> int:
    base = _run_config(args.config).tracker
    paradigms = [Paradigm.parse(p) for p in args.paradigms.split(",") if p.strip()] \
        if args.paradigms else list(Paradigm)
    if not paradigms:
        raise UsageError("--paradigms is empty")
    if any(p.uses_appearance for p in paradigms) and not args.emb:
        raise UsageError("appearance-using paradigms need --emb")
    seq = load_sequence(args.dets, args.emb, name=Path(args.dets).stem)
    gt = _load_gt(args.gt)
    for par in paradigms:
        row = _compare_row(seq, gt, dataclasses.replace(base, paradigm=par))
        _line(out, paradigm=par.value, **row)
    if args.alpha_sweep:
        if not args.emb:
            raise UsageError("--alpha-sweep runs the parallel paradigm and needs --emb")
        for a in ALPHA_SWEEP:
            cfg = dataclasses.replace(base, paradigm=Paradigm.TOPIC, alpha=a)
            _line(out, sweep="alpha", alpha=a, **_compare_row(seq, gt, cfg))
    return EXIT_OK


# -------------------------------------------------------------------- parser

def _paradigm_list(text: str) -> str:
    try:
        for p in text.split(","):
            if p.strip():
                Paradigm.parse(p)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None
    return text


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="topictrack", description="Detector-agnostic multi-object association.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    t = sub.add_parser("track", help="associate a detection file into tracks")
    t.add_argument("--dets", required=True)
    t.add_argument("--emb")
    t.add_argument("--config")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_track)

    e = sub.add_parser("eval", help="CLEAR and identity metrics of a result file")
    e.add_argument("--gt", required=True)
    e.add_argument("--res", required=True)
    e.add_argument("--iou", type=float, default=0.5)
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("stats", help="motion-complexity statistics of ground truth")
    s.add_argument("--gt", required=True, nargs="+")
    s.set_defaults(func=cmd_stats)

    m = sub.add_parser("simulate", help="write a synthetic scenario")
    m.add_argument("--scenario-config")
    m.add_argument("--seed", type=int)
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_simulate)

    c = sub.add_parser("compare", help="run several paradigms on the same inputs")
    c.add_argument("--dets", required=True)
    c.add_argument("--emb")
    c.add_argument("--gt", required=True)
    c.add_argument("--config")
    c.add_argument("--paradigms", type=_paradigm_list)
    c.add_argument("--alpha-sweep", action="store_true")
    c.set_defaults(func=cmd_compare)
    return p


def main(argv: Optional[Sequence[str]] = None, out: Optional[TextIO] = None,
         err: Optional[TextIO] = None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "iou", 0.5) is not None and not 0.0 < getattr(args, "iou", 0.5) <= 1.0:
            raise UsageError(f"--iou must lie in (0, 1], got {args.iou}")
        return args.func(args, out)
    except SystemExit as e:  # --help / --version
        return EXIT_OK if not e.code else EXIT_USAGE
    except (UsageError, ConfigError) as e:
        err.write(f"error: usage: {_oneline(e)}\n")
        return EXIT_USAGE
    except (DataError, MotParseError, OSError) as e:
        err.write(f"error: data: {_oneline(e)}\n")
        return EXIT_DATA
    except TrackingError as e:
        err.write(f"error: data: {_oneline(e)}\n")
        return EXIT_DATA
    except Exception as e:  # noqa: BLE001 - last-resort exit status
        err.write(f"error: internal: {type(e).__name__}: {_oneline(e)}\n")
        return EXIT_INTERNAL


def _oneline(e: BaseException) -> str:
    return " ".join(str(e).split())


if __name__ == "__main__":
    sys.exit(main())
