"""Randomized I/O bundles and their round-trip check."""

import dataclasses
import math

import numpy as np
from numpy.testing import assert_array_equal

from topictrack.assoc import Paradigm
from topictrack.core import BoundingBox, Detection
from topictrack.io import (GroundTruthRow, MotKind, TrackRow, attach_embeddings, build_run_config,
                           config_values, emit_config, emit_detections, emit_embedding_sidecar,
                           emit_ground_truth, emit_results, group_by_frame, load_config,
                           parse_embedding_sidecar, parse_mot_file)


def _real(rng, lo, hi):
    v = rng.uniform(lo, hi)
    # mix short decimals, full doubles and integers
    return float(rng.choice([round(v, 2), v, float(round(v))])) or 1.0


def random_bundle(rng):
    n_frames = int(rng.integers(1, 6))
    dim = int(rng.integers(1, 9))
    dets = []
    for f in range(1, n_frames + 1):
        for _ in range(int(rng.integers(0, 4))):
            b = BoundingBox(_real(rng, -50, 500), _real(rng, -50, 500),
                            abs(_real(rng, 1, 80)), abs(_real(rng, 1, 80)))
            emb = rng.normal(size=dim) if rng.random() < 0.8 else None
            dets.append(Detection(f, b, float(rng.choice([0.0, 1.0, rng.random()])), emb))
    gt = [GroundTruthRow(int(rng.integers(1, 50)), int(rng.integers(1, 20)),
                         BoundingBox(_real(rng, 0, 300), _real(rng, 0, 300), abs(_real(rng, 1, 60)),
                                     abs(_real(rng, 1, 60))),
                         int(rng.integers(0, 2)), int(rng.integers(1, 4)), float(rng.random()))
          for _ in range(int(rng.integers(0, 6)))]
    res = [TrackRow(int(rng.integers(1, 50)), k + 1,
                    BoundingBox(rng.uniform(0, 300), rng.uniform(0, 300), rng.uniform(1, 60),
                                rng.uniform(1, 60)), float(rng.random()))
           for k in range(int(rng.integers(0, 6)))]
    values = {
        "alpha": float(rng.random()), "paradigm": Paradigm(rng.choice([p.value for p in Paradigm])),
        "min_hits": int(rng.integers(1, 5)), "max_age": int(rng.integers(1, 60)),
        "gallery_capacity": int(rng.integers(1, 40)), "appearance_gate": float(rng.random()),
        "serial_filter_gate": float(rng.choice([math.inf, rng.uniform(0, 2)])),
        "use_observation_recovery": bool(rng.integers(2)),
        "use_direction_consistency": bool(rng.integers(2)),
        "direction_weight": float(rng.uniform(0, 1)), "seed": int(rng.integers(0, 2**63)),
        "normalize_reconstructed": bool(rng.integers(2)),
        "det_conf_threshold": float(rng.random()),
    }
    return dets, gt, res, build_run_config(values)


def check_round_trip(bundle):
    """Assert every parse/emit identity; raises AssertionError on the first mismatch."""
    dets, gt, res, cfg = bundle
    text = emit_detections(dets)
    back = parse_mot_file(text.encode(), MotKind.DETECTIONS)
    assert back == [dataclasses.replace(d, embedding=None) for d in dets]
    assert emit_detections(back) == text

    frames = group_by_frame(dets)
    side = emit_embedding_sidecar(frames)
    attached = attach_embeddings(group_by_frame(back), parse_embedding_sidecar(side.encode()))
    for f, ds in frames.items():
        for a, b in zip(ds, attached[f]):
            if a.embedding is None:
                assert b.embedding is None
            else:
                assert_array_equal(a.embedding, b.embedding)
    assert emit_embedding_sidecar(attached) == side

    gtext = emit_ground_truth(gt)
    gback = parse_mot_file(gtext.encode(), MotKind.GROUND_TRUTH)
    assert gback == sorted(gt, key=lambda r: (r.frame, r.track_id))
    assert emit_ground_truth(gback) == gtext

    rtext = emit_results(res)
    assert emit_results(parse_mot_file(rtext.encode(), MotKind.RESULTS)) == rtext

    ctext = emit_config(cfg)
    again = load_config(ctext.encode())
    assert config_values(again) == config_values(cfg)
    assert emit_config(again) == ctext
