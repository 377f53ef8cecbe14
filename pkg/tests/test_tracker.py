import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from topictrack.assoc import Paradigm
from topictrack.core import TrackState
from topictrack.errors import ConfigError, ContractViolation
from topictrack.io import result_rows
from topictrack.metrics import evaluate
from topictrack.simgen import ScenarioConfig, generate
from topictrack.tracker import (FrameResult, TrackerConfig, TrackOutput, Tracker, run_sequence,
                                summarize, tracker_step)

from conftest import box, det, unit

E1 = unit([1, 0, 0, 0.1])
E2 = unit([0, 1, 0, 0.1])


def test_empty_first_frame():
    t = Tracker()
    r = t.step(1, [])
    assert r.tracks == [] and t.tracks == []


def test_stationary_object_emitted_from_second_frame():
    t = Tracker(TrackerConfig(paradigm="motion_only", min_hits=2))
    out = [t.step(f, [det(f, 10, 10, 20, 20)]) for f in range(1, 6)]
    assert out[0].tracks == []
    ids = {r.tracks[0].track_id for r in out[1:]}
    assert ids == {1} and all(len(r.tracks) == 1 for r in out[1:])
    assert out[1].tracks[0].box == box(10, 10, 20, 20)


def test_lifecycle_lost_recovered_removed():
    cfg = TrackerConfig(paradigm="motion_only", min_hits=1, max_age=3)
    t = Tracker(cfg)
    t.step(1, [det(1, 0, 0, 20, 20)])
    assert t.tracks[0].state is TrackState.CONFIRMED
    t.step(2, [])
    assert t.tracks[0].state is TrackState.LOST
    r = t.step(3, [det(3, 0, 0, 20, 20)])
    assert r.tracks[0].track_id == 1 and t.tracks[0].state is TrackState.CONFIRMED
    for f in range(4, 8):
        t.step(f, [])
    assert t.tracks == []
    r = t.step(8, [det(8, 0, 0, 20, 20)])
    assert r.tracks[0].track_id == 2  # ids are never reused


def test_tentative_track_dies_on_first_miss():
    t = Tracker(TrackerConfig(paradigm="motion_only", min_hits=3))
    t.step(1, [det(1, 0, 0, 20, 20)])
    t.step(2, [])
    assert t.tracks == []


def test_confidence_gate():
    t = Tracker(TrackerConfig(paradigm="motion_only", min_hits=1, det_conf_threshold=0.5))
    r = t.step(1, [det(1, 0, 0, conf=0.4), det(1, 100, 0, conf=0.5)])
    assert [o.box.x for o in r.tracks] == [100]


def test_contracts():
    t = Tracker()
    t.step(2, [])
    with pytest.raises(ContractViolation):
        t.step(2, [])
    with pytest.raises(ContractViolation):
        t.step(3, [det(4, 0, 0)])
    with pytest.raises(ConfigError, match="embeddings"):
        t.step(5, [det(5, 0, 0)])
    with pytest.raises(ContractViolation):
        FrameResult(1, [TrackOutput(1, box(0, 0), 1.0), TrackOutput(1, box(5, 0), 1.0)])
    state = Tracker(TrackerConfig())
    with pytest.raises(ContractViolation):
        tracker_step(state, 1, [], TrackerConfig(alpha=0.1))
    state, r = tracker_step(state, 1, [], TrackerConfig())
    assert r.frame == 1


def test_config_validation():
    for kw in (dict(alpha=1.1), dict(min_hits=0), dict(max_age=0), dict(det_conf_threshold=-0.1),
               dict(serial_filter_gate=-1.0)):
        with pytest.raises(ConfigError):
            TrackerConfig(**kw)
    assert TrackerConfig(paradigm="MotionOnly").paradigm is Paradigm.MOTION_ONLY


def crossing_frames(n=40):
    """Two objects swapping sides on nearly the same row; A is close to B's path."""
    frames = []
    for f in range(1, n + 1):
        a = det(f, 5 * f, 100, 30, 30, emb=E1)
        b = det(f, 5 * (n + 1 - f), 104, 30, 30, emb=E2)
        frames.append((f, [a, b]))
    return frames


def crossing_gt(n=40):
    from topictrack.io import TrackRow
    return ([TrackRow(f, 1, box(5 * f, 100, 30, 30)) for f in range(1, n + 1)]
            + [TrackRow(f, 2, box(5 * (n + 1 - f), 104, 30, 30)) for f in range(1, n + 1)])


def test_topic_keeps_ids_through_crossing():
    res = run_sequence(crossing_frames(), TrackerConfig(paradigm="topic"))
    rep = evaluate(crossing_gt(), result_rows(res))
    assert rep.ids == 0 and rep.idf1 > 0.95
    first = {o.box.y: o.track_id for o in res[1].tracks}
    last = {o.box.y: o.track_id for o in res[-1].tracks}
    assert first == last


def test_motion_only_needs_no_embeddings():
    frames = [(f, [det(f, 3 * f, 0, 20, 20)]) for f in range(1, 10)]
    res = run_sequence(frames, TrackerConfig(paradigm="motion_only"))
    assert {o.track_id for r in res for o in r.tracks} == {1}


def bench(seed=5):
    return generate(ScenarioConfig(objects=6, frames=80, seed=seed))


@pytest.mark.parametrize("paradigm", [p.value for p in Paradigm])
def test_run_is_deterministic_and_well_formed(paradigm):
    s = bench()
    cfg = TrackerConfig(paradigm=paradigm)
    a, b = run_sequence(s.frames(), cfg), run_sequence(s.frames(), cfg)
    assert result_rows(a) == result_rows(b)
    assert [dataclasses.astuple(r)[2:] for r in a] == [dataclasses.astuple(r)[2:] for r in b]
    for (f, dets), r in zip(s.frames(), a):
        assert r.appearance_resolutions + r.motion_resolutions == r.conflicts
        assert len(r.tracks) <= sum(d.confidence >= cfg.det_conf_threshold for d in dets)
        # emitted boxes are detection boxes
        boxes = {d.box for d in dets}
        assert all(o.box in boxes for o in r.tracks)


@pytest.mark.parametrize("alpha, side", [(0.0, "appearance_resolutions"), (1.0, "motion_resolutions")])
def test_degenerate_alpha_tallies(alpha, side):
    s = bench(9)
    summary = summarize(run_sequence(s.frames(), TrackerConfig(alpha=alpha)))
    assert summary["conflicts"] > 0
    assert summary[side] == summary["conflicts"]


def test_summary_and_embedding_log():
    s = bench()
    t = Tracker(TrackerConfig(), record_embeddings=True)
    res = run_sequence(s.frames(), tracker=t)
    summary = summarize(res)
    assert summary["frames"] == 80 and 0 <= summary["conflict_rate"] <= 1
    assert summary["boxes"] == sum(len(r.tracks) for r in res)
    n_kept = sum(d.confidence >= 0.5 for _, ds in s.frames() for d in ds)
    assert len(t.embedding_log) == n_kept


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 1000), st.sampled_from([p.value for p in Paradigm]))
def test_ids_never_reused(seed, paradigm):
    s = generate(ScenarioConfig(objects=4, frames=40, seed=seed, emb_dim=8))
    t = Tracker(TrackerConfig(paradigm=paradigm, max_age=3))
    gone: set[int] = set()
    live: set[int] = set()
    for f, dets in s.frames():
        r = t.step(f, dets)
        now = {tr.id for tr in t.tracks}
        assert not (now & gone)
        assert not ({o.track_id for o in r.tracks} & gone)
        gone |= live - now
        live = now
