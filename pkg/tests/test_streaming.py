import io
import json

import numpy as np
import pytest

from missiongnn.model import MissionGnnModel
from missiongnn.streaming import StreamScorer, parse_feed_line, run_stream
from missiongnn.synthetic import make_synthetic_dataset
from missiongnn.config import Config


@pytest.fixture(scope="module")
def setup():
    cfg = Config(d_emb=16, n_concepts=4)
    ds = make_synthetic_dataset(n_classes=2, n_train=2, n_test=2, frames=40, seed=3, cfg=cfg)
    model = MissionGnnModel.build(ds.graphs, ds.store, gnn_dim=4, ffn_dim=16, heads=4, T=6, seed=3,
                                  dtype=np.float64)
    frames = ds.frames(ds.manifest.split("test")[0].video_id).astype(np.float64)
    return model, frames


def feed(frames):
    return [json.dumps({"frame_index": i, "vector": v.tolist()}) for i, v in enumerate(frames)]


def test_one_line_per_frame(setup):
    model, frames = setup
    out = io.StringIO()
    stats = run_stream(model, feed(frames[:5]), out)
    lines = [json.loads(x) for x in out.getvalue().splitlines()]
    assert stats["frames"] == 5 and len(lines) == 5
    assert [r["frame_index"] for r in lines] == list(range(5))
    for r in lines:
        assert abs(sum(r["scores"]) - 1) < 1e-9
        assert r["p_anomaly"] == pytest.approx(sum(r["scores"][1:]))


def test_matches_batch_scoring(setup):
    model, frames = setup
    batch = model.score_video(frames)
    sc = StreamScorer(model)
    stream = np.stack([sc.push(v) for v in frames])
    assert np.max(np.abs(stream - batch)) < 1e-10


def test_identical_frames_constant_scores(setup):
    model, frames = setup
    sc = StreamScorer(model)
    out = [sc.push(frames[0]) for _ in range(12)]
    for s in out[1:]:
        np.testing.assert_allclose(s, out[0], atol=1e-12)


def test_replay_deterministic(setup):
    model, frames = setup
    a, b = io.StringIO(), io.StringIO()
    run_stream(model, feed(frames), a)
    run_stream(model, feed(frames), b)
    assert a.getvalue() == b.getvalue()


def test_reset_restarts(setup):
    model, frames = setup
    sc = StreamScorer(model)
    first = [sc.push(v) for v in frames[:4]]
    sc.reset()
    again = [sc.push(v) for v in frames[:4]]
    np.testing.assert_array_equal(np.stack(first), np.stack(again))


def test_malformed_lines_skipped(setup):
    model, frames = setup
    lines = feed(frames[:3])
    bad = ["not json", json.dumps({"frame_index": 9}), json.dumps({"frame_index": 1, "vector": [1, 2]}),
           json.dumps({"frame_index": 2, "vector": [float("nan")] * 16}), ""]
    out = io.StringIO()
    stats = run_stream(model, [lines[0], *bad, lines[1], lines[2]], out)
    assert stats["frames"] == 3 and stats["skipped"] == 4
    clean = io.StringIO()
    run_stream(model, lines, clean)
    assert out.getvalue() == clean.getvalue()


def test_parse_feed_line():
    assert parse_feed_line('{"frame_index": 3, "vector": [0.5, 1]}', 2)[0] == 3
    assert parse_feed_line('{"frame_index": "x", "vector": [0.5, 1]}', 2) is None
    assert parse_feed_line("[]", 2) is None
