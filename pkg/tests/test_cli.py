import json

import numpy as np
import pytest

from missiongnn.cli import main
from missiongnn.trainer import TrainState, read_loss_log

SMALL = ["--preset", "synthetic", "--n-concepts", "4", "--d-emb", "16", "--gnn-dim", "4",
         "--ffn-dim", "16", "--heads", "4", "--T", "4", "--batch-size", "16"]
DATA = ["--n-train", "6", "--n-test", "4", "--frames", "20"]


@pytest.fixture(scope="module")
def graphs(tmp_path_factory):
    out = tmp_path_factory.mktemp("kg") / "graphs"
    assert main(["kg-build", "--n-classes", "2", "--out", str(out), *SMALL]) == 0
    return out


def test_kg_build_all_classes(tmp_path):
    out = tmp_path / "g"
    assert main(["kg-build", "--out", str(out), "--n-concepts", "3"]) == 0
    files = sorted(p.name for p in out.glob("*.json") if p.name != "classes.json")
    assert len(files) == 13
    assert len(json.loads((out / "classes.json").read_text())) == 13


def test_kg_build_single_class(tmp_path):
    out = tmp_path / "g"
    assert main(["kg-build", "--classes", "Arson", "--out", str(out), "--n-concepts", "3"]) == 0
    assert json.loads((out / "classes.json").read_text()) == ["arson"]
    assert (out / "arson.json").exists()


def scripted(tmp_path, replies):
    path = tmp_path / "replies.json"
    path.write_text(json.dumps(replies))
    return f"scripted:{path}"


def test_kg_build_persistent_errors_cleans_up(tmp_path):
    # the first class builds, the second can never fill its sub layer
    good = ["gun, mask", "recoil, disguise", "gun", "mask"]
    bad = ["gun, mask"] * 12
    llm = scripted(tmp_path, good + bad)
    out = tmp_path / "g"
    rc = main(["kg-build", "--classes", "Shooting,Robbery", "--out", str(out), "--n-concepts", "2",
               "--llm-backend", llm])
    assert rc == 2
    assert not out.exists()
    existing = tmp_path / "keep"
    existing.mkdir()
    (existing / "other.txt").write_text("x")
    rc = main(["kg-build", "--classes", "Shooting,Robbery", "--out", str(existing), "--n-concepts", "2",
               "--llm-backend", llm])
    assert rc == 2
    assert sorted(p.name for p in existing.iterdir()) == ["other.txt"]


def test_train_zero_steps_then_resume(graphs, tmp_path):
    ck = tmp_path / "ck.npz"
    log = tmp_path / "loss.jsonl"
    assert main(["train", "--graphs", str(graphs), "--out", str(ck), "--steps", "0", *SMALL, *DATA]) == 0
    assert TrainState.load(ck).iter == 0
    assert main(["train", "--graphs", str(graphs), "--out", str(ck), "--log", str(log),
                 "--steps", "2", *SMALL, *DATA]) == 0
    assert TrainState.load(ck).iter == 2
    assert main(["train", "--resume", str(ck), "--out", str(ck), "--log", str(log),
                 "--steps", "4", *SMALL, *DATA]) == 0
    assert TrainState.load(ck).iter == 4
    assert [r["iter"] for r in read_loss_log(log)] == [1, 2, 3, 4]


@pytest.fixture(scope="module")
def checkpoint(graphs, tmp_path_factory):
    ck = tmp_path_factory.mktemp("ck") / "ck.npz"
    assert main(["train", "--graphs", str(graphs), "--out", str(ck), "--steps", "2", *SMALL, *DATA]) == 0
    return ck


def test_eval_report_and_scores(checkpoint, tmp_path):
    rep, scores = tmp_path / "r.json", tmp_path / "s.jsonl"
    assert main(["eval", "--checkpoint", str(checkpoint), "--out", str(rep), "--scores", str(scores),
                 *SMALL, *DATA]) == 0
    r = json.loads(rep.read_text())
    assert 0 <= r["vad_auc"] <= 1 and len(r["per_class_auc"]) == 2
    assert len(scores.read_text().splitlines()) == 4 * 20


def test_eval_dimension_mismatch(checkpoint):
    args = [a if a != "16" else "32" for a in SMALL]
    assert main(["eval", "--checkpoint", str(checkpoint), *args, *DATA]) == 5


def test_context_sweep(checkpoint, tmp_path):
    out = tmp_path / "sweep.json"
    assert main(["context-sweep", "--checkpoint", str(checkpoint), "--T-values", "1,4", "--out", str(out),
                 *SMALL, *DATA]) == 0
    rows = json.loads(out.read_text())
    assert [r["T"] for r in rows] == [1, 4]


def test_embed_cache_then_stream(graphs, checkpoint, tmp_path):
    cache, man = tmp_path / "c.bin", tmp_path / "m.jsonl"
    assert main(["embed-cache", "--graphs", str(graphs), "--out", str(cache), "--write-manifest", str(man),
                 *SMALL, *DATA]) == 0
    from missiongnn.embedding_store import cache_read

    rows = cache_read(cache)
    vid = json.loads(man.read_text().splitlines()[0])["video_id"]
    feed = tmp_path / "feed.jsonl"
    feed.write_text("".join(json.dumps({"frame_index": t, "vector": rows[f"{vid}/{t}"].tolist()}) + "\n"
                            for t in range(5)))
    out = tmp_path / "scores.jsonl"
    assert main(["stream", "--checkpoint", str(checkpoint), "--input", str(feed), "--output", str(out)]) == 0
    lines = [json.loads(x) for x in out.read_text().splitlines()]
    assert len(lines) == 5 and abs(sum(lines[0]["scores"]) - 1) < 1e-5
    assert np.isfinite(lines[-1]["p_anomaly"])
