import json
import subprocess
import sys
import xml.etree.ElementTree as ET

import numpy as np
import pytest
import torch

from octcast import cli
from octcast.config import LabelConfig, SynthConfig
from octcast.geometry import HandTrajectory
from octcast.io import read_dataset
from octcast.model import OCTModel
from octcast.synthdata import label_config_for, pipeline_labels, render_observations, scene_label_record, simulate_scene

CONFIG = {
    "synth": {"d_feat": 32, "n_verbs": 1, "n_nouns": 2},
    "model": {"D": 32, "heads": 2, "enc_blocks": 1, "dec_blocks": 1, "latent_dim": 4, "dropout": 0.0, "K_samples": 4},
    "train": {"epochs": 2, "warmup_epochs": 1, "batch": 8},
    "eval": {"k": 4, "grid": [8, 8]},
}


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = d / "config.json"
    cfg.write_text(json.dumps(CONFIG))
    assert run("synth", "--n", 60, "--seed", 3, "--config", cfg, "--out", d / "data.octd") == 0
    assert run("train", "--data", d / "data.octd", "--config", cfg, "--out-weights", d / "w.octw") == 0
    return d


def test_synth_count_and_determinism(work, tmp_path, capsys):
    cfg = work / "config.json"
    assert run("synth", "--n", 3, "--seed", 5, "--config", cfg, "--out", tmp_path / "a.octd") == 0
    assert capsys.readouterr().out.strip() == "3"
    run("synth", "--n", 3, "--seed", 5, "--config", cfg, "--out", tmp_path / "b.octd")
    assert (tmp_path / "a.octd").read_bytes() == (tmp_path / "b.octd").read_bytes()
    assert len(read_dataset(tmp_path / "a.octd")) == 3


def test_labels_match_generator(tmp_path, capsys):
    cfg = SynthConfig(d_feat=8)
    scenes = [simulate_scene(seed, cfg) for seed in (11, 12)]
    path = tmp_path / "clips.jsonl"
    path.write_text("\n".join(json.dumps(scene_label_record(s)) for s in scenes) + "\n")
    assert run("labels", "--detections", path, "--out", tmp_path / "labels.jsonl", "--seed", 11) == 0
    rows = [json.loads(x) for x in (tmp_path / "labels.jsonl").read_text().splitlines()]
    assert [r["clip_id"] for r in rows] == ["scene-11", "scene-12"]
    for s, row in zip(scenes, rows):
        dets, corr = render_observations(s)
        traj, contacts = pipeline_labels(s, dets, corr, label_config_for(cfg, 11))
        got = HandTrajectory.from_dict(row["trajectory"])
        np.testing.assert_array_equal(got.visible, traj.visible)
        np.testing.assert_allclose(got.points[got.visible], traj.points[traj.visible], atol=1e-6)
        np.testing.assert_allclose(np.reshape(row["contacts"], (-1, 2)), contacts, atol=1e-6)
        err = np.abs(got.points - s.oracle_trajectory().points)[got.visible].max()
        assert err < 2e-3


def test_labels_bad_input(tmp_path, capsys):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    assert run("labels", "--detections", empty, "--out", tmp_path / "o.jsonl") == 2
    good = json.dumps(scene_label_record(simulate_scene(1, SynthConfig(d_feat=8))))
    bad = tmp_path / "bad.jsonl"
    bad.write_text(good + "\n{not json\n")
    capsys.readouterr()
    assert run("labels", "--detections", bad, "--out", tmp_path / "o.jsonl") == 2
    assert ":2:" in capsys.readouterr().err
    assert run("labels", "--detections", tmp_path / "missing.jsonl", "--out", tmp_path / "o.jsonl") == 3


def test_train_deterministic_and_logged(work, tmp_path):
    args = ["train", "--data", work / "data.octd", "--config", work / "config.json"]
    assert run(*args, "--out-weights", tmp_path / "a.octw") == 0
    assert run(*args, "--out-weights", tmp_path / "b.octw") == 0
    assert (tmp_path / "a.octw").read_bytes() == (tmp_path / "b.octw").read_bytes()
    rows = (tmp_path / "a.octw.log.jsonl").read_text().splitlines()
    assert len(rows) == CONFIG["train"]["epochs"]
    assert run(*args, "--out-weights", tmp_path / "c.octw", "--seed", 1) == 0
    assert (tmp_path / "a.octw").read_bytes() != (tmp_path / "c.octw").read_bytes()


def test_train_flag_overrides_file(work, tmp_path):
    args = ["train", "--data", work / "data.octd", "--config", work / "config.json", "--out-weights", tmp_path / "w.octw"]
    assert run(*args, "--epochs", 3) == 0
    assert len((tmp_path / "w.octw.log.jsonl").read_text().splitlines()) == 3


def test_train_ablate_everything(work, tmp_path):
    ablate = ["--ablate", "hand", "--ablate", "object", "--ablate", "global"]
    assert run("train", "--data", work / "data.octd", "--out-weights", tmp_path / "w.octw", *ablate) == 2


def test_bad_config(work, tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"train": {"lr": -1}}))
    assert run("train", "--data", work / "data.octd", "--config", cfg, "--out-weights", tmp_path / "w.octw") == 2
    cfg.write_text(json.dumps({"trian": {}}))
    assert run("train", "--data", work / "data.octd", "--config", cfg, "--out-weights", tmp_path / "w.octw") == 2
    assert run("eval", "--data", work / "data.octd", "--weights", work / "w.octw", "--grid", "0x3") == 2


def test_eval_report(work, tmp_path, capsys):
    capsys.readouterr()
    report = tmp_path / "r.json"
    code = run("eval", "--data", work / "data.octd", "--weights", work / "w.octw", "--config", work / "config.json",
               "--report", report, "--baselines")
    assert code == 0
    summary = json.loads(capsys.readouterr().out)
    full = json.loads(report.read_text())
    assert summary["n"] == 60 and "ade_min4" in summary and "per_sample" not in summary
    assert len(full["per_sample"]) == 60
    assert set(full["baselines"]) == {"kalman", "center"}


def test_eval_schema_mismatch(work, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"synth": {"d_feat": 16}}))
    run("synth", "--n", 2, "--seed", 0, "--config", cfg, "--out", tmp_path / "d.octd")
    assert run("eval", "--data", tmp_path / "d.octd", "--weights", work / "w.octw") == 2


def test_predict(work, tmp_path, capsys):
    sid = read_dataset(work / "data.octd")[0].id
    out, svg = tmp_path / "p.json", tmp_path / "p.svg"
    code = run("predict", "--data", work / "data.octd", "--weights", work / "w.octw", "--config", work / "config.json",
               "--id", sid, "--out", out, "--plot", svg)
    assert code == 0
    pred = json.loads(out.read_text())
    assert pred["id"] == sid and len(pred["trajectories"]) == 4
    assert pred["heatmap"]["h"] == 8 and abs(sum(pred["heatmap"]["data"]) - 1) < 1e-6
    root = ET.fromstring(svg.read_text())
    assert root.tag.endswith("svg")
    assert run("predict", "--data", work / "data.octd", "--weights", work / "w.octw", "--id", "nope") == 2


def test_anticipate_separable(work, tmp_path, capsys):
    before = (work / "w.octw").read_bytes()
    capsys.readouterr()
    assert run("anticipate", "--data", work / "data.octd", "--weights", work / "w.octw", "--seed", 0) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["n_actions"] == 2
    assert rep["action_top1"] == 1.0 and rep["noun_top1"] == 1.0 and rep["verb_top1"] == 1.0
    assert (work / "w.octw").read_bytes() == before


def test_anticipate_frozen_encoder(work, monkeypatch):
    model = OCTModel.load(work / "w.octw")
    state = {k: v.clone() for k, v in model.state_dict().items()}
    monkeypatch.setattr(cli, "_load_model", lambda path: model)
    assert run("anticipate", "--data", work / "data.octd", "--weights", work / "w.octw", "--epochs", 20) == 0
    for k, v in model.state_dict().items():
        assert torch.equal(v, state[k])


def test_anticipate_label_file(work, tmp_path):
    ids = [s.id for s in read_dataset(work / "data.octd")]
    labels = tmp_path / "labels.jsonl"
    labels.write_text("\n".join(json.dumps({"id": i, "verb": 0, "noun": 1}) for i in ids[:-1]) + "\n")
    assert run("anticipate", "--data", work / "data.octd", "--weights", work / "w.octw", "--labels", labels) == 2
    labels.write_text("{\"id\": 1}\n")
    assert run("anticipate", "--data", work / "data.octd", "--weights", work / "w.octw", "--labels", labels) == 2
    assert run("anticipate", "--data", work / "data.octd", "--weights", work / "w.octw", "--holdout", 1.5) == 2


def test_threads_env(work, tmp_path, monkeypatch):
    monkeypatch.setenv("OCTCAST_THREADS", "lots")
    assert run("synth", "--n", 1, "--out", tmp_path / "x.octd") == 2
    monkeypatch.setenv("OCTCAST_THREADS", "2")
    before = torch.get_num_threads()
    try:
        assert run("synth", "--n", 1, "--config", work / "config.json", "--out", tmp_path / "x.octd") == 0
        assert torch.get_num_threads() == 2
    finally:
        torch.set_num_threads(before)


def test_usage_errors(capsys):
    assert run() == 2
    assert run("train") == 2
    assert run("--help") == 0


def test_console_script(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "octcast.cli", "synth", "--n", "1", "--out", str(tmp_path / "x.octd"),
                           "--config", str(tmp_path / "missing.json")], capture_output=True, text=True)
    assert proc.returncode == 3
    assert "error" in proc.stderr
