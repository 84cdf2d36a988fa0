import json
import subprocess
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from mdcgcn import shapes
from mdcgcn.cli import main
from mdcgcn.datasets import make_cylinder_segmentation
from mdcgcn.geometry import load_features
from mdcgcn.mesh import Mesh, read_ply_face_colors, save_mesh, write_ply
from mdcgcn.models import ModelConfig, build_model
from mdcgcn.nn import Adam, load_checkpoint
from mdcgcn.train import PALETTE, RunConfig, load_run_checkpoint, save_run_checkpoint

TINY = ["--tau", "2", "--epochs", "2", "--batch-size", "2", "--seed", "5", "--deterministic"]


@pytest.fixture
def tiny_cls(tmp_path):
    """Two classes of small meshes: tetrahedra and cubes."""
    root = tmp_path / "cls"
    rng = np.random.default_rng(0)
    for name, make in (("cube", shapes.cube), ("tet", shapes.tetrahedron)):
        (root / name).mkdir(parents=True)
        for i in range(4):
            save_mesh(shapes.jitter(make(), 0.01, rng), root / name / f"{name}{i}.obj")
    return root


@pytest.fixture
def tiny_seg(tmp_path):
    return make_cylinder_segmentation(tmp_path / "seg", count=4, seed=0)


def _run(*argv):
    return main([str(a) for a in argv])


def test_extract_writes_dumps(tmp_path, capsys):
    root = tmp_path / "data" / "sphere"
    root.mkdir(parents=True)
    save_mesh(shapes.geodesic_sphere(5), root / "s.obj")
    assert _run("extract", tmp_path / "data", "--out", tmp_path / "full") == 0
    x, mask, edges = load_features(tmp_path / "full" / "sphere" / "s.feat")
    assert x.shape == (500, 57) and edges.shape == (750, 2)
    summary = json.loads((tmp_path / "full" / "summary.json").read_text())
    assert set(summary["components"]) == {"P", "Nv", "GC", "Nf", "Theta"}
    assert _run("extract", tmp_path / "data", "--out", tmp_path / "theta", "--mask", "Theta") == 0
    assert load_features(tmp_path / "theta" / "sphere" / "s.feat")[0].shape == (500, 3)


def test_extract_empty_dir(tmp_path):
    (tmp_path / "empty").mkdir()
    assert _run("extract", tmp_path / "empty", "--out", tmp_path / "out") == 2
    assert not (tmp_path / "out").exists()


def test_extract_item_failure_nonzero(tmp_path):
    (tmp_path / "d").mkdir()
    save_mesh(shapes.tetrahedron(), tmp_path / "d" / "ok.obj")
    (tmp_path / "d" / "bad.obj").write_text("v 0 0 0\nv 1 1 1\n f 1 2 3\n")
    assert _run("extract", tmp_path / "d", "--out", tmp_path / "o") == 1
    assert (tmp_path / "o" / "ok.feat").exists()


def test_train_outputs_and_determinism(tiny_cls, tmp_path):
    a = tmp_path / "a"
    names = ("metrics.jsonl", "best_split0.ckpt", "last_split0.ckpt", "results.json")
    runs = []
    for _ in range(2):
        # same config including the output directory, so checkpoints must match byte for byte
        assert _run("train", "--task", "classification", "--dataset", tiny_cls, "--out", a, *TINY) == 0
        runs.append({n: (a / n).read_bytes() for n in names})
    assert runs[0] == runs[1]
    records = [json.loads(l) for l in (a / "metrics.jsonl").read_text().splitlines()]
    assert [r["epoch"] for r in records] == [1, 2]
    assert {"train_loss", "train_acc", "test_acc"} <= set(records[0])
    results = json.loads((a / "results.json").read_text())
    assert results["version"] and results["config"]["seed"] == 5
    assert "best test" in results["reported_metric"]
    cfg = RunConfig.from_json((a / "config.json").read_text())
    assert cfg.model.in_dim == 57 and cfg.model.num_classes == 2
    assert (a / "splits" / "split0" / "train.txt").exists()


def test_rerun_from_embedded_config(tiny_cls, tmp_path):
    _run("train", "--task", "classification", "--dataset", tiny_cls, "--out", tmp_path / "a", *TINY)
    cfg = json.loads((tmp_path / "a" / "config.json").read_text())
    cfg["out_dir"] = str(tmp_path / "b")
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    assert _run("train", "--config", tmp_path / "cfg.json") == 0
    assert (tmp_path / "a" / "metrics.jsonl").read_bytes() == (tmp_path / "b" / "metrics.jsonl").read_bytes()


def test_zero_lr_leaves_parameters(tiny_cls, tmp_path):
    _run("train", "--task", "classification", "--dataset", tiny_cls, "--out", tmp_path / "z", *TINY, "--lr", "0")
    model, config, _, _, _ = load_run_checkpoint(tmp_path / "z" / "last_split0.ckpt")
    fresh = build_model(config.model)
    for k, v in fresh.state_dict().items():
        np.testing.assert_array_equal(model.state_dict()[k], v)
    accs = {json.loads(l)["test_acc"] for l in (tmp_path / "z" / "metrics.jsonl").read_text().splitlines()}
    assert len(accs) == 1


def test_flags_override_config(tiny_cls, tmp_path):
    base = RunConfig(task="classification", dataset=str(tiny_cls), out_dir=str(tmp_path / "x"), epochs=1,
                     model=ModelConfig(tau=2))
    (tmp_path / "c.json").write_text(base.to_json())
    assert _run("train", "--config", tmp_path / "c.json", "--mask", "Theta", "--literal-eq5") == 0
    cfg = json.loads((tmp_path / "x" / "config.json").read_text())
    assert cfg["mask"] == "Theta" and cfg["literal_eq5"] and cfg["model"]["in_dim"] == 3


def test_eval_classification(tiny_cls, tmp_path, capsys):
    _run("train", "--task", "classification", "--dataset", tiny_cls, "--out", tmp_path / "r", *TINY)
    capsys.readouterr()
    assert _run("eval", tmp_path / "r" / "best_split0.ckpt", "--split-dir", tmp_path / "r" / "splits" / "split0") == 0
    out = json.loads(capsys.readouterr().out)
    assert 0.0 <= out["accuracy"] <= 1.0


def test_segmentation_train_eval_export(tiny_seg, tmp_path, capsys):
    assert _run("train", "--task", "segmentation", "--dataset", tiny_seg, "--out", tmp_path / "s", *TINY) == 0
    results = json.loads((tmp_path / "s" / "results.json").read_text())
    note = results["parameter_note"]
    assert note["published_parameters"] == 147_828 and note["table_config_parameters"] == 37_868_552
    assert "test_edge_acc" in (tmp_path / "s" / "metrics.jsonl").read_text()
    capsys.readouterr()
    _run("eval", tmp_path / "s" / "best_split0.ckpt", "--soft-edge-acc")
    m = json.loads(capsys.readouterr().out)
    assert {"face_accuracy", "edge_accuracy"} <= set(m)
    mesh = tiny_seg / "meshes" / "cyl_000.obj"
    labels = tiny_seg / "labels" / "cyl_000.txt"
    assert _run("export-seg", tmp_path / "s" / "best_split0.ckpt", mesh, "--out", tmp_path / "p.ply", "--labels", labels) == 0
    colors = read_ply_face_colors(tmp_path / "p.ply")
    assert colors.shape == (600, 3)
    assert (tmp_path / "p_diff.ply").exists()


def _constant_checkpoint(tmp_path, tiny_seg, label):
    cfg = RunConfig(task="segmentation", dataset=str(tiny_seg), model=ModelConfig(in_dim=57, tau=2, num_classes=2,
                                                                                   task="segmentation"))
    model = build_model(cfg.model)
    for p in model.output_layer.parameters():
        p.data[...] = 0
    model.output_layer.bias.data[label] = 1.0
    path = tmp_path / f"const{label}.ckpt"
    save_run_checkpoint(path, model, Adam(model.parameters()), cfg)
    return path


def test_constant_predictor_export(tiny_seg, tmp_path):
    ckpt = _constant_checkpoint(tmp_path, tiny_seg, 1)
    mesh = tiny_seg / "meshes" / "cyl_000.obj"
    labels = tmp_path / "ones.txt"
    labels.write_text("1\n" * 600)
    _run("export-seg", ckpt, mesh, "--out", tmp_path / "c.ply", "--labels", labels)
    colors = read_ply_face_colors(tmp_path / "c.ply")
    assert len({tuple(c) for c in colors.tolist()}) == 1
    assert tuple(colors[0]) == tuple(PALETTE[1])
    diff = read_ply_face_colors(tmp_path / "c_diff.ply")
    assert {tuple(c) for c in diff.tolist()} == {(0, 200, 0)}


def test_tetrahedron_palette_ply(tet, tmp_path):
    labels = np.array([0, 0, 1, 1])
    (tmp_path / "t.ply").write_text(write_ply(tet, PALETTE[labels]))
    text = (tmp_path / "t.ply").read_text().splitlines()
    assert "property uchar red" in text and "element face 4" in text
    faces = [l.split() for l in text[-4:]]
    got = [tuple(int(v) for v in f[4:]) for f in faces]
    assert got[0] == got[1] == tuple(PALETTE[0]) and got[2] == got[3] == tuple(PALETTE[1])
    assert got[0] != got[2]


def test_ablation_row_counts(tiny_cls, tmp_path, capsys):
    common = ["--task", "classification", "--dataset", tiny_cls, "--epochs", "1", "--seed", "1", "--tau", "2"]
    assert _run("ablate", "--axis", "mask", "--out", tmp_path / "m", *common) == 0
    rows = json.loads((tmp_path / "m" / "ablation.json").read_text())["rows"]
    assert [r["dimensions"] for r in rows] == [3, 6, 12, 18, 18, 39, 39, 45, 51, 54, 57]
    capsys.readouterr()
    assert _run("ablate", "--axis", "width", "--out", tmp_path / "w", *common, "--widths", "8,16,32,64,128,256,512,1024") == 0
    table = capsys.readouterr().out.strip().splitlines()
    assert len(table) == 1 + 8
    assert [int(l.split("\t")[1]) for l in table[1:]] == [8, 16, 32, 64, 128, 256, 512, 1024]


def test_ablation_of_one_matches_train(tiny_cls, tmp_path):
    common = ["--task", "classification", "--dataset", tiny_cls, "--epochs", "2", "--seed", "3", "--tau", "2",
              "--deterministic"]
    _run("ablate", "--axis", "width", "--widths", "2", "--out", tmp_path / "ab", *common)
    _run("train", "--out", tmp_path / "tr", *common)
    assert (tmp_path / "ab" / "row00" / "metrics.jsonl").read_bytes() == (tmp_path / "tr" / "metrics.jsonl").read_bytes()


def test_splits_verb(tiny_cls, tmp_path, capsys):
    assert _run("splits", tiny_cls, "--train-per-class", "3", "--repeats", "2", "--out", tmp_path / "sp") == 0
    out = json.loads(capsys.readouterr().out)
    assert out == {"splits": 2, "train": [6, 6], "test": [2, 2]}
    assert len((tmp_path / "sp" / "split1" / "train.txt").read_text().splitlines()) == 6


def test_params_verb(capsys):
    assert _run("params", "--task", "segmentation", "--classes", "8") == 0
    out = capsys.readouterr().out
    assert "37868552" in out.replace(",", "") and "147828" in out


def test_errors_exit_nonzero(tmp_path):
    assert _run("train", "--task", "classification", "--dataset", tmp_path / "missing") == 2
    assert _run("params", "--tau", "0") == 2


def test_console_script_entry():
    out = subprocess.run([sys.executable, "-m", "mdcgcn.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and "mdcgcn" in out.stdout


def test_export_detects_one_based_labels(tiny_seg, tmp_path):
    ckpt = _constant_checkpoint(tmp_path, tiny_seg, 1)
    mesh = tiny_seg / "meshes" / "cyl_000.obj"
    labels = tmp_path / "one_based.txt"
    labels.write_text("2\n" * 300 + "1\n" * 300)
    _run("export-seg", ckpt, mesh, "--out", tmp_path / "o.ply", "--labels", labels)
    diff = [tuple(c) for c in read_ply_face_colors(tmp_path / "o_diff.ply").tolist()]
    # predicted class 1 agrees with the first 300 faces (file label 2 -> class 1)
    assert set(diff[:300]) == {(0, 200, 0)} and set(diff[300:]) == {(220, 0, 0)}
