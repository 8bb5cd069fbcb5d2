import json
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from semgan.cli import main
from semgan.config import TrainConfig

from conftest import TINY


def write_cfg(path, data_root, **over):
    cfg = TrainConfig(data_root=str(data_root), epochs=1, **{**TINY, **over})
    path.write_text(cfg.to_text())
    return path


@pytest.fixture(scope="module")
def trained(tmp_path_factory, toy_root):
    tmp = tmp_path_factory.mktemp("cli")
    cfg = write_cfg(tmp / "run.cfg", toy_root)
    assert main(["train", "--config", str(cfg), "--run-dir", str(tmp / "run")]) == 0
    return tmp / "run"


def tree(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(Path(root).rglob("*")) if p.is_file()}


def test_gen_data(tmp_path):
    args = ["gen-data", "--out", str(tmp_path / "a"), "--seed", "7", "--image-size", "16", "--counts", "3,1,1"]
    assert main(args) == 0
    assert len(list((tmp_path / "a" / "B" / "train" / "images").glob("*.png"))) == 3
    assert main(["gen-data", "--out", str(tmp_path / "b"), "--seed", "7", "--image-size", "16",
                 "--counts", "3,1,1"]) == 0
    assert tree(tmp_path / "a") == tree(tmp_path / "b")
    assert main(args) == 2
    assert main(args + ["--force"]) == 0
    assert main(["gen-data", "--out", str(tmp_path / "c"), "--counts", "1,2"]) == 2
    assert not (tmp_path / "c").exists()


def test_gen_data_default_count(tmp_path):
    assert main(["gen-data", "--out", str(tmp_path), "--image-size", "16"]) == 0
    for d in "AB":
        assert len(list((tmp_path / d).rglob("images/*.png"))) == 260


def test_train(trained):
    assert (trained / "checkpoints" / "epoch_001.ckpt").exists()
    assert (trained / "losses.csv").exists()


def test_train_errors(tmp_path, toy_root, capsys):
    cfg = write_cfg(tmp_path / "c.cfg", toy_root)
    assert main(["train", "--config", str(cfg), "--run-dir", str(tmp_path / "fresh"), "--resume"]) == 2
    assert "resume" in capsys.readouterr().err
    assert main(["train", "--config", str(tmp_path / "missing.cfg")]) == 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("data_root = /nonexistent\n")
    assert main(["train", "--config", str(bad), "--run-dir", str(tmp_path / "r")]) == 2
    assert not (tmp_path / "r").exists()


def test_train_cycle_only_logs_zero_seg(tmp_path, toy_root):
    cfg = write_cfg(tmp_path / "c.cfg", toy_root, preset="cycle_only", eval_every=0)
    assert main(["train", "--config", str(cfg), "--run-dir", str(tmp_path / "r")]) == 0
    lines = (tmp_path / "r" / "losses.csv").read_text().splitlines()
    header = lines[0].split(",")
    for line in lines[1:]:
        row = dict(zip(header, line.split(",")))
        assert float(row["seg_AB"]) == 0 and float(row["seg_BA"]) == 0


def test_train_resume(tmp_path, toy_root):
    cfg = write_cfg(tmp_path / "c.cfg", toy_root, eval_every=0)
    run = str(tmp_path / "r")
    assert main(["train", "--config", str(cfg), "--run-dir", run]) == 0
    assert main(["train", "--config", str(cfg), "--run-dir", run]) == 2
    assert main(["train", "--config", str(cfg), "--run-dir", run, "--resume", "--set", "epochs=2"]) == 0
    assert (tmp_path / "r" / "checkpoints" / "epoch_002.ckpt").exists()
    assert main(["train", "--config", str(cfg), "--run-dir", run, "--resume", "--set", "lr=0.1"]) == 2


def test_translate(trained, tmp_path, toy_root):
    src = toy_root / "A" / "train" / "images"
    inputs = tmp_path / "in"
    inputs.mkdir()
    for p in sorted(src.glob("*.png"))[:3]:
        (inputs / p.name).write_bytes(p.read_bytes())
    ckpt = str(trained / "checkpoints" / "epoch_001.ckpt")
    for out in ("o1", "o2"):
        assert main(["translate", "--ckpt", ckpt, "--input-dir", str(inputs), "--direction", "ab",
                     "--out", str(tmp_path / out)]) == 0
    assert sorted(p.name for p in (tmp_path / "o1").glob("*.png")) == sorted(p.name for p in inputs.glob("*.png"))
    assert tree(tmp_path / "o1") == tree(tmp_path / "o2")
    assert main(["translate", "--ckpt", str(tmp_path / "nope.ckpt"), "--input-dir", str(inputs),
                 "--direction", "ab", "--out", str(tmp_path / "o3")]) == 2
    odd = tmp_path / "odd"
    odd.mkdir()
    Image.fromarray(np.zeros((30, 32, 3), np.uint8)).save(odd / "x.png")
    assert main(["translate", "--ckpt", ckpt, "--input-dir", str(odd), "--direction", "ba",
                 "--out", str(tmp_path / "o4")]) == 2
    assert not (tmp_path / "o4").exists()


def test_evaluate_oracle(tmp_path, toy_root):
    out = tmp_path / "r.json"
    assert main(["evaluate", "--ckpt", "identity", "--eval-segmenter", "gt-echo", "--dataset",
                 str(toy_root / "A" / "test"), "--direction", "ab", "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    assert report["overall_acc"] == report["avg_class_acc"] == report["miou"] == report["fw_acc"] == 100.0
    assert len(report["per_class_iou"]) == 5


def test_evaluate_checkpoint_and_mismatch(trained, tmp_path, toy_root):
    ckpt = str(trained / "checkpoints" / "epoch_001.ckpt")
    out = tmp_path / "r.json"
    assert main(["evaluate", "--ckpt", ckpt, "--eval-segmenter", "gt-echo", "--dataset",
                 str(toy_root / "B" / "test"), "--direction", "ba", "--out", str(out)]) == 0
    assert len(json.loads(out.read_text())["per_class_iou"]) == 5
    tax = tmp_path / "t.csv"
    tax.write_text("raw_label,mapped_label,name\n0,0,a\n1,1,b\n")
    assert main(["evaluate", "--ckpt", ckpt, "--eval-segmenter", "gt-echo", "--dataset",
                 str(toy_root / "B" / "test"), "--direction", "ba", "--taxonomy", str(tax)]) == 2
    assert main(["evaluate", "--ckpt", ckpt, "--eval-segmenter", str(tmp_path / "none.pt"), "--dataset",
                 str(toy_root / "B" / "test"), "--direction", "ba"]) == 2


def test_train_segmenter_and_evaluate(tmp_path, toy_root, trained):
    seg = tmp_path / "s.pt"
    assert main(["train-segmenter", "--dataset", str(toy_root / "B" / "train"), "--out", str(seg),
                 "--steps", "2", "--base-width", "4", "--batch-size", "2"]) == 0
    assert main(["evaluate", "--ckpt", str(trained / "checkpoints" / "epoch_001.ckpt"), "--eval-segmenter",
                 str(seg), "--dataset", str(toy_root / "A" / "test"), "--direction", "ab"]) == 0


def test_ablate_single_row(tmp_path, toy_root, capsys):
    cfg = write_cfg(tmp_path / "c.cfg", toy_root, eval_every=0)
    code = main(["ablate", "--config", str(cfg), "--variants", "cycle", "--seeds", "1", "--directions", "ab",
                 "--out", str(tmp_path / "abl"), "--evaluator-steps", "2"])
    assert code == 0
    table = capsys.readouterr().out.strip().splitlines()
    assert table[0].split() == ["variant", "direction", "mean_acc", "miou", "seeds"]
    assert len(table) == 2 and table[1].startswith("cycle")
    assert (tmp_path / "abl" / "ablation.csv").exists()


def test_ablate_usage_errors(tmp_path, toy_root):
    cfg = write_cfg(tmp_path / "c.cfg", toy_root)
    assert main(["ablate", "--config", str(cfg), "--variants", "nope", "--out", str(tmp_path / "a")]) == 2
    assert main(["ablate", "--config", str(cfg), "--seeds", "0", "--out", str(tmp_path / "a")]) == 2
    p0 = write_cfg(tmp_path / "p0.cfg", toy_root, semantic_dropout_p=0.0)
    assert main(["ablate", "--config", str(p0), "--variants", "seg_sm", "--out", str(tmp_path / "a")]) == 2
    assert not (tmp_path / "a").exists()
