"""Train a small model on toy data, then score its translations.

Run from the repository root:  python3 demos/03_train_and_evaluate.py
Takes about two minutes on one CPU core. Output goes to demo_out/run/.
"""
import json
import shutil
from pathlib import Path

from semgan.config import TrainConfig
from semgan.core_types import ClassTaxonomy
from semgan.data import load_dataset
from semgan.evaluation import GroundTruthEcho, evaluate_translation, fit_segmenter
from semgan.models import SegmenterCfg
from semgan.toyworld import ToyWorldCfg, generate_toy_domains
from semgan.trainer import load_checkpoint, train

data = Path("demo_out/toy32")
run = Path("demo_out/run")
generate_toy_domains(ToyWorldCfg(image_size=32, counts=(128, 8, 16)), data, force=True)
shutil.rmtree(run, ignore_errors=True)

cfg = TrainConfig.from_file("configs/toy_quick.cfg").replace(data_root=str(data), epochs=4)
print(cfg.to_text())
train(cfg, run)
print("losses.csv, first rows:")
print("\n".join((run / "losses.csv").read_text().splitlines()[:3]))

# The run's own segmenters scored the test split at the end of training.
report = json.loads((run / "eval" / "test.json").read_text())
for direction, r in report.items():
    print(f"{direction}: mIoU {r['miou']:.1f}  overall {r['overall_acc']:.1f}")

# An independent evaluator: a segmenter fitted on real B images only.
taxonomy = ClassTaxonomy.from_csv(data / "taxonomy.csv")
train_b = load_dataset(data / "B" / "train", taxonomy, "B")
eval_b = fit_segmenter(list(train_b), SegmenterCfg(5, "desk", 16), steps=600, batch_size=8, lr=2e-3, crop=32)

state = load_checkpoint(run / "checkpoints" / "epoch_004.ckpt")
test_a = load_dataset(data / "A" / "test", taxonomy, "A")
test_b = load_dataset(data / "B" / "test", taxonomy, "B")
# ceiling: the evaluator on real B test images, no translation involved
print("evaluator on real B images, mIoU:", round(evaluate_translation(None, eval_b, test_b, taxonomy).miou, 1))
scored = evaluate_translation(state.nets["G_AB"], eval_b, test_a, taxonomy, crop=32)
print("A->B scored by the B segmenter")
print(scored.iou_table())

# Sanity check of the scoring path: no translation, ground-truth echo -> 100 everywhere.
oracle = evaluate_translation(None, GroundTruthEcho(5), test_a, taxonomy)
print("oracle mIoU:", oracle.miou)
