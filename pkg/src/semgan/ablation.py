"""Variant-by-seed ablation: cycle-only vs. segmentation consistency vs. + semantic dropout."""
from __future__ import annotations

import csv
import json
import logging
import statistics
from dataclasses import dataclass
from pathlib import Path

from .config import ConfigError, TrainConfig
from .evaluation import fit_segmenter, load_segmenter, save_segmenter
from .models import SegmenterCfg
from .trainer import load_domain, run_taxonomy, train

log = logging.getLogger(__name__)

VARIANTS = ("cycle", "seg", "seg_sm")
DIRECTIONS = ("AB", "BA")


@dataclass
class RunResult:
    variant: str
    seed: int
    direction: str
    miou: float | None
    mean_acc: float | None
    error: str = ""


def variant_config(base: TrainConfig, variant: str, seed: int) -> TrainConfig:
    if variant not in VARIANTS + ("seg_nocycle",):
        raise ConfigError(f"unknown ablation variant {variant!r}")
    cfg = base.replace(seed=seed, preset="").with_preset(variant)
    if variant != "cycle" and cfg.lambda_seg <= 0:
        raise ConfigError(f"variant {variant} needs lambda_seg > 0")
    if variant == "seg_sm" and max(cfg.dropout_rates()) <= 0:
        raise ConfigError("variant seg_sm needs a positive semantic_dropout_p")
    return cfg


def _fit_pair(base: TrainConfig, out_dir: Path, seg_cfg: SegmenterCfg, steps: int, seed: int) -> dict:
    """Per-domain supervised segmenters, cached as ``segmenter_{A,B}.pt``."""
    taxonomy = run_taxonomy(base)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    for domain in ("A", "B"):
        path = out_dir / f"segmenter_{domain}.pt"
        if not path.exists():
            data = load_domain(base, domain, taxonomy)
            net = fit_segmenter(data.train, seg_cfg, steps, batch_size=8, lr=2e-3,
                                crop=base.crop_size, seed=seed + (domain == "B"), hflip=base.hflip)
            save_segmenter(net, path, taxonomy.names)
        paths[domain] = path
    return paths


def build_evaluators(base: TrainConfig, out_dir: Path, steps: int = 1000, seed: int = 1234, width: int = 16):
    """Frozen target-domain segmenters, trained once and shared by every run.

    Returns ``(eval_for_AB, eval_for_BA)``: the A->B direction is scored by a
    segmenter trained on domain B, and vice versa. They are deliberately
    wider than the in-training segmenters so that scoring is not limited by
    the measuring instrument.
    """
    seg_cfg = SegmenterCfg(base.num_classes, base.seg_preset, width)
    paths = _fit_pair(base, out_dir, seg_cfg, steps, seed)
    return load_segmenter(paths["B"]), load_segmenter(paths["A"])


def pretrained_segmenters(base: TrainConfig, out_dir: Path, steps: int = 1000, seed: int = 4321) -> TrainConfig:
    """Point ``seg_init_a/b`` at supervised segmenters shared by every variant.

    These are independent of the evaluators (other seed, the run's own
    segmenter architecture), so no run is trained against its scorer.
    """
    if base.seg_init_a and base.seg_init_b:
        return base
    paths = _fit_pair(base, out_dir, base.segmenter_cfg(), steps, seed)
    return base.replace(seg_init_a=base.seg_init_a or str(paths["A"]), seg_init_b=base.seg_init_b or str(paths["B"]))


def run_ablation(base: TrainConfig, out_dir, variants=VARIANTS, seeds=(0, 1, 2),
                 evaluator_steps: int = 1000, pretrain: bool = True) -> list[RunResult]:
    """Train every (variant, seed) run under ``out_dir/<variant>/seed_<n>``.

    Finished runs (those with ``eval/test.json``) are read back, not
    retrained, so an interrupted ablation can simply be restarted.
    """
    out_dir = Path(out_dir)
    for v in variants:
        variant_config(base, v, 0)
    evaluators = build_evaluators(base, out_dir / "evaluators", evaluator_steps)
    if pretrain:
        base = pretrained_segmenters(base, out_dir / "pretrained", evaluator_steps)
    configs = {(v, s): variant_config(base, v, s) for v in variants for s in seeds}
    results = []
    for (variant, seed), cfg in configs.items():
        run_dir = out_dir / variant / f"seed_{seed}"
        try:
            if (run_dir / "eval" / "test.json").exists():
                report = json.loads((run_dir / "eval" / "test.json").read_text())
            else:
                train(cfg, run_dir, evaluators=evaluators)
                report = json.loads((run_dir / "eval" / "test.json").read_text())
        except Exception as exc:  # one failed run must not sink the table
            log.exception("run %s/seed %d failed", variant, seed)
            results += [RunResult(variant, seed, d, None, None, repr(exc)) for d in DIRECTIONS]
            continue
        for d in DIRECTIONS:
            r = report[d]
            results.append(RunResult(variant, seed, d, r["miou"], r["avg_class_acc"]))
        log.info("%s seed %d: AB %.1f  BA %.1f", variant, seed, report["AB"]["miou"], report["BA"]["miou"])
    write_results(results, out_dir)
    return results


def _mean_sd(values):
    if not values:
        return None, None
    return statistics.fmean(values), (statistics.stdev(values) if len(values) > 1 else 0.0)


def summarize(results: list[RunResult], directions=DIRECTIONS) -> list[dict]:
    """One row per (variant, direction), variants in first-seen order."""
    rows = []
    order = list(dict.fromkeys(r.variant for r in results))
    for variant in order:
        for d in directions:
            runs = [r for r in results if r.variant == variant and r.direction == d]
            ok = [r for r in runs if r.error == ""]
            miou, miou_sd = _mean_sd([r.miou for r in ok])
            acc, acc_sd = _mean_sd([r.mean_acc for r in ok])
            rows.append({"variant": variant, "direction": d, "mean_acc": acc, "mean_acc_sd": acc_sd,
                         "miou": miou, "miou_sd": miou_sd, "seeds": len(ok), "failed": len(runs) - len(ok)})
    return rows


def format_table(rows: list[dict]) -> str:
    def cell(mean, sd):
        return "FAILED" if mean is None else f"{mean:5.1f} ± {sd:4.1f}"

    header = ("variant", "direction", "mean_acc", "miou", "seeds")
    body = [(r["variant"], r["direction"], cell(r["mean_acc"], r["mean_acc_sd"]), cell(r["miou"], r["miou_sd"]),
             f"{r['seeds']}" + (f" ({r['failed']} failed)" if r["failed"] else "")) for r in rows]
    widths = [max(len(str(x)) for x in col) for col in zip(header, *body)]
    lines = ["  ".join(str(x).ljust(w) for x, w in zip(line, widths)) for line in (header, *body)]
    return "\n".join(lines)


def write_results(results: list[RunResult], out_dir: Path) -> None:
    rows = summarize(results)
    with open(out_dir / "ablation.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "direction", "mean_acc", "miou", "seeds"])
        for r in rows:
            writer.writerow([r["variant"], r["direction"], r["mean_acc"], r["miou"], r["seeds"]])
    with open(out_dir / "ablation_runs.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "seed", "direction", "mean_acc", "miou", "error"])
        for r in results:
            writer.writerow([r.variant, r.seed, r.direction, r.mean_acc, r.miou, r.error])
    (out_dir / "ablation.txt").write_text(format_table(rows) + "\n")


def ordering_holds(rows: list[dict]) -> bool:
    """miou(seg_sm) >= miou(seg) >= miou(cycle) in every direction present."""
    by = {(r["variant"], r["direction"]): r["miou"] for r in rows}
    chain = [v for v in ("seg_sm", "seg", "cycle") if any(k[0] == v for k in by)]
    for d in dict.fromkeys(r["direction"] for r in rows):
        vals = [by.get((v, d)) for v in chain]
        if any(v is None for v in vals):
            return False
        if any(hi < lo for hi, lo in zip(vals, vals[1:])):
            return False
    return True
