"""Command-line entry point: ``semgan <command> ...``.

Exit codes: 0 success, 1 runtime or experiment failure, 2 usage/config error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch
from PIL import Image as PILImage

from . import ablation
from .config import ConfigError, TrainConfig
from .core_types import ClassTaxonomy, to_uint8, to_unit_range
from .data import load_dataset
from .evaluation import GroundTruthEcho, evaluate_translation, fit_segmenter, load_segmenter, save_segmenter
from .toyworld import CLASS_NAMES, ToyWorldCfg, generate_toy_domains
from .trainer import latest_checkpoint, load_checkpoint, run_taxonomy, train

log = logging.getLogger("semgan")


class UsageError(Exception):
    pass


def _parse_counts(text: str) -> tuple[int, int, int]:
    try:
        counts = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"--counts expects three comma-separated integers, got {text!r}") from None
    if len(counts) != 3:
        raise UsageError("--counts expects train,val,test")
    return counts


def cmd_gen_data(args) -> int:
    if args.preset != "toy":
        raise UsageError(f"unknown preset {args.preset!r}")
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise UsageError(f"{out} exists and is not empty; pass --force to overwrite")
    try:
        cfg = ToyWorldCfg(image_size=args.image_size, ambiguity=args.ambiguity == "on",
                          counts=_parse_counts(args.counts), seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    summary = generate_toy_domains(cfg, out, force=args.force)
    print(f"wrote {summary['per_domain']} samples per domain to {out}")
    return 0


def _load_config(args) -> TrainConfig:
    cfg = TrainConfig.from_file(args.config)
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    if overrides:
        cfg = TrainConfig.from_dict({**cfg.to_dict(), **overrides})
    if cfg.data_root and not Path(cfg.data_root).is_dir():
        raise UsageError(f"data_root {cfg.data_root} does not exist")
    if not cfg.data_root:
        raise UsageError("config must set data_root")
    return cfg


def cmd_train(args) -> int:
    cfg = _load_config(args)
    run_dir = Path(args.run_dir or Path("runs") / Path(args.config).stem)
    if args.resume:
        if latest_checkpoint(run_dir) is None:
            raise UsageError(f"--resume: no checkpoint found in {run_dir}")
        saved = TrainConfig.from_file(run_dir / "config.txt")
        bad = saved.incompatibilities(cfg)
        if bad:
            raise UsageError(f"--resume: config differs from the run's in {', '.join(bad)}")
    elif run_dir.exists() and any(run_dir.iterdir()):
        raise UsageError(f"run directory {run_dir} is not empty (use --resume to continue)")
    train(cfg, run_dir, resume=args.resume)
    test = run_dir / "eval" / "test.json"
    if test.exists():
        report = json.loads(test.read_text())
        for d, r in report.items():
            print(f"{d}: overall {r['overall_acc']:.1f}  avg class {r['avg_class_acc']:.1f}  mIoU {r['miou']:.1f}")
    print(f"run directory: {run_dir}")
    return 0


def _generator_from(ckpt: str, direction: str):
    if direction not in ("ab", "ba"):
        raise UsageError("--direction must be 'ab' or 'ba'")
    if not Path(ckpt).is_file():
        raise UsageError(f"checkpoint {ckpt} not found")
    try:
        state = load_checkpoint(ckpt)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    G = state.nets["G_AB" if direction == "ab" else "G_BA"]
    G.eval()
    return state, G


def cmd_translate(args) -> int:
    in_dir, out_dir = Path(args.input_dir), Path(args.out)
    if not in_dir.is_dir():
        raise UsageError(f"input directory {in_dir} not found")
    _, G = _generator_from(args.ckpt, args.direction)
    inputs = sorted(in_dir.glob("*.png"))
    sizes = {}
    for path in inputs:
        with PILImage.open(path) as im:
            sizes[path] = im.size
    bad = [p.name for p, (w, h) in sizes.items() if w % 4 or h % 4]
    if bad:
        raise UsageError(f"image sides must be multiples of 4: {bad}")
    out_dir.mkdir(parents=True, exist_ok=True)
    with torch.no_grad():
        for path in inputs:
            with PILImage.open(path) as im:
                x = torch.from_numpy(to_unit_range(np.asarray(im.convert("RGB"))))
            y = G(x.unsqueeze(0))[0]
            PILImage.fromarray(to_uint8(y)).save(out_dir / path.name)
    print(f"translated {len(inputs)} image(s) into {out_dir}")
    return 0


def _dataset_taxonomy(args, dataset: Path) -> ClassTaxonomy:
    """``--taxonomy`` if given, else the nearest ``taxonomy.csv`` above the dataset."""
    if args.taxonomy:
        return ClassTaxonomy.from_csv(args.taxonomy)
    for parent in (dataset, *dataset.resolve().parents):
        if (parent / "taxonomy.csv").is_file():
            return ClassTaxonomy.from_csv(parent / "taxonomy.csv")
    raise UsageError("no taxonomy: pass --taxonomy")


def cmd_evaluate(args) -> int:
    dataset_root = Path(args.dataset)
    if not dataset_root.is_dir():
        raise UsageError(f"dataset {dataset_root} not found")
    if args.ckpt == "identity":
        if args.direction not in ("ab", "ba"):
            raise UsageError("--direction must be 'ab' or 'ba'")
        G, resize, crop = None, None, args.crop or None
        try:
            taxonomy = _dataset_taxonomy(args, dataset_root)
        except (OSError, ValueError) as exc:
            raise UsageError(f"taxonomy: {exc}") from None
    else:
        state, G = _generator_from(args.ckpt, args.direction)
        cfg = state.cfg
        resize, crop = cfg.resize, args.crop or cfg.crop_size
        try:
            taxonomy = ClassTaxonomy.from_csv(args.taxonomy) if args.taxonomy else run_taxonomy(cfg)
        except (OSError, ValueError) as exc:
            raise UsageError(f"taxonomy: {exc}") from None
        if taxonomy.num_classes != cfg.num_classes:
            raise UsageError(f"taxonomy has {taxonomy.num_classes} classes, checkpoint has {cfg.num_classes}")
    if args.eval_segmenter == "gt-echo":
        seg = GroundTruthEcho(taxonomy.num_classes)
    else:
        if not Path(args.eval_segmenter).is_file():
            raise UsageError(f"evaluation segmenter {args.eval_segmenter} not found")
        try:
            seg = load_segmenter(args.eval_segmenter)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        if seg.cfg.num_classes != taxonomy.num_classes:
            raise UsageError(f"evaluation segmenter has {seg.cfg.num_classes} classes, "
                             f"taxonomy has {taxonomy.num_classes}")
    source = "A" if args.direction == "ab" else "B"
    try:
        dataset = load_dataset(dataset_root, taxonomy, source, resize)
        if len(dataset) == 0:
            raise UsageError(f"dataset {dataset_root} is empty")
        dataset[0]
    except (FileNotFoundError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    report = evaluate_translation(G, seg, dataset, taxonomy, crop=crop)
    text = report.to_json(args.out)
    print(text if args.out is None else f"report written to {args.out}")
    return 0


def cmd_train_segmenter(args) -> int:
    if not Path(args.dataset).is_dir():
        raise UsageError(f"dataset {args.dataset} not found")
    taxonomy = ClassTaxonomy.from_csv(args.taxonomy) if args.taxonomy else \
        (ClassTaxonomy(CLASS_NAMES) if args.num_classes == len(CLASS_NAMES) else
         ClassTaxonomy.default(args.num_classes))
    from .models import SegmenterCfg

    dataset = load_dataset(args.dataset, taxonomy)
    if len(dataset) == 0:
        raise UsageError(f"dataset {args.dataset} is empty")
    net = fit_segmenter(list(dataset), SegmenterCfg(taxonomy.num_classes, args.preset, args.base_width),
                        args.steps, batch_size=args.batch_size, lr=args.lr, crop=args.crop, seed=args.seed)
    save_segmenter(net, args.out, taxonomy.names)
    print(f"segmenter saved to {args.out}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_config(args)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    unknown = [v for v in variants if v not in ablation.VARIANTS + ("seg_nocycle",)]
    if unknown:
        raise UsageError(f"unknown variant(s): {unknown}")
    directions = tuple(d.strip().upper() for d in args.directions.split(",") if d.strip())
    if not directions or set(directions) - set(ablation.DIRECTIONS):
        raise UsageError("--directions takes a comma list of ab, ba")
    if args.seeds < 1:
        raise UsageError("--seeds must be >= 1")
    for v in variants:
        ablation.variant_config(cfg, v, 0)
    out = Path(args.out)
    results = ablation.run_ablation(cfg, out, variants, range(args.seeds), args.evaluator_steps)
    rows = ablation.summarize(results, directions)
    print(ablation.format_table(rows))
    if any(r.error for r in results):
        return 1
    if args.check_order:
        ok = ablation.ordering_holds(rows)
        print(f"ordering seg_sm >= seg >= cycle: {'holds' if ok else 'VIOLATED'}")
        return 0 if ok else 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semgan", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write the procedural two-domain dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--preset", default="toy", help="dataset preset (only 'toy')")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ambiguity", choices=("on", "off"), default="on",
                   help="swap sky/blob-1 appearance between domains")
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--counts", default="200,20,40", help="train,val,test samples per domain")
    p.add_argument("--force", action="store_true", help="overwrite a non-empty --out")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model from a key=value config")
    p.add_argument("--config", required=True)
    p.add_argument("--run-dir", help="output directory (default runs/<config name>)")
    p.add_argument("--resume", action="store_true", help="continue from the latest checkpoint in --run-dir")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("translate", help="translate a directory of PNG images")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input-dir", required=True)
    p.add_argument("--direction", choices=("ab", "ba"), required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("evaluate", help="segmentation score of translated images")
    p.add_argument("--ckpt", required=True, help="training checkpoint, or 'identity' for no translation")
    p.add_argument("--eval-segmenter", required=True,
                   help="saved segmenter for the target domain, or 'gt-echo' for the oracle")
    p.add_argument("--dataset", required=True, help="source-domain directory with images/ and masks/")
    p.add_argument("--direction", choices=("ab", "ba"), required=True)
    p.add_argument("--taxonomy", help="taxonomy CSV (default: the checkpoint's, or one found above --dataset)")
    p.add_argument("--crop", type=int, default=0, help="center-crop size (default: config crop_size)")
    p.add_argument("--out", help="write the JSON report here instead of stdout")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("train-segmenter", help="fit a frozen evaluation segmenter on one domain")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--num-classes", type=int, default=len(CLASS_NAMES))
    p.add_argument("--taxonomy")
    p.add_argument("--preset", choices=("desk", "full"), default="desk")
    p.add_argument("--base-width", type=int, default=16)
    p.add_argument("--steps", type=int, default=400)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--lr", type=float, default=2e-3)
    p.add_argument("--crop", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train_segmenter)

    p = sub.add_parser("ablate", help="train and compare cycle / seg / seg_sm variants")
    p.add_argument("--config", required=True)
    p.add_argument("--variants", default="cycle,seg,seg_sm")
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--out", default="runs/ablation")
    p.add_argument("--directions", default="ab,ba", help="directions to tabulate")
    p.add_argument("--evaluator-steps", type=int, default=1000)
    p.add_argument("--check-order", action="store_true",
                   help="exit 0 only if mIoU(seg_sm) >= mIoU(seg) >= mIoU(cycle) per direction")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"semgan {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        log.debug("failure", exc_info=True)
        print(f"semgan {args.command}: failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
