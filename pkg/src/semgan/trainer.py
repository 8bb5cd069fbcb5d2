"""Joint optimisation of generators, discriminators and segmenters.

Each step runs, in order: the forward passes of every path, the generator
update (discriminators and segmenters frozen), the discriminator update on
real images against pooled fakes, and the segmenter update. Segmenters only
ever learn from generator outputs once warm-up is over *and* ``seg_joint``
is enabled.
"""
from __future__ import annotations

import copy
import csv
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image as PILImage

from .config import ConfigError, TrainConfig
from .core_types import IGNORE, ClassTaxonomy, LabeledSample, load_taxonomy, to_uint8
from .data import Dataset, augment, cache, load_dataset, sample_unpaired_batch, split_dataset, stack_images, stack_masks
from .evaluation import evaluate_translation, fit_segmenter, load_segmenter, pixel_accuracy
from .losses import (LossRecord, NonFiniteLossError, adversarial_d_loss, adversarial_g_loss, cycle_loss,
                     identity_loss, seg_consistency_loss, total_generator_loss)
from .models import build_discriminator, build_generator, build_segmenter
from .semantic_dropout import DropoutConfig, apply_semantic_dropout

log = logging.getLogger(__name__)

CKPT_FORMAT = "semgan-checkpoint"
CKPT_VERSION = 1
MAX_CONSECUTIVE_SKIPS = 5
NET_NAMES = ("G_AB", "G_BA", "D_A", "D_B", "S_A", "S_B")


class TrainingError(RuntimeError):
    pass


class ImagePool:
    """History buffer of generated images shown to the discriminators."""

    def __init__(self, capacity: int, rng: np.random.Generator):
        self.capacity = capacity
        self.rng = rng
        self.images: list[torch.Tensor] = []

    def __len__(self):
        return len(self.images)

    def query(self, fakes: torch.Tensor) -> torch.Tensor:
        if self.capacity == 0:
            return fakes
        out = []
        for img in fakes.detach():
            img = img.unsqueeze(0)
            if len(self.images) < self.capacity:
                self.images.append(img.clone())
                out.append(img)
            elif self.rng.uniform() > 0.5:
                idx = int(self.rng.integers(self.capacity))
                out.append(self.images[idx].clone())
                self.images[idx] = img.clone()
            else:
                out.append(img)
        return torch.cat(out, dim=0)

    def state_dict(self) -> dict:
        return {"images": [t.clone() for t in self.images], "rng": copy.deepcopy(self.rng.bit_generator.state)}

    def load_state_dict(self, state: dict) -> None:
        self.images = [t.clone() for t in state["images"]]
        self.rng.bit_generator.state = state["rng"]


def pool_query(pool: ImagePool, fakes: torch.Tensor) -> torch.Tensor:
    return pool.query(fakes)


@dataclass
class TrainState:
    cfg: TrainConfig
    nets: dict
    opt_G: torch.optim.Optimizer
    opt_D: torch.optim.Optimizer
    opt_S: torch.optim.Optimizer
    schedulers: list
    pool_A: ImagePool
    pool_B: ImagePool
    rng: np.random.Generator
    epoch: int = 0
    step: int = 0
    warmup_done: bool = False
    seg_val_acc: tuple = (0.0, 0.0)
    consecutive_skips: int = 0
    best_miou: float = -math.inf
    extras: dict = field(default_factory=dict)

    def __getattr__(self, name):
        nets = self.__dict__.get("nets")
        if nets is not None and name in nets:
            return nets[name]
        raise AttributeError(name)


@dataclass
class Batch:
    images: torch.Tensor
    masks: torch.Tensor | None = None

    @classmethod
    def from_samples(cls, samples) -> "Batch":
        masks = stack_masks(samples)
        return cls(torch.from_numpy(stack_images(samples)), None if masks is None else torch.from_numpy(masks))


def _lr_lambda(epochs: int):
    half = epochs // 2

    def factor(epoch: int) -> float:
        return 1.0 - max(0, epoch + 1 - half) / float(epochs - half + 1)

    return factor


def build_state(cfg: TrainConfig) -> TrainState:
    torch.manual_seed(cfg.seed)
    nets = {
        "G_AB": build_generator(cfg.generator_cfg()),
        "G_BA": build_generator(cfg.generator_cfg()),
        "D_A": build_discriminator(cfg.discriminator_cfg()),
        "D_B": build_discriminator(cfg.discriminator_cfg()),
        "S_A": build_segmenter(cfg.segmenter_cfg()),
        "S_B": build_segmenter(cfg.segmenter_cfg()),
    }
    betas = (cfg.beta1, cfg.beta2)
    params = lambda *names: [p for n in names for p in nets[n].parameters()]  # noqa: E731
    opt_G = torch.optim.Adam(params("G_AB", "G_BA"), lr=cfg.lr, betas=betas)
    opt_D = torch.optim.Adam(params("D_A", "D_B"), lr=cfg.lr, betas=betas)
    if cfg.seg_optimizer == "sgd":
        opt_S = torch.optim.SGD(params("S_A", "S_B"), lr=cfg.seg_lr, momentum=0.9)
    else:
        opt_S = torch.optim.Adam(params("S_A", "S_B"), lr=cfg.seg_lr, betas=betas)
    schedulers = [torch.optim.lr_scheduler.LambdaLR(o, _lr_lambda(cfg.epochs)) for o in (opt_G, opt_D, opt_S)]
    return TrainState(
        cfg=cfg, nets=nets, opt_G=opt_G, opt_D=opt_D, opt_S=opt_S, schedulers=schedulers,
        pool_A=ImagePool(cfg.pool_size, np.random.default_rng([cfg.seed, 1])),
        pool_B=ImagePool(cfg.pool_size, np.random.default_rng([cfg.seed, 2])),
        rng=np.random.default_rng([cfg.seed, 0]),
    )


def warmup_active(state: TrainState, cfg: TrainConfig) -> bool:
    """True while segmenters must not learn from generator outputs."""
    if cfg.warmup_policy == "fixed_epochs":
        return state.epoch < cfg.warmup_epochs
    if state.warmup_done:
        return False
    if min(state.seg_val_acc) >= cfg.warmup_threshold:
        state.warmup_done = True
        return False
    return True


def _requires_grad(nets, flag: bool) -> None:
    for net in nets:
        for p in net.parameters():
            p.requires_grad_(flag)


def _reference(state: TrainState, cfg: TrainConfig, x: torch.Tensor, gt, source: str) -> torch.Tensor:
    """Target labels for the consistency term of images translated from ``source``.

    Ground truth when available (and allowed), otherwise the detached argmax
    of the source-domain segmenter.
    """
    use_gt = cfg.use_gt_a if source == "A" else cfg.use_gt_b
    if cfg.seg_reference != "segmenter" and use_gt and gt is not None:
        return gt
    if cfg.seg_reference == "gt":
        raise TrainingError(f"seg_reference=gt but domain {source} batch has no ground truth")
    seg = state.nets["S_" + source]
    was = seg.training
    seg.eval()
    with torch.no_grad():
        ref = seg(x).argmax(dim=1)
    seg.train(was)
    if gt is not None:
        # pixels dropped by semantic dropout stay unscored
        ref = torch.where(gt == IGNORE, torch.full_like(ref, IGNORE), ref)
    return ref


@dataclass
class Forward:
    fake_B: torch.Tensor
    fake_A: torch.Tensor
    rec_A: torch.Tensor
    rec_B: torch.Tensor
    idt_A: torch.Tensor | None
    idt_B: torch.Tensor | None
    ref_A: torch.Tensor | None = None
    ref_B: torch.Tensor | None = None


def generator_forward(state: TrainState, x_a: torch.Tensor, x_b: torch.Tensor, with_identity: bool) -> Forward:
    G_AB, G_BA = state.nets["G_AB"], state.nets["G_BA"]
    fake_b = G_AB(x_a)
    fake_a = G_BA(x_b)
    rec_a = G_BA(fake_b)
    rec_b = G_AB(fake_a)
    idt_a = G_BA(x_a) if with_identity else None
    idt_b = G_AB(x_b) if with_identity else None
    return Forward(fake_b, fake_a, rec_a, rec_b, idt_a, idt_b)


def generator_losses(state: TrainState, fw: Forward, x_a, x_b, g_a, g_b, cfg: TrainConfig) -> dict:
    """All generator-side terms; D and S must already be frozen by the caller."""
    w = cfg.loss_weights()
    terms = {
        "g_adv_AB": adversarial_g_loss(state.nets["D_B"](fw.fake_B), w.adv_mode),
        "g_adv_BA": adversarial_g_loss(state.nets["D_A"](fw.fake_A), w.adv_mode),
        "cycle": cycle_loss(x_a, fw.rec_A) + cycle_loss(x_b, fw.rec_B),
        "identity": torch.zeros(()),
        "seg_AB": torch.zeros(()),
        "seg_BA": torch.zeros(()),
    }
    if fw.idt_A is not None:
        terms["identity"] = identity_loss(x_a, fw.idt_A) + identity_loss(x_b, fw.idt_B)
    if w.lambda_seg > 0:
        remap = cfg.remap_permutation()
        fw.ref_A = _reference(state, cfg, x_a, g_a, "A")
        fw.ref_B = _reference(state, cfg, x_b, g_b, "B")
        S_A, S_B = state.nets["S_A"], state.nets["S_B"]
        modes = S_A.training, S_B.training
        S_A.eval(), S_B.eval()
        terms["seg_AB"] = seg_consistency_loss(S_B(fw.fake_B), fw.ref_A, remap, cfg.num_classes)
        terms["seg_BA"] = seg_consistency_loss(S_A(fw.fake_A), fw.ref_B, remap, cfg.num_classes)
        S_A.train(modes[0]), S_B.train(modes[1])
    terms["total_G"] = total_generator_loss(terms, w)
    return terms


def segmenter_losses(state: TrainState, x_a, x_b, g_a, g_b, fw: Forward | None, warmup: bool,
                     cfg: TrainConfig):
    """``(gt_terms, fake_terms)`` for the segmenter update.

    ``fake_terms`` is empty unless warm-up is over and ``seg_joint`` is on;
    it is the only path by which generator outputs reach the segmenters.
    """
    gt_terms, fake_terms = {}, {}
    S_A, S_B = state.nets["S_A"], state.nets["S_B"]
    if g_a is not None and (g_a != IGNORE).any():
        gt_terms["s_A"] = F.cross_entropy(S_A(x_a), g_a, ignore_index=IGNORE)
    if g_b is not None and (g_b != IGNORE).any():
        gt_terms["s_B"] = F.cross_entropy(S_B(x_b), g_b, ignore_index=IGNORE)
    if cfg.seg_joint and not warmup and fw is not None:
        remap = cfg.remap_permutation()
        ref_a = fw.ref_A if fw.ref_A is not None else g_a
        ref_b = fw.ref_B if fw.ref_B is not None else g_b
        if ref_a is not None:
            fake_terms["s_B"] = seg_consistency_loss(S_B(fw.fake_B.detach()), ref_a, remap)
        if ref_b is not None:
            fake_terms["s_A"] = seg_consistency_loss(S_A(fw.fake_A.detach()), ref_b, remap)
    return gt_terms, fake_terms


def _as_batch(batch) -> Batch:
    if isinstance(batch, Batch):
        return batch
    return Batch.from_samples(batch)


def _check_finite(values: dict) -> None:
    for name, value in values.items():
        v = float(value.detach()) if isinstance(value, torch.Tensor) else float(value)
        if not math.isfinite(v):
            raise NonFiniteLossError(name, v)


def training_step(state: TrainState, batch_a, batch_b, cfg: TrainConfig | None = None,
                  warmup: bool | None = None) -> LossRecord:
    """One joint update. Batches are already augmented and dropped out.

    Every loss is evaluated before any parameter moves, so a non-finite
    term raises :class:`NonFiniteLossError` with the state untouched.
    """
    cfg = cfg or state.cfg
    a, b = _as_batch(batch_a), _as_batch(batch_b)
    x_a, x_b, g_a, g_b = a.images, b.images, a.masks, b.masks
    if warmup is None:
        warmup = warmup_active(state, cfg)
    n = state.nets
    w = cfg.loss_weights()
    for net in n.values():
        net.train()
    pools = state.pool_A.state_dict(), state.pool_B.state_dict()

    # generator side, with D and S frozen
    _requires_grad([n["D_A"], n["D_B"], n["S_A"], n["S_B"]], False)
    fw = generator_forward(state, x_a, x_b, with_identity=w.lambda_idt > 0)
    g_terms = generator_losses(state, fw, x_a, x_b, g_a, g_b, cfg)
    _requires_grad([n["D_A"], n["D_B"], n["S_A"], n["S_B"]], True)

    # discriminators: real vs pooled fakes
    try:
        fake_b_pool = state.pool_B.query(fw.fake_B.detach())
        fake_a_pool = state.pool_A.query(fw.fake_A.detach())
        d_terms = {
            "d_A": adversarial_d_loss(n["D_A"](x_a), n["D_A"](fake_a_pool), w.adv_mode),
            "d_B": adversarial_d_loss(n["D_B"](x_b), n["D_B"](fake_b_pool), w.adv_mode),
        }
        s_terms = {}
        if cfg.train_segmenters:
            gt_terms, fake_terms = segmenter_losses(state, x_a, x_b, g_a, g_b, fw, warmup, cfg)
            for key in ("s_A", "s_B"):
                parts = [t[key] for t in (gt_terms, fake_terms) if key in t]
                if parts:
                    s_terms[key] = sum(parts)
        _check_finite({**g_terms, **d_terms, **s_terms})
    except NonFiniteLossError:
        state.pool_A.load_state_dict(pools[0])
        state.pool_B.load_state_dict(pools[1])
        raise

    state.opt_G.zero_grad(set_to_none=True)
    if g_terms["total_G"].requires_grad:
        g_terms["total_G"].backward()
    state.opt_G.step()

    state.opt_D.zero_grad(set_to_none=True)
    (d_terms["d_A"] + d_terms["d_B"]).backward()
    state.opt_D.step()

    if s_terms:
        state.opt_S.zero_grad(set_to_none=True)
        sum(s_terms.values()).backward()
        state.opt_S.step()

    state.step += 1
    values = {**g_terms, **d_terms, **s_terms}
    return LossRecord(**{k: float(v.detach()) if isinstance(v, torch.Tensor) else float(v)
                         for k, v in values.items()})


def segmenter_gradient_probe(state: TrainState, batch_a, batch_b, cfg: TrainConfig | None = None,
                             warmup: bool | None = None) -> float:
    """Norm of the segmenter-parameter gradient contributed by generator outputs.

    Builds the segmenter objective exactly as :func:`training_step` does and
    compares its gradient with that of the ground-truth-only part.
    """
    cfg = cfg or state.cfg
    a, b = _as_batch(batch_a), _as_batch(batch_b)
    if warmup is None:
        warmup = warmup_active(state, cfg)
    with torch.no_grad():
        fw = generator_forward(state, a.images, b.images, with_identity=False)
    if cfg.lambda_seg > 0 or cfg.seg_joint:
        fw.ref_A = _reference(state, cfg, a.images, a.masks, "A")
        fw.ref_B = _reference(state, cfg, b.images, b.masks, "B")
    params = [p for k in ("S_A", "S_B") for p in state.nets[k].parameters()]

    def grads(include_fake: bool):
        gt_terms, fake_terms = segmenter_losses(state, a.images, b.images, a.masks, b.masks, fw, warmup, cfg)
        total = sum(gt_terms.values()) + (sum(fake_terms.values()) if include_fake else 0.0)
        return torch.autograd.grad(total, params, allow_unused=True)

    states = {k: copy.deepcopy(state.nets[k].state_dict()) for k in ("S_A", "S_B")}
    full = grads(True)
    for k, sd in states.items():  # undo BN running-stat updates between the two passes
        state.nets[k].load_state_dict(sd)
    gt_only = grads(False)
    for k, sd in states.items():
        state.nets[k].load_state_dict(sd)
    sq = 0.0
    for g1, g2 in zip(full, gt_only):
        g1 = torch.zeros(()) if g1 is None else g1
        g2 = torch.zeros(()) if g2 is None else g2
        sq += float(((g1 - g2) ** 2).sum())
    return math.sqrt(sq)


# ---------------------------------------------------------------------------
# data plumbing


@dataclass
class DomainData:
    train: object
    val: object
    test: object


def load_domain(cfg: TrainConfig, domain: str, taxonomy: ClassTaxonomy) -> DomainData:
    root = Path(cfg.data_root) / domain
    if not root.exists():
        raise ConfigError(f"data directory {root} does not exist")
    if (root / "train").is_dir():
        parts = [load_dataset(root / s, taxonomy, domain, cfg.resize) if (root / s).is_dir()
                 else Dataset(root / s, taxonomy, domain, cfg.resize)
                 for s in ("train", "val", "test")]
    else:
        parts = split_dataset(load_dataset(root, taxonomy, domain, cfg.resize), seed=cfg.split_seed)
    if len(parts[0]) == 0:
        raise ConfigError(f"no training samples under {root}")
    if cfg.cache_data:
        parts = [cache(p) for p in parts]
    return DomainData(*parts)


def prepare_pair(a: LabeledSample, b: LabeledSample, cfg: TrainConfig, rng: np.random.Generator):
    a = augment(a, "train", cfg.crop_size, rng, cfg.hflip)
    b = augment(b, "train", cfg.crop_size, rng, cfg.hflip)
    p_ab, p_ba = cfg.dropout_rates()
    if p_ab > 0 or p_ba > 0:
        a, b, _, _ = apply_semantic_dropout(a, b, DropoutConfig(p_ab, cfg.seed), rng, p_b=p_ba)
    return a, b


def draw_batches(state: TrainState, data_a: DomainData, data_b: DomainData, cfg: TrainConfig):
    raw_a, raw_b = sample_unpaired_batch(data_a.train, data_b.train, cfg.batch_size, state.rng)
    pairs = [prepare_pair(a, b, cfg, state.rng) for a, b in zip(raw_a, raw_b)]
    return Batch.from_samples([p[0] for p in pairs]), Batch.from_samples([p[1] for p in pairs])


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(state: TrainState, path) -> None:
    path = Path(path)
    blob = {
        "format": CKPT_FORMAT,
        "version": CKPT_VERSION,
        "config": state.cfg.to_dict(),
        "nets": {k: v.state_dict() for k, v in state.nets.items()},
        "optimizers": {"G": state.opt_G.state_dict(), "D": state.opt_D.state_dict(), "S": state.opt_S.state_dict()},
        "schedulers": [s.state_dict() for s in state.schedulers],
        "pools": {"A": state.pool_A.state_dict(), "B": state.pool_B.state_dict()},
        "rng": {"numpy": copy.deepcopy(state.rng.bit_generator.state), "torch": torch.get_rng_state()},
        "epoch": state.epoch,
        "step": state.step,
        "warmup_done": state.warmup_done,
        "seg_val_acc": list(state.seg_val_acc),
        "best_miou": state.best_miou,
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(blob, tmp)
    os.replace(tmp, path)


def read_checkpoint(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint {path} not found")
    blob = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(blob, dict) or blob.get("format") != CKPT_FORMAT:
        raise ValueError(f"{path} is not a semgan checkpoint")
    if blob.get("version") != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {blob.get('version')}")
    return blob


def load_checkpoint(path, cfg: TrainConfig | None = None) -> TrainState:
    """Rebuild a :class:`TrainState`; with ``cfg``, refuse incompatible configs."""
    blob = read_checkpoint(path)
    saved = TrainConfig.from_dict(blob["config"])
    if cfg is not None:
        bad = saved.incompatibilities(cfg)
        if bad:
            raise ConfigError(f"config incompatible with checkpoint {path}: {', '.join(bad)}")
    else:
        cfg = saved
    state = build_state(cfg)
    for k, sd in blob["nets"].items():
        state.nets[k].load_state_dict(sd)
    state.opt_G.load_state_dict(blob["optimizers"]["G"])
    state.opt_D.load_state_dict(blob["optimizers"]["D"])
    state.opt_S.load_state_dict(blob["optimizers"]["S"])
    for sched, sd in zip(state.schedulers, blob["schedulers"]):
        sched.load_state_dict(sd)
    state.pool_A.load_state_dict(blob["pools"]["A"])
    state.pool_B.load_state_dict(blob["pools"]["B"])
    state.rng.bit_generator.state = blob["rng"]["numpy"]
    torch.set_rng_state(blob["rng"]["torch"])
    state.epoch, state.step = blob["epoch"], blob["step"]
    state.warmup_done = blob["warmup_done"]
    state.seg_val_acc = tuple(blob["seg_val_acc"])
    state.best_miou = blob["best_miou"]
    return state


def latest_checkpoint(run_dir) -> Path | None:
    ckpts = sorted((Path(run_dir) / "checkpoints").glob("epoch_*.ckpt"))
    return ckpts[-1] if ckpts else None


# ---------------------------------------------------------------------------
# run loop


def _write_rows(path: Path, rows: list[dict], header: bool) -> None:
    cols = ["step", "epoch"] + LossRecord.columns()
    with open(path, "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=cols)
        if header:
            writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def _truncate_losses(path: Path, max_step: int) -> None:
    if not path.exists():
        return
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    kept = [r for r in rows if int(r["step"]) < max_step]
    path.unlink()
    _write_rows(path, kept, header=True)


def run_taxonomy(cfg: TrainConfig) -> ClassTaxonomy:
    """The config's taxonomy file, else ``<data_root>/taxonomy.csv`` if present."""
    path = cfg.taxonomy
    if not path and cfg.data_root and (Path(cfg.data_root) / "taxonomy.csv").is_file():
        path = str(Path(cfg.data_root) / "taxonomy.csv")
    try:
        return load_taxonomy(path, cfg.num_classes)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _evaluator(path: str, fallback):
    return load_segmenter(path) if path else fallback


def evaluate_state(state: TrainState, data_a: DomainData, data_b: DomainData, split: str,
                   taxonomy: ClassTaxonomy, evaluators=None) -> dict:
    cfg = state.cfg
    eval_b, eval_a = evaluators or (_evaluator(cfg.eval_segmenter_b, state.nets["S_B"]),
                                    _evaluator(cfg.eval_segmenter_a, state.nets["S_A"]))
    out = {}
    for name, G, seg, source in (("AB", state.nets["G_AB"], eval_b, getattr(data_a, split)),
                                 ("BA", state.nets["G_BA"], eval_a, getattr(data_b, split))):
        if len(source) == 0:
            continue
        out[name] = evaluate_translation(G, seg, source, taxonomy, crop=cfg.crop_size).to_dict()
    return out


def save_sample_grid(state: TrainState, data_a: DomainData, data_b: DomainData, path: Path, n: int = 4) -> None:
    """Rows of source | translated | reconstructed for both directions."""
    cfg = state.cfg
    rows = []
    with torch.no_grad():
        for data, G, F_back in ((data_a, state.nets["G_AB"], state.nets["G_BA"]),
                                (data_b, state.nets["G_BA"], state.nets["G_AB"])):
            pool = data.val if len(data.val) else data.train
            samples = [augment(pool[i], "eval", cfg.crop_size) for i in range(min(n, len(pool)))]
            if not samples:
                continue
            x = torch.from_numpy(stack_images(samples))
            G.eval(), F_back.eval()
            y = G(x)
            r = F_back(y)
            G.train(), F_back.train()
            for i in range(len(samples)):
                rows.append(np.concatenate([to_uint8(x[i]), to_uint8(y[i]), to_uint8(r[i])], axis=1))
    if rows:
        PILImage.fromarray(np.concatenate(rows, axis=0)).save(path)


def init_segmenters_from_files(state: TrainState) -> None:
    cfg = state.cfg
    for key, path in (("S_A", cfg.seg_init_a), ("S_B", cfg.seg_init_b)):
        if not path:
            continue
        if not Path(path).is_file():
            raise ConfigError(f"segmenter initialisation {path} not found")
        source = load_segmenter(path)
        if source.cfg != cfg.segmenter_cfg():
            raise ConfigError(f"{path} holds a {source.cfg} segmenter, the run needs {cfg.segmenter_cfg()}")
        state.nets[key].load_state_dict(source.state_dict())
        state.nets[key].train()


def pretrain_segmenters(state: TrainState, data_a: DomainData, data_b: DomainData, steps: int) -> None:
    cfg = state.cfg
    for key, data, seed in (("S_A", data_a, 11), ("S_B", data_b, 12)):
        fit_segmenter(data.train, cfg.segmenter_cfg(), steps, batch_size=max(cfg.batch_size, 4), lr=1e-3,
                      crop=cfg.crop_size, seed=cfg.seed * 100 + seed, hflip=cfg.hflip, net=state.nets[key])
        state.nets[key].train()


def train(cfg: TrainConfig, run_dir, resume: bool = False, stop_after: int | None = None,
          evaluators=None) -> Path:
    """Train end to end and populate ``run_dir``.

    Layout: ``config.txt``, ``losses.csv``, ``checkpoints/epoch_*.ckpt`` (plus
    ``best.ckpt``), ``eval/*.json`` and ``samples/*.png``. ``stop_after``
    ends the run early after that many epochs, leaving a resumable
    checkpoint. ``evaluators`` optionally overrides the ``(A->B, B->A)``
    scoring segmenters.
    """
    run_dir = Path(run_dir)
    ckpt_dir, eval_dir, sample_dir = run_dir / "checkpoints", run_dir / "eval", run_dir / "samples"
    losses_path = run_dir / "losses.csv"
    if resume:
        ckpt = latest_checkpoint(run_dir)
        if ckpt is None:
            raise ConfigError(f"nothing to resume in {run_dir}")
        state = load_checkpoint(ckpt, cfg)
        state.cfg = cfg
        _truncate_losses(losses_path, state.step)
    else:
        if run_dir.exists() and any(run_dir.iterdir()):
            raise ConfigError(f"run directory {run_dir} is not empty")
        state = None
    taxonomy = run_taxonomy(cfg)
    data_a = load_domain(cfg, "A", taxonomy)
    data_b = load_domain(cfg, "B", taxonomy)
    for d in (ckpt_dir, eval_dir, sample_dir):
        d.mkdir(parents=True, exist_ok=True)
    if state is None:
        (run_dir / "config.txt").write_text(cfg.to_text())
        state = build_state(cfg)
        init_segmenters_from_files(state)
        if cfg.seg_pretrain_steps > 0:
            pretrain_segmenters(state, data_a, data_b, cfg.seg_pretrain_steps)
        if cfg.warmup_policy == "threshold":
            state.seg_val_acc = _seg_val_acc(state, data_a, data_b)
    steps_per_epoch = cfg.steps_per_epoch or max(1, max(len(data_a.train), len(data_b.train)) // cfg.batch_size)
    last_epoch = cfg.epochs if stop_after is None else min(cfg.epochs, stop_after)

    while state.epoch < last_epoch:
        warmup = warmup_active(state, cfg)
        rows = []
        for _ in range(steps_per_epoch):
            batch_a, batch_b = draw_batches(state, data_a, data_b, cfg)
            step = state.step
            try:
                record = training_step(state, batch_a, batch_b, cfg, warmup=warmup)
            except NonFiniteLossError as exc:
                state.consecutive_skips += 1
                log.warning("step %d skipped: %s", step, exc)
                if state.consecutive_skips > MAX_CONSECUTIVE_SKIPS:
                    raise TrainingError(f"{state.consecutive_skips} consecutive non-finite steps") from exc
                continue
            state.consecutive_skips = 0
            rows.append({"step": step, "epoch": state.epoch, **record.as_row()})
        _write_rows(losses_path, rows, header=not losses_path.exists())
        for sched in state.schedulers:
            sched.step()
        state.epoch += 1
        if cfg.warmup_policy == "threshold" and not state.warmup_done:
            state.seg_val_acc = _seg_val_acc(state, data_a, data_b)

        is_last = state.epoch == last_epoch
        if cfg.eval_every and (state.epoch % cfg.eval_every == 0 or is_last):
            report = evaluate_state(state, data_a, data_b, "val", taxonomy, evaluators)
            (eval_dir / f"epoch_{state.epoch:03d}.json").write_text(json.dumps(report, indent=2))
            mious = [r["miou"] for r in report.values()]
            if mious and float(np.mean(mious)) > state.best_miou:
                state.best_miou = float(np.mean(mious))
                save_checkpoint(state, ckpt_dir / "best.ckpt")
        if cfg.sample_every and state.epoch % cfg.sample_every == 0:
            save_sample_grid(state, data_a, data_b, sample_dir / f"epoch_{state.epoch:03d}.png")
        if state.epoch % cfg.checkpoint_every == 0 or is_last:
            save_checkpoint(state, ckpt_dir / f"epoch_{state.epoch:03d}.ckpt")

    if state.epoch == cfg.epochs:
        report = evaluate_state(state, data_a, data_b, "test", taxonomy, evaluators)
        (eval_dir / "test.json").write_text(json.dumps(report, indent=2))
    return run_dir


def _seg_val_acc(state: TrainState, data_a: DomainData, data_b: DomainData) -> tuple[float, float]:
    cfg = state.cfg
    accs = []
    for key, data in (("S_A", data_a), ("S_B", data_b)):
        ds = data.val if len(data.val) else data.train
        accs.append(pixel_accuracy(state.nets[key], ds, crop=cfg.crop_size))
    return tuple(accs)
