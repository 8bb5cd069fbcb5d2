"""Segmentation-based scoring of translated images.

A frozen segmenter trained on the target domain labels translated source
images; its predictions are compared against the *source* ground truth.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .core_types import IGNORE, ClassTaxonomy
from .data import augment, sample_unpaired_batch, stack_images, stack_masks
from .models import SegmenterCfg, build_segmenter


def new_confusion(num_classes: int) -> np.ndarray:
    return np.zeros((num_classes, num_classes), dtype=np.int64)


def accumulate(cm: np.ndarray, pred, gt) -> np.ndarray:
    """Add one prediction/ground-truth pair; rows are ground truth."""
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    k = cm.shape[0]
    valid = gt != IGNORE
    g, p = gt[valid].astype(np.int64), pred[valid].astype(np.int64)
    if g.size and (g.min() < 0 or g.max() >= k or p.min() < 0 or p.max() >= k):
        raise ValueError(f"labels must lie in 0..{k - 1}")
    cm += np.bincount(g * k + p, minlength=k * k).reshape(k, k)
    return cm


@dataclass
class MetricsReport:
    """Percentages in [0, 100]. Excluded classes carry NaN IoU / accuracy."""

    confusion: np.ndarray
    overall_acc: float
    avg_class_acc: float
    miou: float
    fw_acc: float
    per_class_acc: list[float]
    per_class_iou: list[float]
    class_names: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        names = self.class_names or [f"class_{k}" for k in range(len(self.per_class_iou))]
        return {
            "overall_acc": self.overall_acc,
            "avg_class_acc": self.avg_class_acc,
            "miou": self.miou,
            "fw_acc": self.fw_acc,
            "per_class_iou": [
                {"class": k, "name": names[k], "iou": None if math.isnan(v) else v}
                for k, v in enumerate(self.per_class_iou)
            ],
            "confusion": self.confusion.tolist(),
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            Path(path).write_text(text)
        return text

    def iou_table(self) -> str:
        names = self.class_names or [f"class_{k}" for k in range(len(self.per_class_iou))]
        width = max(len(n) for n in names)
        lines = [f"{'class':<{width}}  IoU(%)"]
        for name, v in zip(names, self.per_class_iou):
            lines.append(f"{name:<{width}}  {'n/a' if math.isnan(v) else f'{v:6.2f}'}")
        return "\n".join(lines)


def metrics_from_confusion(cm: np.ndarray, class_names: Sequence[str] = ()) -> MetricsReport:
    cm = np.asarray(cm, dtype=np.int64)
    total = cm.sum()
    if total <= 0:
        raise ValueError("confusion matrix is empty")
    diag = np.diag(cm).astype(np.float64)
    rows, cols = cm.sum(axis=1).astype(np.float64), cm.sum(axis=0).astype(np.float64)
    union = rows + cols - diag
    with np.errstate(invalid="ignore", divide="ignore"):
        acc = np.where(rows > 0, diag / rows, np.nan)
        iou = np.where(union > 0, diag / union, np.nan)
    present = ~np.isnan(iou)
    fw = float(np.sum(rows[present] / total * iou[present]))
    return MetricsReport(
        confusion=cm,
        overall_acc=100.0 * float(diag.sum() / total),
        avg_class_acc=100.0 * float(np.nanmean(acc)),
        miou=100.0 * float(np.nanmean(iou)),
        fw_acc=100.0 * fw,
        per_class_acc=(100.0 * acc).tolist(),
        per_class_iou=(100.0 * iou).tolist(),
        class_names=list(class_names),
    )


class GroundTruthEcho:
    """Diagnostic evaluator that predicts the ground truth it is handed.

    Pixels marked IGNORE are predicted as class 0; they are never scored.
    """

    uses_ground_truth = True

    def __init__(self, num_classes: int):
        self.num_classes = num_classes

    def __call__(self, images: torch.Tensor, masks: torch.Tensor) -> torch.Tensor:
        labels = torch.where(masks == IGNORE, torch.zeros_like(masks), masks)
        return F.one_hot(labels, self.num_classes).permute(0, 3, 1, 2).float()


def _num_classes_of(segmenter) -> int | None:
    cfg = getattr(segmenter, "cfg", None)
    if cfg is not None and hasattr(cfg, "num_classes"):
        return cfg.num_classes
    return getattr(segmenter, "num_classes", None)


@torch.no_grad()
def evaluate_translation(G, eval_segmenter, dataset, taxonomy: ClassTaxonomy, crop: int | None = None,
                         batch_size: int = 8) -> MetricsReport:
    """Translate every sample with ``G`` and score ``eval_segmenter`` against the source masks.

    ``G`` may be any callable on ``(N, 3, H, W)`` tensors (``None`` means
    identity). Samples are center-cropped to ``crop`` when given.
    """
    k = taxonomy.num_classes
    seg_k = _num_classes_of(eval_segmenter)
    if seg_k is not None and seg_k != k:
        raise ValueError(f"evaluation segmenter predicts {seg_k} classes, taxonomy has {k}")
    modules = [m for m in (G, eval_segmenter) if isinstance(m, torch.nn.Module)]
    modes = [m.training for m in modules]
    for m in modules:
        m.eval()
    cm = new_confusion(k)
    try:
        samples = list(dataset)
        for start in range(0, len(samples), batch_size):
            chunk = samples[start:start + batch_size]
            if crop is not None:
                chunk = [augment(s, "eval", crop) for s in chunk]
            masks = stack_masks(chunk)
            if masks is None:
                raise ValueError("evaluation needs ground-truth masks on the source dataset")
            x = torch.from_numpy(stack_images(chunk))
            y = x if G is None else G(x)
            gt = torch.from_numpy(masks)
            if getattr(eval_segmenter, "uses_ground_truth", False):
                logits = eval_segmenter(y, gt)
            else:
                logits = eval_segmenter(y)
            if logits.shape[1] != k:
                raise ValueError(f"evaluation segmenter returned {logits.shape[1]} classes, expected {k}")
            pred = logits.argmax(dim=1).numpy()
            for p, g in zip(pred, masks):
                accumulate(cm, p, g)
    finally:
        for m, mode in zip(modules, modes):
            m.train(mode)
    return metrics_from_confusion(cm, taxonomy.names)


@torch.no_grad()
def pixel_accuracy(segmenter, dataset, crop: int | None = None, batch_size: int = 8) -> float:
    """Fraction of annotated pixels a segmenter labels correctly (0..1)."""
    was_training = segmenter.training
    segmenter.eval()
    correct = total = 0
    try:
        samples = list(dataset)
        for start in range(0, len(samples), batch_size):
            chunk = samples[start:start + batch_size]
            if crop is not None:
                chunk = [augment(s, "eval", crop) for s in chunk]
            masks = torch.from_numpy(stack_masks(chunk))
            pred = segmenter(torch.from_numpy(stack_images(chunk))).argmax(dim=1)
            valid = masks != IGNORE
            correct += int((pred[valid] == masks[valid]).sum())
            total += int(valid.sum())
    finally:
        segmenter.train(was_training)
    return correct / total if total else 0.0


def fit_segmenter(dataset, cfg: SegmenterCfg, steps: int, batch_size: int = 8, lr: float = 1e-3,
                  crop: int | None = None, seed: int = 0, hflip: bool = True, net=None):
    """Supervised cross-entropy training on ``(image, mask)`` pairs with Adam."""
    if net is None:
        torch.manual_seed(seed)
        net = build_segmenter(cfg)
    rng = np.random.default_rng(seed)
    opt = torch.optim.Adam(net.parameters(), lr=lr)
    net.train()
    for _ in range(steps):
        batch, _unused = sample_unpaired_batch(dataset, dataset, batch_size, rng)
        if crop is not None:
            batch = [augment(s, "train", crop, rng, hflip) for s in batch]
        x = torch.from_numpy(stack_images(batch))
        y = torch.from_numpy(stack_masks(batch))
        loss = F.cross_entropy(net(x), y, ignore_index=IGNORE)
        opt.zero_grad()
        loss.backward()
        opt.step()
    net.eval()
    return net


SEGMENTER_FORMAT = "semgan-segmenter"


def save_segmenter(net, path, class_names: Sequence[str] = ()) -> None:
    cfg = net.cfg
    torch.save({"format": SEGMENTER_FORMAT, "version": 1,
                "cfg": {"num_classes": cfg.num_classes, "preset": cfg.preset, "base_width": cfg.base_width},
                "class_names": list(class_names), "state_dict": net.state_dict()}, path)


def load_segmenter(path):
    blob = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(blob, dict) or blob.get("format") != SEGMENTER_FORMAT:
        raise ValueError(f"{path} is not a saved segmenter")
    net = build_segmenter(SegmenterCfg(**blob["cfg"]))
    net.load_state_dict(blob["state_dict"])
    net.eval()
    return net
