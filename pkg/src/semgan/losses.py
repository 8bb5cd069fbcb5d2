"""Scalar training objectives.

All functions take torch tensors and return 0-d tensors so they can be
back-propagated. Adversarial losses come in two flavours: ``bce`` evaluates
the binary cross-entropy game on sigmoid scores, ``lsgan`` the least-squares
variant on raw scores.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import torch
import torch.nn.functional as F

from .core_types import IGNORE

BCE_CLAMP = 1e-7
ADV_MODES = ("bce", "lsgan")


class NonFiniteLossError(FloatingPointError):
    def __init__(self, term: str, value: float):
        super().__init__(f"loss term {term!r} is not finite ({value})")
        self.term = term


@dataclass(frozen=True)
class LossWeights:
    lambda_cycle: float = 10.0
    lambda_seg: float = 1.0
    lambda_idt: float = 5.0
    adv_mode: str = "lsgan"
    # 0 detaches the adversarial terms from the generator objective
    lambda_adv: float = 1.0

    def __post_init__(self):
        if self.adv_mode not in ADV_MODES:
            raise ValueError(f"adv_mode must be one of {ADV_MODES}, got {self.adv_mode!r}")
        for name in ("lambda_cycle", "lambda_seg", "lambda_idt", "lambda_adv"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass
class LossRecord:
    g_adv_AB: float = 0.0
    g_adv_BA: float = 0.0
    d_A: float = 0.0
    d_B: float = 0.0
    cycle: float = 0.0
    identity: float = 0.0
    seg_AB: float = 0.0
    seg_BA: float = 0.0
    total_G: float = 0.0
    s_A: float = 0.0
    s_B: float = 0.0

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def as_row(self) -> dict[str, float]:
        return asdict(self)


def _check_mode(mode: str) -> None:
    if mode not in ADV_MODES:
        raise ValueError(f"unknown adversarial mode {mode!r}")


def _log_clamped(p: torch.Tensor) -> torch.Tensor:
    return torch.log(p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP))


def adversarial_d_loss(real_scores, fake_scores, mode: str = "lsgan") -> torch.Tensor:
    """Discriminator loss: real scores pushed to 1, fake scores to 0."""
    _check_mode(mode)
    real_scores = torch.as_tensor(real_scores)
    fake_scores = torch.as_tensor(fake_scores)
    if mode == "bce":
        return -_log_clamped(real_scores).mean() - _log_clamped(1.0 - fake_scores).mean()
    return ((real_scores - 1.0) ** 2).mean() + (fake_scores**2).mean()


def adversarial_g_loss(fake_scores, mode: str = "lsgan") -> torch.Tensor:
    """Non-saturating generator loss on scores of freshly generated images."""
    _check_mode(mode)
    fake_scores = torch.as_tensor(fake_scores)
    if mode == "bce":
        return -_log_clamped(fake_scores).mean()
    return ((fake_scores - 1.0) ** 2).mean()


def _mean_abs(x, y, what: str) -> torch.Tensor:
    x, y = torch.as_tensor(x), torch.as_tensor(y)
    if x.shape != y.shape:
        raise ValueError(f"{what}: shape mismatch {tuple(x.shape)} vs {tuple(y.shape)}")
    return (x - y).abs().mean()


def cycle_loss(x, x_roundtrip) -> torch.Tensor:
    """L1 reconstruction error of a round-trip translation."""
    return _mean_abs(x, x_roundtrip, "cycle_loss")


def identity_loss(x, same_domain_output) -> torch.Tensor:
    return _mean_abs(x, same_domain_output, "identity_loss")


def check_label_remap(label_remap, num_classes: int) -> torch.Tensor:
    remap = torch.as_tensor(label_remap, dtype=torch.long).flatten()
    if remap.numel() != num_classes or sorted(remap.tolist()) != list(range(num_classes)):
        raise ValueError(f"label_remap must be a permutation of 0..{num_classes - 1}, got {remap.tolist()}")
    return remap


def remap_labels(ref: torch.Tensor, label_remap) -> torch.Tensor:
    """Apply a class permutation to a mask, leaving IGNORE pixels alone."""
    remap = check_label_remap(label_remap, len(label_remap))
    valid = ref != IGNORE
    out = ref.clone()
    out[valid] = remap[ref[valid]]
    return out


def seg_consistency_loss(pred, ref, label_remap=None, num_classes: int | None = None,
                         return_count: bool = False):
    """Pixel-mean softmax cross-entropy of ``pred`` logits against ``ref`` labels.

    ``pred`` is ``(K, H, W)`` or ``(N, K, H, W)``; ``ref`` the matching
    ``(H, W)`` / ``(N, H, W)`` integer mask. IGNORE pixels are excluded from
    the mean. If every pixel is IGNORE the loss is 0; pass
    ``return_count=True`` to also get the number of scored pixels.
    """
    pred = torch.as_tensor(pred)
    ref = torch.as_tensor(ref).long()
    if pred.dim() == 3:
        pred, ref = pred.unsqueeze(0), ref.unsqueeze(0)
    k = pred.shape[1]
    if num_classes is not None and k != num_classes:
        raise ValueError(f"prediction has {k} classes, taxonomy has {num_classes}")
    if ref.shape != pred.shape[:1] + pred.shape[2:]:
        raise ValueError(f"reference mask {tuple(ref.shape)} does not match logits {tuple(pred.shape)}")
    if label_remap is not None:
        ref = remap_labels(ref, check_label_remap(label_remap, k))
    valid = ref != IGNORE
    if ((ref[valid] < 0) | (ref[valid] >= k)).any():
        raise ValueError(f"reference labels must be in 0..{k - 1} or IGNORE")
    count = int(valid.sum())
    if count == 0:
        loss = pred.sum() * 0.0
    else:
        loss = F.cross_entropy(pred, ref, ignore_index=IGNORE, reduction="mean")
    return (loss, count) if return_count else loss


def total_generator_loss(terms: LossRecord | dict, weights: LossWeights) -> float | torch.Tensor:
    """Weighted generator objective; discriminator terms are not included."""
    get = terms.get if isinstance(terms, dict) else lambda name: getattr(terms, name)
    for name in ("g_adv_AB", "g_adv_BA", "cycle", "identity", "seg_AB", "seg_BA"):
        value = get(name)
        v = float(value.detach()) if isinstance(value, torch.Tensor) else float(value)
        if not math.isfinite(v):
            raise NonFiniteLossError(name, v)
    return (
        weights.lambda_adv * (get("g_adv_AB") + get("g_adv_BA"))
        + weights.lambda_cycle * get("cycle")
        + weights.lambda_seg * (get("seg_AB") + get("seg_BA"))
        + weights.lambda_idt * get("identity")
    )
