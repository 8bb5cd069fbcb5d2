"""Stochastic single-class masking of an unpaired sample pair."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core_types import IGNORE, LabeledSample, apply_mask


@dataclass(frozen=True)
class DropoutConfig:
    p: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"dropout probability must be in [0, 1], got {self.p}")


def get_labels(mask: np.ndarray) -> list[int]:
    """Sorted distinct class ids in ``mask``, IGNORE excluded."""
    return [int(v) for v in np.unique(mask) if v != IGNORE]


def get_mask(label: int, mask: np.ndarray) -> np.ndarray:
    hit = np.asarray(mask) == label
    if not hit.any():
        raise ValueError(f"label {label} does not occur in the mask")
    return hit.astype(np.uint8)


def _keep_class(sample: LabeledSample, label: int) -> LabeledSample:
    keep = get_mask(label, sample.mask)
    image = apply_mask(sample.image, keep)
    mask = np.where(keep == 1, sample.mask, IGNORE).astype(sample.mask.dtype)
    return LabeledSample(image, mask, sample.domain, sample.stem)


def apply_semantic_dropout(a: LabeledSample, b: LabeledSample, cfg: DropoutConfig,
                           rng: np.random.Generator, p_b: float | None = None):
    """Keep only one shared class in both samples with probability ``cfg.p``.

    One uniform draw ``u`` decides for the pair. When the masks share no
    label, or ``u > p``, the inputs come back untouched. Otherwise a label is
    drawn uniformly from the shared set and every other pixel is zeroed in
    the images and set to IGNORE in the masks.

    ``p_b`` optionally gives sample ``b`` its own threshold against the same
    draw, which lets the two translation directions use different rates.

    Returns ``(a', b', applied, chosen_label)``.
    """
    p_a = cfg.p
    p_b = p_a if p_b is None else p_b
    if not 0.0 <= p_b <= 1.0:
        raise ValueError(f"dropout probability must be in [0, 1], got {p_b}")
    u = rng.uniform()
    if a.mask is None or b.mask is None:
        return a, b, False, None
    common = sorted(set(get_labels(a.mask)) & set(get_labels(b.mask)))
    drop_a, drop_b = u <= p_a and p_a > 0, u <= p_b and p_b > 0
    if not common or not (drop_a or drop_b):
        return a, b, False, None
    label = common[int(rng.integers(len(common)))]
    if drop_a:
        a = _keep_class(a, label)
    if drop_b:
        b = _keep_class(b, label)
    return a, b, True, label
