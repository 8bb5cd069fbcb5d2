"""Image/mask datasets on disk, splits, augmentation and unpaired sampling.

On-disk layout of one dataset::

    <root>/images/<stem>.png   8-bit RGB
    <root>/masks/<stem>.png    8-bit single channel, raw labels (255 = IGNORE)
"""
from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image as PILImage

from .core_types import ClassTaxonomy, LabeledSample, to_unit_range


class Dataset:
    """Lazily decoded image/mask pairs indexed in lexicographic stem order."""

    def __init__(self, root, taxonomy: ClassTaxonomy, domain: str = "A",
                 resize: tuple[int, int] | None = None, stems: Sequence[str] | None = None):
        self.root = Path(root)
        self.taxonomy = taxonomy
        self.domain = domain
        self.resize = resize
        self.stems = list(stems) if stems is not None else []

    def __len__(self):
        return len(self.stems)

    def __getitem__(self, idx: int) -> LabeledSample:
        stem = self.stems[idx]
        img_path = self.root / "images" / f"{stem}.png"
        mask_path = self.root / "masks" / f"{stem}.png"
        with PILImage.open(img_path) as im:
            im = im.convert("RGB")
            if self.resize is not None:
                im = im.resize(self.resize[::-1], PILImage.BILINEAR)
            pixels = np.asarray(im)
        with PILImage.open(mask_path) as m:
            if m.mode not in ("L", "P"):
                raise ValueError(f"{mask_path}: mask must be single-channel, got mode {m.mode}")
            if self.resize is not None:
                m = m.resize(self.resize[::-1], PILImage.NEAREST)
            raw = np.asarray(m)
        mask = self.taxonomy.map_mask(raw, source=str(mask_path))
        if raw.shape != pixels.shape[:2]:
            raise ValueError(f"{stem}: image {pixels.shape[:2]} and mask {raw.shape} sizes differ")
        return LabeledSample(to_unit_range(pixels), mask, self.domain, stem)

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def subset(self, indices: Sequence[int]) -> "Dataset":
        return Dataset(self.root, self.taxonomy, self.domain, self.resize, [self.stems[i] for i in indices])


def load_dataset(root, taxonomy: ClassTaxonomy, domain: str = "A",
                 resize: tuple[int, int] | None = None) -> Dataset:
    """Index ``root/images`` and ``root/masks``; every image needs a mask.

    ``resize`` is ``(height, width)``; images resample bilinearly, masks with
    nearest neighbour so no label is invented.
    """
    root = Path(root)
    img_dir, mask_dir = root / "images", root / "masks"
    if not root.exists():
        raise FileNotFoundError(f"dataset root {root} does not exist")
    images = sorted(p.stem for p in img_dir.glob("*.png")) if img_dir.is_dir() else []
    masks = {p.stem for p in mask_dir.glob("*.png")} if mask_dir.is_dir() else set()
    missing = [s for s in images if s not in masks]
    if missing:
        raise FileNotFoundError(f"{root}: no mask for image stem(s) {missing}")
    return Dataset(root, taxonomy, domain, resize, images)


def split_dataset(ds: Dataset, ratios=(0.85, 0.05, 0.10), seed: int = 0):
    """Seeded disjoint train/val/test partition.

    Validation and test sizes are floored; the remainder goes to train.
    """
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ValueError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    n = len(ds)
    if n < 3:
        raise ValueError(f"cannot split a dataset of {n} samples")
    n_val = math.floor(n * ratios[1] + 1e-9)
    n_test = math.floor(n * ratios[2] + 1e-9)
    order = np.random.default_rng(seed).permutation(n)
    n_train = n - n_val - n_test
    train, val, test = order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:]
    return ds.subset(sorted(train)), ds.subset(sorted(val)), ds.subset(sorted(test))


def crop_window(height: int, width: int, crop: int, mode: str, rng: np.random.Generator | None):
    if height < crop or width < crop:
        raise ValueError(f"image {height}x{width} smaller than crop {crop}")
    if mode == "eval":
        return (height - crop) // 2, (width - crop) // 2
    return int(rng.integers(height - crop + 1)), int(rng.integers(width - crop + 1))


def augment(sample: LabeledSample, mode: str = "train", crop: int = 256,
            rng: np.random.Generator | None = None, hflip: bool = True) -> LabeledSample:
    """Crop image and mask jointly; train mode adds a random horizontal flip."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if mode == "train" and rng is None:
        raise ValueError("train-mode augmentation needs an rng")
    _, h, w = sample.image.shape
    r0, c0 = crop_window(h, w, crop, mode, rng)
    image = sample.image[:, r0:r0 + crop, c0:c0 + crop]
    mask = None if sample.mask is None else sample.mask[r0:r0 + crop, c0:c0 + crop]
    if mode == "train" and hflip and rng.uniform() < 0.5:
        image = image[:, :, ::-1]
        mask = None if mask is None else mask[:, ::-1]
    image = np.ascontiguousarray(image)
    mask = None if mask is None else np.ascontiguousarray(mask)
    return LabeledSample(image, mask, sample.domain, sample.stem)


def sample_unpaired_batch(ds_a, ds_b, batch_size: int, rng: np.random.Generator):
    """Independent uniform draws (with replacement) from each dataset."""
    if len(ds_a) == 0 or len(ds_b) == 0:
        raise ValueError("cannot sample from an empty dataset")
    idx_a = rng.integers(len(ds_a), size=batch_size)
    idx_b = rng.integers(len(ds_b), size=batch_size)
    return [ds_a[int(i)] for i in idx_a], [ds_b[int(i)] for i in idx_b]


def stack_images(samples: Sequence[LabeledSample]) -> np.ndarray:
    return np.stack([s.image for s in samples]).astype(np.float32)


def stack_masks(samples: Sequence[LabeledSample]) -> np.ndarray | None:
    if any(s.mask is None for s in samples):
        return None
    return np.stack([s.mask for s in samples]).astype(np.int64)


def write_sample(root, stem: str, image_u8: np.ndarray, raw_mask: np.ndarray | None) -> None:
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(image_u8, mode="RGB").save(root / "images" / f"{stem}.png")
    if raw_mask is not None:
        (root / "masks").mkdir(parents=True, exist_ok=True)
        PILImage.fromarray(raw_mask.astype(np.uint8), mode="L").save(root / "masks" / f"{stem}.png")


class InMemoryDataset:
    """A list of samples with the ``Dataset`` indexing protocol."""

    def __init__(self, samples: Sequence[LabeledSample]):
        self.samples = list(samples)

    def __len__(self):
        return len(self.samples)

    def __getitem__(self, idx):
        return self.samples[idx]

    def __iter__(self):
        return iter(self.samples)

    def subset(self, indices):
        return InMemoryDataset([self.samples[i] for i in indices])


def cache(ds) -> InMemoryDataset:
    """Decode every sample once; desk-scale datasets fit comfortably in RAM."""
    return InMemoryDataset(list(ds))

