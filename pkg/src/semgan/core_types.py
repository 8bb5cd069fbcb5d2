"""Value types shared across the package: images, label masks, taxonomies.

Images are float32 arrays of shape ``(3, H, W)`` with pixels normalized to
``[-1, 1]``. Masks are integer arrays of shape ``(H, W)`` holding class ids in
``0..K-1`` or the :data:`IGNORE` sentinel.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

IGNORE = 255
RANGE_EPS = 1e-4

CITYSCAPES_19 = (
    "road", "sidewalk", "building", "wall", "fence", "pole", "traffic light",
    "traffic sign", "vegetation", "terrain", "sky", "person", "rider", "car",
    "truck", "bus", "train", "motorcycle", "bicycle",
)


class TaxonomyError(ValueError):
    """Raised when a raw label has no entry in a class taxonomy."""


def check_image(image: np.ndarray, name: str = "image") -> np.ndarray:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"{name} must have shape (3, H, W), got {image.shape}")
    if not np.all(np.isfinite(image)):
        raise ValueError(f"{name} contains non-finite values")
    if image.min() < -1 - RANGE_EPS or image.max() > 1 + RANGE_EPS:
        raise ValueError(f"{name} values must lie in [-1, 1]")
    return image


def check_mask(mask: np.ndarray, num_classes: int, name: str = "mask") -> np.ndarray:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"{name} must have shape (H, W), got {mask.shape}")
    if not np.issubdtype(mask.dtype, np.integer):
        raise ValueError(f"{name} must be an integer array")
    bad = (mask != IGNORE) & ((mask < 0) | (mask >= num_classes))
    if bad.any():
        raise ValueError(f"{name} has labels outside 0..{num_classes - 1}: {np.unique(mask[bad]).tolist()}")
    return mask


def to_unit_range(pixels: np.ndarray) -> np.ndarray:
    """Map 8-bit HWC pixels to a CHW float image in [-1, 1]."""
    pixels = np.asarray(pixels, dtype=np.float32)
    return (pixels.transpose(2, 0, 1) / 127.5 - 1.0).astype(np.float32)


def to_uint8(image) -> np.ndarray:
    """Inverse of :func:`to_unit_range`; accepts numpy arrays or tensors."""
    image = np.asarray(image.detach().cpu() if hasattr(image, "detach") else image, dtype=np.float32)
    pixels = np.clip((image + 1.0) * 127.5, 0, 255)
    return np.rint(pixels).astype(np.uint8).transpose(1, 2, 0)


def apply_mask(image, binary_mask):
    """Zero every pixel where ``binary_mask`` is 0, broadcasting over channels.

    Works on numpy arrays and torch tensors alike. Zero is mid-gray in the
    normalized pixel range.
    """
    if tuple(image.shape[-2:]) != tuple(binary_mask.shape[-2:]):
        raise ValueError(f"mask shape {tuple(binary_mask.shape)} does not match image {tuple(image.shape)}")
    keep = binary_mask != 0
    if hasattr(image, "masked_fill"):
        return image.masked_fill(~keep.unsqueeze(-3), 0.0)
    return np.where(keep[None], image, np.zeros((), dtype=image.dtype))


def one_hot(mask: np.ndarray, num_classes: int) -> np.ndarray:
    """``(K, H, W)`` indicator array; IGNORE pixels are zero in every channel."""
    mask = check_mask(mask, num_classes)
    classes = np.arange(num_classes).reshape(-1, 1, 1)
    return (mask[None] == classes).astype(np.float32)


@dataclass(frozen=True)
class LabeledSample:
    image: np.ndarray
    mask: np.ndarray | None
    domain: str = "A"
    stem: str = ""

    def __post_init__(self):
        if self.domain not in ("A", "B"):
            raise ValueError(f"domain must be 'A' or 'B', got {self.domain!r}")
        if self.mask is not None and tuple(self.mask.shape) != tuple(self.image.shape[1:]):
            raise ValueError(f"image {self.image.shape} and mask {self.mask.shape} disagree on H, W")


@dataclass(frozen=True)
class ClassTaxonomy:
    """Shared class set plus an optional raw-label remap.

    ``remap`` maps raw dataset labels to ``0..K-1`` or :data:`IGNORE`. When it
    is ``None`` raw labels are taken as already mapped.
    """

    names: tuple[str, ...]
    remap: Mapping[int, int] | None = None
    _lut: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.names) < 2:
            raise ValueError("a taxonomy needs at least 2 classes")
        lut = np.full(256, -1, dtype=np.int64)
        if self.remap is None:
            lut[: self.num_classes] = np.arange(self.num_classes)
            lut[IGNORE] = IGNORE
        else:
            for raw, mapped in self.remap.items():
                if not 0 <= raw <= 255:
                    raise ValueError(f"raw label {raw} outside 8-bit range")
                if mapped != IGNORE and not 0 <= mapped < self.num_classes:
                    raise ValueError(f"raw label {raw} maps to invalid class {mapped}")
                lut[raw] = mapped
        object.__setattr__(self, "_lut", lut)

    @property
    def num_classes(self) -> int:
        return len(self.names)

    @classmethod
    def default(cls, num_classes: int) -> "ClassTaxonomy":
        if num_classes == len(CITYSCAPES_19):
            return cls(CITYSCAPES_19)
        return cls(tuple(f"class_{k}" for k in range(num_classes)))

    def map_mask(self, raw: np.ndarray, source: str = "<mask>") -> np.ndarray:
        raw = np.asarray(raw)
        if raw.size and (raw.min() < 0 or raw.max() > 255):
            raise TaxonomyError(f"{source}: raw labels must be 8-bit")
        mapped = self._lut[raw.astype(np.int64)]
        if (mapped < 0).any():
            unknown = sorted(set(raw[mapped < 0].tolist()))
            raise TaxonomyError(f"{source}: raw label(s) {unknown} have no taxonomy entry")
        return mapped

    def to_csv(self, path) -> None:
        rows = self.remap if self.remap is not None else {k: k for k in range(self.num_classes)}
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["raw_label", "mapped_label", "name"])
            for raw in sorted(rows):
                mapped = rows[raw]
                writer.writerow([raw, mapped, self.names[mapped] if mapped != IGNORE else "ignore"])

    @classmethod
    def from_csv(cls, path) -> "ClassTaxonomy":
        remap: dict[int, int] = {}
        names: dict[int, str] = {}
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                raw, mapped = int(row["raw_label"]), int(row["mapped_label"])
                if raw in remap:
                    raise ValueError(f"{path}: duplicate raw label {raw}")
                remap[raw] = mapped
                if mapped == IGNORE:
                    continue
                name = row["name"].strip()
                if names.setdefault(mapped, name) != name:
                    raise ValueError(f"{path}: class {mapped} has conflicting names {names[mapped]!r}, {name!r}")
        if not names:
            raise ValueError(f"{path}: no mapped classes")
        k = max(names) + 1
        missing = [i for i in range(k) if i not in names]
        if missing:
            raise ValueError(f"{path}: mapped labels {missing} never appear")
        return cls(tuple(names[i] for i in range(k)), remap)


def load_taxonomy(path: str | Path | None, num_classes: int) -> ClassTaxonomy:
    if path:
        tax = ClassTaxonomy.from_csv(path)
        if tax.num_classes != num_classes:
            raise ValueError(f"taxonomy {path} has {tax.num_classes} classes, config says {num_classes}")
        return tax
    return ClassTaxonomy.default(num_classes)

