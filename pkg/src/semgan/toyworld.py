"""Procedural two-domain scenes for desk-scale experiments.

Each scene has a sky band on top, a ground strip at the bottom, background
in between and one to four elliptical blobs of two object classes. The two
domains paint the same layouts with different palettes and noise levels.
With ``ambiguity`` on, domain B paints the sky with domain A's blob-1
colour and vice versa, so a translator that only matches colour statistics
can keep those two classes' appearance and still fool a discriminator.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .core_types import ClassTaxonomy
from .data import write_sample

CLASS_NAMES = ("background", "ground", "sky", "blob-1", "blob-2")
BACKGROUND, GROUND, SKY, BLOB1, BLOB2 = range(5)

PALETTE_A = ((120, 120, 130), (60, 140, 60), (90, 140, 230), (220, 60, 50), (230, 210, 60))
PALETTE_B = ((175, 150, 115), (110, 75, 45), (215, 215, 240), (150, 40, 160), (60, 200, 200))
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class ToyWorldCfg:
    image_size: int = 64
    num_classes: int = 5
    palette_a: tuple = PALETTE_A
    palette_b: tuple = PALETTE_B
    ambiguity: bool = True
    counts: tuple = (200, 20, 40)
    seed: int = 0
    noise_a: float = 6.0
    noise_b: float = 12.0
    jitter: float = 10.0
    sky_frac: tuple = (0.20, 0.32)
    ground_frac: tuple = (0.25, 0.40)
    blob_radius_frac: tuple = (0.08, 0.16)
    max_blobs: int = 4

    def __post_init__(self):
        if self.num_classes != len(CLASS_NAMES):
            raise ValueError(f"the toy world has exactly {len(CLASS_NAMES)} classes")
        if self.image_size < 16 or self.image_size % 4:
            raise ValueError("image_size must be a multiple of 4 and at least 16")
        if len(self.counts) != 3 or min(self.counts) < 0:
            raise ValueError("counts must be three non-negative integers (train, val, test)")
        for name in ("palette_a", "palette_b"):
            pal = [tuple(c) for c in getattr(self, name)]
            if len(pal) != self.num_classes or len(set(pal)) != len(pal):
                raise ValueError(f"{name} needs {self.num_classes} distinct colours")

    def palettes(self) -> tuple[np.ndarray, np.ndarray]:
        a = np.asarray(self.palette_a, dtype=np.float64)
        b = np.asarray(self.palette_b, dtype=np.float64)
        if self.ambiguity:
            b = b.copy()
            b[SKY], b[BLOB1] = a[BLOB1], a[SKY]
        return a, b


def draw_layout(size: int, rng: np.random.Generator, cfg: ToyWorldCfg) -> np.ndarray:
    mask = np.full((size, size), BACKGROUND, dtype=np.uint8)
    sky = int(round(size * rng.uniform(*cfg.sky_frac)))
    ground = int(round(size * rng.uniform(*cfg.ground_frac)))
    mask[:sky] = SKY
    mask[size - ground:] = GROUND
    rows, cols = np.mgrid[:size, :size]
    n_blobs = int(rng.integers(1, cfg.max_blobs + 1))
    for i in range(n_blobs):
        label = BLOB1 if i == 0 else int(rng.choice([BLOB1, BLOB2]))
        ry, rx = size * rng.uniform(*cfg.blob_radius_frac, size=2)
        cy = rng.uniform(sky + ry, size - ry)
        cx = rng.uniform(rx, size - rx)
        inside = ((rows - cy) / ry) ** 2 + ((cols - cx) / rx) ** 2 <= 1.0
        mask[inside & (rows >= sky)] = label
    return mask


def paint(mask: np.ndarray, palette: np.ndarray, noise: float, jitter: float,
          rng: np.random.Generator) -> np.ndarray:
    colours = palette + rng.uniform(-jitter, jitter, size=palette.shape)
    image = colours[mask] + rng.normal(0.0, noise, size=mask.shape + (3,))
    return np.clip(np.rint(image), 0, 255).astype(np.uint8)


def generate_toy_domains(cfg: ToyWorldCfg, out_dir, force: bool = False) -> dict:
    """Write both domains under ``out_dir/{A,B}/{train,val,test}``.

    Returns a summary dict; a ``manifest.json`` with the full config and a
    ``taxonomy.csv`` are written alongside.
    """
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()) and not force:
        raise FileExistsError(f"{out} exists and is not empty (use force to overwrite)")
    out.mkdir(parents=True, exist_ok=True)
    pal_a, pal_b = cfg.palettes()
    rng = np.random.default_rng(cfg.seed)
    for domain, palette, noise in (("A", pal_a, cfg.noise_a), ("B", pal_b, cfg.noise_b)):
        for split, count in zip(SPLITS, cfg.counts):
            root = out / domain / split
            root.mkdir(parents=True, exist_ok=True)
            for i in range(count):
                mask = draw_layout(cfg.image_size, rng, cfg)
                image = paint(mask, palette, noise, cfg.jitter, rng)
                write_sample(root, f"{domain.lower()}_{split}_{i:05d}", image, mask)
    ClassTaxonomy(CLASS_NAMES).to_csv(out / "taxonomy.csv")
    manifest = {"generator": "toyworld", "version": 1, "config": asdict(cfg),
                "class_names": list(CLASS_NAMES)}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return {"root": str(out), "per_domain": sum(cfg.counts)}
