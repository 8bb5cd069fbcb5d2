"""Walk through the procedural two-domain toy world.

Run from the repository root:  python3 demos/01_toy_world.py
Writes a small dataset and a preview image under demo_out/toy/.
"""
from pathlib import Path

import numpy as np
from PIL import Image

from semgan.core_types import ClassTaxonomy
from semgan.data import load_dataset
from semgan.toyworld import CLASS_NAMES, ToyWorldCfg, generate_toy_domains

out = Path("demo_out/toy")
cfg = ToyWorldCfg(image_size=64, counts=(8, 2, 2), seed=0, ambiguity=True)
generate_toy_domains(cfg, out, force=True)

# Both domains paint the same kind of layout with their own palette.
# With ambiguity on, B's sky wears A's blob-1 colour and B's blob-1 wears A's sky colour.
pal_a, pal_b = cfg.palettes()
for k, name in enumerate(CLASS_NAMES):
    print(f"{name:>10}: A {tuple(int(v) for v in pal_a[k])}  B {tuple(int(v) for v in pal_b[k])}")

taxonomy = ClassTaxonomy.from_csv(out / "taxonomy.csv")
ds_a = load_dataset(out / "A" / "train", taxonomy, "A")
ds_b = load_dataset(out / "B" / "train", taxonomy, "B")
print(len(ds_a), "training samples per domain; image", ds_a[0].image.shape, "mask", ds_a[0].mask.shape)

# class frequencies over the A training split
masks = np.stack([s.mask for s in ds_a])
freq = np.bincount(masks.ravel(), minlength=len(CLASS_NAMES)) / masks.size
print("class frequencies (A):", dict(zip(CLASS_NAMES, np.round(freq, 3))))

# preview: 4 images of A on top, 4 of B below
def to_u8(image):
    return ((image.transpose(1, 2, 0) + 1) * 127.5).round().astype(np.uint8)

rows = [np.concatenate([to_u8(ds[i].image) for i in range(4)], axis=1) for ds in (ds_a, ds_b)]
Image.fromarray(np.concatenate(rows, axis=0)).save(out / "preview.png")
print("preview written to", out / "preview.png")
