"""The training objectives and semantic dropout on hand-made inputs.

Run from the repository root:  python3 demos/02_losses_and_dropout.py
"""
import math

import numpy as np
import torch

from semgan.core_types import IGNORE, LabeledSample
from semgan.losses import (LossWeights, adversarial_d_loss, adversarial_g_loss, cycle_loss,
                           seg_consistency_loss, total_generator_loss)
from semgan.semantic_dropout import DropoutConfig, apply_semantic_dropout

# Adversarial terms. A discriminator that outputs 0.5 everywhere is maximally unsure.
half = torch.full((4,), 0.5)
print("bce D loss at 0.5:", adversarial_d_loss(half, half, "bce").item(), "= 2 ln 2 =", 2 * math.log(2))
print("lsgan G loss for scores [0, 0.5]:", adversarial_g_loss(torch.tensor([0.0, 0.5]), "lsgan").item())

# Cycle loss is the mean absolute round-trip error.
print("cycle loss:", cycle_loss(torch.tensor([0.5, -0.5]), torch.tensor([0.0, 0.0])).item())

# Segmentation consistency: cross-entropy against the source labels, IGNORE pixels skipped.
logits = torch.tensor([[[2.0, 0.0]], [[0.0, 0.0]]])
ref = torch.tensor([[0, IGNORE]])
print("seg loss with one scored pixel:", seg_consistency_loss(logits, ref).item())

# A label permutation turns the same loss into a class-swapping objective.
print("seg loss with classes switched:", seg_consistency_loss(logits, ref, label_remap=[1, 0]).item())

terms = dict(g_adv_AB=1.0, g_adv_BA=1.0, cycle=1.0, identity=1.0, seg_AB=1.0, seg_BA=1.0)
print("total generator loss, all terms 1:", total_generator_loss(terms, LossWeights()))

# Semantic dropout keeps a single class shared by both samples.
rng = np.random.default_rng(0)
mask_a = np.array([[1, 1, 3, 3], [1, 5, 5, 3], [1, 5, 5, 3], [1, 1, 3, 3]])
mask_b = np.array([[7, 3, 3, 7], [7, 3, 3, 5], [5, 5, 7, 7], [5, 5, 7, 7]])
a = LabeledSample(rng.uniform(-1, 1, (3, 4, 4)).astype(np.float32), mask_a, "A")
b = LabeledSample(rng.uniform(-1, 1, (3, 4, 4)).astype(np.float32), mask_b, "B")
a2, b2, applied, label = apply_semantic_dropout(a, b, DropoutConfig(p=1.0), rng)
print("applied:", applied, "kept class:", label)
print("A mask after dropout:\n", a2.mask)
print("B image channel 0 after dropout (0 = masked):\n", np.round(b2.image[0], 2))

# over many pairs the pair is masked with probability p
hits = sum(apply_semantic_dropout(a, b, DropoutConfig(p=0.2), rng)[2] for _ in range(5000))
print("empirical rate at p=0.2:", hits / 5000)
