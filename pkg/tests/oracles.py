"""Independent reference implementations used by the tests.

The reference values are computed with numpy and plain Python, so a bug in
the torch code cannot be mirrored by the oracle. ``gradient_cases`` pairs the
package's autograd gradients with numpy central differences.
"""
import math

import numpy as np
import torch
import torch.nn.functional as F

from semgan.core_types import IGNORE
from semgan.losses import adversarial_d_loss, adversarial_g_loss, cycle_loss, identity_loss, seg_consistency_loss


def bce_d(real, fake):
    real, fake = np.asarray(real, float).ravel(), np.asarray(fake, float).ravel()
    return -sum(math.log(r) for r in real) / len(real) - sum(math.log(1 - f) for f in fake) / len(fake)


def softmax_ce(logits, ref):
    """Mean over non-IGNORE pixels of -log softmax, pixel by pixel. logits (K,H,W)."""
    k, h, w = logits.shape
    total, n = 0.0, 0
    for i in range(h):
        for j in range(w):
            if ref[i, j] == IGNORE:
                continue
            z = logits[:, i, j]
            m = max(z)
            lse = m + math.log(sum(math.exp(v - m) for v in z))
            total += lse - z[ref[i, j]]
            n += 1
    return total / n if n else 0.0


def central_difference(f, x, step=1e-3):
    """Gradient of scalar ``f`` at float64 array ``x`` by central differences."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + step
        up = f(x)
        x[idx] = orig - step
        down = f(x)
        x[idx] = orig
        grad[idx] = (up - down) / (2 * step)
    return grad


def relative_error(a, b):
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-8)
    return float(np.linalg.norm(a - b) / scale)


def brute_force_metrics(pred, gt, k):
    """Per-pixel recount of every reported metric, in percent; no confusion matrix."""
    pairs = [(int(g), int(p)) for p, g in zip(np.ravel(pred), np.ravel(gt)) if g != IGNORE]
    n = len(pairs)
    correct = sum(1 for g, p in pairs if g == p)
    accs, ious, fw = [], [], 0.0
    for c in range(k):
        tp = sum(1 for g, p in pairs if g == c and p == c)
        in_gt = sum(1 for g, _ in pairs if g == c)
        in_pred = sum(1 for _, p in pairs if p == c)
        union = in_gt + in_pred - tp
        if in_gt:
            accs.append(tp / in_gt)
        if union:
            ious.append(tp / union)
            fw += in_gt / n * tp / union
    return {
        "overall_acc": 100 * correct / n,
        "avg_class_acc": 100 * sum(accs) / len(accs),
        "miou": 100 * sum(ious) / len(ious),
        "fw_acc": 100 * fw,
    }


def dropout_reference(mask_a, mask_b, p, u, pick):
    """Algorithm walk-through given the uniform draw ``u`` and the index ``pick``
    into the sorted common-label list. Returns (applied, label)."""
    la = set(np.unique(mask_a).tolist()) - {IGNORE}
    lb = set(np.unique(mask_b).tolist()) - {IGNORE}
    common = sorted(la & lb)
    if p <= 0 or u > p or not common:
        return False, None
    return True, common[pick]


def _grad_cases(rng, k):
    """Inputs in smooth regions only.

    No L1 kink lies within one FD step, and scores stay where the log is
    well conditioned at step 1e-3.
    """
    x = rng.uniform(-1, 1, (2, 2, k))
    y = x + rng.choice([-1, 1], x.shape) * rng.uniform(0.05, 0.5, x.shape)
    scores = rng.uniform(0.2, 0.8, (2, 2, k))
    return x, y, scores


def _torch_value_and_grad(fn, x):
    xt = torch.tensor(x, dtype=torch.float64, requires_grad=True)
    fn(xt).backward()
    return xt.grad.numpy()


def gradient_cases(n=100, seed=0):
    """Yield (name, analytic, numeric) for every differentiable loss."""
    rng = np.random.default_rng(seed)
    for _ in range(n):
        k = int(rng.integers(2, 6))
        x, y, s = _grad_cases(rng, k)
        s2 = rng.uniform(0.2, 0.8, s.shape)
        ref = rng.integers(0, k, (2, 2))
        ref_t = torch.from_numpy(ref)
        yt = torch.from_numpy(y)
        losses = {
            "cycle": lambda v: cycle_loss(v, yt),
            "identity": lambda v: identity_loss(yt, v),
            "d_bce": lambda v: adversarial_d_loss(v, torch.from_numpy(s2), "bce"),
            "d_bce_fake": lambda v: adversarial_d_loss(torch.from_numpy(s2), v, "bce"),
            "d_lsgan": lambda v: adversarial_d_loss(v, torch.from_numpy(s2), "lsgan"),
            "g_bce": lambda v: adversarial_g_loss(v, "bce"),
            "g_lsgan": lambda v: adversarial_g_loss(v, "lsgan"),
            "seg": lambda v: seg_consistency_loss(v.permute(2, 0, 1), ref_t),
        }
        inputs = {"cycle": x, "identity": x, "seg": rng.normal(size=(2, 2, k)) * 2}
        for name, fn in losses.items():
            v = inputs.get(name, s)
            analytic = _torch_value_and_grad(fn, v)
            numeric = central_difference(lambda a: fn(torch.from_numpy(a)).item(), v, 1e-3)
            yield name, analytic, numeric


def cycle_gan_generator_grads(G_AB, G_BA, D_A, D_B, x_a, x_b, lambda_cycle=10.0, lambda_idt=5.0):
    """Generator gradients of a textbook cycle-consistent LSGAN objective.

    Written from scratch with torch.nn.functional so it shares no code with
    the trainer. Returns ``{param_name: grad}`` keyed as ``G_AB.<name>``.
    """
    nets = {"G_AB": G_AB, "G_BA": G_BA}
    for net in (G_AB, G_BA, D_A, D_B):
        net.train()
        net.zero_grad(set_to_none=True)
    fake_b, fake_a = G_AB(x_a), G_BA(x_b)
    score_b, score_a = D_B(fake_b), D_A(fake_a)
    adv = F.mse_loss(score_b, torch.ones_like(score_b)) + F.mse_loss(score_a, torch.ones_like(score_a))
    cyc = F.l1_loss(G_BA(fake_b), x_a) + F.l1_loss(G_AB(fake_a), x_b)
    idt = F.l1_loss(G_BA(x_a), x_a) + F.l1_loss(G_AB(x_b), x_b)
    params = [(f"{k}.{n}", p) for k, net in nets.items() for n, p in net.named_parameters()]
    grads = torch.autograd.grad(adv + lambda_cycle * cyc + lambda_idt * idt, [p for _, p in params],
                                allow_unused=True)
    return {name: (torch.zeros_like(p) if g is None else g) for (name, p), g in zip(params, grads)}
