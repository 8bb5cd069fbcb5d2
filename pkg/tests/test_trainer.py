import copy
import csv

import numpy as np
import pytest
import torch
import torch.nn.functional as F

import semgan.trainer as trainer
from semgan.config import ConfigError, TrainConfig
from semgan.losses import NonFiniteLossError
from semgan.trainer import (Batch, ImagePool, TrainingError, build_state, latest_checkpoint, load_checkpoint,
                            pool_query, save_checkpoint, segmenter_gradient_probe, train, training_step,
                            warmup_active)

from conftest import TINY


def rand_batch(n=2, size=32, k=5, seed=0):
    g = torch.Generator().manual_seed(seed)
    return Batch(torch.rand(n, 3, size, size, generator=g) * 2 - 1, torch.randint(0, k, (n, size, size), generator=g))


def tiny_state(**over):
    return build_state(TrainConfig(**{**TINY, **over}))


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# image pool -------------------------------------------------------------

def test_pool_capacity_zero_passthrough():
    pool = ImagePool(0, np.random.default_rng(0))
    x = torch.rand(3, 3, 4, 4)
    assert torch.equal(pool_query(pool, x), x) and len(pool) == 0


def test_pool_fills_then_mixes():
    pool = ImagePool(4, np.random.default_rng(0))
    first = torch.rand(4, 3, 2, 2)
    assert torch.equal(pool_query(pool, first), first) and len(pool) == 4
    outs = [pool_query(pool, torch.rand(1, 3, 2, 2)) for _ in range(50)]
    assert len(pool) == 4
    assert any(any(torch.equal(o[0], f) for f in first) for o in outs)


def test_pool_seeded_and_state_roundtrip():
    def run(pool):
        torch.manual_seed(1)
        return [pool.query(torch.rand(2, 3, 2, 2)) for _ in range(10)]

    a, b = run(ImagePool(3, np.random.default_rng(5))), run(ImagePool(3, np.random.default_rng(5)))
    assert all(torch.equal(x, y) for x, y in zip(a, b))
    pool = ImagePool(3, np.random.default_rng(5))
    run(pool)
    clone = ImagePool(3, np.random.default_rng(0))
    clone.load_state_dict(pool.state_dict())
    x = torch.rand(2, 3, 2, 2)
    assert torch.equal(pool.query(x), clone.query(x))


# warm-up policy -----------------------------------------------------------

def test_warmup_fixed_epochs():
    cfg = TrainConfig(warmup_policy="fixed_epochs", warmup_epochs=0)
    state = build_state(TrainConfig(**TINY))
    assert not warmup_active(state, cfg)
    cfg = cfg.replace(warmup_epochs=2)
    assert warmup_active(state, cfg)
    state.epoch = 2
    assert not warmup_active(state, cfg)


def test_warmup_threshold_table():
    state = tiny_state()
    cfg = TrainConfig(warmup_threshold=1.0)
    state.seg_val_acc = (0.99, 0.98)
    assert warmup_active(state, cfg)
    cfg = TrainConfig(warmup_threshold=0.7)
    state.seg_val_acc = (0.72, 0.69)
    assert warmup_active(state, cfg)
    state.seg_val_acc = (0.72, 0.71)
    assert not warmup_active(state, cfg)
    state.seg_val_acc = (0.1, 0.1)  # latched
    assert not warmup_active(state, cfg)


# single step --------------------------------------------------------------

def test_step_returns_full_record():
    state = tiny_state()
    rec = training_step(state, rand_batch(), rand_batch(seed=1))
    row = rec.as_row()
    assert all(np.isfinite(v) for v in row.values())
    assert rec.seg_AB > 0 and rec.s_A > 0 and state.step == 1


def test_liveness_every_generator_parameter_moves():
    state = tiny_state()
    before = {k: copy.deepcopy(state.nets[k].state_dict()) for k in ("G_AB", "G_BA")}
    training_step(state, rand_batch(n=1), rand_batch(n=1, seed=1))
    for k in before:
        for name, p in state.nets[k].named_parameters():
            if p.grad is not None and p.grad.abs().sum() == 0:
                continue
            assert not torch.equal(p.detach(), before[k][name]), f"{k}.{name} did not move"


def test_zero_weights_leave_generators_unchanged():
    state = tiny_state(lambda_adv=0.0, lambda_cycle=0.0, lambda_seg=0.0, lambda_idt=0.0)
    before = {k: copy.deepcopy(state.nets[k].state_dict()) for k in ("G_AB", "G_BA")}
    training_step(state, rand_batch(), rand_batch(seed=1))
    for k, sd in before.items():
        for name, v in state.nets[k].state_dict().items():
            assert torch.equal(v, sd[name]), name


def test_parameter_group_isolation(monkeypatch):
    state = tiny_state()
    groups = {"G": ("G_AB", "G_BA"), "D": ("D_A", "D_B"), "S": ("S_A", "S_B")}

    def snapshot(names):
        return [p.detach().clone() for n in names for p in state.nets[n].parameters()]

    violations = []
    for opt_name, own in (("G", groups["G"]), ("D", groups["D"]), ("S", groups["S"])):
        opt = getattr(state, f"opt_{opt_name}")
        others = [n for g, names in groups.items() if g != opt_name for n in names]
        original = opt.step

        def step(*a, _orig=original, _others=others, _name=opt_name, **kw):
            pre = snapshot(_others)
            out = _orig(*a, **kw)
            if not all(torch.equal(x, y) for x, y in zip(pre, snapshot(_others))):
                violations.append(_name)
            return out

        monkeypatch.setattr(opt, "step", step)
    training_step(state, rand_batch(), rand_batch(seed=1))
    assert violations == []


def test_seg_gradients_reach_generator():
    state = tiny_state(lambda_adv=0.0, lambda_cycle=0.0, lambda_idt=0.0, lambda_seg=1.0)
    training_step(state, rand_batch(), rand_batch(seed=1))
    assert any(p.grad is not None and p.grad.abs().sum() > 0 for p in state.nets["G_AB"].parameters())


def test_nonfinite_step_raises_and_leaves_state():
    state = tiny_state()
    training_step(state, rand_batch(), rand_batch(seed=1))
    snap = {k: copy.deepcopy(v.state_dict()) for k, v in state.nets.items()}
    pool = state.pool_A.state_dict()
    bad = rand_batch()
    bad.images[0, 0, 0, 0] = float("nan")
    with pytest.raises(NonFiniteLossError) as info:
        training_step(state, bad, rand_batch(seed=1))
    assert info.value.term
    for k, sd in snap.items():
        for name, v in state.nets[k].state_dict().items():
            assert torch.equal(v, sd[name]), (k, name)
    assert all(torch.equal(a, b) for a, b in zip(state.pool_A.images, pool["images"]))
    assert state.step == 1


# gradient probe -------------------------------------------------------------

def test_probe_zero_in_warmup_positive_after():
    state = tiny_state(seg_joint=True)
    a, b = rand_batch(), rand_batch(seed=1)
    assert segmenter_gradient_probe(state, a, b, warmup=True) == 0.0
    assert segmenter_gradient_probe(state, a, b, warmup=False) > 0.0
    off = tiny_state(seg_joint=False)
    assert segmenter_gradient_probe(off, a, b, warmup=False) == 0.0


# checkpoints ---------------------------------------------------------------

def test_checkpoint_roundtrip(tmp_path):
    state = tiny_state()
    training_step(state, rand_batch(), rand_batch(seed=1))
    save_checkpoint(state, tmp_path / "c.ckpt")
    back = load_checkpoint(tmp_path / "c.ckpt")
    assert back.step == 1 and back.cfg == state.cfg
    for k in state.nets:
        for (n, v), w in zip(state.nets[k].state_dict().items(), back.nets[k].state_dict().values()):
            assert torch.equal(v, w), (k, n)
    with pytest.raises(ConfigError):
        load_checkpoint(tmp_path / "c.ckpt", state.cfg.replace(lr=1e-3))
    load_checkpoint(tmp_path / "c.ckpt", state.cfg.replace(epochs=7))
    assert not list(tmp_path.glob("*.tmp"))


# full runs ------------------------------------------------------------------

def test_smoke_one_epoch(tiny_cfg, tmp_path):
    cfg = tiny_cfg.replace(batch_size=1)
    run = train(cfg, tmp_path / "run")
    assert [p.name for p in (run / "checkpoints").glob("epoch_*.ckpt")] == ["epoch_001.ckpt"]
    rows = read_rows(run / "losses.csv")
    assert len(rows) >= 4
    assert all(np.isfinite(float(v)) for r in rows for v in r.values())
    assert (run / "eval" / "test.json").exists() and (run / "config.txt").exists()
    assert TrainConfig.from_file(run / "config.txt") == cfg


def test_refuses_nonempty_run_dir_and_empty_resume(tiny_cfg, tmp_path):
    (tmp_path / "x").mkdir()
    (tmp_path / "x" / "junk").write_text("")
    with pytest.raises(ConfigError):
        train(tiny_cfg, tmp_path / "x")
    with pytest.raises(ConfigError):
        train(tiny_cfg, tmp_path / "y", resume=True)


def test_resume_matches_uninterrupted(tiny_cfg, tmp_path):
    cfg = tiny_cfg.replace(epochs=3, eval_every=0)
    full = train(cfg, tmp_path / "full")
    part = train(cfg, tmp_path / "part", stop_after=2)
    assert latest_checkpoint(part).name == "epoch_002.ckpt"
    assert not (part / "eval" / "test.json").exists()
    train(cfg, part, resume=True)
    assert read_rows(full / "losses.csv") == read_rows(part / "losses.csv")


def test_lambda_seg_logging(tiny_cfg, tmp_path):
    on = read_rows(train(tiny_cfg, tmp_path / "on") / "losses.csv")
    assert all(float(r["seg_AB"]) > 0 and float(r["seg_BA"]) > 0 for r in on)
    off = read_rows(train(tiny_cfg.with_preset("cycle_only"), tmp_path / "off") / "losses.csv")
    assert all(r["seg_AB"] == "0.0" and r["seg_BA"] == "0.0" for r in off)


def test_determinism(tiny_cfg, tmp_path):
    cfg = tiny_cfg.replace(epochs=2, eval_every=0, semantic_dropout_p=0.5)
    a = read_rows(train(cfg, tmp_path / "a") / "losses.csv")
    b = read_rows(train(cfg, tmp_path / "b") / "losses.csv")
    assert a == b and len(a) > 0


def test_consecutive_skips_abort(tiny_cfg, tmp_path, monkeypatch):
    def always_nan(*args, **kwargs):
        raise NonFiniteLossError("cycle", float("nan"))

    monkeypatch.setattr(trainer, "training_step", always_nan)
    with pytest.raises(TrainingError):
        train(tiny_cfg.replace(steps_per_epoch=10), tmp_path / "run")


def test_isolated_skips_are_tolerated(tiny_cfg, tmp_path, monkeypatch):
    real = trainer.training_step
    calls = {"n": 0}

    def flaky(*args, **kwargs):
        calls["n"] += 1
        if calls["n"] % 3 == 0:
            raise NonFiniteLossError("cycle", float("inf"))
        return real(*args, **kwargs)

    monkeypatch.setattr(trainer, "training_step", flaky)
    run = train(tiny_cfg.replace(steps_per_epoch=6), tmp_path / "run")
    assert len(read_rows(run / "losses.csv")) == 4
