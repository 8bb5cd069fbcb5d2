"""Flat ``key = value`` run configuration.

One config file carries every data, model, loss and schedule setting.
Lines starting with ``#`` are comments. Unknown keys are rejected. Variant
presets (``cycle``, ``seg``, ``seg_sm`` ...) are overlays applied on top of
the file values.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .losses import LossWeights
from .models import DiscriminatorCfg, GeneratorCfg, SegmenterCfg


class ConfigError(ValueError):
    pass


PRESETS: dict[str, dict] = {
    "semgan": {},
    "cycle": {"lambda_seg": 0.0, "semantic_dropout_p": 0.0, "p_ab": -1.0, "p_ba": -1.0},
    "cycle_only": {"lambda_seg": 0.0, "semantic_dropout_p": 0.0, "p_ab": -1.0, "p_ba": -1.0},
    "seg": {"semantic_dropout_p": 0.0, "p_ab": -1.0, "p_ba": -1.0},
    # "no cycle" drops the identity term as well
    "seg_nocycle": {"lambda_cycle": 0.0, "lambda_idt": 0.0, "semantic_dropout_p": 0.0, "p_ab": -1.0, "p_ba": -1.0},
    "seg_sm": {},
}
# keys that may change between a checkpoint and its resumption
RESUMABLE_KEYS = {"epochs", "checkpoint_every", "eval_every", "sample_every"}


@dataclass(frozen=True)
class TrainConfig:
    # data
    data_root: str = ""
    taxonomy: str = ""
    num_classes: int = 5
    resize_h: int = 0
    resize_w: int = 0
    crop_size: int = 256
    hflip: bool = True
    split_seed: int = 0
    cache_data: bool = True
    use_gt_a: bool = True
    use_gt_b: bool = True
    # models
    gen_res_blocks: int = 9
    gen_base_width: int = 64
    disc_layers: int = 3
    disc_base_width: int = 64
    disc_arch: str = "patch"
    seg_preset: str = "desk"
    seg_base_width: int = 16
    # optimisation
    epochs: int = 50
    batch_size: int = 1
    steps_per_epoch: int = 0
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    seg_optimizer: str = "adam"
    seg_lr: float = 2e-4
    seg_pretrain_steps: int = 0
    # saved segmenters (train-segmenter output) used to initialise S_A / S_B
    seg_init_a: str = ""
    seg_init_b: str = ""
    # losses
    adv_mode: str = "lsgan"
    lambda_adv: float = 1.0
    lambda_cycle: float = 10.0
    lambda_seg: float = 1.0
    lambda_idt: float = 5.0
    seg_reference: str = "auto"
    label_remap: str = ""
    # semantic dropout; negative per-direction values inherit semantic_dropout_p
    semantic_dropout_p: float = 0.2
    p_ab: float = -1.0
    p_ba: float = -1.0
    # segmenter schedule
    warmup_policy: str = "threshold"
    warmup_epochs: int = 0
    warmup_threshold: float = 0.70
    seg_joint: bool = False
    train_segmenters: bool = True
    # bookkeeping
    pool_size: int = 50
    seed: int = 0
    checkpoint_every: int = 1
    eval_every: int = 1
    sample_every: int = 1
    eval_segmenter_a: str = ""
    eval_segmenter_b: str = ""
    preset: str = ""

    def __post_init__(self):
        errors = []
        if self.epochs < 1:
            errors.append("epochs must be >= 1")
        if self.lr <= 0 or self.seg_lr <= 0:
            errors.append("learning rates must be > 0")
        if self.batch_size < 1:
            errors.append("batch_size must be >= 1")
        if self.crop_size % 4:
            errors.append("crop_size must be a multiple of 4")
        if not 0.0 <= self.semantic_dropout_p <= 1.0:
            errors.append("semantic_dropout_p must be in [0, 1]")
        for key in ("p_ab", "p_ba"):
            if getattr(self, key) > 1.0:
                errors.append(f"{key} must be <= 1")
        if self.warmup_policy not in ("threshold", "fixed_epochs"):
            errors.append("warmup_policy must be 'threshold' or 'fixed_epochs'")
        if self.seg_reference not in ("auto", "gt", "segmenter"):
            errors.append("seg_reference must be 'auto', 'gt' or 'segmenter'")
        if self.seg_optimizer not in ("adam", "sgd"):
            errors.append("seg_optimizer must be 'adam' or 'sgd'")
        if self.preset and self.preset not in PRESETS:
            errors.append(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
        if self.pool_size < 0:
            errors.append("pool_size must be >= 0")
        if self.label_remap:
            try:
                perm = self.remap_permutation()
            except ValueError:
                perm = None
            if perm is None or sorted(perm) != list(range(self.num_classes)):
                errors.append(f"label_remap must be a permutation of 0..{self.num_classes - 1}")
        try:
            self.loss_weights(), self.generator_cfg(), self.discriminator_cfg(), self.segmenter_cfg()
        except ValueError as exc:
            errors.append(str(exc))
        if errors:
            raise ConfigError("; ".join(errors))

    # derived views -----------------------------------------------------
    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda_cycle, self.lambda_seg, self.lambda_idt, self.adv_mode, self.lambda_adv)

    def generator_cfg(self) -> GeneratorCfg:
        return GeneratorCfg(self.gen_res_blocks, self.gen_base_width)

    def discriminator_cfg(self) -> DiscriminatorCfg:
        return DiscriminatorCfg(self.disc_layers, self.disc_base_width, self.adv_mode, self.disc_arch,
                                self.gen_res_blocks)

    def segmenter_cfg(self) -> SegmenterCfg:
        return SegmenterCfg(self.num_classes, self.seg_preset, self.seg_base_width)

    def dropout_rates(self) -> tuple[float, float]:
        p_ab = self.semantic_dropout_p if self.p_ab < 0 else self.p_ab
        p_ba = self.semantic_dropout_p if self.p_ba < 0 else self.p_ba
        return p_ab, p_ba

    def remap_permutation(self) -> list[int] | None:
        if not self.label_remap:
            return None
        return [int(v) for v in self.label_remap.replace(" ", "").split(",")]

    @property
    def resize(self) -> tuple[int, int] | None:
        return (self.resize_h, self.resize_w) if self.resize_h and self.resize_w else None

    # construction ------------------------------------------------------
    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def with_preset(self, name: str) -> "TrainConfig":
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}")
        return self.replace(**PRESETS[name], preset=name)

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        types = {f.name: f.type for f in fields(cls)}
        unknown = sorted(set(values) - set(types))
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        parsed = {}
        for key, raw in values.items():
            parsed[key] = _coerce(key, raw, types[key])
        cfg = cls(**parsed)
        return cfg.with_preset(cfg.preset) if cfg.preset else cfg

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "TrainConfig":
        values = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key in values:
                raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
            values[key] = value
        return cls.from_dict(values)

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} not found")
        return cls.from_text(path.read_text(), str(path))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_text(self) -> str:
        lines = ["# semgan run configuration"]
        for key, value in self.to_dict().items():
            if isinstance(value, bool):
                value = str(value).lower()
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"

    def incompatibilities(self, other: "TrainConfig") -> list[str]:
        mine, theirs = self.to_dict(), other.to_dict()
        return [k for k in mine if k not in RESUMABLE_KEYS and mine[k] != theirs[k]]


def _coerce(key: str, raw, typ: str):
    if not isinstance(raw, str):
        return raw
    try:
        if typ == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r} as {typ}") from None
    return raw
