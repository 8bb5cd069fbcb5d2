"""Generator, discriminator and segmenter networks.

The generator is the ResNet encoder/residual/decoder stack used by
Cycle-GAN, the default discriminator a PatchGAN. Segmenters come in two
presets: ``full`` is FCN-8s on a VGG-16 trunk, ``desk`` a small strided
encoder with a skip decoder that trains on a CPU in minutes.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass(frozen=True)
class GeneratorCfg:
    n_res_blocks: int = 9
    base_width: int = 64
    in_channels: int = 3
    out_channels: int = 3

    def __post_init__(self):
        if self.n_res_blocks < 1:
            raise ValueError("n_res_blocks must be >= 1")
        if self.base_width < 4:
            raise ValueError("base_width must be >= 4")


@dataclass(frozen=True)
class DiscriminatorCfg:
    n_layers: int = 3
    base_width: int = 64
    adv_mode: str = "lsgan"
    arch: str = "patch"  # or "resnet"
    n_res_blocks: int = 9

    def __post_init__(self):
        if self.n_layers < 1:
            raise ValueError("n_layers must be >= 1")
        if self.arch not in ("patch", "resnet"):
            raise ValueError(f"unknown discriminator arch {self.arch!r}")
        if self.adv_mode not in ("bce", "lsgan"):
            raise ValueError(f"unknown adversarial mode {self.adv_mode!r}")


@dataclass(frozen=True)
class SegmenterCfg:
    num_classes: int
    preset: str = "desk"
    base_width: int = 16

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.preset not in ("desk", "full"):
            raise ValueError(f"unknown segmenter preset {self.preset!r}")


def init_weights(net: nn.Module, std: float = 0.02) -> nn.Module:
    for m in net.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            nn.init.normal_(m.weight, 0.0, std)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.normal_(m.weight, 1.0, std)
            nn.init.zeros_(m.bias)
    return net


def _check_spatial(x: torch.Tensor, multiple: int, who: str) -> None:
    h, w = x.shape[-2:]
    if h % multiple or w % multiple:
        raise ValueError(f"{who}: height and width must be multiples of {multiple}, got {h}x{w}")


class ResidualBlock(nn.Module):
    def __init__(self, width: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.ReflectionPad2d(1), nn.Conv2d(width, width, 3), nn.InstanceNorm2d(width), nn.ReLU(True),
            nn.ReflectionPad2d(1), nn.Conv2d(width, width, 3), nn.InstanceNorm2d(width),
        )

    def forward(self, x):
        return x + self.body(x)


class ResnetGenerator(nn.Module):
    def __init__(self, cfg: GeneratorCfg):
        super().__init__()
        self.cfg = cfg
        w = cfg.base_width
        layers = [nn.ReflectionPad2d(3), nn.Conv2d(cfg.in_channels, w, 7), nn.InstanceNorm2d(w), nn.ReLU(True)]
        for mult in (1, 2):
            layers += [nn.Conv2d(w * mult, w * mult * 2, 3, stride=2, padding=1),
                       nn.InstanceNorm2d(w * mult * 2), nn.ReLU(True)]
        layers += [ResidualBlock(w * 4) for _ in range(cfg.n_res_blocks)]
        for mult in (4, 2):
            layers += [nn.ConvTranspose2d(w * mult, w * mult // 2, 3, stride=2, padding=1, output_padding=1),
                       nn.InstanceNorm2d(w * mult // 2), nn.ReLU(True)]
        layers += [nn.ReflectionPad2d(3), nn.Conv2d(w, cfg.out_channels, 7), nn.Tanh()]
        self.model = nn.Sequential(*layers)

    def forward(self, x):
        _check_spatial(x, 4, "generator")
        return self.model(x)


class PatchDiscriminator(nn.Module):
    def __init__(self, cfg: DiscriminatorCfg):
        super().__init__()
        self.cfg = cfg
        w = cfg.base_width
        layers = [nn.Conv2d(3, w, 4, stride=2, padding=1), nn.LeakyReLU(0.2, True)]
        mult = 1
        for n in range(1, cfg.n_layers + 1):
            prev, mult = mult, min(2**n, 8)
            stride = 2 if n < cfg.n_layers else 1
            layers += [nn.Conv2d(w * prev, w * mult, 4, stride=stride, padding=1),
                       nn.InstanceNorm2d(w * mult), nn.LeakyReLU(0.2, True)]
        layers += [nn.Conv2d(w * mult, 1, 4, stride=1, padding=1)]
        if cfg.adv_mode == "bce":
            layers.append(nn.Sigmoid())
        self.model = nn.Sequential(*layers)

    def output_size(self, size: int) -> int:
        for _ in range(self.cfg.n_layers):
            size //= 2
        return size - 2

    def forward(self, x):
        h, w = x.shape[-2:]
        if min(self.output_size(h), self.output_size(w)) < 1:
            raise ValueError(f"discriminator input {h}x{w} too small for n_layers={self.cfg.n_layers}")
        return self.model(x)


class ResnetDiscriminator(nn.Module):
    """Discriminator built from residual blocks, downsampling by 4."""

    def __init__(self, cfg: DiscriminatorCfg):
        super().__init__()
        self.cfg = cfg
        w = cfg.base_width
        layers = [nn.ReflectionPad2d(3), nn.Conv2d(3, w, 7), nn.LeakyReLU(0.2, True),
                  nn.Conv2d(w, 2 * w, 4, stride=2, padding=1), nn.InstanceNorm2d(2 * w), nn.LeakyReLU(0.2, True),
                  nn.Conv2d(2 * w, 4 * w, 4, stride=2, padding=1), nn.InstanceNorm2d(4 * w), nn.LeakyReLU(0.2, True)]
        layers += [ResidualBlock(4 * w) for _ in range(cfg.n_res_blocks)]
        layers += [nn.Conv2d(4 * w, 1, 3, padding=1)]
        if cfg.adv_mode == "bce":
            layers.append(nn.Sigmoid())
        self.model = nn.Sequential(*layers)

    def output_size(self, size: int) -> int:
        return size // 4

    def forward(self, x):
        h, w = x.shape[-2:]
        if min(h, w) < 8:
            raise ValueError(f"discriminator input {h}x{w} too small")
        return self.model(x)


def _conv_bn(cin, cout, stride=1):
    return nn.Sequential(nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False),
                         nn.BatchNorm2d(cout), nn.ReLU(True))


class DeskSegmenter(nn.Module):
    """Four stride-2 encoder stages, bilinear decoder with skip concatenation."""

    def __init__(self, cfg: SegmenterCfg):
        super().__init__()
        self.cfg = cfg
        w = cfg.base_width
        widths = [w, 2 * w, 4 * w, 6 * w, 6 * w]
        self.stem = nn.Sequential(_conv_bn(3, widths[0]), _conv_bn(widths[0], widths[0]))
        self.down = nn.ModuleList(
            nn.Sequential(_conv_bn(widths[i], widths[i + 1], stride=2), _conv_bn(widths[i + 1], widths[i + 1]))
            for i in range(4)
        )
        self.up = nn.ModuleList(_conv_bn(widths[i + 1] + widths[i], widths[i]) for i in reversed(range(4)))
        self.head = nn.Conv2d(widths[0], cfg.num_classes, 1)

    def forward(self, x):
        skips = [self.stem(x)]
        for stage in self.down:
            skips.append(stage(skips[-1]))
        y = skips.pop()
        for fuse in self.up:
            skip = skips.pop()
            y = F.interpolate(y, size=skip.shape[-2:], mode="bilinear", align_corners=False)
            y = fuse(torch.cat([y, skip], dim=1))
        return self.head(y)


VGG16_LAYOUT = [(2, 64), (2, 128), (3, 256), (3, 512), (3, 512)]


class FCN8s(nn.Module):
    """FCN-8s on an (untrained) VGG-16 trunk, upsampled to input resolution."""

    def __init__(self, cfg: SegmenterCfg):
        super().__init__()
        self.cfg = cfg
        k = cfg.num_classes
        blocks, cin = [], 3
        for n_convs, width in VGG16_LAYOUT:
            layers = []
            for _ in range(n_convs):
                layers += [nn.Conv2d(cin, width, 3, padding=1), nn.ReLU(True)]
                cin = width
            layers.append(nn.MaxPool2d(2, ceil_mode=True))
            blocks.append(nn.Sequential(*layers))
        self.blocks = nn.ModuleList(blocks)
        self.fc = nn.Sequential(
            nn.Conv2d(512, 4096, 7, padding=3), nn.ReLU(True), nn.Dropout2d(),
            nn.Conv2d(4096, 4096, 1), nn.ReLU(True), nn.Dropout2d(),
        )
        self.score_fr = nn.Conv2d(4096, k, 1)
        self.score_pool4 = nn.Conv2d(512, k, 1)
        self.score_pool3 = nn.Conv2d(256, k, 1)
        self.up2 = nn.ConvTranspose2d(k, k, 4, stride=2, padding=1, bias=False)
        self.up_pool4 = nn.ConvTranspose2d(k, k, 4, stride=2, padding=1, bias=False)
        self.up8 = nn.ConvTranspose2d(k, k, 16, stride=8, padding=4, bias=False)

    def forward(self, x):
        feats = []
        y = x
        for block in self.blocks:
            y = block(y)
            feats.append(y)
        pool3, pool4 = feats[2], feats[3]
        y = self.up2(self.score_fr(self.fc(y)))
        y = F.interpolate(y, size=pool4.shape[-2:]) if y.shape[-2:] != pool4.shape[-2:] else y
        y = self.up_pool4(y + self.score_pool4(pool4))
        y = F.interpolate(y, size=pool3.shape[-2:]) if y.shape[-2:] != pool3.shape[-2:] else y
        y = self.up8(y + self.score_pool3(pool3))
        if y.shape[-2:] != x.shape[-2:]:
            y = F.interpolate(y, size=x.shape[-2:], mode="bilinear", align_corners=False)
        return y


def build_generator(cfg: GeneratorCfg | None = None) -> ResnetGenerator:
    return init_weights(ResnetGenerator(cfg or GeneratorCfg()))


def build_discriminator(cfg: DiscriminatorCfg | None = None) -> nn.Module:
    cfg = cfg or DiscriminatorCfg()
    net = PatchDiscriminator(cfg) if cfg.arch == "patch" else ResnetDiscriminator(cfg)
    return init_weights(net)


def build_segmenter(cfg: SegmenterCfg) -> nn.Module:
    net = DeskSegmenter(cfg) if cfg.preset == "desk" else FCN8s(cfg)
    return init_weights(net)


def _batched(net: nn.Module, x) -> torch.Tensor:
    x = torch.as_tensor(x)
    if x.dim() == 3:
        return net(x.unsqueeze(0)).squeeze(0)
    return net(x)


def translate(G: nn.Module, x) -> torch.Tensor:
    """Translate a ``(3, H, W)`` image or an ``(N, 3, H, W)`` batch."""
    return _batched(G, x)


def discriminate(D: nn.Module, x) -> torch.Tensor:
    """Patch score map, ``(1, H', W')`` per image."""
    return _batched(D, x)


def segment(S: nn.Module, x) -> torch.Tensor:
    """Per-pixel class logits, ``(K, H, W)`` per image."""
    return _batched(S, x)


def count_parameters(net: nn.Module) -> int:
    return sum(p.numel() for p in net.parameters())
