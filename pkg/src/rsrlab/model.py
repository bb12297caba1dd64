"""Toy-scale RRDB generator, relativistic discriminator and frozen feature extractor.

All networks are ordinary ``torch.nn.Module`` objects operating on NCHW
tensors.  Parameters are drawn from explicitly seeded ``torch.Generator``
streams so construction never touches the global RNG.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .errors import ConfigError, DimensionError

RESIDUAL_SCALE = 0.2
LRELU_SLOPE = 0.2


@dataclass(frozen=True)
class GeneratorConfig:
    num_blocks: int = 4
    base_channels: int = 32
    growth_channels: int = 16
    scale: int = 4
    channels: int = 3
    seed: int = 0

    def __post_init__(self):
        for name in ("num_blocks", "base_channels", "growth_channels"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.scale not in (2, 4):
            raise ConfigError(f"scale must be 2 or 4, got {self.scale}")
        if self.channels not in (1, 3):
            raise ConfigError(f"channels must be 1 or 3, got {self.channels}")

    @property
    def stages(self) -> int:
        return int(math.log2(self.scale))


@dataclass(frozen=True)
class DiscriminatorConfig:
    hr_size: int = 128
    base_channels: int = 16
    channels: int = 3

    def __post_init__(self):
        if self.hr_size < 16 or self.hr_size % 16:
            raise ConfigError(f"discriminator hr_size must be a multiple of 16, got {self.hr_size}")
        if self.base_channels < 1:
            raise ConfigError("discriminator base_channels must be positive")


@dataclass(frozen=True)
class FeatureConfig:
    stage_channels: tuple[int, ...] = (16, 32, 32, 64)
    channels: int = 3

    def __post_init__(self):
        if len(self.stage_channels) != 4 or min(self.stage_channels) < 1:
            raise ConfigError("feature extractor needs 4 positive stage widths")


def _init_conv(conv: nn.Conv2d | nn.Linear, gen: torch.Generator, scale: float = 1.0) -> None:
    fan_in = conv.weight[0].numel()
    std = math.sqrt(2.0 / (1.0 + LRELU_SLOPE**2) / fan_in)
    with torch.no_grad():
        conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) * std * scale)
        if conv.bias is not None:
            conv.bias.zero_()


class DenseBlock(nn.Module):
    """Five densely connected 3x3 convs with a scaled residual connection."""

    def __init__(self, nf: int, gc: int):
        super().__init__()
        self.convs = nn.ModuleList(
            nn.Conv2d(nf + i * gc, gc if i < 4 else nf, 3, 1, 1) for i in range(5)
        )

    def forward(self, x: Tensor) -> Tensor:
        feats = [x]
        for i, conv in enumerate(self.convs):
            out = conv(torch.cat(feats, 1))
            if i < 4:
                out = F.leaky_relu(out, LRELU_SLOPE)
                feats.append(out)
        return x + RESIDUAL_SCALE * out


class RRDB(nn.Module):
    def __init__(self, nf: int, gc: int):
        super().__init__()
        self.blocks = nn.Sequential(DenseBlock(nf, gc), DenseBlock(nf, gc), DenseBlock(nf, gc))

    def forward(self, x: Tensor) -> Tensor:
        return x + RESIDUAL_SCALE * self.blocks(x)


class Generator(nn.Module):
    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        nf = cfg.base_channels
        self.conv_first = nn.Conv2d(cfg.channels, nf, 3, 1, 1)
        self.trunk = nn.Sequential(*[RRDB(nf, cfg.growth_channels) for _ in range(cfg.num_blocks)])
        self.trunk_conv = nn.Conv2d(nf, nf, 3, 1, 1)
        self.upconvs = nn.ModuleList(nn.Conv2d(nf, nf, 3, 1, 1) for _ in range(cfg.stages))
        self.hr_conv = nn.Conv2d(nf, nf, 3, 1, 1)
        self.conv_last = nn.Conv2d(nf, cfg.channels, 3, 1, 1)

    def reset_parameters(self, gen: torch.Generator) -> None:
        for name, mod in self.named_modules():
            if isinstance(mod, nn.Conv2d):
                _init_conv(mod, gen, 0.1 if name.startswith("trunk.") else 1.0)

    def forward(self, x: Tensor) -> Tensor:
        if x.dim() != 4 or x.shape[1] != self.cfg.channels:
            raise DimensionError(f"generator expects (N, {self.cfg.channels}, H, W), got {tuple(x.shape)}")
        if x.shape[2] < 8 or x.shape[3] < 8:
            raise DimensionError(f"generator input must be at least 8x8, got {x.shape[2]}x{x.shape[3]}")
        feat = self.conv_first(x)
        feat = feat + self.trunk_conv(self.trunk(feat))
        for conv in self.upconvs:
            feat = F.leaky_relu(conv(F.interpolate(feat, scale_factor=2, mode="nearest")), LRELU_SLOPE)
        return self.conv_last(F.leaky_relu(self.hr_conv(feat), LRELU_SLOPE))


class Discriminator(nn.Module):
    """VGG-style strided conv stack producing one relativistic logit per image."""

    def __init__(self, cfg: DiscriminatorConfig):
        super().__init__()
        self.cfg = cfg
        nf = cfg.base_channels
        widths = [nf, nf, 2 * nf, 2 * nf, 4 * nf, 4 * nf, 4 * nf, 4 * nf]
        layers = []
        c_in = cfg.channels
        for i, c_out in enumerate(widths):
            if i % 2 == 0:
                layers.append(nn.Conv2d(c_in, c_out, 3, 1, 1))
            else:
                layers.append(nn.Conv2d(c_in, c_out, 4, 2, 1))
            c_in = c_out
        self.convs = nn.ModuleList(layers)
        side = cfg.hr_size // 16
        self.fc1 = nn.Linear(c_in * side * side, 100)
        self.fc2 = nn.Linear(100, 1)

    def reset_parameters(self, gen: torch.Generator) -> None:
        for mod in self.modules():
            if isinstance(mod, (nn.Conv2d, nn.Linear)):
                _init_conv(mod, gen)

    def forward(self, x: Tensor) -> Tensor:
        size = self.cfg.hr_size
        if x.dim() != 4 or tuple(x.shape[1:]) != (self.cfg.channels, size, size):
            raise DimensionError(
                f"discriminator expects (N, {self.cfg.channels}, {size}, {size}), got {tuple(x.shape)}"
            )
        for conv in self.convs:
            x = F.leaky_relu(conv(x), LRELU_SLOPE)
        x = F.leaky_relu(self.fc1(x.flatten(1)), LRELU_SLOPE)
        return self.fc2(x).squeeze(1)


class FeatureExtractor(nn.Module):
    """Four conv stages with 2x average pooling between them; weights are frozen."""

    def __init__(self, cfg: FeatureConfig):
        super().__init__()
        self.cfg = cfg
        c_in = cfg.channels
        convs = []
        for c_out in cfg.stage_channels:
            convs.append(nn.Conv2d(c_in, c_out, 3, 1, 1))
            c_in = c_out
        self.convs = nn.ModuleList(convs)

    def reset_parameters(self, gen: torch.Generator) -> None:
        for mod in self.convs:
            _init_conv(mod, gen)

    def forward(self, x: Tensor) -> list[Tensor]:
        if x.dim() != 4 or x.shape[1] != self.cfg.channels:
            raise DimensionError(f"feature extractor expects (N, {self.cfg.channels}, H, W), got {tuple(x.shape)}")
        if x.shape[2] < 16 or x.shape[3] < 16:
            raise DimensionError(f"feature extractor input must be at least 16x16, got {x.shape[2]}x{x.shape[3]}")
        maps = []
        for i, conv in enumerate(self.convs):
            x = F.leaky_relu(conv(x), LRELU_SLOPE)
            maps.append(x)
            if i < len(self.convs) - 1:
                x = F.avg_pool2d(x, 2)
        return maps


@dataclass
class ModelBundle:
    generator: nn.Module
    discriminator: nn.Module
    feature_net: nn.Module
    gcfg: GeneratorConfig
    dcfg: DiscriminatorConfig
    fcfg: FeatureConfig = field(default_factory=FeatureConfig)
    seed: int = 0

    def feature_checksum(self) -> str:
        return params_checksum(self.feature_net)


def params_checksum(module: nn.Module) -> str:
    h = hashlib.sha256()
    for name, t in module.state_dict().items():
        h.update(name.encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def bundle_checksum(bundle: ModelBundle) -> str:
    h = hashlib.sha256()
    for part in (bundle.generator, bundle.discriminator, bundle.feature_net):
        h.update(params_checksum(part).encode())
    return h.hexdigest()


def freeze(module: nn.Module) -> nn.Module:
    for p in module.parameters():
        p.requires_grad_(False)
    return module.eval()


def init_models(gcfg: GeneratorConfig, seed: int | None = None, hr_size: int | None = None,
                dcfg: DiscriminatorConfig | None = None, fcfg: FeatureConfig | None = None,
                feature_weights: Mapping[str, Tensor | np.ndarray] | None = None) -> ModelBundle:
    """Build a deterministically initialised generator, discriminator and feature net.

    ``hr_size`` fixes the discriminator's input side (defaults to
    ``32 * scale``, i.e. a 32x32 LR patch).  Pass
    ``feature_weights`` (a state dict) to use pretrained perceptual features.
    """
    seed = gcfg.seed if seed is None else seed
    if dcfg is None:
        dcfg = DiscriminatorConfig(hr_size=hr_size or 32 * gcfg.scale, channels=gcfg.channels)
    fcfg = fcfg or FeatureConfig(channels=gcfg.channels)
    if dcfg.channels != gcfg.channels or fcfg.channels != gcfg.channels:
        raise ConfigError("generator, discriminator and feature extractor disagree on channel count")

    ss = np.random.SeedSequence(seed)
    g_seed, d_seed, f_seed = (int(s.generate_state(1, np.uint64)[0] >> 1) for s in ss.spawn(3))

    # nn layer constructors draw from the global RNG; keep it untouched
    with torch.random.fork_rng(devices=[]):
        gen = Generator(gcfg)
        disc = Discriminator(dcfg)
        feat = FeatureExtractor(fcfg)
    gen.reset_parameters(torch.Generator().manual_seed(g_seed))
    disc.reset_parameters(torch.Generator().manual_seed(d_seed))
    if feature_weights is not None:
        feat.load_state_dict({k: torch.as_tensor(np.asarray(v)) for k, v in feature_weights.items()})
    else:
        feat.reset_parameters(torch.Generator().manual_seed(f_seed))
    return ModelBundle(gen, disc, freeze(feat), gcfg, dcfg, fcfg, seed)


def generator_forward(generator: nn.Module, lr: Tensor) -> Tensor:
    return generator(lr)


def discriminator_forward(discriminator: nn.Module, img: Tensor) -> Tensor:
    return discriminator(img)


def features(feature_net: nn.Module, img: Tensor) -> list[Tensor]:
    return feature_net(img)


def to_tensor(img: np.ndarray, dtype: torch.dtype = torch.float32) -> Tensor:
    """(H, W, C) or (N, H, W, C) array -> NCHW tensor."""
    arr = np.asarray(img)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4:
        raise DimensionError(f"expected (H, W, C) or (N, H, W, C) array, got shape {arr.shape}")
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2))).to(dtype)


def to_images(t: Tensor) -> np.ndarray:
    """NCHW tensor -> (N, H, W, C) float64 array."""
    return t.detach().cpu().double().numpy().transpose(0, 2, 3, 1).copy()


def upscale(generator: nn.Module, lr: np.ndarray) -> np.ndarray:
    """Super-resolve one (H, W, C) image; output is clamped to [0, 1]."""
    param = next(generator.parameters(), None)
    dtype = param.dtype if param is not None else torch.float32
    with torch.no_grad():
        out = generator(to_tensor(lr, dtype))
    return np.clip(to_images(out)[0], 0.0, 1.0)
