"""L-infinity PGD against the SR generator, started from structured noise.

The attack perturbs the LR input so that the generator's L1 and/or
perceptual loss against the clean HR target is maximised, while keeping
the perturbed input inside ``[lr - eps, lr + eps]`` and ``[0, 1]``.
The iterate is kept in float64 regardless of the model dtype so that the
constraint holds exactly on the returned images.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import Tensor

from .errors import ConfigError, DimensionError, NumericalError
from .losses import l1_loss, perceptual_loss
from .model import ModelBundle, to_images, to_tensor


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float = 14 / 255
    iters: int = 2
    alpha: float | None = None  # None -> epsilon / 2
    structure_scale: float = 1.5
    use_l1: bool = True
    use_percep: bool = True
    recenter: bool = False
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.epsilon <= 1.0):
            raise ConfigError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if self.iters < 0:
            raise ConfigError(f"iters must be nonnegative, got {self.iters}")
        if not math.isfinite(self.structure_scale) or self.structure_scale < 1:
            raise ConfigError(f"structure_scale must be >= 1, got {self.structure_scale}")
        if self.alpha is not None:
            if self.alpha < 0 or (self.alpha == 0 and self.epsilon > 0):
                raise ConfigError(f"alpha must be positive, got {self.alpha}")
            if self.alpha > self.epsilon:
                raise ConfigError(f"alpha ({self.alpha}) must not exceed epsilon ({self.epsilon})")
        if self.iters > 0 and not (self.use_l1 or self.use_percep):
            raise ConfigError("at least one of use_l1 / use_percep must be enabled when iters > 0")

    @property
    def step(self) -> float:
        return self.epsilon / 2 if self.alpha is None else self.alpha


def init_structured_noise(h: int, w: int, c: int, cfg: AttackConfig,
                          rng: np.random.Generator | None = None) -> np.ndarray:
    """Uniform noise drawn on a coarse grid and replicated by nearest neighbour.

    Pixel ``(i, j)`` takes coarse cell ``(floor(i / scale), floor(j / scale))``
    of a ``ceil(h / scale) x ceil(w / scale)`` grid; the result has shape
    ``(h, w, c)``.
    """
    if cfg.structure_scale < 1:
        raise ConfigError(f"structure_scale must be >= 1, got {cfg.structure_scale}")
    if h < 1 or w < 1 or c < 1:
        raise DimensionError(f"noise shape must be positive, got {(h, w, c)}")
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    scale = cfg.structure_scale
    gh, gw = math.ceil(h / scale), math.ceil(w / scale)
    eps = cfg.epsilon
    coarse = rng.uniform(-eps, eps, size=(gh, gw, c))
    rows = np.minimum(np.floor(np.arange(h) / scale).astype(np.int64), gh - 1)
    cols = np.minimum(np.floor(np.arange(w) / scale).astype(np.int64), gw - 1)
    return coarse[rows[:, None], cols[None, :]]


def project(x, x0, epsilon: float):
    """Clamp ``x`` into ``[max(0, x0 - eps), min(1, x0 + eps)]`` elementwise."""
    if x.shape != x0.shape:
        raise DimensionError(f"shape mismatch: {tuple(x.shape)} vs {tuple(x0.shape)}")
    if isinstance(x, Tensor):
        lo = (x0 - epsilon).clamp(min=0.0)
        hi = (x0 + epsilon).clamp(max=1.0)
        return torch.minimum(torch.maximum(x, lo), hi)
    lo = np.maximum(np.asarray(x0) - epsilon, 0.0)
    hi = np.minimum(np.asarray(x0) + epsilon, 1.0)
    return np.minimum(np.maximum(x, lo), hi)


def _model_dtype(bundle: ModelBundle) -> torch.dtype:
    p = next(bundle.generator.parameters(), None)
    return p.dtype if p is not None else torch.float32


def attack_loss(bundle: ModelBundle, x: Tensor, hr: Tensor, cfg: AttackConfig) -> Tensor:
    """L1 and/or perceptual loss of ``G(x)`` against ``hr``, as selected by ``cfg``."""
    if not (cfg.use_l1 or cfg.use_percep):
        raise ConfigError("attack loss needs use_l1 or use_percep")
    dtype = _model_dtype(bundle)
    sr = bundle.generator(x.to(dtype))
    hr = hr.to(sr.dtype)
    if sr.shape != hr.shape:
        raise DimensionError(f"generator output {tuple(sr.shape)} does not match hr {tuple(hr.shape)}")
    loss = sr.new_zeros(())
    if cfg.use_l1:
        loss = loss + l1_loss(sr, hr)
    if cfg.use_percep:
        loss = loss + perceptual_loss(bundle.feature_net, sr, hr)
    return loss


def noise_batch(shape: tuple[int, ...], cfg: AttackConfig, rng: np.random.Generator) -> Tensor:
    """Structured noise for an NCHW batch, one independent draw per sample."""
    n, c, h, w = shape
    noise = np.stack([init_structured_noise(h, w, c, cfg, rng) for _ in range(n)])
    return torch.from_numpy(noise.transpose(0, 3, 1, 2).copy())


def pgd_attack_batch(bundle: ModelBundle, lr: Tensor, hr: Tensor, cfg: AttackConfig,
                     rng: np.random.Generator, final_loss: bool = False) -> tuple[Tensor, float | None]:
    """Attack an NCHW batch; returns the float64 adversarial batch and optionally its loss.

    The loss is averaged over the batch; samples are independent in the
    generator so each pixel's gradient sign matches a per-sample attack.
    Generator parameters receive no gradient and are never modified.
    """
    lr = lr.detach().to(torch.float64)
    x = project(lr + noise_batch(tuple(lr.shape), cfg, rng), lr, cfg.epsilon)
    center = lr
    for t in range(cfg.iters):
        x.requires_grad_(True)
        loss = attack_loss(bundle, x, hr, cfg)
        (grad,) = torch.autograd.grad(loss, x)
        if not torch.isfinite(grad).all():
            raise NumericalError(f"non-finite attack gradient at iteration {t}")
        with torch.no_grad():
            stepped = x + cfg.step * grad.sign()
            if cfg.recenter:
                center = x
            x = project(stepped, center, cfg.epsilon)
            if cfg.recenter:
                x = x.clamp(0.0, 1.0)
        x = x.detach()
    value = None
    if final_loss:
        with torch.no_grad():
            value = float(attack_loss(bundle, x, hr, cfg)) if (cfg.use_l1 or cfg.use_percep) else 0.0
    return x, value


def pgd_attack(bundle: ModelBundle, lr: np.ndarray, hr: np.ndarray, cfg: AttackConfig,
               rng: np.random.Generator | None = None) -> np.ndarray:
    """Adversarial version of one (H, W, C) LR image; satisfies ``|adv - lr| <= eps`` exactly."""
    lr = np.asarray(lr, dtype=np.float64)
    hr = np.asarray(hr, dtype=np.float64)
    scale = bundle.gcfg.scale
    if hr.shape != (lr.shape[0] * scale, lr.shape[1] * scale, lr.shape[2]):
        raise DimensionError(f"(lr {lr.shape}, hr {hr.shape}) is not a pair at scale {scale}")
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    adv, _ = pgd_attack_batch(bundle, to_tensor(lr, torch.float64), to_tensor(hr, torch.float64), cfg, rng)
    return to_images(adv)[0]


def random_noise_input(lr: Tensor, cfg: AttackConfig, rng: np.random.Generator) -> Tensor:
    """Unoptimised baseline: i.i.d. uniform noise in the eps-ball, projected to valid images."""
    lr = lr.detach().to(torch.float64)
    noise = torch.from_numpy(rng.uniform(-cfg.epsilon, cfg.epsilon, size=tuple(lr.shape)))
    return project(lr + noise, lr, cfg.epsilon)
