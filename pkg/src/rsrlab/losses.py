"""Scalar training objectives: L1, perceptual, relativistic-average GAN terms."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .errors import ConfigError, DimensionError


@dataclass(frozen=True)
class LossWeights:
    w_l1: float = 1.0
    w_percep: float = 1.0
    w_gan: float = 0.005

    def __post_init__(self):
        for name in ("w_l1", "w_percep", "w_gan"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ConfigError(f"{name} must be finite and >= 0, got {v}")


def _same_shape(a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def l1_loss(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b)
    return (a - b).abs().mean()


def perceptual_loss(feature_net: nn.Module, sr: Tensor, hr: Tensor) -> Tensor:
    """Sum over stages of the mean absolute feature difference."""
    _same_shape(sr, hr)
    total = sr.new_zeros(())
    for fs, fh in zip(feature_net(sr), feature_net(hr)):
        total = total + (fs - fh).abs().mean()
    return total


def _logits(x) -> Tensor:
    t = torch.as_tensor(x)
    if t.dim() == 0:
        t = t.reshape(1)
    if t.numel() == 0:
        raise ValueError("logit list must be non-empty")
    return t.flatten()


def gan_loss_g(real_logits, fake_logits) -> Tensor:
    """Relativistic-average generator loss.

    ``-mean log(1 - sig(C_r - mean C_f)) - mean log sig(C_f - mean C_r)``,
    with ``log(1 - sig(z))`` written as ``logsigmoid(-z)``.
    """
    cr, cf = _logits(real_logits), _logits(fake_logits)
    return -F.logsigmoid(-(cr - cf.mean())).mean() - F.logsigmoid(cf - cr.mean()).mean()


def gan_loss_d(real_logits, fake_logits) -> Tensor:
    cr, cf = _logits(real_logits), _logits(fake_logits)
    return -F.logsigmoid(cr - cf.mean()).mean() - F.logsigmoid(-(cf - cr.mean())).mean()


def total_g_loss(weights: LossWeights, l1, percep, gan_g):
    return weights.w_l1 * l1 + weights.w_percep * percep + weights.w_gan * gan_g
