"""Reference metrics (PSNR, SSIM, perceptual distance) and the evaluation protocol."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from ._kernels import filter_valid
from .dataio import CorruptionSpec, PatchPair, degrade
from .errors import DimensionError
from .model import ModelBundle, to_tensor, upscale

PSNR_IDENTICAL = math.inf
CSV_HEADER = ("image_id", "corruption", "psnr_db", "ssim", "percep")
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    """PSNR in dB with peak 1; identical inputs give ``inf``."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_IDENTICAL
    return 10.0 * math.log10(1.0 / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def ssim(a, b) -> float:
    """Single-scale SSIM, 11x11 Gaussian window, valid region, averaged over channels."""
    a, b = _pair(a, b)
    if a.ndim == 2:
        a, b = a[:, :, None], b[:, :, None]
    if min(a.shape[:2]) < SSIM_WINDOW:
        raise DimensionError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.shape[:2]}")
    if np.array_equal(a, b):
        return 1.0
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    pa = np.moveaxis(a, 2, 0)
    pb = np.moveaxis(b, 2, 0)
    k = gaussian_window()
    stats = filter_valid(np.concatenate([pa, pb, pa * pa, pb * pb, pa * pb]), k)
    mu_a, mu_b, aa, bb, ab = np.split(stats, 5)
    var_a = aa - mu_a**2
    var_b = bb - mu_b**2
    cov = ab - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def perceptual_distance(feature_net: nn.Module, a, b) -> float:
    """Sum over stages of the mean squared distance between channel-normalised features.

    A surrogate for LPIPS built on the (frozen) training feature extractor;
    reported as ``percep (surrogate)``.
    """
    a, b = _pair(a, b)
    if np.array_equal(a, b):
        return 0.0
    dtype = next(feature_net.parameters()).dtype
    with torch.no_grad():
        fa = feature_net(to_tensor(a, dtype))
        fb = feature_net(to_tensor(b, dtype))
        total = 0.0
        for xa, xb in zip(fa, fb):
            xa = xa.double()
            xb = xb.double()
            na = xa / (xa.pow(2).sum(1, keepdim=True).sqrt() + 1e-10)
            nb = xb / (xb.pow(2).sum(1, keepdim=True).sqrt() + 1e-10)
            total += float((na - nb).pow(2).sum(1).mean())
    return total


@dataclass(frozen=True)
class MetricRow:
    image_id: int
    corruption: str
    psnr: float
    ssim: float
    percep: float


@dataclass
class MetricReport:
    rows: list[MetricRow] = field(default_factory=list)

    def corruptions(self) -> list[str]:
        seen = []
        for r in self.rows:
            if r.corruption not in seen:
                seen.append(r.corruption)
        return seen

    @property
    def aggregates(self) -> dict[str, dict[str, float]]:
        """Per-corruption means of each metric (``inf`` PSNR propagates)."""
        out = {}
        for name in self.corruptions():
            sel = [r for r in self.rows if r.corruption == name]
            out[name] = {
                "psnr": float(np.mean([r.psnr for r in sel])),
                "ssim": float(np.mean([r.ssim for r in sel])),
                "percep": float(np.mean([r.percep for r in sel])),
            }
        return out

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for r in self.rows:
                w.writerow([r.image_id, r.corruption, repr(r.psnr), repr(r.ssim), repr(r.percep)])

    @classmethod
    def from_csv(cls, path: str | Path) -> "MetricReport":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if tuple(header) != CSV_HEADER:
                raise ValueError(f"{path}: unexpected header {header}")
            rows = [MetricRow(int(i), c, float(p), float(s), float(q)) for i, c, p, s, q in reader]
        return cls(rows)


def corrupt_lr(lr: np.ndarray, spec: CorruptionSpec, image_id: int) -> np.ndarray:
    """Corrupt one eval LR with a per-image seed derived from the spec's seed."""
    seed = int(np.random.SeedSequence([spec.seed, image_id]).generate_state(1)[0])
    return degrade(lr, CorruptionSpec(spec.kind, spec.strength, seed))


def evaluate(bundle: ModelBundle, eval_set: Sequence[PatchPair],
             corruptions: Sequence[CorruptionSpec] = ()) -> MetricReport:
    """Score the generator on clean and corrupted LR inputs against the HR targets."""
    if not eval_set:
        raise ValueError("eval set is empty")
    report = MetricReport()
    variants: list[tuple[str, CorruptionSpec | None]] = [("clean", None)]
    variants += [(spec.label, spec) for spec in corruptions]
    bundle.generator.eval()
    for label, spec in variants:
        for i, pair in enumerate(eval_set):
            lr = pair.lr if spec is None else corrupt_lr(pair.lr, spec, i)
            sr = upscale(bundle.generator, lr)
            report.rows.append(MetricRow(
                image_id=i,
                corruption=label,
                psnr=psnr(sr, pair.hr),
                ssim=ssim(sr, pair.hr),
                percep=perceptual_distance(bundle.feature_net, sr, pair.hr),
            ))
    return report
