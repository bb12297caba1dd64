"""Image I/O, bicubic degradation, patch extraction and evaluation corruptions.

Images are plain ``numpy`` arrays of shape ``(H, W, C)`` holding float64
intensities in ``[0, 1]`` with ``C`` in ``{1, 3}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import cv2
import numpy as np

from ._kernels import resample_rows
from .errors import ConfigError, DimensionError, FormatError

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
CUBIC_A = -0.5


def check_image(img: np.ndarray, name: str = "image") -> np.ndarray:
    """Validate the Image invariants and return ``img`` as float64."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] not in (1, 3) or img.shape[0] < 1 or img.shape[1] < 1:
        raise DimensionError(f"{name} must have shape (H, W, C) with C in {{1, 3}}, got {img.shape}")
    if not np.all(np.isfinite(img)) or img.min() < 0.0 or img.max() > 1.0:
        raise ValueError(f"{name} has values outside [0, 1]")
    return img


@dataclass(frozen=True)
class PatchPair:
    hr: np.ndarray
    lr: np.ndarray
    scale: int

    def __post_init__(self):
        check_image(self.hr, "hr")
        check_image(self.lr, "lr")
        if self.scale < 1:
            raise ConfigError(f"scale must be positive, got {self.scale}")
        h, w, c = self.lr.shape
        if self.hr.shape != (h * self.scale, w * self.scale, c):
            raise DimensionError(
                f"hr shape {self.hr.shape} is not lr shape {self.lr.shape} upscaled by {self.scale}"
            )


CORRUPTION_KINDS = ("gaussian", "salt_pepper", "quantize")


@dataclass(frozen=True)
class CorruptionSpec:
    kind: str
    strength: float
    seed: int = 0

    def __post_init__(self):
        if self.kind not in CORRUPTION_KINDS:
            raise ConfigError(f"unknown corruption kind {self.kind!r}; expected one of {CORRUPTION_KINDS}")
        s = self.strength
        if not math.isfinite(s) or s < 0:
            raise ConfigError(f"{self.kind} strength must be finite and nonnegative, got {s}")
        if self.kind in ("gaussian", "salt_pepper") and s > 1:
            raise ConfigError(f"{self.kind} strength must lie in [0, 1], got {s}")
        if self.kind == "quantize" and (s < 2 or s != int(s)):
            raise ConfigError(f"quantize levels must be an integer >= 2, got {s}")

    @property
    def label(self) -> str:
        s = int(self.strength) if self.kind == "quantize" else self.strength
        return f"{self.kind}:{s:g}"

    @classmethod
    def parse(cls, text: str, seed: int = 0) -> "CorruptionSpec":
        """Parse ``kind:strength`` (e.g. ``gaussian:0.04``)."""
        kind, sep, value = text.strip().partition(":")
        if not sep:
            raise ConfigError(f"corruption {text!r} must look like kind:strength")
        try:
            strength = float(value)
        except ValueError:
            raise ConfigError(f"corruption {text!r} has a non-numeric strength") from None
        return cls(kind.strip(), strength, seed)


# ---------------------------------------------------------------------------
# PNG I/O


def load_image(path: str | Path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such image: {path}")
    with open(path, "rb") as fh:
        if fh.read(8) != PNG_SIGNATURE:
            raise FormatError(f"{path} is not a PNG file")
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise FormatError(f"could not decode {path}")
    if raw.dtype == np.uint8:
        peak = 255.0
    elif raw.dtype == np.uint16:
        peak = 65535.0
    else:
        raise FormatError(f"{path}: unsupported sample type {raw.dtype}")
    if raw.ndim == 2:
        raw = raw[:, :, None]
    elif raw.shape[2] == 3:
        raw = raw[:, :, ::-1]
    else:
        raise FormatError(f"{path}: unsupported channel count {raw.shape[2]}")
    return raw.astype(np.float64) / peak


def to_uint8(img: np.ndarray) -> np.ndarray:
    # round half up, not numpy's round-half-even
    return np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def save_image(img: np.ndarray, path: str | Path) -> None:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise DimensionError(f"cannot save array of shape {img.shape} as an image")
    codes = to_uint8(img)
    codes = codes[:, :, 0] if codes.shape[2] == 1 else codes[:, :, ::-1]
    path = Path(path)
    if not path.parent.is_dir():
        raise FileNotFoundError(f"directory does not exist: {path.parent}")
    ok = cv2.imwrite(str(path), np.ascontiguousarray(codes))
    if not ok:
        raise OSError(f"could not write {path}")


def list_pngs(folder: str | Path) -> list[Path]:
    folder = Path(folder)
    if not folder.is_dir():
        raise FileNotFoundError(f"no such directory: {folder}")
    return sorted(p for p in folder.iterdir() if p.suffix.lower() == ".png")


def load_folder(folder: str | Path) -> list[np.ndarray]:
    return [load_image(p) for p in list_pngs(folder)]


def save_numbered(images: Iterable[np.ndarray], folder: str | Path) -> list[Path]:
    """Write images as ``%06d.png`` into ``folder`` (created if needed)."""
    folder = Path(folder)
    folder.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, img in enumerate(images):
        p = folder / f"{i:06d}.png"
        save_image(img, p)
        paths.append(p)
    return paths


# ---------------------------------------------------------------------------
# bicubic resampling


def cubic(x: np.ndarray, a: float = CUBIC_A) -> np.ndarray:
    """Keys cubic convolution kernel."""
    x = np.abs(np.asarray(x, dtype=np.float64))
    x2, x3 = x * x, x * x * x
    near = (a + 2) * x3 - (a + 3) * x2 + 1
    far = a * x3 - 5 * a * x2 + 8 * a * x - 4 * a
    return np.where(x <= 1, near, np.where(x < 2, far, 0.0))


def reflect_index(j: np.ndarray, n: int) -> np.ndarray:
    """Half-sample symmetric reflection: -1 -> 0, n -> n - 1."""
    m = np.mod(j, 2 * n)
    return np.where(m >= n, 2 * n - 1 - m, m)


def downsample_weights(n_in: int, s: int) -> tuple[np.ndarray, np.ndarray]:
    """Tap indices and weights for anti-aliased bicubic decimation by ``s``."""
    n_out = n_in // s
    centers = (np.arange(n_out) + 0.5) * s - 0.5
    taps = 4 * s + 2
    first = np.floor(centers - 2 * s).astype(np.int64)
    j = first[:, None] + np.arange(taps)[None, :]
    w = cubic((j - centers[:, None]) / s)
    w /= w.sum(axis=1, keepdims=True)
    return reflect_index(j, n_in), w


def bicubic_downsample(img: np.ndarray, s: int) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3:
        raise DimensionError(f"expected (H, W, C) array, got shape {img.shape}")
    if s < 1:
        raise ConfigError(f"scale must be a positive integer, got {s}")
    h, w, c = img.shape
    if h % s or w % s:
        raise DimensionError(f"image size {h}x{w} is not divisible by {s}")
    if s == 1:
        return np.clip(img, 0.0, 1.0)
    idx, wt = downsample_weights(h, s)
    rows = resample_rows(img.reshape(h, w * c), idx, wt).reshape(h // s, w, c)
    idx, wt = downsample_weights(w, s)
    cols = resample_rows(rows.transpose(1, 0, 2).reshape(w, (h // s) * c), idx, wt)
    out = cols.reshape(w // s, h // s, c).transpose(1, 0, 2)
    return np.clip(out, 0.0, 1.0)


def make_pair(hr: np.ndarray, s: int) -> PatchPair:
    hr = check_image(hr, "hr")
    return PatchPair(hr=hr, lr=bicubic_downsample(hr, s), scale=s)


# ---------------------------------------------------------------------------
# patches


def grid_anchors(n: int, size: int, stride: int) -> list[int]:
    if stride < 1:
        raise ConfigError(f"stride must be positive, got {stride}")
    count = math.ceil((n - size) / stride) + 1
    return sorted({min(a * stride, n - size) for a in range(count)})


def crop_patches(img: np.ndarray, size: int, stride: int) -> list[np.ndarray]:
    """Row-major grid of ``size``-square crops; the last row/column hugs the edge."""
    h, w = img.shape[:2]
    if size < 1 or size > min(h, w):
        raise DimensionError(f"patch size {size} does not fit a {h}x{w} image")
    return [img[y:y + size, x:x + size].copy()
            for y in grid_anchors(h, size, stride)
            for x in grid_anchors(w, size, stride)]


def build_pairs(images: Sequence[np.ndarray], hr_size: int, scale: int, stride: int | None = None,
                limit: int | None = None) -> list[PatchPair]:
    """Cut every image into HR patches and pair each with its bicubic LR."""
    if hr_size % scale:
        raise DimensionError(f"HR patch size {hr_size} is not divisible by scale {scale}")
    pairs = []
    for img in images:
        for patch in crop_patches(img, hr_size, stride or hr_size):
            pairs.append(make_pair(patch, scale))
            if limit is not None and len(pairs) >= limit:
                return pairs
    return pairs


# ---------------------------------------------------------------------------
# corruptions (evaluation only)


def degrade(img: np.ndarray, spec: CorruptionSpec) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "gaussian":
        if spec.strength == 0:
            return img.copy()
        return np.clip(img + rng.normal(0.0, spec.strength, size=img.shape), 0.0, 1.0)
    if spec.kind == "salt_pepper":
        u = rng.random(img.shape)
        out = img.copy()
        p = spec.strength
        out[u < p / 2] = 0.0
        out[(u >= p / 2) & (u < p)] = 1.0
        return out
    steps = int(spec.strength) - 1
    return np.floor(np.clip(img, 0.0, 1.0) * steps + 0.5) / steps


# ---------------------------------------------------------------------------
# bundled corpus


def dead_leaves(size: int, rng: np.random.Generator, n_shapes: int = 400, channels: int = 3) -> np.ndarray:
    """Occluding random disks and boxes with power-law radii, plus fine texture.

    Dead-leaves images share the scale-invariant statistics of natural
    photographs, which makes them a reasonable hermetic training corpus.
    """
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    img = np.empty((size, size, channels))
    img[:] = rng.random(channels)
    r_min, r_max = 2.0, size / 3.0
    # inverse-CDF sample from p(r) ~ r^-3
    u = rng.random(n_shapes)
    radii = 1.0 / np.sqrt(1.0 / r_min**2 - u * (1.0 / r_min**2 - 1.0 / r_max**2))
    for r in radii:
        cy, cx = rng.uniform(-r, size + r, 2)
        color = rng.random(channels)
        if rng.random() < 0.7:
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        else:
            mask = (np.abs(yy - cy) <= r) & (np.abs(xx - cx) <= r * rng.uniform(0.3, 1.0))
        if rng.random() < 0.3:
            # striped leaf
            period = rng.uniform(2.0, 6.0)
            angle = rng.uniform(0, np.pi)
            phase = np.sin((xx * np.cos(angle) + yy * np.sin(angle)) * 2 * np.pi / period)
            shade = 0.5 + 0.5 * phase[..., None] * rng.uniform(0.2, 0.5)
            img[mask] = np.clip(color * shade[mask], 0, 1)
        else:
            img[mask] = color
    return img


def synthetic_corpus(count: int, size: int, seed: int, channels: int = 3) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    return [dead_leaves(size, rng, channels=channels) for _ in range(count)]
