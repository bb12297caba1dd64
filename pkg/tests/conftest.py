import numpy as np
import pytest
import torch
from torch import nn

from rsrlab.model import GeneratorConfig, ModelBundle, init_models

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_bundle(seed=0, hr_size=32, dtype=torch.float32, **gkw) -> ModelBundle:
    gcfg = GeneratorConfig(**{"num_blocks": 1, "base_channels": 8, "growth_channels": 4, **gkw})
    bundle = init_models(gcfg, seed, hr_size=hr_size)
    if dtype != torch.float32:
        bundle.generator.to(dtype)
        bundle.discriminator.to(dtype)
        bundle.feature_net.to(dtype)
    return bundle


@pytest.fixture
def bundle():
    return tiny_bundle()


@pytest.fixture
def bundle64():
    return tiny_bundle(dtype=torch.float64)


class MeanStub(nn.Module):
    """G(x) = per-sample mean of x broadcast to the upscaled shape."""

    def __init__(self, scale=4):
        super().__init__()
        self.scale = scale
        self.dummy = nn.Parameter(torch.zeros((), dtype=torch.float64))

    def forward(self, x):
        n, c, h, w = x.shape
        m = x.mean(dim=(1, 2, 3), keepdim=True) + 0 * self.dummy
        return m.expand(n, c, h * self.scale, w * self.scale)


class NearestStub(nn.Module):
    """Nearest-neighbour upsampler with no learnable effect."""

    def __init__(self, scale=4):
        super().__init__()
        self.scale = scale
        self.dummy = nn.Parameter(torch.zeros((), dtype=torch.float64))

    def forward(self, x):
        return torch.nn.functional.interpolate(x, scale_factor=self.scale, mode="nearest") + 0 * self.dummy


def with_generator(bundle: ModelBundle, generator: nn.Module) -> ModelBundle:
    return ModelBundle(generator, bundle.discriminator, bundle.feature_net, bundle.gcfg, bundle.dcfg,
                       bundle.fcfg, bundle.seed)


def central_diff(f, x: torch.Tensor, index: tuple, h: float = 1e-6) -> float:
    """Central finite difference of scalar ``f`` at ``x[index]`` (double precision)."""
    xp = x.detach().clone()
    xm = x.detach().clone()
    xp[index] += h
    xm[index] -= h
    with torch.no_grad():
        return (float(f(xp)) - float(f(xm))) / (2 * h)


def grad_check(f, x: torch.Tensor, rng, points: int = 5, h: float = 1e-6) -> float:
    """Max relative error between autograd and central differences over random coordinates."""
    x = x.detach().clone().requires_grad_(True)
    (g,) = torch.autograd.grad(f(x), x)
    worst = 0.0
    for _ in range(points):
        index = tuple(int(rng.integers(0, s)) for s in x.shape)
        num = central_diff(f, x, index, h)
        ana = float(g[index])
        denom = max(abs(num), abs(ana), 1e-12)
        worst = max(worst, abs(num - ana) / denom)
    return worst


# -- acceptance reporting --------------------------------------------------------

_CRITERIA: list[str] = []


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion; asserts on failure."""

    def record(number: int, title: str, ok: bool, detail: str) -> None:
        line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title} ({detail})"
        _CRITERIA.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA):
            terminalreporter.write_line(line)
