import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from rsrlab.errors import ConfigError, DimensionError
from rsrlab.losses import LossWeights, gan_loss_d, gan_loss_g, l1_loss, perceptual_loss, total_g_loss

from .conftest import grad_check

LOG2 = math.log(2.0)


def test_l1_basic():
    a = torch.full((1, 3, 4, 4), 0.2, dtype=torch.float64)
    b = torch.full((1, 3, 4, 4), 0.7, dtype=torch.float64)
    assert float(l1_loss(a, a)) == 0.0
    assert float(l1_loss(a, b)) == pytest.approx(0.5, abs=1e-12)
    assert float(l1_loss(a, b)) == float(l1_loss(b, a))


def test_l1_shape_mismatch():
    with pytest.raises(DimensionError):
        l1_loss(torch.zeros(1, 3, 4, 4), torch.zeros(1, 3, 4, 5))


def test_perceptual_zero_and_symmetric(bundle64, rng):
    a = torch.from_numpy(rng.random((1, 3, 32, 32)))
    b = torch.from_numpy(rng.random((1, 3, 32, 32)))
    assert float(perceptual_loss(bundle64.feature_net, a, a)) == 0.0
    assert float(perceptual_loss(bundle64.feature_net, a, b)) == float(perceptual_loss(bundle64.feature_net, b, a))


def test_perceptual_recomputed_from_feature_maps(bundle64, rng):
    a = torch.from_numpy(rng.random((2, 3, 32, 32)))
    b = torch.from_numpy(rng.random((2, 3, 32, 32)))
    fa = [m.detach().numpy() for m in bundle64.feature_net(a)]
    fb = [m.detach().numpy() for m in bundle64.feature_net(b)]
    expected = sum(np.mean(np.abs(x - y)) for x, y in zip(fa, fb))
    assert float(perceptual_loss(bundle64.feature_net, a, b)) == pytest.approx(expected, abs=1e-9)


def test_perceptual_shape_mismatch(bundle64):
    with pytest.raises(DimensionError):
        perceptual_loss(bundle64.feature_net, torch.zeros(1, 3, 32, 32), torch.zeros(1, 3, 16, 16))


def test_gan_losses_equal_logits():
    c = torch.full((4,), 0.3, dtype=torch.float64)
    assert float(gan_loss_g(c, c)) == pytest.approx(2 * LOG2, abs=1e-12)
    assert float(gan_loss_d(c, c)) == pytest.approx(2 * LOG2, abs=1e-12)
    assert 2 * LOG2 == pytest.approx(1.3863, abs=1e-4)
    assert float(gan_loss_g(c, c) + gan_loss_d(c, c)) == pytest.approx(4 * LOG2, abs=1e-12)


def test_gan_g_limit():
    real = torch.tensor([0.0, 0.1], dtype=torch.float64)
    fake = torch.tensor([60.0, 61.0], dtype=torch.float64)
    # second term -> 0, first term -> 0 as the fakes dominate
    assert float(gan_loss_g(real, fake)) < 1e-20


def test_gan_d_separated():
    real = torch.tensor([50.0, 51.0], dtype=torch.float64)
    fake = torch.tensor([-50.0, -49.0], dtype=torch.float64)
    assert float(gan_loss_d(real, fake)) < 1e-20


def test_gan_losses_stable_for_large_logits():
    real = torch.tensor([30.0, -30.0], dtype=torch.float64)
    fake = torch.tensor([-30.0, 30.0], dtype=torch.float64)
    assert math.isfinite(float(gan_loss_g(real, fake)))
    assert math.isfinite(float(gan_loss_d(real, fake)))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-20, 20), min_size=1, max_size=6), st.lists(st.floats(-20, 20), min_size=1, max_size=6),
       st.floats(-50, 50))
def test_gan_shift_invariance_and_positivity(real, fake, shift):
    r = torch.tensor(real, dtype=torch.float64)
    f = torch.tensor(fake, dtype=torch.float64)
    for fn in (gan_loss_g, gan_loss_d):
        base = float(fn(r, f))
        assert base >= 0
        assert float(fn(r + shift, f + shift)) == pytest.approx(base, rel=1e-9, abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=6))
def test_gan_terms_coincide_on_identical_lists(logits):
    c = torch.tensor(logits, dtype=torch.float64)
    assert float(gan_loss_g(c, c)) == pytest.approx(float(gan_loss_d(c, c)), rel=1e-12)


def test_gan_empty():
    with pytest.raises(ValueError):
        gan_loss_g([], [1.0])
    with pytest.raises(ValueError):
        gan_loss_d([1.0], torch.zeros(0))


def test_total_loss():
    assert total_g_loss(LossWeights(1, 1, 1), 1, 2, 3) == 6
    assert total_g_loss(LossWeights(0, 0, 0), 1, 2, 3) == 0
    assert total_g_loss(LossWeights(), 0.1, 0.2, 1.3863) == pytest.approx(0.3069315, abs=1e-9)


@pytest.mark.parametrize("w", [-1.0, math.inf, math.nan])
def test_loss_weights_validation(w):
    with pytest.raises(ConfigError):
        LossWeights(w_gan=w)


# -- finite-difference checks (double precision) ---------------------------

def test_l1_gradient(rng):
    b = torch.from_numpy(rng.random((1, 3, 6, 6)))
    a = torch.from_numpy(rng.random((1, 3, 6, 6)))
    assert grad_check(lambda t: l1_loss(t, b), a, rng) <= 1e-3


def test_perceptual_gradient(bundle64, rng):
    hr = torch.from_numpy(rng.random((1, 3, 32, 32)))
    sr = torch.from_numpy(rng.random((1, 3, 32, 32)))
    assert grad_check(lambda t: perceptual_loss(bundle64.feature_net, t, hr), sr, rng) <= 1e-3


@pytest.mark.parametrize("fn", [gan_loss_g, gan_loss_d])
def test_gan_gradients(fn, rng):
    real = torch.from_numpy(rng.normal(size=6))
    fake = torch.from_numpy(rng.normal(size=6))
    assert grad_check(lambda t: fn(t, fake), real, rng) <= 1e-3
    assert grad_check(lambda t: fn(real, t), fake, rng) <= 1e-3


def test_total_gradient(rng):
    w = LossWeights()
    comps = torch.from_numpy(rng.random(3))
    assert grad_check(lambda t: total_g_loss(w, t[0], t[1], t[2]), comps, rng, points=3) <= 1e-3
