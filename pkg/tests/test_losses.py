import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from foga.config import ConfigError, LossMask, SsimConfig
from foga.losses import (
    consistency_loss,
    gradient_loss,
    intensity_loss,
    ssim,
    total_loss,
)

SMALL_SSIM = SsimConfig(window_size=3)


def rand(*shape, seed=0):
    g = torch.Generator().manual_seed(seed)
    return torch.rand(*shape, generator=g, dtype=torch.float64) * 2 - 1


def test_intensity_examples():
    gt = rand(2, 3, 5, 5)
    assert intensity_loss(gt, gt) == 0
    assert torch.isclose(intensity_loss(gt + 0.5, gt), torch.tensor(0.25, dtype=torch.float64))


@pytest.mark.parametrize("seed", range(20))
def test_intensity_matches_loop(seed):
    p, g = rand(1, 3, 6, 6, seed=seed), rand(1, 3, 6, 6, seed=seed + 100)
    assert abs(float(intensity_loss(p, g)) - oracles.intensity_loss(p.numpy(), g.numpy())) < 1e-6


def test_gradient_loss_zero_cases():
    gt = rand(1, 3, 7, 7)
    assert gradient_loss(gt, gt) == 0
    assert gradient_loss(gt + 0.3, gt) < 1e-12


def test_gradient_loss_needs_two_pixels():
    with pytest.raises(ConfigError):
        gradient_loss(torch.zeros(1, 1, 1, 5), torch.zeros(1, 1, 1, 5))


def test_gradient_loss_hand_4x4():
    p, g = rand(1, 1, 4, 4, seed=3), rand(1, 1, 4, 4, seed=4)
    assert abs(float(gradient_loss(p, g)) - oracles.gradient_loss(p.numpy(), g.numpy())) < 1e-6


@pytest.mark.parametrize("seed", range(20))
def test_gradient_loss_matches_loop(seed):
    p, g = rand(2, 3, 6, 5, seed=seed), rand(2, 3, 6, 5, seed=seed + 50)
    assert abs(float(gradient_loss(p, g)) - oracles.gradient_loss(p.numpy(), g.numpy())) < 1e-6


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (1, 2, 5, 5), elements=st.floats(-1, 1)), st.floats(-2, 2))
def test_gradient_loss_shift_invariant(gt, c):
    gt = torch.from_numpy(gt)
    assert float(gradient_loss(gt + c, gt)) < 1e-9


def test_ssim_identical_is_one():
    a = rand(2, 3, 16, 16)
    assert abs(float(ssim(a, a)) - 1) < 1e-12


@pytest.mark.parametrize("c1,c2", [(0.2, -0.4), (0.9, 0.1), (-1.0, 1.0)])
def test_ssim_constant_images_closed_form(c1, c2):
    a = torch.full((1, 1, 12, 12), c1, dtype=torch.float64)
    b = torch.full((1, 1, 12, 12), c2, dtype=torch.float64)
    stab = (0.01 * 2) ** 2
    expected = (2 * c1 * c2 + stab) / (c1**2 + c2**2 + stab)
    assert abs(float(ssim(a, b)) - expected) < 1e-9


def test_ssim_symmetric():
    a, b = rand(2, 3, 14, 14, seed=1), rand(2, 3, 14, 14, seed=2)
    assert abs(float(ssim(a, b)) - float(ssim(b, a))) < 1e-7


def test_ssim_window_too_large():
    with pytest.raises(ConfigError):
        ssim(torch.zeros(1, 1, 8, 8), torch.zeros(1, 1, 8, 8))


@pytest.mark.parametrize("seed", range(20))
def test_ssim_matches_loop(seed):
    a, b = rand(1, 2, 13, 12, seed=seed), rand(1, 2, 13, 12, seed=seed + 7)
    assert abs(float(ssim(a, b)) - oracles.ssim(a.numpy(), b.numpy())) < 1e-6


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (1, 1, 6, 6), elements=st.floats(-1, 1)),
       arrays(np.float64, (1, 1, 6, 6), elements=st.floats(-1, 1)))
def test_losses_non_negative(a, b):
    a, b = torch.from_numpy(a), torch.from_numpy(b)
    assert intensity_loss(a, b) >= 0
    assert gradient_loss(a, b) >= 0
    assert consistency_loss(a, b, SMALL_SSIM) >= 0
    assert consistency_loss(a, b, SMALL_SSIM) <= 2


def test_total_loss_all_perfect():
    y = rand(1, 3, 12, 12)
    out = total_loss((y.clone(), y.clone()), y, y)
    assert float(out.total) == pytest.approx(0, abs=1e-12)


def test_total_loss_identical_predictions_zero_consistency():
    p = rand(1, 3, 12, 12, seed=5)
    out = total_loss((p, p.clone()), rand(1, 3, 12, 12, seed=6), rand(1, 3, 12, 12, seed=7))
    assert float(out.l_con) == pytest.approx(0, abs=1e-12)


@pytest.mark.parametrize("term", ["grad", "pred", "fc", "con"])
def test_total_loss_masks(term):
    p1, pf = rand(1, 3, 12, 12, seed=1), rand(1, 3, 12, 12, seed=2)
    y1, yf = rand(1, 3, 12, 12, seed=3), rand(1, 3, 12, 12, seed=4)
    full = total_loss((p1, pf), y1, yf)
    out = total_loss((p1, pf), y1, yf, LossMask.without(term))
    if term == "grad":
        expected = intensity_loss(p1, y1) + intensity_loss(pf, yf) + full.l_con
    elif term == "pred":
        expected = full.l_fc + full.l_con
    elif term == "fc":
        expected = full.l_pred + full.l_con
    else:
        expected = full.l_pred + full.l_fc
    assert float(out.total) == float(expected)


def test_total_loss_default_is_unit_sum():
    p1, pf = rand(1, 3, 12, 12, seed=1), rand(1, 3, 12, 12, seed=2)
    y1, yf = rand(1, 3, 12, 12, seed=3), rand(1, 3, 12, 12, seed=4)
    out = total_loss((p1, pf), y1, yf)
    assert float(out.total) == pytest.approx(float(out.l_pred + out.l_fc + out.l_con), abs=1e-15)


def test_total_loss_everything_masked():
    y = rand(1, 3, 12, 12)
    with pytest.raises(ConfigError):
        total_loss((y, y), y, y, LossMask(use_pred=False, use_fc=False, use_con=False))


def test_shape_mismatch():
    with pytest.raises(ValueError):
        intensity_loss(torch.zeros(1, 3, 4, 4), torch.zeros(1, 3, 4, 5))
