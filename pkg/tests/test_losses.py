import math

import pytest
import torch
from hypothesis import given, settings, strategies as st

from gradcheck_util import input_difference_check

from seisrgan.errors import NonFiniteLoss, ShapeMismatch, WeightsUnavailable
from seisrgan.losses import (
    AdversarialMode,
    LossWeights,
    adversarial_loss_generator,
    content_loss,
    discriminator_loss,
    pixel_loss,
    total_generator_loss,
)
from seisrgan.model import random_extractor

LS = AdversarialMode.LEAST_SQUARES
BCE = AdversarialMode.BINARY_CROSS_ENTROPY


def full(v, shape=(2, 1, 9, 9)):
    return torch.full(shape, float(v), dtype=torch.float64)


def test_pixel_loss_examples():
    a = torch.rand(1, 3, 8, 8)
    assert pixel_loss(a, a) == 0
    assert pixel_loss(torch.ones(1, 3, 4, 4), torch.zeros(1, 3, 4, 4)) == 1
    with pytest.raises(ShapeMismatch):
        pixel_loss(torch.ones(1, 3, 4, 4), torch.ones(1, 3, 4, 5))


def test_pixel_loss_loop_oracle():
    g = torch.Generator().manual_seed(0)
    a = torch.rand(2, 3, 5, 6, generator=g, dtype=torch.float64)
    b = torch.rand(2, 3, 5, 6, generator=g, dtype=torch.float64)
    total = 0.0
    count = 0
    for v1, v2 in zip(a.flatten().tolist(), b.flatten().tolist()):
        total += (v1 - v2) ** 2
        count += 1
    assert abs(pixel_loss(a, b).item() - total / count) < 1e-9


def test_content_loss_loop_oracle():
    phi = random_extractor(1).double()
    g = torch.Generator().manual_seed(1)
    hr = torch.rand(1, 3, 20, 20, generator=g, dtype=torch.float64)
    gen = torch.rand(1, 3, 20, 20, generator=g, dtype=torch.float64)
    fa, fb = phi(hr), phi(gen)
    s = 0.0
    n = 0
    for c in range(fa.shape[1]):
        for x in range(fa.shape[2]):
            for y in range(fa.shape[3]):
                s += (fa[0, c, x, y].item() - fb[0, c, x, y].item()) ** 2
                n += 1
    assert abs(content_loss(hr, gen, phi).item() - s / n) < 1e-6
    assert content_loss(hr, hr, phi).item() == 0
    assert content_loss(hr, gen, phi).item() >= 0


def test_content_loss_without_extractor():
    with pytest.raises(WeightsUnavailable):
        content_loss(torch.zeros(1, 3, 8, 8), torch.zeros(1, 3, 8, 8), None)


def test_adversarial_generator_examples():
    assert adversarial_loss_generator(full(1), LS).item() == 0
    assert adversarial_loss_generator(full(0.5), LS).item() == 0.25
    # sigmoid(0) = 0.5 -> -log(0.5)
    assert abs(adversarial_loss_generator(full(0), BCE).item() - math.log(2)) < 1e-9


def test_discriminator_examples():
    assert discriminator_loss(full(1), full(0), LS).item() == 0
    assert discriminator_loss(full(0), full(1), LS).item() == 2
    assert abs(discriminator_loss(full(0), full(0), BCE).item() - 2 * math.log(2)) < 1e-9


def test_bce_saturation_is_finite():
    big = full(1e4)
    assert math.isfinite(adversarial_loss_generator(-big, BCE).item())
    assert math.isfinite(discriminator_loss(-big, big, BCE).item())
    assert adversarial_loss_generator(-big, BCE).item() == pytest.approx(-math.log(1e-12))


def test_mode_parse():
    assert AdversarialMode.parse("least_squares") is LS
    assert AdversarialMode.parse("BCE") is BCE
    with pytest.raises(ValueError):
        AdversarialMode.parse("wasserstein")


def test_total_examples():
    w = LossWeights(0.001, 10.0)
    assert total_generator_loss(1.0, 2.0, 0.5, w) == pytest.approx(6.002, abs=1e-12)
    assert total_generator_loss(0.0, 0.0, 0.0, w) == 0
    assert total_generator_loss(0.7, 3.0, 9.0, LossWeights(0, 0)) == 0.7


def test_total_linearity_unit_vectors():
    w = LossWeights(0.003, 7.0)
    assert total_generator_loss(1.0, 0.0, 0.0, w) == 1.0
    assert total_generator_loss(0.0, 1.0, 0.0, w) == 0.003
    assert total_generator_loss(0.0, 0.0, 1.0, w) == 7.0


def test_total_non_finite():
    with pytest.raises(NonFiniteLoss):
        total_generator_loss(float("nan"), 0.0, 0.0)
    with pytest.raises(NonFiniteLoss):
        total_generator_loss(torch.tensor(1.0), torch.tensor(float("inf")), torch.tensor(0.0))


def test_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(-1.0, 1.0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=4, max_size=4), st.lists(st.floats(-5, 5), min_size=4, max_size=4))
def test_losses_nonnegative_and_ls_symmetry(r, f):
    dr = torch.tensor(r, dtype=torch.float64)
    df = torch.tensor(f, dtype=torch.float64)
    for mode in (LS, BCE):
        assert discriminator_loss(dr, df, mode).item() >= 0
        assert adversarial_loss_generator(df, mode).item() >= 0
    swapped = discriminator_loss(1 - df, 1 - dr, LS)
    assert abs(swapped.item() - discriminator_loss(dr, df, LS).item()) < 1e-12


@pytest.mark.parametrize("name", ["pixel", "content", "adv_ls", "adv_bce", "disc_ls", "disc_bce", "total"])
def test_loss_gradients_4x4(name):
    g = torch.Generator().manual_seed(11)
    hr = torch.rand(1, 3, 4, 4, generator=g, dtype=torch.float64)
    x0 = torch.rand(1, 3, 4, 4, generator=g, dtype=torch.float64)
    other = torch.randn(1, 1, 4, 4, generator=g, dtype=torch.float64)
    phi = random_extractor(2).double()
    fns = {
        "pixel": lambda x: pixel_loss(hr, x),
        "content": lambda x: content_loss(hr, x, phi),
        "adv_ls": lambda x: adversarial_loss_generator(x, LS),
        "adv_bce": lambda x: adversarial_loss_generator(x, BCE),
        "disc_ls": lambda x: discriminator_loss(x[:, :1], other, LS) + discriminator_loss(other, x[:, 1:2], LS),
        "disc_bce": lambda x: discriminator_loss(x[:, :1], other, BCE) + discriminator_loss(other, x[:, 1:2], BCE),
        "total": lambda x: total_generator_loss(content_loss(hr, x, phi), adversarial_loss_generator(x, LS),
                                                pixel_loss(hr, x)),
    }
    assert input_difference_check(fns[name], x0) < 1e-3
