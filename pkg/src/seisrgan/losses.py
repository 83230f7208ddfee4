"""Generator and discriminator objectives.

The generator minimizes ``content + lambda_adv * adversarial + beta_pixel * pixel``.
The discriminator defaults to the least-squares (MSE-to-label) objective;
binary cross-entropy on sigmoid-squashed scores is kept as an alternative.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import torch

from .errors import NonFiniteLoss, ShapeMismatch
from .model import feature_extract

LOG_CLAMP = 1e-12


class AdversarialMode(str, enum.Enum):
    LEAST_SQUARES = "least_squares"
    BINARY_CROSS_ENTROPY = "binary_cross_entropy"

    @classmethod
    def parse(cls, value) -> "AdversarialMode":
        if isinstance(value, cls):
            return value
        aliases = {"lsgan": cls.LEAST_SQUARES, "mse": cls.LEAST_SQUARES, "bce": cls.BINARY_CROSS_ENTROPY}
        key = str(value).strip().lower()
        if key in aliases:
            return aliases[key]
        return cls(key)


@dataclass(frozen=True)
class LossWeights:
    lambda_adv: float = 0.001
    beta_pixel: float = 10.0

    def __post_init__(self):
        if self.lambda_adv < 0 or self.beta_pixel < 0:
            raise ValueError("loss weights must be nonnegative")


def _check_same_shape(a, b):
    if a.shape != b.shape:
        raise ShapeMismatch(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def content_loss(hr: torch.Tensor, gen: torch.Tensor, extractor) -> torch.Tensor:
    """Mean squared difference of feature maps (averaged over all feature elements).

    Raises WeightsUnavailable when ``extractor`` is None; the training loop
    then drops the term.
    """
    _check_same_shape(hr, gen)
    return torch.mean((feature_extract(extractor, hr) - feature_extract(extractor, gen)) ** 2)


def pixel_loss(hr: torch.Tensor, gen: torch.Tensor) -> torch.Tensor:
    _check_same_shape(hr, gen)
    return torch.mean((hr - gen) ** 2)


def _log_sigmoid(x):
    return torch.log(torch.clamp(torch.sigmoid(x), min=LOG_CLAMP))


def _log_one_minus_sigmoid(x):
    return torch.log(torch.clamp(1.0 - torch.sigmoid(x), min=LOG_CLAMP))


def adversarial_loss_generator(d_fake: torch.Tensor, mode=AdversarialMode.LEAST_SQUARES) -> torch.Tensor:
    mode = AdversarialMode.parse(mode)
    if mode is AdversarialMode.LEAST_SQUARES:
        return torch.mean((d_fake - 1.0) ** 2)
    return -torch.mean(_log_sigmoid(d_fake))


def discriminator_loss(d_real: torch.Tensor, d_fake: torch.Tensor,
                       mode=AdversarialMode.LEAST_SQUARES) -> torch.Tensor:
    mode = AdversarialMode.parse(mode)
    if mode is AdversarialMode.LEAST_SQUARES:
        return torch.mean((d_real - 1.0) ** 2) + torch.mean(d_fake ** 2)
    return -torch.mean(_log_sigmoid(d_real)) - torch.mean(_log_one_minus_sigmoid(d_fake))


def _is_finite(x) -> bool:
    if isinstance(x, torch.Tensor):
        return bool(torch.isfinite(x).all())
    return math.isfinite(x)


def total_generator_loss(content, adv, pixel, weights: LossWeights = LossWeights()):
    """``content + lambda_adv * adv + beta_pixel * pixel``; raises NonFiniteLoss on NaN/inf."""
    for name, value in (("content", content), ("adversarial", adv), ("pixel", pixel)):
        if not _is_finite(value):
            raise NonFiniteLoss(f"{name} loss is not finite: {float(value)}")
    total = content + weights.lambda_adv * adv + weights.beta_pixel * pixel
    if not _is_finite(total):
        raise NonFiniteLoss(f"total generator loss is not finite: {float(total)}")
    return total
