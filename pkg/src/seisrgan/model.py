"""SRGAN generator, discriminator and frozen feature extractors.

The full generator upsamples 3x17x17 tiles to 3x136x136 through three x2
pixel-shuffle stages; the discriminator reduces 3x136x136 to a linear
1x9x9 score map. ``GeneratorSpec.reduced`` / ``DiscriminatorSpec.reduced``
shrink widths and depth for CPU-scale runs without changing the topology.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import torch
import torch.nn as nn

from .errors import ChannelNotDivisible, ShapeMismatch, WeightsUnavailable

LR_SIDE = 17
HR_SIDE = 136


@dataclass(frozen=True)
class GeneratorSpec:
    in_channels: int = 3
    width: int = 64
    head_kernel: int = 9
    n_residual_blocks: int = 16
    upsample_width: int = 256
    n_upsample: int = 3
    upscale: int = 2
    tail_kernel: int = 9
    global_skip: bool = True

    def __post_init__(self):
        if self.upsample_width % (self.upscale ** 2):
            raise ValueError("upsample_width must be divisible by upscale**2")
        if self.head_kernel % 2 == 0 or self.tail_kernel % 2 == 0:
            raise ValueError("kernel sizes must be odd")

    @classmethod
    def reduced(cls, divisor: int = 4) -> "GeneratorSpec":
        """Divide widths and residual depth by ``divisor`` (4 -> width 16, 4 blocks)."""
        base = cls()
        return cls(width=base.width // divisor,
                   n_residual_blocks=max(1, base.n_residual_blocks // divisor),
                   upsample_width=base.upsample_width // divisor)

    @property
    def scale(self) -> int:
        return self.upscale ** self.n_upsample


@dataclass(frozen=True)
class DiscriminatorSpec:
    in_channels: int = 3
    widths: tuple[int, ...] = (64, 128, 256, 512)
    negative_slope: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))

    @classmethod
    def reduced(cls, divisor: int = 4) -> "DiscriminatorSpec":
        return cls(widths=tuple(w // divisor for w in cls().widths))


def spec_hash(gen_spec: GeneratorSpec, disc_spec: DiscriminatorSpec) -> str:
    blob = json.dumps({"generator": asdict(gen_spec), "discriminator": asdict(disc_spec)},
                      sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def pixel_shuffle(x: torch.Tensor, r: int) -> torch.Tensor:
    """Depth-to-space: ``out[b, c, r*h+i, r*w+j] = x[b, c*r*r + i*r + j, h, w]``."""
    if x.dim() != 4:
        raise ShapeMismatch(f"pixel_shuffle expects a 4-D tensor, got {tuple(x.shape)}")
    b, crr, h, w = x.shape
    if crr % (r * r):
        raise ChannelNotDivisible(f"{crr} channels not divisible by r^2={r * r}")
    c = crr // (r * r)
    return (x.reshape(b, c, r, r, h, w)
             .permute(0, 1, 4, 2, 5, 3)
             .reshape(b, c, h * r, w * r))


class PixelShuffle(nn.Module):
    def __init__(self, upscale: int):
        super().__init__()
        self.upscale = upscale

    def forward(self, x):
        return pixel_shuffle(x, self.upscale)


class ResidualBlock(nn.Module):

    def __init__(self, channels: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(channels, channels, 3, 1, 1),
            nn.BatchNorm2d(channels),
            nn.PReLU(),
            nn.Conv2d(channels, channels, 3, 1, 1),
            nn.BatchNorm2d(channels),
        )

    def forward(self, x):
        return x + self.body(x)


class UpsampleBlock(nn.Module):

    def __init__(self, in_channels: int, out_channels: int, upscale: int):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, out_channels, 3, 1, 1)
        self.bn = nn.BatchNorm2d(out_channels)
        self.shuffle = PixelShuffle(upscale)
        self.act = nn.PReLU()

    def forward(self, x):
        return self.act(self.shuffle(self.bn(self.conv(x))))


def _init_weights(module: nn.Module) -> None:
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.kaiming_normal_(m.weight, mode="fan_in", nonlinearity="relu")
            nn.init.zeros_(m.bias)
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)
        elif isinstance(m, nn.PReLU):
            nn.init.constant_(m.weight, 0.25)


class Generator(nn.Module):
    """ResNet generator: 9x9 head, residual trunk, x2 pixel-shuffle stages, sigmoid tail."""

    def __init__(self, spec: GeneratorSpec | None = None):
        super().__init__()
        self.spec = spec = spec or GeneratorSpec()
        self.head = nn.Sequential(
            nn.Conv2d(spec.in_channels, spec.width, spec.head_kernel, 1, spec.head_kernel // 2),
            nn.PReLU(),
        )
        self.residuals = nn.Sequential(*[ResidualBlock(spec.width) for _ in range(spec.n_residual_blocks)])
        self.post = nn.Sequential(
            nn.Conv2d(spec.width, spec.width, 3, 1, 1),
            nn.BatchNorm2d(spec.width),
        )
        ups = []
        ch = spec.width
        for _ in range(spec.n_upsample):
            ups.append(UpsampleBlock(ch, spec.upsample_width, spec.upscale))
            ch = spec.upsample_width // spec.upscale ** 2
        self.upsample = nn.Sequential(*ups)
        self.tail = nn.Conv2d(ch, spec.in_channels, spec.tail_kernel, 1, spec.tail_kernel // 2)
        _init_weights(self)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != self.spec.in_channels:
            raise ShapeMismatch(f"generator expects Bx{self.spec.in_channels}xHxW, got {tuple(x.shape)}")
        head = self.head(x)
        y = self.post(self.residuals(head))
        if self.spec.global_skip:
            y = y + head
        return torch.sigmoid(self.tail(self.upsample(y)))


class Discriminator(nn.Module):
    """Four conv blocks (stride 1 then stride 2), then a linear 1-channel conv."""

    def __init__(self, spec: DiscriminatorSpec | None = None):
        super().__init__()
        self.spec = spec = spec or DiscriminatorSpec()
        layers = []
        ch = spec.in_channels
        for i, w in enumerate(spec.widths):
            layers.append(nn.Conv2d(ch, w, 3, 1, 1))
            if i > 0:
                layers.append(nn.BatchNorm2d(w))
            layers += [
                nn.LeakyReLU(spec.negative_slope),
                nn.Conv2d(w, w, 3, 2, 1),
                nn.BatchNorm2d(w),
                nn.LeakyReLU(spec.negative_slope),
            ]
            ch = w
        self.features = nn.Sequential(*layers)
        self.score = nn.Conv2d(ch, 1, 3, 1, 1)
        _init_weights(self)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != self.spec.in_channels:
            raise ShapeMismatch(f"discriminator expects Bx{self.spec.in_channels}xHxW, got {tuple(x.shape)}")
        return self.score(self.features(x))


def discriminator_output_side(n: int, n_blocks: int = 4) -> int:
    for _ in range(n_blocks):
        n = (n + 2 - 3) // 2 + 1
    return n


def generator_forward(generator: Generator, lr_batch: torch.Tensor) -> torch.Tensor:
    if lr_batch.dim() != 4 or tuple(lr_batch.shape[1:]) != (3, LR_SIDE, LR_SIDE):
        raise ShapeMismatch(f"expected Bx3x{LR_SIDE}x{LR_SIDE}, got {tuple(lr_batch.shape)}")
    return generator(lr_batch)


def discriminator_forward(discriminator: Discriminator, img_batch: torch.Tensor) -> torch.Tensor:
    if img_batch.dim() != 4 or tuple(img_batch.shape[1:]) != (3, HR_SIDE, HR_SIDE):
        raise ShapeMismatch(f"expected Bx3x{HR_SIDE}x{HR_SIDE}, got {tuple(img_batch.shape)}")
    return discriminator(img_batch)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def state_checksum(module: nn.Module) -> str:
    """SHA-256 over every parameter and buffer, in state-dict order."""
    h = hashlib.sha256()
    for name, t in module.state_dict().items():
        h.update(name.encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def parameter_checksum(module: nn.Module) -> str:
    h = hashlib.sha256()
    for name, p in module.named_parameters():
        h.update(name.encode())
        h.update(p.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


class FeatureExtractor(nn.Module):
    """Frozen feature network; gradients reach the input but never the weights."""

    def __init__(self, body: nn.Module):
        super().__init__()
        self.body = body
        for p in self.body.parameters():
            p.requires_grad_(False)
        super().train(False)

    def train(self, mode: bool = True):
        # always inference mode: weights and any statistics stay fixed
        return super().train(False)

    def forward(self, x):
        return self.body(x)


VGG19_FEATURE_LAYERS = 18
_VGG_MEAN = (0.485, 0.456, 0.406)
_VGG_STD = (0.229, 0.224, 0.225)


class _Standardize(nn.Module):
    def __init__(self):
        super().__init__()
        self.register_buffer("mean", torch.tensor(_VGG_MEAN).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(_VGG_STD).view(1, 3, 1, 1))

    def forward(self, x):
        return (x - self.mean) / self.std


def vgg19_extractor(weights_path, n_layers: int = VGG19_FEATURE_LAYERS,
                    vgg_input_norm: bool = False) -> FeatureExtractor:
    """First ``n_layers`` modules of torchvision's VGG-19 ``features`` stack.

    With the default 18 modules the cut falls after the ReLU following
    conv3_4 (two pooling stages, 256 channels at 1/4 resolution). The weights
    file may hold a full VGG-19 state dict or only the ``features`` part.
    """
    if weights_path is None:
        raise WeightsUnavailable("no VGG-19 weights file configured")
    path = Path(weights_path)
    if not path.is_file():
        raise WeightsUnavailable(f"VGG-19 weights not found at {path}")
    from torchvision.models import vgg19

    features = vgg19(weights=None).features
    try:
        if path.suffix == ".safetensors":
            from safetensors.torch import load_file
            state = load_file(str(path))
        else:
            state = torch.load(str(path), map_location="cpu", weights_only=True)
    except Exception as exc:  # corrupt or foreign file
        raise WeightsUnavailable(f"cannot read VGG-19 weights from {path}: {exc}") from exc
    if any(k.startswith("features.") for k in state):
        state = {k[len("features."):]: v for k, v in state.items() if k.startswith("features.")}
    try:
        features.load_state_dict(state)
    except RuntimeError as exc:
        raise WeightsUnavailable(f"{path} is not a VGG-19 state dict: {exc}") from exc
    body = nn.Sequential(*list(features.children())[:n_layers])
    if vgg_input_norm:
        body = nn.Sequential(_Standardize(), body)
    return FeatureExtractor(body)


def random_extractor(seed: int = 0, widths=(16, 32)) -> FeatureExtractor:
    """Small fixed random-weight conv stack standing in for VGG-19 in tests."""
    gen = torch.Generator().manual_seed(seed)
    layers = []
    ch = 3
    for i, w in enumerate(widths):
        conv = nn.Conv2d(ch, w, 3, 2 if i else 1, 1)
        with torch.no_grad():
            conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) * (2.0 / (ch * 9)) ** 0.5)
            conv.bias.zero_()
        layers += [conv, nn.ReLU()]
        ch = w
    return FeatureExtractor(nn.Sequential(*layers))


def feature_extract(extractor: FeatureExtractor | None, img: torch.Tensor) -> torch.Tensor:
    if extractor is None:
        raise WeightsUnavailable("no feature extractor loaded")
    return extractor(img)


CHECKPOINT_MANIFEST = "manifest.txt"


def _atomic_write_bytes(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def save_checkpoint(directory, generator: Generator, discriminator: Discriminator, *,
                    epoch: int, loss_mode: str) -> Path:
    """Write ``generator.safetensors``, ``discriminator.safetensors`` and a manifest.

    Every file is written to a temporary name and renamed into place; the
    manifest goes last so a directory with a manifest is always complete.
    """
    from safetensors.torch import save

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, net in (("generator", generator), ("discriminator", discriminator)):
        tensors = {k: v.detach().cpu().contiguous() for k, v in net.state_dict().items()}
        _atomic_write_bytes(directory / f"{name}.safetensors", save(tensors))
    lines = [
        f"epoch = {epoch}",
        f"spec_hash = {spec_hash(generator.spec, discriminator.spec)}",
        f"loss_mode = {loss_mode}",
        f"generator_spec = {json.dumps(asdict(generator.spec), sort_keys=True)}",
        f"discriminator_spec = {json.dumps(asdict(discriminator.spec), sort_keys=True)}",
    ]
    _atomic_write_bytes(directory / CHECKPOINT_MANIFEST, ("\n".join(lines) + "\n").encode())
    return directory


def read_checkpoint_manifest(directory) -> dict:
    path = Path(directory) / CHECKPOINT_MANIFEST
    if not path.is_file():
        raise FileNotFoundError(f"no checkpoint manifest at {path}")
    out = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def load_checkpoint(directory):
    """Rebuild both networks from a checkpoint directory.

    Returns ``(generator, discriminator, manifest)``.
    """
    from safetensors.torch import load_file

    directory = Path(directory)
    manifest = read_checkpoint_manifest(directory)
    gspec_d = json.loads(manifest["generator_spec"])
    dspec_d = json.loads(manifest["discriminator_spec"])
    gen = Generator(GeneratorSpec(**gspec_d))
    disc = Discriminator(DiscriminatorSpec(**dspec_d))
    if spec_hash(gen.spec, disc.spec) != manifest["spec_hash"]:
        raise ValueError(f"{directory}: spec hash mismatch")
    gen.load_state_dict(load_file(str(directory / "generator.safetensors")))
    disc.load_state_dict(load_file(str(directory / "discriminator.safetensors")))
    manifest["epoch"] = int(manifest["epoch"])
    return gen, disc, manifest
