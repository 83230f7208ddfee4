"""Adversarial training loop, learning-rate schedule and loss history."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .codec import HR_SIDE, LR_SIDE, TileMetadata, encode_pairs
from .errors import EmptyDataset, NonFiniteLoss, WeightsUnavailable
from .losses import (
    AdversarialMode,
    LossWeights,
    adversarial_loss_generator,
    content_loss,
    discriminator_loss,
    pixel_loss,
    total_generator_loss,
)
from .model import Discriminator, DiscriminatorSpec, Generator, GeneratorSpec, save_checkpoint

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 32
    beta1: float = 0.5
    beta2: float = 0.999
    decay_start_epoch: int = 250
    total_epochs: int = 500
    lambda_adv: float = 0.001
    beta_pixel: float = 10.0
    adversarial_mode: str = "least_squares"
    seed: int = 0
    reduced_model: bool = False
    reduction_divisor: int = 4
    checkpoint_every: int = 50

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.total_epochs < 1:
            raise ValueError("total_epochs must be >= 1")
        if not 0 <= self.decay_start_epoch <= self.total_epochs:
            raise ValueError("decay_start_epoch must lie in [0, total_epochs]")
        self.adversarial_mode = AdversarialMode.parse(self.adversarial_mode).value

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.lambda_adv, self.beta_pixel)

    def generator_spec(self) -> GeneratorSpec:
        return GeneratorSpec.reduced(self.reduction_divisor) if self.reduced_model else GeneratorSpec()

    def discriminator_spec(self) -> DiscriminatorSpec:
        return DiscriminatorSpec.reduced(self.reduction_divisor) if self.reduced_model else DiscriminatorSpec()

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    """Constant until ``decay_start_epoch``, then linear to zero at ``total_epochs``."""
    if not 1 <= epoch <= cfg.total_epochs:
        raise ValueError(f"epoch {epoch} outside [1, {cfg.total_epochs}]")
    if epoch < cfg.decay_start_epoch or cfg.decay_start_epoch == cfg.total_epochs:
        return cfg.learning_rate
    return cfg.learning_rate * (cfg.total_epochs - epoch) / (cfg.total_epochs - cfg.decay_start_epoch)


@dataclass
class TileSet:
    """Paired LR/HR float tiles as tensors, with the HR metadata of each tile."""

    lr: torch.Tensor
    hr: torch.Tensor
    metas: list[TileMetadata] = field(default_factory=list)

    def __post_init__(self):
        if self.lr.shape[0] != self.hr.shape[0]:
            raise ValueError("LR and HR tile counts differ")
        if tuple(self.lr.shape[1:]) != (3, LR_SIDE, LR_SIDE) or tuple(self.hr.shape[1:]) != (3, HR_SIDE, HR_SIDE):
            raise ValueError(f"bad tile shapes {tuple(self.lr.shape)} / {tuple(self.hr.shape)}")

    def __len__(self):
        return self.lr.shape[0]

    @classmethod
    def from_records(cls, records, dtype=torch.float32) -> "TileSet":
        lrs, hrs, metas = [], [], []
        for rec in records:
            hr, lr, m = encode_pairs(rec)
            hrs += [t.pixels for t in hr]
            lrs += [t.pixels for t in lr]
            metas += m
        if not metas:
            return cls(torch.empty(0, 3, LR_SIDE, LR_SIDE, dtype=dtype),
                       torch.empty(0, 3, HR_SIDE, HR_SIDE, dtype=dtype), [])
        return cls(torch.as_tensor(np.stack(lrs), dtype=dtype),
                   torch.as_tensor(np.stack(hrs), dtype=dtype), metas)

    def subset(self, idx: Sequence[int]) -> "TileSet":
        idx = list(idx)
        return TileSet(self.lr[idx], self.hr[idx], [self.metas[i] for i in idx] if self.metas else [])


@dataclass
class EpochLog:
    epoch: int
    gen_train: float
    gen_test: float
    disc: float
    lr: float
    content: float
    adv: float
    pixel: float


HISTORY_COLUMNS = ("epoch", "gen_train", "gen_test", "disc", "lr")
COMPONENT_COLUMNS = ("epoch", "content", "adv", "pixel")


def _fmt(x) -> str:
    return repr(float(x)) if not isinstance(x, int) else str(x)


@dataclass
class LossHistory:
    epochs: list[EpochLog] = field(default_factory=list)

    def append(self, entry: EpochLog) -> None:
        expected = len(self.epochs) + 1
        if entry.epoch != expected:
            raise ValueError(f"expected epoch {expected}, got {entry.epoch}")
        self.epochs.append(entry)

    def __len__(self):
        return len(self.epochs)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(e, name) for e in self.epochs], dtype=np.float64)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        for e in self.epochs:
            w.writerow([_fmt(getattr(e, c)) for c in HISTORY_COLUMNS])
        return buf.getvalue()

    def components_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COMPONENT_COLUMNS)
        for e in self.epochs:
            w.writerow([_fmt(getattr(e, c)) for c in COMPONENT_COLUMNS])
        return buf.getvalue()

    def write(self, directory) -> tuple[Path, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        main = directory / "loss_history.csv"
        comp = directory / "loss_components.csv"
        for path, text in ((main, self.to_csv()), (comp, self.components_csv())):
            tmp = path.with_name(path.name + ".tmp")
            tmp.write_text(text, encoding="utf-8")
            tmp.replace(path)
        return main, comp


@dataclass
class TrainResult:
    generator: Generator
    discriminator: Discriminator
    history: LossHistory
    checkpoints: dict[str, Path] = field(default_factory=dict)


def build_models(cfg: TrainConfig) -> tuple[Generator, Discriminator]:
    torch.manual_seed(cfg.seed)
    return Generator(cfg.generator_spec()), Discriminator(cfg.discriminator_spec())


def _generator_terms(generator, discriminator, lr, hr, extractor, mode):
    fake = generator(lr)
    pix = pixel_loss(hr, fake)
    cont = content_loss(hr, fake, extractor) if extractor is not None else torch.zeros((), dtype=fake.dtype)
    adv = adversarial_loss_generator(discriminator(fake), mode)
    return fake, cont, adv, pix


def evaluate_split(generator, discriminator, tiles: TileSet, weights: LossWeights = LossWeights(),
                   mode=AdversarialMode.LEAST_SQUARES, extractor=None, batch_size: int = 32,
                   components: bool = False):
    """Mean generator objective over a split, with both networks in inference mode.

    With ``components=True`` returns ``(total, content, adv, pixel)`` means.
    """
    if tiles is None or len(tiles) == 0:
        raise EmptyDataset("cannot evaluate an empty split")
    modes = (generator.training, discriminator.training)
    generator.eval()
    discriminator.eval()
    sums = np.zeros(4)
    try:
        with torch.no_grad():
            for start in range(0, len(tiles), batch_size):
                lr = tiles.lr[start:start + batch_size]
                hr = tiles.hr[start:start + batch_size]
                _, cont, adv, pix = _generator_terms(generator, discriminator, lr, hr, extractor, mode)
                total = total_generator_loss(cont, adv, pix, weights)
                n = lr.shape[0]
                sums += n * np.array([float(total), float(cont), float(adv), float(pix)])
    finally:
        generator.train(modes[0])
        discriminator.train(modes[1])
    means = sums / len(tiles)
    return tuple(float(m) for m in means) if components else float(means[0])


def generate(generator, lr: torch.Tensor, batch_size: int = 32) -> torch.Tensor:
    """Run the generator in inference mode over a batch of LR tiles."""
    was_training = generator.training
    generator.eval()
    try:
        with torch.no_grad():
            outs = [generator(lr[i:i + batch_size]) for i in range(0, lr.shape[0], batch_size)]
    finally:
        generator.train(was_training)
    return torch.cat(outs) if outs else lr.new_empty(0, 3, HR_SIDE, HR_SIDE)


def train(cfg: TrainConfig, train_tiles: TileSet, test_tiles: TileSet | None = None, *,
          extractor=None, checkpoint_dir=None,
          on_epoch: Callable[[EpochLog], None] | None = None,
          monitor: Callable[[EpochLog, Generator, Discriminator], None] | None = None) -> TrainResult:
    """Train generator and discriminator alternately, one step each per batch.

    The generator step minimizes the weighted content/adversarial/pixel sum
    with the discriminator frozen; the discriminator step then sees the
    detached generator output. Without a feature extractor the content term
    is dropped (zero). Results are bitwise reproducible for a fixed seed.
    ``monitor`` sees the networks after each epoch and must not modify them.
    """
    if train_tiles is None or len(train_tiles) == 0:
        raise EmptyDataset("no training tiles")
    if extractor is None:
        log.warning("no feature extractor: training without the content loss term")
    mode = AdversarialMode.parse(cfg.adversarial_mode)
    weights = cfg.weights
    prev_det = torch.are_deterministic_algorithms_enabled()
    torch.use_deterministic_algorithms(True)
    try:
        generator, discriminator = build_models(cfg)
        dtype = train_tiles.lr.dtype
        generator.to(dtype)
        discriminator.to(dtype)
        opt_g = torch.optim.Adam(generator.parameters(), lr=cfg.learning_rate, betas=(cfg.beta1, cfg.beta2))
        opt_d = torch.optim.Adam(discriminator.parameters(), lr=cfg.learning_rate, betas=(cfg.beta1, cfg.beta2))
        shuffler = torch.Generator().manual_seed(cfg.seed + 1)
        history = LossHistory()
        checkpoints: dict[str, Path] = {}
        ckpt_root = Path(checkpoint_dir) if checkpoint_dir is not None else None
        best = math.inf
        n = len(train_tiles)

        for epoch in range(1, cfg.total_epochs + 1):
            lr_now = lr_schedule(epoch, cfg)
            for opt in (opt_g, opt_d):
                for group in opt.param_groups:
                    group["lr"] = lr_now
            generator.train()
            discriminator.train()
            sums = np.zeros(5)
            order = torch.randperm(n, generator=shuffler)
            for start in range(0, n, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                lr_b, hr_b = train_tiles.lr[idx], train_tiles.hr[idx]
                b = lr_b.shape[0]

                discriminator.requires_grad_(False)
                fake, cont, adv, pix = _generator_terms(generator, discriminator, lr_b, hr_b, extractor, mode)
                try:
                    total = total_generator_loss(cont, adv, pix, weights)
                except NonFiniteLoss as exc:
                    raise NonFiniteLoss(f"epoch {epoch}: {exc}", checkpoints.get("last_good"), history) from exc
                opt_g.zero_grad(set_to_none=True)
                total.backward()
                opt_g.step()
                discriminator.requires_grad_(True)

                d_loss = discriminator_loss(discriminator(hr_b), discriminator(fake.detach()), mode)
                if not torch.isfinite(d_loss):
                    raise NonFiniteLoss(f"epoch {epoch}: discriminator loss is not finite",
                                        checkpoints.get("last_good"), history)
                opt_d.zero_grad(set_to_none=True)
                d_loss.backward()
                opt_d.step()

                sums += b * np.array([t.item() for t in (total, d_loss, cont, adv, pix)])

            means = sums / n
            gen_test = (evaluate_split(generator, discriminator, test_tiles, weights, mode, extractor,
                                       cfg.batch_size)
                        if test_tiles is not None and len(test_tiles) else math.nan)
            entry = EpochLog(epoch, float(means[0]), gen_test, float(means[1]), lr_now,
                             float(means[2]), float(means[3]), float(means[4]))
            history.append(entry)
            if on_epoch is not None:
                on_epoch(entry)
            if monitor is not None:
                monitor(entry, generator, discriminator)

            if ckpt_root is not None:
                score = gen_test if not math.isnan(gen_test) else entry.gen_train
                if score < best:
                    best = score
                    checkpoints["best"] = checkpoints["last_good"] = save_checkpoint(
                        ckpt_root / "best", generator, discriminator, epoch=epoch, loss_mode=mode.value)
                if cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
                    checkpoints[f"epoch_{epoch:04d}"] = checkpoints["last_good"] = save_checkpoint(
                        ckpt_root / f"epoch_{epoch:04d}", generator, discriminator,
                        epoch=epoch, loss_mode=mode.value)

        if ckpt_root is not None:
            checkpoints["last"] = checkpoints["last_good"] = save_checkpoint(
                ckpt_root / "last", generator, discriminator, epoch=cfg.total_epochs, loss_mode=mode.value)
        return TrainResult(generator, discriminator, history, checkpoints)
    finally:
        torch.use_deterministic_algorithms(prev_det)


def load_extractor(weights_path=None, vgg_input_norm: bool = False):
    """VGG-19 extractor when weights are available, else None (content term disabled)."""
    from .model import vgg19_extractor

    if weights_path is None:
        return None
    try:
        return vgg19_extractor(weights_path, vgg_input_norm=vgg_input_norm)
    except WeightsUnavailable as exc:
        log.warning("%s; content loss disabled", exc)
        return None
