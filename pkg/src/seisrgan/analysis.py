"""Evaluation against the linear-interpolation baseline.

All time-domain comparisons happen in physical units after decoding.
Fourier amplitude spectra use the engineering-seismology convention
``dt * |rfft(x)|`` with no taper.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .codec import STRIDE, encode_record
from .errors import LengthMismatch, TooFewSamples
from .gm_io import CHANNELS, GroundMotionRecord
from .metrics import SsimParams, mse_image, psnr, ssim, tile_image


@dataclass(frozen=True, eq=False)
class SpectrumResult:
    frequencies: np.ndarray
    amplitudes: np.ndarray

    def __post_init__(self):
        if self.frequencies.shape != self.amplitudes.shape:
            raise LengthMismatch("frequencies and amplitudes differ in length")


def linear_interp_upsample(lr, factor: int = STRIDE, target_len: int | None = None) -> np.ndarray:
    """Piecewise-linear upsampling that reproduces every anchor exactly.

    ``out[factor*k] == lr[k]``; past the last anchor the final value is held.
    ``target_len`` defaults to ``(n - 1) * factor + 1``.
    """
    lr = np.asarray(lr, dtype=np.float64)
    n = lr.size
    if n < 2:
        raise TooFewSamples(f"need at least 2 samples to interpolate, got {n}")
    if factor < 1:
        raise ValueError("factor must be >= 1")
    if target_len is None:
        target_len = (n - 1) * factor + 1
    i = np.arange(target_len)
    k = np.minimum(i // factor, n - 1)
    frac = (i % factor) / factor
    nxt = np.minimum(k + 1, n - 1)
    out = lr[k] + frac * (lr[nxt] - lr[k])
    out[i >= (n - 1) * factor] = lr[-1]
    return out


def time_domain_mse(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise LengthMismatch(f"sequence lengths differ: {a.shape} vs {b.shape}")
    d = a - b
    return float(np.mean(d * d))


def fourier_amplitude_spectrum(acc, dt: float) -> SpectrumResult:
    x = np.asarray(acc, dtype=np.float64)
    if x.size < 2:
        raise TooFewSamples("spectrum needs at least 2 samples")
    if not dt > 0:
        raise ValueError("dt must be positive")
    amps = dt * np.abs(np.fft.rfft(x))
    freqs = np.fft.rfftfreq(x.size, dt)
    return SpectrumResult(freqs, amps)


def decimate_record(record: GroundMotionRecord, stride: int = STRIDE) -> GroundMotionRecord:
    """Stride decimation in time, the record a 64x slower sensor would see."""
    return GroundMotionRecord.from_channels(record.record_id, record.dt * stride,
                                           record.channels()[:, ::stride], record.units)


def interpolate_record(lr_record: GroundMotionRecord, target_len: int,
                       factor: int = STRIDE) -> GroundMotionRecord:
    data = lr_record.channels()
    if data.shape[1] < 2:
        raise TooFewSamples(f"{lr_record.record_id}: LR record has fewer than 2 samples")
    up = np.stack([linear_interp_upsample(ch, factor, target_len) for ch in data])
    return GroundMotionRecord.from_channels(lr_record.record_id, lr_record.dt / factor, up, lr_record.units)


@dataclass
class ImageScores:
    ssim: float
    psnr: float
    mse: float


@dataclass
class ComparisonReport:
    record_id: str
    dt: float
    channel_mse: dict[str, tuple[float, float]]  # channel -> (srgan, interpolation)
    tile_scores: list[tuple[ImageScores, ImageScores]]  # per tile: (srgan, interpolation)
    spectra: dict[str, tuple[SpectrumResult, SpectrumResult, SpectrumResult]]  # real, generated, interp
    interpolated: GroundMotionRecord = field(repr=False, default=None)

    def image_means(self, which: int = 0) -> ImageScores:
        rows = [t[which] for t in self.tile_scores]
        return ImageScores(float(np.mean([r.ssim for r in rows])),
                           float(np.mean([r.psnr for r in rows])),
                           float(np.mean([r.mse for r in rows])))

    def srgan_wins(self) -> dict[str, bool]:
        return {ch: g < i for ch, (g, i) in self.channel_mse.items()}


def _image_scores(real_tiles, other_tiles, params: SsimParams) -> list[ImageScores]:
    out = []
    for rt, ot in zip(real_tiles, other_tiles):
        a, b = tile_image(rt), tile_image(ot)
        out.append(ImageScores(ssim(a, b, params), psnr(a, b), mse_image(a, b)))
    return out


def mean_image_scores(real, generated, params: SsimParams = SsimParams()) -> ImageScores:
    """Mean SSIM/PSNR/MSE over a batch of float tiles shaped ``(N, 3, side, side)``."""
    from .codec import ImageTile

    real = np.asarray(real, dtype=np.float64)
    generated = np.clip(np.asarray(generated, dtype=np.float64), 0.0, 1.0)
    if real.shape != generated.shape or real.ndim != 4 or real.shape[0] == 0:
        raise LengthMismatch(f"tile batches differ or are empty: {real.shape} vs {generated.shape}")
    rows = _image_scores([ImageTile(t) for t in real], [ImageTile(t) for t in generated], params)
    return ImageScores(float(np.mean([r.ssim for r in rows])),
                       float(np.mean([r.psnr for r in rows])),
                       float(np.mean([r.mse for r in rows])))


def build_comparison_report(record: GroundMotionRecord, generated_record: GroundMotionRecord,
                            lr_record: GroundMotionRecord,
                            ssim_params: SsimParams = SsimParams()) -> ComparisonReport:
    """Compare a generated record and the interpolation baseline with the real record.

    Image metrics re-encode both candidates with the real record's
    normalization, so all three share one pixel scale.
    """
    n = len(record)
    if len(generated_record) != n:
        raise LengthMismatch(f"generated record has {len(generated_record)} samples, expected {n}")
    factor = int(round(lr_record.dt / record.dt))
    interp = interpolate_record(lr_record, n, factor)

    real = record.channels()
    gen = generated_record.channels()
    itp = interp.channels()
    channel_mse = {ch: (time_domain_mse(real[c], gen[c]), time_domain_mse(real[c], itp[c]))
                   for c, ch in enumerate(CHANNELS)}

    real_tiles, metas = encode_record(record)
    norms = metas[0].norms
    gen_tiles, _ = encode_record(generated_record, norms=norms)
    itp_tiles, _ = encode_record(interp, norms=norms)
    tile_scores = list(zip(_image_scores(real_tiles, gen_tiles, ssim_params),
                           _image_scores(real_tiles, itp_tiles, ssim_params)))

    spectra = {ch: (fourier_amplitude_spectrum(real[c], record.dt),
                    fourier_amplitude_spectrum(gen[c], record.dt),
                    fourier_amplitude_spectrum(itp[c], record.dt))
               for c, ch in enumerate(CHANNELS)} if n >= 2 else {}
    return ComparisonReport(record.record_id, record.dt, channel_mse, tile_scores, spectra, interp)


def _csv(rows, header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def format_number(x: float) -> str:
    return "inf" if np.isinf(x) else repr(float(x))


def comparison_csv(reports) -> str:
    rows = [(r.record_id, ch, format_number(g), format_number(i)) for r in reports for ch, (g, i) in r.channel_mse.items()]
    return _csv(rows, ("record_id", "channel", "mse_srgan", "mse_interp"))


def metrics_csv(reports, which: int = 0) -> str:
    """``record_id,tile,ssim,psnr,mse`` rows for the generated (0) or interpolated (1) tiles."""
    rows = [(r.record_id, k, format_number(s[which].ssim), format_number(s[which].psnr), format_number(s[which].mse))
            for r in reports for k, s in enumerate(r.tile_scores)]
    return _csv(rows, ("record_id", "tile", "ssim", "psnr", "mse"))


def spectrum_csv(report: ComparisonReport, channel: str) -> str:
    real, gen, itp = report.spectra[channel]
    rows = [(format_number(f), format_number(a), format_number(b), format_number(c))
            for f, a, b, c in zip(real.frequencies, real.amplitudes, gen.amplitudes, itp.amplitudes)]
    return _csv(rows, ("freq_hz", "amp_real", "amp_generated", "amp_interp"))


def timeseries_csv(record: GroundMotionRecord, generated: GroundMotionRecord,
                   interpolated: GroundMotionRecord) -> str:
    t = np.arange(len(record)) * record.dt
    header = ["time_s"] + [f"{ch}_{kind}" for ch in CHANNELS for kind in ("real", "generated", "interp")]
    cols = [t]
    for c in range(3):
        cols += [record.channels()[c], generated.channels()[c], interpolated.channels()[c]]
    rows = [[format_number(v) for v in row] for row in zip(*cols)]
    return _csv(rows, header)
