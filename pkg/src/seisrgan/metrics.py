"""SSIM, PSNR and MSE on 8-bit RGB images (``M x N x O`` arrays, max value 255)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import OutOfRange, ShapeMismatch, WindowTooLarge

MAX_VALUE = 255.0


@dataclass(frozen=True)
class SsimParams:
    c1: float = (0.01 * MAX_VALUE) ** 2
    c2: float = (0.03 * MAX_VALUE) ** 2
    c3: float = (0.03 * MAX_VALUE) ** 2 / 2
    window: int | None = None  # None: whole-image statistics; k: sliding k x k windows

    def __post_init__(self):
        if min(self.c1, self.c2, self.c3) <= 0:
            raise ValueError("SSIM stabilizers must be positive")
        if self.window is not None and self.window < 1:
            raise ValueError("window must be a positive size")


def _as_image(a) -> np.ndarray:
    arr = np.asarray(a)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ShapeMismatch(f"expected an M x N x O image, got shape {arr.shape}")
    if arr.size and (arr.min() < 0 or arr.max() > MAX_VALUE):
        raise OutOfRange("pixel values must lie in [0, 255]")
    return arr


def _pair(a, b):
    a, b = _as_image(a), _as_image(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def tile_image(tile) -> np.ndarray:
    """8-bit ``M x N x 3`` view of an ImageTile (quantizing float tiles)."""
    from .codec import quantize

    return np.ascontiguousarray(quantize(tile).pixels.transpose(1, 2, 0))


def mse_image(a, b) -> float:
    a, b = _pair(a, b)
    d = a.astype(np.int64) - b.astype(np.int64) if a.dtype.kind in "ui" and b.dtype.kind in "ui" \
        else a.astype(np.float64) - b.astype(np.float64)
    return float(np.sum(d * d)) / d.size


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB; identical images give ``inf``."""
    m = mse_image(a, b)
    if m == 0:
        return float("inf")
    return 10.0 * np.log10(MAX_VALUE ** 2 / m)


def _ssim_stats(mu_a, mu_b, var_a, var_b, cov, p: SsimParams):
    sd_a = np.sqrt(np.maximum(var_a, 0.0))
    sd_b = np.sqrt(np.maximum(var_b, 0.0))
    lum = (2 * mu_a * mu_b + p.c1) / (mu_a ** 2 + mu_b ** 2 + p.c1)
    con = (2 * sd_a * sd_b + p.c2) / (var_a + var_b + p.c2)
    struct = (cov + p.c3) / (sd_a * sd_b + p.c3)
    return lum * con * struct


def ssim(a, b, params: SsimParams = SsimParams()) -> float:
    """Luminance x contrast x structure similarity, averaged over channels.

    Statistics are population moments. With ``params.window`` set, every
    ``k x k`` window (stride 1) is scored and windows are averaged per
    channel before averaging channels.
    """
    a, b = _pair(a, b)
    a = a.astype(np.float64)
    b = b.astype(np.float64)
    if params.window is None:
        mu_a = a.mean(axis=(0, 1))
        mu_b = b.mean(axis=(0, 1))
        da, db = a - mu_a, b - mu_b
        var_a = (da * da).mean(axis=(0, 1))
        var_b = (db * db).mean(axis=(0, 1))
        cov = (da * db).mean(axis=(0, 1))
        return float(np.mean(_ssim_stats(mu_a, mu_b, var_a, var_b, cov, params)))

    k = params.window
    if k > a.shape[0] or k > a.shape[1]:
        raise WindowTooLarge(f"{k}x{k} window does not fit a {a.shape[0]}x{a.shape[1]} image")
    wa = np.lib.stride_tricks.sliding_window_view(a, (k, k), axis=(0, 1))
    wb = np.lib.stride_tricks.sliding_window_view(b, (k, k), axis=(0, 1))
    axes = (-2, -1)
    mu_a = wa.mean(axis=axes)
    mu_b = wb.mean(axis=axes)
    da = wa - mu_a[..., None, None]
    db = wb - mu_b[..., None, None]
    var_a = (da * da).mean(axis=axes)
    var_b = (db * db).mean(axis=axes)
    cov = (da * db).mean(axis=axes)
    per_window = _ssim_stats(mu_a, mu_b, var_a, var_b, cov, params)  # (rows, cols, channels)
    return float(per_window.mean(axis=(0, 1)).mean())


def format_metric_row(record_id: str, tile: int, s: float, p: float, m: float) -> str:
    """CSV row ``record_id,tile,ssim,psnr,mse`` (infinite PSNR written as ``inf``)."""
    p_txt = "inf" if np.isinf(p) else repr(float(p))
    return f"{record_id},{tile},{float(s)!r},{p_txt},{float(m)!r}"
