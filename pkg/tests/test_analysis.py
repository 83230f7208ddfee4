import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from seisrgan.analysis import (
    build_comparison_report,
    comparison_csv,
    decimate_record,
    fourier_amplitude_spectrum,
    linear_interp_upsample,
    metrics_csv,
    spectrum_csv,
    time_domain_mse,
    timeseries_csv,
)
from seisrgan.codec import encode_record
from seisrgan.errors import LengthMismatch, TooFewSamples
from seisrgan.gm_io import GroundMotionRecord, synthesize_record
from seisrgan.metrics import mse_image, psnr, ssim, tile_image


def interp_oracle(lr, factor, target_len):
    out = []
    n = len(lr)
    for i in range(target_len):
        k = i // factor
        if k >= n - 1:
            out.append(lr[-1])
        else:
            out.append(lr[k] + (i % factor) / factor * (lr[k + 1] - lr[k]))
    return np.array(out)


def test_interp_midpoint_and_anchors():
    out = linear_interp_upsample([0.0, 64.0], 64)
    assert out[32] == 32.0
    assert out.size == 65
    lr = np.random.default_rng(0).normal(size=30)
    up = linear_interp_upsample(lr, 64, 30 * 64)
    np.testing.assert_array_equal(up[::64], lr)
    assert np.all(up[29 * 64:] == lr[-1])


def test_interp_oracle_random():
    lr = np.random.default_rng(1).normal(size=50)
    for target in (49 * 64 + 1, 50 * 64, 50 * 64 + 17):
        np.testing.assert_array_equal(linear_interp_upsample(lr, 64, target), interp_oracle(lr, 64, target))


def test_interp_exact_on_piecewise_linear():
    t = np.arange(64 * 20 + 1, dtype=float)
    signal = np.where(t < 640, 3.0 * t, 1920.0 - 0.5 * (t - 640))
    np.testing.assert_allclose(linear_interp_upsample(signal[::64], 64, signal.size), signal, atol=1e-12)


def test_interp_too_few():
    with pytest.raises(TooFewSamples):
        linear_interp_upsample([1.0], 64)


def test_time_domain_mse():
    a = np.random.default_rng(2).normal(size=100)
    assert time_domain_mse(a, a) == 0
    assert time_domain_mse(a + 0.5, a) == pytest.approx(0.25)
    assert time_domain_mse(a, a * 0.3) == time_domain_mse(a - a * 0.3, np.zeros(100))
    with pytest.raises(LengthMismatch):
        time_domain_mse(a, a[:-1])


def test_fas_sinusoid_peak():
    n, dt, A = 4000, 0.01, 2.5
    periods = 37
    f0 = periods / (n * dt)
    t = np.arange(n) * dt
    spec = fourier_amplitude_spectrum(A * np.sin(2 * np.pi * f0 * t), dt)
    k = int(np.argmax(spec.amplitudes))
    assert spec.frequencies[k] == pytest.approx(f0)
    assert spec.amplitudes[k] == pytest.approx(A * n * dt / 2, rel=0.01)


def test_fas_zero_and_length_law():
    assert np.all(fourier_amplitude_spectrum(np.zeros(64), 0.01).amplitudes == 0)
    for n in list(range(2, 200)) + [9999, 10000]:
        spec = fourier_amplitude_spectrum(np.ones(n), 0.02)
        assert spec.amplitudes.size == n // 2 + 1 == spec.frequencies.size
        assert np.all(np.diff(spec.frequencies) > 0)


def parseval_rhs(amps, n, dt):
    w = np.full(amps.size, 2.0)
    w[0] = 1.0
    if n % 2 == 0:
        w[-1] = 1.0
    return np.sum(w * amps ** 2) / (n * dt)


@pytest.mark.parametrize("n", [101, 256, 1000])
def test_fas_parseval(n):
    rng = np.random.default_rng(n)
    x = rng.normal(size=n)
    dt = 0.005
    amps = fourier_amplitude_spectrum(x, dt).amplitudes
    assert parseval_rhs(amps, n, dt) == pytest.approx(np.sum(x ** 2) * dt, rel=1e-6)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 500), st.floats(0.01, 100.0), st.integers(0, 10 ** 6))
def test_fas_linearity(n, scale, seed):
    x = np.random.default_rng(seed).normal(size=n)
    a = fourier_amplitude_spectrum(x, 0.01).amplitudes
    b = fourier_amplitude_spectrum(scale * x, 0.01).amplitudes
    np.testing.assert_allclose(b, scale * a, rtol=1e-10, atol=1e-12)


def test_report_identical():
    rec = synthesize_record(1, 20000, 0.005, 4)
    rep = build_comparison_report(rec, rec, decimate_record(rec))
    for g, i in rep.channel_mse.values():
        assert g == 0 and i > 0
    srgan = rep.image_means(0)
    assert srgan.ssim == pytest.approx(1.0) and srgan.mse == 0 and math.isinf(srgan.psnr)
    for real, gen, _ in rep.spectra.values():
        np.testing.assert_array_equal(real.amplitudes, gen.amplitudes)


def test_report_generated_equals_interpolation():
    rec = synthesize_record(2, 5000, 0.005, 4)
    lr = decimate_record(rec)
    rep0 = build_comparison_report(rec, rec, lr)
    rep = build_comparison_report(rec, rep0.interpolated, lr)
    for g, i in rep.channel_mse.values():
        assert g == i
    for s_gen, s_itp in rep.tile_scores:
        assert s_gen == s_itp


def test_report_matches_components():
    rec = synthesize_record(3, 30000, 0.005, 5)
    rng = np.random.default_rng(0)
    noisy = GroundMotionRecord.from_channels(rec.record_id, rec.dt,
                                             rec.channels() * (1 + 0.05 * rng.normal(size=(3, len(rec)))))
    lr = decimate_record(rec)
    rep = build_comparison_report(rec, noisy, lr)
    # direct recomputation from the component operations
    for c, ch in enumerate(("acceleration", "velocity", "displacement")):
        itp = linear_interp_upsample(rec.channels()[c][::64], 64, len(rec))
        assert rep.channel_mse[ch][0] == time_domain_mse(rec.channels()[c], noisy.channels()[c])
        assert rep.channel_mse[ch][1] == time_domain_mse(rec.channels()[c], itp)
    real_tiles, metas = encode_record(rec)
    gen_tiles, _ = encode_record(noisy, norms=metas[0].norms)
    for k, (rt, gt) in enumerate(zip(real_tiles, gen_tiles)):
        a, b = tile_image(rt), tile_image(gt)
        got = rep.tile_scores[k][0]
        assert (got.ssim, got.psnr, got.mse) == (ssim(a, b), psnr(a, b), mse_image(a, b))
    np.testing.assert_array_equal(rep.spectra["acceleration"][1].amplitudes,
                                  fourier_amplitude_spectrum(noisy.acceleration, rec.dt).amplitudes)


def test_report_length_mismatch():
    rec = synthesize_record(1, 1000, 0.005, 2)
    short = synthesize_record(1, 999, 0.005, 2)
    with pytest.raises(LengthMismatch):
        build_comparison_report(rec, short, decimate_record(rec))


def test_csv_outputs():
    rec = synthesize_record(4, 3000, 0.005, 3)
    rep = build_comparison_report(rec, rec, decimate_record(rec))
    text = comparison_csv([rep])
    assert text.splitlines()[0] == "record_id,channel,mse_srgan,mse_interp"
    assert len(text.splitlines()) == 4
    m = metrics_csv([rep]).splitlines()
    assert m[0] == "record_id,tile,ssim,psnr,mse"
    assert m[1].startswith("SYN000004,0,1.0,inf,0.0")
    s = spectrum_csv(rep, "acceleration").splitlines()
    assert s[0] == "freq_hz,amp_real,amp_generated,amp_interp"
    assert len(s) == 3000 // 2 + 2
    ts = timeseries_csv(rec, rec, rep.interpolated).splitlines()
    assert len(ts) == 3001 and ts[0].startswith("time_s,acceleration_real")
