import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from seisrgan.codec import (
    HR_SAMPLES,
    ChannelNorm,
    ImageTile,
    TileMetadata,
    decimate_tile,
    decode_tiles,
    denormalize_channel,
    encode_pairs,
    encode_record,
    format_sidecar,
    load_tile_png,
    lr_metadata,
    n_tiles_for,
    normalize_channel,
    parse_sidecar,
    quantize,
    quantize_array,
    dequantize,
    save_tile_png,
    tile_filename,
)
from seisrgan.errors import EmptyRecord, MetadataMismatch, NonFiniteInput, OutOfRange, ShapeMismatch
from seisrgan.gm_io import GroundMotionRecord, synthesize_record


def ramp_record(n, rid="ramp"):
    x = np.arange(n, dtype=float)
    return GroundMotionRecord(rid, 0.01, x, 2 * x + 1, -x)


def test_normalize_examples():
    y, nm = normalize_channel([-1.0, 0.0, 1.0])
    np.testing.assert_array_equal(y, [0.0, 0.5, 1.0])
    assert nm == ChannelNorm(-1.0, 1.0)
    y, nm = normalize_channel([5.0, 5.0, 5.0])
    np.testing.assert_array_equal(y, [0.5, 0.5, 0.5])
    assert nm == ChannelNorm(5.0, 5.0)
    np.testing.assert_array_equal(denormalize_channel(y, nm), [5.0, 5.0, 5.0])


def test_normalize_rejects_nonfinite():
    with pytest.raises(NonFiniteInput):
        normalize_channel([1.0, np.nan])


def test_normalize_round_trip_random():
    x = np.random.default_rng(0).normal(size=1000) * 37.0
    y, nm = normalize_channel(x)
    back = denormalize_channel(y, nm)
    assert np.max(np.abs(back - x)) <= 1e-12 * np.max(np.abs(x))


@pytest.mark.parametrize("n, tiles, last", [(1, 1, 1), (18495, 1, 18495), (18496, 1, 18496),
                                            (18497, 2, 1), (3 * 18496, 3, 18496)])
def test_tile_count_boundaries(n, tiles, last):
    t, m = encode_record(ramp_record(n))
    assert len(t) == tiles == n_tiles_for(n)
    assert m[-1].true_sample_count == last
    assert [x.tile_index for x in m] == list(range(tiles))


def test_tile_count_law():
    ns = np.arange(1, 10 ** 6 + 1)
    assert np.array_equal([n_tiles_for(int(n)) for n in ns[::997]], np.ceil(ns[::997] / HR_SAMPLES))


def test_pixel_layout_row_major():
    n = 2 * HR_SAMPLES + 500
    tiles, metas = encode_record(ramp_record(n))
    for k, tile in enumerate(tiles):
        for r, c in [(0, 0), (0, 135), (1, 0), (77, 31), (135, 135)]:
            t = HR_SAMPLES * k + 136 * r + c
            expected = t / (n - 1) if t < n else 0.0
            assert tile.pixels[0, r, c] == pytest.approx(expected, abs=1e-15)


def test_ramp_monotone_pixels():
    n = 30000
    tiles, metas = encode_record(ramp_record(n))
    for tile, meta in zip(tiles, metas):
        seq = tile.pixels.reshape(3, -1)[:, :meta.true_sample_count]
        assert np.all(np.diff(seq[0]) >= 0) and np.all(np.diff(seq[1]) >= 0)
        assert np.all(np.diff(seq[2]) <= 0)  # decreasing physical channel -> decreasing pixels
    # padding beyond the true length is zero
    assert np.all(tiles[-1].pixels.reshape(3, -1)[:, metas[-1].true_sample_count:] == 0)


def test_encode_empty_record():
    rec = GroundMotionRecord("x", 0.01, [1.0], [1.0], [1.0])
    tiles, metas = encode_record(rec)
    assert len(tiles) == 1
    with pytest.raises(Exception):
        GroundMotionRecord("x", 0.01, [], [], [])


def test_decimation_definitional():
    rec = synthesize_record(1, HR_SAMPLES, 0.005, 4)
    hr, metas = encode_record(rec)
    lr = decimate_tile(hr[0], metas[0])
    assert lr.side == 17
    assert lr.pixels[0, 0, 0] == hr[0].pixels[0, 0, 0]
    assert np.array_equal(lr.pixels[:, 0, 1], hr[0].pixels[:, 0, 64])
    series = hr[0].pixels.reshape(3, -1)
    for k in range(289):
        i, j = divmod(k, 17)
        assert np.array_equal(lr.pixels[:, i, j], series[:, 64 * k])


def test_decimate_rejects_lr():
    tile = ImageTile(np.zeros((3, 17, 17)))
    with pytest.raises(ShapeMismatch):
        decimate_tile(tile)


def test_decode_exact_inverse():
    rec = synthesize_record(2, 40000, 0.005, 5)
    tiles, metas = encode_record(rec)
    back = decode_tiles(tiles, metas)
    assert back.record_id == rec.record_id and back.dt == rec.dt
    for a, b in zip(back.channels(), rec.channels()):
        assert np.max(np.abs(a - b)) <= 1e-12 * np.max(np.abs(b))


def test_decode_degenerate_channel():
    rec = GroundMotionRecord("c", 0.01, np.full(100, 3.25), np.arange(100.0), np.zeros(100))
    back = decode_tiles(*encode_record(rec))
    np.testing.assert_array_equal(back.acceleration, rec.acceleration)
    np.testing.assert_array_equal(back.displacement, rec.displacement)


def test_quantized_decode_error_bound():
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        rec = synthesize_record(seed, int(rng.integers(1, 3000)), 0.01, int(rng.integers(1, 6)))
        tiles, metas = encode_record(rec)
        back = decode_tiles([quantize(t) for t in tiles], metas)
        for c, nm in enumerate(metas[0].norms):
            err = np.max(np.abs(back.channels()[c] - rec.channels()[c]))
            bound = (nm.max - nm.min) / 510
            assert err <= bound * (1 + 1e-9) + 1e-15
            if bound:
                worst = max(worst, err / bound)
    assert worst > 0.5  # the bound is tight, not vacuous


def test_quantize_examples():
    assert quantize_array([0.0, 1.0, 0.5]).tolist() == [0, 255, 128]
    with pytest.raises(OutOfRange):
        quantize_array([1.0000001])
    with pytest.raises(OutOfRange):
        quantize_array([-1e-9])


def test_quantize_bound_million():
    x = np.random.default_rng(9).random(10 ** 6)
    x[:2] = [0.0, 1.0]
    err = np.abs(quantize_array(x) / 255.0 - x)
    assert err.max() <= 1 / 510 + 1e-15


def test_tile_validation():
    with pytest.raises(ShapeMismatch):
        ImageTile(np.zeros((3, 16, 16)))
    with pytest.raises(OutOfRange):
        ImageTile(np.full((3, 17, 17), 1.5))
    t = ImageTile(np.full((3, 17, 17), 0.25))
    assert dequantize(quantize(t)).pixels.max() == pytest.approx(64 / 255)


def test_decode_metadata_mismatch():
    rec = synthesize_record(2, 20000, 0.005, 5)
    tiles, metas = encode_record(rec)
    with pytest.raises(MetadataMismatch):
        decode_tiles(tiles, metas[:1])
    with pytest.raises(MetadataMismatch):
        decode_tiles(tiles[::-1], metas[::-1])


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 60000), st.integers(0, 1000))
def test_decimation_consistency(n, seed):
    rec = synthesize_record(seed, n, 0.005, 3)
    hr, lr, metas = encode_pairs(rec)
    lr_rec = decode_tiles(lr, [lr_metadata(m) for m in metas])
    hr_rec = decode_tiles(hr, metas)
    assert lr_rec.dt == rec.dt * 64
    np.testing.assert_array_equal(lr_rec.channels(), hr_rec.channels()[:, ::64])


def test_png_round_trip(tmp_path):
    rec = synthesize_record(3, 20000, 0.005, 4)
    hr, lr, metas = encode_pairs(rec)
    for k, (h, l) in enumerate(zip(hr, lr)):
        for tile, kind in ((h, "hr"), (l, "lr")):
            path = tmp_path / tile_filename(rec.record_id, k, kind)
            save_tile_png(tile, path)
            back = load_tile_png(path)
            np.testing.assert_array_equal(back.pixels, quantize(tile).pixels)
    assert sorted(p.name for p in tmp_path.iterdir())[0] == "SYN000003_t0_hr.png"


def test_sidecar_round_trip():
    rec = synthesize_record(4, 40000, 0.005, 4)
    _, metas = encode_record(rec)
    text = format_sidecar(metas)
    lines = text.splitlines()
    assert [line.split(" = ")[0] for line in lines] == [
        "record_id", "dt", "n_tiles", "true_sample_count[0]", "true_sample_count[1]",
        "true_sample_count[2]", "acc_min", "acc_max", "vel_min", "vel_max", "disp_min", "disp_max"]
    assert parse_sidecar(text) == metas


def test_metadata_validation():
    nm = (ChannelNorm(0, 1),) * 3
    with pytest.raises(ValueError):
        TileMetadata("x", 0, 0.01, 0, nm)
    with pytest.raises(ValueError):
        TileMetadata("x", 0, 0.01, HR_SAMPLES + 1, nm)


def test_empty_record_error():
    class Fake:
        record_id = "e"

        def __len__(self):
            return 0

    with pytest.raises(EmptyRecord):
        encode_record(Fake())
