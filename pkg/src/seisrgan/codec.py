"""Time series <-> RGB tile encoding.

Each channel of a record (R=acceleration, G=velocity, B=displacement) is
min-max normalized over the whole record and packed row-major into 136x136
tiles, so pixel ``(r, c)`` of tile ``k`` holds sample ``18496*k + 136*r + c``.
Low-resolution 17x17 tiles are stride-64 time decimations of the HR tiles.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import EmptyRecord, MetadataMismatch, NonFiniteInput, OutOfRange, ShapeMismatch
from .gm_io import GroundMotionRecord

HR_SIDE = 136
LR_SIDE = 17
SCALE = HR_SIDE // LR_SIDE
STRIDE = SCALE * SCALE
HR_SAMPLES = HR_SIDE * HR_SIDE
LR_SAMPLES = LR_SIDE * LR_SIDE
CHANNEL_KEYS = ("acc", "vel", "disp")


@dataclass(frozen=True)
class ChannelNorm:
    min: float
    max: float

    def __post_init__(self):
        if not self.max >= self.min:
            raise ValueError(f"max {self.max} < min {self.min}")

    @property
    def degenerate(self) -> bool:
        return self.max == self.min


@dataclass(frozen=True)
class TileMetadata:
    record_id: str
    tile_index: int
    dt: float
    true_sample_count: int
    norms: tuple[ChannelNorm, ChannelNorm, ChannelNorm]

    def __post_init__(self):
        if self.tile_index < 0:
            raise ValueError("tile_index must be nonnegative")
        if not 1 <= self.true_sample_count <= HR_SAMPLES:
            raise ValueError(f"true_sample_count {self.true_sample_count} outside [1, {HR_SAMPLES}]")
        if len(self.norms) != 3:
            raise ValueError("expected one ChannelNorm per channel")
        object.__setattr__(self, "norms", tuple(self.norms))


@dataclass(frozen=True, eq=False)
class ImageTile:
    """A square 3-channel tile, stored channels-first as ``(3, side, side)``.

    Float tiles hold values in [0, 1]; quantized tiles are ``uint8``.
    """

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[0] != 3 or px.shape[1] != px.shape[2] \
                or px.shape[1] not in (LR_SIDE, HR_SIDE):
            raise ShapeMismatch(f"tile must be 3x17x17 or 3x136x136, got {px.shape}")
        if px.dtype == np.uint8:
            pass
        elif np.issubdtype(px.dtype, np.floating):
            if not (np.all(np.isfinite(px)) and px.min() >= 0.0 and px.max() <= 1.0):
                raise OutOfRange("float tile pixels must lie in [0, 1]")
        else:
            raise TypeError(f"unsupported pixel dtype {px.dtype}")
        px = px.copy()
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def side(self) -> int:
        return self.pixels.shape[1]

    @property
    def quantized(self) -> bool:
        return self.pixels.dtype == np.uint8

    def as_float(self) -> np.ndarray:
        return dequantize(self).pixels if self.quantized else self.pixels

    def series(self) -> np.ndarray:
        """Row-major ``(3, side*side)`` sample view of the tile."""
        return self.as_float().reshape(3, -1)


def normalize_channel(values):
    """Min-max scale to [0, 1]; a constant channel maps to 0.5."""
    x = np.asarray(values, dtype=np.float64)
    if x.size == 0:
        raise EmptyRecord("cannot normalize an empty channel")
    if not np.all(np.isfinite(x)):
        raise NonFiniteInput("channel contains NaN or infinity")
    lo, hi = float(x.min()), float(x.max())
    norm = ChannelNorm(lo, hi)
    if hi == lo:
        return np.full_like(x, 0.5), norm
    return (x - lo) / (hi - lo), norm


def denormalize_channel(normalized, norm: ChannelNorm) -> np.ndarray:
    x = np.asarray(normalized, dtype=np.float64)
    if norm.degenerate:
        return np.full_like(x, norm.min)
    return x * (norm.max - norm.min) + norm.min


def n_tiles_for(n_samples: int, side: int = HR_SIDE) -> int:
    return -(-n_samples // (side * side))


def encode_record(record: GroundMotionRecord, norms=None):
    """Pack a record into HR float tiles plus their metadata.

    ``norms`` overrides the per-record normalization (used to express a
    generated record on the same scale as its reference); values falling
    outside the given range are clipped to [0, 1].
    """
    n = len(record)
    if n < 1:
        raise EmptyRecord(f"{record.record_id}: empty record")
    data = record.channels()
    if norms is None:
        scaled = np.empty_like(data)
        norm_list = []
        for c in range(3):
            scaled[c], nm = normalize_channel(data[c])
            norm_list.append(nm)
        norms = tuple(norm_list)
    else:
        if not np.all(np.isfinite(data)):
            raise NonFiniteInput(f"{record.record_id}: record contains NaN or infinity")
        norms = tuple(norms)
        scaled = np.stack([
            np.clip((data[c] - nm.min) / (nm.max - nm.min), 0.0, 1.0) if not nm.degenerate
            else np.full(n, 0.5)
            for c, nm in enumerate(norms)])

    n_tiles = n_tiles_for(n)
    padded = np.zeros((3, n_tiles * HR_SAMPLES))
    padded[:, :n] = scaled
    blocks = padded.reshape(3, n_tiles, HR_SIDE, HR_SIDE)
    tiles, metas = [], []
    for k in range(n_tiles):
        tiles.append(ImageTile(blocks[:, k]))
        metas.append(TileMetadata(
            record_id=record.record_id,
            tile_index=k,
            dt=record.dt,
            true_sample_count=min(HR_SAMPLES, n - k * HR_SAMPLES),
            norms=norms,
        ))
    return tiles, metas


def decimate_tile(hr_tile: ImageTile, metadata: TileMetadata | None = None) -> ImageTile:
    """Keep every 64th sample of the HR tile, reshaped to 17x17 row-major."""
    if hr_tile.side != HR_SIDE:
        raise ShapeMismatch(f"expected a {HR_SIDE}x{HR_SIDE} tile, got side {hr_tile.side}")
    flat = hr_tile.pixels.reshape(3, -1)[:, ::STRIDE]
    return ImageTile(flat.reshape(3, LR_SIDE, LR_SIDE))


def lr_metadata(meta: TileMetadata) -> TileMetadata:
    """Metadata describing the decimated counterpart of an HR tile."""
    return TileMetadata(
        record_id=meta.record_id,
        tile_index=meta.tile_index,
        dt=meta.dt * STRIDE,
        true_sample_count=-(-meta.true_sample_count // STRIDE),
        norms=meta.norms,
    )


def decode_tiles(tiles: Sequence[ImageTile], metadata: Sequence[TileMetadata]) -> GroundMotionRecord:
    """Invert :func:`encode_record` (works for HR or LR tiles, float or 8-bit)."""
    if len(tiles) != len(metadata) or not tiles:
        raise MetadataMismatch(f"{len(tiles)} tiles but {len(metadata)} metadata entries")
    first = metadata[0]
    side = tiles[0].side
    capacity = side * side
    parts = []
    for i, (tile, meta) in enumerate(zip(tiles, metadata)):
        if meta.tile_index != i:
            raise MetadataMismatch(f"tile indices must run 0..{len(tiles) - 1}, got {meta.tile_index} at {i}")
        if meta.record_id != first.record_id or meta.dt != first.dt or meta.norms != first.norms:
            raise MetadataMismatch(f"tile {i} metadata disagrees with tile 0")
        if tile.side != side:
            raise MetadataMismatch("mixed tile sizes in one record")
        if meta.true_sample_count > capacity:
            raise MetadataMismatch(f"tile {i}: {meta.true_sample_count} samples exceed capacity {capacity}")
        if i < len(tiles) - 1 and meta.true_sample_count != capacity:
            raise MetadataMismatch(f"tile {i} is not full but is not the last tile")
        parts.append(tile.series()[:, :meta.true_sample_count])
    scaled = np.concatenate(parts, axis=1)
    data = np.stack([denormalize_channel(scaled[c], first.norms[c]) for c in range(3)])
    return GroundMotionRecord.from_channels(first.record_id, first.dt, data)


def quantize(tile: ImageTile) -> ImageTile:
    """Round-half-up to 8-bit: ``q = floor(255*x + 0.5)``."""
    if tile.quantized:
        return tile
    return ImageTile(quantize_array(tile.pixels))


def quantize_array(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if not (np.all(np.isfinite(x)) and (x.size == 0 or (x.min() >= 0.0 and x.max() <= 1.0))):
        raise OutOfRange("quantize expects values in [0, 1]")
    return np.floor(255.0 * x + 0.5).astype(np.uint8)


def dequantize(tile: ImageTile) -> ImageTile:
    if not tile.quantized:
        return tile
    return ImageTile(tile.pixels.astype(np.float64) / 255.0)


def encode_pairs(record: GroundMotionRecord):
    """HR tiles, matching LR tiles, and HR metadata for one record."""
    hr, metas = encode_record(record)
    lr = [decimate_tile(t, m) for t, m in zip(hr, metas)]
    return hr, lr, metas


def tile_filename(record_id: str, k: int, kind: str) -> str:
    return f"{record_id}_t{k}_{kind}.png"


def save_tile_png(tile: ImageTile, path) -> None:
    from PIL import Image

    q = quantize(tile).pixels
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    Image.fromarray(np.ascontiguousarray(q.transpose(1, 2, 0))).save(tmp, format="PNG")
    tmp.replace(path)


def load_tile_png(path) -> ImageTile:
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return ImageTile(arr.transpose(2, 0, 1))


def format_sidecar(metas: Sequence[TileMetadata]) -> str:
    """Render the per-record ``.meta`` sidecar (fixed key order, 17 significant digits)."""
    if not metas:
        raise MetadataMismatch("no metadata to write")
    first = metas[0]
    lines = [
        f"record_id = {first.record_id}",
        f"dt = {first.dt:.17g}",
        f"n_tiles = {len(metas)}",
    ]
    lines += [f"true_sample_count[{m.tile_index}] = {m.true_sample_count}" for m in metas]
    for key, nm in zip(CHANNEL_KEYS, first.norms):
        lines.append(f"{key}_min = {nm.min:.17g}")
        lines.append(f"{key}_max = {nm.max:.17g}")
    return "\n".join(lines) + "\n"


def parse_sidecar(text: str) -> list[TileMetadata]:
    kv = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if "=" not in line:
            raise MetadataMismatch(f"sidecar line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        kv[key.strip()] = value.strip()
    try:
        n_tiles = int(kv["n_tiles"])
        dt = float(kv["dt"])
        norms = tuple(ChannelNorm(float(kv[f"{k}_min"]), float(kv[f"{k}_max"])) for k in CHANNEL_KEYS)
        return [TileMetadata(kv["record_id"], k, dt, int(kv[f"true_sample_count[{k}]"]), norms)
                for k in range(n_tiles)]
    except KeyError as exc:
        raise MetadataMismatch(f"sidecar missing key {exc.args[0]!r}") from None


def write_sidecar(metas: Sequence[TileMetadata], path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(format_sidecar(metas), encoding="utf-8")
    tmp.replace(path)


def read_sidecar(path) -> list[TileMetadata]:
    return parse_sidecar(Path(path).read_text(encoding="utf-8"))
