"""Strong-motion record ingestion, synthetic records and dataset splits.

PEER NGA files (``.AT2``/``.VT2``/``.DT2``) carry four header lines; the
fourth holds ``NPTS=`` and ``DT=`` tokens whose spacing varies between
database vintages, so the header is token-scanned rather than read by column.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .errors import (
    ChannelMismatch,
    CountMismatch,
    DataError,
    EmptyDataset,
    MalformedHeader,
    NonNumericValue,
)

CHANNELS = ("acceleration", "velocity", "displacement")

_NPTS_RE = re.compile(r"NPTS\s*=\s*,?\s*([0-9]+)", re.IGNORECASE)
_DT_RE = re.compile(
    r"DT\s*=\s*,?\s*([-+]?(?:[0-9]+\.?[0-9]*|\.[0-9]+)(?:[eE][-+]?[0-9]+)?)",
    re.IGNORECASE,
)
_HEADER_LINES = 4


@dataclass(frozen=True, eq=False)
class RawSeries:
    """One channel of a PEER record, exactly as stored in the file."""

    npts: int
    dt: float
    unit_label: str
    values: np.ndarray
    title: tuple[str, ...] = ()

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if self.npts < 1:
            raise DataError(f"npts must be positive, got {self.npts}")
        if not self.dt > 0:
            raise DataError(f"dt must be positive, got {self.dt}")
        if values.ndim != 1 or values.size != self.npts:
            raise CountMismatch(f"expected {self.npts} values, got {values.size}")


@dataclass(frozen=True, eq=False)
class GroundMotionRecord:
    """Aligned acceleration / velocity / displacement histories of one component."""

    record_id: str
    dt: float
    acceleration: np.ndarray
    velocity: np.ndarray
    displacement: np.ndarray
    units: tuple[str, str, str] = ("", "", "")

    def __post_init__(self):
        arrays = []
        for name in CHANNELS:
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.ndim != 1:
                raise ChannelMismatch(f"{name} must be one-dimensional")
            object.__setattr__(self, name, arr)
            arrays.append(arr)
        lengths = {a.size for a in arrays}
        if len(lengths) != 1:
            raise ChannelMismatch(f"channel lengths differ: {[a.size for a in arrays]}")
        if arrays[0].size < 1:
            raise DataError("record must hold at least one sample")
        if not self.dt > 0:
            raise DataError(f"dt must be positive, got {self.dt}")
        object.__setattr__(self, "units", tuple(self.units))

    def __len__(self) -> int:
        return self.acceleration.size

    def channels(self) -> np.ndarray:
        """Return the record as a ``(3, n)`` array ordered acc, vel, disp."""
        return np.stack([self.acceleration, self.velocity, self.displacement])

    @classmethod
    def from_channels(cls, record_id, dt, data, units=("", "", "")):
        data = np.asarray(data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] != 3:
            raise ChannelMismatch(f"expected a (3, n) array, got shape {data.shape}")
        return cls(record_id, dt, data[0], data[1], data[2], units)


def parse_peer_record(text: str, source: str = "<text>") -> RawSeries:
    """Parse one PEER NGA time-series file.

    Parameters
    ----------
    text : str
        Full file contents.
    source : str
        Name used in error messages (usually the file path).

    Returns
    -------
    RawSeries
        ``unit_label`` is the third header line, stripped.

    Raises
    ------
    MalformedHeader
        Fewer than four header lines, or the fourth lacks NPTS/DT.
    NonNumericValue
        A data token is not a finite real number.
    CountMismatch
        The number of data values differs from NPTS.
    """
    lines = text.splitlines()
    if len(lines) < _HEADER_LINES:
        raise MalformedHeader(f"{source}: expected {_HEADER_LINES} header lines, got {len(lines)}")
    header = lines[_HEADER_LINES - 1]
    npts_match = _NPTS_RE.search(header)
    dt_match = _DT_RE.search(header)
    if npts_match is None or dt_match is None:
        raise MalformedHeader(f"{source}:{_HEADER_LINES}: missing NPTS= or DT= in {header!r}")
    npts = int(npts_match.group(1))
    dt = float(dt_match.group(1))
    if npts < 1 or not dt > 0:
        raise MalformedHeader(f"{source}:{_HEADER_LINES}: invalid NPTS={npts} DT={dt}")

    values = []
    for lineno, line in enumerate(lines[_HEADER_LINES:], start=_HEADER_LINES + 1):
        for token in line.split():
            try:
                v = float(token)
            except ValueError:
                raise NonNumericValue(f"{source}:{lineno}: non-numeric value {token!r}") from None
            if not math.isfinite(v):
                raise NonNumericValue(f"{source}:{lineno}: non-finite value {token!r}")
            values.append(v)
    if len(values) != npts:
        raise CountMismatch(f"{source}: header says NPTS={npts} but found {len(values)} values")
    return RawSeries(
        npts=npts,
        dt=dt,
        unit_label=lines[2].strip(),
        values=np.array(values, dtype=np.float64),
        title=(lines[0].strip(), lines[1].strip()),
    )


def format_peer_record(series: RawSeries, per_line: int = 5) -> str:
    """Serialize a RawSeries in PEER layout (values at 7 significant digits)."""
    title = series.title or ("PEER NGA STRONG MOTION DATABASE RECORD", "")
    out = [title[0], title[1] if len(title) > 1 else "", series.unit_label,
           f"NPTS={series.npts:8d}, DT={series.dt!r} SEC"]
    vals = series.values
    for i in range(0, vals.size, per_line):
        out.append("".join(f"{v:15.6E}" for v in vals[i:i + per_line]))
    return "\n".join(out) + "\n"


def load_record_triplet(acc_text: str, vel_text: str, disp_text: str,
                        record_id: str) -> GroundMotionRecord:
    """Combine the three PEER files of one horizontal component into a record."""
    parts = [parse_peer_record(t, f"{record_id}:{name}")
             for t, name in zip((acc_text, vel_text, disp_text), CHANNELS)]
    npts = {p.npts for p in parts}
    dts = {p.dt for p in parts}
    if len(npts) != 1 or len(dts) != 1:
        raise ChannelMismatch(
            f"{record_id}: channels disagree (npts={[p.npts for p in parts]}, "
            f"dt={[p.dt for p in parts]})")
    return GroundMotionRecord(
        record_id=record_id,
        dt=parts[0].dt,
        acceleration=parts[0].values,
        velocity=parts[1].values,
        displacement=parts[2].values,
        units=tuple(p.unit_label for p in parts),
    )


def load_record_files(acc_path, vel_path, disp_path, record_id=None) -> GroundMotionRecord:
    paths = [Path(p) for p in (acc_path, vel_path, disp_path)]
    texts = []
    for p in paths:
        texts.append(p.read_text(encoding="utf-8", errors="replace"))
    rid = record_id or paths[0].stem
    try:
        return load_record_triplet(*texts, record_id=rid)
    except DataError as exc:
        # name the offending file instead of the channel alias
        msg = str(exc)
        for p, name in zip(paths, CHANNELS):
            msg = msg.replace(f"{rid}:{name}", str(p))
        raise type(exc)(msg) from None


def synthesize_record(seed: int, n_samples: int, dt: float = 0.005, n_modes: int = 6, *,
                      noise_level: float = 0.05,
                      damping_range: tuple[float, float] = (0.02, 0.10),
                      freq_range: tuple[float, float] = (0.2, 25.0),
                      amplitude_range: tuple[float, float] = (0.1, 1.0),
                      record_id: str | None = None) -> GroundMotionRecord:
    """Generate a deterministic synthetic accelerogram with consistent vel/disp.

    Acceleration is a sum of exponentially damped sinusoids (log-uniform
    frequencies, uniform damping ratios, amplitudes and phases) plus Gaussian
    noise band-limited to ``freq_range`` and scaled to ``noise_level`` times
    the signal RMS. Velocity and displacement are cumulative trapezoidal
    integrals starting from rest.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if n_modes < 1:
        raise ValueError("n_modes must be >= 1")
    if not dt > 0:
        raise ValueError("dt must be positive")
    rng = np.random.default_rng(seed)
    nyquist = 0.5 / dt
    f_lo, f_hi = freq_range
    f_hi = min(f_hi, 0.9 * nyquist)
    f_lo = min(f_lo, f_hi)
    freqs = np.exp(rng.uniform(np.log(f_lo), np.log(f_hi), n_modes))
    zetas = rng.uniform(*damping_range, n_modes)
    amps = rng.uniform(*amplitude_range, n_modes)
    phases = rng.uniform(0.0, 2.0 * np.pi, n_modes)

    t = np.arange(n_samples) * dt
    acc = np.zeros(n_samples)
    for f, z, a, p in zip(freqs, zetas, amps, phases):
        w = 2.0 * np.pi * f
        wd = w * np.sqrt(1.0 - z * z)
        acc += a * np.exp(-z * w * t) * np.sin(wd * t + p)

    # noise is drawn even when unused so the mode parameters do not depend on it
    white = rng.standard_normal(n_samples)
    if noise_level > 0 and n_samples > 1:
        spec = np.fft.rfft(white)
        fbin = np.fft.rfftfreq(n_samples, dt)
        spec[(fbin < f_lo) | (fbin > f_hi)] = 0.0
        band = np.fft.irfft(spec, n_samples)
        scale = np.sqrt(np.mean(band ** 2))
        if scale > 0:
            rms = np.sqrt(np.mean(acc ** 2))
            acc = acc + band * (noise_level * rms / scale)

    vel = cumulative_trapezoid(acc, dx=dt, initial=0.0)
    disp = cumulative_trapezoid(vel, dx=dt, initial=0.0)
    return GroundMotionRecord(
        record_id=record_id or f"SYN{seed:06d}",
        dt=dt,
        acceleration=acc,
        velocity=vel,
        displacement=disp,
        units=("m/s/s", "m/s", "m"),
    )


def split_dataset(records: Sequence, test_fraction: float, seed: int):
    """Shuffle deterministically and split off ``round(n * test_fraction)`` test items.

    Rounding is half-up, so 5 records at fraction 0.5 give 3 test, 2 train.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    n = len(records)
    if n == 0:
        raise EmptyDataset("cannot split an empty dataset")
    n_test = int(math.floor(n * test_fraction + 0.5))
    order = np.random.default_rng(seed).permutation(n)
    test = [records[i] for i in order[:n_test]]
    train = [records[i] for i in order[n_test:]]
    return train, test


CATEGORIES = ("far-field", "near-field-pulse", "near-field-no-pulse")


@dataclass(frozen=True)
class ManifestEntry:
    rsn: int
    category: str
    flags: frozenset = field(default_factory=frozenset)


@dataclass(frozen=True)
class RecordManifest:
    entries: tuple[ManifestEntry, ...]

    def __post_init__(self):
        rsns = [e.rsn for e in self.entries]
        if len(set(rsns)) != len(rsns):
            raise DataError("duplicate RSN in manifest")
        for e in self.entries:
            if e.category not in CATEGORIES:
                raise DataError(f"RSN{e.rsn}: unknown category {e.category!r}")

    def __len__(self):
        return len(self.entries)

    def by_category(self, category: str) -> list[int]:
        return [e.rsn for e in self.entries if e.category == category]

    def available(self) -> list[int]:
        return [e.rsn for e in self.entries if "unavailable" not in e.flags]


def parse_manifest(text: str) -> RecordManifest:
    entries = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) not in (2, 3):
            raise DataError(f"manifest line {lineno}: expected RSN,category,flags")
        try:
            rsn = int(parts[0])
        except ValueError:
            raise DataError(f"manifest line {lineno}: bad RSN {parts[0]!r}") from None
        flags = frozenset(f for f in (parts[2].split(";") if len(parts) == 3 else []) if f)
        entries.append(ManifestEntry(rsn, parts[1], flags))
    return RecordManifest(tuple(entries))


def format_manifest(manifest: RecordManifest) -> str:
    return "".join(f"{e.rsn},{e.category},{';'.join(sorted(e.flags))}\n"
                   for e in manifest.entries)


def load_manifest(path=None) -> RecordManifest:
    """Load a record manifest; defaults to the bundled FEMA P695 far/near-field set."""
    if path is None:
        text = resources.files("seisrgan").joinpath("data/fema_p695.csv").read_text("utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return parse_manifest(text)
