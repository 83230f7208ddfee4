"""Command-line pipeline: ingest/synthesize records, train, infer, evaluate.

Every artifact is written atomically (temporary file, then rename), and
identical inputs with an identical seed reproduce byte-identical CSVs.

Dataset layout, one directory per record::

    <root>/<record_id>/record.npz
    <root>/<record_id>/<record_id>.meta
    <root>/<record_id>/<record_id>_t<k>_hr.png
    <root>/<record_id>/<record_id>_t<k>_lr.png
"""

from __future__ import annotations

import argparse
import io
import logging
import os
import sys
from dataclasses import MISSING, asdict, dataclass, fields
from pathlib import Path

import numpy as np
import torch

from . import analysis
from .codec import (
    ImageTile,
    decode_tiles,
    encode_pairs,
    load_tile_png,
    read_sidecar,
    save_tile_png,
    tile_filename,
    write_sidecar,
)
from .errors import DataError, SeisrganError, TrainingDiverged
from .gm_io import GroundMotionRecord, load_record_files, split_dataset, synthesize_record
from .metrics import SsimParams
from .model import load_checkpoint
from .training import TileSet, TrainConfig, generate, load_extractor, train

log = logging.getLogger("seisrgan")

OUTPUT_ROOT_ENV = "SEISRGAN_OUTPUT_ROOT"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------- run config

@dataclass
class RunConfig:
    # training, mirrors TrainConfig
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
    # data and artifacts
    train_data: str = ""
    test_data: str = ""
    test_fraction: float = 0.2
    output_dir: str = ""
    feature_weights: str = ""
    vgg_input_norm: bool = False
    # synthetic corpus used when train_data is empty
    synth_count: int = 0
    synth_seed: int = 0
    synth_n_samples: int = 18496
    synth_dt: float = 0.005
    synth_n_modes: int = 6
    # 0 disables; otherwise test-split image metrics every N epochs
    metric_every: int = 0
    metric_window: int = 0

    def train_config(self) -> TrainConfig:
        names = set(TrainConfig.field_names())
        return TrainConfig(**{k: v for k, v in asdict(self).items() if k in names})

    def to_text(self) -> str:
        return "".join(f"{k} = {_render(v)}\n" for k, v in asdict(self).items())


FIELD_HELP = {
    "learning_rate": "Adam step size before decay",
    "batch_size": "tiles per optimizer step",
    "beta1": "Adam first-moment decay",
    "beta2": "Adam second-moment decay",
    "decay_start_epoch": "epoch where linear decay to zero begins",
    "total_epochs": "number of training epochs",
    "lambda_adv": "adversarial loss weight",
    "beta_pixel": "pixel MSE loss weight",
    "adversarial_mode": "least_squares or binary_cross_entropy",
    "seed": "seed for weight init and batch order",
    "reduced_model": "use the narrow desk-scale networks",
    "reduction_divisor": "width divisor for the reduced networks",
    "checkpoint_every": "write a checkpoint every N epochs (0 disables)",
    "train_data": "dataset directory with training records",
    "test_data": "dataset directory with held-out records",
    "test_fraction": "held-out fraction when no test_data is given",
    "output_dir": "directory for checkpoints and CSVs",
    "feature_weights": "VGG-19 weights (.pth or .safetensors); empty disables content loss",
    "vgg_input_norm": "apply ImageNet standardization before the extractor",
    "synth_count": "synthesize this many records when train_data is empty",
    "synth_seed": "first seed of the synthetic corpus",
    "synth_n_samples": "samples per synthetic record",
    "synth_dt": "time step of synthetic records in seconds",
    "synth_n_modes": "damped modes per synthetic record",
    "metric_every": "compute test-split SSIM/PSNR/MSE every N epochs (0 disables)",
    "metric_window": "SSIM sliding window side (0 means full-image statistics)",
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _render(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _field_types() -> dict[str, type]:
    return {f.name: type(f.default) for f in fields(RunConfig) if f.default is not MISSING}


def _coerce(key: str, raw: str):
    kind = _field_types()[key]
    text = raw.strip()
    if kind is bool:
        if text.lower() in _TRUE:
            return True
        if text.lower() in _FALSE:
            return False
        raise UsageError(f"{key}: expected a boolean, got {raw!r}")
    try:
        return kind(text)
    except ValueError:
        raise UsageError(f"{key}: expected {kind.__name__}, got {raw!r}") from None


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment line."""
    known = _field_types()
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise UsageError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in stripped.split("=", 1))
        if key not in known:
            raise UsageError(f"{source}:{lineno}: unknown key {key!r}")
        out[key] = _coerce(key, value)
    return out


def _bool_flag(text: str) -> bool:
    t = text.lower()
    if t in _TRUE:
        return True
    if t in _FALSE:
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def resolve_run_config(config_path, overrides: dict) -> RunConfig:
    values = {}
    if config_path:
        path = Path(config_path)
        if not path.is_file():
            raise DataError(f"{path}: config file not found")
        values.update(parse_config_text(path.read_text(encoding="utf-8"), str(path)))
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**values)


# ------------------------------------------------------------------ file I/O

def _atomic_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


def _atomic_npz(path: Path, **arrays) -> None:
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(buf.getvalue())
    tmp.replace(path)


def output_root(args_out, command: str) -> Path:
    if args_out:
        return Path(args_out)
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "seisrgan_out")) / command


def save_record(record: GroundMotionRecord, directory: Path) -> None:
    _atomic_npz(directory / "record.npz", record_id=np.array(record.record_id), dt=np.array(record.dt),
                channels=record.channels(), units=np.array(record.units))


def load_record(directory: Path) -> GroundMotionRecord:
    path = Path(directory) / "record.npz"
    if not path.is_file():
        raise DataError(f"{path}: missing record file")
    with np.load(path) as z:
        return GroundMotionRecord.from_channels(str(z["record_id"]), float(z["dt"]), z["channels"],
                                                tuple(str(u) for u in z["units"]))


def write_dataset_record(record: GroundMotionRecord, root: Path) -> tuple[int, int]:
    """Encode one record into ``root/<id>/``; returns (tiles, samples)."""
    directory = root / record.record_id
    directory.mkdir(parents=True, exist_ok=True)
    hr, lr, metas = encode_pairs(record)
    for k, (h, low) in enumerate(zip(hr, lr)):
        save_tile_png(h, directory / tile_filename(record.record_id, k, "hr"))
        save_tile_png(low, directory / tile_filename(record.record_id, k, "lr"))
    write_sidecar(metas, directory / f"{record.record_id}.meta")
    save_record(record, directory)
    return len(metas), len(record)


def record_dirs(root) -> list[Path]:
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"{root}: dataset directory not found")
    dirs = sorted(p for p in root.iterdir() if (p / "record.npz").is_file())
    if not dirs:
        raise DataError(f"{root}: no records found")
    return dirs


def load_tiles(directory: Path) -> TileSet:
    """LR/HR tiles as stored on disk (8-bit PNG, rescaled to [0, 1])."""
    rid = directory.name
    metas = read_sidecar(directory / f"{rid}.meta")
    hr, lr = [], []
    for m in metas:
        for kind, dest in (("hr", hr), ("lr", lr)):
            path = directory / tile_filename(rid, m.tile_index, kind)
            if not path.is_file():
                raise DataError(f"{path}: missing tile image")
            dest.append(load_tile_png(path).as_float())
    return TileSet(torch.as_tensor(np.stack(lr), dtype=torch.float32),
                   torch.as_tensor(np.stack(hr), dtype=torch.float32), metas)


def load_tileset(dirs) -> TileSet:
    sets = [load_tiles(d) for d in dirs]
    if not sets:
        return None
    return TileSet(torch.cat([s.lr for s in sets]), torch.cat([s.hr for s in sets]),
                   [m for s in sets for m in s.metas])


def print_table(header, rows, stream=None) -> None:
    stream = stream or sys.stdout
    cells = [list(map(str, header))] + [[str(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    for i, r in enumerate(cells):
        print("  ".join(c.rjust(w) for c, w in zip(r, widths)), file=stream)
        if i == 0:
            print("  ".join("-" * w for w in widths), file=stream)


def _dataset_summary(written) -> None:
    rows = [(rid, t, n) for rid, t, n in written]
    rows.append(("total", sum(r[1] for r in rows), sum(r[2] for r in rows)))
    print_table(("record", "tiles", "samples"), rows)
    print(f"{len(written)} records")


# ------------------------------------------------------------------ commands

_PEER_EXT = {"at2": 0, "vt2": 1, "dt2": 2}


def cmd_ingest(args) -> int:
    groups: dict[str, list] = {}
    for raw in args.paths:
        p = Path(raw)
        if not p.is_file():
            raise DataError(f"{p}: file not found")
        ext = p.suffix.lower().lstrip(".")
        if ext not in _PEER_EXT:
            raise DataError(f"{p}: expected a .AT2, .VT2 or .DT2 file")
        groups.setdefault(str(p.with_suffix("")), [None] * 3)[_PEER_EXT[ext]] = p
    root = output_root(args.out, "dataset")
    written = []
    for stem, triple in sorted(groups.items()):
        if any(t is None for t in triple):
            missing = [k.upper() for k, i in _PEER_EXT.items() if triple[i] is None]
            raise DataError(f"{stem}: missing {', '.join(missing)} file(s)")
        rec = load_record_files(*triple, record_id=Path(stem).name)
        written.append((rec.record_id, *write_dataset_record(rec, root)))
    _dataset_summary(written)
    return EXIT_OK


def cmd_synth(args) -> int:
    root = output_root(args.out, "dataset")
    written = []
    for i in range(args.count):
        rec = synthesize_record(args.seed + i, args.n_samples, args.dt, args.n_modes)
        written.append((rec.record_id, *write_dataset_record(rec, root)))
    _dataset_summary(written)
    return EXIT_OK


def cmd_encode(args) -> int:
    dirs = record_dirs(args.dataset)
    root = Path(args.out) if args.out else Path(args.dataset)
    written = []
    for d in dirs:
        rec = load_record(d)
        written.append((rec.record_id, *write_dataset_record(rec, root)))
    _dataset_summary(written)
    return EXIT_OK


def _train_overrides(args) -> dict:
    return {k: getattr(args, k, None) for k in _field_types()}


def _training_records(cfg: RunConfig):
    if cfg.train_data:
        return record_dirs(cfg.train_data)
    if cfg.synth_count > 0:
        root = Path(cfg.output_dir) / "synthetic"
        for i in range(cfg.synth_count):
            write_dataset_record(synthesize_record(cfg.synth_seed + i, cfg.synth_n_samples, cfg.synth_dt,
                                                   cfg.synth_n_modes), root)
        return record_dirs(root)
    raise UsageError("train needs train_data or synth_count > 0")


def cmd_train(args) -> int:
    cfg = resolve_run_config(args.config, _train_overrides(args))
    if not cfg.output_dir:
        cfg.output_dir = str(output_root(None, "train"))
    out = Path(cfg.output_dir)
    for key in ("train_data", "test_data", "feature_weights"):
        value = getattr(cfg, key)
        if value and not Path(value).exists():
            raise DataError(f"{value}: {key} path does not exist")
    tcfg = cfg.train_config()
    out.mkdir(parents=True, exist_ok=True)
    _atomic_text(out / "effective_config.txt", cfg.to_text())

    dirs = _training_records(cfg)
    if cfg.test_data:
        train_dirs, test_dirs = dirs, record_dirs(cfg.test_data)
    elif cfg.test_fraction > 0 and len(dirs) > 1:
        train_dirs, test_dirs = split_dataset(dirs, cfg.test_fraction, cfg.seed)
    else:
        train_dirs, test_dirs = dirs, []
    train_tiles = load_tileset(train_dirs)
    test_tiles = load_tileset(test_dirs) if test_dirs else None
    _atomic_text(out / "split.txt", "".join(f"train,{d.name}\n" for d in train_dirs)
                 + "".join(f"test,{d.name}\n" for d in test_dirs))

    extractor = load_extractor(cfg.feature_weights or None, cfg.vgg_input_norm)
    metric_rows = []
    params = SsimParams(window=cfg.metric_window or None)

    def monitor(entry, generator, _disc):
        if cfg.metric_every and test_tiles is not None and entry.epoch % cfg.metric_every == 0:
            s = analysis.mean_image_scores(test_tiles.hr.numpy(), generate(generator, test_tiles.lr).numpy(),
                                           params)
            metric_rows.append((entry.epoch, s.ssim, s.psnr, s.mse))

    def progress(entry):
        if entry.epoch == 1 or entry.epoch % max(1, tcfg.total_epochs // 10) == 0:
            log.info("epoch %d gen_train %.6g gen_test %.6g disc %.6g", entry.epoch, entry.gen_train,
                     entry.gen_test, entry.disc)

    try:
        result = train(tcfg, train_tiles, test_tiles, extractor=extractor, checkpoint_dir=out / "checkpoints",
                       on_epoch=progress, monitor=monitor)
    except TrainingDiverged as exc:
        history = getattr(exc, "history", None)
        if history is not None and len(history):
            history.write(out)
        raise
    result.history.write(out)
    if metric_rows:
        _atomic_text(out / "metrics_history.csv", "epoch,ssim,psnr,mse\n" + "".join(
            f"{e},{analysis.format_number(s)},{analysis.format_number(p)},{analysis.format_number(m)}\n" for e, s, p, m in metric_rows))
    last = result.history.epochs[-1]
    print_table(("epochs", "train tiles", "test tiles", "gen_train", "gen_test", "disc"),
                [(len(result.history), len(train_tiles), len(test_tiles) if test_tiles else 0,
                  f"{last.gen_train:.6g}", f"{last.gen_test:.6g}", f"{last.disc:.6g}")])
    print(f"checkpoints in {out / 'checkpoints'}")
    return EXIT_OK


def _checkpoint_dir(path) -> Path:
    p = Path(path)
    if (p / "manifest.txt").is_file():
        return p
    if (p / "checkpoints" / "best" / "manifest.txt").is_file():
        return p / "checkpoints" / "best"
    raise DataError(f"{p}: no checkpoint manifest found")


def cmd_infer(args) -> int:
    generator, _, manifest = load_checkpoint(_checkpoint_dir(args.checkpoint))
    root = output_root(args.out, "generated")
    rows = []
    for d in record_dirs(args.data):
        tiles = load_tiles(d)
        out = generate(generator, tiles.lr).double().numpy()
        gen_tiles = [ImageTile(np.clip(o, 0.0, 1.0)) for o in out]
        rec = decode_tiles(gen_tiles, tiles.metas)
        dest = root / rec.record_id
        dest.mkdir(parents=True, exist_ok=True)
        for m, t in zip(tiles.metas, gen_tiles):
            save_tile_png(t, dest / tile_filename(rec.record_id, m.tile_index, "gen"))
        write_sidecar(tiles.metas, dest / f"{rec.record_id}.meta")
        save_record(rec, dest)
        rows.append((rec.record_id, len(gen_tiles), "x".join(map(str, out.shape[2:] + out.shape[1:2]))))
    print_table(("record", "tiles", "tile shape"), rows)
    print(f"checkpoint epoch {manifest['epoch']}")
    return EXIT_OK


def _report_for(real_dir: Path, gen_root: Path, params: SsimParams):
    real = load_record(real_dir)
    generated = load_record(gen_root / real_dir.name)
    return analysis.build_comparison_report(real, generated, analysis.decimate_record(real), params)


def cmd_evaluate(args) -> int:
    out = output_root(args.out, "evaluation")
    gen_root = Path(args.generated)
    reports = []
    windowed = []
    for d in record_dirs(args.real):
        reports.append(_report_for(d, gen_root, SsimParams()))
        if args.window:
            windowed.append(_report_for(d, gen_root, SsimParams(window=args.window)))
    _atomic_text(out / "comparison.csv", analysis.comparison_csv(reports))
    _atomic_text(out / "metrics_srgan.csv", analysis.metrics_csv(reports, 0))
    _atomic_text(out / "metrics_interp.csv", analysis.metrics_csv(reports, 1))
    if windowed:
        _atomic_text(out / f"metrics_srgan_w{args.window}.csv", analysis.metrics_csv(windowed, 0))
        _atomic_text(out / f"metrics_interp_w{args.window}.csv", analysis.metrics_csv(windowed, 1))
    for rep in reports:
        real = load_record(Path(args.real) / rep.record_id)
        gen = load_record(gen_root / rep.record_id)
        _atomic_text(out / f"timeseries_{rep.record_id}.csv", analysis.timeseries_csv(real, gen, rep.interpolated))
        for ch in rep.spectra:
            _atomic_text(out / f"spectrum_{rep.record_id}_{ch}.csv", analysis.spectrum_csv(rep, ch))
    rows = []
    for rep in reports:
        s = rep.image_means(0)
        m = rep.channel_mse
        rows.append((rep.record_id, f"{s.ssim:.4f}", f"{s.psnr:.2f}", f"{s.mse:.3f}",
                     *(f"{m[ch][0]:.4g}/{m[ch][1]:.4g}" for ch in m)))
    print_table(("record", "ssim", "psnr", "mse", "acc srgan/interp", "vel srgan/interp", "disp srgan/interp"),
                rows)
    return EXIT_OK


def cmd_spectrum(args) -> int:
    out = output_root(args.out, "spectrum")
    rec = load_record(Path(args.record))
    if args.generated:
        rep = analysis.build_comparison_report(rec, load_record(Path(args.generated)),
                                               analysis.decimate_record(rec))
        text = analysis.spectrum_csv(rep, args.channel)
    else:
        spec = analysis.fourier_amplitude_spectrum(getattr(rec, args.channel), rec.dt)
        text = "freq_hz,amplitude\n" + "".join(f"{analysis.format_number(f)},{analysis.format_number(a)}\n"
                                               for f, a in zip(spec.frequencies, spec.amplitudes))
    path = out / f"spectrum_{rec.record_id}_{args.channel}.csv"
    _atomic_text(path, text)
    print_table(("record", "channel", "bins", "file"), [(rec.record_id, args.channel,
                                                         text.count("\n") - 1, path)])
    return EXIT_OK


# -------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="seisrgan", description="Super-resolution GAN for ground-motion records.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    out_help = f"output directory (default: ${OUTPUT_ROOT_ENV}/<command> or ./seisrgan_out/<command>)"

    p = sub.add_parser("ingest", help="parse PEER AT2/VT2/DT2 triplets into a tile dataset",
                       description="Parse PEER record triplets (same stem, .AT2/.VT2/.DT2) and encode tiles.")
    p.add_argument("paths", nargs="+", help="record files; each record needs all three extensions")
    p.add_argument("--out", help=out_help)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", help="write a synthetic tile dataset",
                       description="Synthesize damped-mode records and encode them as tiles.")
    p.add_argument("--count", type=int, required=True, help="number of records")
    p.add_argument("--seed", type=int, default=0, help="seed of the first record (others use seed+i)")
    p.add_argument("--n-samples", type=int, default=18496, help="samples per record")
    p.add_argument("--dt", type=float, default=0.005, help="time step in seconds")
    p.add_argument("--n-modes", type=int, default=6, help="damped modes per record")
    p.add_argument("--out", help=out_help)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("encode", help="re-encode tiles from stored records",
                       description="Rewrite PNG tiles and sidecars from each record.npz in a dataset.")
    p.add_argument("dataset", help="dataset directory")
    p.add_argument("--out", help="destination dataset (default: in place)")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("train", help="train generator and discriminator",
                       description="Train from a key = value config file; flags override file values.")
    p.add_argument("--config", help="key = value config file")
    types = _field_types()
    for name in types:
        kind = types[name]
        flag = "--" + name.replace("_", "-")
        p.add_argument(flag, dest=name, default=None, type=_bool_flag if kind is bool else kind,
                       metavar=name.upper(), help=FIELD_HELP[name])
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="generate HR tiles from LR tiles",
                       description="Run a trained generator over every record of a dataset.")
    p.add_argument("--checkpoint", required=True, help="checkpoint directory or training output directory")
    p.add_argument("--data", required=True, help="dataset directory with LR tiles")
    p.add_argument("--out", help=out_help)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("evaluate", help="compare generated records with interpolation",
                       description="Write time-domain, image-metric, time-series and spectrum CSVs.")
    p.add_argument("--real", required=True, help="dataset directory with the real records")
    p.add_argument("--generated", required=True, help="directory written by infer")
    p.add_argument("--window", type=int, default=8,
                   help="also report SSIM over sliding windows of this side (0 disables)")
    p.add_argument("--out", help=out_help)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("spectrum", help="Fourier amplitude spectrum of one record",
                       description="Write the Fourier amplitude spectrum of a record channel as CSV.")
    p.add_argument("record", help="record directory (contains record.npz)")
    p.add_argument("--channel", default="acceleration", choices=("acceleration", "velocity", "displacement"),
                   help="channel to transform")
    p.add_argument("--generated", help="generated record directory; adds generated and interpolated columns")
    p.add_argument("--out", help=out_help)
    p.set_defaults(func=cmd_spectrum)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"seisrgan: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDiverged as exc:
        print(f"seisrgan: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataError, SeisrganError, FileNotFoundError) as exc:
        print(f"seisrgan: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        # remaining ValueErrors come from invalid option values
        print(f"seisrgan: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
