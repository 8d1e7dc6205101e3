"""Command-line entry point: ``atfm <command> [options]``.

Shared options come from one schema; a flat ``key = value`` file given with
``--config`` supplies values that explicit flags override.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable

import numpy as np
from threadpoolctl import threadpool_limits

from . import container
from .checkpoint import check_series_compatible, load_checkpoint, save_checkpoint
from .data.cache import load_series, save_series
from .data.external import read_external_csv
from .data.grid import DAY_SECONDS, GridSpec
from .data.ingest import ingest_trips, read_trips_csv
from .data.samples import Sample, enumerate_samples, make_sample, prepare, require_externals, split_samples
from .data.synth import SynthConfig, synth_generate
from .data.timeparse import parse_time
from .errors import AtfmError, ConfigError, DataError, SampleError
from .gradcheck import format_table, model_gradcheck
from .init import xavier_init
from .metrics import ha_baseline, inverse_scale_predictions, evaluate, rmse_mae, write_interval_errors
from .models import SpnConfig, declare_spn, forward
from .tensor import no_grad
from .train import TrainConfig, choose_seed, fit, predict_samples, validation_split, write_history

log = logging.getLogger("atfm")

EXIT_OK, EXIT_USAGE = 0, 2


def parse_grid(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise ValueError(f"grid must look like HxW, got {text!r}") from None
    if h < 1 or w < 1:
        raise ValueError("grid extents must be positive")
    return h, w


def parse_bbox(text: str) -> tuple[float, float, float, float]:
    parts = [float(v) for v in text.split(",")]
    if len(parts) != 4:
        raise ValueError("bbox needs latmin,lonmin,latmax,lonmax")
    return tuple(parts)


def parse_horizon(text: str) -> int:
    value = int(text)
    if value not in (1, 4):
        raise ValueError("horizon must be 1 or 4")
    return value


def optional_float(text: str) -> float | None:
    return None if text.strip().lower() in ("", "none") else float(text)


@dataclass(frozen=True)
class Option:
    key: str
    parse: Callable[[str], Any]
    default: Any
    help: str
    metavar: str | None = None

    @property
    def flag(self) -> str:
        return "--" + self.key.replace("_", "-")


SCHEMA = (
    Option("grid", parse_grid, (8, 8), "grid extents", "HxW"),
    Option("bbox", parse_bbox, None, "bounding box of the grid", "LATMIN,LONMIN,LATMAX,LONMAX"),
    Option("interval_mins", int, 30, "interval length in minutes", "MIN"),
    Option("start", str, None, "series start (epoch seconds or ISO-8601); default: midnight UTC before the first trip"),
    Option("days", int, 30, "length of a synthetic series in days"),
    Option("n", int, 4, "sequential intervals per sample"),
    Option("m", int, 2, "periodic intervals (prior days) per sample"),
    Option("residual_units", int, 12, "residual units in the feature extractor", "N"),
    Option("horizon", parse_horizon, 1, "forecast steps: 1 (SPN) or 4 (SPN-LONG)", "{1,4}"),
    Option("lr", float, 1e-4, "Adam learning rate"),
    Option("batch", int, 64, "minibatch size"),
    Option("epochs", int, 100, "maximum training epochs"),
    Option("patience", int, 10, "epochs without validation improvement before stopping"),
    Option("val_fraction", float, 0.1, "share of training samples held out for validation"),
    Option("test_days", int, 4, "trailing days held out for testing"),
    Option("seed", int, 0, "random seed"),
    Option("fusion_warmup", int, 0, "updates during which the fusion gates stay at their initial values", "STEPS"),
    Option("restarts", int, 1, "initializations probed for one epoch before training; the best by validation RMSE is kept"),
    Option("threads", int, 1, "BLAS threads"),
    Option("max_bad_fraction", float, 0.01, "abort ingestion when more rows than this fraction are unparseable"),
    Option("error_ratio", optional_float, None, "multiply reported errors by this ratio", "R"),
)
OPTIONS = {o.key: o for o in SCHEMA}

# the gradient check defaults to a tiny network
COMMAND_DEFAULTS = {"gradcheck": {"grid": (4, 4), "residual_units": 2}}


def read_config_file(path) -> dict[str, Any]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values: dict[str, Any] = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in OPTIONS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            values[key] = OPTIONS[key].parse(value)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: {key}: {exc}") from None
    return values


def resolve_config(args: argparse.Namespace) -> dict[str, Any]:
    """Schema defaults, then command defaults, then the config file, then flags."""
    cfg = {o.key: o.default for o in SCHEMA}
    cfg.update(COMMAND_DEFAULTS.get(args.command, {}))
    if args.config:
        cfg.update(read_config_file(data_path(args.config)))
    for o in SCHEMA:
        value = getattr(args, o.key)
        if value is not None:
            cfg[o.key] = value
    for key in ("n", "m", "residual_units", "batch", "epochs", "patience", "days", "threads", "interval_mins",
                "restarts"):
        if cfg[key] < 1:
            raise ConfigError(f"{key} must be at least 1")
    if cfg["test_days"] < 0:
        raise ConfigError("test_days must not be negative")
    if DAY_SECONDS % (cfg["interval_mins"] * 60):
        raise ConfigError("interval length must divide one day")
    return cfg


def data_path(path) -> Path:
    """Relative paths resolve against ``$ATFM_DATA_DIR`` when it is set."""
    path = Path(path)
    root = os.environ.get("ATFM_DATA_DIR")
    return path if path.is_absolute() or not root else Path(root) / path


def _schema_type(option: Option):
    def convert(text: str):
        try:
            return option.parse(text)
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None
    convert.__name__ = option.key
    return convert


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    group = shared.add_argument_group("shared options")
    group.add_argument("--config", metavar="PATH", help="flat key = value file; flags take precedence")
    for o in SCHEMA:
        default = "none" if o.default is None else o.default
        if isinstance(default, tuple):
            default = "x".join(map(str, default)) if o.key == "grid" else ",".join(map(str, default))
        group.add_argument(o.flag, dest=o.key, type=_schema_type(o), default=None, metavar=o.metavar,
                           help=f"{o.help} (default: {default})")

    parser = argparse.ArgumentParser(prog="atfm", description="Crowd-flow forecasting toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("ingest", parents=[shared], help="count trips into a cached flow series")
    p.add_argument("trips", help="trip CSV")
    p.add_argument("--externals", help="external-factor CSV")
    p.add_argument("--out", required=True, help="cached series path")

    p = sub.add_parser("synth", parents=[shared], help="generate a synthetic flow series")
    p.add_argument("--out", required=True, help="cached series path")

    p = sub.add_parser("train", parents=[shared], help="train SPN / SPN-LONG on a cached series")
    p.add_argument("series")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--history", help="loss history CSV (default: <out>.history.csv)")

    p = sub.add_parser("evaluate", parents=[shared], help="score a checkpoint on the held-out days")
    p.add_argument("series")
    p.add_argument("checkpoint")
    p.add_argument("--json", dest="json_out", help="write the report as JSON here")
    p.add_argument("--errors-csv", help="write per-interval errors here")

    p = sub.add_parser("predict", parents=[shared], help="forecast the maps starting at one interval")
    p.add_argument("series")
    p.add_argument("checkpoint")
    p.add_argument("--target", required=True, help="first predicted interval: index or timestamp")
    p.add_argument("--out", required=True, help="output container of predicted maps")

    sub.add_parser("gradcheck", parents=[shared], help="finite-difference check of every parameter group")

    p = sub.add_parser("export-attention", parents=[shared], help="dump the attention maps of one sample")
    p.add_argument("series")
    p.add_argument("checkpoint")
    p.add_argument("--sample", required=True, help="target interval of the sample: index or timestamp")
    p.add_argument("--out", required=True, help="output container")
    return parser


def model_config(cfg: dict, d_ext: int) -> SpnConfig:
    h, w = cfg["grid"]
    return SpnConfig(h=h, w=w, d_ext=d_ext, n=cfg["n"], m=cfg["m"],
                     residual_units=cfg["residual_units"], horizon=cfg["horizon"])


def train_end_of(series, test_days: int) -> int:
    end = len(series) - test_days * series.intervals_per_day
    if end <= 0:
        raise DataError(f"series of {series.num_days} days leaves nothing to train on with {test_days} test days")
    return end


def target_index(series, text: str) -> int:
    text = text.strip()
    if text.lstrip("-").isdigit() and len(text) < 10:
        return int(text)
    offset = parse_time(text) - series.epoch
    if offset % series.interval_seconds:
        raise DataError(f"{text} is not aligned to the interval grid")
    return offset // series.interval_seconds


def sample_for(series, target: int, cfg: SpnConfig) -> Sample:
    per_day = series.intervals_per_day
    day, t = divmod(target - 1, per_day)
    if target < 1 or t < cfg.n - 1:
        raise SampleError(f"interval {target} has no same-day window of {cfg.n} preceding intervals")
    return make_sample(day, t, cfg.n, cfg.m, cfg.horizon, per_day)


def cmd_ingest(args, cfg) -> int:
    if cfg["bbox"] is None:
        raise ConfigError("ingest needs --bbox")
    trips, errors, rows = read_trips_csv(data_path(args.trips))
    interval = cfg["interval_mins"] * 60
    if cfg["start"] is not None:
        epoch = parse_time(cfg["start"])
    elif trips:
        first = min(t.pickup_time for t in trips)
        epoch = int(first // DAY_SECONDS * DAY_SECONDS)
    else:
        epoch = 0
    _check_bad_rows(args.trips, errors, rows, cfg["max_bad_fraction"])
    h, w = cfg["grid"]
    grid = GridSpec(*cfg["bbox"], rows=h, cols=w, interval_seconds=interval, epoch=epoch)
    series, summary = ingest_trips(trips, grid)
    summary.parse_errors = errors
    if args.externals:
        slots, ext_errors = read_external_csv(data_path(args.externals), epoch, interval, len(series))
        ext_rows = sum(1 for _ in open(data_path(args.externals), encoding="utf-8")) - 1
        _check_bad_rows(args.externals, ext_errors, ext_rows, cfg["max_bad_fraction"])
        series.externals = slots
    summary.gaps = int((~series.usable(require_external=args.externals is not None)).sum())
    save_series(data_path(args.out), series)
    print("\n".join(summary.lines()))
    print(f"intervals         {len(series)}")
    return EXIT_OK


def _check_bad_rows(path, errors, rows: int, limit: float) -> None:
    if rows and len(errors) > limit * rows:
        shown = "\n".join(f"  line {line}: {why}" for line, why in errors[:20])
        more = f"\n  ... {len(errors) - 20} more" if len(errors) > 20 else ""
        raise DataError(f"{path}: {len(errors)} of {rows} rows unusable (limit {limit:.1%})\n{shown}{more}")
    for line, why in errors:
        log.warning("%s line %d skipped: %s", path, line, why)


def cmd_synth(args, cfg) -> int:
    h, w = cfg["grid"]
    scfg = SynthConfig(h=h, w=w, days=cfg["days"], intervals_per_day=DAY_SECONDS // (cfg["interval_mins"] * 60))
    series = synth_generate(scfg, cfg["seed"])
    save_series(data_path(args.out), series)
    print(f"wrote {len(series)} intervals of {h}x{w} maps to {args.out}")
    return EXIT_OK


def cmd_train(args, cfg) -> int:
    series = load_series(data_path(args.series))
    require_externals(series)
    if tuple(cfg["grid"]) != series.shape:
        log.info("using the series grid %dx%d", *series.shape)
        cfg["grid"] = series.shape
    end = train_end_of(series, cfg["test_days"])
    data = prepare(series, end)
    mcfg = model_config(cfg, data.d_ext)
    samples = enumerate_samples(series, mcfg.n, mcfg.m, mcfg.horizon)
    trainval, _ = split_samples(samples, end)
    train, val = validation_split(trainval, cfg["val_fraction"])
    if not train:
        raise DataError(f"no training samples ({samples.diagnostic})")
    tcfg = TrainConfig(lr=cfg["lr"], batch_size=cfg["batch"], max_epochs=cfg["epochs"],
                       patience=cfg["patience"], seed=cfg["seed"], val_fraction=cfg["val_fraction"],
                       early_stopping=bool(val), fusion_warmup_steps=cfg["fusion_warmup"])
    seed = cfg["seed"]
    if cfg["restarts"] > 1 and val:
        seed, scores = choose_seed(mcfg, data, train, val, tcfg, cfg["restarts"])
        print("initializations: " + ", ".join(f"seed {s} val {v:.5f}" for s, v in scores))
        tcfg = replace(tcfg, seed=seed)
    store = xavier_init(declare_spn(mcfg), seed)
    result = fit(store, mcfg, data, train, val, tcfg)
    out = data_path(args.out)
    save_checkpoint(out, store, mcfg, data.scaler, data.vocab,
                    {"train_end": end, "test_days": cfg["test_days"], "train": tcfg.to_dict()})
    history = data_path(args.history) if args.history else out.with_name(out.name + ".history.csv")
    write_history(history, result.history)
    print(f"trained {result.epochs_run} epochs on {len(train)} samples; best epoch {result.best_epoch}"
          f" (val rmse {result.best_val_rmse:.5f})")
    return EXIT_OK


def _load_pair(args, cfg):
    series = load_series(data_path(args.series))
    ckpt = load_checkpoint(data_path(args.checkpoint))
    end = ckpt.meta.get("run", {}).get("train_end") or train_end_of(series, cfg["test_days"])
    if end > len(series):
        raise DataError("series is shorter than the checkpoint's training span")
    fresh = prepare(series, end)
    check_series_compatible(ckpt, series.shape, fresh.d_ext, fresh.scaler)
    data = prepare(series, end, ckpt.scaler, ckpt.vocab)
    return series, ckpt, data, end


def cmd_evaluate(args, cfg) -> int:
    series, ckpt, data, end = _load_pair(args, cfg)
    samples = enumerate_samples(series, ckpt.cfg.n, ckpt.cfg.m, ckpt.cfg.horizon)
    _, test = split_samples(samples, end)
    if not test:
        raise DataError(f"no test samples after interval {end} ({samples.diagnostic})")
    preds, _ = predict_samples(ckpt.store, ckpt.cfg, data, test, cfg["batch"])
    preds = inverse_scale_predictions(preds, ckpt.scaler)
    targets = series.flows[np.array([s.targets for s in test])]
    stamps = [series.timestamp(s.target) for s in test]
    train_flows = series.flows[:end][series.present[:end]]
    report = evaluate(preds, targets, stamps, train_flows, cfg["error_ratio"])
    print(report.to_text())
    ha_p, ha_t, skipped = ha_baseline(series, [s.target for s in test])
    if len(ha_p):
        ha_rmse, ha_mae = rmse_mae(ha_p, ha_t)
        print(f"HA baseline RMSE {ha_rmse:.4f} MAE {ha_mae:.4f} over {len(ha_p)} samples ({len(skipped)} without history)")
    if args.json_out:
        data_path(args.json_out).write_text(report.to_json() + "\n", encoding="utf-8")
    if args.errors_csv:
        write_interval_errors(data_path(args.errors_csv), series, [s.target for s in test], preds[:, 0])
    return EXIT_OK


def cmd_predict(args, cfg) -> int:
    series, ckpt, data, _ = _load_pair(args, cfg)
    sample = sample_for(series, target_index(series, args.target), ckpt.cfg)
    inputs, _ = data.gather_one(sample)
    with no_grad():
        maps = forward(inputs, ckpt.store, ckpt.cfg).arrays()
    maps = inverse_scale_predictions(maps, ckpt.scaler)
    entries = {f"pred/{g}": maps[i] for i, g in enumerate(sample.targets)}
    container.save(data_path(args.out), entries)
    print(f"wrote {len(entries)} predicted maps for intervals {sample.targets[0]}..{sample.targets[-1]}")
    return EXIT_OK


def cmd_gradcheck(args, cfg) -> int:
    mcfg = model_config(cfg, d_ext=5)
    results = model_gradcheck(mcfg, seed=cfg["seed"])
    print(format_table(results))
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} of {len(results)} groups exceed tolerance")
        return 5
    print(f"all {len(results)} groups within tolerance")
    return EXIT_OK


def cmd_export_attention(args, cfg) -> int:
    series, ckpt, data, _ = _load_pair(args, cfg)
    sample = sample_for(series, target_index(series, args.sample), ckpt.cfg)
    inputs, _ = data.gather_one(sample)
    with no_grad():
        fc = forward(inputs, ckpt.store, ckpt.cfg)
    entries = {}
    for seq, trace in fc.attention.items():
        for step, attn in enumerate(trace, start=1):
            entries[f"attn/{seq}/{step}"] = attn.data
    container.save(data_path(args.out), entries)
    print(f"wrote {len(entries)} attention maps")
    return EXIT_OK


COMMANDS = {
    "ingest": cmd_ingest,
    "synth": cmd_synth,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "predict": cmd_predict,
    "gradcheck": cmd_gradcheck,
    "export-attention": cmd_export_attention,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        with threadpool_limits(cfg["threads"]):
            return COMMANDS[args.command](args, cfg)
    except AtfmError as exc:
        print(f"atfm {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"atfm {args.command}: {exc}", file=sys.stderr)
        return DataError.exit_code
    except ValueError as exc:
        print(f"atfm {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
