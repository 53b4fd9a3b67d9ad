"""``stdn`` command line: ingest, synth, train, eval, ablate.

Exit codes: 0 success, 1 usage error, 2 data/config error, 3 numerical failure.
The ``STDN_OUTPUT_ROOT`` environment variable sets the default output root.
"""

import argparse
import hashlib
import json
import logging
import math
import os
import shlex
import sys
import time
from datetime import datetime, timezone

from . import __version__
from .ablation import run_ablation
from .config import effective_dict, load_layers, render, split_sections
from .container import ContainerError, atomic_write, file_digest
from .data.bundle import load_bundle, save_bundle
from .data.grid import GridSpec, IngestError, TimeSpec, ingest_trips, parse_timestamp, write_trips_csv
from .data.synth import SynthConfigError, load_synth_config, synthesize_city
from .data.tensors import ConfigError, build_flows, build_volume
from .model import VARIANTS, STDNModel, build_variant
from .pipeline import prepare_split, resolve_train_days
from .training import NumericalError, evaluate, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("stdn")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _out(path, default_name):
    if path:
        return path
    return os.path.join(os.environ.get("STDN_OUTPUT_ROOT", "."), default_name)


def _grid(text):
    try:
        rows, cols = (int(x) for x in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must look like 10x20, got {text!r}") from None
    return rows, cols


# ---------------------------------------------------------------- manifest

def _digest_text(text):
    return hashlib.sha256(text.encode()).hexdigest()


def write_manifest(path, config_values, dataset_path, argv):
    """Record what a run consumed; written before any training starts."""
    config_text = json.dumps(config_values, sort_keys=True)
    manifest = {
        "tool_version": __version__,
        "command_line": " ".join(shlex.quote(a) for a in argv),
        "config": config_values,
        "config_digest": _digest_text(config_text),
        "dataset_path": os.path.abspath(dataset_path),
        "dataset_digest": file_digest(dataset_path),
        "created": datetime.now(timezone.utc).isoformat(),
    }
    atomic_write(path, json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return manifest


def verify_manifest(path):
    """Recompute both digests; raises :class:`ConfigError` on mismatch."""
    with open(path) as fh:
        manifest = json.load(fh)
    if _digest_text(json.dumps(manifest["config"], sort_keys=True)) != manifest["config_digest"]:
        raise ConfigError("manifest config digest mismatch")
    if file_digest(manifest["dataset_path"]) != manifest["dataset_digest"]:
        raise ConfigError(f"dataset {manifest['dataset_path']} changed since the run")
    return manifest


# ---------------------------------------------------------------- commands

def infer_time_spec(path, interval_minutes):
    """Whole UTC days covering every departure and arrival in the file."""
    import csv
    lo, hi = math.inf, -math.inf
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            try:
                a, b = parse_timestamp(row["depart_ts"]), parse_timestamp(row["arrive_ts"])
            except (KeyError, ValueError, TypeError):
                continue
            lo, hi = min(lo, a, b), max(hi, a, b)
    if not math.isfinite(lo):
        raise IngestError("no parseable timestamps to infer the horizon from")
    start = math.floor(lo / 86400) * 86400
    days = max(1, math.ceil((hi + 1 - start) / 86400))
    return TimeSpec.for_days(days, interval_minutes, float(start))


def cmd_ingest(args):
    rows, cols = args.grid
    bbox = tuple(float(x) for x in args.bbox.split(",")) if args.bbox else None
    grid = GridSpec(rows, cols, args.region_edge_m, bbox)
    if args.start is not None:
        if args.days is None:
            raise UsageError("--start needs --days")
        time_spec = TimeSpec.for_days(args.days, args.interval, parse_timestamp(args.start))
    else:
        time_spec = infer_time_spec(args.trips, args.interval)
    trips = ingest_trips(args.trips, grid, time_spec)
    volume = build_volume(trips, grid, time_spec)
    flows = build_flows(trips, grid, time_spec)
    out = _out(args.out, "bundle.stdn")
    save_bundle(out, volume, flows, {
        "trip_count": len(trips), "skipped_bounds": trips.skipped_bounds,
        "skipped_horizon": trips.skipped_horizon, "malformed_rows": len(trips.diagnostics)})
    print(f"regions={grid.n} ({rows}x{cols}) intervals={time_spec.m} ({args.interval} min)")
    print(f"trips={len(trips)} skipped_bounds={trips.skipped_bounds} "
          f"skipped_horizon={trips.skipped_horizon} malformed={len(trips.diagnostics)}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_synth(args):
    cfg = load_synth_config(args.config)
    trips = synthesize_city(cfg, args.seed)
    out = _out(args.out, "trips.csv")
    write_trips_csv(out, trips, cfg.time, trips.meta["depart_ts"], trips.meta["arrive_ts"])
    truth = {"seed": args.seed, "days": cfg.days, "interval_minutes": cfg.interval_minutes,
             "start_epoch": cfg.start_epoch, "rows": cfg.rows, "cols": cfg.cols,
             "peak_shift_per_day": trips.meta["shifts"],
             "dropped_horizon": trips.meta["dropped_horizon"], "trips": len(trips)}
    atomic_write(out + ".truth.json", json.dumps(truth, sort_keys=True, indent=2) + "\n")
    print(f"trips={len(trips)} days={cfg.days} grid={cfg.rows}x{cfg.cols}")
    print(f"wrote {out} and {out}.truth.json")
    return EXIT_OK


def _run_config(args, **forced):
    values = load_layers(args.config or (), args.set or ())
    values.update({k: v for k, v in forced.items() if v is not None})
    return split_sections(values)


def cmd_train(args):
    model_cfg, train_cfg, data_cfg = _run_config(args, variant=args.variant, seed=args.seed)
    out_dir = _out(args.out, "run")
    os.makedirs(out_dir, exist_ok=True)
    values = effective_dict(model_cfg, train_cfg, data_cfg)
    write_manifest(os.path.join(out_dir, "manifest.json"), values, args.bundle, ["stdn"] + args.argv)
    atomic_write(os.path.join(out_dir, "effective_config.txt"), render(values))

    volume, flows, _ = load_bundle(args.bundle)
    data, normalizer = prepare_split(volume, flows, model_cfg, data_cfg)
    model = build_variant(model_cfg, seed=train_cfg.seed)
    model.normalizer = normalizer

    def progress(epoch, tl, vl):
        log.info("epoch %d train %.6f val %.6f", epoch, tl, vl)

    t0 = time.perf_counter()
    _, record = train(model, data.train, data.val, train_cfg, progress)
    model.save(os.path.join(out_dir, "checkpoint.stdn"), normalizer)
    atomic_write(os.path.join(out_dir, "run_record.json"), record.to_json())
    print(f"variant={model_cfg.variant} seed={train_cfg.seed} epochs={len(record.history)} "
          f"best_epoch={record.best_epoch} wall_clock={time.perf_counter() - t0:.1f}s")
    print(f"wrote {out_dir}/checkpoint.stdn")
    return EXIT_OK


def cmd_eval(args):
    model = STDNModel.load(args.checkpoint)
    volume, flows, _ = load_bundle(args.bundle)
    cfg = model.config
    if volume.time.intervals_per_day != cfg.intervals_per_day:
        raise ConfigError(f"checkpoint expects {cfg.intervals_per_day} intervals/day, "
                          f"bundle has {volume.time.intervals_per_day}")
    from .data.samples import make_samples
    from .config import DataConfig
    ipd = cfg.intervals_per_day
    days = volume.m // ipd
    start_day = args.test_start_day
    if start_day is None:
        start_day = resolve_train_days(DataConfig(train_days=args.train_days or 0), volume.time)
    end_day = args.test_end_day or days
    normalizer = model.normalizer
    if normalizer is None:
        raise ConfigError("checkpoint carries no normaliser")
    samples = make_samples(volume, flows, normalizer, cfg.sample_config(),
                           target_range=(start_day * ipd, end_day * ipd))
    metrics = evaluate(model, samples, args.threshold)
    doc = {"checkpoint": os.path.abspath(args.checkpoint), "threshold": args.threshold,
           "test_days": [start_day, end_day], "samples": len(samples), **metrics.to_dict()}
    out = _out(args.out, "metrics.json")
    atomic_write(out, json.dumps(doc, sort_keys=True, indent=2) + "\n")
    print(f"start: RMSE={metrics.rmse_start:.4f} MAPE={100 * metrics.mape_start:.2f}% "
          f"n_evaluated={metrics.n_evaluated_start}")
    print(f"end:   RMSE={metrics.rmse_end:.4f} MAPE={100 * metrics.mape_end:.2f}% "
          f"n_evaluated={metrics.n_evaluated_end}")
    return EXIT_OK


def cmd_ablate(args):
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    if not variants or not seeds:
        raise UsageError("need at least one variant and one seed")
    for v in variants:
        if v not in VARIANTS:
            raise UsageError(f"unknown variant {v!r}")
    model_cfg, train_cfg, data_cfg = _run_config(args)
    out_dir = _out(args.out, "ablation")
    os.makedirs(out_dir, exist_ok=True)
    values = effective_dict(model_cfg, train_cfg, data_cfg)
    values.update({"variants": variants, "seeds": seeds})
    write_manifest(os.path.join(out_dir, "manifest.json"), values, args.bundle, ["stdn"] + args.argv)
    volume, flows, _ = load_bundle(args.bundle)
    data, _ = prepare_split(volume, flows, model_cfg, data_cfg)
    report = run_ablation(variants, seeds, data, model_cfg, train_cfg, out_dir=out_dir,
                          jobs=args.jobs, include_ha=args.ha,
                          progress=lambda v, s: log.info("finished %s seed %s", v, s))
    print(report.to_text(), end="")
    print(f"wrote {out_dir}/report.csv")
    return EXIT_NUMERIC if report.failures else EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser():
    p = _Parser(prog="stdn", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"stdn {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("ingest", help="trip CSV -> volume/flow bundle")
    s.add_argument("trips")
    s.add_argument("--grid", type=_grid, default=(10, 20), help="ROWSxCOLS (default 10x20)")
    s.add_argument("--interval", type=int, default=30, help="interval minutes (default 30)")
    s.add_argument("--start", help="horizon start, ISO-8601 or epoch seconds")
    s.add_argument("--days", type=int, help="horizon length in days (with --start)")
    s.add_argument("--bbox", help="lat_min,lon_min,lat_max,lon_max for coordinate CSVs")
    s.add_argument("--region-edge-m", type=float, default=1000.0)
    s.add_argument("-o", "--out")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("synth", help="synthetic city -> trip CSV + ground-truth sidecar")
    s.add_argument("config")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("-o", "--out")
    s.set_defaults(func=cmd_synth)

    for name, func, helptext in (("train", cmd_train, "train one variant"),
                                 ("ablate", cmd_ablate, "variant x seed sweep")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("bundle")
        s.add_argument("--config", action="append", help="key = value file (repeatable, later wins)")
        s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one key")
        s.add_argument("-o", "--out")
        s.set_defaults(func=func)
    train_p = sub.choices["train"]
    train_p.add_argument("--variant", choices=VARIANTS)
    train_p.add_argument("--seed", type=int)
    ablate_p = sub.choices["ablate"]
    ablate_p.add_argument("--variants", default=",".join(VARIANTS))
    ablate_p.add_argument("--seeds", default="1,2,3")
    ablate_p.add_argument("--jobs", type=int, default=1)
    ablate_p.add_argument("--ha", action="store_true", help="append a historical-average row")

    s = sub.add_parser("eval", help="metrics of a checkpoint on a bundle's test days")
    s.add_argument("checkpoint")
    s.add_argument("bundle")
    s.add_argument("--threshold", type=float, default=10.0)
    s.add_argument("--test-start-day", type=int)
    s.add_argument("--test-end-day", type=int)
    s.add_argument("--train-days", type=int, help="test starts after this many days if no start day")
    s.add_argument("-o", "--out")
    s.set_defaults(func=cmd_eval)
    return p


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"stdn: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, FloatingPointError) as exc:
        print(f"stdn: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, IngestError, SynthConfigError, ContainerError, FileNotFoundError,
            ValueError) as exc:
        print(f"stdn: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
