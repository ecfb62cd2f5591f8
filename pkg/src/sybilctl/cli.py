"""Command-line front end for simulation runs and figure-data sweeps.

Subcommands:
  run      sweep a named preset across seeds and emit CSV / JSON-lines tables
  single   run one simulation and print (or save) its full report as JSON
  presets  list the available preset grids

Exit codes: 0 on success, 2 on configuration errors (bad preset, bad
override, invalid parameter combination), 1 on IO or unexpected failures.
"""

import argparse
import configparser
import json
import os
import sys

from .engine import ConfigError, SimConfig
from . import experiments as xp


def parse_value(text: str):
    """Parse an override value: JSON literal if possible, else a bare string."""
    try:
        return json.loads(text)
    except ValueError:
        return text


def parse_overrides(pairs):
    out = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not key=value")
        key, _, val = pair.partition("=")
        out[key.strip()] = parse_value(val.strip())
    return out


def load_config_file(path) -> dict:
    """Read a flat key=value config file (INI sections optional, merged)."""
    cp = configparser.ConfigParser()
    with open(path) as fh:
        text = fh.read()
    try:
        cp.read_string(text)
    except configparser.MissingSectionHeaderError:
        cp.read_string("[sim]\n" + text)
    merged = {}
    for section in cp.sections():
        for key, val in cp.items(section):
            merged[key] = parse_value(val)
    return merged


def build_config(file_path=None, overrides=None, baseline=False) -> SimConfig:
    d = {}
    if file_path:
        d.update(load_config_file(file_path))
    d.update(overrides or {})
    if baseline:
        d["sybilcontrol"] = False
    cfg = SimConfig.from_dict(d)
    cfg.validate()
    return cfg


def apply_overrides(cfg: SimConfig, overrides: dict) -> SimConfig:
    if not overrides:
        return cfg
    d = cfg.to_dict()
    d.update(overrides)
    out = SimConfig.from_dict(d)
    out.validate()
    return out


def cmd_run(args) -> int:
    overrides = parse_overrides(args.override)
    if args.config:
        base = load_config_file(args.config)
        base.update(overrides)
        overrides = base
    seeds = [args.seed_base + i for i in range(args.seeds)]
    cache = xp.cache_dir_from_env(args.cache)
    out_dir = args.out or os.environ.get(xp.OUT_ENV) or "results"

    if args.preset not in xp.PRESETS:
        raise ConfigError(f"unknown preset {args.preset!r}; "
                          f"available: {', '.join(sorted(xp.PRESETS))}")

    # overrides are applied to every grid point, so validate them up front
    swept, grid = xp.PRESETS[args.preset]()
    patched = [(params, apply_overrides(cfg, overrides)) for params, cfg in grid]

    progress = None if args.quiet else xp.print_progress
    result = xp.sweep_grid(swept, patched, seeds, cache_dir=cache,
                           workers=args.workers, progress=progress)

    for params, seed, msg in result.errors:
        tag = " ".join(f"{k}={v}" for k, v in params.items())
        sys.stderr.write(f"run failed: {tag} seed={seed}: {msg}\n")

    if not result.rows:
        print("empty sweep, nothing to emit")
        return 0

    formats = ("csv", "jsonl") if args.format == "both" else (args.format,)
    paths = xp.emit(out_dir, args.preset, result, formats=formats, raw=args.raw)
    for p in paths:
        print(p)
    return 0


def cmd_single(args) -> int:
    overrides = parse_overrides(args.override)
    cfg = build_config(args.config, overrides, baseline=args.baseline)
    if args.trace:
        cfg.trace_path = args.trace
    cache = xp.cache_dir_from_env(args.cache)
    report = xp.run_point(cfg, args.seed, cache)
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.json:
        with open(args.json, "w") as fh:
            fh.write(text + "\n")
        print(args.json)
    else:
        print(text)
    return 0


def cmd_presets(args) -> int:
    for name in sorted(xp.PRESETS):
        swept, grid = xp.PRESETS[name]()
        print(f"{name}: {len(grid)} rows, swept: {', '.join(swept)}")
    return 0


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="sybilctl-sim",
        description="Discrete-event simulator for a proof-of-work defended ring overlay.")
    sub = ap.add_subparsers(dest="cmd", required=True)

    runp = sub.add_parser("run", help="sweep a preset and emit table files")
    runp.add_argument("--preset", required=True)
    runp.add_argument("--seeds", type=int, default=xp.DEFAULT_SEEDS,
                      help="number of seeds per grid point (default 10)")
    runp.add_argument("--seed-base", type=int, default=1,
                      help="first seed value (default 1)")
    runp.add_argument("--out", default=None,
                      help="output directory (default results/, or $SYBILCTL_OUT)")
    runp.add_argument("--format", choices=("csv", "jsonl", "both"), default="csv")
    runp.add_argument("--raw", action="store_true",
                      help="also write the raw per-run reports")
    runp.add_argument("--cache", default=None,
                      help="run-cache directory (default $SYBILCTL_SIM_CACHE)")
    runp.add_argument("--workers", type=int, default=xp.default_workers())
    runp.add_argument("--override", action="append", metavar="KEY=VALUE",
                      help="config override applied to every grid point")
    runp.add_argument("--config", default=None,
                      help="key=value file merged in before --override")
    runp.add_argument("--quiet", action="store_true")
    runp.set_defaults(fn=cmd_run)

    single = sub.add_parser("single", help="run one simulation, print the report")
    single.add_argument("--seed", type=int, default=1)
    single.add_argument("--override", action="append", metavar="KEY=VALUE")
    single.add_argument("--config", default=None)
    single.add_argument("--baseline", action="store_true",
                        help="plain ring: no puzzles, no admission control")
    single.add_argument("--trace", default=None, help="write a JSON-lines event trace")
    single.add_argument("--json", default=None, help="write the report to this file")
    single.add_argument("--cache", default=None)
    single.set_defaults(fn=cmd_single)

    pre = sub.add_parser("presets", help="list preset grids")
    pre.set_defaults(fn=cmd_presets)
    return ap


def main(argv=None) -> int:
    ap = make_parser()
    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, KeyError) as exc:
        sys.stderr.write(f"configuration error: {exc}\n")
        return 2
    except OSError as exc:
        sys.stderr.write(f"io error: {exc}\n")
        return 1
    except Exception as exc:  # pragma: no cover - last resort
        sys.stderr.write(f"error: {type(exc).__name__}: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
