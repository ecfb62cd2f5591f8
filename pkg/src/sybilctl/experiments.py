"""Experiment presets, cached sweep driver, and result aggregation.

A preset is a named grid of simulator configurations, one per output row.
Each (config, seed) point runs once and is cached on disk, so repeated
sweeps and overlapping presets reuse finished runs.  Aggregation reduces
the per-seed results for a row into means with 95% confidence intervals;
tables can be written as CSV (fixed column order) or JSON lines, and both
formats are byte-stable for identical inputs.
"""

import csv
import hashlib
import json
import multiprocessing
import os
import sys

from .engine import SimConfig, run_simulation

# bump when simulator semantics change; invalidates cached runs
ENGINE_TAG = "sybilctl-sim-v3"

CACHE_ENV = "SYBILCTL_SIM_CACHE"
OUT_ENV = "SYBILCTL_OUT"

Z95 = 1.96

# settings shared by the figure presets (large network, long warmup)
FULL_SCALE = {
    "n_honest": 1000,
    "ping_interval": 5.0,
    "puzzle_interval": 20.0,
    "warmup": 10000.0,
    "measure_window": 500.0,
    "lookups_per_node": 10,
    "lookup_ttl": 30,
    "redundant_lookups": 2,
    "succ_list_len": 4,
}

MAINT_SWEEP = (15.0, 30.0, 45.0)
SYBIL_SWEEP = (0.0, 0.05, 0.10, 0.15, 0.20)
FIXED_MAINT = 30.0

DEFAULT_SEEDS = 10


def _cfg(**over):
    kw = dict(FULL_SCALE)
    kw.update(over)
    cfg = SimConfig(**kw)
    cfg.validate()
    return cfg


def preset_fig4():
    """Plain ring vs work-protocol ring, no sybils, sweeping maintenance rate."""
    swept = ["mode", "replicas", "maint_interval"]
    rows = []
    for f in MAINT_SWEEP:
        rows.append(({"mode": "chord", "replicas": 0, "maint_interval": f},
                     _cfg(sybilcontrol=False, replicas=0, maint_interval=f)))
        for r in (0, 1, 2):
            rows.append(({"mode": "sybilcontrol", "replicas": r, "maint_interval": f},
                         _cfg(replicas=r, maint_interval=f)))
    return swept, rows


def preset_fig5():
    """Work-protocol ring under attack, sweeping replication and sybil share."""
    swept = ["replicas", "sybil_fraction"]
    rows = []
    for r in (0, 1, 2):
        for frac in SYBIL_SWEEP:
            rows.append(({"replicas": r, "sybil_fraction": frac},
                         _cfg(replicas=r, maint_interval=FIXED_MAINT,
                              sybil_fraction=frac)))
    return swept, rows


def _virtual_grid():
    swept = ["virtual_nodes", "replicas", "sybil_fraction"]
    rows = []
    for virt in (False, True):
        for r in (0, 1, 2):
            for frac in SYBIL_SWEEP:
                rows.append(({"virtual_nodes": virt, "replicas": r,
                              "sybil_fraction": frac},
                             _cfg(virtual_nodes=virt, replicas=r,
                                  maint_interval=FIXED_MAINT,
                                  sybil_fraction=frac)))
    return swept, rows


def preset_fig6():
    """Virtual-node users vs single-node users under attack (success rates)."""
    return _virtual_grid()


def preset_fig7():
    """Same grid as fig6; read the hop columns."""
    return _virtual_grid()


def preset_smoke():
    """Small, fast grid for demos and CI."""
    swept = ["replicas", "sybil_fraction"]
    small = dict(n_honest=120, warmup=400.0, measure_window=120.0,
                 lookups_per_node=4, maint_interval=FIXED_MAINT)
    rows = []
    for r in (0, 2):
        for frac in (0.0, 0.2):
            over = dict(small, replicas=r, sybil_fraction=frac)
            rows.append(({"replicas": r, "sybil_fraction": frac},
                         SimConfig(**over)))
    return swept, rows


PRESETS = {
    "paper-default": preset_fig4,
    "fig4": preset_fig4,
    "fig5": preset_fig5,
    "fig6": preset_fig6,
    "fig7": preset_fig7,
    "smoke": preset_smoke,
}


# ---------------- cached single runs ----------------

def cache_dir_from_env(explicit=None):
    if explicit:
        return explicit
    return os.environ.get(CACHE_ENV) or None


def point_key(cfg: SimConfig, seed: int) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True) + f"|{seed}|{ENGINE_TAG}"
    return hashlib.sha256(blob.encode()).hexdigest()


def run_point(cfg: SimConfig, seed: int, cache_dir=None) -> dict:
    """Run one (config, seed) simulation, reusing a cached result if present."""
    if not cache_dir:
        return run_simulation(cfg, seed)
    os.makedirs(cache_dir, exist_ok=True)
    path = os.path.join(cache_dir, point_key(cfg, seed) + ".json")
    if os.path.exists(path):
        with open(path) as fh:
            return json.load(fh)
    res = run_simulation(cfg, seed)
    tmp = path + f".tmp{os.getpid()}"
    with open(tmp, "w") as fh:
        json.dump(res, fh)
    os.replace(tmp, path)
    return res


def _pool_task(args):
    idx, cfg_dict, seed, cache_dir = args
    try:
        res = run_point(SimConfig.from_dict(cfg_dict), seed, cache_dir)
        return idx, seed, res, None
    except Exception as exc:  # sweep keeps going; the row is marked failed
        return idx, seed, None, f"{type(exc).__name__}: {exc}"


# ---------------- aggregation ----------------

def mean_ci(values):
    """Mean and normal-approximation 95% interval half-width."""
    vals = [v for v in values if v is not None]
    if not vals:
        return None, 0.0
    n = len(vals)
    m = sum(vals) / n
    if n < 2:
        return m, 0.0
    var = sum((v - m) ** 2 for v in vals) / (n - 1)
    half = Z95 * (var / n) ** 0.5
    return m, half


def aggregate_row(results) -> dict:
    """Reduce per-seed reports for one config point to means with 95% CIs."""
    rates = [r["success_rate"] for r in results]
    hops = [r["mean_hops"] for r in results]
    rate_m, rate_h = mean_ci(rates)
    hops_m, hops_h = mean_ci(hops)
    out = {
        "success_rate": round(rate_m, 6) if rate_m is not None else None,
        "ci_lo": round(rate_m - rate_h, 6) if rate_m is not None else None,
        "ci_hi": round(rate_m + rate_h, 6) if rate_m is not None else None,
        "mean_hops": round(hops_m, 4) if hops_m is not None else None,
        "hops_ci_lo": round(hops_m - hops_h, 4) if hops_m is not None else None,
        "hops_ci_hi": round(hops_m + hops_h, 4) if hops_m is not None else None,
        "seeds": len(results),
    }
    return out

METRIC_COLS = ["success_rate", "ci_lo", "ci_hi",
               "mean_hops", "hops_ci_lo", "hops_ci_hi", "seeds"]


# ---------------- sweep driver ----------------

class SweepResult:
    def __init__(self, columns, rows, raw, errors):
        self.columns = columns
        self.rows = rows      # aggregated dicts, preset order
        self.raw = raw        # flat list of per-run reports
        self.errors = errors  # list of (params, seed, message)


def sweep(preset: str, seeds, cache_dir=None, workers=1, progress=None) -> SweepResult:
    """Run a preset grid over the given seeds (see sweep_grid)."""
    if preset not in PRESETS:
        raise KeyError(f"unknown preset {preset!r}; have {sorted(PRESETS)}")
    swept, grid = PRESETS[preset]()
    return sweep_grid(swept, grid, seeds, cache_dir=cache_dir,
                      workers=workers, progress=progress)


def sweep_grid(swept, grid, seeds, cache_dir=None, workers=1, progress=None) -> SweepResult:
    """Run a grid of (row_params, config) points over the given seeds.

    A failed run is recorded in .errors and excluded from its row's
    aggregate (the row's `seeds` column reflects only finished runs);
    the sweep itself keeps going.  An empty seed list yields an empty table.
    """
    columns = list(swept) + METRIC_COLS
    seeds = list(seeds)
    if not seeds:
        return SweepResult(columns, [], [], [])

    tasks = [(idx, cfg.to_dict(), seed, cache_dir)
             for idx, (_, cfg) in enumerate(grid) for seed in seeds]
    per_row = {idx: [] for idx in range(len(grid))}
    raw, errors = [], []
    done = 0

    def collect(idx, seed, res, err):
        nonlocal done
        done += 1
        if err is None:
            per_row[idx].append(res)
            raw.append(res)
        else:
            errors.append((grid[idx][0], seed, err))
        if progress:
            progress(done, len(tasks), grid[idx][0], seed, err)

    if workers and workers > 1:
        with multiprocessing.Pool(workers) as pool:
            for idx, seed, res, err in pool.imap_unordered(_pool_task, tasks):
                collect(idx, seed, res, err)
    else:
        for task in tasks:
            collect(*_pool_task(task))

    rows = []
    for idx, (params, _) in enumerate(grid):
        row = dict(params)
        row.update(aggregate_row(per_row[idx]))
        rows.append(row)
    return SweepResult(columns, rows, raw, errors)


# ---------------- emission ----------------

def write_csv(path, columns, rows):
    """Write aggregated rows with the stable column order; refuses empty tables."""
    if not rows:
        raise ValueError("refusing to write an empty table as CSV")
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns)
        w.writeheader()
        for row in rows:
            w.writerow({k: _cell(row.get(k)) for k in columns})


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return int(v)
    return v


def write_jsonl(path, rows):
    """One JSON object per aggregated row; parsing the file restores the table."""
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def read_jsonl(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def emit(out_dir, name, result: SweepResult, formats=("csv",), raw=False):
    """Write one table file per requested format; returns the paths written."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for fmt in formats:
        if fmt == "csv":
            p = os.path.join(out_dir, f"{name}.csv")
            write_csv(p, result.columns, result.rows)
        elif fmt == "jsonl":
            p = os.path.join(out_dir, f"{name}.jsonl")
            write_jsonl(p, result.rows)
        else:
            raise ValueError(f"unknown format {fmt!r}")
        paths.append(p)
    if raw:
        p = os.path.join(out_dir, f"{name}-runs.jsonl")
        with open(p, "w") as fh:
            for res in result.raw:
                fh.write(json.dumps(res, sort_keys=True) + "\n")
        paths.append(p)
    return paths


def default_workers():
    return max(1, os.cpu_count() or 1)


def print_progress(done, total, params, seed, err):
    tag = " ".join(f"{k}={v}" for k, v in params.items())
    mark = "FAIL" if err else "ok"
    sys.stderr.write(f"[{done}/{total}] {tag} seed={seed} {mark}\n")
    sys.stderr.flush()
