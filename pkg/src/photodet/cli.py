"""Configuration-driven command line front end.

Subcommands
-----------
run       execute a simulation described by a JSON config
validate  check a config (schema, spec invariants, grid stability) without running
catalog   dump the closed-form reference catalog (optionally with arbitrations)

Config schema (units: ns, rad/ns, 1/ns rates)
----------------------------------------------
{
  "detector": {"builder": "two_state" | "three_state" | "quadratic" |
                "degenerate_array" | "band", "params": {...}}
              or {"matrices": {"H": {"re": [[..]], "im": [[..]]}, ...},
                  "amplifiers": [{"levels": [..], "weights": [..], "rate": k, ...}]},
  "pulse":    {"shape": "gaussian", "sigma": 1.0, "center": 0.0, "carrier": 0.0},
  "field":    {"fock": 1} or {"coeffs": {"re": [[..]], "im": [[..]]}},
  "grid":     {"t_start": -8.0, "t_end": 8.0, "dt": 0.005}   (or omit for defaults),
  "mode":     "average" | "trajectories" | "metrics" | "sweep",
  "trajectories": {"n_traj": 2000, "master_seed": 1, "window": "sliding"},
  "sweep":    {"parameter": "detector.params.chi", "values": [..] or
               {"start": a, "stop": b, "points": n, "log": false},
               "metrics": ["estimator_efficiency", "mc_efficiency", ...]},
  "outputs":  {"directory": "out", "formats": ["csv", "json"]}
}

Exit codes: 0 ok, 2 config/schema error, 3 numerical precondition, 4 I/O error.
Every output file embeds the config hash and tool version. The default output
directory can be set with the PHOTODET_OUTDIR environment variable.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, hierarchy, metrics, model, reference, stochastic
from .liouvillian import build as build_liouvillian

EXIT_SCHEMA = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


class ConfigError(ValueError):
    """Raised for malformed configs; carries the offending field path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class NumericError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# config parsing
# ---------------------------------------------------------------------------


def _require(cfg: dict, key: str, path: str):
    if key not in cfg:
        raise ConfigError(f"{path}.{key}", "missing required field")
    return cfg[key]


def load_config(path: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise ConfigError(path, f"cannot read config: {err}") from err
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(path, f"invalid JSON (line {err.lineno}, col {err.colno}): "
                                f"{err.msg}") from err
    if not isinstance(cfg, dict):
        raise ConfigError(path, "top level must be a JSON object")
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


def _build_inputs(cfg: dict):
    try:
        spec = model.spec_from_dict(_require(cfg, "detector", "config"))
    except (ValueError, TypeError, KeyError) as err:
        raise ConfigError("config.detector", str(err)) from err
    try:
        pulse = model.pulse_from_dict(_require(cfg, "pulse", "config"))
    except (ValueError, TypeError, KeyError) as err:
        raise ConfigError("config.pulse", str(err)) from err
    try:
        field_state = model.field_from_dict(_require(cfg, "field", "config"))
    except (ValueError, TypeError, KeyError) as err:
        raise ConfigError("config.field", str(err)) from err
    return spec, pulse, field_state


def _build_grid(cfg: dict, spec, pulse, dt_override=None):
    gcfg = cfg.get("grid")
    if gcfg is None:
        return hierarchy.default_grid(spec, pulse, dt=dt_override)
    for key in ("t_start", "t_end"):
        if key in gcfg and not isinstance(gcfg[key], (int, float)):
            raise ConfigError(f"config.grid.{key}", "must be a number")
    dt = dt_override if dt_override is not None else gcfg.get("dt")
    lo, hi = pulse.support()
    t0 = gcfg.get("t_start", lo)
    t1 = gcfg.get("t_end", hi)
    if t1 <= t0:
        raise ConfigError("config.grid", f"t_end {t1} must exceed t_start {t0}")
    if dt is None:
        grid = hierarchy.default_grid(spec, pulse)
        dt = grid[1] - grid[0]
    if dt <= 0:
        raise ConfigError("config.grid.dt", "must be positive")
    n = int(np.ceil((t1 - t0) / dt))
    return np.linspace(t0, t0 + n * dt, n + 1)


def _resolve_param(cfg: dict, dotted: str):
    node = cfg
    parts = dotted.split(".")
    for p in parts[:-1]:
        if not isinstance(node, dict) or p not in node:
            raise ConfigError(f"config.sweep.parameter", f"path {dotted!r} not found")
        node = node[p]
    leaf = parts[-1]
    if not isinstance(node, dict) or leaf not in node:
        raise ConfigError("config.sweep.parameter", f"path {dotted!r} not found")
    if not isinstance(node[leaf], (int, float)):
        raise ConfigError("config.sweep.parameter", f"{dotted!r} is not numeric")
    return node, leaf


def _sweep_values(scfg: dict):
    vals = scfg.get("values")
    if vals is not None:
        if not isinstance(vals, list) or not all(isinstance(v, (int, float)) for v in vals):
            raise ConfigError("config.sweep.values", "must be a list of numbers")
        return [float(v) for v in vals]
    for key in ("start", "stop", "points"):
        if key not in scfg:
            raise ConfigError(f"config.sweep.{key}", "missing (or provide 'values')")
    n = int(scfg["points"])
    if n < 1:
        raise ConfigError("config.sweep.points", "must be >= 1")
    if scfg.get("log", False):
        return list(np.geomspace(scfg["start"], scfg["stop"], n))
    return list(np.linspace(scfg["start"], scfg["stop"], n))


# ---------------------------------------------------------------------------
# outputs
# ---------------------------------------------------------------------------


def _header(cfg_hash: str) -> str:
    return f"# photodet {__version__} config_sha256={cfg_hash}"


def _write_csv(path: Path, header_cols: list, rows: np.ndarray, cfg_hash: str):
    try:
        with open(path, "w") as fh:
            fh.write(_header(cfg_hash) + "\n")
            fh.write(",".join(header_cols) + "\n")
            for row in np.atleast_2d(rows):
                fh.write(",".join(format(v, ".17g") for v in row) + "\n")
    except OSError as err:
        raise IOError(f"cannot write {path}: {err}") from err


def _write_json(path: Path, payload: dict, cfg_hash: str):
    payload = dict(payload)
    payload["_meta"] = {"tool": "photodet", "version": __version__,
                        "config_sha256": cfg_hash}
    try:
        path.write_text(json.dumps(payload, indent=2, default=_json_default) + "\n")
    except OSError as err:
        raise IOError(f"cannot write {path}: {err}") from err


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o)}")


# ---------------------------------------------------------------------------
# modes
# ---------------------------------------------------------------------------


def _estimator_report(spec, pulse, field_state, grid) -> tuple[dict, object]:
    liou = build_liouvillian(spec)
    aux, traj = hierarchy.propagate(spec, pulse, field_state, grid)
    report = {"terminal_populations": traj.populations[-1].tolist(),
              "diagnostics": traj.diagnostics}
    n_photons = field_state.n_max
    if n_photons >= 1:
        eff = metrics.efficiency(liou, traj, 1)
        report["estimator_efficiency"] = float(eff[-1])
        f = metrics.ideal_arrival_distribution(pulse, 1, grid)
        if eff[-1] > 1e-9:
            tm = metrics.timing_metrics(grid, eff, f)
            report["latency"] = tm.mu
            report["jitter"] = tm.sigma
            report["jitter_sys"] = tm.sigma_sys
            report["jitter_floor"] = tm.sigma0
    report["dark_rates"] = [metrics.dark_count_rate(ch) for ch in spec.amplifiers]
    report["total_dark_rate"] = metrics.total_dark_rate(spec.amplifiers)
    report["ideality"] = metrics.report_json(metrics.ideality_check(liou, spec, pulse))
    return report, traj


def _run_average(cfg, spec, pulse, field_state, grid, outdir, cfg_hash) -> int:
    report, traj = _estimator_report(spec, pulse, field_state, grid)
    idx = traj.saved_indices
    cols = ["time"] + [f"pop{j}" for j in range(spec.dim)] + \
           [f"X{c}" for c in range(len(spec.amplifiers))]
    rows = np.column_stack([traj.grid[idx], traj.populations[idx],
                            traj.expectations[idx]])
    _write_csv(outdir / "trajectory.csv", cols, rows, cfg_hash)
    _write_json(outdir / "metrics.json", report, cfg_hash)
    return 0


def _run_metrics(cfg, spec, pulse, field_state, grid, outdir, cfg_hash) -> int:
    report, _ = _estimator_report(spec, pulse, field_state, grid)
    _write_json(outdir / "metrics.json", report, cfg_hash)
    return 0


def _run_trajectories(cfg, spec, pulse, field_state, grid, outdir, cfg_hash) -> int:
    tcfg = cfg.get("trajectories", {})
    n_traj = int(tcfg.get("n_traj", 100))
    seed = int(tcfg.get("master_seed", 0))
    window = tcfg.get("window", "sliding")
    ens = stochastic.monte_carlo(spec, pulse, field_state, grid, n_traj, seed,
                                 window=window)
    save_records = int(tcfg.get("save_records", 1))
    rows = []
    for tid in range(min(save_records, n_traj)):
        traj, records = stochastic.unravel(spec, pulse, field_state, grid, seed,
                                           window=window, traj_index=tid)
        for rec in records:
            for i in range(rec.raw_increments.size):
                rows.append((tid, rec.channel, rec.grid[i + 1],
                             rec.raw_increments[i], rec.integrated[i + 1]))
    if rows:
        _write_csv(outdir / "records.csv",
                   ["trajectory", "channel", "time", "d_current", "windowed_current"],
                   np.asarray(rows), cfg_hash)
    payload = {
        "n_traj": ens.n_traj,
        "efficiency": ens.efficiency,
        "stderr": ens.stderr,
        "hist_counts": ens.hist_counts,
        "hist_edges": ens.hist_edges,
        "master_seed": ens.master_seed,
        "diagnostics": ens.diagnostics,
    }
    _write_json(outdir / "ensemble.json", payload, cfg_hash)
    return 0


_SWEEP_METRICS = ("estimator_efficiency", "mc_efficiency", "latency", "jitter",
                  "total_dark_rate")


def _sweep_point(cfg, value, dotted, dt_override):
    point_cfg = copy.deepcopy(cfg)
    node, leaf = _resolve_param(point_cfg, dotted)
    node[leaf] = value
    spec, pulse, field_state = _build_inputs(point_cfg)
    grid = _build_grid(point_cfg, spec, pulse, dt_override)
    wanted = point_cfg.get("sweep", {}).get("metrics", ["estimator_efficiency"])
    report, _ = _estimator_report(spec, pulse, field_state, grid)
    row = [value]
    for name in wanted:
        if name == "mc_efficiency":
            tcfg = point_cfg.get("trajectories", {})
            ens = stochastic.monte_carlo(
                spec, pulse, field_state, grid, int(tcfg.get("n_traj", 200)),
                int(tcfg.get("master_seed", 0)), window=tcfg.get("window", "sliding"))
            row.append(ens.efficiency)
        elif name in report:
            row.append(report[name])
        else:
            row.append(float("nan"))
    return row


def _run_sweep(cfg, outdir, cfg_hash, threads, dt_override) -> int:
    scfg = _require(cfg, "sweep", "config")
    dotted = _require(scfg, "parameter", "config.sweep")
    _resolve_param(cfg, dotted)   # validate the path before launching work
    values = _sweep_values(scfg)
    wanted = scfg.get("metrics", ["estimator_efficiency"])
    for name in wanted:
        if name not in _SWEEP_METRICS:
            raise ConfigError("config.sweep.metrics",
                              f"unknown metric {name!r}; options: {_SWEEP_METRICS}")
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(
                lambda v: _sweep_point(cfg, v, dotted, dt_override), values))
    else:
        rows = [_sweep_point(cfg, v, dotted, dt_override) for v in values]
    _write_csv(outdir / "sweep.csv", [dotted] + list(wanted), np.asarray(rows), cfg_hash)
    return 0


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    cfg_hash = config_hash(cfg)
    mode = args.mode or cfg.get("mode", "average")
    if mode not in ("average", "trajectories", "metrics", "sweep"):
        raise ConfigError("config.mode", f"unknown mode {mode!r}")
    outdir = Path(args.out or cfg.get("outputs", {}).get("directory")
                  or os.environ.get("PHOTODET_OUTDIR", "."))
    try:
        outdir.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise IOError(f"cannot create output directory {outdir}: {err}") from err

    if args.seed is not None:
        cfg.setdefault("trajectories", {})["master_seed"] = args.seed
    if mode == "sweep":
        try:
            return _run_sweep(cfg, outdir, cfg_hash, args.threads, args.dt_override)
        except ConfigError:
            raise
        except ValueError as err:
            raise NumericError(str(err)) from err
    spec, pulse, field_state = _build_inputs(cfg)
    grid = _build_grid(cfg, spec, pulse, args.dt_override)
    try:
        if mode == "average":
            return _run_average(cfg, spec, pulse, field_state, grid, outdir, cfg_hash)
        if mode == "metrics":
            return _run_metrics(cfg, spec, pulse, field_state, grid, outdir, cfg_hash)
        return _run_trajectories(cfg, spec, pulse, field_state, grid, outdir, cfg_hash)
    except ConfigError:
        raise
    except ValueError as err:
        raise NumericError(str(err)) from err


def _cmd_validate(args) -> int:
    cfg = load_config(args.config)
    spec, pulse, field_state = _build_inputs(cfg)
    try:
        warnings = spec.validate()
    except ValueError as err:
        raise ConfigError("config.detector", str(err)) from err
    grid = _build_grid(cfg, spec, pulse, args.dt_override)
    from ._engine import MatterOps
    bound = MatterOps(spec).norm_bound()
    dt = float(np.max(np.diff(grid)))
    if bound * dt > 0.5:
        raise NumericError(
            f"grid too coarse: |A|*dt = {bound * dt:.3g} > 0.5 "
            f"(need dt <= {0.4 / bound:.3g})")
    print(f"ok: dim={spec.dim}, grid {grid.size} points, |A|*dt = {bound * dt:.3g}")
    for w in warnings:
        print(f"warning: {w}")
    return 0


def _cmd_catalog(args) -> int:
    arbitrations = None
    if args.arbitrate:
        import math
        arbitrations = {
            "quadratic_coupler": reference.arbitrate_quadratic(math.pi, 0.0),
            "quadratic_coupler_half": reference.arbitrate_quadratic(math.pi / 2, 0.0),
        }
    payload = reference.catalog_json(arbitrations)
    text = json.dumps(payload, indent=2, default=_json_default)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="photodet",
        description="few-photon quantum photodetector simulation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a simulation config")
    p_run.add_argument("config", help="JSON config path")
    p_run.add_argument("--mode", choices=["average", "trajectories", "metrics", "sweep"],
                       help="override the config's mode")
    p_run.add_argument("--out", help="output directory (default: config, "
                                     "PHOTODET_OUTDIR, or '.')")
    p_run.add_argument("--seed", type=int, help="override the master seed")
    p_run.add_argument("--threads", type=int, default=1,
                       help="sweep worker count (never affects results)")
    p_run.add_argument("--dt-override", type=float, dest="dt_override",
                       help="override the integration step")
    p_run.set_defaults(func=_cmd_run)

    p_val = sub.add_parser("validate", help="validate a config without running")
    p_val.add_argument("config")
    p_val.add_argument("--dt-override", type=float, dest="dt_override")
    p_val.set_defaults(func=_cmd_validate)

    p_cat = sub.add_parser("catalog", help="dump the reference formula catalog")
    p_cat.add_argument("--out", help="write JSON here instead of stdout")
    p_cat.add_argument("--arbitrate", action="store_true",
                       help="run the quick numeric arbitrations and embed results")
    p_cat.set_defaults(func=_cmd_catalog)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_SCHEMA
    except NumericError as err:
        print(f"numerical precondition failed: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except IOError as err:
        print(f"i/o error: {err}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
