"""Experiment runner behind the CLI: single runs, sweeps and solver comparisons.

Configs are JSON objects with a ``schema`` version field. Every output file
is a deterministic function of the config.
"""
import csv
import io
import itertools
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from threadpoolctl import threadpool_limits

from .errors import AltGDminError, ConfigError
from .federated import partition_columns, run_federated
from .linalg import derive_seed
from .problems import generate_ground_truth, lrcs_measure, lrmc_sample, lrpr_measure
from .solvers import (SolverConfig, altgdmin_lrcs, altgdmin_lrmc, altgdmin_lrpr, altmin_lrcs,
                      altmin_lrmc)

SCHEMA_VERSION = 1
SUCCESS_THRESHOLD = 1e-6
MAX_SWEEP_RUNS = 10_000
PROBLEMS = ("lrcs", "lrpr", "lrmc")
SOLVERS = ("altgdmin", "altmin")
_TOP_KEYS = {"schema", "problem", "n", "q", "r", "kappa", "m", "p", "noise_std", "solver", "solvers",
             "config", "topology", "sweep", "seed", "seeds", "record_wall_time", "save_estimate"}
SWEEP_HEADER = ["m", "p", "c_eta", "seed", "status", "final_err", "iterations", "success", "flops", "bytes"]
COMPARE_HEADER = ["seed", "solver", "iterations", "total_flops", "round_elements", "total_elements",
                  "final_err"]


def reference_mode() -> bool:
    return os.environ.get("ALTGDMIN_REFERENCE_MODE", "") == "1"


def effective_threads(threads) -> int:
    if reference_mode() or not threads:
        return 1
    return max(1, int(threads))


def load_config(path) -> dict:
    try:
        cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return validate_config(cfg)


def validate_config(cfg: dict) -> dict:
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    if cfg.get("schema") != SCHEMA_VERSION:
        raise ConfigError(f"config schema must be {SCHEMA_VERSION}, got {cfg.get('schema')!r}")
    unknown = set(cfg) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if cfg.get("problem") not in PROBLEMS:
        raise ConfigError(f"problem must be one of {PROBLEMS}")
    for key in ("n", "q", "r"):
        if not isinstance(cfg.get(key), int) or cfg[key] < 1:
            raise ConfigError(f"{key} must be a positive integer")
    if cfg["r"] > min(cfg["n"], cfg["q"]):
        raise ConfigError("r must not exceed min(n, q)")
    if cfg["problem"] == "lrmc":
        p = cfg.get("p")
        if not isinstance(p, (int, float)) or not 0 < p <= 1:
            raise ConfigError("lrmc needs 0 < p <= 1")
    elif not isinstance(cfg.get("m"), int) or cfg["m"] < 1:
        raise ConfigError(f"{cfg['problem']} needs a positive integer m")
    if cfg.get("kappa", 1.0) < 1:
        raise ConfigError("kappa must be >= 1")
    if cfg.get("solver", "altgdmin") not in SOLVERS:
        raise ConfigError(f"solver must be one of {SOLVERS}")
    for s in cfg.get("solvers", []):
        if s not in SOLVERS:
            raise ConfigError(f"unknown solver {s!r}")
    try:
        SolverConfig.from_dict(cfg.get("config", {}))
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    topo = cfg.get("topology")
    if topo is not None:
        if set(topo) - {"gamma", "policy"}:
            raise ConfigError("topology accepts only gamma and policy")
        if not isinstance(topo.get("gamma"), int) or not 1 <= topo["gamma"] <= cfg["q"]:
            raise ConfigError("topology.gamma must be an integer in [1, q]")
        if topo.get("policy", "contiguous") not in ("contiguous", "strided"):
            raise ConfigError("topology.policy must be contiguous or strided")
    sweep = cfg.get("sweep")
    if sweep is not None:
        if not sweep or set(sweep) - {"m", "p", "c_eta", "seeds"}:
            raise ConfigError("sweep axes must be a non-empty subset of m, p, c_eta, seeds")
        for k, v in sweep.items():
            if not isinstance(v, list) or not v:
                raise ConfigError(f"sweep axis {k} must be a non-empty list")
        for c in sweep.get("c_eta", []):
            SolverConfig(c_eta=c)
    return cfg


def build_instance(cfg: dict, seed: int):
    """Ground truth and measurements for ``seed``; both are pure functions of (cfg, seed)."""
    gt = generate_ground_truth(cfg["n"], cfg["q"], cfg["r"], cfg.get("kappa", 1.0), seed=seed)
    mseed = derive_seed(seed, 1)
    noise = cfg.get("noise_std", 0.0)
    if cfg["problem"] == "lrcs":
        data = lrcs_measure(gt, cfg["m"], seed=mseed, noise_std=noise)
    elif cfg["problem"] == "lrpr":
        data = lrpr_measure(gt, cfg["m"], seed=mseed)
    else:
        data = lrmc_sample(gt, cfg["p"], seed=mseed, noise_std=noise)
    return gt, data


_ALTGDMIN = {"lrcs": altgdmin_lrcs, "lrpr": altgdmin_lrpr, "lrmc": altgdmin_lrmc}
_ALTMIN = {"lrcs": altmin_lrcs, "lrmc": altmin_lrmc}


def solve(cfg: dict, seed: int, threads: int = 1, solver: str | None = None):
    """Run one cell. Returns ``(estimate, trace, log or None, gt, data)``."""
    gt, data = build_instance(cfg, seed)
    scfg = SolverConfig.from_dict({**cfg.get("config", {}), "seed": seed})
    solver = solver or cfg.get("solver", "altgdmin")
    if solver == "altmin":
        if cfg["problem"] not in _ALTMIN:
            raise ConfigError(f"no AltMin baseline for {cfg['problem']}")
        est, trace = _ALTMIN[cfg["problem"]](data, cfg["r"], scfg, gt)
        return est, trace, None, gt, data
    topo = cfg.get("topology")
    if topo is not None:
        topology = partition_columns(cfg["q"], topo["gamma"], topo.get("policy", "contiguous"))
        est, trace, log = run_federated(data, cfg["r"], scfg, topology, gt, threads, test_mode=True)
        return est, trace, log, gt, data
    est, trace = _ALTGDMIN[cfg["problem"]](data, cfg["r"], scfg, gt, threads)
    return est, trace, None, gt, data


def final_error(trace) -> float:
    return float(trace.init.get("final_max_col_err", math.nan))


def summarize(cfg, seed, trace, log, wall) -> dict:
    init = trace.init
    out = {
        "status": "ok",
        "problem": cfg["problem"],
        "solver": cfg.get("solver", "altgdmin"),
        "seed": seed,
        "iterations": trace.iterations,
        "power_iters": init.get("power_iters"),
        "alpha": init.get("alpha"),
        "sigma_max_est": init.get("sigma_max_est"),
        "init_se2": init.get("se2"),
        "final_se2": trace.final.se2,
        "final_sef": trace.final.sef,
        "final_max_col_err": init.get("final_max_col_err"),
        "final_rel_fro": init.get("final_rel_fro"),
        "final_objective": init.get("final_objective"),
        "flagged_columns": init.get("final_flagged"),
        "total_flops": trace.final.flops,
        "wall_seconds": wall,
    }
    if log is not None:
        gamma = cfg["topology"]["gamma"]
        out.update({
            "gamma": gamma,
            "total_messages": len(log),
            "total_elements": log.elements(),
            "total_bytes": log.total_bytes(),
            "upload_bytes_per_node": [log.total_bytes(direction="up", node=i) for i in range(gamma)],
        })
    return out


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_json_safe(v) for v in obj]
    return obj


def write_json(path, obj):
    Path(path).write_text(json.dumps(_json_safe(obj), indent=2, sort_keys=True) + "\n",
                          encoding="utf-8", newline="")


def run_experiment(cfg: dict, out, seed: int | None = None, threads: int = 1) -> dict:
    """Run one configuration and write trace.csv, messages.csv (federated) and summary.json.

    Solver failures are recorded in summary.json with status "error" and
    re-raised to the caller.
    """
    cfg = validate_config(cfg)
    seed = cfg.get("seed", 0) if seed is None else seed
    threads = effective_threads(threads)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    try:
        with threadpool_limits(limits=1):
            est, trace, log, gt, data = solve(cfg, seed, threads)
    except ConfigError:
        raise
    except AltGDminError as exc:
        write_json(out / "summary.json", {"status": "error", "error": f"{type(exc).__name__}: {exc}",
                                          "problem": cfg["problem"], "seed": seed})
        raise
    wall = time.perf_counter() - t0
    trace.to_csv(out / "trace.csv", wall_time=bool(cfg.get("record_wall_time", False)))
    if log is not None:
        log.to_csv(out / "messages.csv")
    if cfg.get("save_estimate", True):
        est.save(out / "estimate", {"problem": cfg["problem"], "seed": seed})
    summary = summarize(cfg, seed, trace, log, wall)
    write_json(out / "summary.json", summary)
    return summary


def sweep_cells(cfg: dict):
    sweep = cfg.get("sweep") or {}
    seeds = sweep.get("seeds", cfg.get("seeds", [cfg.get("seed", 0)]))
    axes = {
        "m": sweep.get("m", [cfg.get("m")]),
        "p": sweep.get("p", [cfg.get("p")]),
        "c_eta": sweep.get("c_eta", [cfg.get("config", {}).get("c_eta")]),
    }
    cells = list(itertools.product(axes["m"], axes["p"], axes["c_eta"], seeds))
    if len(cells) > MAX_SWEEP_RUNS:
        raise ConfigError(f"sweep defines {len(cells)} runs, more than the limit of {MAX_SWEEP_RUNS}")
    return cells


def _cell_config(cfg, m, p, c_eta):
    c = dict(cfg)
    c.pop("sweep", None)
    if m is not None:
        c["m"] = m
    if p is not None:
        c["p"] = p
    c["config"] = dict(cfg.get("config", {}))
    if c_eta is not None:
        c["config"]["c_eta"] = c_eta
    return c


def _run_cell(cfg, cell) -> dict:
    m, p, c_eta, seed = cell
    row = {"m": m, "p": p, "c_eta": c_eta, "seed": seed}
    try:
        _, trace, log, _, _ = solve(_cell_config(cfg, m, p, c_eta), seed, 1)
    except AltGDminError as exc:
        return {**row, "status": type(exc).__name__, "final_err": math.nan, "iterations": 0,
                "success": 0, "flops": 0, "bytes": 0}
    err = final_error(trace)
    return {**row, "status": "ok", "final_err": err, "iterations": trace.iterations,
            "success": int(err <= SUCCESS_THRESHOLD), "flops": trace.final.flops,
            "bytes": 0 if log is None else log.total_bytes()}


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _sort_key(row):
    return tuple((0, v) if v is not None else (1, 0) for v in (row["m"], row["p"], row["c_eta"], row["seed"]))


def run_sweep(cfg: dict, out=None, threads: int = 1) -> list:
    """Run every (axis point, seed) cell; failed cells are recorded and the sweep continues."""
    cfg = validate_config(cfg)
    cells = sweep_cells(cfg)
    threads = effective_threads(threads)
    with threadpool_limits(limits=1):
        if threads > 1:
            with ThreadPoolExecutor(threads) as pool:
                rows = list(pool.map(lambda c: _run_cell(cfg, c), cells))
        else:
            rows = [_run_cell(cfg, c) for c in cells]
    rows.sort(key=_sort_key)
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "sweep.csv", SWEEP_HEADER, rows)
        write_csv(out / "sweep_summary.csv", ["m", "p", "c_eta", "runs", "success_fraction"],
                  success_fractions(rows))
    return rows


def success_fractions(rows) -> list:
    groups = {}
    for row in rows:
        groups.setdefault((row["m"], row["p"], row["c_eta"]), []).append(row["success"])
    out = []
    for (m, p, c), s in groups.items():
        out.append({"m": m, "p": p, "c_eta": c, "runs": len(s), "success_fraction": sum(s) / len(s)})
    return out


def write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(row[h]) for h in header])
    Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="")


def round_elements(cfg: dict, solver: str, omega_size: int | None = None) -> float:
    """Modeled per-node upload per iteration.

    AltGDmin sends one n x r partial gradient. AltMin for LRMC ships its
    observed entries (|Omega| / gamma per node) so the center can solve the
    row problems; AltMin for LRCS ships its nr x nr normal-equation block and
    nr right-hand side.
    """
    n, r = cfg["n"], cfg["r"]
    gamma = (cfg.get("topology") or {}).get("gamma", 1)
    if solver == "altgdmin":
        return float(n * r)
    if cfg["problem"] == "lrmc":
        return omega_size / gamma
    return float((n * r) ** 2 + n * r)


def compare_solvers(cfg: dict, out=None, threads: int = 1) -> list:
    """Paired-by-seed table of iterations, flops and modeled communication."""
    cfg = validate_config(cfg)
    solvers = cfg.get("solvers") or ["altgdmin", "altmin"]
    if len(solvers) < 2:
        raise ConfigError("compare needs at least two solvers")
    seeds = (cfg.get("sweep") or {}).get("seeds", cfg.get("seeds", [cfg.get("seed", 0)]))
    threads = effective_threads(threads)
    rows = []
    with threadpool_limits(limits=1):
        for seed in seeds:
            for solver in solvers:
                _, trace, _, _, data = solve(cfg, seed, threads, solver)
                omega = getattr(data, "omega_size", None)
                per = round_elements(cfg, solver, omega)
                rows.append({"seed": seed, "solver": solver, "iterations": trace.iterations,
                             "total_flops": trace.final.flops, "round_elements": per,
                             "total_elements": per * trace.iterations, "final_err": final_error(trace)})
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        write_csv(Path(out) / "compare.csv", COMPARE_HEADER, rows)
    return rows
