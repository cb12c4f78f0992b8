"""Command-line driver: ``collspins {simulate,compare,sweep,benchmark} --config run.yaml``.

Exit codes: 0 success, 2 configuration error, 3 capacity error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import multiprocessing as mp
import os
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .analysis import convergence_study, fit_above_floor, max_trace_distance, trace_distance_series
from .config import ConfigError, RunConfig, load_config
from .errors import CapacityError, GeometryError, IntegrationError
from .liouville import N_HARD_CAP, N_MAX_EXACT, check_capacity
from .runner import METHODS, bloch_series, simulate

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CAPACITY = 3
EXIT_NUMERICAL = 4

_AXIS_COLUMN = {"distance": "d", "theta": "theta", "N": "N"}


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _open_out(path):
    if path is None or path == "-":
        return contextlib.nullcontext(sys.stdout)
    return open(path, "w", newline="")


def _write_csv(path, header, rows):
    with _open_out(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _write_json(path, obj):
    text = json.dumps(obj, indent=2) + "\n"
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _split_methods(text):
    methods = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in methods if m not in METHODS]
    if bad or not methods:
        raise ConfigError(f"unknown method(s) {bad}; choose from {METHODS}")
    return methods


def _fit_path(args):
    if args.fit_out:
        return args.fit_out
    if args.out and args.out != "-":
        return str(Path(args.out).with_suffix(".fit.json"))
    return None


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def trajectory_table(traj, n):
    header = ["t"] + [f"s{a}_{i}" for i in range(n) for a in "xyz"]
    s = bloch_series(traj).reshape(len(traj), 3 * n)
    rows = [[t, *vals] for t, vals in zip(traj.times, s)]
    return header, rows


def cmd_simulate(cfg: RunConfig, args) -> int:
    system = cfg.system()
    traj = simulate(system, cfg.method, cfg.initial_state(), cfg.t_out(), cfg.integrator, args.nmax_exact)
    header, rows = trajectory_table(traj, system.n)
    _write_csv(args.out, header, rows)
    if args.state_out:
        _write_json(
            args.state_out,
            {
                "method": traj.method,
                "n": system.n,
                "t": float(traj.times[-1]),
                "state": [float(v) for v in traj.states[-1]],
                "stats": traj.stats,
            },
        )
    return EXIT_OK


# ---------------------------------------------------------------------------
# compare
# ---------------------------------------------------------------------------


def compare_runs(cfg: RunConfig, methods, reducer="full", nmax=N_MAX_EXACT) -> dict:
    system = cfg.system()
    check_capacity(system.n, nmax)
    t_out = cfg.t_out()
    ref = simulate(system, "master", cfg.initial_state(), t_out, cfg.integrator, nmax)
    results = []
    for m in methods:
        traj = ref if m == "master" else simulate(system, m, cfg.initial_state(), t_out, cfg.integrator, nmax)
        series = trace_distance_series(ref, traj, reducer, nmax)
        results.append(
            {"method": m, "max_trace_distance": float(series.max()), "trace_distance": series.tolist()}
        )
    return {"reference": "master", "n": system.n, "reducer": reducer, "times": t_out.tolist(), "results": results}


def cmd_compare(cfg: RunConfig, args) -> int:
    opts = cfg.compare or {"methods": ["independent", "meanfield", "mpc"], "reducer": "full"}
    methods = _split_methods(args.method) if args.method else list(opts["methods"])
    _write_json(args.out, compare_runs(cfg, methods, opts.get("reducer", "full"), args.nmax_exact))
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------


def _resolve_reducer(reducer, system):
    if reducer == "central":
        return system.central_index()
    return reducer


def _sweep_point(job):
    """One isolated sweep point: time-max distance of every method against the master equation."""
    cfg, axis, value, methods, reducer, nmax = job
    with threadpool_limits(1):
        c = cfg.with_axis(axis, value)
        system = c.system()
        check_capacity(system.n, nmax)
        t_out = c.t_out()
        ref = simulate(system, "master", c.initial_state(), t_out, c.integrator, nmax)
        red = _resolve_reducer(reducer, system)
        out = {}
        for m in methods:
            traj = ref if m == "master" else simulate(system, m, c.initial_state(), t_out, c.integrator, nmax)
            out[m] = max_trace_distance(ref, traj, red, nmax)
    return value, out


class ChainFamily:
    """Picklable ``n -> SpinSystem`` built from a chain config."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg

    def __call__(self, n):
        return self.cfg.with_axis("N", n).system()


def _make_pool(threads, njobs):
    if threads <= 1 or njobs <= 1:
        return None
    return ProcessPoolExecutor(max_workers=min(threads, njobs), mp_context=mp.get_context("spawn"))


def run_sweep(cfg: RunConfig, methods, threads=1, nmax=N_MAX_EXACT):
    """Return (column name, sorted values, {method: errors}) for the configured sweep."""
    sw = cfg.sweep
    if sw is None:
        raise ConfigError("sweep command needs a 'sweep' section in the config")
    axis = sw["axis"]
    values = cfg.sweep_values()
    table = {m: [] for m in methods}
    ref_n = sw.get("reference_n")
    if ref_n is not None:
        if axis != "N":
            raise ConfigError("reference_n is only meaningful for axis N")
        bad = [m for m in methods if m not in ("meanfield", "mpc")]
        if bad:
            raise ConfigError(f"convergence sweeps support meanfield and mpc, not {bad}")
        if ref_n < max(values):
            raise ConfigError(f"reference_n={ref_n} is smaller than the largest scanned N={max(values)}")
        ns = [int(v) for v in values]
        pool = _make_pool(threads, len(ns) + 1)
        with pool or contextlib.nullcontext():
            for m in methods:
                res = convergence_study(
                    ChainFamily(cfg), ns, ref_n, m, cfg.t_end, cfg.initial_state(), cfg.n_out,
                    cfg.integrator, executor=pool,
                )
                table[m] = res.distances.tolist()
        return _AXIS_COLUMN[axis], ns, table

    if "master" in methods:
        methods = [m for m in methods if m != "master"] + ["master"]
    reducer = sw.get("reducer", "full")
    jobs = [(cfg, axis, v, methods, reducer, nmax) for v in values]
    pool = _make_pool(threads, len(jobs))
    if pool is None:
        results = list(map(_sweep_point, jobs))
    else:
        with pool:
            results = list(pool.map(_sweep_point, jobs))
    results.sort(key=lambda item: item[0])
    for _, errs in results:
        for m in methods:
            table[m].append(errs[m])
    return _AXIS_COLUMN[axis], [v for v, _ in results], table


def sweep_fits(values, table, fit_range=None) -> list:
    x = np.asarray(values, dtype=float)
    keep = np.ones(x.size, dtype=bool)
    if fit_range is not None:
        lo, hi = sorted(fit_range)
        keep = (x >= lo) & (x <= hi)
    fits = []
    for m, errs in table.items():
        f = fit_above_floor(x[keep], np.asarray(errs)[keep]) if keep.sum() else None
        fits.append({"method": m, "fit": f.as_dict() if f is not None else None})
    return fits


def cmd_sweep(cfg: RunConfig, args) -> int:
    sw = cfg.sweep
    if sw is None:
        raise ConfigError("sweep command needs a 'sweep' section in the config")
    methods = (
        _split_methods(args.method)
        if args.method
        else list(sw.get("methods", ["independent", "meanfield", "mpc"]))
    )
    col, values, table = run_sweep(cfg, methods, args.threads, args.nmax_exact)
    rows = [[v, *(table[m][i] for m in methods)] for i, v in enumerate(values)]
    _write_csv(args.out, [col, *methods], rows)
    if sw.get("fit"):
        fits = sweep_fits(values, {m: table[m] for m in methods}, sw.get("fit_range"))
        path = _fit_path(args)
        if path is None:
            sys.stderr.write(json.dumps(fits) + "\n")
        else:
            _write_json(path, fits)
    return EXIT_OK


# ---------------------------------------------------------------------------
# benchmark
# ---------------------------------------------------------------------------


def benchmark(cfg: RunConfig, method: str, ns, repeats: int = 3, nmax=N_MAX_EXACT):
    """Median wall-clock seconds to integrate ``[0, t_end]`` for each N, on one thread."""
    if method == "master":
        for n in ns:
            check_capacity(n, nmax)
    t_out = np.array([0.0, cfg.t_end])
    times = []
    with threadpool_limits(1):
        warm = cfg.with_axis("N", min(ns)).system()
        simulate(warm, method, cfg.initial_state(), t_out, cfg.integrator, nmax)  # compile kernels
        for n in ns:
            system = cfg.with_axis("N", n).system()
            runs = []
            for _ in range(repeats):
                t0 = time.perf_counter()
                simulate(system, method, cfg.initial_state(), t_out, cfg.integrator, nmax)
                runs.append(time.perf_counter() - t0)
            times.append(float(np.median(runs)))
    return np.asarray(times)


def benchmark_fit(method, ns, seconds) -> dict:
    ns = np.asarray(ns, dtype=float)
    if ns.size < 2:
        return {}
    if method == "master":
        slope = float(np.polyfit(ns, np.log(seconds), 1)[0])
        return {"base_per_spin": float(np.exp(slope)), "bits_per_spin": slope / np.log(2.0)}
    return {"slope": float(np.polyfit(np.log(ns), np.log(seconds), 1)[0])}


def cmd_benchmark(cfg: RunConfig, args) -> int:
    if cfg.geometry["kind"] != "chain":
        raise ConfigError("benchmarks run on chain geometries")
    method = args.method or cfg.method
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}")
    bench = cfg.benchmark or {}
    ns = sorted({int(n) for n in (bench.get("ns") or [cfg.geometry["params"]["n"]])})
    seconds = benchmark(cfg, method, ns, int(bench.get("repeats", 3)), args.nmax_exact)
    _write_csv(args.out, ["method", "N", "seconds"], [[method, n, s] for n, s in zip(ns, seconds)])
    fit = benchmark_fit(method, ns, seconds)
    summary = {"method": method, **fit}
    text = json.dumps(summary)
    path = _fit_path(args)
    if path is not None:
        _write_json(path, summary)
    target = sys.stdout if args.out and args.out != "-" else sys.stderr
    target.write(text + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

COMMANDS = {
    "simulate": cmd_simulate,
    "compare": cmd_compare,
    "sweep": cmd_sweep,
    "benchmark": cmd_benchmark,
}
_HELP = {
    "simulate": "integrate one configuration and write Bloch components as CSV",
    "compare": "trace distances of approximate methods against the master equation (JSON)",
    "sweep": "scan distance, theta or N and tabulate time-max errors",
    "benchmark": "single-threaded wall-clock scaling with N",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="YAML run configuration")
    common.add_argument("--out", default=None, help="output file (default: stdout)")
    common.add_argument("--method", default=None, help="method override; comma-separated list for compare/sweep")
    common.add_argument("--threads", type=int, default=None, help="worker processes for sweeps")
    common.add_argument(
        "--nmax-exact", type=int, default=N_MAX_EXACT, help=f"largest N for dense states (<= {N_HARD_CAP})"
    )
    common.add_argument("--dump-config", action="store_true", help="print the normalized config and exit")
    common.add_argument("--fit-out", default=None, help="JSON file for fitted power laws")
    common.add_argument("--state-out", default=None, help="JSON dump of the final state (simulate)")

    parser = argparse.ArgumentParser(prog="collspins", description="Collective dynamics of dipole-coupled spins.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=_HELP[name])
    return parser


def _prepare(args) -> RunConfig:
    if args.nmax_exact < 1:
        raise ConfigError("--nmax-exact must be positive")
    if args.nmax_exact > N_HARD_CAP:
        raise ConfigError(f"--nmax-exact may not exceed {N_HARD_CAP}")
    if args.nmax_exact > N_MAX_EXACT:
        mib = 16 * 4**args.nmax_exact / 2**20
        warnings.warn(f"N_max_exact={args.nmax_exact}: one density matrix takes {mib:.0f} MiB", stacklevel=2)
    if args.threads is not None and args.threads < 1:
        raise ConfigError("--threads must be >= 1")
    cfg = load_config(args.config)
    if args.method and args.command in ("simulate", "benchmark"):
        if args.method not in METHODS:
            raise ConfigError(f"unknown method {args.method!r}; choose from {METHODS}")
        cfg = cfg.with_overrides(method=args.method)
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _prepare(args)
        if args.dump_config:
            with _open_out(args.out) as fh:
                fh.write(cfg.dump())
            return EXIT_OK
        if args.threads is None:
            args.threads = 1 if args.command == "benchmark" else (os.cpu_count() or 1)
        if args.command == "benchmark":
            args.threads = 1
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, GeometryError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CapacityError as exc:
        print(f"capacity error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except IntegrationError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except FloatingPointError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
