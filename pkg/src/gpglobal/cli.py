"""Command-line entry points: train | solve | benchmark-peaks | bayesopt-step.

The benchmark harness reproduces the peaks scaling study at desk scale:
repeated data generation, training, and optimization across training-set
sizes, formulations, and envelope modes, with a CSV of per-run rows and
log-log slope fits printed at the end.

Exit codes: 0 success, 1 solver limit reached, 2 usage/IO error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import gp as gpmod
from . import problem as prob
from .bnb import BnBResult, Settings, solve
from .envelopes import AcquisitionSpec
from .train import PriorSpec, lhs_sample, map_train, neg_log_posterior

CSV_HEADER = "N,nu,formulation,envelopes,rep,wall_time_s,iterations,time_per_iter_s,ub,lb,status"


def peaks(x1: float, x2: float) -> float:
    """The two-dimensional peaks test function (multiple local optima)."""
    return (3.0 * (1.0 - x1) ** 2 * math.exp(-x1**2 - (x2 + 1.0) ** 2)
            - 10.0 * (x1 / 5.0 - x1**3 - x2**5) * math.exp(-x1**2 - x2**2)
            - math.exp(-((x1 + 1.0) ** 2) - x2**2) / 3.0)


PEAKS_BOUNDS = np.array([[-3.0, 3.0], [-3.0, 3.0]])


class UsageError(Exception):
    pass


def _parse_bounds(text: str) -> np.ndarray:
    try:
        rows = []
        for part in text.split(","):
            lo, hi = part.split(":")
            rows.append([float(lo), float(hi)])
        out = np.array(rows)
    except Exception as exc:
        raise UsageError(f"cannot parse bounds {text!r} (expected lo:hi,lo:hi,...)") from exc
    if np.any(out[:, 1] <= out[:, 0]):
        raise UsageError(f"bounds must have hi > lo: {text!r}")
    return out


def read_training_csv(path: str):
    """Header row, D input columns, then one output column."""
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise UsageError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise UsageError(f"{path}: empty file") from None
        if len(header) < 2:
            raise UsageError(f"{path}: need at least one input and one output column")
        width = len(header)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise UsageError(f"{path}: line {lineno}: expected {width} fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise UsageError(f"{path}: line {lineno}: non-numeric field") from None
    if not rows:
        raise UsageError(f"{path}: no data rows")
    data = np.array(rows)
    return data[:, :-1], data[:, -1]


def _settings_from_args(args) -> Settings:
    return Settings(abs_tol=args.abs_tol, rel_tol=args.rel_tol,
                    feas_tol=args.feas_tol, max_time=args.time_limit,
                    max_iter=args.max_iter, multistart_count=args.multistart,
                    use_envelopes=not args.no_envelopes, seed=args.seed)


def _print_result(res: BnBResult):
    print(f"status: {res.status}")
    print(f"ub: {res.ub:.10g}")
    print(f"lb: {res.lb:.10g}")
    print(f"gap: {res.ub - res.lb:.6g}")
    inc = "none" if res.incumbent is None else " ".join(f"{v:.10g}" for v in res.incumbent)
    print(f"incumbent: {inc}")
    print(f"iterations: {res.iterations}")
    print(f"time_s: {res.wall_time:.3f}")


def _result_json(res: BnBResult) -> dict:
    return {
        "status": res.status,
        "ub": res.ub if math.isfinite(res.ub) else None,
        "lb": res.lb if math.isfinite(res.lb) else None,
        "incumbent": None if res.incumbent is None else list(map(float, res.incumbent)),
        "iterations": res.iterations,
        "wall_time_s": res.wall_time,
        "time_per_iteration_s": res.time_per_iteration,
    }


def _exit_code(res: BnBResult) -> int:
    return 1 if res.status in ("time_limit", "iter_limit") else 0


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(args) -> int:
    X, y = read_training_csv(args.csv)
    bounds = (_parse_bounds(args.bounds) if args.bounds
              else np.column_stack([X.min(axis=0), X.max(axis=0)]))
    if bounds.shape[0] != X.shape[1]:
        raise UsageError(f"bounds cover {bounds.shape[0]} dims, data has {X.shape[1]}")
    model = map_train(X, y, args.nu, bounds, restarts=args.restarts, seed=args.seed)
    Xs, ys, _, _ = gpmod.scale_training_data(X, y, bounds)
    value, _ = neg_log_posterior(model.log_theta, Xs, ys, args.nu,
                                 PriorSpec.default(X.shape[1]))
    gpmod.save_model(model, args.out)
    print(f"neg log posterior: {value:.10g}")
    print(f"model written to {args.out}")
    return 0


def _load_model(path: str):
    try:
        return gpmod.load_model(path)
    except OSError as exc:
        raise UsageError(f"cannot open {path}: {exc}") from exc
    except (ValueError, json.JSONDecodeError) as exc:
        raise UsageError(f"{path}: {exc}") from exc


def cmd_solve(args) -> int:
    model = _load_model(args.model)
    if args.mode == "mean-min":
        builder = prob.build_fs_mean if args.formulation == "fs" else prob.build_rs_mean
        problem = builder(model, "min")
    elif args.formulation == "fs":
        raise UsageError("the full-space formulation is only available for mean-min")
    elif args.mode == "chance":
        if not args.con_model:
            raise UsageError("chance mode requires --con-model")
        if args.c is None:
            raise UsageError("chance mode requires --c")
        con = _load_model(args.con_model)
        problem = prob.build_chance_constrained(model, con, args.c, args.z)
    elif args.mode in ("ei", "pi"):
        f_min = args.fmin if args.fmin is not None else _best_training_output(model)
        spec = AcquisitionSpec(args.mode.upper(), f_min=f_min)
        problem = prob.build_acquisition(model, spec)
    elif args.mode == "lcb":
        if args.kappa is None:
            raise UsageError("lcb mode requires --kappa")
        spec = AcquisitionSpec("LCB", kappa=args.kappa)
        problem = prob.build_acquisition(model, spec)
    else:
        raise UsageError(f"unknown mode {args.mode!r}")

    res = solve(problem, _settings_from_args(args))
    _print_result(res)
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(_result_json(res), fh, indent=2)
            fh.write("\n")
    return _exit_code(res)


def _best_training_output(model) -> float:
    return float(np.min(model.y_scaled) * model.output_std + model.output_mean)


def _bench_cell(task):
    """One (N, rep, formulation, envelopes) benchmark cell; returns a row."""
    N, nu, formulation, use_env, rep, seed, time_limit, restarts = task
    data_seed = seed + 1000 * rep + N
    X = lhs_sample(2, N, PEAKS_BOUNDS, seed=data_seed)
    y = np.array([peaks(*row) for row in X])
    model = map_train(X, y, nu, PEAKS_BOUNDS, restarts=restarts, seed=data_seed + 7)
    builder = prob.build_fs_mean if formulation == "FS" else prob.build_rs_mean
    problem = builder(model, "min")
    settings = Settings(max_time=time_limit, use_envelopes=use_env,
                        seed=data_seed + 13, multistart_count=12)
    try:
        res = solve(problem, settings)
        return {"N": N, "nu": nu, "formulation": formulation,
                "envelopes": "on" if use_env else "off", "rep": rep,
                "wall_time_s": res.wall_time, "iterations": res.iterations,
                "time_per_iter_s": res.time_per_iteration,
                "ub": res.ub, "lb": res.lb, "status": res.status}
    except Exception as exc:  # record the failure, never abort the sweep
        return {"N": N, "nu": nu, "formulation": formulation,
                "envelopes": "on" if use_env else "off", "rep": rep,
                "wall_time_s": math.nan, "iterations": 0,
                "time_per_iter_s": math.nan, "ub": math.nan, "lb": math.nan,
                "status": f"error:{type(exc).__name__}"}


def run_benchmark(Ns, reps, nu, formulations, envelope_modes, time_limit,
                  seed=0, train_restarts=3, jobs=1):
    tasks = []
    for N in Ns:
        for rep in range(reps):
            for formulation in formulations:
                for use_env in envelope_modes:
                    tasks.append((N, nu, formulation, use_env, rep, seed,
                                  time_limit, train_restarts))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_bench_cell, tasks))
    else:
        rows = [_bench_cell(t) for t in tasks]
    return rows


def write_benchmark_csv(rows, path):
    with open(path, "w", newline="") as fh:
        fh.write(CSV_HEADER + "\n")
        for r in rows:
            fh.write(f'{r["N"]},{r["nu"]},{r["formulation"]},{r["envelopes"]},'
                     f'{r["rep"]},{r["wall_time_s"]:.6g},{r["iterations"]},'
                     f'{r["time_per_iter_s"]:.6g},{r["ub"]:.17g},{r["lb"]:.17g},'
                     f'{r["status"]}\n')


def _median(values):
    vals = [v for v in values if not math.isnan(v)]
    return float(np.median(vals)) if vals else math.nan


def benchmark_medians(rows):
    """Median wall time / iterations / time-per-iteration per configuration."""
    out = {}
    for r in rows:
        key = (r["N"], r["formulation"], r["envelopes"])
        out.setdefault(key, []).append(r)
    meds = {}
    for key, group in sorted(out.items()):
        meds[key] = {
            "wall_time_s": _median([g["wall_time_s"] for g in group]),
            "iterations": _median([float(g["iterations"]) for g in group]),
            "time_per_iter_s": _median([g["time_per_iter_s"] for g in group]),
        }
    return meds


def loglog_slope(Ns, values):
    """Least-squares slope of log(value) against log(N)."""
    pts = [(n, v) for n, v in zip(Ns, values)
           if not math.isnan(v) and v > 0.0]
    if len(pts) < 2:
        return math.nan
    lx = np.log([p[0] for p in pts])
    ly = np.log([p[1] for p in pts])
    return float(np.polyfit(lx, ly, 1)[0])


def benchmark_slopes(rows, envelopes="on"):
    """Log-log scaling exponents of median time and time/iteration vs N."""
    meds = benchmark_medians(rows)
    out = {}
    for formulation in ("RS", "FS"):
        Ns = sorted({k[0] for k in meds if k[1] == formulation and k[2] == envelopes})
        total = [meds[(n, formulation, envelopes)]["wall_time_s"] for n in Ns]
        per_it = [meds[(n, formulation, envelopes)]["time_per_iter_s"] for n in Ns]
        out[formulation] = {
            "time_slope": loglog_slope(Ns, total),
            "time_per_iter_slope": loglog_slope(Ns, per_it),
        }
    return out


def cmd_benchmark_peaks(args) -> int:
    Ns = _parse_ns(args.ns)
    formulations = [f.upper() for f in args.formulations.split(",") if f]
    for f in formulations:
        if f not in ("RS", "FS"):
            raise UsageError(f"unknown formulation {f!r}")
    modes = []
    for mode in args.envelope_modes.split(","):
        if mode == "on":
            modes.append(True)
        elif mode == "off":
            modes.append(False)
        else:
            raise UsageError(f"unknown envelope mode {mode!r} (use on,off)")

    rows = run_benchmark(Ns, args.reps, args.nu, formulations, modes,
                         args.time_limit, seed=args.seed,
                         train_restarts=args.train_restarts, jobs=args.jobs)
    write_benchmark_csv(rows, args.out)
    print(f"wrote {len(rows)} rows to {args.out}")

    meds = benchmark_medians(rows)
    print("medians per (N, formulation, envelopes):")
    for (N, formulation, envmode), m in meds.items():
        print(f"  N={N:<4d} {formulation} env={envmode}: "
              f"time {m['wall_time_s']:.4g} s, iters {m['iterations']:.0f}, "
              f"time/iter {m['time_per_iter_s']:.4g} s")
    for envmode in ("on", "off"):
        if (envmode == "on") not in modes:
            continue
        slopes = benchmark_slopes(rows, envelopes=envmode)
        for formulation in formulations:
            s = slopes.get(formulation, {})
            print(f"log-log slopes ({formulation}, env={envmode}): "
                  f"time ~ N^{s.get('time_slope', math.nan):.3f}, "
                  f"time/iter ~ N^{s.get('time_per_iter_slope', math.nan):.3f}")
    return 0


def _parse_ns(text: str):
    try:
        if ":" in text:
            lo, hi, step = (int(v) for v in text.split(":"))
            return list(range(lo, hi + 1, step))
        return [int(v) for v in text.split(",") if v]
    except ValueError:
        raise UsageError(f"cannot parse sizes {text!r} (use lo:hi:step or a comma list)") from None


def cmd_bayesopt_step(args) -> int:
    if args.model:
        model = _load_model(args.model)
    elif args.csv:
        X, y = read_training_csv(args.csv)
        bounds = (_parse_bounds(args.bounds) if args.bounds
                  else np.column_stack([X.min(axis=0), X.max(axis=0)]))
        model = map_train(X, y, args.nu, bounds, restarts=args.restarts, seed=args.seed)
    else:
        raise UsageError("bayesopt-step needs a model file or --csv")

    f_min = args.fmin if args.fmin is not None else _best_training_output(model)
    if args.acquisition in ("ei", "pi"):
        spec = AcquisitionSpec(args.acquisition.upper(), f_min=f_min)
    elif args.acquisition == "lcb":
        kappa = args.kappa if args.kappa is not None else 2.0
        spec = AcquisitionSpec("LCB", kappa=kappa)
    else:
        raise UsageError(f"unknown acquisition {args.acquisition!r}")

    int_dims = sorted({int(v) for v in args.int_dims.split(",") if v}) if args.int_dims else []
    for j in int_dims:
        if not (0 <= j < model.D):
            raise UsageError(f"integer dimension {j} out of range")
    levels = []
    for j in int_dims:
        lo, hi = model.input_bounds[j]
        levels.append(list(range(math.ceil(lo - 1e-9), math.floor(hi + 1e-9) + 1)))
    combo_count = int(np.prod([len(lv) for lv in levels])) if levels else 1
    if combo_count > 1000:
        raise UsageError(f"{combo_count} integer combinations exceed the 1000 guard")

    settings = _settings_from_args(args)
    best = None
    worst_status = "optimal"
    assignments = [()] if not levels else list(_product(levels))
    for assign in assignments:
        problem = prob.build_acquisition(model, spec)
        if assign:
            box = list(problem.box)
            for j, v in zip(int_dims, assign):
                from .interval import Interval
                box[j] = Interval(float(v), float(v))
            problem.box = tuple(box)
        res = solve(problem, settings)
        if res.status in ("time_limit", "iter_limit"):
            worst_status = res.status
        if res.incumbent is None:
            continue
        acq = -res.ub if spec.kind in ("EI", "PI") else res.ub
        label = "" if not assign else " at " + ",".join(f"x{j}={v}" for j, v in zip(int_dims, assign))
        print(f"solve{label}: status {res.status}, acquisition {acq:.10g}")
        if best is None or res.ub < best[0]:
            best = (res.ub, res.incumbent, res.status)
    if best is None:
        print("no feasible acquisition optimum found")
        return 1

    ub, x, status = best
    mean = gpmod.predict_mean(model, x)
    std = math.sqrt(gpmod.predict_variance(model, x))
    acq = -ub if spec.kind in ("EI", "PI") else ub
    print(f"next sample point: {' '.join(f'{v:.10g}' for v in x)}")
    print(f"predicted mean: {mean:.10g}")
    print(f"predicted std: {std:.10g}")
    print(f"acquisition value: {acq:.10g}")
    return 1 if worst_status in ("time_limit", "iter_limit") else 0


def _product(levels):
    if not levels:
        yield ()
        return
    for v in levels[0]:
        for rest in _product(levels[1:]):
            yield (v,) + rest


# ---------------------------------------------------------------------------
# argument parsing


def _add_solver_flags(sp):
    sp.add_argument("--abs-tol", type=float, default=1e-3)
    sp.add_argument("--rel-tol", type=float, default=1e-3)
    sp.add_argument("--feas-tol", type=float, default=1e-6)
    sp.add_argument("--time-limit", type=float, default=60.0)
    sp.add_argument("--max-iter", type=int, default=10_000_000)
    sp.add_argument("--multistart", type=int, default=30)
    sp.add_argument("--no-envelopes", action="store_true",
                    help="use standard McCormick relaxations instead of the derived envelopes")
    sp.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gpglobal",
                                 description="Deterministic global optimization of trained "
                                             "Gaussian process surrogates")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("train", help="fit a GP to CSV data by MAP estimation")
    sp.add_argument("csv")
    sp.add_argument("--nu", choices=("1/2", "3/2", "5/2", "inf"), default="5/2")
    sp.add_argument("--bounds", help="per-dimension lo:hi, comma separated (default: data range)")
    sp.add_argument("--restarts", type=int, default=10)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("solve", help="solve an optimization problem over a trained GP")
    sp.add_argument("model")
    sp.add_argument("--mode", choices=("mean-min", "chance", "ei", "pi", "lcb"),
                    default="mean-min")
    sp.add_argument("--formulation", choices=("rs", "fs"), default="rs")
    sp.add_argument("--con-model", help="constraint GP model (chance mode)")
    sp.add_argument("--c", type=float, help="chance-constraint threshold")
    sp.add_argument("--z", type=float, default=1.96, help="chance-constraint quantile factor")
    sp.add_argument("--fmin", type=float, help="EI/PI target (default: best training output)")
    sp.add_argument("--kappa", type=float, help="LCB exploration weight")
    sp.add_argument("--out", help="write the result block as JSON")
    _add_solver_flags(sp)
    sp.set_defaults(fn=cmd_solve)

    sp = sub.add_parser("benchmark-peaks", help="scaling sweep on the peaks function")
    sp.add_argument("--ns", default="10:100:10", help="training sizes, lo:hi:step or comma list")
    sp.add_argument("--reps", type=int, default=5)
    sp.add_argument("--nu", choices=("1/2", "3/2", "5/2", "inf"), default="5/2")
    sp.add_argument("--formulations", default="rs,fs")
    sp.add_argument("--envelope-modes", default="on,off")
    sp.add_argument("--time-limit", type=float, default=60.0)
    sp.add_argument("--train-restarts", type=int, default=3)
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_benchmark_peaks)

    sp = sub.add_parser("bayesopt-step", help="globally optimize an acquisition function")
    sp.add_argument("model", nargs="?", help="trained model file")
    sp.add_argument("--csv", help="train on this CSV instead of loading a model")
    sp.add_argument("--nu", choices=("1/2", "3/2", "5/2", "inf"), default="5/2")
    sp.add_argument("--bounds")
    sp.add_argument("--restarts", type=int, default=10)
    sp.add_argument("--acquisition", choices=("ei", "pi", "lcb"), default="ei")
    sp.add_argument("--fmin", type=float)
    sp.add_argument("--kappa", type=float)
    sp.add_argument("--int-dims", default="", help="comma-separated integer dimensions")
    _add_solver_flags(sp)
    sp.set_defaults(fn=cmd_bayesopt_step)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
        return args.fn(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
