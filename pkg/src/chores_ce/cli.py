"""Command-line front end: ``gen``, ``solve``, ``verify`` and ``bench``.

Exit codes: 0 pass, 1 verification failed, 2 solver did not converge,
3 invalid input.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .dca import DcaConfig, solve_dca, solve_rounded_dca
from .equilibrium import EquilibriumCandidate, epsilon_prime, verify_eps_ce
from .market import DISTRIBUTIONS, GeneratorConfig, generate_instance, load_instance, save_instance
from .sgr import SgrConfig, solve_sgr

EXIT_PASS, EXIT_FAIL, EXIT_NOT_CONVERGED, EXIT_INVALID = 0, 1, 2, 3
ALGOS = ("dca", "rdca", "sgr")
BENCH_COLUMNS = (
    "distribution", "n", "m", "algo", "eps",
    "mean_s", "std_s", "mean_iters", "pass_rate", "mean_eps_prime_ratio",
)
TRIAL_COLUMNS = (
    "distribution", "n", "m", "algo", "eps", "seed",
    "time_s", "iterations", "status", "passes", "measure", "eps_prime_ratio",
)


class InvalidInput(Exception):
    pass


# --------------------------------------------------------------------------
# configuration


def _read_config_file(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidInput(f"cannot read config {path}: {exc}") from exc
    if not isinstance(obj, dict):
        raise InvalidInput("config file must hold a JSON object")
    return obj


def _delta_mode(text):
    if text in ("theoretical", "heuristic"):
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("delta mode is 'theoretical', 'heuristic' or a number") from None


def _step_mode(text):
    if text in ("scaled", "theoretical"):
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("step mode is 'scaled', 'theoretical' or a number") from None


def build_config(algo: str, args, file_cfg: dict | None = None):
    """Flags override the config file, which overrides the defaults."""
    cls = SgrConfig if algo == "sgr" else DcaConfig
    names = {f.name for f in dataclasses.fields(cls)}
    file_cfg = dict(file_cfg or {})
    # a file may hold one section per solver family
    section = file_cfg.pop("sgr" if algo == "sgr" else "dca", None)
    file_cfg.pop("dca" if algo == "sgr" else "sgr", None)
    if isinstance(section, dict):
        file_cfg.update(section)
    unknown = set(file_cfg) - names - {"reg_eta", "delta"}
    if unknown:
        raise InvalidInput(f"unknown {algo} config keys: {sorted(unknown)}")
    kw = {k: v for k, v in file_cfg.items() if k in names}
    if kw.get("inner_tol") == "adaptive":
        kw.pop("inner_tol")
    flag_map = {"eps": "eps", "time_limit_s": "time_limit_s"}
    if algo == "sgr":
        flag_map.update(delta_mode="delta_mode", gamma="gamma", max_iter="max_iter", step_mode="step_mode")
    else:
        flag_map.update(reg_eta="reg_eta", max_iter="max_outer")
    for flag, key in flag_map.items():
        value = getattr(args, flag, None)
        if value is not None:
            kw[key] = value
    if algo == "rdca":
        kw["rounding"] = True
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise InvalidInput(str(exc)) from exc


def run_solver(algo: str, inst, cfg):
    if algo == "dca":
        return solve_dca(inst, cfg)
    if algo == "rdca":
        return solve_rounded_dca(inst, cfg)
    if algo == "sgr":
        return solve_sgr(inst, cfg)
    raise InvalidInput(f"unknown algorithm {algo!r}")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def eps_prime_ratio(inst, result, eps):
    delta = result.config.get("delta")
    if delta is None:
        return None
    return float(epsilon_prime(inst, result.mu, delta) / eps)


# --------------------------------------------------------------------------
# subcommands


def cmd_gen(args) -> int:
    cfg = GeneratorConfig(args.dist, args.n, args.m, args.seed, args.condition_cap)
    inst = generate_instance(cfg)
    save_instance(inst, args.out)
    print(args.out)
    return EXIT_PASS


def cmd_solve(args) -> int:
    inst = load_instance(args.instance)
    cfg = build_config(args.algo, args, _read_config_file(args.config))
    result = run_solver(args.algo, inst, cfg)
    report = verify_eps_ce(inst, result.candidate, cfg.eps)
    out = Path(args.out)
    trace_path = Path(args.trace) if args.trace else out.with_suffix(".trace.csv")
    payload = {
        "instance": str(args.instance),
        "algo": args.algo,
        "status": result.status,
        "converged": result.converged,
        "iterations": result.iterations,
        "measure": result.measure,
        "eps_prime_ratio": eps_prime_ratio(inst, result, cfg.eps),
        "mu": result.mu,
        "candidate": result.candidate.to_dict(),
        "report": report.to_dict(),
        "config": result.config,
    }
    out.write_text(json.dumps(_jsonable(payload), indent=1) + "\n")
    with open(trace_path, "w", newline="") as fh:
        result.trace.write_csv(fh)
    summary = f"{args.algo}: {result.status} after {result.iterations} iterations, measure {result.measure:.3e}"
    if not result.converged:
        print(summary + " (best iterate written)", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    print(f"{summary}; verifier {'pass' if report.passes else 'FAIL'} (max residual {report.max_residual:.3e})")
    return EXIT_PASS if report.passes else EXIT_FAIL


def _load_candidate(path) -> EquilibriumCandidate:
    try:
        with open(path) as fh:
            obj = json.load(fh)
        if "candidate" in obj:
            obj = obj["candidate"]
        return EquilibriumCandidate.from_dict(obj)
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise InvalidInput(f"cannot read candidate {path}: {exc}") from exc


def cmd_verify(args) -> int:
    inst = load_instance(args.instance)
    cand = _load_candidate(args.candidate)
    report = verify_eps_ce(inst, cand, args.eps, args.eps_list or ())
    print(json.dumps(_jsonable(report.to_dict()), indent=1))
    return EXIT_PASS if report.passes else EXIT_FAIL


@dataclasses.dataclass
class BenchPlan:
    dimensions: list
    distributions: list
    eps: float = 1e-2
    algorithms: list = dataclasses.field(default_factory=lambda: list(ALGOS))
    repeats: int = 10
    seed_base: int = 0
    time_limit_s: float | None = None

    def __post_init__(self):
        if self.repeats < 1:
            raise InvalidInput("repeats must be at least 1")
        for algo in self.algorithms:
            if algo not in ALGOS:
                raise InvalidInput(f"unknown algorithm {algo!r}")
        try:
            self.distributions = [GeneratorConfig(d).distribution for d in self.distributions]
        except ValueError as exc:
            raise InvalidInput(str(exc)) from exc

    def trials(self):
        """Trial keys in plan order; repeat r uses seed ``seed_base + r``."""
        for n, m in self.dimensions:
            for dist in self.distributions:
                for algo in self.algorithms:
                    for r in range(self.repeats):
                        yield dist, n, m, algo, self.seed_base + r


def run_trial(key, eps, time_limit_s, overrides=None):
    dist, n, m, algo, seed = key
    inst = generate_instance(GeneratorConfig(dist, n, m, seed))
    ns = argparse.Namespace(eps=eps, time_limit_s=time_limit_s, **(overrides or {}))
    cfg = build_config(algo, ns)
    t0 = time.perf_counter()
    result = run_solver(algo, inst, cfg)
    elapsed = time.perf_counter() - t0
    report = verify_eps_ce(inst, result.candidate, eps)
    return {
        "distribution": dist, "n": n, "m": m, "algo": algo, "eps": eps, "seed": seed,
        "time_s": elapsed,
        "iterations": result.iterations,
        "status": result.status,
        "passes": bool(report.passes and result.converged),
        "measure": result.measure,
        "eps_prime_ratio": eps_prime_ratio(inst, result, eps),
    }


def aggregate(trials: list[dict]) -> list[dict]:
    groups: dict = {}
    for t in trials:
        groups.setdefault((t["distribution"], t["n"], t["m"], t["algo"], t["eps"]), []).append(t)
    rows = []
    for (dist, n, m, algo, eps), ts in groups.items():
        secs = np.array([t["time_s"] for t in ts])
        ratios = [t["eps_prime_ratio"] for t in ts if t["eps_prime_ratio"] is not None]
        rows.append(
            {
                "distribution": dist, "n": n, "m": m, "algo": algo, "eps": eps,
                "mean_s": float(secs.mean()),
                "std_s": float(secs.std()),
                "mean_iters": float(np.mean([t["iterations"] for t in ts])),
                "pass_rate": float(np.mean([t["passes"] for t in ts])),
                "mean_eps_prime_ratio": float(np.mean(ratios)) if ratios else None,
            }
        )
    return rows


def _write_rows(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow(["" if row[c] is None else row[c] for c in columns])


def run_bench(plan: BenchPlan, out, trials_out=None, jobs: int = 1, overrides=None):
    """Run every trial of ``plan``; returns ``(aggregate_rows, trial_rows)``.

    Trials are independent and may run in ``jobs`` worker processes; results
    are collected in plan order. Both CSVs are rewritten after every finished
    trial, so an interrupted sweep leaves its partial results on disk.
    """
    keys = list(plan.trials())
    trials_out = trials_out or Path(out).with_suffix(".trials.csv")
    done: list[dict] = []

    def flush():
        _write_rows(out, BENCH_COLUMNS, aggregate(done))
        _write_rows(trials_out, TRIAL_COLUMNS, done)

    flush()
    if jobs > 1 and len(keys) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(run_trial, k, plan.eps, plan.time_limit_s, overrides) for k in keys]
            for fut in futures:
                done.append(fut.result())
                flush()
    else:
        for k in keys:
            done.append(run_trial(k, plan.eps, plan.time_limit_s, overrides))
            flush()
    return aggregate(done), done


def _parse_dims(text):
    dims = []
    for part in text.split(","):
        part = part.strip().lower()
        if not part:
            continue
        try:
            n, m = part.split("x") if "x" in part else (part, part)
            dims.append((int(n), int(m)))
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad dimension {part!r}; use NxM or N") from None
    return dims


def cmd_bench(args) -> int:
    file_cfg = _read_config_file(args.config)
    plan = BenchPlan(
        dimensions=args.dims,
        distributions=args.dist,
        eps=args.eps if args.eps is not None else file_cfg.get("eps", 1e-2),
        algorithms=args.algo if args.algo is not None else file_cfg.get("algorithms", list(ALGOS)),
        repeats=args.repeats,
        seed_base=args.seed,
        time_limit_s=args.time_limit_s,
    )
    overrides = {k: getattr(args, k) for k in ("delta_mode", "gamma", "reg_eta", "max_iter", "step_mode")}
    rows, trials = run_bench(plan, args.out, args.trials_out, args.jobs, overrides)
    for row in rows:
        print(
            f"{row['distribution']:>11} {row['n']:>5}x{row['m']:<5} {row['algo']:>4}  "
            f"mean {row['mean_s']:.3f}s  iters {row['mean_iters']:.1f}  pass {row['pass_rate']:.2f}"
        )
    return EXIT_PASS if all(t["passes"] for t in trials) else EXIT_FAIL


# --------------------------------------------------------------------------
# argument parsing


def _solver_flags(p, with_algo=True):
    if with_algo:
        p.add_argument("--algo", choices=ALGOS, default="sgr")
    p.add_argument("--eps", type=float, default=None, help="target accuracy (default 0.01)")
    p.add_argument("--delta-mode", dest="delta_mode", type=_delta_mode, default=None,
                   help="smoothing level for sgr: theoretical, heuristic or a number")
    p.add_argument("--gamma", type=float, default=None, help="sgr step fraction in (0, 1)")
    p.add_argument("--step-mode", dest="step_mode", type=_step_mode, default=None,
                   help="sgr step: scaled (default), theoretical or a number")
    p.add_argument("--reg-eta", dest="reg_eta", type=float, default=None, help="dca regularization (default n/m)")
    p.add_argument("--max-iter", dest="max_iter", type=int, default=None, help="iteration cap")
    p.add_argument("--time-limit-s", dest="time_limit_s", type=float, default=None, help="per-run wall-clock cap")
    p.add_argument("--config", default=None, help="JSON file with solver settings; flags take precedence")


class _Parser(argparse.ArgumentParser):
    # usage errors are invalid input, not argparse's default status 2
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="chores-ce", description="Competitive equilibria of chore markets")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a random market instance")
    p.add_argument("--dist", default="uniform", help=f"one of {', '.join(DISTRIBUTIONS)}")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--condition-cap", dest="condition_cap", type=float, default=100.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("solve", help="run a solver and verify its output")
    p.add_argument("instance")
    _solver_flags(p)
    p.add_argument("--out", default="result.json")
    p.add_argument("--trace", default=None, help="trace CSV path (default: next to --out)")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("verify", help="check a price/allocation pair")
    p.add_argument("instance")
    p.add_argument("candidate", help="JSON with p and x, or a solve result")
    p.add_argument("--eps", type=float, default=1e-2)
    p.add_argument("--eps-list", dest="eps_list", type=float, nargs="*", default=None)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", help="seeded benchmark sweep")
    p.add_argument("--dist", nargs="+", default=["uniform"])
    p.add_argument("--dims", type=_parse_dims, default=[(10, 10), (50, 50)], help="e.g. 10x10,50x50 or 500x50")
    p.add_argument("--algo", nargs="*", choices=ALGOS, default=None, help="algorithms; none gives an empty table")
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--seed", type=int, default=0, help="seed of the first repeat")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default="bench.csv")
    p.add_argument("--trials-out", dest="trials_out", default=None)
    _solver_flags(p, with_algo=False)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # usage errors and --help; return the code so callers can test it
        return exc.code if isinstance(exc.code, int) else EXIT_INVALID
    try:
        return args.func(args)
    except (InvalidInput, ValueError, OSError) as exc:
        # MarketError and NonPositivePrice are ValueErrors
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
