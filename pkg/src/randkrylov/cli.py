"""Command-line experiment runner.

    randkrylov solve     --config run.toml --out DIR [--seed S] [--threads N]
    randkrylov sweep     --config run.toml --out DIR
    randkrylov svdapprox --config run.toml --out DIR
    randkrylov flops     [--config flops.toml] --out DIR

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
See README.md for the configuration schema.
"""

import argparse
import csv
import json
import math
import platform
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np
import scipy

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from randkrylov import __version__
from randkrylov import cost
from randkrylov.hybrid import RegRule, hybrid_solve, rlsqr_damped_solve
from randkrylov.linop import (InverseProblem, load_matrix_market, load_vector, make_blur_problem,
                              make_tomo_problem, save_vector)
from randkrylov.sketch import measure_epsilon
from randkrylov.solvers import SolverConfig, _basis, solve, svd_approx_report

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class ConfigError(ValueError):
    pass


@dataclass
class ProblemSpec:
    kind: str = "tomo"               # tomo | blur | file
    side: int = 32
    num_rays: Optional[int] = None
    psf_width: float = 1.5
    noise_level: float = 0.04
    matrix: Optional[str] = None     # Matrix Market file (kind = "file")
    rhs: Optional[str] = None
    x_true: Optional[str] = None
    noise_norm: Optional[float] = None


@dataclass
class ExperimentConfig:
    problem: ProblemSpec
    solver: SolverConfig
    rule: Optional[RegRule] = None
    seed: int = 0
    repetitions: int = 1
    sweep_axis: Optional[str] = None   # "ell" | "lambda"
    sweep_values: list = field(default_factory=list)
    sweep_damped: bool = False
    svd_ks: tuple = (2, 4, 6, 8, 10)
    svd_reference: int = 10
    measure_eps: bool = False
    timing: bool = False
    raw: dict = field(default_factory=dict)


def _build(cls, table, where):
    if table is None:
        table = {}
    if not isinstance(table, dict):
        raise ConfigError(f"[{where}] must be a table")
    known = {f.name for f in fields(cls)}
    extra = set(table) - known
    if extra:
        raise ConfigError(f"unknown keys in [{where}]: {sorted(extra)}")
    try:
        return cls(**table)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"[{where}]: {err}") from err


def parse_config(data: dict, base_dir=Path("."), seed_override=None) -> ExperimentConfig:
    top = {"seed", "repetitions", "problem", "solver", "rule", "sweep", "svdapprox", "output",
           "flops"}
    extra = set(data) - top
    if extra:
        raise ConfigError(f"unknown top-level keys: {sorted(extra)}")
    seed = int(data.get("seed", 0) if seed_override is None else seed_override)
    if seed < 0:
        raise ConfigError("seed must be nonnegative")
    problem = _build(ProblemSpec, data.get("problem"), "problem")
    if problem.kind not in ("tomo", "blur", "file"):
        raise ConfigError(f"unknown problem kind {problem.kind!r}")
    if problem.kind == "file":
        for key in ("matrix", "rhs", "x_true"):
            val = getattr(problem, key)
            if val is not None:
                path = (base_dir / val).resolve()
                if not path.exists():
                    raise ConfigError(f"problem.{key}: file {path} not found")
                setattr(problem, key, str(path))
        if problem.matrix is None or problem.rhs is None:
            raise ConfigError("file problems need 'matrix' and 'rhs'")
    solver_tab = dict(data.get("solver") or {})
    if "sketch_dims" in solver_tab and solver_tab["sketch_dims"] is not None:
        dims = solver_tab["sketch_dims"]
        if isinstance(dims, int):
            dims = [dims, dims]
        solver_tab["sketch_dims"] = tuple(None if d in (0, None) else int(d) for d in dims)
    solver_tab.setdefault("seed", seed)
    solver = _build(SolverConfig, solver_tab, "solver")
    rule = None
    if data.get("rule") is not None:
        rule_tab = dict(data["rule"])
        if "bounds" in rule_tab:
            rule_tab["bounds"] = tuple(rule_tab["bounds"])
        rule = _build(RegRule, rule_tab, "rule")
    reps = int(data.get("repetitions", 1))
    if reps < 1:
        raise ConfigError("repetitions must be at least 1")
    sweep = data.get("sweep") or {}
    axis = sweep.get("axis")
    if sweep and axis not in ("ell", "lambda"):
        raise ConfigError("sweep.axis must be 'ell' or 'lambda'")
    values = list(sweep.get("values", []))
    svd = data.get("svdapprox") or {}
    out = data.get("output") or {}
    return ExperimentConfig(problem, solver, rule, seed, reps, axis, values,
                            bool(sweep.get("damped", False)),
                            tuple(int(k) for k in svd.get("ks", (2, 4, 6, 8, 10))),
                            int(svd.get("reference", 10)), bool(out.get("measure_epsilon", False)),
                            bool(out.get("timing", False)), data)


def load_config(path, seed_override=None) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except FileNotFoundError as err:
        raise ConfigError(f"config file {path} not found") from err
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f"cannot parse {path}: {err}") from err
    return parse_config(data, path.parent, seed_override)


def build_problem(spec: ProblemSpec, seed) -> InverseProblem:
    try:
        if spec.kind == "tomo":
            return make_tomo_problem(spec.side, spec.num_rays, spec.noise_level, seed)
        if spec.kind == "blur":
            return make_blur_problem(spec.side, spec.psf_width, spec.noise_level, seed)
        op = load_matrix_market(spec.matrix)
        b = load_vector(spec.rhs)
        x_true = load_vector(spec.x_true) if spec.x_true else None
    except ValueError as err:
        raise ConfigError(f"[problem]: {err}") from err
    if b.shape != (op.nrows,):
        raise ConfigError(f"rhs has length {b.size}, operator has {op.nrows} rows")
    if x_true is not None and x_true.shape != (op.ncols,):
        raise ConfigError(f"x_true has length {x_true.size}, operator has {op.ncols} columns")
    return InverseProblem(op, b, x_true, spec.noise_norm, None, name=op.name)


# -- single runs ----------------------------------------------------------------

def run_once(problem, solver: SolverConfig, rule: Optional[RegRule], damped_lambda=None):
    if damped_lambda is not None:
        return rlsqr_damped_solve(problem, damped_lambda, solver)
    if rule is None:
        return solve(problem, solver)
    return hybrid_solve(problem, solver, rule)


def _eps_hat(result):
    """Measured embedding distortion of theta_n on the final solution basis."""
    theta = result.sketches[0]
    if theta is None or result.iterations == 0:
        return None
    V = _basis(result.factorization)[:, : result.iterations + 1]
    Q, R = np.linalg.qr(V)
    keep = np.abs(np.diag(R)) > 1e-12 * np.abs(R).max()
    return measure_epsilon(theta, Q[:, keep])


def _meta(cfg: ExperimentConfig, result, extra=None):
    sk = [None if s is None else dict(kind=s.kind, input_dim=s.input_dim, sketch_dim=s.sketch_dim,
                                      label=s.label, seed=s.seed) for s in result.sketches]
    meta = dict(
        config=cfg.raw, seed=cfg.seed, method=result.method, iterations=result.iterations,
        sketches=sk, versions=dict(randkrylov=__version__, numpy=np.__version__,
                                   scipy=scipy.__version__, python=platform.python_version()))
    if cfg.measure_eps:
        meta["epsilon_hat"] = _eps_hat(result)
    if extra:
        meta.update(extra)
    return meta


def write_run(out: Path, cfg, result, extra=None):
    out.mkdir(parents=True, exist_ok=True)
    result.history.to_csv(out / "history.csv", timing=cfg.timing)
    x = None
    for k in range(result.iterations, 0, -1):
        x = result.x(k)
        if x is not None:
            break
    if x is not None:
        save_vector(out / "solution.txt", x)
    with open(out / "meta.json", "w") as f:
        json.dump(_meta(cfg, result, extra), f, indent=2, sort_keys=True, default=_json_default)
        f.write("\n")


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"cannot serialize {type(o)}")


def _solver_with(cfg: SolverConfig, **kw):
    d = asdict(cfg)
    d.update(kw)
    return SolverConfig(**d)


def _run_to_dir(out, cfg, problem, solver, rule, damped=None, extra=None):
    try:
        result = run_once(problem, solver, rule, damped)
    except FloatingPointError as err:
        partial = getattr(err, "partial", None)
        if partial is not None:
            write_run(out, cfg, partial, dict(error=str(err)))
        raise
    write_run(out, cfg, result, extra)
    return result


def _map(threads, fn, items):
    if threads <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# -- commands -------------------------------------------------------------------

STAT_COLUMNS = ("rel_error", "sketched_residual", "lambda")


def write_stats(path, results):
    """Per-iteration median and quartiles across repetitions."""
    K = max(r.iterations for r in results)
    header = ["k"]
    for c in STAT_COLUMNS:
        header += [f"{c}_median", f"{c}_q25", f"{c}_q75"]
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for k in range(1, K + 1):
            row = [k]
            for c in STAT_COLUMNS:
                vals = np.array([r.history.column(c)[k - 1] for r in results
                                 if r.iterations >= k], dtype=float)
                vals = vals[np.isfinite(vals)]
                if vals.size:
                    q25, med, q75 = np.percentile(vals, [25, 50, 75])
                    row += [repr(float(med)), repr(float(q25)), repr(float(q75))]
                else:
                    row += ["nan"] * 3
            w.writerow(row)


def cmd_solve(cfg: ExperimentConfig, out: Path, threads=1):
    problem = build_problem(cfg.problem, cfg.seed)
    if cfg.repetitions == 1:
        _run_to_dir(out, cfg, problem, cfg.solver, cfg.rule)
        return
    # repetitions redraw the sketches on the same problem instance
    def rep(r):
        solver = _solver_with(cfg.solver, seed=cfg.solver.seed + r)
        return _run_to_dir(out / f"rep_{r:03d}", cfg, problem, solver, cfg.rule,
                           extra=dict(repetition=r, sketch_seed=solver.seed))
    results = _map(threads, rep, range(cfg.repetitions))
    write_stats(out / "stats.csv", results)


def cmd_sweep(cfg: ExperimentConfig, out: Path, threads=1):
    if not cfg.sweep_values:
        raise ConfigError("sweep.values is empty")
    problem = build_problem(cfg.problem, cfg.seed)

    def setting(v):
        if cfg.sweep_axis == "ell":
            dims = tuple(v) if isinstance(v, (list, tuple)) else (int(v), int(v))
            solver = _solver_with(cfg.solver, sketch_dims=dims, allow_small_sketch=True)
            name = f"ell_{dims[0]}_{dims[1]}"
            return name, v, _run_to_dir(out / name, cfg, problem, solver, cfg.rule)
        lam = float(v)
        if lam < 0:
            raise ConfigError("lambda sweep values must be nonnegative")
        name = f"lambda_{lam:g}"
        if cfg.sweep_damped:
            return name, v, _run_to_dir(out / name, cfg, problem, cfg.solver, None, damped=lam)
        return name, v, _run_to_dir(out / name, cfg, problem, cfg.solver,
                                    RegRule(kind="fixed", lam=lam))

    try:
        for v in cfg.sweep_values:
            if cfg.sweep_axis == "ell":
                _solver_with(cfg.solver, sketch_dims=tuple(v) if isinstance(v, (list, tuple))
                             else (int(v), int(v)), allow_small_sketch=True)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"bad sweep value: {err}") from err
    done = _map(threads, setting, cfg.sweep_values)
    with open(out / "sweep.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        first = done[0][2].history
        w.writerow(("setting", "axis", "value") + first.columns)
        for name, v, res in done:
            val = "x".join(map(str, v)) if isinstance(v, (list, tuple)) else str(v)
            for row in res.history.rows(cfg.timing):
                w.writerow([name, cfg.sweep_axis, val] + row)


def cmd_svdapprox(cfg: ExperimentConfig, out: Path, threads=1):
    problem = build_problem(cfg.problem, cfg.seed)
    m, n = problem.shape
    if m * n > 10 ** 7:
        raise ConfigError(f"operator {m}x{n} too large for the dense reference SVD")
    K = max(cfg.svd_ks)
    solver = cfg.solver
    if solver.method not in ("rlsqr", "rcgls", "rlsmr"):
        raise ConfigError("svdapprox needs a Golub-Kahan based method")
    if solver.max_iters < K:
        solver = _solver_with(solver, max_iters=K)
    result = solve(problem, solver)
    st = result.factorization
    if st.k < K:
        raise FloatingPointError(f"factorization broke down after {st.k} < {K} steps")
    rows = svd_approx_report(st, problem.operator, cfg.svd_ks, cfg.svd_reference)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "svdapprox.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(("k", "panel", "index", "value"))
        for r in rows:
            w.writerow([r["k"], r["panel"], r["index"], repr(r["value"])])
    with open(out / "meta.json", "w") as f:
        json.dump(_meta(cfg, result), f, indent=2, sort_keys=True, default=_json_default)
        f.write("\n")


def cmd_flops(data: dict, out: Path):
    tab = data.get("flops") or {}
    m, n = int(tab.get("m", 10_000)), int(tab.get("n", 10_000))
    panels = tab.get("panels", ["a", "b", "c", "d"])
    c_mv = tab.get("C_mv")
    out.mkdir(parents=True, exist_ok=True)
    for p in panels:
        try:
            rows = cost.panel_rows(p, m, n, None if c_mv is None else int(c_mv),
                                   float(tab.get("eps", 0.5)), float(tab.get("delta", 0.5)))
        except ValueError as err:
            raise ConfigError(str(err)) from err
        with open(out / f"flops_{p}.csv", "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(cost.FLOPS_COLUMNS)
            for r in rows:
                w.writerow([r[c] for c in cost.FLOPS_COLUMNS])


# -- entry point ----------------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(prog="randkrylov", description=__doc__.split("\n")[0])
    ap.add_argument("command", choices=("solve", "sweep", "svdapprox", "flops"))
    ap.add_argument("--config", type=Path)
    ap.add_argument("--out", type=Path, default=Path("out"))
    ap.add_argument("--seed", type=int)
    ap.add_argument("--threads", type=int, default=1)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.seed is not None and not 0 <= args.seed < 2 ** 64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        if args.command == "flops":
            data = {}
            if args.config is not None:
                try:
                    with open(args.config, "rb") as f:
                        data = tomllib.load(f)
                except (FileNotFoundError, tomllib.TOMLDecodeError) as err:
                    raise ConfigError(str(err)) from err
            cmd_flops(data, args.out)
            return EXIT_OK
        if args.config is None:
            raise ConfigError(f"{args.command} needs --config")
        cfg = load_config(args.config, args.seed)
        cmd = {"solve": cmd_solve, "sweep": cmd_sweep, "svdapprox": cmd_svdapprox}[args.command]
        cmd(cfg, args.out, args.threads)
    except ValueError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (FloatingPointError, np.linalg.LinAlgError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
