"""Command-line front end.

Exit codes: 0 success, 1 model validation failed, 2 unreadable model or
atom limit, 3 no root / infeasible constraint, 4 iteration budget or
numerical failure, 5 too few sweep rows or paths, 6 a verification failed.
Reports go to stdout, diagnostics to stderr.
"""
from __future__ import annotations

import argparse
import math
import sys
from dataclasses import dataclass

import numpy as np

from . import __version__
from .convergence import convergence_diagnostics, default_grid, q_sweep
from .errors import (DomainError, InfeasibleError, InsufficientPathsError, InsufficientRowsError,
                     MaxIterError, NoSignChangeError, ParseError, QmmmError, SingularSigmaError)
from .levy_model import Atoms, load_model, model_to_dict, validate
from .mc_verify import check_divergence_mc, check_martingale_mc
from .oracle import oracle_pq_atoms
from .solvers import (MeasureSolution, SolverOptions, candidate_solution, solve_memm, solve_qmmm,
                      vmmm_crosscheck)
from .tilts import PowerTilt

EXIT_OK, EXIT_INVALID, EXIT_PARSE, EXIT_NOROOT, EXIT_MAXITER, EXIT_ROWS, EXIT_VERIFY = range(7)


class CliExit(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


@dataclass
class RunConfig:
    command: str
    model: str
    q: float | None = None
    kind: str = "qmmm"
    grid: list[float] | None = None
    probes: list[float] | None = None
    n_paths: int = 100_000
    seed: int = 0
    n_threads: int = 1
    out: str | None = None
    fmt: str = "json"
    lambda_override: float | None = None


# --------------------------------------------------------------------------
# output helpers
# --------------------------------------------------------------------------


def dumps17(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON with every float written to 17 significant digits."""
    pad, inner = " " * (indent * _level), " " * (indent * (_level + 1))
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return f"{v:.17g}" if math.isfinite(v) else f'"{v}"'
    if isinstance(obj, str):
        import json
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f'{inner}{dumps17(str(k))}: {dumps17(v, indent, _level + 1)}' for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(dumps17(v) for v in obj) + "]"
        items = [inner + dumps17(v, indent, _level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + pad + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _f6(v) -> str:
    if isinstance(v, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_f6(t) for t in np.ravel(v)) + "]"
    return f"{float(v):.6g}"


def _table(pairs) -> str:
    width = max(len(k) for k, _ in pairs)
    return "\n".join(f"{k:<{width}}  {v}" for k, v in pairs)


def _emit(cfg: RunConfig, text: str, doc: dict) -> None:
    print(text)
    if cfg.out:
        with open(cfg.out, "w") as fh:
            fh.write(dumps17(doc) + "\n")


def _err(msg: str) -> None:
    print(f"qmmm: {msg}", file=sys.stderr)


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def _load(cfg: RunConfig, check: bool = True):
    try:
        triplet = load_model(cfg.model)
    except OSError as exc:
        raise CliExit(EXIT_PARSE, f"cannot read model: {exc}") from exc
    except (ParseError, ValueError) as exc:
        raise CliExit(EXIT_PARSE, f"ParseError: {exc}") from exc
    if check:
        rep = validate(triplet)
        if not rep.passed:
            raise CliExit(EXIT_INVALID, "model failed validation: " + ", ".join(rep.codes()))
    return triplet


def cmd_validate(cfg: RunConfig) -> int:
    triplet = _load(cfg, check=False)
    rep = validate(triplet)
    lines = [f"{f.severity:<7} {f.code}: {f.message}" for f in rep.findings]
    lines.append("PASSED" if rep.passed else "FAILED")
    _emit(cfg, "\n".join(lines), {"passed": rep.passed,
                                  "findings": [f.__dict__ for f in rep.findings]})
    return EXIT_OK if rep.passed else EXIT_INVALID


def _solution_rows(sol: MeasureSolution):
    rows = [("kind", sol.kind)]
    if sol.q is not None:
        rows.append(("q", _f6(sol.q)))
    rows += [("lambda", _f6(sol.lam)), ("beta", _f6(sol.beta)), ("tilt", sol.tilt.describe()),
             ("residual", _f6(sol.residual_norm)), ("k", _f6(sol.k_value)),
             ("entropy" if sol.kind == "MEMM" else "divergence", _f6(sol.divergence))]
    rows += [("note", n) for n in sol.notes]
    return rows


def _solve(triplet, cfg: RunConfig) -> MeasureSolution:
    if cfg.kind == "memm":
        return solve_memm(triplet)
    q = 2.0 if cfg.kind == "vmmm" else cfg.q
    if q is None:
        raise CliExit(EXIT_PARSE, "--q is required for --kind qmmm")
    return solve_qmmm(triplet, q)


def cmd_solve(cfg: RunConfig) -> int:
    triplet = _load(cfg)
    sol = _solve(triplet, cfg)
    rows = _solution_rows(sol)
    doc = {"model": model_to_dict(triplet), "solution": sol.to_dict()}
    if cfg.kind == "vmmm":
        try:
            rep = vmmm_crosscheck(triplet)
            rows += [("lambda_SC", _f6(rep.sc.lam_sc)), ("SC positivity", str(rep.sc.positivity)),
                     ("SC check", rep.message)]
            doc["structure_condition"] = rep.to_dict()
        except SingularSigmaError as exc:
            rows.append(("SC check", str(exc)))
            doc["structure_condition"] = {"message": str(exc)}
    _emit(cfg, _table(rows), doc)
    return EXIT_OK


def _parse_grid(text: str | None) -> list[float]:
    if text is None:
        return default_grid()
    try:
        if text.startswith("geometric:"):
            q_max, n = text.split(":", 1)[1].split(",")
            return default_grid(int(n), float(q_max))
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise CliExit(EXIT_PARSE, f"bad --grid {text!r}: {exc}") from exc


def cmd_sweep(cfg: RunConfig) -> int:
    triplet = _load(cfg)
    probes = None if cfg.probes is None else np.asarray(cfg.probes, float)
    rep = q_sweep(triplet, cfg.grid or default_grid(), probes)
    verdict = convergence_diagnostics(rep)
    header = f"{'q':>12} {'lambda':>12} {'residual':>12} {'k_q':>12} {'divergence':>12} {'H':>12}"
    lines = [header]
    for r in rep.rows:
        lines.append(" ".join(f"{_f6(v):>12}" for v in (r.q, r.lam[0] if r.lam.size == 1
                                                        else np.linalg.norm(r.lam),
                                                        r.residual, r.k_q, r.divergence, r.H)))
    lines.append(f"lambda_e = {_f6(rep.lam_e)}")
    lines.append("convergence: " + ("PASSED" if verdict.passed else "FAILED: " + "; ".join(verdict.reasons)))
    for w in rep.warnings:
        _err(w)
    print("\n".join(lines))
    if cfg.out:
        with open(cfg.out, "w") as fh:
            fh.write(rep.to_csv() if cfg.fmt == "csv" else dumps17(rep.to_dict()) + "\n")
    return EXIT_OK if verdict.passed else EXIT_VERIFY


def cmd_verify(cfg: RunConfig) -> int:
    if cfg.n_paths < 2:
        raise CliExit(EXIT_ROWS, "--n-paths must be at least 2 (standard error undefined)")
    triplet = _load(cfg)
    if cfg.lambda_override is not None:
        q = 2.0 if cfg.kind != "qmmm" or cfg.q is None else cfg.q
        lam = np.full(triplet.dim, cfg.lambda_override)
        sol = candidate_solution(triplet, lam, PowerTilt(lam, q), q)
    else:
        sol = _solve(triplet, cfg)
    reports = []
    if sol.kind != "MEMM":
        reports.append(check_divergence_mc(triplet, sol, cfg.n_paths, cfg.seed, cfg.n_threads))
    for mode in ("direct", "weighted"):
        reports.append(check_martingale_mc(triplet, sol, cfg.n_paths, cfg.seed, mode, cfg.n_threads))
    lines = [f"{'check':<22} {'estimate':>12} {'target':>12} {'std_error':>12} {'z':>8}  result"]
    for r in reports:
        lines.append(f"{r.label:<22} {_f6(r.estimate):>12} {_f6(r.target):>12} "
                     f"{_f6(r.std_error):>12} {_f6(r.z_score):>8}  "
                     f"{'pass' if r.passed else 'FAIL'}{' (rerun)' if r.rerun else ''}")
    ok = all(r.passed for r in reports)
    doc = {"lambda": sol.lam.tolist(), "q": sol.q, "n_paths": cfg.n_paths, "seed": cfg.seed,
           "passed": ok, "checks": [r.to_dict() for r in reports]}
    _emit(cfg, "\n".join(lines), doc)
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_oracle(cfg: RunConfig) -> int:
    triplet = _load(cfg)
    if not isinstance(triplet.K, Atoms):
        raise CliExit(EXIT_PARSE, "the oracle needs an atomic jump measure")
    q = 2.0 if cfg.q is None else cfg.q
    orc = oracle_pq_atoms(triplet, q, seed=cfg.seed)
    sol = solve_qmmm(triplet, q)
    dk = abs(orc.k - sol.k_value)
    dlam = float(np.max(np.abs(orc.beta - sol.lam)))
    y_newton = sol.tilt(triplet.K.locations)
    rows = [("q", _f6(q)), ("k (Newton)", _f6(sol.k_value)), ("k (oracle)", _f6(orc.k)),
            ("|dk|", _f6(dk)), ("lambda (Newton)", _f6(sol.lam)), ("beta (oracle)", _f6(orc.beta)),
            ("|dlambda|", _f6(dlam)), ("y (Newton)", _f6(y_newton)), ("y (oracle)", _f6(orc.y))]
    doc = {"q": q, "k_newton": sol.k_value, "k_oracle": orc.k, "dk": dk, "dlambda": dlam,
           "lambda": sol.lam.tolist(), "beta_oracle": orc.beta.tolist(),
           "y_newton": y_newton.tolist(), "y_oracle": orc.y.tolist()}
    _emit(cfg, _table(rows), doc)
    return EXIT_OK if dk <= 1e-6 else EXIT_VERIFY


COMMANDS = {"validate": cmd_validate, "solve": cmd_solve, "sweep": cmd_sweep,
            "verify": cmd_verify, "oracle": cmd_oracle}


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qmmm", description="q-optimal, minimal-entropy and variance-minimal martingale "
                                 "measures for exponential Lévy models")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--model", required=True, help="model JSON file")
        p.add_argument("--out", help="write the full report to this file")

    p = sub.add_parser("validate", help="check a model file")
    common(p)
    p = sub.add_parser("solve", help="solve for a martingale measure")
    common(p)
    p.add_argument("--kind", choices=["qmmm", "memm", "vmmm"], default="qmmm")
    p.add_argument("--q", type=float)
    p = sub.add_parser("sweep", help="sweep q down to 1 and check convergence")
    common(p)
    p.add_argument("--grid", help='"a,b,c" or "geometric:q_max,n"')
    p.add_argument("--probes", help='"x1,x2,..." probe points inside the support')
    p.add_argument("--format", dest="fmt", choices=["json", "csv"], default="json")
    p = sub.add_parser("verify", help="Monte Carlo checks of divergence and martingale property")
    common(p)
    p.add_argument("--kind", choices=["qmmm", "memm", "vmmm"], default="qmmm")
    p.add_argument("--q", type=float, default=2.0)
    p.add_argument("--n-paths", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", dest="n_threads", type=int, default=1)
    p.add_argument("--lambda-override", type=float, help="use this lambda instead of the root")
    p = sub.add_parser("oracle", help="compare with direct minimisation (atomic models)")
    common(p)
    p.add_argument("--q", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _config(ns: argparse.Namespace) -> RunConfig:
    cfg = RunConfig(command=ns.command, model=ns.model, out=ns.out)
    for name in ("q", "kind", "n_paths", "seed", "n_threads", "fmt", "lambda_override"):
        if hasattr(ns, name):
            setattr(cfg, name, getattr(ns, name))
    if ns.command == "sweep":
        cfg.grid = _parse_grid(ns.grid)
        if ns.probes:
            try:
                cfg.probes = [float(v) for v in ns.probes.split(",")]
            except ValueError as exc:
                raise CliExit(EXIT_PARSE, f"bad --probes: {exc}") from exc
    return cfg


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    try:
        cfg = _config(ns)
        return COMMANDS[cfg.command](cfg)
    except CliExit as exc:
        _err(str(exc))
        return exc.code
    except NoSignChangeError as exc:
        _err(f"(C_q) not satisfied on admissible domain: {exc}")
        return EXIT_NOROOT
    except InfeasibleError as exc:
        _err(f"Infeasible: {exc}")
        return EXIT_NOROOT
    except MaxIterError as exc:
        _err(f"MaxIter: {exc}")
        return EXIT_MAXITER
    except (InsufficientRowsError, InsufficientPathsError) as exc:
        _err(f"{type(exc).__name__}: {exc}")
        return EXIT_ROWS
    except DomainError as exc:
        _err(f"{exc}")
        return EXIT_PARSE
    except QmmmError as exc:
        _err(f"{type(exc).__name__}: {exc}")
        return EXIT_MAXITER


if __name__ == "__main__":
    sys.exit(main())
