"""Sweeps of the q-optimal measure as ``q`` decreases to 1.

Each row solves for ``lam_q`` (warm-started from the previous row), and
records the divergence and the relative entropy gap to the minimal entropy
measure.  Probe points track the jump tilt ``Y_q(x)`` against ``Y_e(x)``.
"""
from __future__ import annotations

import csv
import io
import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientRowsError, QmmmError
from .levy_model import Atoms, LevyTriplet
from .solvers import SolverOptions, phi_dlambda, solve_memm, solve_qmmm
from .tilts import EsscherTilt, PowerTilt, entropy_gap

SINGULAR_WARN = 1e-10


def default_grid(n: int = 9, q_max: float = 1.5) -> list[float]:
    """``1 + (q_max - 1) 2^-j`` for ``j = 0..n-1``."""
    return [1.0 + (q_max - 1.0) * 2.0**-j for j in range(n)]


def default_probes(K, n: int = 5) -> np.ndarray:
    """``n`` equally spaced interior points of the support, or the atoms themselves."""
    if isinstance(K, Atoms):
        return K.locations[K.weights > 0][:n].copy()
    return np.linspace(K.lo, K.hi, n + 2)[1:-1, None]


@dataclass
class SweepRow:
    q: float
    lam: np.ndarray
    residual: float
    k_q: float
    divergence: float
    H: float
    min_singular: float
    ok: bool = True
    error: str = ""


@dataclass
class SweepReport:
    rows: list[SweepRow]
    lam_e: np.ndarray
    probes: np.ndarray
    y_e: np.ndarray
    y_q: np.ndarray          # (n_rows, n_probes)
    density_ratio: np.ndarray  # (n_rows, n_probes), from the tilted measure itself
    warnings: list[str] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    def good_rows(self) -> list[SweepRow]:
        return [r for r in self.rows if r.ok]

    def to_csv(self) -> str:
        buf = io.StringIO()
        out = csv.writer(buf, lineterminator="\n")
        d = self.lam_e.size
        lam_cols = ["lambda"] if d == 1 else [f"lambda_{i}" for i in range(d)]
        out.writerow(["q", *lam_cols, "residual", "k_q", "divergence", "H"])
        for r in self.rows:
            out.writerow([_g(r.q), *(_g(v) for v in r.lam), _g(r.residual), _g(r.k_q),
                          _g(r.divergence), _g(r.H)])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "lambda_e": self.lam_e.tolist(),
            "rows": [{"q": r.q, "lambda": r.lam.tolist(), "residual": r.residual, "k_q": r.k_q,
                      "divergence": r.divergence, "H": r.H, "min_singular": r.min_singular,
                      "ok": r.ok, "error": r.error} for r in self.rows],
            "probes": [{"x": x.tolist(), "Y_e": float(ye), "Y_q": self.y_q[:, i].tolist(),
                        "density_ratio": self.density_ratio[:, i].tolist()}
                       for i, (x, ye) in enumerate(zip(self.probes, self.y_e))],
            "warnings": list(self.warnings),
            "diagnostics": self.diagnostics,
        }

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.to_dict()), indent=2)


def _g(v: float) -> str:
    return f"{v:.17g}"


def _jsonable(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return _jsonable(obj.item())
    return obj


def _density_ratio(K, tilt, probes) -> np.ndarray:
    if probes.shape[0] == 0:
        return np.zeros(0)
    if isinstance(K, Atoms):
        Kq = K.tilted(tilt)
        out = np.empty(probes.shape[0])
        for i, x in enumerate(probes):
            hit = np.flatnonzero(np.all(K.locations == x, axis=1) & (K.weights > 0))
            out[i] = Kq.weights[hit[0]] / K.weights[hit[0]] if hit.size else math.nan
        return out
    return K.tilted(tilt).pdf(probes[:, 0]) / K.pdf(probes[:, 0])


def _solve_row(triplet, q, lam_e, opts, x0):
    sol = solve_qmmm(triplet, q, opts, x0)
    H = entropy_gap(triplet, sol.lam, q, lam_e).H
    sv = float(np.linalg.svd(np.atleast_2d(phi_dlambda(triplet, sol.lam, q)), compute_uv=False).min())
    return sol, SweepRow(q, sol.lam.copy(), sol.residual_norm, sol.k_value, sol.divergence, H, sv)


def q_sweep(triplet: LevyTriplet, q_grid=None, probes=None, opts: SolverOptions | None = None,
            warm: bool = True, n_threads: int = 1) -> SweepReport:
    """Solve along a decreasing grid of ``q > 1`` and collect the convergence data."""
    opts = opts or SolverOptions()
    grid = sorted(default_grid() if q_grid is None else [float(q) for q in q_grid], reverse=True)
    if any(not q > 1 for q in grid):
        raise ValueError("sweep grid must lie in (1, inf)")
    K = triplet.K
    probes = default_probes(K) if probes is None else np.asarray(probes, float).reshape(-1, triplet.dim)
    lam_e = solve_memm(triplet, opts).lam
    rows: list[SweepRow | None] = [None] * len(grid)
    tilts: list[PowerTilt | None] = [None] * len(grid)

    def failed(q, exc):
        nan = math.nan
        return SweepRow(q, np.full(triplet.dim, nan), nan, nan, nan, nan, nan, False,
                        f"{type(exc).__name__}: {exc}")

    def run(i, x0):
        try:
            sol, row = _solve_row(triplet, grid[i], lam_e, opts, x0)
            rows[i], tilts[i] = row, sol.tilt
            return sol.lam
        except QmmmError as exc:
            rows[i] = failed(grid[i], exc)
            return x0

    if warm:
        x0 = None
        for i in range(len(grid)):
            x0 = run(i, x0)
    elif n_threads > 1:
        with ThreadPoolExecutor(n_threads) as pool:
            list(pool.map(lambda i: run(i, None), range(len(grid))))
    else:
        for i in range(len(grid)):
            run(i, None)

    n_p = probes.shape[0]
    y_e = EsscherTilt(lam_e)(probes) if n_p else np.zeros(0)
    y_q = np.full((len(grid), n_p), math.nan)
    ratio = np.full((len(grid), n_p), math.nan)
    for i, t in enumerate(tilts):
        if t is not None and n_p:
            y_q[i] = t(probes)
            ratio[i] = _density_ratio(K, t, probes)

    report = SweepReport(rows, lam_e, probes, y_e, y_q, ratio)
    for r in rows:
        if r.ok and r.min_singular < SINGULAR_WARN:
            msg = f"q={r.q:.6g}: smallest singular value of dphi/dlambda is {r.min_singular:.3g}"
            report.warnings.append(msg)
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
        if not r.ok:
            report.warnings.append(f"q={r.q:.6g}: {r.error}")
    good = [r for r in rows if r.ok]
    report.diagnostics = {
        "failed_rows": len(rows) - len(good),
        "lambda_decay_exponent": _decay_exponent([r.q for r in good],
                                                 [float(np.max(np.abs(r.lam - lam_e))) for r in good]),
        "H_decay_exponent": _decay_exponent([r.q for r in good], [r.H for r in good]),
    }
    if len(good) >= 3:
        report.diagnostics.update(convergence_diagnostics(report).to_dict())
    return report


def _decay_exponent(qs, values) -> float:
    """Least-squares slope of ``log value`` against ``log(q - 1)``."""
    pts = [(math.log(q - 1.0), math.log(v)) for q, v in zip(qs, values) if v > 0 and math.isfinite(v)]
    if len(pts) < 2:
        return math.nan
    x, y = np.array(pts).T
    return float(np.polyfit(x, y, 1)[0])


@dataclass
class ConvergenceVerdict:
    passed: bool
    lambda_decreasing: bool
    probes_decreasing: bool
    H_decreasing: bool
    H_nonnegative: bool
    H_ratio: float
    span: float
    reasons: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _decreasing(values, slack) -> bool:
    return bool(np.all(np.diff(np.asarray(values, float)) <= slack))


def convergence_diagnostics(report: SweepReport, slack: float = 1e-12) -> ConvergenceVerdict:
    """Check that the q-optimal measure approaches the minimal entropy one along the rows.

    Rows are taken in the order stored in the report, so a report whose rows
    are not sorted by decreasing ``q`` is judged as given.
    """
    idx = [i for i, r in enumerate(report.rows) if r.ok]
    if len(idx) < 3:
        raise InsufficientRowsError(f"need at least 3 successful rows, have {len(idx)}")
    rows = [report.rows[i] for i in idx]
    lam_gap = [float(np.max(np.abs(r.lam - report.lam_e))) for r in rows]
    if report.probes.shape[0]:
        probe_gap = np.max(np.abs(report.y_q[idx] - report.y_e[None, :]), axis=1)
    else:
        probe_gap = np.zeros(len(rows))
    H = [r.H for r in rows]
    reasons = []
    lam_ok = _decreasing(lam_gap, slack)
    probe_ok = _decreasing(probe_gap, slack)
    H_ok = _decreasing(H, slack)
    nonneg = bool(min(H) >= -slack)
    qs = [r.q for r in rows]
    span = (max(qs) - 1.0) / (min(qs) - 1.0)
    ratio = H[-1] / H[0] if H[0] > 0 else 0.0
    if not lam_ok:
        reasons.append("|lambda_q - lambda_e| is not decreasing")
    if not probe_ok:
        reasons.append("max probe |Y_q - Y_e| is not decreasing")
    if not H_ok:
        reasons.append("H is not decreasing")
    if not nonneg:
        reasons.append("H has negative entries")
    ratio_ok = True
    if span >= 25 and H[0] > 0 and not H[-1] <= 0.05 * H[0]:
        ratio_ok = False
        reasons.append(f"final H is {ratio:.3g} of the initial H, above 0.05")
    passed = lam_ok and probe_ok and H_ok and nonneg and ratio_ok
    return ConvergenceVerdict(passed, lam_ok, probe_ok, H_ok, nonneg, ratio, span, reasons)
