"""Girsanov parameters of the q-optimal, minimal-entropy and variance-minimal measures.

All three measures are found from the martingale condition

    b + c lam + int (x Y(x) - h(x)) K(dx) = 0

with ``Y`` a power tilt (q-optimal), an exponential tilt (minimal entropy)
or, for ``q = 2``, the linear tilt implied by the structure condition.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (DomainError, MaxIterError, NoSignChangeError, NonIntegrableError,
                     SingularSigmaError)
from .levy_model import Atoms, LevyTriplet, drift_b0, integrate_k, lambda_domain, truncation
from .rootfind import expand_bracket, safeguarded_newton
from .tilts import (EsscherTilt, FunctionTilt, Identity, PowerTilt, Tilt, check_2_6,
                    fq_divergence, k_q)


@dataclass(frozen=True)
class SolverOptions:
    tol_root: float = 1e-11
    max_iter: int = 200
    bracket_margin: float = 1e-8
    max_doublings: int = 80

    def __post_init__(self):
        if not self.tol_root > 0:
            raise ValueError("tol_root must be positive")


@dataclass
class MeasureSolution:
    kind: str
    lam: np.ndarray
    beta: np.ndarray
    tilt: Tilt
    residual: np.ndarray
    k_value: float
    divergence: float
    q: float | None = None
    iterations: int = 0
    bracket: tuple[float, float] | None = None
    notes: list[str] = field(default_factory=list)

    @property
    def residual_norm(self) -> float:
        return float(np.max(np.abs(self.residual))) if self.residual.size else 0.0

    def to_dict(self) -> dict:
        out = {
            "kind": self.kind,
            "q": self.q,
            "lambda": self.lam.tolist(),
            "beta": self.beta.tolist(),
            "tilt": self.tilt.describe(),
            "residual": self.residual.tolist(),
            "k_value": self.k_value,
            "divergence" if self.kind != "MEMM" else "entropy": self.divergence,
            "iterations": self.iterations,
            "bracket": list(self.bracket) if self.bracket else None,
        }
        if self.notes:
            out["notes"] = list(self.notes)
        return out


# --------------------------------------------------------------------------
# root functions
# --------------------------------------------------------------------------


def _lam(lam, d):
    lam = np.atleast_1d(np.asarray(lam, dtype=float)).reshape(-1)
    if lam.size != d:
        raise DomainError(f"lambda has {lam.size} entries, model dimension is {d}")
    return lam


def _martingale_drift(triplet: LevyTriplet, lam: np.ndarray, Y) -> np.ndarray:
    d = triplet.dim

    def integrand(x):
        v = x * Y(x)[:, None] - truncation(x)
        return np.concatenate([v, np.abs(v).sum(axis=1, keepdims=True)], axis=1)

    out = np.atleast_1d(integrate_k(triplet.K, integrand))
    if not np.all(np.isfinite(out)):
        raise NonIntegrableError("int |x Y(x) - h(x)| K(dx) diverges")
    return triplet.b + triplet.c @ lam + out[:d]


def phi(triplet: LevyTriplet, lam, q: float) -> np.ndarray:
    """Martingale-condition residual for the power tilt with parameter ``lam``."""
    lam = _lam(lam, triplet.dim)
    if not lambda_domain(triplet.K, q).contains(lam):
        raise DomainError(f"lambda = {lam} violates (q-1) lam.x + 1 > 0 on supp K")
    return _martingale_drift(triplet, lam, PowerTilt(lam, q))


def phi_e(triplet: LevyTriplet, lam) -> np.ndarray:
    """Martingale-condition residual for the exponential tilt ``exp(lam.x)``."""
    lam = _lam(lam, triplet.dim)
    return _martingale_drift(triplet, lam, EsscherTilt(lam))


def phi_dlambda(triplet: LevyTriplet, lam, q: float) -> np.ndarray:
    """Jacobian ``c + int x x^T ((q-1) lam.x + 1)^((2-q)/(q-1)) K(dx)``."""
    lam = _lam(lam, triplet.dim)
    if not lambda_domain(triplet.K, q).contains(lam):
        raise DomainError(f"lambda = {lam} violates (q-1) lam.x + 1 > 0 on supp K")
    Y = PowerTilt(lam, q)
    expo = (2.0 - q) / (q - 1.0)

    def integrand(x):
        return x[:, :, None] * x[:, None, :] * Y.power(x, expo)[:, None, None]

    d = triplet.dim
    return triplet.c + np.asarray(integrate_k(triplet.K, integrand)).reshape(d, d)


def phi_e_dlambda(triplet: LevyTriplet, lam) -> np.ndarray:
    lam = _lam(lam, triplet.dim)
    Y = EsscherTilt(lam)

    def integrand(x):
        return x[:, :, None] * x[:, None, :] * Y(x)[:, None, None]

    d = triplet.dim
    return triplet.c + np.asarray(integrate_k(triplet.K, integrand)).reshape(d, d)


# --------------------------------------------------------------------------
# root solving
# --------------------------------------------------------------------------


def _solve_scalar(F, dF, domain_lo, domain_hi, opts: SolverOptions, x0=None):
    """Root of a nondecreasing scalar function on ``(domain_lo, domain_hi)``."""
    f0 = F(0.0)
    if abs(f0) <= opts.tol_root:
        return 0.0, abs(f0), 0, (0.0, 0.0)
    if f0 < 0:
        end, f_end = expand_bracket(F, 0.0, +1.0, domain_hi, f0, opts.max_doublings)
        lo, hi, f_lo, f_hi = 0.0, end, f0, f_end
    else:
        end, f_end = expand_bracket(F, 0.0, -1.0, domain_lo, f0, opts.max_doublings)
        lo, hi, f_lo, f_hi = end, 0.0, f_end, f0
    # a warm start that lies outside the sign-change bracket is useless
    res = safeguarded_newton(F, dF, lo, hi, x0=x0, tol=opts.tol_root,
                             max_iter=opts.max_iter, f_lo=f_lo, f_hi=f_hi)
    return res.root, res.residual, res.iterations, (lo, hi)


def _solve_vector(F, J, inside, d, opts: SolverOptions, x0=None, G=None, gap=None):
    """Damped Newton for the multidimensional martingale condition.

    ``F`` is the gradient of the convex potential ``G``; a step is accepted
    when it lowers ``|F|`` or satisfies an Armijo decrease of ``G``.  If the
    budget runs out while ``gap(lam)`` (distance to the domain boundary) is
    tiny, the iterates are chasing a root outside the domain.
    """
    lam = np.zeros(d) if x0 is None else np.asarray(x0, dtype=float).copy()
    if not inside(lam):
        lam = np.zeros(d)
    f = F(lam)
    nf = np.linalg.norm(f, np.inf)
    g = G(lam) if G is not None else None
    for it in range(1, opts.max_iter + 1):
        if nf <= opts.tol_root:
            return lam, nf, it - 1
        step = np.linalg.lstsq(J(lam), -f, rcond=None)[0]
        slope = float(f @ step)
        t = 1.0
        while t > 1e-14:
            cand = lam + t * step
            if inside(cand):
                fc = F(cand)
                nc = np.linalg.norm(fc, np.inf)
                gc = G(cand) if G is not None else None
                armijo = G is not None and slope < 0 and gc <= g + 1e-4 * t * slope
                if nc < nf or armijo:
                    lam, f, nf, g = cand, fc, nc, gc
                    break
            t *= 0.5
        else:
            raise NoSignChangeError(
                f"damped Newton stalled at |phi| = {nf:.3g}: no admissible root found")
    if nf <= opts.tol_root:
        return lam, nf, opts.max_iter
    if gap is not None and gap(lam) < 1e-3:
        raise NoSignChangeError(
            f"iterates approach the domain boundary with |phi| = {nf:.3g}: no admissible root")
    raise MaxIterError(f"Newton did not converge: |phi| = {nf:.3g}")


def _potential(triplet: LevyTriplet, lam: np.ndarray, q: float | None) -> float:
    """Convex function whose gradient is the martingale drift (power or exponential tilt)."""
    lam = np.asarray(lam, dtype=float)
    if q is None:
        Y = EsscherTilt(lam)
        prim = lambda x: np.expm1(Y.log(x))
    else:
        Y = PowerTilt(lam, q)
        prim = lambda x: np.expm1(q / (q - 1.0) * np.log1p(Y.base(x))) / q
    jump = integrate_k(triplet.K, lambda x: prim(x) - truncation(x) @ lam)
    return float(triplet.b @ lam + 0.5 * lam @ triplet.c @ lam + jump)


def solve_qmmm(triplet: LevyTriplet, q: float, opts: SolverOptions | None = None,
               x0=None) -> MeasureSolution:
    """Solve ``phi(lam, q) = 0`` and return the q-optimal Girsanov parameters."""
    opts = opts or SolverOptions()
    dom = lambda_domain(triplet.K, q)
    d = triplet.dim
    if d == 1:
        lo, hi = dom.shrunk(opts.bracket_margin)
        F = lambda t: float(_martingale_drift(triplet, np.array([t]), PowerTilt([t], q))[0])
        dF = lambda t: float(phi_dlambda(triplet, [t], q)[0, 0])
        x0s = None if x0 is None else float(np.atleast_1d(x0)[0])
        root, _, iters, bracket = _solve_scalar(F, dF, lo, hi, opts, x0s)
        lam = np.array([root])
    else:
        if not isinstance(triplet.K, Atoms):
            raise DomainError("multidimensional models need an atomic jump measure")
        lam, _, iters = _solve_vector(
            lambda v: _martingale_drift(triplet, v, PowerTilt(v, q)),
            lambda v: phi_dlambda(triplet, v, q),
            lambda v: dom.contains(v) and _margin_ok(dom, v, opts.bracket_margin),
            d, opts, x0, lambda v: _potential(triplet, v, q),
            lambda v: float(1.0 - np.max(dom.normals @ v)))
        bracket = None
    tilt = PowerTilt(lam, q)
    residual = _martingale_drift(triplet, lam, tilt)
    k = k_q(triplet, lam, tilt, q)
    sol = MeasureSolution("qMMM", lam, lam.copy(), tilt, residual, k,
                          _safe_divergence(triplet, lam, tilt, q), q, iters, bracket)
    if not check_2_6(triplet.K, tilt).finite:
        sol.notes.append("int g_q(Y) dK is infinite")
    if q < 0:
        sol.notes.append("q < 0: no existence guarantee for the root")
    if np.all(lam == 0):
        sol.notes.append("Q_q = P")
    return sol


def _margin_ok(dom, v, margin):
    if dom.normals is None:
        return True
    return bool(np.all(dom.normals @ v < 1.0 - margin))


def _safe_divergence(triplet, lam, tilt, q):
    try:
        return fq_divergence(triplet, lam, tilt, q)
    except OverflowError:
        return math.inf


def memm_entropy_rate(triplet: LevyTriplet, lam) -> float:
    """``1/2 lam.c.lam + int (Y log Y - Y + 1) dK`` for ``Y = exp(lam.x)``."""
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    Y = EsscherTilt(lam)

    def integrand(x):
        ly = Y.log(x)
        y = np.exp(ly)
        return y * ly - y + 1.0

    return 0.5 * float(lam @ triplet.c @ lam) + float(integrate_k(triplet.K, integrand))


def solve_memm(triplet: LevyTriplet, opts: SolverOptions | None = None, x0=None) -> MeasureSolution:
    """Solve ``phi_e(lam) = 0``: Girsanov parameters of the minimal entropy measure."""
    opts = opts or SolverOptions()
    d = triplet.dim
    if d == 1:
        F = lambda t: float(phi_e(triplet, [t])[0])
        dF = lambda t: float(phi_e_dlambda(triplet, [t])[0, 0])
        x0s = None if x0 is None else float(np.atleast_1d(x0)[0])
        root, _, iters, bracket = _solve_scalar(F, dF, -math.inf, math.inf, opts, x0s)
        lam = np.array([root])
    else:
        lam, _, iters = _solve_vector(lambda v: phi_e(triplet, v),
                                      lambda v: phi_e_dlambda(triplet, v),
                                      lambda v: True, d, opts, x0,
                                      lambda v: _potential(triplet, v, None))
        bracket = None
    tilt = EsscherTilt(lam)
    rate = memm_entropy_rate(triplet, lam)
    return MeasureSolution("MEMM", lam, lam.copy(), tilt, phi_e(triplet, lam), rate,
                           triplet.T * rate, None, iters, bracket)


# --------------------------------------------------------------------------
# structure condition (q = 2)
# --------------------------------------------------------------------------


@dataclass
class StructureCondition:
    lam_sc: np.ndarray
    gamma: np.ndarray
    sigma: np.ndarray
    positivity: bool
    khat_T: float
    residual: float


def _sc_positivity(K, lam_sc) -> bool:
    if isinstance(K, Atoms):
        live = K.locations[K.weights > 0]
        return bool(np.all(1.0 - live @ lam_sc > 0)) if live.size else True
    ends = np.array([[K.lo], [K.hi]])
    return bool(np.all(1.0 - ends @ lam_sc > 0))


def sc_lambda(triplet: LevyTriplet, rcond: float = 1e-12) -> StructureCondition:
    """Solve ``sigma lam = gamma`` with ``sigma = c + int x x^T dK``, ``gamma = b0``."""
    d = triplet.dim
    gamma = drift_b0(triplet)
    second = integrate_k(triplet.K, lambda x: x[:, :, None] * x[:, None, :])
    sigma = triplet.c + np.asarray(second).reshape(d, d)
    lam, *_ = np.linalg.lstsq(sigma, gamma, rcond=rcond)
    resid = float(np.linalg.norm(sigma @ lam - gamma))
    scale = max(1.0, float(np.linalg.norm(gamma)))
    if resid > 1e-10 * scale:
        raise SingularSigmaError(
            f"drift {gamma} is not in the range of sigma; the structure condition fails")
    khat = float(lam @ sigma @ lam) * triplet.T
    return StructureCondition(lam, gamma, sigma, _sc_positivity(triplet.K, lam), khat, resid)


@dataclass
class VmmmReport:
    sc: StructureCondition
    qmmm: MeasureSolution | None
    agree: bool | None
    difference: float | None
    probes: list[tuple[float, float, float]]
    message: str

    def to_dict(self) -> dict:
        return {
            "lambda_sc": self.sc.lam_sc.tolist(),
            "gamma": self.sc.gamma.tolist(),
            "sigma": self.sc.sigma.tolist(),
            "positivity": self.sc.positivity,
            "khat_T": self.sc.khat_T,
            "lambda_qmmm": None if self.qmmm is None else self.qmmm.lam.tolist(),
            "agree": self.agree,
            "difference": self.difference,
            "probes": [list(p) for p in self.probes],
            "message": self.message,
        }


def _probe_points(K, n=5):
    if isinstance(K, Atoms):
        return K.locations[K.weights > 0][:n]
    return np.linspace(K.lo, K.hi, n + 2)[1:-1, None]


def vmmm_crosscheck(triplet: LevyTriplet, opts: SolverOptions | None = None,
                    tol: float = 1e-8) -> VmmmReport:
    """Compare the q = 2 root with minus the structure-condition solution."""
    sc = sc_lambda(triplet)
    try:
        sol = solve_qmmm(triplet, 2.0, opts)
    except (NoSignChangeError, MaxIterError):
        sol = None
    if not sc.positivity:
        msg = "SC holds but Z_hat_T not strictly positive; VMMM != VOSMM"
        return VmmmReport(sc, sol, None, None, [], msg)
    if sol is None:
        return VmmmReport(sc, None, False, None, [],
                          "structure condition with positivity holds but the q = 2 root failed")
    diff = float(np.max(np.abs(sol.lam + sc.lam_sc)))
    probes = []
    for x in _probe_points(triplet.K):
        probes.append((float(x[0]) if x.size == 1 else float(np.linalg.norm(x)),
                       float(sol.tilt(x[None, :])[0]), float(1.0 - x @ sc.lam_sc)))
    ok = diff <= tol
    msg = "VMMM = VOSMM: lambda_2 = -lambda_SC" if ok else "mismatch between q = 2 root and SC"
    return VmmmReport(sc, sol, ok, diff, probes, msg)


def vmmm_solution(triplet: LevyTriplet) -> MeasureSolution:
    """Variance-minimal measure read off the structure condition (requires positivity)."""
    sc = sc_lambda(triplet)
    if not sc.positivity:
        raise NoSignChangeError("structure condition solution violates 1 - lam.x > 0")
    lam = -sc.lam_sc
    tilt = PowerTilt(lam, 2.0)
    residual = _martingale_drift(triplet, lam, tilt)
    k = k_q(triplet, lam, tilt, 2.0)
    return MeasureSolution("VMMM_SC", lam, lam.copy(), tilt, residual, k,
                           _safe_divergence(triplet, lam, tilt, 2.0), 2.0, 0, None)


# --------------------------------------------------------------------------
# first-order optimality along feasible perturbations
# --------------------------------------------------------------------------


@dataclass
class LocalOptimalityResult:
    passed: bool
    worst_change: float
    n_dirs: int
    failing: dict | None = None


def _sup_grid(K):
    if isinstance(K, Atoms):
        return K.locations[K.weights > 0]
    return np.linspace(K.lo, K.hi, 1025)[:, None]


def feasible_direction(triplet: LevyTriplet, tilt: Tilt, rng: np.random.Generator,
                       n_terms: int = 4):
    """Random ``(phi, Psi)`` with ``c phi + int Psi(x) x K(dx) = 0`` and ``|Psi| <= Y``."""
    d = triplet.dim
    c = triplet.c
    a = rng.normal(size=n_terms)
    omega = rng.normal(scale=3.0, size=(n_terms, d))
    theta = rng.uniform(0, 2 * np.pi, size=n_terms)
    phi_raw = rng.normal(size=d)

    def raw(x):
        return tilt(x) * (np.cos(x @ omega.T + theta) @ a)

    v = np.atleast_1d(integrate_k(triplet.K, lambda x: raw(x)[:, None] * x))
    M = np.asarray(integrate_k(triplet.K, lambda x: x[:, :, None] * x[:, None, :]
                               * tilt(x)[:, None, None])).reshape(d, d)
    mu = np.linalg.lstsq(M, c @ phi_raw + v, rcond=1e-12)[0]
    r = c @ phi_raw + v - M @ mu
    phi_dir = phi_raw - np.linalg.lstsq(c, r, rcond=1e-12)[0] if np.any(r) else phi_raw
    resid = c @ phi_dir + v - M @ mu
    if np.linalg.norm(resid) > 1e-10 * max(1.0, np.linalg.norm(v)):
        # no correction available: fall back to a pure Gaussian direction in ker(c)
        phi_dir = phi_raw - np.linalg.pinv(c) @ (c @ phi_raw)
        a = np.zeros_like(a)
        mu = np.zeros(d)

    def psi(x):
        return tilt(x) * (np.cos(x @ omega.T + theta) @ a - x @ mu)

    grid = _sup_grid(triplet.K)
    ratio = float(np.max(np.abs(psi(grid) / tilt(grid)))) if grid.size else 0.0
    scale = max(ratio, float(np.max(np.abs(phi_dir))) if d else 0.0, 1e-300)
    return phi_dir / scale, (lambda x: psi(x) / scale)


def local_optimality_check(triplet: LevyTriplet, sol: MeasureSolution, n_dirs: int = 64,
                           eps=(1e-3, -1e-3, 1e-2, -1e-2), seed: int = 0,
                           slack: float = 1e-9) -> LocalOptimalityResult:
    """Probe ``k_q`` along random feasible perturbations of ``(beta, Y)``."""
    if sol.q is None:
        raise ValueError("local optimality is defined for q-optimal solutions")
    q = sol.q
    rng = np.random.default_rng(seed)
    base = k_q(triplet, sol.beta, sol.tilt, q)
    worst = math.inf
    for i in range(n_dirs):
        dphi, dpsi = feasible_direction(triplet, sol.tilt, rng)
        for e in eps:
            Y = FunctionTilt(lambda x, e=e: sol.tilt(x) + e * dpsi(x), "perturbed")
            val = k_q(triplet, sol.beta + e * dphi, Y, q)
            change = val - base
            worst = min(worst, change)
            if change < -slack:
                return LocalOptimalityResult(False, change, i + 1,
                                             {"direction": i, "eps": e, "phi": dphi.tolist(),
                                              "change": change})
    return LocalOptimalityResult(True, worst if n_dirs else 0.0, n_dirs)


def feasible_beta(triplet: LevyTriplet, Y: Tilt) -> np.ndarray:
    """Drift tilt restoring the martingale condition for a given jump tilt."""
    jump = np.atleast_1d(integrate_k(triplet.K, lambda x: x * Y(x)[:, None] - truncation(x)))
    rhs = -(triplet.b + jump)
    beta, *_ = np.linalg.lstsq(triplet.c, rhs, rcond=1e-12)
    if np.linalg.norm(triplet.c @ beta - rhs) > 1e-10:
        raise DomainError("c beta cannot absorb the drift for this tilt")
    return beta


def candidate_solution(triplet: LevyTriplet, beta, Y: Tilt, q: float) -> MeasureSolution:
    """Wrap an arbitrary feasible pair so it can be probed like a solution."""
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    residual = _martingale_drift(triplet, beta, Y)
    k = k_q(triplet, beta, Y, q)
    lam = getattr(Y, "lam", beta)
    return MeasureSolution("candidate", np.asarray(lam), beta, Y, residual, k,
                           _safe_divergence(triplet, beta, Y, q), q)


__all__ = [
    "SolverOptions", "MeasureSolution", "phi", "phi_e", "phi_dlambda", "phi_e_dlambda",
    "solve_qmmm", "solve_memm", "memm_entropy_rate", "sc_lambda", "StructureCondition",
    "vmmm_crosscheck", "VmmmReport", "vmmm_solution", "local_optimality_check",
    "LocalOptimalityResult", "feasible_direction", "feasible_beta", "candidate_solution",
    "Identity",
]
