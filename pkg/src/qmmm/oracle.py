"""Brute-force minimisation of the finite-dimensional divergence problem.

For an atomic jump measure the problem over Lévy-preserving measures is

    minimise   (q(q-1)/2) beta.c.beta + sum_i w_i g_q(y_i)
    subject to b + c beta + sum_i w_i (x_i y_i - h(x_i)) = 0,   y_i > 0,

a smooth convex program with a linear constraint.  It is solved here by an
infeasible-start Newton iteration on its optimality system, started from several
random points.  Nothing in this module uses the closed-form tilt, so it can
serve as an independent check on the root solvers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .errors import DomainError, InfeasibleError, MaxIterError
from .levy_model import Atoms, LevyTriplet, truncation
from .tilts import FunctionTilt, g_q

MAX_ATOMS = 12
Y_FLOOR = 1e-9


@dataclass
class OracleResult:
    beta: np.ndarray
    y: np.ndarray
    k: float
    constraint_residual: float
    stationarity: float
    starts: int
    spread: float


def _problem(triplet: LevyTriplet):
    K = triplet.K
    if not isinstance(K, Atoms):
        raise DomainError("the brute-force oracle needs an atomic jump measure")
    if K.n_atoms > MAX_ATOMS:
        raise DomainError(f"atom limit: the oracle handles at most {MAX_ATOMS} atoms")
    keep = K.weights > 0
    x, w = K.locations[keep], K.weights[keep]
    d = triplet.dim
    A = np.hstack([triplet.c, (x * w[:, None]).T])          # d x (d + n)
    r0 = triplet.b - (w[:, None] * truncation(x)).sum(axis=0)
    return x, w, A, r0, d


def _interior_point(triplet: LevyTriplet):
    """Feasible ``z = (beta, y)`` maximising ``min(y)`` (capped at 1), or None."""
    _, w, A, r0, d = _problem(triplet)
    n = w.size
    # maximise t subject to A z = -r0, y_i >= t, t <= 1
    nv = d + n + 1
    cost = np.zeros(nv)
    cost[-1] = -1.0
    A_eq = np.hstack([A, np.zeros((d, 1))])
    A_ub = np.zeros((n, nv))
    A_ub[np.arange(n), d + np.arange(n)] = -1.0
    A_ub[:, -1] = 1.0
    bounds = [(None, None)] * d + [(None, None)] * n + [(None, 1.0)]
    res = linprog(cost, A_ub=A_ub if n else None, b_ub=np.zeros(n) if n else None,
                  A_eq=A_eq, b_eq=-r0, bounds=bounds, method="highs")
    if res.status != 0 or not -res.fun > 1e-12:
        return None
    return res.x[:-1]


def is_feasible(triplet: LevyTriplet) -> bool:
    """Whether some ``(beta, y)`` with ``y > 0`` satisfies the constraint."""
    return _interior_point(triplet) is not None


def _objective(beta, y, c, w, q):
    return 0.5 * q * (q - 1) * float(beta @ c @ beta) + float(w @ g_q(y, q))


def _kkt_residual(z, nu, c, w, A, r0, q, d):
    beta, y = z[:d], z[d:]
    grad = np.concatenate([q * (q - 1) * (c @ beta), w * q * np.expm1((q - 1) * np.log(y))])
    return np.concatenate([grad + A.T @ nu, A @ z + r0])


def _solve_from(z, c, w, A, r0, q, d, tol, max_iter=100):
    """Infeasible-start Newton on the KKT system, keeping ``y > 0``."""
    qq = q * (q - 1)
    m, nz = A.shape
    nu = np.zeros(m)
    res = _kkt_residual(z, nu, c, w, A, r0, q, d)
    norm = float(np.linalg.norm(res))
    for _ in range(max_iter):
        if float(np.abs(res).max()) <= tol:
            break
        H = np.zeros((nz, nz))
        H[:d, :d] = qq * c
        H[d:, d:] = np.diag(w * qq * z[d:] ** (q - 2))
        H += 1e-13 * np.eye(nz)
        KKT = np.block([[H, A.T], [A, np.zeros((m, m))]])
        step = np.linalg.lstsq(KKT, -res, rcond=None)[0]
        dz, dnu = step[:nz], step[nz:]
        t = 1.0
        neg = dz[d:] < 0
        if np.any(neg):
            t = min(1.0, 0.99 * float(np.min(-z[d:][neg] / dz[d:][neg])))
        while t > 1e-12:
            zc, nc = z + t * dz, nu + t * dnu
            rc = _kkt_residual(zc, nc, c, w, A, r0, q, d)
            nrm = float(np.linalg.norm(rc))
            if nrm <= (1 - 0.01 * t) * norm or nrm <= tol:
                break
            t *= 0.5
        else:
            break
        z, nu, res, norm = zc, nc, rc, nrm
    return z, nu


def _stationarity(z, mu, c, w, A, q, d):
    beta, y = z[:d], z[d:]
    grad = np.concatenate([q * (q - 1) * (c @ beta), w * q * (y ** (q - 1) - 1.0)]) + A.T @ mu
    return float(np.abs(grad).max())


def oracle_pq_atoms(triplet: LevyTriplet, q: float, n_starts: int = 4, seed: int = 0,
                    tol: float = 1e-10) -> OracleResult:
    """Minimise ``k_q`` directly over martingale-feasible ``(beta, y)``."""
    if not q > 1:
        raise DomainError("the oracle is implemented for q > 1")
    x, w, A, r0, d = _problem(triplet)
    z_in = _interior_point(triplet)
    if z_in is None:
        raise InfeasibleError("no strictly positive tilt satisfies the martingale condition")
    c = triplet.c
    rng = np.random.default_rng(seed)
    pinv = np.linalg.pinv(A)
    best = None
    ks = []
    for i in range(n_starts):
        z0 = z_in
        if i:
            # random point on the constraint set, pulled toward z_in until y > 0
            zr = np.concatenate([rng.normal(size=d), np.exp(rng.normal(scale=0.5, size=w.size))])
            zr = zr - pinv @ (A @ zr + r0)
            s = 1.0
            while np.any(z_in[d:] + s * (zr[d:] - z_in[d:]) <= 0):
                s *= 0.5
            z0 = z_in + 0.9 * s * (zr - z_in)
        z, mu = _solve_from(z0, c, w, A, r0, q, d, tol)
        beta, y = z[:d], z[d:]
        k = _objective(beta, y, c, w, q)
        ks.append(k)
        if best is None or k < best[0]:
            best = (k, z, mu)
    k, z, mu = best
    resid = float(np.abs(A @ z + r0).max())
    stat = _stationarity(z, mu, c, w, A, q, d)
    if resid > 1e-9:
        raise MaxIterError(f"oracle left constraint residual {resid:.3g}")
    y_full = np.ones(triplet.K.n_atoms)
    y_full[triplet.K.weights > 0] = z[d:]
    return OracleResult(z[:d].copy(), y_full, k, resid, stat, n_starts,
                        float(max(ks) - min(ks)))


def atom_tilt(K: Atoms, y) -> FunctionTilt:
    """Tilt taking the value ``y[i]`` at atom ``i`` (and 1 elsewhere)."""
    locs = K.locations
    y = np.asarray(y, dtype=float)

    def func(x):
        out = np.ones(x.shape[0])
        for i, row in enumerate(x):
            hit = np.all(locs == row, axis=1)
            if hit.any():
                out[i] = y[np.argmax(hit)]
        return out

    return FunctionTilt(func, "atomwise")


def sample_feasible(triplet: LevyTriplet, rng: np.random.Generator, n: int,
                    spread: float = 0.5, max_tries: int = 10000):
    """Random feasible ``(beta, y)`` pairs by projecting random points onto the constraint."""
    x, w, A, r0, d = _problem(triplet)
    out = []
    AAt = A @ A.T
    tries = 0
    while len(out) < n:
        tries += 1
        if tries > max_tries:
            raise InfeasibleError("could not sample strictly positive feasible points")
        z = np.concatenate([rng.normal(size=d), np.exp(rng.normal(scale=spread, size=w.size))])
        corr = A.T @ np.linalg.lstsq(AAt, A @ z + r0, rcond=1e-12)[0]
        z = z - corr
        if np.abs(A @ z + r0).max() > 1e-10 or np.any(z[d:] <= 0):
            continue
        y_full = np.ones(triplet.K.n_atoms)
        y_full[triplet.K.weights > 0] = z[d:]
        out.append((z[:d].copy(), y_full))
    return out


def oracle_gap(k_newton: float, k_oracle: float) -> float:
    return abs(k_newton - k_oracle) if math.isfinite(k_newton) else math.inf
