"""Jump tilts, the penalty ``g_q`` and the divergence functionals built on it."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DomainError
from .levy_model import Atoms, JumpMeasure, LevyTriplet, integrate_k

_LOG_MAX = math.log(np.finfo(float).max)


def _check_q(q: float) -> None:
    if 0 <= q <= 1:
        raise DomainError(f"q must lie in (-inf, 0) or (1, inf), got {q}")


def g_q(y, q: float):
    """``y**q - 1 - q (y - 1)``, evaluated without cancellation near ``y = 1``."""
    _check_q(q)
    y = np.asarray(y, dtype=float)
    if np.any(~(y > 0)):
        raise DomainError("g_q is defined for y > 0 only")
    u = np.log(y)
    out = np.expm1(q * u) - q * (y - 1.0)
    small = np.abs(u) < 0.1
    if np.any(small):
        # g_q(e^u) = sum_{n>=2} (q^n - q) u^n / n!
        us = u[small] if out.ndim else u
        acc = np.zeros_like(us)
        term = np.ones_like(us)
        for n in range(1, 24):
            term = term * us / n
            if n >= 2:
                acc = acc + (q**n - q) * term
        if out.ndim:
            out[small] = acc
        else:
            out = acc
    return out if out.ndim else float(out)


# --------------------------------------------------------------------------
# tilts
# --------------------------------------------------------------------------


class Tilt:
    """Density ``Y`` of the jump compensator under a changed measure."""

    def __call__(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def log(self, x: np.ndarray) -> np.ndarray:
        return np.log(self(x))

    def describe(self) -> str:
        return type(self).__name__


@dataclass(frozen=True, eq=False)
class Identity(Tilt):
    def __call__(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.ones(x.shape[0])

    def log(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.zeros(x.shape[0])

    def describe(self):
        return "Y(x) = 1"


@dataclass(frozen=True, eq=False)
class EsscherTilt(Tilt):
    """``Y(x) = exp(lam . x)``."""

    lam: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lam", np.atleast_1d(np.asarray(self.lam, dtype=float)))

    def log(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return x @ self.lam

    def __call__(self, x):
        return np.exp(self.log(x))

    def describe(self):
        return f"Y(x) = exp({_fmt(self.lam)} . x)"


@dataclass(frozen=True, eq=False)
class PowerTilt(Tilt):
    """``Y(x) = ((q-1) lam . x + 1) ** (1/(q-1))``."""

    lam: np.ndarray
    q: float

    def __post_init__(self):
        _check_q(self.q)
        object.__setattr__(self, "lam", np.atleast_1d(np.asarray(self.lam, dtype=float)))
        object.__setattr__(self, "q", float(self.q))

    def base(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return (self.q - 1.0) * (x @ self.lam)

    def log(self, x):
        z = self.base(x)
        if np.any(~(z > -1.0)):
            raise DomainError("(q-1) lam.x + 1 <= 0: tilt outside its admissible region")
        # log1p keeps q -> 1 accurate where (q-1) lam.x is tiny
        return np.log1p(z) / (self.q - 1.0)

    def __call__(self, x):
        return np.exp(self.log(x))

    def power(self, x, exponent: float):
        """``((q-1) lam.x + 1) ** exponent``."""
        z = self.base(x)
        if np.any(~(z > -1.0)):
            raise DomainError("(q-1) lam.x + 1 <= 0: tilt outside its admissible region")
        return np.exp(exponent * np.log1p(z))

    def describe(self):
        return f"Y(x) = ({self.q - 1:.6g} * {_fmt(self.lam)} . x + 1)^(1/{self.q - 1:.6g})"


@dataclass(frozen=True, eq=False)
class FunctionTilt(Tilt):
    """Arbitrary positive tilt given by a vectorised function of (n, d) arrays."""

    func: Callable[[np.ndarray], np.ndarray]
    label: str = "custom"

    def __call__(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.asarray(self.func(x), dtype=float)

    def describe(self):
        return f"Y = {self.label}"


def _fmt(v) -> str:
    v = np.atleast_1d(v)
    return f"{v[0]:.6g}" if v.size == 1 else "[" + ", ".join(f"{t:.6g}" for t in v) + "]"


def tilt_eval(Y: Tilt, x) -> np.ndarray | float:
    """Evaluate a tilt at one jump ``x`` (vector or scalar) or at rows of ``x``."""
    arr = np.asarray(x, dtype=float)
    single = arr.ndim <= 1
    if single:
        arr = arr.reshape(1, -1)
    out = Y(arr)
    if np.any(~(out > 0)):
        raise DomainError("tilt is not strictly positive at the given point")
    return float(out[0]) if single else out


def check_admissible(K: JumpMeasure, Y: Tilt) -> bool:
    """True if ``Y > 0`` on the support of ``K``."""
    if isinstance(Y, PowerTilt):
        from .levy_model import lambda_domain

        return lambda_domain(K, Y.q).contains(Y.lam)
    if isinstance(K, Atoms):
        if K.n_atoms == 0:
            return True
        try:
            return bool(np.all(Y(K.locations[K.weights > 0]) > 0))
        except DomainError:
            return False
    grid = np.linspace(K.lo, K.hi, 2049)[1:-1, None]
    try:
        return bool(np.all(Y(grid) > 0))
    except DomainError:
        return False


# --------------------------------------------------------------------------
# divergences
# --------------------------------------------------------------------------


def k_q(triplet: LevyTriplet, beta, Y: Tilt, q: float) -> float:
    """``(q(q-1)/2) beta.c.beta + int g_q(Y(x)) K(dx)``; ``inf`` if divergent."""
    _check_q(q)
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    gauss = 0.5 * q * (q - 1.0) * float(beta @ triplet.c @ beta)
    jump = integrate_k(triplet.K, lambda x: g_q(Y(x), q))
    return gauss + float(jump)


def fq_divergence(triplet: LevyTriplet, beta, Y: Tilt, q: float) -> float:
    """``E[(dQ/dP)^q] = exp(T k_q(beta, Y))`` for Lévy-preserving ``Q``."""
    k = k_q(triplet, beta, Y, q)
    if not math.isfinite(k):
        raise OverflowError("k_q is infinite; the divergence is not finite")
    exponent = triplet.T * k
    if exponent > _LOG_MAX:
        raise OverflowError(f"T k_q = {exponent:.6g} exceeds the floating-point range")
    return math.exp(exponent)


@dataclass(frozen=True)
class IntegrabilityCheck:
    finite: bool
    value: float
    second_moment: float | None = None


def check_2_6(K: JumpMeasure, Y: Tilt, q: float | None = None) -> IntegrabilityCheck:
    """Finiteness of ``int g_q(Y) dK`` for the candidate tilt.

    For ``q = 2`` power tilts the equivalent quantity ``int (lam.x)^2 dK``
    is reported as well.
    """
    if isinstance(Y, Identity):
        return IntegrabilityCheck(True, 0.0)
    if q is None:
        if not isinstance(Y, PowerTilt):
            raise ValueError("q is required for tilts other than PowerTilt")
        q = Y.q
    try:
        value = float(integrate_k(K, lambda x: g_q(Y(x), q)))
    except (DomainError, ArithmeticError):
        value = math.inf
    m2 = None
    if isinstance(Y, PowerTilt) and Y.q == 2:
        m2 = float(integrate_k(K, lambda x: (x @ Y.lam) ** 2))
    return IntegrabilityCheck(math.isfinite(value), value, m2)


@dataclass(frozen=True)
class EntropyGapReport:
    gaussian_term: float
    jump_term: float

    @property
    def H(self) -> float:
        return self.gaussian_term + self.jump_term


def entropy_integrand(Yq: Tilt, Ye: Tilt):
    """Pointwise ``(log Yq - log Ye) Yq - (Yq - Ye)``, which is >= 0."""

    def f(x):
        lq, le = Yq.log(x), Ye.log(x)
        yq, ye = np.exp(lq), np.exp(le)
        return (lq - le) * yq - (yq - ye)

    return f


def entropy_gap(triplet: LevyTriplet, lam_q, q: float, lam_e) -> EntropyGapReport:
    """Relative entropy of the q-optimal measure with respect to the MEMM."""
    lam_q = np.atleast_1d(np.asarray(lam_q, dtype=float))
    lam_e = np.atleast_1d(np.asarray(lam_e, dtype=float))
    Yq, Ye = PowerTilt(lam_q, q), EsscherTilt(lam_e)
    diff = lam_q - lam_e
    gaussian = 0.5 * triplet.T * float(diff @ triplet.c @ diff)
    jump = triplet.T * float(integrate_k(triplet.K, entropy_integrand(Yq, Ye)))
    return EntropyGapReport(gaussian, jump)


def entropy_gap_two_term(triplet: LevyTriplet, lam_q, q: float, lam_e) -> float:
    """Same quantity with the Gaussian part in unreduced form."""
    bq = np.atleast_1d(np.asarray(lam_q, dtype=float))
    be = np.atleast_1d(np.asarray(lam_e, dtype=float))
    c, T = triplet.c, triplet.T
    gauss = -0.5 * T * (bq @ c @ bq - be @ c @ be) + T * ((bq - be) @ c @ bq)
    jump = T * float(integrate_k(triplet.K, entropy_integrand(PowerTilt(bq, q), EsscherTilt(be))))
    return float(gauss) + jump
