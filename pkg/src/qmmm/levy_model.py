"""Lévy triplets with finite-activity jump measures.

A model is a triplet ``(b, c, K)`` relative to the truncation function
``h(x) = x 1{|x| <= 1}`` together with a horizon ``T``.  Jump measures are
either finitely many atoms (any dimension) or a bounded density on a
bounded interval (dimension one only).
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence, Union

import numpy as np

from .errors import (DomainError, NonFiniteError, NonIntegrableError, ParseError,
                     QuadratureError)
from .quadrature import adaptive_gk

TOL_PSD = 1e-12
DEFAULT_QUAD_TOL = 1e-10


def default_quad_tol() -> float:
    raw = os.environ.get("QMMM_QUAD_TOL")
    if raw is None:
        return DEFAULT_QUAD_TOL
    tol = float(raw)
    if not (tol > 0 and math.isfinite(tol)):
        raise ValueError(f"QMMM_QUAD_TOL must be a positive number, got {raw!r}")
    return tol


def truncation(x: np.ndarray) -> np.ndarray:
    """h(x) = x 1{||x|| <= 1}, row-wise for ``x`` of shape (n, d)."""
    x = np.asarray(x, dtype=float)
    inside = np.linalg.norm(x, axis=-1) <= 1.0
    return x * inside[..., None]


# --------------------------------------------------------------------------
# jump measures
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Atoms:
    """Jump measure ``sum_i w_i delta_{x_i}``."""

    locations: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        loc = np.asarray(self.locations, dtype=float)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if loc.ndim == 1:
            loc = loc.reshape(-1, 1) if loc.size == w.size else loc.reshape(1, -1)
        if loc.ndim != 2 or loc.shape[0] != w.size:
            raise ValueError("atom locations must have shape (n, d) matching n weights")
        object.__setattr__(self, "locations", loc)
        object.__setattr__(self, "weights", w)

    @classmethod
    def empty(cls, dim: int = 1) -> "Atoms":
        return cls(np.zeros((0, dim)), np.zeros(0))

    @property
    def dim(self) -> int:
        return self.locations.shape[1]

    @property
    def n_atoms(self) -> int:
        return self.weights.size

    def total_mass(self) -> float:
        return float(self.weights.sum())

    def support_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        if self.n_atoms == 0:
            return np.zeros(self.dim), np.zeros(self.dim)
        return self.locations.min(axis=0), self.locations.max(axis=0)

    def tilted(self, tilt: Callable[[np.ndarray], np.ndarray]) -> "Atoms":
        """The measure ``Y(x) K(dx)``."""
        if self.n_atoms == 0:
            return self
        return Atoms(self.locations.copy(), self.weights * np.asarray(tilt(self.locations), float))


@dataclass(frozen=True, eq=False)
class Density1D:
    """Jump measure ``f(x) dx`` on the open interval ``(lo, hi)``.

    ``pdf`` is vectorised over 1-D arrays.  ``family`` and ``params`` record
    how the density was built so that named families can be written back to
    a model file.
    """

    pdf: Callable[[np.ndarray], np.ndarray]
    lo: float
    hi: float
    family: str = "custom"
    params: Mapping[str, Any] = field(default_factory=dict)
    breakpoints: tuple = ()
    quad_tol: float = field(default_factory=default_quad_tol)
    panels: int = 4

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi) and self.lo < self.hi):
            raise ValueError("density support must be a bounded interval lo < hi")
        if not self.quad_tol > 0:
            raise ValueError("quadrature tolerance must be positive")

    dim = 1

    def support_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return np.array([self.lo]), np.array([self.hi])

    def _points(self) -> list[float]:
        # h jumps at +-1 and families may have kinks
        return [p for p in (-1.0, 0.0, 1.0, *self.breakpoints) if self.lo < p < self.hi]

    def quad(self, func, tol: float | None = None, panels: int | None = None):
        return adaptive_gk(func, self.lo, self.hi, tol=self.quad_tol if tol is None else tol,
                           points=self._points(), panels=panels or self.panels)

    def total_mass(self) -> float:
        res = self.quad(lambda x: self.pdf(x))
        return float(res.value)

    def tilted(self, tilt: Callable[[np.ndarray], np.ndarray]) -> "Density1D":
        base = self.pdf

        def pdf(x):
            x = np.asarray(x, dtype=float)
            flat = x.reshape(-1)
            return (base(flat) * np.asarray(tilt(flat[:, None]), float)).reshape(x.shape)

        return Density1D(pdf, self.lo, self.hi, "tilted", {"base": self.family},
                         self.breakpoints, self.quad_tol, self.panels)

    def pushforward_exp(self) -> "Density1D":
        """Law of ``e^x - 1`` when ``x`` has this density."""
        base = self.pdf

        def pdf(y):
            y = np.asarray(y, dtype=float)
            return base(np.log1p(y)) / (1.0 + y)

        pts = tuple(math.expm1(p) for p in self.breakpoints)
        return Density1D(pdf, math.expm1(self.lo), math.expm1(self.hi), "pushforward_exp",
                         {"base": self.family, "base_params": dict(self.params)},
                         pts, self.quad_tol, self.panels)


JumpMeasure = Union[Atoms, Density1D]


def uniform_density(lo: float, hi: float, intensity: float, **kw) -> Density1D:
    """Constant density with total mass ``intensity`` on ``(lo, hi)``."""
    level = intensity / (hi - lo)

    def pdf(x):
        return np.full(np.shape(x), level)

    return Density1D(pdf, lo, hi, "uniform", {"lo": lo, "hi": hi, "intensity": intensity}, **kw)


def truncated_double_exponential_density(eta_plus: float, eta_minus: float, p: float,
                                         intensity: float, lo: float, hi: float,
                                         **kw) -> Density1D:
    """Kou-type two-sided exponential density restricted to ``(lo, hi)``.

    The restriction is renormalised so the total jump intensity equals
    ``intensity``.
    """
    if not (eta_plus > 0 and eta_minus > 0 and 0 <= p <= 1):
        raise ValueError("need eta_plus, eta_minus > 0 and p in [0, 1]")
    mass = 0.0
    if hi > 0:
        a = max(lo, 0.0)
        mass += p * (math.exp(-eta_plus * a) - math.exp(-eta_plus * hi))
    if lo < 0:
        b = min(hi, 0.0)
        mass += (1 - p) * (math.exp(eta_minus * b) - math.exp(eta_minus * lo))
    if not mass > 0:
        raise ValueError("double-exponential density has no mass on (lo, hi)")
    scale = intensity / mass

    def pdf(x):
        x = np.asarray(x, dtype=float)
        pos = p * eta_plus * np.exp(-eta_plus * np.maximum(x, 0.0))
        neg = (1 - p) * eta_minus * np.exp(eta_minus * np.minimum(x, 0.0))
        return scale * np.where(x >= 0, pos, neg)

    params = {"eta_plus": eta_plus, "eta_minus": eta_minus, "p": p,
              "intensity": intensity, "lo": lo, "hi": hi}
    return Density1D(pdf, lo, hi, "truncated_double_exponential", params, (0.0,), **kw)


def tabulated_density(xs: Sequence[float], fs: Sequence[float], **kw) -> Density1D:
    """Piecewise-linear density through the points ``(xs[i], fs[i])``."""
    xs = np.asarray(xs, dtype=float)
    fs = np.asarray(fs, dtype=float)
    if xs.ndim != 1 or xs.shape != fs.shape or xs.size < 2:
        raise ValueError("tabulated density needs matching 1-D xs, fs with >= 2 points")
    if np.any(np.diff(xs) <= 0):
        raise ValueError("tabulated xs must be strictly increasing")

    def pdf(x):
        return np.interp(x, xs, fs)

    kinks = tuple(xs[1:-1]) if xs.size <= 2002 else ()
    return Density1D(pdf, float(xs[0]), float(xs[-1]), "tabulated",
                     {"xs": xs.tolist(), "fs": fs.tolist()}, kinks, **kw)


def integrate_k(K: JumpMeasure, phi: Callable[[np.ndarray], np.ndarray],
                tol: float | None = None):
    """Integrate ``phi`` against the jump measure.

    ``phi`` receives jump sizes as an array of shape (n, d) and returns an
    array of shape (n,) or (n, ...).  Atoms are summed exactly; densities
    use adaptive Gauss-Kronrod quadrature.  A divergent refinement returns
    ``inf`` (with the sign of the partial result).
    """
    if isinstance(K, Atoms):
        if K.n_atoms == 0:
            probe = np.asarray(phi(np.zeros((1, K.dim))), dtype=float)
            return np.zeros(probe.shape[1:]) if probe.ndim > 1 else 0.0
        vals = np.asarray(phi(K.locations), dtype=float)
        if np.isnan(vals).any():
            raise NonFiniteError("integrand returned NaN at an atom")
        out = np.tensordot(K.weights, vals, axes=([0], [0]))
        return float(out) if np.ndim(out) == 0 else out

    def integrand(x):
        vals = np.asarray(phi(x[:, None]), dtype=float)
        f = K.pdf(x)
        return vals * f.reshape((-1,) + (1,) * (vals.ndim - 1))

    res = K.quad(integrand, tol=tol)
    if not res.converged:
        if res.divergent:
            return np.where(res.value >= 0, np.inf, -np.inf) if np.ndim(res.value) else (
                math.inf if res.value >= 0 else -math.inf)
        raise QuadratureError(
            f"quadrature reached {res.n_panels} panels with error {res.error:.3g}")
    return float(res.value) if np.ndim(res.value) == 0 else res.value


# --------------------------------------------------------------------------
# triplets
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LevyTriplet:
    """Characteristic triplet ``(b, c, K)`` per unit time and horizon ``T``."""

    b: np.ndarray
    c: np.ndarray
    K: JumpMeasure
    T: float = 1.0

    def __post_init__(self):
        b = np.atleast_1d(np.asarray(self.b, dtype=float)).reshape(-1)
        c = np.atleast_2d(np.asarray(self.c, dtype=float))
        if c.shape == (1, 1) and b.size > 1:
            raise ValueError("c must be d x d")
        # clamp floating-point noise below zero on symmetric c
        if c.shape[0] == c.shape[1] and np.allclose(c, c.T, atol=1e-14, rtol=0):
            c = 0.5 * (c + c.T)
            w, v = np.linalg.eigh(c)
            if np.any((w < 0) & (w >= -TOL_PSD)):
                w = np.where((w < 0) & (w >= -TOL_PSD), 0.0, w)
                c = (v * w) @ v.T
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "T", float(self.T))

    @property
    def dim(self) -> int:
        return self.b.size

    def replace(self, **changes) -> "LevyTriplet":
        kw = {"b": self.b, "c": self.c, "K": self.K, "T": self.T}
        kw.update(changes)
        return LevyTriplet(**kw)


@dataclass
class Finding:
    code: str
    message: str
    severity: str = "error"


@dataclass
class ValidationReport:
    findings: list[Finding] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not any(f.severity == "error" for f in self.findings)

    def add(self, code: str, message: str, severity: str = "error") -> None:
        self.findings.append(Finding(code, message, severity))

    def codes(self) -> list[str]:
        return [f.code for f in self.findings]


def validate(triplet: LevyTriplet) -> ValidationReport:
    """Check the standing assumptions on a triplet; never raises."""
    rep = ValidationReport()
    b, c, K = triplet.b, triplet.c, triplet.K
    d = b.size

    if not np.all(np.isfinite(b)):
        rep.add("NONFINITE_DRIFT", "b has non-finite entries")
    if c.shape != (d, d):
        rep.add("DIM_MISMATCH", f"c has shape {c.shape}, expected ({d}, {d})")
    elif not np.all(np.isfinite(c)):
        rep.add("NONFINITE_DIFFUSION", "c has non-finite entries")
    else:
        if not np.allclose(c, c.T, atol=1e-14, rtol=1e-12):
            rep.add("C_NOT_SYMMETRIC", "c is not symmetric")
        eig = np.linalg.eigvalsh(0.5 * (c + c.T))
        if eig.min() < -TOL_PSD:
            rep.add("C_NOT_PSD", f"c not nonnegative definite (min eigenvalue {eig.min():.3g})")
    if not (triplet.T > 0 and math.isfinite(triplet.T)):
        rep.add("BAD_HORIZON", f"horizon T must be positive, got {triplet.T}")

    if K.dim != d:
        rep.add("DIM_MISMATCH", f"jump dimension {K.dim} differs from drift dimension {d}")

    if isinstance(K, Atoms):
        loc, w = K.locations, K.weights
        if not (np.all(np.isfinite(loc)) and np.all(np.isfinite(w))):
            rep.add("NONFINITE_ATOMS", "atom locations or weights are not finite")
        if np.any(w < 0):
            rep.add("NEGATIVE_WEIGHT", "atom intensities must be >= 0")
        if K.n_atoms:
            if np.any(loc <= -1.0):
                rep.add("SUPPORT_OUTSIDE", "support outside (-1, inf): some jump <= -1")
            if np.any(np.all(loc == 0.0, axis=1)):
                rep.add("ATOM_AT_ORIGIN", "jump measure has an atom at the origin")
    else:
        if d != 1:
            rep.add("DENSITY_DIM", "density jump measures require d = 1")
        if K.lo <= -1.0:
            rep.add("SUPPORT_OUTSIDE", f"support outside (-1, inf): lower end {K.lo} <= -1")
        grid = np.linspace(K.lo, K.hi, 4097)
        try:
            fv = np.asarray(K.pdf(grid), dtype=float)
        except Exception as exc:  # report, do not raise
            rep.add("DENSITY_EVAL", f"density evaluation failed: {exc}")
        else:
            if not np.all(np.isfinite(fv)):
                rep.add("DENSITY_UNBOUNDED", "density is not finite on its support")
            elif np.any(fv < 0):
                rep.add("NEGATIVE_DENSITY", "density takes negative values")
            else:
                try:
                    mass = K.total_mass()
                except Exception as exc:
                    rep.add("INFINITE_MASS", f"total mass not computable: {exc}")
                else:
                    if not math.isfinite(mass):
                        rep.add("INFINITE_MASS", "jump measure has infinite mass")
                    elif mass == 0:
                        rep.add("ZERO_MASS", "density has zero mass", "warning")
    if rep.passed:
        try:
            m2 = integrate_k(K, lambda x: np.sum(x * x, axis=1))
        except Exception as exc:
            rep.add("SECOND_MOMENT", f"second moment not computable: {exc}")
        else:
            if not math.isfinite(m2):
                rep.add("SECOND_MOMENT", "jump measure has infinite second moment")
    return rep


def drift_b0(triplet: LevyTriplet) -> np.ndarray:
    """``b + int (x - h(x)) K(dx)``, the drift of ``L`` without truncation."""
    corr = integrate_k(triplet.K, lambda x: x - truncation(x))
    corr = np.atleast_1d(np.asarray(corr, dtype=float))
    if not np.all(np.isfinite(corr)):
        raise NonIntegrableError("int |x - h(x)| K(dx) diverges")
    return triplet.b + corr


def exp_to_se(b_tilde, c_tilde, K_tilde: JumpMeasure, T: float = 1.0) -> LevyTriplet:
    """Triplet of ``L`` such that ``exp(L~) = E(L)`` for ``L~ ~ (b~, c~, K~)``."""
    b_tilde = np.atleast_1d(np.asarray(b_tilde, dtype=float))
    c_tilde = np.atleast_2d(np.asarray(c_tilde, dtype=float))
    corr = integrate_k(K_tilde, lambda x: truncation(np.expm1(x)) - truncation(x))
    b = b_tilde + 0.5 * np.diag(c_tilde) + np.atleast_1d(corr)
    if isinstance(K_tilde, Atoms):
        K = Atoms(np.expm1(K_tilde.locations), K_tilde.weights.copy())
    else:
        K = K_tilde.pushforward_exp()
    return LevyTriplet(b, c_tilde, K, T)


@dataclass(frozen=True)
class LambdaDomain:
    """Set of ``lam`` with ``(q-1) lam.x + 1 > 0`` for K-a.e. ``x``.

    One-dimensional domains are the open interval ``(lo, hi)``; for
    multidimensional atoms the set is the polytope ``normals @ lam < 1``.
    """

    lo: float = -math.inf
    hi: float = math.inf
    normals: np.ndarray | None = None

    def contains(self, lam) -> bool:
        lam = np.atleast_1d(np.asarray(lam, dtype=float))
        if self.normals is not None:
            return bool(np.all(self.normals @ lam < 1.0))
        return bool(self.lo < lam[0] < self.hi)

    def shrunk(self, margin: float = 1e-8) -> tuple[float, float]:
        lo = self.lo * (1 - margin) if math.isfinite(self.lo) else self.lo
        hi = self.hi * (1 - margin) if math.isfinite(self.hi) else self.hi
        return lo, hi


def lambda_domain(K: JumpMeasure, q: float) -> LambdaDomain:
    """Exact set of tilt parameters keeping ``(q-1) lam.x + 1`` positive."""
    if q == 1 or 0 <= q < 1:
        raise DomainError(f"q must lie in (-inf, 0) or (1, inf), got {q}")
    a = q - 1.0
    if isinstance(K, Atoms):
        live = K.locations[K.weights > 0]
        if live.shape[0] == 0:
            return LambdaDomain()
        if K.dim > 1:
            # (q-1) lam.x > -1  <=>  (-(q-1) x).lam < 1
            return LambdaDomain(normals=-a * live)
        x_lo, x_hi = float(live.min()), float(live.max())
    else:
        if K.total_mass() == 0:
            return LambdaDomain()
        x_lo, x_hi = K.lo, K.hi
    lo, hi = -math.inf, math.inf
    # constraint a*lam*x > -1 for every x in [x_lo, x_hi]
    for x in (x_lo, x_hi):
        if x == 0:
            continue
        bound = -1.0 / (a * x)
        if a * x > 0:
            lo = max(lo, bound)
        else:
            hi = min(hi, bound)
    return LambdaDomain(lo, hi)


# --------------------------------------------------------------------------
# model files
# --------------------------------------------------------------------------


def _reject_constant(name):
    raise ParseError(f"non-finite number {name} not allowed in model file")


def _floats(value, what):
    arr = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ParseError(f"{what} must be finite")
    return arr


def measure_from_dict(spec: Mapping[str, Any], d: int) -> JumpMeasure:
    kind = spec.get("type")
    quad = spec.get("quadrature", {})
    kw = {}
    if "tol" in quad:
        kw["quad_tol"] = float(quad["tol"])
    if "panels" in quad:
        kw["panels"] = int(quad["panels"])
    if kind == "atoms":
        atoms = spec.get("atoms", [])
        if not atoms:
            return Atoms.empty(d)
        loc = _floats([np.atleast_1d(a["x"]) for a in atoms], "atom locations").reshape(len(atoms), -1)
        w = _floats([a["w"] for a in atoms], "atom weights")
        return Atoms(loc, w)
    if kind == "density":
        family = spec.get("family")
        if family == "uniform":
            return uniform_density(float(spec["lo"]), float(spec["hi"]), float(spec["intensity"]), **kw)
        if family == "truncated_double_exponential":
            keys = ("eta_plus", "eta_minus", "p", "intensity", "lo", "hi")
            return truncated_double_exponential_density(*(float(spec[k]) for k in keys), **kw)
        if family == "tabulated":
            return tabulated_density(_floats(spec["xs"], "xs"), _floats(spec["fs"], "fs"), **kw)
        raise ParseError(f"unknown density family {family!r}")
    raise ParseError(f"unknown jump measure type {kind!r}")


def model_from_dict(doc: Mapping[str, Any]) -> LevyTriplet:
    try:
        d = int(doc["d"])
        b = _floats(doc["b"], "b").reshape(-1)
        c = _floats(doc["c"], "c")
        c = c.reshape(d, d) if c.size == d * d else c
        T = float(doc.get("T", 1.0))
        K = measure_from_dict(doc.get("K", {"type": "atoms", "atoms": []}), d)
    except ParseError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed model: {exc}") from exc
    if b.size != d:
        raise ParseError(f"b has {b.size} entries but d = {d}")
    return LevyTriplet(b, c, K, T)


def measure_to_dict(K: JumpMeasure) -> dict:
    if isinstance(K, Atoms):
        return {"type": "atoms",
                "atoms": [{"x": loc.tolist(), "w": float(w)} for loc, w in zip(K.locations, K.weights)]}
    if K.family in ("uniform", "truncated_double_exponential", "tabulated"):
        out = {"type": "density", "family": K.family}
        out.update(K.params)
        out["quadrature"] = {"tol": K.quad_tol, "panels": K.panels}
        return out
    raise ValueError(f"density family {K.family!r} has no file representation")


def model_to_dict(triplet: LevyTriplet) -> dict:
    return {"d": triplet.dim, "b": triplet.b.tolist(), "c": triplet.c.tolist(),
            "T": triplet.T, "K": measure_to_dict(triplet.K)}


def parse_model(text: str) -> LevyTriplet:
    try:
        doc = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParseError("model file must hold a JSON object")
    return model_from_dict(doc)


def load_model(path: str | os.PathLike) -> LevyTriplet:
    with open(path) as fh:
        return parse_model(fh.read())
