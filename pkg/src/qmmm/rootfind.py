"""Bracketed Newton iteration with bisection safeguard for monotone scalar roots."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

from .errors import MaxIterError, NoSignChangeError


@dataclass
class RootResult:
    root: float
    residual: float
    iterations: int
    bracket: tuple[float, float]


def expand_bracket(f: Callable[[float], float], start: float, direction: float,
                   limit: float, f_start: float | None = None, max_doublings: int = 80):
    """Walk from ``start`` in ``direction`` until ``f`` changes sign.

    Steps double from 1; the walk never passes ``limit`` (which may be
    infinite).  Returns ``(end, f(end))`` for the first point whose sign
    differs from ``f(start)``.
    """
    fs = f(start) if f_start is None else f_start
    step = 1.0
    prev = start
    for _ in range(max_doublings):
        x = start + direction * step
        if (direction > 0 and x >= limit) or (direction < 0 and x <= limit):
            x = limit
        fx = f(x)
        if fx == 0 or (fx > 0) != (fs > 0):
            return x, fx
        if x == limit:
            break
        prev = x
        step *= 2.0
    raise NoSignChangeError(
        f"no sign change between {start:.6g} and {prev if math.isinf(limit) else limit:.6g}")


def safeguarded_newton(
    f: Callable[[float], float],
    fprime: Callable[[float], float],
    lo: float,
    hi: float,
    x0: float | None = None,
    tol: float = 1e-11,
    max_iter: int = 200,
    f_lo: float | None = None,
    f_hi: float | None = None,
) -> RootResult:
    """Find ``x`` in ``[lo, hi]`` with ``|f(x)| <= tol``.

    ``f(lo)`` and ``f(hi)`` must differ in sign.  Newton steps are taken
    from the current iterate and accepted only if they land strictly inside
    the current bracket and shrink ``|f|`` by at least half; otherwise the
    bracket is bisected.
    """
    f_lo = f(lo) if f_lo is None else f_lo
    f_hi = f(hi) if f_hi is None else f_hi
    if abs(f_lo) <= tol:
        return RootResult(lo, abs(f_lo), 0, (lo, hi))
    if abs(f_hi) <= tol:
        return RootResult(hi, abs(f_hi), 0, (lo, hi))
    if (f_lo > 0) == (f_hi > 0):
        raise NoSignChangeError(f"f has the same sign at {lo:.6g} and {hi:.6g}")
    bracket = (lo, hi)
    neg_at_lo = f_lo < 0
    x = x0 if x0 is not None and lo < x0 < hi else 0.5 * (lo + hi)
    best = (math.inf, x)
    prev_abs = math.inf
    for it in range(1, max_iter + 1):
        fx = f(x)
        if abs(fx) < best[0]:
            best = (abs(fx), x)
        if abs(fx) <= tol:
            return RootResult(x, abs(fx), it, bracket)
        if (fx < 0) == neg_at_lo:
            lo = x
        else:
            hi = x
        if hi - lo <= 4 * math.ulp(max(abs(lo), abs(hi), 1e-300)):
            break
        step_ok = False
        if abs(fx) <= 0.5 * prev_abs:
            d = fprime(x)
            if d != 0 and math.isfinite(d):
                xn = x - fx / d
                step_ok = lo < xn < hi
        prev_abs = abs(fx)
        x = xn if step_ok else 0.5 * (lo + hi)
    if best[0] <= tol:
        return RootResult(best[1], best[0], max_iter, bracket)
    raise MaxIterError(
        f"root not resolved to {tol:g}: best |f| = {best[0]:.3g} at x = {best[1]:.17g}")
