"""Limited-memory BFGS with a strong-Wolfe line search.

Used both for training prototype models and for the downstream logistic
regression, so it knows nothing about either.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

Fun = Callable[[np.ndarray], tuple[float, np.ndarray]]


@dataclass(frozen=True)
class OptimizerSettings:
    max_iter: int = 500
    gtol: float = 1e-5
    ftol: float = 1e-9
    memory: int = 10
    c1: float = 1e-4
    c2: float = 0.9
    max_linesearch: int = 30

    def __post_init__(self):
        if self.gtol <= 0 or self.ftol <= 0:
            raise ValueError("tolerances must be positive")
        if self.memory < 1:
            raise ValueError("history size must be at least 1")
        if not 0 < self.c1 < self.c2 < 1:
            raise ValueError("line search constants need 0 < c1 < c2 < 1")


@dataclass
class OptimizeResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    n_iter: int
    n_eval: int
    converged: bool
    message: str
    # (iteration, loss, gradient norm) per accepted iterate, starting at 0
    trace: list[tuple[int, float, float]] = field(default_factory=list)

    @property
    def grad_norm(self) -> float:
        return float(np.linalg.norm(self.grad))


class LineSearchError(RuntimeError):
    pass


def _cubic_min(a, fa, da, b, fb, db):
    """Minimizer of the cubic interpolating (a, fa, da) and (b, fb, db)."""
    d1 = da + db - 3 * (fa - fb) / (a - b)
    rad = d1 * d1 - da * db
    lo, hi = min(a, b), max(a, b)
    if rad < 0:
        return None
    d2 = np.sqrt(rad)
    if a > b:
        d2 = -d2
    denom = db - da + 2 * d2
    if denom == 0:
        return None
    t = b - (b - a) * (db + d2 - d1) / denom
    if not lo <= t <= hi:
        return None
    return t


def strong_wolfe(phi, f0, d0, step, c1=1e-4, c2=0.9, max_iter=30):
    """Find a step satisfying the strong Wolfe conditions.

    ``phi(t)`` returns ``(f, dphi, payload)``. Returns ``(t, f, payload,
    n_eval)``; raises LineSearchError when no acceptable step is found.
    """
    if d0 >= 0:
        raise LineSearchError("not a descent direction")
    t_prev, f_prev, d_prev, p_prev = 0.0, f0, d0, None
    t = step
    n_eval = 0
    for i in range(max_iter):
        f, d, payload = phi(t)
        n_eval += 1
        if f > f0 + c1 * t * d0 or (i > 0 and f >= f_prev):
            return _zoom(phi, f0, d0, (t_prev, f_prev, d_prev, p_prev), (t, f, d),
                         c1, c2, max_iter - n_eval, n_eval)
        if abs(d) <= -c2 * d0:
            return t, f, payload, n_eval
        if d >= 0:
            return _zoom(phi, f0, d0, (t, f, d, payload), (t_prev, f_prev, d_prev),
                         c1, c2, max_iter - n_eval, n_eval)
        t_prev, f_prev, d_prev, p_prev = t, f, d, payload
        t = t * 2.5
    raise LineSearchError("bracketing phase did not terminate")


def _zoom(phi, f0, d0, low, high, c1, c2, budget, n_eval):
    lo, f_lo, d_lo, p_lo = low
    hi, f_hi, d_hi = high
    # the low end always satisfies sufficient decrease; t=0 carries no payload
    best = (lo, f_lo, p_lo) if p_lo is not None else None
    for _ in range(max(budget, 1)):
        t = _cubic_min(lo, f_lo, d_lo, hi, f_hi, d_hi)
        width = abs(hi - lo)
        # keep trial away from the interval ends
        if t is None or abs(t - lo) < 0.1 * width or abs(t - hi) < 0.1 * width:
            t = 0.5 * (lo + hi)
        f, d, payload = phi(t)
        n_eval += 1
        if f > f0 + c1 * t * d0 or f >= f_lo:
            hi, f_hi, d_hi = t, f, d
        else:
            best = (t, f, payload)
            if abs(d) <= -c2 * d0:
                return t, f, payload, n_eval
            if d * (hi - lo) >= 0:
                hi, f_hi, d_hi = lo, f_lo, d_lo
            lo, f_lo, d_lo = t, f, d
        if abs(hi - lo) <= 1e-16 * max(1.0, abs(lo)):
            break
    if best is not None:
        # sufficient decrease holds; accept without the curvature condition
        return best + (n_eval,)
    raise LineSearchError("zoom phase found no acceptable step")


def minimize_lbfgs(fun: Fun, x0: np.ndarray, settings: OptimizerSettings = OptimizerSettings(),
                   callback: Callable[[int, np.ndarray, float], None] | None = None) -> OptimizeResult:
    """Minimize ``fun`` (returning loss and gradient) starting from ``x0``."""
    x = np.array(x0, dtype=float)
    f, g = fun(x)
    n_eval = 1
    trace = [(0, float(f), float(np.linalg.norm(g)))]
    S: deque = deque(maxlen=settings.memory)
    Y: deque = deque(maxlen=settings.memory)
    message = "maximum iterations reached"
    converged = False
    it = 0
    if np.linalg.norm(g) <= settings.gtol:
        return OptimizeResult(x, float(f), g, 0, n_eval, True, "gradient tolerance met", trace)

    while it < settings.max_iter:
        direction = -_two_loop(g, S, Y)
        slope = float(direction @ g)
        if slope >= 0:
            S.clear()
            Y.clear()
            direction = -g
            slope = float(direction @ g)
        step = min(1.0, 1.0 / np.linalg.norm(g)) if not S else 1.0

        def phi(t, x=x, direction=direction):
            xt = x + t * direction
            ft, gt = fun(xt)
            return ft, float(gt @ direction), (xt, gt)

        try:
            t, f_new, (x_new, g_new), used = strong_wolfe(
                phi, f, slope, step, settings.c1, settings.c2, settings.max_linesearch)
        except LineSearchError as exc:
            message = f"line search failed: {exc}"
            break
        n_eval += used
        it += 1
        s, yv = x_new - x, g_new - g
        sy = float(s @ yv)
        if sy > 1e-10 * float(yv @ yv):
            S.append(s)
            Y.append(yv)
        f_old = f
        x, f, g = x_new, f_new, g_new
        gnorm = float(np.linalg.norm(g))
        trace.append((it, float(f), gnorm))
        if callback is not None:
            callback(it, x, f)
        if gnorm <= settings.gtol:
            message, converged = "gradient tolerance met", True
            break
        if (f_old - f) <= settings.ftol * max(abs(f_old), abs(f), 1.0):
            message, converged = "relative decrease below tolerance", True
            break
    return OptimizeResult(x, float(f), g, it, n_eval, converged, message, trace)


def _two_loop(g, S, Y):
    q = g.copy()
    alphas = []
    for s, y in zip(reversed(S), reversed(Y)):
        rho = 1.0 / (y @ s)
        a = rho * (s @ q)
        q -= a * y
        alphas.append((rho, a))
    if S:
        s, y = S[-1], Y[-1]
        q *= (s @ y) / (y @ y)
    for (s, y), (rho, a) in zip(zip(S, Y), reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return q
