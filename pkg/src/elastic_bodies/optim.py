"""Limited-memory BFGS with a strong Wolfe line search.

Objectives are callables ``x -> (value, gradient)``. A non-finite value at a
trial point (e.g. a collapsed face) is treated as "too large" and the line
search backtracks.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

C1 = 1e-4
C2 = 0.9
MAX_TRIALS = 40


@dataclass
class OptimConfig:
    max_iter: int = 500
    grad_tol: float = 1e-6
    memory: int = 10


@dataclass
class OptimReport:
    final_point: np.ndarray
    final_value: float
    iterations: int
    converged: bool
    value_history: list = field(default_factory=list)
    grad_norm: float = float("nan")
    evaluations: int = 0
    message: str = ""


class LineSearchError(RuntimeError):
    pass


def _cubic_min(a, fa, ga, b, fb, gb):
    # minimiser of the cubic interpolating (a, fa, ga), (b, fb, gb); None if undefined
    d1 = ga + gb - 3.0 * (fa - fb) / (a - b)
    disc = d1 * d1 - ga * gb
    if disc < 0 or not math.isfinite(disc):
        return None
    d2 = math.copysign(math.sqrt(disc), b - a)
    denom = gb - ga + 2.0 * d2
    if denom == 0:
        return None
    return b - (b - a) * (gb + d2 - d1) / denom


class _Phi:
    """phi(alpha) = f(x + alpha p) with evaluation counting."""

    def __init__(self, fun, x, p):
        self.fun, self.x, self.p = fun, x, p
        self.count = 0

    def __call__(self, alpha):
        self.count += 1
        if self.count > MAX_TRIALS:
            raise LineSearchError("line search exceeded the trial budget")
        x = self.x + alpha * self.p
        f, g = self.fun(x)
        f = float(f)
        if not math.isfinite(f):
            return math.inf, math.nan, x, g
        return f, float(np.dot(g, self.p)), x, g


def strong_wolfe(fun, x, f0, g0, p, alpha0=1.0, c1=C1, c2=C2):
    """Step length satisfying the strong Wolfe conditions.

    Returns ``(alpha, f, g, x_new, evaluations)``; raises LineSearchError
    after ``MAX_TRIALS`` evaluations without an acceptable step.
    """
    phi = _Phi(fun, x, p)
    d0 = float(np.dot(g0, p))
    if d0 >= 0:
        raise LineSearchError("not a descent direction")

    def zoom(lo, hi):
        # lo/hi: (alpha, f, dphi)
        while True:
            a_lo, f_lo, d_lo = lo
            a_hi, f_hi, d_hi = hi
            width = abs(a_hi - a_lo)
            if width <= 1e-16 * max(1.0, abs(a_lo)):
                raise LineSearchError("bracket collapsed")
            a = None
            if math.isfinite(f_hi) and math.isfinite(d_hi):
                a = _cubic_min(a_lo, f_lo, d_lo, a_hi, f_hi, d_hi)
            left, right = min(a_lo, a_hi), max(a_lo, a_hi)
            if a is None or not (left + 0.1 * width <= a <= right - 0.1 * width):
                a = 0.5 * (a_lo + a_hi)
            f, d, xn, gn = phi(a)
            if f > f0 + c1 * a * d0 or f >= f_lo:
                hi = (a, f, d)
            else:
                if abs(d) <= -c2 * d0:
                    return a, f, gn, xn
                if d * (a_hi - a_lo) >= 0:
                    hi = lo
                lo = (a, f, d)

    prev = (0.0, f0, d0)
    a = alpha0
    first = True
    while True:
        f, d, xn, gn = phi(a)
        if f > f0 + c1 * a * d0 or (not first and f >= prev[1]):
            res = zoom(prev, (a, f, d))
            break
        if abs(d) <= -c2 * d0:
            res = (a, f, gn, xn)
            break
        if d >= 0:
            res = zoom((a, f, d), prev)
            break
        prev = (a, f, d)
        a *= 2.0
        first = False
    a, f, g, xn = res
    return a, f, np.asarray(g, dtype=float), xn, phi.count


def minimize(fun, x0, config=None, callback=None):
    """Minimise ``fun`` from ``x0`` with L-BFGS.

    Parameters
    ----------
    fun : callable
        ``x -> (value, gradient)``.
    x0 : array_like
    config : OptimConfig, optional
    callback : callable, optional
        Called as ``callback(x, value)`` after each accepted step.

    Returns
    -------
    OptimReport
        ``converged`` is true iff the final gradient satisfies
        ``max|g| <= grad_tol``.
    """
    cfg = config or OptimConfig()
    x = np.array(x0, dtype=float).ravel()
    f, g = fun(x)
    f = float(f)
    g = np.asarray(g, dtype=float).ravel()
    if not math.isfinite(f) or not np.all(np.isfinite(g)):
        raise ValueError("objective is not finite at the starting point")
    history = [f]
    evals = 1
    mem = deque(maxlen=max(1, cfg.memory))
    gnorm = float(np.max(np.abs(g))) if g.size else 0.0
    it = 0
    message = "maximum iterations reached"
    while True:
        if gnorm <= cfg.grad_tol:
            message = "gradient tolerance reached"
            break
        if it >= cfg.max_iter:
            break
        # two-loop recursion
        q = -g
        alphas = []
        for s, y, rho in reversed(mem):
            a = rho * np.dot(s, q)
            alphas.append(a)
            q -= a * y
        if mem:
            s, y, _ = mem[-1]
            q *= np.dot(s, y) / np.dot(y, y)
        for (s, y, rho), a in zip(mem, reversed(alphas)):
            b = rho * np.dot(y, q)
            q += (a - b) * s
        p = q
        if np.dot(p, g) >= 0:
            # lost descent (should not happen under Wolfe); restart
            mem.clear()
            p = -g
        alpha0 = 1.0 if mem else min(1.0, 1.0 / max(np.linalg.norm(g), 1e-300))
        try:
            _, f_new, g_new, x_new, n = strong_wolfe(fun, x, f, g, p, alpha0)
        except LineSearchError as exc:
            message = f"line search failed: {exc}"
            break
        evals += n
        g_new = g_new.ravel()
        s = x_new - x
        y = g_new - g
        sy = float(np.dot(s, y))
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            mem.append((s, y, 1.0 / sy))
        x, f, g = x_new, f_new, g_new
        gnorm = float(np.max(np.abs(g)))
        it += 1
        history.append(f)
        if callback is not None:
            callback(x, f)
    return OptimReport(
        final_point=x,
        final_value=f,
        iterations=it,
        converged=gnorm <= cfg.grad_tol,
        value_history=history,
        grad_norm=gnorm,
        evaluations=evals,
        message=message,
    )


def check_gradient(fun, x, h=1e-5):
    """Largest relative error between ``fun``'s gradient and central differences.

    Per coordinate the error is ``|fd - g| / max(|fd|, |g|, 1e-4 * max|fd|)``;
    the floor keeps coordinates whose true derivative is (near) zero from
    dominating the result with round-off.
    """
    x = np.array(x, dtype=float).ravel()
    _, g = fun(x)
    g = np.asarray(g, dtype=float).ravel()
    fd = np.empty_like(x)
    for i in range(len(x)):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        fd[i] = (float(fun(xp)[0]) - float(fun(xm)[0])) / (2.0 * h)
    floor = max(1e-4 * float(np.max(np.abs(fd))) if fd.size else 0.0, 1e-300)
    denom = np.maximum(np.maximum(np.abs(fd), np.abs(g)), floor)
    err = np.abs(fd - g) / denom
    return float(np.max(err)) if err.size else 0.0
