"""One-step maps for the explicit and semi-implicit Euler schemes.

Explicit step:      Y_{k+1} = Y_k + f(Y_k, k dt) dt + g(Y_k, k dt) dB_k
Semi-implicit step: Z_{k+1} = Z_k + f(Z_{k+1}, (k+1) dt) dt + g(Z_k, k dt) dB_k

The implicit step needs the root of x = f(x,t) dt + b. Under the one-sided
Lipschitz condition with dt < 1/|Kbar| the map F(x) = x - f(x,t) dt is
strictly monotone, so the root exists and is unique; the solver is damped
Newton with a finite-difference Jacobian, falling back to bisection (scalar)
or damped fixed-point iteration. The explicit step applies the formula
verbatim with no safeguard: reproducing the blow-up of explicit stepping on
superlinear drifts requires the unmodified map.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .problems import SdeProblem

__all__ = [
    "StepContext",
    "ImplicitSolverConfig",
    "DEFAULT_SOLVER_CONFIG",
    "ImplicitSolveError",
    "StepError",
    "em_step",
    "bem_step",
    "solve_implicit",
    "bisect_root_scalar",
]


@dataclass(frozen=True)
class StepContext:
    """Step index k, step size dt, and the Brownian increment dB_k.

    db may be an array for batched stepping; it must broadcast against the
    state.
    """

    k: int
    dt: float
    db: float | np.ndarray

    def __post_init__(self):
        if isinstance(self.k, bool) or not isinstance(self.k, (int, np.integer)):
            raise ValueError(f"k must be an integer step index, got {self.k!r}")
        if self.k < 0:
            raise ValueError(f"k must be nonnegative, got {self.k}")
        dt = float(self.dt)
        if not math.isfinite(dt) or dt <= 0:
            raise ValueError(f"dt must be a positive real, got {dt}")
        if not np.all(np.isfinite(np.asarray(self.db, dtype=float))):
            raise ValueError("db must be finite")
        object.__setattr__(self, "k", int(self.k))
        object.__setattr__(self, "dt", dt)

    @property
    def t(self) -> float:
        return self.k * self.dt


_FALLBACKS = ("bisection", "damped-iteration")


@dataclass(frozen=True)
class ImplicitSolverConfig:
    residual_tolerance: float = 1e-12
    max_iterations: int = 100
    fallback: str = "bisection"

    def __post_init__(self):
        if not (math.isfinite(self.residual_tolerance) and self.residual_tolerance > 0):
            raise ValueError(f"residual_tolerance must be positive, got {self.residual_tolerance}")
        if not isinstance(self.max_iterations, int) or self.max_iterations < 1:
            raise ValueError(f"max_iterations must be a positive integer, got {self.max_iterations}")
        if self.fallback not in _FALLBACKS:
            raise ValueError(f"fallback must be one of {_FALLBACKS}, got {self.fallback!r}")


DEFAULT_SOLVER_CONFIG = ImplicitSolverConfig()


class StepError(RuntimeError):
    """Drift or diffusion produced a non-finite value during a step."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class ImplicitSolveError(RuntimeError):
    """Implicit equation not solved to tolerance within the iteration budget."""

    def __init__(self, message, best_residual=None, state=None):
        super().__init__(message)
        self.best_residual = best_residual
        self.state = state


def em_step(problem: SdeProblem, y, ctx: StepContext, validate: bool = True):
    """Explicit step y + f(y, k dt) dt + g(y, k dt) dB, exactly as written."""
    y_arr = np.asarray(y, dtype=float)
    t = ctx.t
    f = np.asarray(problem.drift(y_arr, t), dtype=float)
    g = np.asarray(problem.diffusion(y_arr, t), dtype=float)
    out = y_arr + f * ctx.dt + g * ctx.db
    if validate and not np.all(np.isfinite(out)):
        raise StepError(
            f"non-finite drift/diffusion output at k={ctx.k}, t={t}", state=y_arr
        )
    return float(out) if np.ndim(y) == 0 else out


def _check_solver_dt(problem: SdeProblem, dt: float):
    if problem.kbar != 0.0 and dt >= 1.0 / abs(problem.kbar):
        raise ValueError(
            f"dt={dt} violates the implicit-solve precondition dt < 1/|Kbar| = "
            f"{1.0 / abs(problem.kbar)} for problem '{problem.label}'"
        )


def bisect_root_scalar(
    drift,
    t: float,
    b: float,
    dt: float,
    tolerance: float = 1e-12,
    max_iterations: int = 400,
) -> float:
    """Root of x - drift(x,t)*dt - b = 0 by bracket growth plus bisection.

    Valid for scalar problems where the residual is strictly increasing in x
    (guaranteed by the one-sided Lipschitz condition with dt < 1/|Kbar|).
    """

    def resid(x):
        return x - dt * float(drift(x, t)) - b

    width = max(1.0, abs(b))
    lo = hi = float(b)
    rlo = rhi = resid(lo)
    it = 0
    while rhi < 0.0:
        hi += width
        width *= 2.0
        rhi = resid(hi)
        it += 1
        if it > 200:
            raise ImplicitSolveError("bisection failed to bracket the root above", state=b)
    width = max(1.0, abs(b))
    it = 0
    while rlo > 0.0:
        lo -= width
        width *= 2.0
        rlo = resid(lo)
        it += 1
        if it > 200:
            raise ImplicitSolveError("bisection failed to bracket the root below", state=b)
    mid, rmid = lo, rlo
    for _ in range(max_iterations):
        mid = 0.5 * (lo + hi)
        rmid = resid(mid)
        if abs(rmid) <= tolerance:
            return mid
        if rmid < 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 4.0 * np.finfo(float).eps * max(1.0, abs(mid)):
            break
    return mid


def _solve_scalar_batch(drift, t, b, dt, cfg: ImplicitSolverConfig):
    """Elementwise Newton for x - drift(x,t)*dt - b = 0 on arrays of any shape.

    Converged lanes freeze, so each lane's iterate sequence depends only on
    its own values; results are independent of how lanes are batched.
    Returns (x, converged_mask).
    """
    b = np.asarray(b, dtype=float)
    x = b.copy()

    def residual(xv):
        return xv - dt * np.asarray(drift(xv, t), dtype=float) - b

    r = residual(x)
    active = np.abs(r) > cfg.residual_tolerance
    for _ in range(cfg.max_iterations):
        if not np.any(active):
            break
        h = np.maximum(1e-7, 1e-7 * np.abs(x))
        fp = np.asarray(drift(x + h, t), dtype=float)
        fm = np.asarray(drift(x - h, t), dtype=float)
        deriv = 1.0 - dt * (fp - fm) / (2.0 * h)
        deriv = np.where(np.abs(deriv) < 1e-300, 1.0, deriv)
        step = np.where(active, r / deriv, 0.0)
        xa = x - step
        ra = residual(xa)
        worse = active & ~(np.abs(ra) <= np.abs(r))  # catches NaN too
        for _ in range(8):
            if not np.any(worse):
                break
            step = np.where(worse, 0.5 * step, step)
            xa = np.where(worse, x - step, xa)
            ra = np.where(worse, residual(xa), ra)
            worse = worse & ~(np.abs(ra) <= np.abs(r))
        x = np.where(active, xa, x)
        r = np.where(active, ra, r)
        active = np.abs(r) > cfg.residual_tolerance

    if np.any(active):
        flat_active = np.argwhere(active)
        if cfg.fallback == "bisection":
            for idx in flat_active:
                key = tuple(idx)
                try:
                    x[key] = bisect_root_scalar(
                        drift, t, float(b[key]), dt, tolerance=cfg.residual_tolerance
                    )
                except ImplicitSolveError:
                    pass
        else:
            x, _ = _damped_iteration(drift, t, b, dt, cfg, x0=x, mask=active, out=x)
        r = residual(x)
        active = np.abs(r) > cfg.residual_tolerance
    return x, ~active


def _damped_iteration(drift, t, b, dt, cfg, x0, mask, out, budget: int = 200):
    """Per-lane damped fixed-point iteration x <- x - lam * residual(x)."""
    b = np.asarray(b, dtype=float)
    x = np.array(x0, dtype=float)

    def residual(xv):
        return xv - dt * np.asarray(drift(xv, t), dtype=float) - b

    lam = np.where(mask, 1.0, 0.0)
    r = residual(x)
    for _ in range(budget):
        act = mask & (np.abs(r) > cfg.residual_tolerance)
        if not np.any(act):
            break
        xa = np.where(act, x - lam * r, x)
        ra = residual(xa)
        worse = act & ~(np.abs(ra) <= np.abs(r))
        lam = np.where(worse, 0.5 * lam, lam)
        keep = act & ~worse
        x = np.where(keep, xa, x)
        r = np.where(keep, ra, r)
    out = np.where(mask, x, out)
    return out, np.abs(residual(out)) <= cfg.residual_tolerance


def solve_implicit(
    problem: SdeProblem,
    t: float,
    b,
    dt: float,
    cfg: ImplicitSolverConfig = DEFAULT_SOLVER_CONFIG,
):
    """Solve x = f(x,t)*dt + b to |x - f(x,t)*dt - b| <= cfg.residual_tolerance.

    Newton from the initial guess x0 = b (the drift term is O(dt), so b is
    within O(dt) of the root), with backtracking and the configured fallback.
    Requires dt < 1/|Kbar|. Raises ImplicitSolveError with the best residual
    if the budget is exhausted.
    """
    if not (math.isfinite(dt) and dt > 0):
        raise ValueError(f"dt must be a positive real, got {dt}")
    _check_solver_dt(problem, dt)
    b_arr = np.asarray(b, dtype=float)
    if not np.all(np.isfinite(b_arr)):
        raise ValueError("b must be finite")

    if problem.dimension == 1:
        x, ok = _solve_scalar_batch(problem.drift, t, b_arr, dt, cfg)
        if not np.all(ok):
            r = x - dt * np.asarray(problem.drift(x, t), dtype=float) - b_arr
            worst = float(np.max(np.abs(r)))
            raise ImplicitSolveError(
                f"implicit solve did not reach tolerance {cfg.residual_tolerance} "
                f"(best residual {worst:.3e})",
                best_residual=worst,
                state=x,
            )
        return float(x) if np.ndim(b) == 0 else x

    x = b_arr.astype(float).copy()
    n = problem.dimension
    if x.shape != (n,):
        raise ValueError(f"b must have shape ({n},) for a {n}-dimensional problem")

    def residual(v):
        return v - dt * np.asarray(problem.drift(v, t), dtype=float) - b_arr

    r = residual(x)
    best_x, best_r = x, float(np.max(np.abs(r)))
    for _ in range(cfg.max_iterations):
        if np.max(np.abs(r)) <= cfg.residual_tolerance:
            return x
        jac = np.empty((n, n))
        for j in range(n):
            h = max(1e-7, 1e-7 * abs(x[j]))
            e = np.zeros(n)
            e[j] = h
            jac[:, j] = (residual(x + e) - residual(x - e)) / (2.0 * h)
        try:
            step = np.linalg.solve(jac, r)
        except np.linalg.LinAlgError:
            step = r
        for _ in range(30):
            xa = x - step
            ra = residual(xa)
            if np.all(np.isfinite(ra)) and np.max(np.abs(ra)) <= np.max(np.abs(r)):
                break
            step = 0.5 * step
        x, r = xa, ra
        rmax = float(np.max(np.abs(r)))
        if rmax < best_r:
            best_x, best_r = x, rmax

    if cfg.fallback == "damped-iteration":
        x, ok = _damped_iteration(
            problem.drift, t, b_arr, dt, cfg, x0=best_x,
            mask=np.ones_like(b_arr, dtype=bool), out=best_x.copy(),
        )
        if np.all(ok):
            return x
        best_r = float(np.max(np.abs(residual(x))))
        best_x = x
    raise ImplicitSolveError(
        f"implicit solve did not reach tolerance {cfg.residual_tolerance} "
        f"(best residual {best_r:.3e})",
        best_residual=best_r,
        state=best_x,
    )


def bem_step(
    problem: SdeProblem,
    z,
    ctx: StepContext,
    cfg: ImplicitSolverConfig = DEFAULT_SOLVER_CONFIG,
    strict_dt: bool = False,
):
    """Semi-implicit step: drift at the unknown next state, noise at the current one.

    Solves x = z + g(z, k dt) dB + f(x, (k+1) dt) dt. dt >= 1/K1 leaves the
    polynomial decay guarantee but not well-posedness, so it is a warning by
    default and an error under strict_dt.
    """
    if ctx.dt >= 1.0 / problem.k1:
        msg = (
            f"dt={ctx.dt} is not below 1/K1 = {1.0 / problem.k1}; the polynomial "
            f"decay guarantee does not cover this step size"
        )
        if strict_dt:
            raise ValueError(msg)
        warnings.warn(msg, stacklevel=2)
    z_arr = np.asarray(z, dtype=float)
    g = np.asarray(problem.diffusion(z_arr, ctx.t), dtype=float)
    b = z_arr + g * ctx.db
    if not np.all(np.isfinite(b)):
        raise StepError(f"non-finite diffusion output at k={ctx.k}, t={ctx.t}", state=z_arr)
    out = solve_implicit(problem, (ctx.k + 1) * ctx.dt, b, ctx.dt, cfg)
    if np.ndim(z) == 0 and np.ndim(out) > 0:
        return float(out)
    return out
