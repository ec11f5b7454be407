"""SDE problem definitions and numerical audits of their structural conditions.

A problem is dx = f(x,t) dt + g(x,t) dB with scalar driving noise. The decay
machinery relies on three pointwise conditions parameterized by constants
K1 > 0 and C > 0,

    |f(x,t)|   <= K1 (1+t)^-1 |x|          (drift linear growth)
    <x,f(x,t)> <= -K1 (1+t)^-1 |x|^2       (drift one-sided decay)
    |g(x,t)|   <= C (1+t)^-K1              (noise envelope)

plus a one-sided Lipschitz bound with constant Kbar. User problems are black
boxes, so the audit samples state/time grids and reports worst margins; a
pass is sampling evidence, never a proof.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "SdeProblem",
    "ConditionCheck",
    "ConditionAuditReport",
    "audit_conditions",
    "one_sided_decay_max_k1",
    "linear_example",
    "cubic_counterexample",
    "bem_example",
    "exact_linear_mean_square",
    "default_state_grid",
    "DEFAULT_AUDIT_TIMES",
    "PROBLEM_BUILDERS",
    "DEFAULT_INITIAL_VALUES",
    "problem_from_label",
    "problem_from_config",
    "load_problem_config",
]

AUDIT_NOTE = "sampled evidence only; a pass is not a proof"

# float slack for margins that are identically zero in exact arithmetic
_MARGIN_RTOL = 1e-12


@dataclass(frozen=True)
class SdeProblem:
    """Immutable SDE problem dx = f(x,t) dt + g(x,t) dB.

    drift and diffusion must be pure, accept (state, time) with state of shape
    (dimension,), and broadcast elementwise over leading axes (the ensemble
    engine feeds them (paths, dimension) blocks). diffusion returns the single
    noise column. k1, c, kbar are the condition constants the problem claims;
    claims are checked by :func:`audit_conditions`, not trusted.
    """

    dimension: int
    drift: Callable[[np.ndarray, float], np.ndarray]
    diffusion: Callable[[np.ndarray, float], np.ndarray]
    k1: float
    c: float
    kbar: float
    satisfies_linear_growth: bool
    label: str

    def __post_init__(self):
        if not isinstance(self.dimension, (int, np.integer)) or self.dimension < 1:
            raise ValueError(f"dimension must be a positive integer, got {self.dimension}")
        for name in ("k1", "c"):
            v = float(getattr(self, name))
            if not math.isfinite(v) or v <= 0:
                raise ValueError(f"{name} must be a positive real, got {v}")
            object.__setattr__(self, name, v)
        kbar = float(self.kbar)
        if not math.isfinite(kbar):
            raise ValueError(f"kbar must be finite, got {kbar}")
        object.__setattr__(self, "kbar", kbar)
        object.__setattr__(self, "dimension", int(self.dimension))


# ---------------------------------------------------------------------------
# built-in problems


def _linear_drift(x, t):
    return -x / (1.0 + t)


def _linear_diffusion(x, t):
    return np.zeros_like(np.asarray(x, dtype=float)) + 1.0 / (1.0 + t)


def linear_example() -> SdeProblem:
    """dx = -x/(1+t) dt + 1/(1+t) dB. All three growth conditions hold with K1 = 1, C = 1."""
    return SdeProblem(
        dimension=1,
        drift=_linear_drift,
        diffusion=_linear_diffusion,
        k1=1.0,
        c=1.0,
        kbar=-1.0,
        satisfies_linear_growth=True,
        label="linear",
    )


def _cubic_drift(x, t):
    return (-3.0 * x - x**3) / (1.0 + t)


def _cubic_diffusion(x, t):
    return np.zeros_like(np.asarray(x, dtype=float)) + (1.0 + t) ** -3


def cubic_counterexample() -> SdeProblem:
    """dx = (-3x - x^3)/(1+t) dt + (1+t)^-3 dB.

    One-sided decay and the noise envelope hold with K1 = 3, C = 1, but the
    drift grows cubically, so the linear-growth condition fails and explicit
    stepping blows up.
    """
    return SdeProblem(
        dimension=1,
        drift=_cubic_drift,
        diffusion=_cubic_diffusion,
        k1=3.0,
        c=1.0,
        kbar=-3.0,
        satisfies_linear_growth=False,
        label="counterexample",
    )


def _bem_drift(x, t):
    return (-3.0 * x - x**3) / (1.0 + t) ** 2


def _bem_diffusion(x, t):
    return 5.0 * np.sin(x) / (1.0 + t) ** 4


def bem_example() -> SdeProblem:
    """dx = (-3x - x^3)/(1+t)^2 dt + 5 sin(x)/(1+t)^4 dB.

    Ships with the claimed constants K1 = 3, C = 5. The (1+t)^-2 damping on
    the drift is weaker than the one-sided decay condition demands, so the
    claim does not survive the audit; run :func:`audit_conditions` /
    :func:`one_sided_decay_max_k1` before trusting k1 in any envelope. Kbar = 0 is
    the only valid one-sided Lipschitz constant of the (1+t)^-1 form here
    (the drift is monotone non-increasing; any negative constant fails at
    large t), so the implicit solve is well posed at every step size.
    """
    return SdeProblem(
        dimension=1,
        drift=_bem_drift,
        diffusion=_bem_diffusion,
        k1=3.0,
        c=5.0,
        kbar=0.0,
        satisfies_linear_growth=False,
        label="bem-example",
    )


def exact_linear_mean_square(x0: float, t) -> float:
    """Closed-form E|x(t)|^2 = (x0^2 + t)/(1+t)^2 for the linear problem.

    The integrating factor (1+t) gives d[(1+t)x] = dB, so
    x(t) = (x0 + B(t))/(1+t) and the second moment follows by Ito isometry.
    """
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0) or not np.all(np.isfinite(t_arr)):
        raise ValueError(f"t must be nonnegative and finite, got {t!r}")
    out = (float(x0) ** 2 + t_arr) / (1.0 + t_arr) ** 2
    return float(out) if np.ndim(t) == 0 else out


# ---------------------------------------------------------------------------
# condition audit

DEFAULT_AUDIT_TIMES = (0.0, 0.1, 1.0, 10.0, 100.0, 1e4)
_GRID_POINTS_PER_AXIS = 33
_GRID_MAX_AXES = 3


def default_state_grid(dimension: int, half_width: float = 100.0) -> np.ndarray:
    """Product grid of states, 33 points per axis on [-hw, hw], at most 3 axes."""
    axes = min(dimension, _GRID_MAX_AXES)
    pts = np.linspace(-half_width, half_width, _GRID_POINTS_PER_AXIS)
    mesh = np.meshgrid(*([pts] * axes), indexing="ij")
    grid = np.stack([m.ravel() for m in mesh], axis=-1)
    if dimension > axes:
        pad = np.zeros((grid.shape[0], dimension - axes))
        grid = np.hstack([grid, pad])
    return grid


@dataclass(frozen=True)
class ConditionCheck:
    name: str
    worst_margin: float
    worst_point: tuple
    samples: int
    passed: bool


@dataclass(frozen=True)
class ConditionAuditReport:
    """Worst sampled margins for the four structural conditions.

    A condition passes iff its margin (LHS - RHS of the inequality) is <= 0,
    up to a relative floating-point slack, at every sampled point. Margins are
    raw. ``note`` spells out that this is evidence, not proof.
    """

    problem_label: str
    linear_growth_f: ConditionCheck
    one_sided_f: ConditionCheck
    linear_growth_g: ConditionCheck
    one_sided_lipschitz: ConditionCheck
    note: str = AUDIT_NOTE

    def checks(self):
        return (
            self.linear_growth_f,
            self.one_sided_f,
            self.linear_growth_g,
            self.one_sided_lipschitz,
        )

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks())

    def summary(self) -> str:
        lines = [f"condition audit for '{self.problem_label}' ({self.note}):"]
        for c in self.checks():
            status = "pass" if c.passed else "FAIL"
            lines.append(
                f"  {c.name:<22s} {status}  worst margin {c.worst_margin:+.6e} "
                f"at {c.worst_point}  ({c.samples} samples)"
            )
        return "\n".join(lines)


def _point(vec) -> tuple:
    return tuple(float(v) for v in np.atleast_1d(vec))


def _eval_checked(fn, x, t, what, label):
    out = np.asarray(fn(x, t), dtype=float)
    if not np.all(np.isfinite(out)):
        bad = np.argwhere(~np.isfinite(out))
        idx = tuple(bad[0]) if bad.size else ()
        state = np.asarray(x)[idx[:-1] if len(idx) > 1 else idx]
        raise ValueError(
            f"{what} of '{label}' returned a non-finite value at t={t}, "
            f"state={_point(state)}"
        )
    return out


def _worst(samples):
    """samples: iterable of (margin, slack, point) -> ConditionCheck pieces."""
    worst_m, worst_pt, ok, n = -np.inf, None, True, 0
    for margin, slack, point in samples:
        n += 1
        if margin > slack:
            ok = False
        if margin > worst_m:
            worst_m, worst_pt = margin, point
    return worst_m, worst_pt, ok, n


def audit_conditions(
    problem: SdeProblem,
    states: np.ndarray | None = None,
    times=None,
    pair_samples: int = 1000,
    seed: int = 0,
) -> ConditionAuditReport:
    """Sample the four conditions over grids and report worst margins.

    states: (m, dimension) array, default :func:`default_state_grid`.
    times: iterable of t >= 0, default DEFAULT_AUDIT_TIMES. The one-sided
    Lipschitz condition quantifies over state pairs, so it is sampled with
    ``pair_samples`` random pairs per time from a seeded generator.
    """
    if states is None:
        states = default_state_grid(problem.dimension)
    states = np.atleast_2d(np.asarray(states, dtype=float))
    if states.shape[1] != problem.dimension:
        raise ValueError(
            f"states must have {problem.dimension} columns, got {states.shape[1]}"
        )
    times = DEFAULT_AUDIT_TIMES if times is None else tuple(float(t) for t in times)
    if len(times) == 0 or len(states) == 0:
        raise ValueError("need non-empty state and time samples")
    if any(t < 0 or not math.isfinite(t) for t in times):
        raise ValueError(f"times must be finite and >= 0, got {times}")

    k1, c = problem.k1, problem.c
    lin_f, one_f, lin_g = [], [], []
    for t in times:
        f = np.broadcast_to(
            _eval_checked(problem.drift, states, t, "drift", problem.label), states.shape
        )
        g = np.broadcast_to(
            _eval_checked(problem.diffusion, states, t, "diffusion", problem.label),
            states.shape,
        )
        xn = np.linalg.norm(states, axis=1)
        fn = np.linalg.norm(f, axis=1)
        gn = np.linalg.norm(g, axis=1)
        xf = np.einsum("ij,ij->i", states, f)

        rhs = k1 * xn / (1.0 + t)
        for i in range(len(states)):
            slack = _MARGIN_RTOL * max(fn[i], rhs[i], 1.0)
            lin_f.append((fn[i] - rhs[i], slack, (t, _point(states[i]))))
        rhs = -k1 * xn**2 / (1.0 + t)
        for i in range(len(states)):
            slack = _MARGIN_RTOL * max(abs(xf[i]), abs(rhs[i]), 1.0)
            one_f.append((xf[i] - rhs[i], slack, (t, _point(states[i]))))
        rhs_g = c * (1.0 + t) ** (-k1)
        for i in range(len(states)):
            slack = _MARGIN_RTOL * max(gn[i], rhs_g, 1.0)
            lin_g.append((gn[i] - rhs_g, slack, (t, _point(states[i]))))

    rng = np.random.default_rng(seed)
    half_width = float(np.max(np.abs(states))) or 1.0
    osl = []
    for t in times:
        xs = rng.uniform(-half_width, half_width, size=(pair_samples, problem.dimension))
        ys = rng.uniform(-half_width, half_width, size=(pair_samples, problem.dimension))
        fx = _eval_checked(problem.drift, xs, t, "drift", problem.label)
        fy = _eval_checked(problem.drift, ys, t, "drift", problem.label)
        d = xs - ys
        lhs = np.einsum("ij,ij->i", d, fx - fy)
        rhs = problem.kbar * np.einsum("ij,ij->i", d, d) / (1.0 + t)
        for i in range(pair_samples):
            slack = _MARGIN_RTOL * max(abs(lhs[i]), abs(rhs[i]), 1.0)
            osl.append((lhs[i] - rhs[i], slack, (t, _point(xs[i]), _point(ys[i]))))

    def check(name, samples):
        worst_m, worst_pt, ok, n = _worst(samples)
        return ConditionCheck(
            name=name, worst_margin=worst_m, worst_point=worst_pt, samples=n, passed=ok
        )

    return ConditionAuditReport(
        problem_label=problem.label,
        linear_growth_f=check("drift linear growth", lin_f),
        one_sided_f=check("drift one-sided decay", one_f),
        linear_growth_g=check("noise envelope", lin_g),
        one_sided_lipschitz=check("one-sided Lipschitz", osl),
    )


def one_sided_decay_max_k1(
    problem: SdeProblem,
    states: np.ndarray | None = None,
    times=None,
) -> float:
    """Largest K1 for which the one-sided decay condition holds on the grid.

    Returns min over sampled points with |x| > 0 of -<x, f(x,t)> (1+t)/|x|^2,
    clipped at 0 when even that fails. This is the audited K1: what the data
    supports, as opposed to what the problem claims.
    """
    if states is None:
        states = default_state_grid(problem.dimension)
    states = np.atleast_2d(np.asarray(states, dtype=float))
    times = DEFAULT_AUDIT_TIMES if times is None else tuple(float(t) for t in times)
    best = np.inf
    for t in times:
        f = _eval_checked(problem.drift, states, t, "drift", problem.label)
        xn2 = np.einsum("ij,ij->i", states, states)
        xf = np.einsum("ij,ij->i", states, f)
        nz = xn2 > 0.0
        if np.any(nz):
            best = min(best, float(np.min(-xf[nz] * (1.0 + t) / xn2[nz])))
    return max(best, 0.0)


# ---------------------------------------------------------------------------
# registry and JSON config loading

PROBLEM_BUILDERS = {
    "linear": linear_example,
    "counterexample": cubic_counterexample,
    "bem-example": bem_example,
}

DEFAULT_INITIAL_VALUES = {
    # counterexample default sits inside the explicit scheme's instability
    # region at t=0 so the blow-up is witnessed at desk scale
    "linear": 1.0,
    "counterexample": 5.0,
    "bem-example": 2.0,
}


def problem_from_label(label: str, k1=None, c=None) -> SdeProblem:
    """Built-in problem by label, optionally overriding the claimed K1 / C."""
    try:
        problem = PROBLEM_BUILDERS[label]()
    except KeyError:
        known = ", ".join(sorted(PROBLEM_BUILDERS))
        raise ValueError(f"unknown problem label {label!r}; known: {known}") from None
    overrides = {}
    if k1 is not None:
        overrides["k1"] = float(k1)
    if c is not None:
        overrides["c"] = float(c)
    if overrides:
        problem = dataclasses.replace(problem, **overrides)
    return problem


def problem_from_config(config: dict) -> tuple[SdeProblem, np.ndarray]:
    """Build (problem, initial_value) from a mapping.

    Recognized keys: problem (label, required), k1, c, initial_value.
    """
    if "problem" not in config:
        raise ValueError("config must contain a 'problem' label")
    unknown = set(config) - {"problem", "k1", "c", "initial_value"}
    if unknown:
        raise ValueError(f"unknown problem config keys: {sorted(unknown)}")
    label = config["problem"]
    problem = problem_from_label(label, k1=config.get("k1"), c=config.get("c"))
    x0 = config.get("initial_value", DEFAULT_INITIAL_VALUES[label])
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (problem.dimension,):
        raise ValueError(
            f"initial_value must have shape ({problem.dimension},), got {x0.shape}"
        )
    return problem, x0


def load_problem_config(path) -> tuple[SdeProblem, np.ndarray]:
    """Read a JSON problem config file, see :func:`problem_from_config`."""
    with open(path, "r", encoding="utf-8") as fh:
        config = json.load(fh)
    if not isinstance(config, dict):
        raise ValueError(f"problem config in {path} must be a JSON object")
    return problem_from_config(config)
