"""Decay-rate estimation, theoretical decay envelopes, and divergence bounds.

The decay claims all have the shape

    limsup  log E|state|^2 / log(k dt)  <=  -(2 K1 - 1)

so the empirical side is a log-log slope fit over the tail of a moment
series, and the theoretical side is an explicit envelope

    explicit scheme:      (k dt + 1)^(-2K1+1) (m0 + C^2 C1^{2K1}),  C1 = 1 + dt
    semi-implicit scheme: ((k+1) dt + 1)^(-2K1+1) (m0 + C^2 C2^{2K1}),
                          C2 = 1 + (1+2K1) dt

C1 and C2 are the exact suprema of the step ratios they bound (attained at
r = 0), which gives the tightest implementable constants. The gamma-ratio
inequalities that the envelopes rest on are exposed as log-margin functions
so they can be verified on grids, and the cubic counterexample's divergence
recursion is included with its induction invariant.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .ensemble import MomentSeries
from .gamma import log_gamma_ratio

__all__ = [
    "DecayEstimate",
    "estimate_decay_exponent",
    "em_envelope",
    "bem_envelope",
    "RecurrenceViolation",
    "RecurrenceCheckResult",
    "em_recurrence_bound",
    "LowerBoundSequence",
    "counterexample_lower_bound",
    "em_initial_term_log_margin",
    "em_sum_term_log_margin",
    "bem_initial_term_log_margin",
    "bem_sum_term_log_margin",
    "BoundFamilyResult",
    "ProofBoundReport",
    "verify_proof_bounds",
]


@dataclass(frozen=True)
class DecayEstimate:
    """Fitted log-log decay slope of a moment series tail."""

    slope: float
    slope_std_error: float
    fit_window: tuple[float, float]
    theoretical_bound: float
    conforms: bool
    n_points: int

    def to_json_dict(self) -> dict:
        return {
            "slope": self.slope,
            "slope_std_error": self.slope_std_error,
            "fit_window": list(self.fit_window),
            "theoretical_bound": self.theoretical_bound,
            "conforms": self.conforms,
            "n_points": self.n_points,
        }


def estimate_decay_exponent(
    series: MomentSeries,
    window_fraction: float = 0.5,
    *,
    k1: float,
    tolerance: float = 0.15,
) -> DecayEstimate:
    """OLS slope of log(mean_square) against log(1+t) over the tail window.

    The window is the final ``window_fraction`` of the log-time axis; decay
    statements are asymptotic and early transients bias slopes upward, so the
    default is the last half. Checkpoints with mean_square == 0 are excluded
    with a warning; blown-up paths inside the window make the fit meaningless
    and raise. Conformance compares slope against -(2 k1 - 1) + tolerance.
    """
    if not 0.0 < window_fraction < 1.0:
        raise ValueError(f"window_fraction must be in (0, 1), got {window_fraction}")
    t = np.asarray(series.time, dtype=float)
    m2 = np.asarray(series.mean_square, dtype=float)
    if len(t) < 2:
        raise ValueError("series too short to fit")
    log_time = np.log1p(t)
    lo = log_time[-1] - window_fraction * (log_time[-1] - log_time[0])
    in_window = log_time >= lo
    if np.any(np.asarray(series.blown_up)[in_window] > 0):
        raise ValueError("blown-up paths inside the fit window; slope undefined")
    zero = in_window & ~(m2 > 0.0)
    if np.any(zero):
        warnings.warn(
            f"excluding {int(np.sum(zero))} checkpoints with mean_square == 0 from the fit",
            stacklevel=2,
        )
    usable = in_window & (m2 > 0.0)
    n = int(np.sum(usable))
    if n < 10:
        raise ValueError(f"need >= 10 usable checkpoints in the fit window, have {n}")
    x = log_time[usable]
    y = np.log(m2[usable])
    x_mean = float(np.mean(x))
    y_mean = float(np.mean(y))
    sxx = float(np.sum((x - x_mean) ** 2))
    slope = float(np.sum((x - x_mean) * (y - y_mean))) / sxx
    intercept = y_mean - slope * x_mean
    rss = float(np.sum((y - (slope * x + intercept)) ** 2))
    se = math.sqrt(max(rss, 0.0) / (n - 2) / sxx)
    bound = -(2.0 * k1 - 1.0)
    t_used = t[usable]
    return DecayEstimate(
        slope=slope,
        slope_std_error=se,
        fit_window=(float(t_used[0]), float(t_used[-1])),
        theoretical_bound=bound,
        conforms=bool(slope <= bound + tolerance),
        n_points=n,
    )


def _validate_envelope_args(dt, c, m0):
    if not (math.isfinite(dt) and dt > 0):
        raise ValueError(f"dt must be a positive real, got {dt}")
    if not (math.isfinite(c) and c >= 0):  # c = 0: pure power decay of m0
        raise ValueError(f"c must be nonnegative, got {c}")
    if not (math.isfinite(m0) and m0 >= 0):
        raise ValueError(f"m0 must be nonnegative, got {m0}")


def em_envelope(k, dt: float, k1: float, c: float, m0: float):
    """Second-moment envelope (k dt + 1)^(-2K1+1) (m0 + C^2 (1+dt)^{2K1}).

    Valid for the explicit scheme under K1 >= 1 and dt < 1/(2 + K1).
    Vectorized over k.
    """
    _validate_envelope_args(dt, c, m0)
    if not k1 >= 1.0:
        raise ValueError(f"the explicit-scheme envelope requires K1 >= 1, got {k1}")
    if not dt < 1.0 / (2.0 + k1):
        raise ValueError(f"need dt < 1/(2+K1) = {1.0 / (2.0 + k1)}, got {dt}")
    k_arr = np.asarray(k)
    if np.any(k_arr < 0):
        raise ValueError("k must be nonnegative")
    c1 = 1.0 + dt
    out = (k_arr * dt + 1.0) ** (-2.0 * k1 + 1.0) * (m0 + c**2 * c1 ** (2.0 * k1))
    return float(out) if np.ndim(k) == 0 else out


def bem_envelope(k, dt: float, k1: float, c: float, m0: float, kbar: float | None = None):
    """Second-moment envelope ((k+1) dt + 1)^(-2K1+1) (m0 + C^2 C2^{2K1}).

    C2 = 1 + (1+2K1) dt. Valid for the semi-implicit scheme under K1 > 0.5
    and dt < 1/K1 (and dt < 1/|Kbar| when kbar is supplied). Vectorized
    over k.
    """
    _validate_envelope_args(dt, c, m0)
    if not k1 > 0.5:
        raise ValueError(f"the semi-implicit envelope requires K1 > 0.5, got {k1}")
    if not dt < 1.0 / k1:
        raise ValueError(f"need dt < 1/K1 = {1.0 / k1}, got {dt}")
    if kbar is not None and kbar != 0.0 and not dt < 1.0 / abs(kbar):
        raise ValueError(f"need dt < 1/|Kbar| = {1.0 / abs(kbar)}, got {dt}")
    k_arr = np.asarray(k)
    if np.any(k_arr < 0):
        raise ValueError("k must be nonnegative")
    c2 = 1.0 + (1.0 + 2.0 * k1) * dt
    out = ((k_arr + 1.0) * dt + 1.0) ** (-2.0 * k1 + 1.0) * (m0 + c**2 * c2 ** (2.0 * k1))
    return float(out) if np.ndim(k) == 0 else out


@dataclass(frozen=True)
class RecurrenceViolation:
    k_from: int
    k_to: int
    observed: float
    bound: float
    allowance: float


@dataclass(frozen=True)
class RecurrenceCheckResult:
    violations: tuple[RecurrenceViolation, ...]
    n_checked: int
    n_skipped: int

    @property
    def passed(self) -> bool:
        return not self.violations


def em_recurrence_bound(
    series: MomentSeries,
    k1: float,
    c: float,
    dt: float | None = None,
    n_sigma: float = 4.0,
) -> RecurrenceCheckResult:
    """Check the one-step moment recurrence between consecutive checkpoints.

    For unit-spaced checkpoint pairs, tests

        m2[k+1] <= (1 - K1 dt/(1+k dt))^2 m2[k] + C^2 (1+k dt)^{-2K1} dt

    within n_sigma combined standard errors. Non-consecutive pairs, and pairs
    touched by blow-ups, cannot be checked and are counted as skipped.
    Requires K1 dt < 1 so the contraction factor stays positive.
    """
    if dt is None:
        if series.config is None:
            raise ValueError("series has no config; pass dt explicitly")
        dt = series.config.dt
    if not k1 * dt < 1.0:
        raise ValueError(f"need K1*dt < 1, got K1*dt = {k1 * dt}")
    ks = np.asarray(series.step_index, dtype=int)
    m2 = np.asarray(series.mean_square, dtype=float)
    se = np.asarray(series.std_error, dtype=float)
    blown = np.asarray(series.blown_up, dtype=int)
    violations = []
    checked = skipped = 0
    for i in range(len(ks) - 1):
        if ks[i + 1] != ks[i] + 1 or blown[i] > 0 or blown[i + 1] > 0:
            skipped += 1
            continue
        k = int(ks[i])
        contraction = (1.0 - k1 * dt / (1.0 + k * dt)) ** 2
        bound = contraction * m2[i] + c**2 * (1.0 + k * dt) ** (-2.0 * k1) * dt
        allowance = n_sigma * math.hypot(se[i + 1], contraction * se[i])
        checked += 1
        if m2[i + 1] > bound + allowance:
            violations.append(
                RecurrenceViolation(
                    k_from=k, k_to=k + 1, observed=float(m2[i + 1]),
                    bound=float(bound), allowance=float(allowance),
                )
            )
    return RecurrenceCheckResult(
        violations=tuple(violations), n_checked=checked, n_skipped=skipped
    )


@dataclass(frozen=True)
class LowerBoundSequence:
    """Divergence lower bounds b_k for explicit stepping on the cubic counterexample.

    b_1 = 3 ((1+dt)/dt)^0.5 and b_{k+1} = (dt/(1+k dt)) b_k^3 - b_k - 1.
    values[i] is b_{i+1}; diverged_at is the k at which the recursion left
    double range (None if it stayed finite through k_max). The induction
    invariant is b_k >= ((1+k dt)/dt)^0.5 (k+2).
    """

    dt: float
    values: np.ndarray
    diverged_at: int | None

    def invariant_margins(self) -> np.ndarray:
        k = np.arange(1, len(self.values) + 1, dtype=float)
        required = np.sqrt((1.0 + k * self.dt) / self.dt) * (k + 2.0)
        return self.values - required

    def first_step_exceeding(self, cap: float) -> int | None:
        above = np.flatnonzero(self.values > cap)
        if above.size:
            return int(above[0]) + 1
        return self.diverged_at


def counterexample_lower_bound(dt: float, k_max: int) -> LowerBoundSequence:
    """Run the divergence recursion for k = 1..k_max (or until overflow)."""
    if not (math.isfinite(dt) and 0.0 < dt < 0.5):
        raise ValueError(f"dt must lie in (0, 0.5), got {dt}")
    if isinstance(k_max, bool) or not isinstance(k_max, (int, np.integer)) or k_max < 1:
        raise ValueError(f"k_max must be a positive integer, got {k_max!r}")
    b = 3.0 * math.sqrt((1.0 + dt) / dt)
    values = [b]
    diverged_at = None
    for k in range(1, k_max):
        try:
            nxt = (dt / (1.0 + k * dt)) * b**3 - b - 1.0
        except OverflowError:
            nxt = math.inf
        if not math.isfinite(nxt):
            diverged_at = k + 1
            break
        values.append(nxt)
        b = nxt
    return LowerBoundSequence(dt=dt, values=np.asarray(values), diverged_at=diverged_at)


# ---------------------------------------------------------------------------
# gamma-ratio inequalities behind the envelopes (log-space margins; an
# inequality holds at a point iff its margin is >= 0 up to slack)


def _dinv(dt):
    if np.any(np.asarray(dt) <= 0):
        raise ValueError("dt must be positive")
    return 1.0 / dt


def em_initial_term_log_margin(k, dt, k1):
    """Margin of Gamma(k+D-K1)^2 Gamma(D)^2 / (Gamma(k+D)^2 Gamma(D-K1)^2)
    <= ((k-K1) dt + 1)^{-2K1}, with D = 1/dt. Needs D > K1 and (k-K1) dt + 1 > 0."""
    k = np.asarray(k, dtype=float)
    d = _dinv(dt)
    lhs = 2.0 * log_gamma_ratio(d - k1, k1) - 2.0 * log_gamma_ratio(k + d - k1, k1)
    rhs = -2.0 * k1 * np.log((k - k1) * dt + 1.0)
    return rhs - lhs


def em_sum_term_log_margin(k, r, dt, k1):
    """Margin of Gamma(k+D-K1)^2 Gamma(r+1+D)^2 / (Gamma(k+D)^2 Gamma(r+1+D-K1)^2)
    <= ((k-K1) dt + 1)^{-2K1} ((r+1) dt + 1)^{2K1}."""
    k = np.asarray(k, dtype=float)
    r = np.asarray(r, dtype=float)
    d = _dinv(dt)
    lhs = 2.0 * log_gamma_ratio(r + 1.0 + d - k1, k1) - 2.0 * log_gamma_ratio(k + d - k1, k1)
    rhs = -2.0 * k1 * np.log((k - k1) * dt + 1.0) + 2.0 * k1 * np.log((r + 1.0) * dt + 1.0)
    return rhs - lhs


def bem_initial_term_log_margin(k, dt, k1):
    """Margin of Gamma(k+1+D) Gamma(1+2K1+D) / (Gamma(k+1+D+2K1) Gamma(1+D))
    <= ((k+1) dt + 1)^{-2K1} ((1+2K1) dt + 1)^{2K1}."""
    k = np.asarray(k, dtype=float)
    d = _dinv(dt)
    lhs = log_gamma_ratio(1.0 + d, 2.0 * k1) - log_gamma_ratio(k + 1.0 + d, 2.0 * k1)
    rhs = -2.0 * k1 * np.log((k + 1.0) * dt + 1.0) + 2.0 * k1 * np.log((1.0 + 2.0 * k1) * dt + 1.0)
    return rhs - lhs


def bem_sum_term_log_margin(k, r, dt, k1):
    """Margin of Gamma(k+1+D) Gamma(r+1+D+2K1) / (Gamma(k+1+D+2K1) Gamma(r+1+D))
    <= ((k+1) dt + 1)^{-2K1} ((r+1+2K1) dt + 1)^{2K1}."""
    k = np.asarray(k, dtype=float)
    r = np.asarray(r, dtype=float)
    d = _dinv(dt)
    lhs = log_gamma_ratio(r + 1.0 + d, 2.0 * k1) - log_gamma_ratio(k + 1.0 + d, 2.0 * k1)
    rhs = -2.0 * k1 * np.log((k + 1.0) * dt + 1.0) + 2.0 * k1 * np.log((r + 1.0 + 2.0 * k1) * dt + 1.0)
    return rhs - lhs


@dataclass(frozen=True)
class BoundFamilyResult:
    name: str
    worst_margin: float
    worst_point: tuple
    n_points: int


@dataclass(frozen=True)
class ProofBoundReport:
    families: tuple[BoundFamilyResult, ...]
    slack: float

    @property
    def all_passed(self) -> bool:
        return all(f.worst_margin >= -self.slack for f in self.families)

    def summary(self) -> str:
        lines = ["gamma-ratio bound verification (log-space margins, >= 0 expected):"]
        for f in self.families:
            status = "pass" if f.worst_margin >= -self.slack else "FAIL"
            lines.append(
                f"  {f.name:<24s} {status}  worst margin {f.worst_margin:+.3e} "
                f"at {f.worst_point}  ({f.n_points} points)"
            )
        return "\n".join(lines)


def verify_proof_bounds(
    k_max: int = 200,
    dts=(0.05, 0.1, 0.2),
    k1s_em=(1.0, 1.5, 2.0, 2.7, 3.0),
    k1s_bem=(1.0, 1.5, 2.0, 2.7, 3.0),
    slack: float = 1e-12,
) -> ProofBoundReport:
    """Evaluate all four inequality families on grids k in {2..k_max}, r < k.

    The explicit-scheme families require K1 >= 1; the semi-implicit ones only
    K1 > 0.5.
    """
    ks = np.arange(2, k_max + 1)
    pair_k = np.repeat(ks, ks)  # each k paired with r = 0..k-1
    pair_r = np.concatenate([np.arange(k) for k in ks])

    single = (ks,)
    paired = (pair_k, pair_r)
    families = (
        ("em-initial-term", em_initial_term_log_margin, single, k1s_em),
        ("em-sum-term", em_sum_term_log_margin, paired, k1s_em),
        ("bem-initial-term", bem_initial_term_log_margin, single, k1s_bem),
        ("bem-sum-term", bem_sum_term_log_margin, paired, k1s_bem),
    )
    results = []
    for name, margin_fn, index_arrays, k1s in families:
        worst_margin, worst_point, total = np.inf, None, 0
        for dt in dts:
            for k1 in k1s:
                m = margin_fn(*index_arrays, dt, k1)
                total += int(m.size)
                i = int(np.argmin(m))
                if m[i] < worst_margin:
                    worst_margin = float(m[i])
                    worst_point = tuple(int(arr[i]) for arr in index_arrays) + (dt, k1)
        results.append(
            BoundFamilyResult(
                name=name, worst_margin=worst_margin, worst_point=worst_point, n_points=total
            )
        )
    return ProofBoundReport(families=tuple(results), slack=slack)
