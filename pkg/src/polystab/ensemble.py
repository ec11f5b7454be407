"""Deterministic, parallelizable Monte Carlo moment estimation.

Reproducibility contract: the Brownian increment consumed by path p at step k
is a pure function of (seed, p, k), produced by a counter-based generator
(Philox keyed on (seed, path), counter = step, one block per step, inverse-CDF
normal). Path trajectories therefore never depend on evaluation order, worker
count, or how paths are chunked, and the checkpoint reduction is a fixed-order
pairwise sum over path-id-ordered arrays — two runs of the same SimConfig are
byte-identical at any worker count.

Paths whose state norm exceeds blow_up_cap are frozen and counted as blown up
from that checkpoint on; capped means plus blow-up fractions are how divergence
stays visible instead of being truncated away.
"""

from __future__ import annotations

import json
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.random import Philox
from scipy.special import ndtri

from .integrators import StepContext, DEFAULT_SOLVER_CONFIG, _solve_scalar_batch, em_step, solve_implicit, ImplicitSolveError
from .problems import SdeProblem

__all__ = [
    "SimConfig",
    "MomentSeries",
    "SCHEMES",
    "geometric_checkpoints",
    "brownian_increment",
    "simulate_ensemble",
    "CSV_HEADER",
]

SCHEMES = ("em", "bem")
CSV_HEADER = "k,t,mean_square,std_error,surviving,blown_up"

_MASK64 = (1 << 64) - 1
_CHUNK_PATHS = 256  # fixed: chunking must not depend on worker count
_STEP_BLOCK = 4096


def geometric_checkpoints(num_steps: int, count: int = 50) -> tuple[int, ...]:
    """~count checkpoint step indices, geometrically spaced, always 0 and num_steps."""
    if num_steps < 1:
        raise ValueError(f"num_steps must be >= 1, got {num_steps}")
    if num_steps <= count:
        return tuple(range(num_steps + 1))
    ks = np.unique(np.round(np.geomspace(1.0, num_steps, count - 1)).astype(int))
    return (0, *(int(k) for k in ks))


@dataclass(frozen=True)
class SimConfig:
    """Everything that determines an ensemble run (and nothing that doesn't)."""

    dt: float
    num_steps: int
    num_paths: int
    seed: int
    scheme: str
    initial_value: tuple[float, ...]
    checkpoints: tuple[int, ...] | None = None
    blow_up_cap: float = 1e12

    def __post_init__(self):
        dt = float(self.dt)
        if not (math.isfinite(dt) and dt > 0):
            raise ValueError(f"dt must be a positive real, got {self.dt!r}")
        object.__setattr__(self, "dt", dt)
        for name in ("num_steps", "num_paths"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        if isinstance(self.seed, bool) or not isinstance(self.seed, (int, np.integer)):
            raise ValueError(f"seed must be an integer, got {self.seed!r}")
        object.__setattr__(self, "seed", int(self.seed))
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        x0 = np.atleast_1d(np.asarray(self.initial_value, dtype=float))
        if x0.ndim != 1 or not np.all(np.isfinite(x0)):
            raise ValueError(f"initial_value must be a finite vector, got {self.initial_value!r}")
        object.__setattr__(self, "initial_value", tuple(float(v) for v in x0))
        if self.checkpoints is None:
            object.__setattr__(self, "checkpoints", geometric_checkpoints(self.num_steps))
        else:
            cps = tuple(int(k) for k in self.checkpoints)
            if any(isinstance(k, bool) for k in self.checkpoints):
                raise ValueError("checkpoints must be integers")
            if not cps:
                raise ValueError("checkpoints must be non-empty")
            if any(k < 0 or k > self.num_steps for k in cps):
                raise ValueError(f"checkpoints must lie in [0, {self.num_steps}]")
            if any(b <= a for a, b in zip(cps, cps[1:])):
                raise ValueError("checkpoints must be strictly increasing")
            object.__setattr__(self, "checkpoints", cps)
        cap = float(self.blow_up_cap)
        if not (math.isfinite(cap) and cap > float(np.linalg.norm(x0))):
            raise ValueError(
                f"blow_up_cap must be finite and exceed |initial_value|, got {self.blow_up_cap!r}"
            )
        object.__setattr__(self, "blow_up_cap", cap)

    def to_json_dict(self) -> dict:
        return {
            "dt": self.dt,
            "num_steps": self.num_steps,
            "num_paths": self.num_paths,
            "seed": self.seed,
            "scheme": self.scheme,
            "initial_value": list(self.initial_value),
            "checkpoints": list(self.checkpoints),
            "blow_up_cap": self.blow_up_cap,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "SimConfig":
        d = dict(d)
        d.pop("problem", None)
        kwargs = {
            "dt": d["dt"],
            "num_steps": d["num_steps"],
            "num_paths": d["num_paths"],
            "seed": d["seed"],
            "scheme": d["scheme"],
            "initial_value": tuple(d["initial_value"]),
        }
        if d.get("checkpoints") is not None:
            kwargs["checkpoints"] = tuple(d["checkpoints"])
        if d.get("blow_up_cap") is not None:
            kwargs["blow_up_cap"] = d["blow_up_cap"]
        return cls(**kwargs)


def _philox_key(seed: int, path_id: int) -> np.ndarray:
    return np.array([seed & _MASK64, path_id & _MASK64], dtype=np.uint64)


def _standard_normal_block(seed: int, path_id: int, step0: int, count: int) -> np.ndarray:
    """count standard normals for (seed, path_id, steps step0..step0+count-1).

    One Philox block per step (counter = step index), word 0 of the block
    mapped through the inverse normal CDF. Value at a given step never depends
    on which block of steps it was generated in.
    """
    bg = Philox(key=_philox_key(seed, path_id), counter=int(step0))
    raw = bg.random_raw(4 * count)[0::4]
    u = (raw >> np.uint64(11)).astype(np.float64) * 2.0**-53 + 2.0**-54
    return ndtri(u)


def brownian_increment(seed: int, path_id: int, step: int, dt: float) -> float:
    """The Brownian increment dB for (seed, path_id, step): N(0, dt), reproducible."""
    if isinstance(path_id, bool) or not isinstance(path_id, (int, np.integer)) or path_id < 0:
        raise ValueError(f"path_id must be a nonnegative integer, got {path_id!r}")
    if isinstance(step, bool) or not isinstance(step, (int, np.integer)) or step < 0:
        raise ValueError(f"step must be a nonnegative integer, got {step!r}")
    dt = float(dt)
    if not (math.isfinite(dt) and dt > 0):
        raise ValueError(f"dt must be a positive real, got {dt}")
    return float(_standard_normal_block(seed, path_id, step, 1)[0]) * math.sqrt(dt)


@dataclass(frozen=True)
class MomentSeries:
    """Per-checkpoint mean-square estimates with blow-up accounting.

    mean_square and std_error are computed over surviving (not blown-up)
    paths; they are NaN when nothing survives. capped_mean_abs is the mean
    over all paths of min(|state|, blow_up_cap), the finite-precision proxy
    for a diverging first moment. Checkpoints with blown_up > 0 should be
    read as lower bounds (see is_lower_bound).
    """

    problem_label: str
    scheme: str
    config: SimConfig | None
    step_index: np.ndarray
    time: np.ndarray
    mean_square: np.ndarray
    std_error: np.ndarray
    surviving: np.ndarray
    blown_up: np.ndarray
    capped_mean_abs: np.ndarray
    failed_paths: int = 0

    def __len__(self):
        return len(self.step_index)

    @property
    def is_lower_bound(self) -> np.ndarray:
        return self.blown_up > 0

    def to_csv_text(self) -> str:
        lines = [CSV_HEADER]
        for i in range(len(self)):
            lines.append(
                f"{int(self.step_index[i])},{float(self.time[i])!r},"
                f"{float(self.mean_square[i])!r},{float(self.std_error[i])!r},"
                f"{int(self.surviving[i])},{int(self.blown_up[i])}"
            )
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv_text(), encoding="utf-8")

    def config_json_dict(self) -> dict:
        if self.config is None:
            raise ValueError("series has no attached config")
        d = {"problem": self.problem_label}
        d.update(self.config.to_json_dict())
        return d

    def write_config_json(self, path) -> None:
        text = json.dumps(self.config_json_dict(), indent=2, sort_keys=True) + "\n"
        Path(path).write_text(text, encoding="utf-8")

    @classmethod
    def from_csv(cls, path) -> "MomentSeries":
        """Parse the six-column CSV back into a series (no config attached)."""
        text = Path(path).read_text(encoding="utf-8")
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or lines[0].strip() != CSV_HEADER:
            raise ValueError(f"{path}: line 1: expected header {CSV_HEADER!r}")
        rows = []
        for ln_no, ln in enumerate(lines[1:], start=2):
            parts = ln.split(",")
            if len(parts) != 6:
                raise ValueError(f"{path}: line {ln_no}: expected 6 fields, got {len(parts)}")
            try:
                rows.append(
                    (int(parts[0]), float(parts[1]), float(parts[2]), float(parts[3]),
                     int(parts[4]), int(parts[5]))
                )
            except ValueError as exc:
                raise ValueError(f"{path}: line {ln_no}: {exc}") from None
        cols = list(zip(*rows)) if rows else [[], [], [], [], [], []]
        return cls(
            problem_label="",
            scheme="",
            config=None,
            step_index=np.asarray(cols[0], dtype=int),
            time=np.asarray(cols[1], dtype=float),
            mean_square=np.asarray(cols[2], dtype=float),
            std_error=np.asarray(cols[3], dtype=float),
            surviving=np.asarray(cols[4], dtype=int),
            blown_up=np.asarray(cols[5], dtype=int),
            capped_mean_abs=np.full(len(rows), np.nan),
        )


def _resolve_workers(workers) -> int:
    if workers is None:
        env = os.environ.get("POLYSTAB_THREADS", "").strip()
        workers = int(env) if env else 1
    workers = int(workers)
    if workers < 1:
        raise ValueError(f"worker count must be >= 1, got {workers}")
    return workers


def _simulate_chunk(problem, config, path_lo, path_hi):
    """Evolve paths [path_lo, path_hi); return per-path checkpoint stats.

    Output arrays have shape (n_checkpoints, chunk). Everything in here is
    elementwise per path, so results do not depend on chunk boundaries.
    """
    dt = config.dt
    cap2 = config.blow_up_cap**2
    ckpts = config.checkpoints
    m = path_hi - path_lo
    n = problem.dimension
    x0 = np.asarray(config.initial_value, dtype=float)
    x = np.tile(x0, (m, 1))
    blown = np.zeros(m, dtype=bool)
    failed = np.zeros(m, dtype=bool)

    n_ck = len(ckpts)
    sq = np.empty((n_ck, m))
    blown_out = np.zeros((n_ck, m), dtype=bool)
    failed_out = np.zeros((n_ck, m), dtype=bool)
    capped = np.empty((n_ck, m))

    pos = 0

    def record(at):
        nonlocal pos
        norm2 = np.einsum("ij,ij->i", x, x)
        norm = np.sqrt(norm2)
        sq[at] = norm2
        blown_out[at] = blown
        failed_out[at] = failed
        capped[at] = np.minimum(norm, config.blow_up_cap)

    if ckpts[0] == 0:
        record(0)
        pos = 1

    sqrt_dt = math.sqrt(dt)
    for b0 in range(0, config.num_steps, _STEP_BLOCK):
        b1 = min(b0 + _STEP_BLOCK, config.num_steps)
        if pos >= n_ck:
            break  # all checkpoints recorded
        count = b1 - b0
        normals = np.empty((m, count))
        for j in range(m):
            normals[j] = _standard_normal_block(config.seed, path_lo + j, b0, count)
        for k in range(b0, b1):
            db = normals[:, k - b0, None] * sqrt_dt
            frozen = blown | failed
            active = ~frozen
            with np.errstate(all="ignore"):
                if config.scheme == "em":
                    new = em_step(problem, x, StepContext(k=k, dt=dt, db=db), validate=False)
                else:
                    g = np.asarray(problem.diffusion(x, k * dt), dtype=float)
                    bvec = x + g * db
                    new = x.copy()
                    if np.any(active):
                        if n == 1:
                            sol, ok = _solve_scalar_batch(
                                problem.drift, (k + 1) * dt, bvec[active], dt,
                                DEFAULT_SOLVER_CONFIG,
                            )
                            idx = np.flatnonzero(active)
                            new[idx[ok.ravel()]] = sol[ok.ravel()]
                            failed[idx[~ok.ravel()]] = True
                        else:
                            for i in np.flatnonzero(active):
                                try:
                                    new[i] = solve_implicit(
                                        problem, (k + 1) * dt, bvec[i], dt,
                                        DEFAULT_SOLVER_CONFIG,
                                    )
                                except ImplicitSolveError:
                                    failed[i] = True
            x = np.where(frozen[:, None], x, np.asarray(new, dtype=float))
            norm2 = np.einsum("ij,ij->i", x, x)
            over = ~frozen & (~np.isfinite(norm2) | (norm2 > cap2))
            blown |= over
            while pos < n_ck and ckpts[pos] == k + 1:
                record(pos)
                pos += 1
    return sq, blown_out, failed_out, capped


def simulate_ensemble(
    problem: SdeProblem,
    config: SimConfig,
    workers: int | None = None,
) -> MomentSeries:
    """Run the ensemble and reduce to a MomentSeries.

    Blown-up (and the rare solver-failed) paths freeze and leave the surviving
    set; statistics at each checkpoint are over survivors, with counts
    reported alongside. Solver failures above 1% of paths abort the run.
    Worker count (argument, else POLYSTAB_THREADS, else 1) never affects the
    result.
    """
    x0 = np.asarray(config.initial_value, dtype=float)
    if x0.shape != (problem.dimension,):
        raise ValueError(
            f"initial_value has shape {x0.shape}, problem '{problem.label}' needs "
            f"({problem.dimension},)"
        )
    if config.scheme == "bem":
        if problem.kbar != 0.0 and config.dt >= 1.0 / abs(problem.kbar):
            raise ValueError(
                f"bem requires dt < 1/|Kbar| = {1.0 / abs(problem.kbar)}, got dt={config.dt}"
            )
        if config.dt >= 1.0 / problem.k1:
            warnings.warn(
                f"dt={config.dt} is not below 1/K1 = {1.0 / problem.k1}; the "
                f"polynomial decay guarantee does not cover this run",
                stacklevel=2,
            )
    workers = _resolve_workers(workers)

    n_paths = config.num_paths
    bounds = [(lo, min(lo + _CHUNK_PATHS, n_paths)) for lo in range(0, n_paths, _CHUNK_PATHS)]
    n_ck = len(config.checkpoints)
    sq = np.empty((n_ck, n_paths))
    blown = np.empty((n_ck, n_paths), dtype=bool)
    failed = np.empty((n_ck, n_paths), dtype=bool)
    capped = np.empty((n_ck, n_paths))

    def run(bound):
        lo, hi = bound
        return lo, hi, _simulate_chunk(problem, config, lo, hi)

    if workers == 1 or len(bounds) == 1:
        results = map(run, bounds)
    else:
        pool = ThreadPoolExecutor(max_workers=workers)
        try:
            results = list(pool.map(run, bounds))
        finally:
            pool.shutdown(wait=True)
    for lo, hi, (c_sq, c_blown, c_failed, c_capped) in results:
        sq[:, lo:hi] = c_sq
        blown[:, lo:hi] = c_blown
        failed[:, lo:hi] = c_failed
        capped[:, lo:hi] = c_capped

    n_failed = int(np.sum(failed[-1]))
    if n_failed > 0:
        frac = n_failed / n_paths
        if frac > 0.01:
            raise RuntimeError(
                f"{n_failed}/{n_paths} paths failed the implicit solve "
                f"({100 * frac:.1f}% > 1%); aborting"
            )
        warnings.warn(
            f"{n_failed}/{n_paths} paths failed the implicit solve and were "
            f"frozen (counted with blown-up paths)",
            stacklevel=2,
        )

    gone = blown | failed  # frozen-and-excluded, reported via blown_up
    mean_sq = np.empty(n_ck)
    std_err = np.empty(n_ck)
    surviving = np.empty(n_ck, dtype=int)
    blown_up = np.empty(n_ck, dtype=int)
    capped_mean = np.empty(n_ck)
    for i in range(n_ck):
        mask = gone[i]
        n_surv = n_paths - int(np.sum(mask))
        surviving[i] = n_surv
        blown_up[i] = n_paths - n_surv
        capped_mean[i] = float(np.sum(np.minimum(capped[i], config.blow_up_cap))) / n_paths
        if n_surv == 0:
            mean_sq[i] = np.nan
            std_err[i] = np.nan
            continue
        vals = np.where(mask, 0.0, sq[i])
        mean = float(np.sum(vals)) / n_surv
        mean_sq[i] = mean
        if n_surv == 1:
            std_err[i] = 0.0
        else:
            dev = np.where(mask, 0.0, sq[i] - mean)
            var = float(np.sum(dev * dev)) / (n_surv - 1)
            std_err[i] = math.sqrt(var / n_surv)

    ks = np.asarray(config.checkpoints, dtype=int)
    return MomentSeries(
        problem_label=problem.label,
        scheme=config.scheme,
        config=config,
        step_index=ks,
        time=ks * config.dt,
        mean_square=mean_sq,
        std_error=std_err,
        surviving=surviving,
        blown_up=blown_up,
        capped_mean_abs=capped_mean,
        failed_paths=n_failed,
    )
