"""Command-line front end: simulate, analyze, verify-gamma, counterexample.

Exit codes: 0 success, 1 usage error, 2 numerical/data failure, 3 conformance
failure. Seeds are mandatory — there are no wall-clock defaults anywhere.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import analysis, ensemble, gamma, problems

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2
EXIT_CONFORMANCE = 3


@dataclasses.dataclass
class ExperimentSpec:
    """One reproducible experiment: problem + run parameters + analysis options."""

    problem: str
    scheme: str
    dt: float
    steps: int
    paths: int
    seed: int
    x0: float | list | None = None
    k1: float | None = None
    c: float | None = None
    checkpoints: int | list | None = None
    blow_up_cap: float = 1e12
    window_fraction: float = 0.5
    tolerance: float = 0.15
    out_dir: str = "."
    prefix: str | None = None
    envelope: bool = False

    @classmethod
    def from_json_file(cls, path) -> "ExperimentSpec":
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise ValueError(f"{path}: experiment spec must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"{path}: unknown spec keys {sorted(unknown)}")
        missing = {"problem", "scheme", "dt", "steps", "paths", "seed"} - set(data)
        if missing:
            raise ValueError(f"{path}: spec is missing required keys {sorted(missing)}")
        return cls(**data)

    def merged_with_args(self, args) -> "ExperimentSpec":
        out = dataclasses.replace(self)
        for field in dataclasses.fields(self):
            val = getattr(args, field.name, None)
            if val is not None and val is not False:
                out = dataclasses.replace(out, **{field.name: val})
        return out


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="polystab",
        description="Mean-square polynomial stability experiments for explicit/implicit Euler schemes on SDEs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run an ensemble and write CSV + config JSON")
    sim.add_argument("--spec", type=str, default=None, help="JSON experiment spec; flags override it")
    sim.add_argument("--problem", type=str, choices=sorted(problems.PROBLEM_BUILDERS), default=None)
    sim.add_argument("--scheme", type=str, choices=ensemble.SCHEMES, default=None)
    sim.add_argument("--dt", type=float, default=None)
    sim.add_argument("--steps", type=int, default=None)
    sim.add_argument("--paths", type=int, default=None)
    sim.add_argument("--seed", type=int, default=None)
    sim.add_argument("--x0", type=float, default=None, help="initial value (problem default if omitted)")
    sim.add_argument("--k1", type=float, default=None, help="override the problem's claimed K1")
    sim.add_argument("--c", type=float, default=None, help="override the problem's claimed C")
    sim.add_argument("--checkpoints", type=int, default=None, help="number of geometric checkpoints (~50 default)")
    sim.add_argument("--blow-up-cap", dest="blow_up_cap", type=float, default=None)
    sim.add_argument("--out-dir", dest="out_dir", type=str, default=None)
    sim.add_argument("--prefix", type=str, default=None, help="output file prefix (default: problem_scheme_seed)")
    sim.add_argument("--envelope", action="store_true", help="also write the theoretical envelope CSV")

    ana = sub.add_parser("analyze", help="fit the tail decay slope of a moment CSV")
    ana.add_argument("--csv", type=str, required=True)
    ana.add_argument("--k1", type=float, required=True, help="decay constant for the theoretical bound")
    ana.add_argument("--window-fraction", dest="window_fraction", type=float, default=0.5)
    ana.add_argument("--tolerance", type=float, default=0.15)
    ana.add_argument("--out", type=str, default=None, help="write the JSON report here (default: stdout)")

    ver = sub.add_parser("verify-gamma", help="run the gamma identity/inequality verification grids")
    ver.add_argument("--samples", type=int, default=1000, help="random samples for the product identity")
    ver.add_argument("--seed", type=int, default=20240331)
    ver.add_argument("--k-max", dest="k_max", type=int, default=200)

    ctr = sub.add_parser("counterexample", help="divergence lower-bound recursion + companion ensemble")
    ctr.add_argument("--dt", type=float, required=True)
    ctr.add_argument("--cap", type=float, default=1e12)
    ctr.add_argument("--k-max", dest="k_max", type=int, default=200)
    ctr.add_argument("--paths", type=int, default=1000)
    ctr.add_argument("--steps", type=int, default=200)
    ctr.add_argument("--seed", type=int, default=1)
    ctr.add_argument("--x0", type=float, default=None)
    return parser


def _cmd_simulate(args) -> int:
    if args.spec is not None:
        try:
            spec = ExperimentSpec.from_json_file(args.spec)
        except (OSError, ValueError, json.JSONDecodeError, TypeError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        spec = spec.merged_with_args(args)
    else:
        required = ("problem", "scheme", "dt", "steps", "paths", "seed")
        missing = [name for name in required if getattr(args, name) is None]
        if missing:
            print(f"error: missing required flags: {', '.join('--' + m for m in missing)}", file=sys.stderr)
            return EXIT_USAGE
        spec = ExperimentSpec(
            problem=args.problem, scheme=args.scheme, dt=args.dt, steps=args.steps,
            paths=args.paths, seed=args.seed, x0=args.x0, k1=args.k1, c=args.c,
            checkpoints=args.checkpoints,
            blow_up_cap=args.blow_up_cap if args.blow_up_cap is not None else 1e12,
            out_dir=args.out_dir if args.out_dir is not None else ".",
            prefix=args.prefix, envelope=bool(args.envelope),
        )

    try:
        problem, default_x0 = problems.problem_from_config(
            {"problem": spec.problem}
            | ({"k1": spec.k1} if spec.k1 is not None else {})
            | ({"c": spec.c} if spec.c is not None else {})
        )
        x0 = default_x0 if spec.x0 is None else np.atleast_1d(np.asarray(spec.x0, dtype=float))
        checkpoints = None
        if spec.checkpoints is not None:
            if isinstance(spec.checkpoints, int):
                checkpoints = ensemble.geometric_checkpoints(spec.steps, spec.checkpoints)
            else:
                checkpoints = tuple(int(k) for k in spec.checkpoints)
        config = ensemble.SimConfig(
            dt=spec.dt, num_steps=spec.steps, num_paths=spec.paths, seed=spec.seed,
            scheme=spec.scheme, initial_value=tuple(float(v) for v in x0),
            checkpoints=checkpoints, blow_up_cap=spec.blow_up_cap,
        )
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    try:
        series = ensemble.simulate_ensemble(problem, config)
    except (RuntimeError, ValueError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL

    out_dir = Path(spec.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    prefix = spec.prefix or f"{spec.problem}_{spec.scheme}_seed{spec.seed}"
    csv_path = out_dir / f"{prefix}.csv"
    json_path = out_dir / f"{prefix}_config.json"
    series.write_csv(csv_path)
    series.write_config_json(json_path)
    wrote = [str(csv_path), str(json_path)]

    if spec.envelope:
        try:
            if spec.scheme == "em":
                env = analysis.em_envelope(
                    series.step_index, config.dt, problem.k1, problem.c,
                    float(np.dot(x0, x0)),
                )
            else:
                env = analysis.bem_envelope(
                    series.step_index, config.dt, problem.k1, problem.c,
                    float(np.dot(x0, x0)), kbar=problem.kbar,
                )
            env_path = out_dir / f"{prefix}_envelope.csv"
            lines = ["k,t,envelope"]
            for i, k in enumerate(series.step_index):
                lines.append(f"{int(k)},{float(series.time[i])!r},{float(env[i])!r}")
            env_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
            wrote.append(str(env_path))
        except ValueError as exc:
            print(f"warning: envelope not written: {exc}", file=sys.stderr)

    final = len(series) - 1
    print(f"wrote: {', '.join(wrote)}")
    print(
        f"final checkpoint k={int(series.step_index[final])} t={float(series.time[final]):g}: "
        f"mean_square={float(series.mean_square[final]):.6e} "
        f"(surviving {int(series.surviving[final])}/{config.num_paths}, "
        f"blown up {int(series.blown_up[final])})"
    )
    if np.any(series.blown_up > 0):
        print("note: checkpoints with blow-ups report surviving-path means (lower bounds)")
    return EXIT_OK


def _cmd_analyze(args) -> int:
    csv_path = Path(args.csv)
    try:
        series = ensemble.MomentSeries.from_csv(csv_path)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    try:
        estimate = analysis.estimate_decay_exponent(
            series, args.window_fraction, k1=args.k1, tolerance=args.tolerance
        )
    except ValueError as exc:
        print(f"estimation error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    report = {"csv": str(csv_path), "k1": args.k1, "tolerance": args.tolerance}
    report.update(estimate.to_json_dict())
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if not estimate.conforms:
        print(
            f"conformance failure: slope {estimate.slope:.4f} > bound "
            f"{estimate.theoretical_bound:.4f} + {args.tolerance}",
            file=sys.stderr,
        )
        return EXIT_CONFORMANCE
    return EXIT_OK


def _cmd_verify_gamma(args) -> int:
    failures = []
    identity = gamma.verify_product_identity(num_samples=args.samples, seed=args.seed)
    print(
        f"product identity: worst relative error {identity.worst_rel_error:.3e} "
        f"over {identity.samples} samples (tolerance {identity.tolerance:g})"
    )
    if not identity.passed:
        failures.append(f"product identity violated at {identity.worst_params}")

    signs = gamma.verify_ratio_signs()
    print(
        f"ratio/power signs: max margin below-one {signs.max_margin_below_one:+.3e} "
        f"at {signs.worst_point_below}; min margin above-one "
        f"{signs.min_margin_above_one:+.3e} at {signs.worst_point_above}"
    )
    if not signs.passed:
        failures.append(
            f"ratio/power sign contract violated at "
            f"{signs.worst_point_below if signs.max_margin_below_one >= 0 else signs.worst_point_above}"
        )

    report = analysis.verify_proof_bounds(k_max=args.k_max)
    print(report.summary())
    for fam in report.families:
        if fam.worst_margin < -report.slack:
            failures.append(f"{fam.name} bound violated at {fam.worst_point}")

    if failures:
        for f in failures:
            print(f"FAIL: {f}", file=sys.stderr)
        return EXIT_NUMERICAL
    print("all gamma checks passed")
    return EXIT_OK


def _cmd_counterexample(args) -> int:
    try:
        seq = analysis.counterexample_lower_bound(args.dt, args.k_max)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    margins = seq.invariant_margins()
    show = min(len(seq.values), 12)
    print(f"divergence lower bounds b_k for dt={args.dt}:")
    for i in range(show):
        print(f"  k={i + 1:3d}  b_k={seq.values[i]:.6e}  invariant margin {margins[i]:+.3e}")
    if len(seq.values) > show:
        print(f"  ... ({len(seq.values)} values computed)")
    exceed = seq.first_step_exceeding(args.cap)
    if exceed is None:
        print(f"cap {args.cap:g} not exceeded within k_max={args.k_max}")
    else:
        print(f"cap {args.cap:g} exceeded at step k={exceed}")
    if seq.diverged_at is not None:
        print(f"recursion left double-precision range at step k={seq.diverged_at}")
    invariant_ok = bool(np.all(margins >= 0.0))
    print(f"induction invariant b_k >= ((1+k dt)/dt)^0.5 (k+2): {'holds' if invariant_ok else 'VIOLATED'}")

    problem = problems.cubic_counterexample()
    x0 = args.x0 if args.x0 is not None else problems.DEFAULT_INITIAL_VALUES[problem.label]
    try:
        config = ensemble.SimConfig(
            dt=args.dt, num_steps=args.steps, num_paths=args.paths, seed=args.seed,
            scheme="em", initial_value=(float(x0),), blow_up_cap=args.cap,
        )
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        series = ensemble.simulate_ensemble(problem, config)
    except (RuntimeError, ValueError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    frac = series.blown_up[-1] / config.num_paths
    print(
        f"companion ensemble (explicit scheme, {config.num_paths} paths, x0={x0}): "
        f"{int(series.blown_up[-1])} blown up by step {config.num_steps} "
        f"({100 * frac:.1f}%)"
    )
    if not invariant_ok:
        return EXIT_NUMERICAL
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; remap to the documented contract
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    handlers = {
        "simulate": _cmd_simulate,
        "analyze": _cmd_analyze,
        "verify-gamma": _cmd_verify_gamma,
        "counterexample": _cmd_counterexample,
    }
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
