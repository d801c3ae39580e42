"""Command-line front end: simulate, order-check, stability-check, compare, presets.

Exit codes: 0 success, 1 usage error, 2 validation error, 3 numerical
abort (non-finite state, or monotonicity expected but violated).
Diagnostics go to stderr; data goes to files and stdout.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import verification
from .errors import (
    GuardViolation,
    NumericalAbort,
    SchemaError,
    UnsupportedOperation,
    UsageError,
    ValidationError,
)
from .grid import CompartmentField
from .integrators import estimate_alpha, max_stable_dt, simulate
from .scenario import Scenario, load_scenario, preset, preset_descriptions
from .series_io import fit_metrics, load_observed, write_timeseries
from .verification import (
    mass_ledger,
    spatial_order_study,
    stability_monitor,
    temporal_order_study,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="rdepi", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a scenario and write time-series CSVs")
    sim.add_argument("--scenario", required=True,
                     help="scenario JSON file, or preset:NAME")
    sim.add_argument("--dt", type=float, default=None, help="override step size (days)")
    sim.add_argument("--T", type=float, default=None, dest="horizon",
                     help="override horizon (days)")
    sim.add_argument("--integrator", choices=("rk4", "euler", "imex"), default=None,
                     help="override time integrator")
    sim.add_argument("--out", default="rdepi-out", help="output directory")
    sim.add_argument("--strict-guards", action="store_true",
                     help="fail instead of warning when a step-size guard is violated")
    sim.set_defaults(func=_cmd_simulate)

    oc = sub.add_parser("order-check", help="observed-order refinement study")
    oc.add_argument("--axis", choices=("temporal", "spatial"), required=True,
                    help="which discretization axis to refine")
    oc.add_argument("--levels", type=int, default=4, help="number of refinement levels")
    oc.add_argument("--integrator", choices=("rk4", "euler"), default="rk4",
                    help="integrator for the temporal study")
    oc.add_argument("--out", default=None, help="write the report JSON to this file")
    oc.set_defaults(func=_cmd_order_check)

    st = sub.add_parser("stability-check", help="norm-monotonicity monitor")
    st.add_argument("--scenario", required=True,
                    help="scenario JSON file, or preset:NAME")
    st.add_argument("--dt-factor", type=float, default=0.4, dest="dt_factor",
                    help="run at this multiple of the step-size guard bound")
    st.set_defaults(func=_cmd_stability_check)

    cmp_ = sub.add_parser("compare", help="fit metrics against observed data")
    cmp_.add_argument("--scenario", required=True,
                      help="scenario JSON file, or preset:NAME")
    cmp_.add_argument("--observed", required=True, help="observed-data CSV file")
    cmp_.add_argument("--region", default=None,
                      help="observed-to-grid region map, e.g. '0=1,1=2'")
    cmp_.set_defaults(func=_cmd_compare)

    pr = sub.add_parser("presets", help="list shipped presets")
    pr.set_defaults(func=_cmd_presets)
    return parser


def _load(ref: str) -> Scenario:
    if ref.startswith("preset:"):
        return preset(ref[len("preset:"):])
    path = Path(ref)
    if not path.exists():
        raise ValidationError([f"scenario file not found: {ref}"])
    return load_scenario(path.read_text())


def _cmd_simulate(args) -> int:
    sc = _load(args.scenario)
    overrides = {}
    if args.dt is not None:
        overrides["dt"] = args.dt
    if args.horizon is not None:
        overrides["horizon"] = args.horizon
    if args.integrator is not None:
        overrides["integrator"] = args.integrator
    if args.strict_guards:
        overrides["flags"] = {"strict_guards": True}
    if overrides:
        sc = sc.with_overrides(**overrides)

    ts = simulate(sc)
    out_dir = Path(args.out)
    paths = write_timeseries(ts, out_dir)
    ledger = mass_ledger(ts)

    manifest = {
        "name": sc.name,
        "model": sc.model,
        "integrator": sc.integrator,
        "dt": sc.dt,
        "horizon": sc.horizon,
        "params": sc.document["params"],
        "warnings": list(ts.warnings),
        "ledger": {
            "max_relative_drift": ledger.max_relative_drift,
            "live_nonincreasing": ledger.live_nonincreasing,
            "final_live_total": ledger.live_total[-1],
            "final_cumulative_deaths": ledger.cumulative_deaths[-1],
        },
    }
    if sc.model == "covid":
        # Heuristic sampling: initial state plus the snapshots nearest to
        # 25/50/75% of the run.
        n_snap = ts.states.shape[0]
        picks = sorted({0, n_snap // 4, n_snap // 2, (3 * n_snap) // 4})
        samples = [CompartmentField(data=ts.states[k], grid=ts.grid) for k in picks]
        alpha = estimate_alpha(sc.params, sc.grid, samples, frozen_n=sc.frozen_n)
        bound = max_stable_dt(sc.params, sc.grid, samples[0], alpha=alpha,
                              frozen_n=sc.frozen_n)
        manifest["alpha_estimate"] = alpha
        manifest["guards"] = bound.to_dict() | {"dt": sc.dt}
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    for p in list(paths.values()) + [manifest_path]:
        print(p)
    return 0


def _cmd_order_check(args) -> int:
    if args.levels < 3:
        raise ValidationError(["--levels must be at least 3"])
    if args.axis == "temporal":
        sc = preset("nanjing-ode").with_overrides(horizon=30.0, integrator=args.integrator)
        dts = [0.2 / 2**k for k in range(args.levels)]
        report = temporal_order_study(sc, dts)
    else:
        hs = [1.0 / 2**(3 + k) for k in range(args.levels)]
        report = spatial_order_study(hs)
    if args.out:
        Path(args.out).write_text(report.to_json())
    print(report.table())
    for note in report.notices:
        print(note, file=sys.stderr)
    return 0


def _cmd_stability_check(args) -> int:
    sc = _load(args.scenario)
    if sc.model != "covid":
        raise ValidationError(["stability-check requires a spatial (covid) scenario"])
    if args.dt_factor <= 0:
        raise ValidationError([f"--dt-factor must be positive, got {args.dt_factor}"])
    field = CompartmentField(data=sc.initial_data, grid=sc.grid)
    alpha = estimate_alpha(sc.params, sc.grid, [field], frozen_n=sc.frozen_n)
    bound = max_stable_dt(sc.params, sc.grid, field, alpha=alpha, frozen_n=sc.frozen_n)
    dt = args.dt_factor * bound.bound
    n_steps = max(1, math.ceil(sc.horizon / dt))
    horizon = n_steps * dt
    run = sc.with_overrides(dt=dt, horizon=horizon, snapshot_interval=horizon,
                            flags={"guard_alpha": False, "guard_cfl": False})
    expected = alpha <= 1e-12 and dt <= bound.alpha_term and dt <= bound.cfl_term
    try:
        ts = simulate(run, alpha=alpha)
    except NumericalAbort as err:
        norms = getattr(err, "norms", [])
        first = next(
            (k for k in range(1, len(norms))
             if norms[k] > norms[k - 1] + 1e-12 * norms[0]),
            err.step_index,
        )
        report = verification.StabilityReport(
            norms=list(norms), dt=dt, alpha=alpha,
            alpha_margin=dt * alpha,
            cfl_margin=dt / bound.cfl_term if math.isfinite(bound.cfl_term) else 0.0,
            monotone=False, first_violation=int(first),
        )
        print(report.to_json())
        print(f"numerical abort: {err}", file=sys.stderr)
        return 3
    report = stability_monitor(ts, alpha, dt)
    print(report.to_json())
    if expected and not report.monotone:
        print(
            f"norm monotonicity expected under guards but violated at step "
            f"{report.first_violation}",
            file=sys.stderr,
        )
        return 3
    return 0


def _cmd_compare(args) -> int:
    sc = _load(args.scenario)
    obs_path = Path(args.observed)
    if not obs_path.exists():
        raise ValidationError([f"observed-data file not found: {args.observed}"])
    obs = load_observed(obs_path.read_text())
    region_map = None
    if args.region:
        region_map = {}
        for pair in args.region.split(","):
            try:
                src, dst = pair.split("=")
                region_map[int(src)] = int(dst)
            except ValueError:
                raise UsageError(f"bad --region entry {pair!r}; expected OBS=GRID")
    ts = simulate(sc)
    metrics = fit_metrics(ts, obs, region_map)
    print(metrics.to_json())
    return 0


def _cmd_presets(args) -> int:
    for name, desc in preset_descriptions().items():
        print(f"{name:<14} {desc}")
    return 0


def run_cli(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 1
    except (SchemaError, ValidationError, GuardViolation, UnsupportedOperation) as err:
        if isinstance(err, ValidationError):
            for problem in err.problems:
                print(f"validation error: {problem}", file=sys.stderr)
        else:
            print(f"validation error: {err}", file=sys.stderr)
        return 2
    except NumericalAbort as err:
        print(f"numerical abort: {err}", file=sys.stderr)
        return 3
    except SystemExit as err:  # argparse --help
        return int(err.code or 0)


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
