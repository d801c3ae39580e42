"""Verification harnesses: observed-order studies, norm monitor, mass ledger.

Order estimation uses pairwise log2 error ratios under step halving so
each refinement level is individually auditable. References are analytic
where a closed form exists (linear decay, the Neumann cosine mode) and a
fine-step Richardson run otherwise.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import model
from .errors import ValidationError
from .grid import CompartmentField, Grid, discrete_integral
from .integrators import RK4_REAL_AXIS, TimeSeries, max_stable_dt, simulate
from .scenario import Scenario, load_scenario

ROUNDOFF_FACTOR = 100.0  # levels with errors below 100 * eps * scale are dropped


# ---------------------------------------------------------------------------
# Norms.

@dataclass(frozen=True)
class ErrorNorms:
    """Discrete L2/Linf difference norms, per compartment and aggregated."""

    per_comp: dict          # name -> {"l2": float, "linf": float}
    l2: float               # max over compartments
    linf: float


def error_norm(a: CompartmentField, b: CompartmentField, grid: Grid | None = None) -> ErrorNorms:
    if grid is None:
        grid = a.grid
    if a.data.shape != b.data.shape:
        raise ValidationError(
            f"field shapes differ: {a.data.shape} vs {b.data.shape}"
        )
    diff = a.data - b.data
    per = {}
    for k, name in enumerate(model.COMPARTMENTS):
        d = diff[:, k]
        per[name] = {
            "l2": math.sqrt(discrete_integral(d * d, grid)),
            "linf": float(np.max(np.abs(d))) if d.size else 0.0,
        }
    return ErrorNorms(
        per_comp=per,
        l2=max(v["l2"] for v in per.values()),
        linf=max(v["linf"] for v in per.values()),
    )


# ---------------------------------------------------------------------------
# Reports.

def _pairwise_orders(errors: list[float]) -> list[float]:
    return [
        math.log2(errors[k] / errors[k + 1])
        for k in range(len(errors) - 1)
    ]


@dataclass
class OrderReport:
    axis: str                       # "temporal" | "spatial"
    steps: list[float]              # dt or h values, strictly halving
    levels: list[dict]              # per level: step, l2, linf, per_comp
    orders: list[float]             # pairwise log2 ratios of aggregate L2
    reference: str
    notices: list[str] = dc_field(default_factory=list)

    def __post_init__(self):
        discarded = sum("discarded" in n for n in self.notices)
        if len(self.steps) + discarded < 3:
            raise ValidationError("order study needs at least 3 levels")
        for a, b in zip(self.steps, self.steps[1:]):
            if abs(a / b - 2.0) > 1e-9:
                raise ValidationError(
                    f"steps must decrease by factor 2, got {a!r} -> {b!r}"
                )

    def to_dict(self) -> dict:
        return {
            "kind": "order_report",
            "axis": self.axis,
            "steps": list(self.steps),
            "levels": self.levels,
            "orders": list(self.orders),
            "reference": self.reference,
            "notices": list(self.notices),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OrderReport":
        return cls(axis=d["axis"], steps=d["steps"], levels=d["levels"],
                   orders=d["orders"], reference=d["reference"],
                   notices=d.get("notices", []))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table(self) -> str:
        lines = [f"{'step':>12}  {'L2':>14}  {'Linf':>14}  {'order':>7}"]
        for k, lv in enumerate(self.levels):
            order = f"{self.orders[k - 1]:7.3f}" if k >= 1 and k - 1 < len(self.orders) else "      -"
            lines.append(
                f"{lv['step']:12.6g}  {lv['l2']:14.6e}  {lv['linf']:14.6e}  {order}"
            )
        return "\n".join(lines)


@dataclass
class StabilityReport:
    norms: list[float]
    dt: float
    alpha: float
    alpha_margin: float             # dt * alpha (<= 1 means guard satisfied)
    cfl_margin: float               # dt / cfl bound (<= 1 means guard satisfied)
    monotone: bool
    first_violation: int | None

    def to_dict(self) -> dict:
        return {
            "kind": "stability_report",
            "norms": list(self.norms),
            "dt": self.dt,
            "alpha": self.alpha,
            "alpha_margin": self.alpha_margin,
            "cfl_margin": self.cfl_margin,
            "monotone": self.monotone,
            "first_violation": self.first_violation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StabilityReport":
        return cls(norms=d["norms"], dt=d["dt"], alpha=d["alpha"],
                   alpha_margin=d["alpha_margin"], cfl_margin=d["cfl_margin"],
                   monotone=d["monotone"], first_violation=d["first_violation"])

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


@dataclass
class LedgerReport:
    times: list[float]
    live_total: list[float]
    cumulative_deaths: list[float]
    augmented_total: list[float]
    max_relative_drift: float
    live_nonincreasing: bool

    def to_dict(self) -> dict:
        return {
            "kind": "ledger_report",
            "times": list(self.times),
            "live_total": list(self.live_total),
            "cumulative_deaths": list(self.cumulative_deaths),
            "augmented_total": list(self.augmented_total),
            "max_relative_drift": self.max_relative_drift,
            "live_nonincreasing": self.live_nonincreasing,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LedgerReport":
        return cls(times=d["times"], live_total=d["live_total"],
                   cumulative_deaths=d["cumulative_deaths"],
                   augmented_total=d["augmented_total"],
                   max_relative_drift=d["max_relative_drift"],
                   live_nonincreasing=d["live_nonincreasing"])

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# Order studies.

def _final_field(ts: TimeSeries) -> CompartmentField:
    return CompartmentField(data=ts.states[-1], grid=ts.grid)


def _study_run(scenario: Scenario, dt: float) -> TimeSeries:
    run = scenario.with_overrides(dt=dt, snapshot_interval=scenario.horizon)
    return simulate(run)


def _build_order_report(axis, steps, fields, reference_field, grid, reference_desc):
    levels = []
    for step, f in zip(steps, fields):
        norms = error_norm(f, reference_field, grid)
        levels.append({
            "step": float(step),
            "l2": norms.l2,
            "linf": norms.linf,
            "per_comp": norms.per_comp,
        })
    scale = max(
        math.sqrt(discrete_integral(reference_field.data[:, k] ** 2, grid))
        for k in range(model.N_SLOTS)
    )
    floor = ROUNDOFF_FACTOR * np.finfo(float).eps * max(scale, 1.0)
    notices = []
    kept_steps, kept_errors, kept_levels = [], [], []
    for step, lv in zip(steps, levels):
        if lv["l2"] < floor:
            notices.append(
                f"level step={step:g} discarded: error {lv['l2']:.3e} below "
                f"roundoff floor {floor:.3e}"
            )
        else:
            kept_steps.append(float(step))
            kept_errors.append(lv["l2"])
            kept_levels.append(lv)
    return OrderReport(
        axis=axis,
        steps=kept_steps,
        levels=kept_levels,
        orders=_pairwise_orders(kept_errors),
        reference=reference_desc,
        notices=notices,
    )


def temporal_order_study(scenario: Scenario, dts: list[float],
                         reference=None) -> OrderReport:
    """Observed temporal order on an ODE-reduced scenario (all nu = 0).

    ``reference`` may be a callable t -> (n_nodes, 9) array giving an
    analytic solution; otherwise a Richardson run at dt_min/16 is used.
    """
    if scenario.model != "sir" and scenario.params.max_nu() > 0:
        raise ValidationError("temporal study requires all diffusivities zero")
    if not np.any(np.asarray(scenario.initial_data) != 0):
        raise ValidationError("degenerate study: initial data is identically zero")
    dts = [float(v) for v in dts]

    if scenario.model == "sir":
        # Promote S/I/R runs to field comparisons on a stub grid.
        grid = Grid(dim=1, extent_x=1.0, nodes_x=3)

        def final(ts):
            data = np.zeros((3, model.N_SLOTS))
            data[:, :3] = ts.states[-1][0]
            return CompartmentField(data=data, grid=grid)
    else:
        grid = scenario.grid
        final = _final_field

    if reference is not None:
        ref_field_data = np.asarray(reference(scenario.horizon), dtype=float)
        if scenario.model == "sir":
            data = np.zeros((3, model.N_SLOTS))
            data[:, :3] = ref_field_data
            ref_field = CompartmentField(data=data, grid=grid)
        else:
            ref_field = CompartmentField(data=ref_field_data, grid=grid)
        ref_desc = "analytic"
    else:
        ref_dt = min(dts) / 16.0
        ref_field = final(_study_run(scenario, ref_dt))
        ref_desc = f"fine-step Richardson reference (dt={ref_dt:g})"

    fields = [final(_study_run(scenario, dt)) for dt in dts]
    return _build_order_report("temporal", dts, fields, ref_field, grid, ref_desc)


def spatial_order_study(h_list: list[float], *, extent: float = 1.0,
                        nu: float = 0.02, n_frozen: float = 1.0,
                        offset: float = 1.0, amplitude: float = 0.5,
                        horizon: float = 3.5, dim: int = 1) -> OrderReport:
    """Observed spatial order on the frozen-N Neumann cosine mode.

    Initial S = offset + amplitude * cos(pi x / L); all reaction rates are
    zero and N is frozen, so the analytic solution is the decaying cosine
    u(x, t) = offset + amplitude * exp(-N nu (pi/L)^2 t) cos(pi x / L).
    """
    if amplitude == 0:
        raise ValidationError("degenerate study: zero-amplitude cosine mode")
    if amplitude > offset:
        raise ValidationError("amplitude must not exceed offset (field must stay nonnegative)")
    h_list = [float(h) for h in h_list]
    h_min = min(h_list)
    # Keep the explicit step safely inside the diffusion stability limit of
    # the finest grid; temporal error is then negligible next to O(h^2).
    dt = 0.25 * RK4_REAL_AXIS * h_min**2 / (4.0 * dim * n_frozen * nu)
    n_steps = max(1, math.ceil(horizon / dt))
    dt = horizon / n_steps

    decay = math.exp(-n_frozen * nu * (math.pi / extent) ** 2 * horizon)
    fields = []
    steps = []
    ref_fields = []
    for h in h_list:
        nodes = round(extent / h) + 1
        if abs((nodes - 1) * h - extent) > 1e-9 * extent:
            raise ValidationError(f"h={h!r} does not divide extent={extent!r}")
        gdoc = {"dim": 1, "extent_x": extent, "nodes_x": nodes}
        if dim == 2:
            gdoc = {"dim": 2, "extent_x": extent, "nodes_x": nodes,
                    "extent_y": extent, "nodes_y": nodes}
        n_nodes = nodes * (nodes if dim == 2 else 1)
        doc = {
            "schema_version": 1,
            "name": f"cosine-mode-h{h:g}",
            "model": "covid",
            "grid": gdoc,
            "params": {"nu_s": nu},
            "initial": {"per_node": {"s": [0.0] * n_nodes}},
            "horizon": horizon,
            "dt": dt,
            "snapshot_interval": horizon,
            "flags": {"frozen_n": n_frozen, "guard_alpha": False},
        }
        sc = load_scenario(doc)
        x = sc.grid.x
        mode = np.cos(math.pi * x / extent)
        init = sc.initial_data.copy()
        init[:, model.IDX["s"]] = offset + amplitude * mode
        sc.initial_data = init
        ts = simulate(sc)
        fields.append(_final_field(ts))
        steps.append(h)
        ref = np.zeros_like(init)
        ref[:, model.IDX["s"]] = offset + amplitude * decay * mode
        ref_fields.append(CompartmentField(data=ref, grid=sc.grid))

    # Each level has its own grid; normalize by comparing level-by-level
    # against the analytic field on the same grid.
    levels = []
    errors = []
    for h, f, ref in zip(steps, fields, ref_fields):
        norms = error_norm(f, ref, f.grid)
        levels.append({
            "step": float(h),
            "l2": norms.l2,
            "linf": norms.linf,
            "per_comp": norms.per_comp,
        })
        errors.append(norms.l2)
    floor = ROUNDOFF_FACTOR * np.finfo(float).eps * max(offset + amplitude, 1.0)
    notices = []
    kept_steps, kept_errors, kept_levels = [], [], []
    for h, lv, e in zip(steps, levels, errors):
        if e < floor:
            notices.append(
                f"level h={h:g} discarded: error {e:.3e} below roundoff floor {floor:.3e}"
            )
        else:
            kept_steps.append(h)
            kept_errors.append(e)
            kept_levels.append(lv)
    return OrderReport(
        axis="spatial",
        steps=kept_steps,
        levels=kept_levels,
        orders=_pairwise_orders(kept_errors),
        reference="analytic Neumann cosine-mode decay",
        notices=notices,
    )


# ---------------------------------------------------------------------------
# Ledger and stability monitors.

def mass_ledger(ts: TimeSeries) -> LedgerReport:
    """Mass bookkeeping over a run: live, cumulative-death, augmented totals."""
    if ts.times.size == 0:
        raise ValidationError("empty time series")
    if ts.grid is None:
        live = [float(s.sum()) for s in ts.states[:, 0, :]]
        deaths = [0.0] * len(live)
        aug = list(live)
    else:
        w = ts.grid.quad_weights
        live, deaths, aug = [], [], []
        for snap in ts.states:
            lv = float(np.dot(w, model.live_totals(snap)))
            dd = float(np.dot(w, snap[:, model.N_LIVE:].sum(axis=1)))
            live.append(lv)
            deaths.append(dd)
            aug.append(lv + dd)
    base = aug[0]
    if base == 0:
        drift = max(abs(v) for v in aug)
    else:
        drift = max(abs(v - base) for v in aug) / abs(base)
    noninc = all(b <= a * (1.0 + 1e-12) + 1e-12 for a, b in zip(live, live[1:]))
    return LedgerReport(
        times=[float(t) for t in ts.times],
        live_total=live,
        cumulative_deaths=deaths,
        augmented_total=aug,
        max_relative_drift=float(drift),
        live_nonincreasing=noninc,
    )


def stability_monitor(ts: TimeSeries, alpha_estimate: float, dt: float) -> StabilityReport:
    """Per-step discrete L2 norm monitor with guard margins.

    Monotone iff the live-compartment norm never increases by more than
    1e-12 of the initial norm between consecutive steps.
    """
    norms = np.asarray(ts.norms, dtype=float)
    tol = 1e-12 * norms[0] if norms.size else 0.0
    first_violation = None
    for k in range(1, norms.size):
        if norms[k] > norms[k - 1] + tol:
            first_violation = int(k)
            break
    cfl_margin = 0.0
    sc = ts.scenario
    if sc is not None and getattr(sc, "model", None) == "covid" and ts.grid is not None:
        bound = max_stable_dt(sc.params, ts.grid,
                              CompartmentField(data=ts.states[0], grid=ts.grid),
                              alpha=alpha_estimate, frozen_n=sc.frozen_n)
        if np.isfinite(bound.cfl_term):
            cfl_margin = dt / bound.cfl_term
    return StabilityReport(
        norms=[float(v) for v in norms],
        dt=float(dt),
        alpha=float(alpha_estimate),
        alpha_margin=float(dt * alpha_estimate),
        cfl_margin=float(cfl_margin),
        monotone=first_violation is None,
        first_violation=first_violation,
    )
