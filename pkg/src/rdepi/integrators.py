"""Time discretization: classical RK4, forward Euler, and 1D IMEX-Euler.

The RK4 scheme advances the full grid field through the four-stage
tableau a21 = a32 = 1/2, a43 = 1, b = (1/6, 1/3, 1/3, 1/6). Step-size
guards combine the one-sided Lipschitz bound dt <= 1/alpha with the
explicit-diffusion stability limit.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field as dc_field
from typing import Callable, TYPE_CHECKING

import numpy as np
import scipy.linalg

from . import model
from .errors import (
    GuardViolation,
    NumericalAbort,
    UnsupportedOperation,
    ValidationError,
)
from .grid import CompartmentField, Grid, discrete_integral, varcoef_diffusion

if TYPE_CHECKING:
    from .scenario import Scenario

# Real-axis stability extent of classical RK4.
RK4_REAL_AXIS = 2.785

DEFAULT_DT_CAP = 1.0e6  # days; reported bound when nothing binds


@dataclass(frozen=True)
class ButcherTableau:
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        b = np.asarray(self.b, dtype=float)
        c = np.asarray(self.c, dtype=float)
        problems = []
        if a.shape != (4, 4) or b.shape != (4,) or c.shape != (4,):
            problems.append("tableau must be 4-stage: a (4,4), b (4,), c (4,)")
        else:
            if abs(b.sum() - 1.0) > 1e-14:
                problems.append(f"weights must sum to 1, got {b.sum()!r}")
            if np.max(np.abs(a.sum(axis=1) - c)) > 1e-14:
                problems.append("abscissae must equal stage-matrix row sums")
        if problems:
            raise ValidationError(problems)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)


RK4_TABLEAU = ButcherTableau(
    a=np.array([
        [0.0, 0.0, 0.0, 0.0],
        [0.5, 0.0, 0.0, 0.0],
        [0.0, 0.5, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
    ]),
    b=np.array([1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0]),
    c=np.array([0.0, 0.5, 0.5, 1.0]),
)


@dataclass
class StepControl:
    """Step size plus guard configuration for a simulation run."""

    dt: float
    guard_alpha: bool = True
    guard_cfl: bool = True
    strict: bool = False
    negativity_tolerance: float = 1e-9
    clamp: bool = False

    def __post_init__(self):
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise ValidationError(f"dt must be positive, got {self.dt!r}")


# ---------------------------------------------------------------------------
# Generic single-step kernels (used both for grid fields and scalar tests).

def rk4_increment(f: Callable, t: float, y: np.ndarray, dt: float) -> np.ndarray:
    k1 = f(t, y)
    k2 = f(t + dt / 2.0, y + (dt / 2.0) * k1)
    k3 = f(t + dt / 2.0, y + (dt / 2.0) * k2)
    k4 = f(t + dt, y + dt * k3)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def euler_increment(f: Callable, t: float, y: np.ndarray, dt: float) -> np.ndarray:
    return y + dt * f(t, y)


def tableau_increment(f: Callable, t: float, y: np.ndarray, dt: float,
                      tableau: ButcherTableau = RK4_TABLEAU) -> np.ndarray:
    """Explicit RK step driven by a generic tableau (for conformance tests)."""
    ks = []
    for j in range(4):
        yj = y
        for k in range(j):
            if tableau.a[j, k] != 0.0:
                yj = yj + dt * tableau.a[j, k] * ks[k]
        ks.append(f(t + tableau.c[j] * dt, yj))
    out = y
    for k in range(4):
        out = out + dt * tableau.b[k] * ks[k]
    return out


# ---------------------------------------------------------------------------
# Full semi-discrete right-hand side over a grid field.

def full_rhs_array(t: float, data: np.ndarray, params: model.ModelParams,
                   grid: Grid, frozen_n: float | None = None) -> np.ndarray:
    """Reaction plus diffusion derivative of an (n_nodes, 9) state array."""
    out = model.reaction_terms(data, params)
    if params.max_nu() > 0.0:
        if frozen_n is not None:
            n_total = float(frozen_n)
        else:
            n_total = model.live_totals(data)
        for name in model.DIFFUSING:
            nu = params.nu_for(name)
            if nu > 0.0:
                k = model.IDX[name]
                out[:, k] += varcoef_diffusion(data[:, k], n_total, nu, grid)
    return out


def full_rhs(t: float, field: CompartmentField, params: model.ModelParams,
             frozen_n: float | None = None) -> CompartmentField:
    return field.replace(full_rhs_array(t, field.data, params, field.grid, frozen_n))


def _rk4_step_array(t: float, data: np.ndarray, grid: Grid, dt: float,
                    params: model.ModelParams, frozen_n: float | None) -> np.ndarray:
    f = lambda tt, y: full_rhs_array(tt, y, params, grid, frozen_n)
    return rk4_increment(f, t, data, dt)


def _euler_step_array(t: float, data: np.ndarray, grid: Grid, dt: float,
                      params: model.ModelParams, frozen_n: float | None) -> np.ndarray:
    f = lambda tt, y: full_rhs_array(tt, y, params, grid, frozen_n)
    return euler_increment(f, t, data, dt)


def rk4_step(t: float, field: CompartmentField, dt: float,
             params: model.ModelParams, frozen_n: float | None = None) -> CompartmentField:
    """One classical RK4 step of the full reaction-diffusion field."""
    if dt <= 0:
        raise ValidationError(f"dt must be positive, got {dt!r}")
    return field.replace(_rk4_step_array(t, field.data, field.grid, dt, params, frozen_n))


def euler_step(t: float, field: CompartmentField, dt: float,
               params: model.ModelParams, frozen_n: float | None = None) -> CompartmentField:
    if dt <= 0:
        raise ValidationError(f"dt must be positive, got {dt!r}")
    return field.replace(_euler_step_array(t, field.data, field.grid, dt, params, frozen_n))


def _imex_step_array(t: float, data: np.ndarray, grid: Grid, dt: float,
                     params: model.ModelParams, frozen_n: float | None) -> np.ndarray:
    if grid.dim != 1:
        raise UnsupportedOperation("IMEX-Euler supports 1D grids only")
    out = data + dt * model.reaction_terms(data, params)
    if params.max_nu() > 0.0:
        h = grid.spacing
        n = grid.n_nodes
        if frozen_n is not None:
            n_total = np.full(n, float(frozen_n))
        else:
            n_total = model.live_totals(data)
        n_face = 0.5 * (n_total[1:] + n_total[:-1])
        for name in model.DIFFUSING:
            nu = params.nu_for(name)
            if nu <= 0.0:
                continue
            k = model.IDX[name]
            kappa = nu * n_face * dt / h**2  # face conductances, scaled
            ab = np.zeros((3, n))
            # banded layout: ab[0, j] = A[j-1, j], ab[1, j] = A[j, j],
            # ab[2, j] = A[j+1, j]; boundary rows carry the mirror factor 2
            ab[0, 1] = -2.0 * kappa[0]
            ab[0, 2:] = -kappa[1:]
            ab[2, : n - 2] = -kappa[:-1]
            ab[2, n - 2] = -2.0 * kappa[-1]
            ab[1, 0] = 1.0 + 2.0 * kappa[0]
            ab[1, -1] = 1.0 + 2.0 * kappa[-1]
            ab[1, 1:-1] = 1.0 + kappa[:-1] + kappa[1:]
            out[:, k] = scipy.linalg.solve_banded((1, 1), ab, out[:, k])
    return out


def imex_euler_step(t: float, field: CompartmentField, dt: float,
                    params: model.ModelParams, frozen_n: float | None = None) -> CompartmentField:
    """Reaction-explicit, diffusion-implicit Euler step (1D only).

    Solves (I - dt * D_N) u^{n+1} = u^n + dt * reaction(u^n) per diffusing
    compartment, with the population weight N frozen at step start. One
    tridiagonal solve per compartment; unconditionally stable in the
    diffusion part.
    """
    if dt <= 0:
        raise ValidationError(f"dt must be positive, got {dt!r}")
    return field.replace(_imex_step_array(t, field.data, field.grid, dt, params, frozen_n))


STEPPERS = {
    "rk4": rk4_step,
    "euler": euler_step,
    "imex": imex_euler_step,
}

_ARRAY_STEPPERS = {
    "rk4": _rk4_step_array,
    "euler": _euler_step_array,
    "imex": _imex_step_array,
}


# ---------------------------------------------------------------------------
# One-sided Lipschitz constant and step-size bounds.

def symmetric_lipschitz_estimate(f: Callable[[np.ndarray], np.ndarray],
                                 y: np.ndarray,
                                 weights: np.ndarray | None = None,
                                 probe_scale: float = 1e-6,
                                 max_iter: int = 500,
                                 tol: float = 1e-10) -> float:
    """Largest eigenvalue of the symmetrized Jacobian of ``f`` at ``y``.

    The Jacobian is assembled column by column from central finite
    differences, symmetrized in the weighted inner product given by
    ``weights`` (the discrete L2 product when quadrature weights are
    passed), and its top eigenvalue extracted by shifted power iteration.
    This is an estimate, not a bound.
    """
    y = np.asarray(y, dtype=float)
    m = y.size
    if m == 0:
        raise ValidationError("empty state")
    jac = np.empty((m, m))
    base = y.ravel()
    for k in range(m):
        eps = probe_scale * max(1.0, abs(base[k]))
        probe = np.zeros(m)
        probe[k] = eps
        hi = np.asarray(f((base + probe).reshape(y.shape)), dtype=float).ravel()
        lo = np.asarray(f((base - probe).reshape(y.shape)), dtype=float).ravel()
        jac[:, k] = (hi - lo) / (2.0 * eps)
    if weights is not None:
        sw = np.sqrt(np.asarray(weights, dtype=float).ravel())
        jac = (sw[:, None] * jac) / sw[None, :]
    sym = 0.5 * (jac + jac.T)
    # Gershgorin shift makes the target eigenvalue the dominant one.
    shift = float(np.max(np.sum(np.abs(sym), axis=1)))
    if shift == 0.0:
        return 0.0
    v = np.ones(m) + np.linspace(0.0, 0.5, m)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = sym @ v + shift * v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return -shift
        v_new = w / norm
        lam_new = float(v_new @ (sym @ v_new))
        if abs(lam_new - lam) <= tol * max(1.0, abs(lam_new)):
            v = v_new
            lam = lam_new
            break
        v = v_new
        lam = lam_new
    return lam


def estimate_alpha(params: model.ModelParams, grid: Grid,
                   sample_states: list[CompartmentField],
                   frozen_n: float | None = None) -> float:
    """One-sided Lipschitz estimate of the live-compartment dynamics.

    Maximum over the sample states of the top eigenvalue of the
    symmetrized Jacobian of the full right-hand side, taken in the
    trapezoid-weighted inner product that defines the discrete L2 norm.
    The two death ledgers are passive integrals and excluded.
    """
    if not sample_states:
        raise ValidationError("need at least one sample state")
    n = grid.n_nodes
    w_live = np.repeat(grid.quad_weights[:, None], model.N_LIVE, axis=1)

    def live_rhs(live: np.ndarray) -> np.ndarray:
        data = np.zeros((n, model.N_SLOTS))
        data[:, : model.N_LIVE] = live
        return full_rhs_array(0.0, data, params, grid, frozen_n)[:, : model.N_LIVE]

    best = -np.inf
    for state in sample_states:
        live = state.data[:, : model.N_LIVE]
        best = max(best, symmetric_lipschitz_estimate(live_rhs, live, weights=w_live))
    return best


@dataclass(frozen=True)
class StepBound:
    """Step-size bound with its two contributing terms."""

    alpha: float
    alpha_term: float
    cfl_term: float
    bound: float

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "alpha_term": self.alpha_term,
            "cfl_term": self.cfl_term,
            "bound": self.bound,
        }


def max_stable_dt(params: model.ModelParams, grid: Grid, field: CompartmentField,
                  alpha: float | None = None, cap: float = DEFAULT_DT_CAP,
                  frozen_n: float | None = None) -> StepBound:
    """Combined step bound: dt* = min(1/max(alpha, tiny), CFL term, cap).

    The CFL term is 2.785 * h^2 / (2 d * max_i N_i * nu_max), the RK4
    real-axis extent against the explicit-diffusion spectrum.
    """
    if alpha is None:
        alpha = estimate_alpha(params, grid, [field], frozen_n=frozen_n)
    tiny = 1e-12
    alpha_term = 1.0 / max(alpha, tiny)
    nu_max = params.max_nu()
    if frozen_n is not None:
        max_n = float(frozen_n)
    else:
        max_n = float(np.max(field.live_totals()))
    if nu_max > 0.0 and max_n > 0.0:
        h = grid.min_spacing
        cfl_term = RK4_REAL_AXIS * h**2 / (2.0 * grid.dim * max_n * nu_max)
    else:
        cfl_term = np.inf
    bound = min(alpha_term, cfl_term, cap)
    return StepBound(alpha=float(alpha), alpha_term=float(alpha_term),
                     cfl_term=float(cfl_term), bound=float(bound))


# ---------------------------------------------------------------------------
# Fixed-step simulation loop.

@dataclass
class TimeSeries:
    """Snapshots plus per-step diagnostics from one simulation run."""

    times: np.ndarray                  # (n_snapshots,)
    states: np.ndarray                 # (n_snapshots, n_nodes, n_comp)
    comp_names: tuple[str, ...]
    grid: Grid | None
    step_times: np.ndarray             # (n_steps + 1,)
    norms: np.ndarray                  # live-compartment discrete L2 per step
    live_total: np.ndarray
    augmented_total: np.ndarray
    warnings: list[str] = dc_field(default_factory=list)
    scenario: object = None

    def snapshot_index(self, t: float) -> int:
        hits = np.flatnonzero(np.isclose(self.times, t, rtol=0.0, atol=1e-9))
        if hits.size == 0:
            raise ValidationError(f"no snapshot at t={t!r}")
        return int(hits[0])


def _weighted_live_norm(data: np.ndarray, weights: np.ndarray) -> float:
    live = data[:, : model.N_LIVE]
    return float(np.sqrt(np.dot(weights, (live * live).sum(axis=1))))


def _check_counts(horizon: float, dt: float, snapshot_interval: float):
    problems = []
    n_steps = int(round(horizon / dt)) if horizon > 0 else 0
    if horizon > 0 and abs(n_steps * dt - horizon) > 1e-9 * max(1.0, horizon):
        problems.append(f"dt={dt!r} does not divide horizon={horizon!r}")
    snap_every = int(round(snapshot_interval / dt)) if snapshot_interval > 0 else 0
    if snapshot_interval > 0 and (
        snap_every < 1
        or abs(snap_every * dt - snapshot_interval) > 1e-9 * max(1.0, snapshot_interval)
    ):
        problems.append(
            f"snapshot_interval={snapshot_interval!r} is not a positive multiple of dt={dt!r}"
        )
    if problems:
        raise ValidationError(problems)
    return n_steps, max(snap_every, 1)


def simulate(scenario: "Scenario", alpha: float | None = None) -> TimeSeries:
    """Fixed-step integration of a scenario, recording snapshots and diagnostics.

    Guard violations warn by default and raise GuardViolation under the
    scenario's strict flag. A non-finite state aborts with the step index
    and offending compartment.
    """
    if scenario.model == "sir":
        return _simulate_sir(scenario)

    grid = scenario.grid
    params = scenario.params
    params.require_valid()
    control = scenario.step_control()
    dt = control.dt
    n_steps, snap_every = _check_counts(scenario.horizon, dt, scenario.snapshot_interval)
    frozen_n = scenario.frozen_n

    data = np.array(scenario.initial_data, dtype=float)
    field = CompartmentField(data=data, grid=grid)
    run_warnings: list[str] = []

    if control.guard_alpha or control.guard_cfl:
        if alpha is None and not control.guard_alpha:
            alpha = 0.0  # skip the (expensive) estimate when its guard is off
        bound = max_stable_dt(params, grid, field, alpha=alpha, frozen_n=frozen_n)
        msgs = []
        if control.guard_alpha and dt > bound.alpha_term:
            msgs.append(
                f"dt={dt:g} exceeds one-sided Lipschitz bound 1/alpha={bound.alpha_term:g}"
            )
        if control.guard_cfl and dt > bound.cfl_term:
            msgs.append(f"dt={dt:g} exceeds diffusion CFL bound {bound.cfl_term:g}")
        if msgs:
            if control.strict:
                raise GuardViolation("; ".join(msgs))
            for m in msgs:
                run_warnings.append(m)
                warnings.warn(m, RuntimeWarning, stacklevel=2)

    stepper = _ARRAY_STEPPERS[scenario.integrator]
    weights = grid.quad_weights
    neg_floor = -control.negativity_tolerance * max(float(np.max(data)), 1.0)

    times = [0.0]
    snaps = [data.copy()]
    step_times = np.empty(n_steps + 1)
    norms = np.empty(n_steps + 1)
    live = np.empty(n_steps + 1)
    aug = np.empty(n_steps + 1)

    def record(idx: int, t: float, d: np.ndarray):
        step_times[idx] = t
        norms[idx] = _weighted_live_norm(d, weights)
        live[idx] = float(np.dot(weights, model.live_totals(d)))
        aug[idx] = float(np.dot(weights, d.sum(axis=1)))

    record(0, 0.0, data)
    cur = data
    neg_warned = False
    for step in range(1, n_steps + 1):
        t_prev = (step - 1) * dt
        # overflow in a diverging run is detected below and reported as a
        # structured abort; numpy's elementwise warnings only add noise
        with np.errstate(over="ignore", invalid="ignore"):
            new_data = stepper(t_prev, cur, grid, dt, params, frozen_n)
        if not np.isfinite(new_data).all():
            bad = np.argwhere(~np.isfinite(new_data))[0]
            err = NumericalAbort(step, step * dt, model.COMPARTMENTS[bad[1]])
            err.norms = norms[:step].tolist()  # partial sequence for monitors
            raise err
        if control.clamp:
            clipped = np.clip(new_data, 0.0, None)
            lost = float(np.dot(weights, (clipped - new_data).sum(axis=1)))
            if lost != 0.0:
                run_warnings.append(f"step {step}: clamped mass {lost:g}")
            new_data = clipped
        elif not neg_warned and float(np.min(new_data)) < neg_floor:
            msg = (
                f"step {step}: compartment value below negativity tolerance "
                f"({float(np.min(new_data)):g} < {neg_floor:g})"
            )
            run_warnings.append(msg)
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
            neg_warned = True
        cur = new_data
        record(step, step * dt, new_data)
        if step % snap_every == 0:
            times.append(step * dt)
            snaps.append(new_data.copy())

    ts = TimeSeries(
        times=np.array(times),
        states=np.stack(snaps, axis=0),
        comp_names=model.COMPARTMENTS,
        grid=grid,
        step_times=step_times,
        norms=norms,
        live_total=live,
        augmented_total=aug,
        warnings=run_warnings,
    )
    ts.scenario = scenario
    return ts


def _simulate_sir(scenario: "Scenario") -> TimeSeries:
    params = scenario.params
    params.require_valid()
    control = scenario.step_control()
    dt = control.dt
    n_steps, snap_every = _check_counts(scenario.horizon, dt, scenario.snapshot_interval)
    if scenario.integrator == "imex":
        raise UnsupportedOperation("IMEX integrator is undefined for the SIR model")
    inc = rk4_increment if scenario.integrator == "rk4" else euler_increment
    f = lambda t, y: model.sir_terms(y, params)

    y = np.array(scenario.initial_data, dtype=float)
    times = [0.0]
    snaps = [y.copy()]
    step_times = np.empty(n_steps + 1)
    norms = np.empty(n_steps + 1)
    totals = np.empty(n_steps + 1)
    step_times[0] = 0.0
    norms[0] = float(np.linalg.norm(y))
    totals[0] = float(y.sum())
    for step in range(1, n_steps + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            y = inc(f, (step - 1) * dt, y, dt)
        if not np.isfinite(y).all():
            bad = ("s", "i", "r")[int(np.flatnonzero(~np.isfinite(y))[0])]
            raise NumericalAbort(step, step * dt, bad)
        step_times[step] = step * dt
        norms[step] = float(np.linalg.norm(y))
        totals[step] = float(y.sum())
        if step % snap_every == 0:
            times.append(step * dt)
            snaps.append(y.copy())

    ts = TimeSeries(
        times=np.array(times),
        states=np.stack(snaps, axis=0)[:, None, :],
        comp_names=("s", "i", "r"),
        grid=None,
        step_times=step_times,
        norms=norms,
        live_total=totals,
        augmented_total=totals.copy(),
    )
    ts.scenario = scenario
    return ts
