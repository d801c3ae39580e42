"""Time steppers, step-size guards, and the simulation loop."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rdepi.errors import (
    GuardViolation,
    NumericalAbort,
    UnsupportedOperation,
    ValidationError,
)
from rdepi.grid import CompartmentField, Grid, varcoef_diffusion
from rdepi.integrators import (
    RK4_REAL_AXIS,
    RK4_TABLEAU,
    ButcherTableau,
    StepControl,
    estimate_alpha,
    euler_increment,
    euler_step,
    imex_euler_step,
    max_stable_dt,
    rk4_increment,
    rk4_step,
    simulate,
    symmetric_lipschitz_estimate,
    tableau_increment,
)
from rdepi.model import IDX, N_LIVE, N_SLOTS, ModelParams
from rdepi.scenario import load_scenario, preset

from conftest import params_with


def _field(grid, **cols):
    data = np.zeros((grid.n_nodes, N_SLOTS))
    for name, vals in cols.items():
        data[:, IDX[name]] = vals
    return CompartmentField(data=data, grid=grid)


def _scenario(doc_overrides=None, **initial):
    doc = {
        "schema_version": 1,
        "name": "unit",
        "model": "covid",
        "grid": {"dim": 1, "extent_x": 1.0, "nodes_x": 5},
        "params": {},
        "initial": {"per_node": {k: list(v) for k, v in initial.items()}},
        "horizon": 1.0,
        "dt": 0.1,
        "integrator": "rk4",
    }
    doc.update(doc_overrides or {})
    return load_scenario(doc)


# ---------------------------------------------------------------------------
# Butcher tableau and scalar kernels.

def test_rk4_tableau_coefficients():
    np.testing.assert_array_equal(RK4_TABLEAU.b, [1 / 6, 1 / 3, 1 / 3, 1 / 6])
    np.testing.assert_array_equal(RK4_TABLEAU.c, [0.0, 0.5, 0.5, 1.0])
    assert RK4_TABLEAU.a[1, 0] == 0.5
    assert RK4_TABLEAU.a[2, 1] == 0.5
    assert RK4_TABLEAU.a[3, 2] == 1.0


def test_tableau_validation():
    with pytest.raises(ValidationError, match="sum to 1"):
        ButcherTableau(a=RK4_TABLEAU.a, b=np.array([0.25, 0.25, 0.25, 0.05]),
                       c=RK4_TABLEAU.c)
    with pytest.raises(ValidationError, match="row sums"):
        ButcherTableau(a=np.zeros((4, 4)), b=RK4_TABLEAU.b, c=RK4_TABLEAU.c)


def test_rk4_scalar_stability_polynomial():
    # y' = -y, dt = 0.1: R(-0.1) = 1 - 0.1 + 0.005 - 1/6000 + 1/240000
    #                            = 0.9048375 exactly, by hand
    f = lambda t, y: -y
    out = rk4_increment(f, 0.0, np.array(1.0), 0.1)
    assert abs(float(out) - 0.9048375) < 1e-12


def test_rk4_increment_matches_generic_tableau():
    # the hand-unrolled kernel must transcribe the tableau exactly
    rng = np.random.default_rng(9)
    A = rng.normal(size=(4, 4))
    f = lambda t, y: A @ y + np.sin(t)
    y0 = rng.normal(size=4)
    a = rk4_increment(f, 0.3, y0, 0.05)
    b = tableau_increment(f, 0.3, y0, 0.05)
    np.testing.assert_allclose(a, b, rtol=1e-14, atol=1e-14)


def test_euler_increment_scalar():
    f = lambda t, y: -y
    assert float(euler_increment(f, 0.0, np.array(1.0), 0.1)) == pytest.approx(0.9)


def test_rk4_increment_linear_decay_order():
    # error vs exp(-dt) shrinks by ~32x per halving (5th-order local error)
    f = lambda t, y: -y
    errs = [abs(float(rk4_increment(f, 0.0, np.array(1.0), dt)) - math.exp(-dt))
            for dt in (0.2, 0.1, 0.05)]
    assert 4.5 < math.log2(errs[0] / errs[1]) < 5.5
    assert 4.5 < math.log2(errs[1] / errs[2]) < 5.5


# ---------------------------------------------------------------------------
# Field steppers.

def test_rk4_step_pure_decay_field():
    # j_rec = 1 makes dI/dt = -I at every node
    g = Grid(dim=1, extent_x=1.0, nodes_x=5)
    f = _field(g, i=np.full(5, 2.0))
    out = rk4_step(0.0, f, 0.1, params_with(j_rec=1.0))
    np.testing.assert_allclose(out.get("i"), 2.0 * 0.9048375, atol=1e-12)
    np.testing.assert_allclose(out.get("r"), 2.0 - 2.0 * 0.9048375, atol=1e-6)


def test_steppers_reject_nonpositive_dt():
    g = Grid(dim=1, extent_x=1.0, nodes_x=3)
    f = _field(g, s=np.ones(3))
    for step in (rk4_step, euler_step, imex_euler_step):
        with pytest.raises(ValidationError, match="dt"):
            step(0.0, f, 0.0, params_with())


def test_imex_rejects_2d():
    g = Grid(dim=2, extent_x=1.0, nodes_x=3, extent_y=1.0, nodes_y=3)
    f = CompartmentField(data=np.zeros((9, N_SLOTS)), grid=g)
    with pytest.raises(UnsupportedOperation, match="1D"):
        imex_euler_step(0.0, f, 0.1, params_with(nu_s=0.1))


def test_imex_matches_dense_backward_euler_oracle():
    # oracle: dense solve of (I - dt*L) u = u0 with L assembled column
    # by column from the diffusion operator itself
    rng = np.random.default_rng(21)
    n = 17
    g = Grid(dim=1, extent_x=1.0, nodes_x=n)
    data = np.zeros((n, N_SLOTS))
    data[:, IDX["s"]] = 1.0 + 0.5 * np.cos(np.pi * g.x)
    data[:, IDX["i"]] = rng.uniform(0.1, 0.6, n)
    params = params_with(nu_s=0.02, nu_i=0.05)
    f = CompartmentField(data=data, grid=g)
    dt = 0.01
    out = imex_euler_step(0.0, f, dt, params)
    pop = f.live_totals()
    for name, nu in (("s", 0.02), ("i", 0.05)):
        L = np.zeros((n, n))
        for k in range(n):
            e = np.zeros(n)
            e[k] = 1.0
            L[:, k] = varcoef_diffusion(e, pop, nu, g)
        expected = np.linalg.solve(np.eye(n) - dt * L, data[:, IDX[name]])
        np.testing.assert_allclose(out.get(name), expected, rtol=1e-13,
                                   atol=1e-13)


def test_imex_discrete_maximum_principle():
    # implicit diffusion of an M-matrix system: no new extrema, ever,
    # even far beyond the explicit stability limit
    g = Grid(dim=1, extent_x=1.0, nodes_x=41)
    data = np.zeros((41, N_SLOTS))
    data[:, IDX["s"]] = np.where(g.x < 0.5, 10.0, 1.0)
    f = CompartmentField(data=data, grid=g)
    params = params_with(nu_s=0.5)
    for _ in range(20):
        f = imex_euler_step(0.0, f, 5.0, params, frozen_n=1.0)
        assert f.get("s").min() >= 1.0 - 1e-12
        assert f.get("s").max() <= 10.0 + 1e-12


def test_imex_reaction_part_is_explicit_euler():
    g = Grid(dim=1, extent_x=1.0, nodes_x=5)
    f = _field(g, i=np.full(5, 3.0))
    out = imex_euler_step(0.0, f, 0.1, params_with(j_rec=0.5))
    np.testing.assert_allclose(out.get("i"), 3.0 * (1.0 - 0.05), atol=1e-14)


# ---------------------------------------------------------------------------
# One-sided Lipschitz estimate and step bound.

def test_lipschitz_estimate_linear_decay():
    f = lambda y: -0.7 * y
    est = symmetric_lipschitz_estimate(f, np.ones(4))
    assert est == pytest.approx(-0.7, abs=1e-6)


def test_lipschitz_estimate_matches_dense_eig_oracle():
    rng = np.random.default_rng(13)
    A = rng.normal(size=(6, 6))
    w = rng.uniform(0.5, 2.0, 6)
    f = lambda y: A @ y
    est = symmetric_lipschitz_estimate(f, rng.normal(size=6), weights=w)
    sw = np.sqrt(w)
    B = (sw[:, None] * A) / sw[None, :]
    expected = float(np.linalg.eigvalsh(0.5 * (B + B.T)).max())
    assert est == pytest.approx(expected, abs=1e-6)


def test_alpha_pure_diffusion_nonpositive():
    # diffusion is dissipative in the weighted inner product
    g = Grid(dim=1, extent_x=1.0, nodes_x=9)
    f = _field(g, s=1.0 + 0.5 * np.cos(np.pi * g.x))
    alpha = estimate_alpha(params_with(nu_s=0.02), g, [f], frozen_n=1.0)
    assert alpha <= 1e-8


def test_alpha_single_transfer_analytic_oracle():
    # dI/dt = -j I, dR/dt = +j I: the symmetrized 2x2 block
    # [[-j, j/2], [j/2, 0]] has top eigenvalue j (sqrt(2) - 1) / 2
    g = Grid(dim=1, extent_x=1.0, nodes_x=5)
    f = _field(g, i=np.full(5, 1.0))
    alpha = estimate_alpha(params_with(j_rec=0.4), g, [f])
    assert alpha == pytest.approx(0.2 * (math.sqrt(2.0) - 1.0), abs=1e-6)


def test_alpha_is_max_over_samples():
    g = Grid(dim=1, extent_x=1.0, nodes_x=5)
    params = params_with(theta=0.5, epsilon=0.3, frac_sympt=0.5)
    small = _field(g, s=np.full(5, 1.0), i=np.full(5, 0.1))
    big = _field(g, s=np.full(5, 100.0), i=np.full(5, 10.0))
    a_small = estimate_alpha(params, g, [small])
    a_big = estimate_alpha(params, g, [big])
    both = estimate_alpha(params, g, [small, big])
    assert both == pytest.approx(max(a_small, a_big), rel=1e-9)
    with pytest.raises(ValidationError, match="sample"):
        estimate_alpha(params, g, [])


def test_max_stable_dt_formula():
    g = Grid(dim=1, extent_x=1.0, nodes_x=11)  # h = 0.1
    f = _field(g, s=np.full(11, 5.0))
    bound = max_stable_dt(params_with(nu_s=0.02), g, f, alpha=0.25)
    assert bound.alpha_term == pytest.approx(4.0)
    # 2.785 * h^2 / (2 * d * N_max * nu_max) with N_max = 5, by hand
    assert bound.cfl_term == pytest.approx(RK4_REAL_AXIS * 0.01 / (2 * 5.0 * 0.02))
    assert bound.bound == pytest.approx(min(4.0, bound.cfl_term))
    d = bound.to_dict()
    assert set(d) == {"alpha", "alpha_term", "cfl_term", "bound"}


def test_max_stable_dt_negative_alpha_and_no_diffusion():
    g = Grid(dim=1, extent_x=1.0, nodes_x=5)
    f = _field(g, s=np.ones(5))
    bound = max_stable_dt(params_with(), g, f, alpha=-3.0, cap=100.0)
    assert bound.cfl_term == math.inf
    assert bound.bound == 100.0  # cap binds when nothing else does


def test_max_stable_dt_2d_dimension_factor():
    g1 = Grid(dim=1, extent_x=1.0, nodes_x=11)
    g2 = Grid(dim=2, extent_x=1.0, nodes_x=11, extent_y=1.0, nodes_y=11)
    f1 = _field(g1, s=np.full(11, 1.0))
    f2 = CompartmentField(data=np.tile(f1.data, (11, 1)), grid=g2)
    b1 = max_stable_dt(params_with(nu_s=0.02), g1, f1, alpha=0.0)
    b2 = max_stable_dt(params_with(nu_s=0.02), g2, f2, alpha=0.0)
    assert b2.cfl_term == pytest.approx(b1.cfl_term / 2.0)


# ---------------------------------------------------------------------------
# Simulation loop.

def test_simulate_snapshot_cadence_and_diagnostics():
    sc = _scenario({"horizon": 1.0, "dt": 0.1, "snapshot_interval": 0.5},
                   s=np.full(5, 2.0))
    ts = simulate(sc)
    np.testing.assert_allclose(ts.times, [0.0, 0.5, 1.0])
    assert ts.states.shape == (3, 5, N_SLOTS)
    assert ts.step_times.shape == (11,)
    assert ts.norms.shape == (11,)
    np.testing.assert_allclose(ts.states[0, :, IDX["s"]], 2.0)
    assert ts.snapshot_index(0.5) == 1
    with pytest.raises(ValidationError, match="snapshot"):
        ts.snapshot_index(0.05)


def test_simulate_rejects_nondividing_dt():
    with pytest.raises(ValidationError, match="dt"):
        _scenario({"dt": 0.3}, s=np.ones(5))
    with pytest.raises(ValidationError, match="snapshot_interval"):
        _scenario({"snapshot_interval": 0.25}, s=np.ones(5))


def test_simulate_guard_warns_then_strict_raises():
    doc = {"horizon": 1.0, "dt": 0.5,
           "params": {"nu_s": 0.5}}  # CFL bound far below dt = 0.5
    sc = _scenario(doc, s=np.full(5, 10.0))
    with pytest.warns(RuntimeWarning, match="CFL"):
        ts = simulate(sc)
    assert any("CFL" in w for w in ts.warnings)

    strict = _scenario({**doc, "flags": {"strict_guards": True}},
                       s=np.full(5, 10.0))
    with pytest.raises(GuardViolation, match="CFL"):
        simulate(strict)


def test_simulate_blowup_aborts_with_step_and_compartment():
    # dt far above the diffusion limit on oscillatory data
    sc = _scenario(
        {"horizon": 50.0, "dt": 1.0, "params": {"nu_s": 0.5},
         "flags": {"guard_alpha": False, "guard_cfl": False, "frozen_n": 3.0}},
        s=[1.0, 3.0, 1.0, 3.0, 1.0],
    )
    with pytest.raises(NumericalAbort) as exc, np.errstate(all="ignore"):
        with pytest.warns(RuntimeWarning):
            simulate(sc)
    err = exc.value
    assert err.compartment == "s"
    assert err.step_index >= 1
    assert "step" in str(err) and "'s'" in str(err)
    assert len(err.norms) == err.step_index  # partial norm trace attached


def test_simulate_negativity_warning_and_clamp_mode():
    # explicit Euler overshoot drives I negative: dI = -1.0*I with dt > 1
    doc = {"horizon": 4.0, "dt": 2.0, "integrator": "euler",
           "params": {"j_rec": 1.0}}
    sc = _scenario(doc, i=np.full(5, 1.0))
    with pytest.warns(RuntimeWarning, match="negativity"):
        ts = simulate(sc)
    assert any("negativity" in w for w in ts.warnings)

    clamped = _scenario({**doc, "flags": {"clamp_negative": True}},
                        i=np.full(5, 1.0))
    ts2 = simulate(clamped)
    assert ts2.states.min() >= 0.0
    assert any("clamped mass" in w for w in ts2.warnings)


def test_simulate_integrators_agree_on_smooth_problem():
    doc = {"horizon": 1.0, "dt": 0.01, "snapshot_interval": 1.0,
           "params": {"epsilon": 0.2, "frac_sympt": 0.5, "nu_e": 0.01}}
    init = {"e": 1.0 + 0.5 * np.cos(np.pi * np.linspace(0, 1, 5))}
    runs = {}
    for integ in ("rk4", "euler", "imex"):
        sc = _scenario({**doc, "integrator": integ}, **init)
        runs[integ] = simulate(sc).states[-1]
    assert np.max(np.abs(runs["rk4"] - runs["euler"])) < 1e-3
    assert np.max(np.abs(runs["rk4"] - runs["imex"])) < 1e-3


def test_simulate_sir_and_conservation():
    sc = preset("sir-demo")
    ts = simulate(sc)
    assert ts.grid is None
    assert ts.comp_names == ("s", "i", "r")
    totals = ts.states[:, 0, :].sum(axis=1)
    np.testing.assert_allclose(totals, totals[0], rtol=1e-12)
    # epidemic actually happens: I rises then falls
    i_series = ts.states[:, 0, 1]
    peak = int(np.argmax(i_series))
    assert 0 < peak < len(i_series) - 1


def test_simulate_sir_rejects_imex():
    sc = preset("sir-demo").with_overrides(integrator="imex")
    with pytest.raises(UnsupportedOperation, match="IMEX"):
        simulate(sc)


def test_step_control_validation():
    with pytest.raises(ValidationError, match="dt"):
        StepControl(dt=-1.0)
    ctl = StepControl(dt=0.1)
    assert ctl.guard_alpha and ctl.guard_cfl and not ctl.strict


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 0.2), st.integers(0, 2**32 - 1))
def test_rk4_step_preserves_augmented_total(dt, seed):
    rng = np.random.default_rng(seed)
    g = Grid(dim=1, extent_x=1.0, nodes_x=7)
    data = rng.uniform(0.0, 10.0, (7, N_SLOTS))
    f = CompartmentField(data=data, grid=g)
    params = ModelParams(theta=0.01, b=0.5, c=0.08, delta=0.005,
                         epsilon=0.3, frac_sympt=0.6, g=0.1, beta_rec=0.1,
                         j_rec=0.05, l_death=0.003, h1=0.3, m_death=0.008,
                         mu=0.1, nu_s=0.02, nu_e=0.02, nu_a=0.02, nu_i=0.02)
    w = g.quad_weights
    before = float(np.dot(w, f.data.sum(axis=1)))
    after_field = rk4_step(0.0, f, dt, params)
    after = float(np.dot(w, after_field.data.sum(axis=1)))
    assert after == pytest.approx(before, rel=1e-10)
