"""Compartment states, rate constants, and pointwise reaction terms.

Seven live compartments (S, Q, E, A, I, D, R) plus two cumulative death
ledgers. Death outflows are booked into the ledgers, so the nine-slot
total is conserved exactly by the reaction terms: every transfer appears
once with a plus sign and once with a minus sign, which makes the closed
system machine-checkable.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

# Column order of every (n_nodes, 9) state array in the package.
COMPARTMENTS = ("s", "q", "e", "a", "i", "d", "r", "cum_death_i", "cum_death_d")
LIVE_COMPARTMENTS = COMPARTMENTS[:7]
IDX = {name: k for k, name in enumerate(COMPARTMENTS)}
N_SLOTS = len(COMPARTMENTS)
N_LIVE = len(LIVE_COMPARTMENTS)

# Compartments that carry a diffusivity (Q, D, R and the ledgers do not move).
DIFFUSING = ("s", "e", "a", "i")


@dataclass(frozen=True)
class NodeState:
    """Population densities at a single grid node, plus death ledgers."""

    s: float = 0.0
    q: float = 0.0
    e: float = 0.0
    a: float = 0.0
    i: float = 0.0
    d: float = 0.0
    r: float = 0.0
    cum_death_i: float = 0.0
    cum_death_d: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in COMPARTMENTS], dtype=float)

    @classmethod
    def from_array(cls, arr) -> "NodeState":
        arr = np.asarray(arr, dtype=float)
        if arr.shape != (N_SLOTS,):
            raise ValidationError(f"node state needs {N_SLOTS} slots, got shape {arr.shape}")
        return cls(**{name: float(arr[k]) for k, name in enumerate(COMPARTMENTS)})

    def check_finite(self):
        problems = [
            f"field {name!r} is not finite"
            for name in COMPARTMENTS
            if not np.isfinite(getattr(self, name))
        ]
        if problems:
            raise ValidationError(problems)


@dataclass(frozen=True)
class ModelParams:
    """Rate constants and diffusivities of the seven-compartment model.

    All rates are per day; diffusivities are length^2 per (person * day).
    ``frac_sympt`` is the fraction of exposed individuals that become
    symptomatic (the remainder become asymptomatic carriers).
    """

    theta: float = 0.0       # transmission rate (per person * day)
    b: float = 0.0           # asymptomatic infectiousness discount
    c: float = 0.0           # quarantine entry rate
    delta: float = 0.0       # quarantine release rate
    epsilon: float = 0.0     # exposed progression rate
    frac_sympt: float = 0.0  # fraction of E becoming symptomatic
    g: float = 0.0           # A -> D rate
    beta_rec: float = 0.0    # A -> R recovery rate
    j_rec: float = 0.0       # I -> R recovery rate
    l_death: float = 0.0     # I death rate
    h1: float = 0.0          # I -> D hospitalization rate
    m_death: float = 0.0     # D death rate
    mu: float = 0.0          # D -> R rate
    nu_s: float = 0.0        # diffusivities
    nu_e: float = 0.0
    nu_a: float = 0.0
    nu_i: float = 0.0

    def problems(self) -> list[str]:
        msgs = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if not np.isfinite(v):
                msgs.append(f"parameter {f.name!r} is not finite")
            elif not 0.0 <= v <= 1.0:
                msgs.append(f"parameter {f.name!r} = {v!r} outside [0, 1]")
        return msgs

    def require_valid(self):
        msgs = self.problems()
        if msgs:
            raise ValidationError(msgs)

    def nu_for(self, name: str) -> float:
        return getattr(self, "nu_" + name)

    def max_nu(self) -> float:
        return max(self.nu_s, self.nu_e, self.nu_a, self.nu_i)


@dataclass(frozen=True)
class SirState:
    s: float = 0.0
    i: float = 0.0
    r: float = 0.0


@dataclass(frozen=True)
class SirParams:
    beta: float = 0.0   # transmission (per person * day); distinct from beta_rec
    gamma: float = 0.0  # recovery rate (per day)

    def require_valid(self):
        msgs = []
        for name in ("beta", "gamma"):
            v = getattr(self, name)
            if not np.isfinite(v):
                msgs.append(f"parameter {name!r} is not finite")
            elif v < 0:
                msgs.append(f"parameter {name!r} = {v!r} is negative")
        if msgs:
            raise ValidationError(msgs)


def reaction_terms(data: np.ndarray, params: ModelParams) -> np.ndarray:
    """Vectorized reaction right-hand side over (..., 9) state arrays.

    Each transfer term is computed once and used with opposite signs on
    both sides, so the nine-slot sum of the result is exactly zero in
    floating point.
    """
    data = np.asarray(data, dtype=float)
    s = data[..., 0]
    q = data[..., 1]
    e = data[..., 2]
    a = data[..., 3]
    i = data[..., 4]
    d = data[..., 5]

    incidence = params.theta * s * (i + params.b * a)
    s_to_q = params.c * s
    q_to_s = params.delta * q
    e_to_a = params.epsilon * (1.0 - params.frac_sympt) * e
    e_to_i = params.epsilon * params.frac_sympt * e
    a_to_d = params.g * a
    a_to_r = params.beta_rec * a
    i_to_r = params.j_rec * i
    i_death = params.l_death * i
    i_to_d = params.h1 * i
    d_death = params.m_death * d
    d_to_r = params.mu * d

    out = np.empty_like(data)
    out[..., 0] = -incidence - s_to_q + q_to_s
    out[..., 1] = s_to_q - q_to_s
    out[..., 2] = incidence - e_to_a - e_to_i
    out[..., 3] = e_to_a - a_to_d - a_to_r
    out[..., 4] = e_to_i - i_to_r - i_death - i_to_d
    out[..., 5] = a_to_d + i_to_d - d_death - d_to_r
    out[..., 6] = a_to_r + i_to_r + d_to_r
    out[..., 7] = i_death
    out[..., 8] = d_death
    return out


def reaction_rhs(state: NodeState, params: ModelParams) -> NodeState:
    """Pointwise reaction derivative at one node (no diffusion)."""
    state.check_finite()
    params.require_valid()
    return NodeState.from_array(reaction_terms(state.as_array(), params))


def sir_terms(y: np.ndarray, params: SirParams) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    incidence = params.beta * y[..., 0] * y[..., 1]
    recovery = params.gamma * y[..., 1]
    out = np.empty_like(y)
    out[..., 0] = -incidence
    out[..., 1] = incidence - recovery
    out[..., 2] = recovery
    return out


def sir_rhs(state: SirState, params: SirParams) -> SirState:
    arr = np.array([state.s, state.i, state.r], dtype=float)
    if not np.isfinite(arr).all():
        bad = [("s", "i", "r")[k] for k in np.flatnonzero(~np.isfinite(arr))]
        raise ValidationError([f"field {name!r} is not finite" for name in bad])
    params.require_valid()
    ds, di, dr = sir_terms(arr, params)
    return SirState(s=float(ds), i=float(di), r=float(dr))


def total_population(state) -> float:
    """Sum of the seven live compartments (ledgers excluded)."""
    if isinstance(state, NodeState):
        arr = state.as_array()
    else:
        arr = np.asarray(state, dtype=float)
    return float(arr[..., :N_LIVE].sum())


def live_totals(data: np.ndarray) -> np.ndarray:
    """Per-node live population N over an (n_nodes, 9) array."""
    return np.asarray(data, dtype=float)[..., :N_LIVE].sum(axis=-1)
