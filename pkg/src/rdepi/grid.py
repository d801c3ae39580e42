"""Structured 1D/2D grids, compartment fields, and the no-flux Laplacian.

Boundary conditions are homogeneous Neumann via mirror ghost nodes
(u_{-1} := u_1), so the trapezoid-weighted sum of the Laplacian vanishes
for every field: no population leaves the domain.

The population-weighted diffusion operator uses face-averaged totals,
div(N nu grad u) ~ (F_{i+1/2} - F_{i-1/2})/h with
F_{i+1/2} = nu * (N_i + N_{i+1})/2 * (u_{i+1} - u_i)/h.
For spatially uniform N this is identical to N * nu * laplacian(u); for
varying N it keeps the discrete mass balance exact, which the pointwise
placement N_i * nu * laplacian(u)_i does not.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from functools import cached_property

import numpy as np

from . import model
from .errors import ValidationError


@dataclass(frozen=True)
class Grid:
    """Structured interval (dim=1) or rectangle (dim=2) with region labels.

    Nodes are stored row-major: in 2D, node index = iy * nodes_x + ix.
    """

    dim: int
    extent_x: float
    nodes_x: int
    extent_y: float | None = None
    nodes_y: int | None = None
    region_labels: np.ndarray | None = None

    def __post_init__(self):
        problems = []
        if self.dim not in (1, 2):
            problems.append(f"dim must be 1 or 2, got {self.dim}")
        if not (np.isfinite(self.extent_x) and self.extent_x > 0):
            problems.append("extent_x must be positive and finite")
        if self.nodes_x < 3:
            problems.append(f"nodes_x must be >= 3, got {self.nodes_x}")
        if self.dim == 2:
            if self.extent_y is None or not (np.isfinite(self.extent_y) and self.extent_y > 0):
                problems.append("extent_y must be positive and finite for dim=2")
            if self.nodes_y is None or self.nodes_y < 3:
                problems.append(f"nodes_y must be >= 3 for dim=2, got {self.nodes_y}")
        if problems:
            raise ValidationError(problems)
        labels = self.region_labels
        if labels is None:
            labels = np.zeros(self.n_nodes, dtype=np.int64)
        else:
            labels = np.asarray(labels, dtype=np.int64).copy()
            if labels.shape != (self.n_nodes,):
                raise ValidationError(
                    f"region_labels has shape {labels.shape}, expected ({self.n_nodes},)"
                )
        labels.setflags(write=False)
        object.__setattr__(self, "region_labels", labels)

    @property
    def n_nodes(self) -> int:
        if self.dim == 1:
            return self.nodes_x
        return self.nodes_x * self.nodes_y

    @property
    def shape(self) -> tuple[int, ...]:
        if self.dim == 1:
            return (self.nodes_x,)
        return (self.nodes_y, self.nodes_x)

    @property
    def spacing(self) -> float:
        return self.extent_x / (self.nodes_x - 1)

    @property
    def spacing_y(self) -> float:
        if self.dim == 1:
            raise ValidationError("spacing_y undefined on a 1D grid")
        return self.extent_y / (self.nodes_y - 1)

    @property
    def min_spacing(self) -> float:
        if self.dim == 1:
            return self.spacing
        return min(self.spacing, self.spacing_y)

    @cached_property
    def x(self) -> np.ndarray:
        """Flattened x coordinate per node."""
        xs = np.linspace(0.0, self.extent_x, self.nodes_x)
        if self.dim == 1:
            return xs
        return np.tile(xs, self.nodes_y)

    @cached_property
    def y(self) -> np.ndarray:
        if self.dim == 1:
            raise ValidationError("y coordinates undefined on a 1D grid")
        ys = np.linspace(0.0, self.extent_y, self.nodes_y)
        return np.repeat(ys, self.nodes_x)

    @cached_property
    def quad_weights(self) -> np.ndarray:
        """Trapezoid quadrature weights per node (half weight on boundaries)."""
        wx = np.full(self.nodes_x, self.spacing)
        wx[0] *= 0.5
        wx[-1] *= 0.5
        if self.dim == 1:
            wx.setflags(write=False)
            return wx
        wy = np.full(self.nodes_y, self.spacing_y)
        wy[0] *= 0.5
        wy[-1] *= 0.5
        w = np.outer(wy, wx).ravel()
        w.setflags(write=False)
        return w


def _lap_1d(u: np.ndarray, h: float) -> np.ndarray:
    """Second central difference with mirror ghosts, along axis 0."""
    out = np.empty_like(u)
    out[1:-1] = (u[2:] - 2.0 * u[1:-1] + u[:-2]) / h**2
    out[0] = 2.0 * (u[1] - u[0]) / h**2
    out[-1] = 2.0 * (u[-2] - u[-1]) / h**2
    return out


def laplacian(values, grid: Grid) -> np.ndarray:
    """Discrete Laplacian with no-flux (mirror ghost) boundaries."""
    v = np.asarray(values, dtype=float)
    if v.shape != (grid.n_nodes,):
        raise ValidationError(
            f"values has shape {v.shape}, expected ({grid.n_nodes},)"
        )
    if grid.dim == 1:
        return _lap_1d(v, grid.spacing)
    v2 = v.reshape(grid.shape)
    out = _lap_1d(v2.T, grid.spacing).T + _lap_1d(v2, grid.spacing_y)
    return out.ravel()


def _face_div_1d(u: np.ndarray, n_total: np.ndarray, nu: float, h: float) -> np.ndarray:
    """div(nu * N * grad u) in flux form along axis 0, zero boundary flux."""
    kappa = 0.5 * (n_total[1:] + n_total[:-1]) * nu
    flux = kappa * (u[1:] - u[:-1]) / h
    out = np.empty_like(u)
    out[1:-1] = (flux[1:] - flux[:-1]) / h
    out[0] = 2.0 * flux[0] / h
    out[-1] = -2.0 * flux[-1] / h
    return out


def varcoef_diffusion(values, n_total, nu: float, grid: Grid) -> np.ndarray:
    """Population-weighted diffusion term for one compartment.

    ``n_total`` is either a per-node array (stage-consistent mode) or a
    scalar (frozen-N verification mode, exactly N * nu * laplacian).
    """
    if nu < 0:
        raise ValidationError(f"diffusivity must be nonnegative, got {nu}")
    v = np.asarray(values, dtype=float)
    if v.shape != (grid.n_nodes,):
        raise ValidationError(
            f"values has shape {v.shape}, expected ({grid.n_nodes},)"
        )
    if np.ndim(n_total) == 0:
        return float(n_total) * nu * laplacian(v, grid)
    n = np.asarray(n_total, dtype=float)
    if n.shape != (grid.n_nodes,):
        raise ValidationError(
            f"n_total has shape {n.shape}, expected ({grid.n_nodes},)"
        )
    if grid.dim == 1:
        return _face_div_1d(v, n, nu, grid.spacing)
    v2 = v.reshape(grid.shape)
    n2 = n.reshape(grid.shape)
    out = _face_div_1d(v2.T, n2.T, nu, grid.spacing).T
    out += _face_div_1d(v2, n2, nu, grid.spacing_y)
    return out.ravel()


def discrete_integral(values, grid: Grid) -> float:
    """Trapezoid-consistent integral of a per-node scalar field."""
    v = np.asarray(values, dtype=float)
    if v.shape != (grid.n_nodes,):
        raise ValidationError(
            f"values has shape {v.shape}, expected ({grid.n_nodes},)"
        )
    return float(np.dot(grid.quad_weights, v))


@dataclass(frozen=True)
class CompartmentField:
    """Per-node compartment storage (n_nodes, 9), row-major over the grid."""

    data: np.ndarray
    grid: Grid

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.shape != (self.grid.n_nodes, model.N_SLOTS):
            raise ValidationError(
                f"field data has shape {data.shape}, expected "
                f"({self.grid.n_nodes}, {model.N_SLOTS})"
            )
        if not np.isfinite(data).all():
            bad = np.argwhere(~np.isfinite(data))[0]
            raise ValidationError(
                f"non-finite entry in compartment {model.COMPARTMENTS[bad[1]]!r} "
                f"at node {bad[0]}"
            )
        object.__setattr__(self, "data", data)

    def get(self, name: str) -> np.ndarray:
        return self.data[:, model.IDX[name]]

    def live_totals(self) -> np.ndarray:
        return model.live_totals(self.data)

    def replace(self, data: np.ndarray) -> "CompartmentField":
        return CompartmentField(data=data, grid=self.grid)


def diffusion_term(field: CompartmentField, compartment: str, nu: float,
                   frozen_n: float | None = None) -> np.ndarray:
    """Diffusion contribution for one compartment of a field.

    Uses the live total of the same field argument (stage-consistent N)
    unless ``frozen_n`` pins N to a constant for verification runs.
    """
    if compartment not in model.COMPARTMENTS:
        raise ValidationError(f"unknown compartment {compartment!r}")
    n_total = frozen_n if frozen_n is not None else field.live_totals()
    return varcoef_diffusion(field.get(compartment), n_total, nu, field.grid)
