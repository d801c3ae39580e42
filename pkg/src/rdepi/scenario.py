"""Scenario documents: closed JSON schema, validation, and shipped presets.

A scenario bundles grid, parameters, initial field, horizon, step size,
integrator choice, and run flags. The schema is closed (unknown keys are
rejected) and versioned through ``schema_version``; validation enumerates
every problem it finds rather than stopping at the first.

Preset parameter values are calibration fixtures chosen by the
implementer to reproduce the qualitative targets of the shipped
regression suite (confirmed-hospitalized peak near day 15, corridor
spread with the adjacent region hit hardest). They are not published
ground truth.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass

import numpy as np

from . import model
from .errors import SchemaError, ValidationError
from .grid import Grid
from .integrators import StepControl

SCHEMA_VERSION = 1

_TOP_KEYS = {
    "schema_version", "name", "model", "grid", "params", "initial",
    "horizon", "dt", "integrator", "snapshot_interval", "flags",
}
_GRID_KEYS = {"dim", "extent_x", "nodes_x", "extent_y", "nodes_y", "regions"}
_REGION_KEYS = {"label", "x_min", "x_max", "y_min", "y_max"}
_FLAG_KEYS = {
    "frozen_n", "clamp_negative", "strict_guards", "negativity_tolerance",
    "guard_alpha", "guard_cfl",
}
_PARAM_KEYS = {f.name for f in model.ModelParams.__dataclass_fields__.values()}
_SIR_PARAM_KEYS = {"beta", "gamma"}
_INTEGRATORS = ("rk4", "euler", "imex")

_FLAG_DEFAULTS = {
    "frozen_n": None,
    "clamp_negative": False,
    "strict_guards": False,
    "negativity_tolerance": 1e-9,
    "guard_alpha": True,
    "guard_cfl": True,
}


@dataclass
class Scenario:
    """Validated, runnable configuration for one simulation."""

    name: str
    model: str                      # "covid" or "sir"
    grid: Grid | None
    params: object                  # ModelParams or SirParams
    initial_data: np.ndarray        # (n_nodes, 9) for covid, (3,) for sir
    horizon: float
    dt: float
    integrator: str
    snapshot_interval: float
    frozen_n: float | None
    clamp_negative: bool
    strict_guards: bool
    negativity_tolerance: float
    guard_alpha: bool
    guard_cfl: bool
    document: dict

    def step_control(self) -> StepControl:
        return StepControl(
            dt=self.dt,
            guard_alpha=self.guard_alpha,
            guard_cfl=self.guard_cfl,
            strict=self.strict_guards,
            negativity_tolerance=self.negativity_tolerance,
            clamp=self.clamp_negative,
        )

    def to_document(self) -> dict:
        return copy.deepcopy(self.document)

    def to_json(self) -> str:
        return json.dumps(self.document, indent=2, sort_keys=True)

    def with_overrides(self, **overrides) -> "Scenario":
        """New scenario with top-level document fields replaced.

        Flag overrides go under ``flags`` in the document; pass them as
        e.g. ``flags={"strict_guards": True}`` (merged, not replaced).
        """
        doc = self.to_document()
        flags = overrides.pop("flags", None)
        if flags:
            doc.setdefault("flags", {}).update(flags)
        doc.update(overrides)
        return load_scenario(doc)


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and np.isfinite(v)


def _check_unknown(obj: dict, allowed: set, where: str, errors: list):
    for key in obj:
        if key not in allowed:
            errors.append(f"{where}: unknown key {key!r}")


def _parse_grid(gdoc, errors: list) -> Grid | None:
    if not isinstance(gdoc, dict):
        errors.append("grid: must be an object")
        return None
    _check_unknown(gdoc, _GRID_KEYS, "grid", errors)
    dim = gdoc.get("dim", 1)
    if dim not in (1, 2):
        errors.append(f"grid.dim: must be 1 or 2, got {dim!r}")
        return None
    ok = True
    for key in ("extent_x", "nodes_x") + (("extent_y", "nodes_y") if dim == 2 else ()):
        v = gdoc.get(key)
        if key.startswith("extent"):
            if not (_is_num(v) and v > 0):
                errors.append(f"grid.{key}: must be a positive number, got {v!r}")
                ok = False
        else:
            if not (isinstance(v, int) and not isinstance(v, bool) and v >= 3):
                errors.append(f"grid.{key}: must be an integer >= 3, got {v!r}")
                ok = False
    if dim == 1 and ("extent_y" in gdoc or "nodes_y" in gdoc):
        errors.append("grid: extent_y/nodes_y are not allowed on a 1D grid")
        ok = False
    if not ok:
        return None

    nodes_x = gdoc["nodes_x"]
    nodes_y = gdoc.get("nodes_y")
    extent_x = float(gdoc["extent_x"])
    extent_y = float(gdoc["extent_y"]) if dim == 2 else None
    n_nodes = nodes_x * (nodes_y if dim == 2 else 1)
    labels = np.zeros(n_nodes, dtype=np.int64)

    xs = np.linspace(0.0, extent_x, nodes_x)
    if dim == 2:
        ys = np.linspace(0.0, extent_y, nodes_y)
        x = np.tile(xs, nodes_y)
        y = np.repeat(ys, nodes_x)
    else:
        x, y = xs, None

    regions = gdoc.get("regions", [])
    if not isinstance(regions, list):
        errors.append("grid.regions: must be a list")
        regions = []
    tol = 1e-9 * max(extent_x, extent_y or 0.0, 1.0)
    for k, block in enumerate(regions):
        where = f"grid.regions[{k}]"
        if not isinstance(block, dict):
            errors.append(f"{where}: must be an object")
            continue
        _check_unknown(block, _REGION_KEYS, where, errors)
        label = block.get("label")
        if not (isinstance(label, int) and not isinstance(label, bool) and label >= 0):
            errors.append(f"{where}.label: must be a nonnegative integer, got {label!r}")
            continue
        lo = block.get("x_min", 0.0)
        hi = block.get("x_max", extent_x)
        if not (_is_num(lo) and _is_num(hi) and lo < hi):
            errors.append(f"{where}: x_min/x_max must be numbers with x_min < x_max")
            continue
        mask = (x >= lo - tol) & (x <= hi + tol)
        if dim == 2:
            ylo = block.get("y_min", 0.0)
            yhi = block.get("y_max", extent_y)
            if not (_is_num(ylo) and _is_num(yhi) and ylo < yhi):
                errors.append(f"{where}: y_min/y_max must be numbers with y_min < y_max")
                continue
            mask &= (y >= ylo - tol) & (y <= yhi + tol)
        elif "y_min" in block or "y_max" in block:
            errors.append(f"{where}: y_min/y_max are not allowed on a 1D grid")
            continue
        labels[mask] = label
    try:
        return Grid(dim=dim, extent_x=extent_x, nodes_x=nodes_x,
                    extent_y=extent_y, nodes_y=nodes_y, region_labels=labels)
    except ValidationError as exc:
        errors.extend(f"grid: {p}" for p in exc.problems)
        return None


def _parse_initial(idoc, grid: Grid | None, errors: list) -> np.ndarray | None:
    if not isinstance(idoc, dict):
        errors.append("initial: must be an object")
        return None
    modes = set(idoc) & {"per_region", "per_node"}
    _check_unknown(idoc, {"per_region", "per_node"}, "initial", errors)
    if len(modes) != 1:
        errors.append("initial: exactly one of 'per_region' or 'per_node' is required")
        return None
    if grid is None:
        return None
    data = np.zeros((grid.n_nodes, model.N_SLOTS))
    if "per_region" in idoc:
        spec = idoc["per_region"]
        if not isinstance(spec, dict):
            errors.append("initial.per_region: must be an object")
            return None
        present = set(np.unique(grid.region_labels).tolist())
        for key, values in spec.items():
            where = f"initial.per_region[{key!r}]"
            try:
                label = int(key)
            except ValueError:
                errors.append(f"{where}: key must name an integer region label")
                continue
            if label not in present:
                errors.append(f"{where}: label {label} not present on the grid")
                continue
            if not isinstance(values, dict):
                errors.append(f"{where}: must be an object of compartment densities")
                continue
            mask = grid.region_labels == label
            for comp, v in values.items():
                if comp not in model.LIVE_COMPARTMENTS:
                    errors.append(f"{where}.{comp}: unknown compartment")
                elif not (_is_num(v) and v >= 0):
                    errors.append(f"{where}.{comp}: must be a nonnegative number, got {v!r}")
                else:
                    data[mask, model.IDX[comp]] = float(v)
    else:
        spec = idoc["per_node"]
        if not isinstance(spec, dict):
            errors.append("initial.per_node: must be an object")
            return None
        for comp, arr in spec.items():
            where = f"initial.per_node.{comp}"
            if comp not in model.LIVE_COMPARTMENTS:
                errors.append(f"{where}: unknown compartment")
                continue
            vals = np.asarray(arr, dtype=float) if isinstance(arr, list) else None
            if vals is None or vals.shape != (grid.n_nodes,):
                errors.append(f"{where}: must be a list of {grid.n_nodes} numbers")
                continue
            if not np.isfinite(vals).all() or (vals < 0).any():
                errors.append(f"{where}: entries must be finite and nonnegative")
                continue
            data[:, model.IDX[comp]] = vals
    return data


def load_scenario(document) -> Scenario:
    """Parse and validate a scenario document (JSON text or dict)."""
    if isinstance(document, str):
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as exc:
            raise SchemaError([f"invalid JSON: {exc}"]) from exc
    else:
        doc = copy.deepcopy(document)
    if not isinstance(doc, dict):
        raise SchemaError(["document must be a JSON object"])

    errors: list[str] = []
    _check_unknown(doc, _TOP_KEYS, "document", errors)

    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        errors.append(
            f"schema_version: must be {SCHEMA_VERSION}, got {version!r}"
        )

    kind = doc.get("model", "covid")
    if kind not in ("covid", "sir"):
        errors.append(f"model: must be 'covid' or 'sir', got {kind!r}")
        kind = "covid"

    name = doc.get("name", "scenario")
    if not isinstance(name, str):
        errors.append(f"name: must be a string, got {name!r}")
        name = "scenario"

    horizon = doc.get("horizon")
    if not (_is_num(horizon) and horizon > 0):
        errors.append(f"horizon: must be a positive number, got {horizon!r}")
        horizon = None
    dt = doc.get("dt")
    if not (_is_num(dt) and dt > 0):
        errors.append(f"dt: must be a positive number, got {dt!r}")
        dt = None
    snapshot_interval = doc.get("snapshot_interval", horizon)
    if dt is not None and snapshot_interval is not None:
        if not (_is_num(snapshot_interval) and snapshot_interval > 0):
            errors.append(
                f"snapshot_interval: must be a positive number, got {snapshot_interval!r}"
            )
            snapshot_interval = None
        else:
            k = round(snapshot_interval / dt)
            if k < 1 or abs(k * dt - snapshot_interval) > 1e-9 * max(1.0, snapshot_interval):
                errors.append(
                    f"snapshot_interval: {snapshot_interval!r} is not a positive multiple of dt={dt!r}"
                )

    integrator = doc.get("integrator", "rk4")
    if integrator not in _INTEGRATORS:
        errors.append(f"integrator: must be one of {_INTEGRATORS}, got {integrator!r}")
        integrator = "rk4"

    flags = dict(_FLAG_DEFAULTS)
    fdoc = doc.get("flags", {})
    if not isinstance(fdoc, dict):
        errors.append("flags: must be an object")
    else:
        _check_unknown(fdoc, _FLAG_KEYS, "flags", errors)
        for key in _FLAG_KEYS & set(fdoc):
            v = fdoc[key]
            if key == "frozen_n":
                if v is not None and not (_is_num(v) and v >= 0):
                    errors.append(f"flags.frozen_n: must be null or a nonnegative number, got {v!r}")
                    continue
            elif key == "negativity_tolerance":
                if not (_is_num(v) and v >= 0):
                    errors.append(f"flags.{key}: must be a nonnegative number, got {v!r}")
                    continue
            elif not isinstance(v, bool):
                errors.append(f"flags.{key}: must be a boolean, got {v!r}")
                continue
            flags[key] = v

    grid = None
    params = None
    initial = None
    pdoc = doc.get("params")
    if not isinstance(pdoc, dict):
        errors.append("params: must be an object")
        pdoc = {}

    if kind == "sir":
        if "grid" in doc:
            errors.append("grid: not allowed for model 'sir'")
        _check_unknown(pdoc, _SIR_PARAM_KEYS, "params", errors)
        kw = {}
        for key in _SIR_PARAM_KEYS & set(pdoc):
            v = pdoc[key]
            if not (_is_num(v) and v >= 0):
                errors.append(f"params.{key}: must be a nonnegative number, got {v!r}")
            else:
                kw[key] = float(v)
        params = model.SirParams(**kw)
        idoc = doc.get("initial")
        if not isinstance(idoc, dict):
            errors.append("initial: must be an object with s/i/r")
        else:
            _check_unknown(idoc, {"s", "i", "r"}, "initial", errors)
            vals = []
            for comp in ("s", "i", "r"):
                v = idoc.get(comp, 0.0)
                if not (_is_num(v) and v >= 0):
                    errors.append(f"initial.{comp}: must be a nonnegative number, got {v!r}")
                    v = 0.0
                vals.append(float(v))
            initial = np.array(vals)
    else:
        if "grid" not in doc:
            errors.append("grid: required for model 'covid'")
        else:
            grid = _parse_grid(doc["grid"], errors)
        _check_unknown(pdoc, _PARAM_KEYS, "params", errors)
        kw = {}
        for key in _PARAM_KEYS & set(pdoc):
            v = pdoc[key]
            if _is_num(v):
                kw[key] = float(v)
            else:
                errors.append(f"params.{key}: must be a number, got {v!r}")
        params = model.ModelParams(**kw)
        errors.extend(f"params: {p}" for p in params.problems())
        if "initial" not in doc:
            errors.append("initial: required")
        else:
            initial = _parse_initial(doc["initial"], grid, errors)

    if errors:
        raise SchemaError(errors)

    normalized = {
        "schema_version": SCHEMA_VERSION,
        "name": name,
        "model": kind,
        "params": {k: v for k, v in sorted(doc.get("params", {}).items())},
        "initial": copy.deepcopy(doc["initial"]),
        "horizon": float(horizon),
        "dt": float(dt),
        "integrator": integrator,
        "snapshot_interval": float(snapshot_interval),
        "flags": dict(flags),
    }
    if kind == "covid":
        normalized["grid"] = copy.deepcopy(doc["grid"])

    return Scenario(
        name=name,
        model=kind,
        grid=grid,
        params=params,
        initial_data=initial,
        horizon=float(horizon),
        dt=float(dt),
        integrator=integrator,
        snapshot_interval=float(snapshot_interval),
        frozen_n=flags["frozen_n"],
        clamp_negative=flags["clamp_negative"],
        strict_guards=flags["strict_guards"],
        negativity_tolerance=flags["negativity_tolerance"],
        guard_alpha=flags["guard_alpha"],
        guard_cfl=flags["guard_cfl"],
        document=normalized,
    )


def save_scenario(scenario: Scenario) -> str:
    return scenario.to_json()


# ---------------------------------------------------------------------------
# Presets. Parameter values and initial counts are pinned calibration
# fixtures (the source material publishes none); treat them as regression
# anchors, not epidemiological estimates.

_COVID_RATES = {
    "theta": 6.0e-8,
    "b": 0.5,
    "c": 0.08,
    "delta": 0.005,
    "epsilon": 0.3,
    "frac_sympt": 0.6,
    "g": 0.1,
    "beta_rec": 0.1,
    "j_rec": 0.05,
    "l_death": 0.003,
    "h1": 0.3,
    "m_death": 0.008,
    "mu": 0.1,
}


def _nanjing_ode_doc() -> dict:
    params = dict(_COVID_RATES)
    params.update({"nu_s": 0.0, "nu_e": 0.0, "nu_a": 0.0, "nu_i": 0.0})
    return {
        "schema_version": 1,
        "name": "nanjing-ode",
        "model": "covid",
        "grid": {"dim": 1, "extent_x": 1.0, "nodes_x": 3},
        "params": params,
        "initial": {
            "per_region": {
                "0": {"s": 9.0e6, "e": 300.0, "a": 30.0, "i": 15.0},
            }
        },
        "horizon": 60.0,
        "dt": 0.1,
        "snapshot_interval": 1.0,
        "integrator": "rk4",
    }


def _corridor_1d_doc() -> dict:
    params = dict(_COVID_RATES)
    params.update({"theta": 7.0e-4, "nu_s": 0.02, "nu_e": 0.02,
                   "nu_a": 0.02, "nu_i": 0.02})
    return {
        "schema_version": 1,
        "name": "corridor-1d",
        "model": "covid",
        "grid": {
            "dim": 1,
            "extent_x": 100.0,
            "nodes_x": 51,
            "regions": [
                {"label": 0, "x_min": 0.0, "x_max": 20.0},    # seed city
                {"label": 1, "x_min": 20.0, "x_max": 70.0},   # adjacent corridor
                {"label": 2, "x_min": 70.0, "x_max": 100.0},  # far end
            ],
        },
        "params": params,
        "initial": {
            "per_region": {
                "0": {"s": 1000.0, "e": 2.0, "a": 0.3, "i": 0.15},
                "1": {"s": 1800.0},
                "2": {"s": 1000.0},
            }
        },
        "horizon": 50.0,
        "dt": 0.05,
        "snapshot_interval": 1.0,
        "integrator": "rk4",
    }


def _jiangsu_2d_doc() -> dict:
    params = dict(_COVID_RATES)
    params.update({"theta": 0.03, "nu_s": 0.02, "nu_e": 0.02,
                   "nu_a": 0.02, "nu_i": 0.02})
    return {
        "schema_version": 1,
        "name": "jiangsu-2d",
        "model": "covid",
        "grid": {
            "dim": 2,
            "extent_x": 120.0,
            "nodes_x": 25,
            "extent_y": 90.0,
            "nodes_y": 19,
            "regions": [
                {"label": 0, "x_min": 0.0, "x_max": 40.0},
                {"label": 1, "x_min": 40.0, "x_max": 80.0},
                {"label": 2, "x_min": 80.0, "x_max": 120.0},
            ],
        },
        "params": params,
        "initial": {
            "per_region": {
                "0": {"s": 25.0, "e": 0.05, "a": 0.005, "i": 0.0025},
                "1": {"s": 25.0},
                "2": {"s": 25.0},
            }
        },
        "horizon": 40.0,
        "dt": 0.25,
        "snapshot_interval": 1.0,
        "integrator": "rk4",
    }


def _sir_demo_doc() -> dict:
    return {
        "schema_version": 1,
        "name": "sir-demo",
        "model": "sir",
        "params": {"beta": 3.0e-4, "gamma": 0.1},
        "initial": {"s": 1000.0, "i": 1.0, "r": 0.0},
        "horizon": 100.0,
        "dt": 0.25,
        "snapshot_interval": 1.0,
        "integrator": "rk4",
    }


PRESETS = {
    "nanjing-ode": (
        "single-city ODE reduction (all diffusivities zero); "
        "confirmed-hospitalized series peaks near day 15",
        _nanjing_ode_doc,
    ),
    "corridor-1d": (
        "three labeled city segments on [0, 100]; outbreak seeded in the "
        "first segment spreads along the corridor",
        _corridor_1d_doc,
    ),
    "jiangsu-2d": (
        "labeled rectangle with three vertical region bands; 2D spread demo",
        _jiangsu_2d_doc,
    ),
    "sir-demo": (
        "classic three-compartment S/I/R epidemic, no spatial structure",
        _sir_demo_doc,
    ),
}


def preset(name: str) -> Scenario:
    """A fully specified, runnable preset scenario by name."""
    if name not in PRESETS:
        raise ValidationError(
            [f"unknown preset {name!r}; valid names: {', '.join(sorted(PRESETS))}"]
        )
    return load_scenario(PRESETS[name][1]())


def preset_descriptions() -> dict[str, str]:
    return {name: info[0] for name, info in sorted(PRESETS.items())}
