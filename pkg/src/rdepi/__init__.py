"""rdepi: seven-compartment reaction-diffusion epidemic solver.

Method-of-lines finite differences in space (mirror-ghost Neumann
boundaries) with classical RK4, forward Euler, or 1D IMEX-Euler in time,
plus verification harnesses for stability, convergence order, and mass
bookkeeping.
"""

import os as _os

# Thread-count override. Must run before numpy is first imported to take
# effect on BLAS/OpenMP pools; results are bitwise identical either way.
if "RDEPI_THREADS" in _os.environ:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _os.environ["RDEPI_THREADS"])

from .errors import (
    Error,
    GuardViolation,
    NumericalAbort,
    SchemaError,
    UnsupportedOperation,
    UsageError,
    ValidationError,
)
from .model import (
    COMPARTMENTS,
    LIVE_COMPARTMENTS,
    ModelParams,
    NodeState,
    SirParams,
    SirState,
    reaction_rhs,
    sir_rhs,
    total_population,
)
from .grid import (
    CompartmentField,
    Grid,
    diffusion_term,
    discrete_integral,
    laplacian,
    varcoef_diffusion,
)
from .integrators import (
    RK4_TABLEAU,
    ButcherTableau,
    StepBound,
    StepControl,
    TimeSeries,
    estimate_alpha,
    euler_step,
    full_rhs,
    imex_euler_step,
    max_stable_dt,
    rk4_step,
    simulate,
)
from .verification import (
    LedgerReport,
    OrderReport,
    StabilityReport,
    error_norm,
    mass_ledger,
    spatial_order_study,
    stability_monitor,
    temporal_order_study,
)
from .scenario import Scenario, load_scenario, preset, preset_descriptions, save_scenario
from .series_io import (
    ObservedSeries,
    fit_metrics,
    load_observed,
    read_nodes_csv,
    region_aggregates,
    timeseries_to_csv,
    write_timeseries,
)

__version__ = "0.1.0"
