"""Collective dynamics of dipole-coupled two-level spins.

Three levels of description share one geometry/coupling model and one
integrator: the exact master equation (:mod:`.liouville`), a product-state
mean-field theory (:mod:`.meanfield`) and mean-field plus all pair
correlations (:mod:`.mpc`).  :mod:`.analysis` compares them.
"""

from .analysis import (
    ConvergenceResult,
    PowerLawFit,
    bloch_trace_distance,
    convergence_study,
    fit_power_law,
    max_trace_distance,
    reconstruct_mf_density,
    reconstruct_mpc_density,
    trace_distance,
    trace_distance_series,
)
from .errors import CapacityError, GeometryError, IntegrationError
from .liouville import (
    N_MAX_EXACT,
    BlochState,
    MasterEquation,
    evolve_master,
    master_rhs,
    pauli_convention,
    product_density,
)
from .meanfield import ProductState, evolve_meanfield, mf_rhs, product_state
from .model import (
    CouplingMatrices,
    SpinSystem,
    chain,
    coupling_matrices,
    cubic_lattice,
    greens_F,
    greens_G,
    hexagonal_rings,
    square_lattice,
)
from .mpc import MPCState, cumulant3, evolve_mpc, mpc_from_product, mpc_rhs
from .odeint import IntegratorConfig, Trajectory, integrate
from .runner import METHODS, bloch_series, simulate

__version__ = "0.1.0"
