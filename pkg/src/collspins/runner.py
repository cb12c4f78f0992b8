"""Uniform entry point over the four solvers."""

from __future__ import annotations

import numpy as np

from .liouville import N_MAX_EXACT, BlochState, bloch_components, density_at, evolve_master, product_density
from .meanfield import evolve_meanfield, product_state
from .model import CouplingMatrices, SpinSystem
from .mpc import evolve_mpc, mpc_from_product
from .odeint import IntegratorConfig, Trajectory

METHODS = ("master", "meanfield", "mpc", "independent")


def simulate(
    system: SpinSystem,
    method: str,
    initial,
    t_out,
    cfg: IntegratorConfig | None = None,
    nmax: int = N_MAX_EXACT,
    couplings: CouplingMatrices | None = None,
) -> Trajectory:
    """Evolve a product initial state with the named method.

    ``initial`` is a single :class:`BlochState` (applied to every spin) or a
    sequence of N of them.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
    blochs = [initial] * system.n if isinstance(initial, BlochState) else list(initial)
    if len(blochs) != system.n:
        raise ValueError(f"{len(blochs)} initial states given for {system.n} spins")
    if method == "master":
        return evolve_master(system, product_density(blochs, nmax), t_out, cfg, nmax)
    if method == "mpc":
        return evolve_mpc(system, mpc_from_product(blochs), t_out, cfg, couplings)
    mode = "collective" if method == "meanfield" else "independent"
    return evolve_meanfield(system, product_state(blochs), t_out, cfg, mode, couplings)


def bloch_series(traj: Trajectory) -> np.ndarray:
    """Bloch vectors at every output time, shape (T, N, 3), for any solver's trajectory."""
    n = traj.meta["n"]
    if traj.method == "master":
        return np.array([bloch_components(density_at(traj, k)) for k in range(len(traj))])
    s = traj.states[:, : 3 * n].reshape(len(traj), 3, n)
    return s.transpose(0, 2, 1).copy()
