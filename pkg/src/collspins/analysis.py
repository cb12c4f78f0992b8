"""Error metrics between solvers, density reconstruction and power-law fits."""

from __future__ import annotations

from concurrent.futures import Executor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .liouville import (
    N_MAX_EXACT,
    PAULI,
    BlochState,
    check_capacity,
    density_at,
    kron_all,
    single_density,
)
from .meanfield import ProductState, singles_at
from .model import SpinSystem
from .mpc import MPCState, mpc_state_at
from .odeint import IntegratorConfig, Trajectory
from .runner import bloch_series, simulate

BLOCH_TOL = 1e-6
# scan points whose distance is below this are left out of log-space fits
FIT_FLOOR = 1e-12
# a convergence fit counts as converged if the exponent is at most -CONV_MIN_DECAY
# and the log-space residual stays below CONV_MAX_RESIDUAL
CONV_MIN_DECAY = 0.3
CONV_MAX_RESIDUAL = 0.5

_SIGMAS = (PAULI["x"], PAULI["y"], PAULI["z"])


# ---------------------------------------------------------------------------
# distances
# ---------------------------------------------------------------------------


def trace_distance(rho: np.ndarray, sigma: np.ndarray) -> float:
    """Half the sum of absolute eigenvalues of ``rho - sigma``.

    Only Hermiticity is assumed; either argument may have negative eigenvalues.
    """
    rho = np.asarray(rho)
    sigma = np.asarray(sigma)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError(f"expected square matrices, got {rho.shape}")
    if rho.shape != sigma.shape:
        raise ValueError(f"dimension mismatch: {rho.shape} vs {sigma.shape}")
    # fixed argument order makes the result exactly symmetric, not just to round-off
    a = np.ascontiguousarray(rho, dtype=complex)
    b = np.ascontiguousarray(sigma, dtype=complex)
    if a.tobytes() > b.tobytes():
        a, b = b, a
    diff = a - b
    diff = 0.5 * (diff + diff.conj().T)
    return 0.5 * float(np.abs(np.linalg.eigvalsh(diff)).sum())


def bloch_trace_distance(s1, s2) -> float:
    """Trace distance of two single-spin states given by their Bloch vectors."""
    s1 = np.asarray(s1, dtype=float).reshape(3)
    s2 = np.asarray(s2, dtype=float).reshape(3)
    for s in (s1, s2):
        if np.linalg.norm(s) > 1.0 + BLOCH_TOL:
            raise ValueError(f"Bloch vector {s} lies outside the unit ball")
    return 0.5 * float(np.linalg.norm(s1 - s2))


# ---------------------------------------------------------------------------
# reconstruction of dense states
# ---------------------------------------------------------------------------


def reconstruct_mf_density(state: ProductState, nmax: int = N_MAX_EXACT) -> np.ndarray:
    check_capacity(state.n, nmax)
    return kron_all([single_density(v) for v in state.bloch()])


def _pair_operator(d):
    """``1/4 sum_ab d[a, b] sigma^a (x) sigma^b``."""
    out = np.zeros((4, 4), dtype=complex)
    for a in range(3):
        for b in range(3):
            out += d[a, b] * np.kron(_SIGMAS[a], _SIGMAS[b])
    return 0.25 * out


def _embed_pair(op4, j, k, singles, n):
    """``op4`` on sites (j, k), tensored with ``singles[i]`` on every other site."""
    others = [i for i in range(n) if i not in (j, k)]
    rest = kron_all([singles[i] for i in others])
    t = np.multiply.outer(op4.reshape(2, 2, 2, 2), rest.reshape([2] * (2 * len(others))))
    # axes of t: r_j, r_k, c_j, c_k, rows of others, columns of others
    pos = {j: 0, k: 1}
    pos.update({i: 4 + m for m, i in enumerate(others)})
    rows = [pos[i] for i in range(n)]
    cols = [2 if i == j else 3 if i == k else pos[i] + len(others) for i in range(n)]
    dim = 1 << n
    return t.transpose(rows + cols).reshape(dim, dim)


def reconstruct_mpc_density(state: MPCState, nmax: int = N_MAX_EXACT) -> np.ndarray:
    """Product of the singles plus one connected two-spin term per pair.

    The pair terms are traceless on each of their sites, so the singles and
    pair expectations of the result coincide with the stored ones.  The
    result is Hermitian with unit trace but need not be positive.
    """
    n = state.n
    check_capacity(n, nmax)
    s = state.singles.bloch()
    singles = [single_density(v) for v in s]
    rho = kron_all(singles)
    for j in range(n):
        for k in range(j + 1, n):
            d = state.corr(j, k) - np.outer(s[j], s[k])
            if not np.any(d):
                continue
            rho += _embed_pair(_pair_operator(d), j, k, singles, n)
    return rho


def density_from_trajectory(traj: Trajectory, idx: int, nmax: int = N_MAX_EXACT) -> np.ndarray:
    """Dense state at output ``idx``, reconstructed for the approximate solvers."""
    method = traj.method
    if method == "master":
        return density_at(traj, idx)
    if method == "mpc":
        return reconstruct_mpc_density(mpc_state_at(traj, idx), nmax)
    if method in ("meanfield", "independent"):
        return reconstruct_mf_density(singles_at(traj, idx), nmax)
    raise ValueError(f"trajectory has unknown method tag {method!r}")


# ---------------------------------------------------------------------------
# time series of distances
# ---------------------------------------------------------------------------


def _check_grids(a: Trajectory, b: Trajectory):
    if a.times.shape != b.times.shape or not np.array_equal(a.times, b.times):
        raise ValueError("trajectories are sampled on different time grids")
    if a.meta.get("n") != b.meta.get("n"):
        raise ValueError(f"trajectories describe {a.meta.get('n')} and {b.meta.get('n')} spins")


def trace_distance_series(a: Trajectory, b: Trajectory, reducer="full", nmax: int = N_MAX_EXACT) -> np.ndarray:
    """Trace distance at every output time.

    ``reducer="full"`` compares (reconstructed) N-spin density matrices; an
    integer ``k`` compares the reduced states of spin ``k`` only.
    """
    _check_grids(a, b)
    if isinstance(reducer, str):
        if reducer != "full":
            raise ValueError(f"reducer must be 'full' or a spin index, got {reducer!r}")
        return np.array(
            [
                trace_distance(density_from_trajectory(a, i, nmax), density_from_trajectory(b, i, nmax))
                for i in range(len(a))
            ]
        )
    k = int(reducer)
    n = a.meta["n"]
    if not 0 <= k < n:
        raise IndexError(f"spin index {k} out of range for {n} spins")
    sa = bloch_series(a)[:, k]
    sb = bloch_series(b)[:, k]
    return 0.5 * np.linalg.norm(sa - sb, axis=1)


def max_trace_distance(a: Trajectory, b: Trajectory, reducer="full", nmax: int = N_MAX_EXACT) -> float:
    """Largest trace distance over the shared output grid."""
    return float(trace_distance_series(a, b, reducer, nmax).max())


# ---------------------------------------------------------------------------
# power laws
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PowerLawFit:
    """``y ~ c * x**k``; ``residual`` is the RMS deviation in log space."""

    c: float
    k: float
    residual: float

    def __call__(self, x):
        return self.c * np.asarray(x, dtype=float) ** self.k

    def as_dict(self) -> dict:
        return {"c": self.c, "k": self.k, "residual": self.residual}


def fit_power_law(xs, ys) -> PowerLawFit:
    xs = np.asarray(xs, dtype=float).reshape(-1)
    ys = np.asarray(ys, dtype=float).reshape(-1)
    if xs.shape != ys.shape:
        raise ValueError("xs and ys must have the same length")
    if xs.size < 3:
        raise ValueError(f"need at least 3 points for a power-law fit, got {xs.size}")
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
        raise ValueError("power-law fit inputs must be finite")
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise ValueError("power-law fit needs strictly positive xs and ys")
    lx, ly = np.log(xs), np.log(ys)
    design = np.column_stack([lx, np.ones_like(lx)])
    (k, logc), *_ = np.linalg.lstsq(design, ly, rcond=None)
    resid = ly - (k * lx + logc)
    return PowerLawFit(c=float(np.exp(logc)), k=float(k), residual=float(np.sqrt(np.mean(resid**2))))


def fit_above_floor(xs, ys, floor: float = FIT_FLOOR) -> PowerLawFit | None:
    """Power-law fit over the points with ``ys >= floor``; None if fewer than three remain."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    keep = ys >= floor
    if keep.sum() < 3:
        return None
    return fit_power_law(xs[keep], ys[keep])


# ---------------------------------------------------------------------------
# finite-size convergence of the central spin
# ---------------------------------------------------------------------------


@dataclass
class ConvergenceResult:
    ns: np.ndarray
    distances: np.ndarray
    reference_n: int
    fit: PowerLawFit | None

    @property
    def converged(self) -> bool:
        f = self.fit
        return f is not None and f.k <= -CONV_MIN_DECAY and f.residual < CONV_MAX_RESIDUAL


def _central_series(item):
    family, n, method, initial, t_out, cfg = item
    system = family(n)
    traj = simulate(system, method, initial, t_out, cfg)
    return bloch_series(traj)[:, system.central_index()]


def convergence_study(
    family: Callable[[int], SpinSystem],
    ns: Sequence[int],
    reference_n: int,
    method: str = "meanfield",
    t_end: float = 2.0,
    initial: BlochState = BlochState(np.pi / 2),
    n_out: int = 201,
    cfg: IntegratorConfig | None = None,
    executor: Executor | None = None,
) -> ConvergenceResult:
    """Time-max distance of the central spin of each scan system to that of the reference system.

    ``family(n)`` builds the n-spin system.  With an ``executor`` the runs are
    mapped over it (``family`` must then be picklable); results are sorted by N.
    """
    if method not in ("meanfield", "mpc"):
        raise ValueError(f"convergence studies support meanfield and mpc, got {method!r}")
    ns = sorted({int(n) for n in ns})
    if not ns:
        raise ValueError("scan must contain at least one N")
    if reference_n < ns[-1]:
        raise ValueError(f"reference N={reference_n} is smaller than scan member N={ns[-1]}")
    if not t_end > 0 or n_out < 2:
        raise ValueError("need t_end > 0 and n_out >= 2")
    t_out = np.linspace(0.0, t_end, n_out)
    todo = [n for n in ns if n != reference_n] + [reference_n]
    items = [(family, n, method, initial, t_out, cfg) for n in todo]
    mapper = executor.map if executor is not None else map
    series = dict(zip(todo, mapper(_central_series, items)))
    ref = series[reference_n]
    dist = np.array([0.5 * float(np.linalg.norm(series[n] - ref, axis=1).max()) for n in ns])
    return ConvergenceResult(np.array(ns), dist, int(reference_n), fit_above_floor(ns, dist))
