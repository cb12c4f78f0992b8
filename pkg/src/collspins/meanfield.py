"""Product-state (mean-field) dynamics of the Bloch vectors.

Every two-spin expectation in the single-spin equations of motion is
factorised, ``<s_i^a s_k^b> ~ <s_i^a><s_k^b>``.  With ``W = Gamma`` minus its
diagonal the equations read

    dsx_k = sz_k (Omega sy)_k - gamma/2 sx_k - 1/2 sz_k (W sx)_k
    dsy_k = -sz_k (Omega sx)_k - gamma/2 sy_k - 1/2 sz_k (W sy)_k
    dsz_k = -sx_k (Omega sy)_k + sy_k (Omega sx)_k + gamma (1 - sz_k)
            + 1/2 [sx_k (W sx)_k + sy_k (W sy)_k]

so one evaluation costs two dense (N x N) @ (N x 2) products.  The
``independent`` mode drops Omega and W and leaves N uncoupled spins.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .model import CouplingMatrices, SpinSystem, coupling_matrices
from .odeint import IntegratorConfig, Trajectory, integrate

MODES = ("collective", "independent")
BLOCH_TOL = 1e-6


@dataclass
class ProductState:
    """Bloch components of N uncorrelated spins."""

    sx: np.ndarray
    sy: np.ndarray
    sz: np.ndarray

    def __post_init__(self):
        self.sx, self.sy, self.sz = (np.asarray(a, dtype=float).reshape(-1) for a in (self.sx, self.sy, self.sz))
        if not (self.sx.size == self.sy.size == self.sz.size):
            raise ValueError("sx, sy, sz must have equal length")

    @property
    def n(self) -> int:
        return self.sx.size

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.sx, self.sy, self.sz])

    @classmethod
    def from_vector(cls, y) -> "ProductState":
        y = np.asarray(y, dtype=float)
        if y.size % 3:
            raise ValueError("state vector length must be a multiple of 3")
        n = y.size // 3
        return cls(y[:n].copy(), y[n : 2 * n].copy(), y[2 * n :].copy())

    def bloch(self) -> np.ndarray:
        """Shape (N, 3) array of Bloch vectors."""
        return np.column_stack([self.sx, self.sy, self.sz])

    def max_norm(self) -> float:
        return float(np.sqrt(self.sx**2 + self.sy**2 + self.sz**2).max())


def product_state(blochs) -> ProductState:
    vecs = np.array([b.vector() for b in blochs]).reshape(-1, 3)
    return ProductState(vecs[:, 0], vecs[:, 1], vecs[:, 2])


class MeanFieldRHS:
    """Callable ``y -> dy/dt`` on the flat (sx, sy, sz) layout."""

    def __init__(self, system: SpinSystem, mode: str = "collective", couplings: CouplingMatrices | None = None):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        self.n = system.n
        self.gamma = system.gamma
        self.mode = mode
        if mode == "collective":
            c = couplings if couplings is not None else coupling_matrices(system)
            # stacked so that one matmul gives (Omega s, W s) for both s = sx, sy
            self._op = np.vstack([np.asarray(c.omega), c.offdiag_gamma()])
        else:
            self._op = None

    def __call__(self, y: np.ndarray) -> np.ndarray:
        n, g = self.n, self.gamma
        if y.size != 3 * n:
            raise ValueError(f"state has {y.size} entries, expected {3 * n}")
        sx, sy, sz = y[:n], y[n : 2 * n], y[2 * n :]
        out = np.empty_like(y)
        dx, dy, dz = out[:n], out[n : 2 * n], out[2 * n :]
        np.multiply(-0.5 * g, sx, out=dx)
        np.multiply(-0.5 * g, sy, out=dy)
        np.multiply(-g, sz, out=dz)
        dz += g
        if self._op is None:
            return out
        prod = self._op @ np.column_stack([sx, sy])
        om_x, om_y = prod[:n, 0], prod[:n, 1]
        w_x, w_y = prod[n:, 0], prod[n:, 1]
        dx += sz * (om_y - 0.5 * w_x)
        dy -= sz * (om_x + 0.5 * w_y)
        dz += sy * om_x - sx * om_y + 0.5 * (sx * w_x + sy * w_y)
        return out


def mf_rhs(system: SpinSystem, state: ProductState, mode: str = "collective") -> ProductState:
    """Time derivative of a product state."""
    if state.n != system.n:
        raise ValueError(f"state describes {state.n} spins, system has {system.n}")
    return ProductState.from_vector(MeanFieldRHS(system, mode)(state.to_vector()))


def evolve_meanfield(
    system: SpinSystem,
    state0: ProductState,
    t_out,
    cfg: IntegratorConfig | None = None,
    mode: str = "collective",
    couplings: CouplingMatrices | None = None,
) -> Trajectory:
    """Integrate the mean-field equations; states use the flat (sx, sy, sz) layout."""
    if state0.n != system.n:
        raise ValueError(f"state describes {state0.n} spins, system has {system.n}")
    if state0.max_norm() > 1.0 + BLOCH_TOL:
        raise ValueError("initial Bloch vectors must lie inside the unit ball")
    rhs = MeanFieldRHS(system, mode, couplings)
    method = "meanfield" if mode == "collective" else "independent"
    traj = integrate(rhs, state0.to_vector(), t_out, cfg, meta={"method": method, "n": system.n})
    _warn_bloch_ball(traj, system.n)
    return traj


def _warn_bloch_ball(traj: Trajectory, n: int) -> None:
    s = traj.states
    norms = s[:, :n] ** 2 + s[:, n : 2 * n] ** 2 + s[:, 2 * n :] ** 2
    worst = float(np.sqrt(norms.max()))
    if worst > 1.0 + BLOCH_TOL:
        warnings.warn(
            f"mean-field Bloch vector left the unit ball (max |s| = {worst:.9f})",
            RuntimeWarning,
            stacklevel=3,
        )


def singles_at(traj: Trajectory, k: int) -> ProductState:
    """Single-spin Bloch components at output index ``k`` (mean-field or pair-correlation run)."""
    n = traj.meta["n"]
    return ProductState.from_vector(traj.states[k][: 3 * n])
