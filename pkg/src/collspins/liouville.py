"""Exact dense master-equation solver for small spin ensembles.

Conventions
-----------
Each spin uses the basis (ground, excited); spin 0 is the leftmost
(most significant) tensor factor.  ``sigma_minus = |g><e|`` and
``sigma_z`` has eigenvalue +1 on the ground state, so an isolated spin
relaxes towards ``<sigma_z> = +1``.  ``sigma_x = sigma_+ + sigma_-`` and
``sigma_y = i (sigma_+ - sigma_-)``.  In this basis the matrices coincide
with the textbook Pauli matrices and ``[sigma_x, sigma_y] = 2i sigma_z``.

The generator is

    drho/dt = -i [H, rho] + 1/2 sum_ij Gamma_ij (2 s-_i rho s+_j - s+_i s-_j rho - rho s+_i s-_j)

with ``H = sum_{i != j} Omega_ij s+_i s-_j`` (hbar = 1).  It is evaluated as
``-i (H_eff rho - rho H_eff^dagger)`` plus the jump sum, where
``H_eff = H - i/2 sum_ij Gamma_ij s+_i s-_j`` is stored densely; the
``4^N x 4^N`` superoperator is never formed.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce

import numpy as np
from numba import njit

from .errors import CapacityError
from .model import CouplingMatrices, SpinSystem, coupling_matrices
from .odeint import IntegratorConfig, Trajectory, integrate

N_MAX_EXACT = 12
N_HARD_CAP = 14

_AXES = "xyz"


def pauli_convention() -> dict[str, np.ndarray]:
    """Single-spin operators in the (ground, excited) basis."""
    sm = np.array([[0, 1], [0, 0]], dtype=complex)
    sp = sm.T.copy()
    return {
        "x": sp + sm,
        "y": 1j * (sp - sm),
        "z": np.diag([1.0, -1.0]).astype(complex),
        "+": sp,
        "-": sm,
    }


PAULI = pauli_convention()
for _op in PAULI.values():
    _op.setflags(write=False)


@dataclass(frozen=True)
class BlochState:
    """Pure single-spin state; ``theta`` is the polar angle measured from the ground state."""

    theta: float
    phi: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.theta <= np.pi):
            raise ValueError(f"theta must lie in [0, pi], got {self.theta!r}")

    def vector(self) -> np.ndarray:
        st = np.sin(self.theta)
        return np.array([st * np.cos(self.phi), st * np.sin(self.phi), np.cos(self.theta)])


def bloch_vectors(blochs) -> np.ndarray:
    """Stack Bloch vectors of ``blochs`` into shape (N, 3)."""
    return np.array([b.vector() for b in blochs]).reshape(-1, 3)


def check_capacity(n: int, nmax: int = N_MAX_EXACT) -> None:
    if nmax > N_HARD_CAP:
        raise ValueError(f"N_max_exact may not exceed {N_HARD_CAP}, got {nmax}")
    if n > nmax:
        raise CapacityError(
            f"{n} spins exceed N_max_exact={nmax} for dense density matrices "
            f"(raise with nmax up to {N_HARD_CAP})"
        )


def _num_spins(rho) -> int:
    dim = rho.shape[0]
    n = dim.bit_length() - 1
    if rho.ndim != 2 or rho.shape != (dim, dim) or 1 << n != dim:
        raise ValueError(f"density matrix must be square with dimension 2^N, got {rho.shape}")
    return n


def single_density(s) -> np.ndarray:
    """``(I + s . sigma)/2`` for a Bloch vector ``s``."""
    sx, sy, sz = s
    return 0.5 * (np.eye(2) + sx * PAULI["x"] + sy * PAULI["y"] + sz * PAULI["z"])


def kron_all(mats) -> np.ndarray:
    return reduce(np.kron, mats, np.ones((1, 1), dtype=complex))


def product_density(blochs, nmax: int = N_MAX_EXACT) -> np.ndarray:
    """Tensor product of single-spin pure states."""
    vecs = bloch_vectors(blochs)
    check_capacity(len(vecs), nmax)
    return kron_all([single_density(v) for v in vecs])


def density_from_bloch_vectors(vecs, nmax: int = N_MAX_EXACT) -> np.ndarray:
    vecs = np.asarray(vecs, dtype=float).reshape(-1, 3)
    check_capacity(len(vecs), nmax)
    return kron_all([single_density(v) for v in vecs])


def _bits(n):
    """``bits[b, i]`` is 1 if spin ``i`` is excited in basis state ``b``."""
    b = np.arange(1 << n)
    return (b[:, None] >> (n - 1 - np.arange(n))[None, :]) & 1


def _effective_hamiltonian(c: CouplingMatrices) -> np.ndarray:
    n = c.n
    m = c.omega - 0.5j * c.gammam
    dim = 1 << n
    heff = np.zeros((dim, dim), dtype=complex)
    bits = _bits(n)
    basis = np.arange(dim)
    excited = bits.astype(bool)
    # diagonal: s+_j s-_j is the excited-state projector
    heff[basis, basis] = excited @ np.diag(m)
    for j in range(n):
        src_j = basis[excited[:, j]]
        for i in range(n):
            if i == j:
                continue
            src = src_j[bits[src_j, i] == 0]
            dst = src ^ (1 << (n - 1 - j)) ^ (1 << (n - 1 - i))
            heff[dst, src] += m[i, j]
    return heff


@njit(cache=True)
def _jump_kernel(rho, gam, n, out):
    # out[r, c] += Gamma_ij rho[r | b_i, c | b_j] for r_i = c_j = ground
    dim = 1 << n
    for r in range(dim):
        for i in range(n):
            bi = 1 << (n - 1 - i)
            if r & bi:
                continue
            src = rho[r | bi]
            dst = out[r]
            for j in range(n):
                g = gam[i, j]
                if g == 0.0:
                    continue
                bj = 1 << (n - 1 - j)
                for hi in range(0, dim, 2 * bj):
                    for lo in range(hi, hi + bj):
                        dst[lo] += g * src[lo + bj]


class MasterEquation:
    """Precomputed generator of the master equation for one :class:`SpinSystem`."""

    def __init__(self, system: SpinSystem, nmax: int = N_MAX_EXACT, couplings=None):
        check_capacity(system.n, nmax)
        self.system = system
        self.n = system.n
        self.dim = 1 << system.n
        self.couplings = couplings if couplings is not None else coupling_matrices(system)
        self.heff = _effective_hamiltonian(self.couplings)
        self._heff_dag = np.ascontiguousarray(self.heff.conj().T)
        self._gamma = np.ascontiguousarray(self.couplings.gammam, dtype=float)

    def jump(self, rho: np.ndarray) -> np.ndarray:
        """``sum_ij Gamma_ij s-_i rho s+_j``."""
        out = np.zeros((self.dim, self.dim), dtype=complex)
        _jump_kernel(np.ascontiguousarray(rho, dtype=complex), self._gamma, self.n, out)
        return out

    def rhs(self, rho: np.ndarray) -> np.ndarray:
        if rho.shape != (self.dim, self.dim):
            raise ValueError(
                f"density matrix of shape {rho.shape} does not match {self.n} spins"
            )
        rho = np.ascontiguousarray(rho)
        out = self.jump(rho)
        a = self.heff @ rho
        a -= rho @ self._heff_dag
        a *= -1j
        out += a
        return out


def master_rhs(system: SpinSystem, rho: np.ndarray, nmax: int = N_HARD_CAP) -> np.ndarray:
    """Time derivative of ``rho`` under the collective master equation."""
    rho = np.asarray(rho, dtype=complex)
    if _num_spins(rho) != system.n:
        raise ValueError(f"density matrix dimension {rho.shape[0]} does not match {system.n} spins")
    return MasterEquation(system, nmax=nmax).rhs(rho)


def evolve_master(
    system: SpinSystem,
    rho0,
    t_out,
    cfg: IntegratorConfig | None = None,
    nmax: int = N_MAX_EXACT,
) -> Trajectory:
    """Integrate the master equation; states are interleaved (re, im) of the flattened matrix."""
    eq = MasterEquation(system, nmax=nmax)
    rho0 = np.ascontiguousarray(rho0, dtype=complex)
    if rho0.shape != (eq.dim, eq.dim):
        raise ValueError(f"rho0 of shape {rho0.shape} does not match {system.n} spins")
    dim = eq.dim

    def rhs(y):
        drho = eq.rhs(y.view(complex).reshape(dim, dim))
        return drho.reshape(-1).view(float)

    y0 = rho0.reshape(-1).view(float)
    return integrate(rhs, y0, t_out, cfg, meta={"method": "master", "n": system.n})


def density_at(traj: Trajectory, k: int) -> np.ndarray:
    """Density matrix stored at output index ``k`` of a master-equation trajectory."""
    y = np.ascontiguousarray(traj.states[k])
    dim = 1 << traj.meta["n"]
    return y.view(complex).reshape(dim, dim)


def reduced_density(rho: np.ndarray, keep) -> np.ndarray:
    """Partial trace keeping the spins in ``keep`` (returned in ascending site order)."""
    rho = np.asarray(rho)
    n = _num_spins(rho)
    keep = sorted(int(k) for k in keep)
    if not keep or len(set(keep)) != len(keep) or keep[0] < 0 or keep[-1] >= n:
        raise ValueError(f"keep must be a non-empty subset of 0..{n - 1}, got {keep}")
    if len(keep) == n:
        return rho.copy()
    letters = [chr(ord("a") + i) for i in range(2 * n)]
    row, col = letters[:n], letters[n:]
    for i in range(n):
        if i not in keep:
            col[i] = row[i]
    out = "".join(row[i] for i in keep) + "".join(col[i] for i in keep)
    t = np.einsum("".join(row) + "".join(col) + "->" + out, rho.reshape([2] * (2 * n)))
    m = 1 << len(keep)
    return t.reshape(m, m)


def _single_site(rho, k, n):
    dim = 1 << n
    r = rho.reshape(1 << k, 2, dim >> (k + 1), 1 << k, 2, dim >> (k + 1))
    return np.einsum("aibajb->ij", r)


def expectation_pauli(rho: np.ndarray, k: int, axis: str) -> float:
    """``Tr(sigma_k^axis rho)``."""
    rho = np.asarray(rho)
    n = _num_spins(rho)
    if not 0 <= k < n:
        raise IndexError(f"spin index {k} out of range for {n} spins")
    if axis not in _AXES:
        raise ValueError(f"axis must be one of x, y, z, got {axis!r}")
    return float(np.trace(PAULI[axis] @ _single_site(rho, k, n)).real)


def bloch_components(rho: np.ndarray) -> np.ndarray:
    """All single-spin expectations, shape (N, 3)."""
    n = _num_spins(rho)
    out = np.empty((n, 3))
    for k in range(n):
        r1 = _single_site(rho, k, n)
        for a, ax in enumerate(_AXES):
            out[k, a] = np.trace(PAULI[ax] @ r1).real
    return out


def pair_correlations(rho: np.ndarray) -> np.ndarray:
    """``C[k, l, a, b] = <sigma_k^a sigma_l^b>`` for k != l; diagonal blocks are zero."""
    n = _num_spins(rho)
    out = np.zeros((n, n, 3, 3))
    paulis = [PAULI[a] for a in _AXES]
    for k in range(n):
        for l in range(k + 1, n):
            r2 = reduced_density(rho, [k, l])
            for a in range(3):
                for b in range(3):
                    v = np.trace(np.kron(paulis[a], paulis[b]) @ r2).real
                    out[k, l, a, b] = v
                    out[l, k, b, a] = v
    return out


def purity(rho: np.ndarray) -> float:
    return float(np.real(np.vdot(rho.conj().T, rho)))
