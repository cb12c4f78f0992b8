"""Mean-field dynamics supplemented by all pair correlations.

The state holds the Bloch vectors ``s_k`` and, for every pair ``k < l``, the
raw two-spin expectations ``C[k, l][a, b] = <sigma_k^a sigma_l^b>``.
Three-spin expectations appearing in the pair equations are closed with the
third-order cumulant rule (:func:`cumulant3`).

Flat layout: ``[sx (N), sy (N), sz (N), C[0,1] (9), C[0,2] (9), ...]`` with
pairs in lexicographic ``k < l`` order and each block row-major in (a, b).
Blocks of reversed pairs follow from ``C[l, k][b, a] = C[k, l][a, b]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .meanfield import ProductState, product_state
from .model import CouplingMatrices, SpinSystem, coupling_matrices
from .odeint import IntegratorConfig, Trajectory, integrate

X, Y, Z = 0, 1, 2


def n_pairs(n: int) -> int:
    return n * (n - 1) // 2


def pair_index(n: int, k: int, l: int) -> int:
    """Position of the pair ``(k, l)``, ``k < l``, in lexicographic order."""
    return k * n - k * (k + 1) // 2 + (l - k - 1)


@dataclass
class MPCState:
    """Singles plus pair blocks; ``pairs`` has shape (N(N-1)/2, 3, 3)."""

    singles: ProductState
    pairs: np.ndarray

    def __post_init__(self):
        n = self.singles.n
        self.pairs = np.asarray(self.pairs, dtype=float).reshape(n_pairs(n), 3, 3)

    @property
    def n(self) -> int:
        return self.singles.n

    def corr(self, k: int, l: int) -> np.ndarray:
        """3x3 block ``<sigma_k^a sigma_l^b>`` for ``k != l``."""
        if k == l:
            raise ValueError("pair correlations need two distinct sites")
        if k < l:
            return self.pairs[pair_index(self.n, k, l)].copy()
        return self.pairs[pair_index(self.n, l, k)].T.copy()

    def full(self) -> np.ndarray:
        """``C[k, l, a, b]`` for all ordered pairs; diagonal blocks are zero."""
        n = self.n
        out = np.zeros((n, n, 3, 3))
        iu, ju = np.triu_indices(n, 1)
        out[iu, ju] = self.pairs
        out[ju, iu] = self.pairs.transpose(0, 2, 1)
        return out

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.singles.to_vector(), self.pairs.reshape(-1)])

    @classmethod
    def from_vector(cls, y, n: int) -> "MPCState":
        y = np.asarray(y, dtype=float)
        if y.size != state_size(n):
            raise ValueError(f"vector of length {y.size} does not describe {n} spins")
        return cls(ProductState.from_vector(y[: 3 * n]), y[3 * n :].copy())


def state_size(n: int) -> int:
    return 3 * n + 9 * n_pairs(n)


def mpc_from_product(blochs_or_state) -> MPCState:
    """Uncorrelated pair state ``C[k, l][a, b] = s_k^a s_l^b`` from Bloch states or a ProductState."""
    if isinstance(blochs_or_state, ProductState):
        ps = blochs_or_state
    else:
        ps = product_state(blochs_or_state)
    s = ps.bloch()
    iu, ju = np.triu_indices(ps.n, 1)
    pairs = s[iu, :, None] * s[ju, None, :]
    return MPCState(ProductState(ps.sx.copy(), ps.sy.copy(), ps.sz.copy()), pairs)


def cumulant3(s, p) -> float:
    """Three-spin expectation ``<abc>`` from singles and pairs with vanishing third cumulant.

    ``s = (<a>, <b>, <c>)`` and ``p = (<bc>, <ac>, <ab>)``.
    """
    a, b, c = s
    bc, ac, ab = p
    return a * bc + b * ac + c * ab - 2.0 * a * b * c


# ---------------------------------------------------------------------------
# compiled kernel
# ---------------------------------------------------------------------------


@njit(cache=True)
def _tb(sp, sq, apq, bp, cpq, mp, xpq, a, b, c):
    """sum_{j != p, q} X_pj <sigma_p^a sigma_q^b sigma_j^c>, closed with :func:`cumulant3`.

    apq[b, c] = sum_j X_pj C[q, j, b, c]; bp[a, c] = sum_j X_pj C[p, j, a, c];
    mp[c] = sum_j X_pj s_j^c; cpq = C[p, q]; xpq = X_pq.  The j = q terms are
    removed from the row sums here; j = p drops out because X_pp = 0.
    """
    rest = mp[c] - xpq * sq[c]
    return (
        sp[a] * apq[b, c]
        + sq[b] * (bp[a, c] - xpq * cpq[a, c])
        + (cpq[a, b] - 2.0 * sp[a] * sq[b]) * rest
    )


@njit(cache=True)
def _pair_equations(g, okl, gkl, sk, sl, ckl, clk, aok, awk, aol, awl, bok, bwk, bol, bwl,
                    mok, mwk, mol, mwl, out, full):
    """Listed pair derivatives for the ordered pair (k, l).

    out[0:3] = d<xx>, d<yy>, d<zz> (only if ``full``); out[3:6] = d<xy>, d<xz>, d<yz>,
    all as <sigma_k^a sigma_l^b>.  Arguments ending in k (l) belong to sums
    weighted by X_kj (X_lj); ``a*``, ``b*``, ``m*`` are described in :func:`_tb`.
    """

    def tk_o(a, b, c):
        return _tb(sk, sl, aok, bok, ckl, mok, okl, a, b, c)

    def tk_w(a, b, c):
        return _tb(sk, sl, awk, bwk, ckl, mwk, gkl, a, b, c)

    # l-anchored sums are evaluated in (l, k, j) order and indexed as (k, l, j)
    def tl_o(a, b, c):
        return _tb(sl, sk, aol, bol, clk, mol, okl, b, a, c)

    def tl_w(a, b, c):
        return _tb(sl, sk, awl, bwl, clk, mwl, gkl, b, a, c)

    if full:
        out[0] = (
            tk_o(Z, X, Y) + tl_o(X, Z, Y)
            - g * ckl[X, X]
            + gkl * (ckl[Z, Z] - 0.5 * sk[Z] - 0.5 * sl[Z])
            - 0.5 * tk_w(Z, X, X) - 0.5 * tl_w(X, Z, X)
        )
        out[1] = (
            -tk_o(Z, Y, X) - tl_o(Y, Z, X)
            - g * ckl[Y, Y]
            + gkl * (ckl[Z, Z] - 0.5 * sk[Z] - 0.5 * sl[Z])
            - 0.5 * tk_w(Z, Y, Y) - 0.5 * tl_w(Y, Z, Y)
        )
        out[2] = (
            tk_o(Y, Z, X) - tk_o(X, Z, Y)
            + tl_o(Z, Y, X) - tl_o(Z, X, Y)
            - 2.0 * g * ckl[Z, Z]
            + g * (sl[Z] + sk[Z])
            + gkl * (ckl[Y, Y] + ckl[X, X])
            + 0.5 * (tk_w(X, Z, X) + tk_w(Y, Z, Y))
            + 0.5 * (tl_w(Z, X, X) + tl_w(Z, Y, Y))
        )
    out[3] = (
        okl * (sk[Z] - sl[Z])
        + tk_o(Z, Y, Y)
        - tl_o(X, Z, X)
        - g * ckl[X, Y]
        - 0.5 * tk_w(Z, Y, X)
        - 0.5 * tl_w(X, Z, Y)
    )
    out[4] = (
        okl * sl[Y]
        + tk_o(Z, Z, Y)
        + tl_o(X, Y, X) - tl_o(X, X, Y)
        - 1.5 * g * ckl[X, Z]
        + g * sk[X]
        - gkl * (ckl[Z, X] - 0.5 * sl[X])
        - 0.5 * tk_w(Z, Z, X)
        + 0.5 * (tl_w(X, X, X) + tl_w(X, Y, Y))
    )
    out[5] = (
        -okl * sl[X]
        - tk_o(Z, Z, X)
        + tl_o(Y, Y, X) - tl_o(Y, X, Y)
        - 1.5 * g * ckl[Y, Z]
        + g * sk[Y]
        - gkl * (ckl[Z, Y] - 0.5 * sl[Y])
        - 0.5 * tk_w(Z, Z, Y)
        + 0.5 * (tl_w(Y, X, X) + tl_w(Y, Y, Y))
    )


@njit(cache=True)
def _mpc_kernel(y, n, g, om, w):
    s = np.empty((n, 3))
    for a in range(3):
        for k in range(n):
            s[k, a] = y[a * n + k]
    c = np.zeros((n, n, 3, 3))
    off = 3 * n
    for k in range(n):
        for l in range(k + 1, n):
            for a in range(3):
                for b in range(3):
                    v = y[off + 3 * a + b]
                    c[k, l, a, b] = v
                    c[l, k, b, a] = v
            off += 9

    dy = np.empty_like(y)

    # singles: two-spin expectations taken from the stored pairs
    for k in range(n):
        ax = 0.0
        ay = 0.0
        az = 0.0
        for i in range(n):
            if i == k:
                continue
            oki = om[k, i]
            wki = w[k, i]
            ax += oki * c[i, k, Y, Z] - 0.5 * wki * c[i, k, X, Z]
            ay += -oki * c[i, k, X, Z] - 0.5 * wki * c[i, k, Y, Z]
            az += -oki * (c[k, i, X, Y] - c[i, k, X, Y]) + 0.5 * wki * (c[k, i, X, X] + c[i, k, Y, Y])
        dy[k] = ax - 0.5 * g * s[k, X]
        dy[n + k] = ay - 0.5 * g * s[k, Y]
        dy[2 * n + k] = az + g * (1.0 - s[k, Z])

    # per-site row sums
    mo = np.zeros((n, 3))
    mw = np.zeros((n, 3))
    bo = np.zeros((n, 3, 3))
    bw = np.zeros((n, 3, 3))
    for k in range(n):
        for j in range(n):
            okj = om[k, j]
            wkj = w[k, j]
            for a in range(3):
                mo[k, a] += okj * s[j, a]
                mw[k, a] += wkj * s[j, a]
                for b in range(3):
                    bo[k, a, b] += okj * c[k, j, a, b]
                    bw[k, a, b] += wkj * c[k, j, a, b]

    a_ok = np.empty((3, 3))
    a_wk = np.empty((3, 3))
    a_ol = np.empty((3, 3))
    a_wl = np.empty((3, 3))
    fwd = np.empty(6)
    rev = np.empty(6)

    off = 3 * n
    for k in range(n):
        for l in range(k + 1, n):
            a_ok[:, :] = 0.0
            a_wk[:, :] = 0.0
            a_ol[:, :] = 0.0
            a_wl[:, :] = 0.0
            # O(N) inner sum: the only part of the closure that depends on (k, l) jointly
            for j in range(n):
                okj = om[k, j]
                wkj = w[k, j]
                olj = om[l, j]
                wlj = w[l, j]
                for b in range(3):
                    for cc in range(3):
                        clj = c[l, j, b, cc]
                        ckj = c[k, j, b, cc]
                        a_ok[b, cc] += okj * clj
                        a_wk[b, cc] += wkj * clj
                        a_ol[b, cc] += olj * ckj
                        a_wl[b, cc] += wlj * ckj
            ckl = c[k, l]
            clk = c[l, k]
            _pair_equations(g, om[k, l], w[k, l], s[k], s[l], ckl, clk,
                            a_ok, a_wk, a_ol, a_wl, bo[k], bw[k], bo[l], bw[l],
                            mo[k], mw[k], mo[l], mw[l], fwd, True)
            _pair_equations(g, om[l, k], w[l, k], s[l], s[k], clk, ckl,
                            a_ol, a_wl, a_ok, a_wk, bo[l], bw[l], bo[k], bw[k],
                            mo[l], mw[l], mo[k], mw[k], rev, False)
            # fwd: xx yy zz xy xz yz of (k, l); rev[3:] gives (l, k) xy xz yz = (k, l) yx zx zy
            dy[off + 0] = fwd[0]
            dy[off + 1] = fwd[3]
            dy[off + 2] = fwd[4]
            dy[off + 3] = rev[3]
            dy[off + 4] = fwd[1]
            dy[off + 5] = fwd[5]
            dy[off + 6] = rev[4]
            dy[off + 7] = rev[5]
            dy[off + 8] = fwd[2]
            off += 9
    return dy


class MPCRHS:
    """Callable ``y -> dy/dt`` on the flat pair-correlation layout."""

    def __init__(self, system: SpinSystem, couplings: CouplingMatrices | None = None):
        c = couplings if couplings is not None else coupling_matrices(system)
        self.n = system.n
        self.gamma = system.gamma
        self._om = np.ascontiguousarray(c.omega, dtype=float)
        self._w = np.ascontiguousarray(c.offdiag_gamma(), dtype=float)

    def __call__(self, y: np.ndarray) -> np.ndarray:
        if y.size != state_size(self.n):
            raise ValueError(f"state has {y.size} entries, expected {state_size(self.n)}")
        return _mpc_kernel(np.ascontiguousarray(y, dtype=float), self.n, self.gamma, self._om, self._w)


def mpc_rhs(system: SpinSystem, state: MPCState, couplings: CouplingMatrices | None = None) -> MPCState:
    """Time derivative of a pair-correlation state."""
    if state.n != system.n:
        raise ValueError(f"state describes {state.n} spins, system has {system.n}")
    return MPCState.from_vector(MPCRHS(system, couplings)(state.to_vector()), system.n)


def evolve_mpc(
    system: SpinSystem,
    state0: MPCState,
    t_out,
    cfg: IntegratorConfig | None = None,
    couplings: CouplingMatrices | None = None,
) -> Trajectory:
    """Integrate singles and pair correlations on ``t_out``."""
    if state0.n != system.n:
        raise ValueError(f"state describes {state0.n} spins, system has {system.n}")
    rhs = MPCRHS(system, couplings)
    return integrate(rhs, state0.to_vector(), t_out, cfg, meta={"method": "mpc", "n": system.n})


def mpc_state_at(traj: Trajectory, k: int) -> MPCState:
    return MPCState.from_vector(traj.states[k], traj.meta["n"])
