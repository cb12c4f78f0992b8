"""Spin ensembles and their dipole-dipole coupling coefficients.

Lengths are measured in units of the transition wavelength ``lambda0`` and
rates in units of the single-spin decay rate ``gamma`` unless a
``SpinSystem`` is built with other values.  The coherent exchange matrix
``omega`` and the collective decay matrix ``gammam`` follow from the
analytic far/near-field functions :func:`greens_F` and :func:`greens_G`.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import GeometryError

EPS_POS = 1e-9
DIPOLE_TOL = 1e-6
# below this the F series expansion is used; the closed form cancels badly
_SERIES_XI = 0.1
_PSD_CHECK_MAX_N = 500
_ROW_BLOCK = 512


def _alpha_beta(theta):
    c2 = np.cos(theta) ** 2
    return 1.0 - c2, 1.0 - 3.0 * c2


def _check_xi(xi):
    xi = np.asarray(xi, dtype=float)
    if np.any(~(xi > 0)):
        raise ValueError("scaled separation xi must be > 0 (coincident or invalid sites)")
    return xi


def greens_F(xi, theta):
    """Collective-decay function ``F(xi)`` for dipole angle ``theta``.

    ``alpha*sin(xi)/xi + beta*(cos(xi)/xi**2 - sin(xi)/xi**3)`` with
    ``alpha = 1 - cos(theta)**2`` and ``beta = 1 - 3*cos(theta)**2``.
    Accepts scalars or broadcastable arrays; F tends to 2/3 as xi -> 0.
    """
    xi = _check_xi(xi)
    alpha, beta = _alpha_beta(np.asarray(theta, dtype=float))
    with np.errstate(invalid="ignore", divide="ignore"):
        s, c = np.sin(xi), np.cos(xi)
        direct = alpha * s / xi + beta * (c / xi**2 - s / xi**3)
    x2 = xi * xi
    series = alpha * (1.0 + x2 * (-1.0 / 6 + x2 * (1.0 / 120 + x2 * (-1.0 / 5040 + x2 / 362880)))) + beta * (
        -1.0 / 3 + x2 * (1.0 / 30 + x2 * (-1.0 / 840 + x2 * (1.0 / 45360 - x2 / 3991680)))
    )
    out = np.where(xi < _SERIES_XI, series, direct)
    return out if out.ndim else float(out)


def greens_G(xi, theta):
    """Dipole-exchange function ``G(xi)``; diverges like ``xi**-3`` at short range."""
    xi = _check_xi(xi)
    alpha, beta = _alpha_beta(np.asarray(theta, dtype=float))
    s, c = np.sin(xi), np.cos(xi)
    out = -alpha * c / xi + beta * (s / xi**2 + c / xi**3)
    return out if np.ndim(out) else float(out)


@dataclass(frozen=True)
class SpinSystem:
    """An ensemble of identical two-level spins with a common dipole axis.

    Parameters
    ----------
    positions : array_like, shape (N, 3)
        Site coordinates, same length unit as ``lambda0``.  Shorter
        coordinate tuples are padded with zeros.
    dipole : array_like, shape (3,)
        Common transition dipole direction; must be a unit vector up to
        round-off (|d| within 1e-6 of 1) and is renormalised.
    gamma : float
        Single-spin spontaneous decay rate.
    lambda0 : float
        Transition wavelength; ``k0 = 2*pi/lambda0``.
    """

    positions: np.ndarray
    dipole: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    gamma: float = 1.0
    lambda0: float = 1.0

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim == 1:
            pos = pos.reshape(1, -1) if pos.size <= 3 else pos.reshape(-1, 1)
        if pos.ndim != 2 or pos.shape[0] < 1 or pos.shape[1] > 3:
            raise GeometryError(f"positions must have shape (N, 3) with N >= 1, got {pos.shape}")
        if pos.shape[1] < 3:
            pos = np.hstack([pos, np.zeros((pos.shape[0], 3 - pos.shape[1]))])
        if not np.all(np.isfinite(pos)):
            raise GeometryError("positions contain non-finite values")

        dip = np.asarray(self.dipole, dtype=float).reshape(-1)
        if dip.shape != (3,):
            raise GeometryError(f"dipole must be a 3-vector, got shape {dip.shape}")
        norm = np.linalg.norm(dip)
        if abs(norm - 1.0) >= DIPOLE_TOL:
            raise GeometryError(f"dipole must be a unit vector, |dipole| = {norm:.9g}")
        if not (self.gamma > 0 and self.lambda0 > 0):
            raise GeometryError("gamma and lambda0 must be positive")

        eps = EPS_POS * self.lambda0
        if pos.shape[0] > 1:
            pairs = cKDTree(pos).query_pairs(eps, output_type="ndarray")
            if len(pairs):
                i, j = sorted(pairs[0].tolist())
                raise GeometryError(
                    f"spins {i} and {j} are closer than {eps:g} (coincident positions)"
                )

        pos.setflags(write=False)
        dip = dip / norm
        dip.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "dipole", dip)
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "lambda0", float(self.lambda0))

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def k0(self) -> float:
        return 2.0 * np.pi / self.lambda0

    def central_index(self) -> int:
        """Index of the site closest to the centroid (lowest index on ties)."""
        d = np.linalg.norm(self.positions - self.positions.mean(axis=0), axis=1)
        return int(np.flatnonzero(d <= d.min() + 1e-12 * self.lambda0)[0])

    def __hash__(self):
        return hash((self.positions.tobytes(), self.dipole.tobytes(), self.gamma, self.lambda0))

    def __eq__(self, other):
        if not isinstance(other, SpinSystem):
            return NotImplemented
        return (
            np.array_equal(self.positions, other.positions)
            and np.array_equal(self.dipole, other.dipole)
            and self.gamma == other.gamma
            and self.lambda0 == other.lambda0
        )


@dataclass(frozen=True)
class CouplingMatrices:
    """Pair couplings of a :class:`SpinSystem`.

    ``omega`` is the coherent exchange matrix (zero diagonal) and ``gammam``
    the collective decay matrix (diagonal equal to ``gamma``).  Both are real,
    symmetric and read-only.
    """

    omega: np.ndarray
    gammam: np.ndarray

    @property
    def n(self) -> int:
        return self.omega.shape[0]

    def offdiag_gamma(self) -> np.ndarray:
        g = self.gammam.copy()
        np.fill_diagonal(g, 0.0)
        return g


def coupling_matrices(system: SpinSystem, check_psd: bool | None = None) -> CouplingMatrices:
    """Compute ``omega_ij = 3/4 gamma G(k0 r_ij)`` and ``gammam_ij = 3/2 gamma F(k0 r_ij)``.

    The angle between the dipole and the pair axis enters only through
    ``cos(theta)**2``, so both matrices come out exactly symmetric.  For
    ``N <= 500`` (or when ``check_psd`` is true) the smallest eigenvalue of
    ``gammam`` is checked and a warning issued if it is noticeably negative.
    """
    pos = system.positions
    n = system.n
    omega = np.zeros((n, n))
    gammam = np.zeros((n, n))
    k0 = system.k0
    for start in range(0, n, _ROW_BLOCK):
        stop = min(n, start + _ROW_BLOCK)
        diff = pos[None, :, :] - pos[start:stop, None, :]
        r = np.linalg.norm(diff, axis=2)
        rows = np.arange(start, stop)
        r[rows - start, rows] = 1.0  # placeholder, diagonal overwritten below
        cos_t = np.clip((diff @ system.dipole) / r, -1.0, 1.0)
        theta = np.arccos(cos_t)
        xi = k0 * r
        omega[start:stop] = 0.75 * system.gamma * greens_G(xi, theta)
        gammam[start:stop] = 1.5 * system.gamma * greens_F(xi, theta)
    np.fill_diagonal(omega, 0.0)
    np.fill_diagonal(gammam, system.gamma)
    # the row-block evaluation is symmetric up to the last bit; enforce it exactly
    omega = 0.5 * (omega + omega.T)
    gammam = 0.5 * (gammam + gammam.T)

    if check_psd is None:
        check_psd = n <= _PSD_CHECK_MAX_N
    if check_psd and n > 1:
        lam_min = float(np.linalg.eigvalsh(gammam)[0])
        if lam_min < -1e-10 * system.gamma * n:
            warnings.warn(
                f"collective decay matrix is not positive semidefinite (min eigenvalue {lam_min:.3e})",
                RuntimeWarning,
                stacklevel=2,
            )
    omega.setflags(write=False)
    gammam.setflags(write=False)
    return CouplingMatrices(omega=omega, gammam=gammam)


# ---------------------------------------------------------------------------
# geometry builders; all return (N, 3) arrays centred on the origin
# ---------------------------------------------------------------------------


def _check_count(name, value, minimum=1):
    if int(value) != value or value < minimum:
        raise ValueError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def _check_spacing(d):
    if not d > 0:
        raise ValueError(f"spacing d must be > 0, got {d!r}")
    return float(d)


def _centred_axis(n, d):
    return (np.arange(n) - 0.5 * (n - 1)) * d


def cubic_lattice(nx: int, ny: int, nz: int, d: float) -> np.ndarray:
    """``nx*ny*nz`` sites on a simple cubic grid of spacing ``d``.

    Ordering is x-major: index ``(ix*ny + iy)*nz + iz``.
    """
    nx, ny, nz = (_check_count(k, v) for k, v in (("nx", nx), ("ny", ny), ("nz", nz)))
    d = _check_spacing(d)
    gx, gy, gz = np.meshgrid(
        _centred_axis(nx, d), _centred_axis(ny, d), _centred_axis(nz, d), indexing="ij"
    )
    return np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])


def square_lattice(nx: int, ny: int, d: float) -> np.ndarray:
    """``nx*ny`` sites on a square grid in the x-y plane."""
    return cubic_lattice(nx, ny, 1, d)


def chain(n: int, d: float) -> np.ndarray:
    """``n`` equidistant sites along the x axis; the central site sits at index ``n//2``."""
    return cubic_lattice(n, 1, 1, d)


def hexagonal_rings(nrings: int, d: float) -> np.ndarray:
    """Triangular-lattice patch: the central site plus ``nrings`` hexagonal shells.

    Site 0 is the centre; shells follow outward, each ordered by polar angle
    in ``[0, 2*pi)``.  ``N = 1 + 3*nrings*(nrings + 1)``.
    """
    nrings = _check_count("nrings", nrings, minimum=0)
    d = _check_spacing(d)
    a1 = np.array([1.0, 0.0])
    a2 = np.array([0.5, 0.5 * np.sqrt(3.0)])
    pts = [np.zeros(3)]
    for m in range(1, nrings + 1):
        shell = []
        for q in range(-m, m + 1):
            for r in range(-m, m + 1):
                if (abs(q) + abs(r) + abs(q + r)) // 2 == m:
                    xy = d * (q * a1 + r * a2)
                    ang = np.arctan2(xy[1], xy[0]) % (2.0 * np.pi)
                    # round so that points at angle ~2*pi fold back to 0 deterministically
                    ang = round(ang, 12) % round(2.0 * np.pi, 12)
                    shell.append((ang, xy))
        shell.sort(key=lambda item: item[0])
        pts.extend(np.array([xy[0], xy[1], 0.0]) for _, xy in shell)
    return np.array(pts)
