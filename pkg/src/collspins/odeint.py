"""Adaptive explicit Runge-Kutta integration on a prescribed output grid.

The stepper is the Dormand-Prince 5(4) pair with FSAL reuse and a PI
step-size controller.  Steps are truncated so that every requested output
time is hit exactly; no dense-output interpolation is involved.  States are
flat real vectors; complex problems are passed in as interleaved (re, im).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .errors import IntegrationError

# Dormand & Prince (1980) coefficients
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    np.zeros(0),
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_A = [np.asarray(row, dtype=float) for row in _A]
# last row of _A doubles as the 5th-order weights; _E = b5 - b4
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])

_SAFETY = 0.9
_FAC_MIN = 0.2
_FAC_MAX = 10.0
_BETA = 0.04
_ALPHA = 0.2 - 0.75 * _BETA
_ERR_FLOOR = 1e-4


@dataclass(frozen=True)
class IntegratorConfig:
    rtol: float = 1e-8
    atol: float = 1e-10
    max_steps: int = 10_000_000
    initial_step: float | None = None

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError("rtol and atol must be positive")
        if int(self.max_steps) != self.max_steps or self.max_steps < 1:
            raise ValueError("max_steps must be an integer >= 1")
        if self.initial_step is not None and not self.initial_step > 0:
            raise ValueError("initial_step must be positive")
        object.__setattr__(self, "max_steps", int(self.max_steps))


@dataclass
class Trajectory:
    """Solution snapshots on an output grid.

    ``states[k]`` is the flat state vector at ``times[k]``.  ``meta`` carries
    at least a ``method`` tag and, for spin solvers, ``n`` (number of spins);
    ``stats`` records step counts.
    """

    times: np.ndarray
    states: np.ndarray
    meta: dict[str, Any] = field(default_factory=dict)
    stats: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states)
        if len(self.times) != len(self.states):
            raise ValueError("times and states must have equal length")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    def __len__(self):
        return len(self.times)

    @property
    def method(self) -> str:
        return self.meta.get("method", "")


def _rms(x):
    return float(np.sqrt(np.mean(x * x))) if x.size else 0.0


def _initial_step(rhs, t0, y0, f0, t_span, rtol, atol):
    """Starting step from Hairer, Norsett & Wanner, Solving ODEs I, II.4."""
    scale = atol + rtol * np.abs(y0)
    d0 = _rms(y0 / scale)
    d1 = _rms(f0 / scale)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, t_span)
    f1 = rhs(y0 + h0 * f0)
    d2 = _rms((f1 - f0) / scale) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / 5.0)
    return min(100.0 * h0, h1, t_span)


def _checked(f, t):
    if not np.all(np.isfinite(f)):
        raise IntegrationError(f"non-finite derivative encountered at t={t:.17g}", t)
    return f


def integrate(
    rhs: Callable[[np.ndarray], np.ndarray],
    y0,
    t_out,
    cfg: IntegratorConfig | None = None,
    meta: dict | None = None,
) -> Trajectory:
    """Integrate the autonomous system ``dy/dt = rhs(y)`` onto ``t_out``.

    ``states[0]`` is ``y0`` itself (the integration starts at ``t_out[0]``).
    Raises :class:`IntegrationError` if more than ``cfg.max_steps`` steps are
    attempted or the derivative becomes non-finite.
    """
    cfg = cfg or IntegratorConfig()
    t_out = np.asarray(t_out, dtype=float).reshape(-1)
    if t_out.size == 0:
        raise ValueError("t_out must be non-empty")
    if t_out[0] < 0 or np.any(np.diff(t_out) <= 0):
        raise ValueError("t_out must start at t >= 0 and be strictly increasing")
    y = np.array(y0, dtype=float).reshape(-1)

    states = np.empty((t_out.size, y.size))
    states[0] = y
    t = float(t_out[0])
    stats = {"steps": 0, "rejected": 0, "rhs_evals": 0}
    if t_out.size == 1:
        return Trajectory(t_out.copy(), states, dict(meta or {}), stats)

    def f(yy, tt):
        stats["rhs_evals"] += 1
        return _checked(np.asarray(rhs(yy), dtype=float).reshape(-1), tt)

    k = np.empty((7, y.size))
    k[0] = f(y, t)
    if cfg.initial_step is not None:
        h = cfg.initial_step
    else:
        h = _initial_step(lambda yy: f(yy, t), t, y, k[0], t_out[-1] - t, cfg.rtol, cfg.atol)
    err_prev = _ERR_FLOOR
    rejected_last = False

    for idx in range(1, t_out.size):
        t_target = float(t_out[idx])
        while t < t_target:
            if stats["steps"] + stats["rejected"] >= cfg.max_steps:
                raise IntegrationError(
                    f"exceeded max_steps={cfg.max_steps} before reaching t={t_target:g}", t
                )
            remaining = t_target - t
            # land on the output point; avoid leaving a sliver that forces a tiny step
            last = h >= remaining or h > 0.99 * remaining
            h_try = remaining if last else h

            for s in range(1, 7):
                ys = y + h_try * (_A[s] @ k[:s])
                k[s] = f(ys, t + _C[s] * h_try)
            y_new = ys  # stage 7 evaluates at the 5th-order solution (FSAL)
            err_vec = h_try * (_E @ k)
            scale = cfg.atol + cfg.rtol * np.maximum(np.abs(y), np.abs(y_new))
            err = _rms(err_vec / scale)

            if err <= 1.0:
                t = t_target if last else t + h_try
                y = y_new
                k[0] = k[6]
                stats["steps"] += 1
                err = max(err, _ERR_FLOOR)
                fac = _SAFETY * err**-_ALPHA * err_prev**_BETA
                fac = min(_FAC_MAX if not rejected_last else 1.0, max(_FAC_MIN, fac))
                if last and h_try < h and fac >= 1.0:
                    # a truncated step says nothing about the natural step size
                    h = max(h, h_try * fac)
                else:
                    h = h_try * fac
                err_prev = err
                rejected_last = False
            else:
                stats["rejected"] += 1
                fac = max(_FAC_MIN, _SAFETY * err**-_ALPHA)
                h = h_try * fac
                rejected_last = True
                if t + h == t:
                    raise IntegrationError(f"step size underflow at t={t:.17g}", t)
        states[idx] = y

    return Trajectory(t_out.copy(), states, dict(meta or {}), stats)
