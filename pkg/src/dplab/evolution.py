"""Pseudospectral time integration of the DP equation in weak form::

    u_t + d/dx ( u^2/2 + p * (3/2 u^2 + 2k u) ) = 0,   p * f = (1 - d^2)^-1 f

The quadratic term is dealiased with the 2/3 rule; time stepping is classical
RK4 carried out on real-FFT coefficients.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, NamedTuple

import numpy as np
import scipy.fft as sfft

from .spectral import Field, Grid, SymbolId, apply_symbol, dealias_23

log = logging.getLogger(__name__)

DEFAULT_CFL = 0.5
BREAKING_THRESHOLD = -1e3


class CFLError(ValueError):
    pass


class HistoryRow(NamedTuple):
    t: float
    S: float
    H: float
    min_w: float
    uxu_slack: float
    linf_u: float
    min_ux: float


@dataclass(frozen=True, eq=False)
class SimState:
    t: float
    u: Field
    history: tuple[HistoryRow, ...] = ()
    breaking_suspected: bool = False

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.history])


class _RealOps:
    """Real-FFT multipliers for one grid and dispersion parameter."""

    def __init__(self, grid: Grid, k: float):
        self.grid = grid
        self.k = k
        N = grid.N
        xi = np.pi / grid.L * np.arange(N // 2 + 1)
        self.xi = xi
        ik = 1j * xi
        ik[-1] = 0.0  # odd symbols vanish on the unpaired Nyquist mode
        self.ik = ik
        p1 = 1.0 / (1.0 + xi**2)
        keep = np.arange(N // 2 + 1) <= N // 3
        # rhs_hat = A * fft(u^2) + B * fft(u)
        self.A = np.where(keep, -ik * (0.5 + 1.5 * p1), 0.0)
        self.B = -ik * 2.0 * k * p1
        self.s_weight = (1.0 + xi**2) / (4.0 + xi**2)
        self.h4_inv = 1.0 / (4.0 + xi**2)
        self.neg_xi2 = -(xi**2)

    def rfft(self, u):
        return sfft.rfft(u)

    def irfft(self, uh):
        return sfft.irfft(uh, self.grid.N)

    def rhs_hat(self, uh: np.ndarray, u: np.ndarray | None = None) -> np.ndarray:
        if u is None:
            u = self.irfft(uh)
        return self.A * sfft.rfft(u * u) + self.B * uh

    def diagnostics(self, t: float, u: np.ndarray) -> HistoryRow:
        k = self.k
        dx = self.grid.dx
        uh = self.rfft(u)
        ux = self.irfft(self.ik * uh)
        uxx = self.irfft(self.neg_xi2 * uh)
        S = 0.5 * dx * float(np.dot(u, self.irfft(self.s_weight * uh)))
        quad = dx * float(np.dot(u, self.irfft(self.h4_inv * uh)))
        H = -(dx * float(np.sum(u**3)) + 6.0 * k * quad) / 6.0
        w = u - uxx + 2.0 * k / 3.0
        slack = u + 2.0 * k / 3.0 - np.abs(ux)
        return HistoryRow(
            t=float(t),
            S=S,
            H=H,
            min_w=float(w.min()),
            uxu_slack=float(slack.min()),
            linf_u=float(np.abs(u).max()),
            min_ux=float(ux.min()),
        )


def rhs_weak(u: Field, k: float) -> Field:
    """``-d(u^2/2) - d (1-d^2)^-1 (3/2 u^2 + 2k u)`` with dealiased ``u^2``."""
    ops = _RealOps(u.grid, k)
    return Field(u.grid, ops.irfft(ops.rhs_hat(ops.rfft(u.values), u.values)))


def rhs_hamiltonian(u: Field, k: float) -> Field:
    """``J dH/du`` with ``J = d(4-d^2)(1-d^2)^-1``.

    The variational derivative is ``-u^2/2 - 2k (4-d^2)^-1 u`` with the same
    2/3-rule truncation of ``u^2`` as :func:`rhs_weak`, so the two agree to
    rounding for any grid function.
    """
    grad = -0.5 * dealias_23(u * u) - 2.0 * k * apply_symbol(u, SymbolId.HELMHOLTZ4_INV)
    return apply_symbol(grad, SymbolId.SKEW_J)


def dt_max(u: Field | np.ndarray, grid: Grid, cfl: float = DEFAULT_CFL) -> float:
    vals = u.values if isinstance(u, Field) else u
    return cfl * grid.dx / (float(np.max(np.abs(vals))) + 1.0)


def diagnostics(u: Field, k: float, t: float = 0.0) -> HistoryRow:
    return _RealOps(u.grid, k).diagnostics(t, np.asarray(u.values))


def _rk4(ops: _RealOps, uh: np.ndarray, u: np.ndarray, dt: float) -> np.ndarray:
    k1 = ops.rhs_hat(uh, u)
    k2 = ops.rhs_hat(uh + (0.5 * dt) * k1)
    k3 = ops.rhs_hat(uh + (0.5 * dt) * k2)
    k4 = ops.rhs_hat(uh + dt * k3)
    return uh + (dt / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)


def _check_cfl(u: np.ndarray, grid: Grid, dt: float, cfl: float) -> None:
    lim = dt_max(u, grid, cfl)
    if abs(dt) > lim * (1.0 + 1e-12):
        raise CFLError(f"|dt|={abs(dt):.3e} exceeds CFL limit {lim:.3e}")


def rk4_step(s: SimState, dt: float, k: float, cfl: float = DEFAULT_CFL) -> SimState:
    """One RK4 step.  A non-finite result halts: the input state is returned flagged."""
    if s.breaking_suspected:
        return s
    grid = s.u.grid
    u = np.asarray(s.u.values)
    if dt == 0:
        raise ValueError("dt must be nonzero")
    _check_cfl(u, grid, dt, cfl)
    ops = _RealOps(grid, k)
    u_new = ops.irfft(_rk4(ops, ops.rfft(u), u, dt))
    if not np.all(np.isfinite(u_new)):
        log.warning("non-finite values at t=%g; halting", s.t + dt)
        return replace(s, breaking_suspected=True)
    t = s.t + dt
    row = ops.diagnostics(t, u_new)
    return SimState(t, Field(grid, u_new), s.history + (row,), row.min_ux < BREAKING_THRESHOLD)


def run(
    u0: Field,
    k: float,
    t_end: float,
    dt: float,
    sample_every: int = 100,
    *,
    cfl: float = DEFAULT_CFL,
    breaking_threshold: float = BREAKING_THRESHOLD,
    observer: Callable[[float, Field], None] | None = None,
) -> SimState:
    """Integrate from ``t = 0`` to ``t_end``.

    The step is ``t_end / n`` with ``n = ceil(t_end / dt)``, so the last sample
    lands exactly on ``t_end``.  Diagnostics are recorded at ``t = 0``, every
    ``sample_every`` steps and at the end.  A negative ``t_end`` with negative
    ``dt`` integrates backward in time.
    """
    if dt == 0 or t_end * dt < 0:
        raise ValueError("dt must be nonzero and share the sign of t_end")
    if sample_every < 1:
        raise ValueError("sample_every must be >= 1")
    grid = u0.grid
    ops = _RealOps(grid, k)
    n_steps = max(1, math.ceil(abs(t_end / dt) - 1e-9))
    h = t_end / n_steps

    u = np.array(u0.values)
    uh = ops.rfft(u)
    rows = [ops.diagnostics(0.0, u)]
    if observer is not None:
        observer(0.0, u0)
    breaking = rows[0].min_ux < breaking_threshold
    t = 0.0
    for i in range(1, n_steps + 1):
        _check_cfl(u, grid, h, cfl)
        uh_new = _rk4(ops, uh, u, h)
        u_new = ops.irfft(uh_new)
        if not np.isfinite(u_new.max()) or not np.isfinite(u_new.min()):
            log.warning("non-finite values at t=%g; halting", i * h)
            breaking = True
            break
        uh, u = uh_new, u_new
        t = i * h
        if i % sample_every == 0 or i == n_steps:
            row = ops.diagnostics(t, u)
            rows.append(row)
            if row.min_ux < breaking_threshold and not breaking:
                log.warning("min u_x = %.3e below %.1e at t=%g", row.min_ux, breaking_threshold, t)
                breaking = True
            if observer is not None:
                observer(t, Field(grid, u))
    return SimState(t, Field(grid, u), tuple(rows), breaking)
