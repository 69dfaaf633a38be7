"""Smooth solitary waves of the DP equation with linear dispersion.

The profile solves the first integral ``phi_x^2 = F(phi)`` with::

    F(psi) = psi^2 + 2k psi^2 (2 psi/3 - c) / (c - psi)^2
           = psi^2 (a - psi)(b - psi) / (c - psi)^2

where ``a = Phi_c`` is the wave height and ``b > c`` the second root of
``(c - psi)^2 + 2k(2 psi/3 - c)``.  The inverse map
``x(phi) = int_phi^a dpsi / sqrt(F(psi))`` is elementary, so the profile is
obtained by inverting a closed form rather than by quadrature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .spectral import Field, Grid, derivative, apply_symbol, SymbolId

DEFAULT_TOL = 1e-10


@dataclass(frozen=True)
class WaveParams:
    c: float
    k: float

    def __post_init__(self):
        c, k = float(self.c), float(self.k)
        if not (np.isfinite(c) and np.isfinite(k) and c > 2.0 * k > 0.0):
            raise ValueError(f"need c > 2k > 0, got c={self.c!r}, k={self.k!r}")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "k", k)

    @property
    def roots(self) -> tuple[float, float]:
        """Roots ``a < b`` of ``(c - psi)^2 + 2k(2 psi/3 - c)``."""
        c, k = self.c, self.k
        mid = c - 2.0 * k / 3.0
        disc = math.sqrt(2.0 * k * c / 3.0 + 4.0 * k * k / 9.0)
        b = mid + disc
        # product of roots is c^2 - 2kc; avoids cancellation in mid - disc
        a = (c * c - 2.0 * k * c) / b
        return a, b

    @property
    def max_height(self) -> float:
        return self.roots[0]

    @property
    def decay_rate(self) -> float:
        return math.sqrt(1.0 - 2.0 * self.k / self.c)


def max_height(p: WaveParams) -> float:
    """Wave height ``Phi_c = (c - 2k/3) - sqrt(2kc/3 + 4k^2/9)``."""
    return p.max_height


def first_integral_F(p: WaveParams, psi):
    """Right-hand side of ``phi_x^2 = F(phi)``."""
    c, k = p.c, p.k
    psi = np.asarray(psi, dtype=float)
    return psi**2 + 2.0 * k * psi**2 * (2.0 * psi / 3.0 - c) / (c - psi) ** 2


def inverse_map(p: WaveParams, phi) -> np.ndarray:
    """Distance ``x >= 0`` from the crest at which the profile equals ``phi``.

    Valid for ``0 < phi <= Phi_c``.  Uses the antiderivatives of
    ``1/sqrt(q)`` and ``1/(psi sqrt(q))`` with ``q = (a - psi)(b - psi)``.
    """
    a, b = p.roots
    phi = np.asarray(phi, dtype=float)
    am = np.maximum(a - phi, 0.0)
    bm = b - phi
    sab = math.sqrt(a * b)
    sq = np.sqrt(am * bm)
    recip = np.log((2.0 * a * b - (a + b) * phi + 2.0 * sab * sq) / (phi * (b - a))) / sab
    plain = 2.0 * np.log((np.sqrt(am) + np.sqrt(bm)) / math.sqrt(b - a))
    return p.c * recip - plain


@dataclass(frozen=True, eq=False)
class SolitaryWave:
    params: WaveParams
    grid: Grid
    phi: Field
    phi_x: Field
    max_height: float
    decay_rate: float
    rho: Field
    psi_tilde: Field
    w_profile: Field

    @property
    def c(self) -> float:
        return self.params.c

    @property
    def k(self) -> float:
        return self.params.k


def _invert(p: WaveParams, targets: np.ndarray, tol: float) -> np.ndarray:
    """Solve ``inverse_map(phi) = x`` for every ``x`` in ``targets`` (all > 0).

    Bisection on ``log phi``; the map is strictly decreasing in ``phi``.
    """
    a = p.max_height
    hi = np.full(targets.shape, math.log(a))
    lo_val = math.log(a) - p.decay_rate * (float(targets.max()) + 10.0) - 50.0
    lo = np.full(targets.shape, lo_val)
    if np.any(inverse_map(p, np.exp(lo)) < targets):
        raise RuntimeError("inverse map bracket failed at the tail")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        too_small = inverse_map(p, np.exp(mid)) > targets
        lo = np.where(too_small, mid, lo)
        hi = np.where(too_small, hi, mid)
        if np.all(hi - lo <= 4.0 * np.spacing(np.abs(hi)) + 1e-300):
            break
    else:
        raise RuntimeError("profile inversion failed to converge")
    phi = np.exp(0.5 * (lo + hi))
    if not np.all(np.isfinite(phi)) or np.any(phi <= 0.0):
        raise RuntimeError("profile inversion produced invalid values")
    return phi


def build_profile(p: WaveParams, g: Grid, tol: float = DEFAULT_TOL) -> SolitaryWave:
    """Sample the solitary wave ``phi^c`` on ``g`` with the crest at ``x = 0``.

    Raises ``ValueError`` when the box is too short for the tail to drop
    below ``tol``.
    """
    a = p.max_height
    mu = p.decay_rate
    if a * math.exp(-mu * g.L) >= tol:
        raise ValueError(
            f"grid too short: tail {a * math.exp(-mu * g.L):.3e} >= tol {tol:.1e}; increase L"
        )
    N = g.N
    half = N // 2
    # |x_j| for j = half..N-1 covers 0..L-dx; x_0 = -L is the only other distance
    dist = np.abs(g.x[half:])
    dist = np.append(dist, g.L)
    vals = np.empty_like(dist)
    vals[0] = a
    vals[1:] = _invert(p, dist[1:], tol)

    phi = np.empty(N)
    phi[half:] = vals[:-1]
    phi[1:half] = vals[1:half][::-1]
    phi[0] = vals[-1]

    c, k = p.c, p.k
    b = p.roots[1]
    slope = phi * np.sqrt(np.maximum(a - phi, 0.0) * (b - phi)) / (c - phi)
    phi_x = -np.sign(g.x) * slope
    phi_x[half] = 0.0

    rho = (2.0 * c * phi - phi**2) / (6.0 * c + 4.0 * k)
    psi_tilde = (3.0 * phi + 4.0 * k) * phi / (2.0 * (3.0 * c + 2.0 * k))
    w = (2.0 * k / 3.0) * c**3 / (c - phi) ** 3

    return SolitaryWave(
        params=p,
        grid=g,
        phi=Field(g, phi),
        phi_x=Field(g, phi_x),
        max_height=a,
        decay_rate=mu,
        rho=Field(g, rho),
        psi_tilde=Field(g, psi_tilde),
        w_profile=Field(g, w),
    )


def travel_ode_residual(phi: Field, c: float, k: float) -> float:
    """``max |(c - phi)(phi - phi_xx) - (phi^2 + 2k phi - phi_x^2)|``, derivatives spectral."""
    px = derivative(phi).values
    pxx = derivative(phi, 2).values
    u = phi.values
    r = (c - u) * (u - pxx) - (u * u + 2.0 * k * u - px * px)
    return float(np.max(np.abs(r)))


def residual_travel_ode(w: SolitaryWave) -> float:
    return travel_ode_residual(w.phi, w.c, w.k)


@dataclass(frozen=True)
class ClosedFormReport:
    rho: float
    psi_tilde: float
    momentum: float

    def max(self) -> float:
        return max(self.rho, self.psi_tilde, self.momentum)


def closed_form_checks(w: SolitaryWave) -> ClosedFormReport:
    """Max deviations between the closed-form companions and their spectral versions."""
    c, k = w.c, w.k
    phi = w.phi
    rho_fft = apply_symbol(phi, SymbolId.HELMHOLTZ4_INV).values
    psi_fft = apply_symbol(phi, SymbolId.S_WEIGHT).values
    m_fft = phi.values - derivative(phi, 2).values
    m_closed = (2.0 * k / 3.0) * (c**3 / (c - phi.values) ** 3 - 1.0)
    return ClosedFormReport(
        rho=float(np.max(np.abs(w.rho.values - rho_fft))),
        psi_tilde=float(np.max(np.abs(w.psi_tilde.values - psi_fft))),
        momentum=float(np.max(np.abs(m_closed - m_fft))),
    )
