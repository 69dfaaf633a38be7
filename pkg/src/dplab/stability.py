"""Orbital-stability experiments around a solitary wave.

Perturbed initial data, the orbital distance to the translation orbit of
``phi``, the foliation decomposition ``u(. + r) = phi + h`` with
``(h, phi_x) = 0``, the a priori ``L^inf``-``L^2`` estimate, the root
certificate ``r1 < r2`` and a sweep driver tying them to the time stepper.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np
import scipy.fft as sfft
from scipy.optimize import brentq, minimize_scalar

from . import evolution
from .linops import assemble_Lc, constrained_coercivity
from .profile import SolitaryWave, WaveParams, build_profile, first_integral_F
from .spectral import (
    Field,
    Grid,
    derivative,
    functional_S,
    h3_norm,
    inner_l2,
    l2_norm,
    lagrangian_Q,
    linf_norm,
    make_grid,
    shift,
)

log = logging.getLogger(__name__)

SQRT2 = math.sqrt(2.0)


class InvalidInitialData(ValueError):
    pass


class FoliationError(RuntimeError):
    pass


# ---------------------------------------------------------------- initial data


@dataclass(frozen=True)
class Perturbation:
    """``u0 = phi + delta * v`` with ``v`` of unit Fourier H^3 norm.

    ``shape_id`` is ``"gaussian"``, ``"random:SEED"``, ``"kernel"`` (``v ~ phi_x``)
    or ``"custom"`` (``custom`` holds the direction).
    """

    delta: float
    shape_id: str = "gaussian"
    s_matched: bool = True
    width: float = 1.0
    center: float = 0.0
    custom: Field | None = field(default=None, compare=False)


def perturbation_direction(w: SolitaryWave, p: Perturbation) -> Field:
    g = w.grid
    shape = p.shape_id
    if shape == "gaussian":
        v = Field(g, np.exp(-0.5 * ((g.x - p.center) / p.width) ** 2))
    elif shape.startswith("random"):
        _, _, seed = shape.partition(":")
        rng = np.random.default_rng(int(seed) if seed else 0)
        coef = np.zeros(g.N, dtype=complex)
        band = np.abs(g.mode_index) <= g.N // 8
        coef[band] = rng.standard_normal(band.sum()) + 1j * rng.standard_normal(band.sum())
        v = Field(g, sfft.ifft(coef).real)
    elif shape == "kernel":
        v = w.phi_x
    elif shape == "custom":
        if p.custom is None:
            raise ValueError("custom shape needs a field")
        v = p.custom
    else:
        raise ValueError(f"unknown perturbation shape {shape!r}")
    norm = h3_norm(v)
    if norm == 0.0:
        raise ValueError("perturbation direction is zero")
    return v / norm


def momentum_w(u: Field, k: float) -> Field:
    """``w = u - u_xx + 2k/3``."""
    return u - derivative(u, 2) + 2.0 * k / 3.0


def make_perturbed_initial(w: SolitaryWave, p: Perturbation) -> Field:
    """Perturbed initial profile; raises ``InvalidInitialData`` unless ``w0 > 0`` on the grid.

    With ``s_matched`` the whole profile is rescaled by the factor near 1
    that restores ``S(u0) = S(phi)`` (``S`` is quadratic, so the factor is
    ``sqrt(S(phi) / S(u0))``).
    """
    if p.delta == 0.0:
        return w.phi
    u0 = w.phi + p.delta * perturbation_direction(w, p)
    if p.s_matched:
        u0 = math.sqrt(functional_S(w.phi) / functional_S(u0)) * u0
    wmin = float(momentum_w(u0, w.k).values.min())
    if not wmin > 0.0:
        raise InvalidInitialData(
            f"w0 = u0 - u0_xx + 2k/3 reaches {wmin:.3e} <= 0 (delta={p.delta:g}, shape={p.shape_id})"
        )
    log.debug("perturbed data: delta=%g min w0=%.6g", p.delta, wmin)
    return u0


# ---------------------------------------------------------- orbit geometry


@dataclass(frozen=True)
class OrbitalDistance:
    d2: float
    dinf: float
    x0: float


def _wrap(a: float, L: float) -> float:
    return (a + L) % (2.0 * L) - L


def orbital_distance(u: Field, w: SolitaryWave) -> OrbitalDistance:
    """Distance from ``u`` to the orbit ``{phi(. - a)}``, at the L^2-optimal shift ``x0``.

    The correlation ``(u, phi(. - a))`` is evaluated at every grid shift by
    FFT, refined by a parabola through the peak and polished with Newton
    steps on its band-limited interpolant.
    """
    g = u.grid
    if g != w.grid:
        raise ValueError("grid mismatch")
    N, dx = g.N, g.dx
    P = sfft.fft(u.values) * np.conj(sfft.fft(w.phi.values))
    corr = dx * sfft.ifft(P).real
    m = np.arange(N)
    shifts = np.where(m < N // 2, m, m - N) * dx
    top = corr.max()
    ties = np.flatnonzero(corr >= top - 1e-15 * max(abs(top), 1e-300))
    i = int(ties[np.argmin(np.abs(shifts[ties]))])
    cm, c0, cp = corr[i - 1], corr[i], corr[(i + 1) % N]
    curv = cm - 2.0 * c0 + cp
    a = shifts[i]
    if curv < 0.0 and abs(curv) > 1e-14 * max(abs(c0), 1e-300):
        a += dx * 0.5 * (cm - cp) / curv
        xi = g.wavenumbers.copy()
        P = P.copy()
        P[N // 2] = 0.0
        for _ in range(3):
            e = np.exp(1j * xi * a)
            d1 = -(dx / N) * np.sum(xi * P * e).imag
            d2c = -(dx / N) * np.sum(xi * xi * P * e).real
            if not d2c < 0.0:
                break
            step = d1 / d2c
            if abs(step) > dx:
                break
            a -= step
            if abs(step) < 1e-14 * g.L:
                break
    x0 = _wrap(a, g.L)
    diff = u - shift(w.phi, x0)
    return OrbitalDistance(l2_norm(diff), linf_norm(diff), x0)


def foliation_decompose(
    u: Field, w: SolitaryWave, radius: float | None = None, tol: float = 1e-10
) -> tuple[float, Field]:
    """Shift ``r`` and remainder ``h = u(. + r) - phi`` with ``(h, phi_x) = 0``.

    ``radius`` bounds the admissible orbital distance (default
    ``0.1 * ||phi||``); beyond it, or if Newton fails, ``FoliationError``.
    """
    g = u.grid
    dist = orbital_distance(u, w)
    radius = 0.1 * l2_norm(w.phi) if radius is None else radius
    if dist.d2 > radius:
        raise FoliationError(f"orbital distance {dist.d2:.3e} exceeds radius {radius:.3e}")
    N, dx = g.N, g.dx
    xi = g.wavenumbers
    # F(r) = (u(. + r), phi_x) evaluated from Fourier coefficients
    P = sfft.fft(u.values) * np.conj(sfft.fft(w.phi_x.values))
    P[N // 2] = 0.0

    def F(r):
        return (dx / N) * np.sum(P * np.exp(1j * xi * r)).real

    def dF(r):
        return -(dx / N) * np.sum(xi * P * np.exp(1j * xi * r)).imag

    px2 = inner_l2(w.phi_x, w.phi_x)
    r = dist.x0
    for _ in range(50):
        f, df = F(r), dF(r)
        if abs(f) <= 1e-3 * tol * px2:
            break
        if df == 0.0 or not np.isfinite(df):
            raise FoliationError("degenerate derivative in foliation root-find")
        step = f / df
        if abs(step) > 4.0 * dx:
            # outside the Newton basin; bracket around the orbital shift instead
            lo, hi = dist.x0 - 4.0 * dx, dist.x0 + 4.0 * dx
            if F(lo) * F(hi) > 0:
                raise FoliationError("foliation root-find diverged")
            r = brentq(F, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
            break
        r -= step
    else:
        raise FoliationError("foliation root-find did not converge")
    r = _wrap(r, g.L)
    h = shift(u, -r) - w.phi
    if abs(inner_l2(h, w.phi_x)) > tol * px2:
        raise FoliationError(f"orthogonality defect {inner_l2(h, w.phi_x):.3e}")
    return r, h


# ------------------------------------------------------------- inequalities


def max_slope(p: WaveParams) -> float:
    """``sup |phi'| = sup_{0 < psi < Phi} sqrt(F(psi))``."""
    a = p.max_height
    res = minimize_scalar(
        lambda s: -first_integral_F(p, s), bounds=(0.0, a), method="bounded",
        options={"xatol": 1e-12 * a},
    )
    return float(math.sqrt(max(-res.fun, 0.0)))


def linfty_bracket(w: SolitaryWave, g_l2: float) -> float:
    """``1 + 4k/3 + sqrt2 ||g||^(2/3) + 2||phi||_inf + 2||phi'||_inf``."""
    return (
        1.0
        + 4.0 * w.k / 3.0
        + SQRT2 * g_l2 ** (2.0 / 3.0)
        + 2.0 * w.max_height
        + 2.0 * max_slope(w.params)
    )


def apriori_linfty_check(u: Field, w: SolitaryWave, x0: float, k: float | None = None) -> float:
    """Slack ``RHS - LHS`` of ``||g||_inf <= ||g||_2^(2/3) * bracket`` with ``g = u - phi(. - x0)``.

    ``k`` defaults to the wave's own dispersion parameter.
    """
    k = w.k if k is None else k
    g = u - shift(w.phi, x0)
    n2 = l2_norm(g)
    bracket = (
        1.0 + 4.0 * k / 3.0 + SQRT2 * n2 ** (2.0 / 3.0) + 2.0 * w.max_height + 2.0 * max_slope(w.params)
    )
    return n2 ** (2.0 / 3.0) * bracket - linf_norm(g)


def gamma_constant(w: SolitaryWave) -> float:
    """``(1 + 4k/3 + 2||phi||_inf + 2||phi'||_inf) / 6``."""
    return (1.0 + 4.0 * w.k / 3.0 + 2.0 * w.max_height + 2.0 * max_slope(w.params)) / 6.0


# -------------------------------------------------------------- certificate


@dataclass(frozen=True)
class Certificate:
    alpha: float
    beta: float
    gamma: float
    Qbar: float
    r1: float | None
    r2: float | None

    @property
    def has_roots(self) -> bool:
        return self.r1 is not None


def certificate_polynomial(r, alpha, beta, gamma, Qbar):
    r = np.asarray(r, dtype=float)
    return Qbar - alpha * r**2 + gamma * r ** (8 / 3) + beta * r**3 + (SQRT2 / 6) * r ** (10 / 3)


def stability_certificate(alpha: float, beta: float, gamma: float, Qbar: float) -> Certificate:
    """Two smallest positive roots of
    ``f(r) = Qbar - alpha r^2 + gamma r^(8/3) + beta r^3 + sqrt2/6 r^(10/3)``.

    ``f'(r)/r`` is increasing, so ``f`` has a single interior minimum ``r_m``;
    ``r1 in [0, r_m]`` and ``r2 > r_m``.  If ``f(r_m) > 0`` there are no roots
    and ``r1 = r2 = None``.
    """
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if beta < 0 or gamma < 0 or Qbar < 0:
        raise ValueError("beta, gamma and Qbar must be nonnegative")

    def f(r):
        return float(certificate_polynomial(r, alpha, beta, gamma, Qbar))

    def slope_over_r(r):
        return (
            -2 * alpha + (8 / 3) * gamma * r ** (2 / 3) + 3 * beta * r + (5 * SQRT2 / 9) * r ** (4 / 3)
        )

    hi = 1.0
    while slope_over_r(hi) <= 0:
        hi *= 2.0
    r_m = brentq(slope_over_r, 0.0, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps)
    fm = f(r_m)
    if fm > 0:
        return Certificate(alpha, beta, gamma, Qbar, None, None)
    tight = dict(xtol=1e-300, rtol=4 * np.finfo(float).eps)
    r1 = 0.0 if Qbar == 0 else (r_m if fm == 0 else brentq(f, 0.0, r_m, **tight))
    top = 2.0 * r_m
    while f(top) <= 0:
        top *= 2.0
    r2 = r_m if fm == 0 else brentq(f, r_m, top, **tight)
    return Certificate(alpha, beta, gamma, Qbar, float(r1), float(r2))


def loglog_slope(x, y) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


# -------------------------------------------------------------------- sweep


@dataclass(frozen=True)
class SweepConfig:
    dt: float = 1e-3
    sample_every: int = 100
    shape: str = "gaussian"
    s_matched: bool = True
    beta: float = 0.0
    cfl: float = evolution.DEFAULT_CFL
    lin_N: int = 1024
    workers: int | None = None
    foliation_radius: float | None = None


TIMESERIES_COLUMNS = ("t", "d2", "dinf", "x0", "S_drift", "H_drift", "min_w", "linfty_slack")


@dataclass
class MemberResult:
    delta: float
    timeseries: np.ndarray
    Qbar: float
    h3_distance: float
    min_w0: float
    breaking_suspected: bool
    foliation_failures: int
    shift_mismatch: float
    history: tuple = ()
    l2_u0: float = 0.0

    @property
    def sup_d2(self) -> float:
        return float(self.timeseries[:, 1].max())

    @property
    def sup_dinf(self) -> float:
        return float(self.timeseries[:, 2].max())

    @property
    def min_linfty_slack(self) -> float:
        return float(self.timeseries[:, 7].min())


@dataclass
class StabilityReport:
    params: WaveParams
    grid: Grid
    t_end: float
    config: SweepConfig
    members: list[MemberResult]
    alpha: float
    gamma: float
    certificates: list[Certificate]

    def crossed(self, i: int) -> bool:
        """Whether member ``i`` ever sits beyond its ``r1`` barrier."""
        cert = self.certificates[i]
        if not cert.has_roots:
            return True
        return bool(np.any(self.members[i].timeseries[:, 1] > cert.r1))

    def r1_slope(self) -> float | None:
        pts = [(c.Qbar, c.r1) for c in self.certificates if c.has_roots and c.Qbar > 0 and c.r1 > 0]
        if len(pts) < 2:
            return None
        q, r = zip(*pts)
        return loglog_slope(q, r)

    def monotone_in_delta(self) -> bool:
        order = np.argsort([m.delta for m in self.members])
        sup = [self.members[i].sup_d2 for i in order]
        return bool(np.all(np.diff(sup) >= 0))

    def summary(self) -> dict:
        rows = []
        for i, (m, cert) in enumerate(zip(self.members, self.certificates)):
            rows.append(
                {
                    "delta": m.delta,
                    "sup_d2": m.sup_d2,
                    "sup_dinf": m.sup_dinf,
                    "sup_d2_over_delta": m.sup_d2 / m.delta if m.delta else None,
                    "min_linfty_slack": m.min_linfty_slack,
                    "linfty_inequality_holds": m.min_linfty_slack >= 0.0,
                    "h3_distance": m.h3_distance,
                    "min_w0": m.min_w0,
                    "breaking_suspected": m.breaking_suspected,
                    "foliation_failures": m.foliation_failures,
                    "max_shift_mismatch": m.shift_mismatch,
                    "certificate": asdict(cert),
                    "crossed_r1": self.crossed(i),
                }
            )
        return {
            "c": self.params.c,
            "k": self.params.k,
            "N": self.grid.N,
            "L": self.grid.L,
            "t_end": self.t_end,
            "alpha": self.alpha,
            "alpha_certificate": 0.5 * self.alpha,
            "gamma": self.gamma,
            "beta_assumed": self.config.beta,
            "r1_loglog_slope": self.r1_slope(),
            "sup_d2_monotone_in_delta": self.monotone_in_delta(),
            "members": rows,
        }


def _run_member(w: SolitaryWave, delta: float, t_end: float, cfg: SweepConfig) -> MemberResult:
    p = Perturbation(delta, cfg.shape, cfg.s_matched)
    u0 = make_perturbed_initial(w, p)
    S0 = functional_S(u0)
    rows = []
    fol_fail = 0
    mismatch = 0.0

    def observe(t, u):
        nonlocal fol_fail, mismatch
        od = orbital_distance(u, w)
        slack = apriori_linfty_check(u, w, od.x0)
        rows.append([t, od.d2, od.dinf, od.x0, 0.0, 0.0, 0.0, slack])
        try:
            r, _ = foliation_decompose(u, w, cfg.foliation_radius)
            mismatch = max(mismatch, abs(_wrap(r - od.x0, w.grid.L)))
        except FoliationError:
            fol_fail += 1

    state = evolution.run(
        u0, w.k, t_end, cfg.dt, cfg.sample_every, cfl=cfg.cfl, observer=observe
    )
    ts = np.array(rows)
    hist = state.history[: len(rows)]
    S = np.array([h.S for h in hist])
    H = np.array([h.H for h in hist])
    ts[:, 4] = (S - S0) / abs(S0)
    ts[:, 5] = (H - H[0]) / abs(H[0])
    ts[:, 6] = [h.min_w for h in hist]
    Qbar = lagrangian_Q(u0, w.c, w.k) - lagrangian_Q(w.phi, w.c, w.k)
    return MemberResult(
        delta=float(delta),
        timeseries=ts,
        Qbar=float(Qbar),
        h3_distance=h3_norm(u0 - w.phi),
        min_w0=float(momentum_w(u0, w.k).values.min()),
        breaking_suspected=state.breaking_suspected,
        foliation_failures=fol_fail,
        shift_mismatch=mismatch,
        history=state.history,
        l2_u0=l2_norm(u0),
    )


def worker_count(requested: int | None, n_tasks: int) -> int:
    """Process count for a sweep: the request (default: CPU count), capped by ``DPLAB_THREADS``."""
    n = requested if requested else (os.cpu_count() or 1)
    env = os.environ.get("DPLAB_THREADS")
    if env:
        n = min(n, int(env))
    return max(1, min(n, n_tasks))


def coercivity_constant(params: WaveParams, L: float, N: int) -> float:
    wl = build_profile(params, make_grid(L, N))
    return constrained_coercivity(assemble_Lc(wl), wl)


def stability_sweep(
    w: SolitaryWave, deltas, t_end: float, config: SweepConfig | None = None
) -> StabilityReport:
    """Evolve ``phi + delta v`` for each delta and collect orbital diagnostics.

    The coercivity constant is measured on a dense grid with ``config.lin_N``
    points over the same box.  The certificate uses ``alpha / 2`` because the
    bound it encodes is on ``(L_c h, h) / 2``.
    """
    cfg = config or SweepConfig()
    deltas = [float(d) for d in deltas]
    n = worker_count(cfg.workers, len(deltas))
    if n > 1:
        with ProcessPoolExecutor(max_workers=n) as ex:
            futs = [ex.submit(_run_member, w, d, t_end, cfg) for d in deltas]
            members = [f.result() for f in futs]
    else:
        members = [_run_member(w, d, t_end, cfg) for d in deltas]

    alpha = coercivity_constant(w.params, w.grid.L, cfg.lin_N)
    gamma = gamma_constant(w)
    certs = [stability_certificate(0.5 * alpha, cfg.beta, gamma, abs(m.Qbar)) for m in members]
    return StabilityReport(w.params, w.grid, t_end, cfg, members, alpha, gamma, certs)
