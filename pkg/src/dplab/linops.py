"""The linearized operator ``L_c = c - phi - (3c + 2k)(4 - d^2)^-1`` about a solitary wave.

Dense assembly on the periodic grid, spectral classification, constrained
coercivity, the resolvent function ``g(lambda) = ((L_c - lambda)^-1 psi~, psi~)``
and the convexity quantity ``dS(phi^c)/dc``.

The grid inner product has the uniform weight ``dx``, so the eigenvalues of
the nodal matrix are those of ``L_c`` restricted to grid functions; the
matrix ``form = dx * matrix`` reproduces ``(L_c h, h)`` as ``h @ form @ h``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg as sla

from .profile import SolitaryWave, WaveParams, build_profile, DEFAULT_TOL
from .spectral import (
    Field,
    Grid,
    SymbolId,
    apply_symbol,
    functional_S,
    inner_l2,
    lagrangian_Q,
    symbol_values,
)

# classification thresholds at (c, k) = (3, 1); scaled by (c - 2k)
ZERO_TOL = 1e-4
POSITIVE_TOL = 1e-3
COSINE_TOL = 0.999
# an eigenvector counts as extended (continuum-like) with this much mass in |x| > L/2
EXTENDED_MASS = 0.1


@dataclass(frozen=True, eq=False)
class OperatorMatrix:
    matrix: np.ndarray
    grid: Grid
    params: WaveParams

    @property
    def form(self) -> np.ndarray:
        """Matrix of the quadratic form ``(L_c h, h)`` on nodal values."""
        return self.grid.dx * self.matrix

    def apply(self, f: Field) -> Field:
        return Field(self.grid, self.matrix @ f.values)

    def quadratic_form(self, h: Field) -> float:
        return inner_l2(self.apply(h), h)

    def symmetry_defect(self) -> float:
        return float(np.max(np.abs(self.matrix - self.matrix.T)))

    @cached_property
    def eigh(self) -> tuple[np.ndarray, np.ndarray]:
        w, v = np.linalg.eigh(self.matrix)
        w.flags.writeable = False
        v.flags.writeable = False
        return w, v


def apply_Lc(w: SolitaryWave, h: Field) -> Field:
    """Symbol-level action ``(c - phi) h - (3c + 2k)(4 - d^2)^-1 h``."""
    c, k = w.c, w.k
    return (c - w.phi) * h - (3.0 * c + 2.0 * k) * apply_symbol(h, SymbolId.HELMHOLTZ4_INV)


def assemble_Lc(w: SolitaryWave) -> OperatorMatrix:
    g = w.grid
    c, k = w.c, w.k
    col = np.fft.ifft(symbol_values(g, SymbolId.HELMHOLTZ4_INV)).real
    # exact evenness of the kernel makes the circulant exactly symmetric
    col = 0.5 * (col + np.roll(col[::-1], 1))
    M = sla.circulant(col)
    A = -(3.0 * c + 2.0 * k) * M
    A[np.diag_indices_from(A)] += c - w.phi.values
    return OperatorMatrix(A, g, w.params)


def _cosine(u: np.ndarray, v: np.ndarray) -> float:
    return float(np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v)))


@dataclass(frozen=True, eq=False)
class SpectrumReport:
    eigenvalues: np.ndarray
    lambda_star: float
    ground_vector: Field
    zero_eigenvalue: float
    zero_vector_correlation: float
    positive_gap: float
    essential_edge_estimate: float
    continuum_bottom: float
    n_negative: int
    n_near_zero: int
    zero_tol: float
    positive_tol: float

    @property
    def ok(self) -> bool:
        """Whether the counts match one negative eigenvalue, a simple kernel along ``phi_x``
        and a positive remainder."""
        return (
            self.n_negative == 1
            and self.n_near_zero == 1
            and abs(self.zero_vector_correlation) >= COSINE_TOL
            and self.positive_gap >= self.positive_tol
        )

    def failures(self) -> list[str]:
        out = []
        if self.n_negative != 1:
            out.append(f"{self.n_negative} eigenvalues below -{self.zero_tol:g}")
        if self.n_near_zero != 1:
            out.append(f"{self.n_near_zero} eigenvalues within {self.zero_tol:g} of 0")
        if abs(self.zero_vector_correlation) < COSINE_TOL:
            out.append(f"kernel cosine with phi_x {self.zero_vector_correlation:.6f}")
        if self.positive_gap < self.positive_tol:
            out.append(f"positive gap {self.positive_gap:.3e} < {self.positive_tol:g}")
        return out

    def summary(self) -> dict:
        return {
            "lambda_star": self.lambda_star,
            "zero_eig": self.zero_eigenvalue,
            "zero_cosine": self.zero_vector_correlation,
            "positive_gap": self.positive_gap,
            "essential_edge_estimate": self.essential_edge_estimate,
            "continuum_bottom": self.continuum_bottom,
            "n_negative": self.n_negative,
            "n_near_zero": self.n_near_zero,
            "classification_ok": self.ok,
        }


def spectrum_report(
    A: OperatorMatrix,
    w: SolitaryWave,
    zero_tol: float | None = None,
    positive_tol: float | None = None,
) -> SpectrumReport:
    """Classify the spectrum of ``A`` against the expected structure.

    Default thresholds are ``ZERO_TOL`` and ``POSITIVE_TOL`` scaled by
    ``c - 2k``.  ``continuum_bottom`` is the smallest eigenvalue whose
    eigenvector carries at least ``EXTENDED_MASS`` of its mass in
    ``|x| > L/2``; on a long box it approaches the symbol edge ``(c - 2k)/4``.
    """
    c, k = w.c, w.k
    scale = c - 2.0 * k
    zero_tol = ZERO_TOL * scale if zero_tol is None else zero_tol
    positive_tol = POSITIVE_TOL * scale if positive_tol is None else positive_tol

    vals, vecs = A.eigh
    i_zero = int(np.argmin(np.abs(vals)))
    rest = np.ones(vals.size, dtype=bool)
    rest[0] = False
    rest[i_zero] = False
    outer = np.abs(A.grid.x) > 0.5 * A.grid.L
    mass_out = np.sum(vecs[outer, :] ** 2, axis=0)
    extended = rest & (mass_out >= EXTENDED_MASS)

    ground = vecs[:, 0] / np.sqrt(A.grid.dx)
    if ground[np.argmax(np.abs(ground))] < 0:
        ground = -ground
    return SpectrumReport(
        eigenvalues=np.array(vals),
        lambda_star=float(vals[0]),
        ground_vector=Field(A.grid, ground),
        zero_eigenvalue=float(vals[i_zero]),
        zero_vector_correlation=_cosine(vecs[:, i_zero], w.phi_x.values),
        positive_gap=float(vals[rest].min()),
        essential_edge_estimate=scale / 4.0,
        continuum_bottom=float(vals[extended].min()) if extended.any() else float("nan"),
        n_negative=int(np.sum(vals < -zero_tol)),
        n_near_zero=int(np.sum(np.abs(vals) < zero_tol)),
        zero_tol=zero_tol,
        positive_tol=positive_tol,
    )


def inverse_iteration(
    A: OperatorMatrix, shift: float, iters: int = 50, seed: int = 0
) -> tuple[float, np.ndarray]:
    """Eigenpair nearest ``shift`` by shifted inverse iteration with Rayleigh quotients."""
    M = A.matrix
    n = M.shape[0]
    lu = sla.lu_factor(M - shift * np.eye(n))
    v = np.random.default_rng(seed).standard_normal(n)
    v /= np.linalg.norm(v)
    lam = shift
    for _ in range(iters):
        y = sla.lu_solve(lu, v)
        v = y / np.linalg.norm(y)
        lam_new = float(v @ M @ v)
        if abs(lam_new - lam) <= 1e-15 * max(1.0, abs(lam_new)):
            lam = lam_new
            break
        lam = lam_new
    return lam, v


def _complement_basis(constraints: np.ndarray, method: str) -> np.ndarray:
    if method == "qr":
        q, _ = np.linalg.qr(constraints, mode="complete")
        return q[:, constraints.shape[1]:]
    if method == "svd":
        return sla.null_space(constraints.T)
    raise ValueError(f"unknown method {method!r}")


def constrained_minimum(A: OperatorMatrix, constraints: list[Field], method: str = "qr") -> float:
    """Minimum Rayleigh quotient of ``A`` on the orthogonal complement of ``constraints``."""
    if not constraints:
        return float(A.eigh[0][0])
    C = np.column_stack([f.values for f in constraints])
    Z = _complement_basis(C, method)
    R = Z.T @ A.matrix @ Z
    R = 0.5 * (R + R.T)
    return float(sla.eigvalsh(R, subset_by_index=[0, 0])[0])


def constrained_coercivity(A: OperatorMatrix, w: SolitaryWave, method: str = "qr") -> float:
    """Coercivity constant of ``L_c`` on ``{h : h perp psi~, h perp phi_x}``."""
    return constrained_minimum(A, [w.psi_tilde, w.phi_x], method)


def _deflated_shifted(A: OperatorMatrix, rhs: np.ndarray, lam: float, eig_tol: float):
    vals, vecs = A.eigh
    M = A.matrix - lam * np.eye(vals.size)
    near = np.flatnonzero(np.abs(vals - lam) < eig_tol)
    rnorm = np.linalg.norm(rhs)
    for i in near:
        v = vecs[:, i]
        if abs(v @ rhs) > 1e-8 * rnorm:
            raise ValueError(
                f"lambda={lam:g} is within {eig_tol:g} of eigenvalue {vals[i]:.6g} "
                "coupled to psi~"
            )
        # the right-hand side has no component here; move the eigenvalue out of the way
        M = M + np.outer(v, v)
    return M


def resolvent_vector(A: OperatorMatrix, w: SolitaryWave, lam: float, eig_tol: float = 1e-6) -> Field:
    """``(L_c - lambda)^-1 psi~``."""
    rhs = w.psi_tilde.values
    M = _deflated_shifted(A, rhs, lam, eig_tol)
    x = sla.solve(M, rhs, assume_a="sym")
    return Field(A.grid, x)


def resolvent_g(A: OperatorMatrix, w: SolitaryWave, lam: float, eig_tol: float = 1e-6) -> float:
    """``g(lambda) = ((L_c - lambda)^-1 psi~, psi~)``.

    Eigenvalues within ``eig_tol`` of ``lam`` whose eigenvectors are
    orthogonal to ``psi~`` (the odd kernel mode at ``lam = 0``) are deflated;
    any other near-resonance raises ``ValueError``.
    """
    return inner_l2(resolvent_vector(A, w, lam, eig_tol), w.psi_tilde)


@dataclass(frozen=True)
class ConvexityPoint:
    c: float
    S: float
    dSdc: float


def solitary_S(k: float, c: float, grid: Grid, tol: float = DEFAULT_TOL) -> float:
    return functional_S(build_profile(WaveParams(c, k), grid, tol).phi)


def convexity_dSdc(
    k: float, c_values, grid: Grid, rel_step: float = 1e-3, tol: float = DEFAULT_TOL
) -> list[ConvexityPoint]:
    """``S(phi^c)`` and its central-difference derivative in ``c`` at each ``c``."""
    out = []
    for c in c_values:
        h = rel_step * c
        s_plus = solitary_S(k, c + h, grid, tol)
        s_minus = solitary_S(k, c - h, grid, tol)
        out.append(ConvexityPoint(float(c), solitary_S(k, c, grid, tol), (s_plus - s_minus) / (2.0 * h)))
    return out


def expansion_check(w: SolitaryWave, h: Field) -> float:
    """``|Q_c(phi + h) - Q_c(phi) - [(L_c h, h)/2 - int h^3 / 6]|``."""
    c, k = w.c, w.k
    dQ = lagrangian_Q(w.phi + h, c, k) - lagrangian_Q(w.phi, c, k)
    predicted = 0.5 * inner_l2(apply_Lc(w, h), h) - inner_l2(h * h, h) / 6.0
    return abs(dQ - predicted)
