"""Periodic spectral substrate.

Fields live on a uniform periodic grid ``[-L, L)`` with ``N`` points.  All
integrals are rectangle sums ``dx * sum(...)``, which is spectrally accurate
for smooth periodic integrands.

Transform convention: ``F_n = sum_j f_j exp(-i xi_n (x_j + L))`` (numpy's
unnormalized forward FFT) with ``xi_n = pi n / L``.  With ``c_n = F_n / N``
Parseval reads ``(f, f) = 2L sum_n |c_n|^2``.  Every functional below is built
on :func:`inner_l2`, so this convention never leaks into results.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.fft as sfft

__all__ = [
    "Grid",
    "Field",
    "SymbolId",
    "make_grid",
    "symbol_values",
    "apply_symbol",
    "inner_l2",
    "l2_norm",
    "linf_norm",
    "h3_norm",
    "functional_S",
    "functional_H",
    "lagrangian_Q",
    "dealias_23",
    "shift",
    "derivative",
]

# imaginary residue allowed after an inverse transform, relative to output scale
IMAG_TOL = 1e-12


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid on ``[-L, L)``; ``N`` must be a power of two, at least 16."""

    L: float
    N: int

    def __post_init__(self):
        if not (np.isfinite(self.L) and self.L > 0):
            raise ValueError(f"half_length must be positive, got {self.L!r}")
        n = self.N
        if isinstance(n, bool) or not float(n).is_integer() or int(n) < 16 or int(n) & (int(n) - 1):
            raise ValueError(f"point_count must be a power of two >= 16, got {n!r}")
        object.__setattr__(self, "L", float(self.L))
        object.__setattr__(self, "N", int(n))

    @property
    def dx(self) -> float:
        return 2.0 * self.L / self.N

    @cached_property
    def x(self) -> np.ndarray:
        x = -self.L + self.dx * np.arange(self.N)
        x.flags.writeable = False
        return x

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        """Wavenumbers ``pi n / L`` in FFT order (``n = 0..N/2-1, -N/2..-1``)."""
        xi = np.pi / self.L * np.fft.fftfreq(self.N, 1.0 / self.N)
        xi.flags.writeable = False
        return xi

    @cached_property
    def mode_index(self) -> np.ndarray:
        n = np.rint(np.fft.fftfreq(self.N, 1.0 / self.N)).astype(int)
        n.flags.writeable = False
        return n

    def field(self, values) -> "Field":
        return Field(self, values)

    def zeros(self) -> "Field":
        return Field(self, np.zeros(self.N))


def make_grid(L: float, N: int) -> Grid:
    return Grid(L, N)


@dataclass(frozen=True, eq=False)
class Field:
    """Real samples of a function on a :class:`Grid`.  Immutable."""

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float, copy=True)
        if v.shape != (self.grid.N,):
            raise ValueError(f"expected {self.grid.N} samples, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field contains non-finite samples")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def _other(self, other):
        if isinstance(other, Field):
            _check_same_grid(self, other)
            return other.values
        return other

    def __add__(self, other):
        return Field(self.grid, self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return Field(self.grid, self.values - self._other(other))

    def __rsub__(self, other):
        return Field(self.grid, self._other(other) - self.values)

    def __mul__(self, other):
        return Field(self.grid, self.values * self._other(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return Field(self.grid, self.values / self._other(other))

    def __neg__(self):
        return Field(self.grid, -self.values)

    def __pow__(self, p):
        return Field(self.grid, self.values**p)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    def __len__(self):
        return self.grid.N


def _check_same_grid(f: Field, g: Field) -> None:
    if f.grid != g.grid:
        raise ValueError(f"grid mismatch: {f.grid} vs {g.grid}")


class SymbolId(enum.Enum):
    """Fourier multipliers used throughout the package."""

    DERIVATIVE = "derivative"  # i xi
    HELMHOLTZ1_INV = "helmholtz1_inv"  # (1 - d^2)^-1, convolution with exp(-|x|)/2
    HELMHOLTZ4_INV = "helmholtz4_inv"  # (4 - d^2)^-1
    SQRT_HELMHOLTZ4_INV = "sqrt_helmholtz4_inv"  # (4 - d^2)^-1/2
    SKEW_J = "skew_J"  # d (4 - d^2)(1 - d^2)^-1
    S_WEIGHT = "s_weight"  # (1 - d^2)(4 - d^2)^-1


_SYMBOLS = {
    SymbolId.DERIVATIVE: lambda xi: 1j * xi,
    SymbolId.HELMHOLTZ1_INV: lambda xi: 1.0 / (1.0 + xi**2),
    SymbolId.HELMHOLTZ4_INV: lambda xi: 1.0 / (4.0 + xi**2),
    SymbolId.SQRT_HELMHOLTZ4_INV: lambda xi: 1.0 / np.sqrt(4.0 + xi**2),
    SymbolId.SKEW_J: lambda xi: 1j * xi * (4.0 + xi**2) / (1.0 + xi**2),
    SymbolId.S_WEIGHT: lambda xi: (1.0 + xi**2) / (4.0 + xi**2),
}


def symbol_values(grid: Grid, s) -> np.ndarray:
    """Symbol sampled on the grid wavenumbers, Hermitian-symmetrized.

    The Nyquist mode ``n = -N/2`` has no partner, so the symbol there is
    replaced by its even part (zero for odd symbols such as ``i xi``).
    """
    return sample_symbol(grid, _SYMBOLS[SymbolId(s)])


def sample_symbol(grid: Grid, fn) -> np.ndarray:
    xi = grid.wavenumbers
    vals = np.asarray(fn(xi), dtype=complex)
    nyq = grid.N // 2
    vals[nyq] = 0.5 * (fn(xi[nyq]) + fn(-xi[nyq]))
    return vals


def _to_real(z: np.ndarray) -> np.ndarray:
    scale = max(1.0, float(np.max(np.abs(z.real))))
    resid = float(np.max(np.abs(z.imag)))
    if resid > IMAG_TOL * scale:
        raise FloatingPointError(f"imaginary residue {resid:.3e} after inverse transform")
    return z.real.copy()


def apply_multiplier(f: Field, mult: np.ndarray) -> Field:
    """Apply precomputed (FFT-ordered, Hermitian) multiplier values."""
    out = sfft.ifft(sfft.fft(f.values) * mult)
    return Field(f.grid, _to_real(out))


def apply_symbol(f: Field, s) -> Field:
    return apply_multiplier(f, symbol_values(f.grid, s))


def derivative(f: Field, order: int = 1) -> Field:
    return apply_multiplier(f, sample_symbol(f.grid, lambda xi: (1j * xi) ** order))


def inner_l2(f: Field, g: Field) -> float:
    _check_same_grid(f, g)
    return float(f.grid.dx * np.dot(f.values, g.values))


def l2_norm(f: Field) -> float:
    return float(np.sqrt(inner_l2(f, f)))


def linf_norm(f: Field) -> float:
    return float(np.max(np.abs(f.values)))


def fourier_energy(f: Field, weight: np.ndarray | None = None) -> float:
    """``2L sum |c_n|^2 w_n``; equals ``(f, f)`` when ``weight`` is None."""
    c = sfft.fft(f.values) / f.grid.N
    e = np.abs(c) ** 2
    if weight is not None:
        e = e * weight
    return float(2.0 * f.grid.L * np.sum(e))


def h3_norm(f: Field) -> float:
    """Fourier H^3 norm ``(sum (1+xi^2)^3 |c_n|^2 * 2L)^(1/2)``."""
    return float(np.sqrt(fourier_energy(f, (1.0 + f.grid.wavenumbers**2) ** 3)))


def functional_S(f: Field) -> float:
    """Translation invariant ``1/2 (f, (1-d^2)(4-d^2)^-1 f)``."""
    return 0.5 * inner_l2(f, apply_symbol(f, SymbolId.S_WEIGHT))


def functional_H(f: Field, k: float) -> float:
    """Hamiltonian ``-1/6 int (f^3 + 6k ((4-d^2)^-1/2 f)^2)``."""
    g = apply_symbol(f, SymbolId.SQRT_HELMHOLTZ4_INV)
    return -(inner_l2(f * f, f) + 6.0 * k * inner_l2(g, g)) / 6.0


def lagrangian_Q(f: Field, c: float, k: float) -> float:
    return functional_H(f, k) + c * functional_S(f)


def dealias_mask(grid: Grid) -> np.ndarray:
    return np.abs(grid.mode_index) <= grid.N // 3


def dealias_23(f: Field) -> Field:
    """Zero every Fourier mode with ``|n| > N/3``."""
    return apply_multiplier(f, dealias_mask(f.grid).astype(complex))


def shift(f: Field, a: float) -> Field:
    """Band-limited translate ``f(. - a)``."""
    if a == 0:
        return f
    g = f.grid
    mult = np.exp(-1j * g.wavenumbers * a)
    nyq = g.N // 2
    mult[nyq] = np.cos(g.wavenumbers[nyq] * a)
    return apply_multiplier(f, mult)
