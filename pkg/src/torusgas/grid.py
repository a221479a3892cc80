"""Periodic grids and spectral calculus.

Everything in this package lives on the flat torus [0, 2*pi)^d with d in
{1, 2}, discretised by n equispaced points per axis (n a power of two).
Derivatives, inverse Laplacians and fractional norms are computed through
the FFT; plain integrals use the equal-weight quadrature spacing**d which
is exact for band-limited integrands.

numpy's pocketfft keeps no mutable plan state, so the transforms here are
safe to call from worker processes without coordination.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

TWO_PI = 2.0 * np.pi


class GridError(ValueError):
    """Raised for malformed grid requests (bad dimension, n not 2**k, ...)."""


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid on [0, 2*pi)^d.

    Attributes
    ----------
    d : spatial dimension, 1 or 2.
    n : points per axis; power of two, at least 8.
    """

    d: int
    n: int

    def __post_init__(self) -> None:
        if self.d not in (1, 2):
            raise GridError(f"dimension must be 1 or 2, got {self.d}")
        if self.n < 8 or not _is_power_of_two(self.n):
            raise GridError(f"n must be a power of two >= 8, got {self.n}")

    @property
    def spacing(self) -> float:
        return TWO_PI / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.d

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.d

    @property
    def volume(self) -> float:
        return TWO_PI**self.d

    @cached_property
    def axis_coord(self) -> np.ndarray:
        return np.arange(self.n) * self.spacing

    def coords(self) -> tuple[np.ndarray, ...]:
        """Coordinate arrays broadcast to the full grid shape."""
        axes = np.meshgrid(*([self.axis_coord] * self.d), indexing="ij")
        return tuple(axes)

    @cached_property
    def wavenumbers(self) -> tuple[np.ndarray, ...]:
        """Integer wavenumbers per axis, shaped for broadcasting."""
        k = np.fft.fftfreq(self.n, d=1.0 / self.n)  # integers -n/2..n/2-1
        out = []
        for axis in range(self.d):
            shape = [1] * self.d
            shape[axis] = self.n
            out.append(k.reshape(shape))
        return tuple(out)

    @cached_property
    def k_squared(self) -> np.ndarray:
        k2 = np.zeros(self.shape)
        for ka in self.wavenumbers:
            k2 = k2 + ka**2
        return k2

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        """Two-thirds rule mask: keep |k| <= n/3 on every axis."""
        cut = self.n / 3.0
        mask = np.ones(self.shape, dtype=bool)
        for ka in self.wavenumbers:
            mask &= np.abs(ka) <= cut
        return mask

    def min_image(self) -> tuple[np.ndarray, ...]:
        """Signed displacement of each grid point from the origin, wrapped to [-pi, pi)."""
        out = []
        for axis_vals in self.coords():
            z = np.where(axis_vals >= np.pi, axis_vals - TWO_PI, axis_vals)
            out.append(z)
        return tuple(out)

    def torus_distance(self) -> np.ndarray:
        """Min-image Euclidean distance of every grid point from the origin."""
        acc = np.zeros(self.shape)
        for z in self.min_image():
            acc = acc + z**2
        return np.sqrt(acc)


@dataclass
class Field:
    """Real scalar field sampled on a Grid."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise GridError(
                f"field shape {self.values.shape} does not match grid {self.grid.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise GridError("field contains non-finite entries")

    # Minimal arithmetic; anything fancier should go through .values.
    def __add__(self, other: "Field | float") -> "Field":
        if isinstance(other, Field):
            return Field(self.grid, self.values + other.values)
        return Field(self.grid, self.values + other)

    def __sub__(self, other: "Field | float") -> "Field":
        if isinstance(other, Field):
            return Field(self.grid, self.values - other.values)
        return Field(self.grid, self.values - other)

    def __mul__(self, other: "Field | float") -> "Field":
        if isinstance(other, Field):
            return Field(self.grid, self.values * other.values)
        return Field(self.grid, self.values * other)

    __rmul__ = __mul__

    def copy(self) -> "Field":
        return Field(self.grid, self.values.copy())


@dataclass
class VecField:
    """d-component vector field; components share one Grid."""

    grid: Grid
    components: list[Field] = field(default_factory=list)

    def __post_init__(self) -> None:
        if len(self.components) != self.grid.d:
            raise GridError(
                f"expected {self.grid.d} components, got {len(self.components)}"
            )
        for c in self.components:
            if c.grid != self.grid:
                raise GridError("component grids disagree")

    @classmethod
    def from_arrays(cls, grid: Grid, arrays) -> "VecField":
        return cls(grid, [Field(grid, a) for a in arrays])

    def magnitude(self) -> Field:
        acc = np.zeros(self.grid.shape)
        for c in self.components:
            acc = acc + c.values**2
        return Field(self.grid, np.sqrt(acc))

    def copy(self) -> "VecField":
        return VecField(self.grid, [c.copy() for c in self.components])


def constant_field(grid: Grid, value: float) -> Field:
    return Field(grid, np.full(grid.shape, float(value)))


def zero_vec(grid: Grid) -> VecField:
    return VecField(grid, [constant_field(grid, 0.0) for _ in range(grid.d)])


# ---------------------------------------------------------------------------
# spectral calculus


def fftn(values: np.ndarray) -> np.ndarray:
    return np.fft.fftn(values)


def ifftn_real(values_hat: np.ndarray) -> np.ndarray:
    return np.fft.ifftn(values_hat).real


def mean(f: Field) -> float:
    """Grid mean; equals the zeroth Fourier coefficient / n^d."""
    return float(f.values.mean())


def integrate(f: Field) -> float:
    return float(f.values.sum() * f.grid.cell_volume)


def grad(f: Field) -> VecField:
    g = f.grid
    f_hat = fftn(f.values)
    comps = [ifftn_real(1j * ka * f_hat) for ka in g.wavenumbers]
    return VecField.from_arrays(g, comps)


def div(v: VecField) -> Field:
    g = v.grid
    acc = np.zeros(g.shape, dtype=complex)
    for ka, comp in zip(g.wavenumbers, v.components):
        acc = acc + 1j * ka * fftn(comp.values)
    return Field(g, ifftn_real(acc))


def laplacian(f: Field) -> Field:
    g = f.grid
    return Field(g, ifftn_real(-g.k_squared * fftn(f.values)))


def inv_laplacian(f: Field) -> tuple[Field, float]:
    """Mean-zero solution g of -lap(g) = f - mean(f).

    The discarded mean of f is returned alongside so callers can account
    for it explicitly instead of silently losing mass.
    """
    g = f.grid
    f_hat = fftn(f.values)
    m = float(f_hat.flat[0].real / f.values.size)
    with np.errstate(divide="ignore", invalid="ignore"):
        out_hat = np.where(g.k_squared > 0, f_hat / g.k_squared, 0.0)
    return Field(g, ifftn_real(out_hat)), m

def inv_laplacian_div(v: VecField) -> Field:
    """(-lap)^{-1} div v, mean-zero by construction.

    Composed in Fourier space as a single multiplier so no intermediate
    divergence field is materialised.
    """
    g = v.grid
    acc = np.zeros(g.shape, dtype=complex)
    for ka, comp in zip(g.wavenumbers, v.components):
        acc = acc + 1j * ka * fftn(comp.values)
    with np.errstate(divide="ignore", invalid="ignore"):
        out_hat = np.where(g.k_squared > 0, acc / g.k_squared, 0.0)
    return Field(g, ifftn_real(out_hat))


def grad_inv_laplacian(f: Field) -> VecField:
    """grad lap^{-1} f (mean of f irrelevant: the gradient kills it).

    Note the sign: this is grad applied to lap^{-1} = -((-lap)^{-1}).
    """
    g = f.grid
    f_hat = fftn(f.values)
    comps = []
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(g.k_squared > 0, -1.0 / g.k_squared, 0.0)
    for ka in g.wavenumbers:
        comps.append(ifftn_real(1j * ka * inv * f_hat))
    return VecField.from_arrays(g, comps)


def hessian_inv_laplacian(f: Field) -> list[list[Field]]:
    """Second derivatives of lap^{-1} f as a d x d list of Fields."""
    g = f.grid
    f_hat = fftn(f.values)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(g.k_squared > 0, -1.0 / g.k_squared, 0.0)
    rows = []
    for ka in g.wavenumbers:
        row = []
        for kb in g.wavenumbers:
            row.append(Field(g, ifftn_real(-ka * kb * inv * f_hat)))
        rows.append(row)
    return rows


def dealias(f: Field) -> Field:
    """Zero all modes beyond the two-thirds cutoff."""
    g = f.grid
    return Field(g, ifftn_real(np.where(g.dealias_mask, fftn(f.values), 0.0)))


def dealias_vec(v: VecField) -> VecField:
    return VecField(v.grid, [dealias(c) for c in v.components])


def shift(f: Field, offset: tuple[int, ...]) -> Field:
    """f(x - offset*spacing), realised by an index roll."""
    return Field(f.grid, np.roll(f.values, offset, axis=tuple(range(f.grid.d))))


# ---------------------------------------------------------------------------
# norms


def lp_norm(f: Field | VecField, p: float) -> float:
    """L^p quadrature norm; vector fields use the pointwise Euclidean magnitude."""
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    mag = f.magnitude() if isinstance(f, VecField) else f
    vals = np.abs(mag.values)
    if np.isinf(p):
        return float(vals.max())
    return float((vals**p).sum() * f.grid.cell_volume) ** (1.0 / p)


def l2_norm(f: Field | VecField) -> float:
    return lp_norm(f, 2)


def w1p_norm(f: Field | VecField, p: float) -> float:
    """(||f||_p^p + ||grad f||_p^p)^(1/p)."""
    if isinstance(f, VecField):
        base = lp_norm(f, p) ** p
        gsq = np.zeros(f.grid.shape)
        for c in f.components:
            gsq = gsq + grad(c).magnitude().values ** 2
        gnorm = float((np.sqrt(gsq) ** p).sum() * f.grid.cell_volume)
        return (base + gnorm) ** (1.0 / p)
    return (lp_norm(f, p) ** p + lp_norm(grad(f), p) ** p) ** (1.0 / p)


def fractional_norm(f: Field, s: float, p: float = 2) -> float:
    """Bessel-potential norm ||(1 + |k|^2)^{s/2} f^||, p = 2 only.

    For p = 2 this is exact by Parseval.  Other p would need a genuine
    Triebel-Lizorkin realisation, which this laboratory does not carry;
    such requests are rejected rather than silently approximated.
    """
    if p != 2:
        raise ValueError(f"fractional norms are only available for p=2, got p={p}")
    if not -2 < s < 2:
        raise ValueError(f"s must lie in (-2, 2), got {s}")
    g = f.grid
    f_hat = fftn(f.values)
    mult = (1.0 + g.k_squared) ** (s / 2.0)
    # Parseval with quadrature weight: ||f||^2 = spacing^d / n^d * sum |f_hat|^2
    scale = g.cell_volume / f.values.size
    return float(np.sqrt((np.abs(mult * f_hat) ** 2).sum() * scale))


def bessel_potential(f: Field, s: float) -> Field:
    """Realise (1 + |k|^2)^{s/2} f^ as a grid field.

    Used as the measurable surrogate for negative-order norms at p != 2:
    apply the multiplier, then take the plain L^p quadrature of the result.
    """
    g = f.grid
    mult = (1.0 + g.k_squared) ** (s / 2.0)
    return Field(g, ifftn_real(mult * fftn(f.values)))


def wneg1p_norm(f: Field, p: float) -> float:
    """||f||_{W^{-1,p}} surrogate: L^p norm of the order -1 Bessel potential.

    Exact for p = 2; for other p the constant is absorbed by whoever fits
    one (every consumer here compares ratios, never raw values).
    """
    return lp_norm(bessel_potential(f, -1.0), p)
