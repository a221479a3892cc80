"""Equation of state, viscous stress, and parameter validation.

The pressure is the capped two-term barotropic law

    p(rho) = stiff_coeff * min(rho, cap)^stiff_exponent + min(rho, cap)^gamma.

The matching internal energy density rho*e(rho) is chosen so that the
thermodynamic compatibility relation

    (rho e)'(rho) * rho - rho e(rho) = p(rho)

holds *exactly* on both sides of the cap: power-law parts divided by
(exponent - 1) below the cap, the affine continuation above.  That exact
identity is what makes the discrete energy ledger close; an energy
expression that is off by a constant factor in one term would show up
immediately as a spurious drift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .grid import Field, VecField, div, grad


class ConstraintError(ValueError):
    """A parameter set violates one of the structural inequalities.

    ``constraint`` carries the inequality in the exact form the error
    message quotes, so front ends can surface it verbatim.
    """

    def __init__(self, constraint: str, detail: str):
        self.constraint = constraint
        super().__init__(f"constraint violated: {constraint} ({detail})")


class DomainError(ValueError):
    """Field values outside the admissible domain (e.g. negative density)."""


NEGATIVE_DENSITY_FLOOR = -1e-12


@dataclass(frozen=True)
class Params:
    """Scalar parameters of the damped barotropic system.

    Greek letters from the usual fluid-dynamics vocabulary keep their
    conventional names (gamma, mu); everything else is named by role.
    """

    gamma: float = 2.0              # adiabatic exponent of the soft pressure term
    stiff_exponent: float = 4.5     # exponent of the stiff pressure term
    stiff_coeff: float = 0.1        # prefactor of the stiff term; shrinks to 0 in the last stage
    pressure_cap: float = math.inf  # density cap inside the pressure law
    damping_rate: float = 1.0       # rate of the rho^m mass sink in the continuity equation
    damping_exponent: float = 4.0   # exponent m of that sink
    mu: float = 1.0                 # shear viscosity
    bulk_visc: float = 0.0          # second viscosity coefficient
    u_mollify: float = 0.1          # width of the Gaussian smoothing applied to u and p
    coeff_mollify: float = 0.1      # width of the coefficient smoothing; also the inertial floor
    weight_gain: float | None = None  # damping gain of the transported weight; None = 2 sqrt(d)
    smoothing_sigma: float = 1e-3   # width of the smoothed modulus / sign pair
    exponent_dimension: int = 2     # dimension whose exponent floors the run inherits

    def weight_gain_value(self, d: int) -> float:
        if self.weight_gain is not None:
            return self.weight_gain
        return 2.0 * math.sqrt(d)

    def with_(self, **kw) -> "Params":
        return replace(self, **kw)


def validate_params(p: Params, d: int) -> None:
    """Check every structural inequality; raise ConstraintError naming the
    violated one.  d is the grid dimension of the run."""
    if not (p.mu > 0 and 2 * p.mu + d * p.bulk_visc > 0):
        raise ConstraintError(
            "mu > 0 and 2*mu + d*xi > 0",
            f"mu={p.mu}, xi={p.bulk_visc}, d={d}",
        )
    gamma_floor = 9.0 / 5.0 if p.exponent_dimension >= 3 else 3.0 / 2.0
    if not p.gamma >= gamma_floor:
        raise ConstraintError(
            f"gamma >= {gamma_floor} (exponent dimension {p.exponent_dimension})",
            f"gamma={p.gamma}",
        )
    m = p.damping_exponent
    if not m + 1 >= 4:
        raise ConstraintError("m + 1 >= 4", f"m={m}")
    G = p.stiff_exponent
    if not (m + 1 > G >= m):
        raise ConstraintError("m + 1 > Gamma >= m", f"m={m}, Gamma={G}")
    if not G > p.gamma:
        raise ConstraintError("Gamma > gamma", f"Gamma={G}, gamma={p.gamma}")
    if not G >= 3:
        raise ConstraintError("Gamma >= 3", f"Gamma={G}")
    if not p.stiff_coeff >= 0:
        raise ConstraintError("lambda >= 0", f"lambda={p.stiff_coeff}")
    if not p.damping_rate >= 0:
        raise ConstraintError("k >= 0", f"k={p.damping_rate}")
    if not p.pressure_cap > 0:
        raise ConstraintError("cap > 0", f"cap={p.pressure_cap}")
    for name in ("u_mollify", "coeff_mollify", "smoothing_sigma"):
        if not getattr(p, name) > 0:
            raise ConstraintError(f"{name} > 0", f"{name}={getattr(p, name)}")
    if p.weight_gain is not None and not p.weight_gain > 0:
        raise ConstraintError("weight gain > 0", f"weight_gain={p.weight_gain}")


_PARAM_FIELDS = (
    "gamma",
    "stiff_exponent",
    "stiff_coeff",
    "pressure_cap",
    "damping_rate",
    "damping_exponent",
    "mu",
    "bulk_visc",
    "u_mollify",
    "coeff_mollify",
    "weight_gain",
    "smoothing_sigma",
    "exponent_dimension",
)


def params_to_dict(p: Params) -> dict:
    """JSON-safe dict; infinities become the string "inf"."""
    out = {}
    for name in _PARAM_FIELDS:
        v = getattr(p, name)
        if isinstance(v, float) and math.isinf(v):
            v = "inf"
        out[name] = v
    return out


def params_from_dict(d: dict) -> Params:
    """Strict inverse of params_to_dict: unknown keys are an error."""
    unknown = set(d) - set(_PARAM_FIELDS)
    if unknown:
        raise ConstraintError(
            "known parameter names", f"unknown keys: {sorted(unknown)}"
        )
    kw = {}
    for name, v in d.items():
        if v == "inf":
            v = math.inf
        if name == "exponent_dimension":
            kw[name] = int(v)
        elif name == "weight_gain":
            kw[name] = None if v is None else float(v)
        else:
            kw[name] = float(v)
    return Params(**kw)


def _checked_density(vals: np.ndarray) -> np.ndarray:
    if vals.min() < NEGATIVE_DENSITY_FLOOR:
        raise DomainError(
            f"density has entries below {NEGATIVE_DENSITY_FLOOR} (min {vals.min():.3e})"
        )
    return np.maximum(vals, 0.0)


def capped(vals: np.ndarray, p: Params) -> np.ndarray:
    if math.isinf(p.pressure_cap):
        return vals
    return np.minimum(vals, p.pressure_cap)


def pressure_values(rho: np.ndarray, p: Params) -> np.ndarray:
    r = capped(_checked_density(np.asarray(rho, dtype=float)), p)
    return p.stiff_coeff * r**p.stiff_exponent + r**p.gamma


def pressure(rho: Field, p: Params) -> Field:
    return Field(rho.grid, pressure_values(rho.values, p))


def pressure_derivative_values(rho: np.ndarray, p: Params) -> np.ndarray:
    """dp/drho; zero above the cap where the law is flat."""
    vals = _checked_density(np.asarray(rho, dtype=float))
    r = capped(vals, p)
    slope = (
        p.stiff_coeff * p.stiff_exponent * r ** (p.stiff_exponent - 1)
        + p.gamma * r ** (p.gamma - 1)
    )
    if math.isinf(p.pressure_cap):
        return slope
    return np.where(vals < p.pressure_cap, slope, 0.0)


def internal_energy_values(rho: np.ndarray, p: Params) -> np.ndarray:
    """rho*e(rho), compatibility-exact against pressure_values.

    Below the cap each power term is divided by (its exponent - 1);
    above, the unique affine continuation that keeps the function C^1
    and keeps (rho e)' rho - rho e = p exact (slope from the one-sided
    derivative at the cap, intercept -p(cap))."""
    vals = _checked_density(np.asarray(rho, dtype=float))
    G, g = p.stiff_exponent, p.gamma
    lam = p.stiff_coeff
    power_part = lam * vals**G / (G - 1) + vals**g / (g - 1)
    if math.isinf(p.pressure_cap):
        return power_part
    M = p.pressure_cap
    slope = lam * G * M ** (G - 1) / (G - 1) + g * M ** (g - 1) / (g - 1)
    intercept = -(lam * M**G + M**g)
    return np.where(vals < M, power_part, slope * vals + intercept)


def internal_energy(rho: Field, p: Params) -> Field:
    return Field(rho.grid, internal_energy_values(rho.values, p))


def internal_energy_derivative_values(rho: np.ndarray, p: Params) -> np.ndarray:
    """(rho e)'(rho); one capped formula covers both branches."""
    r = capped(_checked_density(np.asarray(rho, dtype=float)), p)
    G, g = p.stiff_exponent, p.gamma
    return (
        p.stiff_coeff * G * r ** (G - 1) / (G - 1) + g * r ** (g - 1) / (g - 1)
    )


def stress(u: VecField, p: Params) -> list[list[Field]]:
    """S(u) = mu (grad u + grad u^T) + xi (div u) I as a d x d Field table."""
    g = u.grid
    jac = [grad(c) for c in u.components]  # jac[j].components[i] = d_i u_j
    divu = div(u).values
    rows: list[list[Field]] = []
    for i in range(g.d):
        row = []
        for j in range(g.d):
            vals = p.mu * (jac[j].components[i].values + jac[i].components[j].values)
            if i == j:
                vals = vals + p.bulk_visc * divu
            row.append(Field(g, vals))
        rows.append(row)
    return rows


def stress_dissipation_density(u: VecField, p: Params) -> Field:
    """S(grad u) : grad u = 2 mu |sym grad u|^2 + xi (div u)^2, pointwise.

    Nonnegative whenever 2*mu + d*xi >= 0, by tr(A)^2 <= d |sym A|^2.
    """
    g = u.grid
    jac = [grad(c) for c in u.components]
    sym_sq = np.zeros(g.shape)
    for i in range(g.d):
        for j in range(g.d):
            sym = 0.5 * (jac[j].components[i].values + jac[i].components[j].values)
            sym_sq += sym**2
    divu = div(u).values
    return Field(g, 2.0 * p.mu * sym_sq + p.bulk_visc * divu**2)


def stress_dissipation(u: VecField, p: Params) -> float:
    f = stress_dissipation_density(u, p)
    return float(f.values.sum() * u.grid.cell_volume)
