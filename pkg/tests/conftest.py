import numpy as np
import pytest

from torusgas.constitutive import pressure
from torusgas.grid import Field, Grid, VecField, div, grad, laplacian
from torusgas.kernels import KernelSpec, mollify


def band_limited_field(grid: Grid, kmax: int, rng: np.random.Generator, amp: float = 1.0) -> Field:
    """Random real field with modes up to kmax per axis."""
    vals = np.zeros(grid.shape)
    coords = grid.coords()
    for _ in range(4):
        ks = rng.integers(-kmax, kmax + 1, size=grid.d)
        phase = rng.uniform(0, 2 * np.pi)
        a = rng.uniform(-amp, amp)
        arg = sum(k * c for k, c in zip(ks, coords))
        vals += a * np.cos(arg + phase)
    return Field(grid, vals)


def band_limited_vec(grid: Grid, kmax: int, rng: np.random.Generator, amp: float = 1.0) -> VecField:
    return VecField(grid, [band_limited_field(grid, kmax, rng, amp) for _ in range(grid.d)])


def manufactured_forcing(g: Grid, p):
    """Travelling-wave pair rho* = 1 + 0.3 cos(x - t), u* = 0.4 sin(x - t)
    made an exact solution through forcing assembled with the discrete
    operators.  Returns (targets, continuity_forcing, momentum_forcing);
    1-d only."""
    uspec = KernelSpec("gaussian", p.u_mollify)
    cspec = KernelSpec("gaussian", p.coeff_mollify)
    x = g.coords()[0]

    def targets(t):
        rho = Field(g, 1.0 + 0.3 * np.cos(x - t))
        u = VecField.from_arrays(g, [0.4 * np.sin(x - t)])
        return rho, u

    def g_force(t):
        rho, u = targets(t)
        ueps = VecField(g, [mollify(c, uspec) for c in u.components])
        flux = VecField.from_arrays(g, [rho.values * ueps.components[0].values])
        return Field(
            g,
            0.3 * np.sin(x - t)
            + div(flux).values
            + p.damping_rate * rho.values**p.damping_exponent,
        )

    def f_force(t):
        rho, u = targets(t)
        ueps = VecField(g, [mollify(c, uspec) for c in u.components])
        a = p.coeff_mollify + mollify(rho, cspec).values
        b = mollify(
            Field(g, rho.values * ueps.components[0].values), cspec
        ).values
        gp = grad(mollify(pressure(rho, p), uspec)).components[0].values
        gu = grad(u.components[0]).components[0].values
        uxx = laplacian(u.components[0]).values
        r0 = (
            a * (-0.4 * np.cos(x - t))
            + b * gu
            - (2 * p.mu + p.bulk_visc) * uxx
            + gp
        )
        return VecField.from_arrays(g, [r0])

    return targets, g_force, f_force


@pytest.fixture
def rng():
    return np.random.default_rng(20260822)


@pytest.fixture
def grid1d():
    return Grid(1, 128)


@pytest.fixture
def grid2d():
    return Grid(2, 64)
