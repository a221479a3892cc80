"""Analytic functionals evaluated on discrete trajectories.

Each block here mirrors one estimate the damped-gas scheme is supposed
to satisfy and measures how well the computed trajectory does:

* energy ledger: kinetic + internal energy against viscous dissipation
  and the three damping sinks, with a per-row residual that must shrink
  like O(dt)
* effective viscous flux: G = (2 mu + xi) div u - p_eps, equated to two
  different mean-free momentum expressions (convective and conservative
  form); both residuals must be small and agree
* compactness functionals: kernel-weighted double integrals of density
  increments, with and without the transported weight, plus the plain
  normalized criterion used on field sequences
* weight removal: the split of the plain criterion into pairs meeting
  the good set {w > zeta} and pairs inside the bad set, with the
  log-weight bound on the latter
* regularization defect: || rho |u - smoothed u| ||_L1 over a ladder of
  smoothing widths with a fitted decay exponent
* pressure functional: the space-time identity obtained by pairing the
  momentum equation with psi(t) grad lap^{-1}[rho]; the time derivative
  is eliminated exactly through integration by parts in time plus the
  continuity equation, so the residual measures scheme consistency and
  time quadrature only
* interpolation verifier: the space-time bound on
  int ((-lap)^{-1} div d_t phi) W against the four-norm product, with
  negative norms realised by |omega| |xi|^{-1} Fourier multipliers

All time derivatives that remain are centered differences at snapshot
stride; everything else is spectral and exact on band-limited data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .analysis import smoothed_abs, smoothed_sign
from .constitutive import (
    Params,
    internal_energy_derivative_values,
    internal_energy_values,
    pressure,
    stress_dissipation,
)
from .grid import (
    Field,
    Grid,
    VecField,
    div,
    grad,
    grad_inv_laplacian,
    hessian_inv_laplacian,
    integrate,
    inv_laplacian_div,
    l2_norm,
    lp_norm,
    mean,
)
from .kernels import KernelResolutionError, KernelSpec, kernel_field, kernel_l1_mass, mollify
from .solver import FluidState, Trajectory


def _u_spec(p: Params) -> KernelSpec:
    return KernelSpec("gaussian", p.u_mollify)


def _c_spec(p: Params) -> KernelSpec:
    return KernelSpec("gaussian", p.coeff_mollify)


def _mollify_vec(v: VecField, spec: KernelSpec) -> VecField:
    return VecField(v.grid, [mollify(c, spec) for c in v.components])


def _coeff_a(rho: Field, p: Params) -> Field:
    return Field(rho.grid, p.coeff_mollify + mollify(rho, _c_spec(p)).values)


def _coeff_b(rho: Field, u_eps: VecField, p: Params) -> VecField:
    g = rho.grid
    return VecField(
        g,
        [
            mollify(Field(g, rho.values * c.values), _c_spec(p))
            for c in u_eps.components
        ],
    )


# ---------------------------------------------------------------------------
# energy ledger


@dataclass
class DiagnosticsRecord:
    """One ledger row; every entry finite by construction."""

    step: int
    t: float
    mass: float
    kinetic: float
    internal: float
    dissipation_cum: float
    damping_cum: float
    energy_residual: float
    evf_residual: float
    min_w: float
    max_rho_w: float
    rho_logw: float
    r_h: dict[float, float] = field(default_factory=dict)
    plain_h: dict[float, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name in (
            "t", "mass", "kinetic", "internal", "dissipation_cum",
            "damping_cum", "energy_residual", "evf_residual", "min_w",
            "max_rho_w", "rho_logw",
        ):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"ledger entry {name} is not finite")


def _damping_sink(state: FluidState, p: Params) -> float:
    """The three rate-k integrals of the energy identity."""
    if p.damping_rate == 0.0:
        return 0.0
    rho_m = state.rho.values**p.damping_exponent
    edot = internal_energy_derivative_values(state.rho.values, p)
    g = state.rho.grid
    internal_sink = p.damping_rate * float((rho_m * edot).sum() * g.cell_volume)
    rho_m_moll = mollify(Field(g, rho_m), _c_spec(p)).values
    speed_sq = sum(c.values**2 for c in state.u.components)
    kinetic_sink = 0.5 * p.damping_rate * float(
        (rho_m_moll * speed_sq).sum() * g.cell_volume
    )
    return internal_sink + kinetic_sink


def _forcing_power(state: FluidState, cfg, p: Params) -> float:
    """Energy injected per unit time by the two forcing channels."""
    power = 0.0
    g = state.rho.grid
    if cfg.forcing_momentum is not None:
        F = cfg.forcing_momentum(state.t)
        power += sum(
            float((F.components[i].values * state.u.components[i].values).sum())
            for i in range(g.d)
        ) * g.cell_volume
    if cfg.forcing_continuity is not None:
        src = cfg.forcing_continuity(state.t)
        edot = internal_energy_derivative_values(state.rho.values, p)
        power += float((src.values * edot).sum() * g.cell_volume)
        src_moll = mollify(src, _c_spec(p)).values
        speed_sq = sum(c.values**2 for c in state.u.components)
        power += 0.5 * float((src_moll * speed_sq).sum() * g.cell_volume)
    return power


def total_energy(state: FluidState, p: Params) -> tuple[float, float]:
    """(kinetic, internal) with the smoothed-coefficient kinetic weight."""
    g = state.rho.grid
    a = _coeff_a(state.rho, p).values
    speed_sq = sum(c.values**2 for c in state.u.components)
    kinetic = 0.5 * float((a * speed_sq).sum() * g.cell_volume)
    internal = float(internal_energy_values(state.rho.values, p).sum() * g.cell_volume)
    return kinetic, internal


def energy_ledger(
    traj: Trajectory,
    h_values: Sequence[float] = (),
    plain_p: float = 1.0,
    with_evf: bool = True,
) -> list[DiagnosticsRecord]:
    """Per-snapshot ledger rows.

    The residual on row i compares the energy drop across the snapshot
    pair (i-1, i) with the trapezoid of dissipation, damping and forcing
    power; row 0 carries residual 0.  EVF residuals need both
    neighbours, so first and last rows carry 0 there as well.
    """
    cfg = traj.config
    p = cfg.params
    sigma = p.smoothing_sigma
    n_rows = len(traj.states)
    kin = np.empty(n_rows)
    inte = np.empty(n_rows)
    diss = np.empty(n_rows)
    sink = np.empty(n_rows)
    power = np.empty(n_rows)
    for i, st in enumerate(traj.states):
        kin[i], inte[i] = total_energy(st, p)
        diss[i] = stress_dissipation(st.u, p)
        sink[i] = _damping_sink(st, p)
        power[i] = _forcing_power(st, cfg, p)
    times = np.array([st.t for st in traj.states])

    rows: list[DiagnosticsRecord] = []
    diss_cum = 0.0
    damp_cum = 0.0
    for i, st in enumerate(traj.states):
        if i > 0:
            dt_pair = times[i] - times[i - 1]
            diss_cum += 0.5 * (diss[i - 1] + diss[i]) * dt_pair
            damp_cum += 0.5 * (sink[i - 1] + sink[i]) * dt_pair
            e_now = kin[i] + inte[i]
            e_prev = kin[i - 1] + inte[i - 1]
            residual = (e_now - e_prev) / dt_pair + 0.5 * (
                diss[i - 1] + diss[i]
            ) + 0.5 * (sink[i - 1] + sink[i]) - 0.5 * (power[i - 1] + power[i])
        else:
            residual = 0.0
        evf_res = 0.0
        if with_evf and 0 < i < n_rows - 1:
            evf_res = evf_identity_residual(traj, form=1, index=i)
        w_vals = st.w.values
        rho_vals = st.rho.values
        logw = np.log(np.maximum(w_vals, 1e-300))
        rows.append(
            DiagnosticsRecord(
                step=traj.steps[i],
                t=float(times[i]),
                mass=integrate(st.rho),
                kinetic=float(kin[i]),
                internal=float(inte[i]),
                dissipation_cum=diss_cum,
                damping_cum=damp_cum,
                energy_residual=float(residual),
                evf_residual=float(evf_res),
                min_w=float(w_vals.min()),
                max_rho_w=float((rho_vals * w_vals).max()),
                rho_logw=float((rho_vals * np.abs(logw)).sum() * st.rho.grid.cell_volume),
                r_h={
                    h: kolmogorov_weighted(st.rho, st.w, h, sigma) for h in h_values
                },
                plain_h={
                    h: kolmogorov_plain([st.rho], h, plain_p) for h in h_values
                },
            )
        )
    return rows


# ---------------------------------------------------------------------------
# effective viscous flux


def evf(state: FluidState, p: Params) -> Field:
    """G = (2 mu + xi) div u - p_eps(rho)."""
    g = state.rho.grid
    p_eps = mollify(pressure(state.rho, p), _u_spec(p))
    return Field(
        g, (2.0 * p.mu + p.bulk_visc) * div(state.u).values - p_eps.values
    )


def _meanfree(f: Field) -> Field:
    return Field(f.grid, f.values - f.values.mean())


def evf_identity_residual(
    traj: Trajectory, form: int, index: int | None = None
) -> float:
    """L2 distance between mean-free G and the chosen momentum form.

    form 1 pairs against the convective expression
        a d_t u + b . grad u - F,
    form 2 against the conservative one
        d_t(a u) + Div(b x u) + k [rho^m]_delta u - [g]_delta u - F,
    each pushed through -(-lap)^{-1} Div.  Time derivatives are centered
    over the snapshot stride, so only interior snapshots qualify.
    """
    if form not in (1, 2):
        raise ValueError(f"form must be 1 or 2, got {form}")
    if len(traj.states) < 3:
        raise ValueError("trajectory too short for the centered stencil")
    if index is None:
        return max(
            evf_identity_residual(traj, form, i)
            for i in range(1, len(traj.states) - 1)
        )
    if not 0 < index < len(traj.states) - 1:
        raise ValueError(f"index {index} has no centered neighbours")

    cfg = traj.config
    p = cfg.params
    g = cfg.grid
    prev_st, st, next_st = (
        traj.states[index - 1],
        traj.states[index],
        traj.states[index + 1],
    )
    span = next_st.t - prev_st.t
    u_eps = _mollify_vec(st.u, _u_spec(p))
    b = _coeff_b(st.rho, u_eps, p)
    force = cfg.forcing_momentum(st.t) if cfg.forcing_momentum else None

    if form == 1:
        a = _coeff_a(st.rho, p)
        dtu = [
            (next_st.u.components[i].values - prev_st.u.components[i].values) / span
            for i in range(g.d)
        ]
        comps = []
        for i in range(g.d):
            conv = sum(
                b.components[j].values * grad(st.u.components[i]).components[j].values
                for j in range(g.d)
            )
            vals = a.values * dtu[i] + conv
            if force is not None:
                vals = vals - force.components[i].values
            comps.append(vals)
        rhs_vec = VecField.from_arrays(g, comps)
    else:
        momenta = []
        for other in (prev_st, next_st):
            a_o = _coeff_a(other.rho, p)
            momenta.append([a_o.values * c.values for c in other.u.components])
        dt_mom = [(momenta[1][i] - momenta[0][i]) / span for i in range(g.d)]
        rho_m_moll = mollify(
            Field(g, st.rho.values**p.damping_exponent), _c_spec(p)
        ).values
        comps = []
        for i in range(g.d):
            flux = div(
                VecField.from_arrays(
                    g,
                    [b.components[j].values * st.u.components[i].values for j in range(g.d)],
                )
            ).values
            vals = dt_mom[i] + flux + p.damping_rate * rho_m_moll * st.u.components[i].values
            if cfg.forcing_continuity is not None:
                g_moll = mollify(cfg.forcing_continuity(st.t), _c_spec(p)).values
                vals = vals - g_moll * st.u.components[i].values
            if force is not None:
                vals = vals - force.components[i].values
            comps.append(vals)
        rhs_vec = VecField.from_arrays(g, comps)

    rhs = Field(g, -inv_laplacian_div(rhs_vec).values)
    return l2_norm(_meanfree(evf(st, p)) - rhs)


# ---------------------------------------------------------------------------
# compactness functionals


def _stencil(spec: KernelSpec, grid: Grid):
    """Offsets carrying kernel weight above the relative floor.

    The floor is 1e-6 of the max; if pruning drops more than 1e-3 of the
    kernel mass the evaluation would be silently biased, so that is an
    error.  For the inverse-distance family the plateau keeps every
    offset above the floor and nothing is pruned.
    """
    kern = kernel_field(spec, grid).values
    floor = 1e-6 * kern.max()
    mask = kern >= floor
    dropped = float(kern[~mask].sum() / kern.sum())
    if dropped > 1e-3:
        raise KernelResolutionError(
            f"stencil truncation drops {dropped:.2e} of the kernel mass"
        )
    offsets = np.argwhere(mask)
    weights = kern[mask]
    return offsets, weights


def _pair_sum(
    grid: Grid,
    spec: KernelSpec,
    pair_values: Callable[[np.ndarray], np.ndarray],
) -> float:
    """sum_z K(z) * sum_x pair_values(shifted-by-z)(x) * cell_vol^2.

    pair_values receives the field table rolled so that entry x holds
    the partner value at x - z; np.roll(a, z)[x] = a[x - z].
    """
    offsets, weights = _stencil(spec, grid)
    axes = tuple(range(grid.d))
    acc = 0.0
    for off, wgt in zip(offsets, weights):
        acc += wgt * pair_values(tuple(int(o) for o in off), axes)
    return acc * grid.cell_volume**2


def kolmogorov_weighted(
    rho: Field, w: Field, h: float, sigma: float,
    family: str = "inverse_distance", normalized: bool = False,
) -> float:
    """R_h: double integral of K_h(x-y) |rho(x)-rho(y)|_sigma w(x)."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    g = rho.grid
    spec = KernelSpec(family, h)
    rv, wv = rho.values, w.values

    def pair(off, axes):
        diff = rv - np.roll(rv, off, axes)
        return float((smoothed_abs(diff, sigma) * wv).sum())

    val = _pair_sum(g, spec, pair)
    if normalized:
        val /= kernel_l1_mass(spec, g)
    return val


def kolmogorov_G(
    rho: Field, w: Field, h: float, sigma: float, k: float, m: float,
    family: str = "inverse_distance",
) -> float:
    """G_h: k times the kernel-paired damping increment against the
    smoothed sign of the density increment.  Reported, never asserted
    sign-definite."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    g = rho.grid
    spec = KernelSpec(family, h)
    rv, wv = rho.values, w.values
    rm = rv**m

    def pair(off, axes):
        sgn = smoothed_sign(rv - np.roll(rv, off, axes), sigma)
        return float(((rm - np.roll(rm, off, axes)) * sgn * wv).sum())

    return k * _pair_sum(g, spec, pair)


def kolmogorov_plain(
    seq: Sequence[Field], h: float, p: float,
    family: str = "inverse_distance",
) -> float:
    """Normalized plain criterion: max over the sequence of
    (1/||K_h||_L1) double-integral of K_h |f(x)-f(y)|^p."""
    if not seq:
        raise ValueError("empty field sequence")
    g = seq[0].grid
    spec = KernelSpec(family, h)
    norm = kernel_l1_mass(spec, g)
    worst = 0.0
    for f in seq:
        fv = f.values

        def pair(off, axes):
            return float((np.abs(fv - np.roll(fv, off, axes)) ** p).sum())

        worst = max(worst, _pair_sum(g, spec, pair) / norm)
    return worst


@dataclass
class WeightRemovalSplit:
    i1: float           # good-pair integral weighted by (w(x)+w(y)), / zeta
    i2: float           # plain integral over bad x bad pairs
    bound: float        # 2 int rho |log w| / |log zeta|
    good_region_plain: float
    plain_total: float


def weight_removal_split(
    rho: Field, w: Field, h: float, zeta: float,
    family: str = "inverse_distance",
) -> WeightRemovalSplit:
    """Split the plain increment integral at the level set {w = zeta}.

    Pairs with at least one endpoint in the good set {w > zeta} are
    controlled by the weighted functional over zeta (i1); pairs fully
    inside the bad set are controlled by the log-weight mass (i2 <=
    bound, which holds term by term in the quadrature whenever rho >= 0
    and w > 0).  good_region_plain + i2 reproduces the plain total
    exactly: same terms, partitioned.
    """
    if not 0.0 < zeta < 1.0:
        raise ValueError(f"zeta must lie in (0, 1), got {zeta}")
    if w.values.min() <= 0.0:
        raise ValueError("weight must be strictly positive for the log bound")
    if rho.values.min() < 0.0:
        raise ValueError("density must be nonnegative")
    g = rho.grid
    spec = KernelSpec(family, h)
    # normalized kernel: the bound uses unit kernel mass
    kern_mass = kernel_l1_mass(spec, g)
    rv, wv = rho.values, w.values
    bad = wv <= zeta

    acc_i1 = 0.0
    acc_i2 = 0.0
    acc_good = 0.0
    acc_total = 0.0
    offsets, weights = _stencil(spec, g)
    axes = tuple(range(g.d))
    for off, wgt in zip(offsets, weights):
        off = tuple(int(o) for o in off)
        rv_s = np.roll(rv, off, axes)
        wv_s = np.roll(wv, off, axes)
        bad_s = np.roll(bad, off, axes)
        diff = np.abs(rv - rv_s)
        both_bad = bad & bad_s
        acc_total += wgt * float(diff.sum())
        acc_i2 += wgt * float(diff[both_bad].sum())
        good = ~both_bad
        acc_good += wgt * float(diff[good].sum())
        acc_i1 += wgt * float((diff[good] * (wv + wv_s)[good]).sum())
    scale = g.cell_volume**2 / kern_mass
    logw = np.abs(np.log(wv))
    bound = 2.0 * float((rv * logw).sum() * g.cell_volume) / abs(math.log(zeta))
    out = WeightRemovalSplit(
        i1=acc_i1 * scale / zeta,
        i2=acc_i2 * scale,
        bound=bound,
        good_region_plain=acc_good * scale,
        plain_total=acc_total * scale,
    )
    if out.i2 > out.bound * (1 + 1e-12) + 1e-300:
        raise AssertionError(
            f"log-weight bound violated: i2={out.i2}, bound={out.bound}"
        )
    return out


# ---------------------------------------------------------------------------
# regularization defect


def _smooth_space_time(
    arrays: np.ndarray, grid: Grid, dt_snap: float, eta_t: float, eta_x: float
) -> np.ndarray:
    out = arrays
    if eta_t > 0:
        out = gaussian_filter1d(out, sigma=eta_t / dt_snap, axis=0, mode="reflect")
    if eta_x > 0:
        spec = KernelSpec("gaussian", eta_x)
        out = np.stack(
            [mollify(Field(grid, sl), spec).values for sl in out]
        )
    return out


def regularization_defect(traj: Trajectory, eta_t: float, eta_x: float) -> float:
    """|| rho |u - smoothed u| ||_{L1(t,x)} with a reflected Gaussian in
    time and the periodized Gaussian in space."""
    if eta_t < 0 or eta_x < 0:
        raise ValueError("smoothing widths must be nonnegative")
    times = np.array([st.t for st in traj.states])
    span = times[-1] - times[0]
    if eta_t > span / 4:
        raise ValueError(
            f"trajectory span {span} too short for time width {eta_t}"
        )
    g = traj.config.grid
    dt_snap = float(times[1] - times[0])
    sq = np.zeros((len(times),) + g.shape)
    for i in range(g.d):
        comp = np.stack([st.u.components[i].values for st in traj.states])
        smooth = _smooth_space_time(comp, g, dt_snap, eta_t, eta_x)
        sq += (comp - smooth) ** 2
    rho_stack = np.stack([st.rho.values for st in traj.states])
    integrand = rho_stack * np.sqrt(sq)
    spatial = integrand.reshape(len(times), -1).sum(axis=1) * g.cell_volume
    return float(np.trapezoid(spatial, times))


def regularization_exponent(
    traj: Trajectory, eta_ladder: Sequence[float],
    ratio_t: float = 1.0, ratio_x: float = 1.0,
) -> tuple[list[float], float]:
    """Defects along eta_ladder (widths eta*ratio_t in time, eta*ratio_x
    in space) and the fitted log-log slope; the slope must be positive
    for the regularization to be doing anything."""
    if len(eta_ladder) < 3:
        raise ValueError("need at least 3 ladder points to fit an exponent")
    defects = [
        regularization_defect(traj, eta * ratio_t, eta * ratio_x)
        for eta in eta_ladder
    ]
    if min(defects) <= 0:
        return defects, math.inf
    slope = float(
        np.polyfit(np.log(np.asarray(eta_ladder)), np.log(np.asarray(defects)), 1)[0]
    )
    if slope <= 0:
        raise ValueError(f"fitted defect exponent {slope:.3f} is not positive")
    return defects, slope


# ---------------------------------------------------------------------------
# pressure functional


@dataclass
class TimeProfile:
    """Smooth taper psi with its analytic derivative; psi(t_end) = 0."""

    psi: Callable[[float], float]
    dpsi: Callable[[float], float]

    @classmethod
    def poly_taper(cls, t_end: float, power: int = 3) -> "TimeProfile":
        def psi(t: float) -> float:
            return max(0.0, 1.0 - t / t_end) ** power

        def dpsi(t: float) -> float:
            return -power / t_end * max(0.0, 1.0 - t / t_end) ** (power - 1)

        return cls(psi, dpsi)


@dataclass
class BogovskiiResult:
    lhs: float          # intint psi p_eps rho, mean part included
    i1: float
    i2: float
    i3: float
    i4: float
    i5: float
    forcing: float
    mean_term: float    # <rho> intint psi p_eps, the torus mean correction
    residual: float

    @property
    def rhs(self) -> float:
        return (
            self.i1 + self.i2 + self.i3 + self.i4 + self.i5
            + self.forcing + self.mean_term
        )


def bogovskii_functional(traj: Trajectory, profile: TimeProfile) -> BogovskiiResult:
    """Space-time identity from pairing momentum with psi grad lap^{-1} rho.

    lhs = intint psi p_eps rho; since div grad lap^{-1} rho = rho - <rho>
    on the torus, the pairing produces the mean-free part and the rhs
    carries the explicit correction <rho> intint psi p_eps.  The other
    right-hand terms are
      i1 = (mu + xi) intint psi rho div u
      i2 = mu intint psi grad u : hess lap^{-1} rho
      i3 = - intint psi (b x u) : hess lap^{-1} rho
      i4 = - psi(0) int F.B |_{t=0} - intint psi' F.B
           + intint psi F . grad lap^{-1}[div(rho u_eps) + k rho^m - g]
      i5 = k intint psi [rho^m]_delta u . B
    with F = a u and B = grad lap^{-1} rho.  The i4 block is the time
    integration by parts combined with the continuity equation, so no
    discrete time differences remain anywhere.
    """
    cfg = traj.config
    p = cfg.params
    g = cfg.grid
    t_end = traj.states[-1].t
    if abs(profile.psi(t_end)) > 1e-12:
        raise ValueError(
            f"profile support touches the final time (psi({t_end}) = "
            f"{profile.psi(t_end):.3e})"
        )

    times = np.array([st.t for st in traj.states])
    n_rows = len(times)
    lhs_t = np.zeros(n_rows)
    mean_t = np.zeros(n_rows)
    i1_t = np.zeros(n_rows)
    i2_t = np.zeros(n_rows)
    i3_t = np.zeros(n_rows)
    i5_t = np.zeros(n_rows)
    i4_prime_t = np.zeros(n_rows)  # psi' F.B part
    i4_cont_t = np.zeros(n_rows)   # psi F . grad lap^{-1}[...] part
    forcing_t = np.zeros(n_rows)
    fb0 = 0.0

    for idx, st in enumerate(traj.states):
        psi = profile.psi(float(times[idx]))
        dpsi = profile.dpsi(float(times[idx]))
        rho, u = st.rho, st.u
        B = grad_inv_laplacian(rho)
        H = hessian_inv_laplacian(rho)
        u_eps = _mollify_vec(u, _u_spec(p))
        a = _coeff_a(rho, p)
        b = _coeff_b(rho, u_eps, p)
        p_eps = mollify(pressure(rho, p), _u_spec(p))
        cv = g.cell_volume

        lhs_t[idx] = psi * float((p_eps.values * rho.values).sum() * cv)
        mean_t[idx] = psi * float(rho.values.mean()) * float(p_eps.values.sum() * cv)
        divu = div(u).values
        i1_t[idx] = (p.mu + p.bulk_visc) * psi * float(
            (rho.values * divu).sum() * cv
        )
        jac = [grad(c) for c in u.components]
        acc2 = 0.0
        acc3 = 0.0
        for i in range(g.d):
            for j in range(g.d):
                h_ij = H[i][j].values
                acc2 += float((jac[i].components[j].values * h_ij).sum())
                acc3 += float(
                    (b.components[i].values * u.components[j].values * h_ij).sum()
                )
        i2_t[idx] = p.mu * psi * acc2 * cv
        i3_t[idx] = -psi * acc3 * cv

        f_vec = [a.values * c.values for c in u.components]
        fb = sum(
            float((f_vec[i] * B.components[i].values).sum()) for i in range(g.d)
        ) * cv
        if idx == 0:
            fb0 = fb
        i4_prime_t[idx] = dpsi * fb

        rho_m = rho.values**p.damping_exponent
        cont_src = div(
            VecField.from_arrays(
                g, [rho.values * c.values for c in u_eps.components]
            )
        ).values + p.damping_rate * rho_m
        if cfg.forcing_continuity is not None:
            cont_src = cont_src - cfg.forcing_continuity(float(times[idx])).values
        q_vec = grad_inv_laplacian(Field(g, cont_src))
        i4_cont_t[idx] = psi * sum(
            float((f_vec[i] * q_vec.components[i].values).sum()) for i in range(g.d)
        ) * cv

        rho_m_moll = mollify(Field(g, rho_m), _c_spec(p)).values
        ub = sum(
            float((u.components[i].values * B.components[i].values * rho_m_moll).sum())
            for i in range(g.d)
        ) * cv
        i5_t[idx] = p.damping_rate * psi * ub

        if cfg.forcing_momentum is not None:
            F = cfg.forcing_momentum(float(times[idx]))
            forcing_t[idx] -= psi * sum(
                float((F.components[i].values * B.components[i].values).sum())
                for i in range(g.d)
            ) * cv
        if cfg.forcing_continuity is not None:
            g_moll = mollify(
                cfg.forcing_continuity(float(times[idx])), _c_spec(p)
            ).values
            forcing_t[idx] -= psi * sum(
                float(
                    (g_moll * u.components[i].values * B.components[i].values).sum()
                )
                for i in range(g.d)
            ) * cv

    def tint(series: np.ndarray) -> float:
        return float(np.trapezoid(series, times))

    lhs = tint(lhs_t)
    i4 = -profile.psi(0.0) * fb0 - tint(i4_prime_t) + tint(i4_cont_t)
    res = BogovskiiResult(
        lhs=lhs,
        i1=tint(i1_t),
        i2=tint(i2_t),
        i3=tint(i3_t),
        i4=i4,
        i5=tint(i5_t),
        forcing=tint(forcing_t),
        mean_term=tint(mean_t),
        residual=0.0,
    )
    res.residual = abs(lhs - res.rhs) / abs(lhs) if lhs != 0 else abs(res.rhs)
    return res


# ---------------------------------------------------------------------------
# interpolation verifier


@dataclass
class SpaceTimeField:
    """Scalar field on a time-periodic grid of nt uniform samples over
    [0, t_period); windowed data vanishing at the endpoints makes the
    periodic reading exact."""

    grid: Grid
    t_period: float
    values: np.ndarray  # (nt, *grid.shape)

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape[1:] != self.grid.shape or self.values.ndim != self.grid.d + 1:
            raise ValueError(
                f"space-time shape {self.values.shape} does not extend grid {self.grid.shape}"
            )

    @property
    def nt(self) -> int:
        return self.values.shape[0]

    @property
    def dt(self) -> float:
        return self.t_period / self.nt


@dataclass
class SpaceTimeVec:
    grid: Grid
    t_period: float
    components: list[np.ndarray]

    def __post_init__(self) -> None:
        if len(self.components) != self.grid.d:
            raise ValueError("component count must match grid dimension")
        self.components = [np.asarray(c, dtype=float) for c in self.components]

    @property
    def nt(self) -> int:
        return self.components[0].shape[0]

    @property
    def dt(self) -> float:
        return self.t_period / self.nt


def _st_wavenumbers(grid: Grid, nt: int, t_period: float):
    omega = 2.0 * np.pi * np.fft.fftfreq(nt, d=t_period / nt)
    omega = omega.reshape((nt,) + (1,) * grid.d)
    spatial = [k.reshape((1,) + k.shape) for k in grid.wavenumbers]
    k2 = grid.k_squared.reshape((1,) + grid.shape)
    return omega, spatial, k2


def _st_lq(mag: np.ndarray, q: float, cell: float, dt: float) -> float:
    if math.isinf(q):
        return float(np.abs(mag).max())
    return float((np.abs(mag) ** q).sum() * cell * dt) ** (1.0 / q)


def _neg_sobolev_rate_norm(
    comps: list[np.ndarray], grid: Grid, t_period: float, q: float
) -> float:
    """Lq norm of F^{-1}(|omega| |xi|^{-1} F(field)): the time-derivative
    magnitude measured one spatial derivative down.  Spatial mean modes
    are annihilated, matching the mean-free pairing on the torus."""
    nt = comps[0].shape[0]
    omega, _, k2 = _st_wavenumbers(grid, nt, t_period)
    with np.errstate(divide="ignore"):
        inv_k = np.where(k2 > 0, 1.0 / np.sqrt(k2), 0.0)
    mult = np.abs(omega) * inv_k
    sq = None
    for c in comps:
        out = np.fft.ifftn(mult * np.fft.fftn(c)).real
        sq = out**2 if sq is None else sq + out**2
    dt = t_period / nt
    return _st_lq(np.sqrt(sq), q, grid.cell_volume, dt)


@dataclass
class InterpolationResult:
    lhs: float
    rhs: float
    ratio: float
    alpha: float
    norms: dict[str, float]


def interpolation_verifier(
    phi: SpaceTimeVec,
    W: SpaceTimeField,
    q: float, q_prime: float, q_bar: float, q_bar_prime: float,
    beta: float,
) -> InterpolationResult:
    """Check intint ((-lap)^{-1} div d_t phi) W against the four-norm
    product with exponents alpha = 1 - beta.

    The exponents must satisfy one strict branch of
        1/q' + 1/qbar < 1 < 1/q + 1/qbar'   (or both reversed),
    and alpha must solve the balance relation
        1 - 1/q' - 1/qbar = alpha (1/q + 1/qbar' - 1/q' - 1/qbar).
    """
    if phi.grid != W.grid or phi.nt != W.nt or phi.t_period != W.t_period:
        raise ValueError("phi and W must share the space-time grid")
    inv = lambda e: 0.0 if math.isinf(e) else 1.0 / e
    s1 = inv(q_prime) + inv(q_bar)
    s2 = inv(q) + inv(q_bar_prime)
    if not (s1 < 1.0 < s2 or s1 > 1.0 > s2):
        raise ValueError(
            f"exponent relation violated: 1/q'+1/qbar={s1:.4f}, 1/q+1/qbar'={s2:.4f}"
        )
    alpha = 1.0 - beta
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha = 1 - beta = {alpha} outside (0, 1)")
    balance = (1.0 - inv(q_prime) - inv(q_bar)) - alpha * (s2 - s1)
    if abs(balance) > 1e-9:
        raise ValueError(
            f"exponent relation violated: balance defect {balance:.3e} for alpha={alpha}"
        )

    g = phi.grid
    nt, t_period = phi.nt, phi.t_period
    omega, spatial, k2 = _st_wavenumbers(g, nt, t_period)
    with np.errstate(divide="ignore"):
        inv_k2 = np.where(k2 > 0, 1.0 / k2, 0.0)
    # (-lap)^{-1} div d_t phi in one space-time multiplier pass
    acc = np.zeros((nt,) + g.shape, dtype=complex)
    for i, c in enumerate(phi.components):
        acc += (1j * spatial[i]) * (1j * omega) * inv_k2 * np.fft.fftn(c)
    lhs_field = np.fft.ifftn(acc).real
    dt = t_period / nt
    lhs = float((lhs_field * W.values).sum() * g.cell_volume * dt)

    mag_phi = np.sqrt(sum(c**2 for c in phi.components))
    n_phi = _st_lq(mag_phi, q, g.cell_volume, dt)
    n_dtphi = _neg_sobolev_rate_norm(phi.components, g, t_period, q_prime)
    n_W = _st_lq(W.values, q_bar, g.cell_volume, dt)
    n_dtW = _neg_sobolev_rate_norm([W.values], g, t_period, q_bar_prime)

    rhs = (
        n_phi**alpha * n_dtphi ** (1.0 - alpha) * n_W ** (1.0 - alpha) * n_dtW**alpha
    )
    ratio = lhs / rhs if rhs > 0 else (0.0 if lhs == 0 else math.inf)
    return InterpolationResult(
        lhs=lhs,
        rhs=rhs,
        ratio=ratio,
        alpha=alpha,
        norms={
            "phi": n_phi,
            "dt_phi_neg": n_dtphi,
            "W": n_W,
            "dt_W_neg": n_dtW,
        },
    )
