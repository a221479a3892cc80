"""Time stepper for the damped, regularised barotropic system.

One step advances (rho, u, w) -> (rho', u', w') by a coupled implicit
scheme:

* continuity: semi-Lagrangian transport along the mollified velocity
  (RK2 backward trace, clipped cubic interpolation, Jacobian factor for
  the compressible dilution), a multiplicative mass fixer that restores
  the pre-transport mass exactly, then the pointwise damping ODE
  rho' = -k rho^m solved in closed form over the step
* momentum: backward-Euler-in-time solve of
      a (v - u)/dt + b . grad v - Div S(v) + grad p_eps = F,
  a = floor + smoothed rho, b = smoothed (rho u_eps), with the
  coefficients themselves refreshed from the transported density inside
  a Picard loop (contraction O(dt)); each linear solve runs GMRES
  preconditioned by the exact inverse of the constant-coefficient
  operator (mean(a)/dt) I - Div S, which is diagonal per Fourier mode up
  to a rank-one term and inverted by Sherman-Morrison
* weight: transported along the same feet and damped by
  exp(-gain * maximal(|grad u'|) * dt), so w stays in [0, 1] by
  construction

Mass bookkeeping is exact by design: the fixer pins the transport mass
to the incoming mass, and the damping removal is measured as the actual
integral drop across the closed-form ODE, so the per-step ledger
residual is pure float rounding.

A state of rest over uniform density is reproduced exactly: the trace
degenerates to the identity on grid nodes, the corner clip snaps the
interpolated values back to the uniform value, the pressure gradient of
a uniform field vanishes identically in Fourier space, and the density
follows the closed-form damping ODE alone.
"""

from __future__ import annotations

import inspect
import json
import math
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
import scipy.sparse.linalg as spla
from scipy.ndimage import map_coordinates

from .analysis import gradient_magnitude, maximal
from .constitutive import (
    ConstraintError,
    Params,
    params_from_dict,
    params_to_dict,
    pressure,
    validate_params,
)
from .grid import Field, Grid, VecField, constant_field, integrate, lp_norm, zero_vec
from .kernels import KernelSpec, mollify

# scipy renamed gmres's tolerance keyword from tol to rtol; pick whichever
# this installation understands
_GMRES_TOL_KW = (
    "rtol" if "rtol" in inspect.signature(spla.gmres).parameters else "tol"
)


class NumericalError(RuntimeError):
    """The scheme left its admissible regime (mass collapse, divergence of
    the fixed point, non-finite values)."""


@dataclass
class FluidState:
    """Density, velocity, transported weight and clock time."""

    rho: Field
    u: VecField
    w: Field
    t: float

    def copy(self) -> "FluidState":
        return FluidState(self.rho.copy(), self.u.copy(), self.w.copy(), self.t)


@dataclass
class StepInfo:
    """Per-step ledger entries produced by advance()."""

    step: int
    t: float                    # time after the step
    dt: float
    mass: float                 # integral of rho after the step
    damping_mass_removed: float  # exact integral drop across the damping ODE
    forcing_mass_added: float
    fixer_factor: float         # multiplicative mass correction on the transport
    mass_residual_rate: float   # ((m' - m) + removed - added) / dt
    outer_iterations: int
    momentum_residual: float    # scale-relative residual of the final iterate
    converged: bool
    min_weight: float
    max_rho_weight: float


@dataclass
class StageConfig:
    """Everything one stage run needs.

    Forcing callbacks receive the midpoint time of the step being taken
    and must return fields on the stage grid; they exist so manufactured
    closed-form targets can be made exact semi-discrete solutions.
    """

    grid: Grid
    params: Params
    dt: float
    t_end: float
    density_init: dict = field(default_factory=lambda: {"kind": "uniform", "value": 1.0})
    velocity_init: dict = field(default_factory=lambda: {"kind": "zero"})
    weight_init: dict = field(default_factory=lambda: {"kind": "uniform", "value": 1.0})
    seed: int = 0
    snapshot_stride: int = 1
    fp_tol: float = 1e-10
    fp_max_iter: int = 12
    linear_tol: float = 1e-12
    forcing_continuity: Callable[[float], Field] | None = None
    forcing_momentum: Callable[[float], VecField] | None = None

    def n_steps(self) -> int:
        steps = self.t_end / self.dt
        n = round(steps)
        if n < 1 or abs(steps - n) > 1e-9 * max(1.0, abs(steps)):
            raise ConstraintError(
                "t_end must be a positive integer multiple of dt",
                f"t_end={self.t_end}, dt={self.dt}",
            )
        return n


@dataclass
class Trajectory:
    """States every snapshot_stride steps (first and last always kept)
    plus the full per-step ledger."""

    config: StageConfig
    steps: list[int]
    states: list[FluidState]
    infos: list[StepInfo]

    def state_at_step(self, step: int) -> FluidState:
        return self.states[self.steps.index(step)]

    @property
    def final(self) -> FluidState:
        return self.states[-1]


# ---------------------------------------------------------------------------
# semi-Lagrangian machinery


@lru_cache(maxsize=16)
def _index_grid(d: int, n: int) -> np.ndarray:
    return np.indices((n,) * d).astype(float)


def _interp(values: np.ndarray, idx_coords: np.ndarray) -> np.ndarray:
    return map_coordinates(values, idx_coords, order=3, mode="grid-wrap")


def _corner_bounds(values: np.ndarray, idx_coords: np.ndarray):
    """Min and max over the 2^d cell corners surrounding each foot."""
    n = values.shape[0]
    base = [np.floor(c).astype(int) for c in idx_coords]
    d = len(base)
    lo = None
    hi = None
    for corner in range(2**d):
        off = [(corner >> axis) & 1 for axis in range(d)]
        gathered = values[
            tuple((base[axis] + off[axis]) % n for axis in range(d))
        ]
        lo = gathered if lo is None else np.minimum(lo, gathered)
        hi = gathered if hi is None else np.maximum(hi, gathered)
    return lo, hi


def _interp_clipped(values: np.ndarray, idx_coords: np.ndarray) -> np.ndarray:
    """Cubic interpolation snapped into the local corner range.

    Kills the cubic overshoot, preserves positivity and [0, 1] ranges,
    and makes node-exact traces (rest states) reproduce the input bit
    for bit up to spline rounding, which the clip then removes entirely
    for locally constant data.
    """
    raw = _interp(values, idx_coords)
    lo, hi = _corner_bounds(values, idx_coords)
    return np.clip(raw, lo, hi)


@dataclass
class TransportOps:
    """Backward trace shared by the continuity and weight updates."""

    grid: Grid
    foot_idx: np.ndarray       # (d, *shape) fractional index coordinates
    jacobian: np.ndarray       # exp(-dt * div u_eps at the midpoint)
    u_eps: VecField


def transport_ingredients(u_eps: VecField, dt: float) -> TransportOps:
    g = u_eps.grid
    idx = _index_grid(g.d, g.n)
    s = g.spacing
    u_nodes = np.stack([c.values for c in u_eps.components])
    mid = idx - (0.5 * dt / s) * u_nodes
    u_mid = np.stack([_interp(c.values, mid) for c in u_eps.components])
    foot = idx - (dt / s) * u_mid
    from .grid import div as _div

    div_mid = _interp(_div(u_eps).values, mid)
    return TransportOps(g, foot, np.exp(-dt * div_mid), u_eps)


def _damping_ode(vals: np.ndarray, k: float, m: float, dt: float) -> np.ndarray:
    """Closed-form solution of rho' = -k rho^m over one step (m > 1)."""
    if k == 0.0 or dt == 0.0:
        return vals.copy()
    out = np.zeros_like(vals)
    pos = vals > 0
    out[pos] = (vals[pos] ** (1.0 - m) + k * (m - 1.0) * dt) ** (-1.0 / (m - 1.0))
    return out


def continuity_step(
    rho: Field,
    ops: TransportOps,
    dt: float,
    p: Params,
    forcing_vals: np.ndarray | None = None,
) -> tuple[Field, dict]:
    """Transport + mass fixer + exact damping (+ optional source).

    The returned info dict carries the exact per-step mass ledger.
    """
    g = rho.grid
    mass_in = integrate(rho)
    transported = _interp_clipped(rho.values, ops.foot_idx) * ops.jacobian
    raw_mass = transported.sum() * g.cell_volume
    if not raw_mass > 0:
        raise NumericalError(f"transported mass non-positive ({raw_mass:.3e})")
    factor = mass_in / raw_mass
    fixed = transported * factor
    mass_fixed = fixed.sum() * g.cell_volume
    damped = _damping_ode(fixed, p.damping_rate, p.damping_exponent, dt)
    removed = mass_fixed - damped.sum() * g.cell_volume
    added = 0.0
    out = damped
    if forcing_vals is not None:
        out = damped + dt * forcing_vals
        added = dt * forcing_vals.sum() * g.cell_volume
        if out.min() < -1e-12:
            raise NumericalError(
                f"continuity forcing drove density to {out.min():.3e}"
            )
        out = np.maximum(out, 0.0)
    info = {
        "fixer_factor": factor,
        "damping_mass_removed": removed,
        "forcing_mass_added": added,
    }
    return Field(g, out), info


# ---------------------------------------------------------------------------
# momentum solve


@lru_cache(maxsize=16)
def _spectral_kit(grid: Grid):
    ik = [1j * ka for ka in grid.wavenumbers]
    return ik, grid.k_squared


def _momentum_apply(
    v: np.ndarray, a_vals: np.ndarray, b_vals: np.ndarray, dt: float, p: Params, grid: Grid
) -> np.ndarray:
    """L v = a v / dt + b . grad v - mu lap v - (mu + xi) grad(div v)."""
    ik, k2 = _spectral_kit(grid)
    d = grid.d
    out = np.empty_like(v)
    v_hat = [np.fft.fftn(v[i]) for i in range(d)]
    div_hat = sum(ik[j] * v_hat[j] for j in range(d))
    for i in range(d):
        conv = np.zeros(grid.shape)
        for j in range(d):
            conv += b_vals[j] * np.fft.ifftn(ik[j] * v_hat[i]).real
        visc = p.mu * np.fft.ifftn(-k2 * v_hat[i]).real
        graddiv = (p.mu + p.bulk_visc) * np.fft.ifftn(ik[i] * div_hat).real
        out[i] = a_vals * v[i] / dt + conv - visc - graddiv
    return out


def _precondition(r: np.ndarray, abar: float, dt: float, p: Params, grid: Grid) -> np.ndarray:
    """Exact inverse of (abar/dt) I - Div S per Fourier mode.

    The mode matrix is c I + beta k k^T with c = abar/dt + mu |k|^2 and
    beta = mu + xi; Sherman-Morrison gives the inverse in closed form.
    """
    ik, k2 = _spectral_kit(grid)
    d = grid.d
    c = abar / dt + p.mu * k2
    beta = p.mu + p.bulk_visc
    r_hat = [np.fft.fftn(r[i]) for i in range(d)]
    kdotr = sum((ik[j] / 1j) * r_hat[j] for j in range(d))
    denom = c * (c + beta * k2)
    out = np.empty_like(r)
    for i in range(d):
        ki = ik[i] / 1j
        sol = r_hat[i] / c - beta * ki * kdotr / denom
        out[i] = np.fft.ifftn(sol).real
    return out


@dataclass
class _MomentumResult:
    u_new: VecField
    rho_new: Field
    ops: TransportOps
    cont_info: dict
    outer_iterations: int
    residual: float
    converged: bool


def momentum_fixed_point(
    state: FluidState,
    cfg: StageConfig,
    cont_forcing_vals: np.ndarray | None,
    mom_forcing: VecField | None,
) -> _MomentumResult:
    g, p, dt = cfg.grid, cfg.params, cfg.dt
    d = g.d
    u_spec = KernelSpec("gaussian", p.u_mollify)
    c_spec = KernelSpec("gaussian", p.coeff_mollify)
    u_n = np.stack([c.values for c in state.u.components])
    v = u_n.copy()
    size = d * g.n**d

    ops = None
    rho_new = None
    cont_info = None
    rel_update = math.inf
    scale = lp_norm(state.u, 2) + 1.0
    iterations = 0
    converged = False
    for it in range(cfg.fp_max_iter):
        u_eps = VecField.from_arrays(g, [mollify(Field(g, v[i]), u_spec).values for i in range(d)])
        ops = transport_ingredients(u_eps, dt)
        rho_new, cont_info = continuity_step(state.rho, ops, dt, p, cont_forcing_vals)
        a_vals = p.coeff_mollify + mollify(rho_new, c_spec).values
        b_vals = np.stack(
            [mollify(Field(g, rho_new.values * u_eps.components[j].values), c_spec).values for j in range(d)]
        )
        p_eps = mollify(pressure(rho_new, p), u_spec)
        from .grid import grad as _grad

        gp = _grad(p_eps)
        rhs = np.empty_like(v)
        for i in range(d):
            rhs[i] = a_vals * u_n[i] / dt - gp.components[i].values
            if mom_forcing is not None:
                rhs[i] += mom_forcing.components[i].values
        abar = float(a_vals.mean())

        def matvec(flat):
            return _momentum_apply(
                flat.reshape(d, *g.shape), a_vals, b_vals, dt, p, g
            ).ravel()

        def psolve(flat):
            return _precondition(
                flat.reshape(d, *g.shape), abar, dt, p, g
            ).ravel()

        A = spla.LinearOperator((size, size), matvec=matvec)
        M = spla.LinearOperator((size, size), matvec=psolve)
        kw = {_GMRES_TOL_KW: cfg.linear_tol, "atol": cfg.linear_tol * scale * abar / dt}
        v_flat, code = spla.gmres(
            A, rhs.ravel(), x0=v.ravel(), M=M, restart=40, maxiter=200, **kw
        )
        if code != 0:
            raise NumericalError(f"momentum linear solve failed (gmres code {code})")
        v_new = v_flat.reshape(d, *g.shape)
        rel_update = float(
            np.sqrt(((v_new - v) ** 2).sum() * g.cell_volume)
        ) / scale
        v = v_new
        iterations = it + 1
        if rel_update <= cfg.fp_tol:
            converged = True
            break

    # refresh the coupled quantities so the returned density matches the
    # returned velocity's own transport field
    u_eps = VecField.from_arrays(g, [mollify(Field(g, v[i]), u_spec).values for i in range(d)])
    ops = transport_ingredients(u_eps, dt)
    rho_new, cont_info = continuity_step(state.rho, ops, dt, p, cont_forcing_vals)

    if not np.all(np.isfinite(v)):
        raise NumericalError("momentum iterate became non-finite")
    return _MomentumResult(
        VecField.from_arrays(g, [v[i] for i in range(d)]),
        rho_new,
        ops,
        cont_info,
        iterations,
        rel_update,
        converged,
    )


def weight_step(w: Field, u_new: VecField, ops: TransportOps, dt: float, gain: float) -> Field:
    """Transport w along the same feet, then damp by the maximal function
    of |grad u|.

    The transport runs in log space: interpolation and the corner clip
    are positively homogeneous there, so log w stays *exactly* linear in
    the gain (the weight is passive and never feeds back into the flow),
    and the clip bounds log w by the nonpositive corner values, keeping
    w inside (0, 1] by construction."""
    lw = np.log(np.maximum(w.values, 1e-300))
    transported = _interp_clipped(lw, ops.foot_idx)
    mx = maximal(gradient_magnitude(u_new))
    return Field(w.grid, np.exp(transported - gain * dt * mx.values))


# ---------------------------------------------------------------------------
# stepping and runs


def advance(state: FluidState, cfg: StageConfig, step: int) -> tuple[FluidState, StepInfo]:
    g, p, dt = cfg.grid, cfg.params, cfg.dt
    t_mid = state.t + 0.5 * dt
    cont_vals = (
        cfg.forcing_continuity(t_mid).values if cfg.forcing_continuity else None
    )
    mom_force = cfg.forcing_momentum(t_mid) if cfg.forcing_momentum else None

    res = momentum_fixed_point(state, cfg, cont_vals, mom_force)
    if not res.converged:
        raise NumericalError(
            f"momentum fixed point stalled at rel update {res.residual:.3e} "
            f"after {res.outer_iterations} iterations"
        )
    gain = p.weight_gain_value(g.d)
    w_new = weight_step(state.w, res.u_new, res.ops, dt, gain)

    mass_old = integrate(state.rho)
    mass_new = integrate(res.rho_new)
    removed = res.cont_info["damping_mass_removed"]
    added = res.cont_info["forcing_mass_added"]
    info = StepInfo(
        step=step,
        t=state.t + dt,
        dt=dt,
        mass=mass_new,
        damping_mass_removed=removed,
        forcing_mass_added=added,
        fixer_factor=res.cont_info["fixer_factor"],
        mass_residual_rate=((mass_new - mass_old) + removed - added) / dt,
        outer_iterations=res.outer_iterations,
        momentum_residual=res.residual,
        converged=res.converged,
        min_weight=float(w_new.values.min()),
        max_rho_weight=float((res.rho_new.values * w_new.values).max()),
    )
    return FluidState(res.rho_new, res.u_new, w_new, state.t + dt), info


def initial_state(cfg: StageConfig) -> FluidState:
    rho = build_density(cfg.grid, cfg.density_init, cfg.seed)
    u = build_velocity(cfg.grid, cfg.velocity_init, cfg.seed)
    w = build_weight(cfg.grid, cfg.weight_init)
    return FluidState(rho, u, w, 0.0)


def run(cfg: StageConfig, state: FluidState | None = None) -> Trajectory:
    validate_params(cfg.params, cfg.grid.d)
    n = cfg.n_steps()
    if state is None:
        state = initial_state(cfg)
    if state.rho.values.min() <= 0:
        raise ConstraintError(
            "initial density > 0", f"min rho = {state.rho.values.min():.3e}"
        )
    steps = [0]
    states = [state.copy()]
    infos: list[StepInfo] = []
    for k in range(1, n + 1):
        state, info = advance(state, cfg, k)
        infos.append(info)
        if k % cfg.snapshot_stride == 0 or k == n:
            steps.append(k)
            states.append(state.copy())
    return Trajectory(cfg, steps, states, infos)


# ---------------------------------------------------------------------------
# initial data builders (JSON-friendly descriptors)


def _descriptor(spec: dict, kind_options: dict, what: str):
    if "kind" not in spec:
        raise ConstraintError(f"{what} descriptor needs a 'kind'", repr(spec))
    kind = spec["kind"]
    if kind not in kind_options:
        raise ConstraintError(
            f"{what} kind in {sorted(kind_options)}", f"got {kind!r}"
        )
    allowed = kind_options[kind]
    unknown = set(spec) - {"kind"} - set(allowed)
    if unknown:
        raise ConstraintError(
            f"{what}[{kind}] keys in {sorted(allowed)}",
            f"unknown keys {sorted(unknown)}",
        )
    return kind


_DENSITY_KINDS = {
    "uniform": {"value"},
    "cosine": {"base", "amp", "mode", "axis"},
    "random_bumps": {"base", "amp", "kmax"},
}


def build_density(grid: Grid, spec: dict, seed: int = 0) -> Field:
    kind = _descriptor(spec, _DENSITY_KINDS, "density_init")
    if kind == "uniform":
        vals = np.full(grid.shape, float(spec.get("value", 1.0)))
    elif kind == "cosine":
        x = grid.coords()[int(spec.get("axis", 0))]
        vals = float(spec.get("base", 1.0)) + float(spec.get("amp", 0.3)) * np.cos(
            int(spec.get("mode", 1)) * x
        )
    else:
        rng = np.random.default_rng(seed)
        kmax = int(spec.get("kmax", 3))
        amp = float(spec.get("amp", 0.2))
        vals = np.full(grid.shape, float(spec.get("base", 1.0)))
        coords = grid.coords()
        for _ in range(4):
            ks = rng.integers(1, kmax + 1, size=grid.d)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            wave = np.zeros(grid.shape)
            for ax in range(grid.d):
                wave = wave + ks[ax] * coords[ax]
            vals = vals + (amp / 4.0) * np.cos(wave + phase)
    if vals.min() <= 0:
        raise ConstraintError(
            "initial density > 0", f"descriptor {spec} gives min {vals.min():.3e}"
        )
    return Field(grid, vals)


_VELOCITY_KINDS = {
    "zero": set(),
    "sine": {"amp", "mode", "axis", "component"},
    "random": {"amp", "kmax"},
}


def build_velocity(grid: Grid, spec: dict, seed: int = 0) -> VecField:
    kind = _descriptor(spec, _VELOCITY_KINDS, "velocity_init")
    if kind == "zero":
        return zero_vec(grid)
    if kind == "sine":
        comp = int(spec.get("component", 0))
        axis = int(spec.get("axis", 0))
        if comp >= grid.d or axis >= grid.d:
            raise ConstraintError(
                "velocity axis/component < d", f"{spec} on d={grid.d}"
            )
        arrays = [np.zeros(grid.shape) for _ in range(grid.d)]
        arrays[comp] = float(spec.get("amp", 0.5)) * np.sin(
            int(spec.get("mode", 1)) * grid.coords()[axis]
        )
        return VecField.from_arrays(grid, arrays)
    rng = np.random.default_rng(seed + 1)
    kmax = int(spec.get("kmax", 3))
    amp = float(spec.get("amp", 0.3))
    arrays = []
    coords = grid.coords()
    for _ in range(grid.d):
        acc = np.zeros(grid.shape)
        for _ in range(4):
            ks = rng.integers(1, kmax + 1, size=grid.d)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            wave = np.zeros(grid.shape)
            for ax in range(grid.d):
                wave = wave + ks[ax] * coords[ax]
            acc = acc + (amp / 4.0) * np.cos(wave + phase)
        arrays.append(acc)
    return VecField.from_arrays(grid, arrays)


_WEIGHT_KINDS = {"uniform": {"value"}}


def build_weight(grid: Grid, spec: dict) -> Field:
    _descriptor(spec, _WEIGHT_KINDS, "weight_init")
    value = float(spec.get("value", 1.0))
    if not 0.0 < value <= 1.0:
        raise ConstraintError("initial weight in (0, 1]", f"value={value}")
    return constant_field(grid, value)


# ---------------------------------------------------------------------------
# checkpoints: magic, little-endian uint64 header length, JSON header,
# then the raw row-major float64 arrays in header order


CHECKPOINT_MAGIC = b"TORUSGAS-CKPT-1\n"


def write_checkpoint(path, state: FluidState, params: Params) -> None:
    g = state.rho.grid
    arrays = [("rho", state.rho.values)]
    for i, c in enumerate(state.u.components):
        arrays.append((f"u{i}", c.values))
    arrays.append(("w", state.w.values))
    header = {
        "grid": {"d": g.d, "n": g.n},
        "t": state.t,
        "params": params_to_dict(params),
        "dtype": "float64",
        "endianness": "<",
        "arrays": [name for name, _ in arrays],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, vals in arrays:
            fh.write(np.ascontiguousarray(vals, dtype="<f8").tobytes())


def read_checkpoint(path) -> tuple[FluidState, Params]:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise OSError(f"{path}: not a checkpoint file (bad magic {magic!r})")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        g = Grid(header["grid"]["d"], header["grid"]["n"])
        count = g.n**g.d
        fields = {}
        for name in header["arrays"]:
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise OSError(f"{path}: truncated array {name!r}")
            fields[name] = np.frombuffer(buf, dtype="<f8").reshape(g.shape).copy()
    params = params_from_dict(header["params"])
    u = VecField.from_arrays(g, [fields[f"u{i}"] for i in range(g.d)])
    state = FluidState(Field(g, fields["rho"]), u, Field(g, fields["w"]), float(header["t"]))
    return state, params
