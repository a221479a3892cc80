"""Command-line surface: simulate, sweep, diagnose, verify-lemma, report.

Exit codes are part of the contract:

  0  success
  2  config error (message names the violated constraint)
  3  numerical failure (message names the failing sub-step)
  4  I/O error

verify-lemma re-runs one of the quantitative building-block checks at
desk scale with fixed seeds; each backend prints the measured numbers
and a single PASS/FAIL line, so the checks are usable from a shell
without the test suite.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .analysis import d_r, d_shift_decay, smoothed_abs
from .constitutive import ConstraintError
from .diagnostics import (
    SpaceTimeField,
    SpaceTimeVec,
    interpolation_verifier,
    kolmogorov_weighted,
)
from .grid import Field, Grid, GridError
from .harness import (
    emit_plots,
    parse_config,
    resolve_output_root,
    run_sweep,
)
from .kernels import (
    KernelResolutionError,
    KernelSpec,
    commutator_defect,
    conv_lemma_constant,
    kernel_field,
    l1_norm_ratio,
)
from .solver import NumericalError, read_checkpoint


class LemmaCheckFailed(RuntimeError):
    """A verify-lemma backend measured numbers outside its bound."""


# ---------------------------------------------------------------------------
# small shared helpers


def _band_limited(grid: Grid, kmax: int, rng) -> Field:
    """Random real field with modes up to kmax per axis, unit-scale."""
    shape = grid.shape
    spec = np.zeros(shape, dtype=complex)
    for idx in np.ndindex(*shape):
        k = np.array([i if i <= grid.n // 2 else i - grid.n for i in idx])
        if 0 < np.max(np.abs(k)) <= kmax:
            spec[idx] = rng.normal() + 1j * rng.normal()
    vals = np.fft.ifftn(spec).real
    scale = np.max(np.abs(vals))
    return Field(grid, vals / scale if scale > 0 else vals)


def _opt(opts: dict, key: str, default):
    v = opts.get(key, default)
    return type(default)(v)


# ---------------------------------------------------------------------------
# lemma backends: each returns printable lines and raises LemmaCheckFailed
# when the measured numbers land outside the frozen desk-scale bound


def _lemma_normK(opts) -> list[str]:
    hs = (1e-2, 1e-3, 1e-4)
    d = _opt(opts, "dim", 1)
    ratios = [l1_norm_ratio(h, d=d) for h in hs]
    lines = [f"||K_h||_L1 / |ln h|  h={h:g}: {r:.6f}" for h, r in zip(hs, ratios)]
    for i in range(len(ratios)):
        for j in range(i + 1, len(ratios)):
            a, b = ratios[i], ratios[j]
            if abs(a - b) > 0.25 * max(a, b):
                raise LemmaCheckFailed(
                    f"log-norm ratio drifts more than 25% between h={hs[i]:g} and h={hs[j]:g}"
                )
    return lines


def _lemma_convK(opts) -> list[str]:
    n = _opt(opts, "n", 4096)
    g = Grid(1, n)
    hs = (0.05, 0.02, 0.01)
    consts = {}
    for h1 in hs:
        for h2 in hs:
            consts[(h1, h2)] = conv_lemma_constant(h1, h2, g)
    lines = [
        f"C(h1={h1:g}, h2={h2:g}) = {c:.4f}" for (h1, h2), c in consts.items()
    ]
    spread = max(consts.values()) / min(consts.values())
    lines.append(f"spread max/min = {spread:.3f}")
    if spread > 2.0:
        raise LemmaCheckFailed(
            f"convolution-domination constant spread {spread:.3f} exceeds factor 2"
        )
    return lines


def _lemma_commutator(opts) -> list[str]:
    n = _opt(opts, "n", 1024)
    seed = _opt(opts, "seed", 20260822)
    rng = np.random.default_rng(seed)
    g = Grid(1, n)
    fields = [_band_limited(g, 6, rng) for _ in range(6)]
    pairs = [(fields[i], fields[i + 3]) for i in range(3)]
    per_delta = []
    deltas = (0.05, 0.01, 0.002)
    for delta in deltas:
        worst = max(commutator_defect(f, h, delta) for f, h in pairs)
        per_delta.append(worst)
    lines = [
        f"|ln d| * commutator L1 defect  d={d:g}: {v:.4f}"
        for d, v in zip(deltas, per_delta)
    ]
    spread = max(per_delta) / min(per_delta)
    lines.append(f"spread max/min = {spread:.3f}")
    if spread > 3.0:
        raise LemmaCheckFailed(
            f"commutator defect not delta-uniform: spread {spread:.3f} > 3"
        )
    return lines


def _lemma_lagrange(opts) -> list[str]:
    n = _opt(opts, "n", 256)
    seed = _opt(opts, "seed", 7)
    rng = np.random.default_rng(seed)
    g = Grid(1, n)
    lines = []
    for trial in range(3):
        f = _band_limited(g, 8, rng)
        vals = f.values
        c_field = 0.0
        n_pairs = 0
        for j in (1, 2, 4, 8, 16, 32, 64):
            r = j * g.spacing
            D = d_r(f, r).values
            xs = rng.integers(0, g.n, size=150)
            ys = (xs + j) % g.n
            num = np.abs(vals[xs] - vals[ys])
            den = r * (D[xs] + D[ys])
            ok = den > 1e-12
            n_pairs += int(ok.sum())
            if ok.any():
                c_field = max(c_field, float(np.max(num[ok] / den[ok])))
        lines.append(f"field {trial}: C = {c_field:.4f} over {n_pairs} pairs")
        if c_field > 2.0:
            raise LemmaCheckFailed(
                f"averaged-gradient inequality constant {c_field:.3f} exceeds 2"
            )
    return lines


def _lemma_du(opts) -> list[str]:
    n = _opt(opts, "n", 1024)
    seed = _opt(opts, "seed", 20260822)
    rng = np.random.default_rng(seed)
    g = Grid(1, n)
    u = _band_limited(g, 8, rng)
    hs = (0.05, 0.02)
    vals = [d_shift_decay(u, h) for h in hs]
    lines = [f"normalised shift decay  h={h:g}: {v:.4f}" for h, v in zip(hs, vals)]
    spread = max(vals) / min(vals)
    lines.append(f"spread max/min = {spread:.3f}")
    if spread > 2.0:
        raise LemmaCheckFailed(f"shift-decay functional drifts by {spread:.3f} > 2")
    return lines


def _lemma_interpolation(opts) -> list[str]:
    n = _opt(opts, "n", 64)
    nt = _opt(opts, "nt", 64)
    period = 2.0
    g = Grid(1, n)
    (x,) = g.coords()
    ts = np.arange(nt) * (period / nt)
    s = np.sin(np.pi * ts / period) ** 2
    phi = SpaceTimeVec(g, period, [np.sin(x)[None, :] * s[:, None]])
    q_set = (10.0 / 7.0, 10.0 / 9.0, np.inf, 1.0)

    w_orth = SpaceTimeField(g, period, np.sin(x)[None, :] * s[:, None])
    res = interpolation_verifier(phi, w_orth, *q_set, beta=7.0 / 8.0)
    lines = [f"orthogonal window: lhs = {res.lhs:.3e} (expect 0)"]
    if abs(res.lhs) > 1e-8:
        raise LemmaCheckFailed(
            f"orthogonal-window pairing {res.lhs:.3e} exceeds 1e-8"
        )

    s2 = np.sin(2.0 * np.pi * ts / period)
    w_cos = SpaceTimeField(g, period, np.cos(x)[None, :] * s2[:, None])
    res2 = interpolation_verifier(phi, w_cos, *q_set, beta=7.0 / 8.0)
    want = np.pi**2 / 2.0
    lines.append(f"cosine window: lhs = {res2.lhs:.10f} (expect {want:.10f})")
    lines.append(f"ratio lhs/rhs = {res2.ratio:.4f}")
    if abs(res2.lhs - want) > 1e-8 * want:
        raise LemmaCheckFailed(
            f"closed-form pairing off by {abs(res2.lhs - want):.3e}"
        )
    return lines


def _lemma_kolmogorov(opts) -> list[str]:
    n = _opt(opts, "n", 64)
    seed = _opt(opts, "seed", 20260822)
    h = float(opts.get("h", 0.3))
    sigma = float(opts.get("sigma", 0.05))
    rng = np.random.default_rng(seed)
    g = Grid(1, n)
    rho = Field(g, 1.0 + 0.5 * _band_limited(g, 4, rng).values)
    w = Field(g, np.clip(0.5 + 0.4 * _band_limited(g, 3, rng).values, 0.05, 1.0))
    fast = kolmogorov_weighted(rho, w, h, sigma)

    # O(n^2) dense pair sum straight from the definition
    kern = kernel_field(KernelSpec("inverse_distance", h), g).values
    vals = rho.values
    diff = vals[None, :] - vals[:, None]
    sabs = smoothed_abs(diff, sigma)
    idx = np.arange(n)
    koff = kern[(idx[None, :] - idx[:, None]) % n]
    brute = float((koff * sabs * w.values[:, None]).sum() * g.cell_volume**2)
    lines = [f"stencil evaluation: {fast:.12f}", f"brute force:        {brute:.12f}"]
    err = abs(fast - brute)
    if err > 1e-8 * max(1.0, abs(brute)):
        raise LemmaCheckFailed(
            f"weighted modulus functional disagrees with brute force by {err:.3e}"
        )
    return lines


_LEMMAS = {
    "convK": _lemma_convK,
    "normK": _lemma_normK,
    "commutator": _lemma_commutator,
    "lagrange": _lemma_lagrange,
    "du": _lemma_du,
    "interpolation": _lemma_interpolation,
    "kolmogorov": _lemma_kolmogorov,
}


# ---------------------------------------------------------------------------
# subcommands


def _cmd_simulate(args) -> int:
    plan = parse_config(args.config)
    plan = replace(plan, stages=())
    report = run_sweep(plan)
    root = resolve_output_root(plan)
    pt = report["stages"][0]["points"][0]
    if not pt["ok"]:
        print(f"numerical failure in {pt['param']}/point-{pt['point']}: {pt['reason']}")
        return 3
    print(f"run dir: {root / pt['run_dir']}")
    print(
        f"steps={pt['steps']}  t={pt['final_t']:g}  mass={pt['final_mass']:.12g}"
    )
    print(
        f"kinetic={pt['final_kinetic']:.6g}  internal={pt['final_internal']:.6g}  "
        f"max|energy residual|={pt['max_energy_residual']:.3e}"
    )
    return 0


def _cmd_sweep(args) -> int:
    plan = parse_config(args.config)
    report = run_sweep(plan)
    root = resolve_output_root(plan)
    emit_plots(report, root / "plots", root=root)
    _print_report(report)
    if report["partial"]:
        f = report["failures"][0]
        print(
            f"numerical failure in stage {f['stage']} ({f['param']}) "
            f"point {f['point']}: {f['reason']}"
        )
        return 3
    return 0


def _cmd_diagnose(args) -> int:
    try:
        state, params = read_checkpoint(args.checkpoint)
    except (OSError, ValueError) as exc:
        print(f"i/o error: cannot read checkpoint {args.checkpoint}: {exc}")
        return 4
    hs = [float(v) for v in args.h.split(",") if v]
    if not hs:
        raise ConstraintError("nonempty --h list", f"got {args.h!r}")
    if any(h <= 0 for h in hs):
        raise ConstraintError("--h values > 0", f"got {hs}")
    if args.sigma <= 0:
        raise ConstraintError("--sigma > 0", f"got {args.sigma}")
    print(f"t={state.t:g}  mass={float(state.rho.values.sum() * state.rho.grid.cell_volume):.12g}")
    print(f"min w = {float(state.w.values.min()):.6g}")
    for h in hs:
        val = kolmogorov_weighted(state.rho, state.w, h, args.sigma)
        print(f"R_h  h={h:g} sigma={args.sigma:g}: {val:.10e}")
    return 0


def _cmd_verify_lemma(args) -> int:
    opts = {}
    for item in args.params or []:
        if "=" not in item:
            raise ConstraintError("--params entries look like key=value", repr(item))
        key, _, val = item.partition("=")
        opts[key] = val
    backend = _LEMMAS[args.name]
    try:
        lines = backend(opts)
    except LemmaCheckFailed as exc:
        print(f"FAIL {args.name}: {exc}")
        return 3
    for ln in lines:
        print(ln)
    print(f"PASS {args.name}")
    return 0


def _cmd_report(args) -> int:
    root = Path(args.dir)
    report = json.loads((root / "report.json").read_text())
    _print_report(report)
    written = emit_plots(report, root / "plots", root=root)
    print(f"{len(written)} plot(s) under {root / 'plots'}")
    return 0


def _print_report(report: dict) -> None:
    print(f"version: {report['version']}")
    for si, stage in enumerate(report["stages"]):
        ladder = ", ".join(f"{v:g}" for v in stage["ladder"] if v is not None)
        print(f"stage {si} [{stage['param']}]  ladder: {ladder or '(base)'}")
        hs = stage["h_values"]
        if hs:
            print("    " + "  ".join(f"h={h:g}" for h in hs) + "  trend  slope")
        for pt, row, flag, slope in zip(
            stage["points"],
            stage["r_matrix"],
            stage["trend_down_in_h"],
            stage["decay_slope"],
        ):
            tag = "(base)" if pt["value"] is None else f"{pt['value']:g}"
            if not pt["ok"]:
                print(f"  {tag}: FAILED ({pt['reason']})")
            elif row is None:
                print(f"  {tag}: ok, no h ladder")
            else:
                cells = "  ".join(f"{v:.4e}" for v in row)
                s = "n/a" if slope is None else f"{slope:+.3f}"
                print(f"  {tag}: {cells}  {'down' if flag else 'FLAT'}  {s}")
    if report["partial"]:
        print("NOTE: sweep completed partially; failures above are quarantined")


# ---------------------------------------------------------------------------
# entry point


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="torusgas",
        description="desk-scale laboratory for a damped barotropic torus flow",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run the base config once")
    p.add_argument("config")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("sweep", help="run the staged parameter ladders")
    p.add_argument("config")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("diagnose", help="compactness functional on a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--h", required=True, help="comma-separated kernel widths")
    p.add_argument("--sigma", type=float, default=0.05)
    p.set_defaults(func=_cmd_diagnose)

    p = sub.add_parser("verify-lemma", help="re-run a building-block check")
    p.add_argument("name", choices=sorted(_LEMMAS))
    p.add_argument("--params", nargs="*", help="key=value overrides")
    p.set_defaults(func=_cmd_verify_lemma)

    p = sub.add_parser("report", help="reprint + replot a sweep directory")
    p.add_argument("dir")
    p.set_defaults(func=_cmd_report)

    return ap


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConstraintError, GridError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}")
        return 2
    except KernelResolutionError as exc:
        print(f"numerical failure: {exc}")
        return 3
    except NumericalError as exc:
        print(f"numerical failure: {exc}")
        return 3
    except ValueError as exc:
        # a numeric-domain rejection from deeper in the stack
        print(f"numerical failure: {exc}")
        return 3
    except OSError as exc:
        print(f"i/o error: {exc}")
        return 4


if __name__ == "__main__":
    sys.exit(main())
