"""Sweep scheduling, config parsing, CSV/plot emission, run persistence.

A sweep relaxes the scheme's five regularisation parameters in a fixed
nesting: velocity mollification width first, then the pressure cap, the
damping rate, the coefficient mollification width, and finally the stiff
pressure coefficient.  Each stage walks a ladder of values for one
parameter (the others stay at their base values), re-runs the solver per
rung, evaluates the diagnostics ladder on every snapshot, and persists a
self-contained run directory.  Ladder points are independent, so they
run in parallel; stages are sequential.

The JSON config is the normative schema; ``parse_config`` documents it
field by field.  All validation happens at parse time: no parameter set
reaches the solver unchecked, and every rejection names the violated
constraint.
"""

from __future__ import annotations

import json
import os
import subprocess
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .constitutive import (
    ConstraintError,
    Params,
    params_from_dict,
    params_to_dict,
    validate_params,
)
from .diagnostics import (
    DiagnosticsRecord,
    energy_ledger,
    regularization_exponent,
    weight_removal_split,
)
from .grid import Grid
from .solver import (
    StageConfig,
    Trajectory,
    build_density,
    build_velocity,
    build_weight,
    initial_state,
    run,
    write_checkpoint,
)

# external stage names -> Params fields.  The dict order is the mandatory
# stage nesting; ladders shrink the parameter except for the pressure cap,
# which grows.
STAGE_PARAMS = {
    "eps": "u_mollify",
    "M": "pressure_cap",
    "k": "damping_rate",
    "delta": "coeff_mollify",
    "lambda": "stiff_coeff",
}
STAGE_ORDER = tuple(STAGE_PARAMS)
_INCREASING = {"M"}

ENV_WORKERS = "TORUSGAS_WORKERS"
ENV_OUTPUT_ROOT = "TORUSGAS_OUTPUT_ROOT"

CSV_HEADER = (
    "step",
    "t",
    "mass",
    "kinetic",
    "internal",
    "dissipation_cum",
    "damping_cum",
    "energy_residual",
    "evf_residual",
    "min_w",
    "max_rho_w",
    "rho_logw",
)


@dataclass(frozen=True)
class DiagnosticsPlan:
    """Which compactness/weight diagnostics to evaluate per run.

    h_values feed the weighted modulus functional (one CSV column each),
    zeta (if set) triggers the weight-removal split on the final state,
    and an eta ladder of length >= 3 triggers the mollification-defect
    exponent fit.
    """

    h_values: tuple[float, ...] = ()
    sigma: float = 0.05
    zeta: float | None = None
    eta_values: tuple[float, ...] = ()


@dataclass(frozen=True)
class SweepPlan:
    stages: tuple[tuple[str, tuple[float, ...]], ...]
    base: StageConfig
    diag: DiagnosticsPlan
    output_dir: str
    workers: int
    seed: int


# ---------------------------------------------------------------------------
# config parsing

_TOP_KEYS = {
    "grid",
    "params",
    "dt",
    "t_end",
    "density_init",
    "velocity_init",
    "weight_init",
    "seed",
    "snapshot_stride",
    "stages",
    "diagnostics",
    "output_dir",
    "workers",
}


def _check_keys(d: dict, allowed: set[str], where: str) -> None:
    if not isinstance(d, dict):
        raise ConstraintError(f"{where} is a JSON object", f"got {type(d).__name__}")
    unknown = set(d) - allowed
    if unknown:
        raise ConstraintError(
            f"known {where} keys", f"unknown keys: {sorted(unknown)}"
        )


def _as_float(v, what: str) -> float:
    if v == "inf":
        return float("inf")
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConstraintError(f"{what} is a number", f"got {v!r}")
    return float(v)


def _parse_stages(raw_stages, base_params: Params, d: int):
    stages = []
    last_idx = -1
    for entry in raw_stages:
        _check_keys(entry, {"param", "ladder"}, "stage entry")
        if "param" not in entry or "ladder" not in entry:
            raise ConstraintError(
                "stage entry has param and ladder", f"got keys {sorted(entry)}"
            )
        name = entry["param"]
        if name not in STAGE_PARAMS:
            raise ConstraintError(
                "stage parameter in {eps, M, k, delta, lambda}", f"got {name!r}"
            )
        idx = STAGE_ORDER.index(name)
        if idx <= last_idx:
            raise ConstraintError(
                "stage order eps -> M -> k -> delta -> lambda",
                f"{name!r} appears out of order",
            )
        last_idx = idx
        ladder = tuple(
            _as_float(v, f"ladder value for {name}") for v in entry["ladder"]
        )
        if not ladder:
            raise ConstraintError("nonempty ladder", f"stage {name!r}")
        diffs = np.diff(ladder)
        if name in _INCREASING:
            if not np.all(diffs > 0):
                raise ConstraintError(
                    f"ladder for {name} strictly increasing", f"got {list(ladder)}"
                )
        elif not np.all(diffs < 0):
            raise ConstraintError(
                f"ladder for {name} strictly decreasing", f"got {list(ladder)}"
            )
        # every rung must itself be a legal parameter set
        for v in ladder:
            validate_params(base_params.with_(**{STAGE_PARAMS[name]: v}), d)
        stages.append((name, ladder))
    return tuple(stages)


def parse_config(path) -> SweepPlan:
    """Load and fully validate a sweep config.

    Normative JSON schema (all keys optional; defaults in brackets):

      grid           {"dim": int [1], "n": int [64]}
      params         partial override of the constitutive defaults
      dt             time step [0.005]
      t_end          final time, integer multiple of dt [0.05]
      density_init   builder descriptor [{"kind": "uniform", "value": 1.0}]
      velocity_init  builder descriptor [{"kind": "zero"}]
      weight_init    builder descriptor [{"kind": "uniform", "value": 1.0}]
      seed           int [0], feeds the random-field builders
      snapshot_stride int [1]
      stages         [{"param": name, "ladder": [values]}] [[]]
      diagnostics    {"h": [..] [[]], "sigma": float [0.05],
                      "zeta": float|null [null], "eta": [..] [[]]}
      output_dir     str ["runs"]
      workers        int [1]

    Unknown keys anywhere are an error.  Every parameter constraint is
    checked here, including each ladder rung, so the error names the
    violated inequality before any solver work starts.
    """
    with open(path) as fh:
        raw = json.load(fh)
    _check_keys(raw, _TOP_KEYS, "config")

    grid_raw = raw.get("grid", {})
    _check_keys(grid_raw, {"dim", "n"}, "grid")
    grid = Grid(int(grid_raw.get("dim", 1)), int(grid_raw.get("n", 64)))

    params_raw = raw.get("params", {})
    if not isinstance(params_raw, dict):
        raise ConstraintError("params is a JSON object", f"got {params_raw!r}")
    merged = params_to_dict(Params())
    merged.update(params_raw)
    params = params_from_dict(merged)
    validate_params(params, grid.d)

    cfg = StageConfig(
        grid=grid,
        params=params,
        dt=_as_float(raw.get("dt", 0.005), "dt"),
        t_end=_as_float(raw.get("t_end", 0.05), "t_end"),
        density_init=raw.get("density_init", {"kind": "uniform", "value": 1.0}),
        velocity_init=raw.get("velocity_init", {"kind": "zero"}),
        weight_init=raw.get("weight_init", {"kind": "uniform", "value": 1.0}),
        seed=int(raw.get("seed", 0)),
        snapshot_stride=int(raw.get("snapshot_stride", 1)),
    )
    cfg.n_steps()  # validates dt/t_end compatibility
    # dry-build the initial data so descriptor typos fail at parse time
    build_density(grid, cfg.density_init, cfg.seed)
    build_velocity(grid, cfg.velocity_init, cfg.seed + 1)
    build_weight(grid, cfg.weight_init)

    stages = _parse_stages(raw.get("stages", []), params, grid.d)

    diag_raw = raw.get("diagnostics", {})
    _check_keys(diag_raw, {"h", "sigma", "zeta", "eta"}, "diagnostics")
    h_values = tuple(_as_float(v, "diagnostics h") for v in diag_raw.get("h", []))
    if any(h <= 0 for h in h_values):
        raise ConstraintError("diagnostics h > 0", f"got {list(h_values)}")
    sigma = _as_float(diag_raw.get("sigma", 0.05), "diagnostics sigma")
    if sigma <= 0:
        raise ConstraintError("diagnostics sigma > 0", f"got {sigma}")
    zeta = diag_raw.get("zeta")
    if zeta is not None:
        zeta = _as_float(zeta, "diagnostics zeta")
        if not 0.0 < zeta < 1.0:
            raise ConstraintError("diagnostics zeta in (0, 1)", f"got {zeta}")
    eta_values = tuple(_as_float(v, "diagnostics eta") for v in diag_raw.get("eta", []))
    if any(e <= 0 for e in eta_values):
        raise ConstraintError("diagnostics eta > 0", f"got {list(eta_values)}")

    workers = int(raw.get("workers", 1))
    if workers < 1:
        raise ConstraintError("workers >= 1", f"got {workers}")

    return SweepPlan(
        stages=stages,
        base=cfg,
        diag=DiagnosticsPlan(h_values, sigma, zeta, eta_values),
        output_dir=str(raw.get("output_dir", "runs")),
        workers=workers,
        seed=cfg.seed,
    )


def plan_to_dict(plan: SweepPlan) -> dict:
    """Normalised JSON rendering; parse_config inverts it."""
    cfg = plan.base
    if cfg.forcing_continuity is not None or cfg.forcing_momentum is not None:
        raise ConstraintError(
            "serialisable plan (no forcing callbacks)",
            "programmatic forcing cannot be written to a config snapshot",
        )
    return {
        "grid": {"dim": cfg.grid.d, "n": cfg.grid.n},
        "params": params_to_dict(cfg.params),
        "dt": cfg.dt,
        "t_end": cfg.t_end,
        "density_init": cfg.density_init,
        "velocity_init": cfg.velocity_init,
        "weight_init": cfg.weight_init,
        "seed": cfg.seed,
        "snapshot_stride": cfg.snapshot_stride,
        "stages": [
            {"param": name, "ladder": list(ladder)} for name, ladder in plan.stages
        ],
        "diagnostics": {
            "h": list(plan.diag.h_values),
            "sigma": plan.diag.sigma,
            "zeta": plan.diag.zeta,
            "eta": list(plan.diag.eta_values),
        },
        "output_dir": plan.output_dir,
        "workers": plan.workers,
    }


# ---------------------------------------------------------------------------
# CSV emission

def _fmt(x: float) -> str:
    # repr of a Python float is the shortest decimal that round-trips
    return repr(float(x))


def emit_csv(records: list[DiagnosticsRecord], path) -> None:
    """Frozen-header ledger CSV, one row per snapshot.

    Header is exactly CSV_HEADER plus one R_h_<value> column per
    configured h (in ladder order).  Floats are written as their
    shortest round-tripping decimal, so parse_csv -> emit_csv is
    byte-identical.
    """
    if not records:
        raise ValueError("no diagnostics records to emit")
    h_cols = list(records[0].r_h)
    header = ",".join(CSV_HEADER + tuple(f"R_h_{_fmt(h)}" for h in h_cols))
    lines = [header]
    for r in records:
        vals = [
            str(r.step),
            _fmt(r.t),
            _fmt(r.mass),
            _fmt(r.kinetic),
            _fmt(r.internal),
            _fmt(r.dissipation_cum),
            _fmt(r.damping_cum),
            _fmt(r.energy_residual),
            _fmt(r.evf_residual),
            _fmt(r.min_w),
            _fmt(r.max_rho_w),
            _fmt(r.rho_logw),
        ]
        vals.extend(_fmt(r.r_h[h]) for h in h_cols)
        lines.append(",".join(vals))
    Path(path).write_text("\n".join(lines) + "\n")


def parse_csv(path) -> list[DiagnosticsRecord]:
    text = Path(path).read_text()
    lines = [ln for ln in text.split("\n") if ln]
    cols = lines[0].split(",")
    if tuple(cols[: len(CSV_HEADER)]) != CSV_HEADER:
        raise ValueError(f"unexpected CSV header: {lines[0]!r}")
    h_values = []
    for extra in cols[len(CSV_HEADER):]:
        if not extra.startswith("R_h_"):
            raise ValueError(f"unexpected CSV column: {extra!r}")
        h_values.append(float(extra[len("R_h_"):]))
    records = []
    for ln in lines[1:]:
        parts = ln.split(",")
        vals = [float(v) for v in parts[1: len(CSV_HEADER)]]
        records.append(
            DiagnosticsRecord(
                step=int(parts[0]),
                t=vals[0],
                mass=vals[1],
                kinetic=vals[2],
                internal=vals[3],
                dissipation_cum=vals[4],
                damping_cum=vals[5],
                energy_residual=vals[6],
                evf_residual=vals[7],
                min_w=vals[8],
                max_rho_w=vals[9],
                rho_logw=vals[10],
                r_h={
                    h: float(v)
                    for h, v in zip(h_values, parts[len(CSV_HEADER):])
                },
                plain_h={},
            )
        )
    return records


# ---------------------------------------------------------------------------
# sweep execution

def version_stamp() -> str:
    """git-describe-style stamp for run provenance."""
    root = Path(__file__).resolve().parents[2]
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=root,
            capture_output=True,
            text=True,
            timeout=10,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"torusgas-{__version__}-g{out.stdout.strip()}"
    except OSError:
        pass
    return f"torusgas-{__version__}-unversioned"


def resolve_workers(plan: SweepPlan) -> int:
    env = os.environ.get(ENV_WORKERS)
    if env is None:
        return plan.workers
    try:
        w = int(env)
    except ValueError:
        raise ConstraintError(
            f"{ENV_WORKERS} is a positive integer", f"got {env!r}"
        ) from None
    if w < 1:
        raise ConstraintError(f"{ENV_WORKERS} is a positive integer", f"got {w}")
    return w


def resolve_output_root(plan: SweepPlan) -> Path:
    """Configured output dir, optionally re-rooted by the environment."""
    env = os.environ.get(ENV_OUTPUT_ROOT)
    if env:
        return Path(env) / plan.output_dir
    return Path(plan.output_dir)


@dataclass
class _PointJob:
    stage_index: int
    param: str
    point_index: int
    value: float | None
    cfg: StageConfig
    diag: DiagnosticsPlan
    run_dir: str
    run_rel: str
    stamp: str
    snapshot: dict


def _point_dirname(pi: int, value: float | None) -> str:
    if value is None:
        return f"point-{pi:02d}"
    return f"point-{pi:02d}-{value:g}"


def _run_point(job: _PointJob) -> dict:
    """Run one ladder rung and persist its run directory.

    Never raises: failures come back quarantined as {"ok": False,
    "reason": ...} so one bad rung cannot take the sweep down.
    """
    run_dir = Path(job.run_dir)
    try:
        run_dir.mkdir(parents=True, exist_ok=True)
        run_dir.joinpath("config.json").write_text(
            json.dumps(job.snapshot, indent=2, sort_keys=True) + "\n"
        )
        run_dir.joinpath("VERSION").write_text(job.stamp + "\n")
        cfg = job.cfg
        state0 = initial_state(cfg)
        write_checkpoint(run_dir / "checkpoint-initial.npz", state0, cfg.params)
        traj = run(cfg, state0)
        write_checkpoint(run_dir / "checkpoint-final.npz", traj.final, cfg.params)
        records = energy_ledger(traj, h_values=job.diag.h_values)
        emit_csv(records, run_dir / "ledger.csv")
        summary = _summarise(traj, records, job)
        run_dir.joinpath("report.json").write_text(
            json.dumps(summary, indent=2, sort_keys=True) + "\n"
        )
        return summary
    except Exception as exc:  # quarantine with reason
        reason = f"{type(exc).__name__}: {exc}"
        try:
            run_dir.joinpath("failure.json").write_text(
                json.dumps({"reason": reason}, indent=2) + "\n"
            )
        except OSError:
            pass
        return {
            "ok": False,
            "stage": job.stage_index,
            "param": job.param,
            "point": job.point_index,
            "value": job.value,
            "reason": reason,
        }


def _summarise(traj: Trajectory, records: list[DiagnosticsRecord], job: _PointJob) -> dict:
    last = records[-1]
    out = {
        "ok": True,
        "stage": job.stage_index,
        "param": job.param,
        "point": job.point_index,
        "value": job.value,
        "run_dir": job.run_rel,
        "steps": traj.steps[-1],
        "final_t": last.t,
        "final_mass": last.mass,
        "final_kinetic": last.kinetic,
        "final_internal": last.internal,
        "max_energy_residual": max(abs(r.energy_residual) for r in records),
        "max_evf_residual": max(r.evf_residual for r in records),
        "min_w": min(r.min_w for r in records),
        "max_rho_w": max(r.max_rho_w for r in records),
        "final_rho_logw": last.rho_logw,
        "r_h": {_fmt(h): v for h, v in last.r_h.items()},
    }
    if job.diag.zeta is not None:
        split = weight_removal_split(
            traj.final.rho, traj.final.w, max(job.diag.h_values, default=0.2),
            job.diag.zeta,
        )
        out["weight_removal"] = {
            "zeta": job.diag.zeta,
            "i1": split.i1,
            "i2": split.i2,
            "bound": split.bound,
        }
    if len(job.diag.eta_values) >= 3:
        try:
            out["regularization_exponent"] = regularization_exponent(
                traj, sorted(job.diag.eta_values)
            )
        except ValueError as exc:
            out["regularization_exponent"] = None
            out["regularization_note"] = str(exc)
    return out


def _stage_report(param: str, ladder, points: list[dict], h_values) -> dict:
    """R_h matrix (point x h), monotone-in-h flags and log-log slopes."""
    hs = sorted(h_values)
    matrix = []
    trend = []
    slopes = []
    for pt in points:
        if not pt["ok"] or not hs:
            matrix.append(None)
            trend.append(None)
            slopes.append(None)
            continue
        row = [pt["r_h"][_fmt(h)] for h in hs]
        matrix.append(row)
        # "down in h": read left to right along the ascending h axis the
        # row falls, i.e. the pair functional relaxes as the probe widens
        trend.append(bool(np.all(np.diff(row) <= 1e-12)))
        if len(hs) >= 2 and all(v > 0 for v in row):
            slope = float(np.polyfit(np.log(hs), np.log(row), 1)[0])
        else:
            slope = None
        slopes.append(slope)
    return {
        "param": param,
        "ladder": list(ladder),
        "h_values": hs,
        "points": points,
        "r_matrix": matrix,
        "trend_down_in_h": trend,
        "decay_slope": slopes,
    }


def run_sweep(plan: SweepPlan) -> dict:
    """Execute the staged ladders and return the cross-ladder report.

    Stages run in nesting order; rungs within a stage are independent
    and run on a process pool when workers > 1.  Results are keyed and
    assembled in canonical (stage, point) order, so the report and all
    per-run files are identical for any worker count.  Per-rung failures
    are quarantined with a reason and mark the report as partial.
    """
    workers = resolve_workers(plan)
    out_root = resolve_output_root(plan)
    out_root.mkdir(parents=True, exist_ok=True)
    stamp = version_stamp()
    plan_dict = plan_to_dict(plan)

    # the smoothed-modulus width of the R_h columns comes from the
    # diagnostics section, carried on the params so checkpoints record it
    base = replace(
        plan.base,
        params=plan.base.params.with_(smoothing_sigma=plan.diag.sigma),
    )
    stages = list(plan.stages) if plan.stages else [("base", (None,))]
    jobs = []
    for si, (param, ladder) in enumerate(stages):
        for pi, value in enumerate(ladder):
            if value is None:
                cfg = base
                snapshot = dict(plan_dict, stages=[], workers=1)
            else:
                cfg = replace(
                    base,
                    params=base.params.with_(**{STAGE_PARAMS[param]: value}),
                )
                snapshot = dict(
                    plan_dict,
                    stages=[{"param": param, "ladder": [value]}],
                    workers=1,
                )
            run_rel = f"stage-{si:02d}-{param}/{_point_dirname(pi, value)}"
            jobs.append(
                _PointJob(
                    stage_index=si,
                    param=param,
                    point_index=pi,
                    value=value,
                    cfg=cfg,
                    diag=plan.diag,
                    run_dir=str(out_root / run_rel),
                    run_rel=run_rel,
                    stamp=stamp,
                    snapshot=snapshot,
                )
            )

    results: dict[tuple[int, int], dict] = {}
    if workers == 1:
        for job in jobs:
            results[(job.stage_index, job.point_index)] = _run_point(job)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {
                pool.submit(_run_point, job): (job.stage_index, job.point_index)
                for job in jobs
            }
            for fut in as_completed(futures):
                results[futures[fut]] = fut.result()

    stage_reports = []
    failures = []
    for si, (param, ladder) in enumerate(stages):
        points = [results[(si, pi)] for pi in range(len(ladder))]
        for pt in points:
            if not pt["ok"]:
                failures.append(
                    {
                        "stage": si,
                        "param": param,
                        "point": pt["point"],
                        "reason": pt["reason"],
                    }
                )
        stage_reports.append(_stage_report(param, ladder, points, plan.diag.h_values))

    report = {
        "version": stamp,
        "seed": plan.seed,
        "output_root": str(out_root),
        "partial": bool(failures),
        "failures": failures,
        "stages": stage_reports,
    }
    out_root.joinpath("report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n"
    )
    return report


# ---------------------------------------------------------------------------
# plots

_PLOT_QUANTITIES = (
    "mass",
    "kinetic",
    "internal",
    "dissipation_cum",
    "damping_cum",
    "energy_residual",
    "evf_residual",
    "min_w",
    "max_rho_w",
    "rho_logw",
)


def emit_plots(report: dict, outdir, root=None) -> list[Path]:
    """Static SVG line charts: each ledger quantity vs t (one line per
    ladder rung) and, when an h ladder is configured, R_h vs h log-log.

    root overrides the sweep root recorded in the report (the report
    command passes the directory it was handed, so reports stay portable).
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    root = Path(root if root is not None else report["output_root"])
    written: list[Path] = []
    for si, stage in enumerate(report["stages"]):
        param = stage["param"]
        series = []
        for pt in stage["points"]:
            if not pt["ok"]:
                continue
            records = parse_csv(root / pt["run_dir"] / "ledger.csv")
            label = param if pt["value"] is None else f"{param}={pt['value']:g}"
            series.append((label, records))
        if not series:
            continue
        for quantity in _PLOT_QUANTITIES:
            fig, ax = plt.subplots(figsize=(5.0, 3.2))
            for label, records in series:
                ts = [r.t for r in records]
                ys = [getattr(r, quantity) for r in records]
                ax.plot(ts, ys, label=label, linewidth=1.2)
            ax.set_xlabel("t")
            ax.set_ylabel(quantity)
            ax.legend(fontsize=7)
            fig.tight_layout()
            path = outdir / f"stage-{si:02d}-{param}-{quantity}.svg"
            fig.savefig(path)
            plt.close(fig)
            written.append(path)
        hs = stage["h_values"]
        if hs:
            fig, ax = plt.subplots(figsize=(5.0, 3.2))
            for (label, _), row in zip(series, stage["r_matrix"]):
                if row is None:
                    continue
                ax.loglog(hs, row, "o-", label=label, linewidth=1.2)
            ax.set_xlabel("h")
            ax.set_ylabel("R_h")
            ax.legend(fontsize=7)
            fig.tight_layout()
            path = outdir / f"stage-{si:02d}-{param}-R_h.svg"
            fig.savefig(path)
            plt.close(fig)
            written.append(path)
    return written
