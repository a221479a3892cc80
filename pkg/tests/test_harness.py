"""Sweep plumbing: config parsing, CSV contract, staged execution,
determinism across worker counts, run-directory persistence."""

import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from torusgas.constitutive import ConstraintError
from torusgas.diagnostics import DiagnosticsRecord
from torusgas.grid import GridError
from torusgas.harness import (
    CSV_HEADER,
    DiagnosticsPlan,
    SweepPlan,
    emit_csv,
    emit_plots,
    parse_config,
    parse_csv,
    plan_to_dict,
    resolve_workers,
    run_sweep,
    version_stamp,
)
from torusgas.solver import NumericalError, read_checkpoint
import torusgas.harness as harness


def write_config(tmp_path: Path, name: str = "cfg.json", **overrides) -> Path:
    cfg = {
        "grid": {"dim": 1, "n": 32},
        "dt": 0.01,
        "t_end": 0.03,
        "density_init": {
            "kind": "cosine", "base": 1.0, "amp": 0.3, "mode": 1, "axis": 0,
        },
        "velocity_init": {
            "kind": "sine", "amp": 0.5, "mode": 1, "axis": 0, "component": 0,
        },
        "diagnostics": {"h": [0.4, 0.6], "sigma": 0.05},
        "output_dir": str(tmp_path / "out"),
        "workers": 1,
    }
    cfg.update(overrides)
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


class TestParseConfig:
    def test_minimal_config_echoes_defaults(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text("{}")
        plan = parse_config(path)
        p = plan.base.params
        assert p.gamma == 2.0
        assert p.damping_exponent == 4.0
        assert p.stiff_exponent == 4.5
        assert plan.stages == ()
        assert plan.workers == 1

    def test_gamma_window_violation_names_inequality(self, tmp_path):
        path = write_config(tmp_path, params={"stiff_exponent": 3.9})
        with pytest.raises(ConstraintError, match="m \\+ 1 > Gamma >= m"):
            parse_config(path)

    def test_zero_viscosity_names_inequality(self, tmp_path):
        path = write_config(tmp_path, params={"mu": 0.0})
        with pytest.raises(ConstraintError, match="mu > 0"):
            parse_config(path)

    def test_unknown_top_level_key(self, tmp_path):
        path = write_config(tmp_path, extra_knob=3)
        with pytest.raises(ConstraintError, match="extra_knob"):
            parse_config(path)

    def test_unknown_params_key(self, tmp_path):
        path = write_config(tmp_path, params={"viscosity": 1.0})
        with pytest.raises(ConstraintError, match="viscosity"):
            parse_config(path)

    def test_unknown_diagnostics_key(self, tmp_path):
        path = write_config(tmp_path, diagnostics={"h": [0.4], "width": 2})
        with pytest.raises(ConstraintError, match="width"):
            parse_config(path)

    def test_bad_grid_size(self, tmp_path):
        path = write_config(tmp_path, grid={"dim": 1, "n": 24})
        with pytest.raises(GridError):
            parse_config(path)

    def test_bad_stage_name(self, tmp_path):
        path = write_config(tmp_path, stages=[{"param": "nu", "ladder": [0.1]}])
        with pytest.raises(ConstraintError, match="eps, M, k, delta, lambda"):
            parse_config(path)

    def test_stage_order_enforced(self, tmp_path):
        # k before eps inverts the mandated nesting
        path = write_config(
            tmp_path,
            stages=[
                {"param": "k", "ladder": [1.0, 0.5]},
                {"param": "eps", "ladder": [0.2, 0.1]},
            ],
        )
        with pytest.raises(ConstraintError, match="eps -> M -> k -> delta -> lambda"):
            parse_config(path)

    def test_repeated_stage_rejected(self, tmp_path):
        path = write_config(
            tmp_path,
            stages=[
                {"param": "eps", "ladder": [0.2]},
                {"param": "eps", "ladder": [0.1]},
            ],
        )
        with pytest.raises(ConstraintError, match="out of order"):
            parse_config(path)

    def test_eps_ladder_must_decrease(self, tmp_path):
        path = write_config(tmp_path, stages=[{"param": "eps", "ladder": [0.1, 0.2]}])
        with pytest.raises(ConstraintError, match="strictly decreasing"):
            parse_config(path)

    def test_cap_ladder_must_increase(self, tmp_path):
        path = write_config(tmp_path, stages=[{"param": "M", "ladder": [20.0, 10.0]}])
        with pytest.raises(ConstraintError, match="strictly increasing"):
            parse_config(path)

    def test_cap_ladder_accepts_inf_string(self, tmp_path):
        path = write_config(
            tmp_path, stages=[{"param": "M", "ladder": [10.0, "inf"]}]
        )
        plan = parse_config(path)
        assert plan.stages[0][1] == (10.0, float("inf"))

    def test_ladder_rung_hits_params_constraint(self, tmp_path):
        # a negative damping rate is an illegal parameter set
        path = write_config(tmp_path, stages=[{"param": "k", "ladder": [1.0, -1.0]}])
        with pytest.raises(ConstraintError):
            parse_config(path)

    def test_negative_h_rejected(self, tmp_path):
        path = write_config(tmp_path, diagnostics={"h": [-0.4]})
        with pytest.raises(ConstraintError, match="h > 0"):
            parse_config(path)

    def test_zeta_out_of_range(self, tmp_path):
        path = write_config(tmp_path, diagnostics={"zeta": 1.5})
        with pytest.raises(ConstraintError, match="zeta"):
            parse_config(path)

    def test_bad_descriptor_fails_at_parse(self, tmp_path):
        path = write_config(
            tmp_path, density_init={"kind": "cosine", "amplitude": 0.3}
        )
        with pytest.raises(ConstraintError):
            parse_config(path)

    def test_dt_t_end_mismatch(self, tmp_path):
        path = write_config(tmp_path, dt=0.01, t_end=0.025)
        with pytest.raises(ConstraintError, match="integer multiple"):
            parse_config(path)

    def test_plan_roundtrips_through_dict(self, tmp_path):
        path = write_config(
            tmp_path, stages=[{"param": "eps", "ladder": [0.2, 0.1]}]
        )
        plan = parse_config(path)
        again = tmp_path / "again.json"
        again.write_text(json.dumps(plan_to_dict(plan)))
        plan2 = parse_config(again)
        assert plan2.stages == plan.stages
        assert plan2.base.params == plan.base.params
        assert plan2.diag == plan.diag


class TestCsvContract:
    HEADER = (
        "step,t,mass,kinetic,internal,dissipation_cum,damping_cum,"
        "energy_residual,evf_residual,min_w,max_rho_w,rho_logw"
    )

    def make_records(self, with_h=True):
        r_h = {0.4: 1.25, 0.6: 0.75} if with_h else {}
        recs = []
        for i in range(3):
            recs.append(
                DiagnosticsRecord(
                    step=i,
                    t=0.01 * i,
                    mass=6.2831853071,
                    kinetic=0.5 / (i + 1),
                    internal=1.0,
                    dissipation_cum=0.01 * i,
                    damping_cum=0.02 * i,
                    energy_residual=1e-4 * i,
                    evf_residual=0.0,
                    min_w=1.0,
                    max_rho_w=1.3,
                    rho_logw=0.0,
                    r_h=dict(r_h),
                    plain_h={},
                )
            )
        return recs

    def test_golden_header(self, tmp_path):
        # frozen contract: this exact string, in this exact order
        path = tmp_path / "ledger.csv"
        emit_csv(self.make_records(with_h=False), path)
        first = path.read_text().split("\n")[0]
        assert first == self.HEADER

    def test_header_matches_module_constant(self):
        assert ",".join(CSV_HEADER) == self.HEADER

    def test_h_columns_appended_in_ladder_order(self, tmp_path):
        path = tmp_path / "ledger.csv"
        emit_csv(self.make_records(), path)
        first = path.read_text().split("\n")[0]
        assert first == self.HEADER + ",R_h_0.4,R_h_0.6"

    def test_round_trip_byte_identical(self, tmp_path):
        p1 = tmp_path / "a.csv"
        p2 = tmp_path / "b.csv"
        emit_csv(self.make_records(), p1)
        emit_csv(parse_csv(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_empty_records_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="no diagnostics records"):
            emit_csv([], tmp_path / "x.csv")

    def test_parse_rejects_foreign_header(self, tmp_path):
        path = tmp_path / "x.csv"
        path.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(ValueError, match="header"):
            parse_csv(path)


@pytest.fixture(scope="module")
def sweep_out(tmp_path_factory):
    """One small two-stage sweep, reused by the persistence tests."""
    tmp_path = tmp_path_factory.mktemp("sweep")
    path = write_config(
        tmp_path,
        stages=[
            {"param": "eps", "ladder": [0.2, 0.1, 0.05]},
            {"param": "k", "ladder": [1.0, 0.5]},
        ],
    )
    plan = parse_config(path)
    report = run_sweep(plan)
    return plan, report, tmp_path / "out"


class TestRunSweep:
    def test_all_points_succeed(self, sweep_out):
        _, report, _ = sweep_out
        assert not report["partial"]
        assert report["failures"] == []

    def test_run_dir_contents(self, sweep_out):
        _, _, out = sweep_out
        d = out / "stage-00-eps" / "point-01-0.1"
        for name in (
            "config.json",
            "VERSION",
            "checkpoint-initial.npz",
            "checkpoint-final.npz",
            "ledger.csv",
            "report.json",
        ):
            assert (d / name).exists(), name
        assert (out / "report.json").exists()

    def test_version_stamp_recorded(self, sweep_out):
        _, report, out = sweep_out
        stamp = (out / "stage-00-eps" / "point-00-0.2" / "VERSION").read_text().strip()
        assert stamp == report["version"]
        assert stamp.startswith("torusgas-")

    def test_stage_override_reaches_checkpoint(self, sweep_out):
        _, _, out = sweep_out
        _, params = read_checkpoint(
            out / "stage-00-eps" / "point-02-0.05" / "checkpoint-final.npz"
        )
        assert params.u_mollify == 0.05
        _, params = read_checkpoint(
            out / "stage-01-k" / "point-01-0.5" / "checkpoint-final.npz"
        )
        assert params.damping_rate == 0.5

    def test_r_matrix_shape_and_trend(self, sweep_out):
        _, report, _ = sweep_out
        stage0 = report["stages"][0]
        assert len(stage0["r_matrix"]) == 3
        assert all(len(row) == 2 for row in stage0["r_matrix"])
        # smooth data: the pair functional relaxes as the probe widens
        assert all(stage0["trend_down_in_h"])

    def test_one_point_ladder_equals_single_run(self, tmp_path):
        path_a = write_config(
            tmp_path,
            stages=[{"param": "eps", "ladder": [0.08]}],
            output_dir=str(tmp_path / "a"),
        )
        plan_a = parse_config(path_a)
        report_a = run_sweep(plan_a)

        path_b = write_config(
            tmp_path,
            params={"u_mollify": 0.08},
            output_dir=str(tmp_path / "b"),
        )
        plan_b = parse_config(path_b)
        report_b = run_sweep(plan_b)

        csv_a = (tmp_path / "a" / "stage-00-eps" / "point-00-0.08" / "ledger.csv").read_bytes()
        csv_b = (tmp_path / "b" / "stage-00-base" / "point-00" / "ledger.csv").read_bytes()
        assert csv_a == csv_b
        pa = report_a["stages"][0]["points"][0]
        pb = report_b["stages"][0]["points"][0]
        for key in ("final_mass", "final_kinetic", "final_internal", "r_h"):
            assert pa[key] == pb[key]

    def test_worker_count_does_not_change_results(self, tmp_path):
        ladders = [
            {"param": "eps", "ladder": [0.2, 0.1]},
            {"param": "k", "ladder": [1.0, 0.5]},
        ]
        path_1 = write_config(
            tmp_path, "w1.json", stages=ladders,
            output_dir=str(tmp_path / "w1"), workers=1,
        )
        path_8 = write_config(
            tmp_path, "w8.json", stages=ladders,
            output_dir=str(tmp_path / "w8"), workers=8,
        )
        run_sweep(parse_config(path_1))
        run_sweep(parse_config(path_8))
        csvs_1 = sorted((tmp_path / "w1").rglob("ledger.csv"))
        csvs_8 = sorted((tmp_path / "w8").rglob("ledger.csv"))
        assert len(csvs_1) == len(csvs_8) == 4
        for a, b in zip(csvs_1, csvs_8):
            assert a.relative_to(tmp_path / "w1") == b.relative_to(tmp_path / "w8")
            assert a.read_bytes() == b.read_bytes()

    def test_failed_rung_is_quarantined(self, tmp_path, monkeypatch):
        real_run = harness.run

        def flaky_run(cfg, state=None):
            if cfg.params.damping_rate == 0.5:
                raise NumericalError("momentum fixed point diverged (synthetic)")
            return real_run(cfg, state)

        monkeypatch.setattr(harness, "run", flaky_run)
        path = write_config(
            tmp_path, stages=[{"param": "k", "ladder": [1.0, 0.5]}]
        )
        report = run_sweep(parse_config(path))
        assert report["partial"]
        (failure,) = report["failures"]
        assert failure["point"] == 1
        assert "momentum fixed point diverged" in failure["reason"]
        # the healthy rung still produced its files
        assert (tmp_path / "out" / "stage-00-k" / "point-00-1" / "ledger.csv").exists()
        assert (tmp_path / "out" / "stage-00-k" / "point-01-0.5" / "failure.json").exists()

    def test_rerun_from_snapshot_reproduces_csv(self, sweep_out, tmp_path, monkeypatch):
        _, _, out = sweep_out
        src = out / "stage-01-k" / "point-01-0.5"
        snap = json.loads((src / "config.json").read_text())
        snap["output_dir"] = str(tmp_path / "rerun")
        cfg_path = tmp_path / "snap.json"
        cfg_path.write_text(json.dumps(snap))
        run_sweep(parse_config(cfg_path))
        redone = tmp_path / "rerun" / "stage-00-k" / "point-00-0.5" / "ledger.csv"
        assert redone.read_bytes() == (src / "ledger.csv").read_bytes()

    def test_env_workers_override(self, tmp_path, monkeypatch):
        plan = parse_config(write_config(tmp_path, workers=2))
        monkeypatch.setenv("TORUSGAS_WORKERS", "5")
        assert resolve_workers(plan) == 5
        monkeypatch.setenv("TORUSGAS_WORKERS", "zero")
        with pytest.raises(ConstraintError, match="TORUSGAS_WORKERS"):
            resolve_workers(plan)

    def test_env_output_root_override(self, tmp_path, monkeypatch):
        path = write_config(tmp_path, output_dir="rel-out")
        plan = parse_config(path)
        monkeypatch.setenv("TORUSGAS_OUTPUT_ROOT", str(tmp_path / "rooted"))
        report = run_sweep(plan)
        assert Path(report["output_root"]) == tmp_path / "rooted" / "rel-out"
        assert (tmp_path / "rooted" / "rel-out" / "report.json").exists()

    def test_forcing_plans_refuse_snapshot(self, tmp_path):
        plan = parse_config(write_config(tmp_path))
        cfg = replace(plan.base, forcing_momentum=lambda t: None)
        bad = SweepPlan(
            stages=(),
            base=cfg,
            diag=DiagnosticsPlan(),
            output_dir=str(tmp_path / "x"),
            workers=1,
            seed=0,
        )
        with pytest.raises(ConstraintError, match="forcing"):
            run_sweep(bad)


class TestPlots:
    def test_svg_files_written(self, sweep_out):
        _, report, out = sweep_out
        written = emit_plots(report, out / "plots", root=out)
        assert written
        for path in written:
            head = path.read_text()[:200]
            assert "svg" in head.lower()
        names = {p.name for p in written}
        assert "stage-00-eps-mass.svg" in names
        assert "stage-00-eps-R_h.svg" in names


def test_version_stamp_shape():
    stamp = version_stamp()
    assert stamp.startswith("torusgas-0.1.0")
