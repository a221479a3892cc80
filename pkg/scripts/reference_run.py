#!/usr/bin/env python3
"""Run the reference bump and print the energy books.

Defaults reproduce the n = 128 production run used by the acceptance
gate (about five seconds).  Pass --csv to keep the per-snapshot ledger.
"""

import argparse
import sys
from pathlib import Path

from torusgas.constitutive import Params
from torusgas.diagnostics import energy_ledger
from torusgas.grid import Grid
from torusgas.harness import emit_csv
from torusgas.solver import StageConfig, run


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=128)
    ap.add_argument("--dt", type=float, default=1e-3)
    ap.add_argument("--t-end", type=float, default=1.0)
    ap.add_argument("--damping-rate", type=float, default=1.0)
    ap.add_argument(
        "--h", type=float, nargs="*", default=[0.3, 0.5],
        help="kernel widths for the compactness columns",
    )
    ap.add_argument("--csv", type=Path, default=None, help="write the ledger here")
    args = ap.parse_args(argv)

    cfg = StageConfig(
        grid=Grid(1, args.n),
        params=Params(damping_rate=args.damping_rate),
        dt=args.dt,
        t_end=args.t_end,
        density_init={"kind": "cosine", "base": 1.0, "amp": 0.3},
        velocity_init={"kind": "sine", "amp": 0.5},
    )
    tr = run(cfg)
    rows = energy_ledger(tr, h_values=tuple(args.h))
    first, last = rows[0], rows[-1]

    print(f"steps {len(tr.infos)}  snapshots {len(rows)}")
    print(f"mass {first.mass:.9f} -> {last.mass:.9f}")
    print(
        f"energy {first.kinetic + first.internal:.6f} -> "
        f"{last.kinetic + last.internal:.6f}"
    )
    print(f"worst |energy residual| {max(abs(r.energy_residual) for r in rows):.3e}")
    print(
        f"min w {min(r.min_w for r in rows):.4f}  "
        f"max rho w {max(r.max_rho_w for r in rows):.4f}"
    )
    for h in args.h:
        print(f"R_h h={h:g}: {first.r_h[h]:.4f} -> {last.r_h[h]:.4f}")

    if args.csv is not None:
        emit_csv(rows, args.csv)
        print(f"ledger -> {args.csv}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
