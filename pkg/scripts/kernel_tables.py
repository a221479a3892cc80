#!/usr/bin/env python3
"""Print the kernel calibration tables.

Log-compensated L1 mass across three decades of width, the two-width
convolution constant, and the compensated first moment; the numbers the
first acceptance gate pins down.
"""

import argparse
import math
import sys

from torusgas.grid import Grid
from torusgas.kernels import (
    KernelSpec,
    conv_lemma_constant,
    first_moment,
    l1_norm_ratio,
)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--d", type=int, default=1, choices=(1, 2))
    args = ap.parse_args(argv)

    print(f"L1 mass / |ln h|  (d={args.d}):")
    for h in (1e-2, 1e-3, 1e-4):
        print(f"  h={h:g}: {l1_norm_ratio(h, d=args.d):.4f}")

    widths = (0.05, 0.02, 0.01)
    g = Grid(1, 4096)
    print(f"convolution constant over {widths} (1-d):")
    for h1 in widths:
        row = "  ".join(f"{conv_lemma_constant(h1, h2, g):.4f}" for h2 in widths)
        print(f"  h1={h1:g}: {row}")

    print("first moment x |ln h| (1-d):")
    for h, n in ((1e-2, 2048), (1e-3, 16384), (1e-4, 131072)):
        fm = first_moment(KernelSpec("inverse_distance", h), Grid(1, n))
        print(f"  h={h:g}: {fm * abs(math.log(h)):.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
