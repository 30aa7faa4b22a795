"""Sweep disk radius and TV-L1 weight and print which disks survive.

A disk of radius r is expected to vanish from the TV-L1 solution when
lambda < 2 / r. The table marks each (r, lambda) cell with the residual centre
contrast; cells close to the critical value are flagged with '*'.

    python scripts/scale_space_sweep.py --radii 5 10 20 40 --lambdas 0.04 0.1 0.3 0.9
"""

from __future__ import annotations

import argparse
from datetime import datetime, timezone

import numpy as np

from halpha.imgio import FrameBuffer
from halpha.varsolve import Tvl1Problem, tvl1_denoise


def disk_image(r: float) -> np.ndarray:
    size = max(48, int(4 * r))
    yy, xx = np.indices((size, size), dtype=np.float64)
    c = (size - 1) / 2
    return np.where((xx - c) ** 2 + (yy - c) ** 2 <= r * r, 1.0, 0.0)


def residual_contrast(r: float, lam: float, max_iters: int) -> float:
    img = disk_image(r)
    frame = FrameBuffer(img, datetime(2000, 1, 1, tzinfo=timezone.utc))
    u = tvl1_denoise(Tvl1Problem(frame, lam, max_iters=max_iters, tol=1e-7)).data
    c = (img.shape[0] - 1) // 2
    return float(u[c, c])


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--radii", type=float, nargs="+", default=[5, 10, 20, 40])
    ap.add_argument("--lambdas", type=float, nargs="+", default=[0.04, 0.1, 0.3, 0.9])
    ap.add_argument("--max-iters", type=int, default=5000)
    args = ap.parse_args(argv)

    print("r \\ lambda " + "".join(f"{lam:>10g}" for lam in args.lambdas))
    for r in args.radii:
        cells = []
        for lam in args.lambdas:
            v = round(residual_contrast(r, lam, args.max_iters), 3) + 0.0  # no "-0.000"
            near = abs(lam - 2 / r) < 0.25 * (2 / r)
            cells.append(f"{v:9.3f}{'*' if near else ' '}")
        print(f"{r:>10g} " + "".join(cells))
    print("\nvalues are the residual centre contrast (input contrast 1); '*' = within 25% of 2/r")


if __name__ == "__main__":
    main()
