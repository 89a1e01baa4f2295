"""Compare the compiled kernels with the numpy fallback.

Times each hot kernel on simulation-sized inputs and a full CRTB fit, and
checks that both backends agree.  Run with ``python benchmarks/bench_kernels.py``.
"""

from __future__ import annotations

import argparse
import timeit
import warnings

import numpy as np

from crtb import kernels
from crtb.estimator import fit_crtb
from crtb.simlab import ContaminationSpec, DgpParams, contaminate_cellwise, generate_dgp


def workload(p_noise: int, seed: int):
    rng = np.random.default_rng(seed)
    X, Y, *_ = generate_dgp(DgpParams(p_noise=p_noise), rng)
    Xc, Yc, _, _ = contaminate_cellwise(X, Y, ContaminationSpec(cell_pct=0.2), 20, rng)
    return Xc, Yc


def kernel_cases(Xc, Yc):
    n, p = Xc.shape
    rng = np.random.default_rng(0)
    Xs = (Xc - np.median(Xc, axis=0)) / Xc.std(axis=0)
    Ys = (Yc - np.median(Yc, axis=0)) / Yc.std(axis=0)
    mask = (rng.random(Xs.shape) > 0.1).astype(np.uint8)
    W = np.linalg.qr(rng.standard_normal((p, 3)))[0]
    d = np.abs(rng.standard_normal(n)) * 3
    return {
        "masked_median_mad": lambda b: b.masked_median_mad(Xs, mask),
        "prefilter_mask": lambda b: b.prefilter_mask(Xs, 2.5758),
        "masked_row_rms": lambda b: b.masked_row_rms(Xs, mask),
        "impute_cells": lambda b: b.impute_cells(Xs, mask, W, W),
        "psi_weights": lambda b: b.psi_weights(d, 1.2, 2.0, 3.0, 0),
        "weighted_median": lambda b: b.weighted_median(d, np.ones(n)),
        "twoblock_core": lambda b: b.twoblock_core(Xs, Ys, 3, 3, 0.5, 0.0),
    }


def best_of(fn, repeat: int, number: int) -> float:
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--p-noise", type=int, default=80, help="noise variables (80 gives p = 100)")
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=20)
    args = ap.parse_args(argv)
    if "compiled" not in kernels.available():
        raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation`")
    warnings.simplefilter("ignore")
    Xc, Yc = workload(args.p_noise, 1)
    py, cc = kernels.get("python"), kernels.get("compiled")
    print(f"n={Xc.shape[0]} p={Xc.shape[1]} q={Yc.shape[1]}")
    print(f"{'kernel':<20}{'python us':>12}{'compiled us':>14}{'speedup':>10}")
    for name, fn in kernel_cases(Xc, Yc).items():
        a, b = fn(py), fn(cc)
        a, b = (a[0], b[0]) if isinstance(a, tuple) else (a, b)
        assert np.allclose(a, b, rtol=1e-10, atol=1e-12), name
        tp = best_of(lambda: fn(py), args.repeat, args.number)
        tc = best_of(lambda: fn(cc), args.repeat, args.number)
        print(f"{name:<20}{tp * 1e6:>12.1f}{tc * 1e6:>14.1f}{tp / tc:>10.1f}")
    times = {}
    for name in ("python", "compiled"):
        kernels.use(name)
        times[name] = best_of(lambda: fit_crtb(Xc, Yc), args.repeat, max(1, args.number // 4))
    print(f"{'fit_crtb':<20}{times['python'] * 1e6:>12.1f}{times['compiled'] * 1e6:>14.1f}"
          f"{times['python'] / times['compiled']:>10.1f}")


if __name__ == "__main__":
    main()
