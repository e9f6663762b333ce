#!/usr/bin/env python3
"""Monte Carlo convergence of the drift estimator against the closed form.

For a narrow Gaussian target the drift has an exact expression, so the RMS
error of the batch estimator can be traced as the batch size doubles.  The
fitted log-log slope should sit near -1/2.
"""

import argparse

import numpy as np

import sf_sampler as sf


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--log2-m", type=int, nargs=2, default=[6, 14],
                    metavar=("LO", "HI"))
    ap.add_argument("--batches", type=int, default=50)
    ap.add_argument("--variance", type=float, default=0.25)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    params = sf.GaussianParams(mean=[0.0], variance=args.variance)
    target = sf.make_gaussian_target(params, 1.0)
    points = [(0.1, 0.5), (0.4, -1.2), (0.7, 1.8)]

    series = []
    for logm in range(args.log2_m[0], args.log2_m[1] + 1):
        m = 2**logm
        cfg = sf.DriftConfig(mode="gradient_ratio", mc_batch=m)
        sq = []
        for t, y in points:
            exact = float(sf.drift_exact_gaussian(params, 1.0, t, np.array([y]))[0])
            for r in range(args.batches):
                ss = np.random.SeedSequence([args.seed, logm, int(1e3 * (y + 10)), r])
                noise = np.random.default_rng(ss).standard_normal((m, 1))
                est = sf.drift_mc(target, cfg, t, np.array([y]), noise).value[0]
                sq.append((est - exact) ** 2)
        rms = float(np.sqrt(np.mean(sq)))
        series.append((m, rms))
        print(f"M=2^{logm:<3d} rms={rms:.6f}")

    slope, intercept, ci = sf.fit_convergence(series)
    print(f"slope={slope:.4f}  (95% CI {ci[0]:.3f}..{ci[1]:.3f}), intercept={intercept:.3f}")


if __name__ == "__main__":
    main()
