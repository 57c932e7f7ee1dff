"""Reproduce the Monte Carlo and series values recorded in eitlab/frozen.py."""
from __future__ import annotations

import time

from eitlab.eit_paths import (PathMeasureSpec, gamma_profile_bound, lemma31_constants, tail_fit,
                              theta_d_estimate)
from eitlab.network_flows import resistance_growth_profile
from eitlab.percolation import oriented_cluster, sample_config
from eitlab.spin_tree import SpinParams, lemma_bound_constant


def main():
    for ell, r in [(2, 1), (3, 1), (3, 2), (4, 1)]:
        print(f"C({ell},{r}) = {lemma_bound_constant(SpinParams(ell, r))!r}")
    print("spaced constants, gamma profile:", lemma31_constants(gamma_profile_bound()))
    for kind, d in [("z3", 3), ("uniform", 3), ("uniform", 4)]:
        t = time.time()
        fit = tail_fit(PathMeasureSpec(kind, d, seed=0), 2048, 100_000)
        print(f"{kind} d={d}: theta_hat={fit.theta_hat!r} C_hat={fit.C_hat!r} lo={fit.lo!r} "
              f"hi={fit.hi!r} C_env={fit.C_envelope!r} range={fit.fit_range} "
              f"nonexp={fit.non_exponential} ({time.time() - t:.0f}s)")
    t = time.time()
    th = theta_d_estimate(4, 0, 10_000, 10_000)
    print(f"theta_4: {th} ({time.time() - t:.0f}s)")
    alive = sum(oriented_cluster(sample_config(2, 20, 0.5, True, "bond", ("survival", s))).level.max() == 20
                for s in range(1000))
    print(f"oriented d=2 p=0.5 depth 20 survival: {alive / 1000!r}")
    pr = resistance_growth_profile(3, 0.95, PathMeasureSpec(), [4, 8, 16], 200, seed=0)
    print(f"resistance p=0.95: medians={pr.medians!r} increments={pr.increments!r} flag={pr.flag} "
          f"survivors={pr.survivors}")


if __name__ == "__main__":
    main()
