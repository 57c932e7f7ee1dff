"""Frozen constants used by assertion-mode experiments and regression tests.

Each value records the run that produced it; ``scripts/freeze_constants.py``
reproduces all of them.  Monte Carlo values are measurements, not ground truth.
"""
from __future__ import annotations

# Lemma bound constant C(ell, r): certified series, spin_tree.lemma_bound_constant.
LEMMA_C = {
    (2, 1): 26.284836034760396,
    (3, 1): 71.45088517499275,
    (3, 2): 33.96728217074035,
    (4, 1): 152.80833159915477,
}

# z3 measure (ell=3, r=1): tail_fit(PathMeasureSpec("z3", 3, seed=0), L=2048, pairs=10**5),
# sweep factor 4, bootstrap 200, fit range survival in [1e-3, 1e-1] -> ell in [24, 49].
Z3_THETA_HAT = 0.8544927755008197
Z3_THETA_LO = 0.8497507919134084
Z3_THETA_HI = 0.859106899015181
Z3_C_HAT = 3.163993945751209
# max_ell surv(ell) / theta_hat^ell; dominates the whole empirical curve.
Z3_C_ENVELOPE = 26.267022620944132

# Feasibility threshold: percolation experiments run at p = 0.95.
THETA_FEASIBILITY = 0.95

# Uniform d=4, same tail_fit settings (seed=0, L=2048, 10**5 pairs).
UNIFORM4_THETA_HAT = 0.44651335550917437
UNIFORM4_THETA_LO = 0.43189595968597416
UNIFORM4_THETA_HI = 0.4583058347949081

# theta_d_estimate(4, seed=0, walks=10**4, horizon=10**4), Wilson 95%.
THETA_4 = 0.4399
THETA_4_LO = 0.4301961507644475
THETA_4_HI = 0.4496500058397078

# lemma31_constants(gamma_profile_bound()) for (ell, r) = (3, 1).
GAMMA_SPACED_CONSTANTS = (5959, 0.99989830984224, 0.9999999829341621, 5959.6060332777115)

# Oriented bond percolation d=2, p=0.5, depth 20: fraction of 1000 seeds
# ("survival", s) whose origin cluster reaches depth 20.
SURVIVAL_D2_P05_DEPTH20 = 0.055

# resistance_growth_profile(3, 0.95, radii=[4, 8, 16], replicas=200, seed=0):
# median R(origin -> level r) over clusters reaching level 16.
RESISTANCE_P095_RADII = (4, 8, 16)
RESISTANCE_P095_MEDIANS = (0.5573736881271949, 0.6391236695907262, 0.6913873287572866)
RESISTANCE_P095_FLAG = "transient-like"
REGRESSION_RTOL = 0.10
