# Mean, covariance and variance of -u'' = f(x, omega) for a random source
# f = E_f + sum_r xi_r g_r, by deterministic tensor solves and by Monte Carlo.

import numpy as np

from sparsehom.stochastic import (
    compare_with_mc, rank2_model, second_moment, solve_moments, variance_field,
)

model = rank2_model()  # E_f = 1, modes g = (1, sin pi x)
mean, cov = solve_moments(model, 1.0, 6, mode="sparse")
print("covariance unknowns:", cov.dof_map.total, " CG iterations:", cov.iterations)

x = np.array([0.25, 0.5, 0.75])
print("E_u     :", mean(x))
print("E[u u'] :", second_moment(mean, cov, x[:, None], x[None, :]))
print("Var u   :", variance_field(mean, cov, x))
print("expected Var u(1/2):", 1 / 64 + 1 / np.pi**4)

# Monte Carlo check on a 5 x 5 grid (seeded, reproducible)
report = compare_with_mc(model, 1.0, 6, samples=4096, seed=1234)
print("pass:", report["pass"], " max |diff|:", report["max_abs_diff"])
worst = max(report["grid"], key=lambda r: r["diff_over_se"])
print("worst point:", worst["x"], worst["xp"], "diff/se =", round(worst["diff_over_se"], 2))
