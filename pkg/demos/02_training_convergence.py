"""Verify the linear-convergence story end to end.

The empirical score-matching loss is pointwise zero at the true parameters,
so gradient descent started inside the strong-convexity basin contracts to
the truth with no noise floor. We estimate the local curvature constants by
finite differences, take the theoretical step, and compare every observed
per-iteration contraction ratio against the predicted bound.
"""

import numpy as np

from molrmog import make_schedule
from molrmog.calculus import alpha_symmetric, hessian_empirical, sample_noised
from molrmog.optimizer import GDConfig, contraction_check, gd_train, init_near
from molrmog.score import SymmetricParams

sched = make_schedule("constant_drift", 1.0, 0.01, 1.0)
t = 1.0
truth = SymmetricParams(mu=[4.0, 0.0], U=[[1.0], [0.0]])

# curvature at the truth: closed form vs Monte Carlo
alpha = alpha_symmetric(truth.mu, truth.U, sched, t)
hess = hessian_empirical(truth, None, sched, t, 50000, 0)
print("closed-form curvature floor alpha =", alpha)
print("Monte Carlo lambda_min(H)        =", hess.lambda_min)
print("mean-block lambda_min            =", hess.lambda_min_mumu)
print("(loss Hessian is 2H; factor carried explicitly, factor2 =", hess.factor2, ")")

# train from a small random offset
X = sample_noised(truth, None, sched, t, 30000, 1)
theta0 = init_near(truth, 0.2, 2)
trace = gd_train(theta0, truth, None, sched, t, X, GDConfig(m_max=500, tol=1e-13))

print("\nauto step eta =", trace.eta, " kappa =", trace.kappa,
      " predicted rho =", trace.rho_bound)
print("converged:", trace.converged, "after", trace.rows[-1].m, "iterations")
print("distance to truth:", trace.rows[0].dist, "->", trace.final_dist)

check = contraction_check(trace, trace.rho_bound, slack=0.05, dist_floor=1e-12)
print("fraction of iterations contracting at rho + 0.05:", check.fraction)

print("\nfirst ten per-iteration distance ratios:")
for row in trace.rows[1:11]:
    print(f"  m={row.m:3d}  dist={row.dist:.3e}  ratio={row.ratio:.4f}")
