"""Sample from the model by integrating the reverse SDE with the exact score.

Two choices matter in practice and both are shown: the prior at the horizon
(a Gaussian is only exact when the forward process has washed out the modes)
and the step count of the Euler-Maruyama integrator.
"""

import numpy as np

from molrmog import make_schedule
from molrmog.model import build_model, forward_noise, sample_data
from molrmog.sampler import SamplerConfig, model_score_fn, reverse_sample, sample_quality

model = build_model({
    "D": 4,
    "subspaces": [{
        "d": 2,
        "A_seed": 7,
        "components": [
            {"pi": 0.5, "mu": [2.0, 0.0], "U": [[0.6], [0.1]]},
            {"pi": 0.5, "mu": [-2.0, 0.5], "U": [[0.2], [0.5]]},
        ],
    }],
})
n = 20000

# option 1: variance-preserving schedule with a large rate. At the horizon
# the data scale s(t_max) is tiny, so a Gaussian prior is essentially exact.
vp = make_schedule("vp", 8.0, 0.01, 1.0)
rng = np.random.default_rng(0)
init = vp.gamma(vp.t_max) * rng.standard_normal((n, model.D))
y = reverse_sample(model_score_fn(model, vp), vp, SamplerConfig(steps=400, n=n, seed=1),
                   init=init)
rep = sample_quality(y, model, vp, vp.t_min)
print("VP schedule, Gaussian prior:")
print("  max weight error:", rep.max_weight_err)
print("  max mean error:  ", rep.max_mean_err)

# option 2: constant-drift schedule. The terminal marginal stays bimodal, so
# we start from the exact forward marginal instead of a Gaussian.
cd = make_schedule("constant_drift", 1.0, 0.01, 1.0)
rng = np.random.default_rng(2)
data = sample_data(model, n, rng)
init = forward_noise(data.x, cd, cd.t_max, rng)
y = reverse_sample(model_score_fn(model, cd), cd, SamplerConfig(steps=400, n=n, seed=3),
                   init=init)
rep = sample_quality(y, model, cd, cd.t_min)
print("\nconstant-drift schedule, exact terminal prior:")
print("  max weight error:", rep.max_weight_err)
print("  max mean error:  ", rep.max_mean_err)

print("\nper-component diagnostics (last run):")
for r in rep.rows:
    print(f"  (k={r.k}, l={r.l})  weight {r.weight_emp:.3f} vs {r.weight_true:.3f}"
          f"  mean err {r.mean_err:.4f}  cov err {r.cov_err:.4f}")
