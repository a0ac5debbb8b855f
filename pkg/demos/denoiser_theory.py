"""Two properties of the NLM denoiser that matter for convergence.

1. Image-dependent, Sinkhorn-balanced NLM is not non-expansive: some pairs of
   inputs are pushed further apart. Freezing the weights restores the bound.
2. Damping the NLM step by sigma^2 C0 gives a bounded denoiser, meaning
   ||D(x) - x||^2 / n <= sigma^2 C0 for every input and every sigma.

    python3 demos/denoiser_theory.py
"""
import numpy as np

from pnpadmm import (NlmParams, PnPConfig, certify_bounded, damped_nlm, denoise_nlm,
                     interp_problem, kappa_search, nlm_denoiser, pnp_admm, test_image)
from pnpadmm.solver import Denoiser

truth = test_image("shapes", 24)
rng = np.random.default_rng(0)
mask = (rng.random(truth.shape) < 0.2).astype(float)
params = NlmParams(1, 5, 0.1)
fixed = Denoiser(lambda s, img: denoise_nlm(params, img))

candidates = []
pnp_admm(interp_problem(mask * truth, mask), fixed,
         PnPConfig(rho0=1.0, rule="constant", tol=1e-12, max_iter=40), mask * truth,
         callback=lambda state, row: candidates.append(state.x + state.u))
res = kappa_search(candidates, params, max_pairs=300)
print(f"balanced NLM: largest kappa {res.kappa:.4f} over {res.evaluated} pairs")
print(f"fixed-weight NLM: largest kappa {res.kappa_fixed_max:.4f}")

inputs = [rng.random((12, 12)) for _ in range(20)]
sigmas = 10.0 ** rng.uniform(-4, 0, 20)
for den, C in ((damped_nlm(1.0), 1.0), (nlm_denoiser(), 1.0)):
    rep = certify_bounded(den, C, inputs, sigmas)
    print(f"{den.name:14s} C={C:g}  worst ratio {rep.max_ratio:.3f}  "
          f"{'bounded' if rep.passed else 'not bounded'}")
