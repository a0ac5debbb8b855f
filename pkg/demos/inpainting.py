"""Fill in an image from 20% of its pixels.

The forward operator is a binary mask, so the x-update is a per-pixel blend of
the observation and the current estimate.

    python3 demos/inpainting.py
"""
import numpy as np

from pnpadmm import PnPConfig, damped_nlm, interp_problem, pnp_admm, psnr, test_image

truth = test_image("blobs", 32)
rng = np.random.default_rng(1)
mask = (rng.random(truth.shape) < 0.2).astype(float)
y = mask * truth
init = np.where(mask > 0, y, y.sum() / mask.sum())
print(f"mean-filled input  psnr={psnr(init, truth):6.2f} dB")

out, trace = pnp_admm(interp_problem(y, mask), damped_nlm(), PnPConfig(), init, truth=truth)
print(f"restored           psnr={psnr(out, truth):6.2f} dB  iters={len(trace)}")
