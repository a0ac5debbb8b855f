"""Plug-and-Play ADMM with continuation for image restoration."""

from .errors import (ConfigError, ConvergenceError, DimensionError, ImageFormatError,
                     NumericalError)
from .imagecore import (add_gaussian_noise, bicubic_kernel, circ_conv, circ_corr,
                        downsample, gaussian_kernel, parse_kernel, psnr, read_image,
                        test_image, upsample, write_image)
from .solver import (Denoiser, ForwardProblem, PnPConfig, PnPState, SolverTrace, TraceRow,
                     analyze_trace, check_stop, pnp_admm, relative_residue, update_rho)
from .denoisers import (NlmParams, certify_bounded, damped_nlm, damped_wrap, denoise_nlm,
                        expansiveness_kappa, identity_denoiser, kappa_search, median_denoiser,
                        nlm_denoiser, parse_denoiser, sinkhorn_knopp)
from .forward import (QisLookup, QisObservation, SuperResModel, deblur_problem, deblur_prox,
                      interp_problem, interp_prox, polyphase_zeroth, qis_counts,
                      qis_lookup_build, qis_mle, qis_problem, qis_prox, qis_simulate,
                      superres_problem, superres_prox)

__version__ = "0.1.0"
