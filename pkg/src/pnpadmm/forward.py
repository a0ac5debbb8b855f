"""Exact proximal operators for the forward models.

Quadratic models use ``f(x) = 1/2 ||G x - y||^2`` with ``G`` one of

* ``H`` (circular blur) -- :func:`deblur_prox`,
* ``S`` (pixel mask) -- :func:`interp_prox`,
* ``S H`` (blur then K-fold decimation) -- :func:`superres_prox`.

The quanta image sensor (QIS) model observes, for every pixel, ``K`` binary
jots that fire when at least one photon arrives with Poisson rate
``alpha * x / K``. Its negative log-likelihood is separable, so the prox is
solved pixel by pixel.
"""

import dataclasses
import math

import numpy as np

from .errors import DimensionError
from .imagecore import as_image, downsample, kernel_otf, upsample
from .solver import ForwardProblem

__all__ = [
    "deblur_prox", "interp_prox", "polyphase_zeroth", "SuperResModel", "superres_prox",
    "superres_forward", "superres_adjoint", "qis_simulate", "qis_counts", "QisObservation",
    "qis_objective", "qis_stationarity_residual", "qis_roots", "qis_prox", "QisLookup",
    "qis_lookup_build", "qis_mle", "deblur_problem", "interp_problem", "superres_problem",
    "qis_problem",
]


def _check_rho(rho):
    if not rho > 0:
        raise ValueError(f"rho must be positive, got {rho}")


def _same_shape(*arrays):
    shapes = {a.shape for a in arrays}
    if len(shapes) != 1:
        raise DimensionError(f"shape mismatch: {sorted(shapes)}")


def deblur_prox(y, h, rho, x_tilde, anchor=None):
    """Minimizer of ``1/2 ||h * x - y||^2 + rho/2 ||x - x_tilde||^2`` (circular ``*``)."""
    _check_rho(rho)
    y = as_image(y, "y")
    x_tilde = as_image(x_tilde, "x_tilde")
    _same_shape(y, x_tilde)
    otf = kernel_otf(h, y.shape, anchor)
    num = np.conj(otf) * np.fft.fft2(y) + rho * np.fft.fft2(x_tilde)
    return np.real(np.fft.ifft2(num / (np.abs(otf) ** 2 + rho)))


def interp_prox(y, mask, rho, x_tilde):
    """Minimizer of ``1/2 ||S x - y||^2 + rho/2 ||x - x_tilde||^2`` for a pixel mask.

    `y` is given on the full grid; its values at unobserved pixels are
    ignored.
    """
    _check_rho(rho)
    y = as_image(y, "y")
    x_tilde = as_image(x_tilde, "x_tilde")
    mask = np.asarray(mask)
    _same_shape(y, x_tilde, mask)
    if not np.all((mask == 0) | (mask == 1)):
        raise ValueError("mask must be binary")
    s = mask.astype(np.float64)
    return (s * y + rho * x_tilde) / (s + rho)


def polyphase_zeroth(h, K, shape, anchor=None):
    """Zeroth polyphase component of the autocorrelation of `h`.

    The autocorrelation ``h_t = F^-1(|F(h)|^2)`` is formed circularly on the
    high-resolution grid `shape`; keeping every `K`-th sample gives a filter
    on the low-resolution grid, anchored at index (0, 0), such that
    ``downsample(h_t * upsample(w))`` equals circular filtering of `w` by it.
    """
    if shape[0] % K or shape[1] % K:
        raise DimensionError(f"grid {tuple(shape)} not divisible by factor {K}")
    otf = kernel_otf(h, shape, anchor)
    h_auto = np.real(np.fft.ifft2(np.abs(otf) ** 2))
    return downsample(h_auto, K)


@dataclasses.dataclass(frozen=True)
class SuperResModel:
    """Blur-then-decimate operator ``G = S H`` with cached spectra.

    ``htilde0`` lives on the low-resolution grid anchored at (0, 0);
    ``lowres_spectrum`` is its DFT, real and nonnegative, equal to the
    diagonal of ``G G^T`` in the Fourier basis.
    """

    kernel: np.ndarray
    K: int
    shape: tuple
    otf: np.ndarray
    htilde0: np.ndarray
    lowres_spectrum: np.ndarray

    @classmethod
    def build(cls, kernel, K, shape, anchor=None):
        K = int(K)
        if K < 1:
            raise ValueError(f"decimation factor must be >= 1, got {K}")
        shape = tuple(int(s) for s in shape)
        if shape[0] % K or shape[1] % K:
            raise DimensionError(f"high-res shape {shape} not divisible by {K}")
        kernel = np.asarray(kernel, dtype=np.float64)
        otf = kernel_otf(kernel, shape, anchor)
        h0 = polyphase_zeroth(kernel, K, shape, anchor)
        spectrum = np.real(np.fft.fft2(h0))
        return cls(kernel=kernel, K=K, shape=shape, otf=otf, htilde0=h0,
                   lowres_spectrum=spectrum)

    @property
    def lowres_shape(self):
        return (self.shape[0] // self.K, self.shape[1] // self.K)


def superres_forward(model, x):
    """Apply ``G = S H``: blur, then keep every K-th sample."""
    blurred = np.real(np.fft.ifft2(np.fft.fft2(x) * model.otf))
    return downsample(blurred, model.K)


def superres_adjoint(model, y):
    """Apply ``G^T = H^T S^T``: zero-insert, then correlate with the kernel."""
    up = upsample(y, model.K)
    return np.real(np.fft.ifft2(np.fft.fft2(up) * np.conj(model.otf)))


def superres_prox(model, y, rho, x_tilde):
    """Minimizer of ``1/2 ||S H x - y||^2 + rho/2 ||x - x_tilde||^2``.

    Uses the matrix inversion lemma to move the solve to the low-resolution
    grid, where ``G G^T`` is circular filtering by ``model.htilde0``.
    """
    _check_rho(rho)
    y = as_image(y, "y")
    x_tilde = as_image(x_tilde, "x_tilde")
    if y.shape != model.lowres_shape or x_tilde.shape != model.shape:
        raise DimensionError(
            f"expected y {model.lowres_shape} and x_tilde {model.shape}, "
            f"got {y.shape} and {x_tilde.shape}")
    b = superres_adjoint(model, y) + rho * x_tilde
    gb = superres_forward(model, b)
    z = np.real(np.fft.ifft2(np.fft.fft2(gb) / (model.lowres_spectrum + rho)))
    return (b - superres_adjoint(model, z)) / rho


# -- quanta image sensor -----------------------------------------------------

def _check_qis(K, alpha):
    if int(K) != K or K < 1:
        raise ValueError(f"jots per pixel must be a positive integer, got {K}")
    if not alpha > 0:
        raise ValueError(f"sensor gain must be positive, got {alpha}")
    return int(K)


def qis_simulate(x, K, alpha, seed):
    """Simulate one binary QIS exposure of image `x`.

    Each pixel owns `K` jots; jot counts are Poisson with rate
    ``alpha * x / K`` and a jot reads 1 when it caught at least one photon.
    Returns a uint8 array of shape ``x.shape + (K,)`` whose row-major
    flattening is the pixel-contiguous jot sequence.
    """
    K = _check_qis(K, alpha)
    x = as_image(x)
    if x.min() < 0 or x.max() > 1:
        raise ValueError("QIS input must lie in [0, 1]")
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    rate = np.broadcast_to((alpha / K) * x[..., None], x.shape + (K,))
    photons = rng.poisson(rate)
    return (photons >= 1).astype(np.uint8)


def qis_counts(bits, K, shape=None):
    """Per-pixel counts of ones and zeros, ``(k1, k0)`` with ``k1 + k0 = K``.

    `bits` is either an array with trailing axis `K` or a flat jot sequence,
    in which case the pixel grid `shape` is required.
    """
    K = int(K)
    bits = np.asarray(bits)
    if shape is not None:
        n = int(np.prod(shape))
        if bits.size != n * K:
            raise DimensionError(f"bit field has {bits.size} jots; expected {n} x {K}")
        bits = bits.reshape(tuple(shape) + (K,))
    elif bits.ndim < 1 or bits.shape[-1] != K:
        raise DimensionError(f"bit field trailing axis must be {K}, got shape {bits.shape}")
    if not np.all((bits == 0) | (bits == 1)):
        raise ValueError("bit field must contain only 0 and 1")
    k1 = bits.sum(axis=-1, dtype=np.int64)
    return k1, K - k1


@dataclasses.dataclass(frozen=True)
class QisObservation:
    """Binary QIS measurement reduced to per-pixel counts.

    ``K`` is the number of jots per pixel (the square of the per-axis
    oversampling factor).
    """

    K: int
    alpha: float
    k1: np.ndarray
    k0: np.ndarray
    q: int = 1

    def __post_init__(self):
        _check_qis(self.K, self.alpha)
        if self.q != 1:
            raise ValueError("only threshold q = 1 is supported")
        k1 = np.asarray(self.k1)
        k0 = np.asarray(self.k0)
        if k1.shape != k0.shape:
            raise DimensionError("k1 and k0 shapes differ")
        if np.any(k1 < 0) or np.any(k0 < 0) or np.any(k1 + k0 != self.K):
            raise ValueError("counts must be nonnegative and sum to K per pixel")

    @classmethod
    def from_bits(cls, bits, K, alpha, shape=None):
        k1, k0 = qis_counts(bits, K, shape)
        return cls(K=int(K), alpha=float(alpha), k1=k1, k0=k0)

    @property
    def shape(self):
        return np.shape(self.k1)


def qis_objective(x, k1, k0, K, alpha, rho=0.0, x_tilde=0.0):
    """Per-pixel objective: negative log-likelihood plus ``rho/2 (x - x_tilde)^2``."""
    x = np.asarray(x, dtype=np.float64)
    a = alpha * x / K
    with np.errstate(divide="ignore", invalid="ignore"):
        ones = np.where(k1 > 0, -k1 * np.log(-np.expm1(-a)), 0.0)
    return k0 * a + ones + 0.5 * rho * (x - x_tilde) ** 2


def qis_stationarity_residual(x, k0, K, alpha, rho, x_tilde):
    """``K e^{-alpha x/K} (alpha + rho (x - xt)) - alpha k0 - rho K (x - xt)``."""
    x = np.asarray(x, dtype=np.float64)
    d = x - x_tilde
    return K * np.exp(-alpha * x / K) * (alpha + rho * d) - alpha * k0 - rho * K * d


def qis_roots(k1, K, alpha, rho, x_tilde):
    """Unclamped per-pixel minimizers of the QIS prox objective.

    Pixels with no ones have the closed form ``x_tilde - alpha / rho``. For
    the others the stationarity equation has a unique positive root, found
    by bisection to a 1e-12 bracket followed by two guarded Newton steps.
    """
    _check_rho(rho)
    k1 = np.asarray(k1)
    x_tilde = np.broadcast_to(np.asarray(x_tilde, dtype=np.float64), k1.shape)
    k0 = K - k1
    out = x_tilde - alpha / rho
    sel = k1 > 0
    if not np.any(sel):
        return out
    xt = x_tilde[sel]
    k0s = k0[sel].astype(np.float64)

    def resid(x):
        return qis_stationarity_residual(x, k0s, K, alpha, rho, xt)

    lo = np.maximum(1e-12, xt - alpha / rho - 1.0)
    hi = np.maximum(1.0, xt) + alpha / rho + 1.0
    # resid > 0 left of the root and < 0 right of it; widen hi if needed
    for _ in range(200):
        bad = resid(hi) >= 0
        if not np.any(bad):
            break
        hi = np.where(bad, 2.0 * hi, hi)
    else:
        raise ArithmeticError("QIS root bracketing failed at pixels "
                              f"{np.flatnonzero(sel)[resid(hi) >= 0][:5].tolist()}")
    low_bad = resid(lo) <= 0
    if np.any(low_bad):
        raise ArithmeticError("QIS root bracketing failed at pixels "
                              f"{np.flatnonzero(sel)[low_bad][:5].tolist()}")
    while np.max(hi - lo) > 1e-12:
        mid = 0.5 * (lo + hi)
        pos = resid(mid) > 0
        lo = np.where(pos, mid, lo)
        hi = np.where(pos, hi, mid)
    x = 0.5 * (lo + hi)
    for _ in range(2):
        e = np.exp(-alpha * x / K)
        d = x - xt
        deriv = -alpha * e * (alpha + rho * d) + K * e * rho - rho * K
        with np.errstate(divide="ignore", invalid="ignore"):
            step = x - resid(x) / deriv
        ok = np.isfinite(step) & (step >= lo - 1e-12) & (step <= hi + 1e-12) \
            & (np.abs(resid(step)) <= np.abs(resid(x)))
        x = np.where(ok, step, x)
    out = out.copy()
    out[sel] = x
    return out


@dataclasses.dataclass(frozen=True)
class QisLookup:
    """Tabulated QIS prox roots for one ``(alpha, K, rho)``.

    ``table[k0, i]`` is the unclamped root for ``x_tilde = grid[i]``.
    """

    rho: float
    alpha: float
    K: int
    grid: np.ndarray
    table: np.ndarray

    @property
    def step(self):
        return float(self.grid[1] - self.grid[0])

    def query(self, k0, x_tilde):
        """Linearly interpolated roots; NaN where `x_tilde` is off the grid."""
        k0 = np.asarray(k0, dtype=np.int64)
        xt = np.asarray(x_tilde, dtype=np.float64)
        pos = (xt - self.grid[0]) / self.step
        i = np.clip(np.floor(pos).astype(np.int64), 0, self.grid.size - 2)
        w = pos - i
        val = (1 - w) * self.table[k0, i] + w * self.table[k0, i + 1]
        off = (pos < 0) | (pos > self.grid.size - 1)
        return np.where(off, np.nan, val)


def qis_lookup_build(alpha, K, rho, grid_step=1e-3, x_min=None):
    """Tabulate roots over ``k0 in 0..K`` and an ``x_tilde`` grid up to 2.

    The grid starts at ``-alpha/rho - 1`` but no lower than `x_min`
    (default -1) so that small ``rho`` does not explode the table; queries
    below the grid fall back to direct root finding.
    """
    K = _check_qis(K, alpha)
    _check_rho(rho)
    if not grid_step > 0:
        raise ValueError(f"grid step must be positive, got {grid_step}")
    start = max(-alpha / rho - 1.0, -1.0 if x_min is None else x_min)
    count = int(math.ceil((2.0 - start) / grid_step)) + 1
    grid = start + grid_step * np.arange(count)
    k0 = np.arange(K + 1)[:, None]
    k1 = np.broadcast_to(K - k0, (K + 1, count))
    xt = np.broadcast_to(grid, (K + 1, count))
    table = qis_roots(k1, K, alpha, rho, xt)
    return QisLookup(rho=float(rho), alpha=float(alpha), K=K, grid=grid, table=table)


def qis_prox(obs, rho, x_tilde, lookup=None):
    """Per-pixel prox of the QIS negative log-likelihood, clamped to [0, 1].

    With a `lookup` built for the same ``(alpha, K, rho)``, tabulated roots
    are interpolated; pixels whose ``x_tilde`` falls off the grid use the
    direct root finder.
    """
    _check_rho(rho)
    x_tilde = np.asarray(x_tilde, dtype=np.float64)
    if x_tilde.shape != obs.shape:
        raise DimensionError(f"x_tilde shape {x_tilde.shape} != observation {obs.shape}")
    if lookup is None:
        roots = qis_roots(obs.k1, obs.K, obs.alpha, rho, x_tilde)
    else:
        if (lookup.rho, lookup.alpha, lookup.K) != (rho, obs.alpha, obs.K):
            raise ValueError("lookup table was built for different (rho, alpha, K)")
        roots = lookup.query(obs.k0, x_tilde)
        miss = np.isnan(roots)
        if np.any(miss):
            roots[miss] = qis_roots(obs.k1[miss], obs.K, obs.alpha, rho, x_tilde[miss])
    return np.clip(roots, 0.0, 1.0)


def qis_mle(obs):
    """Closed-form maximum-likelihood estimate ``-(K/alpha) log(k0/K)`` in [0, 1]."""
    k0 = np.asarray(obs.k0, dtype=np.float64)
    with np.errstate(divide="ignore"):
        x = -(obs.K / obs.alpha) * np.log(k0 / obs.K)
    return np.clip(x, 0.0, 1.0)


# -- ForwardProblem factories ------------------------------------------------

def deblur_problem(y, h, anchor=None):
    y = as_image(y, "y")
    otf = kernel_otf(h, y.shape, anchor)

    def objective(x):
        r = np.real(np.fft.ifft2(np.fft.fft2(x) * otf)) - y
        return 0.5 * float(np.sum(r * r))

    hmax = float(np.max(np.abs(otf)))
    # ||H^T (H x - y)|| / sqrt(n) <= |H|max (|H|max + rms(y)) for x in [0,1]^n
    bound = hmax * (hmax + float(np.sqrt(np.mean(y ** 2))))
    return ForwardProblem(prox=lambda rho, xt: deblur_prox(y, h, rho, xt, anchor),
                          shape=y.shape, gradient_bound=bound, objective=objective,
                          name="deblur")


def interp_problem(y, mask):
    y = as_image(y, "y")
    s = np.asarray(mask, dtype=np.float64)

    def objective(x):
        r = s * (x - y)
        return 0.5 * float(np.sum(r * r))

    bound = 1.0 + float(np.sqrt(np.mean((s * y) ** 2)))
    return ForwardProblem(prox=lambda rho, xt: interp_prox(y, mask, rho, xt), shape=y.shape,
                          gradient_bound=bound, objective=objective, name="interp")


def superres_problem(model, y):
    y = as_image(y, "y")

    def objective(x):
        r = superres_forward(model, x) - y
        return 0.5 * float(np.sum(r * r))

    smax = math.sqrt(float(np.max(model.lowres_spectrum)))
    bound = smax * (smax + float(np.sqrt(np.mean(y ** 2))) / model.K)
    return ForwardProblem(prox=lambda rho, xt: superres_prox(model, y, rho, xt),
                          shape=model.shape, gradient_bound=bound, objective=objective,
                          name="superres")


def qis_problem(obs, use_lookup=False, grid_step=1e-3):
    """QIS prox as a ForwardProblem; tables are rebuilt when ``rho`` changes."""
    cache = {}

    def prox(rho, x_tilde):
        if not use_lookup:
            return qis_prox(obs, rho, x_tilde)
        if cache.get("rho") != rho:
            cache["rho"] = rho
            cache["table"] = qis_lookup_build(obs.alpha, obs.K, rho, grid_step)
        return qis_prox(obs, rho, x_tilde, lookup=cache["table"])

    def objective(x):
        return float(np.sum(qis_objective(x, obs.k1, obs.k0, obs.K, obs.alpha)))

    return ForwardProblem(prox=prox, shape=obs.shape, gradient_bound=None,
                          objective=objective, name="qis")
