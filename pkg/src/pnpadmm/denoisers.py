"""Denoisers for the Plug-and-Play solver and tools to check their behaviour.

The non-local means (NLM) filter here is a symmetric weighted average whose
weight matrix is balanced to be doubly stochastic by Sinkhorn-Knopp
iterations. :func:`damped_wrap` turns any range-preserving smoother into a
denoiser with a certified bound ``||D(x) - x||^2 / n <= sigma^2 C``.
"""

import dataclasses
import math

import numpy as np
import scipy.ndimage
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConvergenceError
from .imagecore import as_image
from .solver import Denoiser

__all__ = [
    "NlmParams", "nlm_weights", "sinkhorn_knopp", "denoise_nlm", "denoise_identity",
    "identity_denoiser", "nlm_denoiser", "median_denoiser", "damped_wrap",
    "damped_nlm", "certify_bounded", "CertificationReport", "expansiveness_kappa",
    "kappa_search", "KappaResult", "parse_denoiser",
]


@dataclasses.dataclass(frozen=True)
class NlmParams:
    patch_radius: int = 1
    window_radius: int = 2
    sigma: float = 0.1

    def __post_init__(self):
        if self.patch_radius < 0 or self.window_radius < 0:
            raise ValueError("NLM radii must be nonnegative")
        if not self.sigma > 0:
            raise ValueError(f"NLM bandwidth must be positive, got {self.sigma}")


def _window_offsets(shape, radius, full):
    """Distinct circular offsets within the search window (closed under negation)."""
    if full:
        return [(a, b) for a in range(shape[0]) for b in range(shape[1])]
    rows = sorted({a % shape[0] for a in range(-radius, radius + 1)})
    cols = sorted({b % shape[1] for b in range(-radius, radius + 1)})
    return [(a, b) for a in rows for b in cols]


def _patch_sum(arr, radius):
    out = np.zeros_like(arr)
    for p in range(-radius, radius + 1):
        for q in range(-radius, radius + 1):
            out += np.roll(arr, (-p, -q), axis=(0, 1))
    return out


def nlm_weights(img, params, full=False):
    """Sparse NLM weight matrix ``W[i, j] = exp(-||P_i - P_j||^2 / (2 sigma^2))``.

    ``P_i`` is the circular patch of radius ``params.patch_radius`` around
    pixel ``i`` (row-major index). Only pixels ``j`` inside the search
    window around ``i`` get a weight unless `full` is set, in which case
    every pair does. The matrix is symmetric with unit diagonal.
    """
    img = as_image(img)
    h, w = img.shape
    n = h * w
    idx = np.arange(n).reshape(h, w)
    rows, cols, vals = [], [], []
    scale = 1.0 / (2.0 * params.sigma ** 2)
    for a, b in _window_offsets(img.shape, params.window_radius, full):
        shifted = np.roll(img, (-a, -b), axis=(0, 1))
        dist = _patch_sum((img - shifted) ** 2, params.patch_radius)
        rows.append(idx.ravel())
        cols.append(np.roll(idx, (-a, -b), axis=(0, 1)).ravel())
        vals.append(np.exp(-dist * scale).ravel())
    W = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n))
    return W


def _is_symmetric(A):
    diff = A - A.T
    scale = abs(A).max()
    if sp.issparse(diff):
        return diff.nnz == 0 or abs(diff).max() <= 1e-14 * scale
    return np.max(np.abs(diff)) <= 1e-14 * scale


def _newton_direction(A, d, Ad, F, sparse):
    """Solve ``(diag(Ad) + diag(d) A) delta = -F``.

    Dividing by ``d`` gives the symmetric system ``(diag(Ad / d) + A)``,
    which is positive definite near the balanced point, so conjugate
    gradients are tried first with a direct solve as fallback.
    """
    if sparse:
        S = (sp.diags(Ad / d) + A).tocsr()
        delta, info = spla.cg(S, -F / d, rtol=1e-12, atol=0.0, maxiter=10 * len(d))
        if info == 0 and np.all(np.isfinite(delta)):
            return delta
        J = (sp.diags(Ad) + sp.diags(d) @ A).tocsc()
        return spla.spsolve(J, -F)
    return np.linalg.solve(np.diag(Ad) + d[:, None] * A, -F)


def _symmetric_newton(A, d, tol, max_steps=50):
    """Solve ``d * (A @ d) = 1`` for ``d > 0`` by damped Newton steps."""
    sparse = sp.issparse(A)
    steps = 0
    F = d * (A @ d) - 1.0
    err = np.max(np.abs(F))
    while err > tol:
        if steps >= max_steps:
            break
        delta = _newton_direction(A, d, A @ d, F, sparse)
        t = 1.0
        while True:
            trial = d + t * delta
            if np.all(trial > 0):
                F_trial = trial * (A @ trial) - 1.0
                err_trial = np.max(np.abs(F_trial))
                if err_trial < err or t < 1e-8:
                    break
            t *= 0.5
        d, F, err = trial, F_trial, err_trial
        steps += 1
    return d, err, steps


def sinkhorn_knopp(W, tol=1e-8, max_sweeps=10_000, return_sweeps=False, newton_after=200):
    """Scale a nonnegative matrix to be doubly stochastic.

    Alternates row and column normalization until every row and column sum
    is within `tol` of one. Nearly decomposable matrices (such as NLM weights
    of piecewise-flat images) make the alternating iteration crawl, so for a
    symmetric `W` that is still unbalanced after `newton_after` sweeps the
    symmetric scaling ``D W D`` is finished by Newton's method, which reaches
    the same (unique) balanced matrix. Accepts dense arrays or scipy sparse
    matrices and returns the same kind.

    Raises
    ------
    ConvergenceError
        If the sums are still off after `max_sweeps` sweeps.
    """
    sparse = sp.issparse(W)
    A = sp.csr_matrix(W, dtype=np.float64) if sparse else np.asarray(W, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if (A.data if sparse else A).min(initial=0.0) < 0:
        raise ValueError("matrix has negative entries")
    AT = A.T.tocsr() if sparse else A.T
    n = A.shape[0]
    r = np.ones(n)
    c = np.ones(n)

    def residual():
        row = r * (A @ c)
        col = c * (AT @ r)
        return max(np.max(np.abs(row - 1.0)), np.max(np.abs(col - 1.0)))

    sweeps = 0
    err = residual()
    symmetric = None
    while err > tol:
        if sweeps == newton_after:
            symmetric = _is_symmetric(A) if symmetric is None else symmetric
            if symmetric:
                d, err_d, steps = _symmetric_newton(A, np.sqrt(r * c), tol)
                sweeps += steps
                if err_d <= tol:
                    r = c = d
                    err = residual()
                    if err <= tol:
                        break
        if sweeps >= max_sweeps:
            raise ConvergenceError(
                f"Sinkhorn-Knopp: worst row/column residual {err:.3e} after {sweeps} sweeps")
        with np.errstate(divide="raise"):
            try:
                r = 1.0 / (A @ c)
                s = AT @ r
                # rows now sum to one; the column sums are c * s
                err = float(np.max(np.abs(c * s - 1.0)))
                if err > tol:
                    c = 1.0 / s
            except FloatingPointError:
                raise ConvergenceError("Sinkhorn-Knopp: matrix has an all-zero row or column")
        sweeps += 1
    if sparse:
        out = sp.diags(r) @ A @ sp.diags(c)
        out = out.tocsr()
    else:
        out = r[:, None] * A * c[None, :]
    return (out, sweeps) if return_sweeps else out


def denoise_nlm(params, img, full=False, tol=1e-8):
    """Non-local means with Sinkhorn-balanced weights: returns ``W~ @ img``."""
    img = as_image(img)
    W = sinkhorn_knopp(nlm_weights(img, params, full=full), tol=tol)
    return (W @ img.ravel()).reshape(img.shape)


def denoise_identity(sigma, img):
    return np.array(img, dtype=np.float64, copy=True)


def identity_denoiser():
    return Denoiser(denoise_identity, bound_constant=0.0, name="identity")


# bandwidth per unit of sigma; 2 removes noise at level sigma on the desk tasks
NLM_BANDWIDTH_SCALE = 2.0


def nlm_denoiser(patch_radius=1, window_radius=2, bandwidth_scale=NLM_BANDWIDTH_SCALE):
    """NLM family whose filter bandwidth tracks ``sigma``.

    The bandwidth is ``bandwidth_scale * sigma * (2 * patch_radius + 1)``,
    i.e. ``sigma`` acts as a per-pixel noise level for the summed patch
    distance.
    """
    side = 2 * patch_radius + 1

    def denoise(sigma, img):
        if sigma <= 0:
            return denoise_identity(sigma, img)
        h = bandwidth_scale * sigma * side
        return denoise_nlm(NlmParams(patch_radius, window_radius, h), img)
    return Denoiser(denoise, bound_constant=None,
                    name=f"nlm:{patch_radius}:{window_radius}")


# below this strength the median family is the identity
MEDIAN_SIGMA_FLOOR = 0.02


def median_denoiser(width):
    """Circular median filter of the given odd `width`, identity for small sigma.

    On images in [0, 1] the family is bounded with ``C = 1 / 0.02**2``.
    """
    width = int(width)
    if width < 1 or width % 2 == 0:
        raise ValueError(f"median width must be odd and positive, got {width}")

    def denoise(sigma, img):
        img = as_image(img)
        if sigma < MEDIAN_SIGMA_FLOOR or width == 1:
            return img.copy()
        return scipy.ndimage.median_filter(img, size=width, mode="wrap")
    return Denoiser(denoise, bound_constant=1.0 / MEDIAN_SIGMA_FLOOR ** 2,
                    name=f"median:{width}")


def damped_wrap(inner, C0, name=None):
    """Blend a smoother with the identity so the result is a bounded denoiser.

    ``D(x) = x + t (inner(sigma, x) - x)`` with ``t = min(1, sigma^2 C0)``.
    For inputs in ``[0, 1]^n`` and an `inner` that keeps them there the step
    has RMS at most 1, so ``||D(x) - x||^2 / n <= t^2 <= sigma^2 C0`` (the
    last inequality because ``t <= 1``). Larger steps, possible for inputs
    outside ``[0, 1]``, are scaled down so that the bound still holds.

    Parameters
    ----------
    inner : callable
        ``inner(sigma, img)`` returns a smoothed image of the same shape.
    C0 : float
        Certified bound constant, > 0.
    """
    if not C0 > 0:
        raise ValueError(f"C0 must be positive, got {C0}")
    root_c = math.sqrt(C0)

    def denoise(sigma, img):
        img = as_image(img)
        if sigma <= 0:
            return img.copy()
        t = min(1.0, sigma * sigma * C0)
        step = np.asarray(inner(sigma, img), dtype=np.float64) - img
        rms = float(np.sqrt(np.mean(step ** 2)))
        if rms > 1.0:
            t = min(t, sigma * root_c / rms)
        return img + t * step

    return Denoiser(denoise, bound_constant=float(C0), name=name or f"damped:{C0:g}")


# keeps the smoother fully engaged while sigma >= 0.01
DEFAULT_C0 = 1e4


def damped_nlm(C0=DEFAULT_C0, patch_radius=1, window_radius=2):
    """:func:`damped_wrap` around the balanced NLM family."""
    return damped_wrap(nlm_denoiser(patch_radius, window_radius), C0,
                       name=f"damped-nlm:{C0:g}")


@dataclasses.dataclass(frozen=True)
class CertificationReport:
    """Outcome of :func:`certify_bounded`.

    ``ratios[i, j]`` is ``(||D(x_i) - x_i||^2 / n) / (sigma_j^2 C)``.
    """

    ratios: np.ndarray
    max_ratio: float
    passed: bool
    C: float


def certify_bounded(denoiser, C, inputs, sigmas):
    """Check ``||D(x) - x||^2 / n <= sigma^2 C`` on every (input, sigma) pair.

    With ``sigma^2 C = 0`` a pair contributes ratio 0 when the denoiser is
    exactly the identity there and ``inf`` otherwise.
    """
    inputs = list(inputs)
    sigmas = list(sigmas)
    if not inputs or not sigmas:
        raise ValueError("certification needs at least one input and one sigma")
    ratios = np.empty((len(inputs), len(sigmas)))
    for i, x in enumerate(inputs):
        x = as_image(x)
        for j, s in enumerate(sigmas):
            err = float(np.mean((np.asarray(denoiser(s, x)) - x) ** 2))
            budget = s * s * C
            if budget > 0:
                ratios[i, j] = err / budget
            else:
                ratios[i, j] = 0.0 if err == 0 else math.inf
    worst = float(ratios.max())
    return CertificationReport(ratios=ratios, max_ratio=worst, passed=worst <= 1.0, C=float(C))


def _balanced(img, params, full):
    return sinkhorn_knopp(nlm_weights(img, params, full=full))


def expansiveness_kappa(x, y, params, fixed_weights=False, full=False):
    """Ratio ``||D(x) - D(y)||^2 / ||x - y||^2`` for balanced NLM.

    By default each input is filtered with its own weights. With
    `fixed_weights` both are filtered by the weights built from `x`, which
    makes the map linear and bounds the ratio by one.
    """
    x = as_image(x, "x")
    y = as_image(y, "y")
    if x.shape != y.shape:
        raise ValueError("x and y must have the same shape")
    denom = float(np.sum((x - y) ** 2))
    if denom == 0.0:
        raise ValueError("x and y are identical; the expansion ratio is undefined")
    Wx = _balanced(x, params, full)
    Wy = Wx if fixed_weights else _balanced(y, params, full)
    diff = Wx @ x.ravel() - Wy @ y.ravel()
    return float(diff @ diff) / denom


@dataclasses.dataclass(frozen=True)
class KappaResult:
    kappa: float
    pair: tuple
    evaluated: int
    kappa_fixed_max: float


def kappa_search(candidates, params, max_pairs=1000, seed=0, full=False, stop_above=None):
    """Search pairs of candidate images for the largest expansion ratio.

    Consecutive candidates are tried first, then random pairs, up to
    `max_pairs` evaluations. The fixed-weight ratio is tracked over the same
    pairs. Stops early once a ratio exceeds `stop_above`, if given.
    """
    candidates = [as_image(c) for c in candidates]
    m = len(candidates)
    if m < 2:
        raise ValueError("need at least two candidate images")
    pairs = [(i, i + 1) for i in range(m - 1)]
    rng = np.random.default_rng(seed)
    seen = set(pairs)
    limit = min(max_pairs, m * (m - 1) // 2)
    while len(pairs) < limit:
        i, j = sorted(rng.choice(m, size=2, replace=False).tolist())
        if (i, j) not in seen:
            seen.add((i, j))
            pairs.append((i, j))
    pairs = pairs[:max_pairs]

    balanced = {}

    def weights(i):
        if i not in balanced:
            balanced[i] = _balanced(candidates[i], params, full)
        return balanced[i]

    best, best_pair, fixed_max, count = -math.inf, None, 0.0, 0
    for i, j in pairs:
        d = candidates[i] - candidates[j]
        denom = float(np.sum(d * d))
        if denom == 0.0:
            continue
        count += 1
        Wi, Wj = weights(i), weights(j)
        diff = Wi @ candidates[i].ravel() - Wj @ candidates[j].ravel()
        kappa = float(diff @ diff) / denom
        lin = Wi @ d.ravel()
        fixed_max = max(fixed_max, float(lin @ lin) / denom)
        if kappa > best:
            best, best_pair = kappa, (i, j)
        if stop_above is not None and best > stop_above:
            break
    return KappaResult(kappa=best, pair=best_pair, evaluated=count, kappa_fixed_max=fixed_max)


def parse_denoiser(spec):
    """Build a denoiser from ``identity``, ``nlm:<patch>:<window>``,
    ``damped-nlm:<C0>`` or ``median:<w>``."""
    name, _, rest = spec.partition(":")
    try:
        if name == "identity" and not rest:
            return identity_denoiser()
        if name == "nlm":
            patch, window = rest.split(":")
            return nlm_denoiser(int(patch), int(window))
        if name == "damped-nlm":
            return damped_nlm(float(rest) if rest else DEFAULT_C0)
        if name == "median":
            return median_denoiser(int(rest))
    except ValueError as exc:
        raise ValueError(f"bad denoiser spec {spec!r}: {exc}") from exc
    raise ValueError(f"unknown denoiser spec {spec!r}")
