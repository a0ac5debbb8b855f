"""Plug-and-Play ADMM with a continuation scheme on the penalty parameter.

One iteration with penalty ``rho`` and denoiser strength
``sigma = sqrt(lambda / rho)``::

    x <- prox_f(rho, v - u)
    v <- D_sigma(x + u)
    u <- u + (x - v)

followed by a ``rho`` update (monotone, adaptive or constant). ``u`` is the
scaled multiplier throughout.
"""

import csv
import dataclasses
import io
import math
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, DimensionError, NumericalError
from .imagecore import psnr

RULES = ("monotone", "adaptive", "constant")
STOP_CRITERIA = ("delta", "eps")

# beyond this penalty both subproblems are replaced by their rho -> inf limits
RHO_CEILING = 1e12

TRACE_FIELDS = ("k", "rho", "sigma", "delta", "eps1", "eps2", "eps3", "psnr")


@dataclasses.dataclass(frozen=True)
class PnPConfig:
    """Scalar knobs of the solver.

    ``rule="constant"`` keeps ``rho`` fixed at ``rho0`` and reproduces the
    original Plug-and-Play ADMM; ``gamma`` is then unused.
    """

    rho0: float = 1e-5
    lam: float = 1e-4
    gamma: float = 1.2
    eta: float = 0.5
    tol: float = 1e-3
    rule: str = "adaptive"
    max_iter: int = 200
    stop: str = "delta"

    def __post_init__(self):
        if not self.rho0 > 0:
            raise ConfigError(f"rho0 must be positive, got {self.rho0}")
        if not self.lam > 0:
            raise ConfigError(f"lambda must be positive, got {self.lam}")
        if not self.gamma > 1:
            raise ConfigError(f"gamma must exceed 1, got {self.gamma}")
        if not 0 <= self.eta < 1:
            raise ConfigError(f"eta must lie in [0, 1), got {self.eta}")
        if not self.tol > 0:
            raise ConfigError(f"tol must be positive, got {self.tol}")
        if self.rule not in RULES:
            raise ConfigError(f"rule must be one of {RULES}, got {self.rule!r}")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise ConfigError(f"max_iter must be a positive integer, got {self.max_iter}")
        if self.stop not in STOP_CRITERIA:
            raise ConfigError(f"stop must be one of {STOP_CRITERIA}, got {self.stop!r}")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


@dataclasses.dataclass
class PnPState:
    x: np.ndarray
    v: np.ndarray
    u: np.ndarray
    rho: float
    k: int = 0


@dataclasses.dataclass(frozen=True)
class ForwardProblem:
    """A data-fidelity term ``f`` exposed through its proximal operator.

    ``prox(rho, x_tilde)`` must return the minimizer of
    ``f(x) + rho/2 * ||x - x_tilde||^2``. ``objective`` evaluates ``f`` and
    is optional; ``gradient_bound`` is the constant ``L`` with
    ``||grad f(x)|| / sqrt(n) <= L`` on ``[0, 1]^n`` when known.
    """

    prox: Callable[[float, np.ndarray], np.ndarray]
    shape: tuple
    gradient_bound: Optional[float] = None
    objective: Optional[Callable[[np.ndarray], float]] = None
    name: str = "problem"


@dataclasses.dataclass(frozen=True)
class Denoiser:
    """A ``sigma``-parameterized map ``denoise(sigma, img) -> img``.

    ``bound_constant`` is a constant ``C`` with
    ``||D(x) - x||^2 / n <= sigma^2 C`` when one is claimed.
    """

    denoise: Callable[[float, np.ndarray], np.ndarray]
    bound_constant: Optional[float] = None
    name: str = "denoiser"

    def __call__(self, sigma, img):
        return self.denoise(sigma, img)


@dataclasses.dataclass(frozen=True)
class TraceRow:
    """Diagnostics of one iteration.

    Row ``k`` records the penalty ``rho`` and strength ``sigma`` used to move
    from iterate ``k`` to ``k + 1``, and the resulting residue ``delta``
    (``= eps1 + eps2 + eps3``, the normalized changes of x, v and u).
    """

    k: int
    rho: float
    sigma: float
    delta: float
    eps1: float
    eps2: float
    eps3: float
    psnr: Optional[float] = None


class SolverTrace(list):
    """List of :class:`TraceRow` with column accessors and CSV export."""

    def column(self, name):
        return np.array([getattr(row, name) for row in self], dtype=np.float64)

    @property
    def deltas(self):
        return self.column("delta")

    @property
    def rhos(self):
        return self.column("rho")

    def to_csv(self, path=None):
        """Write the trace as CSV; returns the text when `path` is None."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TRACE_FIELDS)
        for row in self:
            values = [row.k] + [repr(float(getattr(row, f))) for f in TRACE_FIELDS[1:-1]]
            values.append("" if row.psnr is None else repr(float(row.psnr)))
            writer.writerow(values)
        text = buf.getvalue()
        if path is None:
            return text
        with open(path, "w", newline="") as fh:
            fh.write(text)
        return text

    @classmethod
    def from_csv(cls, source):
        """Parse CSV text or a path produced by :meth:`to_csv`."""
        if isinstance(source, str) and "\n" in source:
            text = source
        else:
            with open(source) as fh:
                text = fh.read()
        reader = csv.DictReader(io.StringIO(text))
        if tuple(reader.fieldnames or ()) != TRACE_FIELDS:
            raise ValueError(f"unexpected trace header {reader.fieldnames}")
        trace = cls()
        for rec in reader:
            trace.append(TraceRow(
                k=int(rec["k"]),
                **{f: float(rec[f]) for f in TRACE_FIELDS[1:-1]},
                psnr=float(rec["psnr"]) if rec["psnr"] else None))
        return trace


def residue_components(prev, new):
    """Return ``(eps1, eps2, eps3)``: RMS changes of x, v and u."""
    if not (prev.x.shape == new.x.shape == prev.v.shape == new.v.shape
            == prev.u.shape == new.u.shape):
        raise DimensionError("states have mismatched dimensions")
    root_n = math.sqrt(prev.x.size)
    return tuple(float(np.linalg.norm(b - a)) / root_n
                 for a, b in ((prev.x, new.x), (prev.v, new.v), (prev.u, new.u)))


def relative_residue(prev, new):
    """Normalized sum of the primal and dual changes between two states."""
    return sum(residue_components(prev, new))


def update_rho(cfg, rho, delta_new, delta_old):
    """Next penalty value under ``cfg.rule``."""
    if cfg.rule == "monotone":
        return cfg.gamma * rho
    if cfg.rule == "adaptive":
        return cfg.gamma * rho if delta_new >= cfg.eta * delta_old else rho
    return rho


def check_stop(row, tol, criterion="delta"):
    """Whether `row` meets the stopping test (inclusive at ``tol``).

    ``"delta"`` tests ``delta <= tol``; ``"eps"`` tests
    ``max(eps1, eps2, eps3) <= tol / 3``.
    """
    if criterion == "delta":
        return row.delta <= tol
    if criterion == "eps":
        return max(row.eps1, row.eps2, row.eps3) <= tol / 3.0
    raise ConfigError(f"unknown stopping criterion {criterion!r}")


def pnp_admm(problem, denoiser, cfg, init, truth=None, return_x=False, callback=None):
    """Run Plug-and-Play ADMM from ``x = v = init``, ``u = 0``.

    Parameters
    ----------
    problem : ForwardProblem
    denoiser : Denoiser
    cfg : PnPConfig
    init : ndarray
        Initial image, same shape as ``problem.shape``.
    truth : ndarray, optional
        Ground truth; when given, each trace row carries the PSNR of the
        clamped ``v`` iterate.
    return_x : bool
        Return the clamped ``x`` iterate instead of ``v``.
    callback : callable, optional
        Called as ``callback(state, row)`` after every iteration.

    Returns
    -------
    image : ndarray
        Final ``v`` (or ``x``) clamped to [0, 1].
    trace : SolverTrace
    """
    init = np.asarray(init, dtype=np.float64)
    if init.shape != tuple(problem.shape):
        raise DimensionError(f"init shape {init.shape} != problem shape {tuple(problem.shape)}")
    if truth is not None and np.shape(truth) != init.shape:
        raise DimensionError("ground truth shape does not match the problem")

    state = PnPState(x=init.copy(), v=init.copy(), u=np.zeros_like(init), rho=cfg.rho0)
    trace = SolverTrace()
    delta_old = 0.0
    for k in range(cfg.max_iter):
        rho = state.rho
        sigma = math.sqrt(cfg.lam / rho)
        x_tilde = state.v - state.u
        try:
            if rho >= RHO_CEILING:
                x = x_tilde.copy()
                v = x + state.u
            else:
                x = np.asarray(problem.prox(rho, x_tilde), dtype=np.float64)
                v = np.asarray(denoiser(sigma, x + state.u), dtype=np.float64)
        except (ValueError, ArithmeticError) as exc:
            raise NumericalError(f"iteration {k} (rho={rho:.3e}): {exc}") from exc
        u = state.u + (x - v)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v)) and np.all(np.isfinite(u))):
            raise NumericalError(f"non-finite iterate at iteration {k} (rho={rho:.3e})")
        new = PnPState(x=x, v=v, u=u, rho=rho, k=k + 1)
        eps = residue_components(state, new)
        delta = sum(eps)
        row = TraceRow(k=k, rho=rho, sigma=sigma, delta=delta, eps1=eps[0], eps2=eps[1],
                       eps3=eps[2],
                       psnr=None if truth is None else psnr(np.clip(v, 0, 1), truth))
        trace.append(row)
        new.rho = update_rho(cfg, rho, delta, delta_old)
        delta_old = delta
        state = new
        if callback is not None:
            callback(state, row)
        if check_stop(row, cfg.tol, cfg.stop):
            break
    out = state.x if return_x else state.v
    return np.clip(out, 0.0, 1.0), trace


@dataclasses.dataclass(frozen=True)
class TraceFit:
    delta_fit: float
    c_fit: float
    converged: bool


def analyze_trace(trace, tol=1e-3, min_rows=5):
    """Fit a geometric envelope ``c * delta**k`` to the tail of the residues.

    A least-squares line through ``log(delta_k)`` over the second half of
    the trace gives the rate; ``c_fit`` is the smallest constant for which
    the envelope dominates every tail row. ``converged`` requires a rate
    below one and a final residue at most `tol` (skipped when `tol` is None).
    """
    deltas = np.asarray(trace.deltas if isinstance(trace, SolverTrace)
                        else [getattr(r, "delta", r) for r in trace], dtype=np.float64)
    if deltas.size < min_rows:
        raise ValueError(f"trace has {deltas.size} rows; need at least {min_rows}")
    k = np.arange(deltas.size, dtype=np.float64)
    start = deltas.size // 2
    kt = k[start:]
    logs = np.log(np.maximum(deltas[start:], np.finfo(float).tiny))
    slope, _ = np.polyfit(kt, logs, 1)
    if abs(slope) < 1e-12:  # round-off on a flat tail
        slope = 0.0
    rate = float(np.exp(slope))
    c_fit = float(np.exp(np.max(logs - slope * kt)))
    converged = rate < 1.0 and (tol is None or deltas[-1] <= tol)
    return TraceFit(delta_fit=rate, c_fit=c_fit, converged=bool(converged))
