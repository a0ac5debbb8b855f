"""Command-line harness: simulate a degradation, restore it, report.

Every restoration subcommand prints one summary line
``final_psnr,iters,final_delta`` on stdout. Exit status is 0 on success,
2 for configuration errors, 3 for I/O errors and 4 for numerical failures.
"""

import argparse
import csv
import dataclasses
import math
import os
import sys

import numpy as np

from .denoisers import (NlmParams, certify_bounded, denoise_nlm, kappa_search, parse_denoiser)
from .errors import ConfigError, NumericalError
from .forward import (QisObservation, SuperResModel, deblur_problem, interp_problem, qis_mle,
                      qis_problem, qis_simulate, superres_forward, superres_problem)
from .imagecore import (TEST_IMAGES, add_gaussian_noise, circ_conv, parse_kernel, psnr,
                        read_image, test_image, write_image)
from .solver import Denoiser, PnPConfig, analyze_trace, pnp_admm

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4
TASKS = ("deblur", "interp", "superres", "qis")
SWEEP_PARAMS = ("tol", "rho0", "seed", "rule")
SWEEP_DEFAULTS = {
    "tol": "1e-1,1e-2,1e-3,1e-4",
    "rho0": "1e-5,1e-4,1e-3,1e-2",
    "seed": "0,1,2,3,4,5,6,7,8,9",
    "rule": "monotone,adaptive,constant",
}
# the photon likelihood is far sharper than a Gaussian one, hence a larger lambda
QIS_DEFAULTS = {"rho0": 0.2, "lam": 0.2}


@dataclasses.dataclass
class Degraded:
    """A simulated measurement of one channel, ready for the solver."""

    problem: object
    init: np.ndarray
    baseline: np.ndarray  # naive estimate used for comparison


@dataclasses.dataclass
class Outcome:
    image: np.ndarray
    traces: list
    psnr: float
    baseline_psnr: float

    @property
    def iters(self):
        return max(len(t) for t in self.traces)

    @property
    def final_delta(self):
        return max(t[-1].delta for t in self.traces)


# -- input handling ----------------------------------------------------------

def load_input(spec):
    """Read an image file, or build ``synthetic:<name>[:<size>]``."""
    if spec.startswith("synthetic:"):
        parts = spec.split(":")
        if len(parts) not in (2, 3) or parts[1] not in TEST_IMAGES:
            raise ConfigError(f"bad synthetic image {spec!r}; names are {sorted(TEST_IMAGES)}")
        size = int(parts[2]) if len(parts) == 3 else 32
        return test_image(parts[1], size)
    if not os.path.exists(spec):
        raise FileNotFoundError(f"input image not found: {spec}")
    return read_image(spec)


def center_crop(img, size):
    h, w = img.shape[:2]
    if size > min(h, w):
        raise ConfigError(f"crop {size} exceeds image size {h}x{w}")
    r, c = (h - size) // 2, (w - size) // 2
    return img[r:r + size, c:c + size]


def crop_to_multiple(img, K):
    h, w = img.shape[:2]
    return img[:h - h % K, :w - w % K]


# -- degradations ------------------------------------------------------------

def degrade(task, truth, args, channel=0):
    """Simulate `task` on a single-channel image; seeds are offset per channel."""
    seed = args.seed + 1000 * channel
    if task == "deblur":
        h = parse_kernel(args.kernel or "gauss:9:1")
        y = add_gaussian_noise(circ_conv(truth, h), args.noise, seed)
        return Degraded(deblur_problem(y, h), y.copy(), np.clip(y, 0, 1))
    if task == "interp":
        if not 0 < args.sample_rate <= 1:
            raise ConfigError(f"sample rate must lie in (0, 1], got {args.sample_rate}")
        rng = np.random.default_rng(seed)
        mask = (rng.random(truth.shape) < args.sample_rate).astype(np.float64)
        y = mask * add_gaussian_noise(truth, args.noise, seed + 1)
        # unobserved pixels start at the mean of the observed ones
        fill = float(y.sum() / max(mask.sum(), 1.0))
        init = np.where(mask > 0, y, fill)
        return Degraded(interp_problem(y, mask), init, np.clip(init, 0, 1))
    if task == "superres":
        K = args.factor
        h = parse_kernel(args.kernel or f"bicubic:{K}")
        model = SuperResModel.build(h, K, truth.shape)
        y = add_gaussian_noise(superres_forward(model, truth), args.noise, seed)
        init = np.kron(y, np.ones((K, K)))
        return Degraded(superres_problem(model, y), init, np.clip(init, 0, 1))
    if task == "qis":
        K = args.factor ** 2
        alpha = float(K) if args.alpha is None else args.alpha
        bits = qis_simulate(np.clip(truth, 0, 1), K, alpha, seed)
        if args.bits_out and channel == 0:
            write_bits(bits, args.bits_out)
        obs = QisObservation.from_bits(bits, K, alpha)
        mle = qis_mle(obs)
        return Degraded(qis_problem(obs, use_lookup=args.lookup), mle.copy(), mle)
    raise ConfigError(f"unknown task {task!r}")


def write_bits(bits, path):
    """Store an ``(H, W, K)`` bit field as an ``H x (W K)`` 0/255 PGM."""
    h, w, k = bits.shape
    write_image(bits.reshape(h, w * k).astype(np.float64), path)


# -- running -----------------------------------------------------------------

def config_from_args(args, task=None):
    rho0, lam = args.rho0, args.lam
    if task == "qis":
        rho0 = QIS_DEFAULTS["rho0"] if rho0 is None else rho0
        lam = QIS_DEFAULTS["lam"] if lam is None else lam
    return PnPConfig(rho0=1e-5 if rho0 is None else rho0, lam=1e-4 if lam is None else lam,
                     gamma=args.gamma, eta=args.eta, tol=args.tol, rule=args.rule,
                     max_iter=args.max_iter)


def restore(task, truth, args, cfg=None, denoiser=None, init_seed=None):
    """Degrade and restore `truth` (grayscale or ``H x W x C``) channel by channel."""
    cfg = cfg or config_from_args(args, task)
    denoiser = denoiser or parse_denoiser(args.denoiser)
    truth = np.asarray(truth, dtype=np.float64)
    if truth.ndim not in (2, 3):
        raise ConfigError(f"input must be a 2-D or color image, got shape {truth.shape}")
    if task == "superres":
        truth = crop_to_multiple(truth, args.factor)
    channels = [truth] if truth.ndim == 2 else [truth[..., c] for c in range(truth.shape[2])]
    outs, bases, traces = [], [], []
    for c, chan in enumerate(channels):
        deg = degrade(task, chan, args, channel=c)
        init = deg.init
        if init_seed is not None:
            init = np.random.default_rng(init_seed + 1000 * c).random(chan.shape)
        out, trace = pnp_admm(deg.problem, denoiser, cfg, init, truth=chan)
        outs.append(out)
        bases.append(deg.baseline)
        traces.append(trace)
    stack = (lambda a: a[0]) if truth.ndim == 2 else (lambda a: np.stack(a, axis=-1))
    image, baseline = stack(outs), stack(bases)
    return Outcome(image=image, traces=traces, psnr=psnr(image, truth),
                   baseline_psnr=psnr(baseline, truth))


def trace_paths(path, count):
    if count == 1:
        return [path]
    root, ext = os.path.splitext(path)
    return [f"{root}.c{c}{ext}" for c in range(count)]


def format_summary(outcome):
    return f"{outcome.psnr:.6f},{outcome.iters},{outcome.final_delta:.6e}"


def cmd_restore(args):
    truth = load_input(args.input)
    if args.crop:
        truth = center_crop(truth, args.crop)
    outcome = restore(args.command, truth, args)
    if args.out:
        write_image(outcome.image, args.out)
    if args.trace:
        for trace, path in zip(outcome.traces, trace_paths(args.trace, len(outcome.traces))):
            trace.to_csv(path)
    if args.verbose:
        print(f"baseline_psnr={outcome.baseline_psnr:.4f}", file=sys.stderr)
    print(format_summary(outcome))
    return EXIT_OK


def _sweep_value(param, text):
    if param == "rule":
        return text
    if param == "seed":
        return int(text)
    return float(text)


def cmd_sweep(args):
    if args.param not in SWEEP_PARAMS:
        raise ConfigError(f"unknown sweep parameter {args.param!r}; choose from {SWEEP_PARAMS}")
    values = [_sweep_value(args.param, v) for v in
              (args.values or SWEEP_DEFAULTS[args.param]).split(",") if v]
    truth = load_input(args.input)
    if args.crop:
        truth = center_crop(truth, args.crop)
    base = config_from_args(args, args.task)
    denoiser = parse_denoiser(args.denoiser)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["param", "value", "trial", "final_psnr", "iters", "delta_fit"])
        for value in values:
            scores = []
            for trial in range(args.trials):
                trial_args = argparse.Namespace(**vars(args))
                trial_args.seed = args.seed + trial
                init_seed = None
                cfg = base
                if args.param == "seed":
                    init_seed = value
                else:
                    key = "rho0" if args.param == "rho0" else args.param
                    cfg = base.replace(**{key: value})
                outcome = restore(args.task, truth, trial_args, cfg, denoiser, init_seed)
                trace = outcome.traces[0]
                fit = analyze_trace(trace, tol=None).delta_fit if len(trace) >= 5 else math.nan
                writer.writerow([args.param, value, trial, f"{outcome.psnr:.6f}",
                                 outcome.iters, f"{fit:.6f}"])
                scores.append(outcome.psnr)
            if args.verbose:
                print(f"{args.param}={value} mean={np.mean(scores):.4f} "
                      f"std={np.std(scores):.4f}", file=sys.stderr)
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def cmd_kappa(args):
    """Search constant-rho inpainting iterates for an expansive NLM pair."""
    truth = load_input(args.input)
    if truth.ndim == 3:
        truth = truth.mean(axis=2)
    if args.crop:
        truth = center_crop(truth, args.crop)
    if max(truth.shape) > 64:
        raise ConfigError("the kappa probe is limited to images of at most 64x64")
    params = NlmParams(args.patch, args.window, args.bandwidth)
    rng = np.random.default_rng(args.seed)
    mask = (rng.random(truth.shape) < args.sample_rate).astype(np.float64)
    y = mask * truth
    den = Denoiser(lambda sigma, img: denoise_nlm(params, img), name="nlm-fixed")
    candidates = []
    cfg = PnPConfig(rho0=args.rho0 or 1.0, lam=args.lam or 1e-4, rule="constant",
                    tol=args.tol, max_iter=args.max_iter)
    pnp_admm(interp_problem(y, mask), den, cfg, y,
             callback=lambda state, row: candidates.append(state.x + state.u))
    res = kappa_search(candidates, params, max_pairs=args.max_pairs, seed=args.seed,
                       full=args.full)
    print(f"kappa={res.kappa:.6f} pair={res.pair[0]},{res.pair[1]} evaluated={res.evaluated} "
          f"kappa_fixed_max={res.kappa_fixed_max:.6f}")
    return EXIT_OK


def cmd_certify(args):
    den = parse_denoiser(args.denoiser)
    C = args.C if args.C is not None else den.bound_constant
    if C is None:
        raise ConfigError(f"denoiser {args.denoiser!r} declares no bound constant; pass --C")
    rng = np.random.default_rng(args.seed)
    inputs = [rng.random((args.size, args.size)) for _ in range(args.trials)]
    sigmas = 10.0 ** rng.uniform(-4, 0, size=args.trials)
    # pair each input with one sigma
    ratios = [certify_bounded(den, C, [x], [s]).max_ratio for x, s in zip(inputs, sigmas)]
    worst = max(ratios)
    print(f"C={C:g} pairs={len(ratios)} max_ratio={worst:.6f} {'PASS' if worst <= 1 else 'FAIL'}")
    return EXIT_OK


# -- argument parsing --------------------------------------------------------

def _solver_flags(p):
    p.add_argument("--rho0", type=float, default=None, help="initial penalty (default 1e-5)")
    p.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="regularization weight (default 1e-4)")
    p.add_argument("--gamma", type=float, default=1.2)
    p.add_argument("--eta", type=float, default=0.5)
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--rule", choices=("monotone", "adaptive", "constant"), default="adaptive")
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--denoiser", default="damped-nlm")
    p.add_argument("--seed", type=int, default=0)


def _task_flags(p, task=None):
    p.add_argument("input", help="PGM/PFM image or synthetic:<name>[:<size>]")
    p.add_argument("--kernel", default=None, help="gauss:<size>:<std>, bicubic:<K>, delta or "
                                                  "file:<path>")
    p.add_argument("--factor", type=int, default=2 if task in ("superres", "qis") else 1,
                   help="decimation factor (superres) or per-axis oversampling (qis)")
    p.add_argument("--noise", type=float, default=5 / 255 if task == "deblur" else 0.0)
    p.add_argument("--sample-rate", type=float, default=0.3)
    p.add_argument("--alpha", type=float, default=None, help="QIS gain (default K)")
    p.add_argument("--lookup", action="store_true", help="use QIS lookup tables")
    p.add_argument("--bits-out", default=None, help="write the QIS bit field as a PGM")
    p.add_argument("--crop", type=int, default=None, help="center crop size")
    p.add_argument("--trace", default=None, help="trace CSV path")
    p.add_argument("--out", default=None, help="output image path")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="pnpadmm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for task in TASKS:
        p = sub.add_parser(task, help=f"simulate and restore ({task})")
        _task_flags(p, task)
        _solver_flags(p)
        p.set_defaults(func=cmd_restore)

    p = sub.add_parser("sweep", help="CSV of final PSNR over a parameter grid")
    p.add_argument("--task", choices=TASKS, default="deblur")
    p.add_argument("--param", required=True)
    p.add_argument("--values", default=None, help="comma-separated values")
    p.add_argument("--trials", type=int, default=1)
    _task_flags(p, "deblur")
    _solver_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("kappa", help="probe NLM expansiveness on inpainting iterates")
    p.add_argument("input")
    p.add_argument("--crop", type=int, default=None)
    p.add_argument("--sample-rate", type=float, default=0.3)
    p.add_argument("--patch", type=int, default=1)
    p.add_argument("--window", type=int, default=2)
    p.add_argument("--bandwidth", type=float, default=0.1)
    p.add_argument("--max-pairs", type=int, default=1000)
    p.add_argument("--full", action="store_true", help="use the full n x n weight matrix")
    _solver_flags(p)
    p.set_defaults(func=cmd_kappa, max_iter=60, tol=1e-12)

    p = sub.add_parser("certify", help="check the bounded-denoiser inequality")
    p.add_argument("--C", type=float, default=None, help="bound constant to test")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--size", type=int, default=16)
    p.add_argument("--denoiser", default="damped-nlm")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_certify)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"pnpadmm: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"pnpadmm: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, ArithmeticError) as exc:
        code = EXIT_CONFIG if isinstance(exc, ValueError) else EXIT_NUMERIC
        print(f"pnpadmm: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
