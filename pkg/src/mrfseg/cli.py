"""Command-line entry point: ``simulate``, ``segment``, ``evaluate`` and ``sweep-n``.

Exit codes: 0 success, 2 configuration error, 3 IO or parse error,
4 numeric/domain error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import raster
from .core import ClassParams, ConvergenceError, DomainError, LabelMap, MultiSpectralImage
from .emission import em_ml_classify, estimate_class_params, ml_classify
from .graphcut import gc_segment
from .icm import icm_segment
from .metrics import confusion, evaluate, match_labels, overall_accuracy, relative_improvement_from_proportions, write_csv
from .pcvt import pcvt_segment
from .synth import NoiseSpec, binary_pattern, logo_pattern, render_noise, smooth, two_circles

log = logging.getLogger("mrfseg")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DOMAIN = 0, 2, 3, 4
METHODS = ("ml", "em", "icm", "gc", "pcvt")
INITS = ("supervised", "em", "file")


class ConfigError(ValueError):
    """Invalid or inconsistent command-line configuration."""


def _floats(text: str, key: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"{key}: expected comma-separated numbers, got {text!r}") from None


def _ints(text: str, key: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"{key}: expected comma-separated integers, got {text!r}") from None


def _threads() -> int | None:
    raw = os.environ.get("MRFSEG_THREADS")
    if raw is None:
        return None
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n < 1:
        raise ConfigError(f"MRFSEG_THREADS: expected a positive integer, got {raw!r}")
    import numba

    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    return n


def _write_manifest(path: Path, items: dict) -> None:
    text = "".join(f"{k}={v}\n" for k, v in items.items())
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc


def _fmt_list(values) -> str:
    return ",".join(repr(float(v)) for v in values)


# ---------------------------------------------------------------- simulate


def cmd_simulate(args) -> int:
    mu = _floats(args.mu, "--mu")
    sigma = _floats(args.sigma, "--sigma")
    if len(mu) != 2 or len(sigma) != 2:
        raise ConfigError("--mu/--sigma: the phantoms are two-class; give two values each")
    if args.phantom == "two-circles":
        truth = two_circles((args.size, args.size))
    elif args.pattern_file:
        truth = binary_pattern(raster.read_image(args.pattern_file))
    else:
        truth = logo_pattern((args.size, args.size))
    image = render_noise(truth, NoiseSpec(mu, sigma, args.seed))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    raster.write_labels(out / "truth.pgm", truth)
    raster.write_image(out / "image.pgm", image)
    manifest = {
        "command": "simulate",
        "phantom": args.phantom,
        "pattern_file": args.pattern_file or "",
        "size": args.size,
        "mu": _fmt_list(mu),
        "sigma": _fmt_list(sigma),
        "seed": args.seed,
        "filter": int(args.filter),
        "truth": "truth.pgm",
        "image": "image.pgm",
    }
    if args.filter:
        raster.write_image(out / "image_filtered.pgm", smooth(image, 5))
        manifest["image_filtered"] = "image_filtered.pgm"
    _write_manifest(out / "manifest.txt", manifest)
    return EXIT_OK


# ----------------------------------------------------------------- segment


@dataclass
class RunConfig:
    method: str
    init: str
    L: int
    N: int = 20
    max_iter: int = 100
    beta: float | None = None
    seed: int = 0
    mu: list[float] = field(default_factory=list)
    sigma: list[float] = field(default_factory=list)
    init_file: str | None = None

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"method: unknown value {self.method!r}")
        if self.init not in INITS:
            raise ConfigError(f"init: unknown value {self.init!r}")
        if self.L < 1:
            raise ConfigError("L: must be at least 1")
        if self.N < 1:
            raise ConfigError("N: must be at least 1")
        if self.max_iter < 1:
            raise ConfigError("max_iter: must be at least 1")
        if self.method == "em" and self.init != "em":
            raise ConfigError("init: method em implies init em")
        if self.method == "ml" and self.init == "file":
            raise ConfigError("init: method ml takes supervised or em parameters, not a label file")
        if self.init == "supervised":
            if not self.mu or not self.sigma:
                raise ConfigError("mu: supervised initialization needs --mu and --sigma")
            if len(self.mu) != self.L or len(self.sigma) != self.L:
                raise ConfigError(f"mu: expected {self.L} means and standard deviations, got {len(self.mu)} and {len(self.sigma)}")
            if any(not s > 0 for s in self.sigma):
                raise ConfigError("sigma: standard deviations must be positive")
        if self.init == "file" and not self.init_file:
            raise ConfigError("init_file: init file needs --init-file")
        if self.beta is not None and self.method not in ("icm", "gc"):
            raise ConfigError("beta: only icm and gc take a smoothness parameter")


def _initial(image: MultiSpectralImage, cfg: RunConfig) -> tuple[LabelMap, ClassParams, dict]:
    info: dict = {}
    if cfg.init == "supervised":
        params = ClassParams.from_scalar(cfg.mu, cfg.sigma) if image.bands == 1 else None
        if params is None:
            raise ConfigError("mu: supervised scalar parameters need a single-band image")
        return ml_classify(image, params), params, info
    if cfg.init == "em":
        labels, rep = em_ml_classify(image, cfg.L, seed=cfg.seed)
        info.update(em_iterations=rep.iterations, em_log_likelihood=repr(rep.final_log_likelihood), em_converged=int(rep.converged))
        return labels, rep.params, info
    labels = raster.read_labels(cfg.init_file, cfg.L)
    return labels, estimate_class_params(image, labels, cfg.L), info


def run_segment(image: MultiSpectralImage, cfg: RunConfig) -> tuple[LabelMap, dict]:
    cfg.validate()
    t0 = time.perf_counter()
    init, params, info = _initial(image, cfg)
    report: dict = {"method": cfg.method, "init": cfg.init, "L": cfg.L, **info}
    if cfg.method in ("ml", "em"):
        labels = init
        report["iterations"] = 0
    elif cfg.method == "icm":
        r = icm_segment(image, init, params, max_iter=cfg.max_iter, beta_override=cfg.beta)
        labels = r.labels
        report.update(iterations=r.iterations, converged=int(r.converged), beta_trace=_fmt_list(r.beta_trace))
    elif cfg.method == "gc":
        r = gc_segment(image, init, params, beta_override=cfg.beta, max_cycles=cfg.max_iter)
        labels = r.labels
        report.update(iterations=r.cycles, converged=int(r.converged), beta=repr(r.beta), energy_trace=_fmt_list(r.energy_trace))
    else:
        r = pcvt_segment(image, init, N=cfg.N, max_iter=cfg.max_iter, params=params)
        labels = r.labels
        report.update(N=cfg.N, iterations=r.iterations, converged=int(r.converged), log_prob_trace=_fmt_list(r.decoded_log_prob_trace))
    report["seconds"] = f"{time.perf_counter() - t0:.3f}"
    return labels, report


def cmd_segment(args) -> int:
    cfg = RunConfig(
        method=args.method,
        init=args.init,
        L=args.L,
        N=args.N,
        max_iter=args.max_iter,
        beta=args.beta,
        seed=args.seed,
        mu=_floats(args.mu, "--mu") if args.mu else [],
        sigma=_floats(args.sigma, "--sigma") if args.sigma else [],
        init_file=args.init_file,
    )
    cfg.validate()
    image = raster.read_image(args.image)
    labels, report = run_segment(image, cfg)
    raster.write_labels(args.output, labels)
    _write_manifest(Path(args.report or f"{args.output}.report.txt"), report)
    return EXIT_OK


# ---------------------------------------------------------------- evaluate


def cmd_evaluate(args) -> int:
    truth = raster.read_labels(args.truth)
    rows = []
    baseline_oa = None
    if args.baseline:
        base = raster.read_labels(args.baseline, truth.n_labels)
        if args.match:
            base = match_labels(truth, base)
        baseline_oa = overall_accuracy(confusion(truth, base))
    for path in args.predicted:
        pred = raster.read_labels(path, truth.n_labels)
        if args.match:
            pred = match_labels(truth, pred)
        name = args.method if args.method and len(args.predicted) == 1 else Path(path).stem
        rows.append(evaluate(name, truth, pred, baseline_oa, alpha=args.alpha))
    write_csv(rows, args.out)
    return EXIT_OK


# ----------------------------------------------------------------- sweep-n


def cmd_sweep_n(args) -> int:
    import csv

    Ns = _ints(args.N, "--N")
    if not Ns or min(Ns) < 1:
        raise ConfigError("N: give one or more positive integers")
    image = raster.read_image(args.image)
    truth = raster.read_labels(args.truth)
    cfg = RunConfig(
        "pcvt",
        args.init,
        truth.n_labels,
        max_iter=args.max_iter,
        seed=args.seed,
        mu=_floats(args.mu, "--mu") if args.mu else [],
        sigma=_floats(args.sigma, "--sigma") if args.sigma else [],
        init_file=args.init_file,
    )
    cfg.validate()
    init, params, _ = _initial(image, cfg)
    oa_ml = overall_accuracy(confusion(truth, init))
    try:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["N", "iterations", "seconds", "RI"])
            for n in Ns:
                t0 = time.perf_counter()
                r = pcvt_segment(image, init, N=n, max_iter=args.max_iter, params=params)
                dt = time.perf_counter() - t0
                ri = relative_improvement_from_proportions(overall_accuracy(confusion(truth, r.labels)), oa_ml)
                writer.writerow([n, r.iterations, f"{dt:.3f}", f"{ri:.4f}"])
                fh.flush()
    except OSError as exc:
        raise OSError(f"cannot write {args.out}: {exc.strerror}") from exc
    return EXIT_OK


# ------------------------------------------------------------------ parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mrfseg", description="MAP segmentation with Potts and Markov mesh priors.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="write a synthetic phantom, its noisy image and a manifest")
    s.add_argument("--phantom", choices=("two-circles", "pattern"), default="two-circles")
    s.add_argument("--pattern-file", help="PGM to threshold into a binary pattern (default: built-in logo)")
    s.add_argument("--size", type=int, default=None, help="square side in pixels (241 for two-circles, 128 for pattern)")
    s.add_argument("--mu", required=True, help="class means in label order, e.g. 100,60")
    s.add_argument("--sigma", required=True, help="class standard deviations in label order")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--filter", action="store_true", help="also write a 5x5 mean-filtered image")
    s.add_argument("--out", default=".", help="output directory")
    s.set_defaults(func=cmd_simulate)

    g = sub.add_parser("segment", help="segment an image")
    g.add_argument("image")
    g.add_argument("output")
    g.add_argument("--method", choices=METHODS, default="icm")
    g.add_argument("--init", choices=INITS, default="em")
    g.add_argument("--L", type=int, default=2, help="number of classes")
    g.add_argument("--N", type=int, default=20, help="candidate sequences per diagonal (pcvt)")
    g.add_argument("--max-iter", type=int, default=100)
    g.add_argument("--beta", type=float, default=None, help="fixed smoothness parameter (icm, gc)")
    g.add_argument("--mu", help="supervised class means")
    g.add_argument("--sigma", help="supervised class standard deviations")
    g.add_argument("--init-file", help="initial label map for --init file")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--report", help="report path (default: OUTPUT.report.txt)")
    g.set_defaults(func=cmd_segment)

    e = sub.add_parser("evaluate", help="accuracy and kappa of predicted label maps")
    e.add_argument("truth")
    e.add_argument("predicted", nargs="+")
    e.add_argument("--out", required=True, help="CSV path")
    e.add_argument("--baseline", help="ML label map; adds the relative improvement column")
    e.add_argument("--method", help="method name for a single predicted map")
    e.add_argument("--alpha", type=float, default=0.05)
    e.add_argument("--match", action="store_true", help="relabel each map by the class permutation that best fits the truth")
    e.set_defaults(func=cmd_evaluate)

    w = sub.add_parser("sweep-n", help="PCVT relative improvement and time against N")
    w.add_argument("image")
    w.add_argument("--truth", required=True)
    w.add_argument("--N", default="1,2,3,4,5,10,15,20,25,35,50,75,100,150,200,250")
    w.add_argument("--init", choices=INITS, default="supervised")
    w.add_argument("--mu")
    w.add_argument("--sigma")
    w.add_argument("--init-file")
    w.add_argument("--max-iter", type=int, default=100)
    w.add_argument("--seed", type=int, default=0)
    w.add_argument("--out", required=True, help="CSV path")
    w.set_defaults(func=cmd_sweep_n)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
        _threads()
        if getattr(args, "size", 0) is None:
            args.size = 241 if args.phantom == "two-circles" else 128
        return args.func(args)
    except ConfigError as exc:
        print(f"mrfseg: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, raster.RasterError) as exc:
        print(f"mrfseg: {exc}", file=sys.stderr)
        return EXIT_IO
    except (DomainError, ConvergenceError, np.linalg.LinAlgError) as exc:
        print(f"mrfseg: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
