"""Gaussian emissions, maximum-likelihood classification and mixture EM.

Everything is handled in the log domain.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .core import (
    ClassParams,
    ConvergenceError,
    DomainError,
    LabelMap,
    MultiSpectralImage,
    as_image,
    as_labels,
    check_shapes,
)

log = logging.getLogger(__name__)

_LOG_2PI = np.log(2.0 * np.pi)


def gaussian_log_density(x, mean, cov) -> float:
    """Log of the multivariate normal density N(x; mean, cov)."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
    cov = np.atleast_2d(np.asarray(cov, dtype=np.float64))
    q = x.shape[0]
    if mean.shape != (q,) or cov.shape != (q, q):
        raise DomainError("dimension mismatch between x, mean and cov")
    try:
        chol = np.linalg.cholesky(0.5 * (cov + cov.T))
    except np.linalg.LinAlgError:
        raise DomainError("covariance is not positive definite") from None
    y = np.linalg.solve(chol, x - mean)
    return float(-0.5 * q * _LOG_2PI - np.log(np.diag(chol)).sum() - 0.5 * y @ y)


def log_densities(image, params: ClassParams) -> np.ndarray:
    """``(z, w, L)`` array of per-pixel, per-class emission log-densities."""
    image = as_image(image)
    if image.bands != params.bands:
        raise DomainError(f"image has {image.bands} bands, parameters have {params.bands}")
    x = image.pixels()
    n, q = x.shape
    out = np.empty((n, params.n_classes))
    for k in range(params.n_classes):
        chol = params.chol[k]
        if q == 1:
            y = (x[:, 0] - params.means[k, 0]) / chol[0, 0]
            maha = y * y
        else:
            y = np.linalg.solve(chol, (x - params.means[k]).T)
            maha = np.einsum("ij,ij->j", y, y)
        out[:, k] = -0.5 * q * _LOG_2PI - np.log(np.diag(chol)).sum() - 0.5 * maha
    return out.reshape(image.height, image.width, params.n_classes)


def ml_classify(image, params: ClassParams) -> LabelMap:
    """Pixelwise argmax of the emission density; ties go to the smallest label."""
    if params.n_classes < 2:
        raise DomainError("ML classification needs at least two classes")
    ld = log_densities(image, params)
    return LabelMap(np.argmax(ld, axis=2), params.n_classes)


def estimate_class_params(image, labels, n_labels: int | None = None, center=None) -> ClassParams:
    """Per-class empirical mean, biased covariance and marginal frequency.

    If ``center`` (an ``(L, q)`` array, typically the previous iterate's means)
    is given, covariances are accumulated around it instead of the fresh means.
    """
    image = as_image(image)
    labels = as_labels(labels, -1 if n_labels is None else n_labels)
    check_shapes(image, labels)
    L = labels.n_labels if n_labels is None else n_labels
    x = image.pixels()
    s = labels.labels.ravel()
    counts = np.bincount(s, minlength=L)
    for k in range(L):
        if counts[k] == 0:
            raise DomainError(f"class {k} has no pixels")
    q = image.bands
    means = np.empty((L, q))
    covs = np.empty((L, q, q))
    for k in range(L):
        xk = x[s == k]
        means[k] = xk.mean(axis=0)
        c = means[k] if center is None else np.asarray(center, dtype=np.float64)[k]
        d = xk - c
        covs[k] = d.T @ d / counts[k]
    return ClassParams(means, covs, counts / counts.sum())


def histogram_modes(
    values, bins: int = 64, min_separation: int = 2, min_prominence: float = 0.1, min_height: float = 0.05
) -> np.ndarray:
    """Mode locations of a 1-D sample, strongest first.

    The histogram is smoothed with a 5-tap binomial kernel, then local maxima
    are accepted greedily by height. A peak is rejected if it lies within
    ``min_separation`` bins of an accepted one, if it is lower than
    ``min_height`` times the tallest peak (sparse tails), or if the valley
    separating it from any higher accepted peak is shallower than
    ``min_prominence`` times its own height.
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    lo, hi = values.min(), values.max()
    if hi <= lo:
        return np.array([lo])
    counts, edges = np.histogram(values, bins=bins, range=(lo, hi))
    kernel = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
    h = np.convolve(np.pad(counts.astype(float), 2, mode="edge"), kernel, mode="valid")
    centers = 0.5 * (edges[:-1] + edges[1:])
    padded = np.concatenate(([-np.inf], h, [-np.inf]))
    peaks = [i for i in range(bins) if padded[i + 1] > padded[i] and padded[i + 1] >= padded[i + 2]]
    peaks.sort(key=lambda i: (-h[i], i))
    accepted: list[int] = []
    for p in peaks:
        if h[p] <= 0 or h[p] < min_height * h.max():
            continue
        if any(abs(p - a) <= min_separation for a in accepted):
            continue
        ok = True
        for a in accepted:
            lo_i, hi_i = min(a, p), max(a, p)
            valley = h[lo_i : hi_i + 1].min()
            if h[p] - valley < min_prominence * h[p]:
                ok = False
                break
        if ok:
            accepted.append(p)
    return centers[accepted]


@dataclass
class EmFitReport:
    iterations: int
    final_log_likelihood: float
    converged: bool
    params: ClassParams
    trace: list[float] = field(default_factory=list)
    reseeded: bool = False


def _seed_from_modes(x: np.ndarray, L: int) -> ClassParams | None:
    if x.shape[1] != 1:
        return None
    modes = histogram_modes(x[:, 0])
    if len(modes) < L:
        return None
    centers = np.sort(modes[:L])
    assign = np.argmin(np.abs(x[:, 0, None] - centers[None, :]), axis=1)
    counts = np.bincount(assign, minlength=L)
    if np.any(counts < 2):
        return None
    var = np.array([x[assign == k, 0].var() for k in range(L)])
    var = np.maximum(var, 1e-6 * x[:, 0].var() + 1e-12)
    return ClassParams(centers[:, None], var[:, None, None], counts / counts.sum())


def _seed_random(x: np.ndarray, L: int, rng: np.random.Generator) -> ClassParams:
    n, q = x.shape
    uniq = np.unique(x, axis=0)
    pick = rng.choice(len(uniq), size=min(L, len(uniq)), replace=False)
    means = uniq[pick]
    if len(means) < L:
        means = np.vstack([means, means[:1] + np.arange(1, L - len(means) + 1)[:, None]])
    cov = np.atleast_2d(np.cov(x.T, bias=True)) if n > 1 else np.eye(q)
    cov = cov + 1e-9 * (np.trace(cov) / q + 1.0) * np.eye(q)
    order = np.argsort(means[:, 0], kind="stable")
    return ClassParams(means[order], np.repeat(cov[None], L, axis=0), np.full(L, 1.0 / L))


def _floor_cov(c: np.ndarray) -> np.ndarray:
    c = 0.5 * (c + c.T)
    vals, vecs = np.linalg.eigh(c)
    top = max(vals.max(), 0.0)
    floor = 1e-6 * top if top > 0 else 1e-12
    vals = np.maximum(vals, floor)
    return (vecs * vals) @ vecs.T


def _e_step(x, means, covs, weights):
    n, q = x.shape
    L = means.shape[0]
    logp = np.empty((n, L))
    for k in range(L):
        chol = np.linalg.cholesky(covs[k])
        y = np.linalg.solve(chol, (x - means[k]).T)
        logp[:, k] = (
            np.log(weights[k]) if weights[k] > 0 else -np.inf
        ) - 0.5 * q * _LOG_2PI - np.log(np.diag(chol)).sum() - 0.5 * np.einsum("ij,ij->j", y, y)
    mx = logp.max(axis=1, keepdims=True)
    lse = mx[:, 0] + np.log(np.exp(logp - mx).sum(axis=1))
    resp = np.exp(logp - lse[:, None])
    return resp, lse


def em_fit(image, n_classes: int, init="modes", max_iter: int = 500, tol: float = 1e-9, seed: int | None = 0) -> EmFitReport:
    """Fit an ``n_classes`` Gaussian mixture to the pixel vectors by EM.

    ``init`` is a ``ClassParams``, ``"modes"`` (histogram modes, falling back
    to random seeding when fewer than ``n_classes`` modes exist) or
    ``"random"``. Iteration stops when the gain in mean per-pixel
    log-likelihood drops below ``tol``.
    """
    image = as_image(image)
    L = int(n_classes)
    if L < 1 or max_iter < 1 or not tol > 0:
        raise DomainError("em_fit needs n_classes >= 1, max_iter >= 1 and tol > 0")
    x = image.pixels()
    n, q = x.shape
    rng = np.random.Generator(np.random.Philox(seed))

    if L == 1:
        mean = x.mean(axis=0)
        d = x - mean
        params = ClassParams(mean[None], (d.T @ d / n)[None], np.ones(1))
        ll = float(np.sum(log_densities(image, params)))
        return EmFitReport(1, ll, True, params, [ll])

    if isinstance(init, ClassParams):
        start = init
    elif init == "modes":
        start = _seed_from_modes(x, L)
        if start is None:
            log.info("fewer than %d histogram modes; seeding EM randomly", L)
            start = _seed_random(x, L, rng)
    elif init == "random":
        start = _seed_random(x, L, rng)
    else:
        raise DomainError(f"unknown EM initialization {init!r}")
    if start.n_classes != L or start.bands != q:
        raise DomainError("initial parameters do not match n_classes / bands")

    means = start.means.copy()
    covs = start.covs.copy()
    weights = start.freqs.copy()
    trace: list[float] = []
    reseeded = False
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        resp, lse = _e_step(x, means, covs, weights)
        ll = float(lse.sum())
        if trace and (ll - trace[-1]) / n < tol:
            trace.append(ll)
            converged = True
            break
        trace.append(ll)
        mass = resp.sum(axis=0)
        collapsed = np.flatnonzero(mass < q + 1)
        if collapsed.size:
            if reseeded:
                raise ConvergenceError(f"class {int(collapsed[0])} collapsed twice during EM")
            reseeded = True
            worst = np.argsort(lse, kind="stable")
            for r, k in enumerate(collapsed):
                means[k] = x[worst[r]]
                covs[k] = _floor_cov(np.atleast_2d(np.cov(x.T, bias=True)))
                weights[k] = 1.0 / L
            weights = weights / weights.sum()
            trace = []
            continue
        weights = mass / n
        for k in range(L):
            r = resp[:, k]
            means[k] = r @ x / mass[k]
            d = x - means[k]
            covs[k] = _floor_cov((d * r[:, None]).T @ d / mass[k])

    order = np.argsort(means[:, 0], kind="stable")
    params = ClassParams(means[order], covs[order], weights[order] / weights.sum())
    return EmFitReport(it, trace[-1], converged, params, trace, reseeded)


def em_ml_classify(image, n_classes: int, init="modes", seed: int | None = 0, **kw) -> tuple[LabelMap, EmFitReport]:
    """Unsupervised ML: fit the mixture by EM, then classify by emission only."""
    report = em_fit(image, n_classes, init=init, seed=seed, **kw)
    return ml_classify(image, report.params), report
