"""Potts prior: agreement counts, posterior energy and the pseudo-likelihood
estimate of the smoothness parameter."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import (
    ClassParams,
    DomainError,
    LabelMap,
    NeighborhoodSystem,
    PottsModel,
    as_labels,
    check_shapes,
    as_image,
    shifted_pairs,
)
from .emission import log_densities


class BracketError(DomainError):
    """The function does not change sign over the bracket."""


def agreement_counts(labels, system: NeighborhoodSystem = NeighborhoodSystem.SECOND_ORDER) -> np.ndarray:
    """``(L, z, w)`` array whose ``[l, i, j]`` entry counts neighbors of (i, j) labeled ``l``."""
    labels = as_labels(labels)
    if not system.is_isotropic:
        raise DomainError("agreement counts need an isotropic neighborhood")
    s = labels.labels
    L = labels.n_labels
    out = np.zeros((L,) + s.shape, dtype=np.int64)
    onehot = s[None, :, :] == np.arange(L)[:, None, None]
    for off in system.offsets:
        src, dst = shifted_pairs(s.shape, off)
        # the neighbor of pixel `src` at this offset lives at `dst`
        out[(slice(None),) + src] += onehot[(slice(None),) + dst]
    return out


def agreement_count(labels, pos, candidate: int, system: NeighborhoodSystem = NeighborhoodSystem.SECOND_ORDER) -> int:
    """Number of in-bounds neighbors of ``pos`` carrying ``candidate``."""
    labels = as_labels(labels)
    if not system.is_isotropic:
        raise DomainError("agreement counts need an isotropic neighborhood")
    s = labels.labels
    z, w = s.shape
    i, j = pos
    if not (0 <= i < z and 0 <= j < w):
        raise DomainError(f"pixel {pos} outside image of shape {s.shape}")
    n = 0
    for di, dj in system.offsets:
        a, b = i + di, j + dj
        if 0 <= a < z and 0 <= b < w and s[a, b] == candidate:
            n += 1
    return n


def same_label_pairs(labels, system: NeighborhoodSystem) -> int:
    """Number of unordered neighbor pairs carrying equal labels."""
    s = as_labels(labels).labels
    total = 0
    for off in system.half_offsets:
        src, dst = shifted_pairs(s.shape, off)
        total += int(np.count_nonzero(s[src] == s[dst]))
    return total


def posterior_energy(labels, image, params: ClassParams, model: PottsModel) -> float:
    """Negative log-posterior up to a constant: ``-sum log p(I|s) - beta * U_s``.

    ``U_s`` counts each same-label clique pair once.
    """
    image = as_image(image)
    labels = as_labels(labels, params.n_classes)
    check_shapes(image, labels)
    ld = log_densities(image, params)
    s = labels.labels
    data = np.take_along_axis(ld, s[:, :, None], axis=2).sum()
    return float(-data - model.beta * same_label_pairs(labels, model.neighborhood))


def _residual_from_counts(beta: float, own: np.ndarray, counts: np.ndarray, weight=None) -> float:
    # own: (n,) agreement with the pixel's label; counts: (L, n). Summing
    # (own - U(l)) * softmax_l per pixel stays exact where own ~ E[U].
    a = beta * counts
    a = a - a.max(axis=0, keepdims=True)
    e = np.exp(a)
    per_pixel = ((own[None, :] - counts) * e).sum(axis=0) / e.sum(axis=0)
    return float(per_pixel.sum() if weight is None else per_pixel @ weight)


def pseudolikelihood_residual(beta: float, labels, system: NeighborhoodSystem = NeighborhoodSystem.SECOND_ORDER) -> float:
    """Score of the log pseudo-likelihood in beta.

    Observed total agreement minus its expectation under the per-pixel
    conditionals ``p(l) ∝ exp(beta * U_ij(l))``. Strictly decreasing in beta
    for any map with at least two labels present.
    """
    labels = as_labels(labels)
    counts = agreement_counts(labels, system).reshape(labels.n_labels, -1)
    own = np.take_along_axis(counts, labels.labels.reshape(1, -1), axis=0)[0]
    return _residual_from_counts(beta, own.astype(np.float64), counts.astype(np.float64))


def brent_root(f: Callable[[float], float], lo: float, hi: float, tol: float = 1e-8, max_iter: int = 200, xtol: float | None = None) -> float:
    """Root of ``f`` on ``[lo, hi]`` by Brent's method.

    Combines bisection, secant and inverse quadratic interpolation. Returns
    once ``|f(x)| <= tol`` or the bracket has shrunk below ``xtol`` (defaults
    to ``tol``; pass 0 to run to machine resolution).
    """
    if not tol > 0:
        raise DomainError("tol must be positive")
    xtol = tol if xtol is None else xtol
    rtol = 4.0 * np.finfo(float).eps
    xpre, xcur = float(lo), float(hi)
    fpre, fcur = f(xpre), f(xcur)
    if fpre == 0.0:
        return xpre
    if fcur == 0.0:
        return xcur
    if fpre * fcur > 0:
        raise BracketError(f"no sign change on [{lo}, {hi}]: f={fpre:.6g}, {fcur:.6g}")
    xblk = fblk = spre = scur = 0.0
    for _ in range(max_iter):
        if fpre != 0.0 and fcur != 0.0 and (fpre < 0) != (fcur < 0):
            xblk, fblk = xpre, fpre
            spre = scur = xcur - xpre
        if abs(fblk) < abs(fcur):
            xpre, xcur, xblk = xcur, xblk, xcur
            fpre, fcur, fblk = fcur, fblk, fcur
        delta = 0.5 * (xtol + rtol * abs(xcur))
        sbis = 0.5 * (xblk - xcur)
        if fcur == 0.0 or abs(fcur) <= tol or abs(sbis) < delta:
            return xcur
        if abs(spre) > delta and abs(fcur) < abs(fpre):
            if xpre == xblk:
                # secant
                stry = -fcur * (xcur - xpre) / (fcur - fpre)
            else:
                # inverse quadratic interpolation
                dpre = (fpre - fcur) / (xpre - xcur)
                dblk = (fblk - fcur) / (xblk - xcur)
                stry = -fcur * (fblk * dblk - fpre * dpre) / (dblk * dpre * (fblk - fpre))
            if 2.0 * abs(stry) < min(abs(spre), 3.0 * abs(sbis) - delta):
                spre, scur = scur, stry
            else:
                spre = scur = sbis
        else:
            spre = scur = sbis
        xpre, fpre = xcur, fcur
        xcur += scur if abs(scur) > delta else math.copysign(delta, sbis)
        fcur = f(xcur)
    return xcur


class BetaStatus(enum.Enum):
    ROOT = "root"
    CLAMPED_LO = "clamped_lo"
    CLAMPED_HI = "clamped_hi"


@dataclass(frozen=True)
class BetaEstimate:
    beta: float
    residual_at_solution: float
    bracket: tuple[float, float]
    iterations: int
    status: BetaStatus


def estimate_beta(
    labels,
    system: NeighborhoodSystem = NeighborhoodSystem.SECOND_ORDER,
    bracket: tuple[float, float] = (-10.0, 10.0),
    tol: float = 1e-8,
    max_iter: int = 200,
) -> BetaEstimate:
    """Maximum pseudo-likelihood estimate of beta from a label map.

    If the score has no sign change inside ``bracket`` the endpoint with the
    smaller absolute score is returned with a clamped status.
    """
    labels = as_labels(labels)
    if len(labels.present()) < 2:
        raise DomainError("beta is not identifiable from a map with a single label")
    counts = agreement_counts(labels, system).reshape(labels.n_labels, -1)
    own = np.take_along_axis(counts, labels.labels.reshape(1, -1), axis=0)
    # pixels sharing (own, counts) contribute identically; collapse them
    uniq, mult = np.unique(np.vstack([own, counts]).T, axis=0, return_counts=True)
    uniq = uniq.T.astype(np.float64)
    mult = mult.astype(np.float64)
    calls = [0]

    def score(beta):
        calls[0] += 1
        return _residual_from_counts(beta, uniq[0], uniq[1:], mult)

    lo, hi = bracket
    f_lo, f_hi = score(lo), score(hi)
    if f_lo * f_hi > 0:
        if abs(f_lo) <= abs(f_hi):
            return BetaEstimate(lo, f_lo, (lo, hi), calls[0], BetaStatus.CLAMPED_LO)
        return BetaEstimate(hi, f_hi, (lo, hi), calls[0], BetaStatus.CLAMPED_HI)
    beta = brent_root(score, lo, hi, tol=tol, max_iter=max_iter, xtol=0.0)
    return BetaEstimate(beta, score(beta), (lo, hi), calls[0], BetaStatus.ROOT)


def beta_or_fallback(labels, system: NeighborhoodSystem, bracket=(-10.0, 10.0)) -> float:
    """Estimate beta, or return the bracket's upper end for single-label maps."""
    try:
        return estimate_beta(labels, system, bracket).beta
    except DomainError:
        return float(bracket[1])
