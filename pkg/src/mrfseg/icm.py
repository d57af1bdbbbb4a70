"""Iterated Conditional Modes on the second-order Potts posterior."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .core import ClassParams, DomainError, LabelMap, NeighborhoodSystem, as_image, as_labels, check_shapes
from .emission import log_densities
from .potts import agreement_count, agreement_counts, estimate_beta

log = logging.getLogger(__name__)

SYSTEM = NeighborhoodSystem.SECOND_ORDER


def icm_local_score(pos, candidate: int, image, params: ClassParams, labels, beta: float) -> float:
    """``log p(I_ij | candidate) + beta * U_ij(candidate)`` against the current map."""
    image = as_image(image)
    labels = as_labels(labels, params.n_classes)
    check_shapes(image, labels)
    i, j = pos
    ld = log_densities(image.data[i : i + 1, j : j + 1], params)[0, 0, candidate]
    return float(ld + beta * agreement_count(labels, pos, candidate, SYSTEM))


@dataclass
class IcmReport:
    labels: LabelMap
    iterations: int
    changed_per_iteration: list[int] = field(default_factory=list)
    beta_trace: list[float] = field(default_factory=list)
    converged: bool = False


def icm_sweep(s: np.ndarray, ld: np.ndarray, beta: float) -> int:
    """One sweep of the 3x3 cyclic visiting scheme, in place. Returns the number of changes.

    Cycle ``(a, b)`` updates every pixel with ``i % 3 == a`` and ``j % 3 == b``
    at once; such pixels are never 8-neighbors of each other.
    """
    L = ld.shape[2]
    changed = 0
    for a in range(3):
        for b in range(3):
            sub = (slice(a, None, 3), slice(b, None, 3))
            cur = s[sub]
            if cur.size == 0:
                continue
            counts = agreement_counts(LabelMap(s, L), SYSTEM)
            g = np.moveaxis(ld[sub], 2, 0) + beta * counts[(slice(None),) + sub]
            best = g.max(axis=0)
            keep = np.take_along_axis(g, cur[None], axis=0)[0] >= best
            new = np.where(keep, cur, np.argmax(g, axis=0))
            changed += int(np.count_nonzero(new != cur))
            s[sub] = new
    return changed


def icm_segment(
    image,
    init,
    params: ClassParams,
    max_iter: int = 100,
    reestimate_beta: bool = True,
    beta_override: float | None = None,
    bracket: tuple[float, float] = (-10.0, 10.0),
) -> IcmReport:
    """ICM from ``init``; beta is re-estimated from the current map before each
    sweep unless ``beta_override`` is given or ``reestimate_beta`` is off.

    Emission parameters stay fixed.
    """
    image = as_image(image)
    init = as_labels(init, params.n_classes)
    check_shapes(image, init)
    if init.n_labels != params.n_classes:
        raise DomainError("label count of init does not match parameters")
    ld = log_densities(image, params)
    s = np.array(init.labels, copy=True)

    def current_beta():
        if beta_override is not None:
            return float(beta_override)
        try:
            return estimate_beta(LabelMap(s, params.n_classes), SYSTEM, bracket).beta
        except DomainError:
            return float(bracket[1])

    beta = current_beta()
    changes: list[int] = []
    betas: list[float] = []
    converged = False
    for it in range(1, max_iter + 1):
        if reestimate_beta and it > 1:
            beta = current_beta()
        betas.append(beta)
        n = icm_sweep(s, ld, beta)
        changes.append(n)
        log.debug("icm sweep %d: beta=%.4f changed=%d", it, beta, n)
        if n == 0:
            converged = True
            break
    return IcmReport(LabelMap(s, params.n_classes), len(changes), changes, betas, converged)
