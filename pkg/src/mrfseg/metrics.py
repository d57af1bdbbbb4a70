"""Agreement statistics between a reference and a predicted labeling."""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

from .core import DomainError, LabelMap, as_labels


class UndefinedKappaError(DomainError):
    """Expected chance agreement is 1, so kappa has a zero denominator."""


@dataclass(frozen=True)
class ConfusionMatrix:
    """Proportions ``p[i, j]`` of pixels of reference class ``j`` predicted as ``i``."""

    p: np.ndarray
    n: int

    def __post_init__(self):
        p = np.asarray(self.p, dtype=np.float64)
        if p.ndim != 2 or p.shape[0] != p.shape[1]:
            raise DomainError("confusion matrix must be square")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise DomainError("confusion proportions must be non-negative and sum to 1")
        if int(self.n) < 1:
            raise DomainError("pixel count must be positive")
        p = p.copy()
        p.setflags(write=False)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "n", int(self.n))

    @classmethod
    def from_counts(cls, counts) -> "ConfusionMatrix":
        counts = np.asarray(counts, dtype=np.float64)
        n = counts.sum()
        return cls(counts / n, int(round(n)))

    @property
    def predicted_marginals(self) -> np.ndarray:
        """Row marginals ``p_i+``."""
        return self.p.sum(axis=1)

    @property
    def reference_marginals(self) -> np.ndarray:
        """Column marginals ``p_+j``."""
        return self.p.sum(axis=0)

    @property
    def chance_agreement(self) -> float:
        return float(self.predicted_marginals @ self.reference_marginals)


def confusion(reference, predicted) -> ConfusionMatrix:
    reference = as_labels(reference)
    predicted = as_labels(predicted)
    if reference.shape != predicted.shape:
        raise DomainError(f"shape mismatch: {reference.shape} vs {predicted.shape}")
    if reference.n_labels != predicted.n_labels:
        raise DomainError(f"label count mismatch: {reference.n_labels} vs {predicted.n_labels}")
    L = reference.n_labels
    idx = predicted.labels.ravel() * L + reference.labels.ravel()
    counts = np.bincount(idx, minlength=L * L).reshape(L, L)
    return ConfusionMatrix.from_counts(counts)


def overall_accuracy(cm: ConfusionMatrix) -> float:
    """Proportion of agreeing pixels, in [0, 1]."""
    return float(np.trace(cm.p))


def overall_accuracy_percent(cm: ConfusionMatrix) -> float:
    return 100.0 * overall_accuracy(cm)


def kappa(cm: ConfusionMatrix) -> float:
    pe = cm.chance_agreement
    if pe >= 1.0 - 1e-15:
        raise UndefinedKappaError("kappa is undefined when chance agreement is 1")
    return (overall_accuracy(cm) - pe) / (1.0 - pe)


@dataclass(frozen=True)
class KappaResult:
    kappa: float
    variance: float
    ci_low: float
    ci_high: float
    alpha: float

    @property
    def sigma(self) -> float:
        return math.sqrt(self.variance)

    @property
    def half_width(self) -> float:
        return 0.5 * (self.ci_high - self.ci_low)


def kappa_variance(cm: ConfusionMatrix) -> float:
    """Large-sample variance of kappa (Fleiss, Cohen and Everitt)."""
    k = kappa(cm)
    p = cm.p
    row = cm.predicted_marginals
    col = cm.reference_marginals
    pe = cm.chance_agreement
    diag = np.diag(p)
    first = float(np.sum(diag * (1.0 - (col + row) * (1.0 - k)) ** 2))
    # off-diagonal p[j, k] weighted by (p_+j + p_k+)^2
    w = (col[:, None] + row[None, :]) ** 2
    off = p * w
    second = (1.0 - k) ** 2 * float(off.sum() - np.trace(off))
    third = (k - pe * (1.0 - k)) ** 2
    var = (first + second - third) / (cm.n * (1.0 - pe) ** 2)
    return max(var, 0.0)


def normal_quantile(prob: float) -> float:
    return NormalDist().inv_cdf(prob)


def kappa_interval(cm: ConfusionMatrix, alpha: float = 0.05) -> KappaResult:
    """Kappa with its asymptotic normal ``100(1 - alpha)%`` confidence interval."""
    if not 0.0 < alpha < 1.0:
        raise DomainError("alpha must lie in (0, 1)")
    if cm.n < 2:
        raise DomainError("need at least two pixels for a kappa interval")
    k = kappa(cm)
    var = kappa_variance(cm)
    half = normal_quantile(1.0 - alpha / 2.0) * math.sqrt(var)
    return KappaResult(k, var, k - half, k + half, alpha)


def relative_improvement(oa_method: float, oa_ml: float) -> float:
    """Relative improvement over the ML baseline; both accuracies in percent."""
    if oa_ml >= 100.0:
        raise DomainError("relative improvement is undefined when the baseline is perfect")
    return (oa_method - oa_ml) / (100.0 - oa_ml) * 100.0


def relative_improvement_from_proportions(oa_method: float, oa_ml: float) -> float:
    """Same as :func:`relative_improvement` with accuracies in [0, 1]; result in percent."""
    return relative_improvement(100.0 * oa_method, 100.0 * oa_ml)


def match_labels(reference, predicted) -> LabelMap:
    """Relabel ``predicted`` by the class permutation that maximizes agreement
    with ``reference``. Unsupervised labelings carry arbitrary class names."""
    reference = as_labels(reference)
    predicted = as_labels(predicted, reference.n_labels)
    L = reference.n_labels
    idx = predicted.labels.ravel() * L + reference.labels.ravel()
    counts = np.bincount(idx, minlength=L * L).reshape(L, L)
    if L <= 8:
        best = max(itertools.permutations(range(L)), key=lambda perm: sum(counts[i, perm[i]] for i in range(L)))
        perm = np.array(best)
    else:
        from scipy.optimize import linear_sum_assignment

        rows, cols = linear_sum_assignment(-counts)
        perm = np.empty(L, dtype=np.int64)
        perm[rows] = cols
    return LabelMap(perm[predicted.labels], L)


CSV_COLUMNS = ("method", "OA", "kappa", "sigma", "ci_low", "ci_high", "RI")


@dataclass(frozen=True)
class EvaluationRow:
    method: str
    oa: float
    kappa: KappaResult
    ri: float | None

    def as_csv(self) -> list[str]:
        ri = "" if self.ri is None else f"{self.ri:.6f}"
        k = self.kappa
        return [self.method, f"{self.oa:.6f}", f"{k.kappa:.6f}", f"{k.sigma:.6f}", f"{k.ci_low:.6f}", f"{k.ci_high:.6f}", ri]


def evaluate(method: str, reference, predicted, baseline_oa: float | None = None, alpha: float = 0.05) -> EvaluationRow:
    """OA (proportion), kappa interval and, given a baseline OA (proportion),
    the relative improvement in percent."""
    cm = confusion(reference, predicted)
    oa = overall_accuracy(cm)
    try:
        kr = kappa_interval(cm, alpha)
    except UndefinedKappaError:
        kr = KappaResult(float("nan"), float("nan"), float("nan"), float("nan"), alpha)
    ri = None if baseline_oa is None else relative_improvement_from_proportions(oa, baseline_oa)
    return EvaluationRow(method, oa, kr, ri)


def write_csv(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow(row.as_csv())
