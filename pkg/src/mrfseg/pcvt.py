"""Path-Constrained Viterbi Training for a hidden second-order causal Markov mesh.

The mesh factorizes over anti-diagonals ``T_d = {(i, j): i + j = d}``; pixels
within a diagonal are ordered by decreasing row, so ``T_1 = (s[1,0], s[0,1])``.
Each pixel's causal parents are its upper and left neighbors, both on the
previous diagonal. Transition tensors are indexed ``a[up, left, current]``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numba
import numpy as np

from .core import ClassParams, DomainError, LabelMap, as_image, as_labels, check_shapes
from .emission import estimate_class_params, log_densities

log = logging.getLogger(__name__)

_TINY = np.finfo(np.float64).tiny


def _safe_log(p):
    return np.log(np.maximum(p, _TINY))


@dataclass(frozen=True)
class TransitionTensor:
    """``a[up, left, current]`` plus the initial distribution ``pi``."""

    a: np.ndarray
    pi: np.ndarray

    @property
    def n_labels(self) -> int:
        return self.pi.shape[0]

    def top_row(self) -> np.ndarray:
        """``[left, current]`` transitions for row 0, the missing upper parent
        marginalized over ``pi``."""
        return np.einsum("u,ulc->lc", self.pi, self.a)

    def left_column(self) -> np.ndarray:
        """``[up, current]`` transitions for column 0, the missing left parent
        marginalized over ``pi``."""
        return np.einsum("l,ulc->uc", self.pi, self.a)


def estimate_transitions(labels, n_labels: int | None = None) -> TransitionTensor:
    """Empirical transition frequencies over the interior of ``labels``.

    Parent pairs that never occur get a uniform row; ``pi`` is the marginal
    label frequency of the whole map.
    """
    labels = as_labels(labels, -1 if n_labels is None else n_labels)
    s = labels.labels
    L = labels.n_labels
    z, w = s.shape
    if z < 2 or w < 2:
        raise DomainError("transition estimation needs at least a 2x2 map")
    up = s[:-1, 1:].ravel()
    left = s[1:, :-1].ravel()
    cur = s[1:, 1:].ravel()
    counts = np.bincount((up * L + left) * L + cur, minlength=L**3).reshape(L, L, L).astype(np.float64)
    rows = counts.sum(axis=2, keepdims=True)
    a = np.where(rows > 0, counts / np.where(rows > 0, rows, 1.0), 1.0 / L)
    pi = labels.counts() / s.size
    return TransitionTensor(a, pi)


def diagonal_pixels(shape, d: int) -> tuple[np.ndarray, np.ndarray]:
    """Row and column indices of diagonal ``d``, by decreasing row."""
    z, w = shape
    i = np.arange(min(d, z - 1), max(0, d - w + 1) - 1, -1)
    return i, d - i


def n_diagonals(shape) -> int:
    return shape[0] + shape[1] - 1


@dataclass
class DiagonalCandidates:
    """Candidate label sequences per diagonal, best first.

    ``sequences[d]`` is an ``(n_d, |T_d|)`` integer array and ``scores[d]``
    the matching summed log-scores.
    """

    shape: tuple[int, int]
    sequences: list[np.ndarray]
    scores: list[np.ndarray]

    def packed(self):
        D = len(self.sequences)
        nmax = max(s.shape[0] for s in self.sequences)
        pmax = max(s.shape[1] for s in self.sequences)
        cand = np.zeros((D, nmax, pmax), dtype=np.int64)
        ncand = np.empty(D, dtype=np.int64)
        for d, seqs in enumerate(self.sequences):
            cand[d, : seqs.shape[0], : seqs.shape[1]] = seqs
            ncand[d] = seqs.shape[0]
        return cand, ncand


def _pixel_scores(image, params: ClassParams) -> np.ndarray:
    return log_densities(image, params) + _safe_log(params.freqs)[None, None, :]


def _select(score: np.ndarray, N: int) -> tuple[np.ndarray, np.ndarray]:
    """Best sequence plus its ``N - 1`` best single-position substitutions.

    ``score`` is ``(P, L)``; ties are broken by position, then label.
    """
    P, L = score.shape
    best = np.argmax(score, axis=1)
    base = score[np.arange(P), best]
    total = base.sum()
    delta = score - base[:, None]
    pos, lab = np.nonzero(np.arange(L)[None, :] != best[:, None])
    dv = delta[pos, lab]
    order = np.lexsort((lab, pos, -dv))[: N - 1]
    seqs = np.repeat(best[None, :], 1 + order.size, axis=0)
    seqs[1 + np.arange(order.size), pos[order]] = lab[order]
    scores = np.concatenate(([total], total + dv[order]))
    return seqs, scores


def select_paths(image, params: ClassParams, d: int, N: int) -> tuple[np.ndarray, np.ndarray]:
    """Candidate sequences for diagonal ``d``: the pixelwise argmax of
    emission times marginal frequency, then its best ``N - 1`` single-state
    perturbations. Returns ``(sequences, scores)``."""
    if N < 1:
        raise DomainError("N must be at least 1")
    image = as_image(image)
    ii, jj = diagonal_pixels(image.shape, d)
    sc = _pixel_scores(image, params)[ii, jj]
    return _select(sc, N)


def build_candidates(image, params: ClassParams, N: int) -> DiagonalCandidates:
    if N < 1:
        raise DomainError("N must be at least 1")
    image = as_image(image)
    sc = _pixel_scores(image, params)
    seqs, scores = [], []
    for d in range(n_diagonals(image.shape)):
        ii, jj = diagonal_pixels(image.shape, d)
        s, v = _select(sc[ii, jj], N)
        seqs.append(s)
        scores.append(v)
    return DiagonalCandidates(image.shape, seqs, scores)


def diagonal_transition_logprob(prev_seq, next_seq, transitions: TransitionTensor, shape, d: int) -> float:
    """``log p(T_{d+1} = next_seq | T_d = prev_seq)``.

    Pixels on row 0 or column 0 have a single parent; the missing one is
    marginalized over ``pi``.
    """
    prev_seq = np.asarray(prev_seq)
    next_seq = np.asarray(next_seq)
    pi_prev, _ = diagonal_pixels(shape, d)
    ii, jj = diagonal_pixels(shape, d + 1)
    if prev_seq.shape != pi_prev.shape or next_seq.shape != ii.shape:
        raise DomainError("sequence lengths do not match the diagonals")
    i0 = pi_prev[0]
    la = _safe_log(transitions.a)
    ltop = _safe_log(transitions.top_row())
    lleft = _safe_log(transitions.left_column())
    total = 0.0
    for p, (i, j) in enumerate(zip(ii, jj)):
        c = next_seq[p]
        if i > 0 and j > 0:
            total += la[prev_seq[i0 - (i - 1)], prev_seq[i0 - i], c]
        elif i == 0:
            total += ltop[prev_seq[i0], c]
        else:
            total += lleft[prev_seq[i0 - (i - 1)], c]
    return float(total)


@numba.njit(cache=True)
def _viterbi_kernel(cand, ncand, em, la, ltop, lleft, lpi):
    z, w, _ = em.shape
    D = z + w - 1
    nmax = cand.shape[1]
    emis = np.zeros((D, nmax))
    for d in range(D):
        i0 = min(d, z - 1)
        i1 = max(0, d - w + 1)
        for k in range(ncand[d]):
            acc = 0.0
            for p in range(i0 - i1 + 1):
                i = i0 - p
                acc += em[i, d - i, cand[d, k, p]]
            emis[d, k] = acc
    phi = np.zeros((D, nmax), dtype=np.int64)
    delta = np.empty(nmax)
    nxt = np.empty(nmax)
    for k in range(ncand[0]):
        delta[k] = lpi[cand[0, k, 0]] + emis[0, k]
    for d in range(D - 1):
        i0 = min(d, z - 1)
        j0 = min(d + 1, z - 1)
        j1 = max(0, d + 1 - w + 1)
        for l in range(ncand[d + 1]):
            best = -np.inf
            arg = 0
            for k in range(ncand[d]):
                acc = delta[k]
                for p in range(j0 - j1 + 1):
                    i = j0 - p
                    j = d + 1 - i
                    c = cand[d + 1, l, p]
                    if i > 0 and j > 0:
                        acc += la[cand[d, k, i0 - (i - 1)], cand[d, k, i0 - i], c]
                    elif i == 0:
                        acc += ltop[cand[d, k, i0], c]
                    else:
                        acc += lleft[cand[d, k, i0 - (i - 1)], c]
                if acc > best:
                    best = acc
                    arg = k
            nxt[l] = best + emis[d + 1, l]
            phi[d + 1, l] = arg
        for l in range(ncand[d + 1]):
            delta[l] = nxt[l]
    best = -np.inf
    k = 0
    for l in range(ncand[D - 1]):
        if delta[l] > best:
            best = delta[l]
            k = l
    out = np.empty((z, w), dtype=np.int64)
    for d in range(D - 1, -1, -1):
        i0 = min(d, z - 1)
        i1 = max(0, d - w + 1)
        for p in range(i0 - i1 + 1):
            i = i0 - p
            out[i, d - i] = cand[d, k, p]
        if d > 0:
            k = phi[d, k]
    return out, best


def viterbi_decode(image, params: ClassParams, transitions: TransitionTensor, candidates: DiagonalCandidates) -> tuple[LabelMap, float]:
    """Most probable diagonal path through the candidate sequences.

    Returns the stitched labeling and its log joint score. Ties between
    predecessors go to the smaller candidate index.
    """
    image = as_image(image)
    if tuple(candidates.shape) != tuple(image.shape):
        raise DomainError("candidates were built for a different image shape")
    if any(s.shape[0] == 0 for s in candidates.sequences):
        raise DomainError("every diagonal needs at least one candidate")
    em = log_densities(image, params)
    cand, ncand = candidates.packed()
    out, lp = _viterbi_kernel(
        cand,
        ncand,
        np.ascontiguousarray(em),
        _safe_log(transitions.a),
        _safe_log(transitions.top_row()),
        _safe_log(transitions.left_column()),
        _safe_log(transitions.pi),
    )
    return LabelMap(out, params.n_classes), float(lp)


def mesh_log_joint(labels, image, params: ClassParams, transitions: TransitionTensor) -> float:
    """Log joint probability of a full labeling and the image under the mesh model."""
    image = as_image(image)
    labels = as_labels(labels, params.n_classes)
    check_shapes(image, labels)
    s = labels.labels
    em = log_densities(image, params)
    total = float(np.take_along_axis(em, s[:, :, None], axis=2).sum())
    total += float(_safe_log(transitions.pi)[s[0, 0]])
    for d in range(n_diagonals(s.shape) - 1):
        pi_, pj = diagonal_pixels(s.shape, d)
        ni, nj = diagonal_pixels(s.shape, d + 1)
        total += diagonal_transition_logprob(s[pi_, pj], s[ni, nj], transitions, s.shape, d)
    return total


@dataclass
class PcvtReport:
    labels: LabelMap
    iterations: int
    decoded_log_prob_trace: list[float] = field(default_factory=list)
    converged: bool = False
    N_used: int = 0
    params: ClassParams | None = None
    transitions: TransitionTensor | None = None


def reestimate(image, labels: LabelMap, previous: ClassParams | None) -> ClassParams:
    """Emission parameters from a labeling; covariances are taken around the
    previous iterate's means, and classes absent from the map keep their
    previous parameters."""
    image = as_image(image)
    L = labels.n_labels
    counts = labels.counts()
    present = counts > 0
    if previous is None and not present.all():
        raise DomainError("a class is missing from the initial labeling and no parameters were given")
    q = image.bands
    means = np.empty((L, q)) if previous is None else np.array(previous.means, copy=True)
    covs = np.empty((L, q, q)) if previous is None else np.array(previous.covs, copy=True)
    x = image.pixels()
    s = labels.labels.ravel()
    for k in np.flatnonzero(present):
        xk = x[s == k]
        m = xk.mean(axis=0)
        c = m if previous is None else previous.means[k]
        d = xk - c
        means[k] = m
        covs[k] = d.T @ d / counts[k]
    return ClassParams(means, covs, counts / counts.sum())


def pcvt_iteration(image, labels: LabelMap, N: int, previous: ClassParams | None = None):
    """One estimate-then-decode step; returns ``(labels, log_prob, params, transitions)``."""
    params = reestimate(image, labels, previous)
    trans = estimate_transitions(labels)
    cands = build_candidates(image, params, N)
    new, lp = viterbi_decode(image, params, trans, cands)
    return new, lp, params, trans


def pcvt_segment(image, init, N: int = 20, max_iter: int = 100, params: ClassParams | None = None) -> PcvtReport:
    """Alternate parameter estimation and path-constrained decoding until the
    labeling repeats exactly or ``max_iter`` iterations have run."""
    if N < 1:
        raise DomainError("N must be at least 1")
    image = as_image(image)
    n_labels = params.n_classes if params is not None else -1
    s = as_labels(init, n_labels)
    check_shapes(image, s)
    report = PcvtReport(s, 0, [], False, N)
    prev = params
    for it in range(1, max_iter + 1):
        new, lp, prev, trans = pcvt_iteration(image, s, N, prev)
        report.decoded_log_prob_trace.append(lp)
        report.iterations = it
        report.params, report.transitions = prev, trans
        same = np.array_equal(new.labels, s.labels)
        s = new
        log.debug("pcvt iteration %d: log-prob %.4f", it, lp)
        if same:
            report.converged = True
            break
    report.labels = s
    return report
