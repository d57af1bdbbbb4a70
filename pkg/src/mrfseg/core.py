"""Value types shared by every segmentation routine.

Images are stored as ``(z, w, q)`` float arrays, label maps as ``(z, w)``
integer arrays with labels ``0..L-1``. All types are frozen after
construction; their arrays are marked read-only.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class DomainError(ValueError):
    """Input outside the domain of an operation."""


class ConvergenceError(RuntimeError):
    """An iterative fit could not be brought to a valid state."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class MultiSpectralImage:
    """Observed intensities, ``data[i, j, b]`` for band ``b`` of pixel (i, j)."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3:
            raise DomainError(f"image must be 2-D or 3-D, got shape {data.shape}")
        z, w, q = data.shape
        if z < 1 or w < 1 or q < 1:
            raise DomainError(f"empty image shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise DomainError("image contains non-finite values")
        object.__setattr__(self, "data", _frozen(data))

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[:2]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def bands(self) -> int:
        return self.data.shape[2]

    def pixels(self) -> np.ndarray:
        """Row-major ``(n, q)`` view of the pixel vectors."""
        return self.data.reshape(-1, self.bands)


@dataclass(frozen=True)
class LabelMap:
    """A labeling ``s``; every entry lies in ``[0, n_labels)``."""

    labels: np.ndarray
    n_labels: int = -1

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2 or labels.size == 0:
            raise DomainError(f"label map must be non-empty 2-D, got shape {labels.shape}")
        if not np.issubdtype(labels.dtype, np.integer):
            if not np.all(labels == np.round(labels)):
                raise DomainError("label map contains non-integer values")
        labels = labels.astype(np.int64)
        n_labels = int(self.n_labels)
        if n_labels < 0:
            n_labels = int(labels.max()) + 1
        if labels.min() < 0 or labels.max() >= n_labels:
            raise DomainError(f"labels must lie in [0, {n_labels})")
        object.__setattr__(self, "labels", _frozen(labels))
        object.__setattr__(self, "n_labels", n_labels)

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    def counts(self) -> np.ndarray:
        return np.bincount(self.labels.ravel(), minlength=self.n_labels)

    def present(self) -> np.ndarray:
        """Sorted array of labels that occur at least once."""
        return np.flatnonzero(self.counts())


class NeighborhoodSystem(enum.Enum):
    """The three neighborhood kinds; values are offsets in row-major order.

    ``CAUSAL_DIAGONAL`` is the six-pixel neighborhood induced by a causal
    mesh whose parents are the upper and left pixels: the two parents, the
    two children (lower, right) and the two co-parents (upper-right,
    lower-left) that share a child with the pixel.
    """

    FIRST_ORDER = ((-1, 0), (0, -1), (0, 1), (1, 0))
    SECOND_ORDER = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))
    CAUSAL_DIAGONAL = ((-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0))

    @property
    def offsets(self) -> tuple[tuple[int, int], ...]:
        return self.value

    @property
    def is_isotropic(self) -> bool:
        return self is not NeighborhoodSystem.CAUSAL_DIAGONAL

    @property
    def half_offsets(self) -> tuple[tuple[int, int], ...]:
        """One offset per clique direction, so each unordered pair is seen once."""
        return tuple(o for o in self.value if o > (0, 0))


def neighbors(pos: tuple[int, int], system: NeighborhoodSystem, dims: tuple[int, int]) -> list[tuple[int, int]]:
    """In-bounds neighbors of ``pos``, clipped at the border."""
    i, j = pos
    z, w = dims
    if not (0 <= i < z and 0 <= j < w):
        raise DomainError(f"pixel {pos} outside image of shape {dims}")
    out = []
    for di, dj in system.offsets:
        a, b = i + di, j + dj
        if 0 <= a < z and 0 <= b < w:
            out.append((a, b))
    return out


def shifted_pairs(shape: tuple[int, int], offset: tuple[int, int]):
    """Slices ``(src, dst)`` such that ``x[src]`` and ``x[dst]`` are neighbor pairs
    at the given offset (dst = src + offset), restricted to in-bounds pixels."""
    z, w = shape
    di, dj = offset

    def span(d, n):
        return (slice(0, n - d), slice(d, n)) if d >= 0 else (slice(-d, n), slice(0, n + d))

    ri, rj = span(di, z), span(dj, w)
    return (ri[0], rj[0]), (ri[1], rj[1])


@dataclass(frozen=True)
class ClassParams:
    """Per-class Gaussian emission parameters and marginal class frequencies.

    ``means`` is ``(L, q)``, ``covs`` is ``(L, q, q)``, ``freqs`` is ``(L,)``.
    Covariances are validated by Cholesky factorization; a ridge of
    ``1e-8 * trace / q`` is added once if the first attempt fails.
    """

    means: np.ndarray
    covs: np.ndarray
    freqs: np.ndarray | None = None
    chol: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        means = np.atleast_1d(np.asarray(self.means, dtype=np.float64))
        if means.ndim == 1:
            means = means[:, None]
        L, q = means.shape
        covs = np.asarray(self.covs, dtype=np.float64)
        if covs.ndim == 1 and q == 1:
            covs = covs[:, None, None]
        if covs.shape != (L, q, q):
            raise DomainError(f"covariances must have shape {(L, q, q)}, got {covs.shape}")
        covs = covs.copy()
        chol = np.empty_like(covs)
        for k in range(L):
            c = 0.5 * (covs[k] + covs[k].T)
            if not np.all(np.isfinite(c)):
                raise DomainError(f"class {k}: non-finite covariance")
            try:
                chol[k] = np.linalg.cholesky(c)
            except np.linalg.LinAlgError:
                ridge = 1e-8 * abs(np.trace(c)) / q
                if ridge == 0.0:
                    ridge = 1e-8
                c = c + ridge * np.eye(q)
                try:
                    chol[k] = np.linalg.cholesky(c)
                except np.linalg.LinAlgError:
                    raise DomainError(f"class {k}: covariance is not positive definite") from None
            covs[k] = c
        if self.freqs is None:
            freqs = np.full(L, 1.0 / L)
        else:
            freqs = np.asarray(self.freqs, dtype=np.float64)
            if freqs.shape != (L,) or np.any(freqs < 0) or abs(freqs.sum() - 1.0) > 1e-9:
                raise DomainError("class frequencies must be a probability vector of length L")
        object.__setattr__(self, "means", _frozen(means))
        object.__setattr__(self, "covs", _frozen(covs))
        object.__setattr__(self, "freqs", _frozen(freqs))
        object.__setattr__(self, "chol", _frozen(chol))

    @classmethod
    def from_scalar(cls, means, sigmas, freqs=None) -> "ClassParams":
        """Single-band parameters from means and standard deviations."""
        sigmas = np.asarray(sigmas, dtype=np.float64)
        return cls(np.asarray(means, dtype=np.float64)[:, None], (sigmas**2)[:, None, None], freqs)

    @property
    def n_classes(self) -> int:
        return self.means.shape[0]

    @property
    def bands(self) -> int:
        return self.means.shape[1]

    def replace(self, **changes) -> "ClassParams":
        kw = {"means": self.means, "covs": self.covs, "freqs": self.freqs}
        kw.update(changes)
        return ClassParams(**kw)


@dataclass(frozen=True)
class PottsModel:
    beta: float
    neighborhood: NeighborhoodSystem = NeighborhoodSystem.SECOND_ORDER

    def __post_init__(self):
        if not np.isfinite(self.beta):
            raise DomainError("beta must be finite")
        if not self.neighborhood.is_isotropic:
            raise DomainError("the Potts prior needs an isotropic neighborhood")


def as_image(x) -> MultiSpectralImage:
    return x if isinstance(x, MultiSpectralImage) else MultiSpectralImage(x)


def as_labels(x, n_labels: int = -1) -> LabelMap:
    if isinstance(x, LabelMap):
        return x
    return LabelMap(x, n_labels)


def check_shapes(image: MultiSpectralImage, labels: LabelMap) -> None:
    if image.shape != labels.shape:
        raise DomainError(f"image shape {image.shape} does not match label map shape {labels.shape}")
