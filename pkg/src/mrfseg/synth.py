"""Synthetic phantoms, class-conditional noise, smoothing and a Potts sampler.

Random streams come from numpy's Philox4x32 counter-based generator, so a
given seed reproduces the same draws on every platform.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .core import DomainError, LabelMap, MultiSpectralImage, as_image, as_labels


def rng_for(seed) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def two_circles(size: tuple[int, int] = (241, 241)) -> LabelMap:
    """Background 0 with two filled disks of label 1.

    Centers at 33% and 67% of each axis, radius 18% of the shorter side.
    """
    z, w = size
    if z < 32 or w < 32:
        raise DomainError("two_circles needs both sides >= 32")
    ii, jj = np.mgrid[0:z, 0:w]
    r2 = (0.18 * min(z, w)) ** 2
    out = np.zeros((z, w), dtype=np.int64)
    for fc in (0.33, 0.67):
        out[(ii - fc * z) ** 2 + (jj - fc * w) ** 2 <= r2] = 1
    return LabelMap(out, 2)


def binary_pattern(raster, threshold: float | None = None) -> LabelMap:
    """Two-class map from any grayscale raster: pixels above ``threshold``
    (default: midpoint of the value range) become label 1."""
    a = np.asarray(raster.data[:, :, 0] if isinstance(raster, MultiSpectralImage) else raster, dtype=np.float64)
    if threshold is None:
        threshold = 0.5 * (a.min() + a.max())
    out = (a > threshold).astype(np.int64)
    if out.min() == out.max():
        raise DomainError("raster has a single level; no binary pattern")
    return LabelMap(out, 2)


def logo_pattern(size: tuple[int, int] = (128, 128)) -> LabelMap:
    """A built-in binary emblem: a ring around three block letters.

    Stands in for a user-supplied logo in the N-sweep experiment.
    """
    z, w = size
    ii, jj = np.mgrid[0:z, 0:w]
    y = (ii + 0.5) / z
    x = (jj + 0.5) / w
    r = np.hypot(y - 0.5, x - 0.5)
    m = (r > 0.40) & (r < 0.47)
    stroke = 0.055

    def box(y0, y1, x0, x1):
        return (y >= y0) & (y < y1) & (x >= x0) & (x < x1)

    top, bot = 0.33, 0.67
    # U
    m |= box(top, bot, 0.20, 0.20 + stroke) | box(top, bot, 0.35 - stroke, 0.35) | box(bot - stroke, bot, 0.20, 0.35)
    # T
    m |= box(top, top + stroke, 0.41, 0.59) | box(top, bot, 0.5 - stroke / 2, 0.5 + stroke / 2)
    # N with a stepped diagonal
    m |= box(top, bot, 0.65, 0.65 + stroke) | box(top, bot, 0.80 - stroke, 0.80)
    t = (y - top) / (bot - top)
    m |= (t >= 0) & (t <= 1) & (np.abs(x - (0.65 + t * 0.15)) < stroke / 1.5)
    return LabelMap(m.astype(np.int64), 2)


@dataclass(frozen=True)
class NoiseSpec:
    """Single-band Gaussian noise per class: ``N(means[l], stds[l]**2)``."""

    means: tuple[float, ...]
    stds: tuple[float, ...]
    seed: int = 0

    def __post_init__(self):
        means = tuple(float(m) for m in self.means)
        stds = tuple(float(s) for s in self.stds)
        if len(means) != len(stds):
            raise DomainError("means and stds differ in length")
        if any(not s > 0 for s in stds):
            raise DomainError("standard deviations must be positive")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "stds", stds)
        object.__setattr__(self, "seed", int(self.seed))


def render_noise(labels, spec: NoiseSpec) -> MultiSpectralImage:
    """Draw every pixel independently from its class's Gaussian."""
    labels = as_labels(labels)
    present = labels.present()
    if present.size and present.max() >= len(spec.means):
        raise DomainError(f"no noise parameters for class {int(present.max())}")
    s = labels.labels
    z = rng_for(spec.seed).standard_normal(s.shape)
    mu = np.asarray(spec.means)[s]
    sd = np.asarray(spec.stds)[s]
    return MultiSpectralImage(mu + sd * z)


def smooth(image, size: int = 5) -> MultiSpectralImage:
    """``size x size`` mean filter with border replication."""
    image = as_image(image)
    if image.bands != 1:
        raise DomainError("smoothing is defined for single-band images")
    a = image.data[:, :, 0]
    h = size // 2
    padded = np.pad(a, h, mode="edge")
    windows = np.lib.stride_tricks.sliding_window_view(padded, (size, size))
    return MultiSpectralImage(windows.mean(axis=(2, 3)))


@numba.njit(cache=True)
def _gibbs_sweep(s, L, beta, u):
    z, w = s.shape
    counts = np.zeros(L)
    probs = np.zeros(L)
    for i in range(z):
        for j in range(w):
            counts[:] = 0.0
            for di in range(-1, 2):
                for dj in range(-1, 2):
                    if di == 0 and dj == 0:
                        continue
                    a = i + di
                    b = j + dj
                    if 0 <= a < z and 0 <= b < w:
                        counts[s[a, b]] += 1.0
            mx = -np.inf
            for l in range(L):
                if beta * counts[l] > mx:
                    mx = beta * counts[l]
            tot = 0.0
            for l in range(L):
                probs[l] = np.exp(beta * counts[l] - mx)
                tot += probs[l]
            r = u[i, j] * tot
            acc = 0.0
            pick = L - 1
            for l in range(L):
                acc += probs[l]
                if r < acc:
                    pick = l
                    break
            s[i, j] = pick


def potts_gibbs(size: tuple[int, int], n_labels: int, beta: float, sweeps: int, seed=0) -> LabelMap:
    """Raster-scan single-site Gibbs sampler for the second-order Potts prior,
    started from i.i.d. uniform labels."""
    if sweeps < 1:
        raise DomainError("sweeps must be at least 1")
    if n_labels < 1:
        raise DomainError("need at least one label")
    rng = rng_for(seed)
    z, w = size
    s = rng.integers(0, n_labels, size=(z, w)).astype(np.int64)
    for _ in range(sweeps):
        _gibbs_sweep(s, n_labels, float(beta), rng.random((z, w)))
    return LabelMap(s, n_labels)
