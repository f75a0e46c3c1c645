"""Saliency maps, NSS, Otsu thresholding and Congruency."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..scanpath import as_fixations


class DegenerateMapError(ValueError):
    """Raised for saliency maps without variation (std == 0)."""


@dataclass(frozen=True, eq=False)
class SaliencyMap:
    """Non-negative H x W saliency grid with normalized and Otsu views."""

    raw: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.raw, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"saliency map must be 2-D, got shape {arr.shape}")
        if np.any(arr < 0) or not np.all(np.isfinite(arr)):
            raise ValueError("saliency map values must be finite and non-negative")
        object.__setattr__(self, "raw", arr)

    @property
    def shape(self) -> tuple[int, int]:
        return self.raw.shape

    @property
    def normalized(self) -> np.ndarray:
        """(S - mean) / std, population std."""
        std = self.raw.std()
        if std == 0:
            raise DegenerateMapError("saliency map is constant (std = 0)")
        return (self.raw - self.raw.mean()) / std

    def binarized(self, bins: int = 256) -> np.ndarray:
        return otsu_binarize(self, bins)


def _raw(saliency) -> np.ndarray:
    return saliency.raw if isinstance(saliency, SaliencyMap) else np.asarray(saliency, dtype=np.float64)


def fixation_pixels(fixations, h: int, w: int) -> np.ndarray:
    """Distinct (row, col) pixels hit by normalized fixations.

    ``x`` maps to column ``round(x * w)`` clipped to the grid, matching the
    ``i / w`` coordinate grid used by the decoder.
    """
    fix = as_fixations(fixations)
    if fix.size == 0:
        raise ValueError("scanpath has no fixations")
    bad = np.flatnonzero(~np.all((fix >= 0) & (fix <= 1), axis=1))
    if bad.size:
        raise ValueError(f"fixation {int(bad[0])} at {tuple(fix[bad[0]])} lies outside [0, 1]^2")
    cols = np.clip(np.rint(fix[:, 0] * w), 0, w - 1).astype(int)
    rows = np.clip(np.rint(fix[:, 1] * h), 0, h - 1).astype(int)
    return np.unique(np.stack([rows, cols], axis=1), axis=0)


def fixation_map(fixations, h: int, w: int) -> np.ndarray:
    """Binary H x W map with a 1 at every fixated pixel."""
    q = np.zeros((h, w), dtype=bool)
    px = fixation_pixels(fixations, h, w)
    q[px[:, 0], px[:, 1]] = True
    return q


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    radius = int(np.ceil(3 * sigma))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-t ** 2 / (2 * sigma ** 2))
    return k / k.sum()


def build_saliency_map(scanpaths, sigma_px: float, h: int, w: int) -> SaliencyMap:
    """Gaussian-smoothed binary fixation map, scaled so its maximum is 1.

    ``scanpaths`` is a list of scanpaths (or a single one); zero padding is
    used at the borders and the kernel is truncated at 3 sigma.
    """
    if sigma_px <= 0:
        raise ValueError(f"sigma_px must be positive, got {sigma_px}")
    if not isinstance(scanpaths, (list, tuple)):
        scanpaths = [scanpaths]
    pts = [as_fixations(sp) for sp in scanpaths]
    pts = [p for p in pts if len(p)]
    if not pts:
        raise ValueError("need at least one fixation")
    q = fixation_map(np.concatenate(pts), h, w).astype(np.float64)
    k = gaussian_kernel1d(sigma_px)
    s = ndimage.correlate1d(q, k, axis=0, mode="constant")
    s = ndimage.correlate1d(s, k, axis=1, mode="constant")
    s = np.maximum(s, 0)
    return SaliencyMap(s / s.max())


def nss(scanpath, saliency) -> float:
    """Mean normalized saliency over the distinct fixated pixels."""
    sal = saliency if isinstance(saliency, SaliencyMap) else SaliencyMap(_raw(saliency))
    p = sal.normalized
    px = fixation_pixels(scanpath, *p.shape)
    return float(p[px[:, 0], px[:, 1]].mean())


def otsu_from_histogram(counts) -> int:
    """Index ``k`` of the best cut (class 0 = bins ``<= k``).

    Maximizes between-class variance ``w0 w1 (m0 - m1)^2`` over cuts that
    leave both classes non-empty; the lowest ``k`` wins ties.
    """
    c = np.asarray(counts, dtype=np.float64)
    if c.ndim != 1 or c.size < 2:
        raise ValueError("histogram needs at least two bins")
    total = c.sum()
    idx = np.arange(c.size, dtype=np.float64)
    w0 = np.cumsum(c)[:-1]
    s0 = np.cumsum(c * idx)[:-1]
    w1 = total - w0
    valid = (w0 > 0) & (w1 > 0)
    if not valid.any():
        raise DegenerateMapError("histogram has a single occupied bin; no threshold separates it")
    m0 = np.divide(s0, w0, out=np.zeros_like(s0), where=w0 > 0)
    m1 = np.divide((c * idx).sum() - s0, w1, out=np.zeros_like(s0), where=w1 > 0)
    between = np.where(valid, w0 * w1 * (m0 - m1) ** 2, -np.inf)
    return int(np.argmax(between))


def _bin_indices(values: np.ndarray, bins: int) -> tuple[np.ndarray, float, float]:
    lo, hi = float(values.min()), float(values.max())
    if hi <= lo:
        raise DegenerateMapError("map is constant; Otsu threshold undefined")
    idx = np.floor((values - lo) / (hi - lo) * bins).astype(int)
    return np.clip(idx, 0, bins - 1), lo, hi


def otsu_threshold(saliency, bins: int = 256) -> float:
    """Otsu threshold on the normalized map; pixels ``>=`` it are salient."""
    sal = saliency if isinstance(saliency, SaliencyMap) else SaliencyMap(_raw(saliency))
    p = sal.normalized
    idx, lo, hi = _bin_indices(p, bins)
    k = otsu_from_histogram(np.bincount(idx.ravel(), minlength=bins))
    return lo + (k + 1) * (hi - lo) / bins


def otsu_binarize(saliency, bins: int = 256) -> np.ndarray:
    sal = saliency if isinstance(saliency, SaliencyMap) else SaliencyMap(_raw(saliency))
    idx, _, _ = _bin_indices(sal.normalized, bins)
    k = otsu_from_histogram(np.bincount(idx.ravel(), minlength=bins))
    return idx > k


def congruency(scanpath, saliency, bins: int = 256) -> float:
    """Fraction of distinct fixated pixels inside the Otsu-salient region."""
    sal = saliency if isinstance(saliency, SaliencyMap) else SaliencyMap(_raw(saliency))
    salient = otsu_binarize(sal, bins)
    px = fixation_pixels(scanpath, *salient.shape)
    return float(salient[px[:, 0], px[:, 1]].sum() / len(px))
