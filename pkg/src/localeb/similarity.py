"""Process features and the composite shape/scale distance between experiments.

Each experiment is summarized by a unit-integral arrival-shape curve sampled
on L bins of normalized time plus its log traffic volume.  Pairwise
similarity combines a banded dynamic-time-warping distance on the shape
curves with a robustly scaled log-volume difference.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numba import njit

from .data import ExperimentSeries, compute_increments
from .errors import DegenerateSeriesError

NORMALIZER_FLOOR = 1e-12


@dataclass(frozen=True)
class SimilarityConfig:
    """Knobs for shape construction and the composite distance.

    rho            weight on the shape (DTW) component, remainder on scale
    grid_size      number of equally spaced bins L on normalized time [0, 1]
    bandwidth      Gaussian smoothing bandwidth in normalized time
    band_fraction  Sakoe-Chiba band half-width as a fraction of L
    smoother       'gaussian' (default) or 'moving_average'
    ma_window      moving-average window in bins, used only by that smoother
    """

    rho: float = 0.75
    grid_size: int = 500
    bandwidth: float = 0.04
    band_fraction: float = 0.1
    smoother: str = "gaussian"
    ma_window: int = 25

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"rho must be in (0, 1), got {self.rho}")
        if self.grid_size < 2:
            raise ValueError("grid_size must be >= 2")
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")
        if not 0.0 <= self.band_fraction <= 1.0:
            raise ValueError("band_fraction must be in [0, 1]")
        if self.smoother not in ("gaussian", "moving_average"):
            raise ValueError(f"unknown smoother {self.smoother!r}")


@dataclass(frozen=True)
class ProcessFeatures:
    """Shape curve (unit Riemann sum over the L-bin grid) and traffic scale."""

    shape: np.ndarray = field(repr=False)
    n: float
    log_n: float

    def __post_init__(self):
        riemann = float(self.shape.sum()) / self.shape.size
        if abs(riemann - 1.0) > 1e-6:
            raise ValueError(f"shape Riemann sum {riemann} deviates from 1")
        if np.any(self.shape < 0):
            raise ValueError("shape has negative entries")


@dataclass(frozen=True)
class DistanceNormalizers:
    med_dtw: float
    mad_log_n: float

    def __post_init__(self):
        if self.med_dtw <= 0 or self.mad_log_n <= 0:
            raise ValueError("normalizers must be strictly positive")


def piecewise_shape_on_grid(series: ExperimentSeries, grid_size: int) -> tuple[np.ndarray, float]:
    """Sample the normalized piecewise-constant rate on bin centers.

    Returns (values, n) where values[b] is the unit-integral rate density in
    normalized time at bin center (b + 0.5)/L and n is total arrivals.
    """
    intervals = compute_increments(series)
    widths = np.array([iv.width for iv in intervals])
    rates = np.array([iv.arrivals_total / iv.width for iv in intervals])
    n = float(rates @ widths)
    if n <= 0:
        raise DegenerateSeriesError(f"series {series.label()} has zero total arrivals")
    horizon = intervals[-1].end
    # density per unit of normalized time: lambda_i * T / n on each segment
    density = rates * horizon / n
    edges = np.array([iv.end for iv in intervals]) / horizon
    centers = (np.arange(grid_size) + 0.5) / grid_size
    idx = np.searchsorted(edges, centers, side="left")
    idx = np.minimum(idx, len(intervals) - 1)
    return density[idx], n


def _gaussian_smooth(values: np.ndarray, bandwidth: float) -> np.ndarray:
    """Kernel-weighted smoothing on the bin grid, truncated at +/- 4 bandwidths.

    Weights renormalize per position over in-range bins, so a constant curve
    is a fixed point and no mass leaks at the boundaries.
    """
    size = values.size
    sigma_bins = bandwidth * size
    radius = int(math.ceil(4.0 * sigma_bins))
    if radius < 1:
        return values.copy()
    offsets = np.arange(-radius, radius + 1)
    kernel = np.exp(-0.5 * (offsets / sigma_bins) ** 2)
    padded = np.concatenate([np.zeros(radius), values, np.zeros(radius)])
    mask = np.concatenate([np.zeros(radius), np.ones(size), np.zeros(radius)])
    num = np.convolve(padded, kernel[::-1], mode="valid")
    den = np.convolve(mask, kernel[::-1], mode="valid")
    return num / den


def _moving_average_smooth(values: np.ndarray, window: int) -> np.ndarray:
    if window <= 1:
        return values.copy()
    kernel = np.ones(window)
    radius = window // 2
    padded = np.concatenate([np.zeros(radius), values, np.zeros(window - 1 - radius)])
    mask = np.concatenate([np.zeros(radius), np.ones(values.size), np.zeros(window - 1 - radius)])
    num = np.convolve(padded, kernel, mode="valid")
    den = np.convolve(mask, kernel, mode="valid")
    return num / den


def normalized_shape(series: ExperimentSeries, config: SimilarityConfig) -> ProcessFeatures:
    """Build the smoothed, unit-integral arrival-shape curve for a series.

    The piecewise-constant rate is mapped to normalized time, scaled to a
    unit-integral density, smoothed, then renormalized so the grid Riemann
    sum is exactly 1.
    """
    values, n = piecewise_shape_on_grid(series, config.grid_size)
    if config.smoother == "gaussian":
        smoothed = _gaussian_smooth(values, config.bandwidth)
    else:
        smoothed = _moving_average_smooth(values, config.ma_window)
    riemann = smoothed.sum() / smoothed.size
    shape = smoothed / riemann
    return ProcessFeatures(shape=shape, n=n, log_n=math.log(n))


@njit(cache=True)
def _dtw_banded(cost: np.ndarray, band: int) -> float:  # pragma: no cover
    # pure add/min DP over a precomputed cost matrix; keeping multiplies out
    # of the kernel avoids FMA contraction, so results match a plain-Python
    # oracle bit for bit
    n = cost.shape[0]
    inf = np.inf
    prev = np.full(n, inf)
    cur = np.full(n, inf)
    for m in range(n):
        lo = m - band
        if lo < 0:
            lo = 0
        hi = m + band
        if hi > n - 1:
            hi = n - 1
        for j in range(n):
            cur[j] = inf
        for j in range(lo, hi + 1):
            c = cost[m, j]
            if m == 0 and j == 0:
                cur[j] = c
            else:
                best = inf
                if m > 0 and prev[j] < best:
                    best = prev[j]
                if m > 0 and j > 0 and prev[j - 1] < best:
                    best = prev[j - 1]
                if j > 0 and cur[j - 1] < best:
                    best = cur[j - 1]
                cur[j] = c + best
        prev, cur = cur, prev
    return prev[n - 1]


def dtw_distance(a: np.ndarray, b: np.ndarray, band_fraction: float) -> float:
    """Banded DTW alignment cost between two equal-length sequences.

    Cumulative squared-error cost over monotone warping paths restricted to
    the Sakoe-Chiba band |m - j| <= ceil(band_fraction * L).  Symmetric; the
    diagonal always fits, so every call yields a finite cost.
    """
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"sequences must share a 1-D shape, got {a.shape} vs {b.shape}")
    if not 0.0 <= band_fraction <= 1.0:
        raise ValueError("band_fraction must be in [0, 1]")
    band = int(math.ceil(band_fraction * a.size))
    diff = a[:, None] - b[None, :]
    return float(_dtw_banded(diff * diff, band))


def dtw_matrix(shapes: Sequence[np.ndarray], band_fraction: float) -> np.ndarray:
    """Symmetric matrix of pairwise DTW distances with a zero diagonal."""
    k = len(shapes)
    out = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            d = dtw_distance(shapes[i], shapes[j], band_fraction)
            out[i, j] = d
            out[j, i] = d
    return out


def _normalizers_from_parts(dtw_values: np.ndarray, log_ns: np.ndarray) -> DistanceNormalizers:
    med_dtw = float(np.median(dtw_values))
    med_log_n = float(np.median(log_ns))
    mad_log_n = float(np.median(np.abs(log_ns - med_log_n)))
    return DistanceNormalizers(
        med_dtw=max(med_dtw, NORMALIZER_FLOOR),
        mad_log_n=max(mad_log_n, NORMALIZER_FLOOR),
    )


def distance_normalizers(
    features: Sequence[ProcessFeatures], band_fraction: float
) -> DistanceNormalizers:
    """Median pairwise DTW and MAD of log traffic, floored at 1e-12.

    Computed once over all unordered pairs and then held fixed, so distances
    are reusable across bootstrap replicates.
    """
    if len(features) < 2:
        raise ValueError("need at least 2 experiments to compute normalizers")
    m = dtw_matrix([f.shape for f in features], band_fraction)
    iu = np.triu_indices(len(features), k=1)
    log_ns = np.array([f.log_n for f in features])
    return _normalizers_from_parts(m[iu], log_ns)


def composite_distance(
    a: ProcessFeatures,
    b: ProcessFeatures,
    rho: float,
    normalizers: DistanceNormalizers,
    band_fraction: float = 0.1,
) -> float:
    """Weighted sum of normalized shape distance and normalized scale gap."""
    d_shape = dtw_distance(a.shape, b.shape, band_fraction)
    d_scale = abs(a.log_n - b.log_n)
    return rho * d_shape / normalizers.med_dtw + (1.0 - rho) * d_scale / normalizers.mad_log_n


def pairwise_distance_matrix(
    features: Sequence[ProcessFeatures], config: SimilarityConfig
) -> tuple[np.ndarray, DistanceNormalizers]:
    """Composite distance matrix over all pairs plus the fixed normalizers.

    Symmetric with a zero diagonal; each cell is computed independently so
    results do not depend on evaluation order.
    """
    if len(features) < 2:
        raise ValueError("need at least 2 experiments")
    shapes = [f.shape for f in features]
    log_ns = np.array([f.log_n for f in features])
    m_dtw = dtw_matrix(shapes, config.band_fraction)
    iu = np.triu_indices(len(features), k=1)
    norms = _normalizers_from_parts(m_dtw[iu], log_ns)
    scale = np.abs(log_ns[:, None] - log_ns[None, :])
    composite = config.rho * m_dtw / norms.med_dtw + (1.0 - config.rho) * scale / norms.mad_log_n
    np.fill_diagonal(composite, 0.0)
    return composite, norms


def write_distance_csv(matrix: np.ndarray, ids: Sequence[str], path: str | Path) -> None:
    """Export a distance matrix as `i,j,d` rows (upper triangle, sorted ids)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["i", "j", "d"])
    for i in range(len(ids)):
        for j in range(i + 1, len(ids)):
            writer.writerow([ids[i], ids[j], repr(float(matrix[i, j]))])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def write_shapes_csv(
    features: Sequence[ProcessFeatures], ids: Sequence[str], path: str | Path
) -> None:
    """Export shape curves as `experiment_id,bin,value` rows."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["experiment_id", "bin", "value"])
    for exp_id, feat in zip(ids, features):
        for b, val in enumerate(feat.shape):
            writer.writerow([exp_id, b, repr(float(val))])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")
