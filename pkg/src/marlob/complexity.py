"""Delay embedding and correlation-dimension estimation.

The correlation integral C(r) counts point pairs of the delay-embedded
series closer than r in the max norm, excluding temporally adjacent pairs
(Theiler window).  The correlation dimension is the slope of log C(r)
against log r over an automatically selected scaling region (the longest
stretch of radii with stable local slope).

All functions are pure; the internal pair subsampling uses fixed seeds so
identical inputs always give identical outputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial.distance import pdist

from .stylized import acf

#: radii are log-spaced between these percentiles of the pair distances
RADII_PERCENTILES = (1.0, 50.0)
N_RADII = 40
#: slope stability tolerance of the scaling-region search
SLOPE_TOLERANCE = 0.15
MIN_REGION_POINTS = 5


@dataclass(frozen=True)
class EmbeddingConfig:
    dimension: int
    delay: int
    theiler_window: int = 0

    def __post_init__(self):
        if self.dimension < 1 or self.delay < 1 or self.theiler_window < 0:
            raise ValueError("invalid embedding configuration")

    def min_series_length(self) -> int:
        return (self.dimension - 1) * self.delay + self.theiler_window + 2


def correlation_time(series, max_lag: int = 200) -> int:
    """First local minimum of the demeaned autocorrelation; falls back to
    the first zero crossing, then to max_lag."""
    x = np.asarray(series, dtype=float)
    max_lag = min(max_lag, x.size - 2)
    curve = acf(x, max_lag, demean=True)
    rho = curve.rho
    for k in range(1, max_lag):
        if rho[k] < rho[k - 1] and rho[k] < rho[k + 1]:
            return k
    for k in range(1, max_lag + 1):
        if rho[k] <= 0.0:
            return k
    return max_lag


def delay_embed(series, dimension: int, delay: int) -> np.ndarray:
    """Point cloud y_t = (x_t, x_{t-tau}, ..., x_{t-(m-1)tau}); the cloud
    has n - (m-1)*tau points."""
    x = np.asarray(series, dtype=float)
    m, tau = dimension, delay
    n_points = x.size - (m - 1) * tau
    if n_points < 2:
        raise ValueError("series too short for this embedding")
    cloud = np.empty((n_points, m))
    for j in range(m):
        # column j holds x_{t - j*tau}
        cloud[:, j] = x[(m - 1 - j) * tau:x.size - j * tau]
    return cloud


def _pair_distances(cloud: np.ndarray, times: np.ndarray,
                    theiler_window: int) -> np.ndarray:
    """Max-norm distances of all pairs further apart in time than the
    Theiler window."""
    d = pdist(cloud, "chebyshev")
    if theiler_window > 0:
        gaps = pdist(times.reshape(-1, 1).astype(float), "chebyshev")
        d = d[gaps > theiler_window]
    return d


def correlation_integral(cloud, radii, theiler_window: int = 0,
                         times: Optional[np.ndarray] = None) -> np.ndarray:
    """C(r): fraction of admissible point pairs with max-norm distance < r.

    ``times`` carries the points' original series indices for the Theiler
    exclusion (defaults to 0..n-1).
    """
    pts = np.asarray(cloud, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1)
    if pts.shape[0] < 2:
        raise ValueError("need at least two points")
    if times is None:
        times = np.arange(pts.shape[0])
    d = _pair_distances(pts, np.asarray(times), theiler_window)
    if d.size == 0:
        raise ValueError("no admissible pairs (Theiler window too wide)")
    d.sort()
    radii = np.asarray(radii, dtype=float)
    return np.searchsorted(d, radii, side="left") / d.size


def default_radii(cloud, theiler_window: int = 0,
                  times: Optional[np.ndarray] = None,
                  n_radii: int = N_RADII) -> np.ndarray:
    """Log-spaced radii spanning the small-distance regime of the cloud
    (1st to 50th percentile of admissible pair distances)."""
    pts = np.asarray(cloud, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1)
    if times is None:
        times = np.arange(pts.shape[0])
    d = _pair_distances(pts, np.asarray(times), theiler_window)
    d = d[d > 0]
    if d.size < 10:
        raise ValueError("not enough distinct pair distances")
    lo, hi = np.percentile(d, RADII_PERCENTILES)
    if lo <= 0 or hi <= lo:
        lo, hi = d.min(), d.max()
    if hi <= lo:
        hi = lo * 2
    return np.geomspace(lo, hi, n_radii)


@dataclass
class DimensionFit:
    D: float
    radii: np.ndarray
    C: np.ndarray
    region: tuple            # (first index, last index) of the fit region
    scaling_region_found: bool

    @property
    def r_bounds(self) -> tuple:
        return (float(self.radii[self.region[0]]),
                float(self.radii[self.region[1]]))


def _fit_scaling_region(log_r: np.ndarray, log_c: np.ndarray) -> tuple:
    """Longest run of radii whose local log-log slope stays within
    SLOPE_TOLERANCE of the run average; least-squares slope over that run.

    Returns (slope, (i0, i1), found).  Falls back to the full range when
    no stable run exists.
    """
    slopes = np.diff(log_c) / np.diff(log_r)
    n = slopes.size
    best = None
    for i in range(n):  # n ~ 40: the quadratic scan is cheap
        for j in range(i + MIN_REGION_POINTS - 2, n):
            win = slopes[i:j + 1]
            band = SLOPE_TOLERANCE * max(abs(win.mean()), 0.05)
            if win.max() - win.min() <= band:
                if best is None or (j - i) > (best[1] - best[0]):
                    best = (i, j)
    if best is not None:
        i0, i1 = best[0], best[1] + 1
        slope = np.polyfit(log_r[i0:i1 + 1], log_c[i0:i1 + 1], 1)[0]
        return float(slope), (i0, i1), True
    slope = np.polyfit(log_r, log_c, 1)[0]
    return float(slope), (0, log_r.size - 1), False


def dimension_from_cloud(cloud, theiler_window: int = 0,
                         radii: Optional[np.ndarray] = None,
                         times: Optional[np.ndarray] = None) -> DimensionFit:
    """Correlation dimension of an explicit point cloud."""
    pts = np.asarray(cloud, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1)
    if times is None:
        times = np.arange(pts.shape[0])
    if radii is None:
        radii = default_radii(pts, theiler_window, times)
    radii = np.asarray(radii, dtype=float)
    C = correlation_integral(pts, radii, theiler_window, times)
    ok = C > 0
    if ok.sum() < MIN_REGION_POINTS:
        raise ValueError("correlation integral vanishes on these radii")
    log_r = np.log(radii[ok])
    log_c = np.log(C[ok])
    # translate back to original radius indices for the region bounds
    idx = np.flatnonzero(ok)
    slope, (i0, i1), found = _fit_scaling_region(log_r, log_c)
    return DimensionFit(D=slope, radii=radii, C=C,
                        region=(int(idx[i0]), int(idx[i1])),
                        scaling_region_found=found)


def _subsample(cloud: np.ndarray, times: np.ndarray, max_points: int):
    if cloud.shape[0] <= max_points:
        return cloud, times
    stride_idx = np.linspace(0, cloud.shape[0] - 1, max_points).astype(int)
    return cloud[stride_idx], times[stride_idx]


def correlation_dimension(series, dimension: int,
                          radii_range: Optional[tuple] = None,
                          delay: Optional[int] = None,
                          theiler_window: Optional[int] = None,
                          max_points: int = 2500) -> DimensionFit:
    """Correlation dimension of a series under delay embedding.

    The delay defaults to the series' correlation time, the Theiler window
    to the delay.  Large clouds are evenly subsampled to ``max_points``
    (original time indices are kept for the Theiler exclusion).
    """
    x = np.asarray(series, dtype=float)
    tau = delay if delay is not None else correlation_time(x)
    theiler = theiler_window if theiler_window is not None else tau
    cloud = delay_embed(x, dimension, tau)
    times = np.arange(cloud.shape[0])
    cloud, times = _subsample(cloud, times, max_points)
    radii = None
    if radii_range is not None:
        radii = np.geomspace(radii_range[0], radii_range[1], N_RADII)
    return dimension_from_cloud(cloud, theiler, radii, times)


@dataclass
class DimensionCurve:
    dimensions: tuple        # embedding dimensions m
    delay: int
    D: tuple                 # estimated correlation dimension per m
    fits: tuple


def dimension_vs_embedding(series, m_range=(1, 2, 3, 4, 5, 6, 7, 8),
                           delay: Optional[int] = None,
                           theiler_window: Optional[int] = None,
                           max_points: int = 2500) -> DimensionCurve:
    """Correlation dimension as a function of the embedding dimension."""
    x = np.asarray(series, dtype=float)
    tau = delay if delay is not None else correlation_time(x)
    fits = []
    for m in m_range:
        fits.append(correlation_dimension(x, m, delay=tau,
                                          theiler_window=theiler_window,
                                          max_points=max_points))
    return DimensionCurve(dimensions=tuple(m_range), delay=tau,
                          D=tuple(f.D for f in fits), fits=tuple(fits))


def delta_dimension(curve: DimensionCurve, baseline: DimensionCurve) -> tuple:
    """Mean dimension difference vs a baseline over the common embedding
    dimensions, plus the same average restricted to the upper half of the
    embedding range (the near-saturated regime)."""
    common = sorted(set(curve.dimensions) & set(baseline.dimensions))
    if not common:
        raise ValueError("no common embedding dimensions")
    da = dict(zip(curve.dimensions, curve.D))
    db = dict(zip(baseline.dimensions, baseline.D))
    diffs = [da[m] - db[m] for m in common]
    upper = diffs[len(diffs) // 2:]
    return float(np.mean(diffs)), float(np.mean(upper))


def phase_space_export(series, delay: int, segment_length: int = 250):
    """Two-dimensional embedding rows (t, x_t, x_{t-tau}, highlighted).

    The highlighted window of ``segment_length`` points is centred on the
    largest absolute one-step move of the series.
    """
    x = np.asarray(series, dtype=float)
    n = x.size
    if n <= delay + 1:
        raise ValueError("series too short")
    seg = min(segment_length, n)
    moves = np.abs(np.diff(x))
    t_star = int(np.argmax(moves))
    start = min(max(t_star - seg // 2, 0), n - seg)
    end = start + seg
    rows = []
    for t in range(delay, n):
        rows.append((t, float(x[t]), float(x[t - delay]),
                     1 if start <= t < end else 0))
    return rows, (start, end)
