"""Numerical primitives: multivariate DTW, concordance correlation,
time-lagged cross-correlation, and Gaussian-Fréchet distance.

All functions are pure and safe for unlimited concurrent use. Conventions:

* moments are population (1/T) throughout;
* a window counts as constant exactly when its max equals its min, so
  degenerate-signal branches fire reliably on genuinely constant data and
  never on float noise;
* DTW accumulates unnormalized local costs over the monotone step set
  {(1,0),(0,1),(1,1)}, anchored at both boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import DataError

LOCAL_COSTS = ("euclidean", "manhattan")


@dataclass(frozen=True)
class DtwConfig:
    """Alignment options.

    band_radius: Sakoe-Chiba radius in frames; None means the full matrix.
    local_cost: per-frame distance over the channel vectors.
    path_normalize: divide the accumulated cost by (T_a + T_b). Off by
        default; provided because reported distances in the literature are
        ambiguous about normalization.
    """

    band_radius: int | None = None
    local_cost: str = "euclidean"
    path_normalize: bool = False

    def __post_init__(self):
        if self.band_radius is not None and self.band_radius < 0:
            raise DataError(f"band_radius must be >= 0, got {self.band_radius}")
        if self.local_cost not in LOCAL_COSTS:
            raise DataError(f"local_cost must be one of {LOCAL_COSTS}, got {self.local_cost!r}")


DEFAULT_DTW = DtwConfig(band_radius=75)


@njit(cache=True)
def _dtw_band(a, b, radius, manhattan):  # pragma: no cover - jitted
    m, n = a.shape[0], b.shape[0]
    c = a.shape[1]
    inf = np.inf
    dp = np.full((m, n), inf)
    for i in range(m):
        lo = i - radius
        if lo < 0:
            lo = 0
        hi = i + radius
        if hi > n - 1:
            hi = n - 1
        for j in range(lo, hi + 1):
            d = 0.0
            if manhattan:
                for k in range(c):
                    diff = a[i, k] - b[j, k]
                    d += diff if diff >= 0.0 else -diff
            else:
                for k in range(c):
                    diff = a[i, k] - b[j, k]
                    d += diff * diff
                d = math.sqrt(d)
            if i == 0 and j == 0:
                best = 0.0
            else:
                best = inf
                if i > 0 and dp[i - 1, j] < best:
                    best = dp[i - 1, j]
                if j > 0 and dp[i, j - 1] < best:
                    best = dp[i, j - 1]
                if i > 0 and j > 0 and dp[i - 1, j - 1] < best:
                    best = dp[i - 1, j - 1]
            dp[i, j] = d + best
    return dp[m - 1, n - 1]


def _check_series_matrix(name: str, arr) -> np.ndarray:
    mat = np.ascontiguousarray(np.asarray(arr, dtype=np.float64))
    if mat.ndim != 2 or mat.shape[0] < 1:
        raise DataError(f"{name} must be a non-empty 2-D (T x C) matrix")
    if not np.all(np.isfinite(mat)):
        raise DataError(f"{name} contains non-finite values")
    return mat


def dtw(a, b, cfg: DtwConfig = DtwConfig()) -> float:
    """Accumulated cost of the optimal monotone alignment of two series.

    Symmetric, non-negative, and zero for identical inputs. With a band
    radius narrower than the length difference no boundary-anchored path
    exists and a DataError names the radius.
    """
    am = _check_series_matrix("a", a)
    bm = _check_series_matrix("b", b)
    if am.shape[1] != bm.shape[1]:
        raise DataError(f"channel mismatch: {am.shape[1]} vs {bm.shape[1]}")
    m, n = am.shape[0], bm.shape[0]
    radius = cfg.band_radius if cfg.band_radius is not None else max(m, n)
    if abs(m - n) > radius:
        raise DataError(
            f"band radius {cfg.band_radius} admits no alignment path for lengths "
            f"{m} and {n}")
    cost = float(_dtw_band(am, bm, radius, cfg.local_cost == "manhattan"))
    if cfg.path_normalize:
        cost /= m + n
    return cost


def _check_vector(name: str, arr) -> np.ndarray:
    vec = np.ascontiguousarray(np.asarray(arr, dtype=np.float64))
    if vec.ndim != 1:
        raise DataError(f"{name} must be 1-D")
    if not np.all(np.isfinite(vec)):
        raise DataError(f"{name} contains non-finite values")
    return vec


def ccc(x, y) -> float:
    """Concordance correlation coefficient with population moments.

    2*cov / (var_x + var_y + (mean_x - mean_y)^2). Both inputs constant and
    equal -> 1; both constant but unequal -> 0.
    """
    xv = _check_vector("x", x)
    yv = _check_vector("y", y)
    if xv.shape[0] != yv.shape[0]:
        raise DataError(f"length mismatch: {xv.shape[0]} vs {yv.shape[0]}")
    if xv.shape[0] < 2:
        raise DataError("ccc needs at least 2 samples")
    const_x = xv.max() == xv.min()
    const_y = yv.max() == yv.min()
    if const_x and const_y:
        return 1.0 if xv[0] == yv[0] else 0.0
    mx, my = xv.mean(), yv.mean()
    dx, dy = xv - mx, yv - my
    vx = float(dx @ dx) / xv.shape[0]
    vy = float(dy @ dy) / yv.shape[0]
    cov = float(dx @ dy) / xv.shape[0]
    denom = vx + vy + (mx - my) ** 2
    if denom == 0.0:
        return 1.0
    return float(min(1.0, max(-1.0, 2.0 * cov / denom)))


def ccc_channels(a, b) -> np.ndarray:
    """Per-column CCC between two equally shaped (T x C) matrices.

    Vectorized equivalent of calling ccc on each column pair.
    """
    am = _check_series_matrix("a", a)
    bm = _check_series_matrix("b", b)
    if am.shape != bm.shape:
        raise DataError(f"shape mismatch: {am.shape} vs {bm.shape}")
    if am.shape[0] < 2:
        raise DataError("ccc needs at least 2 samples")
    t = am.shape[0]
    mx, my = am.mean(axis=0), bm.mean(axis=0)
    dx, dy = am - mx, bm - my
    vx = np.einsum("tc,tc->c", dx, dx) / t
    vy = np.einsum("tc,tc->c", dy, dy) / t
    cov = np.einsum("tc,tc->c", dx, dy) / t
    denom = vx + vy + (mx - my) ** 2
    safe = np.where(denom == 0.0, 1.0, denom)
    vals = np.clip(2.0 * cov / safe, -1.0, 1.0)
    vals = np.where(denom == 0.0, 1.0, vals)
    const_x = am.max(axis=0) == am.min(axis=0)
    const_y = bm.max(axis=0) == bm.min(axis=0)
    both = const_x & const_y
    return np.where(both, np.where(am[0] == bm[0], 1.0, 0.0), vals)


def lagged_correlation(x, y, lag: int) -> float:
    """Pearson correlation of x[t] against y[t + lag] over their overlap.

    A constant window on either side yields 0 by convention.
    """
    xv = _check_vector("x", x)
    yv = _check_vector("y", y)
    if xv.shape[0] != yv.shape[0]:
        raise DataError(f"length mismatch: {xv.shape[0]} vs {yv.shape[0]}")
    t = xv.shape[0]
    if abs(lag) >= t:
        raise DataError(f"|lag| {abs(lag)} must be < series length {t}")
    if lag >= 0:
        xw, yw = xv[:t - lag], yv[lag:]
    else:
        xw, yw = xv[-lag:], yv[:t + lag]
    if xw.shape[0] < 2:
        raise DataError(f"overlap after lag {lag} is shorter than 2 frames")
    if xw.max() == xw.min() or yw.max() == yw.min():
        return 0.0
    dx = xw - xw.mean()
    dy = yw - yw.mean()
    denom = math.sqrt(float(dx @ dx) * float(dy @ dy))
    if denom == 0.0:
        return 0.0
    return float(dx @ dy) / denom


@njit(cache=True)
def _lag_scan(x, y, max_lag):  # pragma: no cover - jitted
    t = x.shape[0]
    out = np.zeros(2 * max_lag + 1)
    for lag in range(-max_lag, max_lag + 1):
        if lag >= 0:
            xs, ys, n = 0, lag, t - lag
        else:
            xs, ys, n = -lag, 0, t + lag
        if n < 2:
            continue
        xmin = xmax = x[xs]
        ymin = ymax = y[ys]
        sx = 0.0
        sy = 0.0
        for i in range(n):
            xi = x[xs + i]
            yi = y[ys + i]
            sx += xi
            sy += yi
            if xi < xmin:
                xmin = xi
            elif xi > xmax:
                xmax = xi
            if yi < ymin:
                ymin = yi
            elif yi > ymax:
                ymax = yi
        if xmax == xmin or ymax == ymin:
            continue
        mx = sx / n
        my = sy / n
        sxx = 0.0
        syy = 0.0
        sxy = 0.0
        for i in range(n):
            dx = x[xs + i] - mx
            dy = y[ys + i] - my
            sxx += dx * dx
            syy += dy * dy
            sxy += dx * dy
        denom = math.sqrt(sxx * syy)
        if denom != 0.0:
            out[lag + max_lag] = sxy / denom
    return out


def tlcc_offset(x, y, max_lag: int) -> int:
    """Synchrony offset: |argmax over lag in [-max_lag, max_lag]| of the
    lagged correlation.

    Ties break toward smaller |lag|, then toward the negative lag. If every
    scanned correlation is exactly 0 (degenerate signals) the offset
    saturates at max_lag. Lags whose overlap is shorter than 2 frames
    contribute correlation 0.
    """
    xv = _check_vector("x", x)
    yv = _check_vector("y", y)
    if xv.shape[0] != yv.shape[0]:
        raise DataError(f"length mismatch: {xv.shape[0]} vs {yv.shape[0]}")
    if max_lag < 0:
        raise DataError(f"max_lag must be >= 0, got {max_lag}")
    if max_lag >= xv.shape[0]:
        raise DataError(f"max_lag {max_lag} must be < series length {xv.shape[0]}")
    corr = _lag_scan(xv, yv, max_lag)
    if not np.any(corr):
        return max_lag
    best = -np.inf
    best_lag = 0
    for magnitude in range(max_lag + 1):
        lags = (0,) if magnitude == 0 else (-magnitude, magnitude)
        for lag in lags:
            r = corr[lag + max_lag]
            if r > best:
                best = r
                best_lag = lag
    return abs(best_lag)


@dataclass(frozen=True, eq=False)
class GaussianSummary:
    """Population mean/covariance fit of a sample pool."""

    mean: np.ndarray
    covariance: np.ndarray
    count: int

    def __post_init__(self):
        mean = np.ascontiguousarray(np.asarray(self.mean, dtype=np.float64))
        cov = np.ascontiguousarray(np.asarray(self.covariance, dtype=np.float64))
        if mean.ndim != 1:
            raise DataError("mean must be a vector")
        if cov.shape != (mean.shape[0], mean.shape[0]):
            raise DataError(f"covariance shape {cov.shape} does not match mean "
                            f"dimension {mean.shape[0]}")
        asym = float(np.abs(cov - cov.T).max()) if cov.size else 0.0
        if asym > 1e-9:
            raise DataError(f"covariance asymmetry {asym:g} exceeds 1e-9")
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def fit_gaussian(samples) -> GaussianSummary:
    """Population mean and symmetrized covariance of an (N x D) sample pool."""
    mat = np.asarray(samples, dtype=np.float64)
    if mat.ndim != 2:
        raise DataError("samples must be an (N x D) matrix")
    n = mat.shape[0]
    if n < 2:
        raise DataError(f"need at least 2 samples to fit a Gaussian, got {n}")
    mean = mat.mean(axis=0)
    dev = mat - mean
    cov = dev.T @ dev / n
    cov = (cov + cov.T) / 2.0
    return GaussianSummary(mean=mean, covariance=cov, count=n)


_EIG_TOL = 1e-6


def _psd_sqrt(cov: np.ndarray, what: str) -> np.ndarray:
    try:
        w, v = np.linalg.eigh(cov)
    except np.linalg.LinAlgError as exc:
        raise DataError(f"non-convergent eigendecomposition of {what}: {exc}") from None
    if w.min(initial=0.0) < -1e-9:
        raise DataError(f"{what} has eigenvalue {w.min():g} below -1e-9")
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.T


def frechet_distance(g1: GaussianSummary, g2: GaussianSummary) -> float:
    """Fréchet distance between two Gaussian fits:
    ||mu1 - mu2||^2 + tr(S1 + S2 - 2 (S1 S2)^{1/2}).

    The matrix square root comes from the symmetric eigendecomposition of the
    stabilized product sqrt(S1) S2 sqrt(S1). Product eigenvalues below -1e-6
    are an error; ones in [-1e-6, 0) are clamped to 0, and the final value is
    clamped at 0.
    """
    if g1.dim != g2.dim:
        raise DataError(f"dimension mismatch: {g1.dim} vs {g2.dim}")
    diff = g1.mean - g2.mean
    s1h = _psd_sqrt(g1.covariance, "covariance")
    inner = s1h @ g2.covariance @ s1h
    inner = (inner + inner.T) / 2.0
    try:
        w = np.linalg.eigvalsh(inner)
    except np.linalg.LinAlgError as exc:
        raise DataError(f"non-convergent eigendecomposition of covariance product: "
                        f"{exc}") from None
    if w.min(initial=0.0) < -_EIG_TOL:
        raise DataError(f"covariance product eigenvalue {w.min():g} below -{_EIG_TOL:g}")
    tr_sqrt = float(np.sqrt(np.clip(w, 0.0, None)).sum())
    value = float(diff @ diff) + float(np.trace(g1.covariance)) \
        + float(np.trace(g2.covariance)) - 2.0 * tr_sqrt
    return max(0.0, value)


def warm_up_kernels() -> None:
    """Force JIT compilation of the hot kernels (first-call latency)."""
    a = np.zeros((2, 1))
    b = np.ones((2, 1))
    _dtw_band(a, b, 2, False)
    _dtw_band(a, b, 2, True)
    _lag_scan(np.array([0.0, 1.0, 0.5]), np.array([0.5, 0.0, 1.0]), 1)
