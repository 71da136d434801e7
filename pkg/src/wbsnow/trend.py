"""Theil-Sen slopes and Mann-Kendall tests with a moving-block-bootstrap null."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import norm

from wbsnow.grid import GridField

DEFAULT_B = 3000
DEFAULT_ALPHA = 0.05


@dataclass
class AnnualSeries:
    years: np.ndarray
    values: np.ndarray
    units: str = ""

    def __post_init__(self):
        self.years = np.asarray(self.years)
        self.values = np.asarray(self.values, dtype=float)
        if self.years.shape != self.values.shape or self.years.ndim != 1:
            raise ValueError("years and values must be 1-d and the same length")
        if np.any(np.diff(self.years) <= 0):
            raise ValueError("years must be strictly increasing")

    def __len__(self):
        return len(self.years)

    def dropna(self) -> "AnnualSeries":
        ok = ~np.isnan(self.values)
        return AnnualSeries(self.years[ok], self.values[ok], self.units)


@dataclass
class TrendReport:
    slope: float  # units per year
    mk_s: int
    mk_var: float
    z: float
    p_bootstrap: float
    significant: bool
    alpha: float
    block_length: int
    B: int
    seed: int
    n: int
    s_low: float = math.nan
    s_high: float = math.nan

    @property
    def slope_per_decade(self) -> float:
        return 10.0 * self.slope

    def to_dict(self) -> dict:
        d = asdict(self)
        d["slope_per_decade"] = self.slope_per_decade
        return d


def theil_sen_xy(x, y) -> float:
    """Median of all pairwise slopes; NaN observations are ignored."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = ~(np.isnan(x) | np.isnan(y))
    x, y = x[ok], y[ok]
    if x.size < 2:
        raise ValueError("Theil-Sen needs at least two observations")
    i, j = np.triu_indices(x.size, k=1)
    dx = x[j] - x[i]
    if np.any(dx == 0):
        raise ValueError("duplicate x values")
    return float(np.median((y[j] - y[i]) / dx))


def theil_sen(series: AnnualSeries) -> float:
    return theil_sen_xy(series.years, series.values)


def _values(series) -> np.ndarray:
    v = series.values if isinstance(series, AnnualSeries) else series
    return np.asarray(v, dtype=float)


def mk_statistic(series) -> int:
    """Mann-Kendall S: sum of signs over all ordered pairs."""
    x = _values(series)
    return int(mk_statistic_batch(x[None, :])[0])


def mk_statistic_batch(x: np.ndarray) -> np.ndarray:
    """S for each row of a (replicates, n) array."""
    x = np.asarray(x, dtype=float)
    n = x.shape[1]
    s = np.zeros(x.shape[0], dtype=np.int64)
    for lag in range(1, n):
        s += np.sign(x[:, lag:] - x[:, :-lag]).sum(axis=1).astype(np.int64)
    return s


def mk_variance(series) -> float:
    """Var(S) under the null with the tied-group correction."""
    x = _values(series)
    n = x.size
    _, counts = np.unique(x, return_counts=True)
    t = counts[counts > 1]
    return (n * (n - 1) * (2 * n + 5) - np.sum(t * (t - 1) * (2 * t + 5))) / 18.0


def mk_z(s: int, var: float) -> float:
    if s == 0:
        return 0.0
    if var <= 0:
        raise ValueError(f"S = {s} with Var(S) = {var} is contradictory")
    return (s - 1) / math.sqrt(var) if s > 0 else (s + 1) / math.sqrt(var)


def autocorrelation(x, max_lag: int) -> np.ndarray:
    """Sample autocorrelation at lags 1..max_lag (biased estimator)."""
    x = np.asarray(x, dtype=float)
    d = x - x.mean()
    denom = np.dot(d, d)
    if denom == 0:
        return np.zeros(max_lag)
    return np.array([np.dot(d[:-k], d[k:]) / denom for k in range(1, max_lag + 1)])


def autocorr_length(series, alpha: float = DEFAULT_ALPHA, detrend: bool = False,
                    max_lag: int | None = None) -> int:
    """Number of leading lags whose autocorrelation lies outside +/- z/sqrt(n).

    Counting stops at the first insignificant lag and never exceeds
    ``n // 2 - 1`` so that a block of length r + 1 fits twice in the series.
    """
    x = _values(series)
    x = x[~np.isnan(x)]
    n = x.size
    if n < 3:
        return 0
    if detrend:
        t = np.arange(n, dtype=float)
        x = x - theil_sen_xy(t, x) * t
    cap = max(n // 2 - 1, 0)
    max_lag = cap if max_lag is None else min(max_lag, cap)
    if max_lag < 1:
        return 0
    band = norm.ppf(1 - alpha / 2) / math.sqrt(n)
    rho = autocorrelation(x, max_lag)
    outside = np.abs(rho) > band
    return int(max_lag if outside.all() else np.argmin(outside))


def mbb_replicates(x, block_length: int, B: int, rng: np.random.Generator) -> np.ndarray:
    """(B, n) moving-block-bootstrap pseudo series.

    Each replicate concatenates ceil(n/l) blocks drawn with replacement from
    the n - l + 1 overlapping blocks and keeps the first n values.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    l = int(block_length)
    if l < 1:
        raise ValueError("block length must be at least 1")
    if l > n:
        raise ValueError(f"block length {l} exceeds series length {n}")
    nblocks = n - l + 1
    k = -(-n // l)
    starts = rng.integers(0, nblocks, size=(B, k))
    idx = (starts[:, :, None] + np.arange(l)).reshape(B, k * l)[:, :n]
    return x[idx]


def mbb_mk_test(series, B: int = DEFAULT_B, alpha: float = DEFAULT_ALPHA, seed: int = 0,
                block_length: int | None = None, detrend: bool = False,
                rng: np.random.Generator | None = None) -> TrendReport:
    """Theil-Sen slope with a two-tailed MBB Mann-Kendall significance test.

    The trend is significant when S falls outside the [alpha/2, 1 - alpha/2]
    empirical quantiles of the bootstrap S*. The block length defaults to
    one more than the serial-correlation length.
    """
    if not isinstance(series, AnnualSeries):
        series = AnnualSeries(np.arange(len(series)), series)
    series = series.dropna()
    n = len(series)
    if n < 3:
        raise ValueError(f"trend test needs at least 3 observations, got {n}")
    if B < 1:
        raise ValueError("B must be positive")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    x = series.values
    if block_length is None:
        block_length = autocorr_length(x, alpha, detrend=detrend) + 1
    rng = rng if rng is not None else np.random.default_rng(seed)
    reps = mbb_replicates(x, block_length, B, rng)
    s_star = np.concatenate([mk_statistic_batch(reps[i:i + 500]) for i in range(0, B, 500)])
    s = mk_statistic(x)
    var = mk_variance(x)
    lo, hi = np.quantile(s_star, [alpha / 2, 1 - alpha / 2])
    p = min(1.0, 2.0 * min(np.mean(s_star >= s), np.mean(s_star <= s)))
    return TrendReport(
        slope=theil_sen(series),
        mk_s=s,
        mk_var=float(var),
        z=mk_z(s, var) if var > 0 or s == 0 else math.nan,
        p_bootstrap=float(p),
        significant=bool(s > hi or s < lo),
        alpha=alpha,
        block_length=int(block_length),
        B=int(B),
        seed=int(seed),
        n=n,
        s_low=float(lo),
        s_high=float(hi),
    )


def format_trend(ensemble: TrendReport, products=(), digits: int = 2, scale: float = 10.0) -> str:
    """Render ``beta_alpha (min-max)``, e.g. ``0.34_{0.05} (0.32–0.35)``.

    The subscript appears only when the ensemble trend is significant; the
    range spans the per-product trends. Slopes are scaled to per decade.
    """
    text = f"{ensemble.slope * scale:.{digits}f}"
    if ensemble.significant:
        text += f"_{{{ensemble.alpha:g}}}"
    if products:
        slopes = [p.slope * scale for p in products]
        text += f" ({min(slopes):.{digits}f}–{max(slopes):.{digits}f})"
    return text


@dataclass
class TrendMap:
    """Per-pixel trend layers for one product."""

    slope: np.ndarray  # per year
    p: np.ndarray
    significant: np.ndarray  # bool
    mk_s: np.ndarray
    block_length: np.ndarray

    @property
    def direction(self) -> np.ndarray:
        """+1 significant increase, -1 significant decrease, 0 otherwise."""
        return np.where(self.significant, np.sign(self.slope), 0).astype(int)


def trend_field(stack: GridField, B: int = DEFAULT_B, alpha: float = DEFAULT_ALPHA, seed: int = 0,
                detrend: bool = False, min_years: int = 3, threads: int = 1) -> TrendMap:
    """Per-pixel Theil-Sen + MBB-MK over an annual stack.

    Pixel p draws from its own generator seeded with (seed, p), so results
    do not depend on evaluation order or thread count.
    """
    years = np.array([t.year for t in stack.times])
    nlat, nlon = stack.grid.shape
    flat = stack.values.reshape(stack.ntime, -1)
    npix = flat.shape[1]
    slope = np.full(npix, np.nan)
    p = np.full(npix, np.nan)
    sig = np.zeros(npix, dtype=bool)
    s = np.zeros(npix, dtype=np.int64)
    blk = np.zeros(npix, dtype=np.int64)

    def fit(pix):
        col = flat[:, pix]
        if np.count_nonzero(~np.isnan(col)) < min_years:
            return
        rep = mbb_mk_test(AnnualSeries(years, col), B=B, alpha=alpha, seed=seed,
                          detrend=detrend, rng=np.random.default_rng([seed, pix]))
        slope[pix], p[pix], sig[pix] = rep.slope, rep.p_bootstrap, rep.significant
        s[pix], blk[pix] = rep.mk_s, rep.block_length

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(fit, range(npix)))
    else:
        for pix in range(npix):
            fit(pix)
    shape = (nlat, nlon)
    return TrendMap(slope.reshape(shape), p.reshape(shape), sig.reshape(shape),
                    s.reshape(shape), blk.reshape(shape))


def agreement(maps) -> tuple:
    """Count of products agreeing on a significant trend direction.

    Returns (count, direction): count in 0..len(maps) is the size of the
    larger of the significant-increase and significant-decrease groups.
    """
    dirs = np.stack([m.direction for m in maps])
    up = (dirs == 1).sum(axis=0)
    down = (dirs == -1).sum(axis=0)
    count = np.maximum(up, down)
    direction = np.where(up > down, 1, np.where(down > up, -1, 0))
    return count, direction


def masked_ensemble_slope(ensemble: TrendMap, count: np.ndarray, min_agree: int = 2) -> np.ndarray:
    return np.where(count >= min_agree, ensemble.slope, np.nan)
