"""Error models against gauges and inverse-variance (maximum-likelihood) fusion."""

from __future__ import annotations

import datetime as dt
import warnings
from dataclasses import dataclass, field

import numpy as np

from wbsnow.grid import GeoGrid, GridError, GridField, nearest_index, regrid_nearest

MAD_SCALE = 1.4826
DEFAULT_MAD_K = 3.0


class DegenerateModelWarning(UserWarning):
    pass


@dataclass
class ErrorModel:
    sigmas: list
    weights: list
    theoretical_sigma: float
    names: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "sigmas": [float(s) for s in self.sigmas],
            "weights": [float(w) for w in self.weights],
            "theoretical_sigma": float(self.theoretical_sigma),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ErrorModel":
        return ml_weights(d["sigmas"], names=d.get("names"))


def ml_weights(sigmas, names=None) -> ErrorModel:
    """Weights proportional to sigma^-2, normalised to sum to one."""
    s = np.asarray(sigmas, dtype=float)
    if s.ndim != 1 or s.size == 0:
        raise ValueError("need at least one sigma")
    if np.any(~(s > 0)) or np.any(~np.isfinite(s)):
        raise ValueError(f"all sigmas must be finite and positive, got {s.tolist()}")
    precision = s**-2.0
    total = precision.sum()
    weights = precision / total
    return ErrorModel(s.tolist(), weights.tolist(), float(total**-0.5), list(names or []))


def mad_filter(residuals, k: float = DEFAULT_MAD_K):
    """Drop values farther than ``k`` scaled MADs from the median.

    Returns the kept values and the removed fraction. With MAD = 0 only
    values equal to the median survive.
    """
    x = np.asarray(residuals, dtype=float)
    if x.size == 0:
        raise ValueError("mad_filter needs a nonempty sample")
    med = np.median(x)
    mad = np.median(np.abs(x - med))
    keep = np.abs(x - med) <= k * MAD_SCALE * mad
    return x[keep], 1.0 - keep.sum() / x.size


@dataclass
class SigmaEstimate:
    sigma: float
    bias: float
    n: int
    removed_fraction: float = 0.0


@dataclass
class GaugeMatchupSet:
    """Gauge values collocated with each product's value at the nearest cell."""

    station_ids: list
    dates: list
    gauge: np.ndarray
    products: np.ndarray  # (n_matchups, n_products)
    names: list = field(default_factory=list)

    def __post_init__(self):
        self.gauge = np.asarray(self.gauge, dtype=float)
        self.products = np.atleast_2d(np.asarray(self.products, dtype=float))
        if self.products.shape[0] != self.gauge.size:
            self.products = self.products.T
        keep = np.isfinite(self.gauge) & np.isfinite(self.products).any(axis=1)
        if not keep.all():
            self.station_ids = [s for s, k in zip(self.station_ids, keep) if k]
            self.dates = [d for d, k in zip(self.dates, keep) if k]
            self.gauge = self.gauge[keep]
            self.products = self.products[keep]

    @property
    def n_products(self) -> int:
        return self.products.shape[1]

    def residuals(self, product: int) -> np.ndarray:
        r = self.products[:, product] - self.gauge
        return r[np.isfinite(r)]


def build_matchups(records, fields: list, names=None) -> GaugeMatchupSet:
    """Pair gauge records (station_id, lat, lon, date, value) with product fields.

    Each station maps to its nearest cell center on each product's grid; a
    station-day contributes one matchup (duplicates are averaged).
    """
    by_key: dict = {}
    for rec in records:
        key = (rec["station_id"], rec["date"])
        by_key.setdefault(key, []).append(rec)
    keys = sorted(by_key)
    if not keys:
        raise ValueError("no gauge records")
    lats = np.array([float(by_key[k][0]["lat"]) for k in keys])
    lons = np.array([float(by_key[k][0]["lon"]) for k in keys])
    gauge = np.array([np.mean([float(r["value"]) for r in by_key[k]]) for k in keys])
    dates = [k[1] if isinstance(k[1], dt.date) else dt.date.fromisoformat(k[1]) for k in keys]
    prod = np.full((len(keys), len(fields)), np.nan)
    for m, fld in enumerate(fields):
        cell = nearest_index(fld.grid, lats, lons)
        tindex = {t: i for i, t in enumerate(fld.times)}
        flat = fld.values.reshape(fld.ntime, -1)
        for n, (d, c) in enumerate(zip(dates, cell)):
            ti = tindex.get(d)
            if ti is not None:
                prod[n, m] = flat[ti, c]
    return GaugeMatchupSet([k[0] for k in keys], dates, gauge, prod, list(names or []))


def estimate_sigma(matchups: GaugeMatchupSet, product: int, mad_filter_on: bool = False,
                   mad_k: float = DEFAULT_MAD_K) -> SigmaEstimate:
    """Sample standard deviation (n-1) of product-minus-gauge residuals."""
    r = matchups.residuals(product)
    if r.size < 2:
        raise ValueError(f"product {product}: need at least 2 residuals, got {r.size}")
    removed = 0.0
    if mad_filter_on:
        r, removed = mad_filter(r, mad_k)
        if r.size < 2:
            raise ValueError(f"product {product}: fewer than 2 residuals survive MAD filter")
    sigma = float(np.std(r, ddof=1))
    if sigma == 0.0:
        warnings.warn(f"product {product}: zero residual spread, error model is degenerate",
                      DegenerateModelWarning, stacklevel=2)
    return SigmaEstimate(sigma, float(np.mean(r)), int(r.size), float(removed))


def ensemble_mean(fields: list, model: ErrorModel) -> GridField:
    """Weighted sum of co-registered fields.

    Where some products are missing, weights renormalise over the rest; a
    pixel-time with every product missing stays NaN.
    """
    if len(fields) != len(model.weights):
        raise GridError(f"{len(fields)} fields but {len(model.weights)} weights")
    first = fields[0]
    for f in fields[1:]:
        if f.grid != first.grid or f.times != first.times:
            raise GridError("fields must share grid and time axis; regrid first")
    stack = np.stack([f.values for f in fields])
    w = np.asarray(model.weights).reshape(-1, 1, 1, 1)
    valid = ~np.isnan(stack)
    wsum = (w * valid).sum(axis=0)
    num = (w * np.where(valid, stack, 0.0)).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(wsum > 0, num / np.where(wsum > 0, wsum, 1.0), np.nan)
    return first.with_values(out, variable="wet_bulb_ensemble")


def finest_grid(grids) -> GeoGrid:
    return min(grids, key=lambda g: (g.dlat * g.dlon, g.dlat))


def fuse(fields: list, model: ErrorModel, target: GeoGrid | None = None) -> GridField:
    """Regrid every product to ``target`` (default: the finest grid), then fuse."""
    target = target or finest_grid([f.grid for f in fields])
    aligned = [f if f.grid == target else regrid_nearest(f, target) for f in fields]
    return ensemble_mean(aligned, model)
