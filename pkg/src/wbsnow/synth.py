"""Synthetic product triplets with known error, trend and serial correlation."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from wbsnow import dates, io, thermo
from wbsnow.grid import LAND, GeoGrid, GridField, SurfaceMask, nearest_index
from wbsnow.snowmask import KELVIN


@dataclass
class SyntheticSpec:
    dlat: float = 10.0
    dlon: float = 10.0
    start_year: int = 1979
    n_years: int = 10
    equator_twb: float = 27.0  # degC
    gradient: float = 50.0  # K drop from equator to pole
    seasonal_amplitude: float = 12.0  # K at the pole, land
    trend_per_decade: dict = field(default_factory=lambda: {"land": 0.34, "ocean": 0.34})
    phi: float = 0.3
    sigma: float = 0.15
    daily_sigma: float = 1.0
    product_names: tuple = ("era", "jra", "ncep")
    product_sigmas: tuple = (1.47, 1.50, 2.69)
    precip_factor: int = 2  # precip grid is this much coarser
    n_stations: int = 30
    gauge_years: int = 2
    seed: int = 0

    def __post_init__(self):
        if not abs(self.phi) < 1:
            raise ValueError("AR(1) coefficient must satisfy |phi| < 1")
        if self.sigma < 0 or self.daily_sigma < 0:
            raise ValueError("noise standard deviations must be non-negative")
        if len(self.product_names) != len(self.product_sigmas):
            raise ValueError("one sigma per product")
        if self.n_years < 1:
            raise ValueError("n_years must be positive")
        self.product_names = tuple(self.product_names)
        self.product_sigmas = tuple(float(s) for s in self.product_sigmas)

    @property
    def grid(self) -> GeoGrid:
        return GeoGrid.global_grid(self.dlat, self.dlon)

    @property
    def years(self) -> list:
        return list(range(self.start_year, self.start_year + self.n_years))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["product_names"] = list(self.product_names)
        d["product_sigmas"] = list(self.product_sigmas)
        return d


def ar1(n: int, phi: float, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Stationary AR(1) path with innovation standard deviation ``sigma``."""
    e = rng.normal(0.0, sigma, n)
    x = np.empty(n)
    x[0] = e[0] / np.sqrt(1.0 - phi**2)
    for t in range(1, n):
        x[t] = phi * x[t - 1] + e[t]
    return x


def synthetic_mask(grid: GeoGrid) -> SurfaceMask:
    """Three bands of continents plus a polar cap, with coarse climate labels."""
    lat, lon = np.meshgrid(grid.lats, grid.lons, indexing="ij")
    land = ((np.mod(lon, 120.0) < 50.0) & (lat > -60.0)) | (lat < -70.0)
    regions = np.zeros(grid.shape, dtype=np.uint8)
    regions[land & (np.abs(lat) > 40)] = 1
    regions[land & (np.abs(lat) > 60)] = 2
    return SurfaceMask(grid, land.astype(np.uint8), regions, {1: "cold", 2: "polar"})


def truth_wet_bulb(spec: SyntheticSpec, mask: SurfaceMask, rng: np.random.Generator) -> GridField:
    grid = spec.grid
    days = [d for y in spec.years for d in dates.year_days(y)]
    doy = np.array([d.timetuple().tm_yday for d in days], dtype=float)
    year_idx = np.array([d.year - spec.start_year for d in days])
    sinlat = np.sin(np.radians(grid.lats))[:, None]
    land = mask.surface == LAND
    base = KELVIN + spec.equator_twb - spec.gradient * sinlat**2 + np.where(land, 0.0, 1.0)
    amp = spec.seasonal_amplitude * sinlat * np.where(land, 1.0, 0.5)
    season = np.cos(2 * np.pi * (doy - 15.0) / 365.25)
    rate = np.where(land, spec.trend_per_decade.get("land", 0.0),
                    spec.trend_per_decade.get("ocean", 0.0)) / 10.0
    anomaly = ar1(spec.n_years, spec.phi, spec.sigma, rng)
    values = (base[None] - amp[None] * season[:, None, None]
              + rate[None] * year_idx[:, None, None]
              + anomaly[year_idx][:, None, None])
    values = values + rng.normal(0.0, spec.daily_sigma, values.shape)
    return GridField(grid, days, values, "K", "wet_bulb_truth")


def atmosphere_for(t_wb: np.ndarray, rng: np.random.Generator):
    """Air temperature, dew point and pressure whose wet-bulb temperature is ``t_wb``."""
    pressure = rng.uniform(850.0, 1013.0, t_wb.shape[1:])[None] * np.ones_like(t_wb)
    # depression as a fraction of the zero-humidity limit keeps rh in (0, 1);
    # the 20 K cap keeps hot cells away from the saturation singularity
    limit = thermo.PSYCHRO_SCALE / (pressure * np.exp(thermo.B_SAT / t_wb) - thermo.A_SAT)
    frac = rng.uniform(0.2, 0.6, t_wb.shape)
    t_air = t_wb + frac * np.minimum(limit, 20.0)
    rh = thermo.rh_for_wet_bulb(t_air, t_wb, pressure)
    return t_air, thermo.dewpoint_from_rh(t_air, rh), pressure


def precip_field(spec: SyntheticSpec, rng: np.random.Generator) -> GridField:
    grid = GeoGrid.global_grid(spec.dlat * spec.precip_factor, spec.dlon * spec.precip_factor)
    times = [p for y in spec.years for p in dates.pentad_starts(y)]
    values = rng.gamma(2.0, 5.0, (len(times),) + grid.shape)
    return GridField(grid, times, values, "mm", "precip")


def gauge_records(spec, truth: GridField, precip: GridField, mask: SurfaceMask, rng) -> list:
    """Station wet-bulb, precipitation and phase over the last ``gauge_years`` years."""
    grid = truth.grid
    land_cells = np.flatnonzero(mask.surface.ravel() == LAND)
    cells = rng.choice(land_cells, size=min(spec.n_stations, land_cells.size), replace=False)
    cells.sort()
    ii, jj = np.unravel_index(cells, grid.shape)
    lats = grid.lats[ii] + rng.uniform(-0.25, 0.25, cells.size) * grid.dlat
    lons = np.mod(grid.lons[jj] + rng.uniform(-0.25, 0.25, cells.size) * grid.dlon, 360.0)
    pcell = nearest_index(precip.grid, lats, lons)
    first = max(spec.years[0], spec.years[-1] - spec.gauge_years + 1)
    tindex = {t: i for i, t in enumerate(truth.times)}
    pindex = {t: i for i, t in enumerate(precip.times)}
    flat = truth.values.reshape(truth.ntime, -1)
    pflat = precip.values.reshape(precip.ntime, -1)
    limit = KELVIN + 1.0
    recs = []
    for s, (cell, la, lo, pc) in enumerate(zip(cells, lats, lons, pcell)):
        sid = f"S{s:04d}"
        for y in range(first, spec.years[-1] + 1):
            for p in range(dates.PENTADS_PER_YEAR):
                window = dates.pentad_days(y, p)
                daily_p = pflat[pindex[window[0]], pc] / len(window)
                for d in window:
                    twb = flat[tindex[d], cell]
                    common = {"station_id": sid, "lat": round(float(la), 4),
                              "lon": round(float(lo), 4), "date": d}
                    recs.append({**common, "value": float(twb), "variable": "wet_bulb_K"})
                    recs.append({**common, "value": round(float(daily_p), 4), "variable": "precip_mm"})
                    phase = "snow" if twb <= limit else "rain"
                    recs.append({**common, "value": phase, "variable": "phase"})
    return recs


def generate(spec: SyntheticSpec, out_dir) -> dict:
    """Write mask, per-product atmosphere and wet-bulb datasets, precip and gauges.

    Returns a config dict (paths relative to ``out_dir``) ready for the
    pipeline stages.
    """
    out = Path(out_dir)
    root = np.random.SeedSequence(spec.seed)
    s_truth, s_prec, s_gauge, *s_prod = root.spawn(3 + len(spec.product_names))
    mask = synthetic_mask(spec.grid)
    io.write_mask(mask, out / "mask")
    truth = truth_wet_bulb(spec, mask, np.random.default_rng(s_truth))
    products = {}
    for name, sigma, ss in zip(spec.product_names, spec.product_sigmas, s_prod):
        rng = np.random.default_rng(ss)
        twb = truth.values + rng.normal(0.0, sigma, truth.values.shape)
        t_air, t_dew, pres = atmosphere_for(twb, rng)
        pdir = Path("products") / name
        for var, vals, units in (("t_air", t_air, "K"), ("dewpoint", t_dew, "K"),
                                 ("pressure", pres, "mb")):
            io.write_dataset(truth.with_values(vals, units=units, variable=var), out / pdir / var)
        products[name] = {"t_air": str(pdir / "t_air"), "dewpoint": str(pdir / "dewpoint"),
                          "pressure": str(pdir / "pressure")}
    precip = precip_field(spec, np.random.default_rng(s_prec))
    io.write_dataset(precip, out / "precip")
    recs = gauge_records(spec, truth, precip, mask, np.random.default_rng(s_gauge))
    io.write_gauges(out / "gauges.csv", recs)
    io.write_json(out / "truth.json", spec.to_dict())
    return {
        "products": products,
        "surface_mask": "mask",
        "precip": "precip",
        "gauges": "gauges.csv",
        "seed": spec.seed,
    }
