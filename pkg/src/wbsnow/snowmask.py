"""Potential-snowfall masks, snowfall areas, exceedance maps and transition latitudes."""

from __future__ import annotations

import datetime as dt
import warnings
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from wbsnow import dates
from wbsnow.grid import (
    EARTH_RADIUS_KM,
    LAND,
    GridError,
    GridField,
    Selector,
    SurfaceMask,
    area_grid,
)
from wbsnow.trend import theil_sen_xy

KELVIN = 273.15
EXCEEDANCE_LEVELS = (0.25, 0.50, 0.75)
SLICE_WIDTH = 15.0


class ClampWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SnowThreshold:
    """Wet-bulb thresholds in degrees Celsius."""

    land: float = 1.0
    ocean: float = 1.1

    def __post_init__(self):
        if not (np.isfinite(self.land) and np.isfinite(self.ocean)):
            raise ValueError("thresholds must be finite")


@dataclass
class SnowMaskSeries:
    field: GridField
    threshold: SnowThreshold
    source: str = ""

    @property
    def grid(self):
        return self.field.grid

    @property
    def times(self):
        return self.field.times


def _threshold_map(mask: SurfaceMask, thr: SnowThreshold, units: str) -> np.ndarray:
    land, ocean = thr.land, thr.ocean
    if units in ("K", "kelvin"):
        land, ocean = land + KELVIN, ocean + KELVIN
    elif units not in ("degC", "C", "celsius"):
        raise ValueError(f"wet-bulb field units must be K or degC, got {units!r}")
    return np.where(mask.surface == LAND, land, ocean)


def potential_snow_mask(t_wb: GridField, mask: SurfaceMask, thr: SnowThreshold = SnowThreshold(),
                        source: str = "") -> SnowMaskSeries:
    """1 where the wet-bulb temperature is at or below the surface threshold."""
    if t_wb.grid != mask.grid:
        raise GridError("wet-bulb field and surface mask grids differ")
    limit = _threshold_map(mask, thr, t_wb.units or "K")
    vals = t_wb.values
    out = np.where(np.isnan(vals), np.nan, (vals <= limit).astype(float))
    return SnowMaskSeries(t_wb.with_values(out, units="flag", variable="snow_mask"), thr,
                          source or t_wb.variable)


def snow_area(masks: SnowMaskSeries, mask: SurfaceMask, selector: Selector | None = None) -> np.ndarray:
    """Potential snowfall area (km^2) per time step inside the selector."""
    sel = (selector or Selector()).pixels(mask)
    w = np.where(sel, area_grid(mask.grid), 0.0)
    return ((masks.field.values == 1) * w).sum(axis=(1, 2))


def annual_means(times, values) -> dict:
    """Calendar-year means keyed by year."""
    groups = defaultdict(list)
    for t, v in zip(times, values):
        groups[t.year].append(v)
    return {y: float(np.mean(v)) for y, v in sorted(groups.items())}


def seasonal_means(times, values) -> dict:
    """Means keyed by (season year, season), DJF of year y including December of y-1.

    Seasons lacking any of their three months are dropped, which removes the
    first DJF of a record starting in January.
    """
    groups = defaultdict(list)
    months = defaultdict(set)
    for t, v in zip(times, values):
        key = dates.season_of(t)
        groups[key].append(v)
        months[key].add(t.month)
    out = {}
    for key in sorted(groups, key=lambda k: (k[0], list(dates.SEASONS).index(k[1]))):
        if months[key] == set(dates.SEASONS[key[1]]):
            out[key] = float(np.mean(groups[key]))
    return out


def _days_of(masks: SnowMaskSeries, start: dt.date, end: dt.date) -> np.ndarray:
    """Time indices of [start, end); error if any day is missing."""
    if masks.field.step not in ("daily", "single"):
        raise GridError("exceedance needs a daily mask series")
    index = {t: i for i, t in enumerate(masks.times)}
    n = (end - start).days
    wanted = [start + dt.timedelta(days=i) for i in range(n)]
    missing = [d for d in wanted if d not in index]
    if missing:
        raise GridError(f"mask series lacks {len(missing)} day(s) from {start} to {end}, "
                        f"first {missing[0]}")
    return np.array([index[d] for d in wanted])


def _frequency(values: np.ndarray) -> np.ndarray:
    valid = (~np.isnan(values)).sum(axis=0)
    snow = (values == 1).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(valid > 0, snow / np.where(valid > 0, valid, 1), np.nan)


def exceedance_frequency(masks: SnowMaskSeries, year: int) -> GridField:
    """Fraction of the calendar year's days flagged as potential snowfall.

    Missing days are left out of the denominator; a complete record divides
    by 365 or 366.
    """
    idx = _days_of(masks, dt.date(year, 1, 1), dt.date(year + 1, 1, 1))
    freq = _frequency(masks.field.values[idx])
    return GridField(masks.grid, [dt.date(year, 1, 1)], freq[None], "fraction", "snow_frequency")


def window_frequency(masks: SnowMaskSeries, first_year: int, window: int = 10) -> GridField:
    """Snowfall frequency over ``window`` consecutive calendar years."""
    idx = _days_of(masks, dt.date(first_year, 1, 1), dt.date(first_year + window, 1, 1))
    freq = _frequency(masks.field.values[idx])
    return GridField(masks.grid, [dt.date(first_year, 1, 1)], freq[None], "fraction", "snow_frequency")


def exceedance_mask(freq: GridField, level: float) -> GridField:
    """Binary map of pixels whose snowfall frequency is at least ``level``."""
    if not 0 <= level <= 1:
        raise ValueError(f"exceedance level {level} outside [0, 1]")
    v = freq.values
    out = np.where(np.isnan(v), np.nan, (v >= level).astype(float))
    return freq.with_values(out, units="flag", variable=f"exceedance_{level:g}")


@dataclass
class TransitionLatitudes:
    latitudes: np.ndarray  # degrees north, one per slice
    areas: np.ndarray  # km^2 per slice
    level: float | None
    slice_width: float = SLICE_WIDTH
    anchor: float = 0.0

    @property
    def slice_starts(self) -> np.ndarray:
        return self.anchor + self.slice_width * np.arange(len(self.latitudes))


def slice_index(lons, width: float = SLICE_WIDTH, anchor: float = 0.0) -> np.ndarray:
    nslice = int(round(360.0 / width))
    return (np.floor(np.mod(np.asarray(lons) - anchor, 360.0) / width).astype(int)) % nslice


def slice_areas(binary: GridField, selector: Selector | None = None, mask: SurfaceMask | None = None,
                width: float = SLICE_WIDTH, anchor: float = 0.0) -> np.ndarray:
    """Area (km^2) flagged 1 per time step and longitude slice, NH only.

    Cells belong to the slice containing their center longitude.
    """
    grid = binary.grid
    nslice = int(round(360.0 / width))
    if abs(nslice * width - 360.0) > 1e-9:
        raise ValueError(f"slice width {width} does not divide 360")
    sel = np.broadcast_to(grid.lats[:, None] > 0, grid.shape)
    if selector is not None:
        sel = sel & selector.pixels(mask or SurfaceMask.all_land(grid))
    w = np.where(sel, area_grid(grid), 0.0)
    flagged = (binary.values == 1) * w  # (t, lat, lon)
    per_lon = flagged.sum(axis=1)  # (t, lon)
    idx = slice_index(grid.lons, width, anchor)
    out = np.zeros((binary.ntime, nslice))
    for s in range(nslice):
        out[:, s] = per_lon[:, idx == s].sum(axis=1)
    return out


def sector_area(lat_deg, width: float = SLICE_WIDTH, radius: float = EARTH_RADIUS_KM):
    """Area of the polar sector of a slice poleward of ``lat_deg``."""
    return radius**2 * np.radians(width) * (1.0 - np.sin(np.radians(lat_deg)))


def transition_latitudes(areas, level: float | None = None, width: float = SLICE_WIDTH,
                         anchor: float = 0.0, radius: float = EARTH_RADIUS_KM) -> TransitionLatitudes:
    """Latitude whose polar sector in each slice encloses the slice's snowfall area."""
    a = np.asarray(areas, dtype=float)
    if np.any(a < 0):
        raise ValueError("slice areas must be non-negative")
    full = radius**2 * np.radians(width)
    arg = 1.0 - a / full
    if np.any(arg < 0):
        warnings.warn(f"{int((arg < 0).sum())} slice area(s) exceed the pole-to-equator sector; "
                      "clamped to 0 deg", ClampWarning, stacklevel=2)
    lat = np.degrees(np.arcsin(np.clip(arg, 0.0, 1.0)))
    return TransitionLatitudes(lat, a, level, width, anchor)


def transition_latitude_series(masks: SnowMaskSeries, years, level: float | None = None,
                               window: int | None = None, selector=None, mask=None,
                               width: float = SLICE_WIDTH, anchor: float = 0.0) -> np.ndarray:
    """Transition latitudes per year (rows) and slice (columns).

    With ``level`` None the slice area is the annual mean daily snowfall
    area; otherwise it is the area whose frequency reaches ``level`` over the
    year, or over a ``window``-year span starting that year.
    """
    rows = []
    for y in years:
        if level is None:
            idx = _days_of(masks, dt.date(y, 1, 1), dt.date(y + 1, 1, 1))
            sub = masks.field.select_times(idx)
            area = slice_areas(sub, selector, mask, width, anchor).mean(axis=0)
        else:
            freq = window_frequency(masks, y, window) if window else exceedance_frequency(masks, y)
            area = slice_areas(exceedance_mask(freq, level), selector, mask, width, anchor)[0]
        rows.append(transition_latitudes(area, level, width, anchor).latitudes)
    return np.array(rows)


def retraction_rate(latitudes, years) -> np.ndarray:
    """Theil-Sen trend of each slice's latitude, in degrees per decade.

    Positive values mean the boundary moved poleward.
    """
    lat = np.asarray(latitudes, dtype=float)
    yrs = np.asarray(years, dtype=float)
    return np.array([10.0 * theil_sen_xy(yrs, lat[:, s]) for s in range(lat.shape[1])])
