"""Snowfall-to-precipitation ratio from pentad precipitation and daily snow masks."""

from __future__ import annotations

import datetime as dt
import warnings

import numpy as np

from wbsnow import dates
from wbsnow.grid import GridError, GridField, regrid_nearest
from wbsnow.snowmask import SnowMaskSeries

MIN_ANNUAL_PRECIP_MM = 50.0


class CoverageWarning(UserWarning):
    """A pentad window had missing daily masks."""


class DryPixelWarning(UserWarning):
    """Annual precipitation was zero, so SPR is undefined."""


def snow_frequency_pentad(masks: SnowMaskSeries, year: int, pentad: int) -> np.ndarray:
    """Fraction of a pentad's days flagged as potential snowfall, per pixel.

    The window has 5 days, 6 for the last pentad of a leap year. Days with a
    missing mask are left out of the count and trigger a CoverageWarning.
    """
    index = {t: i for i, t in enumerate(masks.times)}
    window = dates.pentad_days(year, pentad)
    absent = [d for d in window if d not in index]
    if absent:
        raise GridError(f"pentad {pentad} of {year} lacks daily masks for {absent[0]}")
    vals = masks.field.values[[index[d] for d in window]]
    valid = (~np.isnan(vals)).sum(axis=0)
    if (valid < len(window)).any():
        warnings.warn(f"pentad {pentad} of {year}: {(valid < len(window)).sum()} pixel(s) "
                      "with incomplete daily coverage", CoverageWarning, stacklevel=2)
    snow = (vals == 1).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(valid > 0, snow / np.where(valid > 0, valid, 1), np.nan)


def pentad_snow_frequencies(masks: SnowMaskSeries, year: int) -> GridField:
    """All 73 pentad snow frequencies of ``year`` as a pentad-step field."""
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", CoverageWarning)
        fs = np.stack([snow_frequency_pentad(masks, year, p) for p in range(dates.PENTADS_PER_YEAR)])
    if caught:
        warnings.warn(f"{year}: {len(caught)} pentad(s) with incomplete daily coverage",
                      CoverageWarning, stacklevel=2)
    return GridField(masks.grid, dates.pentad_starts(year), fs, "fraction", "snow_frequency")


def _year_pentads(field: GridField, year: int) -> np.ndarray:
    index = {t: i for i, t in enumerate(field.times)}
    starts = dates.pentad_starts(year)
    missing = [s for s in starts if s not in index]
    if missing:
        raise GridError(f"{field.variable or 'field'} lacks pentad starting {missing[0]}")
    return field.values[[index[s] for s in starts]]


def annual_spr(f_s: GridField, precip: GridField, year: int) -> GridField:
    """Annual SPR = sum(f_s * P) / sum(P) over the year's pentads.

    ``precip`` is regridded to the frequency grid by nearest neighbour when
    the grids differ. Pentads with missing f_s or P are skipped in both sums.
    Pixels with no precipitation get NaN and a DryPixelWarning.
    """
    if precip.grid != f_s.grid:
        precip = regrid_nearest(precip, f_s.grid)
    fs = _year_pentads(f_s, year)
    p = _year_pentads(precip, year)
    if np.any(p < 0):
        raise ValueError("precipitation must be non-negative")
    ok = ~(np.isnan(fs) | np.isnan(p))
    snow = np.where(ok, fs * p, 0.0).sum(axis=0)
    total = np.where(ok, p, 0.0).sum(axis=0)
    dry = total == 0
    if dry.any():
        warnings.warn(f"{year}: {int(dry.sum())} dry pixel(s) set to NaN", DryPixelWarning,
                      stacklevel=2)
    with np.errstate(invalid="ignore", divide="ignore"):
        spr = np.where(dry, np.nan, snow / np.where(dry, 1.0, total))
    return GridField(f_s.grid, [dt.date(year, 1, 1)], spr[None], "fraction", "spr")


def annual_precip(precip: GridField, year: int) -> np.ndarray:
    return np.nansum(_year_pentads(precip, year), axis=0)


def mask_dry(spr_stack: GridField, precip_totals: np.ndarray,
             min_mm: float = MIN_ANNUAL_PRECIP_MM) -> GridField:
    """Blank SPR where annual precipitation falls below ``min_mm``.

    ``precip_totals`` has one (nlat, nlon) layer per year of the stack.
    """
    totals = np.asarray(precip_totals)
    return spr_stack.with_values(np.where(totals < min_mm, np.nan, spr_stack.values))
