"""Proleptic Gregorian helpers: pentads and meteorological seasons."""

import calendar
import datetime as dt

PENTADS_PER_YEAR = 73

SEASONS = {"DJF": (12, 1, 2), "MAM": (3, 4, 5), "JJA": (6, 7, 8), "SON": (9, 10, 11)}


def days_in_year(year: int) -> int:
    return 366 if calendar.isleap(year) else 365


def year_days(year: int) -> list:
    start = dt.date(year, 1, 1)
    return [start + dt.timedelta(days=i) for i in range(days_in_year(year))]


def pentad_of(day: dt.date) -> int:
    """Zero-based pentad index; day 366 of a leap year falls in pentad 72."""
    doy = day.timetuple().tm_yday
    return min((doy - 1) // 5, PENTADS_PER_YEAR - 1)


def pentad_start(year: int, pentad: int) -> dt.date:
    if not 0 <= pentad < PENTADS_PER_YEAR:
        raise ValueError(f"pentad {pentad} outside 0..72")
    return dt.date(year, 1, 1) + dt.timedelta(days=5 * pentad)


def pentad_days(year: int, pentad: int) -> list:
    start = pentad_start(year, pentad)
    length = 5 if pentad < PENTADS_PER_YEAR - 1 else days_in_year(year) - 360
    return [start + dt.timedelta(days=i) for i in range(length)]


def pentad_starts(year: int) -> list:
    return [pentad_start(year, p) for p in range(PENTADS_PER_YEAR)]


def is_pentad_start(day: dt.date) -> bool:
    doy = day.timetuple().tm_yday
    return (doy - 1) % 5 == 0 and doy <= 361


def next_pentad_start(day: dt.date) -> dt.date:
    p = pentad_of(day)
    if p == PENTADS_PER_YEAR - 1:
        return dt.date(day.year + 1, 1, 1)
    return pentad_start(day.year, p + 1)


def season_of(day: dt.date) -> tuple:
    """(season year, season name); December counts toward the next year's DJF."""
    for name, months in SEASONS.items():
        if day.month in months:
            year = day.year + 1 if day.month == 12 else day.year
            return year, name
    raise AssertionError(day)
