"""Regular lat-lon grids, spherical geometry and spatial reductions."""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.spatial import cKDTree

from wbsnow.dates import is_pentad_start, next_pentad_start

EARTH_RADIUS_KM = 6371.0

LAND = 1
OCEAN = 0

# relative tolerance on chord distance below which two source centers tie
_TIE_RTOL = 1e-12
_CHUNK = 1 << 16


class GridError(ValueError):
    pass


class SelectionError(ValueError):
    """Raised when a selector matches no usable pixel."""


@dataclass(frozen=True)
class GeoGrid:
    """Regular grid described by its first cell center and spacing.

    Latitudes increase with the row index; longitudes are taken modulo 360.
    """

    lat_start: float
    lon_start: float
    dlat: float
    dlon: float
    nlat: int
    nlon: int

    def __post_init__(self):
        if self.dlat <= 0 or self.dlon <= 0:
            raise GridError("grid spacing must be positive")
        if self.nlat < 1 or self.nlon < 1:
            raise GridError("grid must have at least one cell")
        lat_end = self.lat_start + (self.nlat - 1) * self.dlat
        eps = 1e-9
        if self.lat_start < -90 - eps or lat_end > 90 + eps:
            raise GridError(f"cell centers leave [-90, 90]: {self.lat_start}..{lat_end}")
        if self.dlat * self.nlat > 180 + self.dlat + eps:
            raise GridError("latitude extent overlaps itself")
        if self.dlon * self.nlon > 360 + self.dlon + eps:
            raise GridError("longitude extent wraps onto itself")

    @classmethod
    def global_grid(cls, dlat: float, dlon: float | None = None) -> "GeoGrid":
        """Global grid whose cell edges run from pole to pole and 0 to 360."""
        dlon = dlat if dlon is None else dlon
        nlat = int(round(180.0 / dlat))
        nlon = int(round(360.0 / dlon))
        return cls(-90.0 + dlat / 2, dlon / 2, dlat, dlon, nlat, nlon)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nlat, self.nlon)

    @property
    def lats(self) -> np.ndarray:
        return self.lat_start + self.dlat * np.arange(self.nlat)

    @property
    def lons(self) -> np.ndarray:
        return np.mod(self.lon_start + self.dlon * np.arange(self.nlon), 360.0)

    def lat_edges(self) -> tuple[np.ndarray, np.ndarray]:
        """South and north cell edges, clipped at the poles."""
        lats = self.lats
        south = np.clip(lats - self.dlat / 2, -90.0, 90.0)
        north = np.clip(lats + self.dlat / 2, -90.0, 90.0)
        return south, north

    def to_dict(self) -> dict:
        return {
            "lat_start": self.lat_start,
            "lon_start": self.lon_start,
            "dlat": self.dlat,
            "dlon": self.dlon,
            "nlat": self.nlat,
            "nlon": self.nlon,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GeoGrid":
        try:
            return cls(
                float(d["lat_start"]),
                float(d["lon_start"]),
                float(d["dlat"]),
                float(d["dlon"]),
                int(d["nlat"]),
                int(d["nlon"]),
            )
        except KeyError as exc:
            raise GridError(f"grid definition lacks {exc.args[0]!r}") from None


def infer_step(times: Sequence[dt.date]) -> str:
    """Classify a time axis as 'daily', 'pentad', 'annual' or 'single'.

    Pentads start on day-of-year 1, 6, ..., 361; the last pentad of a leap
    year is six days long, so pentad axes are checked against the pentad
    calendar instead of a fixed stride.
    """
    times = list(times)
    if len(times) <= 1:
        return "single"
    diffs = {(b - a).days for a, b in zip(times, times[1:])}
    if min(diffs) <= 0:
        raise GridError("time axis is not strictly increasing")
    if diffs == {1}:
        return "daily"
    if all(t.month == 1 and t.day == 1 for t in times) and all(
        b.year - a.year == 1 for a, b in zip(times, times[1:])
    ):
        return "annual"
    if all(is_pentad_start(t) for t in times) and all(
        next_pentad_start(a) == b for a, b in zip(times, times[1:])
    ):
        return "pentad"
    raise GridError(f"time axis has no uniform step (gaps {sorted(diffs)[:5]} days)")


@dataclass
class GridField:
    """A time x lat x lon cube on a GeoGrid; NaN marks missing values."""

    grid: GeoGrid
    times: list
    values: np.ndarray
    units: str = ""
    variable: str = ""

    def __post_init__(self):
        self.times = [_as_date(t) for t in self.times]
        self.values = np.asarray(self.values, dtype=np.float64)
        expected = (len(self.times), self.grid.nlat, self.grid.nlon)
        if self.values.shape != expected:
            raise GridError(f"values have shape {self.values.shape}, expected {expected}")
        self.step = infer_step(self.times)

    @property
    def ntime(self) -> int:
        return len(self.times)

    def with_values(self, values, units=None, variable=None, times=None) -> "GridField":
        return GridField(
            self.grid,
            list(self.times) if times is None else times,
            values,
            self.units if units is None else units,
            self.variable if variable is None else variable,
        )

    def select_times(self, keep) -> "GridField":
        keep = np.asarray(keep)
        times = [t for t, k in zip(self.times, keep) if k] if keep.dtype == bool else [
            self.times[i] for i in keep
        ]
        return GridField(self.grid, times, self.values[keep], self.units, self.variable)

    def years(self) -> np.ndarray:
        return np.array([t.year for t in self.times])


def _as_date(t) -> dt.date:
    if isinstance(t, dt.datetime):
        return t.date()
    if isinstance(t, dt.date):
        return t
    if isinstance(t, np.datetime64):
        return dt.date.fromisoformat(str(t.astype("datetime64[D]")))
    return dt.date.fromisoformat(str(t))


@dataclass
class SurfaceMask:
    """Per-pixel land/ocean flag with optional region labels.

    ``regions`` holds integer codes (0 = unlabeled) whose names live in
    ``labels``.
    """

    grid: GeoGrid
    surface: np.ndarray
    regions: np.ndarray | None = None
    labels: dict = field(default_factory=dict)

    def __post_init__(self):
        self.surface = np.asarray(self.surface, dtype=np.uint8)
        if self.surface.shape != self.grid.shape:
            raise GridError("surface layer does not match grid")
        if not np.isin(self.surface, (LAND, OCEAN)).all():
            raise GridError("surface layer must hold 0 (ocean) or 1 (land)")
        if self.regions is not None:
            self.regions = np.asarray(self.regions, dtype=np.uint8)
            if self.regions.shape != self.grid.shape:
                raise GridError("region layer does not match grid")
        self.labels = {int(k): str(v) for k, v in self.labels.items()}

    @classmethod
    def all_land(cls, grid: GeoGrid) -> "SurfaceMask":
        return cls(grid, np.ones(grid.shape, dtype=np.uint8))

    def region_code(self, name: str) -> int:
        for code, label in self.labels.items():
            if label == name:
                return code
        raise SelectionError(f"unknown region {name!r}")


@dataclass(frozen=True)
class Selector:
    """Pixel filter on surface type, hemisphere, region labels and latitude band."""

    surface: str | None = None
    hemisphere: str | None = None
    regions: tuple = ()
    lat_min: float | None = None
    lat_max: float | None = None

    @classmethod
    def parse(cls, text: str | None) -> "Selector":
        """Parse ``"surface=land,hemisphere=NH,region=cold|polar"``.

        Bare words ``land``, ``ocean``, ``NH``, ``SH`` and ``global`` are
        accepted as shorthands.
        """
        kw: dict = {}
        if not text:
            return cls()
        for part in text.split(","):
            part = part.strip()
            if not part or part == "global":
                continue
            if "=" not in part:
                if part in ("land", "ocean"):
                    kw["surface"] = part
                elif part.upper() in ("NH", "SH"):
                    kw["hemisphere"] = part.upper()
                else:
                    raise SelectionError(f"cannot parse selector term {part!r}")
                continue
            key, val = (s.strip() for s in part.split("=", 1))
            if key == "surface":
                kw["surface"] = val
            elif key == "hemisphere":
                kw["hemisphere"] = val.upper()
            elif key in ("region", "regions"):
                kw["regions"] = tuple(v for v in val.split("|") if v)
            elif key == "lat_min":
                kw["lat_min"] = float(val)
            elif key == "lat_max":
                kw["lat_max"] = float(val)
            else:
                raise SelectionError(f"unknown selector key {key!r}")
        return cls(**kw)

    def pixels(self, mask: SurfaceMask) -> np.ndarray:
        """Boolean (nlat, nlon) array of selected pixels."""
        if self.surface not in (None, "land", "ocean"):
            raise SelectionError(f"bad surface {self.surface!r}")
        if self.hemisphere not in (None, "NH", "SH"):
            raise SelectionError(f"bad hemisphere {self.hemisphere!r}")
        sel = np.ones(mask.grid.shape, dtype=bool)
        if self.surface == "land":
            sel &= mask.surface == LAND
        elif self.surface == "ocean":
            sel &= mask.surface == OCEAN
        lat2d = np.broadcast_to(mask.grid.lats[:, None], mask.grid.shape)
        if self.hemisphere == "NH":
            sel &= lat2d > 0
        elif self.hemisphere == "SH":
            sel &= lat2d < 0
        if self.lat_min is not None:
            sel &= lat2d >= self.lat_min
        if self.lat_max is not None:
            sel &= lat2d <= self.lat_max
        if self.regions:
            if mask.regions is None:
                raise SelectionError("mask carries no region layer")
            codes = [mask.region_code(r) for r in self.regions]
            sel &= np.isin(mask.regions, codes)
        if not sel.any():
            raise SelectionError(f"selector {self} matches no pixel")
        return sel


def cell_area(grid: GeoGrid, lat_index: int) -> float:
    """Area in km^2 of one cell in row ``lat_index``."""
    if not 0 <= lat_index < grid.nlat:
        raise IndexError(f"lat_index {lat_index} outside 0..{grid.nlat - 1}")
    return float(cell_areas(grid)[lat_index])


def cell_areas(grid: GeoGrid, radius: float = EARTH_RADIUS_KM) -> np.ndarray:
    """Per-row cell areas (km^2), shape (nlat,)."""
    south, north = grid.lat_edges()
    dlam = np.radians(grid.dlon)
    return radius**2 * dlam * (np.sin(np.radians(north)) - np.sin(np.radians(south)))


def area_grid(grid: GeoGrid) -> np.ndarray:
    return np.broadcast_to(cell_areas(grid)[:, None], grid.shape)


def _unit_vectors(lat, lon) -> np.ndarray:
    phi = np.radians(lat)
    lam = np.radians(lon)
    return np.stack(
        [np.cos(phi) * np.cos(lam), np.cos(phi) * np.sin(lam), np.sin(phi)], axis=-1
    )


class _Nearest(NamedTuple):
    index: np.ndarray
    tied: np.ndarray  # rows whose whole candidate set ties


def _nearest_among(tree, src_xyz, pts, k) -> _Nearest:
    """Smallest-index nearest source among the k tree candidates of each point."""
    _, idx = tree.query(pts, k=k)
    idx = idx.reshape(len(pts), k)
    # recompute exactly so tie tests do not depend on tree internals
    exact = np.linalg.norm(src_xyz[idx] - pts[:, None, :], axis=-1)
    dmin = exact.min(axis=1, keepdims=True)
    tied = exact <= dmin * (1 + _TIE_RTOL) + 1e-15
    best = np.where(tied, idx, np.iinfo(np.int64).max).min(axis=1)
    all_tied = np.flatnonzero(tied.all(axis=1)) if k > 1 else np.array([], dtype=int)
    return _Nearest(best, all_tied)


def nearest_index(src: GeoGrid, lat, lon) -> np.ndarray:
    """Flat index (row-major) of the nearest source cell center on the sphere.

    Equidistant candidates resolve to the smallest (lat_index, lon_index).
    """
    lat = np.atleast_1d(np.asarray(lat, dtype=float))
    lon = np.atleast_1d(np.asarray(lon, dtype=float))
    slat, slon = np.meshgrid(src.lats, src.lons, indexing="ij")
    src_xyz = _unit_vectors(slat.ravel(), slon.ravel())
    tree = cKDTree(src_xyz)
    out = np.empty(lat.size, dtype=np.int64)
    # chunking bounds the temporaries for very fine destination grids
    for lo in range(0, lat.size, _CHUNK):
        sl = slice(lo, lo + _CHUNK)
        out[sl] = _nearest_chunk(tree, src_xyz, _unit_vectors(lat[sl], lon[sl]))
    return out


def _nearest_chunk(tree, src_xyz, pts) -> np.ndarray:
    nsrc = src_xyz.shape[0]
    k = min(2, nsrc)
    best = _nearest_among(tree, src_xyz, pts, k)
    # rows whose two closest candidates tie need a wider candidate set
    while best.tied.size and k < nsrc:
        k = min(4 * k, nsrc)
        sub = _nearest_among(tree, src_xyz, pts[best.tied], k)
        best.index[best.tied] = sub.index
        best = _Nearest(best.index, best.tied[sub.tied])
    return best.index


def regrid_nearest(src: GridField, dst: GeoGrid) -> GridField:
    """Map ``src`` onto ``dst`` by great-circle nearest-neighbour lookup."""
    if dst == src.grid:
        return src.with_values(src.values.copy())
    dlat, dlon = np.meshgrid(dst.lats, dst.lons, indexing="ij")
    idx = nearest_index(src.grid, dlat.ravel(), dlon.ravel())
    flat = src.values.reshape(src.ntime, -1)
    out = flat[:, idx].reshape(src.ntime, dst.nlat, dst.nlon)
    return GridField(dst, list(src.times), out, src.units, src.variable)


def area_weighted_mean(field: GridField, mask: SurfaceMask, selector: Selector | None = None) -> np.ndarray:
    """Area-weighted mean over selected non-NaN pixels, one value per time step."""
    if field.grid != mask.grid:
        raise GridError("field and mask grids differ")
    sel = (selector or Selector()).pixels(mask)
    w = np.where(sel, area_grid(field.grid), 0.0)
    vals = field.values
    valid = ~np.isnan(vals) & sel
    wsum = (valid * w).sum(axis=(1, 2))
    if (wsum == 0).any():
        bad = [str(field.times[i]) for i in np.flatnonzero(wsum == 0)[:3]]
        raise SelectionError(f"selection is entirely missing at {', '.join(bad)}")
    num = np.where(valid, vals, 0.0) * w
    return num.sum(axis=(1, 2)) / wsum
