"""Portable on-disk formats: grid datasets, surface masks and CSV tables.

A dataset is a directory holding ``header.json`` and ``data.f32``
(little-endian float32, row-major [time][lat][lon]). Masks use ``data.u8``
plus optional ``regions.u8`` / ``regions.json``.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
import json
import os
import shutil
import tempfile
from pathlib import Path

import numpy as np

from wbsnow.grid import GeoGrid, GridError, GridField, SurfaceMask

HEADER = "header.json"
DATA_F32 = "data.f32"
DATA_U8 = "data.u8"
REGIONS_U8 = "regions.u8"
REGIONS_JSON = "regions.json"


class DatasetError(ValueError):
    pass


def _clean(obj):
    """NaN/inf become null so the output stays strict JSON."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if np.isfinite(obj) else None
    return obj


def _dump_json(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj) -> None:
    atomic_write_text(path, _dump_json(obj))


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def write_csv(path, header, rows) -> None:
    """RFC 4180 CSV with '.' decimals; floats use repr so output is stable."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    atomic_write_text(path, buf.getvalue())


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "" if np.isnan(v) else repr(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    return v


def read_csv(path) -> list:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


class _DirWriter:
    """Stage a dataset directory next to its target, then swap it in."""

    def __init__(self, path):
        self.path = Path(path)

    def __enter__(self) -> Path:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.tmp = Path(tempfile.mkdtemp(dir=self.path.parent, prefix=f".{self.path.name}."))
        return self.tmp

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None:
            shutil.rmtree(self.tmp, ignore_errors=True)
            return False
        old = None
        if self.path.exists():
            old = self.path.with_name(f".{self.path.name}.old")
            shutil.rmtree(old, ignore_errors=True)
            os.replace(self.path, old)
        os.replace(self.tmp, self.path)
        if old is not None:
            shutil.rmtree(old, ignore_errors=True)
        return False


def write_dataset(field: GridField, path) -> None:
    header = {
        "grid": field.grid.to_dict(),
        "times": [t.isoformat() for t in field.times],
        "units": field.units,
        "variable": field.variable,
    }
    with _DirWriter(path) as tmp:
        (tmp / HEADER).write_text(_dump_json(header), encoding="utf-8")
        field.values.astype("<f4").tofile(tmp / DATA_F32)


def _read_header(path: Path) -> dict:
    try:
        header = read_json(path / HEADER)
    except FileNotFoundError:
        raise DatasetError(f"{path}: missing {HEADER}") from None
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}: malformed header ({exc})") from None
    if not isinstance(header, dict) or "grid" not in header:
        raise DatasetError(f"{path}: header lacks a grid definition")
    return header


def read_dataset(path) -> GridField:
    path = Path(path)
    header = _read_header(path)
    try:
        grid = GeoGrid.from_dict(header["grid"])
        times = list(header.get("times", []))
    except (GridError, TypeError, ValueError) as exc:
        raise DatasetError(f"{path}: malformed header ({exc})") from None
    raw = np.fromfile(path / DATA_F32, dtype="<f4")
    expected = len(times) * grid.nlat * grid.nlon
    if raw.size != expected:
        raise DatasetError(f"{path}: {raw.size} values on disk, header implies {expected}")
    values = raw.astype(np.float64).reshape(len(times), grid.nlat, grid.nlon)
    try:
        return GridField(grid, times, values, header.get("units", ""), header.get("variable", ""))
    except (GridError, ValueError) as exc:
        raise DatasetError(f"{path}: {exc}") from None


def write_mask(mask: SurfaceMask, path) -> None:
    header = {"grid": mask.grid.to_dict(), "times": [], "units": "flag", "variable": "surface"}
    with _DirWriter(path) as tmp:
        (tmp / HEADER).write_text(_dump_json(header), encoding="utf-8")
        mask.surface.astype(np.uint8).tofile(tmp / DATA_U8)
        if mask.regions is not None:
            mask.regions.astype(np.uint8).tofile(tmp / REGIONS_U8)
            labels = {str(k): v for k, v in sorted(mask.labels.items())}
            (tmp / REGIONS_JSON).write_text(_dump_json(labels), encoding="utf-8")


def read_mask(path) -> SurfaceMask:
    path = Path(path)
    header = _read_header(path)
    try:
        grid = GeoGrid.from_dict(header["grid"])
    except (GridError, TypeError, ValueError) as exc:
        raise DatasetError(f"{path}: malformed header ({exc})") from None
    surface = np.fromfile(path / DATA_U8, dtype=np.uint8)
    if surface.size != grid.nlat * grid.nlon:
        raise DatasetError(f"{path}: surface layer size {surface.size} does not match grid")
    regions, labels = None, {}
    if (path / REGIONS_U8).exists():
        regions = np.fromfile(path / REGIONS_U8, dtype=np.uint8)
        if regions.size != surface.size:
            raise DatasetError(f"{path}: region layer size does not match grid")
        regions = regions.reshape(grid.shape)
        if (path / REGIONS_JSON).exists():
            labels = read_json(path / REGIONS_JSON)
    try:
        return SurfaceMask(grid, surface.reshape(grid.shape), regions, labels)
    except GridError as exc:
        raise DatasetError(f"{path}: {exc}") from None


GAUGE_COLUMNS = ("station_id", "lat", "lon", "date", "value", "variable")
GAUGE_VARIABLES = ("wet_bulb_K", "precip_mm", "phase")
PHASES = ("snow", "rain", "mixed")


def read_gauges(path, variable: str | None = None) -> list:
    """Parse a gauge CSV into dicts with typed lat/lon/date/value.

    ``value`` stays a string for phase rows and becomes a float otherwise.
    """
    rows = read_csv(path)
    if rows and set(GAUGE_COLUMNS) - set(rows[0]):
        raise DatasetError(f"{path}: gauge CSV lacks columns {sorted(set(GAUGE_COLUMNS) - set(rows[0]))}")
    out = []
    for n, row in enumerate(rows, start=2):
        var = row["variable"]
        if var not in GAUGE_VARIABLES:
            raise DatasetError(f"{path}:{n}: unknown variable {var!r}")
        if variable is not None and var != variable:
            continue
        try:
            value = row["value"] if var == "phase" else float(row["value"])
            rec = {
                "station_id": row["station_id"],
                "lat": float(row["lat"]),
                "lon": float(row["lon"]),
                "date": dt.date.fromisoformat(row["date"]),
                "value": value,
                "variable": var,
            }
        except ValueError as exc:
            raise DatasetError(f"{path}:{n}: {exc}") from None
        if var == "phase" and value not in PHASES:
            raise DatasetError(f"{path}:{n}: unknown phase {value!r}")
        out.append(rec)
    return out


def write_gauges(path, records) -> None:
    write_csv(path, GAUGE_COLUMNS, (
        [r["station_id"], r["lat"], r["lon"], r["date"].isoformat(), r["value"], r["variable"]]
        for r in records
    ))
