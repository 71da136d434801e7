import datetime as dt
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_field
from wbsnow import io
from wbsnow.grid import (
    EARTH_RADIUS_KM,
    GeoGrid,
    GridError,
    GridField,
    Selector,
    SelectionError,
    SurfaceMask,
    area_weighted_mean,
    cell_area,
    cell_areas,
    infer_step,
    nearest_index,
    regrid_nearest,
)

R = EARTH_RADIUS_KM
SPHERE = 4 * np.pi * R**2


def test_equatorial_one_degree_cell():
    g = GeoGrid(-0.0, 0.5, 1.0, 1.0, 1, 1)
    expected = R**2 * np.radians(1.0) * (np.sin(np.radians(0.5)) - np.sin(np.radians(-0.5)))
    assert cell_area(g, 0) == pytest.approx(expected, rel=1e-12)
    assert cell_area(g, 0) == pytest.approx(12363.7, abs=1.0)


@pytest.mark.parametrize("d", [0.125, 0.5625, 1.0, 2.5, 7.5, 30.0])
def test_global_area_closure(d):
    g = GeoGrid.global_grid(d)
    total = cell_areas(g).sum() * g.nlon
    assert abs(total - SPHERE) / SPHERE < 1e-4


def test_closure_on_grid_with_pole_centers():
    # centers on the poles: edge cells are clipped half cells
    g = GeoGrid(-90.0, 0.0, 2.5, 2.5, 73, 144)
    assert abs(cell_areas(g).sum() * g.nlon - SPHERE) / SPHERE < 1e-12


def test_polar_cell_is_cap_sector():
    g = GeoGrid(-90.0, 0.0, 2.5, 2.5, 73, 144)
    cap = 2 * np.pi * R**2 * (1 - np.sin(np.radians(88.75)))
    assert cell_area(g, 72) == pytest.approx(cap / 144, rel=1e-12)


def test_cell_area_bad_index():
    g = GeoGrid.global_grid(10.0)
    with pytest.raises(IndexError):
        cell_area(g, 18)
    with pytest.raises(IndexError):
        cell_area(g, -1)


@pytest.mark.parametrize("kwargs", [
    dict(lat_start=0, lon_start=0, dlat=0, dlon=1, nlat=1, nlon=1),
    dict(lat_start=85, lon_start=0, dlat=10, dlon=1, nlat=2, nlon=1),
    dict(lat_start=-89, lon_start=0, dlat=1, dlon=1, nlat=182, nlon=1),
    dict(lat_start=0, lon_start=0, dlat=1, dlon=1, nlat=1, nlon=362),
])
def test_invalid_grids(kwargs):
    with pytest.raises(GridError):
        GeoGrid(**kwargs)


def test_longitudes_normalized():
    g = GeoGrid(0.0, -10.0, 1.0, 5.0, 1, 4)
    assert np.all((g.lons >= 0) & (g.lons < 360))
    assert g.lons[0] == 350.0


def _great_circle(lat1, lon1, lat2, lon2):
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dl = np.radians(lon2 - lon1)
    a = np.sin((p2 - p1) / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dl / 2) ** 2
    return 2 * np.arcsin(np.sqrt(np.clip(a, 0, 1)))


def _brute_nearest(src, lat, lon):
    slat, slon = np.meshgrid(src.lats, src.lons, indexing="ij")
    out = []
    for la, lo in zip(lat, lon):
        d = _great_circle(la, lo, slat.ravel(), slon.ravel())
        out.append(int(np.flatnonzero(d <= d.min() * (1 + 1e-9) + 1e-15)[0]))
    return np.array(out)


def test_checkerboard_regrid_matches_brute_force():
    src = GeoGrid.global_grid(2.5)
    dst = GeoGrid(-89.9375, 0.0625, 0.125, 0.125, 1440, 2880)
    ii, jj = np.meshgrid(np.arange(src.nlat), np.arange(src.nlon), indexing="ij")
    board = ((ii + jj) % 2).astype(float) * 7.0 + 1.0
    out = regrid_nearest(make_field(src, board[None]), dst).values[0]
    assert set(np.unique(out)) == set(np.unique(board))
    # exhaustive search on a sample of destination cells
    rng = np.random.default_rng(3)
    rows = rng.integers(0, dst.nlat, 400)
    cols = rng.integers(0, dst.nlon, 400)
    brute = _brute_nearest(src, dst.lats[rows], dst.lons[cols])
    np.testing.assert_array_equal(out[rows, cols], board.ravel()[brute])


def test_nearest_across_seam_and_pole():
    src = GeoGrid.global_grid(10.0)
    # 359.9E is closest to the 355E column, not 5E... distance checks decide
    lat = np.array([0.0, 0.0, 89.99, -89.99, 44.0])
    lon = np.array([359.0, 1.0, 123.0, 200.0, 359.99])
    np.testing.assert_array_equal(nearest_index(src, lat, lon), _brute_nearest(src, lat, lon))


def test_nearest_tie_prefers_smallest_index():
    src = GeoGrid(0.0, 0.0, 10.0, 10.0, 2, 2)
    # midpoint between four centers (0,0),(0,10),(10,0),(10,10) is not exactly
    # equidistant on the sphere, but the equator midpoint between two columns is
    assert nearest_index(src, [0.0], [5.0])[0] == 0
    # north pole is equidistant from every center of a polar ring
    ring = GeoGrid(80.0, 0.0, 1.0, 30.0, 1, 12)
    assert nearest_index(ring, [90.0], [0.0])[0] == 0


def test_regrid_identity_and_constant(grid10, rng):
    vals = rng.normal(size=(3,) + grid10.shape)
    f = make_field(grid10, vals)
    same = regrid_nearest(f, grid10)
    np.testing.assert_array_equal(same.values, vals)
    dst = GeoGrid(-60.0, 3.0, 7.0, 11.0, 10, 20)
    const = regrid_nearest(f.with_values(np.full(vals.shape, 4.25)), dst)
    assert np.all(const.values == 4.25)


def test_regrid_nan_propagates(grid10):
    vals = np.ones((1,) + grid10.shape)
    vals[0, 5, 5] = np.nan
    out = regrid_nearest(make_field(grid10, vals), GeoGrid.global_grid(5.0))
    assert np.isnan(out.values).sum() == 4


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([np.sin, np.exp, lambda x: 3 * x - 1, np.floor]))
def test_regrid_commutes_with_pointwise_maps(seed, f):
    rng = np.random.default_rng(seed)
    src = GeoGrid.global_grid(15.0)
    dst = GeoGrid(-80.0, 1.0, 9.0, 13.0, 18, 27)
    x = make_field(src, rng.normal(size=(2,) + src.shape))
    a = regrid_nearest(x.with_values(f(x.values)), dst).values
    b = f(regrid_nearest(x, dst).values)
    np.testing.assert_array_equal(a, b)
    # value set is preserved per step
    r = regrid_nearest(x, dst).values
    for t in range(2):
        assert set(np.unique(r[t])) <= set(np.unique(x.values[t]))


def test_weighted_mean_constant_and_refinement():
    for d in (30.0, 10.0, 2.5):
        g = GeoGrid.global_grid(d)
        f = make_field(g, np.full((2,) + g.shape, 3.5))
        out = area_weighted_mean(f, SurfaceMask.all_land(g), Selector.parse("NH"))
        np.testing.assert_allclose(out, 3.5, rtol=1e-14)


def test_weighted_mean_two_pixels():
    g = GeoGrid(0.0, 0.0, 1.0, 1.0, 1, 2)
    f = make_field(g, [[[0.0, 10.0]]])
    assert area_weighted_mean(f, SurfaceMask.all_land(g))[0] == pytest.approx(5.0)


def test_weighted_mean_hand_computed_3x3():
    g = GeoGrid(0.0, 0.0, 30.0, 30.0, 3, 3)
    vals = np.arange(9, dtype=float).reshape(1, 3, 3)
    s = np.sin(np.radians([-15.0, 15.0, 45.0, 75.0]))
    w = np.diff(s)  # row weights, the common factor cancels
    expected = sum(w[i] * vals[0, i].sum() for i in range(3)) / (3 * w.sum())
    got = area_weighted_mean(make_field(g, vals), SurfaceMask.all_land(g))[0]
    assert got == pytest.approx(expected, rel=1e-14)


def test_weighted_mean_skips_nan_and_errors_on_empty(grid10, land10):
    vals = np.ones((2,) + grid10.shape)
    vals[0, 0, 0] = np.nan
    vals[1] = np.nan
    f = make_field(grid10, vals)
    with pytest.raises(SelectionError):
        area_weighted_mean(f, land10)
    assert area_weighted_mean(f.select_times([0]), land10)[0] == pytest.approx(1.0)


def test_selectors(grid10):
    surface = np.zeros(grid10.shape, np.uint8)
    surface[12:, :] = 1
    regions = np.zeros(grid10.shape, np.uint8)
    regions[15:, :4] = 3
    m = SurfaceMask(grid10, surface, regions, {3: "Alps"})
    assert Selector.parse("surface=land,hemisphere=NH").pixels(m).sum() == 6 * 36
    assert Selector.parse("ocean").pixels(m).sum() == 12 * 36
    assert Selector.parse("region=Alps").pixels(m).sum() == 12
    with pytest.raises(SelectionError):
        Selector.parse("surface=land,hemisphere=SH").pixels(m)
    with pytest.raises(SelectionError):
        Selector.parse("colour=blue")
    with pytest.raises(SelectionError):
        Selector.parse("region=Andes").pixels(m)


def test_infer_step():
    d = dt.date(2000, 12, 27)
    assert infer_step([d]) == "single"
    assert infer_step([d, d + dt.timedelta(1)]) == "daily"
    assert infer_step([dt.date(2000, 1, 1), dt.date(2001, 1, 1), dt.date(2002, 1, 1)]) == "annual"
    assert infer_step([dt.date(2000, 12, 26), dt.date(2001, 1, 1), dt.date(2001, 1, 6)]) == "pentad"
    with pytest.raises(GridError):
        infer_step([d, d + dt.timedelta(1), d + dt.timedelta(3)])
    with pytest.raises(GridError):
        infer_step([d, d])


def test_dataset_round_trip(tmp_path, grid10, rng):
    vals = rng.normal(size=(4,) + grid10.shape).astype(np.float32).astype(float)
    vals[1, 2, 3] = np.nan
    f = make_field(grid10, vals, units="mm", variable="precip")
    io.write_dataset(f, tmp_path / "ds")
    g = io.read_dataset(tmp_path / "ds")
    assert g.grid == f.grid and g.times == f.times
    assert g.units == "mm" and g.variable == "precip"
    np.testing.assert_array_equal(g.values, vals)
    raw = (tmp_path / "ds" / "data.f32").read_bytes()
    assert len(raw) == vals.size * 4
    assert np.frombuffer(raw[:4], "<f4")[0] == np.float32(vals[0, 0, 0])
    # rewriting replaces atomically and leaves no staging directories
    io.write_dataset(f.with_values(vals * 2), tmp_path / "ds")
    assert sorted(p.name for p in tmp_path.iterdir()) == ["ds"]


def test_dataset_errors(tmp_path, grid10):
    f = make_field(grid10, np.zeros((2,) + grid10.shape))
    io.write_dataset(f, tmp_path / "ds")
    header = json.loads((tmp_path / "ds" / "header.json").read_text())

    (tmp_path / "ds" / "header.json").write_text("{not json")
    with pytest.raises(io.DatasetError, match="malformed"):
        io.read_dataset(tmp_path / "ds")

    header["times"] = header["times"][:1]
    (tmp_path / "ds" / "header.json").write_text(json.dumps(header))
    with pytest.raises(io.DatasetError, match="header implies"):
        io.read_dataset(tmp_path / "ds")

    header["times"] = ["2001-01-02", "2001-01-01"]
    (tmp_path / "ds" / "header.json").write_text(json.dumps(header))
    with pytest.raises(io.DatasetError):
        io.read_dataset(tmp_path / "ds")

    del header["grid"]["nlat"]
    (tmp_path / "ds" / "header.json").write_text(json.dumps(header))
    with pytest.raises(io.DatasetError):
        io.read_dataset(tmp_path / "ds")


def test_mask_round_trip(tmp_path, grid10, rng):
    surface = rng.integers(0, 2, grid10.shape).astype(np.uint8)
    regions = rng.integers(0, 3, grid10.shape).astype(np.uint8)
    m = SurfaceMask(grid10, surface, regions, {1: "cold", 2: "polar"})
    io.write_mask(m, tmp_path / "m")
    back = io.read_mask(tmp_path / "m")
    np.testing.assert_array_equal(back.surface, surface)
    np.testing.assert_array_equal(back.regions, regions)
    assert back.labels == {1: "cold", 2: "polar"}


def test_gridfield_shape_check(grid10):
    with pytest.raises(GridError):
        GridField(grid10, [dt.date(2000, 1, 1)], np.zeros((1, 3, 3)))
