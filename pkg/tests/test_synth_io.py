import datetime as dt

import numpy as np
import pytest

from wbsnow import io, synth, thermo
from wbsnow.grid import GeoGrid, GridField
from wbsnow.pipeline import annual_stack, complete_years


def test_ar1_stationary_variance():
    x = synth.ar1(200_000, 0.6, 1.0, np.random.default_rng(0))
    assert np.var(x) == pytest.approx(1 / (1 - 0.36), rel=0.03)
    assert np.corrcoef(x[:-1], x[1:])[0, 1] == pytest.approx(0.6, abs=0.01)


def test_spec_validation():
    for bad in (dict(phi=1.0), dict(sigma=-1.0), dict(product_sigmas=(1.0,)), dict(n_years=0)):
        with pytest.raises(ValueError):
            synth.SyntheticSpec(**bad)


def test_atmosphere_reproduces_wet_bulb():
    rng = np.random.default_rng(1)
    twb = rng.uniform(230, 305, (20, 3, 4))
    ta, td, p = synth.atmosphere_for(twb, rng)
    tw = thermo.wet_bulb_array(ta, thermo.rh_from_dewpoint(ta, td), p)
    assert np.max(np.abs(tw - twb)) < 1e-5
    assert np.all(td < ta)


def test_generate_known_errors(tmp_path):
    spec = synth.SyntheticSpec(dlat=30.0, dlon=30.0, n_years=2, n_stations=5, gauge_years=1, seed=3)
    cfg = synth.generate(spec, tmp_path)
    assert sorted(cfg["products"]) == ["era", "jra", "ncep"]
    ta = io.read_dataset(tmp_path / cfg["products"]["ncep"]["t_air"])
    assert ta.ntime == 365 + 366  # 1979 and 1980
    assert io.read_dataset(tmp_path / "precip").grid == GeoGrid.global_grid(60.0)
    recs = io.read_gauges(tmp_path / "gauges.csv")
    assert {r["variable"] for r in recs} == {"wet_bulb_K", "precip_mm", "phase"}
    assert {r["date"].year for r in recs} == {1980}
    phases = [r["value"] for r in recs if r["variable"] == "phase"]
    assert set(phases) <= {"snow", "rain"}


def test_generate_is_deterministic(tmp_path):
    spec = synth.SyntheticSpec(dlat=45.0, dlon=45.0, n_years=1, n_stations=3, seed=9)
    synth.generate(spec, tmp_path / "a")
    synth.generate(spec, tmp_path / "b")
    for rel in ("gauges.csv", "precip/data.f32", "products/era/t_air/data.f32"):
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_gauge_csv_errors(tmp_path):
    path = tmp_path / "g.csv"
    path.write_text("station_id,lat,lon,date,value,variable\r\nA,1,2,2001-01-01,3,humidity\r\n")
    with pytest.raises(io.DatasetError, match="unknown variable"):
        io.read_gauges(path)
    path.write_text("station_id,lat,lon,date,value,variable\r\nA,1,2,2001-01-01,hail,phase\r\n")
    with pytest.raises(io.DatasetError, match="unknown phase"):
        io.read_gauges(path)
    path.write_text("station_id,lat,date\r\nA,1,2001-01-01\r\n")
    with pytest.raises(io.DatasetError, match="lacks columns"):
        io.read_gauges(path)


def test_json_nan_becomes_null(tmp_path):
    io.write_json(tmp_path / "x.json", {"a": float("nan"), "b": [1.0, float("inf")]})
    assert io.read_json(tmp_path / "x.json") == {"a": None, "b": [1.0, None]}


def test_annual_stack_complete_years_only():
    g = GeoGrid.global_grid(90.0)
    days = [dt.date(2000, 1, 1) + dt.timedelta(i) for i in range(366 + 100)]
    vals = np.array([d.year for d in days], float)[:, None, None] * np.ones(g.shape)
    fld = GridField(g, days, vals)
    assert complete_years(days) == [2000]
    stack = annual_stack(fld)
    assert stack.times == [dt.date(2000, 1, 1)] and np.all(stack.values == 2000)
