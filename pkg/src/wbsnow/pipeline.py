"""Pipeline stages driven by the command line.

Every stage reads its inputs from a resolved config dict, writes into
``<out>/<stage>/`` and records a manifest that is marked complete only after
all outputs are in place.
"""

from __future__ import annotations

import datetime as dt
import logging
from collections import defaultdict
from contextlib import contextmanager
from pathlib import Path

import numpy as np

import wbsnow
from wbsnow import config as cfgmod
from wbsnow import dates, ensemble, io, metrics, snowmask, spr, synth, thermo, trend
from wbsnow.grid import GridField, Selector, area_weighted_mean, nearest_index, regrid_nearest

log = logging.getLogger(__name__)


def out_dir(cfg, stage: str) -> Path:
    return Path(cfg["out"]) / stage


@contextmanager
def stage(cfg: dict, name: str):
    """Yield a list that collects output paths; finalize the manifest on success."""
    root = out_dir(cfg, name)
    root.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": name,
        "config_hash": cfg.get("_hash") or cfgmod.config_hash(cfg),
        "seed": cfg["seed"],
        "versions": {"wbsnow": wbsnow.__version__, "numpy": np.__version__},
        "complete": False,
        "outputs": [],
    }
    io.write_json(root / "manifest.json", manifest)
    outputs: list = []
    yield outputs
    manifest["outputs"] = sorted(str(Path(p).relative_to(root)) for p in outputs)
    manifest["complete"] = True
    io.write_json(root / "manifest.json", manifest)


# ---------------------------------------------------------------- inputs

def product_names(cfg) -> list:
    return sorted(cfg["products"])


def product_wet_bulb_path(cfg, name) -> Path:
    explicit = cfg["products"][name].get("wet_bulb")
    return Path(explicit) if explicit else out_dir(cfg, "wetbulb") / name


def ensemble_path(cfg) -> Path:
    return Path(cfg["ensemble"]) if cfg.get("ensemble") else out_dir(cfg, "fuse") / "ensemble"


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise cfgmod.ConfigError(f"{what} not found at {path}; run the producing command first")
    return path


def load_mask(cfg):
    cfgmod.validate(cfg, ["surface_mask"])
    return io.read_mask(cfg["surface_mask"])


def load_product_wet_bulb(cfg) -> dict:
    names = product_names(cfg)
    if not names:
        raise cfgmod.ConfigError("config lists no products")
    return {n: io.read_dataset(_require(product_wet_bulb_path(cfg, n), f"wet-bulb of {n}"))
            for n in names}


def load_ensemble(cfg) -> GridField:
    return io.read_dataset(_require(ensemble_path(cfg), "ensemble wet-bulb dataset"))


def load_masks(cfg) -> snowmask.SnowMaskSeries:
    fld = io.read_dataset(_require(out_dir(cfg, "snowmask") / "masks", "snow masks"))
    return snowmask.SnowMaskSeries(fld, thresholds(cfg), "ensemble")


def thresholds(cfg) -> snowmask.SnowThreshold:
    t = cfg["thresholds"]
    return snowmask.SnowThreshold(float(t["land"]), float(t["ocean"]))


def selectors(cfg) -> list:
    sels = cfg["selectors"]
    if not sels:
        raise cfgmod.ConfigError("no selectors configured")
    return [(text, Selector.parse(text)) for text in sels]


def complete_years(times) -> list:
    have = defaultdict(int)
    for t in times:
        have[t.year] += 1
    return [y for y, n in sorted(have.items()) if n == dates.days_in_year(y)]


def annual_stack(fld: GridField, years=None) -> GridField:
    """Calendar-year means of a daily field, for complete years only."""
    years = complete_years(fld.times) if years is None else years
    yr = fld.years()
    layers = [np.nanmean(fld.values[yr == y], axis=0) if np.any(yr == y) else
              np.full(fld.grid.shape, np.nan) for y in years]
    return GridField(fld.grid, [dt.date(y, 1, 1) for y in years], np.array(layers),
                     fld.units, f"{fld.variable}_annual")


# ---------------------------------------------------------------- stages

def run_synth(cfg: dict) -> Path:
    params = dict(cfg.get("synth", {}))
    params.setdefault("seed", cfg["seed"])
    spec = synth.SyntheticSpec(**params)
    root = Path(cfg["out"])
    with stage(cfg, "synth") as outputs:
        generated = synth.generate(spec, root / "synth")
        rel = {
            "products": {n: {k: f"synth/{v}" for k, v in p.items()}
                         for n, p in generated["products"].items()},
            "surface_mask": "synth/mask",
            "precip": "synth/precip",
            "gauges": "synth/gauges.csv",
            "seed": spec.seed,
            "B": cfg["B"],
            "alpha": cfg["alpha"],
            "out": ".",
        }
        io.write_json(root / "config.json", rel)
        outputs += [root / "synth" / p for p in ("mask", "precip", "gauges.csv", "truth.json")]
        outputs += [root / "synth" / "products" / n for n in spec.product_names]
    return root / "config.json"


def run_wetbulb(cfg: dict) -> None:
    names = product_names(cfg)
    if not names:
        raise cfgmod.ConfigError("config lists no products")
    with stage(cfg, "wetbulb") as outputs:
        for name in names:
            paths = cfg["products"][name]
            if "rh" in paths:
                kind, hum = "rh", paths["rh"]
            elif "dewpoint" in paths:
                kind, hum = "dewpoint", paths["dewpoint"]
            else:
                raise cfgmod.ConfigError(f"product {name} needs 'rh' or 'dewpoint'")
            for key in ("t_air", "pressure"):
                if key not in paths:
                    raise cfgmod.ConfigError(f"product {name} lacks {key!r}")
            tw = thermo.wet_bulb_field(io.read_dataset(paths["t_air"]), io.read_dataset(hum),
                                       io.read_dataset(paths["pressure"]), humidity_kind=kind)
            target = out_dir(cfg, "wetbulb") / name
            io.write_dataset(tw, target)
            outputs.append(target)
            log.info("wet-bulb for %s written to %s", name, target)


def run_fuse(cfg: dict) -> ensemble.ErrorModel:
    fields = load_product_wet_bulb(cfg)
    names = list(fields)
    target = ensemble.finest_grid([f.grid for f in fields.values()])
    aligned = [f if f.grid == target else regrid_nearest(f, target) for f in fields.values()]
    rows = []
    diagnostics: dict = {}
    if cfg.get("sigmas"):
        sig = cfg["sigmas"]
        sigmas = [float(sig[n]) for n in names] if isinstance(sig, dict) else [float(s) for s in sig]
        if len(sigmas) != len(names):
            raise cfgmod.ConfigError(f"{len(sigmas)} sigmas for {len(names)} products")
    else:
        cfgmod.validate(cfg, ["gauges"])
        recs = io.read_gauges(cfg["gauges"], "wet_bulb_K")
        matchups = ensemble.build_matchups(recs, aligned, names)
        sigmas = []
        for m, name in enumerate(names):
            est = ensemble.estimate_sigma(matchups, m, bool(cfg["mad_filter"]), float(cfg["mad_k"]))
            sigmas.append(est.sigma)
            rows.append([name, est.sigma, est.bias, est.n, est.removed_fraction])
    model = ensemble.ml_weights(sigmas, names)
    fused = ensemble.ensemble_mean(aligned, model)
    if not cfg.get("sigmas"):
        check = ensemble.build_matchups(recs, [fused], ["ensemble"]).residuals(0)
        kept, removed = ensemble.mad_filter(check, float(cfg["mad_k"]))
        diagnostics = {
            "ensemble_residual_sd": float(np.std(check, ddof=1)),
            "ensemble_residual_sd_mad": float(np.std(kept, ddof=1)),
            "mad_removed_fraction": float(removed),
            "n_matchups": int(check.size),
        }
    with stage(cfg, "fuse") as outputs:
        root = out_dir(cfg, "fuse")
        io.write_json(root / "error_model.json", {**model.to_dict(), "diagnostics": diagnostics})
        outputs.append(root / "error_model.json")
        if rows:
            io.write_csv(root / "sigma.csv", ["product", "sigma", "bias", "n", "mad_removed_fraction"], rows)
            outputs.append(root / "sigma.csv")
        io.write_dataset(fused, root / "ensemble")
        outputs.append(root / "ensemble")
    return model


def run_snowmask(cfg: dict) -> None:
    mask = load_mask(cfg)
    masks = snowmask.potential_snow_mask(load_ensemble(cfg), mask, thresholds(cfg), "ensemble")
    with stage(cfg, "snowmask") as outputs:
        target = out_dir(cfg, "snowmask") / "masks"
        io.write_dataset(masks.field, target)
        outputs.append(target)


def _area_sources(cfg, mask):
    """(name, mask series) for the ensemble followed by each product."""
    yield "ensemble", load_masks(cfg)
    if cfg["products"]:
        for name, fld in load_product_wet_bulb(cfg).items():
            if fld.grid != mask.grid:
                fld = regrid_nearest(fld, mask.grid)
            yield name, snowmask.potential_snow_mask(fld, mask, thresholds(cfg), name)


def run_areas(cfg: dict) -> None:
    mask = load_mask(cfg)
    sels = selectors(cfg)
    daily, annual, seasonal = [], [], []
    for src, masks in _area_sources(cfg, mask):
        for text, sel in sels:
            area = snowmask.snow_area(masks, mask, sel)
            daily += [[t.isoformat(), src, text, a] for t, a in zip(masks.times, area)]
            for y, a in snowmask.annual_means(masks.times, area).items():
                annual.append([src, text, y, a])
            for (y, season), a in snowmask.seasonal_means(masks.times, area).items():
                seasonal.append([src, text, y, season, a])
    with stage(cfg, "areas") as outputs:
        root = out_dir(cfg, "areas")
        io.write_csv(root / "daily.csv", ["date", "source", "selector", "area_km2"], daily)
        io.write_csv(root / "annual.csv", ["source", "selector", "year", "area_km2"], annual)
        io.write_csv(root / "seasonal.csv", ["source", "selector", "year", "season", "area_km2"], seasonal)
        outputs += [root / "daily.csv", root / "annual.csv", root / "seasonal.csv"]


def run_exceedance(cfg: dict) -> None:
    mask = load_mask(cfg)
    masks = load_masks(cfg)
    years = complete_years(masks.times)
    if not years:
        raise cfgmod.ConfigError("snow masks contain no complete calendar year")
    levels = [float(v) for v in cfg["exceedance_levels"]]
    freq = [snowmask.exceedance_frequency(masks, y) for y in years]
    stack = GridField(masks.grid, [f.times[0] for f in freq], np.concatenate([f.values for f in freq]),
                      "fraction", "snow_frequency")
    rows = []
    with stage(cfg, "exceedance") as outputs:
        root = out_dir(cfg, "exceedance")
        io.write_dataset(stack, root / "frequency")
        outputs.append(root / "frequency")
        for level in levels:
            em = snowmask.exceedance_mask(stack, level)
            target = root / f"mask_{level:g}"
            io.write_dataset(em, target)
            outputs.append(target)
            em_series = snowmask.SnowMaskSeries(em, masks.threshold, "ensemble")
            for text, sel in selectors(cfg):
                area = snowmask.snow_area(em_series, mask, sel)
                rows += [[y, level, text, a] for y, a in zip(years, area)]
        io.write_csv(root / "areas.csv", ["year", "level", "selector", "area_km2"], rows)
        outputs.append(root / "areas.csv")


def run_transition(cfg: dict) -> None:
    masks = load_masks(cfg)
    years = complete_years(masks.times)
    window = cfg.get("window")
    width, anchor = float(cfg["slice_width"]), float(cfg["slice_anchor"])
    lat_rows, rate_rows = [], []
    for level in [None] + [float(v) for v in cfg["exceedance_levels"]]:
        span = years
        if window and level is not None:
            span = [y for y in years if y + window - 1 <= years[-1]]
        if len(span) == 0:
            continue
        lats = snowmask.transition_latitude_series(masks, span, level, window if level is not None else None,
                                                   width=width, anchor=anchor)
        tag = "mean" if level is None else f"{level:g}"
        starts = anchor + width * np.arange(lats.shape[1])
        for y, row in zip(span, lats):
            lat_rows += [[y, tag, s, float(np.mod(starts[s], 360.0)), row[s]] for s in range(len(row))]
        if len(span) >= 2:
            rates = snowmask.retraction_rate(lats, span)
            rate_rows += [[tag, s, float(np.mod(starts[s], 360.0)), r] for s, r in enumerate(rates)]
    with stage(cfg, "transition") as outputs:
        root = out_dir(cfg, "transition")
        io.write_csv(root / "latitudes.csv", ["year", "level", "slice", "lon_start", "latitude"], lat_rows)
        io.write_csv(root / "retraction.csv", ["level", "slice", "lon_start", "deg_per_decade"], rate_rows)
        outputs += [root / "latitudes.csv", root / "retraction.csv"]


def run_spr(cfg: dict) -> None:
    mask = load_mask(cfg)
    masks = load_masks(cfg)
    cfgmod.validate(cfg, ["precip"])
    precip = io.read_dataset(cfg["precip"])
    if precip.grid != masks.grid:
        precip = regrid_nearest(precip, masks.grid)
    pyears = {t.year for t in precip.times}
    years = [y for y in complete_years(masks.times) if y in pyears]
    if not years:
        raise cfgmod.ConfigError("no year has both complete daily masks and pentad precipitation")
    fs_fields = [spr.pentad_snow_frequencies(masks, y) for y in years]
    fs = GridField(masks.grid, [t for f in fs_fields for t in f.times],
                   np.concatenate([f.values for f in fs_fields]), "fraction", "snow_frequency")
    layers = [spr.annual_spr(fs, precip, y).values[0] for y in years]
    totals = np.array([spr.annual_precip(precip, y) for y in years])
    stack = GridField(masks.grid, [dt.date(y, 1, 1) for y in years], np.array(layers), "fraction", "spr")
    masked = spr.mask_dry(stack, totals, float(cfg["min_annual_precip_mm"]))
    rows = []
    for text, sel in selectors(cfg):
        try:
            means = area_weighted_mean(masked, mask, sel)
        except ValueError as exc:
            log.warning("SPR summary for %s skipped: %s", text, exc)
            continue
        rows += [[y, text, m] for y, m in zip(years, means)]
    with stage(cfg, "spr") as outputs:
        root = out_dir(cfg, "spr")
        for name, fld in (("snow_frequency", fs), ("spr", stack), ("spr_masked", masked)):
            io.write_dataset(fld, root / name)
            outputs.append(root / name)
        io.write_csv(root / "summary.csv", ["year", "selector", "spr"], rows)
        outputs.append(root / "summary.csv")


REPORT_HEADER = ["target", "selector", "source", "slope_per_decade", "mk_s", "mk_var", "z",
                 "p_bootstrap", "significant", "alpha", "block_length", "B", "seed", "n"]


def _report_row(target, text, src, rep: trend.TrendReport) -> list:
    return [target, text, src, rep.slope_per_decade, rep.mk_s, rep.mk_var, rep.z, rep.p_bootstrap,
            rep.significant, rep.alpha, rep.block_length, rep.B, rep.seed, rep.n]


def _test(cfg, series: trend.AnnualSeries) -> trend.TrendReport:
    return trend.mbb_mk_test(series, B=int(cfg["B"]), alpha=float(cfg["alpha"]), seed=int(cfg["seed"]),
                             detrend=bool(cfg["detrend_acf"]))


def run_trend(cfg: dict) -> dict:
    cfgmod.validate(cfg)
    rows, series_rows, summary = [], [], []
    map_fields: dict = {}
    if cfg.get("trend_series"):
        recs = io.read_csv(cfg["trend_series"])
        s = trend.AnnualSeries([int(r["year"]) for r in recs], [float(r["value"]) for r in recs])
        rep = _test(cfg, s)
        rows.append(_report_row("series", "", Path(cfg["trend_series"]).name, rep))
        summary.append({"target": "series", "selector": "", "report": trend.format_trend(rep),
                        "ensemble": rep.to_dict()})
    else:
        mask = load_mask(cfg)
        sources = {"ensemble": annual_stack(load_ensemble(cfg))}
        if cfg["products"]:
            for name, fld in load_product_wet_bulb(cfg).items():
                if fld.grid != mask.grid:
                    fld = regrid_nearest(fld, mask.grid)
                sources[name] = annual_stack(fld)
        targets = {"wet_bulb": sources}
        spr_path = out_dir(cfg, "spr") / "spr_masked"
        if spr_path.exists():
            targets["spr"] = {"ensemble": io.read_dataset(spr_path)}
        for target, stacks in targets.items():
            for text, sel in selectors(cfg):
                reports = {}
                for src, stack in stacks.items():
                    try:
                        vals = area_weighted_mean(stack, mask, sel)
                    except ValueError as exc:
                        if target == "spr":
                            log.warning("SPR trend for %s skipped: %s", text, exc)
                            break
                        raise
                    years = [t.year for t in stack.times]
                    series_rows += [[target, text, src, y, v] for y, v in zip(years, vals)]
                    reports[src] = _test(cfg, trend.AnnualSeries(years, vals))
                    rows.append(_report_row(target, text, src, reports[src]))
                if "ensemble" in reports:
                    prods = [r for s, r in reports.items() if s != "ensemble"]
                    summary.append({"target": target, "selector": text,
                                    "report": trend.format_trend(reports["ensemble"], prods),
                                    "ensemble": reports["ensemble"].to_dict()})
            if cfg["trend_maps"]:
                map_fields[target] = _trend_maps(cfg, stacks)
    with stage(cfg, "trend") as outputs:
        root = out_dir(cfg, "trend")
        io.write_csv(root / "report.csv", REPORT_HEADER, rows)
        io.write_json(root / "report.json", summary)
        outputs += [root / "report.csv", root / "report.json"]
        if series_rows:
            io.write_csv(root / "series.csv", ["target", "selector", "source", "year", "value"], series_rows)
            outputs.append(root / "series.csv")
        for target, layers in map_fields.items():
            for name, fld in layers.items():
                path = root / "maps" / f"{target}_{name}"
                io.write_dataset(fld, path)
                outputs.append(path)
    return {"summary": summary}


def _trend_maps(cfg, stacks: dict) -> dict:
    kw = dict(B=int(cfg["B"]), alpha=float(cfg["alpha"]), seed=int(cfg["seed"]),
              detrend=bool(cfg["detrend_acf"]), threads=int(cfg.get("threads") or 1))
    maps = {src: trend.trend_field(stack, **kw) for src, stack in stacks.items()}
    ens = maps["ensemble"]
    first = stacks["ensemble"].times[:1]
    template = GridField(stacks["ensemble"].grid, first, ens.slope[None] * 10.0, "per_decade", "slope")
    layers = {
        "slope": template,
        "p": template.with_values(ens.p[None], units="fraction", variable="p_bootstrap"),
        "significant": template.with_values(ens.significant[None].astype(float), units="flag",
                                            variable="significant"),
    }
    products = [m for s, m in maps.items() if s != "ensemble"]
    if products:
        count, direction = trend.agreement(products)
        layers["agreement"] = template.with_values(count[None].astype(float), units="count",
                                                   variable="agreement")
        layers["slope_agreed"] = template.with_values(
            trend.masked_ensemble_slope(ens, count)[None] * 10.0, units="per_decade", variable="slope")
    return layers


def run_validate(cfg: dict) -> dict:
    cfgmod.validate(cfg, ["gauges"])
    result: dict = {}
    fused = load_ensemble(cfg)
    recs = io.read_gauges(cfg["gauges"])
    wb = [r for r in recs if r["variable"] == "wet_bulb_K"]
    if wb:
        m = ensemble.build_matchups(wb, [fused], ["ensemble"])
        result["wet_bulb"] = metrics.validation_report(m.products[:, 0], m.gauge)
    spr_dir = out_dir(cfg, "spr")
    if (spr_dir / "spr").exists():
        result.update(_validate_spr(cfg, recs, io.read_dataset(spr_dir / "spr"),
                                    io.read_dataset(spr_dir / "snow_frequency")))
    with stage(cfg, "validate") as outputs:
        path = out_dir(cfg, "validate") / "metrics.json"
        io.write_json(path, result)
        outputs.append(path)
    return result


def _validate_spr(cfg, recs, spr_stack: GridField, fs: GridField) -> dict:
    stations = {}
    precip = defaultdict(float)
    snow = defaultdict(float)
    phase = {}
    for r in recs:
        stations.setdefault(r["station_id"], (r["lat"], r["lon"]))
        key = (r["station_id"], r["date"])
        if r["variable"] == "precip_mm":
            precip[key] += r["value"]
        elif r["variable"] == "phase":
            phase[key] = r["value"]
    snow_phases = set(cfg["snow_phases"])
    for key, amount in precip.items():
        if phase.get(key) in snow_phases:
            snow[key] = amount
    ids = sorted(stations)
    cells = dict(zip(ids, nearest_index(spr_stack.grid, [stations[i][0] for i in ids],
                                        [stations[i][1] for i in ids])))
    spr_years = {t.year: i for i, t in enumerate(spr_stack.times)}
    spr_flat = spr_stack.values.reshape(spr_stack.ntime, -1)
    # station-year SPR
    tot_p, tot_s = defaultdict(float), defaultdict(float)
    for (sid, d), amount in precip.items():
        tot_p[(sid, d.year)] += amount
        tot_s[(sid, d.year)] += snow.get((sid, d), 0.0)
    est, obs = [], []
    for (sid, year), p in sorted(tot_p.items()):
        if year in spr_years and p > 0:
            est.append(spr_flat[spr_years[year], cells[sid]])
            obs.append(tot_s[(sid, year)] / p)
    # pentad occurrence
    fs_index = {t: i for i, t in enumerate(fs.times)}
    fs_flat = fs.values.reshape(fs.ntime, -1)
    occurred = defaultdict(bool)
    for (sid, d), ph in phase.items():
        occurred[(sid, d.year, dates.pentad_of(d))] |= ph in snow_phases
    e_occ, o_occ = [], []
    thr = float(cfg["occurrence_threshold"])
    for (sid, year, p), obs_flag in sorted(occurred.items()):
        i = fs_index.get(dates.pentad_start(year, p))
        if i is None or np.isnan(fs_flat[i, cells[sid]]):
            continue
        e_occ.append(fs_flat[i, cells[sid]] > thr)
        o_occ.append(obs_flag)
    out = {"spr": metrics.validation_report(np.array(est), np.array(obs))}
    if e_occ:
        counts = metrics.contingency(e_occ, o_occ)
        out["snow_occurrence"] = metrics.validation_report(counts=counts)
    return out
