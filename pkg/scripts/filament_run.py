#!/usr/bin/env python3
"""Filament contrast and wind-dependence pipeline.

Subcommands run one stage each; a batch run is
    filaments -> collocate -> bin -> analyze
with every stage reading the files the previous one wrote. The re-processed
pass is
    filaments --xstar X -> bin --adjusted -> analyze --adjusted
"""
import argparse
import os
import re
import sys
from concurrent.futures import ThreadPoolExecutor

import pandas as pd

# Add current directory to path to ensure local module imports work
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

import utils
import config_loader
import depstats
import filament
import gmf_mask
import grid_io
import ingest_colloc
import raster_core
import sweep_adjust
import synthkit

# Setup Logging
logger = utils.setup_logging("filament_run")

SCENE_CONTRAST_COLUMNS = ["scene_id", "domain", "iso_utc", "C", "coverage", "n_pixels"]


class CatalogError(utils.ConfigError):
    """Requested scene is not in the catalog."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"ERROR\t{message}", file=sys.stderr)
        raise SystemExit(utils.ConfigError.exit_code)


def _write_csv(df, path):
    utils.ensure_dir(os.path.dirname(os.path.abspath(path)))
    df.to_csv(path, index=False, float_format="%.17g", na_rep="")
    logger.info(f"Wrote {len(df)} rows: {path}")
    return path


def _tag(fine_m, coarse_m):
    return f"{int(round(fine_m))}_{int(round(coarse_m))}"


def _safe_name(name):
    return re.sub(r"[^\w.-]+", "_", str(name))


def _select_scenes(catalog, scene_id):
    if scene_id is None:
        return sorted(catalog, key=lambda s: s.scene_id)
    for scene in catalog:
        if scene.scene_id == scene_id:
            return [scene]
    raise CatalogError(f"scene '{scene_id}' not in catalog")


class ScenePipeline:
    """Per-scene raster stages sharing one config, GMF and wind field."""

    def __init__(self, cfg, x_star=None):
        self.cfg = cfg
        self.x_star = x_star
        self.gmf = None
        if cfg.gmf_mask:
            self.gmf = gmf_mask.load_gmf(cfg.gmf_coefficients, cfg.polarization_ratio)
        self._wind = None

    def scene_dir(self, record):
        return os.path.join(self.cfg.output_dir, _safe_name(record.scene_id))

    def wind_field(self):
        if self._wind is None:
            frame = ingest_colloc.load_wind_series(self.cfg.wind)
            self._wind = sweep_adjust.WindField.from_frame(frame)
        return self._wind

    def masked(self, record, fine):
        """Analysis-level backscatter with the GMF bounds mask applied."""
        incidence = None
        if record.incidence_path:
            incidence = grid_io.read_sgrd(record.incidence_path)
            if incidence.pixel_size_m < fine.pixel_size_m:
                n = raster_core.levels_needed(incidence.pixel_size_m, fine.pixel_size_m)
                incidence = raster_core.build_pyramid(incidence, n)[-1]
        geom = gmf_mask.scene_geometry_from_record(
            record.track_heading, fine, self.cfg.incidence_near, self.cfg.incidence_far,
            record.look_direction, incidence)
        lo, hi = gmf_mask.mask_bounds(self.gmf, geom, record.polarization, self.cfg.gmf_high_mode)
        return gmf_mask.apply_mask(fine, lo, hi)

    def pyramid(self, record):
        """Smoothing pyramid up to the coarsest bracket.

        With the GMF mask on, the analysis level is masked and the levels
        above it are rebuilt from the masked grid.
        """
        base = grid_io.read_sgrd(record.grid_path)
        p = self.cfg.agreement
        n_levels = raster_core.levels_needed(base.pixel_size_m, max(p.coarse_m))
        pyramid = raster_core.build_pyramid(base, n_levels)
        if self.gmf is None:
            return pyramid

        k = raster_core.levels_needed(base.pixel_size_m, p.fine_m) - 1
        fine = self.masked(record, pyramid[k])
        upper = raster_core.build_pyramid(fine, n_levels - k)
        return raster_core.Pyramid(pyramid.levels[:k] + upper.levels)

    def contrasts(self, record, pyramid=None):
        p = self.cfg.agreement
        if pyramid is None:
            pyramid = self.pyramid(record)
        return raster_core.contrast_set(pyramid, p.fine_m, p.coarse_m)

    def wind_grid(self, record, like):
        return sweep_adjust.interpolate_wind(self.wind_field(), like, record.t_utc)

    def adjusted(self, record, contrasts):
        if self.x_star is None:
            return contrasts
        V = self.wind_grid(record, contrasts[0])
        return sweep_adjust.adjust_contrast_set(contrasts, V, self.x_star)

    def filaments(self, record):
        return filament.extract_filaments(self.adjusted(record, self.contrasts(record)),
                                          self.cfg.agreement)

    @property
    def suffix(self):
        return "" if self.x_star is None else "_adjusted"

    def write_filaments(self, record, field):
        out = self.scene_dir(record)
        grid_io.write_sgrd(field.magnitude, os.path.join(out, f"filaments{self.suffix}.sgrd"))
        grid_io.write_sgrd(field.labels.with_values(field.labels.values.astype(float)),
                           os.path.join(out, f"filament_labels{self.suffix}.sgrd"))
        grid_io.write_pgm(field.magnitude, os.path.join(out, f"filaments{self.suffix}.pgm"), 0.0, 1.0)

    def domain_rows(self, record, field, domains):
        rows = []
        for d in domains:
            dc = filament.domain_contrast(field, d, self.cfg.min_coverage)
            if dc is None:
                continue
            rows.append({
                "scene_id": record.scene_id,
                "domain": dc.domain,
                "iso_utc": record.t_utc.strftime("%Y-%m-%dT%H:%M:%SZ"),
                "C": dc.C,
                "coverage": dc.coverage,
                "n_pixels": dc.n_pixels,
            })
        return rows


def cmd_pyramid(cfg, args):
    cfg.validate("catalog")
    pipe = ScenePipeline(cfg)
    for record in _select_scenes(ingest_colloc.load_scene_catalog(cfg.catalog), args.scene):
        for level in pipe.pyramid(record):
            name = f"pyramid_{int(round(level.pixel_size_m))}m.sgrd"
            grid_io.write_sgrd(level, os.path.join(pipe.scene_dir(record), name))
    return 0


def cmd_contrast(cfg, args):
    cfg.validate("catalog")
    pipe = ScenePipeline(cfg)
    p = cfg.agreement
    for record in _select_scenes(ingest_colloc.load_scene_catalog(cfg.catalog), args.scene):
        for coarse, c in zip(p.coarse_m, pipe.contrasts(record)):
            stem = os.path.join(pipe.scene_dir(record), f"contrast_{_tag(p.fine_m, coarse)}")
            grid_io.write_sgrd(c, stem + ".sgrd")
            grid_io.write_pgm(c, stem + ".pgm", -1.0, 1.0)
    return 0


def cmd_adjust(cfg, args):
    cfg.validate("catalog", "wind")
    x_star = cfg.sweep.x_star if args.xstar is None else args.xstar
    pipe = ScenePipeline(cfg, x_star)
    p = cfg.agreement
    for record in _select_scenes(ingest_colloc.load_scene_catalog(cfg.catalog), args.scene):
        contrasts = pipe.contrasts(record)
        V = pipe.wind_grid(record, contrasts[0])
        out = pipe.scene_dir(record)
        grid_io.write_sgrd(V, os.path.join(out, "wind_speed.sgrd"))
        for coarse, c in zip(p.coarse_m, sweep_adjust.adjust_contrast_set(contrasts, V, x_star)):
            grid_io.write_sgrd(c, os.path.join(out, f"adjusted_{_tag(p.fine_m, coarse)}.sgrd"))
    return 0


def cmd_filaments(cfg, args):
    """Filament fields per scene; a full catalog run also writes scene-domain contrasts.

    With --xstar the contrasts are wind-adjusted before extraction and every
    output carries an _adjusted suffix, so both passes share one output dir.
    """
    cfg.validate("catalog", "domains")
    if args.xstar is not None:
        cfg.validate("wind")
    pipe = ScenePipeline(cfg, args.xstar)
    records = _select_scenes(ingest_colloc.load_scene_catalog(cfg.catalog), args.scene)
    domains = filament.load_domains(cfg.domains)
    if args.xstar is not None:
        pipe.wind_field()

    def work(record):
        try:
            field = pipe.filaments(record)
            pipe.write_filaments(record, field)
            return record.scene_id, pipe.domain_rows(record, field, domains), None
        except utils.DataError as e:
            return record.scene_id, [], e

    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        results = sorted(pool.map(work, records), key=lambda r: r[0])

    failed = [(sid, err) for sid, _, err in results if err is not None]
    for sid, err in failed:
        logger.error(f"Scene {sid} failed: {err}")
        print(f"ERROR\tscene {sid}: {err}", file=sys.stderr)

    if args.scene is None:
        rows = [row for _, scene_rows, _ in results for row in scene_rows]
        _write_csv(pd.DataFrame(rows, columns=SCENE_CONTRAST_COLUMNS),
                   os.path.join(cfg.output_dir, f"scene_domain_contrast{pipe.suffix}.csv"))
    logger.info(f"Processed {len(records) - len(failed)} of {len(records)} scenes")
    return utils.DataError.exit_code if failed else 0


def cmd_collocate(cfg, args):
    cfg.validate("catalog", "sightings")
    catalog = ingest_colloc.load_scene_catalog(cfg.catalog)
    sightings, rejected = ingest_colloc.load_sightings(cfg.sightings)
    for r in rejected:
        print(f"ERROR\t{cfg.sightings}: {r}", file=sys.stderr)

    merged, removed = ingest_colloc.dedup_sightings(
        [s for s in sightings if s.source == "A"], [s for s in sightings if s.source == "B"])
    matches = ingest_colloc.collocate_day(merged, catalog)

    _write_csv(ingest_colloc.summarize_counts(matches, catalog, merged),
               os.path.join(cfg.output_dir, "collocation_summary.csv"))
    _write_csv(pd.DataFrame(
        [{"scene_id": m.scene.scene_id, "source": m.sighting.source,
          "iso_utc": m.sighting.t_utc.strftime("%Y-%m-%dT%H:%M:%SZ"),
          "lat": m.sighting.lat, "lon": m.sighting.lon, "count": m.sighting.count}
         for m in matches],
        columns=["scene_id", "source", "iso_utc", "lat", "lon", "count"]),
        os.path.join(cfg.output_dir, "collocations.csv"))
    logger.info(f"Collocation: {len(merged)} sightings after removing {removed} duplicates, "
                f"{len(matches)} matches")
    return 0


def cmd_bin(cfg, args):
    """Hourly paired series; --adjusted bins the re-processed scene-domain contrasts."""
    if args.adjusted:
        source, target, suffix = "adjusted_contrasts", cfg.adjusted_series, "_adjusted"
    else:
        source, target, suffix = "scene_contrasts", cfg.series, ""
    cfg.validate(source, "wind", "domains")
    path = getattr(cfg, source)
    samples = pd.read_csv(path)
    missing = {"domain", "iso_utc", "C"} - set(samples.columns)
    if missing:
        raise ingest_colloc.SchemaError(path,
                                        [ingest_colloc.RowError(1, f"missing columns {sorted(missing)}")])
    wind = ingest_colloc.load_wind_series(cfg.wind)
    wind_by_domain = {d.name: ingest_colloc.gridbox_speed(wind, *d.era5_gridbox)
                      for d in filament.load_domains(cfg.domains)}

    rows, drops = ingest_colloc.bin_hourly(samples, wind_by_domain, cfg.sweep.deltas, cfg.wind_bounds)
    _write_csv(rows, target)
    _write_csv(ingest_colloc.seasonal_summary(rows, cfg.season_window),
               os.path.join(cfg.output_dir, f"seasonal_summary{suffix}.csv"))
    for reason, n in drops.items():
        if n:
            logger.warning(f"Dropped {n} domain-hour(s): {reason}")
    return 0


def _summary_lines(reports, table, skipped, x_star):
    lines = [f"x_star\t{utils.format_float(x_star)}"]
    for report in reports:
        lines.append(f"domain\t{report.domain}\tn\t{report.n_samples}"
                     f"\tlow_confidence\t{str(report.low_confidence).lower()}")
        for curve, x in report.maxima.items():
            lines.append(f"  argmax\t{curve}\t{'' if x is None else utils.format_float(x)}")
    for rec in table.itertuples(index=False):
        lines.append(f"correlation\t{rec.domain}\t{rec.stage}\t{rec.adjustment}"
                     f"\tpearson\t{utils.format_float(rec.pearson)}"
                     f"\tdcor\t{utils.format_float(rec.dcor)}")
    for name, reason in skipped:
        lines.append(f"skipped\t{name}\t{reason}")
    return "\n".join(lines) + "\n"


def _adjusted_series(cfg):
    """Re-processed PairedSeries per domain from the adjusted pass."""
    cfg.validate("adjusted_series")
    df = pd.read_csv(cfg.adjusted_series)
    if df.empty:
        logger.warning(f"No re-processed samples in {cfg.adjusted_series}")
        return {}
    return {domain: depstats.PairedSeries.from_frame(df, domain) for domain in sorted(df["domain"].unique())}


def cmd_analyze(cfg, args):
    """Exponent sweep and correlation table per domain; skips domains that cannot be analyzed.

    With --adjusted the "after" correlations come from the re-processed series.
    """
    cfg.validate("series")
    x_star = cfg.sweep.x_star if args.xstar is None else args.xstar
    sweep_cfg = sweep_adjust.SweepConfig(cfg.sweep.x_grid, cfg.sweep.deltas, x_star)
    df = pd.read_csv(cfg.series)

    reports, series, skipped = [], {}, []
    for domain in sorted(df["domain"].unique()) if not df.empty else []:
        s = depstats.PairedSeries.from_frame(df, domain)
        try:
            report = sweep_adjust.sweep_exponent(s, sweep_cfg)
        except utils.DataError as e:
            logger.warning(f"Domain {domain} skipped: {e}")
            skipped.append((domain, str(e)))
            continue
        sweep_adjust.write_report_csv(
            report, os.path.join(cfg.output_dir, f"dependence_{_safe_name(domain)}.csv"))
        reports.append(report)
        series[domain] = s

    if not reports:
        raise depstats.InsufficientDataError(
            f"no analyzable domain in {cfg.series} (skipped: {[name for name, _ in skipped]})")

    adjusted = _adjusted_series(cfg) if args.adjusted else None
    table = sweep_adjust.correlation_table(series, x_star, adjusted)
    _write_csv(table, os.path.join(cfg.output_dir, "correlations.csv"))
    summary_path = os.path.join(cfg.output_dir, "analysis_summary.txt")
    with open(summary_path, "w") as f:
        f.write(_summary_lines(reports, table, skipped, x_star))
    logger.info(f"Analyzed {len(reports)} domain(s), skipped {len(skipped)}: {summary_path}")
    return 0


def cmd_synth(cfg, args):
    spec_path = args.config or config_loader.SYNTH_SPEC
    overrides = {} if args.seed is None else {"seed": args.seed}
    g = synthkit.load_genspec(spec_path, **overrides)
    gmf_paths = (config_loader.GMF_COEFFICIENTS, config_loader.POLARIZATION_RATIO)
    gmf = gmf_mask.load_gmf(*gmf_paths)
    out = args.out or os.path.join(config_loader.OUTPUT_DIR, "synthetic")
    cfg_path = synthkit.write_workspace(g, gmf, gmf_paths, out)
    print(cfg_path)
    return 0


COMMANDS = {
    "pyramid": cmd_pyramid,
    "contrast": cmd_contrast,
    "filaments": cmd_filaments,
    "collocate": cmd_collocate,
    "bin": cmd_bin,
    "analyze": cmd_analyze,
    "adjust": cmd_adjust,
    "synth": cmd_synth,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, help="KEY=value run config (GenSpec file for synth)")
    common.add_argument("--scene", type=str, help="Scene id; default is every catalog scene")
    common.add_argument("--xstar", type=float, help="Wind-speed adjustment exponent")
    common.add_argument("--adjusted", action="store_true",
                        help="bin/analyze: use the re-processed (wind-adjusted) pass")
    common.add_argument("--seed", type=int, help="Seed for synthetic data")
    common.add_argument("--out", type=str, help="Output directory")

    parser = _Parser(description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "synth":
            cfg = None
        else:
            overrides = {"output_dir": os.path.abspath(args.out)} if args.out else {}
            cfg = config_loader.load_run_config(args.config, **overrides).validate()
            config_loader.init_directories(cfg)
        return COMMANDS[args.command](cfg, args)
    except utils.PipelineError as e:
        logger.error(f"CRITICAL FAILURE: {e}")
        print(f"ERROR\t{e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
