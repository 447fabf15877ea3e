"""Seeded synthetic data with known ground truth.

Random numbers come from numpy's Philox (4x64 counter-based) bit generator,
seeded with GenSpec.seed; sub-streams are spawned from one SeedSequence so
each component draws from its own reproducible stream.
"""
import math
import shutil
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
import pandas as pd
from dotenv import dotenv_values

import utils
import depstats
import gmf_mask
import grid_io
import ingest_colloc
from filament import DomainPolygon, FilamentField
from raster_core import Grid, build_pyramid, levels_needed
from sweep_adjust import REFERENCE_WIND

logger = utils.setup_logging(__name__)

FILAMENT_EXPONENT = -0.8
MAX_DEPTH = 0.95


@dataclass(frozen=True)
class GenSpec:
    seed: int = 0
    n: int = 1000
    # measurement model
    B: float = 0.5
    sigma_t2: float = 1.0
    sigma_eps2: float = 0.5
    sigma_C2: float = 0.5
    sigma_U2: float = 0.5
    omega: float = 0.3
    alpha_U: float = 0.0
    # scene
    n_filaments: int = 1
    filament_length_m: float = 20000.0
    filament_width_m: float = 800.0
    filament_orientation_deg: float = 0.0
    filament_bend_m: float = 0.0
    filament_depth: float = 0.6
    wind_speed: float = 6.0
    wind_azimuth_deg: float = 45.0
    polarization: str = "VV"
    speckle_looks: int = 0
    base_pixel_m: float = 100.0
    analysis_pixel_m: float = 800.0
    size_px: int = 512
    origin_lat: float = 48.5
    origin_lon: float = -64.5
    incidence_near: float = 20.0
    incidence_far: float = 49.0
    track_heading: float = 350.0

    def __post_init__(self):
        for name in ("sigma_t2", "sigma_eps2", "sigma_C2", "sigma_U2"):
            if getattr(self, name) < 0:
                raise utils.ConfigError(f"GenSpec.{name} must be >= 0")
        if self.n < 1:
            raise utils.ConfigError("GenSpec.n must be >= 1")

    @property
    def beta_U(self):
        return self.B / self.sigma_t2 if self.sigma_t2 > 0 else 0.0

    def rng(self, stream=0):
        seq = np.random.SeedSequence(self.seed).spawn(stream + 1)[stream]
        return np.random.Generator(np.random.Philox(seq))


def load_genspec(path, **overrides):
    """GenSpec from a key-value text file; keys are GenSpec field names."""
    raw = {k.lower(): v for k, v in dotenv_values(path).items() if v is not None}
    values = {}
    for f in fields(GenSpec):
        if f.name.lower() in raw:
            text = raw[f.name.lower()]
            values[f.name] = f.type(text) if f.type is not str else text
    unknown = set(raw) - {f.name.lower() for f in fields(GenSpec)}
    if unknown:
        raise utils.ConfigError(f"{path}: unknown GenSpec keys {sorted(unknown)}")
    values.update(overrides)
    return GenSpec(**values)


def _wavelike_signal(rng, n, sigma_t2, omega, offsets_h):
    """t(tau) = a cos(omega tau) + b sin(omega tau); Cov(t(0), t(tau)) = sigma_t2 cos(omega tau)."""
    scale = math.sqrt(sigma_t2)
    a = rng.normal(0.0, scale, n)
    b = rng.normal(0.0, scale, n)
    tau = np.asarray(offsets_h, dtype=float)
    return np.outer(a, np.cos(omega * tau)) + np.outer(b, np.sin(omega * tau))


def gen_model_series(g, delta_h=depstats.DELTAS_H):
    """PairedSeries drawn from the measurement model with a wavelike signal.

    The nonlinear term and the wind noise are drawn independently at every
    hourly offset; only the overpass-hour term is shared with C.
    """
    deltas = (delta_h,) if np.isscalar(delta_h) else tuple(delta_h)
    span = 2 * max(deltas)
    hours = np.arange(-span, span + 1)
    rng = g.rng()

    t = _wavelike_signal(rng, g.n, g.sigma_t2, g.omega, hours)
    eps = rng.normal(0.0, math.sqrt(g.sigma_eps2), (g.n, len(hours)))
    eps_u = rng.normal(0.0, math.sqrt(g.sigma_U2), (g.n, len(hours)))
    eps_c = rng.normal(0.0, math.sqrt(g.sigma_C2), g.n)

    u_all = g.alpha_U + g.beta_U * t + eps + eps_u
    zero = span
    c = t[:, zero] + eps[:, zero] + eps_c

    lagged = {}
    for d in deltas:
        cols = [zero + k * d for k in depstats.LAG_OFFSETS]
        lagged[d] = u_all[:, cols]
    stamps = (pd.Timestamp("2000-01-01", tz="UTC")
              + pd.to_timedelta(np.arange(g.n) * 24, unit="h")).strftime("%Y-%m-%dT%H:00:00Z")
    return depstats.PairedSeries(c, u_all[:, zero], lagged, np.asarray(stamps), "synthetic")


def population_pearson(g):
    """Pearson correlation of C and U_0 implied by the GenSpec variances."""
    var_c = g.sigma_t2 + g.sigma_eps2 + g.sigma_C2
    var_u = g.beta_U ** 2 * g.sigma_t2 + g.sigma_eps2 + g.sigma_U2
    return (g.B + g.sigma_eps2) / math.sqrt(var_c * var_u)


def gen_power_series(seed, n, exponent=FILAMENT_EXPONENT, gain=0.5, noise=0.02,
                     wind_range=(1.0, 10.0)):
    """(C, U) with C = gain * U^exponent + noise, U uniform over wind_range."""
    rng = np.random.Generator(np.random.Philox(seed))
    u = rng.uniform(*wind_range, n)
    c = gain * np.power(u, exponent) + rng.normal(0.0, noise, n)
    return c, u


def gen_wind_fixture(seed, start, n_hours, lats, lons, speed_range=(1.5, 9.5)):
    """Hourly wind rows (iso_utc, lat, lon, u10, v10) on a regular grid.

    Speed and direction are drawn per hour and shared by every cell, so the
    field is spatially uniform and independent from hour to hour.
    """
    rng = np.random.Generator(np.random.Philox(seed))
    times = pd.date_range(pd.Timestamp(start), periods=n_hours, freq="h", tz="UTC")
    speed = rng.uniform(*speed_range, n_hours)
    direction = rng.uniform(0.0, 2.0 * math.pi, n_hours)

    t_idx, lat_g, lon_g = np.meshgrid(np.arange(n_hours), np.asarray(lats, float),
                                      np.asarray(lons, float), indexing="ij")
    t_idx = t_idx.ravel()
    return pd.DataFrame({
        "iso_utc": times[t_idx].strftime("%Y-%m-%dT%H:%M:%SZ"),
        "lat": lat_g.ravel(),
        "lon": lon_g.ravel(),
        "u10": speed[t_idx] * np.sin(direction[t_idx]),
        "v10": speed[t_idx] * np.cos(direction[t_idx]),
    })


def gen_dependence_series(seed, wind, domains, overpasses, exponent=FILAMENT_EXPONENT,
                          gain=0.5, noise=0.02):
    """Scene-domain contrast rows with C = gain * U^exponent + noise.

    U is the speed at each domain's ERA5 gridbox in the overpass hour; rows
    follow the scene-domain contrast layout (scene_id, domain, iso_utc, C, coverage).
    """
    rng = np.random.Generator(np.random.Philox(seed))
    frame = ingest_colloc.prepare_wind(wind)
    speeds_by_domain = {d.name: ingest_colloc.gridbox_speed(frame, *d.era5_gridbox) for d in domains}
    rows = []
    for k, t in enumerate(pd.DatetimeIndex(overpasses)):
        t = t.tz_localize("UTC") if t.tzinfo is None else t
        for d in domains:
            speeds = speeds_by_domain[d.name]
            hour = t.floor("h")
            if hour not in speeds.index:
                continue
            u = float(speeds.loc[hour])
            rows.append({
                "scene_id": f"synth_{k:04d}",
                "domain": d.name,
                "iso_utc": t.strftime("%Y-%m-%dT%H:%M:%SZ"),
                "C": gain * u ** exponent + rng.normal(0.0, noise),
                "coverage": 1.0,
            })
    return pd.DataFrame(rows, columns=["scene_id", "domain", "iso_utc", "C", "coverage"])


@dataclass
class SyntheticScene:
    sigma0: Grid
    truth: FilamentField
    wind: Grid
    geometry: gmf_mask.SceneGeometry


def _strip_mask(shape, center_rc, length_px, width_px, orientation_deg, bend_px=0.0):
    """Pixels whose centers lie within width/2 of a centered line segment.

    bend_px bows the center line into a parabola whose midpoint sits bend_px
    off the chord. The offset is rounded to whole pixels, so a one-pixel strip
    stays one pixel wide and 8-connected while the bow rises at most one pixel
    per pixel along the strip.
    """
    rows, cols = np.indices(shape, dtype=float)
    theta = math.radians(orientation_deg)
    dr, dc = -math.sin(theta), math.cos(theta)
    rel_r, rel_c = rows - center_rc[0], cols - center_rc[1]
    along = rel_r * dr + rel_c * dc
    across = np.abs(rel_r * dc - rel_c * dr)
    half = (length_px - 1) / 2.0
    if bend_px and half > 0:
        across = np.abs(rel_r * dc - rel_c * dr - np.rint(bend_px * (1.0 - (along / half) ** 2)))
    return (np.abs(along) <= half + 1e-9) & (across <= (width_px - 1) / 2.0 + 1e-9)


def gen_scene(g, gmf):
    """Background sigma0 from the GMF plus darkened, optionally bowed strips with an exact truth mask.

    Strips are drawn on the analysis grid and replicated onto the base grid,
    so each analysis pixel is either fully inside or fully outside a strip.
    Strip depth scales as (U/6)^-0.8 with the scene wind.
    """
    factor = int(round(g.analysis_pixel_m / g.base_pixel_m))
    if factor < 1 or g.size_px % factor:
        raise utils.ConfigError("size_px must be a multiple of analysis/base pixel ratio")
    n_an = g.size_px // factor
    rng = g.rng(1)

    an_shape = (n_an, n_an)
    truth_mask = np.zeros(an_shape, dtype=bool)
    length_px = int(round(g.filament_length_m / g.analysis_pixel_m))
    width_px = max(1.0, g.filament_width_m / g.analysis_pixel_m)
    bend_px = g.filament_bend_m / g.analysis_pixel_m
    for k in range(g.n_filaments):
        # Strips evenly spaced down the scene, odd rows
        row = (k + 1) * n_an // (g.n_filaments + 1) | 1
        truth_mask |= _strip_mask(an_shape, (row, n_an // 2), length_px, width_px,
                                  g.filament_orientation_deg, bend_px)

    base = Grid(np.zeros((g.size_px, g.size_px)), np.ones((g.size_px, g.size_px), dtype=bool),
                g.base_pixel_m, g.origin_lat, g.origin_lon)
    geom = gmf_mask.scene_geometry_from_record(g.track_heading, base, g.incidence_near,
                                               g.incidence_far)
    sigma0 = gmf_mask.gmf_sigma0(gmf, g.wind_speed, g.wind_azimuth_deg,
                                 geom.incidence.values, g.polarization)

    depth = min(MAX_DEPTH, g.filament_depth * (g.wind_speed / REFERENCE_WIND) ** FILAMENT_EXPONENT)
    strip_base = np.repeat(np.repeat(truth_mask, factor, axis=0), factor, axis=1)
    sigma0 = np.where(strip_base, sigma0 * (1.0 - depth), sigma0)
    if g.speckle_looks > 0:
        sigma0 = sigma0 * rng.gamma(g.speckle_looks, 1.0 / g.speckle_looks, sigma0.shape)

    # Analysis-grid origin follows the pyramid's half-pixel shifts
    top = build_pyramid(base, levels_needed(g.base_pixel_m, g.analysis_pixel_m))[-1]
    an_grid = top.with_values(np.zeros(an_shape), np.ones(an_shape, dtype=bool))

    labels = np.where(truth_mask, 1, 0).astype(np.int32)
    truth = FilamentField(
        magnitude=an_grid.with_values(np.where(truth_mask, depth, 0.0)),
        labels=an_grid.with_values(labels),
        component_spans={},
    )
    wind = an_grid.with_values(np.full(an_shape, g.wind_speed))
    logger.info(f"Synthetic scene: {g.size_px}px at {g.base_pixel_m} m, {g.n_filaments} strip(s), "
                f"depth {depth:.3f}, {int(truth_mask.sum())} truth pixels")
    return SyntheticScene(base.with_values(sigma0), truth, wind, geom)


SYNTH_SCENE_TIME = "2019-07-01T22:10:00Z"
SYNTH_DOMAIN = (
    "synthetic",
    ((48.35, -64.30), (48.35, -63.95), (48.15, -63.95), (48.15, -64.30)),
    (48.25, -64.25),
)
SYNTH_WIND_LATS = (48.0, 48.25, 48.5, 48.75)
SYNTH_WIND_LONS = (-64.5, -64.25, -64.0, -63.75)
SYNTH_SIGHTINGS = [
    ("A", "2019-07-01T14:00:00Z", 48.300, -64.100, 2, 0),
    ("B", "2019-07-01T16:30:00Z", 48.305, -64.105, 2, 0),
    ("A", "2019-07-01T15:00:00Z", 48.100, -63.900, 1, 0),
    ("A", "2019-07-01T18:00:00Z", 48.200, -64.000, 1, 1),
    ("B", "2019-07-02T12:00:00Z", 48.400, -64.400, 3, 0),
    ("B", "2019-06-20T12:00:00Z", 47.900, -64.600, 1, 0),
]


def _ring_text(ring):
    return ";".join(f"{lat:.10f} {lon:.10f}" for lat, lon in ring)


def write_workspace(g, gmf, gmf_paths, out_dir, n_overpasses=90):
    """Write a self-contained synthetic run: scene, catalog, wind, domains,
    sightings, overpass contrasts (plain and re-processed) and a run config
    pointing at them.

    Returns the run config path.
    """
    out = Path(out_dir)
    utils.ensure_dir(out / "scenes")

    scene = gen_scene(g, gmf)
    grid_io.write_sgrd(scene.sigma0, out / "scenes" / "synth_scene.sgrd")
    grid_io.write_sgrd(scene.truth.magnitude, out / "scenes" / "synth_truth.sgrd")
    pd.DataFrame([{
        "scene_id": "synth_scene",
        "iso_utc": SYNTH_SCENE_TIME,
        "pol": g.polarization,
        "grid_path": "scenes/synth_scene.sgrd",
        "ring": _ring_text(scene.sigma0.bounding_ring()),
        "track_heading": utils.format_float(g.track_heading),
    }]).to_csv(out / "catalog.csv", index=False)

    name, vertices, era5 = SYNTH_DOMAIN
    domain = DomainPolygon(name, vertices, era5)
    rows = [{"name": name, "kind": "vertex", "index": i, "lat": lat, "lon": lon}
            for i, (lat, lon) in enumerate(vertices)]
    rows.append({"name": name, "kind": "era5", "index": 0, "lat": era5[0], "lon": era5[1]})
    pd.DataFrame(rows).to_csv(out / "domains.csv", index=False)

    start = pd.Timestamp(SYNTH_SCENE_TIME).normalize() - pd.Timedelta(days=47)
    wind = gen_wind_fixture(g.seed, start, (n_overpasses + 2) * 24,
                            SYNTH_WIND_LATS, SYNTH_WIND_LONS)
    wind.to_csv(out / "wind.csv", index=False, float_format="%.17g")

    overpasses = start + pd.Timedelta(days=1, hours=22, minutes=10) + pd.to_timedelta(
        np.arange(n_overpasses), unit="D")
    gen_dependence_series(g.seed + 1, wind, [domain], overpasses).to_csv(
        out / "overpass_contrast.csv", index=False, float_format="%.17g")
    # Re-processed pass: adjusted contrasts carry no wind dependence, C at 6 m/s plus noise
    gen_dependence_series(g.seed + 2, wind, [domain], overpasses, exponent=0.0,
                          gain=0.5 * REFERENCE_WIND ** FILAMENT_EXPONENT).to_csv(
        out / "overpass_contrast_adjusted.csv", index=False, float_format="%.17g")

    pd.DataFrame(SYNTH_SIGHTINGS, columns=ingest_colloc.SIGHTING_COLUMNS).to_csv(
        out / "sightings.csv", index=False)

    for src in gmf_paths:
        shutil.copyfile(src, out / Path(src).name)
    coef, ratio = (Path(p).name for p in gmf_paths)
    cfg_path = out / "run.cfg"
    cfg_path.write_text(
        "# Synthetic run written by filament_run.py synth\n"
        f"# seed = {g.seed}\n"
        "CATALOG=catalog.csv\n"
        "SIGHTINGS=sightings.csv\n"
        "WIND=wind.csv\n"
        "DOMAINS=domains.csv\n"
        f"GMF_COEFFICIENTS={coef}\n"
        f"POLARIZATION_RATIO={ratio}\n"
        "SCENE_CONTRASTS=overpass_contrast.csv\n"
        "ADJUSTED_CONTRASTS=overpass_contrast_adjusted.csv\n"
        "OUTPUT_DIR=results\n"
        "# Off so the synthetic run depends only on the injected strips\n"
        "GMF_MASK=false\n"
        f"INCIDENCE_NEAR={utils.format_float(g.incidence_near)}\n"
        f"INCIDENCE_FAR={utils.format_float(g.incidence_far)}\n"
    )
    logger.info(f"Synthetic workspace written to {out} ({n_overpasses} overpasses)")
    return cfg_path
