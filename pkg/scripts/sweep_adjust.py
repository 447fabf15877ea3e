"""Exponent sweep of C against U^x, wind interpolation, and the (V/6)^x* adjustment."""
import os
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.interpolate import RegularGridInterpolator

import utils
import depstats
from raster_core import require_same_geometry

logger = utils.setup_logging(__name__)

REFERENCE_WIND = 6.0
LOW_CONFIDENCE_MAX = 0.2

REPORT_COLUMNS = ["x", "abs_pearson", "dcor",
                  "lin_d1", "nonlin_d1", "lin_d2", "nonlin_d2", "lin_d5", "nonlin_d5"]
CORRELATION_COLUMNS = ["domain", "stage", "adjustment", "n", "pearson", "dcor"]


class CoverageError(utils.DataError):
    """Wind field does not cover the requested place or time."""


def default_x_grid():
    steps = np.arange(-50, 51)
    return tuple(round(k / 10.0, 1) for k in steps if k != 0)


@dataclass(frozen=True)
class SweepConfig:
    x_grid: tuple = field(default_factory=default_x_grid)
    deltas: tuple = depstats.DELTAS_H
    x_star: float = 0.8

    def __post_init__(self):
        xs = np.asarray(self.x_grid, dtype=float)
        if np.any(xs == 0):
            raise utils.ConfigError("exponent grid must exclude 0")
        if np.any(np.diff(xs) <= 0):
            raise utils.ConfigError("exponent grid must be strictly increasing")


@dataclass
class DependenceReport:
    domain: str
    x_grid: np.ndarray
    abs_pearson: np.ndarray
    dcor: np.ndarray
    linear: dict
    nonlinear: dict
    x_star: float
    n_samples: int = 0

    def argmax(self, curve):
        """Exponent at the maximum of a curve, ignoring gaps; None if all gaps."""
        values = np.asarray(curve, dtype=float)
        if np.all(np.isnan(values)):
            return None
        return float(self.x_grid[int(np.nanargmax(values))])

    @property
    def maxima(self):
        out = {"abs_pearson": self.argmax(self.abs_pearson), "dcor": self.argmax(self.dcor)}
        for d in sorted(self.linear):
            out[f"lin_d{d}"] = self.argmax(np.abs(self.linear[d]))
            out[f"nonlin_d{d}"] = self.argmax(np.abs(self.nonlinear[d]))
        return out

    @property
    def low_confidence(self):
        values = np.asarray(self.abs_pearson, dtype=float)
        if np.all(np.isnan(values)):
            return True
        return float(np.nanmax(values)) < LOW_CONFIDENCE_MAX

    def to_frame(self):
        data = {"x": self.x_grid, "abs_pearson": self.abs_pearson, "dcor": self.dcor}
        for d in depstats.DELTAS_H:
            nan = np.full(len(self.x_grid), np.nan)
            data[f"lin_d{d}"] = self.linear.get(d, nan)
            data[f"nonlin_d{d}"] = self.nonlinear.get(d, nan)
        return pd.DataFrame(data)[REPORT_COLUMNS]


def sweep_exponent(s, cfg):
    """Correlations of C against U^x over the exponent grid.

    The power is applied to U and to every lagged sample before solving the
    measurement model; unavailable solutions are NaN gaps. A series whose
    correlation is undefined at every exponent (constant C or U) raises
    UndefinedCorrelationError.
    """
    if len(s) < depstats.MIN_SAMPLES:
        raise depstats.InsufficientDataError(
            f"{s.domain or 'series'}: sweep needs at least {depstats.MIN_SAMPLES} samples, got {len(s)}")
    if np.any(s.u <= 0):
        raise utils.DataError("wind speeds must be positive for the exponent sweep")

    xs = np.asarray(cfg.x_grid, dtype=float)
    deltas = [d for d in cfg.deltas if d in s.u_lagged]
    abs_r = np.full(len(xs), np.nan)
    dc = np.full(len(xs), np.nan)
    lin = {d: np.full(len(xs), np.nan) for d in deltas}
    nonlin = {d: np.full(len(xs), np.nan) for d in deltas}
    var_c = depstats.covariance(s.c, s.c)

    for i, x in enumerate(xs):
        ts = s.transformed(lambda u: np.power(u, x))
        try:
            abs_r[i] = abs(depstats.pearson(s.c, ts.u))
        except depstats.UndefinedCorrelationError:
            continue
        dc[i] = depstats.dcor(s.c, ts.u)
        for d in deltas:
            u0 = ts.u_lagged[d][:, 2]
            sol = depstats.solve_measurement_model(ts, d)
            parts = depstats.decompose_pearson(sol, var_c, depstats.covariance(u0, u0))
            if parts is not None:
                lin[d][i], nonlin[d][i] = parts

    if np.all(np.isnan(abs_r)):
        raise depstats.UndefinedCorrelationError(
            f"{s.domain or 'series'}: correlation of C with U^x undefined at every exponent "
            "(constant C or U)")
    report = DependenceReport(s.domain, xs, abs_r, dc, lin, nonlin, cfg.x_star, len(s))
    logger.info(f"Sweep {s.domain}: max |pearson| {np.nanmax(abs_r):.3f} at x={report.argmax(abs_r)}, "
                f"max dcor {np.nanmax(dc):.3f} at x={report.argmax(dc)}")
    if report.low_confidence:
        logger.warning(f"Sweep {s.domain}: max |pearson| below {LOW_CONFIDENCE_MAX}; low confidence")
    return report


def write_report_csv(report, path):
    utils.ensure_dir(os.path.dirname(os.path.abspath(path)))
    report.to_frame().to_csv(path, index=False, float_format="%.17g", na_rep="")
    logger.info(f"Wrote dependence report: {path}")
    return path


@dataclass
class WindField:
    """Hourly 10-m wind on a regular lat/lon grid."""
    times: np.ndarray
    lats: np.ndarray
    lons: np.ndarray
    u10: np.ndarray
    v10: np.ndarray

    @classmethod
    def from_frame(cls, df):
        """From wind CSV rows (iso_utc, lat, lon, u10, v10); must form a full grid."""
        df = df.copy()
        df["time"] = pd.to_datetime(df["iso_utc"], utc=True)
        times = pd.DatetimeIndex(df["time"].unique()).sort_values()
        lats = np.sort(df["lat"].unique())
        lons = np.sort(df["lon"].unique())
        shape = (len(times), len(lats), len(lons))
        if len(df) != shape[0] * shape[1] * shape[2]:
            raise CoverageError(f"wind rows ({len(df)}) do not form a full time x lat x lon grid {shape}")
        cube = df.set_index(["time", "lat", "lon"]).sort_index()
        u = cube["u10"].to_numpy(float).reshape(shape)
        v = cube["v10"].to_numpy(float).reshape(shape)
        return cls(times, lats, lons, u, v)

    def nearest_hour(self, t):
        t = pd.Timestamp(t)
        t = t.tz_localize("UTC") if t.tzinfo is None else t.tz_convert("UTC")
        times = pd.DatetimeIndex(self.times)
        if t < times[0] - pd.Timedelta(minutes=30) or t > times[-1] + pd.Timedelta(minutes=30):
            raise CoverageError(f"time {t} outside wind field {times[0]} .. {times[-1]}")
        return int(np.argmin(np.abs((times - t).total_seconds())))


def interpolate_wind(wind_field, scene, t):
    """Wind speed at the nearest hour, bilinear to the scene pixel centers."""
    k = wind_field.nearest_hour(t)
    speed = np.hypot(wind_field.u10[k], wind_field.v10[k])
    lat, lon = scene.latlon()

    if len(wind_field.lats) < 2 or len(wind_field.lons) < 2:
        raise CoverageError("wind field needs at least 2x2 cells for interpolation")
    interp = RegularGridInterpolator((wind_field.lats, wind_field.lons), speed,
                                     method="linear", bounds_error=False, fill_value=np.nan)
    V = interp(np.column_stack([lat.ravel(), lon.ravel()])).reshape(scene.shape)
    if np.isnan(V).any():
        raise CoverageError(
            f"wind field {wind_field.lats[0]}..{wind_field.lats[-1]}N, "
            f"{wind_field.lons[0]}..{wind_field.lons[-1]}E does not cover the scene")
    return scene.with_values(V, np.ones(scene.shape, dtype=bool))


def adjustment_factor(V, x_star):
    return np.power(np.asarray(V, dtype=float) / REFERENCE_WIND, x_star)


def adjust_contrast(c, V, x_star):
    """c * (V/6)^x_star per pixel; valid pixels with V <= 0 become invalid."""
    require_same_geometry(c, V)
    bad = c.validity & ~(V.validity & (V.values > 0))
    n_bad = int(np.count_nonzero(bad))
    if n_bad:
        logger.warning(f"{n_bad} pixel(s) with nonpositive wind speed invalidated by adjustment")
    valid = c.validity & ~bad
    factor = np.ones(c.shape)
    np.power(V.values / REFERENCE_WIND, x_star, out=factor, where=valid)
    return c.with_values(np.where(valid, c.values * factor, 0.0), valid)


def adjust_contrast_set(contrasts, V, x_star):
    return [adjust_contrast(c, V, x_star) for c in contrasts]


def correlation_table(series_by_domain, x_star, adjusted_by_domain=None):
    """Pearson and dCor of C with U before and after the wind-speed adjustment.

    "after" comes from the re-processed series of a domain (filaments extracted
    from adjusted contrasts) when one is given with enough samples, else from
    the sample-level adjustment C * (U_0/6)^x*. The adjustment column records
    which. Domains with too few samples or undefined correlations are skipped.
    """
    adjusted_by_domain = adjusted_by_domain or {}
    rows = []
    for domain, s in series_by_domain.items():
        if len(s) < depstats.MIN_SAMPLES:
            logger.warning(f"Domain {domain}: {len(s)} samples, skipped")
            continue
        after, source = adjusted_by_domain.get(domain), "reprocessed"
        if after is not None and len(after) < depstats.MIN_SAMPLES:
            logger.warning(f"Domain {domain}: {len(after)} re-processed samples, "
                           "using the sample-level adjustment")
            after = None
        if after is None:
            after, source = s.with_c(s.c * adjustment_factor(s.u, x_star)), "sample"

        try:
            stage_rows = [{
                "domain": domain,
                "stage": stage,
                "adjustment": adjustment,
                "n": len(series),
                "pearson": depstats.pearson(series.c, series.u),
                "dcor": depstats.dcor(series.c, series.u),
            } for stage, adjustment, series in (("before", "none", s), ("after", source, after))]
        except depstats.UndefinedCorrelationError as e:
            logger.warning(f"Domain {domain} skipped: {e}")
            continue
        rows.extend(stage_rows)
    return pd.DataFrame(rows, columns=CORRELATION_COLUMNS)
