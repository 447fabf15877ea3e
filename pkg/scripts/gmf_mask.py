"""Geophysical model function evaluation and the sigma0 bounds mask.

The GMF is pluggable: coefficients come from a text file whose first line
names the model, and HH backscatter is derived from VV through a tabulated
polarization ratio (VV/HH) over incidence angle.
"""
import math
import os
from dataclasses import dataclass

import numpy as np
import pandas as pd

import utils
from raster_core import Grid, require_same_geometry

logger = utils.setup_logging(__name__)

# Published arity per model family
MODEL_ARITY = {"CMOD5": 28, "CMOD5.N": 28}

WIND_ENVELOPE = (0.2, 35.0)
INCIDENCE_ENVELOPE = (15.0, 60.0)

LOW_BOUND_WIND = 1.0
HIGH_BOUND_WIND = 15.0


class GmfConfigError(utils.ConfigError):
    pass


class GeometryError(utils.DataError):
    pass


@dataclass(frozen=True)
class GmfSpec:
    name: str
    coefficients: tuple
    ratio_incidence: tuple
    ratio_values: tuple

    def __post_init__(self):
        arity = MODEL_ARITY.get(self.name.upper())
        if arity is None:
            raise GmfConfigError(f"unknown GMF model '{self.name}' (known: {sorted(MODEL_ARITY)})")
        if len(self.coefficients) != arity:
            raise GmfConfigError(
                f"{self.name} needs {arity} coefficients, file has {len(self.coefficients)}")
        if len(self.ratio_incidence) < 2:
            raise GmfConfigError("polarization ratio table needs at least two rows")
        sampled = np.interp(np.arange(20.0, 49.5, 0.5), self.ratio_incidence, self.ratio_values)
        if np.any(sampled <= 0):
            raise GmfConfigError("polarization ratio must be positive over 20-49 deg incidence")

    def polarization_ratio(self, incidence):
        return np.interp(incidence, self.ratio_incidence, self.ratio_values)


@dataclass(frozen=True)
class SceneGeometry:
    incidence: Grid
    track_heading: float
    look_direction: float

    def __post_init__(self):
        inc = self.incidence.values[self.incidence.validity]
        lo, hi = INCIDENCE_ENVELOPE
        if inc.size and (inc.min() < lo or inc.max() > hi):
            raise GeometryError(f"incidence outside [{lo}, {hi}] deg: {inc.min():.2f}..{inc.max():.2f}")
        for label, angle in (("track_heading", self.track_heading), ("look_direction", self.look_direction)):
            if not 0.0 <= angle < 360.0:
                raise GeometryError(f"{label} must be in [0, 360), got {angle}")


def load_gmf(coef_path, ratio_path):
    """Read a coefficient file and a polarization-ratio CSV into a GmfSpec."""
    for path in (coef_path, ratio_path):
        if not path or not os.path.exists(path):
            raise GmfConfigError(f"GMF input file not found: {path}")

    with open(coef_path) as f:
        lines = [ln.strip() for ln in f if ln.strip() and not ln.strip().startswith("#")]
    if not lines:
        raise GmfConfigError(f"empty coefficient file: {coef_path}")
    name = lines[0]
    try:
        coefs = tuple(float(v) for v in lines[1:])
    except ValueError as e:
        raise GmfConfigError(f"bad coefficient in {coef_path}: {e}")

    table = pd.read_csv(ratio_path, comment="#")
    if not {"incidence_deg", "ratio"} <= set(table.columns):
        raise GmfConfigError(f"{ratio_path} needs columns incidence_deg, ratio")
    table = table.sort_values("incidence_deg")

    logger.info(f"Loaded GMF {name} ({len(coefs)} coefficients) from {coef_path}")
    return GmfSpec(name, coefs,
                   tuple(table["incidence_deg"].astype(float)),
                   tuple(table["ratio"].astype(float)))


def _clamp(values, bounds, label):
    lo, hi = bounds
    outside = (values < lo) | (values > hi)
    n_out = int(np.count_nonzero(outside))
    if n_out:
        logger.warning(f"{n_out} {label} value(s) outside GMF envelope [{lo}, {hi}]; clamped")
    return np.clip(values, lo, hi)


def _cmod5(c, v, phi_deg, theta_deg):
    """CMOD5-family VV backscatter (linear). c is 1-indexed (c[0] unused)."""
    thetm, thethr, zpow = 40.0, 25.0, 1.6

    y0 = c[19]
    pn = c[20]
    a = c[19] - (c[19] - 1.0) / c[20]
    b = 1.0 / (c[20] * (c[19] - 1.0) ** (pn - 1.0))

    csfi = np.cos(np.radians(phi_deg))
    cs2fi = 2.0 * csfi * csfi - 1.0

    x = (theta_deg - thetm) / thethr
    xx = x * x

    a0 = c[1] + c[2] * x + c[3] * xx + c[4] * x * xx
    a1 = c[5] + c[6] * x
    a2 = c[7] + c[8] * x
    gam = c[9] + c[10] * x + c[11] * xx
    s0 = c[12] + c[13] * x

    s = a2 * v
    a3 = 1.0 / (1.0 + np.exp(-np.maximum(s, s0)))
    low = s < s0
    ratio = np.divide(s, s0, out=np.ones(np.broadcast(s, s0).shape), where=low)
    a3 = np.where(low, a3 * ratio ** (s0 * (1.0 - a3)), a3)
    b0 = (a3 ** gam) * 10.0 ** (a0 + a1 * v)

    b1 = c[15] * v * (0.5 + x - np.tanh(4.0 * (x + c[16] + c[17] * v)))
    b1 = (c[14] * (1.0 + x) - b1) / (np.exp(0.34 * (v - c[18])) + 1.0)

    v0 = c[21] + c[22] * x + c[23] * xx
    d1 = c[24] + c[25] * x + c[26] * xx
    d2 = c[27] + c[28] * x

    v2 = v / v0 + 1.0
    v2 = np.where(v2 < y0, a + b * np.abs(v2 - 1.0) ** pn, v2)
    b2 = (-d1 + d2 * v2) * np.exp(-v2)

    return b0 * (1.0 + b1 * csfi + b2 * cs2fi) ** zpow


def gmf_sigma0(gmf, wind_speed, rel_azimuth, incidence, pol="VV"):
    """Backscatter for the named GMF; rel_azimuth 0 = upwind, 90 = crosswind."""
    pol = pol.upper()
    if pol not in ("VV", "HH"):
        raise ValueError(f"polarization must be VV or HH, got {pol}")

    v = _clamp(np.asarray(wind_speed, dtype=float), WIND_ENVELOPE, "wind speed")
    theta = _clamp(np.asarray(incidence, dtype=float), INCIDENCE_ENVELOPE, "incidence")
    phi = np.asarray(rel_azimuth, dtype=float)

    sigma0 = _cmod5((0.0,) + tuple(gmf.coefficients), v, phi, theta)
    if pol == "HH":
        sigma0 = sigma0 / gmf.polarization_ratio(theta)
    if np.ndim(sigma0) == 0:
        return float(sigma0)
    return sigma0


def relative_azimuths(geom):
    """(low-bound, high-bound) wind azimuths relative to the radar look.

    Low bound: wind along the track. High bound: wind blowing toward the
    satellite, i.e. from the look direction (upwind, 0 deg).
    """
    along_track = (geom.track_heading - geom.look_direction) % 360.0
    return along_track, 0.0


def mask_bounds(gmf, geom, pol, high_mode="upwind"):
    """Lower and upper sigma0 bounds over the scene incidence grid."""
    inc = geom.incidence
    theta = np.where(inc.validity, inc.values, 30.0)
    lo_az, hi_az = relative_azimuths(geom)

    lo = gmf_sigma0(gmf, LOW_BOUND_WIND, lo_az, theta, pol)
    if high_mode == "upwind":
        hi = gmf_sigma0(gmf, HIGH_BOUND_WIND, hi_az, theta, pol)
    elif high_mode == "max":
        hi = np.max([gmf_sigma0(gmf, HIGH_BOUND_WIND, az, theta, pol)
                     for az in np.arange(0.0, 181.0, 5.0)], axis=0)
    else:
        raise GmfConfigError(f"unknown high-bound mode '{high_mode}' (upwind | max)")

    return inc.with_values(lo), inc.with_values(hi)


def apply_mask(sigma0, lo, hi):
    """Invalidate pixels with sigma0 outside [lo, hi]."""
    require_same_geometry(sigma0, lo, hi)
    inside = (sigma0.values >= lo.values) & (sigma0.values <= hi.values)
    valid = sigma0.validity & lo.validity & hi.validity & inside
    n_dropped = int(np.count_nonzero(sigma0.validity & ~valid))
    logger.info(f"GMF mask removed {n_dropped} of {int(sigma0.validity.sum())} valid pixels")
    return sigma0.with_values(sigma0.values, valid)


def scene_geometry_from_record(track_heading, grid, near_deg=20.0, far_deg=49.0,
                               look_direction=None, incidence=None):
    """SceneGeometry for a scene, with a range-linear incidence if none is given.

    Right-looking geometry (look = heading + 90) is assumed when no look
    direction is supplied; near range is the column edge the radar looks from.
    """
    heading = float(track_heading) % 360.0
    look = (heading + 90.0) % 360.0 if look_direction is None else float(look_direction) % 360.0
    if incidence is None:
        ramp = np.linspace(near_deg, far_deg, grid.ncols)
        if math.sin(math.radians(look)) < 0:
            ramp = ramp[::-1]
        incidence = grid.with_values(np.tile(ramp, (grid.nrows, 1)),
                                     np.ones(grid.shape, dtype=bool))
    else:
        require_same_geometry(grid, incidence)
    return SceneGeometry(incidence, heading, look)
