"""Georeferenced grids, the resolution-halving pyramid and SAR contrast.

Grids are row-major with row 0 at the north edge. Coordinates follow a local
equirectangular mapping anchored at the upper-left pixel center:

    lat = origin_lat - i * pixel_size_m / 111320
    lon = origin_lon + j * pixel_size_m / (111320 * cos(origin_lat))
"""
import math
from dataclasses import dataclass, field, replace

import numpy as np

import utils

logger = utils.setup_logging(__name__)

METERS_PER_DEGREE = 111320.0

# Origins are compared after rounding; halving is deterministic so this only
# absorbs float noise from independently built grids.
ORIGIN_TOLERANCE_DEG = 1e-9


class RegistrationError(utils.DataError):
    """Grids do not share (or nest into) the same geometry."""


class LevelExhaustionError(utils.DataError):
    """Pyramid asked for more levels than the grid can supply."""


@dataclass(frozen=True)
class Grid:
    values: np.ndarray
    validity: np.ndarray
    pixel_size_m: float
    origin_lat: float
    origin_lon: float

    def __post_init__(self):
        values = np.asarray(self.values)
        validity = np.asarray(self.validity, dtype=bool)
        if values.ndim != 2 or values.size == 0:
            raise ValueError("Grid values must be a non-empty 2-D array")
        if validity.shape != values.shape:
            raise ValueError(f"validity shape {validity.shape} != values shape {values.shape}")
        if not self.pixel_size_m > 0:
            raise ValueError(f"pixel_size_m must be positive, got {self.pixel_size_m}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "validity", validity)

    @classmethod
    def from_array(cls, values, pixel_size_m, origin_lat=0.0, origin_lon=0.0, validity=None):
        """Build a grid, treating NaN as invalid when no mask is given."""
        values = np.asarray(values, dtype=float)
        if validity is None:
            validity = ~np.isnan(values)
        return cls(values, validity, float(pixel_size_m), float(origin_lat), float(origin_lon))

    @property
    def nrows(self):
        return self.values.shape[0]

    @property
    def ncols(self):
        return self.values.shape[1]

    @property
    def shape(self):
        return self.values.shape

    def with_values(self, values, validity=None):
        """Same geometry, new content."""
        return replace(self, values=np.asarray(values),
                       validity=self.validity if validity is None else np.asarray(validity, dtype=bool))

    def masked(self):
        """Values as float with NaN at invalid pixels."""
        out = self.values.astype(float)
        out[~self.validity] = np.nan
        return out

    def latlon(self):
        """Pixel-center latitude and longitude arrays, each shaped like the grid."""
        rows = np.arange(self.nrows, dtype=float)
        cols = np.arange(self.ncols, dtype=float)
        lat = self.origin_lat - rows * self.pixel_size_m / METERS_PER_DEGREE
        lon = self.origin_lon + cols * self.pixel_size_m / (
            METERS_PER_DEGREE * math.cos(math.radians(self.origin_lat)))
        return np.meshgrid(lat, lon, indexing="ij")

    def bounding_ring(self):
        """Closed (lat, lon) ring through the outer pixel corners."""
        dlat = self.pixel_size_m / METERS_PER_DEGREE
        dlon = self.pixel_size_m / (METERS_PER_DEGREE * math.cos(math.radians(self.origin_lat)))
        north = self.origin_lat + dlat / 2
        south = self.origin_lat - (self.nrows - 0.5) * dlat
        west = self.origin_lon - dlon / 2
        east = self.origin_lon + (self.ncols - 0.5) * dlon
        return [(north, west), (north, east), (south, east), (south, west), (north, west)]

    def same_geometry(self, other):
        return (self.shape == other.shape
                and math.isclose(self.pixel_size_m, other.pixel_size_m)
                and abs(self.origin_lat - other.origin_lat) <= ORIGIN_TOLERANCE_DEG
                and abs(self.origin_lon - other.origin_lon) <= ORIGIN_TOLERANCE_DEG)


def require_same_geometry(*grids):
    first = grids[0]
    for g in grids[1:]:
        if not first.same_geometry(g):
            raise RegistrationError(
                f"grid geometry mismatch: {first.shape}@{first.pixel_size_m} m "
                f"vs {g.shape}@{g.pixel_size_m} m")


def _halved_origin(origin_lat, origin_lon, pixel_size_m):
    """Origin of the next pyramid level: half a parent pixel south-east."""
    half = pixel_size_m / 2.0
    lat = origin_lat - half / METERS_PER_DEGREE
    lon = origin_lon + half / (METERS_PER_DEGREE * math.cos(math.radians(origin_lat)))
    return lat, lon


def downsample_halve(g):
    """Average each 2x2 block of valid parent pixels into one child pixel.

    Odd edges are padded with invalid pixels, so edge blocks average what is
    there. A child is invalid only when all of its parents are.
    """
    nrows, ncols = g.shape
    out_rows, out_cols = -(-nrows // 2), -(-ncols // 2)

    vals = np.zeros((out_rows * 2, out_cols * 2))
    mask = np.zeros((out_rows * 2, out_cols * 2), dtype=bool)
    vals[:nrows, :ncols] = np.where(g.validity, g.values, 0.0)
    mask[:nrows, :ncols] = g.validity

    sums = vals.reshape(out_rows, 2, out_cols, 2).sum(axis=(1, 3))
    counts = mask.reshape(out_rows, 2, out_cols, 2).sum(axis=(1, 3))
    valid = counts > 0
    means = np.zeros_like(sums)
    np.divide(sums, counts, out=means, where=valid)

    lat, lon = _halved_origin(g.origin_lat, g.origin_lon, g.pixel_size_m)
    return Grid(means, valid, g.pixel_size_m * 2.0, lat, lon)


@dataclass
class Pyramid:
    levels: list = field(default_factory=list)

    def __len__(self):
        return len(self.levels)

    def __getitem__(self, k):
        return self.levels[k]

    def pixel_sizes(self):
        return [lvl.pixel_size_m for lvl in self.levels]

    def level_for(self, pixel_size_m):
        for lvl in self.levels:
            if math.isclose(lvl.pixel_size_m, pixel_size_m):
                return lvl
        raise LevelExhaustionError(
            f"no pyramid level at {pixel_size_m} m (have {self.pixel_sizes()})")


def build_pyramid(g, n_levels):
    if n_levels < 1:
        raise ValueError(f"n_levels must be >= 1, got {n_levels}")
    levels = [g]
    for k in range(1, n_levels):
        prev = levels[-1]
        if prev.shape == (1, 1):
            raise LevelExhaustionError(
                f"level {k - 1} is already 1x1 at {prev.pixel_size_m} m; "
                f"cannot build {n_levels} levels from a {g.shape} grid")
        levels.append(downsample_halve(prev))
    logger.debug(f"Built pyramid: {[lvl.pixel_size_m for lvl in levels]}")
    return Pyramid(levels)


def levels_needed(base_pixel_m, top_pixel_m):
    """Number of levels for a pyramid from base_pixel_m up to top_pixel_m."""
    ratio = top_pixel_m / base_pixel_m
    k = round(math.log2(ratio))
    if k < 0 or not math.isclose(2.0 ** k, ratio):
        raise RegistrationError(
            f"{top_pixel_m} m is not a power-of-two multiple of {base_pixel_m} m")
    return k + 1


def replicate_to(coarse, fine):
    """Block-replicate an ancestor grid onto a finer grid's pixels.

    Returns (values, validity) shaped like fine.
    """
    ratio = coarse.pixel_size_m / fine.pixel_size_m
    k = round(math.log2(ratio)) if ratio >= 1 else -1
    if k < 0 or not math.isclose(2.0 ** k, ratio):
        raise RegistrationError(
            f"pixel ratio {ratio} between {coarse.pixel_size_m} m and "
            f"{fine.pixel_size_m} m is not a power of two")
    factor = 2 ** k

    exp_rows, exp_cols = fine.shape
    lat, lon, size = fine.origin_lat, fine.origin_lon, fine.pixel_size_m
    for _ in range(k):
        exp_rows, exp_cols = -(-exp_rows // 2), -(-exp_cols // 2)
        lat, lon = _halved_origin(lat, lon, size)
        size *= 2.0
    if (coarse.shape != (exp_rows, exp_cols)
            or abs(coarse.origin_lat - lat) > ORIGIN_TOLERANCE_DEG
            or abs(coarse.origin_lon - lon) > ORIGIN_TOLERANCE_DEG):
        raise RegistrationError(
            f"{coarse.pixel_size_m} m grid is not a pyramid ancestor of the "
            f"{fine.pixel_size_m} m grid")

    rows, cols = fine.shape
    vals = np.repeat(np.repeat(coarse.values, factor, axis=0), factor, axis=1)[:rows, :cols]
    mask = np.repeat(np.repeat(coarse.validity, factor, axis=0), factor, axis=1)[:rows, :cols]
    return vals, mask


def contrast(fine, coarse):
    """(sigma0 - sigma0_bar) / sigma0_bar with sigma0_bar replicated from coarse."""
    bar, bar_valid = replicate_to(coarse, fine)
    valid = fine.validity & bar_valid & (bar > 0)
    out = np.zeros(fine.shape)
    np.divide(fine.values - bar, bar, out=out, where=valid)
    return fine.with_values(out, valid)


def contrast_set(pyramid, fine_m, coarse_m_list):
    """Contrast grids of the fine level against each coarse level, in order."""
    fine = pyramid.level_for(fine_m)
    return [contrast(fine, pyramid.level_for(c)) for c in coarse_m_list]
