"""Coherent filaments from three-bracket contrast agreement.

Pipeline per scene: agreement_average -> label_components -> filter_span,
then domain_contrast reduces the field to one magnitude per analysis domain.
"""
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import shapely
from scipy import ndimage
from scipy.spatial import ConvexHull, QhullError
from scipy.spatial.distance import pdist

import utils
from raster_core import METERS_PER_DEGREE, Grid, require_same_geometry

logger = utils.setup_logging(__name__)

# ERA5 archive spacing; a gridbox may sit this far outside its domain ring
ERA5_SPACING_DEG = 0.25

# Below this size all-pairs distances are cheaper than a hull
_HULL_MIN_POINTS = 64


@dataclass(frozen=True)
class AgreementParams:
    threshold: float = 0.3
    brackets: tuple = ((800.0, 1600.0), (800.0, 3200.0), (800.0, 6400.0))
    connectivity: int = 8
    min_span_m: float = 10000.0

    def __post_init__(self):
        if not self.threshold > 0:
            raise utils.ConfigError(f"agreement threshold must be > 0, got {self.threshold}")
        if not self.min_span_m > 0:
            raise utils.ConfigError(f"min_span_m must be > 0, got {self.min_span_m}")
        if len(self.brackets) != 3:
            raise utils.ConfigError(f"exactly three brackets required, got {len(self.brackets)}")
        if len({fine for fine, _ in self.brackets}) != 1:
            raise utils.ConfigError("all brackets must share the same fine resolution")
        if self.connectivity not in (4, 8):
            raise utils.ConfigError(f"connectivity must be 4 or 8, got {self.connectivity}")

    @property
    def fine_m(self):
        return self.brackets[0][0]

    @property
    def coarse_m(self):
        return [coarse for _, coarse in self.brackets]


@dataclass
class FilamentField:
    magnitude: Grid
    labels: Grid
    component_spans: dict = field(default_factory=dict)

    @property
    def n_components(self):
        return len(self.component_spans)


@dataclass(frozen=True)
class DomainPolygon:
    name: str
    vertices: tuple
    era5_gridbox: tuple

    def __post_init__(self):
        ring = tuple(tuple(map(float, v)) for v in self.vertices)
        if len(ring) < 3:
            raise utils.DataError(f"domain {self.name}: ring needs at least 3 vertices")
        if ring[0] != ring[-1]:
            ring = ring + (ring[0],)
        object.__setattr__(self, "vertices", ring)
        poly = self.polygon()
        if not poly.is_valid:
            raise utils.DataError(f"domain {self.name}: ring is self-intersecting")
        lat, lon = self.era5_gridbox
        if poly.distance(shapely.Point(lon, lat)) > ERA5_SPACING_DEG:
            raise utils.DataError(
                f"domain {self.name}: ERA5 gridbox ({lat}, {lon}) is not inside or adjacent to the ring")

    def polygon(self):
        """Shapely polygon in (lon, lat) order."""
        return shapely.Polygon([(lon, lat) for lat, lon in self.vertices])

    def area_m2(self):
        lats = np.array([v[0] for v in self.vertices])
        lons = np.array([v[1] for v in self.vertices])
        lat0 = lats.mean()
        x = (lons - lons.mean()) * METERS_PER_DEGREE * math.cos(math.radians(lat0))
        y = (lats - lat0) * METERS_PER_DEGREE
        return shapely.Polygon(np.column_stack([x, y])).area


@dataclass(frozen=True)
class DomainContrast:
    domain: str
    C: float
    n_pixels: int
    coverage: float


def agreement_average(c1, c2, c3, p):
    """Mean of three contrasts where they agree in sign and all exceed the threshold."""
    require_same_geometry(c1, c2, c3)
    stack = np.stack([c1.values, c2.values, c3.values])
    valid = c1.validity & c2.validity & c3.validity

    strong = np.all(np.abs(stack) > p.threshold, axis=0)
    same_sign = np.all(stack > 0, axis=0) | np.all(stack < 0, axis=0)
    agree = valid & strong & same_sign

    out = np.where(agree, stack.mean(axis=0), 0.0)
    return c1.with_values(out, valid)


def label_components(avg, connectivity=8):
    """Connected components of nonzero valid pixels, labels dense from 1."""
    structure = ndimage.generate_binary_structure(2, 2 if connectivity == 8 else 1)
    foreground = avg.validity & (avg.values != 0)
    labels, n = ndimage.label(foreground, structure=structure)
    logger.debug(f"Labeled {n} components ({connectivity}-connectivity)")
    return avg.with_values(labels.astype(np.int32), avg.validity)


def component_diameter(rows, cols):
    """Largest distance between pixel centers, in pixels."""
    points = np.column_stack([rows, cols]).astype(float)
    if len(points) < 2:
        return 0.0
    if len(points) > _HULL_MIN_POINTS:
        try:
            points = points[ConvexHull(points).vertices]
        except QhullError:
            # Collinear: the extreme points are the lexicographic ends
            order = np.lexsort((points[:, 1], points[:, 0]))
            points = points[[order[0], order[-1]]]
    return float(pdist(points).max())


def filter_span(labels, avg, min_span_m):
    """Drop components whose span is below min_span_m; relabel survivors from 1."""
    require_same_geometry(labels, avg)
    lab = labels.values
    n = int(lab.max()) if lab.size else 0

    kept = np.zeros(n + 1, dtype=np.int32)
    spans = {}
    next_id = 1
    for idx, sl in enumerate(ndimage.find_objects(lab), start=1):
        if sl is None:
            continue
        rr, cc = np.nonzero(lab[sl] == idx)
        span = labels.pixel_size_m * component_diameter(rr + sl[0].start, cc + sl[1].start)
        if span >= min_span_m:
            kept[idx] = next_id
            spans[next_id] = span
            next_id += 1

    new_labels = kept[lab]
    magnitude = np.where(new_labels > 0, np.abs(avg.values), 0.0)
    logger.info(f"Span filter kept {len(spans)} of {n} components (>= {min_span_m:.0f} m)")
    return FilamentField(magnitude=avg.with_values(magnitude, avg.validity),
                         labels=labels.with_values(new_labels, labels.validity),
                         component_spans=spans)


def extract_filaments(contrasts, params):
    """Agreement, labeling and span filtering over a three-bracket contrast set."""
    avg = agreement_average(*contrasts, params)
    labels = label_components(avg, params.connectivity)
    return filter_span(labels, avg, params.min_span_m)


def domain_contrast(f, d, min_coverage=0.25):
    """Mean filament magnitude over valid pixels inside the domain.

    Returns None when the scene does not cover at least min_coverage of the
    domain's pixel-equivalent area.
    """
    mag = f.magnitude
    lat, lon = mag.latlon()
    inside = shapely.intersects_xy(d.polygon(), lon, lat)
    overlap = inside & mag.validity
    n_pixels = int(np.count_nonzero(overlap))
    if n_pixels == 0:
        return None

    expected = d.area_m2() / (mag.pixel_size_m ** 2)
    coverage = n_pixels / expected if expected > 0 else 0.0
    if coverage < min_coverage:
        logger.info(f"Domain {d.name}: coverage {coverage:.2f} below {min_coverage}; skipped")
        return None

    C = float(np.abs(mag.values[overlap]).mean())
    return DomainContrast(d.name, C, n_pixels, coverage)


def load_domains(path):
    """Domain polygons from CSV rows (name, kind, index, lat, lon)."""
    df = pd.read_csv(path)
    required = {"name", "kind", "index", "lat", "lon"}
    if not required <= set(df.columns):
        raise utils.DataError(f"{path}: missing columns {sorted(required - set(df.columns))}")

    domains = []
    for name, rows in df.groupby("name", sort=False):
        verts = rows[rows["kind"] == "vertex"].sort_values("index")
        era5 = rows[rows["kind"] == "era5"]
        if len(era5) != 1:
            raise utils.DataError(f"{path}: domain {name} needs exactly one era5 row")
        domains.append(DomainPolygon(
            name=str(name),
            vertices=tuple(zip(verts["lat"], verts["lon"])),
            era5_gridbox=(float(era5["lat"].iloc[0]), float(era5["lon"].iloc[0])),
        ))
    logger.info(f"Loaded {len(domains)} domains from {path}")
    return domains
