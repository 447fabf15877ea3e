"""Sightings, scene catalog and wind ingestion; collocation and hourly binning."""
import os
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd
import shapely

import utils
import depstats

logger = utils.setup_logging(__name__)

DEDUP_WINDOW = pd.Timedelta(hours=24)
DEDUP_DEGREES = 0.01
# Float slack on the 0.01 degree test
_DEG_SLACK = 1e-9

GSL_BOUNDS = {"lat": (40.0, 55.0), "lon": (-72.0, -55.0)}

SIGHTING_COLUMNS = ["source", "iso_utc", "lat", "lon", "count", "dead_flag"]
CATALOG_COLUMNS = ["scene_id", "iso_utc", "pol", "grid_path", "ring", "track_heading"]
WIND_COLUMNS = ["iso_utc", "lat", "lon", "u10", "v10"]


@dataclass(frozen=True)
class RowError:
    line: int
    message: str

    def __str__(self):
        return f"line {self.line}: {self.message}"


class SchemaError(utils.DataError):
    def __init__(self, path, rows):
        self.path = path
        self.rows = list(rows)
        detail = "; ".join(str(r) for r in self.rows[:5])
        more = f" (+{len(self.rows) - 5} more)" if len(self.rows) > 5 else ""
        super().__init__(f"{path}: {detail}{more}")


@dataclass(frozen=True)
class Sighting:
    source: str
    t_utc: pd.Timestamp
    lat: float
    lon: float
    count: int
    dead_flag: bool = False
    dedup_matched: bool = False


@dataclass(frozen=True)
class SceneRecord:
    scene_id: str
    t_utc: pd.Timestamp
    polarization: str
    grid_path: str
    ring: tuple
    track_heading: float
    incidence_path: str = ""
    look_direction: float = None

    def footprint(self):
        return shapely.Polygon([(lon, lat) for lat, lon in self.ring])


def _read_csv(path, columns):
    """CSV as strings; an empty file gives an empty frame with the expected columns."""
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        return pd.DataFrame(columns=columns)
    missing = [c for c in columns if c not in df.columns]
    if missing:
        raise SchemaError(path, [RowError(1, f"missing columns {missing}")])
    return df


def _utc(text):
    ts = pd.Timestamp(text)
    if ts.tzinfo is None:
        return ts.tz_localize("UTC")
    return ts.tz_convert("UTC")


def _flag(text):
    return str(text).strip().lower() in ("1", "true", "yes", "y", "t")


def load_sightings(path, bounds=GSL_BOUNDS):
    """Sightings and the line-numbered rows that were rejected."""
    df = _read_csv(path, SIGHTING_COLUMNS)
    sightings, rejected = [], []
    for idx, row in df.iterrows():
        line = idx + 2
        try:
            source = row["source"].strip().upper()
            if source not in ("A", "B"):
                raise ValueError(f"source must be A or B, got '{row['source']}'")
            lat, lon = float(row["lat"]), float(row["lon"])
            count = int(row["count"])
            if count < 1:
                raise ValueError(f"count must be >= 1, got {count}")
            if not (bounds["lat"][0] <= lat <= bounds["lat"][1]
                    and bounds["lon"][0] <= lon <= bounds["lon"][1]):
                raise ValueError(f"position ({lat}, {lon}) outside bounds")
            sightings.append(Sighting(source, _utc(row["iso_utc"]), lat, lon, count,
                                      _flag(row["dead_flag"])))
        except (ValueError, TypeError) as e:
            rejected.append(RowError(line, str(e)))

    for r in rejected:
        logger.warning(f"{path}: rejected {r}")
    logger.info(f"Loaded {len(sightings)} sightings from {path} ({len(rejected)} rejected)")
    return sightings, rejected


def _parse_ring(text):
    ring = []
    for pair in str(text).split(";"):
        if pair.strip():
            lat, lon = pair.split()
            ring.append((float(lat), float(lon)))
    if len(ring) < 3:
        raise ValueError("ring needs at least 3 vertices")
    if ring[0] != ring[-1]:
        ring.append(ring[0])
    return tuple(ring)


def load_scene_catalog(path):
    """SceneRecords from the catalog CSV; any bad row raises a SchemaError."""
    df = _read_csv(path, CATALOG_COLUMNS)
    base = os.path.dirname(os.path.abspath(path))
    scenes, errors = [], []
    for idx, row in df.iterrows():
        line = idx + 2
        try:
            pol = row["pol"].strip().upper()
            if pol not in ("HH", "VV"):
                raise ValueError(f"pol must be HH or VV, got '{row['pol']}'")
            look = row.get("look_direction", "")
            inc_path = row.get("incidence_path", "").strip()
            scenes.append(SceneRecord(
                scene_id=row["scene_id"].strip(),
                t_utc=_utc(row["iso_utc"]),
                polarization=pol,
                grid_path=os.path.join(base, row["grid_path"].strip()),
                ring=_parse_ring(row["ring"]),
                track_heading=float(row["track_heading"]) % 360.0,
                incidence_path=os.path.join(base, inc_path) if inc_path else "",
                look_direction=float(look) % 360.0 if str(look).strip() else None,
            ))
        except (ValueError, TypeError) as e:
            errors.append(RowError(line, str(e)))
    if errors:
        raise SchemaError(path, errors)
    ids = [s.scene_id for s in scenes]
    if len(set(ids)) != len(ids):
        raise SchemaError(path, [RowError(0, "duplicate scene_id values")])
    logger.info(f"Loaded {len(scenes)} scenes from {path}")
    return scenes


def load_wind_series(path):
    return prepare_wind(_read_csv(path, WIND_COLUMNS), path)


def prepare_wind(df, source="wind"):
    """Wind rows with speed = hypot(u10, v10); duplicate (time, lat, lon) rows keep the last."""
    errors = []
    times, values = [], []
    for idx, row in df.iterrows():
        try:
            times.append(_utc(row["iso_utc"]))
            values.append([float(row[c]) for c in ("lat", "lon", "u10", "v10")])
        except (ValueError, TypeError) as e:
            errors.append(RowError(idx + 2, str(e)))
    if errors:
        raise SchemaError(source, errors)

    out = pd.DataFrame(values, columns=["lat", "lon", "u10", "v10"], dtype=float)
    out.insert(0, "time", pd.DatetimeIndex(times, tz="UTC") if times else pd.DatetimeIndex([], tz="UTC"))
    dup = out.duplicated(subset=["time", "lat", "lon"], keep="last")
    if dup.any():
        logger.warning(f"{source}: {int(dup.sum())} duplicate wind row(s); last value kept")
        out = out[~dup]
    out["speed"] = np.hypot(out["u10"], out["v10"])
    out = out.sort_values(["time", "lat", "lon"]).reset_index(drop=True)
    out["iso_utc"] = out["time"].dt.strftime("%Y-%m-%dT%H:%M:%SZ")
    logger.info(f"Loaded {len(out)} wind rows from {source}")
    return out


def gridbox_speed(wind, lat, lon):
    """Hourly wind speed at the wind cell nearest to (lat, lon)."""
    if wind.empty:
        return pd.Series(dtype=float)
    cells = wind[["lat", "lon"]].drop_duplicates()
    d2 = (cells["lat"] - lat) ** 2 + (cells["lon"] - lon) ** 2
    cell = cells.loc[d2.idxmin()]
    rows = wind[(wind["lat"] == cell["lat"]) & (wind["lon"] == cell["lon"])]
    return pd.Series(rows["speed"].to_numpy(), index=pd.DatetimeIndex(rows["time"])).sort_index()


def dedup_sightings(a, b):
    """Merge two sighting sources, dropping B copies of A records.

    A cross-source pair is a duplicate when counts are equal and the records
    are within 24 h and 0.01 deg in latitude and longitude. Pairs are taken
    greedily by increasing time separation, each record matched at most once.
    Dead-flagged records are dropped first. Returns (merged, removed_count).
    """
    live_a = sorted((s for s in a if not s.dead_flag), key=lambda s: s.t_utc)
    live_b = sorted((s for s in b if not s.dead_flag), key=lambda s: s.t_utc)
    n_dead = len(a) + len(b) - len(live_a) - len(live_b)
    if n_dead:
        logger.info(f"Dropped {n_dead} dead-flagged sighting(s) before matching")

    pairs = []
    if live_a and live_b:
        tb = np.array([s.t_utc.value for s in live_b], dtype=np.int64)
        latb = np.array([s.lat for s in live_b])
        lonb = np.array([s.lon for s in live_b])
        cntb = np.array([s.count for s in live_b])
        window = DEDUP_WINDOW.value
        for i, sa in enumerate(live_a):
            if sa.dedup_matched:
                continue
            ta = sa.t_utc.value
            lo = np.searchsorted(tb, ta - window, side="left")
            hi = np.searchsorted(tb, ta + window, side="right")
            j = np.arange(lo, hi)
            ok = ((cntb[j] == sa.count)
                  & (np.abs(latb[j] - sa.lat) <= DEDUP_DEGREES + _DEG_SLACK)
                  & (np.abs(lonb[j] - sa.lon) <= DEDUP_DEGREES + _DEG_SLACK))
            for jj in j[ok]:
                pairs.append((abs(int(tb[jj]) - ta), i, int(jj)))

    pairs.sort()
    used_a, used_b = set(), set()
    for _, i, j in pairs:
        if i not in used_a and j not in used_b:
            used_a.add(i)
            used_b.add(j)

    merged = [replace(s, dedup_matched=True) if i in used_a else s for i, s in enumerate(live_a)]
    merged += [s for j, s in enumerate(live_b) if j not in used_b]
    merged.sort(key=lambda s: (s.t_utc, s.source))
    logger.info(f"Deduplication removed {len(used_b)} of {len(live_b)} source-B sightings")
    return merged, len(used_b)


@dataclass(frozen=True)
class Match:
    sighting: Sighting
    scene: SceneRecord


def collocate_day(sightings, scenes):
    """(sighting, scene) pairs on the same UTC date with the sighting inside the footprint."""
    by_date = {}
    for scene in scenes:
        by_date.setdefault(scene.t_utc.date(), []).append(scene)

    matches = []
    for s in sightings:
        for scene in by_date.get(s.t_utc.date(), []):
            if shapely.intersects_xy(scene.footprint(), s.lon, s.lat):
                matches.append(Match(s, scene))
    logger.info(f"Collocated {len(matches)} sighting-scene pairs")
    return matches


SUMMARY_COLUMNS = ["year", "group_sightings", "individual_sightings", "scenes",
                   "scenes_with_whales", "scenes_with_whales_pct",
                   "group_sightings_in_scenes", "individual_sightings_in_scenes",
                   "group_in_scenes_pct", "individual_in_scenes_pct"]


def _pct(part, whole):
    return 100.0 * part / whole if whole else 0.0


def summarize_counts(matches, catalog, sightings):
    """Per-year sighting and scene coverage counts (one row per year)."""
    years = sorted({s.t_utc.year for s in sightings} | {sc.t_utc.year for sc in catalog})
    in_scene = {id(m.sighting): m.sighting for m in matches}
    scenes_hit = {m.scene.scene_id for m in matches}

    rows = []
    for year in years:
        ys = [s for s in sightings if s.t_utc.year == year]
        yscenes = [sc for sc in catalog if sc.t_utc.year == year]
        yin = [s for s in in_scene.values() if s.t_utc.year == year]
        groups, individuals = len(ys), sum(s.count for s in ys)
        g_in, i_in = len(yin), sum(s.count for s in yin)
        hit = sum(1 for sc in yscenes if sc.scene_id in scenes_hit)
        rows.append({
            "year": year,
            "group_sightings": groups,
            "individual_sightings": individuals,
            "scenes": len(yscenes),
            "scenes_with_whales": hit,
            "scenes_with_whales_pct": _pct(hit, len(yscenes)),
            "group_sightings_in_scenes": g_in,
            "individual_sightings_in_scenes": i_in,
            "group_in_scenes_pct": _pct(g_in, groups),
            "individual_in_scenes_pct": _pct(i_in, individuals),
        })
    return pd.DataFrame(rows, columns=SUMMARY_COLUMNS)


def bin_hourly(samples, wind_by_domain, deltas=depstats.DELTAS_H, wind_bounds=(1.0, 10.0)):
    """Average scene contrasts per domain and UTC hour and attach lagged wind.

    samples has columns domain, iso_utc, C. wind_by_domain maps a domain to
    an hourly speed Series. Returns (PairedSeries rows, drop counts).
    """
    drops = {"missing_wind": 0, "wind_restriction": 0, "missing_lag": 0}
    columns = ["domain", "iso_utc_hour", "C", "U_0", "U_m2", "U_m1", "U_p1", "U_p2", "delta_h"]
    if samples.empty:
        return pd.DataFrame(columns=columns), drops

    df = samples.copy()
    df["hour"] = pd.to_datetime(df["iso_utc"], utc=True).dt.floor("h")
    binned = df.groupby(["domain", "hour"], sort=True)["C"].mean().reset_index()

    rows = []
    lo, hi = wind_bounds
    for rec in binned.itertuples(index=False):
        wind = wind_by_domain.get(rec.domain)
        if wind is None or rec.hour not in wind.index:
            drops["missing_wind"] += 1
            continue
        u0 = float(wind.loc[rec.hour])
        if not lo <= u0 <= hi:
            drops["wind_restriction"] += 1
            continue
        for delta in deltas:
            step = pd.Timedelta(hours=delta)
            lag_hours = [rec.hour + k * step for k in (-2, -1, 1, 2)]
            if not all(h in wind.index for h in lag_hours):
                drops["missing_lag"] += 1
                continue
            um2, um1, up1, up2 = (float(wind.loc[h]) for h in lag_hours)
            rows.append({
                "domain": rec.domain,
                "iso_utc_hour": rec.hour.strftime("%Y-%m-%dT%H:00:00Z"),
                "C": float(rec.C),
                "U_0": u0, "U_m2": um2, "U_m1": um1, "U_p1": up1, "U_p2": up2,
                "delta_h": delta,
            })

    logger.info(f"Binned {len(binned)} domain-hours into {len(rows)} series rows; dropped {drops}")
    return pd.DataFrame(rows, columns=columns), drops


def in_season(timestamps, window):
    """Inclusive month-day window, e.g. ((5, 15), (8, 15))."""
    (m0, d0), (m1, d1) = window
    md = timestamps.dt.month * 100 + timestamps.dt.day
    return (md >= m0 * 100 + d0) & (md <= m1 * 100 + d1)


def seasonal_summary(series_rows, window=((5, 15), (8, 15))):
    """Per domain and year: sample count, mean and std (1/n) of C and U_0 in season."""
    columns = ["domain", "year", "n", "C_mean", "C_std", "U_mean", "U_std"]
    if series_rows.empty:
        return pd.DataFrame(columns=columns)
    df = series_rows.drop_duplicates(subset=["domain", "iso_utc_hour"]).copy()
    df["time"] = pd.to_datetime(df["iso_utc_hour"], utc=True)
    df = df[in_season(df["time"], window)].copy()
    df["year"] = df["time"].dt.year
    out = df.groupby(["domain", "year"], sort=True).agg(
        n=("C", "size"),
        C_mean=("C", "mean"),
        C_std=("C", lambda v: float(np.std(v))),
        U_mean=("U_0", "mean"),
        U_std=("U_0", lambda v: float(np.std(v))),
    ).reset_index()
    return out[columns]
