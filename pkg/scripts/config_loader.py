import os
from dataclasses import dataclass, field
from pathlib import Path

from dotenv import load_dotenv, dotenv_values

import utils
from filament import AgreementParams
from sweep_adjust import SweepConfig

# Load environment variables from .env file if present
load_dotenv()

# Base Paths
SCRIPTS_DIR = Path(__file__).resolve().parent
BASE_DIR = SCRIPTS_DIR.parent
CONFIG_DIR = Path(os.getenv("FILAMENT_CONFIG_DIR", BASE_DIR / "config"))
OUTPUT_DIR = Path(os.getenv("FILAMENT_OUTPUT_DIR", BASE_DIR / "output"))

RUN_TEMPLATE = CONFIG_DIR / "run_template.cfg"
SYNTH_SPEC = CONFIG_DIR / "synth_spec.cfg"
GMF_COEFFICIENTS = CONFIG_DIR / "cmod5_coefficients.txt"
POLARIZATION_RATIO = CONFIG_DIR / "polarization_ratio.csv"
DOMAINS = CONFIG_DIR / "gsl_domains.csv"

# Keys holding file paths; relative values resolve against the config file
PATH_KEYS = ("CATALOG", "SIGHTINGS", "WIND", "DOMAINS", "GMF_COEFFICIENTS",
             "POLARIZATION_RATIO", "SERIES", "SCENE_CONTRASTS", "ADJUSTED_SERIES",
             "ADJUSTED_CONTRASTS", "OUTPUT_DIR")


def _month_day(text):
    month, day = (int(v) for v in str(text).split("-"))
    return month, day


def _bool(text):
    return str(text).strip().lower() in ("1", "true", "yes", "on")


def _floats(text):
    return tuple(float(v) for v in str(text).split(",") if v.strip())


@dataclass
class RunConfig:
    catalog: Path = None
    sightings: Path = None
    wind: Path = None
    domains: Path = DOMAINS
    gmf_coefficients: Path = GMF_COEFFICIENTS
    polarization_ratio: Path = POLARIZATION_RATIO
    series: Path = None
    scene_contrasts: Path = None
    # Re-processed pass: filaments on wind-adjusted contrasts
    adjusted_contrasts: Path = None
    adjusted_series: Path = None
    output_dir: Path = OUTPUT_DIR
    agreement: AgreementParams = field(default_factory=AgreementParams)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    season_start: tuple = (5, 15)
    season_end: tuple = (8, 15)
    wind_min: float = 1.0
    wind_max: float = 10.0
    min_coverage: float = 0.25
    workers: int = 4
    gmf_mask: bool = True
    gmf_high_mode: str = "upwind"
    incidence_near: float = 20.0
    incidence_far: float = 49.0

    def __post_init__(self):
        if self.series is None:
            self.series = Path(self.output_dir) / "paired_series.csv"
        if self.scene_contrasts is None:
            self.scene_contrasts = Path(self.output_dir) / "scene_domain_contrast.csv"
        if self.adjusted_contrasts is None:
            self.adjusted_contrasts = Path(self.output_dir) / "scene_domain_contrast_adjusted.csv"
        if self.adjusted_series is None:
            self.adjusted_series = Path(self.output_dir) / "paired_series_adjusted.csv"

    @property
    def season_window(self):
        return self.season_start, self.season_end

    @property
    def wind_bounds(self):
        return self.wind_min, self.wind_max

    def validate(self, *required):
        """Check the named path fields exist and the numeric settings are consistent."""
        for name in required:
            path = getattr(self, name)
            if path is None or not Path(path).exists():
                raise utils.ConfigError(f"{name.upper()} file not found: {path}")
        if not self.season_start < self.season_end:
            raise utils.ConfigError(f"season start {self.season_start} must precede end {self.season_end}")
        if not 0 < self.wind_min < self.wind_max:
            raise utils.ConfigError(f"wind restriction must satisfy 0 < min < max, got [{self.wind_min}, {self.wind_max}]")
        if not 0 < self.min_coverage <= 1:
            raise utils.ConfigError(f"MIN_COVERAGE must be in (0, 1], got {self.min_coverage}")
        if self.workers < 1:
            raise utils.ConfigError(f"WORKERS must be >= 1, got {self.workers}")
        if self.gmf_high_mode not in ("upwind", "max"):
            raise utils.ConfigError(f"GMF_HIGH_MODE must be upwind or max, got {self.gmf_high_mode}")
        return self


def load_run_config(path=None, **overrides):
    """RunConfig from a KEY=value file; environment variables override file values.

    Without a path only the environment and the defaults apply.
    """
    raw = {}
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise utils.ConfigError(f"config file not found: {path}")
        raw = {k.upper(): v for k, v in dotenv_values(path).items() if v is not None}
        base = path.resolve().parent

    def get(key, default=None):
        return os.getenv(f"FILAMENT_{key}", raw.get(key, default))

    kwargs = {}
    for key in PATH_KEYS:
        value = get(key)
        if value:
            p = Path(value).expanduser()
            kwargs[key.lower()] = p if p.is_absolute() else base / p

    try:
        agreement = AgreementParams(
            threshold=float(get("AGREEMENT_THRESHOLD", 0.3)),
            connectivity=int(get("CONNECTIVITY", 8)),
            min_span_m=float(get("MIN_SPAN_M", 10000)),
            brackets=tuple(
                (float(fine), float(coarse))
                for fine, coarse in (pair.split(":") for pair in
                                     str(get("BRACKETS", "800:1600,800:3200,800:6400")).split(","))
            ),
        )
        sweep_kwargs = {"x_star": float(get("X_STAR", 0.8))}
        if get("X_GRID"):
            sweep_kwargs["x_grid"] = _floats(get("X_GRID"))
        if get("DELTAS"):
            sweep_kwargs["deltas"] = tuple(int(v) for v in _floats(get("DELTAS")))
        kwargs.update(
            agreement=agreement,
            sweep=SweepConfig(**sweep_kwargs),
            season_start=_month_day(get("SEASON_START", "05-15")),
            season_end=_month_day(get("SEASON_END", "08-15")),
            wind_min=float(get("WIND_MIN", 1.0)),
            wind_max=float(get("WIND_MAX", 10.0)),
            min_coverage=float(get("MIN_COVERAGE", 0.25)),
            workers=int(get("WORKERS", 4)),
            gmf_mask=_bool(get("GMF_MASK", "true")),
            gmf_high_mode=str(get("GMF_HIGH_MODE", "upwind")).strip().lower(),
            incidence_near=float(get("INCIDENCE_NEAR", 20.0)),
            incidence_far=float(get("INCIDENCE_FAR", 49.0)),
        )
    except ValueError as e:
        raise utils.ConfigError(f"bad value in {path or 'environment'}: {e}")

    kwargs.update(overrides)
    return RunConfig(**kwargs)


# Ensure critical directories exist
def init_directories(cfg):
    utils.ensure_dir(cfg.output_dir)
