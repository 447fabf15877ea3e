"""Dependence measures between contrast magnitude C and wind speed U.

All covariances use 1/n normalization. The measurement model relates the two
series through a shared linear signal t and a shared nonlinear term eps:

    C = t + eps + eps_C
    U = alpha_U + beta_U * t + eps + eps_U

Lagged wind samples close the system under a wavelike autocorrelation,
Cov(C, U_k) = B * cos(k * omega * delta) + sigma_eps2 * [k == 0], B = beta_U * sigma_t2.
"""
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.spatial.distance import pdist, squareform

import utils

logger = utils.setup_logging(__name__)

MIN_SAMPLES = 8
LAG_OFFSETS = (-2, -1, 0, 1, 2)
LAG_COLUMNS = ("U_m2", "U_m1", "U_0", "U_p1", "U_p2")
DELTAS_H = (1, 2, 5)

# Relative tolerance separating round-off from genuinely negative variances
NEGATIVE_TOL = 1e-9


class UndefinedCorrelationError(utils.DataError):
    pass


class IncompleteSeriesError(utils.DataError):
    pass


class InsufficientDataError(utils.DataError):
    pass


@dataclass
class PairedSeries:
    """Per-overpass contrast C with wind U at the overpass hour and lags.

    u_lagged maps delta_h -> array (n, 5) of wind at offsets -2, -1, 0, +1, +2 deltas.
    """
    c: np.ndarray
    u: np.ndarray
    u_lagged: dict = field(default_factory=dict)
    timestamps: np.ndarray = None
    domain: str = ""

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.u = np.asarray(self.u, dtype=float)
        if self.c.shape != self.u.shape or self.c.ndim != 1:
            raise utils.DataError(f"C and U lengths differ: {self.c.shape} vs {self.u.shape}")
        lagged = {}
        for delta, arr in self.u_lagged.items():
            arr = np.asarray(arr, dtype=float)
            if arr.shape != (len(self.c), len(LAG_OFFSETS)):
                raise utils.DataError(f"lagged wind for delta {delta} has shape {arr.shape}")
            lagged[int(delta)] = arr
        self.u_lagged = lagged

    def __len__(self):
        return len(self.c)

    def transformed(self, fn):
        """Same series with fn applied to U and every lagged wind sample."""
        return PairedSeries(self.c, fn(self.u), {d: fn(a) for d, a in self.u_lagged.items()},
                            self.timestamps, self.domain)

    def with_c(self, c):
        return PairedSeries(c, self.u, self.u_lagged, self.timestamps, self.domain)

    @classmethod
    def from_frame(cls, df, domain=None):
        """Build from PairedSeries CSV rows (one row per overpass per delta).

        Only overpasses present at every delta are kept, ordered by hour.
        """
        if domain is not None:
            df = df[df["domain"] == domain]
        if df.empty:
            return cls(np.array([]), np.array([]), {}, np.array([]), domain or "")

        by_delta = {int(d): rows.set_index("iso_utc_hour") for d, rows in df.groupby("delta_h")}
        hours = sorted(set.intersection(*(set(rows.index) for rows in by_delta.values())))
        base = by_delta[min(by_delta)].loc[hours]
        arrays = {d: rows.loc[hours, list(LAG_COLUMNS)].to_numpy(dtype=float)
                  for d, rows in sorted(by_delta.items())}
        return cls(base["C"].to_numpy(float), base["U_0"].to_numpy(float), arrays,
                   np.asarray(hours), domain or str(base["domain"].iloc[0]))

    def to_frame(self):
        """PairedSeries CSV rows, one per overpass per delta."""
        frames = []
        for delta, lag in sorted(self.u_lagged.items()):
            frame = pd.DataFrame(lag, columns=list(LAG_COLUMNS))
            frame.insert(0, "C", self.c)
            frame.insert(0, "iso_utc_hour", self.timestamps)
            frame.insert(0, "domain", self.domain)
            frame["delta_h"] = delta
            frames.append(frame)
        columns = ["domain", "iso_utc_hour", "C", "U_0", "U_m2", "U_m1", "U_p1", "U_p2", "delta_h"]
        if not frames:
            return pd.DataFrame(columns=columns)
        return pd.concat(frames, ignore_index=True)[columns]


@dataclass
class ModelSolution:
    beta_U: float = math.nan
    alpha_U: float = math.nan
    sigma_t2: float = math.nan
    sigma_eps2: float = math.nan
    sigma_C2: float = math.nan
    sigma_U2: float = math.nan
    omega: float = math.nan
    available: bool = False

    @property
    def linear_cov(self):
        return self.beta_U * self.sigma_t2


def covariance(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return float(np.mean((x - x.mean()) * (y - y.mean())))


def pearson(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.size < 2:
        raise InsufficientDataError(f"pearson needs equal lengths >= 2, got {x.shape} and {y.shape}")
    vx, vy = covariance(x, x), covariance(y, y)
    # Constant input can leave round-off variance
    if vx <= 0 or vy <= 0 or np.ptp(x) == 0 or np.ptp(y) == 0:
        raise UndefinedCorrelationError("pearson undefined for a zero-variance series")
    r = covariance(x, y) / math.sqrt(vx * vy)
    return max(-1.0, min(1.0, r))


def _double_centered(v):
    d = squareform(pdist(v[:, None]))
    row = d.mean(axis=1)
    d -= row[:, None]
    d -= row[None, :]
    d += row.mean()
    return d


def dcor(x, y):
    """Sample distance correlation from double-centered distance matrices."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or x.size < 4:
        raise InsufficientDataError(f"dcor needs equal 1-D lengths >= 4, got {x.shape} and {y.shape}")
    A = _double_centered(x)
    B = _double_centered(y)
    dvar_x = float(np.vdot(A, A))
    dvar_y = float(np.vdot(B, B))
    if dvar_x <= 0 or dvar_y <= 0:
        return 0.0
    dcov = float(np.vdot(A, B))
    r2 = max(dcov, 0.0) / math.sqrt(dvar_x * dvar_y)
    return min(1.0, math.sqrt(r2))


def _quadratic_root(c0, c1, c2):
    """Root of B^2 + c2 B - 2 c1^2 = 0 sharing the sign of Cov(C, U_0)."""
    disc = math.sqrt(c2 * c2 + 8.0 * c1 * c1)
    sign = 1.0 if c0 >= 0 else -1.0
    return (-c2 + sign * disc) / 2.0


def solve_measurement_model(s, delta_h):
    """Solve the measurement model from lagged wind covariances at spacing delta_h."""
    if delta_h not in s.u_lagged:
        raise IncompleteSeriesError(f"no lagged wind samples for delta {delta_h} h")
    n = len(s)
    if n < MIN_SAMPLES:
        raise InsufficientDataError(f"measurement model needs n >= {MIN_SAMPLES}, got {n}")
    lag = s.u_lagged[delta_h]
    if np.isnan(lag).any():
        raise IncompleteSeriesError(f"missing lagged wind samples for delta {delta_h} h")

    u0 = lag[:, 2]
    var_c = covariance(s.c, s.c)
    var_u = covariance(u0, u0)
    c0 = covariance(s.c, u0)
    c1 = 0.5 * (covariance(s.c, lag[:, 1]) + covariance(s.c, lag[:, 3]))
    c2 = 0.5 * (covariance(s.c, lag[:, 0]) + covariance(s.c, lag[:, 4]))

    if var_u <= 0 or var_c <= 0 or c0 == 0:
        return ModelSolution()

    sigma_t2 = c0 * c0 / var_u
    B = _quadratic_root(c0, c1, c2)
    if B == 0 or B * c0 < 0:
        return ModelSolution(sigma_t2=sigma_t2)

    sigma_eps2 = c0 - B
    beta_U = B / sigma_t2
    omega = math.acos(max(-1.0, min(1.0, c1 / B))) / delta_h
    sigma_C2 = var_c - sigma_t2 - sigma_eps2
    sigma_U2 = var_u - beta_U * beta_U * sigma_t2 - sigma_eps2
    alpha_U = float(u0.mean() - beta_U * s.c.mean())

    tol_eps = NEGATIVE_TOL * math.sqrt(var_c * var_u)
    tol_c = NEGATIVE_TOL * var_c
    tol_u = NEGATIVE_TOL * var_u
    available = sigma_eps2 >= -tol_eps and sigma_C2 >= -tol_c and sigma_U2 >= -tol_u

    return ModelSolution(
        beta_U=beta_U,
        alpha_U=alpha_U,
        sigma_t2=sigma_t2,
        sigma_eps2=max(sigma_eps2, 0.0) if available else sigma_eps2,
        sigma_C2=max(sigma_C2, 0.0) if available else sigma_C2,
        sigma_U2=max(sigma_U2, 0.0) if available else sigma_U2,
        omega=omega,
        available=available,
    )


def decompose_pearson(sol, var_c, var_u):
    """(linear, nonlinear) parts of Pearson correlation, or None if unavailable."""
    if not sol.available:
        return None
    norm = math.sqrt(var_c * var_u)
    return sol.linear_cov / norm, sol.sigma_eps2 / norm


def solve_all_deltas(s, deltas=DELTAS_H):
    """ModelSolution per delta present in the series."""
    return {d: solve_measurement_model(s, d) for d in deltas if d in s.u_lagged}
