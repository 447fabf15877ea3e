import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

import depstats
import synthkit
import utils
from depstats import PairedSeries


def two_pass_pearson(x, y):
    n = len(x)
    mx, my = sum(x) / n, sum(y) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    return sxy / math.sqrt(sxx * syy)


def hand_dcor(x, y):
    """Distance correlation by explicit double-centering loops."""
    n = len(x)

    def centered(v):
        d = [[abs(v[i] - v[j]) for j in range(n)] for i in range(n)]
        row = [sum(r) / n for r in d]
        col = [sum(d[i][j] for i in range(n)) / n for j in range(n)]
        grand = sum(row) / n
        return [[d[i][j] - row[i] - col[j] + grand for j in range(n)] for i in range(n)]

    a, b = centered(x), centered(y)
    dot = lambda p, q: sum(p[i][j] * q[i][j] for i in range(n) for j in range(n)) / (n * n)
    return math.sqrt(dot(a, b) / math.sqrt(dot(a, a) * dot(b, b)))


def bivariate_normal_dcor(rho):
    num = (rho * math.asin(rho) + math.sqrt(1 - rho ** 2) - rho * math.asin(rho / 2)
           - math.sqrt(4 - rho ** 2) + 1)
    return math.sqrt(num / (1 + math.pi / 3 - math.sqrt(3)))


def flat_lags(u):
    """Lagged wind identical to the overpass-hour wind at every offset."""
    return np.repeat(np.asarray(u, dtype=float)[:, None], len(depstats.LAG_OFFSETS), axis=1)


# --- pearson -----------------------------------------------------------------

def test_pearson_exact_linear():
    assert depstats.pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0, abs=1e-15)
    assert depstats.pearson([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0, abs=1e-15)


def test_pearson_matches_two_pass_oracle(rng):
    x = rng.normal(0, 1, 100)
    y = 0.4 * x + rng.normal(0, 1, 100)
    assert depstats.pearson(x, y) == pytest.approx(two_pass_pearson(x.tolist(), y.tolist()), abs=1e-12)


@given(st.floats(0.1, 100.0), st.floats(-50.0, 50.0), st.floats(0.1, 100.0))
@settings(max_examples=50, deadline=None)
def test_pearson_affine_invariance(scale, shift, other_scale):
    gen = np.random.Generator(np.random.Philox(1))
    x = gen.normal(0, 1, 50)
    y = x + gen.normal(0, 1, 50)
    r = depstats.pearson(x, y)
    assert depstats.pearson(scale * x + shift, other_scale * y) == pytest.approx(r, abs=1e-9)
    assert depstats.pearson(-scale * x, y) == pytest.approx(-r, abs=1e-9)


def test_pearson_zero_variance():
    with pytest.raises(depstats.UndefinedCorrelationError):
        depstats.pearson([1, 1, 1], [1, 2, 3])
    with pytest.raises(depstats.UndefinedCorrelationError):
        depstats.pearson(np.full(37, 0.3), np.arange(37.0))


def test_pearson_length_checks():
    with pytest.raises(depstats.InsufficientDataError):
        depstats.pearson([1.0], [2.0])
    with pytest.raises(depstats.InsufficientDataError):
        depstats.pearson([1.0, 2.0], [2.0, 3.0, 4.0])


def test_covariance_uses_population_normalization():
    assert depstats.covariance([1, 2, 3], [1, 2, 3]) == pytest.approx(2.0 / 3.0)


# --- dcor --------------------------------------------------------------------

def test_dcor_identical_and_affine():
    for seed in range(100):
        gen = np.random.Generator(np.random.Philox(seed))
        x = gen.normal(0, 1, 50)
        y = x + gen.normal(0, 1, 50)
        scale = gen.uniform(0.5, 5.0) * gen.choice([-1.0, 1.0])
        shift = gen.uniform(-5.0, 5.0)
        assert depstats.dcor(x, x) == pytest.approx(1.0, abs=1e-12), seed
        assert depstats.dcor(x, scale * x + shift) == pytest.approx(1.0, abs=1e-12), seed
        assert depstats.dcor(scale * x + shift, y) == pytest.approx(depstats.dcor(x, y), abs=1e-12), seed


def test_dcor_matches_hand_double_centering():
    x, y = [1.0, 2.0, 3.0, 4.0], [1.0, 4.0, 2.0, 3.0]
    assert depstats.dcor(x, y) == pytest.approx(hand_dcor(x, y), abs=1e-12)


def test_double_centering_three_points():
    a = depstats._double_centered(np.array([1.0, 2.0, 3.0]))
    d = np.array([[0, 1, 2], [1, 0, 1], [2, 1, 0]], dtype=float)
    row = d.mean(axis=1)
    expected = d - row[:, None] - row[None, :] + d.mean()
    assert np.allclose(a, expected, atol=1e-15)
    assert np.allclose(a.sum(axis=0), 0.0, atol=1e-12)


def test_dcor_constant_is_zero():
    assert depstats.dcor([2.0] * 6, [1, 2, 3, 4, 5, 6]) == 0.0


def test_dcor_needs_four_samples():
    with pytest.raises(depstats.InsufficientDataError):
        depstats.dcor([1, 2, 3], [1, 2, 3])


def test_dcor_detects_nonlinear_dependence(rng):
    x = rng.uniform(-1, 1, 400)
    y = x ** 2
    assert abs(depstats.pearson(x, y)) < 0.2
    assert depstats.dcor(x, y) > 0.4


@given(st.floats(0.01, 100.0), st.floats(-100.0, 100.0))
@settings(max_examples=30, deadline=None)
def test_dcor_invariant_to_shift_and_scale(scale, shift):
    gen = np.random.Generator(np.random.Philox(2))
    x = gen.normal(0, 1, 30)
    y = np.sin(3 * x) + gen.normal(0, 0.3, 30)
    d = depstats.dcor(x, y)
    assert 0.0 <= d <= 1.0
    assert depstats.dcor(scale * x + shift, y) == pytest.approx(d, abs=1e-9)


@pytest.mark.slow
@pytest.mark.parametrize("rho", [0.25, 0.5, 0.75])
def test_dcor_bivariate_normal_closed_form(rho):
    estimates = []
    for seed in range(3):
        gen = np.random.Generator(np.random.Philox(100 + seed))
        x = gen.normal(0, 1, 5000)
        y = rho * x + math.sqrt(1 - rho ** 2) * gen.normal(0, 1, 5000)
        estimates.append(depstats.dcor(x, y))
    assert np.mean(estimates) == pytest.approx(bivariate_normal_dcor(rho), abs=0.02)


# --- measurement model -------------------------------------------------------

def test_no_lag_decay_is_pure_linear(rng):
    t = rng.normal(0, 1, 200)
    c = t + rng.normal(0, 0.5, 200)
    u = 2.0 + 0.8 * t + rng.normal(0, 0.5, 200)
    s = PairedSeries(c, u, {1: flat_lags(u)})
    sol = depstats.solve_measurement_model(s, 1)
    c0 = depstats.covariance(c, u)
    assert sol.available
    assert sol.linear_cov == pytest.approx(c0, rel=1e-12)
    assert sol.sigma_eps2 == pytest.approx(0.0, abs=1e-12)
    assert sol.omega == pytest.approx(0.0, abs=1e-6)


def test_identity_signal_is_fully_linear():
    t = np.sin(np.arange(50) * 0.7) + np.arange(50) * 0.01
    s = PairedSeries(t, t, {1: flat_lags(t)})
    sol = depstats.solve_measurement_model(s, 1)
    linear, nonlinear = depstats.decompose_pearson(sol, depstats.covariance(t, t), depstats.covariance(t, t))
    assert linear == pytest.approx(1.0, abs=1e-9)
    assert nonlinear == pytest.approx(0.0, abs=1e-9)


def test_quadratic_root_takes_sign_of_covariance():
    assert depstats._quadratic_root(1.0, 1.0, 1.0) == pytest.approx(1.0)
    assert depstats._quadratic_root(-1.0, -1.0, -1.0) == pytest.approx(-1.0)


def test_reverse_regression_signal_variance():
    g = synthkit.GenSpec(seed=4, n=500)
    s = synthkit.gen_model_series(g, 1)
    sol = depstats.solve_measurement_model(s, 1)
    u0 = s.u_lagged[1][:, 2]
    expected = depstats.covariance(s.c, u0) ** 2 / depstats.covariance(u0, u0)
    assert sol.sigma_t2 == pytest.approx(expected, rel=1e-12)


def test_decomposition_sums_to_pearson():
    checked = 0
    for seed in range(1000):
        s = synthkit.gen_model_series(synthkit.GenSpec(seed=seed, n=200))
        u0 = s.u_lagged[1][:, 2]
        var_c, var_u = depstats.covariance(s.c, s.c), depstats.covariance(u0, u0)
        r = depstats.pearson(s.c, u0)
        for sol in depstats.solve_all_deltas(s).values():
            parts = depstats.decompose_pearson(sol, var_c, var_u)
            if parts is None:
                continue
            checked += 1
            assert sum(parts) == pytest.approx(r, abs=1e-9), seed
            assert sol.sigma_eps2 >= 0 and sol.sigma_C2 >= 0 and sol.sigma_U2 >= 0
    assert checked > 0


def test_unavailable_solution_has_no_decomposition():
    assert depstats.decompose_pearson(depstats.ModelSolution(), 1.0, 1.0) is None


def test_independent_series_has_no_strong_components():
    gen = np.random.Generator(np.random.Philox(21))
    c = gen.normal(0, 1, 5000)
    lag = gen.normal(0, 1, (5000, 5))
    s = PairedSeries(c, lag[:, 2], {1: lag})
    sol = depstats.solve_measurement_model(s, 1)
    if sol.available:
        assert abs(sol.linear_cov) < 0.15
        assert abs(sol.sigma_eps2) < 0.2


@pytest.mark.slow
@pytest.mark.parametrize("delta", [1, 2, 5])
@pytest.mark.parametrize("omega", [0.1, 0.3, 0.6])
@pytest.mark.parametrize("share", [0.2, 0.5, 0.8])
def test_generative_recovery(share, omega, delta):
    """B takes share of a unit C-U covariance, sigma_eps2 the rest."""
    b_est, eps_est = [], []
    for seed in range(100):
        g = synthkit.GenSpec(seed=seed, n=5000, B=share, sigma_eps2=1.0 - share, omega=omega)
        sol = depstats.solve_measurement_model(synthkit.gen_model_series(g, delta), delta)
        b_est.append(sol.linear_cov)
        eps_est.append(sol.sigma_eps2)
    assert np.count_nonzero(np.isfinite(b_est)) >= 90
    assert np.nanmedian(b_est) == pytest.approx(share, rel=0.10)
    assert np.nanmedian(eps_est) == pytest.approx(1.0 - share, rel=0.15)


@pytest.mark.slow
def test_nonlinear_share_recovered():
    shares = []
    for seed in range(20):
        g = synthkit.GenSpec(seed=seed, n=5000, B=0.7, sigma_eps2=0.3)
        s = synthkit.gen_model_series(g, 1)
        u0 = s.u_lagged[1][:, 2]
        sol = depstats.solve_measurement_model(s, 1)
        parts = depstats.decompose_pearson(sol, depstats.covariance(s.c, s.c), depstats.covariance(u0, u0))
        if parts is not None:
            shares.append(parts[1] / sum(parts))
    assert len(shares) >= 15
    assert np.median(shares) == pytest.approx(0.3, abs=0.06)


def test_solver_errors():
    u = np.arange(10, dtype=float)
    s = PairedSeries(u, u, {1: flat_lags(u)})
    with pytest.raises(depstats.IncompleteSeriesError):
        depstats.solve_measurement_model(s, 2)
    short = PairedSeries(u[:5], u[:5], {1: flat_lags(u[:5])})
    with pytest.raises(depstats.InsufficientDataError):
        depstats.solve_measurement_model(short, 1)
    gap = flat_lags(u)
    gap[3, 0] = np.nan
    with pytest.raises(depstats.IncompleteSeriesError):
        depstats.solve_measurement_model(PairedSeries(u, u, {1: gap}), 1)


def test_insufficient_data_maps_to_data_exit_code():
    assert depstats.InsufficientDataError.exit_code == utils.DataError.exit_code == 2


# --- PairedSeries ------------------------------------------------------------

def test_paired_series_rejects_mismatched_lengths():
    with pytest.raises(utils.DataError):
        PairedSeries([1.0, 2.0], [1.0])
    with pytest.raises(utils.DataError):
        PairedSeries([1.0, 2.0], [1.0, 2.0], {1: np.zeros((2, 3))})


def test_frame_layout_and_reload():
    s = synthkit.gen_model_series(synthkit.GenSpec(seed=3, n=12))
    df = s.to_frame()
    assert list(df.columns) == ["domain", "iso_utc_hour", "C", "U_0", "U_m2", "U_m1",
                                "U_p1", "U_p2", "delta_h"]
    assert len(df) == 12 * len(depstats.DELTAS_H)

    back = PairedSeries.from_frame(df, "synthetic")
    assert back.domain == "synthetic"
    assert np.array_equal(back.c, s.c)
    assert np.array_equal(back.u_lagged[5], s.u_lagged[5])


def test_from_frame_keeps_hours_present_at_every_delta():
    s = synthkit.gen_model_series(synthkit.GenSpec(seed=3, n=10), (1, 2))
    df = s.to_frame()
    dropped = s.timestamps[4]
    df = df[~((df["delta_h"] == 2) & (df["iso_utc_hour"] == dropped))]
    back = PairedSeries.from_frame(df)
    assert len(back) == 9
    assert dropped not in set(back.timestamps)


def test_from_frame_unknown_domain_is_empty():
    df = synthkit.gen_model_series(synthkit.GenSpec(seed=3, n=10)).to_frame()
    assert len(PairedSeries.from_frame(df, "elsewhere")) == 0
    assert isinstance(PairedSeries.from_frame(pd.DataFrame(columns=df.columns), "x"), PairedSeries)
