import math

import numpy as np
import pandas as pd
import pytest
from scipy import ndimage

import depstats
import synthkit
import utils
from conftest import CONFIG_DIR
from filament import AgreementParams, DomainPolygon, extract_filaments
from raster_core import build_pyramid, contrast_set, levels_needed
from synthkit import GenSpec


def extract(scene, g):
    p = build_pyramid(scene.sigma0, levels_needed(g.base_pixel_m, 6400.0))
    params = AgreementParams()
    return extract_filaments(contrast_set(p, params.fine_m, params.coarse_m), params)


# --- measurement-model series ------------------------------------------------

def test_same_seed_same_series():
    a = synthkit.gen_model_series(GenSpec(seed=42, n=200))
    b = synthkit.gen_model_series(GenSpec(seed=42, n=200))
    c = synthkit.gen_model_series(GenSpec(seed=43, n=200))
    assert np.array_equal(a.c, b.c)
    assert np.array_equal(a.u_lagged[5], b.u_lagged[5])
    assert not np.array_equal(a.c, c.c)


def test_noiseless_identical_signal():
    g = GenSpec(seed=1, n=100, B=1.0, sigma_t2=1.0, sigma_eps2=0.0, sigma_C2=0.0, sigma_U2=0.0)
    s = synthkit.gen_model_series(g)
    assert np.allclose(s.c, s.u, atol=1e-12)
    assert depstats.pearson(s.c, s.u) == pytest.approx(1.0, abs=1e-12)
    assert synthkit.population_pearson(g) == pytest.approx(1.0)


def test_series_shape_and_timestamps():
    s = synthkit.gen_model_series(GenSpec(seed=1, n=30), 2)
    assert set(s.u_lagged) == {2}
    assert s.u_lagged[2].shape == (30, 5)
    assert np.array_equal(s.u, s.u_lagged[2][:, 2])
    assert s.timestamps[1] == "2000-01-02T00:00:00Z"


@pytest.mark.parametrize("delta", [1, 2])
def test_lag_covariances_follow_wavelike_closure(delta):
    g = GenSpec(seed=7, n=20000)
    s = synthkit.gen_model_series(g, delta)
    lag = s.u_lagged[delta]
    for k, col in zip(depstats.LAG_OFFSETS, range(5)):
        expected = g.B * math.cos(k * g.omega * delta) + (g.sigma_eps2 if k == 0 else 0.0)
        assert depstats.covariance(s.c, lag[:, col]) == pytest.approx(expected, abs=0.05)


def test_sample_pearson_near_population():
    g = GenSpec(seed=9, n=20000)
    s = synthkit.gen_model_series(g, 1)
    assert depstats.pearson(s.c, s.u) == pytest.approx(synthkit.population_pearson(g), abs=0.03)


def test_genspec_validation():
    with pytest.raises(utils.ConfigError):
        GenSpec(sigma_C2=-1.0)
    with pytest.raises(utils.ConfigError):
        GenSpec(n=0)
    assert GenSpec(B=0.5, sigma_t2=2.0).beta_U == 0.25


# --- power-law series and wind fixture ---------------------------------------

def test_power_series_follows_exponent():
    c, u = synthkit.gen_power_series(3, 1000, noise=0.0)
    assert np.allclose(c, 0.5 * u ** -0.8)
    assert u.min() >= 1.0 and u.max() <= 10.0


def test_wind_fixture_layout():
    df = synthkit.gen_wind_fixture(2, "2019-07-01", 5, (48.0, 48.5), (-64.0, -63.5, -63.0))
    assert len(df) == 5 * 2 * 3
    assert list(df.columns) == ["iso_utc", "lat", "lon", "u10", "v10"]
    speed = np.hypot(df["u10"], df["v10"]).to_numpy().reshape(5, 6)
    assert np.allclose(speed, speed[:, :1])
    assert speed.min() >= 1.5 and speed.max() <= 9.5


def test_dependence_series_rows():
    wind = synthkit.gen_wind_fixture(2, "2019-07-01", 48, synthkit.SYNTH_WIND_LATS,
                                     synthkit.SYNTH_WIND_LONS)
    name, ring, era5 = synthkit.SYNTH_DOMAIN
    domain = DomainPolygon(name, ring, era5)
    overpasses = pd.to_datetime(["2019-07-01T10:10:00Z", "2019-07-01T22:10:00Z", "2019-07-05T10:00:00Z"])
    df = synthkit.gen_dependence_series(1, wind, [domain], overpasses, noise=0.0)
    assert len(df) == 2
    assert list(df["iso_utc"]) == ["2019-07-01T10:10:00Z", "2019-07-01T22:10:00Z"]
    row10 = wind[(wind["iso_utc"] == "2019-07-01T10:00:00Z")].iloc[0]
    u = math.hypot(row10["u10"], row10["v10"])
    assert df["C"].iloc[0] == pytest.approx(0.5 * u ** -0.8)


# --- scenes ------------------------------------------------------------------

def test_scene_truth_is_a_25_pixel_strip(gmf):
    g = GenSpec()
    scene = synthkit.gen_scene(g, gmf)
    truth = scene.truth.labels.values
    assert truth.shape == (64, 64)
    assert np.count_nonzero(truth) == 25
    rows, cols = np.nonzero(truth)
    assert set(rows) == {33}
    assert cols.min() == 20 and cols.max() == 44
    assert scene.truth.magnitude.values.max() == pytest.approx(0.6)
    assert scene.sigma0.shape == (512, 512)


def test_bowed_strip_stays_one_pixel_and_connected(gmf):
    scene = synthkit.gen_scene(GenSpec(filament_bend_m=4000.0), gmf)
    truth = scene.truth.labels.values > 0
    rows, cols = np.nonzero(truth)
    assert np.count_nonzero(truth) == 25
    assert sorted(cols) == list(range(20, 45))
    assert rows.min() == 33 and rows.max() == 38
    assert truth[38, 32] and truth[33, 20] and truth[33, 44]
    _, n = ndimage.label(truth, structure=np.ones((3, 3)))
    assert n == 1


def test_strip_depth_scales_with_wind(gmf):
    calm = synthkit.gen_scene(GenSpec(wind_speed=3.0), gmf)
    assert calm.truth.magnitude.values.max() == pytest.approx(min(0.95, 0.6 * 0.5 ** -0.8))
    windy = synthkit.gen_scene(GenSpec(wind_speed=12.0), gmf)
    assert windy.truth.magnitude.values.max() == pytest.approx(0.6 * 2.0 ** -0.8)


def test_no_filaments_extracts_nothing(gmf):
    g = GenSpec(n_filaments=0)
    scene = synthkit.gen_scene(g, gmf)
    assert extract(scene, g).n_components == 0


def test_20km_strip_is_recovered(gmf):
    g = GenSpec()
    scene = synthkit.gen_scene(g, gmf)
    field = extract(scene, g)
    assert field.n_components == 1
    assert field.labels.same_geometry(scene.truth.labels)
    found = field.labels.values > 0
    truth = scene.truth.labels.values > 0
    assert np.count_nonzero(found & truth) >= 0.95 * np.count_nonzero(truth)
    assert np.count_nonzero(found & ~truth) <= 0.05 * np.count_nonzero(truth)


def test_8km_strip_is_too_short(gmf):
    g = GenSpec(filament_length_m=8000.0)
    assert extract(synthkit.gen_scene(g, gmf), g).n_components == 0


def test_two_strips(gmf):
    g = GenSpec(n_filaments=2)
    scene = synthkit.gen_scene(g, gmf)
    assert extract(scene, g).n_components == 2


def test_speckle_is_seeded(gmf):
    a = synthkit.gen_scene(GenSpec(speckle_looks=4, seed=5), gmf)
    b = synthkit.gen_scene(GenSpec(speckle_looks=4, seed=5), gmf)
    clean = synthkit.gen_scene(GenSpec(seed=5), gmf)
    assert np.array_equal(a.sigma0.values, b.sigma0.values)
    assert not np.array_equal(a.sigma0.values, clean.sigma0.values)


def test_scene_size_must_divide():
    with pytest.raises(utils.ConfigError):
        synthkit.gen_scene(GenSpec(size_px=500), None)


# --- config file -------------------------------------------------------------

def test_load_genspec_is_case_insensitive(tmp_path):
    path = tmp_path / "spec.cfg"
    path.write_text("# comment\nSEED = 11\nn=50\nPolarization = HH\nFILAMENT_DEPTH = 0.4\n")
    g = synthkit.load_genspec(str(path), seed=12)
    assert g.seed == 12
    assert g.n == 50
    assert g.polarization == "HH"
    assert g.filament_depth == 0.4
    path.write_text("FILAMENT_BEND_M = 2400\n")
    assert synthkit.load_genspec(str(path)).filament_bend_m == 2400.0


def test_load_genspec_unknown_key(tmp_path):
    path = tmp_path / "spec.cfg"
    path.write_text("SEED=1\nFILAMENTS=3\n")
    with pytest.raises(utils.ConfigError):
        synthkit.load_genspec(str(path))


def test_shipped_genspec_loads():
    g = synthkit.load_genspec(str(CONFIG_DIR / "synth_spec.cfg"))
    assert g.seed == 20190701
    assert g.filament_length_m == 20000.0
