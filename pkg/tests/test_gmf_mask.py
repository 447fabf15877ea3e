import logging
import math

import numpy as np
import pytest

import gmf_mask
from raster_core import Grid


def cmod5_scalar(coefs, v, phi, theta):
    """Scalar CMOD5 written straight from the published formula."""
    c = [None] + list(coefs)
    x = (theta - 40.0) / 25.0
    xx = x * x
    a0 = c[1] + c[2] * x + c[3] * xx + c[4] * x * xx
    a1 = c[5] + c[6] * x
    a2 = c[7] + c[8] * x
    gam = c[9] + c[10] * x + c[11] * xx
    s0 = c[12] + c[13] * x

    s = a2 * v
    a3 = 1.0 / (1.0 + math.exp(-max(s, s0)))
    if s < s0:
        a3 = a3 * (s / s0) ** (s0 * (1.0 - a3))
    b0 = a3 ** gam * 10.0 ** (a0 + a1 * v)

    b1 = c[15] * v * (0.5 + x - math.tanh(4.0 * (x + c[16] + c[17] * v)))
    b1 = (c[14] * (1.0 + x) - b1) / (math.exp(0.34 * (v - c[18])) + 1.0)

    v0 = c[21] + c[22] * x + c[23] * xx
    d1 = c[24] + c[25] * x + c[26] * xx
    d2 = c[27] + c[28] * x
    y0, pn = c[19], c[20]
    v2 = v / v0 + 1.0
    if v2 < y0:
        a = y0 - (y0 - 1.0) / pn
        b = 1.0 / (pn * (y0 - 1.0) ** (pn - 1.0))
        v2 = a + b * (v2 - 1.0) ** pn
    b2 = (-d1 + d2 * v2) * math.exp(-v2)

    cs = math.cos(math.radians(phi))
    return b0 * (1.0 + b1 * cs + b2 * (2.0 * cs * cs - 1.0)) ** 1.6


def uniform_grid(value, shape=(4, 6)):
    return Grid(np.full(shape, float(value)), np.ones(shape, dtype=bool), 800.0, 48.5, -64.0)


@pytest.mark.parametrize("v,phi,theta", [
    (1.0, 0.0, 20.0), (3.0, 45.0, 25.0), (5.0, 90.0, 30.0), (8.0, 135.0, 35.0),
    (10.0, 180.0, 40.0), (15.0, 270.0, 45.0), (25.0, 10.0, 49.0), (0.5, 60.0, 33.0),
])
def test_matches_scalar_oracle(gmf, v, phi, theta):
    expected = cmod5_scalar(gmf.coefficients, v, phi, theta)
    assert math.isclose(gmf_mask.gmf_sigma0(gmf, v, phi, theta), expected, rel_tol=1e-10)


def test_scalar_input_returns_float(gmf):
    assert isinstance(gmf_mask.gmf_sigma0(gmf, 5.0, 0.0, 30.0), float)


@pytest.mark.parametrize("phi", [0.0, 90.0, 180.0])
@pytest.mark.parametrize("theta", [20.0, 30.0, 40.0, 49.0])
def test_increases_with_wind(gmf, phi, theta):
    winds = np.arange(1.0, 15.01, 0.5)
    sigma = gmf_mask.gmf_sigma0(gmf, winds, phi, theta)
    assert np.all(np.diff(sigma) > 0)


def test_low_vs_high_wind(gmf):
    assert gmf_mask.gmf_sigma0(gmf, 2.0, 0.0, 35.0) < gmf_mask.gmf_sigma0(gmf, 10.0, 0.0, 35.0)


def test_upwind_exceeds_crosswind(gmf):
    assert gmf_mask.gmf_sigma0(gmf, 5.0, 0.0, 35.0) >= gmf_mask.gmf_sigma0(gmf, 5.0, 90.0, 35.0)


def test_hh_is_vv_over_ratio(gmf):
    theta = np.linspace(20.0, 49.0, 30)
    vv = gmf_mask.gmf_sigma0(gmf, 7.0, 30.0, theta, "VV")
    hh = gmf_mask.gmf_sigma0(gmf, 7.0, 30.0, theta, "HH")
    assert np.array_equal(hh, vv / gmf.polarization_ratio(theta))


def test_unknown_polarization(gmf):
    with pytest.raises(ValueError):
        gmf_mask.gmf_sigma0(gmf, 5.0, 0.0, 30.0, "VH")


def test_out_of_envelope_is_clamped(gmf, caplog):
    with caplog.at_level(logging.WARNING):
        high = gmf_mask.gmf_sigma0(gmf, 50.0, 0.0, 30.0)
    assert high == gmf_mask.gmf_sigma0(gmf, 35.0, 0.0, 30.0)
    assert "clamped" in caplog.text


def test_load_rejects_wrong_arity(tmp_path, gmf_paths):
    coef = tmp_path / "short.txt"
    coef.write_text("CMOD5\n" + "\n".join(["1.0"] * 27) + "\n")
    with pytest.raises(gmf_mask.GmfConfigError):
        gmf_mask.load_gmf(str(coef), str(gmf_paths[1]))


def test_load_rejects_unknown_model(tmp_path, gmf_paths):
    coef = tmp_path / "other.txt"
    coef.write_text("XMOD9\n" + "\n".join(["1.0"] * 28) + "\n")
    with pytest.raises(gmf_mask.GmfConfigError):
        gmf_mask.load_gmf(str(coef), str(gmf_paths[1]))


def test_load_missing_file(tmp_path, gmf_paths):
    with pytest.raises(gmf_mask.GmfConfigError):
        gmf_mask.load_gmf(str(tmp_path / "missing.txt"), str(gmf_paths[1]))


def test_missing_file_is_config_exit_code():
    assert gmf_mask.GmfConfigError.exit_code == 1


def test_reference_file_has_28_coefficients(gmf):
    assert gmf.name == "CMOD5"
    assert len(gmf.coefficients) == 28


def ramp_geometry(heading=350.0):
    base = uniform_grid(0.0, (3, 30))
    return gmf_mask.scene_geometry_from_record(heading, base, 20.0, 49.0)


def test_geometry_ramp_runs_near_to_far():
    geom = ramp_geometry()
    assert geom.look_direction == 80.0
    inc = geom.incidence.values
    assert inc[0, 0] == 20.0 and inc[0, -1] == 49.0


def test_geometry_ramp_reverses_for_westward_look():
    geom = ramp_geometry(190.0)
    assert geom.look_direction == 280.0
    assert geom.incidence.values[0, 0] == 49.0


def test_geometry_rejects_bad_heading():
    with pytest.raises(gmf_mask.GeometryError):
        gmf_mask.SceneGeometry(uniform_grid(30.0), 360.0, 90.0)


def test_geometry_rejects_incidence_outside_envelope():
    with pytest.raises(gmf_mask.GeometryError):
        gmf_mask.SceneGeometry(uniform_grid(70.0), 10.0, 100.0)


def test_low_bound_azimuth_is_crosswind():
    lo_az, hi_az = gmf_mask.relative_azimuths(ramp_geometry())
    assert math.isclose(math.cos(math.radians(lo_az)), 0.0, abs_tol=1e-12)
    assert hi_az == 0.0


@pytest.mark.parametrize("mode", ["upwind", "max"])
def test_bounds_ordered(gmf, mode):
    lo, hi = gmf_mask.mask_bounds(gmf, ramp_geometry(), "VV", mode)
    assert np.all(lo.values < hi.values)


def test_bounds_uniform_for_uniform_incidence(gmf):
    geom = gmf_mask.SceneGeometry(uniform_grid(33.0), 10.0, 100.0)
    lo, hi = gmf_mask.mask_bounds(gmf, geom, "HH")
    assert np.all(lo.values == lo.values[0, 0])
    assert np.all(hi.values == hi.values[0, 0])


def test_bounds_follow_incidence_sweep(gmf):
    geom = ramp_geometry()
    lo, hi = gmf_mask.mask_bounds(gmf, geom, "VV")
    lo_az, _ = gmf_mask.relative_azimuths(geom)
    thetas = geom.incidence.values[0]
    assert np.allclose(lo.values[0], [cmod5_scalar(gmf.coefficients, 1.0, lo_az, t) for t in thetas],
                       rtol=1e-10)
    assert np.allclose(hi.values[0], [cmod5_scalar(gmf.coefficients, 15.0, 0.0, t) for t in thetas],
                       rtol=1e-10)
    assert np.all(np.diff(hi.values[0]) < 0)


def test_max_mode_not_below_upwind(gmf):
    _, hi_up = gmf_mask.mask_bounds(gmf, ramp_geometry(), "VV", "upwind")
    _, hi_max = gmf_mask.mask_bounds(gmf, ramp_geometry(), "VV", "max")
    assert np.all(hi_max.values >= hi_up.values)


def test_unknown_high_mode(gmf):
    with pytest.raises(gmf_mask.GmfConfigError):
        gmf_mask.mask_bounds(gmf, ramp_geometry(), "VV", "median")


def test_apply_mask_rules(gmf):
    lo, hi = uniform_grid(0.01), uniform_grid(0.1)
    values = np.full((4, 6), 0.05)
    values[0, 0] = 0.005  # lo / 2
    values[0, 1] = 0.2
    validity = np.ones((4, 6), dtype=bool)
    validity[3, 5] = False
    sigma0 = Grid(values, validity, 800.0, 48.5, -64.0)

    out = gmf_mask.apply_mask(sigma0, lo, hi)
    assert not out.validity[0, 0]
    assert not out.validity[0, 1]
    assert not out.validity[3, 5]
    assert out.validity.sum() == 21
    assert np.array_equal(out.values, values)

    again = gmf_mask.apply_mask(out, lo, hi)
    assert np.array_equal(again.validity, out.validity)


def test_apply_mask_all_outside(gmf):
    out = gmf_mask.apply_mask(uniform_grid(1.0), uniform_grid(0.01), uniform_grid(0.1))
    assert not out.validity.any()
