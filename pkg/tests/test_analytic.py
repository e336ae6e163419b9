import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from octupole import (
    DefectSet,
    PerturbationCoeffs,
    TrapConfig,
    analytic_minima,
    analytic_pseudo,
    analytic_pseudo_gradient,
    analytic_rf_surface,
    basis_eval,
    coeffs_from_defects,
    scaling_coeffs,
)
from octupole.analytic import coeffs_from_items, coeffs_to_items, field_amplitude, write_minima_csv
from octupole.errors import ModelViolationError

CFG = TrapConfig()
R0 = CFG.r0
COEF = st.floats(-0.1, 0.1)


@pytest.mark.parametrize("a1", [0.01, 0.05, 0.1])
def test_spacing_law(a1):
    p = analytic_minima(PerturbationCoeffs(a1=a1), CFG)
    xs = np.sort(p.points[:, 0])
    expect = R0 * math.sqrt(a1 / 2)
    assert len(p) == 3 and p.classification == "line"
    np.testing.assert_allclose(xs, [-expect, 0.0, expect], rtol=1e-6, atol=1e-15)
    np.testing.assert_allclose(p.points[:, 1], 0.0, atol=1e-15)


def test_negative_a1_turns_line_to_y_axis():
    p = analytic_minima(PerturbationCoeffs(a1=-0.05), CFG)
    np.testing.assert_allclose(np.sort(p.points[:, 1]), [-R0 * 0.05**0.5 / 2**0.5, 0, R0 * 0.05**0.5 / 2**0.5], atol=1e-15)


def test_zero_coefficients_give_single_minimum():
    p = analytic_minima(PerturbationCoeffs(), CFG)
    assert len(p) == 1 and p.classification == "single"
    np.testing.assert_allclose(p.points, [[0.0, 0.0]])


def test_minima_outside_disk_violate_model():
    with pytest.raises(ModelViolationError):
        analytic_minima(PerturbationCoeffs(a3=5.0), CFG)


@settings(max_examples=200, deadline=None)
@given(COEF, COEF, COEF, COEF)
def test_minima_barycentre_at_origin(a1, a2, a3, a4):
    c = PerturbationCoeffs(a1, a2, a3, a4)
    try:
        p = analytic_minima(c, CFG, radius_fraction=10.0)
    except ModelViolationError:
        return
    if len(p) == 3:
        assert np.hypot(*p.barycenter) < 1e-12 * R0 * 1e3
    # each minimum is a zero of the field amplitude
    assert np.all(field_amplitude(c, CFG, p.points.T) <= 1e-9 * CFG.v_rf / R0)


def test_roots_and_descent_agree():
    c = PerturbationCoeffs(0.04, -0.02, 0.01, 0.015)
    a = analytic_minima(c, CFG)
    b = analytic_minima(c, CFG.with_(pixel=1e-5), method="descent")
    assert len(a) == len(b) == 3
    from octupole import minima_metrics

    assert minima_metrics(a, b)[0] < 1e-7


def test_gradient_matches_finite_differences(rng):
    h = 1e-9
    worst = 0.0
    for _ in range(1000):
        c = PerturbationCoeffs(*rng.uniform(-0.1, 0.1, 4))
        x, y = rng.uniform(-0.6 * R0, 0.6 * R0, 2)
        gx, gy = analytic_pseudo_gradient(c, CFG, (x, y))
        fx = (analytic_pseudo(c, CFG, (x + h, y)) - analytic_pseudo(c, CFG, (x - h, y))) / (2 * h)
        fy = (analytic_pseudo(c, CFG, (x, y + h)) - analytic_pseudo(c, CFG, (x, y - h))) / (2 * h)
        worst = max(worst, math.hypot(gx - fx, gy - fy) / math.hypot(gx, gy))
    assert worst < 1e-6


@pytest.mark.parametrize("kind", ["U1", "V1", "U2", "V2", "U4", "V4"])
def test_basis_surfaces_are_harmonic(kind, rng):
    h = 1e-4
    for x, y in rng.uniform(-1, 1, (20, 2)):
        lap = (
            basis_eval(kind, (x + h, y), 1.0)
            + basis_eval(kind, (x - h, y), 1.0)
            + basis_eval(kind, (x, y + h), 1.0)
            + basis_eval(kind, (x, y - h), 1.0)
            - 4 * basis_eval(kind, (x, y), 1.0)
        ) / h**2
        assert abs(lap) < 1e-5


def test_basis_rejects_bad_input():
    with pytest.raises(ValueError):
        basis_eval("U3", (0.0, 0.0), 1.0)
    with pytest.raises(ValueError):
        basis_eval("U1", (0.0, 0.0), 0.0)


def test_rf_surface_is_octupole_plus_perturbation():
    c = PerturbationCoeffs(0.02, 0.03, -0.01, 0.04, h0=0.5)
    x, y = 1e-3, -0.7e-3
    expect = 0.5 * (
        basis_eval("U4", (x, y), R0)
        - 0.02 * basis_eval("U2", (x, y), R0)
        - 0.03 * basis_eval("V2", (x, y), R0)
        - (-0.01) * basis_eval("U1", (x, y), R0)
        - 0.04 * basis_eval("V1", (x, y), R0)
    )
    assert analytic_rf_surface(c, (x, y)) == pytest.approx(expect, rel=1e-12)


def test_reference_scaling_constants():
    s = scaling_coeffs(0.375)
    assert s.hc == pytest.approx(0.820, abs=0.002)
    assert s.hl == pytest.approx(2.566, abs=0.003)
    assert s.hp == pytest.approx(1.586, abs=0.002)
    assert scaling_coeffs(0.375, "reference").hh == 1.404
    # the fitted shearing polynomial disagrees with the reference value
    assert scaling_coeffs(0.375, "polynomial").hh == pytest.approx(5.59, abs=0.01)
    assert scaling_coeffs(0.375, "calibrated").hh == pytest.approx(1.402, abs=0.005)
    with pytest.raises(ValueError):
        scaling_coeffs(0.375, "guess")


def test_scaling_extrapolation_warns():
    with pytest.warns(UserWarning):
        s = scaling_coeffs(0.8)
    assert s.extrapolated


def test_single_defect_coefficients():
    s = scaling_coeffs(0.375)
    c = coeffs_from_defects(DefectSet(l_s=0.05), s)
    np.testing.assert_allclose(c.vector, [s.hc * 0.05, 0, 0, 0], atol=1e-15)
    c = coeffs_from_defects(DefectSet(xl_s=0.01, yl_s=-0.02), s)
    np.testing.assert_allclose(c.vector, [0, 0, s.hl * 0.01, -s.hl * 0.02], atol=1e-15)
    c = coeffs_from_defects(DefectSet(beta_t=0.03), s)
    np.testing.assert_allclose(c.vector, [s.hh * 0.03, 0, 0, 0], atol=1e-15)
    c = coeffs_from_defects(DefectSet(y0=0.02), s, split_correction=False)
    np.testing.assert_allclose(c.vector, [0, 0, 0, s.hp * 0.02], atol=1e-15)
    c = coeffs_from_defects(DefectSet(y0=0.02), s)
    np.testing.assert_allclose(c.vector, [0.1 * 0.02, 0, 0, s.hp * 0.02], atol=1e-15)


def test_rotation_turns_compression_quadrupole():
    s = scaling_coeffs(0.375)
    d = 0.05
    c = coeffs_from_defects(DefectSet(l_s=0.04, delta=d), s)
    f2 = 1 + 2 * d / math.pi
    np.testing.assert_allclose(c.vector[:2], [s.hc * f2 * 0.04 * math.cos(2 * d), -s.hc * f2 * 0.04 * math.sin(2 * d)])


def test_coefficient_file_round_trip(tmp_path):
    from octupole import kvfile

    c = PerturbationCoeffs(0.01, -0.02, 0.003, 0.004, h0=0.3, r_bar0=3.9e-3)
    kvfile.write(tmp_path / "c.txt", coeffs_to_items(c))
    back = coeffs_from_items(kvfile.read(tmp_path / "c.txt"))
    np.testing.assert_allclose(back.vector, c.vector)
    assert back.h0 == pytest.approx(0.3) and back.r_bar0 == pytest.approx(3.9e-3)


def test_minima_csv(tmp_path):
    p = analytic_minima(PerturbationCoeffs(a1=0.02, a3=0.001), CFG)
    write_minima_csv(tmp_path / "m.csv", p)
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "x_um,y_um,depth_uK"
    assert len(lines) == 4
