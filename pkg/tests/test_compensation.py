import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from octupole import (
    CalibrationConstants,
    ElectrodeLayout,
    ElectrodeSolver,
    PerturbationCoeffs,
    TrapConfig,
    VoltageBias,
    analytic_minima,
    fit_coefficients,
    iterate_correction,
    make_pattern,
    minima_metrics,
    numeric_minima,
    random_layout,
    voltages_from_coeffs,
)
from octupole.errors import DiagnosisError
from octupole.experiments import pixel_minima
from octupole.geometry import remove_global_rotation

CFG = TrapConfig()
COEF = st.floats(-0.1, 0.1)


@settings(max_examples=500, deadline=None)
@given(COEF, COEF, COEF, COEF)
def test_biases_sum_to_zero(a1, a2, a3, a4):
    dv = voltages_from_coeffs(PerturbationCoeffs(a1, a2, a3, a4), CFG).dv
    assert abs(dv.sum()) <= 8 * np.finfo(float).eps * max(np.abs(dv).max(), 1.0)


@settings(max_examples=300, deadline=None)
@given(st.tuples(COEF, COEF, COEF, COEF), st.tuples(COEF, COEF, COEF, COEF), st.floats(-3, 3))
def test_bias_map_is_linear(a, b, k):
    va = voltages_from_coeffs(a, CFG).dv
    vb = voltages_from_coeffs(b, CFG).dv
    vab = voltages_from_coeffs(np.add(a, b), CFG).dv
    vk = voltages_from_coeffs(np.multiply(k, a), CFG).dv
    tol = 4 * np.finfo(float).eps * CFG.v_rf
    np.testing.assert_allclose(vab, va + vb, atol=tol)
    np.testing.assert_allclose(vk, k * va, atol=4 * tol * max(1, abs(k)))


def test_bias_pattern_and_quantization():
    cal = CalibrationConstants()
    dv = voltages_from_coeffs(PerturbationCoeffs(a1=0.01), CFG, cal).dv
    q = CFG.v_rf * 0.01 / cal.q_cal
    np.testing.assert_allclose(dv, [q, 0, -q, 0, q, 0, -q, 0], atol=1e-12)
    rounded = voltages_from_coeffs(PerturbationCoeffs(0.01, 0.02, 0.003, -0.004), CFG, quantum=0.01).dv
    np.testing.assert_allclose(rounded / 0.01, np.round(rounded / 0.01), atol=1e-9)


def test_voltage_bias_arithmetic(cfg):
    a = VoltageBias(np.arange(8.0))
    b = a + VoltageBias.zero()
    np.testing.assert_array_equal(a.dv, b.dv)
    with pytest.raises(ValueError):
        a.dv[0] = 3.0
    lay = a.apply(ElectrodeLayout.perfect(cfg), cfg.v_rf)
    np.testing.assert_allclose(lay.potentials(), lay.phase_sign * cfg.v_rf + a.dv)


def test_calibration_file(tmp_path):
    cal = CalibrationConstants(d_cal=0.91, q_cal=0.8, d_px_used=1e-6)
    cal.write(tmp_path / "cal.txt")
    text = (tmp_path / "cal.txt").read_text()
    for key in ("d_cal", "q_cal", "d_px_um", "ratio"):
        assert key in text
    back = CalibrationConstants.read(tmp_path / "cal.txt")
    assert (back.d_cal, back.q_cal) == (0.91, 0.8)
    with pytest.raises(ValueError):
        CalibrationConstants(d_cal=-1.0)


def test_fit_of_coincident_points():
    fit = fit_coefficients(make_pattern([[0.0, 0.0]]), CFG)
    np.testing.assert_array_equal(fit.coeffs.vector, 0.0)
    assert fit.residual == 0.0 and fit.degenerate


def test_fit_recovers_exact_minima():
    true = PerturbationCoeffs(0.05, -0.02, 0.03, 0.01)
    fit = fit_coefficients(analytic_minima(true, CFG), CFG)
    np.testing.assert_allclose(fit.coeffs.vector, true.vector, atol=1.5e-6)
    assert fit.residual < 1e-8


def test_fit_from_pixel_positions_within_reference_scatter():
    true = PerturbationCoeffs(0.05, -0.02, 0.03, 0.01)
    observed = pixel_minima(true, CFG, 4e-6)
    fit = fit_coefficients(observed, CFG)
    sigma = np.array([8.2e-4, 8.78e-4, 4.7e-4, 4.2e-4])
    assert np.all(np.abs(fit.coeffs.vector - true.vector) <= sigma)
    assert fit.residual < 4e-6


def test_fit_is_translation_invariant():
    true = PerturbationCoeffs(0.03, 0.01, -0.02, 0.02)
    p = analytic_minima(true, CFG)
    shifted = make_pattern(p.points + [3e-5, -7e-5])
    fit = fit_coefficients(shifted, CFG)
    np.testing.assert_allclose(fit.coeffs.vector, true.vector, atol=1.5e-6)
    np.testing.assert_allclose(fit.translation, [3e-5, -7e-5], atol=1e-12)


def test_two_point_fit_is_flagged():
    true = PerturbationCoeffs(0.03, 0.0, 0.0, 0.0)
    pts = analytic_minima(true, CFG).points
    fit = fit_coefficients(make_pattern(pts[:2]), CFG)
    assert fit.degenerate
    assert fit.residual < CFG.pixel


def test_fit_reports_stall():
    p = analytic_minima(PerturbationCoeffs(0.03, 0.01, 0.0, 0.02), CFG)
    with pytest.raises(DiagnosisError) as err:
        fit_coefficients(p, CFG, max_residual=-1.0)
    assert err.value.residual is not None


def test_bias_generated_pattern_matches_model():
    solver = ElectrodeSolver(ElectrodeLayout.perfect(CFG))
    for a in [(0.04, 0.0, -0.01, 0.0), (0.0, 0.05, 0.0, 0.02), (-0.02, 0.01, 0.03, -0.01)]:
        target = PerturbationCoeffs(*a)
        bias = voltages_from_coeffs(target, CFG)
        sol = solver.solve(solver.layout.phase_sign * CFG.v_rf + bias.dv)
        got = numeric_minima(sol, CFG)
        assert minima_metrics(analytic_minima(target, CFG), got)[0] <= 2 * CFG.pixel


def test_correction_of_perfect_trap_is_flat():
    h = iterate_correction(ElectrodeLayout.perfect(CFG), CFG, max_steps=4)
    assert np.all(h.d_b == 0.0)
    assert len(h.steps) <= 5


def test_rotated_layout_is_refused():
    lay = ElectrodeLayout.perfect(CFG).rotated(0.01)
    with pytest.raises(ValueError):
        iterate_correction(lay, CFG)


def test_correction_converges_and_accumulates():
    lay, _ = remove_global_rotation(random_layout(5, 0.02, CFG))
    h = iterate_correction(lay, CFG, max_steps=10)
    db = h.d_b
    assert db[0] > 300e-6
    assert db[min(3, len(db) - 1)] < 0.1 * db[0]
    total = VoltageBias.zero()
    for s in h.steps:
        np.testing.assert_allclose(s.bias.dv, total.dv, atol=1e-12)
        total = total + s.correction
    # depth differences collapse to well below a millikelvin
    assert h.steps[-1].depth_spread < 1e-3
    assert h.steps[0].depth_spread > h.steps[-1].depth_spread


def test_history_csv_layout():
    lay, _ = remove_global_rotation(random_layout(1, 0.01, CFG))
    text = iterate_correction(lay, CFG, max_steps=2).to_csv()
    head = text.splitlines()[0].split(",")
    assert head == ["step", "d_b_um", "d_res_um", "a1", "a2", "a3", "a4"] + [f"dv{k}_V" for k in range(8)]
    assert len(text.splitlines()) == 4
