import numpy as np
import pytest

from octupole import (
    BoundaryProblem,
    DefectSet,
    ElectrodeLayout,
    ElectrodeSolver,
    PotentialGrid,
    TrapConfig,
    find_minima_numeric,
    layout_from_defects,
    minima_metrics,
    numeric_minima,
    pseudo_map,
    solve_laplace,
)
from octupole.analytic import basis_eval
from octupole.errors import FlatFieldError
from octupole.solver import field_map, field_zeros

CFG = TrapConfig()
R0, RD = CFG.r0, CFG.rd


@pytest.fixture(scope="module")
def perfect():
    return ElectrodeSolver(ElectrodeLayout.perfect(CFG))


@pytest.fixture(scope="module")
def compressed():
    return ElectrodeSolver(layout_from_defects(DefectSet(l_s=0.03), CFG))


def _circle(center, radius, n=64):
    t = np.linspace(0, 2 * np.pi, n, endpoint=False)
    return center + radius * np.exp(1j * t)


def test_boundary_conditions_hold(compressed, rng):
    v = rng.uniform(-100, 100, 8)
    sol = compressed.solve(v)
    for k, c in enumerate(compressed.layout.z):
        err = np.abs(sol.potential(_circle(c, RD, 97)) - v[k]).max()
        assert err < 1e-6 * np.abs(v).max()


def test_single_live_electrode(perfect):
    v = np.zeros(8)
    v[3] = 1.0
    sol = perfect.solve(v)
    on = sol.potential(_circle(perfect.layout.z[3], RD, 101))
    np.testing.assert_allclose(on, 1.0, atol=1e-7)
    # grounded neighbours and a positive interior
    np.testing.assert_allclose(sol.potential(_circle(perfect.layout.z[4], RD, 51)), 0.0, atol=1e-7)
    assert 0 < sol.potential(np.array([0j]))[0] < 1


def test_octupole_potential_vanishes_at_origin(perfect):
    sol = perfect.solve()
    assert abs(sol.potential(np.array([0j]))[0]) < 1e-9 * CFG.v_rf


def test_central_region_is_octupolar(perfect):
    sol = perfect.solve()
    r = np.sqrt(np.random.default_rng(1).uniform(0, 1, 2000)) * 0.4 * R0
    t = np.random.default_rng(2).uniform(0, 2 * np.pi, 2000)
    z = r * np.exp(1j * t)
    phi = sol.potential(z)
    u4 = basis_eval("U4", (z.real, z.imag), R0)
    c = np.dot(u4, phi) / np.dot(u4, u4)
    resid = np.sqrt(np.mean((phi - c * u4) ** 2)) / np.sqrt(np.mean(phi**2))
    assert resid < 0.01
    assert c > 0


def test_field_symmetry_under_eighth_turn(perfect, rng):
    sol = perfect.solve()
    z = rng.uniform(0, 0.6 * R0, 200) * np.exp(1j * rng.uniform(0, 2 * np.pi, 200))
    e1 = np.abs(sol.field(z))
    e2 = np.abs(sol.field(z * np.exp(1j * np.pi / 4)))
    np.testing.assert_allclose(e1, e2, rtol=1e-7, atol=1e-9 * e1.max())


def test_potential_is_harmonic(compressed, rng):
    sol = compressed.solve()
    h = 2e-6
    z = rng.uniform(0, 0.8 * R0, 200) * np.exp(1j * rng.uniform(0, 2 * np.pi, 200))
    lap = (sol.potential(z + h) + sol.potential(z - h) + sol.potential(z + 1j * h) + sol.potential(z - 1j * h)
           - 4 * sol.potential(z)) / h**2
    scale = CFG.v_rf / R0**2
    assert np.abs(lap).max() < 1e-3 * scale


def test_maximum_principle(compressed, rng):
    v = rng.uniform(-50, 80, 8)
    sol = compressed.solve(v)
    z = rng.uniform(0, 1.3 * R0, 3000) * np.exp(1j * rng.uniform(0, 2 * np.pi, 3000))
    outside = np.all(np.abs(z[:, None] - compressed.layout.z[None, :]) > RD, axis=1)
    phi = sol.potential(z[outside])
    tol = 1e-6 * np.abs(v).max()
    assert phi.max() <= v.max() + tol and phi.min() >= v.min() - tol


def test_field_is_potential_derivative(compressed, rng):
    sol = compressed.solve()
    h = 1e-7
    for z in rng.uniform(-2e-3, 2e-3, (20, 2)) @ np.array([1, 1j]):
        dx = (sol.potential(np.array([z + h])) - sol.potential(np.array([z - h])))[0] / (2 * h)
        dy = (sol.potential(np.array([z + 1j * h])) - sol.potential(np.array([z - 1j * h])))[0] / (2 * h)
        # Phi' = dPhi/dx - i dPhi/dy for the real part of a holomorphic function
        f = sol.field(np.array([z]))[0]
        assert abs(f - (dx - 1j * dy)) < 1e-5 * abs(f) + 1e-3


def test_series_matches_direct_sum(compressed, rng):
    sol = compressed.solve()
    z = rng.uniform(0, sol.series_radius, 300) * np.exp(1j * rng.uniform(0, 2 * np.pi, 300))
    np.testing.assert_allclose(sol.potential_fast(z), sol.potential(z), atol=1e-9 * CFG.v_rf)


def test_linear_superposition(compressed, rng):
    a, b = rng.normal(size=8), rng.normal(size=8)
    z = np.array([1e-3 + 2e-4j, -5e-4 + 1e-3j])
    lhs = compressed.solve(2 * a - 3 * b).potential(z)
    rhs = 2 * compressed.solve(a).potential(z) - 3 * compressed.solve(b).potential(z)
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


def test_boundary_problem_validation(perfect):
    lay = perfect.layout
    with pytest.raises(ValueError):
        BoundaryProblem(lay, region=1e-3, d_px=4e-6)
    with pytest.raises(ValueError):
        BoundaryProblem(lay, region=2.4001e-3, d_px=4e-6)
    p = BoundaryProblem(lay, d_px=4e-5)
    assert p.n % 2 == 1 and p.region >= 0.6 * R0


def test_grid_pipeline(tmp_path, compressed):
    grid = solve_laplace(BoundaryProblem(compressed.layout, d_px=2e-5), compressed)
    assert grid.n % 2 == 1 and grid.kind == "potential"
    assert {"d_px", "window", "boundary_residual"} <= set(grid.meta)
    pm = pseudo_map(grid, CFG)
    found = find_minima_numeric(pm)
    exact = field_zeros(compressed.solve())
    assert len(found) == len(exact) == 3
    from octupole import make_pattern

    ref = make_pattern(np.column_stack([exact.real, exact.imag]))
    assert minima_metrics(found, ref)[0] < 2e-5
    grid.to_csv(tmp_path / "g.csv")
    assert (tmp_path / "g.csv").read_text().startswith("x_um,y_um,value\n")


def test_grid_shape_rules():
    with pytest.raises(ValueError):
        PotentialGrid((0, 0), 1e-5, np.zeros((4, 4)), np.zeros((4, 4), bool), "potential")
    grid = PotentialGrid((0, 0), 1e-5, np.zeros((5, 5)), np.zeros((5, 5), bool), "potential")
    with pytest.raises(ValueError):
        find_minima_numeric(grid)
    with pytest.raises(FlatFieldError):
        find_minima_numeric(pseudo_map(grid, CFG))


def test_field_map_masks_electrodes(perfect):
    grid = solve_laplace(BoundaryProblem(perfect.layout, region=6e-3, d_px=1e-4), perfect)
    assert grid.mask.any()
    fm = field_map(grid)
    assert np.isnan(fm.values[fm.mask]).all()


def test_numeric_minima_follow_field_zeros(compressed):
    sol = compressed.solve()
    exact = field_zeros(sol)
    found = numeric_minima(sol, CFG)
    from octupole import make_pattern

    ref = make_pattern(np.column_stack([exact.real, exact.imag]))
    assert minima_metrics(found, ref)[0] < 0.5 * CFG.pixel
    # pixel-centre positions lie on the lattice
    snapped = found.snapped / CFG.pixel
    np.testing.assert_allclose(snapped, np.round(snapped), atol=1e-9)


def test_perfect_trap_has_one_central_minimum(perfect):
    found = numeric_minima(perfect.solve(), CFG)
    assert len(found) == 1
    assert np.hypot(*found.points[0]) < CFG.pixel
