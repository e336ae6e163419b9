"""Two-dimensional Laplace solver for eight circular electrodes.

The potential outside the electrodes is written as the real part of

    Phi(z) = C + sum_k [ q_k log(z - c_k) + sum_n b_kn (rd / (z - c_k))**n ]

with sum_k q_k = 0, so that it stays bounded at infinity (open domain). The
coefficients follow from least-squares collocation of the Dirichlet data on
each circle; since every term is harmonic outside its circle the only error
is the boundary residual, which is checked between collocation points.

Near the trap centre ``Phi`` is analytic, so it is re-expanded as a Taylor
series about the origin (computed by FFT on a circle) for fast evaluation on
pixel grids.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import FlatFieldError, SolverError
from .minima import make_pattern

N_COLLOCATION = 256
HARMONIC_LADDER = (32, 64, 96, 127)
DEFAULT_TOL = 1e-10
DISK_FRACTION = 0.6  # minima are searched within this fraction of r0
SERIES_SAMPLES = 512
SERIES_TERMS = 128


def _build_matrix(z_centers, rd, n_harm, n_col):
    k_el = len(z_centers)
    theta = 2 * np.pi * np.arange(n_col) / n_col
    ncols = 1 + k_el + 2 * n_harm * k_el
    a = np.zeros((k_el * n_col + 1, ncols))
    for k in range(k_el):
        zb = z_centers[k] + rd * np.exp(1j * theta)
        rows = slice(k * n_col, (k + 1) * n_col)
        a[rows, 0] = 1.0
        _fill_row_block(a[rows], zb, z_centers, rd, n_harm)
    a[-1, 1 : 1 + k_el] = 1.0
    return a


def _fill_row_block(block, z, z_centers, rd, n_harm):
    k_el = len(z_centers)
    for j in range(k_el):
        d = z - z_centers[j]
        block[:, 1 + j] = np.log(np.abs(d))
        w = rd / d
        wn = np.ones_like(w)
        base = 1 + k_el + 2 * j * n_harm
        for n in range(n_harm):
            wn = wn * w
            block[:, base + 2 * n] = wn.real
            block[:, base + 2 * n + 1] = -wn.imag


def _unpack(x, k_el, n_harm):
    c0 = x[0]
    q = x[1 : 1 + k_el]
    b = (x[1 + k_el :: 2] + 1j * x[2 + k_el :: 2]).reshape(k_el, n_harm)
    return c0, q, b


def _phi(z, z_centers, rd, c0, q, b):
    z = np.asarray(z, dtype=complex)
    out = np.full(z.shape, c0, dtype=complex)
    for k, c in enumerate(z_centers):
        d = z - c
        w = rd / d
        acc = np.zeros_like(z)
        for n in range(b.shape[1] - 1, -1, -1):
            acc = (acc + b[k, n]) * w
        out += q[k] * np.log(d) + acc
    return out


def _dphi(z, z_centers, rd, q, b):
    z = np.asarray(z, dtype=complex)
    out = np.zeros(z.shape, dtype=complex)
    for k, c in enumerate(z_centers):
        d = z - c
        w = rd / d
        acc = np.zeros_like(z)
        for n in range(b.shape[1] - 1, -1, -1):
            acc = acc * w + b[k, n] * (n + 1)
        out += q[k] / d - acc * w * w / rd
    return out


@dataclass(frozen=True, eq=False)
class FieldSolution:
    """Potential created by one set of electrode potentials."""

    z_centers: np.ndarray
    rd: float
    r0: float
    c0: float
    q: np.ndarray
    b: np.ndarray
    series: np.ndarray  # Taylor coefficients of Phi in w = z / r0
    series_radius: float  # m, series is trusted inside this radius
    residual: float  # max boundary error (V)
    potentials: np.ndarray

    def complex_potential(self, z):
        return _phi(z, self.z_centers, self.rd, self.c0, self.q, self.b)

    def potential(self, z):
        """Potential (V) at complex points ``z`` (m), direct summation."""
        return self.complex_potential(z).real

    def potential_fast(self, z):
        """Potential using the central series where valid, direct summation elsewhere."""
        z = np.asarray(z, dtype=complex)
        out = np.empty(z.shape)
        inner = np.abs(z) <= self.series_radius
        w = z[inner] / self.r0
        acc = np.zeros_like(w)
        for c in self.series[::-1]:
            acc = acc * w + c
        out[inner] = acc.real
        if not inner.all():
            out[~inner] = self.potential(z[~inner])
        return out

    def field(self, z):
        """Complex derivative Phi'(z); the field is E = -conj(Phi'), |E| = |Phi'|."""
        return _dphi(z, self.z_centers, self.rd, self.q, self.b)

    def field_series(self):
        """Taylor coefficients of Phi'(w) (V per r0) about the origin."""
        n = np.arange(1, len(self.series))
        return self.series[1:] * n

    def quad_dip(self):
        """Quadrupole and dipole weights relative to the octupole term.

        The series origin is shifted to cancel the cubic term, so the result
        matches ``c4 (w**4 - A w**2 - B w) + const`` and returns (A, B, c4, shift).
        """
        c = self.series
        shift = -c[3] / (4 * c[4])
        shifted = np.polynomial.Polynomial(c[:40])(np.polynomial.Polynomial([shift, 1.0])).coef
        return -shifted[2] / shifted[4], -shifted[1] / shifted[4], shifted[4], shift * self.r0


class ElectrodeSolver:
    """Boundary solution of one electrode geometry for any set of potentials.

    The collocation matrix is factorised once with the eight unit-potential
    right-hand sides; any potential set is a linear combination of them.
    """

    def __init__(self, layout, n_collocation=N_COLLOCATION, tol=DEFAULT_TOL, harmonics=HARMONIC_LADDER):
        if n_collocation < 256:
            raise ValueError("at least 256 collocation points per electrode are required")
        self.layout = layout
        self.z_centers = layout.z
        self.rd = layout.rd
        self.r0 = layout.r0
        self.n_collocation = n_collocation
        self.tol = tol
        k_el = len(self.z_centers)
        rhs = np.zeros((k_el * n_collocation + 1, k_el))
        for k in range(k_el):
            rhs[k * n_collocation : (k + 1) * n_collocation, k] = 1.0

        best = None
        for n_harm in harmonics:
            n_harm = min(n_harm, (n_collocation - 1) // 2)
            a = _build_matrix(self.z_centers, self.rd, n_harm, n_collocation)
            x = scipy.linalg.lstsq(a, rhs, lapack_driver="gelsy")[0]
            err = self._check_residual(x, n_harm)
            if best is None or err < best[0]:
                best = (err, n_harm, x)
            if err <= tol:
                break
        err, n_harm, x = best
        if not np.isfinite(err) or err > tol:
            raise SolverError(f"boundary residual {err:.3g} above tolerance {tol:.3g}", residual=err)
        self.n_harmonics = n_harm
        self.residual = err
        self._x = x
        self.series_radius, self._series = self._unit_series()

    def _check_residual(self, x, n_harm):
        """Max boundary error of the unit solutions, sampled between collocation points."""
        k_el = len(self.z_centers)
        m = self.n_collocation
        theta = 2 * np.pi * (np.arange(m) + 0.5) / m
        worst = 0.0
        for k in range(k_el):
            zb = self.z_centers[k] + self.rd * np.exp(1j * theta)
            block = np.zeros((m, x.shape[0]))
            block[:, 0] = 1.0
            _fill_row_block(block, zb, self.z_centers, self.rd, n_harm)
            vals = block @ x
            target = np.zeros(k_el)
            target[k] = 1.0
            worst = max(worst, float(np.max(np.abs(vals - target))))
        return worst

    def _unit_series(self):
        inner = float(np.min(np.abs(self.z_centers)) - self.rd)
        if inner <= 0:
            raise SolverError("the origin lies inside an electrode")
        rho = 0.8 * inner
        theta = 2 * np.pi * np.arange(SERIES_SAMPLES) / SERIES_SAMPLES
        zc = rho * np.exp(1j * theta)
        cols = []
        for k in range(len(self.z_centers)):
            c0, q, b = _unpack(self._x[:, k], len(self.z_centers), self.n_harmonics)
            f = _phi(zc, self.z_centers, self.rd, c0, q, b).real
            spec = np.fft.rfft(f) / SERIES_SAMPLES
            n = np.arange(len(spec))
            coef = 2 * spec / (rho / self.r0) ** n
            coef[0] = spec[0].real
            cols.append(coef[:SERIES_TERMS])
        return 0.7 * inner, np.array(cols).T

    def solve(self, potentials=None):
        """Field solution for electrode potentials (V); defaults to the layout's RF potentials."""
        v = self.layout.potentials() if potentials is None else np.asarray(potentials, dtype=float)
        k_el = len(self.z_centers)
        c0, q, b = _unpack(self._x @ v, k_el, self.n_harmonics)
        return FieldSolution(
            z_centers=self.z_centers,
            rd=self.rd,
            r0=self.r0,
            c0=float(c0),
            q=q,
            b=b,
            series=self._series @ v,
            series_radius=self.series_radius,
            residual=self.residual * float(np.sum(np.abs(v))),
            potentials=v,
        )

    def solve_amplitudes(self, amplitudes):
        return self.solve(self.layout.phase_sign * np.asarray(amplitudes, dtype=float))


# --- pixel grids ----------------------------------------------------------

@dataclass(frozen=True)
class BoundaryProblem:
    """A layout to be solved and sampled on a square pixel window.

    ``region`` is the window half-width. It must cover the minima search
    disk (0.6 r0); the default is that disk plus two pixels.
    """

    layout: object
    region: float = None
    d_px: float = 4e-6

    def __post_init__(self):
        if not self.d_px > 0:
            raise ValueError("d_px must be positive")
        region = self.region
        if region is None:
            region = (math.ceil(DISK_FRACTION * self.layout.r0 / self.d_px) + 2) * self.d_px
            object.__setattr__(self, "region", region)
        steps = region / self.d_px
        if abs(steps - round(steps)) > 1e-6:
            raise ValueError("the window half-width must be a whole number of pixels")
        if region < DISK_FRACTION * self.layout.r0:
            raise ValueError("the window must cover the central search disk")

    @property
    def n(self):
        return 2 * int(round(self.region / self.d_px)) + 1


@dataclass(frozen=True, eq=False)
class PotentialGrid:
    """Square grid of samples; pixel (i, j) sits at origin + d_px * (j - c, i - c)."""

    origin: tuple
    d_px: float
    values: np.ndarray
    mask: np.ndarray  # True inside an electrode
    kind: str  # "potential", "field" or "pseudo"
    r0: float = 4e-3
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.values.shape[0]
        if self.values.shape != (n, n) or n % 2 == 0:
            raise ValueError("grid must be square with an odd size")

    @property
    def n(self):
        return self.values.shape[0]

    def coords(self):
        c = self.n // 2
        axis = (np.arange(self.n) - c) * self.d_px
        xx, yy = np.meshgrid(axis + self.origin[0], axis + self.origin[1])
        return xx, yy

    def to_csv(self, path):
        xx, yy = self.coords()
        with open(path, "w") as fh:
            fh.write("x_um,y_um,value\n")
            for x, y, v, m in zip(xx.ravel(), yy.ravel(), self.values.ravel(), self.mask.ravel()):
                if not m:
                    fh.write(f"{x * 1e6:.4f},{y * 1e6:.4f},{v:.12g}\n")


def _electrode_mask(z, z_centers, rd):
    mask = np.zeros(z.shape, dtype=bool)
    for c in z_centers:
        mask |= np.abs(z - c) <= rd
    return mask


def sample_potential(solution, origin, d_px, n):
    """Potential grid of n x n pixels centred on ``origin``."""
    c = n // 2
    axis = (np.arange(n) - c) * d_px
    xx, yy = np.meshgrid(axis + origin[0], axis + origin[1])
    z = xx + 1j * yy
    mask = _electrode_mask(z, solution.z_centers, solution.rd)
    vals = np.zeros(z.shape)
    vals[~mask] = solution.potential_fast(z[~mask])
    return PotentialGrid(tuple(origin), d_px, vals, mask, "potential", solution.r0)


def solve_laplace(problem, solver=None):
    """Solve the problem and sample its potential on the pixel window."""
    solver = solver or ElectrodeSolver(problem.layout)
    solution = solver.solve()
    grid = sample_potential(solution, (0.0, 0.0), problem.d_px, problem.n)
    grid.meta.update(
        d_px=problem.d_px,
        window=problem.region,
        boundary_residual=solution.residual,
        harmonics=solver.n_harmonics,
        collocation=solver.n_collocation,
        tolerance=solver.tol,
    )
    return grid


def field_map(grid):
    """|E0| (V/m) by central differences; masked pixels and their neighbours are excluded."""
    if grid.kind != "potential":
        raise ValueError("field_map needs a potential grid")
    gy, gx = np.gradient(grid.values, grid.d_px)
    mag = np.hypot(gx, gy)
    bad = grid.mask.copy()
    bad[1:, :] |= grid.mask[:-1, :]
    bad[:-1, :] |= grid.mask[1:, :]
    bad[:, 1:] |= grid.mask[:, :-1]
    bad[:, :-1] |= grid.mask[:, 1:]
    bad[[0, -1], :] = True
    bad[:, [0, -1]] = True
    mag[bad] = np.nan
    return PotentialGrid(grid.origin, grid.d_px, mag, bad, "field", grid.r0, dict(grid.meta))


def pseudo_scale_si(cfg):
    """q^2 / (4 m Omega^2), the factor turning |E0|^2 into an energy (J m^2/V^2)."""
    return cfg.charge**2 / (4 * cfg.mass * cfg.omega_rf**2)


def pseudo_map(grid, cfg):
    """Pseudo-potential (J) from a potential grid."""
    f = field_map(grid)
    return PotentialGrid(grid.origin, grid.d_px, pseudo_scale_si(cfg) * f.values**2, f.mask, "pseudo", grid.r0, f.meta)


def _strict_minima(values, valid):
    v = np.where(valid, values, np.inf)
    core = v[1:-1, 1:-1]
    ok = np.isfinite(core)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di or dj:
                nb = v[1 + di : v.shape[0] - 1 + di, 1 + dj : v.shape[1] - 1 + dj]
                ok &= np.isfinite(nb) & (core < nb)
    ii, jj = np.nonzero(ok)
    return ii + 1, jj + 1


_DESIGN = np.array([[1, dx, dy, dx * dx, dx * dy, dy * dy] for dy in (-1, 0, 1) for dx in (-1, 0, 1)], float)
_DESIGN_PINV = np.linalg.pinv(_DESIGN)


def _refine(values, i, j):
    """Sub-pixel offset (in pixels) of a paraboloid fitted over the 3x3 neighbourhood."""
    patch = values[i - 1 : i + 2, j - 1 : j + 2].ravel()
    scale = np.max(np.abs(patch)) or 1.0
    a0, bx, by, cxx, cxy, cyy = _DESIGN_PINV @ (patch / scale)
    hess = np.array([[2 * cxx, cxy], [cxy, 2 * cyy]])
    if np.linalg.det(hess) <= 0 or hess[0, 0] <= 0:
        return 0.0, 0.0
    dx, dy = np.linalg.solve(hess, [-bx, -by])
    if abs(dx) > 1 or abs(dy) > 1:
        return 0.0, 0.0
    return dx, dy


def _grid_minima(grid, center=(0.0, 0.0), radius=None):
    """Strict minima of a pseudo grid: refined positions, pixel centres and values."""
    xx, yy = grid.coords()
    valid = ~grid.mask & np.isfinite(grid.values)
    if radius is not None:
        valid &= np.hypot(xx - center[0], yy - center[1]) <= radius
    ii, jj = _strict_minima(grid.values, valid)
    out = []
    for i, j in zip(ii, jj):
        dx, dy = _refine(grid.values, i, j)
        px = (xx[i, j], yy[i, j])
        out.append(((px[0] + dx * grid.d_px, px[1] + dy * grid.d_px), px, grid.values[i, j]))
    return out


def _pattern_from(found, line_tol):
    if not found:
        raise FlatFieldError("no strict local minimum in the search disk")
    found = sorted(found, key=lambda t: t[2])[:3]
    return make_pattern(
        [f[0] for f in found],
        depths=[f[2] for f in found],
        snapped=[f[1] for f in found],
        line_tol=line_tol,
    )


def find_minima_numeric(grid, radius=None, line_tol=None):
    """Strict local minima of a pseudo-potential grid inside the central disk.

    Positions are refined by a paraboloid fit over each 3x3 neighbourhood;
    the pixel centres are kept in ``snapped``. At most the three deepest
    minima are returned.
    """
    if grid.kind != "pseudo":
        raise ValueError("find_minima_numeric needs a pseudo-potential grid")
    radius = DISK_FRACTION * grid.r0 if radius is None else radius
    found = _grid_minima(grid, (0.0, 0.0), radius)
    return _pattern_from(found, grid.d_px if line_tol is None else line_tol)


def field_zeros(solution, radius=None, newton_steps=30):
    """Zeros of the field inside ``radius`` from the central series (exact minima positions)."""
    radius = DISK_FRACTION * solution.r0 if radius is None else radius
    g = solution.field_series()
    g = np.trim_zeros(g, "b")
    if len(g) < 2:
        return np.zeros(0, dtype=complex)
    roots = np.polynomial.polynomial.polyroots(g)
    roots = roots[np.abs(roots) * solution.r0 <= 1.2 * radius]
    dg = g[1:] * np.arange(1, len(g))
    out = []
    for w in roots:
        for _ in range(newton_steps):
            fw = np.polynomial.polynomial.polyval(w, g)
            dw = np.polynomial.polynomial.polyval(w, dg)
            if dw == 0:
                break
            step = fw / dw
            w = w - step
            if abs(step) < 1e-15:
                break
        if abs(w) * solution.r0 <= radius:
            out.append(w * solution.r0)
    return np.array(out)


def numeric_minima(solution, cfg, d_px=None, offset=(0.0, 0.0), half_patch=8, radius=None):
    """Pixel-grid pseudo-potential minima without sampling the whole disk.

    Candidate positions come from the field zeros of the central series and
    from a coarse grid; around each, a patch of the pixel lattice (aligned on
    ``offset``) is sampled, differentiated and searched as in
    :func:`find_minima_numeric`.
    """
    d_px = cfg.pixel if d_px is None else d_px
    radius = DISK_FRACTION * solution.r0 if radius is None else radius
    seeds = list(field_zeros(solution, radius))
    coarse = 4 * d_px
    n_coarse = 2 * int(radius / coarse) + 3
    grid = sample_potential(solution, (0.0, 0.0), coarse, n_coarse)
    for (x, y), _, _ in _grid_minima(pseudo_map(grid, cfg), (0.0, 0.0), radius):
        seeds.append(complex(x, y))
    found = {}
    n = 2 * half_patch + 1
    for s in seeds:
        ci = round((s.real - offset[0]) / d_px)
        cj = round((s.imag - offset[1]) / d_px)
        origin = (offset[0] + ci * d_px, offset[1] + cj * d_px)
        patch = pseudo_map(sample_potential(solution, origin, d_px, n), cfg)
        for pos, px, val in _grid_minima(patch, (0.0, 0.0), radius):
            key = (round((px[0] - offset[0]) / d_px), round((px[1] - offset[1]) / d_px))
            # discard minima on the patch rim, they are re-found from their own seed
            if max(abs(key[0] - ci), abs(key[1] - cj)) >= half_patch - 1:
                continue
            found[key] = (pos, px, val)
    return _pattern_from(list(found.values()), d_px)


def write_manifest(path, items):
    from . import kvfile

    kvfile.write(path, items, header="run manifest")
