"""Analytic RF surface of a perturbed octupole and its pseudo-potential.

The instantaneous potential is ``h0 [U4 - W]`` with
``W = a1 U2 + a2 V2 + a3 U1 + a4 V1``. In complex notation, with
``w = (x + i y) / r_bar0``, ``A = a1 - i a2`` and ``B = a3 - i a4``::

    U4 - W = Re f(w),   f(w) = w**4 - A w**2 - B w

so the field amplitude is ``|f'(w)| / r_bar0`` and the pseudo-potential is
``K |f'(w)|**2``. Because ``f'`` is a cubic polynomial, the pseudo-potential
minima are its (at most three) zeros; they always have their barycentre at
the origin.
"""

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .errors import ModelViolationError
from .minima import make_pattern

_RATIO_RANGE = (0.02, 0.55)

# polynomial coefficients in ratio = rd/r0, lowest order first
H0_POLY = (-0.4557, -7.028, 53.7, -254.0, 687.0, -973.0, 556.0)
HC_POLY = (0.565, 1.138, -2.073, 3.021, -1.995)
HL_POLY = (1.141, 4.869, -5.880, 10.696, -6.975)
HP_POLY = (0.614, 5.639, -16.260, 29.980, -22.084)
HH_POLY = (4.208, 4.989, -3.753, -0.0025, 2.1279)
HH_REFERENCE = 1.404  # reference shearing constant for rd/r0 = 0.375
HP_PRIME = 0.1

# Shearing constant refitted against the Laplace solver:
# run_h_calibration("shearing", [0.0319, 0.06], rd/r0 from 0.02 to 0.52)
HH_CALIBRATED_POLY = (1.59218, -2.38016, 11.3283, -23.4118, 17.4876)

HH_MODES = ("calibrated", "polynomial", "reference")


def _poly(coefs, x):
    return float(np.polynomial.polynomial.polyval(x, coefs))


@dataclass(frozen=True)
class ScalingCoeffs:
    h0: float
    hc: float
    hl: float
    hp: float
    hh: float
    hp_prime: float = HP_PRIME
    ratio: float = float("nan")
    extrapolated: bool = False
    hh_mode: str = "calibrated"

    def with_(self, **changes):
        return replace(self, **changes)


def scaling_coeffs(ratio, hh_mode="calibrated"):
    """Scaling constants for a trap of radius ratio ``rd/r0``.

    ``h0`` is returned as the magnitude of its fitted polynomial: the sign
    only flips the potential, which the pseudo-potential cannot see.
    ``hh_mode`` selects the shearing constant: ``"polynomial"`` evaluates the
    fitted polynomial, ``"reference"`` returns 1.404 regardless of ratio and
    ``"calibrated"`` uses the polynomial refitted against the Laplace solver.
    """
    if hh_mode not in HH_MODES:
        raise ValueError(f"hh_mode must be one of {HH_MODES}")
    lo, hi = _RATIO_RANGE
    extrapolated = not lo <= ratio <= hi
    if extrapolated:
        warnings.warn(f"rd/r0 = {ratio:g} outside the fitted range [{lo}, {hi}]", stacklevel=2)
    if hh_mode == "polynomial":
        hh = _poly(HH_POLY, ratio)
    elif hh_mode == "reference":
        hh = HH_REFERENCE
    else:
        hh = _poly(HH_CALIBRATED_POLY, ratio)
    return ScalingCoeffs(
        h0=abs(_poly(H0_POLY, ratio)),
        hc=_poly(HC_POLY, ratio),
        hl=_poly(HL_POLY, ratio),
        hp=_poly(HP_POLY, ratio),
        hh=hh,
        ratio=float(ratio),
        extrapolated=extrapolated,
        hh_mode=hh_mode,
    )


@dataclass(frozen=True)
class PerturbationCoeffs:
    a1: float = 0.0
    a2: float = 0.0
    a3: float = 0.0
    a4: float = 0.0
    h0: float = 1.0
    r_bar0: float = 4e-3

    BOUND = 0.15

    @classmethod
    def from_vector(cls, a, h0=1.0, r_bar0=4e-3):
        a1, a2, a3, a4 = (float(v) for v in a)
        return cls(a1, a2, a3, a4, h0, r_bar0)

    @property
    def vector(self):
        return np.array([self.a1, self.a2, self.a3, self.a4])

    @property
    def within_bounds(self):
        return bool(np.all(np.abs(self.vector) <= self.BOUND))

    @property
    def quad(self):
        return complex(self.a1, -self.a2)

    @property
    def dip(self):
        return complex(self.a3, -self.a4)

    def with_(self, **changes):
        return replace(self, **changes)

    def __add__(self, other):
        return self.with_(**dict(zip(("a1", "a2", "a3", "a4"), self.vector + other.vector)))

    def __neg__(self):
        return self.with_(**dict(zip(("a1", "a2", "a3", "a4"), -self.vector)))


# --- basis surfaces -------------------------------------------------------

def basis_eval(kind, point, r_norm):
    """One of the normalised multipole surfaces U1, V1, U2, V2, U4, V4."""
    if not r_norm > 0:
        raise ValueError("r_norm must be positive")
    x, y = (np.asarray(c, dtype=float) / r_norm for c in point)
    if kind == "U1":
        return x
    if kind == "V1":
        return y
    if kind == "U2":
        return x * x - y * y
    if kind == "V2":
        return 2 * x * y
    if kind == "U4":
        return x**4 - 6 * x * x * y * y + y**4
    if kind == "V4":
        return 4 * x * y * (x * x - y * y)
    raise ValueError(f"unknown basis surface {kind!r}")


def _w(coeffs, point):
    x, y = (np.asarray(c, dtype=float) for c in point)
    return (x + 1j * y) / coeffs.r_bar0


def _fprime(coeffs, w):
    return 4 * w**3 - 2 * coeffs.quad * w - coeffs.dip


def analytic_rf_surface(coeffs, point):
    """``h0 [U4 - W]`` at ``point`` (dimensionless)."""
    w = _w(coeffs, point)
    return coeffs.h0 * np.real(w**4 - coeffs.quad * w**2 - coeffs.dip * w)


def pseudo_scale(coeffs, cfg):
    """Prefactor K (J) such that V* = K |f'(w)|^2."""
    return (cfg.charge * cfg.v_rf * coeffs.h0) ** 2 / (4 * cfg.mass * cfg.omega_rf**2 * coeffs.r_bar0**2)


def analytic_pseudo(coeffs, cfg, point):
    """Pseudo-potential (J) at ``point``."""
    g = _fprime(coeffs, _w(coeffs, point))
    return pseudo_scale(coeffs, cfg) * np.abs(g) ** 2


def analytic_pseudo_gradient(coeffs, cfg, point):
    """Closed-form gradient (J/m) of the pseudo-potential, returned as (dx, dy)."""
    w = _w(coeffs, point)
    g = _fprime(coeffs, w)
    g2 = 12 * w**2 - 2 * coeffs.quad
    # |g|^2 with g holomorphic: d/dx = 2 Re(conj(g) g'), d/dy = -2 Im(conj(g) g')
    t = np.conj(g) * g2 * (2 * pseudo_scale(coeffs, cfg) / coeffs.r_bar0)
    return np.real(t), -np.imag(t)


def field_amplitude(coeffs, cfg, point):
    """RF field amplitude |E0| (V/m)."""
    return cfg.v_rf * coeffs.h0 * np.abs(_fprime(coeffs, _w(coeffs, point))) / coeffs.r_bar0


# --- minima ---------------------------------------------------------------

def _dedupe(points, tol):
    kept = []
    for p in points:
        if all(abs(p - q) > tol for q in kept):
            kept.append(p)
    return kept


def _minima_roots(coeffs):
    roots = np.roots([4.0, 0.0, -2 * coeffs.quad, -coeffs.dip])
    if roots.size == 0:
        roots = np.zeros(1, dtype=complex)
    return roots


def _minima_descent(coeffs, cfg, radius):
    """Grid seeds at pixel resolution, then gradient descent with backtracking."""
    step = cfg.pixel
    n = int(radius / step)
    axis = np.arange(-n, n + 1) * step
    xx, yy = np.meshgrid(axis, axis)
    inside = xx**2 + yy**2 <= radius**2
    v = np.where(inside, analytic_pseudo(coeffs, cfg, (xx, yy)), np.inf)
    core = v[1:-1, 1:-1]
    is_min = np.ones_like(core, dtype=bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di or dj:
                is_min &= core <= v[1 + di : v.shape[0] - 1 + di, 1 + dj : v.shape[1] - 1 + dj]
    is_min &= np.isfinite(core)
    ii, jj = np.nonzero(is_min)
    out = []
    for i, j in zip(ii + 1, jj + 1):
        p = np.array([xx[i, j], yy[i, j]])
        f = analytic_pseudo(coeffs, cfg, p)
        for _ in range(200):
            gx, gy = analytic_pseudo_gradient(coeffs, cfg, p)
            gnorm = math.hypot(gx, gy)
            if gnorm == 0:
                break
            t = step / gnorm
            while t * gnorm > 1e-15 * coeffs.r_bar0:
                q = p - t * np.array([gx, gy])
                fq = analytic_pseudo(coeffs, cfg, q)
                if fq < f - 1e-4 * t * gnorm**2:
                    p, f = q, fq
                    break
                t /= 2
            else:
                break
        out.append(complex(p[0], p[1]) / coeffs.r_bar0)
    return np.array(out)


def analytic_minima(coeffs, cfg, method="roots", radius_fraction=0.6):
    """All pseudo-potential minima inside ``radius_fraction * r_bar0``.

    ``method="roots"`` takes them as the zeros of the field (exact);
    ``method="descent"`` runs a pixel-grid multi-start descent.
    Points closer than a quarter pixel are merged.
    """
    radius = radius_fraction * coeffs.r_bar0
    if method == "roots":
        w = _minima_roots(coeffs)
    elif method == "descent":
        w = _minima_descent(coeffs, cfg, radius)
    else:
        raise ValueError("method must be 'roots' or 'descent'")
    z = [complex(v) * coeffs.r_bar0 for v in w if abs(v) * coeffs.r_bar0 <= radius]
    z = _dedupe(z, cfg.pixel / 4)
    if len(z) > 3:
        raise ModelViolationError(f"{len(z)} minima found, the model supports at most 3")
    if not z:
        raise ModelViolationError("no minimum inside the model validity disk")
    pts = np.array([[p.real, p.imag] for p in z])
    depths = analytic_pseudo(coeffs, cfg, pts.T)
    return make_pattern(pts, depths=depths)


# --- defects to coefficients ---------------------------------------------

def coeffs_from_defects(defects, scaling, split_correction=True):
    """Perturbation coefficients of a defect composition.

    Compression and shearing carry the quadrupole-rotation factors; the
    non-angular defects are rescaled by ``1 + 2|delta|/pi`` and shearing by
    ``1 + |delta|/pi``. With ``split_correction`` the splitting adds the
    quadrupole term ``hp' [(y0^2 - x0^2) U2 + 2 x0 y0 V2] / |(x0, y0)|``.
    """
    d = defects
    s = scaling
    f1 = 1 + abs(d.delta) / math.pi
    f2 = 1 + 2 * abs(d.delta) / math.pi
    rr = d.delta_r / d.r_bar0
    bt = d.beta_t * (1 - 3 * rr)
    bs = d.beta_s * (1 + 3 * rr)
    c2, s2 = math.cos(2 * d.delta), math.sin(2 * d.delta)
    c1, s1 = math.cos(d.delta), math.sin(d.delta)

    a1 = s.hc * f2 * (d.l_s * c2 - d.l_t * s2) + s.hh * f1 * (bt * c1 + bs * s1)
    a2 = s.hc * f2 * (d.l_t * c2 - d.l_s * s2) + s.hh * f1 * (bt * s1 + bs * c1)

    k = 4 * d.beta_t / math.pi
    shear_t = math.sin(2 * d.beta_t) * math.cos(2 * d.beta_s)
    shear_s = math.sin(2 * d.beta_s)
    a3 = f2 * (
        s.hl * ((1 + k) * d.xl_s + d.xl_t - k * d.yl_t)
        + s.hp * ((1 + shear_t) * d.x0 - shear_s * d.y0)
    )
    a4 = f2 * (
        s.hl * ((1 - k) * d.yl_s + d.yl_t - k * d.xl_t)
        + s.hp * ((1 - shear_t) * d.y0 - shear_s * d.x0)
    )

    rho = math.hypot(d.x0, d.y0)
    if split_correction and rho > 0:
        a1 += f2 * s.hp_prime * (d.y0**2 - d.x0**2) / rho
        a2 += f2 * s.hp_prime * 2 * d.x0 * d.y0 / rho
    return PerturbationCoeffs(a1, a2, a3, a4, s.h0, d.r_bar0)


# --- files ----------------------------------------------------------------

def coeffs_to_items(coeffs):
    return {
        "a1": coeffs.a1,
        "a2": coeffs.a2,
        "a3": coeffs.a3,
        "a4": coeffs.a4,
        "h0": coeffs.h0,
        "r_bar0_mm": coeffs.r_bar0 * 1e3,
    }


def coeffs_from_items(items):
    from .kvfile import get_float

    return PerturbationCoeffs(
        *(get_float(items, k, 0.0) for k in ("a1", "a2", "a3", "a4")),
        h0=get_float(items, "h0", 1.0),
        r_bar0=get_float(items, "r_bar0_mm", 4.0) * 1e-3,
    )


def write_minima_csv(path, pattern):
    """Minima table with columns x_um, y_um, depth_uK."""
    from scipy.constants import k as k_b

    depths = pattern.depths if pattern.depths is not None else np.full(len(pattern.points), np.nan)
    lines = ["x_um,y_um,depth_uK"]
    for (x, y), e in zip(pattern.points, depths):
        lines.append(f"{x * 1e6:.6f},{y * 1e6:.6f},{e / k_b * 1e6:.6g}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
