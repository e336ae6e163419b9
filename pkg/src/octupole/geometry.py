"""Electrode layouts of an 8-rod trap and their description by five defect classes.

Frame and indexing
------------------
Electrode ``k`` nominally sits at polar angle ``pi/2 - k*pi/4``: index 0 on the
+y axis, then clockwise (1 at 45 deg, 2 on +x, ...). Even indices form the
S-set (on the frame axes, RF phase +1), odd indices the T-set (phase -1).
With this numbering the per-electrode bias pattern in
:func:`octupole.compensation.voltages_from_coeffs` produces the perturbation
``U4 - W`` with positive calibration constants.

Defect parameters
-----------------
Facing pairs: S-x = (2, 6), S-y = (0, 4), T-plus = (1, 5) along x+y,
T-minus = (3, 7) along x-y. For each pair ``D`` is the centre distance,
``m`` the midpoint and ``theta`` the direction from its second to its first
electrode.

* ``l_s = (D_x - D_y) / r_bar0``, ``l_t = (D_minus - D_plus) / r_bar0``
  (compression, split symmetrically between the two pairs of a set).
* ``M_S``/``M_T`` are the crossing points of the two pair lines of a set.
  Sliding sums the midpoint offsets ``m - M_S`` (S-set) or ``M_T - m``
  (T-set), each scaled by the half centre distance ``D/2`` of its pair.
* ``(x0, y0) = (M_S - M_T) / r_bar0`` (splitting).
* ``beta_s``: the S-x line sits at ``phi_S - beta_s`` and the S-y line at
  ``pi/2 + phi_S + beta_s``; ``beta_t``: T-plus at ``pi/4 + phi_T - beta_t``,
  T-minus at ``-pi/4 + phi_T + beta_t``.
* ``delta``: the S-set orientation is ``phi_S = -delta`` and the T-set
  ``phi_T = +delta``; the common orientation is the global rotation, which
  is not a defect and is projected out by :func:`decompose_layout`.
* ``r_bar0`` is the mean inner radius of the four pairs and ``delta_r`` the
  T-set inner radius minus the S-set one.

These orientations make the coefficient equations of
:func:`octupole.analytic.coeffs_from_defects` agree in sign with the Laplace
solution of the same layout.
"""

from dataclasses import dataclass, field, fields, replace

import numpy as np
from scipy import constants

from . import kvfile
from .errors import DecompositionError, InvalidGeometryError

N_ELECTRODES = 8
NOMINAL_ANGLES = np.pi / 2 - np.arange(N_ELECTRODES) * np.pi / 4
PHASE_SIGN = np.array([1.0, -1.0] * 4)

# (first, second) electrode of each facing pair
PAIR_X, PAIR_Y, PAIR_PLUS, PAIR_MINUS = (2, 6), (0, 4), (1, 5), (3, 7)

_ANGLE_FIELDS = ("beta_s", "beta_t", "delta")
_LENGTH_FIELDS = ("r_bar0", "delta_r")


@dataclass(frozen=True)
class TrapConfig:
    """Physical constants of the trap and of the imaging grid (SI units).

    Defaults: r0 = 4 mm, rd = 1.5 mm, 200 V at 2*pi*3 MHz, a singly charged
    ion of 40 u, 4 um pixels.
    """

    r0: float = 4e-3
    rd: float = 1.5e-3
    v_rf: float = 200.0
    omega_rf: float = 2 * np.pi * 3e6
    charge: float = constants.e
    mass: float = 40 * constants.atomic_mass
    pixel: float = 4e-6

    def __post_init__(self):
        if not self.r0 > 0:
            raise ValueError("r0 must be positive")
        if not 0 < self.rd < self.r0:
            raise ValueError("rd must satisfy 0 < rd < r0")
        if not 0 < self.pixel <= self.r0 / 100:
            raise ValueError("pixel must satisfy 0 < pixel <= r0/100")
        if self.omega_rf <= 0 or self.mass <= 0:
            raise ValueError("omega_rf and mass must be positive")

    @property
    def ratio(self):
        return self.rd / self.r0

    @property
    def radius(self):
        """Nominal centre-to-electrode-centre distance r0 + rd."""
        return self.r0 + self.rd

    def with_(self, **changes):
        return replace(self, **changes)


@dataclass(frozen=True)
class DefectSet:
    """Reduced geometric defect parameters (dimensionless unless noted)."""

    l_s: float = 0.0
    l_t: float = 0.0
    xl_s: float = 0.0
    yl_s: float = 0.0
    xl_t: float = 0.0
    yl_t: float = 0.0
    x0: float = 0.0
    y0: float = 0.0
    beta_s: float = 0.0  # rad
    beta_t: float = 0.0  # rad
    delta: float = 0.0  # rad
    r_bar0: float = 4e-3  # m
    delta_r: float = 0.0  # m

    @classmethod
    def for_trap(cls, cfg, **params):
        return cls(r_bar0=cfg.r0, **params)

    @property
    def within_bounds(self):
        angles_ok = all(abs(getattr(self, n)) <= np.pi / 15 for n in _ANGLE_FIELDS)
        dimless = [f.name for f in fields(self) if f.name not in _ANGLE_FIELDS + _LENGTH_FIELDS]
        return angles_ok and all(abs(getattr(self, n)) <= 0.15 for n in dimless) and self.r_bar0 > 0

    def as_vector(self):
        """All 13 fields in declaration order, lengths in units of r_bar0."""
        values = [getattr(self, f.name) for f in fields(self)]
        values[-2] = 1.0
        values[-1] = self.delta_r / self.r_bar0
        return np.array(values)

    def max_difference(self, other):
        """Largest component difference (lengths relative to r_bar0)."""
        a, b = self.as_vector(), other.as_vector()
        a[-2] = self.r_bar0 / other.r_bar0
        return float(np.max(np.abs(a - b)))


@dataclass(frozen=True, eq=False)
class ElectrodeLayout:
    """An as-built trap: eight electrode centres (m), their radius and RF amplitudes."""

    centers: np.ndarray
    rd: float
    amplitudes: np.ndarray
    r0: float = 4e-3
    phase_sign: np.ndarray = field(default_factory=lambda: PHASE_SIGN.copy())

    def __post_init__(self):
        centers = np.array(self.centers, dtype=float).reshape(N_ELECTRODES, 2)
        amps = np.broadcast_to(np.asarray(self.amplitudes, dtype=float), (N_ELECTRODES,)).copy()
        sign = np.array(self.phase_sign, dtype=float)
        if not np.array_equal(sign, PHASE_SIGN):
            raise InvalidGeometryError("phase_sign must alternate +1/-1 starting with +1")
        for name, arr in (("centers", centers), ("amplitudes", amps), ("phase_sign", sign)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        gap = min_center_distance(centers)
        if gap <= 2 * self.rd:
            raise InvalidGeometryError(
                f"electrode circles overlap (closest centres {gap:.6g} m, diameter {2 * self.rd:.6g} m)"
            )

    @classmethod
    def perfect(cls, cfg):
        return cls(nominal_centers(cfg.radius), cfg.rd, cfg.v_rf, cfg.r0)

    @property
    def z(self):
        return self.centers[:, 0] + 1j * self.centers[:, 1]

    def potentials(self):
        """Instantaneous RF potential amplitude on each electrode (V)."""
        return self.phase_sign * self.amplitudes

    def with_amplitudes(self, amplitudes):
        return replace(self, amplitudes=amplitudes)

    def with_bias(self, dv, v_rf):
        """Electrode amplitudes for biases ``dv`` added to the signed RF potentials."""
        return self.with_amplitudes(v_rf + self.phase_sign * np.asarray(dv, dtype=float))

    def with_centers(self, centers):
        return replace(self, centers=centers)

    def rotated(self, angle):
        rot = np.exp(1j * angle) * self.z
        return self.with_centers(np.column_stack([rot.real, rot.imag]))

    def translated(self, shift):
        return self.with_centers(self.centers + np.asarray(shift, dtype=float))

    def __eq__(self, other):
        if not isinstance(other, ElectrodeLayout):
            return NotImplemented
        return (
            np.array_equal(self.centers, other.centers)
            and self.rd == other.rd
            and self.r0 == other.r0
            and np.array_equal(self.amplitudes, other.amplitudes)
        )

    __hash__ = None


@dataclass(frozen=True)
class Decomposition:
    defects: DefectSet
    residual_rms: float  # m
    rotation: float  # rad, global rotation removed before decomposition
    translation: tuple  # m, midpoint of M_S and M_T


def nominal_centers(radius):
    return np.column_stack([radius * np.cos(NOMINAL_ANGLES), radius * np.sin(NOMINAL_ANGLES)])


def min_center_distance(centers):
    c = np.asarray(centers)
    d = np.hypot(*(c[:, None, :] - c[None, :, :]).transpose(2, 0, 1))
    d[np.diag_indices(len(c))] = np.inf
    return float(d.min())


def _unit(theta):
    return np.exp(1j * theta)


def _slide_offsets(xl, yl, th1, th2, half1, half2):
    """Signed distances t1, t2 along two lines whose scaled projections sum to (xl, yl)."""
    m = np.array([[np.cos(th1) / half1, np.cos(th2) / half2], [np.sin(th1) / half1, np.sin(th2) / half2]])
    return np.linalg.solve(m, [xl, yl])


def layout_from_defects(defects, cfg, amplitudes=None):
    """Electrode layout realising ``defects`` exactly (no global rotation,
    origin halfway between the S- and T-set crossing points)."""
    d = defects
    rb, rd = d.r_bar0, cfg.rd
    r_s, r_t = rb - d.delta_r / 2, rb + d.delta_r / 2
    phi_s, phi_t = -d.delta, d.delta

    th_x = phi_s - d.beta_s
    th_y = np.pi / 2 + phi_s + d.beta_s
    th_p = np.pi / 4 + phi_t - d.beta_t
    th_m = -np.pi / 4 + phi_t + d.beta_t

    dx = 2 * (r_s + rd) + d.l_s * rb / 2
    dy = 2 * (r_s + rd) - d.l_s * rb / 2
    dp = 2 * (r_t + rd) - d.l_t * rb / 2
    dm = 2 * (r_t + rd) + d.l_t * rb / 2
    if min(dx, dy, dp, dm) <= 2 * rd:
        raise InvalidGeometryError("facing electrodes overlap")

    split = rb * (d.x0 + 1j * d.y0)
    ms, mt = split / 2, -split / 2

    tx, ty = _slide_offsets(d.xl_s, d.yl_s, th_x, th_y, dx / 2, dy / 2)
    tp, tm = _slide_offsets(d.xl_t, d.yl_t, th_p, th_m, dp / 2, dm / 2)
    mid = {
        PAIR_X: (ms + tx * _unit(th_x), dx, th_x),
        PAIR_Y: (ms + ty * _unit(th_y), dy, th_y),
        PAIR_PLUS: (mt - tp * _unit(th_p), dp, th_p),
        PAIR_MINUS: (mt - tm * _unit(th_m), dm, th_m),
    }
    z = np.empty(N_ELECTRODES, dtype=complex)
    for (i, j), (m, length, th) in mid.items():
        z[i] = m + length / 2 * _unit(th)
        z[j] = m - length / 2 * _unit(th)
    amps = cfg.v_rf if amplitudes is None else amplitudes
    return ElectrodeLayout(np.column_stack([z.real, z.imag]), rd, amps, cfg.r0)


def _crossing(m1, th1, m2, th2):
    """Intersection of two lines given by a point and a direction angle."""
    u1, u2 = _unit(th1), _unit(th2)
    cross = (u2.conjugate() * u1).imag
    if abs(cross) < 1e-12:
        return (m1 + m2) / 2
    # m1 + s*u1 = m2 + t*u2, solved by projecting onto the normal of u2
    s = (u2.conjugate() * (m2 - m1)).imag / cross
    return m1 + s * u1


def _pair(z, pair):
    a, b = z[pair[0]], z[pair[1]]
    return (a + b) / 2, abs(a - b), np.angle(a - b)


def _wrap_near(theta, ref):
    return ref + (theta - ref + np.pi) % (2 * np.pi) - np.pi


def _set_geometry(z):
    mx, dx, th_x = _pair(z, PAIR_X)
    my, dy, th_y = _pair(z, PAIR_Y)
    mp, dp, th_p = _pair(z, PAIR_PLUS)
    mm, dm, th_m = _pair(z, PAIR_MINUS)
    th_x, th_y = _wrap_near(th_x, 0.0), _wrap_near(th_y, np.pi / 2)
    th_p, th_m = _wrap_near(th_p, np.pi / 4), _wrap_near(th_m, -np.pi / 4)
    return (mx, dx, th_x), (my, dy, th_y), (mp, dp, th_p), (mm, dm, th_m)


def global_rotation(layout):
    """Common orientation of the S- and T-sets (rad)."""
    (_, _, th_x), (_, _, th_y), (_, _, th_p), (_, _, th_m) = _set_geometry(layout.z)
    phi_s = (th_x + th_y - np.pi / 2) / 2
    phi_t = (th_p + th_m) / 2
    return (phi_s + phi_t) / 2


def remove_global_rotation(layout):
    """Rotate the layout about the origin so that it carries no global rotation."""
    angle = global_rotation(layout)
    return layout.rotated(-angle), angle


def _check_near_nominal(z):
    z = z - z.mean()
    radius = np.mean(np.abs(z))
    off = np.abs(z - radius * _unit(NOMINAL_ANGLES))
    if np.any(off > 0.15 * radius):
        raise DecompositionError(
            f"electrode {int(np.argmax(off))} is more than 15% of r0+rd away from its site",
            residual=float(off.max()),
        )


def _decompose_unrotated(z, rd):
    (mx, dx, th_x), (my, dy, th_y), (mp, dp, th_p), (mm, dm, th_m) = _set_geometry(z)
    phi_s = (th_x + th_y - np.pi / 2) / 2
    phi_t = (th_p + th_m) / 2
    beta_s = (th_y - np.pi / 2 - th_x) / 2
    beta_t = (th_m - th_p + np.pi / 2) / 2
    delta = (phi_t - phi_s) / 2

    ms = _crossing(mx, th_x, my, th_y)
    mt = _crossing(mp, th_p, mm, th_m)
    r_s = (dx + dy) / 4 - rd
    r_t = (dp + dm) / 4 - rd
    rb = (r_s + r_t) / 2

    slide_s = (mx - ms) / (dx / 2) + (my - ms) / (dy / 2)
    slide_t = (mt - mp) / (dp / 2) + (mt - mm) / (dm / 2)
    split = (ms - mt) / rb
    defects = DefectSet(
        l_s=(dx - dy) / rb,
        l_t=(dm - dp) / rb,
        xl_s=slide_s.real,
        yl_s=slide_s.imag,
        xl_t=slide_t.real,
        yl_t=slide_t.imag,
        x0=split.real,
        y0=split.imag,
        beta_s=beta_s,
        beta_t=beta_t,
        delta=delta,
        r_bar0=rb,
        delta_r=r_t - r_s,
    )
    return defects, (ms + mt) / 2


def decompose_layout(layout):
    """Map an arbitrary layout onto the defect basis.

    The 16 centre coordinates are in one-to-one correspondence with the 13
    defect parameters plus a global translation and rotation, so the inverse
    is closed-form; the residual RMS of the re-synthesised layout is returned
    as a consistency check.
    """
    z0 = layout.z
    angle = global_rotation(layout)
    z = np.exp(-1j * angle) * z0
    _check_near_nominal(z)
    defects, origin = _decompose_unrotated(z, layout.rd)

    cfg = TrapConfig(r0=layout.r0, rd=layout.rd, v_rf=1.0)
    try:
        rebuilt = layout_from_defects(defects, cfg)
    except InvalidGeometryError as exc:
        raise DecompositionError(f"decomposed defects are not realisable: {exc}") from exc
    back = (rebuilt.z + origin) * np.exp(1j * angle)
    residual = float(np.sqrt(np.mean(np.abs(back - z0) ** 2)))
    if not np.isfinite(residual) or residual > 1e-9 * layout.r0:
        raise DecompositionError("decomposition did not reproduce the layout", residual=residual)
    shift = origin * np.exp(1j * angle)
    return Decomposition(defects, residual, float(angle), (float(shift.real), float(shift.imag)))


def random_layout(seed, fraction, cfg=None):
    """Perfect layout with every centre moved by ``fraction*(r0+rd)`` in a
    uniformly random direction."""
    cfg = cfg or TrapConfig()
    if not 0 <= fraction <= 0.04:
        raise ValueError("fraction must lie in [0, 0.04]")
    rng = np.random.default_rng(seed)
    phi = rng.uniform(0, 2 * np.pi, N_ELECTRODES)
    shift = fraction * cfg.radius * np.column_stack([np.cos(phi), np.sin(phi)])
    return ElectrodeLayout(nominal_centers(cfg.radius) + shift, cfg.rd, cfg.v_rf, cfg.r0)


# --- text files -----------------------------------------------------------

def layout_to_items(layout):
    items = {"r0_mm": layout.r0 * 1e3, "rd_mm": layout.rd * 1e3}
    for k, (x, y) in enumerate(layout.centers):
        items[f"electrode{k}_x_mm"] = x * 1e3
        items[f"electrode{k}_y_mm"] = y * 1e3
    if np.any(layout.amplitudes != layout.amplitudes[0]):
        for k, amp in enumerate(layout.amplitudes):
            items[f"electrode{k}_amp_V"] = float(amp)
    else:
        items["amp_V"] = float(layout.amplitudes[0])
    return {k: float(v) for k, v in items.items()}


def layout_from_items(items):
    r0 = kvfile.get_float(items, "r0_mm") * 1e-3
    rd = kvfile.get_float(items, "rd_mm") * 1e-3
    centers = [
        (kvfile.get_float(items, f"electrode{k}_x_mm") * 1e-3, kvfile.get_float(items, f"electrode{k}_y_mm") * 1e-3)
        for k in range(N_ELECTRODES)
    ]
    if "electrode0_amp_V" in items:
        amps = [kvfile.get_float(items, f"electrode{k}_amp_V") for k in range(N_ELECTRODES)]
    else:
        amps = kvfile.get_float(items, "amp_V", 1.0)
    return ElectrodeLayout(centers, rd, amps, r0)


def write_layout(path, layout):
    kvfile.write(path, layout_to_items(layout), header="electrode layout (mm)")


def read_layout(path):
    return layout_from_items(kvfile.read(path))


def defects_to_items(defects):
    items = {}
    for f in fields(defects):
        value = getattr(defects, f.name)
        if f.name in _ANGLE_FIELDS:
            items[f"{f.name}_mrad"] = value * 1e3
        elif f.name in _LENGTH_FIELDS:
            items[f"{f.name}_mm"] = value * 1e3
        else:
            items[f.name] = value
    return {k: float(v) for k, v in items.items()}


def defects_from_items(items):
    values = {}
    for f in fields(DefectSet):
        if f.name in _ANGLE_FIELDS:
            values[f.name] = kvfile.get_float(items, f"{f.name}_mrad", 0.0) * 1e-3
        elif f.name in _LENGTH_FIELDS:
            default = 4.0 if f.name == "r_bar0" else 0.0
            values[f.name] = kvfile.get_float(items, f"{f.name}_mm", default) * 1e-3
        else:
            values[f.name] = kvfile.get_float(items, f.name, 0.0)
    return DefectSet(**values)


def write_defects(path, defects):
    kvfile.write(path, defects_to_items(defects), header="defect set (angles in mrad, lengths in mm)")


def read_defects(path):
    return defects_from_items(kvfile.read(path))
