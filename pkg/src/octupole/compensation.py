"""Diagnosis of perturbation coefficients from minima positions and their
compensation by per-electrode RF amplitude biases."""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.constants import k as K_BOLTZMANN

from . import kvfile
from .analytic import PerturbationCoeffs, analytic_minima
from .errors import CalibrationError, DiagnosisError, FlatFieldError, ModelViolationError, PatternMismatchError
from .geometry import N_ELECTRODES, ElectrodeLayout, global_rotation
from .minima import make_pattern, minima_metrics, pair_distances
from .solver import ElectrodeSolver, field_zeros, numeric_minima

# electrode angles for the bias pattern: index 0 on +y, clockwise
_THETA = np.pi / 2 - np.arange(N_ELECTRODES) * np.pi / 4

Q_CAL_REFERENCE = 0.796
D_CAL_REFERENCE = 0.912


@dataclass(frozen=True)
class CalibrationConstants:
    d_cal: float = D_CAL_REFERENCE
    q_cal: float = Q_CAL_REFERENCE
    d_px_used: float = 1e-6
    d_range: tuple = None
    q_range: tuple = None
    ratio: float = 0.375

    def __post_init__(self):
        if not (self.d_cal > 0 and self.q_cal > 0):
            raise ValueError("calibration constants must be positive")

    def to_items(self):
        return {"d_cal": self.d_cal, "q_cal": self.q_cal, "d_px_um": self.d_px_used * 1e6, "ratio": self.ratio}

    def write(self, path):
        kvfile.write(path, self.to_items(), header="voltage-map calibration")

    @classmethod
    def read(cls, path):
        items = kvfile.read(path)
        return cls(
            d_cal=kvfile.get_float(items, "d_cal"),
            q_cal=kvfile.get_float(items, "q_cal"),
            d_px_used=kvfile.get_float(items, "d_px_um", 1.0) * 1e-6,
            ratio=kvfile.get_float(items, "ratio", 0.375),
        )


@dataclass(frozen=True, eq=False)
class VoltageBias:
    """Amplitude biases (V) added to the signed RF potential of each electrode."""

    dv: np.ndarray

    def __post_init__(self):
        dv = np.array(self.dv, dtype=float).reshape(N_ELECTRODES)
        dv.setflags(write=False)
        object.__setattr__(self, "dv", dv)

    @classmethod
    def zero(cls):
        return cls(np.zeros(N_ELECTRODES))

    def __add__(self, other):
        return VoltageBias(self.dv + other.dv)

    def apply(self, layout, v_rf):
        return layout.with_bias(self.dv, v_rf)


def voltages_from_coeffs(coeffs, cfg, cal=None, v_rf=None, quantum=None):
    """Electrode biases generating the perturbation ``coeffs`` on a perfect trap.

    Electrodes facing each other across an S-axis share the quadrupole term
    with alternating sign; the dipole term is spread over all electrodes with
    weight ``cos`` or ``sin`` of their angle (``1/sqrt(2)`` on the T-set).
    ``quantum`` rounds each bias to a multiple of that voltage step.
    """
    cal = cal or CalibrationConstants()
    v = cfg.v_rf if v_rf is None else v_rf
    a1, a2, a3, a4 = (float(x) for x in (coeffs.vector if hasattr(coeffs, "vector") else coeffs))
    q1, q2 = v * a1 / cal.q_cal, v * a2 / cal.q_cal
    d3, d4 = v * a3 / cal.d_cal, v * a4 / cal.d_cal
    r = math.sqrt(0.5)
    dv = np.array(
        [
            q1 - d4,
            -q2 - r * (d3 + d4),
            -q1 - d3,
            q2 - r * (d3 - d4),
            q1 + d4,
            -q2 + r * (d3 + d4),
            -q1 + d3,
            q2 + r * (d3 - d4),
        ]
    )
    if quantum:
        dv = np.round(dv / quantum) * quantum
    return VoltageBias(dv)


def designed_pattern(target, cfg, cal=None):
    """Biases creating the minima pattern of ``target`` on a compensated trap."""
    return voltages_from_coeffs(target, cfg, cal)


# --- diagnosis ------------------------------------------------------------

@dataclass(frozen=True)
class FitResult:
    coeffs: PerturbationCoeffs
    residual: float  # mean paired distance (m)
    degenerate: bool  # fewer than three observed minima
    translation: tuple = (0.0, 0.0)  # model origin in the observation frame (m)
    evaluations: int = 0


def _model_points(a, r0):
    A = complex(a[0], -a[1])
    B = complex(a[2], -a[3])
    w = np.roots([4.0, 0.0, -2 * A, -B])
    return np.column_stack([w.real, w.imag]) * r0


def _vieta(points, r0):
    """Coefficients whose minima are exactly the three given centred points."""
    z = (points[:, 0] + 1j * points[:, 1]) / r0
    e2 = z[0] * z[1] + z[0] * z[2] + z[1] * z[2]
    e3 = z[0] * z[1] * z[2]
    A, B = -2 * e2, 4 * e3
    return np.array([A.real, -A.imag, B.real, -B.imag])


_SIGN_STARTS = np.array(
    [[s1, s2, s3, s4] for s1 in (1, -1) for s2 in (1, -1) for s3 in (1, -1) for s4 in (1, -1)][::2]
) * 0.03


def fit_coefficients(observed, cfg, guess=None, restarts=8, resolution=1e-6, max_residual=None):
    """Perturbation coefficients whose analytic minima best match ``observed``.

    The figure of merit is the mean distance between paired points. A full
    pattern is referred to its barycentre (the model barycentre is always at
    the origin); with fewer than three points the model origin is fitted as
    well. The search starts from the exact three-point solution, polished by
    Nelder-Mead; if the residual stays above a hundredth of a pixel, restarts
    from sign-diverse guesses follow. Coefficients are finally rounded to
    ``resolution``.
    """
    r0 = cfg.r0
    pts = np.asarray(observed.points, dtype=float)
    n = len(pts)
    degenerate = n < 3
    scale = cfg.pixel

    if n == 1:
        a = np.zeros(4)
        res = 0.0
        coeffs = PerturbationCoeffs.from_vector(a, r_bar0=r0)
        return FitResult(coeffs, res, True, tuple(pts[0]), 0)

    if n == 3:
        centred = pts - pts.mean(axis=0)
        offset = pts.mean(axis=0)

        def objective(a):
            return float(np.mean(pair_distances(centred, _model_points(a, r0))))

        starts = [_vieta(centred, r0)]
        nvar = 4
    else:
        # two points: one of them stands for two merged minima
        def objective(p):
            model = _model_points(p[:4], r0) + p[4:] * scale
            return float(np.mean(pair_distances(pts, model)))

        starts = []
        for heavy in (0, 1):
            trip = np.array([pts[heavy], pts[heavy], pts[1 - heavy]])
            bary = trip.mean(axis=0)
            starts.append(np.concatenate([_vieta(trip - bary, r0), bary / scale]))
        nvar = 6
        offset = np.zeros(2)

    if guess is not None:
        g = guess.vector if hasattr(guess, "vector") else np.asarray(guess, dtype=float)
        starts.append(g if nvar == 4 else np.concatenate([g, pts.mean(axis=0) / scale]))

    opts = {"xatol": 1e-8, "fatol": 1e-4 * scale, "maxiter": 4000, "maxfev": 8000}
    best = None
    evals = 0

    def run(x0):
        nonlocal best, evals
        r = optimize.minimize(objective, x0, method="Nelder-Mead", options=opts)
        evals += r.nfev
        if best is None or r.fun < best.fun:
            best = r

    for s in starts:
        run(s)
    if best.fun > 1e-2 * scale:
        for s in _SIGN_STARTS[:restarts]:
            x0 = best.x.copy()
            x0[:4] = x0[:4] + s
            run(x0)

    x = best.x.copy()
    x[:4] = np.round(x[:4] / resolution) * resolution if resolution else x[:4]
    residual = objective(x)
    translation = tuple(offset + (x[4:] * scale if nvar == 6 else 0.0))
    coeffs = PerturbationCoeffs.from_vector(x[:4], r_bar0=r0)
    if max_residual is not None and residual > max_residual:
        raise DiagnosisError(
            f"coefficient search stalled at d_bar = {residual * 1e6:.3g} um", coeffs=coeffs, residual=residual
        )
    return FitResult(coeffs, residual, degenerate, translation, evals)


# --- voltage-map calibration ---------------------------------------------

def fig6_family(j_values=None):
    """Coefficient sets {0.4(0.1-j), 0.2j, -0.1(0.1-j), 0.2j}."""
    j_values = np.round(np.arange(11) * 0.01, 10) if j_values is None else j_values
    return [np.array([0.4 * (0.1 - j), 0.2 * j, -0.1 * (0.1 - j), 0.2 * j]) for j in j_values]


def _biased_solution(solver, cfg, coeffs, cal):
    bias = voltages_from_coeffs(coeffs, cfg, cal)
    return solver.solve(solver.layout.phase_sign * cfg.v_rf + bias.dv)


def _exact_minima(solution, cfg):
    z = field_zeros(solution)
    if len(z) == 0:
        raise FlatFieldError("no field zero in the search disk")
    z = _dedupe(z, cfg.pixel / 100)
    return make_pattern(np.column_stack([np.real(z), np.imag(z)])[:3])


def _dedupe(z, tol):
    kept = []
    for p in z:
        if all(abs(p - q) > tol for q in kept):
            kept.append(p)
    return np.array(kept)


def _calibration_misfit(solver, cfg, family, q_cal, d_cal):
    cal = CalibrationConstants(d_cal=d_cal, q_cal=q_cal)
    out = []
    for a in family:
        ref = analytic_minima(PerturbationCoeffs.from_vector(a, r_bar0=cfg.r0), cfg)
        try:
            num = _exact_minima(_biased_solution(solver, cfg, a, cal), cfg)
            out.append(minima_metrics(num, ref)[0])
        except (PatternMismatchError, FlatFieldError):
            out.append(cfg.r0)
    return np.array(out)


def calibrate_voltage_map(cfg, d_px=1e-6, family=None, solver=None, reference=(Q_CAL_REFERENCE, D_CAL_REFERENCE)):
    """Fit q_cal and d_cal so that bias-generated minima sit on the analytic ones.

    The field of the biased perfect trap is solved for each coefficient set
    of the family; the mean paired distance to the analytic minima (absolute
    positions) is minimised over (q_cal, d_cal). The reported ranges hold the
    values for which every set still matches within one pixel ``d_px``.
    """
    from .geometry import TrapConfig

    cfg_px = TrapConfig(cfg.r0, cfg.rd, cfg.v_rf, cfg.omega_rf, cfg.charge, cfg.mass, d_px)
    family = fig6_family() if family is None else family
    from .geometry import ElectrodeLayout as _L

    solver = solver or ElectrodeSolver(_L.perfect(cfg_px))

    def objective(p):
        return float(np.mean(_calibration_misfit(solver, cfg_px, family, p[0], p[1])))

    r = optimize.minimize(objective, np.array(reference), method="Nelder-Mead", options={"xatol": 1e-5, "fatol": 1e-10})
    q_cal, d_cal = (float(v) for v in r.x)
    for value, ref, name in ((q_cal, reference[0], "q_cal"), (d_cal, reference[1], "d_cal")):
        if not abs(value - ref) <= 0.2 * ref:
            raise CalibrationError(f"{name} = {value:.4f} is not within 20% of {ref}")

    def within(q, d):
        return bool(np.max(_calibration_misfit(solver, cfg_px, family, q, d)) <= d_px)

    def bracket(index):
        best = [q_cal, d_cal]
        ends = []
        for sign in (-1, 1):
            lo, hi = 0.0, 0.05
            p = list(best)
            p[index] = best[index] + sign * hi
            if within(*p):
                ends.append(best[index] + sign * hi)
                continue
            for _ in range(20):
                mid = (lo + hi) / 2
                p[index] = best[index] + sign * mid
                if within(*p):
                    lo = mid
                else:
                    hi = mid
            ends.append(best[index] + sign * lo)
        return tuple(ends)

    q_range = bracket(0) if within(q_cal, d_cal) else (q_cal, q_cal)
    d_range = bracket(1) if within(q_cal, d_cal) else (d_cal, d_cal)
    return CalibrationConstants(
        d_cal=d_cal, q_cal=q_cal, d_px_used=d_px, d_range=d_range, q_range=q_range, ratio=cfg.ratio
    )


def fig6_scan(cfg, cal, d_px=1e-6, family=None, solver=None):
    """Pixel-grid minima of the biased perfect trap against the analytic minima.

    Returns one row per coefficient set: (a, analytic pattern, numeric
    pattern, d_bar in m).
    """
    from .geometry import TrapConfig

    cfg_px = TrapConfig(cfg.r0, cfg.rd, cfg.v_rf, cfg.omega_rf, cfg.charge, cfg.mass, d_px)
    family = fig6_family() if family is None else family
    solver = solver or ElectrodeSolver(ElectrodeLayout.perfect(cfg_px))
    rows = []
    for a in family:
        ref = analytic_minima(PerturbationCoeffs.from_vector(a, r_bar0=cfg.r0), cfg_px)
        num = numeric_minima(_biased_solution(solver, cfg_px, a, cal), cfg_px)
        try:
            d_bar = minima_metrics(num, ref)[0]
        except PatternMismatchError:
            d_bar = float("inf")
        rows.append((a, ref, num, d_bar))
    return rows


# --- iterative compensation ----------------------------------------------

@dataclass(frozen=True, eq=False)
class StepRecord:
    step: int
    observed: object  # MinimaPattern (pixel-centre positions)
    coeffs: PerturbationCoeffs  # diagnosed at this step
    bias: VoltageBias  # cumulative bias applied while observing
    correction: VoltageBias  # bias added after this step
    d_b: float  # m
    d_res: float  # m, fit residual
    degenerate: bool
    depth_spread: float  # K


@dataclass(eq=False)
class CorrectionHistory:
    steps: list = field(default_factory=list)
    layout: ElectrodeLayout = None
    meta: dict = field(default_factory=dict)

    @property
    def d_b(self):
        return np.array([s.d_b for s in self.steps])

    def to_csv(self, path=None):
        head = ["step", "d_b_um", "d_res_um", "a1", "a2", "a3", "a4"] + [f"dv{k}_V" for k in range(N_ELECTRODES)]
        lines = [",".join(head)]
        for s in self.steps:
            vals = [str(s.step), f"{s.d_b * 1e6:.6f}", f"{s.d_res * 1e6:.6f}"]
            vals += [f"{v:.9g}" for v in s.coeffs.vector]
            vals += [f"{v:.9g}" for v in s.bias.dv]
            lines.append(",".join(vals))
        text = "\n".join(lines) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def depth_spread(solution, cfg, pattern, samples=64):
    """Barrier between the minima (K): highest pseudo-potential on the segments
    joining them, minus the lowest minimum."""
    from .solver import pseudo_scale_si

    z = pattern.points[:, 0] + 1j * pattern.points[:, 1]
    v_min = pseudo_scale_si(cfg) * np.abs(solution.field(z)) ** 2
    if len(z) < 2:
        return 0.0
    t = np.linspace(0, 1, samples)
    peak = 0.0
    for i in range(len(z)):
        for j in range(i + 1, len(z)):
            seg = z[i] + t * (z[j] - z[i])
            peak = max(peak, float(np.max(pseudo_scale_si(cfg) * np.abs(solution.field(seg)) ** 2)))
    return (peak - float(v_min.min())) / K_BOLTZMANN


def iterate_correction(layout, cfg, cal=None, max_steps=10, stop_px=1.0, observe="snapped", solver=None, quantum=None):
    """Cumulative diagnose-and-compensate loop on one trap.

    Each step solves the field with the current biases, reads the minima on
    the pixel grid, fits the coefficients and adds the biases of ``-a``.
    The loop ends after ``max_steps`` corrections or once d_b changed by less
    than ``stop_px`` pixels over two consecutive steps.
    """
    if abs(global_rotation(layout)) > 1e-9:
        raise ValueError("the layout carries a global rotation; remove it first")
    cal = cal or CalibrationConstants()
    solver = solver or ElectrodeSolver(layout)
    history = CorrectionHistory(layout=layout, meta={"max_steps": max_steps, "observe": observe})
    bias = VoltageBias.zero()
    guess = None
    for step in range(max_steps + 1):
        solution = solver.solve(layout.phase_sign * cfg.v_rf + bias.dv)
        found = numeric_minima(solution, cfg)
        observed = found.use_snapped() if observe == "snapped" else found
        fit = fit_coefficients(observed, cfg, guess=guess)
        last = step == max_steps
        if not last:
            history_d = [s.d_b for s in history.steps] + [observed.d_b]
            if len(history_d) >= 3 and all(
                abs(history_d[-k] - history_d[-k - 1]) < stop_px * cfg.pixel for k in (1, 2)
            ):
                last = True
        correction = VoltageBias.zero() if last else voltages_from_coeffs(-fit.coeffs, cfg, cal, quantum=quantum)
        history.steps.append(
            StepRecord(
                step=step,
                observed=observed,
                coeffs=fit.coeffs,
                bias=bias,
                correction=correction,
                d_b=observed.d_b,
                d_res=fit.residual,
                degenerate=fit.degenerate,
                depth_spread=depth_spread(solution, cfg, found),
            )
        )
        if last:
            break
        bias = bias + correction
    return history
