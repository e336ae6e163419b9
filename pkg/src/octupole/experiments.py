"""Deterministic experiment runs: defect scans, completeness statistics,
diagnosis success tables, compensation runs and scaling-constant fits.

Every run writes CSV files (the authoritative output), SVG plots and a
``manifest.txt`` sufficient to repeat it.
"""

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy import optimize

from . import __version__, kvfile, svg
from .analytic import (
    PerturbationCoeffs,
    analytic_minima,
    analytic_pseudo,
    coeffs_from_defects,
    scaling_coeffs,
)
from .compensation import (
    CalibrationConstants,
    calibrate_voltage_map,
    fig6_family,
    fig6_scan,
    fit_coefficients,
    iterate_correction,
    voltages_from_coeffs,
)
from .errors import ConfigError, OctupoleError, PatternMismatchError
from .geometry import (
    DefectSet,
    ElectrodeLayout,
    TrapConfig,
    decompose_layout,
    layout_from_defects,
    random_layout,
    remove_global_rotation,
)
from .minima import make_pattern, minima_metrics
from .solver import (
    DEFAULT_TOL,
    DISK_FRACTION,
    N_COLLOCATION,
    ElectrodeSolver,
    _strict_minima,
    field_zeros,
    numeric_minima,
)

WORKERS_ENV = "OCTUPOLE_WORKERS"
MAX_SCAN_POINTS = 10_000

DEFECT_FIELDS = tuple(f.name for f in fields(DefectSet))
COEFF_FIELDS = ("a1", "a2", "a3", "a4")

# reference coefficient scatter of a successful diagnosis at 4 um pixels
REFERENCE_SIGMA_4UM = (0.000820, 0.000878, 0.000470, 0.000420)


def worker_count():
    value = os.environ.get(WORKERS_ENV)
    if value:
        try:
            n = int(value)
        except ValueError as exc:
            raise ConfigError(f"{WORKERS_ENV} must be an integer") from exc
        return max(1, n)
    return os.cpu_count() or 1


def _map(fn, items, workers=None):
    """Ordered map, in a process pool when more than one worker is allowed."""
    items = list(items)
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))


def _fmt(v, digits=6):
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if not np.isfinite(v):
        return "nan" if np.isnan(v) else ("inf" if v > 0 else "-inf")
    return f"{float(v):.{digits}f}"


def write_csv(path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(row.get(h)) for h in header))
    Path(path).write_text("\n".join(lines) + "\n")


def write_manifest(out_dir, kind, cfg, extra):
    items = {"run": kind, "code_version": __version__}
    items.update({f"cfg_{k}": v for k, v in asdict(cfg).items()})
    items.update(
        {
            "solver_collocation": N_COLLOCATION,
            "solver_tolerance": DEFAULT_TOL,
            "search_disk_fraction": DISK_FRACTION,
        }
    )
    for k, v in extra.items():
        items[k] = v if isinstance(v, (int, float, bool, str)) else str(v)
    kvfile.write(Path(out_dir) / "manifest.txt", items, header=f"{kind} run manifest")


# --- scans ----------------------------------------------------------------

@dataclass(frozen=True)
class ScanSpec:
    """A one-parameter scan over a defect or a perturbation coefficient."""

    kind: str  # "defect" or "coeff"
    parameter: str
    start: float
    stop: float
    step: float = None
    fixed: dict = field(default_factory=dict)
    points: int = None  # alternative to step: evenly spaced count including both ends
    d_px: float = 4e-6
    seed: int = 0
    out_dir: str = None
    hh_mode: str = "calibrated"
    name: str = "scan"

    def __post_init__(self):
        if self.kind not in ("defect", "coeff"):
            raise ConfigError("scan kind must be 'defect' or 'coeff'")
        names = DEFECT_FIELDS if self.kind == "defect" else COEFF_FIELDS
        for p in (self.parameter, *self.fixed):
            if p not in names:
                raise ConfigError(f"unknown {self.kind} parameter {p!r}")
        if self.points is None:
            if not self.step or (self.stop - self.start) / self.step < -1e-9:
                raise ConfigError("step must be non-zero and point from start to stop")
        elif self.points < 1 or (self.points == 1 and self.start != self.stop):
            raise ConfigError("points must be a positive count")
        if self.n_points > MAX_SCAN_POINTS:
            raise ConfigError(f"at most {MAX_SCAN_POINTS} scan points")
        if not self.d_px > 0:
            raise ConfigError("d_px must be positive")

    @property
    def n_points(self):
        if self.points is not None:
            return self.points
        return int(math.floor((self.stop - self.start) / self.step + 1e-9)) + 1

    def values(self):
        if self.points is not None:
            return [round(v, 12) for v in np.linspace(self.start, self.stop, self.points)]
        return [round(self.start + i * self.step, 12) for i in range(self.n_points)]


@dataclass(eq=False)
class ScanRow:
    index: int
    value: float
    analytic: object = None
    numeric: object = None
    d_bar: float = float("nan")
    d_bar_s: float = float("nan")
    d_bar_uncorrected: float = float("nan")
    error: str = ""


def _pattern_cols(prefix, pattern):
    out = {f"{prefix}_n": len(pattern) if pattern is not None else 0}
    pts = sorted(map(tuple, pattern.points), key=lambda p: (round(p[0] * 1e7), p[1])) if pattern is not None else []
    for k in range(3):
        x, y = pts[k] if k < len(pts) else (float("nan"), float("nan"))
        out[f"{prefix}_x{k + 1}_um"] = x * 1e6
        out[f"{prefix}_y{k + 1}_um"] = y * 1e6
    return out


def _scan_point(args):
    spec, cfg, index, value = args
    row = ScanRow(index, value)
    try:
        params = dict(spec.fixed)
        params[spec.parameter] = value
        scaling = scaling_coeffs(cfg.ratio, spec.hh_mode)
        if spec.kind == "defect":
            defects = DefectSet(**{"r_bar0": cfg.r0, **params})
            layout = layout_from_defects(defects, cfg)
            solution = ElectrodeSolver(layout).solve()
            coeffs = coeffs_from_defects(defects, scaling)
            plain = coeffs_from_defects(defects, scaling, split_correction=False)
            centered = True
        else:
            coeffs = PerturbationCoeffs(**params, h0=scaling.h0, r_bar0=cfg.r0)
            plain = None
            layout = ElectrodeLayout.perfect(cfg)
            bias = voltages_from_coeffs(coeffs, cfg, CalibrationConstants())
            solution = ElectrodeSolver(layout).solve(layout.phase_sign * cfg.v_rf + bias.dv)
            centered = False
        row.numeric = numeric_minima(solution, cfg, d_px=spec.d_px)
        row.analytic = analytic_minima(coeffs, cfg)
        row.d_bar, row.d_bar_s = minima_metrics(row.analytic, row.numeric, centered=centered)
        if plain is not None:
            row.d_bar_uncorrected = minima_metrics(analytic_minima(plain, cfg), row.numeric, centered=True)[0]
    except (OctupoleError, np.linalg.LinAlgError) as exc:
        row.error = f"{type(exc).__name__}: {exc}".replace(",", ";")
    return row


def run_scan(spec, cfg=None, workers=None, plot=True):
    """Analytic and numeric minima at each scan point, with their distance."""
    cfg = (cfg or TrapConfig()).with_(pixel=spec.d_px)
    rows = _map(_scan_point, [(spec, cfg, i, v) for i, v in enumerate(spec.values())], workers)
    if spec.out_dir:
        out = Path(spec.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        header = ["index", spec.parameter, "d_bar_um", "d_bar_s", "d_bar_uncorrected_um"]
        header += [f"{p}_{c}" for p in ("ana", "num") for c in ("n", "x1_um", "y1_um", "x2_um", "y2_um", "x3_um", "y3_um")]
        header += ["num_class", "num_shape", "error"]
        table = []
        for r in rows:
            d = {
                "index": r.index + 1,
                spec.parameter: r.value,
                "d_bar_um": r.d_bar * 1e6,
                "d_bar_s": r.d_bar_s,
                "d_bar_uncorrected_um": r.d_bar_uncorrected * 1e6,
                "num_class": r.numeric.classification if r.numeric is not None else "",
                "num_shape": r.numeric.shape_ratio() if r.numeric is not None else float("nan"),
                "error": r.error,
            }
            d.update(_pattern_cols("ana", r.analytic))
            d.update(_pattern_cols("num", r.numeric))
            table.append(d)
        write_csv(out / f"{spec.name}.csv", header, table)
        write_manifest(out, f"scan:{spec.name}", cfg, {k: v for k, v in asdict(spec).items() if k != "fixed"} | {
            f"fixed_{k}": v for k, v in spec.fixed.items()})
        if plot:
            _plot_scan(out / f"{spec.name}.svg", spec, rows)
    return rows


def _plot_scan(path, spec, rows):
    ana_x, ana_y, num_x, num_y, labels = [], [], [], [], []
    for r in rows:
        if r.analytic is None or r.numeric is None:
            continue
        ca = r.analytic.centered if spec.kind == "defect" else r.analytic.points
        cn = r.numeric.centered if spec.kind == "defect" else r.numeric.points
        ana_x += list(ca[:, 0] * 1e6)
        ana_y += list(ca[:, 1] * 1e6)
        num_x += list(cn[:, 0] * 1e6)
        num_y += list(cn[:, 1] * 1e6)
        labels += [r.index + 1] * len(cn)
    svg.plot(
        path,
        [
            svg.Series("numeric", num_x, num_y, color="#000000", marker="cross", labels=labels),
            svg.Series("analytic", ana_x, ana_y, color="#d62728", marker="dot"),
        ],
        title=f"{spec.name}: {spec.parameter} from {spec.start:g} to {spec.stop:g}",
        xlabel="x (um)",
        ylabel="y (um)",
        equal=True,
    )


FIGURE_SCANS = {
    "fig3": dict(kind="defect", parameter="l_s", start=0.0, stop=0.11, step=0.011),
    "fig4": dict(kind="defect", parameter="yl_s", start=0.0, stop=0.04, step=0.004),
    "fig5": dict(kind="defect", parameter="y0", start=0.0, stop=0.055, step=0.0055),
    "fig7": dict(kind="defect", parameter="l_s", start=0.108, stop=-0.111, points=21, fixed={"yl_s": -0.004}),
    "fig8": dict(kind="defect", parameter="beta_t", start=0.088, stop=-0.088, points=21, fixed={"x0": 0.007, "l_t": 0.055}),
    "fig8_lt055": dict(
        kind="defect", parameter="beta_t", start=0.088, stop=-0.088, points=21, fixed={"x0": 0.007, "l_t": 0.55}
    ),
}


def figure_spec(name, out_dir=None, d_px=4e-6, hh_mode="calibrated"):
    return ScanSpec(**FIGURE_SCANS[name], d_px=d_px, out_dir=out_dir, hh_mode=hh_mode, name=name)


def topology_sequence(rows, balanced=0.6, flat=0.1):
    """Classify each scan point as 'triangle', 'balanced' or 'line' from the
    numeric pattern: balanced when the shortest side is at least ``balanced``
    times the longest, line when the height is below ``flat`` times the
    longest side."""
    seq = []
    for r in rows:
        p = r.numeric
        if p is None:
            seq.append("error")
        elif len(p) < 3 or p.shape_ratio() < flat:
            seq.append("line")
        elif p.side_balance() >= balanced:
            seq.append("balanced")
        else:
            seq.append("triangle")
    return seq


# --- completeness ---------------------------------------------------------

def _completeness_case(args):
    seed, fraction, cfg, hh_mode = args
    layout = random_layout(seed, fraction, cfg)
    dec = decompose_layout(layout)
    out = {"seed": seed, "residual_um": dec.residual_rms * 1e6, "rotation_mrad": dec.rotation * 1e3}
    try:
        num = numeric_minima(ElectrodeSolver(layout).solve(), cfg)
        coeffs = coeffs_from_defects(dec.defects, scaling_coeffs(cfg.ratio, hh_mode))
        ana = analytic_minima(coeffs, cfg)
        rot = np.exp(1j * dec.rotation) * (ana.points[:, 0] + 1j * ana.points[:, 1])
        ana = make_pattern(np.column_stack([rot.real, rot.imag]))
        d_bar, d_bar_s = minima_metrics(ana, num, centered=True)
        out.update(d_bar_um=d_bar * 1e6, d_bar_s=d_bar_s, d_b_um=num.d_b * 1e6, n_num=len(num), n_ana=len(ana))
        out.update({k: v for k, v in zip(COEFF_FIELDS, coeffs.vector)})
    except (OctupoleError, PatternMismatchError) as exc:
        out.update(d_bar_um=float("nan"), d_bar_s=float("inf"), error=type(exc).__name__)
    return out


@dataclass
class CompletenessStats:
    n: int
    below_2pct: int
    below_4pct: int
    rows: list


def run_completeness(seeds=200, fraction=0.01, cfg=None, out_dir=None, workers=None, hh_mode="calibrated", first_seed=0):
    """Decompose random layouts and compare analytic and numeric minima."""
    cfg = cfg or TrapConfig()
    if not (fraction == 0 or 0.005 <= fraction <= 0.04):
        raise ConfigError("fraction must be 0 or lie in [0.005, 0.04]")
    rows = _map(_completeness_case, [(first_seed + s, fraction, cfg, hh_mode) for s in range(seeds)], workers)
    ds = np.array([r["d_bar_s"] for r in rows])
    stats = CompletenessStats(len(rows), int(np.sum(ds < 0.02)), int(np.sum(ds < 0.04)), rows)
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        header = ["seed", "residual_um", "rotation_mrad", "n_num", "n_ana", "d_b_um", "d_bar_um", "d_bar_s", *COEFF_FIELDS, "error"]
        write_csv(out / "completeness.csv", header, rows)
        write_csv(
            out / "completeness_summary.csv",
            ["cases", "fraction", "below_2pct", "below_4pct"],
            [{"cases": stats.n, "fraction": fraction, "below_2pct": stats.below_2pct, "below_4pct": stats.below_4pct}],
        )
        write_manifest(out, "completeness", cfg, {"seeds": seeds, "fraction": fraction, "first_seed": first_seed, "hh_mode": hh_mode})
        order = np.sort(np.where(np.isfinite(ds), ds, np.nan))
        svg.plot(
            out / "completeness.svg",
            [svg.Series("d_bar_s", list(range(1, len(order) + 1)), list(order * 100), marker="dot", line=True)],
            title=f"{seeds} random layouts, {fraction * 100:g}% displacement",
            xlabel="case (sorted)",
            ylabel="d_bar_s (%)",
        )
    return stats


# --- diagnosis success tables ---------------------------------------------

def pixel_minima(coeffs, cfg, d_px, offset=(0.0, 0.0), half_patch=6):
    """Minima of the analytic pseudo-potential sampled on a pixel lattice
    (pixel centres at ``offset + d_px * (i, j)``), reported at pixel centres."""
    found = {}
    for w in np.roots([4.0, 0.0, -2 * coeffs.quad, -coeffs.dip]) if (coeffs.quad or coeffs.dip) else [0j]:
        z = complex(w) * coeffs.r_bar0
        ci = round((z.real - offset[0]) / d_px)
        cj = round((z.imag - offset[1]) / d_px)
        idx = np.arange(-half_patch, half_patch + 1)
        xx, yy = np.meshgrid(offset[0] + (ci + idx) * d_px, offset[1] + (cj + idx) * d_px)
        v = analytic_pseudo(coeffs, cfg, (xx, yy))
        ii, jj = _strict_minima(v, np.ones_like(v, dtype=bool))
        for i, j in zip(ii, jj):
            found[(ci + idx[j], cj + idx[i])] = (xx[i, j], yy[i, j], v[i, j])
    vals = sorted(found.values(), key=lambda t: t[2])[:3]
    if not vals:
        vals = [(0.0, 0.0, 0.0)]
    return make_pattern([(x, y) for x, y, _ in vals], depths=[e for _, _, e in vals], line_tol=d_px)


def _table_case(args):
    index, seed, d_px, cfg = args
    rng = np.random.default_rng([seed, index])
    a_true = rng.uniform(-0.1, 0.1, 4)
    offset = tuple(rng.uniform(-0.5, 0.5, 2) * d_px)
    cfg_px = cfg.with_(pixel=d_px)
    true = PerturbationCoeffs.from_vector(a_true, r_bar0=cfg.r0)
    observed = pixel_minima(true, cfg_px, d_px, offset)
    fit = fit_coefficients(observed, cfg_px)
    out = {"case": index, "d_px_um": d_px * 1e6, "n_obs": len(observed), "d_bar_um": fit.residual * 1e6}
    out.update({f"{k}_true": v for k, v in zip(COEFF_FIELDS, a_true)})
    out.update({f"{k}_fit": v for k, v in zip(COEFF_FIELDS, fit.coeffs.vector)})
    out["degenerate"] = fit.degenerate
    return out


@dataclass
class TableRow:
    d_px: float
    success_1: float  # fraction with d_bar < d_px
    success_2: float  # fraction with d_bar < 2 d_px
    sigma: tuple  # std of fitted - true over the d_bar < d_px cases
    cases: list


def run_success_tables(cases=50, d_px_list=(2e-6, 4e-6, 8e-6), seed=0, cfg=None, out_dir=None, workers=None):
    """Diagnosis success rates and coefficient scatter for random coefficient sets."""
    cfg = cfg or TrapConfig()
    if cases < 50:
        raise ConfigError("at least 50 cases are required")
    table = []
    for d_px in d_px_list:
        rows = _map(_table_case, [(i, seed, d_px, cfg) for i in range(cases)], workers)
        d = np.array([r["d_bar_um"] for r in rows]) * 1e-6
        ok = d < d_px
        diffs = np.array([[r[f"{k}_fit"] - r[f"{k}_true"] for k in COEFF_FIELDS] for r in rows])
        sigma = tuple(float(np.std(diffs[ok, i])) if ok.any() else float("nan") for i in range(4))
        table.append(TableRow(d_px, float(ok.mean()), float((d < 2 * d_px).mean()), sigma, rows))
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(
            out / "table1.csv",
            ["d_px_um", "success_dpx_pct", "success_2dpx_pct"],
            [{"d_px_um": t.d_px * 1e6, "success_dpx_pct": 100 * t.success_1, "success_2dpx_pct": 100 * t.success_2} for t in table],
        )
        write_csv(
            out / "table2.csv",
            ["d_px_um", "sigma1", "sigma2", "sigma3", "sigma4"],
            [{"d_px_um": t.d_px * 1e6, **{f"sigma{i + 1}": s for i, s in enumerate(t.sigma)}} for t in table],
        )
        header = ["case", "d_px_um", "n_obs", "d_bar_um", "degenerate"]
        header += [f"{k}_true" for k in COEFF_FIELDS] + [f"{k}_fit" for k in COEFF_FIELDS]
        write_csv(out / "table_cases.csv", header, [r for t in table for r in t.cases])
        write_manifest(out, "tables", cfg, {"cases": cases, "seed": seed, "d_px_um": " ".join(f"{v * 1e6:g}" for v in d_px_list)})
    return table


# --- compensation ---------------------------------------------------------

def _compensation_case(args):
    seed, fraction, steps, cfg, cal = args
    layout, angle = remove_global_rotation(random_layout(seed, fraction, cfg))
    history = iterate_correction(layout, cfg, cal, max_steps=steps)
    history.meta.update(seed=seed, fraction=fraction, removed_rotation=angle)
    return history


def run_compensation_demo(seeds=(0,), fraction=0.02, steps=10, cfg=None, cal=None, out_dir=None, workers=None):
    """Iterative compensation of seeded random layouts."""
    cfg = cfg or TrapConfig()
    cal = cal or CalibrationConstants()
    histories = _map(_compensation_case, [(s, fraction, steps, cfg, cal) for s in seeds], workers)
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        summary = []
        for h in histories:
            seed = h.meta["seed"]
            h.to_csv(out / f"history_seed{seed}.csv")
            series = []
            for s in h.steps:
                pts = s.observed.points * 1e6
                series.append(
                    svg.Series(f"step {s.step}", list(pts[:, 0]), list(pts[:, 1]), color=svg.PALETTE[s.step % len(svg.PALETTE)])
                )
            svg.plot(out / f"minima_seed{seed}.svg", series, title=f"minima per correction step (seed {seed})",
                     xlabel="x (um)", ylabel="y (um)", equal=True)
            svg.plot(
                out / f"db_seed{seed}.svg",
                [svg.Series("d_b", [s.step for s in h.steps], list(h.d_b * 1e6), marker="dot", line=True)],
                title=f"mean distance to barycentre (seed {seed})",
                xlabel="step",
                ylabel="d_b (um)",
            )
            db = h.d_b
            summary.append(
                {
                    "seed": seed,
                    "steps": len(db) - 1,
                    "d_b0_um": db[0] * 1e6,
                    "d_b3_um": db[min(3, len(db) - 1)] * 1e6,
                    "d_b7_um": db[min(7, len(db) - 1)] * 1e6,
                    "d_b_last_um": db[-1] * 1e6,
                    "reduction3_pct": 100 * (1 - db[min(3, len(db) - 1)] / db[0]) if db[0] > 0 else 0.0,
                    "depth_spread_last_uK": h.steps[-1].depth_spread * 1e6,
                }
            )
        write_csv(out / "compensation_summary.csv", list(summary[0].keys()), summary)
        write_manifest(out, "compensation", cfg, {"seeds": " ".join(map(str, seeds)), "fraction": fraction, "steps": steps,
                                                  "q_cal": cal.q_cal, "d_cal": cal.d_cal})
    return histories


def compensation_metrics(histories):
    """Mean reduction of d_b after three steps, mean plateau d_b (step 7 or
    last), and the largest final depth spread (K)."""
    red, plateau, spread = [], [], []
    for h in histories:
        db = h.d_b
        if db[0] <= 0:
            red.append(1.0)
        else:
            red.append(1 - db[min(3, len(db) - 1)] / db[0])
        plateau.append(db[min(7, len(db) - 1)])
        spread.append(h.steps[-1].depth_spread)
    return float(np.mean(red)), float(np.mean(plateau)), float(np.max(spread))


# --- scaling constants ----------------------------------------------------

H_KINDS = {
    # kind: (defect field, scaling attribute)
    "compression": ("l_s", "hc"),
    "sliding": ("yl_s", "hl"),
    "splitting": ("y0", "hp"),
    "shearing": ("beta_t", "hh"),
}


def _h_point(args):
    kind, amplitude, ratio, r0, d_px = args
    field_name, attr = H_KINDS[kind]
    cfg = TrapConfig(r0=r0, rd=ratio * r0, pixel=d_px)
    defects = DefectSet(**{field_name: amplitude, "r_bar0": r0})
    layout = layout_from_defects(defects, cfg)
    zeros = field_zeros(ElectrodeSolver(layout).solve())
    num = make_pattern(np.column_stack([zeros.real, zeros.imag])[:3])
    base = scaling_coeffs(0.375, "reference").with_(hc=0.0, hl=0.0, hp=0.0, hh=0.0)

    def misfit(h):
        coeffs = coeffs_from_defects(defects, base.with_(**{attr: h}))
        try:
            return minima_metrics(analytic_minima(coeffs, cfg, radius_fraction=1.0), num, centered=True)[0]
        except (PatternMismatchError, OctupoleError):
            return r0

    r = optimize.minimize_scalar(misfit, bounds=(0.05, 8.0), method="bounded", options={"xatol": 1e-7})
    h_best = float(r.x)

    # error bar: values within one pixel of the best achievable agreement
    limit = float(r.fun) + d_px

    def edge(sign):
        lo, hi = 0.0, 2.0
        if misfit(h_best + sign * hi) <= limit:
            return h_best + sign * hi
        for _ in range(40):
            mid = (lo + hi) / 2
            if misfit(h_best + sign * mid) <= limit:
                lo = mid
            else:
                hi = mid
        return h_best + sign * lo

    return {
        "kind": kind,
        "amplitude": amplitude,
        "ratio": ratio,
        "h": h_best,
        "h_lo": edge(-1),
        "h_hi": edge(1),
        "d_bar_um": float(r.fun) * 1e6,
    }


@dataclass
class HCalibration:
    kind: str
    rows: list
    poly: tuple  # lowest order first

    def value(self, ratio):
        return float(np.polynomial.polynomial.polyval(ratio, self.poly))


def run_h_calibration(kind, amplitudes, ratios, r0=4e-3, d_px=4e-6, degree=4, out_dir=None, workers=None):
    """Best-fit scaling constant per radius ratio and a polynomial through them.

    For each (amplitude, ratio) the single-defect layout is solved and the
    constant minimising the centred distance between analytic and numeric
    minima is found; the error bar spans the values keeping it below one
    pixel.
    """
    if kind not in H_KINDS:
        raise ConfigError(f"kind must be one of {sorted(H_KINDS)}")
    ratios = list(ratios)
    if min(ratios) < 0.02 or max(ratios) > 0.55:
        raise ConfigError("ratios must lie in [0.02, 0.55]")
    jobs = [(kind, a, r, r0, d_px) for a in amplitudes for r in ratios]
    rows = _map(_h_point, jobs, workers)
    x = np.array([r["ratio"] for r in rows])
    y = np.array([r["h"] for r in rows])
    deg = min(degree, len(set(x.tolist())) - 1)
    poly = tuple(np.polynomial.polynomial.polyfit(x, y, deg)) if deg >= 0 else (float(y.mean()),)
    cal = HCalibration(kind, rows, poly)
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / f"h_{kind}.csv", ["kind", "amplitude", "ratio", "h", "h_lo", "h_hi", "d_bar_um"], rows)
        kvfile.write(out / f"h_{kind}_poly.txt", {f"c{i}": float(c) for i, c in enumerate(poly)},
                     header=f"{kind} scaling constant vs rd/r0, lowest order first")
        series = []
        for i, a in enumerate(amplitudes):
            sel = [r for r in rows if r["amplitude"] == a]
            series.append(svg.Series(f"amplitude {a:g}", [r["ratio"] for r in sel], [r["h"] for r in sel],
                                     color=svg.PALETTE[(i + 1) % len(svg.PALETTE)]))
        grid = np.linspace(min(ratios), max(ratios), 60)
        series.append(svg.Series("polynomial fit", list(grid), [cal.value(g) for g in grid], marker="none", line=True))
        svg.plot(out / f"h_{kind}.svg", series, title=f"{kind} scaling constant", xlabel="rd/r0", ylabel="h")
        write_manifest(out, f"calibrate-h:{kind}", TrapConfig(r0=r0, pixel=d_px), {
            "amplitudes": " ".join(f"{a:g}" for a in amplitudes), "ratios": " ".join(f"{r:g}" for r in ratios)})
    return cal


# --- voltage calibration --------------------------------------------------

def run_voltage_calibration(cfg=None, d_px=1e-6, out_dir=None):
    cfg = cfg or TrapConfig()
    cal = calibrate_voltage_map(cfg, d_px=d_px)
    rows = fig6_scan(cfg, cal, d_px=d_px)
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        cal.write(out / "calibration.txt")
        table = []
        for i, (a, ref, num, d_bar) in enumerate(rows):
            d = {"j": round(0.01 * i, 4), "d_bar_um": d_bar * 1e6}
            d.update({k: v for k, v in zip(COEFF_FIELDS, a)})
            d.update(_pattern_cols("ana", ref))
            d.update(_pattern_cols("num", num))
            table.append(d)
        header = ["j", *COEFF_FIELDS, "d_bar_um"] + [f"{p}_{c}" for p in ("ana", "num") for c in
                                                   ("n", "x1_um", "y1_um", "x2_um", "y2_um", "x3_um", "y3_um")]
        write_csv(out / "fig6.csv", header, table)
        svg.plot(
            out / "fig6.svg",
            [
                svg.Series("voltage-generated", [p[0] * 1e6 for r in rows for p in r[2].points],
                           [p[1] * 1e6 for r in rows for p in r[2].points], marker="dot"),
                svg.Series("analytic", [p[0] * 1e6 for r in rows for p in r[1].points],
                           [p[1] * 1e6 for r in rows for p in r[1].points], color="#d62728", marker="cross"),
            ],
            title=f"bias-generated minima, q_cal={cal.q_cal:.4f} d_cal={cal.d_cal:.4f}",
            xlabel="x (um)", ylabel="y (um)", equal=True,
        )
        write_manifest(out, "calibrate-voltages", cfg, {"d_px_um": d_px * 1e6, "q_cal": cal.q_cal, "d_cal": cal.d_cal,
                                                        "family_points": len(fig6_family())})
    return cal, rows
