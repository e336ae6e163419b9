"""Command-line entry point: ``octupole <subcommand> [options]``.

Exit codes: 0 success, 2 invalid configuration, 3 solver or model failure,
4 a ``reproduce --check`` threshold was missed.
"""

import argparse
import math
import sys
from pathlib import Path

import numpy as np
from scipy import constants

from . import experiments as ex
from . import kvfile
from .analytic import HH_MODES
from .compensation import CalibrationConstants
from .errors import ConfigError, OctupoleError
from .geometry import TrapConfig

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_CHECK = 0, 2, 3, 4

TRAP_KEYS = {
    # config key: (TrapConfig field, factor to SI)
    "r0_mm": ("r0", 1e-3),
    "rd_mm": ("rd", 1e-3),
    "v_rf": ("v_rf", 1.0),
    "freq_mhz": ("omega_rf", 2e6 * math.pi),
    "mass_u": ("mass", constants.atomic_mass),
    "pixel_um": ("pixel", 1e-6),
}

TARGETS = ("fig3", "fig4", "fig5", "fig6", "fig7", "fig8", "fig9", "fig10", "table1", "table2")


class Config:
    """Flat key-value settings; command-line flags take precedence."""

    def __init__(self, items=None):
        self.items = dict(items or {})
        self.used = set()

    @classmethod
    def load(cls, path):
        if path is None:
            return cls()
        try:
            return cls(kvfile.read(path))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc

    def set(self, key, value):
        if value is not None:
            self.items[key] = str(value)

    def raw(self, key, default=None):
        self.used.add(key)
        return self.items.get(key, default)

    def float(self, key, default):
        self.used.add(key)
        return kvfile.get_float(self.items, key, default) if key in self.items else default

    def int(self, key, default):
        v = self.raw(key)
        if v is None:
            return default
        try:
            return int(v)
        except ValueError as exc:
            raise ConfigError(f"{key}: not an integer: {v!r}") from exc

    def floats(self, key, default):
        v = self.raw(key)
        if v is None:
            return list(default)
        try:
            return [float(t) for t in v.replace(",", " ").split()]
        except ValueError as exc:
            raise ConfigError(f"{key}: expected a list of numbers: {v!r}") from exc

    def prefixed(self, prefix):
        out = {}
        for k in self.items:
            if k.startswith(prefix):
                out[k[len(prefix):]] = self.float(k, None)
        return out

    def trap(self):
        kw = {}
        for key, (name, factor) in TRAP_KEYS.items():
            if key in self.items:
                kw[name] = self.float(key, None) * factor
        try:
            return TrapConfig(**kw)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def check_unused(self):
        unknown = sorted(set(self.items) - self.used - set(TRAP_KEYS))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")


def _out(args, default):
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _pixel(cfg, default_um):
    return cfg.float("pixel_um", default_um) * 1e-6


# --- subcommands -----------------------------------------------------------

def cmd_scan(args, cfg):
    kind = cfg.raw("kind", "defect")
    parameter = cfg.raw("parameter")
    if parameter is None:
        raise ConfigError("scan needs 'parameter'")
    step = cfg.raw("step")
    points = cfg.raw("points")
    spec = ex.ScanSpec(
        kind=kind,
        parameter=parameter,
        start=cfg.float("start", 0.0),
        stop=cfg.float("stop", 0.0),
        step=float(step) if step is not None else None,
        points=int(points) if points is not None else None,
        fixed=cfg.prefixed("fixed."),
        d_px=_pixel(cfg, 4.0),
        seed=cfg.int("seed", 0),
        hh_mode=cfg.raw("hh_mode", "calibrated"),
        name=cfg.raw("name", "scan"),
        out_dir=str(_out(args, "out/scan")),
    )
    if spec.hh_mode not in HH_MODES:
        raise ConfigError(f"hh_mode must be one of {HH_MODES}")
    trap = cfg.trap()
    cfg.check_unused()
    rows = ex.run_scan(spec, trap)
    finite = [r.d_bar for r in rows if np.isfinite(r.d_bar)]
    print(f"{len(rows)} points, max d_bar {max(finite) * 1e6 if finite else float('nan'):.3f} um -> {spec.out_dir}")
    return EXIT_OK


def cmd_completeness(args, cfg):
    seeds = cfg.int("seeds", 200)
    fraction = cfg.float("fraction", 0.01)
    first = cfg.int("seed", 0)
    trap = cfg.trap().with_(pixel=_pixel(cfg, 4.0))
    out = _out(args, "out/completeness")
    cfg.check_unused()
    stats = ex.run_completeness(seeds, fraction, trap, out_dir=out, first_seed=first)
    print(f"{stats.n} layouts at {fraction:g}: {stats.below_2pct} below 2%, {stats.below_4pct} below 4% -> {out}")
    return EXIT_OK


def cmd_tables(args, cfg):
    cases = cfg.int("cases", 50)
    d_px = [v * 1e-6 for v in cfg.floats("d_px_um", (2, 4, 8))]
    seed = cfg.int("seed", 0)
    trap = cfg.trap()
    out = _out(args, "out/tables")
    cfg.check_unused()
    table = ex.run_success_tables(cases, d_px, seed, trap, out_dir=out)
    for t in table:
        sig = " ".join(f"{s:.2e}" for s in t.sigma)
        print(f"d_px {t.d_px * 1e6:g} um: success {100 * t.success_1:.0f}% / {100 * t.success_2:.0f}%, sigma {sig}")
    return EXIT_OK


def _calibration(cfg):
    default = CalibrationConstants()
    path = cfg.raw("calibration")
    if path:
        return CalibrationConstants.read(path)
    return CalibrationConstants(d_cal=cfg.float("d_cal", default.d_cal), q_cal=cfg.float("q_cal", default.q_cal))


def cmd_compensate(args, cfg):
    first = cfg.int("seed", 0)
    n = cfg.int("seeds", 1)
    fraction = cfg.float("fraction", 0.02)
    steps = cfg.int("steps", 10)
    cal = _calibration(cfg)
    trap = cfg.trap().with_(pixel=_pixel(cfg, 4.0))
    out = _out(args, "out/compensate")
    cfg.check_unused()
    hs = ex.run_compensation_demo(tuple(range(first, first + n)), fraction, steps, trap, cal, out_dir=out)
    red, plateau, spread = ex.compensation_metrics(hs)
    print(f"{n} layouts: reduction after 3 steps {100 * red:.1f}%, plateau d_b {plateau * 1e6:.1f} um, "
          f"max depth spread {spread * 1e6:.3g} uK -> {out}")
    return EXIT_OK


def cmd_calibrate_h(args, cfg):
    kind = cfg.raw("kind", "splitting")
    amplitudes = cfg.floats("amplitudes", (0.0275, 0.055))
    ratios = cfg.floats("ratios", np.round(np.arange(0.05, 0.501, 0.05), 3))
    d_px = _pixel(cfg, 4.0)
    trap = cfg.trap()
    out = _out(args, "out/calibrate-h")
    cfg.check_unused()
    cal = ex.run_h_calibration(kind, amplitudes, ratios, r0=trap.r0, d_px=d_px, out_dir=out)
    print(f"{kind}: h(0.375) = {cal.value(0.375):.4f} -> {out}")
    return EXIT_OK


def cmd_calibrate_voltages(args, cfg):
    d_px = _pixel(cfg, 1.0)
    trap = cfg.trap()
    out = _out(args, "out/calibrate-voltages")
    cfg.check_unused()
    cal, rows = ex.run_voltage_calibration(trap, d_px, out_dir=out)
    worst = max(r[3] for r in rows)
    print(f"d_cal {cal.d_cal:.4f} [{cal.d_range[0]:.4f}, {cal.d_range[1]:.4f}], "
          f"q_cal {cal.q_cal:.4f} [{cal.q_range[0]:.4f}, {cal.q_range[1]:.4f}], "
          f"worst d_bar {worst * 1e6:.3f} um -> {out}")
    return EXIT_OK


# --- reproduce -------------------------------------------------------------

def _scan_checks(rows, d_px):
    worst = max((r.d_bar for r in rows), default=float("nan"))
    errors = [r for r in rows if r.error]
    ok = not errors and np.isfinite(worst) and worst <= 2 * d_px
    return ok, f"max d_bar {worst * 1e6:.2f} um (limit {2 * d_px * 1e6:g}), {len(errors)} failed points"


def reproduce(target, out, trap, seed=0, d_px=None):
    """Run one figure or table analogue. Returns (passed, list of messages)."""
    msgs = []
    if target in ("fig3", "fig4", "fig5", "fig7"):
        d_px = d_px or 4e-6
        rows = ex.run_scan(ex.figure_spec(target, out_dir=str(out), d_px=d_px), trap)
        ok, m = _scan_checks(rows, d_px)
        msgs.append(m)
        if target == "fig5":
            last = rows[-1]
            better = last.d_bar < last.d_bar_uncorrected
            msgs.append(f"largest y0: corrected {last.d_bar * 1e6:.2f} um, uncorrected {last.d_bar_uncorrected * 1e6:.2f} um")
            ok = ok and better
        if target == "fig7":
            seq = ex.topology_sequence(rows)
            shape = seq[0] == "triangle" and seq[10] == "balanced" and seq[-1] == "line"
            msgs.append("topology " + " ".join(seq))
            ok = ok and shape
        return ok, msgs
    if target == "fig8":
        d_px = d_px or 4e-6
        ok = True
        for name in ("fig8", "fig8_lt055"):
            sub = Path(out) / name
            rows = ex.run_scan(ex.figure_spec(name, out_dir=str(sub), d_px=d_px), trap)
            good, m = _scan_checks(rows, d_px)
            seq = ex.topology_sequence(rows)
            msgs.append(f"{name}: {m}; shapes {', '.join(f'{seq.count(s)} {s}' for s in sorted(set(seq)))}")
            if name == "fig8":
                ok = good
        return ok, msgs
    if target == "fig6":
        d_px = d_px or 1e-6
        cal, rows = ex.run_voltage_calibration(trap, d_px, out_dir=out)
        worst = max(r[3] for r in rows)
        ok = 0.86 <= cal.d_cal <= 0.96 and 0.75 <= cal.q_cal <= 0.85 and worst <= 2 * d_px
        msgs.append(f"d_cal {cal.d_cal:.4f}, q_cal {cal.q_cal:.4f}, worst d_bar {worst * 1e6:.3f} um")
        return ok, msgs
    if target in ("fig9", "fig10"):
        seeds = (seed,) if target == "fig9" else tuple(range(seed, seed + 10))
        hs = ex.run_compensation_demo(seeds, 0.02, 10, trap.with_(pixel=d_px or 4e-6), out_dir=out)
        red, plateau, spread = ex.compensation_metrics(hs)
        msgs.append(f"{len(seeds)} layouts: reduction after 3 steps {100 * red:.1f}%, plateau d_b {plateau * 1e6:.1f} um, "
                    f"max depth spread {spread * 1e6:.3g} uK")
        return red >= 0.90 and plateau <= 60e-6 and spread < 1e-3, msgs
    if target in ("table1", "table2"):
        table = ex.run_success_tables(50, (2e-6, 4e-6, 8e-6), seed, trap, out_dir=out)
        row = next(t for t in table if abs(t.d_px - 4e-6) < 1e-12)
        if target == "table1":
            msgs.extend(f"d_px {t.d_px * 1e6:g} um: {100 * t.success_1:.0f}% / {100 * t.success_2:.0f}%" for t in table)
            return row.success_1 >= 0.75, msgs
        ratios = [s / p for s, p in zip(row.sigma, ex.REFERENCE_SIGMA_4UM)]
        msgs.append("sigma / reference at 4 um: " + " ".join(f"{r:.2f}" for r in ratios))
        return all(1 / 3 <= r <= 3 for r in ratios), msgs
    raise ConfigError(f"unknown target {target!r}")


def cmd_reproduce(args, cfg):
    trap = cfg.trap()
    d_px = cfg.float("pixel_um", None)
    seed = cfg.int("seed", 0)
    cfg.check_unused()
    out = _out(args, f"out/{args.target}")
    ok, msgs = reproduce(args.target, out, trap, seed, d_px * 1e-6 if d_px else None)
    for m in msgs:
        print(f"{args.target}: {m}")
    if args.check:
        print(f"{args.target}: {'PASS' if ok else 'FAIL'}")
        return EXIT_OK if ok else EXIT_CHECK
    return EXIT_OK


COMMANDS = {
    "scan": (cmd_scan, "one-parameter scan over a defect or coefficient"),
    "completeness": (cmd_completeness, "decompose random layouts and compare minima"),
    "tables": (cmd_tables, "diagnosis success rates and coefficient scatter"),
    "compensate": (cmd_compensate, "iterative compensation of random layouts"),
    "calibrate-h": (cmd_calibrate_h, "fit a scaling constant against the field solver"),
    "calibrate-voltages": (cmd_calibrate_voltages, "fit the voltage-map calibration constants"),
    "reproduce": (cmd_reproduce, "run a figure or table analogue"),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="octupole", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="key = value settings file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="random seed (first seed for batches)")
        p.add_argument("--pixel-um", type=float, help="pixel size in micrometres")
        if name == "reproduce":
            p.add_argument("target", choices=TARGETS)
            p.add_argument("--check", action="store_true", help="exit 4 when an acceptance threshold is missed")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    fn = COMMANDS[args.command][0]
    try:
        cfg = Config.load(args.config)
        cfg.set("seed", args.seed)
        cfg.set("pixel_um", args.pixel_um)
        return fn(args, cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OctupoleError, np.linalg.LinAlgError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
