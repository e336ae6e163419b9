"""Minima patterns (one to three points) and their comparison."""

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import PatternMismatchError

# a triangle counts as a line when its height is below this fraction of its
# longest side (or below the absolute tolerance given to make_pattern)
LINE_REL_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class MinimaPattern:
    points: np.ndarray  # (n, 2) m
    barycenter: np.ndarray  # (2,) m
    d_b: float  # m
    classification: str  # "single", "line" or "triangle"
    depths: np.ndarray = None  # J, optional
    snapped: np.ndarray = None  # (n, 2) pixel centres, optional

    def __len__(self):
        return len(self.points)

    @property
    def z(self):
        return self.points[:, 0] + 1j * self.points[:, 1]

    @property
    def centered(self):
        return self.points - self.barycenter

    def shape_ratio(self):
        """Triangle height over longest side (0 for a line, ~0.87 for equilateral)."""
        if len(self) < 3:
            return 0.0
        z = self.z
        sides = [abs(z[1] - z[0]), abs(z[2] - z[1]), abs(z[0] - z[2])]
        longest = max(sides)
        if longest == 0:
            return 0.0
        area = abs(((z[1] - z[0]).conjugate() * (z[2] - z[0])).imag) / 2
        return 2 * area / longest**2

    def side_balance(self):
        """Shortest over longest side (1 for an equilateral triangle)."""
        if len(self) < 3:
            return 0.0
        z = self.z
        sides = [abs(z[1] - z[0]), abs(z[2] - z[1]), abs(z[0] - z[2])]
        return min(sides) / max(sides) if max(sides) > 0 else 0.0

    def use_snapped(self):
        """Pattern built from the pixel-centre positions."""
        if self.snapped is None:
            return self
        return make_pattern(self.snapped, depths=self.depths)


def classify(points, abs_tol=0.0, rel_tol=LINE_REL_TOL):
    n = len(points)
    if n == 1:
        return "single"
    if n == 2:
        return "line"
    z = points[:, 0] + 1j * points[:, 1]
    sides = np.abs(z - np.roll(z, 1))
    longest = sides.max()
    if longest == 0:
        return "single"
    area = abs(((z[1] - z[0]).conjugate() * (z[2] - z[0])).imag) / 2
    height = 2 * area / longest
    return "line" if height <= max(abs_tol, rel_tol * longest) else "triangle"


def make_pattern(points, depths=None, snapped=None, line_tol=0.0):
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != 2 or not 1 <= len(pts) <= 3:
        raise ValueError("a minima pattern holds one to three 2D points")
    bary = pts.mean(axis=0)
    d_b = float(np.mean(np.hypot(*(pts - bary).T)))
    return MinimaPattern(
        points=pts,
        barycenter=bary,
        d_b=d_b,
        classification=classify(pts, abs_tol=line_tol),
        depths=None if depths is None else np.asarray(depths, dtype=float),
        snapped=None if snapped is None else np.asarray(snapped, dtype=float),
    )


def pair_distances(a, b):
    """Distances between paired points of ``a`` and ``b`` for the pairing
    of least total distance. ``a`` may hold fewer points than ``b``."""
    pa, pb = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    best = None
    for perm in itertools.permutations(range(len(pb)), len(pa)):
        d = np.hypot(*(pa - pb[list(perm)]).T)
        if best is None or d.sum() < best.sum():
            best = d
    return best


def minima_metrics(a, b, centered=False):
    """Mean paired distance d_bar between two patterns and d_bar / d_b(b).

    With ``centered`` both patterns are first referred to their own barycentre.
    """
    if len(a) != len(b):
        raise PatternMismatchError(f"patterns have {len(a)} and {len(b)} points")
    pa = a.centered if centered else a.points
    pb = b.centered if centered else b.points
    d_bar = float(np.mean(pair_distances(pa, pb)))
    if b.d_b > 0:
        d_bar_s = d_bar / b.d_b
    else:
        d_bar_s = 0.0 if d_bar == 0 else float("inf")
    return d_bar, d_bar_s
