"""Polynomial vehicle paths.

A path maps arc-progress ``s`` (meters) to a planar position through two
polynomials in the normalized parameter ``sigma = s / s_scale``::

    x(s) = sum_k coeffs_x[k] * sigma**k
    y(s) = sum_k coeffs_y[k] * sigma**k

Normalizing before raising to high powers keeps every power of ``sigma``
inside [0, 1] on the path. All derivatives taken with respect to raw ``s`` carry the
``1 / s_scale`` chain-rule factor.

High-degree least-squares fits in the monomial basis have huge alternating
coefficients (1e13 is typical at degree 20), so nested evaluation loses
about 1e-8 m to cancellation and the result is not smooth at that scale.
Paths are therefore evaluated through an exactly converted Chebyshev series
in ``2 sigma - 1`` (rational arithmetic, rounded once), using Clenshaw's
recurrence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from math import comb
from typing import Sequence

import numpy as np
import scipy.linalg

DEFAULT_FIT_DEGREE = 20
_TANGENT_EPS = 1e-9
# slack on the [0, s_max] domain check, absorbs accumulated float error
_DOMAIN_SLACK = 1e-9
_RANK_TOL = 1e-14


class PathError(ValueError):
    """Arc-progress outside the path domain."""


class DegenerateGeometryError(PathError):
    """Tangent too small to define a heading."""


class FitError(ValueError):
    """Least-squares path fit could not be performed."""


def horner(coeffs, x):
    """Evaluate ``sum coeffs[k] x**k`` in nested form; ``x`` may be an array."""
    x = np.asarray(x, dtype=float)
    acc = np.zeros_like(x)
    for c in reversed(coeffs):
        acc = acc * x + c
    return acc


def clenshaw(c: np.ndarray, x) -> np.ndarray:
    """Chebyshev series ``sum c[k] T_k(x)``; ``c[k]`` may carry trailing batch axes."""
    x = np.asarray(x, dtype=float)
    b1 = np.zeros(np.broadcast_shapes(x.shape, np.shape(c[0])))
    b2 = np.zeros_like(b1)
    for ck in c[:0:-1]:
        b1, b2 = 2.0 * x * b1 - b2 + ck, b1
    return x * b1 - b2 + c[0]


def _monomial_to_chebyshev(coeffs: Sequence[float]) -> list[Fraction]:
    """Exact Chebyshev coefficients (in x = 2 sigma - 1) of a polynomial in sigma."""
    n = len(coeffs)
    mono_x = [Fraction(0)] * n
    for k, ck in enumerate(coeffs):
        c = Fraction(ck) / 2**k
        for j in range(k + 1):
            mono_x[j] += c * comb(k, j)
    cheb = [Fraction(0)] * n
    for j, aj in enumerate(mono_x):
        if aj == 0:
            continue
        for m in range(j % 2, j + 1, 2):
            w = Fraction(comb(j, (j - m) // 2), 2 ** (j - 1)) if m else Fraction(comb(j, j // 2), 2**j)
            cheb[m] += aj * w
    return cheb


def _chebyshev_derivative(a: list[Fraction]) -> list[Fraction]:
    n = len(a) - 1
    if n == 0:
        return [Fraction(0)]
    b = [Fraction(0)] * (n + 1)
    for k in range(n, 0, -1):
        b[k - 1] = b[k + 1] + 2 * k * a[k] if k + 1 <= n else 2 * k * a[k]
    b[0] /= 2
    return b[:n]


def chebyshev_series(coeffs: Sequence[float]) -> np.ndarray:
    """Rows: series for p, dp/dx and d2p/dx2 in x = 2 sigma - 1, zero padded."""
    c0 = _monomial_to_chebyshev(coeffs)
    c1 = _chebyshev_derivative(c0)
    c2 = _chebyshev_derivative(c1)
    out = np.zeros((3, len(c0)))
    for row, c in enumerate((c0, c1, c2)):
        out[row, : len(c)] = [float(v) for v in c]
    return out


@dataclass(frozen=True)
class PathPolynomial:
    coeffs_x: tuple[float, ...]
    coeffs_y: tuple[float, ...]
    s_scale: float = 1.0
    s_max: float = 1.0

    def __post_init__(self):
        cx = tuple(float(c) for c in self.coeffs_x)
        cy = tuple(float(c) for c in self.coeffs_y)
        if not cx or not cy:
            raise ValueError("coefficient sequences must be non-empty")
        # a shorter sequence is a lower-degree polynomial: pad with zeros
        n = max(len(cx), len(cy))
        cx += (0.0,) * (n - len(cx))
        cy += (0.0,) * (n - len(cy))
        object.__setattr__(self, "coeffs_x", cx)
        object.__setattr__(self, "coeffs_y", cy)
        if not all(math.isfinite(c) for c in cx + cy):
            raise ValueError("coefficients must be finite")
        if not (self.s_scale > 0 and self.s_max > 0):
            raise ValueError(f"s_scale and s_max must be positive, got {self.s_scale}, {self.s_max}")

    @property
    def degree(self) -> int:
        return len(self.coeffs_x) - 1

    @cached_property
    def _cheb(self) -> np.ndarray:
        # (3, n, 2): derivative order, Chebyshev index, coordinate
        return np.stack([chebyshev_series(self.coeffs_x), chebyshev_series(self.coeffs_y)], axis=-1)

    def _check(self, s: float) -> float:
        s = float(s)
        if not (-_DOMAIN_SLACK <= s <= self.s_max + _DOMAIN_SLACK):
            raise PathError(f"arc-progress {s} outside [0, {self.s_max}]")
        return min(max(s, 0.0), self.s_max)

    def _raw(self, s):
        """Position and first/second s-derivatives, no domain handling."""
        x = (2.0 * np.asarray(s, dtype=float) / self.s_scale - 1.0)[..., None]
        c = self._cheb
        pos = clenshaw(c[0], x)
        d1 = clenshaw(c[1], x) * (2.0 / self.s_scale)
        d2 = clenshaw(c[2], x) * (2.0 / self.s_scale) ** 2
        return pos, d1, d2

    @cached_property
    def _ends(self):
        p0, d0, _ = self._raw(np.array([0.0, self.s_max]))
        return p0, d0

    def evaluate_extended(self, s):
        """Position, dp/ds and d2p/ds2 for an array of arc-progress values.

        Outside ``[0, s_max]`` the path is continued along the end tangent
        (straight line), which keeps planning rollouts that overshoot the
        path end well defined and C1-smooth. Returns three ``(..., 2)`` arrays.
        """
        s = np.asarray(s, dtype=float)
        pos, d1, d2 = self._raw(np.clip(s, 0.0, self.s_max))
        lo = s < 0.0
        hi = s > self.s_max
        if lo.any() or hi.any():
            (p_start, p_end), (t_start, t_end) = self._ends
            if lo.any():
                pos[lo] = p_start + s[lo, None] * t_start
                d1[lo] = t_start
                d2[lo] = 0.0
            if hi.any():
                pos[hi] = p_end + (s[hi, None] - self.s_max) * t_end
                d1[hi] = t_end
                d2[hi] = 0.0
        return pos, d1, d2

    def to_dict(self) -> dict:
        return {
            "coeffs_x": list(self.coeffs_x),
            "coeffs_y": list(self.coeffs_y),
            "s_scale": self.s_scale,
            "s_max": self.s_max,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PathPolynomial":
        unknown = set(d) - {"coeffs_x", "coeffs_y", "s_scale", "s_max"}
        if unknown:
            raise ValueError(f"unknown path keys: {sorted(unknown)}")
        return cls(
            coeffs_x=d["coeffs_x"],
            coeffs_y=d["coeffs_y"],
            s_scale=float(d["s_scale"]),
            s_max=float(d["s_max"]),
        )


def eval_position(path: PathPolynomial, s: float) -> tuple[float, float]:
    s = path._check(s)
    pos, _, _ = path._raw(s)
    return float(pos[0]), float(pos[1])


def eval_tangent(path: PathPolynomial, s: float, v: float) -> tuple[float, float]:
    """Time derivative of the position when moving at speed ``v`` along ``s``."""
    s = path._check(s)
    _, d1, _ = path._raw(s)
    return float(v * d1[0]), float(v * d1[1])


def heading(path: PathPolynomial, s: float) -> float:
    s = path._check(s)
    _, d1, _ = path._raw(s)
    if math.hypot(d1[0], d1[1]) < _TANGENT_EPS:
        raise DegenerateGeometryError(f"tangent vanishes at s={s}")
    return math.atan2(d1[1], d1[0])


@dataclass(frozen=True)
class FitDiagnostics:
    rms_residual: float
    max_residual: float
    condition_number: float
    params: np.ndarray = field(repr=False)


def chord_parameters(waypoints) -> np.ndarray:
    pts = np.asarray(waypoints, dtype=float)
    seg = np.hypot(*np.diff(pts, axis=0).T)
    return np.concatenate([[0.0], np.cumsum(seg)])


def fit_path_with_diagnostics(
    waypoints: Sequence[tuple[float, float]], degree: int = DEFAULT_FIT_DEGREE
) -> tuple[PathPolynomial, FitDiagnostics]:
    pts = np.asarray(waypoints, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise FitError(f"waypoints must be an (n, 2) array, got shape {pts.shape}")
    if degree < 0:
        raise FitError(f"degree must be non-negative, got {degree}")
    if len(pts) < degree + 1:
        raise FitError(f"degree {degree} needs at least {degree + 1} waypoints, got {len(pts)}")
    seg = np.hypot(*np.diff(pts, axis=0).T)
    if np.any(seg <= 0.0):
        bad = int(np.argmin(seg))
        raise FitError(f"consecutive waypoints {bad} and {bad + 1} coincide")

    s = chord_parameters(pts)
    total = float(s[-1])
    sigma = s / total
    design = np.vander(sigma, degree + 1, increasing=True)
    # Householder QR, never the normal equations. The monomial basis on [0, 1]
    # is badly conditioned at degree 20 but the least-squares residual is still
    # computed stably; only a numerically zero pivot is treated as rank loss.
    q, r = np.linalg.qr(design)
    pivots = np.abs(np.diag(r))
    sv = np.linalg.svd(design, compute_uv=False)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else math.inf
    if pivots.min() <= _RANK_TOL * pivots.max():
        raise FitError(f"rank-deficient design matrix (degree {degree}, condition number {cond:.3e})")
    coeffs = scipy.linalg.solve_triangular(r, q.T @ pts)
    path = PathPolynomial(coeffs[:, 0], coeffs[:, 1], s_scale=total, s_max=total)
    fitted, _, _ = path._raw(s)
    err = np.hypot(*(fitted - pts).T)
    diag = FitDiagnostics(
        rms_residual=float(np.sqrt(np.mean(err**2))),
        max_residual=float(err.max()),
        condition_number=cond,
        params=s,
    )
    return path, diag


def fit_path(waypoints: Sequence[tuple[float, float]], degree: int = DEFAULT_FIT_DEGREE) -> PathPolynomial:
    """Least-squares polynomial path through ``waypoints`` on a chord-length parameter."""
    return fit_path_with_diagnostics(waypoints, degree)[0]


def straight_path(start, end) -> PathPolynomial:
    """Exact degree-1 path from ``start`` to ``end``."""
    (x0, y0), (x1, y1) = start, end
    length = math.hypot(x1 - x0, y1 - y0)
    return PathPolynomial((x0, x1 - x0), (y0, y1 - y0), s_scale=length, s_max=length)
