"""Radial grids, radial functions and the quadratures used by every model.

A radial function on ``R^N`` (N = 2 or 3) is stored by its nodal values on
``[0, r_max]`` with the truncation convention ``u(r_max) = 0``.

Uniform grids use a fourth-order scheme: trapezoidal nodal weights with
end corrections for the ``L^p`` integrals, and a staggered four-point derivative at cell midpoints
(even reflection at the origin, odd reflection at ``r_max``) weighted by a
midpoint rule for the Dirichlet energy.  Graded grids fall back to the
second-order P1 scheme (hat-function weights, exact element stiffness).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import PchipInterpolator
from scipy.linalg import solveh_banded

__all__ = [
    "RadialGrid",
    "RadialFunction",
    "make_grid",
    "sphere_area",
    "lp_norm",
    "lp_integral",
    "l2_inner",
    "grad_norm_sq",
    "h1_solve",
    "h1_precondition",
    "h1_inner",
    "gn_ratio",
    "scale",
    "dilate_exact",
    "load_profile_csv",
]

# Gregory end corrections at r_max (exact for cubics).
_GREGORY = (3.0 / 8.0, 7.0 / 6.0, 23.0 / 24.0)
# Euler-Maclaurin corrections at the origin for N = 2, where f(r) r has a
# non-vanishing first and third derivative.  For N = 3 every odd derivative
# of f(r) r^2 vanishes at 0 and the plain trapezoidal rule needs no fix.
_ORIGIN_2D = (11.0 / 120.0, 119.0 / 120.0)
# Staggered fourth-order first derivative at r_{j+1/2}: offsets j-1 .. j+2.
_STAGGERED = ((-1, 1.0 / 24.0), (0, -27.0 / 24.0), (1, 27.0 / 24.0), (2, -1.0 / 24.0))


def sphere_area(dimension: int) -> float:
    """Surface measure of the unit sphere in ``R^dimension``."""
    if dimension == 2:
        return 2.0 * np.pi
    if dimension == 3:
        return 4.0 * np.pi
    raise ValueError(f"dimension must be 2 or 3, got {dimension}")


@dataclass(frozen=True, eq=False)
class RadialGrid:
    """Discretisation of ``[0, r_max]`` with quadrature and stiffness data.

    ``weights`` integrate ``f(|x|)`` over the ball, ``stiff_op`` maps nodal
    values to derivative samples at the cell midpoints, and ``stiff_weights``
    turn squared midpoint derivatives into ``||grad u||_2^2``.
    """

    dimension: int
    r_max: float
    grading: float
    nodes: np.ndarray
    weights: np.ndarray
    stiff_op: sp.csr_matrix
    stiff_weights: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n(self) -> int:
        return self.nodes.size

    @property
    def uniform(self) -> bool:
        return self.grading == 1.0

    def dilated(self, t: float) -> "RadialGrid":
        """Grid carrying ``x -> t x``: nodes divided by ``t``."""
        return make_grid(self.dimension, self.r_max / t, self.n, self.grading)

    def same_as(self, other: "RadialGrid") -> bool:
        return (
            self is other
            or (
                self.dimension == other.dimension
                and self.n == other.n
                and self.grading == other.grading
                and self.r_max == other.r_max
            )
        )

    def stiffness_bands(self) -> np.ndarray:
        """Lower bands of the stiffness matrix restricted to free nodes."""
        bands = self._cache.get("bands")
        if bands is None:
            d = self.stiff_op[:, :-1]
            k = (d.T @ sp.diags(self.stiff_weights) @ d).tocsr()
            m = k.shape[0]
            bands = np.zeros((4, m))
            for off in range(4):
                diag = k.diagonal(-off)
                bands[off, : m - off] = diag
            self._cache["bands"] = bands
        return bands

    def stiffness_apply(self, values: np.ndarray) -> np.ndarray:
        """``K u`` as a dual vector on all nodes (last entry zero)."""
        du = self.stiff_op @ values
        out = self.stiff_op.T @ (self.stiff_weights * du)
        out[-1] = 0.0
        return out


def make_grid(dimension: int, r_max: float, n: int, grading: float = 1.0) -> RadialGrid:
    """Build a radial grid on ``[0, r_max]`` with ``n`` nodes.

    ``grading`` is the ratio of the largest to the smallest spacing; the
    spacing grows geometrically towards ``r_max``.  ``grading == 1`` gives
    the uniform fourth-order scheme.
    """
    if dimension not in (2, 3):
        raise ValueError(f"dimension must be 2 or 3, got {dimension}")
    if not (np.isfinite(r_max) and r_max > 0):
        raise ValueError(f"r_max must be positive, got {r_max}")
    if n < 64:
        raise ValueError(f"need at least 64 nodes, got {n}")
    if not (grading >= 1.0):
        raise ValueError(f"grading must be >= 1, got {grading}")
    area = sphere_area(dimension)
    if grading == 1.0:
        return _uniform_grid(dimension, float(r_max), n, area)
    return _graded_grid(dimension, float(r_max), n, float(grading), area)


def _uniform_grid(dim: int, r_max: float, n: int, area: float) -> RadialGrid:
    h = r_max / (n - 1)
    r = np.arange(n) * h
    c = np.ones(n)
    for k, g in enumerate(_GREGORY):
        c[n - 1 - k] = g
    weights = area * h * c * r ** (dim - 1)
    if dim == 2:
        weights[0] = area * h * h * _ORIGIN_2D[0]
        weights[1] = area * h * h * _ORIGIN_2D[1]
    rmid = (np.arange(n - 1) + 0.5) * h
    stiff_w = area * h * rmid ** (dim - 1)

    rows, cols, vals = [], [], []
    for j in range(n - 1):
        for off, coef in _STAGGERED:
            k, sign = j + off, 1.0
            if k < 0:
                k = -k
            elif k > n - 1:
                k, sign = 2 * (n - 1) - k, -1.0
            rows.append(j)
            cols.append(k)
            vals.append(sign * coef / h)
    d = sp.csr_matrix((vals, (rows, cols)), shape=(n - 1, n))
    return _freeze(RadialGrid(dim, r_max, 1.0, r, weights, d, stiff_w))


def _graded_grid(dim: int, r_max: float, n: int, grading: float, area: float) -> RadialGrid:
    q = grading ** (1.0 / (n - 2))
    steps = q ** np.arange(n - 1)
    r = np.concatenate([[0.0], np.cumsum(steps)])
    r *= r_max / r[-1]
    r[-1] = r_max
    hs = np.diff(r)
    a, b = r[:-1], r[1:]
    # exact integrals of the hat functions against r^(N-1)
    if dim == 3:
        left = (b**4 - a**4) / 4 - a * (b**3 - a**3) / 3
        right = b * (b**3 - a**3) / 3 - (b**4 - a**4) / 4
        mom = (b**3 - a**3) / 3
    else:
        left = (b**3 - a**3) / 3 - a * (b**2 - a**2) / 2
        right = b * (b**2 - a**2) / 2 - (b**3 - a**3) / 3
        mom = (b**2 - a**2) / 2
    weights = np.zeros(n)
    weights[1:] += area * left / hs
    weights[:-1] += area * right / hs
    stiff_w = area * mom
    idx = np.arange(n - 1)
    d = sp.csr_matrix(
        (np.concatenate([-1.0 / hs, 1.0 / hs]), (np.concatenate([idx, idx]), np.concatenate([idx, idx + 1]))),
        shape=(n - 1, n),
    )
    return _freeze(RadialGrid(dim, r_max, grading, r, weights, d, stiff_w))


def _freeze(grid: RadialGrid) -> RadialGrid:
    for arr in (grid.nodes, grid.weights, grid.stiff_weights):
        arr.setflags(write=False)
    return grid


@dataclass(frozen=True, eq=False)
class RadialFunction:
    """Nodal values of a radial function on a grid, ``u(r_max) = 0``."""

    grid: RadialGrid
    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.array(self.values, dtype=float)
        if v.shape != (self.grid.n,):
            raise ValueError(f"expected {self.grid.n} values, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("radial function has non-finite values")
        v[-1] = 0.0
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_callable(cls, grid: RadialGrid, f) -> "RadialFunction":
        return cls(grid, np.asarray(f(grid.nodes), dtype=float))

    def with_values(self, values: np.ndarray) -> "RadialFunction":
        return RadialFunction(self.grid, values)

    def __neg__(self) -> "RadialFunction":
        return RadialFunction(self.grid, -self.values)

    def __add__(self, other: "RadialFunction") -> "RadialFunction":
        _check_same(self, other)
        return RadialFunction(self.grid, self.values + other.values)

    def __sub__(self, other: "RadialFunction") -> "RadialFunction":
        _check_same(self, other)
        return RadialFunction(self.grid, self.values - other.values)

    def __mul__(self, c: float) -> "RadialFunction":
        return RadialFunction(self.grid, float(c) * self.values)

    __rmul__ = __mul__

    def __call__(self, r) -> np.ndarray:
        """Monotone cubic interpolation, zero beyond ``r_max``."""
        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r)
        inside = r <= self.grid.r_max
        out[inside] = _interp(self)(r[inside])
        return out

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["r", "u"])
            for r, u in zip(self.grid.nodes, self.values):
                w.writerow([f"{r:.17g}", f"{u:.17g}"])

    def to_dict(self) -> dict:
        return {
            "dimension": self.grid.dimension,
            "r_max": self.grid.r_max,
            "n": self.grid.n,
            "grading": self.grid.grading,
            "values": [float(x) for x in self.values],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RadialFunction":
        grid = make_grid(int(d["dimension"]), float(d["r_max"]), int(d["n"]), float(d.get("grading", 1.0)))
        return cls(grid, np.asarray(d["values"], dtype=float))

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def from_json(cls, path: str | Path) -> "RadialFunction":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _check_same(a: RadialFunction, b: RadialFunction) -> None:
    if not a.grid.same_as(b.grid):
        raise ValueError("radial functions live on different grids")


def _interp(u: RadialFunction) -> PchipInterpolator:
    return PchipInterpolator(u.grid.nodes, u.values, extrapolate=False)


def load_profile_csv(path: str | Path, dimension: int, grading: float = 1.0) -> list[RadialFunction]:
    """Read a CSV with an ``r`` column and one column per component."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=float)
    if header[0] != "r":
        raise ValueError(f"{path}: first column must be 'r'")
    r = body[:, 0]
    grid = make_grid(dimension, float(r[-1]), r.size, grading)
    if not np.allclose(grid.nodes, r, rtol=1e-12, atol=1e-12 * r[-1]):
        raise ValueError(f"{path}: nodes do not match a grid with grading {grading}")
    return [RadialFunction(grid, body[:, k]) for k in range(1, body.shape[1])]


# --------------------------------------------------------------------------
# quadratures


def lp_integral(u: RadialFunction, p: float, positive_part: bool = False) -> float:
    """``int |u|^p`` (or ``int u_+^p``) over the ball."""
    v = np.maximum(u.values, 0.0) if positive_part else np.abs(u.values)
    return float(u.grid.weights @ v**p)


def lp_norm(u: RadialFunction, p: float) -> float:
    """``||u||_p`` over ``R^N`` for ``p >= 1``."""
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    return lp_integral(u, p) ** (1.0 / p)


def l2_inner(u: RadialFunction, v: RadialFunction) -> float:
    _check_same(u, v)
    return float(u.grid.weights @ (u.values * v.values))


def grad_norm_sq(u: RadialFunction) -> float:
    """Discrete Dirichlet energy ``||grad u||_2^2``."""
    du = u.grid.stiff_op @ u.values
    return float(u.grid.stiff_weights @ du**2)


def h1_inner(u: RadialFunction, v: RadialFunction, a: float = 1.0, c: float = 1.0) -> float:
    """``a <grad u, grad v> + c <u, v>``."""
    _check_same(u, v)
    g = u.grid
    du, dv = g.stiff_op @ u.values, g.stiff_op @ v.values
    return float(a * (g.stiff_weights @ (du * dv)) + c * (g.weights @ (u.values * v.values)))


def h1_solve(grid: RadialGrid, rhs: np.ndarray, a: float = 1.0, c: float = 1.0) -> np.ndarray:
    """Solve ``(a K + c W) w = rhs`` for a dual vector ``rhs`` (Riesz map)."""
    ab = a * grid.stiffness_bands()
    ab[0] = ab[0] + c * grid.weights[:-1]
    out = np.zeros(grid.n)
    out[:-1] = solveh_banded(ab, rhs[:-1], lower=True, check_finite=False)
    return out


def h1_precondition(f: RadialFunction, c: float = 1.0) -> RadialFunction:
    """Weak solution of ``(-Delta + c) w = f`` with ``w(r_max) = 0``."""
    if c <= 0:
        raise ValueError(f"c must be positive, got {c}")
    g = f.grid
    return RadialFunction(g, h1_solve(g, g.weights * f.values, 1.0, c))


def gn_ratio(u: RadialFunction, p: float) -> float:
    """Gagliardo-Nirenberg quotient ``||u||_p^p / (||grad u||_2^q ||u||_2^(p-q))``.

    ``q = (p - 2) N / 2``; the quotient is invariant under ``u -> u_t`` and
    ``u -> c u``.
    """
    n = u.grid.dimension
    crit = np.inf if n == 2 else 2.0 * n / (n - 2)
    if not (2.0 < p < crit):
        raise ValueError(f"gn_ratio needs 2 < p < {crit:g}, got {p}")
    q = (p - 2) * n / 2
    a = grad_norm_sq(u)
    m = lp_integral(u, 2)
    if a <= 0 or m <= 0:
        raise ValueError("gn_ratio is undefined for the zero function")
    return lp_integral(u, p) / (a ** (q / 2) * m ** ((p - q) / 2))


# --------------------------------------------------------------------------
# dilations


def scale(u: RadialFunction, t: float) -> RadialFunction:
    """Mass-preserving dilation ``u_t(r) = t^(N/2) u(t r)`` on the same grid.

    Values are obtained by monotone cubic resampling, zero beyond ``r_max``.
    """
    if not (t > 0 and np.isfinite(t)):
        raise ValueError(f"dilation factor must be positive, got {t}")
    g = u.grid
    return RadialFunction(g, t ** (g.dimension / 2) * u(t * g.nodes))


def dilate_exact(u: RadialFunction, t: float) -> RadialFunction:
    """``u_t`` represented exactly on the dilated grid ``nodes / t``."""
    if not (t > 0 and np.isfinite(t)):
        raise ValueError(f"dilation factor must be positive, got {t}")
    g = u.grid.dilated(t)
    return RadialFunction(g, t ** (g.dimension / 2) * u.values)
