"""Uniform space-time grid on (0, 1) x [0, T], trapezoid quadrature and the
Neumann cosine basis shared by every solver in the package."""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Grid:
    """Uniform discretization of ``[0, 1] x [0, T]``.

    Nodes ``x_i = i * h`` include both endpoints; times ``t_j = j * dt``
    include ``0`` and ``T``.
    """

    n_x: int
    n_t: int
    T: float
    beta: float

    @property
    def h(self) -> float:
        return 1.0 / (self.n_x - 1)

    @property
    def dt(self) -> float:
        return self.T / self.n_t

    @property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n_x)

    @property
    def t(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_t + 1)

    @property
    def weights(self) -> np.ndarray:
        """Trapezoid weights; they sum to exactly one."""
        w = np.full(self.n_x, self.h)
        w[0] = w[-1] = 0.5 * self.h
        return w

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_t + 1, self.n_x)


def make_grid(n_x: int, n_t: int, T: float, beta: float) -> Grid:
    if int(n_x) != n_x or n_x < 3:
        raise ValueError(f"n_x must be an integer >= 3, got {n_x}")
    if int(n_t) != n_t or n_t < 1:
        raise ValueError(f"n_t must be an integer >= 1, got {n_t}")
    if not np.isfinite(T) or T <= 0:
        raise ValueError(f"T must be positive, got {T}")
    if not np.isfinite(beta) or beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    return Grid(int(n_x), int(n_t), float(T), float(beta))


def _check_finite(values: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(values)):
        raise FloatingPointError(f"{what} contains non-finite entries")


@dataclass(frozen=True, eq=False)
class SpatialField:
    """Samples of a function of ``x`` on the grid nodes."""

    values: np.ndarray
    grid: Grid = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.n_x,):
            raise ValueError(f"expected shape ({self.grid.n_x},), got {v.shape}")
        _check_finite(v, "SpatialField")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, grid: Grid, fn) -> SpatialField:
        return cls(np.broadcast_to(fn(grid.x), (grid.n_x,)).astype(float), grid)

    @classmethod
    def constant(cls, grid: Grid, c: float) -> SpatialField:
        return cls(np.full(grid.n_x, float(c)), grid)

    def to_csv(self) -> str:
        return fields_to_csv(self.grid.x, self.values[None, :])


@dataclass(frozen=True, eq=False)
class SpaceTimeField:
    """Samples on the full grid; row ``j`` is time level ``t_j``."""

    values: np.ndarray
    grid: Grid = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise ValueError(f"expected shape {self.grid.shape}, got {v.shape}")
        _check_finite(v, "SpaceTimeField")
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, grid: Grid) -> SpaceTimeField:
        return cls(np.zeros(grid.shape), grid)

    @classmethod
    def from_function(cls, grid: Grid, fn) -> SpaceTimeField:
        tt, xx = np.meshgrid(grid.t, grid.x, indexing="ij")
        return cls(np.broadcast_to(fn(xx, tt), grid.shape).astype(float), grid)

    def at(self, j: int) -> SpatialField:
        return SpatialField(self.values[j], self.grid)

    def to_csv(self) -> str:
        return fields_to_csv(self.grid.x, self.values)


def integrate_space(f: SpatialField | np.ndarray, grid: Grid | None = None) -> float:
    """Trapezoid approximation of the integral over (0, 1)."""
    if isinstance(f, SpatialField):
        grid, values = f.grid, f.values
    else:
        values = np.asarray(f, dtype=float)
    return float(np.dot(grid.weights, values))


def neumann_eigenpair(k: int, grid: Grid) -> tuple[float, SpatialField]:
    """Return ``((k*pi)**2, cos(k*pi*x))``.

    The sampled cosine is also an exact eigenvector of the discrete
    three-point Neumann Laplacian used by the solvers, with eigenvalue
    ``4 sin(k*pi*h/2)**2 / h**2``; see :func:`discrete_eigenvalue`.
    """
    if k < 0:
        raise ValueError(f"mode index must be >= 0, got {k}")
    return (k * np.pi) ** 2, SpatialField(np.cos(k * np.pi * grid.x), grid)


def discrete_eigenvalue(k: int, grid: Grid) -> float:
    return 4.0 * np.sin(0.5 * k * np.pi * grid.h) ** 2 / grid.h**2


def mode_norm_sq(k: int) -> float:
    return 1.0 if k == 0 else 0.5


def cosine_coeff(f: SpatialField, k: int) -> float:
    """Trapezoid inner product of ``f`` with ``cos(k*pi*x)``."""
    if k < 0:
        raise ValueError(f"mode index must be >= 0, got {k}")
    g = np.cos(k * np.pi * f.grid.x)
    return float(np.dot(f.grid.weights, f.values * g))


def cosine_synthesis(coeffs, grid: Grid) -> SpatialField:
    """Inverse of :func:`cosine_coeff` on the span of the given modes.

    ``coeffs`` is an iterable of ``(k, c_k)`` pairs where ``c_k`` is the inner
    product with ``cos(k*pi*x)``.
    """
    coeffs = list(coeffs)
    modes = [int(k) for k, _ in coeffs]
    if len(set(modes)) != len(modes):
        raise ValueError("duplicate mode indices in cosine synthesis")
    out = np.zeros(grid.n_x)
    for k, c in coeffs:
        if k < 0:
            raise ValueError(f"mode index must be >= 0, got {k}")
        out += c / mode_norm_sq(k) * np.cos(k * np.pi * grid.x)
    return SpatialField(out, grid)


def cosine_series(amplitudes, grid: Grid) -> SpatialField:
    """Evaluate ``sum a_k cos(k*pi*x)`` from ``(k, a_k)`` amplitude pairs."""
    out = np.zeros(grid.n_x)
    for k, a in amplitudes:
        out += float(a) * np.cos(int(k) * np.pi * grid.x)
    return SpatialField(out, grid)


def gradient(values: np.ndarray, h: float) -> np.ndarray:
    """Central difference in ``x`` along the last axis.

    Boundary nodes use the reflected ghost value of the Neumann condition,
    so the gradient there is exactly zero.
    """
    g = np.zeros_like(values)
    g[..., 1:-1] = (values[..., 2:] - values[..., :-2]) / (2.0 * h)
    return g


def fields_to_csv(x: np.ndarray, rows: np.ndarray) -> str:
    buf = io.StringIO()
    buf.write(",".join(repr(float(v)) for v in x))
    buf.write("\n")
    for row in np.atleast_2d(rows):
        buf.write(",".join(repr(float(v)) for v in row))
        buf.write("\n")
    return buf.getvalue()


def fields_from_csv(text: str) -> tuple[np.ndarray, np.ndarray]:
    """Parse CSV written by :func:`fields_to_csv`; returns ``(x, rows)``."""
    lines = [ln for ln in text.strip().splitlines() if ln]
    x = np.array([float(v) for v in lines[0].split(",")])
    rows = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    return x, rows.reshape(len(lines) - 1, x.size)


def spatial_from_csv(text: str, grid: Grid) -> SpatialField:
    x, rows = fields_from_csv(text)
    if x.size != grid.n_x or rows.shape[0] != 1:
        raise ValueError("CSV does not hold a single spatial row on this grid")
    return SpatialField(rows[0], grid)


def spacetime_from_csv(text: str, grid: Grid) -> SpaceTimeField:
    x, rows = fields_from_csv(text)
    if x.size != grid.n_x:
        raise ValueError("CSV x-coordinates do not match the grid")
    return SpaceTimeField(rows, grid)
