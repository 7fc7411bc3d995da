"""Running-cost families and the kinetic Hamiltonian.

Two cost families are supported: a local cost given by a truncated power
series in the density, ``F(x, m) = sum_k F_k(x) m**k / k!`` (no constant term),
and a nonlocal cost ``F(x, m) = int K(x, y) m(y) dy`` whose kernel rows have
zero mean. The Hamiltonian is ``H(x, p) = kappa(x) p**2 / 2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import Grid, SpaceTimeField, SpatialField, fields_from_csv, fields_to_csv, gradient

ROW_MEAN_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class LocalAnalyticCost:
    """Taylor coefficients ``F_1, ..., F_Kmax`` of a local running cost."""

    coeffs: tuple[SpatialField, ...]

    def __post_init__(self):
        object.__setattr__(self, "coeffs", tuple(self.coeffs))
        if not self.coeffs:
            raise ValueError("a local cost needs at least one Taylor coefficient")
        if len({c.grid for c in self.coeffs}) != 1:
            raise ValueError("all coefficients must live on the same grid")

    @property
    def kmax(self) -> int:
        return len(self.coeffs)

    @property
    def grid(self) -> Grid:
        return self.coeffs[0].grid

    def coefficient(self, k: int) -> np.ndarray:
        """Nodal values of ``F_k``; zero beyond the truncation order."""
        if k < 1:
            raise ValueError("Taylor orders start at 1")
        if k > self.kmax:
            return np.zeros(self.grid.n_x)
        return self.coeffs[k - 1].values

    def __call__(self, m: np.ndarray) -> np.ndarray:
        m = np.asarray(m, dtype=float)
        out = np.zeros_like(m)
        power = np.ones_like(m)
        for k, c in enumerate(self.coeffs, start=1):
            power = power * m
            out += c.values * power / math.factorial(k)
        return out

    def derivative(self, k: int, m: np.ndarray) -> np.ndarray:
        """``d^k F / dm^k`` at ``m``."""
        m = np.asarray(m, dtype=float)
        out = np.zeros_like(m)
        for j in range(k, self.kmax + 1):
            out += self.coefficient(j) * m ** (j - k) / math.factorial(j - k)
        return out

    def variation(self, k: int, *rhos: np.ndarray) -> np.ndarray:
        """k-th derivative at ``m = 0`` applied to the perturbations ``rhos``:
        ``F_k * rho_1 * ... * rho_k``."""
        if len(rhos) != k:
            raise ValueError(f"order {k} needs {k} perturbations, got {len(rhos)}")
        out = self.coefficient(k).copy()
        for r in rhos:
            out = out * r
        return out


@dataclass(frozen=True)
class KernelValidation:
    ok: bool
    row_means: np.ndarray = field(repr=False)
    worst_row: int
    worst_mean: float


def validate_kernel(K: np.ndarray, grid: Grid, tol: float = ROW_MEAN_TOL) -> KernelValidation:
    """Check that every row of ``K`` integrates to zero in ``y``."""
    K = np.asarray(K, dtype=float)
    if K.shape != (grid.n_x, grid.n_x):
        raise ValueError(f"kernel must be {grid.n_x}x{grid.n_x}, got {K.shape}")
    means = K @ grid.weights
    worst = int(np.argmax(np.abs(means)))
    return KernelValidation(bool(abs(means[worst]) <= tol), means, worst, float(means[worst]))


class InvalidKernelError(ValueError):
    def __init__(self, report: KernelValidation):
        super().__init__(
            f"kernel row {report.worst_row} has mean {report.worst_mean:.3e}; "
            "rows must integrate to zero")
        self.report = report


@dataclass(frozen=True, eq=False)
class NonlocalKernelCost:
    """Sampled kernel ``K(x_i, y_j)`` with zero row means."""

    kernel: np.ndarray = field(repr=False)
    grid: Grid

    def __post_init__(self):
        K = np.array(self.kernel, dtype=float)
        report = validate_kernel(K, self.grid)
        if not report.ok:
            raise InvalidKernelError(report)
        K.setflags(write=False)
        object.__setattr__(self, "kernel", K)

    @classmethod
    def from_samples(cls, K: np.ndarray, grid: Grid,
                     residue_tol: float | None = None) -> NonlocalKernelCost:
        """Load a sampled kernel, projecting away quadrature residue.

        Rows whose mean is at discretization level (``residue_tol``, default
        ``10 h^2 max|K|``) are shifted to mean exactly zero. Larger means
        indicate a kernel outside the admissible class and are rejected.
        """
        K = np.asarray(K, dtype=float)
        report = validate_kernel(K, grid)
        if residue_tol is None:
            residue_tol = 10.0 * grid.h**2 * max(float(np.abs(K).max()), 1.0)
        if abs(report.worst_mean) > max(residue_tol, ROW_MEAN_TOL):
            raise InvalidKernelError(report)
        return cls(K - report.row_means[:, None], grid)

    @classmethod
    def from_function(cls, grid: Grid, fn) -> NonlocalKernelCost:
        xx, yy = np.meshgrid(grid.x, grid.x, indexing="ij")
        return cls.from_samples(fn(xx, yy), grid)

    def apply(self, m: np.ndarray) -> np.ndarray:
        """``int K(x, y) m(y) dy`` for each row (time level) of ``m``."""
        m = np.asarray(m, dtype=float)
        return (m * self.grid.weights) @ self.kernel.T

    def __call__(self, m: np.ndarray) -> np.ndarray:
        return self.apply(m)

    def variation(self, k: int, *rhos: np.ndarray) -> np.ndarray:
        """k-th derivative at ``m = 0`` applied to ``rhos``; the cost is
        linear, so only ``k = 1`` is nonzero."""
        if len(rhos) != k:
            raise ValueError(f"order {k} needs {k} perturbations, got {len(rhos)}")
        if k == 1:
            return self.apply(rhos[0])
        return np.zeros(np.broadcast_shapes(*(np.shape(r) for r in rhos)))


@dataclass(frozen=True, eq=False)
class KineticHamiltonian:
    """``H(x, p) = kappa(x) p**2 / 2``; ``kappa`` may take either sign."""

    kappa: SpatialField

    def __call__(self, u: np.ndarray) -> np.ndarray:
        du = gradient(np.asarray(u, dtype=float), self.kappa.grid.h)
        return 0.5 * self.kappa.values * du * du

    def drift(self, u: np.ndarray) -> np.ndarray:
        """Nodal FPK drift ``kappa u_x``."""
        return self.kappa.values * gradient(np.asarray(u, dtype=float), self.kappa.grid.h)


def eval_local_cost(c: LocalAnalyticCost, m: SpaceTimeField) -> SpaceTimeField:
    return SpaceTimeField(c(m.values), m.grid)


def eval_nonlocal_cost(c: NonlocalKernelCost, m: SpaceTimeField) -> SpaceTimeField:
    return SpaceTimeField(c.apply(m.values), m.grid)


def eval_hamiltonian(hk: KineticHamiltonian, u: SpaceTimeField) -> SpaceTimeField:
    return SpaceTimeField(hk(u.values), u.grid)


def save_kernel_csv(K: np.ndarray, grid: Grid) -> str:
    return fields_to_csv(grid.x, np.asarray(K))


def load_kernel_csv(text: str, grid: Grid) -> NonlocalKernelCost:
    x, rows = fields_from_csv(text)
    if x.size != grid.n_x or rows.shape != (grid.n_x, grid.n_x):
        raise ValueError("kernel CSV does not match the grid")
    return NonlocalKernelCost.from_samples(rows, grid)
