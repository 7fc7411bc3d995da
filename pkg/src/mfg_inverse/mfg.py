"""Coupled forward-backward MFG system with kinetic Hamiltonian::

    -u_t - beta u_xx + kappa u_x**2 / 2 = F(x, m),   u(., T) = psi
     m_t - beta m_xx - (m kappa u_x)_x = 0,          m(., 0) = m0

with homogeneous Neumann data, solved by damped block Picard iteration, and
the boundary measurement map ``(m0, psi) -> (u on the lateral boundary,
u(., 0))``.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Union

import numpy as np

from .costs import KineticHamiltonian, LocalAnalyticCost, NonlocalKernelCost
from .errors import AdmissibilityError, NegativeDensityWarning, NonConvergenceError
from .grid import Grid, SpaceTimeField, SpatialField, fields_from_csv, fields_to_csv, integrate_space
from .parabolic import (
    DriftField,
    SolverOptions,
    backward_residual,
    forward_residual,
    solve_backward,
    solve_forward,
)

CostModel = Union[LocalAnalyticCost, NonlocalKernelCost]

MASS_SLACK = 1e-12


def check_admissible(m0: SpatialField | np.ndarray, grid: Grid | None = None) -> None:
    """Raise :class:`AdmissibilityError` unless ``m0`` is a nonnegative
    density of total mass at most one.

    The zero density is accepted: it is the base state of both
    linearization channels.
    """
    values = m0.values if isinstance(m0, SpatialField) else np.asarray(m0, dtype=float)
    grid = m0.grid if isinstance(m0, SpatialField) else grid
    lowest = float(values.min())
    if lowest < 0.0:
        where = float(grid.x[int(np.argmin(values))])
        raise AdmissibilityError(
            f"initial density is negative (min {lowest:.3e} at x={where:.4f}); "
            "densities must satisfy m0 >= 0 with mass in (0, 1]")
    mass = integrate_space(values, grid)
    if mass > 1.0 + MASS_SLACK:
        raise AdmissibilityError(
            f"initial density has mass {mass:.6g} > 1; densities must have mass in (0, 1]")


@dataclass(frozen=True, eq=False)
class MfgModel:
    """The unknowns of the inverse problem: Hamiltonian and running cost."""

    hamiltonian: KineticHamiltonian
    cost: CostModel

    @property
    def grid(self) -> Grid:
        return self.hamiltonian.kappa.grid

    def problem(self, m0: SpatialField, psi: SpatialField, unchecked: bool = False) -> MfgProblem:
        return MfgProblem(self.hamiltonian, self.cost, m0, psi, self.grid, unchecked)


@dataclass(frozen=True, eq=False)
class MfgProblem:
    hamiltonian: KineticHamiltonian
    cost: CostModel
    m0: SpatialField
    psi: SpatialField
    grid: Grid
    unchecked: bool = False

    def __post_init__(self):
        for f in (self.hamiltonian.kappa, self.m0, self.psi):
            if f.grid != self.grid:
                raise ValueError("all problem data must share the problem grid")
        if not self.unchecked:
            check_admissible(self.m0)


@dataclass(frozen=True)
class PicardOptions:
    max_iter: int = 200
    tol: float = 1e-10
    damping: float = 0.5

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not 0.0 < self.damping <= 1.0:
            raise ValueError("damping must lie in (0, 1]")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


class MfgSolution(NamedTuple):
    u: SpaceTimeField
    m: SpaceTimeField
    iterations: int
    residual: float


def _coupling(cost: CostModel, m: np.ndarray) -> np.ndarray:
    return cost(m)


def _sweep(problem: MfgProblem, u: np.ndarray, m: np.ndarray, solver: SolverOptions):
    """One Gauss-Seidel sweep: FPK with the drift of ``u``, then HJB with
    the coupling of the new density and the Hamiltonian lagged at ``u``."""
    grid = problem.grid
    hk = problem.hamiltonian
    drift = hk.drift(u)
    m_new = solve_forward(problem.m0, DriftField(drift, grid), None, grid, solver).values
    src = _coupling(problem.cost, m_new) - hk(u)
    u_new = solve_backward(problem.psi, SpaceTimeField(src, grid), grid, solver).values
    return u_new, m_new


def fixed_point_residual(problem: MfgProblem, u: np.ndarray, m: np.ndarray,
                         solver: SolverOptions | None = None) -> tuple[float, float]:
    """Residuals of ``(u, m)`` measured in solution units.

    Each equation is re-solved with every nonlinear term frozen at the given
    pair; the returned numbers are the max-norm distances to those solves.
    Both vanish exactly at a discrete solution.
    """
    solver = solver or SolverOptions()
    grid = problem.grid
    hk = problem.hamiltonian
    m_chk = solve_forward(problem.m0, DriftField(hk.drift(u), grid), None, grid, solver).values
    src = _coupling(problem.cost, m) - hk(u)
    u_chk = solve_backward(problem.psi, SpaceTimeField(src, grid), grid, solver).values
    return float(np.abs(u_chk - u).max()), float(np.abs(m_chk - m).max())


def discrete_residuals(problem: MfgProblem, u: np.ndarray, m: np.ndarray,
                       solver: SolverOptions | None = None) -> tuple[float, float]:
    """Max-norm residuals of the two time-stepping equations (scaled by dt)
    after substituting ``(u, m)``; boundary and initial/terminal rows
    included."""
    solver = solver or SolverOptions()
    grid = problem.grid
    hk = problem.hamiltonian
    src = _coupling(problem.cost, m) - hk(u)
    r_u = backward_residual(u, src, grid, solver)
    r_m = forward_residual(m, hk.drift(u), np.zeros(grid.shape), grid, solver)
    r_u_end = np.abs(u[-1] - problem.psi.values).max()
    r_m_end = np.abs(m[0] - problem.m0.values).max()
    return (float(max(np.abs(r_u).max(), r_u_end)), float(max(np.abs(r_m).max(), r_m_end)))


def solve_mfg(problem: MfgProblem, opts: PicardOptions | None = None,
              solver: SolverOptions | None = None) -> MfgSolution:
    """Damped block Picard iteration for the coupled system.

    Starts from ``u = mean(psi)`` and the heat evolution of ``m0``. Each sweep
    solves the FPK equation with the current drift, then the HJB equation
    with the new coupling and the Hamiltonian evaluated at the current ``u``;
    both fields are relaxed with factor ``opts.damping``. Iteration stops
    when the undamped sweep changes neither field by more than ``opts.tol``
    in max norm, and the undamped sweep output is returned.

    Raises :class:`NonConvergenceError` when the budget is exhausted or the
    iterates blow up, which signals data outside the small-data regime.
    """
    opts = opts or PicardOptions()
    solver = solver or SolverOptions()
    grid = problem.grid
    u = np.full(grid.shape, integrate_space(problem.psi))
    m = solve_forward(problem.m0, None, None, grid, solver).values
    theta = opts.damping
    change = np.inf
    for it in range(1, opts.max_iter + 1):
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                u_new, m_new = _sweep(problem, u, m, solver)
        except (FloatingPointError, np.linalg.LinAlgError):
            raise NonConvergenceError("Picard iterates diverged", it, math.inf) from None
        change = max(float(np.abs(u_new - u).max()), float(np.abs(m_new - m).max()))
        if not np.isfinite(change):
            raise NonConvergenceError("Picard iterates diverged", it, change)
        if change < opts.tol:
            u, m = u_new, m_new
            break
        u = theta * u_new + (1.0 - theta) * u
        m = theta * m_new + (1.0 - theta) * m
    else:
        raise NonConvergenceError("Picard iteration budget exhausted", opts.max_iter, change)

    residual = max(fixed_point_residual(problem, u, m, solver))
    if solver.drift_discretization == "centered_flux" and m.min() < -10.0 * opts.tol:
        warnings.warn(f"density undershoots to {m.min():.3e}", NegativeDensityWarning,
                      stacklevel=2)
    return MfgSolution(SpaceTimeField(u, grid), SpaceTimeField(m, grid), it, residual)


@dataclass(frozen=True, eq=False)
class MeasurementRecord:
    """Boundary data of ``u``: its traces at ``x = 0`` and ``x = 1`` for all
    times and its snapshot at ``t = 0``.

    The normal derivative on the lateral boundary is identically zero and is
    not stored. ``order`` tags records that hold a variation of the data
    rather than the data itself.
    """

    trace_left: np.ndarray = field(repr=False)
    trace_right: np.ndarray = field(repr=False)
    initial_snapshot: np.ndarray = field(repr=False)
    grid: Grid
    metadata: dict = field(default_factory=dict)
    order: str | None = None

    def __post_init__(self):
        for name, n in (("trace_left", self.grid.n_t + 1), ("trace_right", self.grid.n_t + 1),
                        ("initial_snapshot", self.grid.n_x)):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != (n,):
                raise ValueError(f"{name} must have length {n}, got shape {v.shape}")
            object.__setattr__(self, name, v)

    @property
    def boundary_trace(self) -> tuple[np.ndarray, np.ndarray]:
        return self.trace_left, self.trace_right

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.trace_left, self.trace_right, self.initial_snapshot])

    @classmethod
    def from_vector(cls, vec: np.ndarray, grid: Grid, metadata=None, order=None):
        n = grid.n_t + 1
        return cls(vec[:n], vec[n:2 * n], vec[2 * n:], grid, dict(metadata or {}), order)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def to_dict(self) -> dict:
        g = self.grid
        return {
            "grid": {"n_x": g.n_x, "n_t": g.n_t, "T": g.T, "beta": g.beta},
            "metadata": self.metadata,
            "order": self.order,
            "boundary_trace_csv": fields_to_csv(g.t, np.vstack([self.trace_left, self.trace_right])),
            "initial_snapshot_csv": fields_to_csv(g.x, self.initial_snapshot[None, :]),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> MeasurementRecord:
        gd = doc["grid"]
        grid = Grid(int(gd["n_x"]), int(gd["n_t"]), float(gd["T"]), float(gd["beta"]))
        _, traces = fields_from_csv(doc["boundary_trace_csv"])
        _, snap = fields_from_csv(doc["initial_snapshot_csv"])
        return cls(traces[0], traces[1], snap[0], grid, doc.get("metadata", {}), doc.get("order"))

    @classmethod
    def from_json(cls, text: str) -> MeasurementRecord:
        return cls.from_dict(json.loads(text))


def measure(u: SpaceTimeField, metadata: dict | None = None) -> MeasurementRecord:
    v = u.values
    return MeasurementRecord(v[:, 0].copy(), v[:, -1].copy(), v[0].copy(), u.grid,
                             dict(metadata or {}))
