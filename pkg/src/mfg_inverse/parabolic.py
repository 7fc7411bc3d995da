"""Linear parabolic solves with homogeneous Neumann data.

Backward (HJB-type)::

    -u_t - beta u_xx = s(x, t),   u(., T) = terminal,   u_x = 0 at x = 0, 1

Forward (FPK-type), written in flux form::

    m_t - beta m_xx - (m a)_x = s(x, t),   m(., 0) = initial

Space is discretized by finite volumes on the node-centred cells of the
uniform grid (half cells at the endpoints), which is the three-point
Laplacian with ghost-node reflection. Boundary half-node fluxes vanish, so
for ``s = 0`` the trapezoid mass is conserved to round-off for any drift.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Grid, SpaceTimeField, SpatialField
from .kernels import theta_march

SCHEMES = {"crank_nicolson": 0.5, "implicit_euler": 1.0}
DRIFT_DISCRETIZATIONS = ("centered_flux", "upwind_flux")
BOUNDARY_FORMS = ("zero_total_flux", "neumann")


@dataclass(frozen=True)
class SolverOptions:
    """Time scheme and drift discretization.

    ``boundary`` selects the discrete FPK boundary condition:
    ``"zero_total_flux"`` closes both the diffusive and the advective flux;
    ``"neumann"`` closes only the diffusive flux and lets the nodal drift
    carry mass through the endpoint. The two agree whenever the nodal drift
    vanishes at the endpoints, which is the case for drifts built from
    Neumann value functions.
    """

    scheme: str = "crank_nicolson"
    drift_discretization: str = "centered_flux"
    boundary: str = "zero_total_flux"

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.drift_discretization not in DRIFT_DISCRETIZATIONS:
            raise ValueError(f"unknown drift discretization {self.drift_discretization!r}")
        if self.boundary not in BOUNDARY_FORMS:
            raise ValueError(f"unknown boundary form {self.boundary!r}")

    @property
    def theta(self) -> float:
        return SCHEMES[self.scheme]


@dataclass(frozen=True, eq=False)
class DriftField:
    """Nodal transport coefficient ``a(x, t) = kappa(x) u_x(x, t)``."""

    values: np.ndarray
    grid: Grid

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise ValueError(f"expected shape {self.grid.shape}, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise FloatingPointError("DriftField contains non-finite entries")
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, grid: Grid) -> DriftField:
        return cls(np.zeros(grid.shape), grid)


def cell_volumes(grid: Grid) -> np.ndarray:
    return grid.weights


def operator_bands(drift: np.ndarray | None, grid: Grid, opts: SolverOptions):
    """Bands of ``A m = beta m_xx + (m a)_x`` at every time level.

    ``drift`` is the nodal drift, shape ``(n_t + 1, n_x)``, or ``None``.
    Returns ``(lower, diag, upper)``, each ``(n_t + 1, n_x)`` (possibly a
    broadcast view when there is no drift).
    """
    h, beta, n = grid.h, grid.beta, grid.n_x
    vol = cell_volumes(grid)
    d = beta / h
    lower = np.full(n, d) / vol
    upper = np.full(n, d) / vol
    diag = -2.0 * d / vol
    diag[0] = diag[-1] = -d / vol[0]
    lower[0] = upper[-1] = 0.0
    if drift is None:
        shape = grid.shape
        return (np.broadcast_to(lower, shape), np.broadcast_to(diag, shape),
                np.broadcast_to(upper, shape))

    a = np.asarray(drift, dtype=float)
    a_half = 0.5 * (a[:, 1:] + a[:, :-1])
    if opts.drift_discretization == "centered_flux":
        c_left = 0.5 * a_half
        c_right = 0.5 * a_half
    else:
        c_left = np.minimum(a_half, 0.0)
        c_right = np.maximum(a_half, 0.0)
    lo = np.broadcast_to(lower, a.shape).copy()
    di = np.broadcast_to(diag, a.shape).copy()
    up = np.broadcast_to(upper, a.shape).copy()
    # flux J_{i+1/2} = c_left m_i + c_right m_{i+1}
    di[:, :-1] += c_left / vol[:-1]
    up[:, :-1] += c_right / vol[:-1]
    di[:, 1:] -= c_right / vol[1:]
    lo[:, 1:] -= c_left / vol[1:]
    if opts.boundary == "neumann":
        di[:, 0] -= a[:, 0] / vol[0]
        di[:, -1] += a[:, -1] / vol[-1]
    return lo, di, up


def _as_values(field, grid: Grid, shape) -> np.ndarray:
    if field is None:
        return np.zeros(shape)
    v = field.values if hasattr(field, "values") else np.asarray(field, dtype=float)
    if v.shape != shape:
        raise ValueError(f"expected shape {shape}, got {v.shape}")
    return v


def solve_backward(terminal: SpatialField, source: SpaceTimeField | None, grid: Grid,
                   opts: SolverOptions | None = None) -> SpaceTimeField:
    """Solve ``-u_t - beta u_xx = s`` backward from ``u(., T) = terminal``."""
    opts = opts or SolverOptions()
    term = _as_values(terminal, grid, (grid.n_x,))
    src = _as_values(source, grid, grid.shape)
    lo, di, up = operator_bands(None, grid, opts)
    out = theta_march(term, lo, di, up, src, grid.dt, opts.theta, True)
    return SpaceTimeField(out, grid)


def solve_forward(initial: SpatialField, drift: DriftField | None,
                  source: SpaceTimeField | None, grid: Grid,
                  opts: SolverOptions | None = None) -> SpaceTimeField:
    """Solve ``m_t - beta m_xx - (m a)_x = s`` forward from ``m(., 0) = initial``."""
    opts = opts or SolverOptions()
    init = _as_values(initial, grid, (grid.n_x,))
    src = _as_values(source, grid, grid.shape)
    a = None if drift is None else _as_values(drift, grid, grid.shape)
    if a is not None and not np.any(a):
        a = None
    lo, di, up = operator_bands(a, grid, opts)
    out = theta_march(init, lo, di, up, src, grid.dt, opts.theta, False)
    return SpaceTimeField(out, grid)


def flux_divergence(m: np.ndarray, a: np.ndarray, grid: Grid,
                    opts: SolverOptions | None = None) -> np.ndarray:
    """Discrete ``(m a)_x`` with the same half-node fluxes as the solver.

    Used to assemble sources of linearized FPK equations; it is bilinear in
    ``(m, a)`` for the centered flux.
    """
    opts = opts or SolverOptions()
    m = np.asarray(m, dtype=float)
    a = np.asarray(a, dtype=float)
    vol = cell_volumes(grid)
    a_half = 0.5 * (a[..., 1:] + a[..., :-1])
    if opts.drift_discretization == "centered_flux":
        flux = a_half * 0.5 * (m[..., 1:] + m[..., :-1])
    else:
        flux = np.minimum(a_half, 0.0) * m[..., :-1] + np.maximum(a_half, 0.0) * m[..., 1:]
    out = np.zeros(np.broadcast_shapes(m.shape, a.shape))
    out[..., :-1] += flux
    out[..., 1:] -= flux
    if opts.boundary == "neumann":
        out[..., 0] -= a[..., 0] * m[..., 0]
        out[..., -1] += a[..., -1] * m[..., -1]
    return out / vol


def laplacian(values: np.ndarray, grid: Grid) -> np.ndarray:
    """Three-point Neumann Laplacian (ghost reflection) along the last axis."""
    v = np.asarray(values, dtype=float)
    out = np.empty_like(v)
    h2 = grid.h**2
    out[..., 1:-1] = (v[..., 2:] - 2.0 * v[..., 1:-1] + v[..., :-2]) / h2
    out[..., 0] = 2.0 * (v[..., 1] - v[..., 0]) / h2
    out[..., -1] = 2.0 * (v[..., -2] - v[..., -1]) / h2
    return out


def backward_residual(u: np.ndarray, source: np.ndarray, grid: Grid,
                      opts: SolverOptions | None = None) -> np.ndarray:
    """Per-step residual of the backward scheme, scaled by ``dt``.

    Row ``n`` is ``u^n - u^{n+1} - dt*[theta(beta L u^n + s^n)
    + (1-theta)(beta L u^{n+1} + s^{n+1})]``; zero for an exact solve.
    """
    opts = opts or SolverOptions()
    th, dt = opts.theta, grid.dt
    f = grid.beta * laplacian(u, grid) + source
    return u[:-1] - u[1:] - dt * (th * f[:-1] + (1.0 - th) * f[1:])


def forward_residual(m: np.ndarray, drift: np.ndarray | None, source: np.ndarray,
                     grid: Grid, opts: SolverOptions | None = None) -> np.ndarray:
    """Per-step residual of the forward scheme, scaled by ``dt``."""
    opts = opts or SolverOptions()
    th, dt = opts.theta, grid.dt
    f = grid.beta * laplacian(m, grid) + source
    if drift is not None:
        f = f + flux_divergence(m, drift, grid, opts)
    return m[1:] - m[:-1] - dt * (th * f[1:] + (1.0 - th) * f[:-1])
