"""Variations of the measurement map around the empty state ``(m, u) = 0``.

Two input channels are supported:

* ``psi_linearization`` -- terminal cost ``psi = eps_1 f_1 + eps_2 f_2`` with
  ``m0 = 0``; derivatives are labelled ``"1"``, ``"2"`` and the cross
  derivative ``"1,2"``.
* ``m0_variation`` -- initial density ``m0 = eps g_1 + eps**2 g_2`` with
  ``psi = 0`` and ``g_1 >= 0``; derivatives in ``eps`` are labelled ``"I"``,
  ``"II"`` and ``"III"``. Only ``eps > 0`` is ever simulated, so every
  submitted density is nonnegative while ``g_2`` may take either sign.

The direct solvers differentiate the *discrete* nonlinear system exactly
(same scheme, same flux), so divided differences of simulated measurements
converge to them with no discretization mismatch. Derivatives of the
upwind flux do not exist at zero drift; use the centered flux here.
"""

from __future__ import annotations

import math
from concurrent.futures import Executor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import AdmissibilityError
from .grid import Grid, SpaceTimeField, SpatialField, gradient
from .mfg import MeasurementRecord, MfgModel, PicardOptions, measure, solve_mfg
from .parabolic import SolverOptions, flux_divergence, solve_backward, solve_forward

PSI = "psi_linearization"
M0 = "m0_variation"
CHANNELS = (PSI, M0)
PSI_ORDERS = ("1", "2", "1,2")
M0_ORDERS = ("I", "II", "III")

MAX_FIT_CONDITION = 1e8
# Picard tolerance of stencil solves, relative to eps (the data scale)
STENCIL_TOL = 1e-13


@dataclass(frozen=True, eq=False)
class VariationSpec:
    """Input parameterization of a variation experiment.

    Parameters
    ----------
    channel : {"psi_linearization", "m0_variation"}
    directions : sequence of SpatialField
        ``(f_1, f_2)`` for the terminal channel (a single ``f`` is used for
        both slots) or ``(g_1, g_2)`` for the density channel (``g_2``
        defaults to zero).
    eps : float
        Stencil size. Terminal channel: ``(+-eps, +-eps)`` corners, axes and
        origin. Density channel: ``eps * 2**-j`` for ``j < n_samples``.
    n_samples, fit_degree : int
        Density-channel sample count and polynomial degree of the fit.
    """

    channel: str
    directions: tuple[SpatialField, ...]
    eps: float = 1e-3
    n_samples: int = 3
    fit_degree: int = 2

    def __post_init__(self):
        if self.channel not in CHANNELS:
            raise ValueError(f"unknown channel {self.channel!r}")
        dirs = tuple(self.directions)
        if not dirs:
            raise ValueError("at least one direction is required")
        if len(dirs) == 1:
            dirs = dirs * 2 if self.channel == PSI else (dirs[0], SpatialField(
                np.zeros(dirs[0].grid.n_x), dirs[0].grid))
        if len(dirs) != 2:
            raise ValueError("exactly two directions are supported")
        object.__setattr__(self, "directions", dirs)
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.channel == M0:
            g1 = dirs[0].values
            if g1.min() < 0.0:
                raise AdmissibilityError(
                    f"first-order density direction g_1 is negative (min {g1.min():.3e}); "
                    "g_1 must be nonnegative so that every density stays in the admissible set")
            if not 1 <= self.fit_degree <= self.n_samples:
                raise ValueError("need 1 <= fit_degree <= n_samples")

    @property
    def grid(self) -> Grid:
        return self.directions[0].grid

    def stencil(self) -> list[tuple[float, ...]]:
        e = self.eps
        if self.channel == PSI:
            return [(a, b) for a in (-e, 0.0, e) for b in (-e, 0.0, e)]
        return [(e * 2.0**-j,) for j in range(self.n_samples)]

    def inputs(self, point: tuple[float, ...]) -> tuple[SpatialField, SpatialField]:
        """``(m0, psi)`` submitted at a stencil point."""
        grid = self.grid
        d1, d2 = (d.values for d in self.directions)
        zero = SpatialField(np.zeros(grid.n_x), grid)
        if self.channel == PSI:
            e1, e2 = point
            return zero, SpatialField(e1 * d1 + e2 * d2, grid)
        (e,) = point
        if e < 0:
            raise AdmissibilityError("density-channel samples require eps >= 0")
        return SpatialField(e * d1 + e * e * d2, grid), zero


@dataclass(frozen=True, eq=False)
class VariationResult:
    order: str
    u_var: SpaceTimeField
    m_var: SpaceTimeField

    def measurement(self, metadata: dict | None = None) -> MeasurementRecord:
        rec = measure(self.u_var, metadata)
        return MeasurementRecord(rec.trace_left, rec.trace_right, rec.initial_snapshot,
                                 rec.grid, rec.metadata, self.order)


def _drift(model: MfgModel, u: np.ndarray) -> np.ndarray:
    return model.hamiltonian.drift(u)


def _kappa_cross(model: MfgModel, u1: np.ndarray, u2: np.ndarray) -> np.ndarray:
    """``kappa Du1 Du2``, the bilinear form of the Hamiltonian."""
    return model.hamiltonian.drift(u1) * gradient(u2, model.grid.h)


def _check(spec: VariationSpec, model: MfgModel, grid: Grid):
    if model.grid != grid or spec.grid != grid:
        raise ValueError("spec, model and grid must agree")


def _backward(terminal, src, grid, opts) -> np.ndarray:
    return solve_backward(terminal, SpaceTimeField(src, grid), grid, opts).values


def _forward(initial, src, grid, opts) -> np.ndarray:
    return solve_forward(initial, None, SpaceTimeField(src, grid), grid, opts).values


def _result(order, u, m, grid) -> VariationResult:
    return VariationResult(order, SpaceTimeField(u, grid), SpaceTimeField(m, grid))


def solve_linearized_first(spec: VariationSpec, model: MfgModel, grid: Grid,
                           opts: SolverOptions | None = None) -> dict[str, VariationResult]:
    """First-order systems.

    Terminal channel: ``m^(l) = 0`` and ``u^(l)`` is the backward heat flow
    of ``f_l``; returns orders ``"1"`` and ``"2"``. Density channel:
    ``m^(I)`` is the heat flow of ``g_1`` and ``u^(I)`` solves the backward
    heat equation with source ``F'(0) m^(I)``; returns order ``"I"``.
    """
    opts = opts or SolverOptions()
    _check(spec, model, grid)
    zero = np.zeros(grid.shape)
    if spec.channel == PSI:
        out = {}
        for label, f in zip(("1", "2"), spec.directions):
            out[label] = _result(label, _backward(f, zero, grid, opts), zero, grid)
        return out
    g1 = spec.directions[0]
    m1 = _forward(g1, zero, grid, opts)
    u1 = _backward(None, model.cost.variation(1, m1), grid, opts)
    return {"I": _result("I", u1, m1, grid)}


def solve_linearized_second(spec: VariationSpec, model: MfgModel,
                            first: dict[str, VariationResult], grid: Grid,
                            opts: SolverOptions | None = None) -> VariationResult:
    """Second-order system; every source is built from first-order fields.

    Terminal channel (cross derivative ``"1,2"``)::

        m^(1,2): forward, initial 0, source  div(m1 a(u2) + m2 a(u1))
        u^(1,2): backward, terminal 0, source F1 m^(1,2) + F2 m1 m2 - kappa Du1 Du2

    Density channel (``"II"``)::

        m^(II): forward, initial 2 g_2, source 2 div(m^(I) a(u^(I)))
        u^(II): backward, terminal 0, source F1 m^(II) + F2 (m^(I))**2 - kappa (Du^(I))**2

    with ``a(u) = kappa Du`` and the divergence realised by the solver's flux.
    """
    opts = opts or SolverOptions()
    _check(spec, model, grid)
    cost = model.cost
    if spec.channel == PSI:
        try:
            r1, r2 = first["1"], first["2"]
        except KeyError as exc:
            raise ValueError(f"missing first-order input {exc}") from None
        u1, m1, u2, m2 = r1.u_var.values, r1.m_var.values, r2.u_var.values, r2.m_var.values
        src_m = (flux_divergence(m1, _drift(model, u2), grid, opts)
                 + flux_divergence(m2, _drift(model, u1), grid, opts))
        m12 = _forward(None, src_m, grid, opts)
        src_u = cost.variation(1, m12) + cost.variation(2, m1, m2) - _kappa_cross(model, u1, u2)
        return _result("1,2", _backward(None, src_u, grid, opts), m12, grid)
    if "I" not in first:
        raise ValueError("missing first-order input 'I'")
    u1, m1 = first["I"].u_var.values, first["I"].m_var.values
    g2 = SpatialField(2.0 * spec.directions[1].values, grid)
    m2 = _forward(g2, 2.0 * flux_divergence(m1, _drift(model, u1), grid, opts), grid, opts)
    src_u = cost.variation(1, m2) + cost.variation(2, m1, m1) - _kappa_cross(model, u1, u1)
    return _result("II", _backward(None, src_u, grid, opts), m2, grid)


def solve_linearized_third(spec: VariationSpec, model: MfgModel,
                           lower: dict[str, VariationResult], grid: Grid,
                           opts: SolverOptions | None = None) -> VariationResult:
    """Third ``eps``-derivative in the density channel.

    The ``eps**3`` coefficient of the expanded system, with ``m^(III)(0) = 0``
    because the input is quadratic in ``eps``::

        m^(III): forward, source 3 div(m^(II) a(u^(I)) + m^(I) a(u^(II)))
        u^(III): backward, source F1 m^(III) + 3 F2 m^(I) m^(II) + F3 (m^(I))**3
                                  - 3 kappa Du^(I) Du^(II)
    """
    opts = opts or SolverOptions()
    _check(spec, model, grid)
    if spec.channel != M0:
        raise ValueError("third-order variations are implemented for the density channel only")
    try:
        r1, r2 = lower["I"], lower["II"]
    except KeyError as exc:
        raise ValueError(f"missing lower-order input {exc}") from None
    u1, m1, u2, m2 = r1.u_var.values, r1.m_var.values, r2.u_var.values, r2.m_var.values
    cost = model.cost
    src_m = 3.0 * (flux_divergence(m2, _drift(model, u1), grid, opts)
                   + flux_divergence(m1, _drift(model, u2), grid, opts))
    m3 = _forward(None, src_m, grid, opts)
    src_u = (cost.variation(1, m3) + 3.0 * cost.variation(2, m1, m2)
             + cost.variation(3, m1, m1, m1) - 3.0 * _kappa_cross(model, u1, u2))
    return _result("III", _backward(None, src_u, grid, opts), m3, grid)


def solve_linearized(spec: VariationSpec, model: MfgModel, grid: Grid,
                     opts: SolverOptions | None = None, max_order: int = 2
                     ) -> dict[str, VariationResult]:
    """All direct variations up to ``max_order`` keyed by order label."""
    out = solve_linearized_first(spec, model, grid, opts)
    if max_order >= 2:
        second = solve_linearized_second(spec, model, out, grid, opts)
        out[second.order] = second
    if max_order >= 3:
        third = solve_linearized_third(spec, model, out, grid, opts)
        out[third.order] = third
    return out


def simulate_stencil(spec: VariationSpec, model: MfgModel, picard: PicardOptions | None = None,
                     solver: SolverOptions | None = None, executor: Executor | None = None,
                     audit: Callable[[dict], None] | None = None) -> list[MeasurementRecord]:
    """Nonlinear measurements at every stencil point of ``spec``.

    Each input is checked for admissibility before it is solved (the
    zero-eps point needs no solve). ``audit`` receives one dict per solve
    with the sample point, ``min(m0)`` and the mass of ``m0``. Records are
    returned in stencil order whatever the completion order.
    """
    picard = picard or PicardOptions(damping=1.0, tol=STENCIL_TOL * spec.eps)
    grid = spec.grid

    def run(point):
        m0, psi = spec.inputs(point)
        problem = model.problem(m0, psi)
        meta = {"channel": spec.channel, "eps": list(point)}
        if audit is not None:
            audit({"eps": list(point), "min_m0": float(m0.values.min()),
                   "mass_m0": float(np.dot(grid.weights, m0.values))})
        if not any(point):
            return MeasurementRecord.from_vector(
                np.zeros(2 * (grid.n_t + 1) + grid.n_x), grid, meta)
        sol = solve_mfg(problem, picard, solver)
        return measure(sol.u, meta)

    points = spec.stencil()
    if executor is None:
        return [run(p) for p in points]
    return list(executor.map(run, points))


def _lookup(records: Sequence[MeasurementRecord]) -> dict[tuple[float, ...], np.ndarray]:
    table = {}
    for r in records:
        key = tuple(float(e) for e in r.metadata["eps"])
        table[key] = r.as_vector()
    return table


def fit_matrix(samples: Sequence[float], degree: int) -> np.ndarray:
    """Rows ``[eps**p / p!]_{p=1..degree}`` of the one-sided Taylor fit."""
    e = np.asarray(samples, dtype=float)
    return np.stack([e**p / math.factorial(p) for p in range(1, degree + 1)], axis=1)


def taylor_fit(samples: Sequence[float], values: np.ndarray, degree: int) -> np.ndarray:
    """Least-squares fit ``R(eps) ~ sum_p eps**p V_p / p!``; returns ``V``
    with shape ``(degree, n)``.

    Raises ``ValueError`` when the column-normalised design matrix has
    condition number above ``1e8``.
    """
    if len(samples) < degree:
        raise ValueError(f"a degree-{degree} fit needs at least {degree} samples")
    A = fit_matrix(samples, degree)
    scale = np.linalg.norm(A, axis=0)
    An = A / scale
    cond = np.linalg.cond(An)
    if not cond <= MAX_FIT_CONDITION:
        raise ValueError(f"variation fit is ill-conditioned (cond={cond:.3e})")
    coef, *_ = np.linalg.lstsq(An, np.asarray(values, dtype=float), rcond=None)
    return coef / scale[:, None]


def extract_variation(records: Sequence[MeasurementRecord], spec: VariationSpec,
                      order: str) -> MeasurementRecord:
    """Variation of the measurement from nonlinear records.

    Terminal channel: central differences ``(R(e)-R(-e))/2e`` along either
    axis, and ``(R(e,e) - R(e,-e) - R(-e,e) + R(-e,-e)) / 4e**2`` for the
    cross derivative. Density channel: the one-sided Taylor fit over the
    positive samples of ``spec``, taken relative to the ``eps = 0`` record
    when one is supplied (the base state otherwise has zero data).
    """
    if not records:
        raise ValueError("no records supplied")
    grid = records[0].grid
    table = _lookup(records)
    e = spec.eps
    if spec.channel == PSI:
        if order not in PSI_ORDERS:
            raise ValueError(f"terminal channel orders are {PSI_ORDERS}, got {order!r}")
        need = {"1": [(e, 0.0), (-e, 0.0)], "2": [(0.0, e), (0.0, -e)],
                "1,2": [(e, e), (e, -e), (-e, e), (-e, -e)]}[order]
        missing = [p for p in need if p not in table]
        if missing:
            raise ValueError(f"stencil incomplete: missing samples {missing}")
        R = [table[p] for p in need]
        if order == "1,2":
            vec = (R[0] - R[1] - R[2] + R[3]) / (4.0 * e * e)
        else:
            vec = (R[0] - R[1]) / (2.0 * e)
    else:
        if order not in M0_ORDERS:
            raise ValueError(f"density channel orders are {M0_ORDERS}, got {order!r}")
        p = M0_ORDERS.index(order) + 1
        if p > spec.fit_degree:
            raise ValueError(f"order {order} needs fit_degree >= {p}")
        keys = sorted(table)
        if any(k[0] < 0 for k in keys):
            raise AdmissibilityError("density-channel records must have eps >= 0")
        samples = [k[0] for k in keys if k[0] > 0]
        expected = [s[0] for s in spec.stencil()]
        missing = [s for s in expected if s not in samples]
        if missing:
            raise ValueError(f"stencil incomplete: missing samples {missing}")
        base = table.get((0.0,), 0.0)
        V = taylor_fit(samples, np.stack([table[(s,)] - base for s in samples]), spec.fit_degree)
        vec = V[p - 1]
    meta = {"channel": spec.channel, "eps": e}
    return MeasurementRecord.from_vector(vec, grid, meta, order)
