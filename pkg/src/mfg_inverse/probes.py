"""Caloric probes and source recovery from variation measurements.

Everything rests on one integration-by-parts identity. If ``v`` solves::

    -v_t - beta v_xx + S(x) phi(t) = 0,   v(., T) = 0,   v_x = 0 on the boundary,

then pairing with the caloric probe ``w_k = exp(-beta mu_k t) cos(k pi x)``
gives::

    <v(., 0), g_k> = -tf_k <S, g_k>,    tf_k = int_0^T phi(t) exp(-beta mu_k t) dt.

Dividing each mode functional by ``-tf_k`` and synthesizing recovers ``S``.
The hidden sources of the linearized systems are of this form:

* terminal channel with ``f = g_k``: ``S = kappa (Dg_k)**2``,
  ``phi = exp(2 beta mu_k (t - T))``;
* density channel with ``g_1 = 1``: ``S = -F_k`` (after subtracting the
  simulated known part), ``phi = 1``;
* density channel with ``g_1 = 1, g_2 = g_k``: ``S = -int K(., y) g_k(y) dy``,
  ``phi = 2 exp(-beta mu_k t)``.

Two time factors are offered. ``"continuous"`` is the closed-form integral.
``"discrete"`` replays the time-stepping scheme on the projected scalar
equation (cosines are exact eigenvectors of the discrete Laplacian), which
makes the identity hold to round-off for solver-generated data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.integrate import trapezoid

from .costs import KineticHamiltonian, LocalAnalyticCost
from .errors import DegenerateProbeError
from .grid import (
    Grid,
    SpaceTimeField,
    SpatialField,
    discrete_eigenvalue,
    gradient,
    mode_norm_sq,
)
from .linearization import M0, M0_ORDERS, VariationSpec, solve_linearized
from .mfg import MeasurementRecord, MfgModel
from .parabolic import SCHEMES, SolverOptions

PROBE_KINDS = ("neumann_eigen", "complex_exponential")
TIME_FACTORS = ("continuous", "discrete")
SMALL_FACTOR = 1e-6
KAPPA_THRESHOLD = 1e-3
KAPPA_MAX_CONDITION = 1e10


@dataclass(frozen=True)
class ProbeFamily:
    """Caloric probe functions.

    ``neumann_eigen`` probes are ``exp(-beta (k pi)**2 t) cos(k pi x)``.
    ``complex_exponential`` probes are ``exp(-beta eta**2 t - i eta x)`` with
    ``eta = 2 pi k``, stored as their real (cosine) and imaginary (sine)
    parts; the sine part has nonzero flux at the boundary.
    """

    kind: str = "neumann_eigen"
    modes: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in PROBE_KINDS:
            raise ValueError(f"unknown probe kind {self.kind!r}")
        object.__setattr__(self, "modes", tuple(int(k) for k in self.modes))
        if any(k < 0 for k in self.modes):
            raise ValueError("probe modes must be nonnegative")

    def frequency(self, k: int) -> float:
        return k * math.pi if self.kind == "neumann_eigen" else 2.0 * k * math.pi

    def probe(self, k: int, grid: Grid, part: str = "real") -> SpaceTimeField:
        eta = self.frequency(k)
        space = np.sin if part == "imag" else np.cos
        return SpaceTimeField.from_function(
            grid, lambda x, t: np.exp(-grid.beta * eta**2 * t) * space(eta * x))


def time_factor(lambda_src: float, mu_k: float, beta: float, T: float,
                shift: float = 0.0) -> float:
    """``int_0^T exp(lambda (t - shift)) exp(-beta mu_k t) dt``.

    Evaluated without overflow for large exponents; equals ``T exp(-lambda
    shift)`` when ``|lambda - beta mu_k| < 1e-12``.

    >>> round(time_factor(0.0, math.pi**2, 1.0, 1.0), 5)
    0.10132
    """
    if not T > 0:
        raise ValueError("T must be positive")
    d = lambda_src - beta * mu_k
    base = -lambda_src * shift
    if abs(d) < 1e-12:
        return T * math.exp(base)
    if d * T > 0:
        # exp(base + dT) (1 - exp(-dT)) / d keeps the exponent argument bounded
        return math.exp(base + d * T) * -math.expm1(-d * T) / d
    return math.exp(base) * math.expm1(d * T) / d


def discrete_time_factor(profile: np.ndarray, mu: float | np.ndarray, grid: Grid,
                         scheme: str = "crank_nicolson") -> np.ndarray:
    """Exact time factor of the discrete backward scheme.

    For ``v`` produced by the theta-scheme with source ``-S phi_n``, the
    projection ``c_n = <v^n, g_k>`` equals ``-d_n <S, g_k>`` where::

        d_N = 0,
        (1 + dt th beta mu) d_n = (1 - dt (1 - th) beta mu) d_{n+1}
                                   + dt (th phi_n + (1 - th) phi_{n+1})

    and ``mu`` is the discrete eigenvalue. Returns ``d_0`` per entry of
    ``mu``.
    """
    th = SCHEMES[scheme]
    phi = np.asarray(profile, dtype=float)
    if phi.shape != (grid.n_t + 1,):
        raise ValueError(f"profile must have length {grid.n_t + 1}")
    mu = np.asarray(mu, dtype=float)
    dt, beta = grid.dt, grid.beta
    lhs = 1.0 + dt * th * beta * mu
    rhs = 1.0 - dt * (1.0 - th) * beta * mu
    d = np.zeros_like(mu)
    for n in range(grid.n_t - 1, -1, -1):
        d = (rhs * d + dt * (th * phi[n] + (1.0 - th) * phi[n + 1])) / lhs
    return d


def backward_mode_profile(mu: float, grid: Grid, scheme: str = "crank_nicolson") -> np.ndarray:
    """Time profile ``rho_n`` of the discrete backward heat flow of an
    eigenvector with discrete eigenvalue ``mu``, normalised by ``rho_N = 1``."""
    th = SCHEMES[scheme]
    dt, beta = grid.dt, grid.beta
    step = (1.0 - dt * (1.0 - th) * beta * mu) / (1.0 + dt * th * beta * mu)
    return step ** np.arange(grid.n_t, -1, -1, dtype=float)


def forward_mode_profile(mu: float, grid: Grid, scheme: str = "crank_nicolson") -> np.ndarray:
    """Forward counterpart of :func:`backward_mode_profile` (``rho_0 = 1``)."""
    return backward_mode_profile(mu, grid, scheme)[::-1].copy()


def data_functional(record: MeasurementRecord, k: int, family: ProbeFamily | None = None,
                    part: str = "real") -> float:
    """Probe pairing of a variation measurement.

    For eigen probes this is ``<v(., 0), g_k>``. For exponential probes the
    lateral term ``beta int [v(1,t) chi'(1) - v(0,t) chi'(0)] e^{-beta eta^2 t} dt``
    is added, using the boundary traces (trapezoid rule in time).
    """
    family = family or ProbeFamily()
    grid = record.grid
    eta = family.frequency(k)
    space = np.sin if part == "imag" else np.cos
    chi = space(eta * grid.x)
    value = float(np.dot(grid.weights, record.initial_snapshot * chi))
    if family.kind == "neumann_eigen":
        return value
    if part == "imag":
        dchi0, dchi1 = eta * math.cos(0.0), eta * math.cos(eta)
    else:
        dchi0, dchi1 = -eta * math.sin(0.0), -eta * math.sin(eta)
    decay = np.exp(-grid.beta * eta**2 * grid.t)
    integrand = (record.trace_right * dchi1 - record.trace_left * dchi0) * decay
    return value + grid.beta * float(trapezoid(integrand, grid.t))


@dataclass(frozen=True, eq=False)
class SourceRecovery:
    """Recovered source with per-mode diagnostics.

    ``flagged`` lists modes whose time factor is below ``1e-6 T`` (used,
    but poorly conditioned); ``skipped`` lists modes whose factor vanished
    or was not finite; ``truncated`` lists modes dropped by the
    conditioning cap.
    """

    recovered: SpatialField
    modes_used: tuple[int, ...]
    coefficients: dict = field(repr=False)
    time_factors: dict = field(repr=False)
    flagged: tuple[int, ...] = ()
    skipped: tuple[int, ...] = ()
    truncated: tuple[int, ...] = ()

    @property
    def condition(self) -> float:
        tf = np.abs([self.time_factors[k] for k in self.modes_used])
        return float(tf.max() / tf.min()) if tf.size else math.inf


def _profile(grid: Grid, lambda_src: float, shift: float, profile) -> np.ndarray:
    if profile is not None:
        return np.asarray(profile, dtype=float)
    return np.exp(lambda_src * (grid.t - shift))


def mode_time_factors(grid: Grid, modes: Sequence[int], lambda_src: float = 0.0, *,
                      shift: float = 0.0, profile=None, method: str = "continuous",
                      scheme: str = "crank_nicolson") -> dict[int, float]:
    if method not in TIME_FACTORS:
        raise ValueError(f"unknown time-factor method {method!r}")
    if method == "continuous":
        if profile is not None:
            raise ValueError("an explicit profile requires the discrete time factor")
        return {k: time_factor(lambda_src, (k * math.pi) ** 2, grid.beta, grid.T, shift)
                for k in modes}
    phi = _profile(grid, lambda_src, shift, profile)
    mus = np.array([discrete_eigenvalue(k, grid) for k in modes])
    return dict(zip(modes, discrete_time_factor(phi, mus, grid, scheme).tolist()))


def default_mode_count(grid: Grid) -> int:
    return grid.n_x // 4


def recover_source(record: MeasurementRecord, lambda_src: float = 0.0,
                   modes: int | Sequence[int] | None = None, *, shift: float = 0.0,
                   profile=None, time_factor_method: str = "continuous",
                   scheme: str = "crank_nicolson", scale: float = 1.0,
                   max_condition: float | None = None) -> SourceRecovery:
    """Recover ``S`` from the ``t = 0`` snapshot of a variation measurement.

    Parameters
    ----------
    record : MeasurementRecord
        Variation measurement whose field solves
        ``-v_t - beta v_xx + scale * S(x) phi(t) = 0``.
    lambda_src, shift : float
        ``phi(t) = exp(lambda_src (t - shift))`` unless ``profile`` is given.
    modes : int or sequence of int, optional
        Highest mode ``M`` (modes ``0..M``) or an explicit list. Defaults
        to ``n_x // 4``.
    profile : array, optional
        Sampled ``phi_n``; requires ``time_factor_method="discrete"``.
    time_factor_method : {"continuous", "discrete"}
    scale : float
        Known amplitude of the source, divided out of the result.
    max_condition : float, optional
        Stop at the first mode whose time factor is smaller than the
        largest one by more than this ratio; the dropped modes are listed
        in ``truncated``. Snapshot noise is amplified by exactly this ratio.
    """
    grid = record.grid
    if modes is None:
        modes = default_mode_count(grid)
    modes = list(range(modes + 1)) if isinstance(modes, (int, np.integer)) else sorted(set(modes))
    tfs = mode_time_factors(grid, modes, lambda_src, shift=shift, profile=profile,
                            method=time_factor_method, scheme=scheme)
    coeffs, used, flagged, skipped, truncated = {}, [], [], [], []
    values = np.zeros(grid.n_x)
    x = grid.x
    finite = [abs(v) for v in tfs.values() if np.isfinite(v)]
    tf_max = max(finite) if finite else 0.0
    for k in modes:
        if truncated or (max_condition is not None and abs(tfs[k]) * max_condition < tf_max):
            truncated.append(k)
            continue
        tf = tfs[k] * scale
        if not np.isfinite(tf) or tf == 0.0:
            skipped.append(k)
            continue
        if abs(tfs[k]) < SMALL_FACTOR * grid.T:
            flagged.append(k)
        c = -data_functional(record, k) / tf
        coeffs[k] = c
        used.append(k)
        values += c / mode_norm_sq(k) * np.cos(k * math.pi * x)
    if not used:
        raise DegenerateProbeError("every requested probe mode has a degenerate time factor")
    return SourceRecovery(SpatialField(values, grid), tuple(used), coeffs, tfs,
                          tuple(flagged), tuple(skipped), tuple(truncated))


def recover_source_exponential(record: MeasurementRecord, lambda_src: float = 0.0,
                               n_freq: int = 4, *, shift: float = 0.0,
                               scale: float = 1.0) -> SpatialField:
    """Cross-check recovery with ``exp(-beta eta**2 t - i eta x)`` probes.

    Synthesises the period-one Fourier series of ``S`` from frequencies
    ``eta = 2 pi k``, ``k = 0..n_freq``, consuming the boundary traces for
    the sine parts.
    """
    grid = record.grid
    fam = ProbeFamily("complex_exponential", tuple(range(n_freq + 1)))
    x = grid.x
    values = np.zeros(grid.n_x)
    for k in fam.modes:
        eta = fam.frequency(k)
        tf = time_factor(lambda_src, eta**2, grid.beta, grid.T, shift) * scale
        a = -data_functional(record, k, fam, "real") / tf
        if k == 0:
            values += a
            continue
        b = -data_functional(record, k, fam, "imag") / tf
        values += 2.0 * (a * np.cos(eta * x) + b * np.sin(eta * x))
    return SpatialField(values, grid)


# --------------------------------------------------------------------------
# Recovery algorithms


@dataclass(frozen=True, eq=False)
class KappaRecovery:
    kappa: SpatialField
    per_probe: dict = field(repr=False)
    weights: dict = field(repr=False)
    extrapolated_nodes: tuple[int, ...] = ()
    diagnostics: dict = field(default_factory=dict)


def recover_kappa(records: Mapping[int, MeasurementRecord], *, scale: Mapping[int, float] | None = None,
                  modes: int | None = None, time_factor_method: str = "discrete",
                  scheme: str = "crank_nicolson",
                  max_condition: float = KAPPA_MAX_CONDITION) -> KappaRecovery:
    """Recover ``kappa`` from cross variations of the terminal channel.

    ``records[k]`` is the ``"1,2"`` variation for ``f_1 = f_2 = c_k g_k``
    (``c_k = scale[k]``, default 1), whose hidden source is
    ``c_k**2 kappa (Dg_k)**2`` with profile ``exp(2 beta mu_k (t - T))``.

    The profile concentrates near ``t = T``, so mode ``j`` of the source
    reaches the ``t = 0`` snapshot attenuated roughly like
    ``exp(-2 beta mu_k T) / mu_j``; modes are kept only while the time
    factors stay within ``max_condition`` of the largest. A probe whose
    kept band cannot represent ``(Dg_k)**2`` itself (fewer than ``2k + 1``
    modes) is excluded; for ``beta = T = 1`` this drops every probe except
    ``k = 1``.

    Each usable probe yields the pointwise quotient ``S_k / (c_k Dg_k)**2``;
    quotients are blended with weights ``(Dg_k)**2`` kept where they exceed
    ``1e-3`` of their maximum. Nodes with no usable weight (the endpoints)
    copy the nearest covered value.
    """
    if not records:
        raise ValueError("no probe records supplied")
    scale = dict(scale or {})
    keys = sorted(records)
    grid = records[keys[0]].grid
    per_probe, weights, diag = {}, {}, {}
    for k in keys:
        if k < 1:
            raise ValueError("kappa probes need modes k >= 1")
        c = float(scale.get(k, 1.0))
        dg = gradient(np.cos(k * math.pi * grid.x), grid.h)
        if time_factor_method == "discrete":
            rho = backward_mode_profile(discrete_eigenvalue(k, grid), grid, scheme)
            rec = recover_source(records[k], modes=modes, profile=rho**2,
                                 time_factor_method="discrete", scheme=scheme, scale=c * c,
                                 max_condition=max_condition)
        else:
            rec = recover_source(records[k], 2.0 * grid.beta * (k * math.pi) ** 2, modes,
                                 shift=grid.T, scale=c * c, max_condition=max_condition)
        usable = len(rec.modes_used) >= 2 * k + 1
        diag[k] = {"modes_used": len(rec.modes_used), "condition": rec.condition,
                   "usable": usable}
        if not usable:
            continue
        w = dg**2
        per_probe[k] = np.where(w > 0, rec.recovered.values / np.where(w > 0, w, 1.0), 0.0)
        weights[k] = w
    if not weights:
        raise DegenerateProbeError(
            "no kappa probe resolves its own source band; lower the probe modes or "
            "raise max_condition")
    wmax = max(float(w.max()) for w in weights.values())
    num = np.zeros(grid.n_x)
    den = np.zeros(grid.n_x)
    for k, w in weights.items():
        w = np.where(w >= KAPPA_THRESHOLD * wmax, w, 0.0)
        num += w * per_probe[k]
        den += w
    covered = den > 0
    kappa = np.where(covered, num / np.where(covered, den, 1.0), 0.0)
    idx = np.flatnonzero(covered)
    missing = np.flatnonzero(~covered)
    for i in missing:
        kappa[i] = kappa[idx[np.argmin(np.abs(idx - i))]]
    return KappaRecovery(SpatialField(kappa, grid), per_probe, weights,
                         tuple(int(i) for i in missing), diag)


def recover_F_coeffs(records: Mapping[str, MeasurementRecord], kappa: SpatialField,
                     k_max: int, *, g1_level: float = 1.0, modes: int | None = None,
                     time_factor_method: str = "discrete",
                     scheme: str = "crank_nicolson") -> list[SpatialField]:
    """Recover ``F_1..F_kmax`` from density-channel variations with a
    constant first-order direction ``g_1 = c`` and ``g_2 = 0``.

    ``records`` maps ``"I"``, ``"II"``, ``"III"`` to the measured variations.
    The first-order density is then identically ``c``, so the order-``k``
    value function carries the pure source ``c**k F_k`` on top of terms
    built from ``kappa`` and ``F_1..F_{k-1}``. Those known terms are
    simulated with the direct linearized solvers and subtracted; the
    remainder is inverted with the time-independent profile.
    """
    if not 1 <= k_max <= 3:
        raise ValueError("k_max must be 1, 2 or 3")
    if kappa is None:
        raise ValueError("kappa must be recovered before the running cost")
    if not g1_level > 0:
        raise ValueError("the first-order density level must be positive")
    grid = kappa.grid
    labels = M0_ORDERS[:k_max]
    missing = [o for o in labels if o not in records]
    if missing:
        raise ValueError(f"missing variation records for orders {missing}")
    opts = SolverOptions(scheme=scheme)
    spec = VariationSpec(M0, (SpatialField.constant(grid, g1_level),))
    recovered: list[SpatialField] = []
    for order, label in enumerate(labels, start=1):
        measured = records[label].as_vector()
        if order > 1:
            trial = recovered + [SpatialField(np.zeros(grid.n_x), grid)]
            model = MfgModel(KineticHamiltonian(kappa), LocalAnalyticCost(trial))
            known = solve_linearized(spec, model, grid, opts, max_order=order)[label]
            measured = measured - known.measurement().as_vector()
        residual = MeasurementRecord.from_vector(measured, grid, order=label)
        if time_factor_method == "discrete":
            rec = recover_source(residual, modes=modes, profile=np.ones(grid.n_t + 1),
                                 time_factor_method="discrete", scheme=scheme,
                                 scale=g1_level**order)
        else:
            rec = recover_source(residual, 0.0, modes, scale=g1_level**order)
        recovered.append(SpatialField(-rec.recovered.values, grid))
    return recovered


@dataclass(frozen=True, eq=False)
class KernelRecovery:
    kernel: np.ndarray = field(repr=False)
    mode_functions: dict = field(repr=False)
    mode0_diagnostic: float = math.nan
    channel_diagnostic: float = math.nan


def recover_kernel(records: Mapping[int, MeasurementRecord], M: int | None = None, *,
                   first_order: Mapping[int, MeasurementRecord] | None = None,
                   modes: int | None = None, time_factor_method: str = "discrete",
                   scheme: str = "crank_nicolson") -> KernelRecovery:
    """Recover a zero-row-mean kernel from second density variations.

    ``records[k]`` is the ``"II"`` variation for ``g_1 = 1, g_2 = g_k``.
    Because every admissible kernel annihilates constants, the first-order
    value function vanishes and the second-order density is the heat flow
    of ``2 g_k``; the value function then carries the source
    ``2 exp(-beta mu_k t) psi_k`` with ``psi_k(x) = int K(x, y) g_k(y) dy``.
    The kernel is synthesised as ``sum_{k=1..M} psi_k(x) g_k(y) / |g_k|**2``.
    The recovered ``psi_0`` (if ``records[0]`` is present) and the size of
    the supplied first-order variations are returned as diagnostics.
    """
    if not records:
        raise ValueError("no kernel probe records supplied")
    keys = sorted(records)
    grid = records[keys[0]].grid
    if M is None:
        M = max(keys)
    if M > grid.n_x // 4:
        raise ValueError(f"M={M} exceeds n_x/4 = {grid.n_x // 4} (aliasing guard)")
    needed = [k for k in range(1, M + 1) if k not in records]
    if needed:
        raise ValueError(f"missing kernel probe records for modes {needed}")
    psis = {}
    for k in keys:
        if k > M:
            continue
        if time_factor_method == "discrete":
            rho = forward_mode_profile(discrete_eigenvalue(k, grid), grid, scheme)
            rec = recover_source(records[k], modes=modes, profile=2.0 * rho,
                                 time_factor_method="discrete", scheme=scheme)
        else:
            rec = recover_source(records[k], -grid.beta * (k * math.pi) ** 2, modes, scale=2.0)
        psis[k] = -rec.recovered.values
    y = grid.x
    K = np.zeros((grid.n_x, grid.n_x))
    for k in range(1, M + 1):
        K += np.outer(psis[k], np.cos(k * math.pi * y)) / mode_norm_sq(k)
    mode0 = float(np.abs(psis[0]).max()) if 0 in psis else math.nan
    channel = math.nan
    if first_order:
        channel = max(float(np.abs(r.as_vector()).max()) for r in first_order.values())
    return KernelRecovery(K, psis, mode0, channel)


# --------------------------------------------------------------------------
# Error metrics and reporting


def rel_l2_error(truth: np.ndarray, recovered: np.ndarray, weights: np.ndarray) -> float:
    """Relative weighted L2 error; absolute when the truth vanishes."""
    diff = math.sqrt(float(np.dot(weights, (recovered - truth) ** 2)))
    norm = math.sqrt(float(np.dot(weights, truth**2)))
    return diff / norm if norm > 0 else diff


def rel_frobenius_error(truth: np.ndarray, recovered: np.ndarray, grid: Grid) -> float:
    W = np.outer(grid.weights, grid.weights)
    diff = math.sqrt(float(np.sum(W * (recovered - truth) ** 2)))
    norm = math.sqrt(float(np.sum(W * truth**2)))
    return diff / norm if norm > 0 else diff


@dataclass(eq=False)
class ReconstructionReport:
    """Recovered unknowns next to their ground truth, with error metrics.

    ``unknowns`` maps names (``"kappa"``, ``"F1"``, ...) to
    ``(truth, recovered)`` nodal arrays; ``"K"`` holds matrices.
    """

    grid: Grid
    unknowns: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    runtime_seconds: float = 0.0

    def add(self, name: str, truth: np.ndarray, recovered: np.ndarray) -> None:
        truth = np.asarray(truth, dtype=float)
        recovered = np.asarray(recovered, dtype=float)
        if truth.shape != recovered.shape:
            raise ValueError(f"{name}: truth and recovered shapes differ")
        self.unknowns[name] = (truth, recovered)
        if truth.ndim == 2:
            rel = rel_frobenius_error(truth, recovered, self.grid)
        else:
            rel = rel_l2_error(truth, recovered, self.grid.weights)
        self.errors[name] = {"rel_l2": rel, "max_abs": float(np.abs(recovered - truth).max())}
