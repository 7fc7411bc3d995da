"""Acceptance suite at desk scale (n_x=201, n_t=400, T=1, beta=1).

Each test checks one acceptance criterion and records a PASS/FAIL line that
is printed in the terminal summary.
"""

import json
import math
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner
from roundtrip_helpers import cos
from scipy.integrate import quad

from mfg_inverse import linearization, mfg, parabolic
from mfg_inverse.costs import KineticHamiltonian, LocalAnalyticCost, NonlocalKernelCost
from mfg_inverse.grid import SpaceTimeField, SpatialField, discrete_eigenvalue, make_grid
from mfg_inverse.harness.cli import main
from mfg_inverse.harness.report import WALL_CLOCK_KEY
from mfg_inverse.linearization import M0, PSI, VariationSpec, extract_variation, simulate_stencil, solve_linearized
from mfg_inverse.mfg import MfgModel, measure, solve_mfg
from mfg_inverse.parabolic import DriftField, SolverOptions, solve_backward, solve_forward
from mfg_inverse.probes import data_functional, discrete_time_factor, time_factor

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
DESK = make_grid(201, 400, 1.0, 1.0)


def _two_mode_kernel(g):
    return NonlocalKernelCost.from_function(
        g, lambda x, y: np.cos(np.pi * x) * np.cos(np.pi * y)
        + 0.5 * np.cos(2 * np.pi * x) * np.cos(2 * np.pi * y))


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    """The bundled experiments, each run twice through the CLI."""
    base = tmp_path_factory.mktemp("acceptance")
    runner = CliRunner()
    out = {}
    for name, cmd in (("kappa_local", "run"), ("kernel_nonlocal", "run"),
                      ("demo_positivity", "demo-positivity")):
        for rep, threads in (("a", "1"), ("b", "4")):
            d = base / f"{name}_{rep}"
            r = runner.invoke(main, [cmd, "--config", str(CONFIGS / f"{name}.toml"),
                                     "--out", str(d), "--threads", threads])
            out[name, rep] = (r, d)
    return out


def _doc(runs, name):
    r, d = runs[name, "a"]
    assert r.exit_code == 0, r.output
    return json.loads((d / "report.json").read_text())


def test_criterion_01_solver_order(criterion):
    levels = [(26, 50), (51, 100), (101, 200), (201, 400)]
    errs = {"forward": [], "backward": []}
    for n_x, n_t in levels:
        g = make_grid(n_x, n_t, 1.0, 1.0)
        lam = g.beta * np.pi**2
        c = np.cos(np.pi * g.x)
        m = solve_forward(SpatialField(1 + c, g), None, None, g).values
        errs["forward"].append(np.abs(m - (1 + np.exp(-lam * g.t)[:, None] * c)).max())
        u = solve_backward(SpatialField(np.exp(lam * g.T) * c, g), None, g).values
        errs["backward"].append(np.abs(u - np.exp(lam * g.t)[:, None] * c).max())
    ratios = {k: np.array(v[:-1]) / np.array(v[1:]) for k, v in errs.items()}
    worst = min(r.min() for r in ratios.values())
    detail = ", ".join(f"{k} ratios {np.round(r, 2).tolist()}" for k, r in ratios.items())
    criterion(1, worst >= 3.5, f"min refinement ratio {worst:.2f} >= 3.5 ({detail})")


def test_criterion_02_mass_conservation(criterion, monkeypatch):
    drifts = []
    real = parabolic.solve_forward

    def watched(initial, drift, source, grid, opts=None):
        m = real(initial, drift, source, grid, opts)
        mass = m.values @ grid.weights
        scale = max(abs(mass[0]), float((np.abs(m.values) @ grid.weights).max()), 1e-300)
        drifts.append(float(np.abs(mass - mass[0]).max() / scale))
        return m

    for mod in (parabolic, mfg, linearization):
        monkeypatch.setattr(mod, "solve_forward", watched)
    g = DESK
    x = g.x
    rng = np.random.default_rng(7)
    # plain and drift-driven solves, both drift discretizations and schemes
    for opts in (SolverOptions(), SolverOptions("implicit_euler", "upwind_flux"),
                 SolverOptions(drift_discretization="upwind_flux")):
        parabolic.solve_forward(SpatialField(np.cos(2 * np.pi * x), g), None, None, g, opts)
        parabolic.solve_forward(SpatialField(1 + np.cos(np.pi * x), g),
                                DriftField(rng.standard_normal(g.shape), g), None, g, opts)
    # coupled solves: local and nonlocal costs
    local = MfgModel(KineticHamiltonian(SpatialField(2 + np.cos(2 * np.pi * x), g)),
                     LocalAnalyticCost([SpatialField(np.cos(2 * np.pi * x), g),
                                        SpatialField(np.cos(np.pi * x), g)]))
    nonlocal_ = MfgModel(KineticHamiltonian(SpatialField.constant(g, 1.0)), _two_mode_kernel(g))
    m0 = SpatialField(0.5 * (1 + np.cos(2 * np.pi * x)), g)
    for model in (local, nonlocal_):
        solve_mfg(model.problem(m0, SpatialField(0.2 * np.cos(np.pi * x), g)))
    # variation stencils and the direct linearized systems (divergence sources)
    spec = VariationSpec(M0, (SpatialField.constant(g, 1.0), cos(1, g)), eps=1e-2)
    simulate_stencil(spec, local)
    solve_linearized(spec, local, g, max_order=3)
    n = len(drifts)
    worst = max(drifts)
    criterion(2, worst <= 1e-12, f"max relative mass drift {worst:.2e} <= 1e-12 over {n} forward solves")


def test_criterion_03_stable_state(criterion):
    g = DESK
    model = MfgModel(KineticHamiltonian(SpatialField.constant(g, 1.0)), _two_mode_kernel(g))
    sol = solve_mfg(model.problem(SpatialField.constant(g, 1.0), SpatialField.constant(g, 0.3)))
    du = np.abs(sol.u.values - 0.3).max()
    dm = np.abs(sol.m.values - 1.0).max()
    criterion(3, du <= 1e-8 and dm <= 1e-8,
              f"|u - 0.3|_inf = {du:.1e}, |m - 1|_inf = {dm:.1e} (<= 1e-8)")


# normalised gap constants: gap <= C * eps**p * max|direct variation|
C_PSI = 10.0
C_M0 = 10.0


def _gaps(spec_for, model, order):
    out = []
    for eps in (1e-2, 1e-3):
        spec = spec_for(eps)
        direct = solve_linearized(spec, model, DESK)[order].measurement().as_vector()
        got = extract_variation(simulate_stencil(spec, model), spec, order).as_vector()
        out.append((eps, np.abs(got - direct).max() / np.abs(direct).max()))
    return out


def test_criterion_04_linearization_cross_validation(criterion):
    g = DESK
    x = g.x
    local = MfgModel(KineticHamiltonian(SpatialField(2 + np.cos(2 * np.pi * x), g)),
                     LocalAnalyticCost([SpatialField(np.cos(2 * np.pi * x), g),
                                        SpatialField(np.cos(np.pi * x), g)]))
    nonlocal_ = MfgModel(KineticHamiltonian(SpatialField(2 + np.cos(2 * np.pi * x), g)),
                         _two_mode_kernel(g))
    cases = []
    for order in ("1", "2", "1,2"):
        gaps = _gaps(lambda e: VariationSpec(PSI, (cos(1, g), cos(2, g)), eps=e), local, order)
        cases.append((f"psi {order}", gaps, 2, 100.0, C_PSI))
    for name, model in (("local", local), ("nonlocal", nonlocal_)):
        gaps = _gaps(lambda e: VariationSpec(M0, (SpatialField.constant(g, 1.0), cos(1, g)), eps=e),
                     model, "II")
        cases.append((f"m0 II {name}", gaps, 1, 10.0, C_M0))
    ok = True
    parts = []
    for label, gaps, p, expected, C in cases:
        (e1, g1), (e2, g2) = gaps
        ratio = g1 / g2
        bounded = g1 <= C * e1**p and g2 <= C * e2**p
        in_band = expected / 3 <= ratio <= expected * 3
        ok &= bounded and in_band
        parts.append(f"{label}: gaps {g1:.1e}/{g2:.1e} ratio {ratio:.0f}")
    criterion(4, ok, "; ".join(parts))


def test_criterion_05_probe_calibration(criterion):
    g = DESK
    worst_discrete = 0.0
    lambdas = (0.0, 2 * np.pi**2, -np.pi**2, 5.0)
    for k in range(51):
        S = np.cos(k * np.pi * g.x)
        norm = float(np.dot(g.weights, S * S))
        mu = discrete_eigenvalue(k, g)
        for lam in lambdas:
            phi = np.exp(lam * g.t)
            rec = measure(solve_backward(None, SpaceTimeField(-np.outer(phi, S), g), g))
            d = float(discrete_time_factor(phi, mu, g))
            lhs = data_functional(rec, k)
            worst_discrete = max(worst_discrete, abs(lhs + d * norm) / abs(d * norm))
    # closed-form continuous solutions, snapshot integrated independently
    worst_cont = 0.0
    for k in range(51):
        mu = (k * np.pi) ** 2
        for lam in lambdas:
            amp, _ = quad(lambda s: math.exp((lam - g.beta * mu) * s), 0.0, g.T,
                          epsabs=0.0, epsrel=1e-13, limit=200)
            snap = -amp * np.cos(k * np.pi * g.x)
            n = g.n_t + 1
            rec = mfg.MeasurementRecord(np.zeros(n), np.zeros(n), snap, g)
            tf = time_factor(lam, mu, g.beta, g.T)
            norm = float(np.dot(g.weights, np.cos(k * np.pi * g.x) ** 2))
            worst_cont = max(worst_cont, abs(data_functional(rec, k) + tf * norm) / (tf * norm))
    worst = max(worst_discrete, worst_cont)
    criterion(5, worst <= 1e-4,
              f"max relative identity defect {worst:.1e} <= 1e-4 for k <= 50 "
              f"(solver-made/discrete factor {worst_discrete:.1e}, "
              f"closed-form/continuous factor {worst_cont:.1e})")


def test_criterion_06_kappa_round_trip(criterion, runs):
    err = _doc(runs, "kappa_local")["errors"]["kappa"]["rel_l2"]
    criterion(6, err <= 2e-2, f"kappa = 2 + cos(2 pi x): rel L2 error {err:.2e} <= 2e-2")


def test_criterion_07_local_cost_round_trip(criterion, runs):
    e = _doc(runs, "kappa_local")["errors"]
    f1, f2, f3 = e["F1"]["rel_l2"], e["F2"]["rel_l2"], e["F3"]["max_abs"]
    criterion(7, f1 <= 2e-2 and f2 <= 2e-2 and f3 <= 2e-2,
              f"F1 rel L2 {f1:.1e}, F2 rel L2 {f2:.1e}, F3 max-norm {f3:.1e} (<= 2e-2)")


def test_criterion_08_kernel_round_trip(criterion, runs):
    doc = _doc(runs, "kernel_nonlocal")
    err = doc["errors"]["K"]["rel_l2"]
    mode0 = doc["diagnostics"]["K"]["mode0_psi_max"]
    criterion(8, err <= 2e-2 and mode0 <= 1e-3,
              f"K rel Frobenius {err:.2e} <= 2e-2, mode-0 diagnostic {mode0:.1e} <= 1e-3")


def test_criterion_09_positivity_audit(criterion, runs, tmp_path):
    doc = _doc(runs, "demo_positivity")
    _, d = runs["demo_positivity", "a"]
    audit = (d / "audit.log").read_text().splitlines()
    violations = sum("admissible=False" in line for line in audit)
    solves = sum(line.startswith("solve ") for line in audit)
    err = doc["errors"]["K"]["rel_l2"]
    r = CliRunner().invoke(main, ["demo-positivity", "--config", str(CONFIGS / "demo_positivity.toml"),
                                  "--out", str(tmp_path), "--force-negative-g1"])
    ok = violations == 0 and solves > 0 and err <= 2e-2 and r.exit_code == 3
    criterion(9, ok, f"{solves} audited solves, {violations} violations, K error {err:.1e}; "
                     f"forced negative g1 exit code {r.exit_code} (expect 3)")


def test_criterion_10_determinism(criterion, runs):
    identical = []
    for name in ("kappa_local", "kernel_nonlocal", "demo_positivity"):
        texts = []
        for rep in ("a", "b"):
            r, d = runs[name, rep]
            assert r.exit_code == 0, r.output
            lines = (d / "report.json").read_text().splitlines()
            texts.append([ln for ln in lines if f'"{WALL_CLOCK_KEY}"' not in ln])
        plots = all((runs[name, "a"][1] / p.name).read_bytes() == p.read_bytes()
                    for p in runs[name, "b"][1].glob("plot_*.csv"))
        identical.append(texts[0] == texts[1] and plots)
    criterion(10, all(identical),
              f"report.json and plot tables byte-identical apart from {WALL_CLOCK_KEY} "
              f"for {sum(identical)}/3 experiments (1 vs 4 threads)")
