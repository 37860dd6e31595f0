"""Acceptance criteria, one test per criterion.

Each test records a single ``criterion N: PASS/FAIL ...`` line before
asserting, so the terminal summary lists every verdict even on failure.
"""

import functools
import time

import numpy as np
import pytest
import sympy as sp

from conftest import cached_pulse, cached_space
from hkfem import DirectorField, ProblemConfig
from hkfem.analysis import (
    TOperator,
    build_T_operator,
    coercivity_matrices,
    convergence_study,
    dispersion_solve,
    manufactured_forcing,
    predicted_anisotropy,
    rayleigh,
    resonance_gate,
    verify_T_coercivity,
    wavelength_anisotropy,
)
from hkfem.element import apply_functionals, build_physical_basis, c1_continuity_check, duality_matrix, eval_basis
from hkfem.experiments import mls_config, mls_wavelength_ratio, solve_mls
from hkfem.forms import FormAssembler, assemble_evp_pair, nematic_symmetry_defect
from hkfem.linalg import sym_generalized_eig
from hkfem.space import ExactSolution

ALPHA = 1e-2
LEVELS = range(2, 6)
RATE_MIN = 3.7


def verdict(ok):
    return "PASS" if ok else "FAIL"


@functools.lru_cache(maxsize=None)
def study(kind="ARG", k=10.0, beta=0.0, bc="soft", closure=True):
    cfg = ProblemConfig(alpha=ALPHA, k=k, beta=beta, bc_kind=bc, impedance_closure=closure)
    t0 = time.perf_counter()
    table = convergence_study(cfg, kind, levels=LEVELS)
    return table, time.perf_counter() - t0


def test_criterion_01_argyris_rate(report_line):
    table, seconds = study()
    rate = table.fitted_rate()
    ok = rate >= RATE_MIN and seconds <= 300
    report_line(f"criterion 1: {verdict(ok)} ARG k=10 beta=0 rate={rate:.3f} (>= {RATE_MIN}) runtime={seconds:.1f}s (<= 300s)")
    assert ok


def test_criterion_02_higher_wavenumbers(report_line):
    results = {}
    for k in (20.0, 30.0):
        for beta in (0.0, 5e-3):
            results[(k, beta)] = study(k=k, beta=beta)[0].fitted_rate()
    ok = min(results.values()) >= RATE_MIN
    detail = " ".join(f"k={k:g},beta={b:g}:{r:.3f}" for (k, b), r in results.items())
    report_line(f"criterion 2: {verdict(ok)} {detail} (each >= {RATE_MIN})")
    assert ok


def test_criterion_03_hct_rate(report_line):
    table, _ = study(kind="HCT")
    rate = table.fitted_rate()
    ok = rate >= 1.8
    steps = ", ".join(f"{r:.2f}" for r in table.rates)
    report_line(f"criterion 3: {verdict(ok)} HCT k=10 beta=0 rate={rate:.3f} (>= 1.8), level rates [{steps}]")
    assert ok


def test_criterion_04_impedance_rate(report_line):
    rate = study(bc="impedance")[0].fitted_rate()
    literal = study(bc="impedance", closure=False)[0].fitted_rate()
    ok = rate >= RATE_MIN
    report_line(f"criterion 4: {verdict(ok)} ARG impedance theta=k rate={rate:.3f} (>= {RATE_MIN}); "
                f"without closure terms rate={literal:.3f}")
    assert ok


def test_criterion_05_galerkin_residual(report_line):
    keys = [dict(), dict(kind="HCT"), dict(bc="impedance"), dict(bc="impedance", closure=False)]
    keys += [dict(k=k, beta=b) for k in (20.0, 30.0) for b in (0.0, 5e-3)]
    worst = max(r.residual for key in keys for r in study(**key)[0].rows)
    ok = worst <= 1e-9
    report_line(f"criterion 5: {verdict(ok)} max residual over {len(keys)} convergence runs = {worst:.2e} (<= 1e-9)")
    assert ok


def test_criterion_06_discrete_coercivity(report_line):
    lam_min = {}
    for kind in ("ARG", "HCT"):
        for beta in (0.0, 5e-3):
            cfg = ProblemConfig(alpha=ALPHA, k=10, beta=beta)
            for level in range(1, 5):
                evp = assemble_evp_pair(cached_space(level, kind), cfg)
                lam_min[(kind, beta, level)] = sym_generalized_eig(evp.E, evp.M, 1).values[0]
    worst = min(lam_min, key=lam_min.get)
    ok = lam_min[worst] > 0
    report_line(f"criterion 6: {verdict(ok)} min lambda_1 over {len(lam_min)} cases = {lam_min[worst]:.4g} "
                f"at {worst[0]} beta={worst[1]:g} level {worst[2]} (> 0)")
    assert ok


def test_criterion_07_t_coercivity(report_line):
    space = cached_space(3, "ARG")
    base = ProblemConfig(alpha=ALPHA, k=1.0)
    fa = FormAssembler(space, base.director)
    evp = assemble_evp_pair(space, base, fa)
    lam = sym_generalized_eig(evp.E, evp.M, 6).values
    cfg = base.with_(k=float(np.sqrt(0.5 * (lam[2] + lam[3]))))
    gate = resonance_gate(space, cfg, assembler=fa, evp=evp)
    A, G = coercivity_matrices(space, cfg, fa)
    T = build_T_operator(gate.eig, cfg.k, evp.M, G)
    res = verify_T_coercivity(A, G, T, trials=100, seed=0)
    control = rayleigh(A, G, gate.eig.vectors[:, 0])
    identity = verify_T_coercivity(A, G, TOperator(np.zeros((space.ndofs, 0)), evp.M), trials=1)
    ok = gate.passed and 1 <= gate.i_star <= 5 and res.gamma_observed > 0 and control < 0
    report_line(f"criterion 7: {verdict(ok)} level 3 ARG k={cfg.k:.4f} i*={gate.i_star} "
                f"gamma_observed={res.gamma_observed:.4g} (> 0, 100 trials) gamma_exact={res.gamma_exact:.4g}; "
                f"control Rayleigh(id, v1)={control:.4g} (< 0), exact minimum with T=id {identity.gamma_exact:.4g}")
    assert ok


def test_criterion_08_nematic_symmetry(report_line):
    worst = 0.0
    for level in (1, 2, 3):
        for angle in (0.0, 30.0, 90.0):
            for kind in ("ARG", "HCT"):
                worst = max(worst, nematic_symmetry_defect(cached_space(level, kind), DirectorField.from_angle(angle)))
    ok = worst <= 1e-8
    report_line(f"criterion 8: {verdict(ok)} max constrained nematic symmetry defect = {worst:.2e} (<= 1e-8)")
    assert ok


def test_criterion_09_dispersion_forcing(report_line):
    rng = np.random.default_rng(2024)
    pts = rng.random((200, 2))
    worst = 0.0
    for _ in range(20):
        cfg = ProblemConfig(alpha=10 ** rng.uniform(-5, -1), k=rng.uniform(1, 60), beta=rng.uniform(0, 1e-2),
                            director=DirectorField.from_angle(rng.uniform(0, 180)))
        ang = rng.uniform(0, 2 * np.pi)
        dhat = np.array([np.cos(ang), np.sin(ang)])
        f, _ = manufactured_forcing(cfg, dispersion_solve(cfg, dhat) * dhat)
        worst = max(worst, np.abs(f(pts)).max())
    ok = worst <= 1e-10
    report_line(f"criterion 9: {verdict(ok)} max |f| over 20 draws = {worst:.2e} (<= 1e-10)")
    assert ok


def test_criterion_10_pulse_anisotropy(report_line):
    center = (0.5, 0.5)
    parts, ok = [], True
    for bc in ("soft", "impedance"):
        run = cached_pulse(bc, 0.0)
        observed = wavelength_anisotropy(run.field, center, (1, 0))
        predicted = predicted_anisotropy(run.config, (1, 0))
        rel = abs(observed / predicted - 1)
        control = wavelength_anisotropy(cached_pulse(bc).field, center, (1, 0))
        good = rel <= 0.10 and abs(control - 1) <= 0.05
        ok &= good
        parts.append(f"{bc}: ratio={observed:.3f} predicted={predicted:.3f} (off {100 * rel:.1f}%, <= 10%) "
                     f"beta=0 ratio={control:.3f} (within 5% of 1) [{verdict(good)}]")
    report_line(f"criterion 10: {verdict(ok)} " + "; ".join(parts))
    assert ok


def test_criterion_11_element_suite(report_line, rng):
    x, y = sp.symbols("x y")
    polys = {"ARG": x**5 - 2 * x**2 * y**3 + x * y**4 + y, "HCT": x**3 - 3 * x * y**2 + y**2 - x}
    dual = repro = c1 = 0.0
    for kind, expr in polys.items():
        space = cached_space(3, kind)
        mesh = space.mesh
        exact = ExactSolution.from_sympy(expr)
        for tri in mesh.vertices[mesh.triangles]:
            basis = build_physical_basis(tri, kind)
            dual = max(dual, np.abs(duality_matrix(basis) - np.eye(basis.num_dofs)).max())
            c = apply_functionals(basis, lambda piece, pts: exact.derivs(pts, 2).T)
            for p in rng.dirichlet(np.ones(3), size=4) @ tri:
                got = eval_basis(basis, p, 3) @ c
                want = exact.derivs(p[None], 3)[:, 0]
                repro = max(repro, np.abs(got - want).max() / max(1.0, np.abs(want).max()))
        rep = c1_continuity_check(space, rng.standard_normal(space.ndofs))
        c1 = max(c1, max(rep["value_jump"], rep["normal_jump"]) / rep["coeff_max"])
    ok = dual <= 1e-9 and repro <= 1e-9 and c1 <= 1e-9
    report_line(f"criterion 11: {verdict(ok)} level 3 ARG+HCT duality={dual:.1e} reproduction={repro:.1e} "
                f"C1 jump/|coeffs|={c1:.1e} (each <= 1e-9)")
    assert ok


@pytest.mark.parametrize("sides", ["impedance", "hard"])
def test_mls_wavelength_ratio_reported(report_line, sides):
    """Reported only: the layered-director figure has no quantitative target."""
    cfg = mls_config(sides=sides)
    run = solve_mls(cfg, cells=48)
    observed, predicted = mls_wavelength_ratio(run.field, cfg)
    rel = abs(observed / predicted - 1)
    report_line(f"mls ({sides} sides, reported): ratio={observed:.3f} predicted={predicted:.3f} "
                f"off {100 * rel:.1f}% ({'within' if rel <= 0.15 else 'outside'} 15%)")
    assert run.residual <= 1e-9
