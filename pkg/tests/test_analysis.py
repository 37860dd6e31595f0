import csv

import numpy as np
import pytest
import sympy as sp

from conftest import cached_space
from hkfem import DirectorField, ExactSolution, ProblemConfig
from hkfem.analysis import (
    ConvergenceTable,
    GateFailure,
    ResonanceReport,
    TOperator,
    build_T_operator,
    coercivity_matrices,
    convergence_study,
    dispersion_solve,
    first_zero_crossing,
    manufactured_forcing,
    predicted_anisotropy,
    rayleigh,
    resonance_gate,
    verify_T_coercivity,
)
from hkfem.forms import FormAssembler, assemble_evp_pair, epsilon_gram
from hkfem.linalg import sym_generalized_eig
from hkfem.space import interpolate

x, y = sp.symbols("x y")


# dispersion -------------------------------------------------------------------------


def test_dispersion_examples():
    assert dispersion_solve(ProblemConfig(alpha=1e-12, k=10), (1, 0)) == pytest.approx(10, abs=1e-6)
    d = dispersion_solve(ProblemConfig(alpha=1e-2, k=10), (0.3, 0.7))
    assert d**2 == pytest.approx((-1 + np.sqrt(5)) / 0.02, rel=1e-13)
    assert d == pytest.approx(7.86151, abs=5e-6)
    nem = ProblemConfig(alpha=1e-2, k=10, beta=5e-3)
    d = dispersion_solve(nem, (1, 0))
    assert d**2 == pytest.approx((-1 + np.sqrt(1 + 4 * 0.015 * 100)) / 0.03, rel=1e-13)
    assert d**2 == pytest.approx(54.8584, abs=5e-5)
    # the quoted 7.40665 rounds sqrt(54.85838) = 7.4066441 in its last digit
    assert d == pytest.approx(7.40665, abs=1e-5)
    # across the director the nematic term drops out
    assert dispersion_solve(nem, (0, 1)) == pytest.approx(dispersion_solve(nem.with_(beta=0.0), (0, 1)))


def test_dispersion_uses_region_director():
    cfg = ProblemConfig(alpha=1e-2, k=10, beta=5e-3, director=DirectorField({0: (1.0, 0.0), 1: (0.0, 1.0)}))
    assert dispersion_solve(cfg, (1, 0), region=0) == pytest.approx(dispersion_solve(cfg, (0, 1), region=1))
    assert dispersion_solve(cfg, (1, 0), region=1) > dispersion_solve(cfg, (1, 0), region=0)


def test_forcing_examples(rng):
    cfg = ProblemConfig(alpha=1e-2, k=10)
    pts = rng.random((100, 2))
    d = dispersion_solve(cfg, (0.6, 0.8)) * np.array([0.6, 0.8])
    f, exact = manufactured_forcing(cfg, d)
    assert np.abs(f(pts)).max() <= 1e-12
    assert np.allclose(exact.value(pts), np.exp(1j * pts @ d))
    f, _ = manufactured_forcing(cfg, np.array([10.0, 0.0]))
    assert np.allclose(f(pts), 1e-2 * 10**4 * np.exp(1j * 10 * pts[:, 0]), rtol=1e-13)
    f, _ = manufactured_forcing(cfg, np.zeros(2))
    assert np.allclose(f(pts), -100.0)


def test_forcing_matches_symbolic_residual(rng):
    # independent oracle: apply the operator to exp(i d.x) with sympy
    alpha, beta, k = 1e-2, 5e-3, 7.0
    n = np.array([np.cos(0.4), np.sin(0.4)])
    cfg = ProblemConfig(alpha=alpha, k=k, beta=beta, director=DirectorField.uniform(n))
    d = np.array([3.0, -1.5])
    u = sp.exp(sp.I * (d[0] * x + d[1] * y))
    lap = sp.diff(u, x, 2) + sp.diff(u, y, 2)
    nem = n[0] ** 2 * sp.diff(u, x, 2) + 2 * n[0] * n[1] * sp.diff(u, x, y) + n[1] ** 2 * sp.diff(u, y, 2)
    residual = alpha * (sp.diff(lap, x, 2) + sp.diff(lap, y, 2)) + beta * (sp.diff(nem, x, 2) + sp.diff(nem, y, 2))
    residual += -lap - k**2 * u
    fres = sp.lambdify((x, y), residual, "numpy")
    f, _ = manufactured_forcing(cfg, d)
    pts = rng.random((10, 2))
    assert np.allclose(f(pts), fres(pts[:, 0], pts[:, 1]), rtol=1e-12)


def test_dispersion_root_consistency_random_draws():
    rng = np.random.default_rng(7)
    pts = rng.random((50, 2))
    for _ in range(20):
        alpha = 10 ** rng.uniform(-5, -1)
        beta = rng.uniform(0, 1e-2)
        k = rng.uniform(1, 50)
        ang = rng.uniform(0, 2 * np.pi)
        cfg = ProblemConfig(alpha=alpha, k=k, beta=beta, director=DirectorField.from_angle(rng.uniform(0, 180)))
        dhat = np.array([np.cos(ang), np.sin(ang)])
        f, _ = manufactured_forcing(cfg, dispersion_solve(cfg, dhat) * dhat)
        assert np.abs(f(pts)).max() <= 1e-10


def test_predicted_anisotropy():
    cfg = ProblemConfig(alpha=1e-2, k=40, beta=5e-3)
    r = predicted_anisotropy(cfg, (1, 0))
    assert r > 1
    assert r == pytest.approx(dispersion_solve(cfg, (0, 1)) / dispersion_solve(cfg, (1, 0)))
    assert predicted_anisotropy(cfg.with_(beta=0.0), (1, 0)) == pytest.approx(1.0)


# resonance gate and T-operator ------------------------------------------------------


def test_gate_arithmetic():
    rep = ResonanceReport.from_eigenvalues([50, 120, 300], 10, rel_tol=0.05)
    assert (rep.i_star, rep.margin, rep.passed) == (1, 20.0, True)
    assert not ResonanceReport.from_eigenvalues([50, 120, 300], np.sqrt(120), rel_tol=0.05).passed
    assert not ResonanceReport.from_eigenvalues([50, 120], 12, rel_tol=1e-3).passed  # not bracketed
    low = ResonanceReport.from_eigenvalues([50, 120, 300], 5)
    assert low.i_star == 0 and low.passed


def test_gate_report_csv(tmp_path):
    rep = ResonanceReport.from_eigenvalues([50, 120, 300], 10, rel_tol=0.05)
    rep.to_csv(tmp_path / "gate.csv")
    rows = list(csv.reader(open(tmp_path / "gate.csv")))
    assert rows[0] == ["index", "lambda", "below_k2"]
    assert rows[1] == ["1", "50.0", "1"]
    assert "verdict=pass" in rep.summary()


def test_gate_on_mesh_brackets_k():
    space = cached_space(2, "ARG")
    rep = resonance_gate(space, ProblemConfig(alpha=1e-2, k=10), m=2)
    assert rep.passed and rep.i_star >= 1
    assert rep.eigenvalues[-1] > 100 and rep.eigenvalues[rep.i_star - 1] < 100


def test_gate_fails_on_an_eigenvalue():
    space = cached_space(1, "ARG")
    evp = assemble_evp_pair(space, ProblemConfig(alpha=1e-2, k=10))
    lam = sym_generalized_eig(evp.E, evp.M, 3).values
    rep = resonance_gate(space, ProblemConfig(alpha=1e-2, k=np.sqrt(lam[1])), evp=evp)
    assert not rep.passed and rep.margin < 1e-8 * lam[1]


def eig_setup(level, k_between=(0, 1)):
    """Level-``level`` sound-soft eigenpairs with k^2 set between two eigenvalues."""
    space = cached_space(level, "ARG")
    base = ProblemConfig(alpha=1e-2, k=1.0)
    fa = FormAssembler(space, base.director)
    evp = assemble_evp_pair(space, base, fa)
    eig = sym_generalized_eig(evp.E, evp.M, 8)
    lo, hi = k_between
    k2 = 0.5 * (eig.values[lo] + eig.values[hi]) if hi > lo else 0.5 * eig.values[0]
    cfg = base.with_(k=float(np.sqrt(k2)))
    return space, cfg, fa, evp, eig


def test_T_identity_below_first_eigenvalue(rng):
    space, cfg, fa, evp, eig = eig_setup(1, (0, 0))
    T = build_T_operator(eig, cfg.k, evp.M)
    assert T.rank == 0
    u = rng.standard_normal(space.ndofs)
    assert np.array_equal(T(u), u)


def test_T_examples(rng):
    space, cfg, fa, evp, eig = eig_setup(2, (1, 2))
    G = epsilon_gram(space, cfg, fa)
    T = build_T_operator(eig, cfg.k, evp.M, G)
    assert T.rank == 2
    # basis is epsilon-normalized
    assert np.allclose(np.einsum("ij,ij->j", T.W, G @ T.W), 1.0)
    v1 = eig.vectors[:, 0]
    assert np.linalg.norm(T(v1) + v1) <= 1e-10 * np.linalg.norm(v1)
    u = rng.standard_normal(space.ndofs)
    u -= T.project(u)
    assert np.abs(T.W.T @ (evp.M @ u)).max() < 1e-10
    assert np.linalg.norm(T(u) - u) <= 1e-10 * np.linalg.norm(u)
    assert T.involution_defect() <= 1e-8


def test_T_operator_unbracketed_rejected():
    space, cfg, fa, evp, eig = eig_setup(1, (0, 1))
    with pytest.raises(GateFailure):
        build_T_operator(eig, 1e6, evp.M)


def test_T_matrix_is_an_involution(rng):
    M = np.diag(1 + rng.random(6))
    W = rng.standard_normal((6, 2))
    T = TOperator(W, M).matrix()
    assert np.allclose(T @ T, np.eye(6), atol=1e-12)


def test_coercive_regime_with_identity():
    space, cfg, fa, evp, eig = eig_setup(1, (0, 0))
    A, G = coercivity_matrices(space, cfg, fa)
    T = build_T_operator(eig, cfg.k, evp.M)
    res = verify_T_coercivity(A, G, T, trials=100)
    assert res.gamma_observed > 0 and res.gamma_exact > 0
    assert res.gamma_observed >= res.gamma_exact - 1e-12


def test_T_coercivity_between_first_eigenvalues():
    space, cfg, fa, evp, eig = eig_setup(2, (0, 1))
    A, G = coercivity_matrices(space, cfg, fa)
    T = build_T_operator(eig, cfg.k, evp.M, G)
    assert T.rank == 1
    res = verify_T_coercivity(A, G, T, trials=100)
    assert res.gamma_observed > 0 and res.gamma_exact > 0
    assert rayleigh(A, G, eig.vectors[:, 0]) < 0
    ident = TOperator(np.zeros((space.ndofs, 0)), evp.M)
    assert verify_T_coercivity(A, G, ident, trials=5).gamma_exact < 0


def test_coercivity_constant_uniform_over_levels():
    cfg = ProblemConfig(alpha=1e-2, k=10)
    gammas = []
    for level in (1, 2, 3):
        space = cached_space(level, "ARG")
        fa = FormAssembler(space, cfg.director)
        rep = resonance_gate(space, cfg, assembler=fa)
        A, G = coercivity_matrices(space, cfg, fa)
        T = build_T_operator(rep.eig, cfg.k, fa.volume["mass"], G)
        gammas.append(verify_T_coercivity(A, G, T, trials=20).gamma_exact)
    assert min(gammas) > 0
    assert (max(gammas) - min(gammas)) / max(gammas) < 0.5


# convergence harness ----------------------------------------------------------------


def test_short_convergence_study(tmp_path):
    cfg = ProblemConfig(alpha=1e-2, k=10)
    table = convergence_study(cfg, "ARG", levels=range(1, 4))
    assert [r.level for r in table.rows] == [1, 2, 3]
    hs = [r.h for r in table.rows]
    assert np.allclose(np.array(hs[:-1]) / np.array(hs[1:]), 2)
    assert np.isnan(table.rows[0].rateH2) and np.all(np.isfinite(table.rates))
    assert all(r.residual <= 1e-9 for r in table.rows)
    assert all(r.gate.passed for r in table.rows)
    assert table.rows[-1].errH2 < table.rows[0].errH2
    assert table.filename() == "convergence_ARG_10_0.01_0.csv"
    path = tmp_path / table.filename()
    table.to_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == list(ConvergenceTable.HEADER)
    assert len(rows) == 4 and rows[1][-1] == ""
    assert float(rows[3][5]) == table.rows[-1].errH2


def test_fitted_rate_on_synthetic_rows():
    cfg = ProblemConfig(alpha=1e-2, k=10)
    from hkfem.analysis import ConvergenceRow

    rows = [ConvergenceRow(l, 2.0**-l, 0, 0, 0, 3 * 2.0 ** (-4 * l), np.nan, 0, 0) for l in range(2, 6)]
    assert ConvergenceTable("ARG", cfg, rows).fitted_rate() == pytest.approx(4.0)


def test_convergence_gate_failure_aborts():
    space = cached_space(1, "ARG")
    cfg = ProblemConfig(alpha=1e-2, k=10)
    lam = resonance_gate(space, cfg).eigenvalues
    on_eig = cfg.with_(k=float(np.sqrt(lam[0])))
    with pytest.raises(GateFailure):
        convergence_study(on_eig, "ARG", levels=[1])


# anisotropy ------------------------------------------------------------------------


def test_zero_crossing_oracle():
    a, b = 9.0, 6.0
    u = ExactSolution.from_sympy(sp.cos(a * (x - 0.5)) * sp.cos(b * (y - 0.5)))
    fn = interpolate(cached_space(4, "ARG"), u)
    assert first_zero_crossing(fn, (0.5, 0.5), (1, 0)) == pytest.approx(np.pi / (2 * a), rel=1e-4)
    from hkfem.analysis import wavelength_anisotropy

    assert wavelength_anisotropy(fn, (0.5, 0.5), (1, 0)) == pytest.approx(b / a, rel=1e-4)
    assert wavelength_anisotropy(fn, (0.5, 0.5), (0, 1)) == pytest.approx(a / b, rel=1e-4)


def test_zero_crossing_missing():
    fn = interpolate(cached_space(1, "ARG"), ExactSolution.constant(1.0))
    with pytest.raises(ValueError):
        first_zero_crossing(fn, (0.5, 0.5), (1, 0))
