"""Resonance gate, T-operator, dispersion utilities and convergence studies."""

import csv
import logging
import time
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import scipy.linalg as sla

from hkfem.element import ElementKind
from hkfem.forms import (
    FormAssembler,
    ProblemConfig,
    assemble_evp_pair,
    assemble_system,
    epsilon_gram,
)
from hkfem.linalg import EigResult, solve_direct, sym_generalized_eig
from hkfem.mesh import build_unit_square_mesh
from hkfem.space import ExactSolution, FeFunction, build_space, compute_norms

log = logging.getLogger(__name__)

DEFAULT_DIRECTION = (np.cos(0.3), np.sin(0.3))


class GateFailure(RuntimeError):
    """k^2 is too close to a discrete eigenvalue or not bracketed."""


# dispersion ----------------------------------------------------------------------


def dispersion_solve(config: ProblemConfig, direction, region=0):
    """Positive wave number ``d`` of a plane wave travelling along ``direction``.

    Solves ``a X^2 + X - k^2 = 0`` for ``X = d^2`` with
    ``a = alpha + beta (dhat . n)^2``.
    """
    dhat = np.asarray(direction, dtype=float)
    dhat = dhat / np.linalg.norm(dhat)
    n = config.director.vector(region) if region in config.director.vectors else config.director.vector(
        next(iter(config.director.vectors))
    )
    a = config.alpha + config.beta * float(dhat @ n) ** 2
    if a <= 0:
        raise ValueError("leading dispersion coefficient must be positive")
    disc = 1.0 + 4.0 * a * config.k**2
    if disc <= 0:
        raise ValueError("nonpositive discriminant")
    # cancellation-free form of (-1 + sqrt(disc)) / (2a)
    X = 2.0 * config.k**2 / (1.0 + np.sqrt(disc))
    return float(np.sqrt(X))


def symbol(config: ProblemConfig, d, region=0):
    """``alpha |d|^4 + beta |d|^2 (d.n)^2 + |d|^2 - k^2`` (no conjugation)."""
    d = np.asarray(d)
    n = config.director.vector(region) if region in config.director.vectors else config.director.vector(
        next(iter(config.director.vectors))
    )
    dd = d @ d
    dn = d @ n
    return config.alpha * dd**2 + config.beta * dd * dn**2 + dd - config.k**2


def manufactured_forcing(config: ProblemConfig, d):
    """Forcing and exact solution for the plane wave ``exp(i d.x)``."""
    d = np.asarray(d)
    s = symbol(config, d)
    exact = ExactSolution.plane_wave(d)

    def f(pts):
        pts = np.atleast_2d(pts)
        return s * np.exp(1j * (pts @ d))

    return f, exact


def plane_wave_solution(config: ProblemConfig, direction=DEFAULT_DIRECTION):
    dhat = np.asarray(direction, dtype=float)
    dhat = dhat / np.linalg.norm(dhat)
    return dispersion_solve(config, dhat) * dhat


# resonance gate -------------------------------------------------------------------


@dataclass
class ResonanceReport:
    k2: float
    eigenvalues: np.ndarray
    i_star: int
    margin: float
    rel_tol: float
    passed: bool
    eig: Optional[EigResult] = None
    symmetry_defect: float = 0.0

    @classmethod
    def from_eigenvalues(cls, eigenvalues, k, rel_tol=1e-3, eig=None, defect=0.0):
        lam = np.sort(np.asarray(eigenvalues, dtype=float))
        k2 = float(k) ** 2
        i_star = int(np.sum(lam < k2))
        margin = float(np.min(np.abs(lam - k2))) if len(lam) else np.inf
        bracketed = len(lam) > 0 and lam[-1] > k2
        passed = bool(bracketed and margin > rel_tol * k2)
        return cls(k2, lam, i_star, margin, rel_tol, passed, eig, defect)

    def summary(self):
        return (
            f"k^2={self.k2:.6g} i*={self.i_star} margin={self.margin:.6g} "
            f"rel_margin={self.margin / self.k2:.3e} verdict={'pass' if self.passed else 'fail'}"
        )

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "lambda", "below_k2"])
            for i, lam in enumerate(self.eigenvalues, 1):
                w.writerow([i, repr(float(lam)), int(lam < self.k2)])


def resonance_gate(space, config, m=16, rel_tol=1e-3, max_m=512, assembler=None, evp=None):
    """Bracket ``k^2`` by the lowest discrete eigenvalues of ``(E, M)``.

    ``m`` doubles until the largest computed eigenvalue exceeds ``k^2``.
    """
    evp = evp or assemble_evp_pair(space, config, assembler)
    n = evp.E.shape[0]
    m = min(m, n)
    while True:
        eig = sym_generalized_eig(evp.E, evp.M, m)
        if eig.values[-1] > config.k**2 or m >= n:
            break
        if m >= max_m:
            raise GateFailure(f"{m} eigenvalues do not bracket k^2 = {config.k**2:g}")
        m = min(2 * m, n, max_m)
    report = ResonanceReport.from_eigenvalues(eig.values, config.k, rel_tol, eig, evp.symmetry_defect)
    log.info("resonance gate: %s", report.summary())
    return report


# T-operator -----------------------------------------------------------------------


class TOperator:
    """``T u = u - 2 P_W u`` with ``P_W`` the M-orthogonal projection onto W.

    W is spanned by the eigenvectors with eigenvalue below ``k^2``; the
    stored basis is rescaled to unit epsilon-norm, the projection itself
    does not depend on that scaling.
    """

    def __init__(self, W, M, prolongation=None):
        self.M = M
        self.prolongation = prolongation
        self.W = np.asarray(W)
        if self.W.ndim == 1:
            self.W = self.W[:, None]
        if self.W.shape[1]:
            self._gram = self.W.T @ (M @ self.W)
            self._chol = sla.cho_factor(self._gram)

    @property
    def rank(self):
        return self.W.shape[1]

    def project(self, u):
        if self.rank == 0:
            return np.zeros_like(u)
        c = sla.cho_solve(self._chol, self.W.T @ (self.M @ u))
        return self.W @ c

    def __call__(self, u):
        return u - 2.0 * self.project(u)

    def matrix(self):
        n = self.M.shape[0]
        return self(np.eye(n))

    def involution_defect(self, trials=10, seed=0):
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(trials):
            u = rng.standard_normal(self.M.shape[0]) + 1j * rng.standard_normal(self.M.shape[0])
            worst = max(worst, np.linalg.norm(self(self(u)) - u) / np.linalg.norm(u))
        return worst


def build_T_operator(eig: EigResult, k, M, G=None, prolongation=None, check=True):
    """T-operator from eigenpairs of ``(E, M)``; ``G`` is the epsilon-norm Gram."""
    below = eig.values < k**2
    if below.all() and len(eig.values):
        raise GateFailure("eigenpairs do not bracket k^2")
    W = eig.vectors[:, below]
    if G is not None and W.shape[1]:
        W = W / np.sqrt(np.einsum("ij,ij->j", W, G @ W))
    T = TOperator(W, M, prolongation)
    if check:
        d = T.involution_defect()
        if d > 1e-8:
            raise RuntimeError(f"T is not an involution (defect {d:.2e})")
    return T


@dataclass
class CoercivityResult:
    gamma_observed: float
    gamma_exact: float
    trials: int
    values: np.ndarray = field(repr=False, default=None)


def coercivity_matrices(space, config, assembler=None):
    """``A_part = A_h - K`` and epsilon Gram, restricted like the eigenproblem."""
    fa = assembler or FormAssembler(space, config.director)
    sysm = assemble_system(space, config, assembler=fa)
    A = sysm.matrix
    if sysm.compact is not None:
        A = A - sysm.compact
    G = epsilon_gram(space, config, fa)
    return A.tocsr(), G


def verify_T_coercivity(A_part, G, T: TOperator, trials=100, seed=0):
    """``min Re(u^H A_part T u) / u^H G u`` over seeded random complex vectors.

    ``A_part`` uses the row=test convention, so ``u^H A w = a(w, u)``.
    Also reports the exact minimum of the Rayleigh quotient (smallest
    eigenvalue of the Hermitian part of ``A T`` relative to ``G``).
    """
    P = T.prolongation
    if P is not None:
        A_part = P.T @ A_part @ P
        G = P.T @ G @ P
    rng = np.random.default_rng(seed)
    n = A_part.shape[0]
    vals = np.empty(trials)
    for t in range(trials):
        u = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        vals[t] = np.real(np.vdot(u, A_part @ T(u))) / np.real(np.vdot(u, G @ u))
    AT = A_part @ T.matrix() if T.rank else A_part.toarray()
    H = 0.5 * (AT + AT.conj().T)
    Gd = G.toarray() if hasattr(G, "toarray") else G
    gamma = sla.eigh(H, Gd, eigvals_only=True, subset_by_index=[0, 0])[0]
    return CoercivityResult(float(vals.min()), float(gamma), trials, vals)


def rayleigh(A_part, G, u):
    return float(np.real(np.vdot(u, A_part @ u)) / np.real(np.vdot(u, G @ u)))


# convergence ----------------------------------------------------------------------


@dataclass
class ConvergenceRow:
    level: int
    h: float
    dofs: int
    errL2: float
    errH1: float
    errH2: float
    rateH2: float
    residual: float
    seconds: float
    gate: Optional[ResonanceReport] = None


@dataclass
class ConvergenceTable:
    element: ElementKind
    config: ProblemConfig
    rows: List[ConvergenceRow]

    HEADER = ("level", "h", "dofs", "errL2", "errH1", "errH2", "rateH2")

    @property
    def rates(self):
        return np.array([r.rateH2 for r in self.rows[1:]])

    def fitted_rate(self):
        """Least-squares slope of ``log2 errH2`` against ``log2 h``."""
        h = np.array([r.h for r in self.rows])
        e = np.array([r.errH2 for r in self.rows])
        return float(np.polyfit(np.log2(h), np.log2(e), 1)[0])

    def filename(self):
        c = self.config
        return f"convergence_{self.element.value}_{c.k:g}_{c.alpha:g}_{c.beta:g}.csv"

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.HEADER)
            for r in self.rows:
                w.writerow([r.level, repr(float(r.h)), r.dofs, repr(float(r.errL2)), repr(float(r.errH1)), repr(float(r.errH2)),
                            "" if np.isnan(r.rateH2) else repr(float(r.rateH2))])


def convergence_study(config: ProblemConfig, kind, levels=range(2, 6), direction=DEFAULT_DIRECTION,
                      gate=True, override_gate=False, rel_tol=1e-3):
    """Manufactured plane-wave study on uniformly refined unit squares."""
    kind = ElementKind.parse(kind)
    d = plane_wave_solution(config, direction)
    f, exact = manufactured_forcing(config, d)
    rows = []
    for level in levels:
        t0 = time.perf_counter()
        mesh = build_unit_square_mesh(level)
        space = build_space(mesh, kind)
        fa = FormAssembler(space, config.director)
        report = None
        if gate:
            report = resonance_gate(space, config, rel_tol=rel_tol, assembler=fa)
            if not report.passed and not override_gate:
                raise GateFailure(f"level {level}: {report.summary()}")
        system = assemble_system(space, config, f=None, exact=exact, assembler=fa)
        x = solve_direct(system.matrix, system.rhs)
        norms = compute_norms(FeFunction(space, x), exact, config)
        e = norms["H2full"]
        rate = np.log2(rows[-1].errH2 / e) if rows else np.nan
        rows.append(
            ConvergenceRow(level, float(mesh.h), space.ndofs, norms["L2"], norms["H1"], e, rate,
                           system.residual(x), time.perf_counter() - t0, report)
        )
        log.info("level %d: dofs=%d errH2=%.3e rate=%.3f", level, space.ndofs, e, rate)
    return ConvergenceTable(kind, config, rows)


# wavelength anisotropy ------------------------------------------------------------


def first_zero_crossing(fn: FeFunction, center, direction, samples=2000):
    """Distance from ``center`` along ``direction`` to the first sign change of Re(u)."""
    c = np.asarray(center, dtype=float)
    v = np.asarray(direction, dtype=float)
    v = v / np.linalg.norm(v)
    mesh = fn.space.mesh
    lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    with np.errstate(divide="ignore"):
        tmax = np.min(np.where(v > 0, (hi - c) / v, np.where(v < 0, (lo - c) / v, np.inf)))
    t = np.linspace(0.0, tmax * (1 - 1e-9), samples)
    vals = fn.evaluate(c + t[:, None] * v, 0)[0].real
    s = np.sign(vals)
    idx = np.flatnonzero(s[1:] * s[:-1] < 0)
    if len(idx) == 0:
        raise ValueError(f"no zero crossing of Re(u) along {tuple(v)}")
    i = idx[0]
    # linear interpolation between the bracketing samples
    return float(t[i] - vals[i] * (t[i + 1] - t[i]) / (vals[i + 1] - vals[i]))


def wavelength_anisotropy(fn: FeFunction, center, along, across=None):
    """Ratio of first zero-crossing distances along and across ``along``.

    Each distance is averaged over the two opposite rays.
    """
    along = np.asarray(along, dtype=float)
    if across is None:
        across = np.array([-along[1], along[0]])

    def dist(v):
        return 0.5 * (first_zero_crossing(fn, center, v) + first_zero_crossing(fn, center, -np.asarray(v)))

    return dist(along) / dist(across)


def predicted_anisotropy(config: ProblemConfig, along):
    """Dispersion-predicted wavelength ratio along/across: ``d_across / d_along``."""
    along = np.asarray(along, dtype=float)
    across = np.array([-along[1], along[0]])
    return dispersion_solve(config, across) / dispersion_solve(config, along)
