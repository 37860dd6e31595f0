"""Gaussian pulse and two-region (MLS) experiment drivers."""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from hkfem.analysis import GateFailure, ResonanceReport, dispersion_solve, resonance_gate
from hkfem.element import ElementKind
from hkfem.forms import BcKind, DirectorField, FormAssembler, ProblemConfig, assemble_system
from hkfem.linalg import solve_direct
from hkfem.mesh import BOTTOM, LEFT, RIGHT, TOP, build_rectangle_mesh, build_unit_square_mesh
from hkfem.space import ExactSolution, FeFunction, build_space

log = logging.getLogger(__name__)

PULSE_WIDTH = 40.0
PULSE_ANGLES = (0.0, 45.0, 90.0)


def gaussian_pulse(center=(0.5, 0.5), width=PULSE_WIDTH):
    c = np.asarray(center, dtype=float)

    def f(pts):
        pts = np.atleast_2d(pts)
        return np.exp(-(width**2) * np.sum((pts - c) ** 2, axis=1))

    return f


@dataclass
class Run:
    field: FeFunction
    config: ProblemConfig
    gate: Optional[ResonanceReport]
    residual: float
    system: object = None


def solve_pulse(config: ProblemConfig, level=5, kind=ElementKind.ARGYRIS5, gate=True,
                override_gate=False, rel_tol=1e-3):
    """Solve with the Gaussian pulse forcing on the unit square."""
    space = build_space(build_unit_square_mesh(level), ElementKind.parse(kind))
    fa = FormAssembler(space, config.director)
    report = None
    if gate:
        report = resonance_gate(space, config, rel_tol=rel_tol, assembler=fa)
        if not report.passed and not override_gate:
            raise GateFailure(report.summary())
    system = assemble_system(space, config, f=gaussian_pulse(), assembler=fa)
    x = solve_direct(system.matrix, system.rhs)
    return Run(FeFunction(space, x), config, report, system.residual(x), system)


def pulse_configs(base: ProblemConfig, angles=PULSE_ANGLES):
    """The beta = 0 control followed by one run per director angle."""
    out = [("beta0", base.with_(beta=0.0))]
    for a in angles:
        out.append((f"n{a:g}", base.with_(director=DirectorField.from_angle(a))))
    return out


# two-region experiment ------------------------------------------------------------

DIRECTIONS = {"x": (1.0, 0.0), "y": (0.0, 1.0)}


def mls_mesh(cells=48, strip=(1.0 / 3.0, 2.0 / 3.0)):
    """Unit square with the vertical strip ``strip[0] < x < strip[1]`` tagged 1."""
    if cells % 3:
        raise ValueError("cell count must be a multiple of 3 so the strip is resolved")
    mesh = build_rectangle_mesh(cells, cells)
    cx = mesh.vertices[mesh.triangles].mean(axis=1)[:, 0]
    return mesh.with_region_tags(((cx > strip[0]) & (cx < strip[1])).astype(int))


def mls_config(alpha=1e-4, beta=5e-5, k=40.0, central="y", theta="matched", sides=BcKind.IMPEDANCE, **kw):
    if central not in DIRECTIONS:
        raise ValueError("central director must be 'x' or 'y'")
    outer = "x" if central == "y" else "y"
    director = DirectorField({0: DIRECTIONS[outer], 1: DIRECTIONS[central]})
    sides = BcKind.parse(sides)
    bc = {TOP: BcKind.IMPEDANCE, LEFT: sides, RIGHT: sides, BOTTOM: BcKind.SOUND_SOFT}
    return ProblemConfig(alpha=alpha, beta=beta, k=k, theta=theta, bc_kind=bc, director=director, **kw)


def incoming_wave(config: ProblemConfig, strip=(1.0 / 3.0, 2.0 / 3.0)):
    """Downward plane wave with the wave number of the local region."""
    d = {r: dispersion_solve(config, (0.0, -1.0), region=r) for r in config.director.vectors}
    waves = {r: ExactSolution.plane_wave((0.0, -dr)) for r, dr in d.items()}

    def derivs(pts, max_order=3):
        pts = np.atleast_2d(pts)
        inside = (pts[:, 0] > strip[0]) & (pts[:, 0] < strip[1])
        out = waves[0].derivs(pts, max_order)
        if 1 in waves:
            out[:, inside] = waves[1].derivs(pts[inside], max_order)
        return out

    return ExactSolution(derivs, name="incoming")


def solve_mls(config: ProblemConfig, cells=48, kind=ElementKind.ARGYRIS5):
    mesh = mls_mesh(cells)
    space = build_space(mesh, ElementKind.parse(kind))
    fa = FormAssembler(space, config.director)
    system = assemble_system(space, config, exact=incoming_wave(config), assembler=fa, data_tags=[TOP])
    x = solve_direct(system.matrix, system.rhs)
    return Run(FeFunction(space, x), config, None, system.residual(x), system)


def crossing_spacing(fn: FeFunction, x, y_range=(0.3, 0.97), samples=3000):
    """Mean distance between consecutive zero crossings of Re(u) on a vertical line."""
    y = np.linspace(*y_range, samples)
    v = fn.evaluate(np.column_stack([np.full_like(y, x), y]), 0)[0].real
    idx = np.flatnonzero(np.sign(v[1:]) * np.sign(v[:-1]) < 0)
    if len(idx) < 2:
        raise ValueError(f"fewer than two zero crossings along x = {x}")
    yc = y[idx] - v[idx] * (y[idx + 1] - y[idx]) / (v[idx + 1] - v[idx])
    return float(np.mean(np.diff(yc)))


def mls_wavelength_ratio(fn: FeFunction, config: ProblemConfig):
    """Observed and predicted ratio of vertical wavelengths, central / outer."""
    central = crossing_spacing(fn, 0.5)
    outer = 0.5 * (crossing_spacing(fn, 1.0 / 6.0) + crossing_spacing(fn, 5.0 / 6.0))
    d_out = dispersion_solve(config, (0.0, 1.0), region=0)
    d_cen = dispersion_solve(config, (0.0, 1.0), region=1)
    return central / outer, d_out / d_cen


def strip_translation_defect(fn: FeFunction, xs=(0.4, 0.5, 0.6), y_range=(0.1, 0.9), samples=400):
    """Max relative deviation of vertical profiles across the strip from their mean."""
    y = np.linspace(*y_range, samples)
    prof = np.array([fn.evaluate(np.column_stack([np.full_like(y, x), y]), 0)[0] for x in xs])
    mean = prof.mean(axis=0)
    return float(np.max(np.linalg.norm(prof - mean, axis=1)) / np.linalg.norm(mean))
