import numpy as np
import pytest
import sympy as sp

from conftest import cached_space
from hkfem import BcKind, ElementKind, ExactSolution, ProblemConfig, build_space, build_unit_square_mesh
from hkfem.element import DX, DXX, DY, DYY
from hkfem.space import FeFunction, compute_norms, evaluate, interpolate

x, y = sp.symbols("x y")


def test_dof_counts():
    assert build_space(build_unit_square_mesh(0), ElementKind.ARGYRIS5).ndofs == 29
    assert build_space(build_unit_square_mesh(1), ElementKind.ARGYRIS5).ndofs == 70
    assert build_space(build_unit_square_mesh(0), ElementKind.HCT3).ndofs == 17


def test_boundary_and_interior_dofs_partition():
    space = cached_space(2, "ARG")
    b, i = space.boundary_dofs, space.interior_dofs
    assert len(np.intersect1d(b, i)) == 0
    assert len(b) + len(i) == space.ndofs
    # 16 boundary vertices, 16 boundary edges
    assert len(b) == 16 * 6 + 16


@pytest.mark.parametrize("kind", ["ARG", "HCT"])
def test_interpolate_constant(kind):
    space = cached_space(1, kind)
    c = interpolate(space, ExactSolution.constant(1.0)).coeffs
    nvd = space.kind.vertex_dofs
    nv = space.mesh.num_vertices
    vertex = c[: nv * nvd].reshape(nv, nvd)
    assert np.all(vertex[:, 0] == 1)
    assert np.all(vertex[:, 1:] == 0)
    assert np.all(c[nv * nvd :] == 0)


@pytest.mark.parametrize("kind", ["ARG", "HCT"])
def test_evaluate_quadratic(kind):
    fn = interpolate(cached_space(2, kind), ExactSolution.from_sympy(x**2 + y**2))
    t = evaluate(fn, [0.3, 0.4], 2)[:, 0]
    assert t[0] == pytest.approx(0.25, abs=1e-12)
    assert np.allclose([t[DX], t[DY]], [0.6, 0.8], atol=1e-11)
    assert t[DXX] + t[DYY] == pytest.approx(4.0, abs=1e-10)


def test_evaluate_outside_domain():
    fn = interpolate(cached_space(1, "ARG"), ExactSolution.constant(1.0))
    with pytest.raises(ValueError):
        evaluate(fn, [1.5, 0.5])


def test_coefficient_shape_checked():
    with pytest.raises(ValueError):
        FeFunction(cached_space(0, "ARG"), np.zeros(3))


def test_h2_seminorm_of_sine_product():
    u = ExactSolution.from_sympy(sp.sin(sp.pi * x) * sp.sin(sp.pi * y))
    fn = interpolate(cached_space(5, "ARG"), u)
    assert compute_norms(fn)["H2"] ** 2 == pytest.approx(np.pi**4, rel=1e-3)


def test_sine_product_norm_oracle():
    # independent symbolic values: L2^2 = 1/4, |u|_H1^2 = pi^2/2
    u = ExactSolution.from_sympy(sp.sin(sp.pi * x) * sp.sin(sp.pi * y))
    n = compute_norms(interpolate(cached_space(4, "ARG"), u))
    assert n["L2"] ** 2 == pytest.approx(0.25, rel=1e-6)
    assert n["H1"] ** 2 == pytest.approx(np.pi**2 / 2, rel=1e-6)


def test_zero_field_norms():
    space = cached_space(2, "HCT")
    n = compute_norms(FeFunction(space, np.zeros(space.ndofs)))
    assert all(v == 0 for v in n.values())


def test_epsilon_zero_norm_definition():
    cfg = ProblemConfig(alpha=1e-2, k=10, bc_kind=BcKind.IMPEDANCE)
    assert cfg.epsilon == 0
    u = ExactSolution.plane_wave([3.0, -2.0])
    n = compute_norms(interpolate(cached_space(2, "ARG"), u), config=cfg)
    assert n["eps"] ** 2 == n["H2"] ** 2 + n["H1"] ** 2
    assert n["h_eps"] == n["eps"]


@pytest.mark.parametrize("kind", ["ARG", "HCT"])
def test_norm_monotonicity(kind, rng):
    space = cached_space(2, kind)
    fn = FeFunction(space, rng.standard_normal(space.ndofs) + 1j * rng.standard_normal(space.ndofs))
    for cfg in (None, ProblemConfig(alpha=1e-2, k=10, beta=5e-3)):
        n = compute_norms(fn, config=cfg)
        assert n["h_eps"] >= n["eps"] >= n["H2"]


@pytest.mark.parametrize("kind", ["ARG", "HCT"])
def test_interpolation_is_projection(kind, rng):
    space = cached_space(2, kind)
    fn = FeFunction(space, rng.standard_normal(space.ndofs))
    as_exact = ExactSolution(lambda pts, max_order=3: evaluate(fn, pts, max_order))
    again = interpolate(space, as_exact).coeffs
    assert np.abs(again - fn.coeffs).max() <= 1e-10 * max(1.0, np.abs(fn.coeffs).max())


def test_plane_wave_derivatives_by_finite_differences(rng):
    u = ExactSolution.plane_wave([7.8615, 1.2])
    assert u.finite_difference_defect(rng.random((20, 2))) < 1e-6
    v = ExactSolution.from_sympy(sp.exp(x) * sp.cos(2 * y))
    assert v.finite_difference_defect(rng.random((20, 2))) < 1e-6


def test_plane_wave_interpolation_rate():
    u = ExactSolution.plane_wave([7.8615, 0.0])
    levels = np.arange(2, 6)
    errs = [compute_norms(interpolate(cached_space(int(l), "ARG"), u), u)["H2full"] for l in levels]
    hs = [cached_space(int(l), "ARG").mesh.h for l in levels]
    rate = np.polyfit(np.log2(hs), np.log2(errs), 1)[0]
    assert rate >= 3.7
    # close to the factor 16 per refinement
    assert 12 < errs[-2] / errs[-1] < 20
