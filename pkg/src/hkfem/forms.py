"""Sesquilinear forms, Nitsche terms and right-hand sides.

Matrices follow the convention ``A[i, j] = a(phi_j, phi_i)`` (row = test
function). Basis functions are real, so the conjugation in the second slot
of the sesquilinear forms never acts on them.

Boundary forms are written as sums of ``coef * trial_trace * test_trace``
where the traces are taken from ``TRACES``:

====== =============================
u      value
dn     normal derivative
lap    Laplacian
nem    n^T (H u) n
dn_lap normal derivative of Laplacian
dn_nem normal derivative of n^T (H u) n
====== =============================

Writing every boundary form this way lets the same description produce
both the matrix and, by substituting the traces of an exact solution for
the trial traces, the data terms of a consistent right-hand side.
"""

import enum
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Union

import numpy as np
import scipy.sparse as sps

from hkfem.element import DX, DXX, DXY, DY, DYY, ElementKind
from hkfem.space import ExactSolution, FeSpace

log = logging.getLogger(__name__)

TRACES = ("u", "dn", "lap", "nem", "dn_lap", "dn_nem")

DEFAULT_PENALTY = {ElementKind.ARGYRIS5: 2500.0, ElementKind.HCT3: 150.0}


class BcKind(enum.Enum):
    SOUND_SOFT = "soft"
    SOUND_HARD = "hard"
    IMPEDANCE = "impedance"

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower().replace("-", "_")
        aliases = {
            "soft": cls.SOUND_SOFT,
            "sound_soft": cls.SOUND_SOFT,
            "hard": cls.SOUND_HARD,
            "sound_hard": cls.SOUND_HARD,
            "impedance": cls.IMPEDANCE,
            "robin": cls.IMPEDANCE,
        }
        if key not in aliases:
            raise ValueError(f"unknown boundary condition {name!r}")
        return aliases[key]


@dataclass(frozen=True)
class DirectorField:
    """Piecewise constant unit director, one vector per region tag."""

    vectors: Dict[int, tuple]

    def __post_init__(self):
        for tag, v in self.vectors.items():
            if abs(np.hypot(*v) - 1.0) > 1e-14:
                raise ValueError(f"director for region {tag} is not a unit vector: {v}")

    @classmethod
    def uniform(cls, vector=(1.0, 0.0)):
        v = np.asarray(vector, dtype=float)
        v = v / np.linalg.norm(v)
        return cls({0: (float(v[0]), float(v[1]))})

    @classmethod
    def from_angle(cls, degrees):
        a = np.deg2rad(degrees)
        return cls({0: (float(np.cos(a)), float(np.sin(a)))})

    def vector(self, tag=0):
        return np.array(self.vectors[tag])

    def per_cell(self, mesh):
        tags = np.unique(mesh.region_tags)
        if len(self.vectors) == 1:
            (v,) = self.vectors.values()
            return np.tile(np.asarray(v, dtype=float), (mesh.num_triangles, 1))
        missing = [int(t) for t in tags if int(t) not in self.vectors]
        if missing:
            raise ValueError(f"no director given for regions {missing}")
        table = np.zeros((tags.max() + 1, 2))
        for t in tags:
            table[t] = self.vectors[int(t)]
        return table[mesh.region_tags]


def matched_theta(alpha, k):
    """Positive root ``d`` of ``alpha d^4 + d^2 = k^2``."""
    return float(np.sqrt(2.0 * k**2 / (1.0 + np.sqrt(1.0 + 4.0 * alpha * k**2))))


@dataclass(frozen=True)
class ProblemConfig:
    """Scalar parameters and boundary condition of one problem.

    ``bc_kind`` is either a single :class:`BcKind` or a mapping from facet
    side tag to :class:`BcKind`. ``theta`` defaults to ``k``; the string
    ``"matched"`` selects the wave number of the isotropic propagating
    branch (see :func:`matched_theta`). The penalty parameters default to
    the per-element values in ``DEFAULT_PENALTY``.

    ``impedance_closure`` adds ``eta2/h (dn u - i theta u, dn v)`` on
    impedance facets. The plain impedance form only enforces one linear
    combination of the two impedance conditions (the ``(lap u, dn v)``
    term cancels the natural one), which leaves the continuous problem
    without a unique solution; the extra term enforces the impedance
    condition weakly, with the matching data term added by ``assemble_rhs``.
    """

    alpha: float
    k: float
    beta: float = 0.0
    theta: Optional[float] = None
    bc_kind: Union[BcKind, Dict[int, BcKind]] = BcKind.SOUND_SOFT
    eta1: Optional[float] = None
    eta2: Optional[float] = None
    eta3: Optional[float] = None
    impedance_closure: bool = True
    director: DirectorField = field(default_factory=DirectorField.uniform)

    def __post_init__(self):
        if isinstance(self.bc_kind, dict):
            object.__setattr__(
                self, "bc_kind", {int(t): BcKind.parse(b) for t, b in self.bc_kind.items()}
            )
        else:
            object.__setattr__(self, "bc_kind", BcKind.parse(self.bc_kind))
        if self.theta is None:
            object.__setattr__(self, "theta", float(self.k))
        elif isinstance(self.theta, str):
            if self.theta != "matched":
                raise ValueError(f"theta must be a number or 'matched', got {self.theta!r}")
            object.__setattr__(self, "theta", matched_theta(self.alpha, self.k))
        self.validate()

    def validate(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not self.beta >= 0:
            raise ValueError("beta must be nonnegative")
        if not self.k > 0:
            raise ValueError("k must be positive")
        if BcKind.IMPEDANCE in self.kinds and self.theta == 0:
            raise ValueError("impedance boundary conditions need theta != 0")
        for name in ("eta1", "eta2", "eta3"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be positive")

    @property
    def kinds(self):
        if isinstance(self.bc_kind, dict):
            return set(self.bc_kind.values())
        return {self.bc_kind}

    @property
    def epsilon(self):
        """Nitsche switch: 0 for pure impedance problems, 1 otherwise."""
        return 0 if self.kinds == {BcKind.IMPEDANCE} else 1

    def kind_for_tag(self, tag):
        if isinstance(self.bc_kind, dict):
            if tag not in self.bc_kind:
                raise ValueError(f"no boundary condition given for facet tag {tag}")
            return self.bc_kind[tag]
        return self.bc_kind

    def penalties(self, kind: ElementKind):
        d = DEFAULT_PENALTY[ElementKind.parse(kind)]
        return (
            d if self.eta1 is None else self.eta1,
            d if self.eta2 is None else self.eta2,
            d if self.eta3 is None else self.eta3,
        )

    def with_(self, **kw):
        return replace(self, **kw)


# boundary forms -------------------------------------------------------------------


def boundary_terms(kind: BcKind, config: ProblemConfig, h, element: ElementKind):
    """List of ``(coef, trial_trace, test_trace)``; ``coef`` has the shape of ``h``."""
    a, b = config.alpha, config.beta
    eta1, eta2, eta3 = config.penalties(element)
    one = np.ones_like(h, dtype=float)
    if kind is BcKind.SOUND_SOFT:
        return [
            (a * one, "dn_lap", "u"),
            (a * one, "u", "dn_lap"),
            (-one, "dn", "u"),
            (-one, "u", "dn"),
            (b * one, "dn_nem", "u"),
            (b * one, "u", "dn_nem"),
            (a * eta1 / h**3 + eta2 / h + b * eta3 / h**3, "u", "u"),
        ]
    if kind is BcKind.SOUND_HARD:
        return [
            (-a * one, "lap", "dn"),
            (-b * one, "nem", "dn"),
            (-a * one, "dn", "lap"),
            (-b * one, "dn", "nem"),
            (eta2 / h, "dn", "dn"),
        ]
    th = config.theta
    terms = [
        (-a * one, "lap", "dn"),
        (-b * one, "nem", "dn"),
        (1j * th * a * one, "lap", "u"),
        (1j * th * b * one, "nem", "u"),
        (-1j * th * one, "u", "u"),
    ]
    if config.impedance_closure:
        terms += [(eta2 / h, "dn", "dn"), (-1j * th * eta2 / h, "u", "dn")]
    return terms


def traces(d, nu, n):
    """Boundary traces from a derivative table.

    ``d``: (nf, q, nderiv, ...) with at least third derivatives;
    ``nu``, ``n``: (nf, 2). Returns a dict of arrays shaped (nf, q, ...).
    """
    extra = d.ndim - 3

    def c(a, i):
        return a[(slice(None), None, i) + (None,) * extra]

    nx, ny = c(n, 0), c(n, 1)
    vx, vy = c(nu, 0), c(nu, 1)
    g = d[:, :, DX], d[:, :, DY]
    xx, xy, yy = d[:, :, DXX], d[:, :, DXY], d[:, :, DYY]
    xxx, xxy, xyy, yyy = d[:, :, 6], d[:, :, 7], d[:, :, 8], d[:, :, 9]
    glap = (xxx + xyy, xxy + yyy)
    gnem = (
        nx**2 * xxx + 2 * nx * ny * xxy + ny**2 * xyy,
        nx**2 * xxy + 2 * nx * ny * xyy + ny**2 * yyy,
    )
    return {
        "u": d[:, :, 0],
        "dn": vx * g[0] + vy * g[1],
        "lap": xx + yy,
        "nem": nx**2 * xx + 2 * nx * ny * xy + ny**2 * yy,
        "dn_lap": vx * glap[0] + vy * glap[1],
        "dn_nem": vx * gnem[0] + vy * gnem[1],
    }


class FormAssembler:
    """Caches basis tables of one space and assembles matrices from them."""

    def __init__(self, space: FeSpace, director: Optional[DirectorField] = None, degree=None):
        self.space = space
        self.director = director or DirectorField.uniform()
        p = space.degree
        self.volume_degree = degree or 2 * p + 2
        self.edge_degree = 2 * p + 4
        self._volume = None
        self._bnd = None

    # volume -------------------------------------------------------------------

    def _scatter(self, cells, local):
        dofs = self.space.cell_dofs[cells]
        nd = dofs.shape[1]
        rows = np.repeat(dofs, nd, axis=1).ravel()
        cols = np.tile(dofs, (1, nd)).ravel()
        n = self.space.ndofs
        return sps.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()

    @property
    def volume(self):
        """Dict of volume matrices: ``lap``, ``nem``, ``grad``, ``mass``, ``hess``."""
        if self._volume is None:
            sp = self.space
            ncell = sp.mesh.num_triangles
            nd = sp.kind.num_local_dofs
            loc = {k: np.zeros((ncell, nd, nd)) for k in ("lap", "nem", "grad", "mass", "hess")}
            ncell_dir = self.director.per_cell(sp.mesh)
            for cells, pts, w, tab in sp.volume_tables(self.volume_degree, 2):
                n = ncell_dir[cells]
                nx = n[:, 0, None, None]
                ny = n[:, 1, None, None]
                v = tab[:, :, 0]
                lap = tab[:, :, DXX] + tab[:, :, DYY]
                nem = nx**2 * tab[:, :, DXX] + 2 * nx * ny * tab[:, :, DXY] + ny**2 * tab[:, :, DYY]

                def gram(a, b):
                    # test index i from a, trial index j from b
                    return np.einsum("nq,nqi,nqj->nij", w, a, b)

                np.add.at(loc["lap"], cells, gram(lap, lap))
                np.add.at(loc["nem"], cells, gram(lap, nem))
                np.add.at(loc["mass"], cells, gram(v, v))
                np.add.at(
                    loc["grad"], cells, gram(tab[:, :, DX], tab[:, :, DX]) + gram(tab[:, :, DY], tab[:, :, DY])
                )
                np.add.at(
                    loc["hess"],
                    cells,
                    gram(tab[:, :, DXX], tab[:, :, DXX])
                    + 2 * gram(tab[:, :, DXY], tab[:, :, DXY])
                    + gram(tab[:, :, DYY], tab[:, :, DYY]),
                )
            cells = np.arange(ncell)
            self._volume = {k: self._scatter(cells, v) for k, v in loc.items()}
        return self._volume

    # boundary -----------------------------------------------------------------

    @property
    def boundary(self):
        if self._bnd is None:
            sp = self.space
            facets, cells, pts, w, normals, lengths, tab = sp.boundary_tables(self.edge_degree, 3)
            n = self.director.per_cell(sp.mesh)[cells]
            self._bnd = dict(
                facets=facets,
                cells=cells,
                w=w,
                normals=normals,
                lengths=lengths,
                director=n,
                tags=sp.mesh.facet_tags,
                traces=traces(tab, normals, n),
            )
        return self._bnd

    def facet_mask(self, config: ProblemConfig, kind: BcKind):
        tags = self.boundary["tags"]
        return np.array([config.kind_for_tag(int(t)) is kind for t in tags], dtype=bool)

    def boundary_matrix(self, terms, mask=None):
        """Assemble ``sum coef * (trial_trace, test_trace)`` over the masked facets."""
        bd = self.boundary
        sel = np.arange(len(bd["facets"])) if mask is None else np.flatnonzero(mask)
        nd = self.space.kind.num_local_dofs
        local = np.zeros((len(sel), nd, nd), dtype=complex)
        if len(sel) == 0:
            return self._scatter(bd["cells"][sel], local)
        tr = bd["traces"]
        w = bd["w"][sel]
        for coef, a, b in terms:
            coef = np.asarray(coef)
            c = coef[sel] if coef.ndim else np.full(len(sel), coef)
            local += np.einsum("f,fq,fqi,fqj->fij", c, w, tr[b][sel], tr[a][sel])
        return self._scatter(bd["cells"][sel], local)

    def boundary_mass(self, weight_power=0):
        """``sum_e h_e**weight_power (u, v)_e`` over all boundary facets."""
        h = self.boundary["lengths"]
        return self.boundary_matrix([(h**weight_power, "u", "u")])


# public assembly ------------------------------------------------------------------


@dataclass
class AssembledSystem:
    matrix: sps.csr_matrix
    rhs: np.ndarray
    space: FeSpace
    config: ProblemConfig
    compact: Optional[sps.csr_matrix] = None

    def residual(self, x):
        r = self.matrix @ x - self.rhs
        nb = np.linalg.norm(self.rhs)
        return np.linalg.norm(r) / (nb if nb > 0 else 1.0)


@dataclass
class EvpPair:
    """Stiffness-like matrix ``E`` and mass ``M`` of the discrete eigenproblem.

    ``prolongation`` maps constrained coordinates to full coefficient
    vectors (``None`` when the problem is posed on the whole space).
    """

    E: sps.csr_matrix
    M: sps.csr_matrix
    symmetry_defect: float
    prolongation: Optional[sps.csr_matrix] = None
    raw: Optional[sps.csr_matrix] = None


def _assembler(space, config, assembler):
    if assembler is None:
        assembler = FormAssembler(space, config.director)
    return assembler


def assemble_volume_forms(space, config, assembler=None, k_squared=True):
    """``alpha (lap u, lap v) + beta (n^T Hu n, lap v) + (grad u, grad v) - k^2 (u, v)``."""
    fa = _assembler(space, config, assembler)
    v = fa.volume
    A = config.alpha * v["lap"] + config.beta * v["nem"] + v["grad"]
    if k_squared:
        A = A - config.k**2 * v["mass"]
    return A.astype(complex)


def assemble_nitsche_terms(space, config, assembler=None):
    """Boundary terms on every sound-soft and sound-hard facet."""
    fa = _assembler(space, config, assembler)
    h = fa.boundary["lengths"]
    n = space.ndofs
    out = sps.csr_matrix((n, n), dtype=complex)
    for kind in (BcKind.SOUND_SOFT, BcKind.SOUND_HARD):
        mask = fa.facet_mask(config, kind)
        if mask.any():
            out = out + fa.boundary_matrix(boundary_terms(kind, config, h, space.kind), mask)
    return out


def assemble_impedance_terms(space, config, assembler=None):
    """The five impedance boundary terms on every impedance facet."""
    if config.theta == 0:
        raise ValueError("impedance boundary conditions need theta != 0")
    fa = _assembler(space, config, assembler)
    h = fa.boundary["lengths"]
    mask = fa.facet_mask(config, BcKind.IMPEDANCE)
    return fa.boundary_matrix(boundary_terms(BcKind.IMPEDANCE, config, h, space.kind), mask)


def assemble_matrix(space, config, assembler=None):
    fa = _assembler(space, config, assembler)
    A = assemble_volume_forms(space, config, fa) + assemble_nitsche_terms(space, config, fa)
    K = None
    if BcKind.IMPEDANCE in config.kinds:
        K = assemble_impedance_terms(space, config, fa)
        A = A + K
    return A.tocsr(), K


def _rhs_volume(space, f, degree):
    b = np.zeros(space.ndofs, dtype=complex)
    if f is None:
        return b
    for cells, pts, w, tab in space.volume_tables(degree, 0):
        fv = np.asarray(f(pts.reshape(-1, 2)), dtype=complex).reshape(w.shape)
        loc = np.einsum("nq,nq,nqi->ni", w, fv, tab[:, :, 0])
        np.add.at(b, space.cell_dofs[cells], loc)
    return b


def assemble_rhs(space, config, f=None, exact: Optional[ExactSolution] = None, assembler=None,
                 data_tags=None, degree=None):
    """Load vector ``(f, v)`` plus boundary data terms.

    ``exact`` supplies the boundary traces of the solution (value,
    gradient, Laplacian, ``n^T H n`` and their normal derivatives). The
    data terms are chosen so that ``a_h(exact, v) = b(v)`` for every
    discrete ``v`` whenever ``exact`` solves the PDE with forcing ``f``.
    ``data_tags`` restricts the boundary data to facets with those side
    tags (all facets if ``None``).
    """
    fa = _assembler(space, config, assembler)
    if degree is None:
        degree = 2 * space.degree + 6
    b = _rhs_volume(space, f, degree)
    if exact is None:
        return b
    bd = fa.boundary
    facets = bd["facets"]
    sel = np.ones(len(facets), dtype=bool)
    if data_tags is not None:
        sel = np.isin(bd["tags"], list(data_tags))
    _, cells, pts, w, normals, lengths, tab = space.boundary_tables(degree, 3, facets[sel])
    n = bd["director"][sel]
    test = traces(tab, normals, n)
    ex = exact.derivs(pts.reshape(-1, 2), 3)  # (nd, nf*q)
    ex = ex.T.reshape(pts.shape[0], pts.shape[1], -1)
    trial = traces(ex, normals, n)
    a, beta = config.alpha, config.beta
    tags = bd["tags"][sel]
    loc = np.zeros((len(cells), space.kind.num_local_dofs), dtype=complex)
    for kind in config.kinds:
        km = np.array([config.kind_for_tag(int(t)) is kind for t in tags])
        if not km.any():
            continue
        terms = boundary_terms(kind, config, lengths[km], space.kind)
        # natural boundary terms of the integration by parts identity
        flux = a * trial["lap"][km] + beta * trial["nem"][km]
        normal_flux = a * trial["dn_lap"][km] + beta * trial["dn_nem"][km] - trial["dn"][km]
        acc = flux[:, :, None] * test["dn"][km] - normal_flux[:, :, None] * test["u"][km]
        for coef, ta, tb in terms:
            acc = acc + coef[:, None, None] * trial[ta][km][:, :, None] * test[tb][km]
        loc[km] += np.einsum("fq,fqi->fi", w[km], acc)
    np.add.at(b, space.cell_dofs[cells], loc)
    return b


def assemble_system(space, config, f=None, exact=None, assembler=None, data_tags=None):
    fa = _assembler(space, config, assembler)
    A, K = assemble_matrix(space, config, fa)
    b = assemble_rhs(space, config, f, exact, fa, data_tags)
    return AssembledSystem(A, b, space, config, K)


def boundary_zero_prolongation(space):
    """Basis of the subspace whose functions vanish on the boundary.

    At each boundary vertex the value, the tangential derivatives along
    the incident boundary edges and (Argyris) the second tangential
    derivatives are constrained to zero. Edge dofs stay free.
    """
    mesh = space.mesh
    nvd = space.kind.vertex_dofs
    n = space.ndofs
    tangents = {}
    for e in mesh.boundary_facets:
        a, b = mesh.edges[e]
        t = mesh.vertices[b] - mesh.vertices[a]
        t = t / np.linalg.norm(t)
        tangents.setdefault(a, []).append(t)
        tangents.setdefault(b, []).append(t)
    rows, cols, vals = [], [], []
    col = 0
    bset = set(tangents)
    for v in range(mesh.num_vertices):
        base = v * nvd
        if v not in bset:
            for c in range(nvd):
                rows.append(base + c)
                cols.append(col)
                vals.append(1.0)
                col += 1
            continue
        cons = [np.eye(nvd)[0]]
        for t in tangents[v]:
            r = np.zeros(nvd)
            r[1:3] = t
            cons.append(r)
            if nvd == 6:
                r = np.zeros(nvd)
                r[3:6] = [t[0] ** 2, 2 * t[0] * t[1], t[1] ** 2]
                cons.append(r)
        C = np.array(cons)
        _, s, vt = np.linalg.svd(C)
        rank = int(np.sum(s > 1e-12 * s[0]))
        for z in vt[rank:]:
            for c in np.flatnonzero(np.abs(z) > 1e-15):
                rows.append(base + c)
                cols.append(col)
                vals.append(z[c])
            col += 1
    for e in range(mesh.num_edges):
        rows.append(space.edge_dof(e))
        cols.append(col)
        vals.append(1.0)
        col += 1
    return sps.csr_matrix((vals, (rows, cols)), shape=(n, col))


def assemble_evp_pair(space, config, assembler=None):
    """Matrices of ``e_h(u, v) = lambda (u, v)``.

    With epsilon = 1 the Nitsche terms of every Nitsche facet are included
    and the problem lives on the full space. With epsilon = 0 (impedance)
    the problem lives on the subspace vanishing on the boundary and the
    Laplacian condition is natural, so no boundary term enters.
    """
    fa = _assembler(space, config, assembler)
    E = assemble_volume_forms(space, config, fa, k_squared=False)
    P = None
    if config.epsilon == 1:
        E = E + assemble_nitsche_terms(space, config, fa)
    M = fa.volume["mass"]
    if config.epsilon == 0:
        P = boundary_zero_prolongation(space)
        E = (P.T @ E @ P).tocsr()
        M = (P.T @ M @ P).tocsr()
    if E.nnz and abs(E.imag).max() > 0:
        raise ValueError("eigenvalue form is not real")
    E = E.real.tocsr()
    defect = symmetry_defect(E)
    log.debug("e_h symmetry defect %.3e", defect)
    Es = ((E + E.T) * 0.5).tocsr()
    return EvpPair(Es, M.tocsr(), defect, P, E)


def symmetry_defect(A):
    """``||A - A^T||_inf / ||A||_inf``."""
    A = sps.csr_matrix(A)
    nrm = abs(A).sum(axis=1).max()
    if nrm == 0:
        return 0.0
    return float(abs(A - A.T).sum(axis=1).max() / nrm)


def nematic_symmetry_defect(space, director, assembler=None):
    """Symmetry defect of ``(n^T H u n, lap v)`` on functions vanishing with
    their gradients on the boundary (all boundary dofs removed)."""
    fa = assembler or FormAssembler(space, director)
    B = fa.volume["nem"]
    idx = space.interior_dofs
    return symmetry_defect(B[idx][:, idx])


def epsilon_gram(space, config, assembler=None):
    """Gram matrix of the squared epsilon-norm."""
    fa = _assembler(space, config, assembler)
    G = fa.volume["hess"] + fa.volume["grad"]
    if config.epsilon:
        G = G + fa.boundary_mass().real
    return G.tocsr()


def dump_matrix(A, path):
    """Write a matrix as ``i j re im`` rows."""
    C = sps.coo_matrix(A)
    with open(path, "w") as fh:
        fh.write(f"# {C.shape[0]} {C.shape[1]} {C.nnz}\n")
        for i, j, v in zip(C.row, C.col, C.data.astype(complex)):
            fh.write(f"{i} {j} {v.real:.17g} {v.imag:.17g}\n")
