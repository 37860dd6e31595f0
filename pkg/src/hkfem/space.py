"""Global C1 spaces, interpolation, point evaluation and norms."""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from hkfem.element import (
    DERIVS,
    DX,
    DY,
    DXX,
    DXY,
    DYY,
    NUM_DERIVS,
    ElementKind,
    build_bases,
    physical_table,
)
from hkfem.mesh import TriMesh, alfeld_split, outward_normals
from hkfem.quadrature import edge_rule, triangle_rule

BRUTE_FORCE_LIMIT = 10_000


@dataclass(eq=False)
class FeSpace:
    """A C1 finite element space on a triangulation.

    Global numbering puts the vertex block first (``vertex_dofs`` per
    vertex) followed by one normal-derivative dof per edge.
    """

    mesh: TriMesh
    kind: ElementKind
    cell_dofs: np.ndarray
    centers: np.ndarray
    scales: np.ndarray
    pieces: np.ndarray
    coeffs: np.ndarray
    alfeld: Optional[tuple] = field(default=None, repr=False)
    _locator: Optional["PointLocator"] = field(default=None, repr=False)

    @property
    def ndofs(self):
        return self.mesh.num_vertices * self.kind.vertex_dofs + self.mesh.num_edges

    @property
    def degree(self):
        return self.kind.degree

    def vertex_dof(self, vertex, component=0):
        return vertex * self.kind.vertex_dofs + component

    def edge_dof(self, edge):
        return self.mesh.num_vertices * self.kind.vertex_dofs + edge

    @property
    def boundary_dofs(self):
        """All dofs attached to boundary vertices and boundary edges."""
        nvd = self.kind.vertex_dofs
        bv = self.mesh.boundary_vertices
        vd = (bv[:, None] * nvd + np.arange(nvd)).ravel()
        ed = self.edge_dof(self.mesh.boundary_facets)
        return np.union1d(vd, ed)

    @property
    def interior_dofs(self):
        return np.setdiff1d(np.arange(self.ndofs), self.boundary_dofs)

    # tabulation ---------------------------------------------------------------

    def tabulate(self, cells, pts, max_order, pieces=None):
        """Basis derivatives at physical points.

        ``cells``: (n,), ``pts``: (n, q, 2), ``pieces``: (n,) piece index per
        cell (zeros if omitted). Returns (n, q, nderiv, ndof).
        """
        cells = np.asarray(cells)
        if pieces is None:
            pieces = np.zeros(len(cells), dtype=int)
        xi = (pts - self.centers[cells][:, None, :]) / self.scales[cells][:, None, None]
        return physical_table(
            xi, self.coeffs[cells, pieces], self.scales[cells], self.degree, max_order
        )

    def cell_table(self, cell, piece, pts, max_order):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return self.tabulate(np.array([cell]), pts[None], max_order, np.array([piece]))[0]

    def volume_tables(self, degree, max_order, chunk=512):
        """Yield ``(cells, points, weights, table)`` over all (sub)triangles.

        ``weights`` already include the (sub)triangle area; ``table`` is
        ``(n, q, nderiv, ndof)`` with one row per (cell, piece) pair.
        """
        rule = triangle_rule(degree)
        npieces = self.kind.num_pieces
        cells_all = np.repeat(np.arange(self.mesh.num_triangles), npieces)
        pieces_all = np.tile(np.arange(npieces), self.mesh.num_triangles)
        for s in range(0, len(cells_all), chunk):
            cells = cells_all[s : s + chunk]
            pieces = pieces_all[s : s + chunk]
            tri = self.pieces[cells, pieces]  # (n, 3, 2)
            pts = np.einsum("qk,nkc->nqc", rule.points, tri)
            d1 = tri[:, 1] - tri[:, 0]
            d2 = tri[:, 2] - tri[:, 0]
            jac = np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
            w = jac[:, None] * rule.weights[None, :]
            yield cells, pts, w, self.tabulate(cells, pts, max_order, pieces)

    def boundary_tables(self, degree, max_order, facets=None):
        """Basis tables on boundary facets.

        Returns ``(facets, cells, points, weights, normals, lengths, table)``.
        """
        mesh = self.mesh
        if facets is None:
            facets = mesh.boundary_facets
        facets = np.asarray(facets)
        rule = edge_rule(degree)
        cells = mesh.edge_triangles[facets, 0]
        local = np.argmax(mesh.tri_edges[cells] == facets[:, None], axis=1)
        if self.kind is ElementKind.ARGYRIS5:
            pieces = np.zeros(len(cells), dtype=int)
        else:
            pieces = local
        tri = mesh.triangles[cells]
        a = mesh.vertices[tri[np.arange(len(cells)), local]]
        b = mesh.vertices[tri[np.arange(len(cells)), (local + 1) % 3]]
        pts = a[:, None, :] + rule.points[None, :, None] * (b - a)[:, None, :]
        lengths = np.linalg.norm(b - a, axis=1)
        w = lengths[:, None] * rule.weights[None, :]
        normals = outward_normals(mesh, facets)
        table = self.tabulate(cells, pts, max_order, pieces)
        return facets, cells, pts, w, normals, lengths, table

    # point location -----------------------------------------------------------

    @property
    def locator(self):
        if self._locator is None:
            self._locator = PointLocator(self.mesh)
        return self._locator


def build_space(mesh: TriMesh, kind) -> FeSpace:
    """Assemble the global dof map and all element bases."""
    kind = ElementKind.parse(kind)
    nvd = kind.vertex_dofs
    tri = mesh.triangles
    vdofs = (tri[:, :, None] * nvd + np.arange(nvd)).reshape(len(tri), 3 * nvd)
    edofs = mesh.num_vertices * nvd + mesh.tri_edges
    cell_dofs = np.hstack([vdofs, edofs])
    verts = mesh.vertices[tri]
    normals = mesh.edge_normals[mesh.tri_edges]
    centers, scales, pieces, coeffs = build_bases(verts, kind, normals)
    alfeld = alfeld_split(mesh) if kind is ElementKind.HCT3 else None
    if alfeld is not None:
        sub, parent = alfeld
        # the split mesh and the element pieces must describe the same subtriangles
        assert np.allclose(sub.vertices[sub.triangles].reshape(pieces.shape), pieces)
    return FeSpace(mesh, kind, cell_dofs, centers, scales, pieces, coeffs, alfeld)


class PointLocator:
    """Find the cell containing each query point.

    Brute force for small meshes, a uniform bucket grid otherwise.
    """

    def __init__(self, mesh, tol=1e-10):
        self.mesh = mesh
        self.tol = tol
        tri = mesh.vertices[mesh.triangles]
        self.origin = tri[:, 0]
        T = np.stack([tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]], axis=2)
        self.Tinv = np.linalg.inv(T)
        self.bucketed = mesh.num_triangles >= BRUTE_FORCE_LIMIT
        if self.bucketed:
            lo = mesh.vertices.min(axis=0)
            hi = mesh.vertices.max(axis=0)
            self.nb = max(1, int(np.sqrt(mesh.num_triangles / 4)))
            self.lo = lo
            self.width = (hi - lo) / self.nb + 1e-300
            tmin = np.floor((tri.min(axis=1) - lo) / self.width).astype(int).clip(0, self.nb - 1)
            tmax = np.floor((tri.max(axis=1) - lo) / self.width).astype(int).clip(0, self.nb - 1)
            self.buckets = [[] for _ in range(self.nb * self.nb)]
            for t in range(mesh.num_triangles):
                for i in range(tmin[t, 0], tmax[t, 0] + 1):
                    for j in range(tmin[t, 1], tmax[t, 1] + 1):
                        self.buckets[i * self.nb + j].append(t)
            self.buckets = [np.array(b, dtype=int) for b in self.buckets]

    def _search(self, pts, cand):
        # pts (p, 2), cand (c,) -> cell (p,), bary (p, 3)
        rel = pts[:, None, :] - self.origin[cand][None]
        l12 = np.einsum("cij,pcj->pci", self.Tinv[cand], rel)
        lam = np.concatenate([1.0 - l12.sum(axis=2, keepdims=True), l12], axis=2)
        worst = lam.min(axis=2)
        best = worst.argmax(axis=1)
        ok = worst[np.arange(len(pts)), best] >= -self.tol
        cells = np.where(ok, cand[best], -1)
        return cells, lam[np.arange(len(pts)), best]

    def locate(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        cells = -np.ones(len(pts), dtype=int)
        bary = np.zeros((len(pts), 3))
        if not self.bucketed:
            allc = np.arange(self.mesh.num_triangles)
            step = max(1, 2_000_000 // self.mesh.num_triangles)
            for s in range(0, len(pts), step):
                c, b = self._search(pts[s : s + step], allc)
                cells[s : s + step] = c
                bary[s : s + step] = b
        else:
            ij = np.floor((pts - self.lo) / self.width).astype(int)
            inside = np.all((ij >= 0) & (ij < self.nb), axis=1)
            key = np.where(inside, ij[:, 0] * self.nb + ij[:, 1], -1)
            for k in np.unique(key[key >= 0]):
                sel = np.flatnonzero(key == k)
                if len(self.buckets[k]):
                    c, b = self._search(pts[sel], self.buckets[k])
                    cells[sel] = c
                    bary[sel] = b
        if np.any(cells < 0):
            bad = pts[np.flatnonzero(cells < 0)[0]]
            raise ValueError(f"point {tuple(bad)} lies outside the domain")
        return cells, bary


# exact solutions ----------------------------------------------------------------


@dataclass
class ExactSolution:
    """A smooth complex field with derivatives up to third order.

    ``derivs(points, max_order)`` returns an array of shape
    ``(nderiv, npts)`` ordered as :data:`hkfem.element.DERIVS`.
    """

    derivs: Callable
    name: str = "exact"

    def value(self, pts):
        return self.derivs(np.atleast_2d(pts), 0)[0]

    def gradient(self, pts):
        return self.derivs(np.atleast_2d(pts), 1)[1:3].T

    def hessian(self, pts):
        d = self.derivs(np.atleast_2d(pts), 2)
        return np.stack([[d[3], d[4]], [d[4], d[5]]]).transpose(2, 0, 1)

    def third(self, pts):
        return self.derivs(np.atleast_2d(pts), 3)[6:10].T

    @classmethod
    def plane_wave(cls, d):
        """``exp(i d.x)`` for a (possibly complex) wave vector ``d``."""
        d = np.asarray(d, dtype=complex)
        factors = np.array([(1j * d[0]) ** a * (1j * d[1]) ** b for a, b in DERIVS])

        def derivs(pts, max_order=3):
            pts = np.atleast_2d(pts)
            e = np.exp(1j * (pts @ d))
            return factors[: NUM_DERIVS[max_order], None] * e[None, :]

        return cls(derivs, name=f"plane_wave({d[0]:.6g}, {d[1]:.6g})")

    @classmethod
    def from_sympy(cls, expr, x=None, y=None):
        """Build from a sympy expression in the symbols ``x`` and ``y``."""
        import sympy as sp

        x = x or sp.Symbol("x")
        y = y or sp.Symbol("y")
        funcs = [sp.lambdify((x, y), sp.diff(expr, x, a, y, b), "numpy") for a, b in DERIVS]

        def derivs(pts, max_order=3):
            pts = np.atleast_2d(pts)
            out = np.empty((NUM_DERIVS[max_order], len(pts)), dtype=complex)
            for k in range(NUM_DERIVS[max_order]):
                out[k] = np.broadcast_to(funcs[k](pts[:, 0], pts[:, 1]), len(pts))
            return out

        return cls(derivs, name=str(expr))

    @classmethod
    def constant(cls, c=1.0):
        def derivs(pts, max_order=3):
            out = np.zeros((NUM_DERIVS[max_order], len(np.atleast_2d(pts))), dtype=complex)
            out[0] = c
            return out

        return cls(derivs, name=f"constant({c})")

    def finite_difference_defect(self, pts, step=1e-5):
        """Largest relative mismatch between analytic and central-difference
        gradients and Hessians at ``pts``."""
        pts = np.atleast_2d(pts)
        d = self.derivs(pts, 3)
        worst = 0.0
        for axis in range(2):
            e = np.zeros(2)
            e[axis] = step
            dp = self.derivs(pts + e, 3)
            dm = self.derivs(pts - e, 3)
            fd = (dp - dm) / (2 * step)
            # d/dx of (value, dx, dy) -> (dx, dxx, dxy); d/dy -> (dy, dxy, dyy)
            src = [0, 1, 2]
            dst = [DX, DXX, DXY] if axis == 0 else [DY, DXY, DYY]
            for s, t in zip(src, dst):
                scale = np.abs(d[t]).max() + np.abs(d[0]).max() * 1e-3
                worst = max(worst, np.abs(fd[s] - d[t]).max() / scale)
        return worst


# functions ----------------------------------------------------------------------


@dataclass(eq=False)
class FeFunction:
    space: FeSpace
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs)
        if self.coeffs.shape != (self.space.ndofs,):
            raise ValueError(
                f"coefficient vector has shape {self.coeffs.shape}, expected ({self.space.ndofs},)"
            )

    def evaluate(self, pts, max_order=0):
        return evaluate(self, pts, max_order)


def interpolate(space: FeSpace, exact: ExactSolution) -> FeFunction:
    """Apply the global dof functionals to ``exact``."""
    mesh = space.mesh
    nvd = space.kind.vertex_dofs
    max_order = 2 if nvd == 6 else 1
    dv = exact.derivs(mesh.vertices, max_order)  # (nderiv, V)
    coeffs = np.zeros(space.ndofs, dtype=complex)
    coeffs[: mesh.num_vertices * nvd] = dv[:nvd].T.ravel()
    mids = mesh.vertices[mesh.edges].mean(axis=1)
    de = exact.derivs(mids, 1)
    nrm = mesh.edge_normals
    coeffs[mesh.num_vertices * nvd :] = nrm[:, 0] * de[DX] + nrm[:, 1] * de[DY]
    return FeFunction(space, coeffs)


def evaluate(fn: FeFunction, pts, max_order=0):
    """Field values and derivatives at physical points: ``(nderiv, npts)``."""
    space = fn.space
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    cells, bary = space.locator.locate(pts)
    if space.kind is ElementKind.ARGYRIS5:
        pieces = np.zeros(len(pts), dtype=int)
    else:
        # the subtriangle opposite the barycentric minimum
        # piece j = (v_j, v_{j+1}, c) is where lambda_{j+2} is smallest
        pieces = (np.argmin(bary, axis=1) + 1) % 3
    tab = space.tabulate(cells, pts[:, None, :], max_order, pieces)[:, 0]  # (p, nd, ndof)
    local = fn.coeffs[space.cell_dofs[cells]]  # (p, ndof)
    return np.einsum("pdk,pk->dp", tab, local)


# norms ----------------------------------------------------------------------------


def _nematic(d, n):
    """n^T H n from a derivative table (last axis = points or dofs)."""
    return n[0] ** 2 * d[DXX] + 2 * n[0] * n[1] * d[DXY] + n[1] ** 2 * d[DYY]


def compute_norms(fn: FeFunction, exact: Optional[ExactSolution] = None, config=None, degree=None):
    """Norms of ``fn`` (or of ``exact - fn`` when ``exact`` is given).

    Returns a dict with ``L2``, ``H1`` (seminorm), ``H2`` (seminorm),
    ``H2full`` (full H2 norm), ``eps`` and ``h_eps``. The last two follow
    the mesh-dependent norms used for Nitsche stability; ``config``
    provides epsilon and the director (epsilon = 1 and beta = 0 if omitted).
    """
    space = fn.space
    if degree is None:
        degree = 2 * space.degree + 6
    eps = 1 if config is None else config.epsilon
    beta = 0.0 if config is None else config.beta
    director = None if config is None else config.director
    l2 = h1 = h2 = 0.0
    for cells, pts, w, tab in space.volume_tables(degree, 2):
        e = np.einsum("nqdk,nk->dnq", tab, fn.coeffs[space.cell_dofs[cells]])
        if exact is not None:
            ex = exact.derivs(pts.reshape(-1, 2), 2).reshape(e.shape)
            e = ex - e
        a = np.abs(e) ** 2
        l2 += np.sum(w * a[0])
        h1 += np.sum(w * (a[DX] + a[DY]))
        h2 += np.sum(w * (a[DXX] + 2 * a[DXY] + a[DYY]))
    bl2 = bgrad = bglap = bgnem = 0.0
    facets, cells, pts, w, normals, lengths, tab = space.boundary_tables(2 * space.degree + 6, 3)
    e = np.einsum("nqdk,nk->dnq", tab, fn.coeffs[space.cell_dofs[cells]])
    if exact is not None:
        e = exact.derivs(pts.reshape(-1, 2), 3).reshape(e.shape) - e
    bl2 = np.sum(w * np.abs(e[0]) ** 2)
    hw = lengths[:, None] * w
    h3w = lengths[:, None] ** 3 * w
    bgrad = np.sum(hw * (np.abs(e[DX]) ** 2 + np.abs(e[DY]) ** 2))
    glap = (e[6] + e[8], e[7] + e[9])
    bglap = np.sum(h3w * (np.abs(glap[0]) ** 2 + np.abs(glap[1]) ** 2))
    if beta > 0 and director is not None:
        n = director.per_cell(space.mesh)[cells].T[:, :, None]  # (2, nf, 1)
        gx = n[0] ** 2 * e[6] + 2 * n[0] * n[1] * e[7] + n[1] ** 2 * e[8]
        gy = n[0] ** 2 * e[7] + 2 * n[0] * n[1] * e[8] + n[1] ** 2 * e[9]
        bgnem = np.sum(h3w * (np.abs(gx) ** 2 + np.abs(gy) ** 2))
    eps_sq = h2 + h1 + eps * bl2
    heps_sq = eps_sq + eps * (bglap + bgnem + bgrad)
    return {
        "L2": float(np.sqrt(l2)),
        "H1": float(np.sqrt(h1)),
        "H2": float(np.sqrt(h2)),
        "H2full": float(np.sqrt(l2 + h1 + h2)),
        "eps": float(np.sqrt(eps_sq)),
        "h_eps": float(np.sqrt(heps_sq)),
    }
