"""C1 finite element bases built directly in the physical frame.

Each basis is stored as monomial coefficients in the scaled local
coordinates ``xi = (x - center) / scale``. The basis is dual to the
unscaled physical degrees of freedom (point values, derivatives and edge
normal derivatives), while the local Vandermonde system is assembled with
derivative functionals multiplied by ``scale**order`` for conditioning.

Two elements are provided:

* ``ARGYRIS5``: quintic, 21 dofs (value, gradient, Hessian at each vertex,
  normal derivative at each edge midpoint).
* ``HCT3``: piecewise cubic on the Alfeld split, 12 dofs (value and
  gradient at each vertex, normal derivative at each edge midpoint).
"""

import enum
from dataclasses import dataclass

import numpy as np

# derivative multi-indices, in the order used by every table in the package
DERIVS = [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2), (3, 0), (2, 1), (1, 2), (0, 3)]
DERIV_ORDER = np.array([i + j for i, j in DERIVS])
NUM_DERIVS = {0: 1, 1: 3, 2: 6, 3: 10}
VAL, DX, DY, DXX, DXY, DYY, DXXX, DXXY, DXYY, DYYY = range(10)


class ElementKind(enum.Enum):
    ARGYRIS5 = "ARG"
    HCT3 = "HCT"

    @property
    def degree(self):
        return 5 if self is ElementKind.ARGYRIS5 else 3

    @property
    def num_local_dofs(self):
        return 21 if self is ElementKind.ARGYRIS5 else 12

    @property
    def vertex_dofs(self):
        """Dofs attached to each vertex."""
        return 6 if self is ElementKind.ARGYRIS5 else 3

    @property
    def num_pieces(self):
        return 1 if self is ElementKind.ARGYRIS5 else 3

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        key = str(name).strip().upper()
        for kind in cls:
            if key in (kind.value, kind.name, kind.name.rstrip("0123456789")):
                return kind
        raise ValueError(f"unknown element kind {name!r}")


@dataclass(frozen=True)
class DofFunctional:
    """One local degree of freedom.

    ``kind`` is one of ``"value"``, ``"grad"``, ``"hess"`` or ``"normal"``;
    ``component`` indexes into ``DERIVS`` for vertex functionals.
    ``anchor`` is the local vertex or local edge index.
    """

    kind: str
    anchor: int
    component: int = 0


def local_functionals(kind):
    kind = ElementKind.parse(kind)
    comps = range(6) if kind is ElementKind.ARGYRIS5 else range(3)
    out = []
    for v in range(3):
        for c in comps:
            name = "value" if c == 0 else ("grad" if c < 3 else "hess")
            out.append(DofFunctional(name, v, c))
    out += [DofFunctional("normal", e) for e in range(3)]
    return out


def monomial_exponents(degree):
    return np.array([(n - b, b) for n in range(degree + 1) for b in range(n + 1)])


def _falling(a, i):
    out = np.ones_like(a, dtype=float)
    for r in range(i):
        out *= np.maximum(a - r, 0)
    return out


def monomial_table(xi, degree, max_order):
    """Derivatives of all monomials of total degree <= ``degree``.

    ``xi`` has shape ``(..., 2)``; the result has shape
    ``(..., nderiv, nmono)`` with derivatives taken in the local variables.
    """
    xi = np.asarray(xi, dtype=float)
    exps = monomial_exponents(degree)
    nd = NUM_DERIVS[max_order]
    px = xi[..., 0:1] ** np.arange(degree + 1)
    py = xi[..., 1:2] ** np.arange(degree + 1)
    out = np.zeros(xi.shape[:-1] + (nd, len(exps)))
    for d, (i, j) in enumerate(DERIVS[:nd]):
        ea = exps[:, 0] - i
        eb = exps[:, 1] - j
        coef = _falling(exps[:, 0], i) * _falling(exps[:, 1], j)
        ok = (ea >= 0) & (eb >= 0)
        vals = px[..., np.clip(ea, 0, None)] * py[..., np.clip(eb, 0, None)]
        out[..., d, :] = np.where(ok, coef * vals, 0.0)
    return out


def physical_table(xi, coeffs, scale, degree, max_order):
    """Physical derivatives of a set of basis functions.

    ``xi``: (n, q, 2) local points; ``coeffs``: (n, nmono, ndof);
    ``scale``: (n,). Returns (n, q, nderiv, ndof).
    """
    mono = monomial_table(xi, degree, max_order)
    nd = NUM_DERIVS[max_order]
    fac = np.asarray(scale, dtype=float)[:, None] ** (-DERIV_ORDER[:nd])[None, :]
    mono = mono * fac[:, None, :, None]
    return np.einsum("nqdm,nmk->nqdk", mono, coeffs)


def _outward_normals(verts):
    """Outward unit normals of local edges (j, j+1) for CCW triangles."""
    t = np.roll(verts, -1, axis=-2) - verts
    t = t / np.linalg.norm(t, axis=-1, keepdims=True)
    return np.stack([t[..., 1], -t[..., 0]], axis=-1)


def _signed_area(verts):
    d1 = verts[..., 1, :] - verts[..., 0, :]
    d2 = verts[..., 2, :] - verts[..., 0, :]
    return 0.5 * (d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0])


def _vertex_rows(tab, kind):
    """Rows of the dual system from a monomial table at the vertices."""
    comps = 6 if kind is ElementKind.ARGYRIS5 else 3
    return tab[..., :comps, :]


def _argyris_coeffs(verts, normals, center, scale):
    n = len(verts)
    xi_v = (verts - center[:, None, :]) / scale[:, None, None]  # (n, 3, 2)
    mid = 0.5 * (verts + np.roll(verts, -1, axis=1))
    xi_m = (mid - center[:, None, :]) / scale[:, None, None]
    tv = monomial_table(xi_v, 5, 2)  # (n, 3, 6, 21)
    tm = monomial_table(xi_m, 5, 1)  # (n, 3, 3, 21)
    V = np.empty((n, 21, 21))
    V[:, :18, :] = tv.reshape(n, 18, 21)
    V[:, 18:, :] = np.einsum("nec,necm->nem", normals, tm[:, :, 1:3, :])
    C = np.linalg.solve(V, np.broadcast_to(np.eye(21), V.shape))
    order = np.array([DERIV_ORDER[c] for _ in range(3) for c in range(6)] + [1, 1, 1])
    C = C * scale[:, None, None] ** order[None, None, :]
    return C[:, None, :, :]  # one piece


def _hct_coeffs(verts, normals, center, scale):
    n = len(verts)
    xi_v = (verts - center[:, None, :]) / scale[:, None, None]  # origin is the barycenter
    # constraints: C1 contact across the internal edges (c, v_j) between
    # piece j-1 = (v_{j-1}, v_j, c) and piece j = (v_j, v_{j+1}, c)
    ts = np.array([0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0])
    rows = []
    for j in range(3):
        pts = ts[None, :, None] * xi_v[:, j, None, :]  # (n, 4, 2)
        tab = monomial_table(pts, 3, 1).reshape(n, 12, 10)
        blk = np.zeros((n, 12, 30))
        jm = (j - 1) % 3
        blk[:, :, 10 * jm : 10 * jm + 10] = tab
        blk[:, :, 10 * j : 10 * j + 10] -= tab
        rows.append(blk)
    G = np.concatenate(rows, axis=1)  # (n, 36, 30)
    _, s, vt = np.linalg.svd(G)
    if np.any(s[:, 17] < 1e-8 * s[:, 0]) or np.any(s[:, 18:] > 1e-9 * s[:, :1]):
        raise np.linalg.LinAlgError("HCT constraint system has unexpected rank")
    Z = np.transpose(vt[:, 18:, :], (0, 2, 1))  # (n, 30, 12)

    tv = monomial_table(xi_v, 3, 1)  # (n, 3, 3, 10)
    mid = 0.5 * (xi_v + np.roll(xi_v, -1, axis=1))
    tm = monomial_table(mid, 3, 1)
    L = np.zeros((n, 12, 30))
    for j in range(3):
        L[:, 3 * j : 3 * j + 3, 10 * j : 10 * j + 10] = tv[:, j]
        L[:, 9 + j, 10 * j : 10 * j + 10] = np.einsum("nc,ncm->nm", normals[:, j], tm[:, j, 1:3])
    LZ = L @ Z
    Y = np.linalg.solve(LZ, np.broadcast_to(np.eye(12), LZ.shape))
    X = Z @ Y  # (n, 30, 12)
    order = np.array([0, 1, 1] * 3 + [1, 1, 1])
    X = X * scale[:, None, None] ** order[None, None, :]
    return X.reshape(n, 3, 10, 12)


def build_bases(verts, kind, normals=None):
    """Batched basis construction.

    Parameters
    ----------
    verts : (n, 3, 2) array of counterclockwise triangles
    kind : ElementKind
    normals : (n, 3, 2) array, direction of the normal-derivative dof on
        local edge ``(j, j+1)``; outward normals if omitted

    Returns
    -------
    centers (n, 2), scales (n,), pieces (n, P, 3, 2), coeffs (n, P, nmono, ndof)
    """
    kind = ElementKind.parse(kind)
    verts = np.asarray(verts, dtype=float)
    if verts.ndim == 2:
        verts = verts[None]
    if normals is None:
        normals = _outward_normals(verts)
    normals = np.asarray(normals, dtype=float).reshape(verts.shape)
    scale = np.linalg.norm(verts - np.roll(verts, -1, axis=1), axis=2).max(axis=1)
    area = _signed_area(verts)
    if np.any(area < 1e-14 * scale**2):
        raise ValueError("degenerate or clockwise triangle")
    center = verts.mean(axis=1)
    if kind is ElementKind.ARGYRIS5:
        coeffs = _argyris_coeffs(verts, normals, center, scale)
        pieces = verts[:, None, :, :]
    else:
        coeffs = _hct_coeffs(verts, normals, center, scale)
        c = np.broadcast_to(center[:, None, :], (len(verts), 3, 2))
        pieces = np.stack([verts, np.roll(verts, -1, axis=1), c], axis=2)
    return center, scale, pieces, coeffs


@dataclass(frozen=True)
class PhysicalElementBasis:
    """Basis functions of one (macro) triangle."""

    kind: ElementKind
    vertices: np.ndarray
    normals: np.ndarray
    center: np.ndarray
    scale: float
    pieces: np.ndarray
    coeffs: np.ndarray

    @property
    def num_dofs(self):
        return self.kind.num_local_dofs

    def locate_piece(self, point, tol=1e-12):
        """Index of the piece containing ``point``; raises if outside."""
        point = np.asarray(point, dtype=float)
        for p, tri in enumerate(self.pieces):
            lam = barycentric(tri, point)
            if np.all(lam >= -tol):
                return p
        raise ValueError(f"point {tuple(point)} lies outside the triangle")

    def poly_table(self, piece, points, max_order=3):
        """Derivative table of the polynomial on ``piece``, valid at any point."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        xi = (points - self.center) / self.scale
        return physical_table(
            xi[None], self.coeffs[piece][None], np.array([self.scale]), self.kind.degree, max_order
        )[0]


def barycentric(tri, point):
    tri = np.asarray(tri, dtype=float)
    T = np.column_stack([tri[1] - tri[0], tri[2] - tri[0]])
    l12 = np.linalg.solve(T, np.asarray(point, dtype=float) - tri[0])
    return np.array([1.0 - l12.sum(), l12[0], l12[1]])


def build_physical_basis(vertices, kind, normals=None) -> PhysicalElementBasis:
    """Basis of a single triangle dual to its physical dofs."""
    kind = ElementKind.parse(kind)
    verts = np.asarray(vertices, dtype=float).reshape(1, 3, 2)
    if normals is None:
        normals = _outward_normals(verts)
    normals = np.asarray(normals, dtype=float).reshape(1, 3, 2)
    center, scale, pieces, coeffs = build_bases(verts, kind, normals)
    return PhysicalElementBasis(
        kind, verts[0], normals[0], center[0], float(scale[0]), pieces[0], coeffs[0]
    )


def eval_basis(basis: PhysicalElementBasis, point, max_order=3):
    """Values and derivatives of all local basis functions at ``point``.

    Returns an array of shape ``(nderiv, ndof)`` ordered as ``DERIVS``.
    """
    if not 0 <= max_order <= 3:
        raise ValueError("max_order must be between 0 and 3")
    piece = basis.locate_piece(point)
    return basis.poly_table(piece, point, max_order)[0]


def apply_functionals(basis: PhysicalElementBasis, func):
    """Apply every local dof functional to the function ``func``.

    ``func(piece, points)`` must return a derivative table of shape
    ``(npts, nderiv>=3, ...)``. Vertex dofs are read from the piece that
    contains the vertex; edge dofs from the piece containing the edge.
    """
    kind = basis.kind
    comps = 6 if kind is ElementKind.ARGYRIS5 else 3
    rows = []
    for v in range(3):
        piece = 0 if kind is ElementKind.ARGYRIS5 else v
        tab = func(piece, basis.vertices[v][None])[0]
        rows.extend(tab[c] for c in range(comps))
    for e in range(3):
        piece = 0 if kind is ElementKind.ARGYRIS5 else e
        mid = 0.5 * (basis.vertices[e] + basis.vertices[(e + 1) % 3])
        tab = func(piece, mid[None])[0]
        rows.append(basis.normals[e, 0] * tab[DX] + basis.normals[e, 1] * tab[DY])
    return np.array(rows)


def duality_matrix(basis: PhysicalElementBasis):
    """Matrix ``L_i(phi_j)``; the identity for a correct basis."""
    return apply_functionals(basis, lambda p, x: basis.poly_table(p, x, 2))


def c1_continuity_check(space, coeffs, points_per_edge=7, flip_edge=None):
    """Largest value and normal-derivative jumps of a global field.

    Interior mesh edges are sampled from both adjacent cells; for HCT the
    internal Alfeld edges of every macro triangle are checked too.
    ``flip_edge=(cell, local_edge)`` negates that cell's edge dof, which
    breaks conformity and serves as a negative control.

    Returns a dict with ``value_jump``, ``normal_jump`` and ``coeff_max``.
    """
    mesh = space.mesh
    coeffs = np.asarray(coeffs)
    local = coeffs[space.cell_dofs].astype(complex if np.iscomplexobj(coeffs) else float)
    if flip_edge is not None:
        cell, e = flip_edge
        local[cell, space.kind.num_local_dofs - 3 + e] *= -1
    t = (np.arange(points_per_edge) + 0.5) / points_per_edge
    nrm_all = mesh.edge_normals
    vj = 0.0
    nj = 0.0

    def field(cell, piece, pts):
        tab = space.cell_table(cell, piece, pts, 1)  # (q, 3, ndof)
        return tab @ local[cell]

    for e in np.flatnonzero(~mesh.is_boundary_edge):
        a, b = mesh.vertices[mesh.edges[e]]
        pts = a + t[:, None] * (b - a)
        nrm = nrm_all[e]
        vals = []
        for cell in mesh.edge_triangles[e]:
            j = int(np.flatnonzero(mesh.tri_edges[cell] == e)[0])
            piece = 0 if space.kind is ElementKind.ARGYRIS5 else j
            vals.append(field(cell, piece, pts))
        d = vals[0] - vals[1]
        vj = max(vj, np.abs(d[:, VAL]).max())
        nj = max(nj, np.abs(nrm[0] * d[:, DX] + nrm[1] * d[:, DY]).max())

    if space.kind is ElementKind.HCT3:
        for cell in range(mesh.num_triangles):
            pieces = space.pieces[cell]
            c = pieces[0, 2]
            for j in range(3):
                v = pieces[j, 0]
                pts = c + t[:, None] * (v - c)
                d = field(cell, (j - 1) % 3, pts) - field(cell, j, pts)
                tang = (v - c) / np.linalg.norm(v - c)
                nrm = np.array([tang[1], -tang[0]])
                vj = max(vj, np.abs(d[:, VAL]).max())
                nj = max(nj, np.abs(nrm[0] * d[:, DX] + nrm[1] * d[:, DY]).max())
    return {"value_jump": float(vj), "normal_jump": float(nj), "coeff_max": float(np.abs(coeffs).max())}
