"""Triangulations of polygonal domains.

Edges carry a global orientation (lower vertex index first) so that
edge-based degrees of freedom mean the same thing from both sides.
Local edge ``j`` of a triangle joins its local vertices ``j`` and ``j+1``.
"""

from dataclasses import dataclass, field

import numpy as np

# side tags of the unit square generator
BOTTOM, RIGHT, TOP, LEFT = 0, 1, 2, 3
SIDE_NAMES = {BOTTOM: "bottom", RIGHT: "right", TOP: "top", LEFT: "left"}

LOCAL_EDGES = np.array([[0, 1], [1, 2], [2, 0]])


@dataclass(frozen=True, eq=False)
class TriMesh:
    """A conforming triangulation with global edge numbering.

    Attributes
    ----------
    vertices : (N, 2) float array
    triangles : (M, 3) int array, counterclockwise
    edges : (E, 2) int array, ``edges[e, 0] < edges[e, 1]``
    tri_edges : (M, 3) int array, global edge of local edge ``j``
    tri_edge_signs : (M, 3) int array, +1 when local edge ``j`` runs from
        the lower to the higher vertex index
    boundary_facets : (B,) int array of edge indices on the boundary
    facet_tags : (B,) int array, side label of each boundary facet (-1 if none)
    region_tags : (M,) int array
    """

    vertices: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray
    tri_edges: np.ndarray
    tri_edge_signs: np.ndarray
    boundary_facets: np.ndarray
    facet_tags: np.ndarray
    region_tags: np.ndarray
    edge_triangles: np.ndarray = field(repr=False)

    @property
    def num_vertices(self):
        return len(self.vertices)

    @property
    def num_triangles(self):
        return len(self.triangles)

    @property
    def num_edges(self):
        return len(self.edges)

    @property
    def areas(self):
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def circumdiameters(self):
        p = self.vertices[self.triangles]
        a = np.linalg.norm(p[:, 1] - p[:, 2], axis=1)
        b = np.linalg.norm(p[:, 2] - p[:, 0], axis=1)
        c = np.linalg.norm(p[:, 0] - p[:, 1], axis=1)
        return a * b * c / (2.0 * self.areas)

    @property
    def h(self):
        """Mesh size: the largest circumdiameter."""
        return float(self.circumdiameters.max())

    @property
    def edge_lengths(self):
        v = self.vertices[self.edges]
        return np.linalg.norm(v[:, 1] - v[:, 0], axis=1)

    @property
    def edge_normals(self):
        """Unit normal of every edge, pointing to the right of the oriented edge."""
        v = self.vertices[self.edges]
        t = v[:, 1] - v[:, 0]
        t = t / np.linalg.norm(t, axis=1)[:, None]
        return np.column_stack([t[:, 1], -t[:, 0]])

    @property
    def is_boundary_edge(self):
        mask = np.zeros(self.num_edges, dtype=bool)
        mask[self.boundary_facets] = True
        return mask

    @property
    def boundary_vertices(self):
        return np.unique(self.edges[self.boundary_facets])

    def facet_tag(self, facet):
        """Side tag of boundary edge ``facet``."""
        pos = np.searchsorted(self.boundary_facets, facet)
        if pos >= len(self.boundary_facets) or self.boundary_facets[pos] != facet:
            raise ValueError(f"edge {facet} is not a boundary facet")
        return int(self.facet_tags[pos])

    def with_region_tags(self, tags):
        tags = np.asarray(tags, dtype=int)
        if tags.shape != (self.num_triangles,):
            raise ValueError("need one region tag per triangle")
        return TriMesh(
            self.vertices,
            self.triangles,
            self.edges,
            self.tri_edges,
            self.tri_edge_signs,
            self.boundary_facets,
            self.facet_tags,
            tags,
            self.edge_triangles,
        )

    def check(self):
        """Raise ``ValueError`` if a structural invariant is violated."""
        if np.any(self.areas <= 0):
            raise ValueError("triangle with nonpositive signed area")
        counts = (self.edge_triangles >= 0).sum(axis=1)
        bnd = self.is_boundary_edge
        if np.any(counts[bnd] != 1) or np.any(counts[~bnd] != 2):
            raise ValueError("edge incidence is not manifold")
        if np.any(self.edges[:, 0] >= self.edges[:, 1]):
            raise ValueError("edge orientation rule violated")
        return self

    # plain text serialization -------------------------------------------------

    def to_text(self):
        lines = [f"vertices {self.num_vertices} / triangles {self.num_triangles}"]
        lines += [f"{x:.17g} {y:.17g}" for x, y in self.vertices]
        lines += [f"{a} {b} {c} {r}" for (a, b, c), r in zip(self.triangles, self.region_tags)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        rows = text.strip().splitlines()
        head = rows[0].split()
        nv, nt = int(head[1]), int(head[4])
        verts = np.array([[float(s) for s in r.split()] for r in rows[1 : 1 + nv]])
        tri = np.array([[int(s) for s in r.split()] for r in rows[1 + nv : 1 + nv + nt]])
        return from_triangles(verts, tri[:, :3], region_tags=tri[:, 3])


def _edge_topology(triangles):
    local = triangles[:, LOCAL_EDGES]  # (M, 3, 2)
    lo = local.min(axis=2)
    hi = local.max(axis=2)
    keys = np.stack([lo.ravel(), hi.ravel()], axis=1)
    edges, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    tri_edges = inverse.reshape(triangles.shape[0], 3)
    signs = np.where(local[:, :, 0] < local[:, :, 1], 1, -1)
    edge_tris = -np.ones((len(edges), 2), dtype=int)
    for t, row in enumerate(tri_edges):
        for e in row:
            slot = 0 if edge_tris[e, 0] < 0 else 1
            edge_tris[e, slot] = t
    return edges, tri_edges, signs, edge_tris


def from_triangles(vertices, triangles, region_tags=None, facet_tagger=None):
    """Build a :class:`TriMesh` from raw arrays.

    Triangles are reoriented counterclockwise. ``facet_tagger`` maps an
    ``(B, 2)`` array of boundary edge midpoints to integer side tags.
    """
    vertices = np.asarray(vertices, dtype=float)
    triangles = np.array(triangles, dtype=int)
    p = vertices[triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    cross = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    flip = cross < 0
    triangles[flip] = triangles[flip][:, [0, 2, 1]]
    edges, tri_edges, signs, edge_tris = _edge_topology(triangles)
    boundary = np.flatnonzero(edge_tris[:, 1] < 0)
    if facet_tagger is None:
        tags = -np.ones(len(boundary), dtype=int)
    else:
        mid = vertices[edges[boundary]].mean(axis=1)
        tags = np.asarray(facet_tagger(mid), dtype=int)
    if region_tags is None:
        region_tags = np.zeros(len(triangles), dtype=int)
    return TriMesh(
        vertices,
        triangles,
        edges,
        tri_edges,
        signs,
        boundary,
        tags,
        np.asarray(region_tags, dtype=int),
        edge_tris,
    )


def _square_side(mid, x0=0.0, x1=1.0, y0=0.0, y1=1.0, tol=1e-12):
    tags = -np.ones(len(mid), dtype=int)
    tags[np.abs(mid[:, 1] - y0) < tol] = BOTTOM
    tags[np.abs(mid[:, 0] - x1) < tol] = RIGHT
    tags[np.abs(mid[:, 1] - y1) < tol] = TOP
    tags[np.abs(mid[:, 0] - x0) < tol] = LEFT
    return tags


def build_rectangle_mesh(nx, ny=None, x0=0.0, x1=1.0, y0=0.0, y1=1.0):
    """Structured mesh of a rectangle: ``nx * ny`` cells, each cut along its
    lower-left to upper-right diagonal."""
    ny = nx if ny is None else ny
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    verts = np.column_stack([X.ravel(), Y.ravel()])
    j, i = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
    v00 = (j * (nx + 1) + i).ravel()
    v10 = v00 + 1
    v01 = v00 + nx + 1
    v11 = v01 + 1
    tris = np.concatenate(
        [np.column_stack([v00, v10, v11]), np.column_stack([v00, v11, v01])]
    )
    # interleave so that the two halves of a cell are adjacent in memory
    order = np.arange(2 * nx * ny).reshape(2, -1).T.ravel()
    return from_triangles(
        verts,
        tris[order],
        facet_tagger=lambda m: _square_side(m, x0, x1, y0, y1),
    ).check()


def build_unit_square_mesh(level: int) -> TriMesh:
    """Unit square with ``2**level`` cells per side."""
    if not (isinstance(level, (int, np.integer)) and 0 <= level <= 10):
        raise ValueError(f"level must be an integer in [0, 10], got {level!r}")
    return build_rectangle_mesh(2**level)


def refine_uniform(mesh: TriMesh) -> TriMesh:
    """Split each triangle into four through its edge midpoints."""
    nv = mesh.num_vertices
    mids = mesh.vertices[mesh.edges].mean(axis=1)
    verts = np.vstack([mesh.vertices, mids])
    t = mesh.triangles
    m = nv + mesh.tri_edges  # m[:, j] is the midpoint of local edge (j, j+1)
    children = np.stack(
        [
            np.column_stack([t[:, 0], m[:, 0], m[:, 2]]),
            np.column_stack([m[:, 0], t[:, 1], m[:, 1]]),
            np.column_stack([m[:, 2], m[:, 1], t[:, 2]]),
            np.column_stack([m[:, 0], m[:, 1], m[:, 2]]),
        ],
        axis=1,
    ).reshape(-1, 3)
    tags = np.repeat(mesh.region_tags, 4)

    # boundary facet tags are inherited from the parent edge
    parent_tag = dict(zip(mesh.boundary_facets.tolist(), mesh.facet_tags.tolist()))
    edge_mid_index = {}
    for e, (a, b) in enumerate(mesh.edges):
        edge_mid_index[(a, nv + e)] = e
        edge_mid_index[(b, nv + e)] = e

    fine = from_triangles(verts, children, region_tags=tags)
    ftags = np.array(
        [
            parent_tag.get(edge_mid_index.get((int(a), int(b)), -1), -1)
            for a, b in fine.edges[fine.boundary_facets]
        ],
        dtype=int,
    )
    return TriMesh(
        fine.vertices,
        fine.triangles,
        fine.edges,
        fine.tri_edges,
        fine.tri_edge_signs,
        fine.boundary_facets,
        ftags,
        fine.region_tags,
        fine.edge_triangles,
    )


def alfeld_split(mesh: TriMesh):
    """Split every triangle at its barycenter into three.

    Returns the split mesh and an array mapping each subtriangle to its
    parent. Subtriangle ``3*t + j`` is ``(v_j, v_{j+1}, c)`` and therefore
    contains local edge ``j`` of the parent.
    """
    nv = mesh.num_vertices
    t = mesh.triangles
    centers = mesh.vertices[t].mean(axis=1)
    verts = np.vstack([mesh.vertices, centers])
    c = nv + np.arange(mesh.num_triangles)
    sub = np.stack(
        [np.column_stack([t[:, j], t[:, (j + 1) % 3], c]) for j in range(3)], axis=1
    ).reshape(-1, 3)
    parent = np.repeat(np.arange(mesh.num_triangles), 3)
    fine = from_triangles(verts, sub, region_tags=mesh.region_tags[parent])
    # boundary edges are unchanged by the split, so tags carry over by vertex pair
    tag_of = {
        tuple(mesh.edges[e]): tag for e, tag in zip(mesh.boundary_facets, mesh.facet_tags)
    }
    ftags = np.array([tag_of.get(tuple(e), -1) for e in fine.edges[fine.boundary_facets]])
    split = TriMesh(
        fine.vertices,
        fine.triangles,
        fine.edges,
        fine.tri_edges,
        fine.tri_edge_signs,
        fine.boundary_facets,
        ftags,
        fine.region_tags,
        fine.edge_triangles,
    )
    return split, parent


def boundary_normal(mesh: TriMesh, facet: int) -> np.ndarray:
    """Outward unit normal of boundary edge ``facet``."""
    if not mesh.is_boundary_edge[facet]:
        raise ValueError(f"edge {facet} is not on the boundary")
    return outward_normals(mesh, np.array([facet]))[0]


def outward_normals(mesh, facets):
    """Outward unit normals for an array of boundary edges."""
    facets = np.asarray(facets)
    nrm = mesh.edge_normals[facets]
    tri = mesh.edge_triangles[facets, 0]
    bary = mesh.vertices[mesh.triangles[tri]].mean(axis=1)
    mid = mesh.vertices[mesh.edges[facets]].mean(axis=1)
    s = np.sign(np.einsum("ij,ij->i", nrm, mid - bary))
    return nrm * s[:, None]
