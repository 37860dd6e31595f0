"""Field sampling, VTU output, manifests and config files."""

import configparser
import csv
import hashlib
import os
from xml.sax.saxutils import quoteattr

import numpy as np

from hkfem.mesh import refine_uniform
from hkfem.space import FeFunction


def sample_grid(fn: FeFunction, m, bounds=None):
    """Evaluate ``fn`` on an ``m x m`` tensor grid covering the mesh bounding box.

    Returns ``(X, Y, U)`` with ``U[i, j] = u(X[i, j], Y[i, j])``; rows run
    along y.
    """
    if m < 2:
        raise ValueError("sampling resolution must be at least 2")
    mesh = fn.space.mesh
    if bounds is None:
        lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    else:
        lo, hi = np.asarray(bounds[0]), np.asarray(bounds[1])
    x = np.linspace(lo[0], hi[0], m)
    y = np.linspace(lo[1], hi[1], m)
    X, Y = np.meshgrid(x, y)
    U = fn.evaluate(np.column_stack([X.ravel(), Y.ravel()]), 0)[0].reshape(X.shape)
    return X, Y, U


def write_samples_csv(path, X, Y, U):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "Re(u)", "Im(u)", "|u|"])
        for x, y, u in zip(X.ravel(), Y.ravel(), np.asarray(U, dtype=complex).ravel()):
            w.writerow([f"{x:.10g}", f"{y:.10g}", f"{u.real:.12g}", f"{u.imag:.12g}", f"{abs(u):.12g}"])


def write_vtu(path, points, cells, values, extra=None):
    """Write a triangle mesh with complex point data as ascii VTK XML.

    Point arrays ``re``, ``im`` and ``abs`` are written; ``extra`` maps
    names to further real point arrays (scalars or 2/3-vectors).
    """
    points = np.asarray(points, dtype=float)
    cells = np.asarray(cells, dtype=np.int64)
    values = np.asarray(values, dtype=complex)
    npts, ncell = len(points), len(cells)
    if values.shape != (npts,):
        raise ValueError("one value per point expected")
    pts3 = np.column_stack([points, np.zeros(npts)]) if points.shape[1] == 2 else points

    def arr(name, data, ncomp=1):
        body = " ".join(f"{v:.12g}" for v in np.ravel(data))
        return (
            f'        <DataArray type="Float64" Name={quoteattr(name)} '
            f'NumberOfComponents="{ncomp}" format="ascii">{body}</DataArray>\n'
        )

    out = [
        '<?xml version="1.0"?>\n',
        '<VTKFile type="UnstructuredGrid" version="0.1" byte_order="LittleEndian">\n',
        "  <UnstructuredGrid>\n",
        f'    <Piece NumberOfPoints="{npts}" NumberOfCells="{ncell}">\n',
        "      <PointData>\n",
        arr("re", values.real),
        arr("im", values.imag),
        arr("abs", np.abs(values)),
    ]
    for name, data in (extra or {}).items():
        data = np.asarray(data, dtype=float)
        if data.ndim == 2 and data.shape[1] == 2:
            data = np.column_stack([data, np.zeros(len(data))])
        out.append(arr(name, data, 1 if data.ndim == 1 else data.shape[1]))
    out += [
        "      </PointData>\n",
        "      <Points>\n",
        arr("Points", pts3, 3),
        "      </Points>\n",
        "      <Cells>\n",
        '        <DataArray type="Int64" Name="connectivity" format="ascii">'
        + " ".join(map(str, cells.ravel()))
        + "</DataArray>\n",
        '        <DataArray type="Int64" Name="offsets" format="ascii">'
        + " ".join(map(str, 3 * np.arange(1, ncell + 1)))
        + "</DataArray>\n",
        '        <DataArray type="UInt8" Name="types" format="ascii">'
        + " ".join(["5"] * ncell)
        + "</DataArray>\n",
        "      </Cells>\n",
        "    </Piece>\n",
        "  </UnstructuredGrid>\n",
        "</VTKFile>\n",
    ]
    with open(path, "w") as fh:
        fh.writelines(out)


def write_field_vtu(fn: FeFunction, path, splits=1, extra=None):
    """Evaluate ``fn`` on the ``splits``-times refined mesh and write it as VTU.

    ``extra`` maps names to callables of the (n, 2) point array.
    """
    vis = fn.space.mesh
    for _ in range(splits):
        vis = refine_uniform(vis)
    values = fn.evaluate(vis.vertices, 0)[0]
    data = {name: f(vis.vertices) for name, f in (extra or {}).items()}
    write_vtu(path, vis.vertices, vis.triangles, values, data)
    return vis


def git_blob_hash(path):
    """Content hash in git's blob format (sha1 over ``blob <len>\\0<data>``)."""
    with open(path, "rb") as fh:
        data = fh.read()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def write_manifest(path, entries, outputs=()):
    """Write ``key = value`` lines followed by one hash line per output file."""
    with open(path, "w") as fh:
        for key, value in entries.items():
            fh.write(f"{key} = {value}\n")
        for p in outputs:
            fh.write(f"output.{os.path.basename(p)} = {git_blob_hash(p)}\n")


def read_config_file(path):
    """Flat ``key = value`` file as a dict of strings (``#`` starts a comment)."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    with open(path) as fh:
        parser.read_string("[run]\n" + fh.read(), source=str(path))
    return {k.replace("-", "_"): v for k, v in parser["run"].items()}
