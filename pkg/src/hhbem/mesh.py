"""Closed oriented triangle meshes and piecewise-constant boundary fields.

Fields live on triangles. Three array shapes are used throughout the
package:

* scalar density : ``(N,)``   one value per triangle
* tangent field  : ``(N, 2)`` components in the per-triangle frame ``(t1, t2)``
* boundary field : ``(N, 3)`` ambient vectors

``SurfaceMesh`` is immutable after construction.
"""

from __future__ import annotations

import hashlib
import io
import os
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.spatial import ConvexHull
from scipy.spatial.distance import pdist

__all__ = [
    "MeshError",
    "SurfaceMesh",
    "generate_mesh",
    "icosphere",
    "ellipsoid",
    "cube",
    "load_mesh",
    "save_mesh",
    "mesh_from_off_text",
    "mass_inner_product",
    "norm",
    "split_field",
    "combine",
    "save_field_csv",
    "load_field_csv",
]

MAX_REFINEMENT = 7
DEGENERATE_AREA_RATIO = 1e-12


class MeshError(ValueError):
    """Invalid mesh geometry, topology or parameters."""


@dataclass(frozen=True, eq=False)
class SurfaceMesh:
    """Closed, consistently oriented triangulated surface.

    Parameters
    ----------
    vertices : (V, 3) array
    triangles : (N, 3) int array
        Counter-clockwise when seen from outside.
    validate : bool
        Run the topology / orientation / degeneracy checks.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float)
        t = np.ascontiguousarray(self.triangles, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError(f"vertices must have shape (V, 3), got {v.shape}")
        if t.ndim != 2 or t.shape[1] != 3:
            raise MeshError(f"triangles must have shape (N, 3), got {t.shape}")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise MeshError("triangle vertex index out of range")
        if not np.all(np.isfinite(v)):
            raise MeshError("non-finite vertex coordinate")
        v.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        if self.validate:
            _check_closed_oriented(t)
            _check_nondegenerate(self.areas)
            if self.signed_volume <= 0:
                raise MeshError(
                    f"signed volume {self.signed_volume:.6g} <= 0: normals point inward"
                )

    # -- sizes -----------------------------------------------------------------

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def __len__(self):
        return self.n_triangles

    # -- per-triangle geometry -------------------------------------------------

    @cached_property
    def corners(self) -> np.ndarray:
        """(N, 3, 3) array of triangle corner coordinates."""
        c = self.vertices[self.triangles]
        c.flags.writeable = False
        return c

    @cached_property
    def _cross(self) -> np.ndarray:
        c = self.corners
        return np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])

    @cached_property
    def areas(self) -> np.ndarray:
        a = 0.5 * np.linalg.norm(self._cross, axis=1)
        a.flags.writeable = False
        return a

    @cached_property
    def normals(self) -> np.ndarray:
        """Unit outward normals."""
        n = self._cross / (2.0 * self.areas[:, None])
        n.flags.writeable = False
        return n

    @cached_property
    def centroids(self) -> np.ndarray:
        c = self.corners.mean(axis=1)
        c.flags.writeable = False
        return c

    @cached_property
    def frames(self) -> np.ndarray:
        """(N, 2, 3) orthonormal tangent pairs ``(t1, t2)``.

        ``t1`` is the first edge Gram-Schmidt'ed against the normal,
        ``t2 = n x t1``.
        """
        e = self.corners[:, 1] - self.corners[:, 0]
        n = self.normals
        e = e - np.sum(e * n, axis=1)[:, None] * n
        t1 = e / np.linalg.norm(e, axis=1)[:, None]
        t2 = np.cross(n, t1)
        fr = np.stack([t1, t2], axis=1)
        fr.flags.writeable = False
        return fr

    @property
    def total_area(self) -> float:
        return float(self.areas.sum())

    @cached_property
    def signed_volume(self) -> float:
        return float(np.sum(self.areas * np.sum(self.centroids * self.normals, axis=1)) / 3.0)

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        """Length of every undirected edge."""
        e = self.edges
        return np.linalg.norm(self.vertices[e[:, 1]] - self.vertices[e[:, 0]], axis=1)

    @cached_property
    def _edge_table(self):
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        uniq, inv = np.unique(np.sort(e, axis=1), axis=0, return_inverse=True)
        inv = inv.reshape(3, -1).T
        uniq.flags.writeable = False
        inv.flags.writeable = False
        return uniq, inv

    @property
    def edges(self) -> np.ndarray:
        """(E, 2) undirected edges, vertex pairs sorted."""
        return self._edge_table[0]

    @property
    def triangle_edges(self) -> np.ndarray:
        """(N, 3) edge index of local edge ``k`` (corner k to corner k+1)."""
        return self._edge_table[1]

    @property
    def mean_spacing(self) -> float:
        """Mean edge length, the mesh size ``h``."""
        return float(self.edge_lengths.mean())

    @cached_property
    def diameter(self) -> float:
        """Largest vertex-to-vertex distance."""
        v = self.vertices
        hull = v[ConvexHull(v).vertices]
        return float(pdist(hull).max())

    @cached_property
    def fingerprint(self) -> str:
        """SHA-256 of the canonical OFF serialisation."""
        return hashlib.sha256(off_text(self).encode("ascii")).hexdigest()

    # -- field conversions -----------------------------------------------------

    def to_ambient(self, tangent: np.ndarray) -> np.ndarray:
        """Frame coordinates ``(..., N, 2)`` -> ambient vectors ``(..., N, 3)``."""
        tangent = np.asarray(tangent, dtype=float)
        return np.einsum("...nk,nkd->...nd", tangent, self.frames)

    def to_frame(self, vectors: np.ndarray) -> np.ndarray:
        """Ambient vectors ``(..., N, 3)`` -> frame coordinates (drops the normal part)."""
        vectors = np.asarray(vectors, dtype=float)
        return np.einsum("...nd,nkd->...nk", vectors, self.frames)


# -- validation ----------------------------------------------------------------


def _check_closed_oriented(triangles):
    directed = Counter()
    for tri in triangles:
        a, b, c = (int(x) for x in tri)
        for e in ((a, b), (b, c), (c, a)):
            directed[e] += 1
    for (a, b), k in directed.items():
        if k > 1:
            raise MeshError(f"inconsistent orientation: directed edge ({a}, {b}) used {k} times")
    undirected = Counter()
    for a, b in directed:
        undirected[(min(a, b), max(a, b))] += 1
    for (a, b), k in undirected.items():
        if k == 1:
            raise MeshError(f"edge ({a}, {b}) shared by 1 triangle: surface is not closed")


def _check_nondegenerate(areas):
    if len(areas) == 0:
        raise MeshError("mesh has no triangles")
    tol = DEGENERATE_AREA_RATIO * areas.mean()
    bad = np.flatnonzero(areas <= tol)
    if bad.size:
        raise MeshError(f"degenerate triangle {int(bad[0])} with area {areas[bad[0]]:.3e}")


# -- generators ----------------------------------------------------------------


def _icosahedron():
    p = (1.0 + 5.0 ** 0.5) / 2.0
    v = np.array(
        [
            [-1, p, 0], [1, p, 0], [-1, -p, 0], [1, -p, 0],
            [0, -1, p], [0, 1, p], [0, -1, -p], [0, 1, -p],
            [p, 0, -1], [p, 0, 1], [-p, 0, -1], [-p, 0, 1],
        ],
        dtype=float,
    )
    v /= np.linalg.norm(v, axis=1)[:, None]
    t = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ],
        dtype=np.int64,
    )
    return v, t


def _subdivide(vertices, triangles, project=False):
    """Split every triangle into four through its edge midpoints."""
    verts = [tuple(x) for x in vertices]
    cache = {}

    def midpoint(a, b):
        key = (a, b) if a < b else (b, a)
        idx = cache.get(key)
        if idx is None:
            m = 0.5 * (np.asarray(verts[a]) + np.asarray(verts[b]))
            if project:
                m = m / np.linalg.norm(m)
            idx = len(verts)
            verts.append(tuple(m))
            cache[key] = idx
        return idx

    out = []
    for a, b, c in triangles:
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        out += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
    return np.array(verts, dtype=float), np.array(out, dtype=np.int64)


def _check_refinement(refinement):
    if isinstance(refinement, bool) or int(refinement) != refinement:
        raise MeshError(f"refinement must be an integer, got {refinement!r}")
    if not 0 <= refinement <= MAX_REFINEMENT:
        raise MeshError(f"refinement must be in [0, {MAX_REFINEMENT}], got {refinement}")
    return int(refinement)


def icosphere(refinement: int = 3) -> SurfaceMesh:
    """Subdivided icosahedron with all vertices on the unit sphere."""
    r = _check_refinement(refinement)
    v, t = _icosahedron()
    for _ in range(r):
        v, t = _subdivide(v, t, project=True)
    return SurfaceMesh(v, t)


def ellipsoid(axes=(1.0, 1.0, 1.5), refinement: int = 3) -> SurfaceMesh:
    """Icosphere stretched to the given semi-axes."""
    axes = np.asarray(axes, dtype=float)
    if axes.shape != (3,) or not np.all(axes > 0) or not np.all(np.isfinite(axes)):
        raise MeshError(f"ellipsoid semi-axes must be three positive numbers, got {axes.tolist()}")
    r = _check_refinement(refinement)
    v, t = _icosahedron()
    for _ in range(r):
        v, t = _subdivide(v, t, project=True)
    return SurfaceMesh(v * axes, t)


def cube(edge: float = 2.0, refinement: int = 1) -> SurfaceMesh:
    """Axis-aligned cube centred at the origin, two triangles per face at level 0."""
    edge = float(edge)
    if not (edge > 0 and np.isfinite(edge)):
        raise MeshError(f"cube edge must be positive, got {edge}")
    r = _check_refinement(refinement)
    v = np.array(
        [[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], dtype=float
    )
    # quads listed counter-clockwise from outside
    quads = [
        [0, 1, 3, 2],  # x = -1
        [4, 6, 7, 5],  # x = +1
        [0, 4, 5, 1],  # y = -1
        [2, 3, 7, 6],  # y = +1
        [0, 2, 6, 4],  # z = -1
        [1, 5, 7, 3],  # z = +1
    ]
    t = []
    for a, b, c, d in quads:
        t += [[a, b, c], [a, c, d]]
    t = np.array(t, dtype=np.int64)
    for _ in range(r):
        v, t = _subdivide(v, t)
    return SurfaceMesh(v * (edge / 2.0), t)


def generate_mesh(kind: str, params=None, refinement: int = 3) -> SurfaceMesh:
    """Build a test geometry.

    ``kind`` is ``icosphere`` (no parameters), ``ellipsoid`` (three
    semi-axes) or ``cube`` (edge length).
    """
    params = [] if params is None else list(np.atleast_1d(params))
    if kind == "icosphere":
        if params:
            raise MeshError("icosphere takes no shape parameters")
        return icosphere(refinement)
    if kind == "ellipsoid":
        if len(params) != 3:
            raise MeshError(f"ellipsoid needs 3 semi-axes, got {len(params)}")
        return ellipsoid(params, refinement)
    if kind == "cube":
        if len(params) > 1:
            raise MeshError(f"cube takes a single edge length, got {len(params)} values")
        return cube(params[0] if params else 2.0, refinement)
    raise MeshError(f"unknown mesh kind {kind!r} (expected icosphere, ellipsoid or cube)")


# -- OFF I/O -------------------------------------------------------------------


def off_text(mesh: SurfaceMesh) -> str:
    buf = io.StringIO()
    buf.write("OFF\n")
    buf.write(f"{mesh.n_vertices} {mesh.n_triangles} 0\n")
    for x, y, z in mesh.vertices:
        buf.write(f"{float(x)!r} {float(y)!r} {float(z)!r}\n")
    for a, b, c in mesh.triangles:
        buf.write(f"3 {a} {b} {c}\n")
    return buf.getvalue()


def save_mesh(mesh: SurfaceMesh, path) -> None:
    """Write ASCII OFF with round-trip exact coordinates."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write(off_text(mesh))


def mesh_from_off_text(text: str) -> SurfaceMesh:
    lines = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            lines.append(line)
    if not lines or not lines[0].startswith("OFF"):
        raise MeshError("not an OFF file: missing 'OFF' header")
    head = lines[0][3:].split()
    rest = lines[1:]
    if head:
        counts, body = head, rest
    else:
        if not rest:
            raise MeshError("OFF file truncated: no counts line")
        counts, body = rest[0].split(), rest[1:]
    try:
        nv, nf = int(counts[0]), int(counts[1])
    except (IndexError, ValueError):
        raise MeshError(f"malformed OFF counts line: {' '.join(counts)!r}") from None
    if len(body) < nv + nf:
        raise MeshError(f"OFF file truncated: expected {nv} vertices and {nf} faces")
    try:
        verts = np.array([[float(x) for x in body[i].split()[:3]] for i in range(nv)])
    except ValueError as exc:
        raise MeshError(f"malformed OFF vertex line: {exc}") from None
    faces = []
    for k in range(nf):
        items = body[nv + k].split()
        if not items or items[0] != "3" or len(items) < 4:
            raise MeshError(f"face {k} is not a triangle: {body[nv + k]!r}")
        faces.append([int(x) for x in items[1:4]])
    return SurfaceMesh(verts.reshape(nv, 3), np.array(faces, dtype=np.int64).reshape(nf, 3))


def load_mesh(path) -> SurfaceMesh:
    with open(path, encoding="ascii") as fh:
        return mesh_from_off_text(fh.read())


# -- fields --------------------------------------------------------------------


def _kind(mesh, f):
    f = np.asarray(f, dtype=float)
    n = mesh.n_triangles
    if f.shape == (n,):
        return "scalar", f
    if f.shape == (n, 2):
        return "tangent", f
    if f.shape == (n, 3):
        return "field", f
    raise MeshError(f"array of shape {f.shape} is not a field on a mesh with {n} triangles")


def mass_inner_product(mesh: SurfaceMesh, f, g) -> float:
    """Discrete L2 inner product: sum of area-weighted pointwise products."""
    kf, f = _kind(mesh, f)
    kg, g = _kind(mesh, g)
    if kf != kg:
        raise MeshError(f"cannot pair a {kf} with a {kg}")
    if kf == "scalar":
        return float(np.dot(mesh.areas, f * g))
    return float(np.dot(mesh.areas, np.sum(f * g, axis=1)))


def norm(mesh: SurfaceMesh, f) -> float:
    return float(np.sqrt(max(mass_inner_product(mesh, f, f), 0.0)))


def split_field(mesh: SurfaceMesh, f):
    """Return ``(f_eta, f_T)``, the normal density and the frame tangent part."""
    kind, f = _kind(mesh, f)
    if kind != "field":
        raise MeshError("split_field expects an (N, 3) boundary field")
    return np.sum(f * mesh.normals, axis=1), mesh.to_frame(f)


def combine(mesh: SurfaceMesh, f_eta, f_t) -> np.ndarray:
    """Inverse of :func:`split_field`."""
    k1, f_eta = _kind(mesh, f_eta)
    k2, f_t = _kind(mesh, f_t)
    if k1 != "scalar" or k2 != "tangent":
        raise MeshError("combine expects an (N,) density and an (N, 2) tangent field")
    return mesh.normals * f_eta[:, None] + mesh.to_ambient(f_t)


def save_field_csv(path, values) -> None:
    """``triangle_index,v0[,v1,v2]`` with 17 significant digits."""
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if values.ndim != 2 or values.shape[1] not in (1, 3):
        raise MeshError("CSV fields must be scalar densities or 3-component fields")
    header = "triangle_index," + ",".join(f"v{k}" for k in range(values.shape[1]))
    with open(path, "w", encoding="ascii", newline="") as fh:
        fh.write(header + "\n")
        for i, row in enumerate(values):
            fh.write(str(i) + "," + ",".join(f"{x:.17g}" for x in row) + "\n")


def load_field_csv(path, n_triangles=None) -> np.ndarray:
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    idx = data[:, 0].astype(np.int64)
    if not np.array_equal(idx, np.arange(len(idx))):
        raise MeshError(f"{path}: triangle_index column must be 0..N-1 in order")
    if n_triangles is not None and len(idx) != n_triangles:
        raise MeshError(f"{path}: {len(idx)} rows but mesh has {n_triangles} triangles")
    vals = data[:, 1:]
    if vals.shape[1] == 1:
        return vals[:, 0].copy()
    if vals.shape[1] == 3:
        return vals.copy()
    raise MeshError(f"{path}: expected 1 or 3 value columns, got {vals.shape[1]}")
