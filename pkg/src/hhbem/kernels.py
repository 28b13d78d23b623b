"""Dense boundary operators by centroid collocation.

Densities are piecewise constant on triangles. With ``w`` the triangle
areas the discrete inner product is ``<f, g> = sum(w * f * g)``, and every
adjoint below is taken with respect to it.

Normalisation: ``omega = 4*pi`` (area of the unit sphere), so that

    S f(p)   = -1/omega * int f(q) / |p - q|
    K f(p)   =  1/omega * int <q - p, n(q)> / |q - p|^3 f(q)
    grad S f = tangential gradient of S f

with ``S 1 = -1`` on the unit sphere.

Tangential gradient
-------------------
``S f`` restricted to the polyhedral surface is continuous, and the face
average of its surface gradient only needs its values along the three
edges of the face (divergence theorem in the face plane)::

    avg_T grad(S f) = 1/|T| * sum_e |e| m_e * mean_e(S f)

with ``m_e`` the outward in-plane edge normal. This is the gradient of the
edge-midpoint (Crouzeix-Raviart) interpolant of ``S f``. Its range is
orthogonal to every rotated gradient of a continuous piecewise-linear
function, which keeps the discrete Hodge split free of spurious curl
content, and its rank is ``N``. Edge means are computed by Gauss-Legendre
quadrature of the analytic triangle integral.

The continuum operator annihilates the equilibrium density ``u = 1 - nu0``
(the null vector of ``1/2 - K*``). The assembled matrix is corrected by a
rank-one term so that ``grad u = 0`` holds exactly; ``||grad u|| / ||u||``
before the correction is kept as ``null_defect``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg

from . import _integrals
from .mesh import SurfaceMesh

__all__ = [
    "OMEGA3",
    "MAX_TRIANGLES",
    "KernelError",
    "OperatorSet",
    "assemble",
    "newton_integral",
    "dipole_integral",
    "equilibrium_direction",
    "save_operators",
    "load_operators",
]

OMEGA3 = 4.0 * np.pi
MAX_TRIANGLES = 50_000

# edge quadrature for the tangential gradient, by distance band in units of
# (edge length + triangle radius): near < 1.5 <= mid < 3 <= far
_NEAR = np.polynomial.legendre.leggauss(4)
_MID = np.polynomial.legendre.leggauss(4)
_FAR = np.polynomial.legendre.leggauss(2)
# degree-4 six-point triangle rule (Dunavant 1985), barycentric
_A1, _B1, _W1 = 0.445948490915965, 0.108103018168070, 0.223381589678011
_A2, _B2, _W2 = 0.091576213509771, 0.816847572980459, 0.109951743655322
_BARY = np.array(
    [[_B1, _A1, _A1], [_A1, _B1, _A1], [_A1, _A1, _B1],
     [_B2, _A2, _A2], [_A2, _B2, _A2], [_A2, _A2, _B2]]
)
_BARY_W = np.array([_W1] * 3 + [_W2] * 3)
EDGE_RULES = (_NEAR[0], _NEAR[1], 8, _MID[0], _MID[1], _FAR[0], _FAR[1], _BARY, _BARY_W, 1.5, 3.0)

MAGIC = b"HHBEM01\0"


class KernelError(ValueError):
    """Assembly failure (budget, non-finite entry, bad dump)."""


def _triangle(tri):
    tri = np.ascontiguousarray(tri, dtype=float)
    if tri.shape != (3, 3):
        raise KernelError("triangle must be a (3, 3) array of corners")
    cr = np.cross(tri[1] - tri[0], tri[2] - tri[0])
    area2 = np.linalg.norm(cr)
    scale = max(np.linalg.norm(tri[1] - tri[0]), np.linalg.norm(tri[2] - tri[0])) ** 2
    if area2 <= 1e-14 * scale:
        raise KernelError("degenerate triangle")
    return tri, cr / area2


def newton_integral(x, tri) -> float:
    """Integral of ``1/|x - q|`` over a flat triangle.

    Parameters
    ----------
    x : (3,) array
    tri : (3, 3) array
        Corner coordinates.

    Returns
    -------
    float
        Exact up to rounding for any ``x``, including points on the triangle.
    """
    tri, n = _triangle(tri)
    x = np.ascontiguousarray(x, dtype=float)
    return float(_integrals.newton_integral(x, tri[0], tri[1], tri[2], n))


def dipole_integral(x, tri) -> float:
    """Double layer kernel of a unit density, ``Omega_T(x) / 4pi``.

    The normal follows the corner order. Raises for ``x`` on the closed
    triangle, where the self term is not defined.
    """
    tri, _ = _triangle(tri)
    x = np.ascontiguousarray(x, dtype=float)
    size = max(np.linalg.norm(tri[k] - tri[(k + 1) % 3]) for k in range(3))
    d = _integrals.point_triangle_distance(x, tri[0], tri[1], tri[2])
    if d <= 1e-12 * size:
        raise KernelError("dipole_integral: point lies on the triangle")
    return float(_integrals.solid_angle(x, tri[0], tri[1], tri[2]) / OMEGA3)


def equilibrium_direction(kstar_apply, kstar_matrix, weights, tol=1e-10, max_iter=50, shift=1e-7):
    """Null vector ``u`` of ``1/2 - K*`` by shifted inverse iteration.

    Starts from the constant density and normalises to ``<u, 1> = |surface|``.

    Returns
    -------
    u : (N,) array
    history : list of float
        Relative residuals ``||(1/2 - K*) u|| / ||u||`` per iteration.
    converged : bool
    """
    n = len(weights)
    area = weights.sum()

    def wnorm(v):
        return np.sqrt(weights @ (v * v))

    lu = scipy.linalg.lu_factor(0.5 * np.eye(n) - kstar_matrix - shift * np.eye(n))
    u = np.ones(n)
    history = []
    for _ in range(max_iter):
        u = scipy.linalg.lu_solve(lu, u)
        u *= area / (weights @ u)
        res = wnorm(0.5 * u - kstar_apply(u)) / wnorm(u)
        history.append(float(res))
        if res <= tol:
            return u, history, True
    return u, history, False


@dataclass(eq=False)
class OperatorSet:
    """Assembled boundary operators of one mesh.

    Attributes
    ----------
    mesh : SurfaceMesh
    S, K : (N, N) arrays
    grad : (2N, N) array
        Tangential gradient of ``S``; row ``2i + k`` is the ``t_k``
        component on triangle ``i``.
    u : (N,) array
        Equilibrium density ``1 - nu0``.
    null_defect : float
        ``||grad u|| / ||u||`` before the rank-one correction.
    omega : float
    """

    mesh: SurfaceMesh
    S: np.ndarray
    K: np.ndarray
    grad: np.ndarray
    u: np.ndarray
    null_defect: float = float("nan")
    omega: float = OMEGA3
    nu0_history: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.mesh.n_triangles

    @property
    def weights(self) -> np.ndarray:
        return self.mesh.areas

    @property
    def nu0(self) -> np.ndarray:
        return 1.0 - self.u

    # -- matrix-free applications (last axis; a leading batch axis is allowed)

    def apply_K(self, f):
        return f @ self.K.T

    def apply_Kstar(self, g):
        w = self.weights
        return ((w * g) @ self.K) / w

    def apply_S(self, f):
        return f @ self.S.T

    def apply_grad(self, g) -> np.ndarray:
        """Density ``(..., N)`` -> tangent field ``(..., N, 2)``."""
        g = np.asarray(g)
        return (g @ self.grad.T).reshape(g.shape[:-1] + (-1, 2))

    def apply_grad_star(self, tau) -> np.ndarray:
        """Tangent field ``(..., N, 2)`` -> density, the mass adjoint of ``apply_grad``."""
        tau = np.asarray(tau)
        w = self.weights
        wt = (tau * w[:, None]).reshape(tau.shape[:-2] + (-1,))
        return (wt @ self.grad) / w

    def apply_grad_normal(self, g):
        """``grad* grad g`` through the cached normal matrix."""
        return g @ self.grad_normal.T

    # -- materialised adjoints ------------------------------------------------

    @cached_property
    def grad_normal(self) -> np.ndarray:
        """(N, N) matrix of ``grad* grad``, formed once for the Hodge solves."""
        w = self.weights
        return (self.grad.T * np.repeat(w, 2)[None, :]) @ self.grad / w[:, None]

    @cached_property
    def Kstar(self) -> np.ndarray:
        w = self.weights
        return self.K.T * w[None, :] / w[:, None]

    @cached_property
    def grad_star(self) -> np.ndarray:
        """(N, 2N) matrix of the mass adjoint of ``grad``."""
        w = self.weights
        return self.grad.T * np.repeat(w, 2)[None, :] / w[:, None]

    # -- cached special vectors -----------------------------------------------

    @cached_property
    def g1(self) -> np.ndarray:
        """``grad S 1`` as a tangent field."""
        g = self.apply_grad(np.ones(self.n))
        g.flags.writeable = False
        return g

    @cached_property
    def b1(self) -> np.ndarray:
        """``B_e* 1 = -n (1/2 - K*) 1 + grad S 1`` as a boundary field."""
        one = np.ones(self.n)
        b = -(0.5 * one - self.apply_Kstar(one))[:, None] * self.mesh.normals
        b = b + self.mesh.to_ambient(self.g1)
        b.flags.writeable = False
        return b

    # -- vertex route (cross-check only) --------------------------------------

    @cached_property
    def S_vert(self) -> np.ndarray:
        """(V, N) single layer evaluated at the mesh vertices."""
        m = self.mesh
        phi, _, _ = _integrals.point_matrices(
            np.ascontiguousarray(m.vertices),
            np.ascontiguousarray(m.corners),
            np.ascontiguousarray(m.normals),
            True,
            False,
            False,
        )
        return -phi / self.omega

    @cached_property
    def grad_vertex(self) -> np.ndarray:
        """(2N, N) gradient of the linear interpolant of ``S_vert``.

        Rank at most ``V - 1``; kept to cross-check ``grad`` on smooth data.
        """
        m = self.mesh
        n, v = m.n_triangles, m.n_vertices
        p1 = np.zeros((2 * n, v))
        c = m.corners
        nrm = m.normals
        fr = m.frames
        rows = np.arange(n)
        for k in range(3):
            opp = c[:, (k + 2) % 3] - c[:, (k + 1) % 3]
            gk = np.cross(nrm, opp) / (2.0 * m.areas[:, None])
            for a in range(2):
                np.add.at(p1, (2 * rows + a, m.triangles[:, k]), np.sum(gk * fr[:, a], axis=1))
        return p1 @ self.S_vert


def _gradient_matrix(mesh: SurfaceMesh) -> np.ndarray:
    edges = mesh.edges
    v = mesh.vertices
    corners = np.ascontiguousarray(mesh.corners)
    centroids = np.ascontiguousarray(mesh.centroids)
    radii = np.max(np.linalg.norm(mesh.corners - centroids[:, None, :], axis=2), axis=1)
    means = np.empty((len(edges), mesh.n_triangles))
    _integrals.edge_means(
        np.ascontiguousarray(v[edges[:, 0]]),
        np.ascontiguousarray(v[edges[:, 1]]),
        corners,
        np.ascontiguousarray(mesh.normals),
        np.ascontiguousarray(mesh.areas),
        centroids,
        radii,
        EDGE_RULES,
        means,
    )
    n = mesh.n_triangles
    grad = np.zeros((2 * n, n))
    fr = mesh.frames
    for k in range(3):
        d = mesh.corners[:, (k + 1) % 3] - mesh.corners[:, k]
        length = np.linalg.norm(d, axis=1)
        m_out = np.cross(d / length[:, None], mesh.normals)
        rows = means[mesh.triangle_edges[:, k]]
        for a in range(2):
            coef = length * np.sum(m_out * fr[:, a], axis=1) / mesh.areas
            grad[a::2] += coef[:, None] * rows
    # the mean of S f over an edge is -1/omega times the mean newton integral
    grad *= -1.0 / OMEGA3
    return grad


def _check_finite(name, a):
    bad = np.argwhere(~np.isfinite(a))
    if len(bad):
        i, j = bad[0]
        raise KernelError(f"non-finite entry in {name} at ({i}, {j})")


def assemble(mesh: SurfaceMesh, nu0_tol: float = 1e-13) -> OperatorSet:
    """Assemble ``S``, ``K`` and the tangential gradient of ``S``.

    ``K`` gets its diagonal from the closure ``K 1 = 1/2``. The equilibrium
    density is computed here since the gradient is aligned with it.
    """
    n = mesh.n_triangles
    if n > MAX_TRIANGLES:
        raise KernelError(f"{n} triangles exceed the dense budget of {MAX_TRIANGLES}")
    S = np.zeros((n, n))
    K = np.zeros((n, n))
    _integrals.collocation_rows(
        np.ascontiguousarray(mesh.centroids),
        np.ascontiguousarray(mesh.corners),
        np.ascontiguousarray(mesh.normals),
        0,
        n,
        S,
        K,
    )
    S *= -1.0 / OMEGA3
    K *= 1.0 / OMEGA3
    _check_finite("S", S)
    _check_finite("K", K)
    K[np.diag_indices(n)] = 0.5 - K.sum(axis=1)
    grad = _gradient_matrix(mesh)
    _check_finite("grad", grad)

    ops = OperatorSet(mesh, S, K, grad, np.ones(n))
    w = mesh.areas
    kstar = K.T * w[None, :] / w[:, None]
    u, history, ok = equilibrium_direction(ops.apply_Kstar, kstar, w, tol=nu0_tol)
    del kstar
    if not ok:
        raise KernelError(f"equilibrium density did not converge: residuals {history}")
    gu = grad @ u
    wu = w * u
    ops.null_defect = float(np.sqrt(np.repeat(w, 2) @ gu**2) / np.sqrt(wu @ u))
    ops.grad = grad - np.outer(gu, wu) / (wu @ u)
    ops.u = u
    ops.nu0_history = history
    return ops


# -- binary dump -------------------------------------------------------------


def save_operators(ops: OperatorSet, path) -> None:
    """Write the binary cache (layout in the README)."""
    n = ops.n
    blocks = [
        (b"AREA", ops.weights[None, :]),
        (b"SMAT", ops.S),
        (b"KMAT", ops.K),
        (b"GRAD", ops.grad),
        (b"EQUI", ops.u[None, :]),
        (b"NDEF", np.array([[ops.null_defect]])),
    ]
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<q", n))
        for code, a in blocks:
            a = np.ascontiguousarray(a, dtype="<f8")
            fh.write(code)
            fh.write(struct.pack("<qq", *a.shape))
            fh.write(a.tobytes())


def load_operators(path, mesh: SurfaceMesh) -> OperatorSet:
    """Read a binary cache written by :func:`save_operators` for ``mesh``."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != MAGIC:
        raise KernelError(f"{path}: bad magic")
    (n,) = struct.unpack_from("<q", data, 8)
    if n != mesh.n_triangles:
        raise KernelError(f"{path}: dump has {n} triangles, mesh has {mesh.n_triangles}")
    pos = 16
    blocks = {}
    while pos < len(data):
        code = data[pos : pos + 4]
        rows, cols = struct.unpack_from("<qq", data, pos + 4)
        pos += 20
        size = rows * cols * 8
        blocks[code] = np.frombuffer(data, "<f8", rows * cols, pos).reshape(rows, cols).copy()
        pos += size
    missing = {b"AREA", b"SMAT", b"KMAT", b"GRAD", b"EQUI"} - set(blocks)
    if missing:
        raise KernelError(f"{path}: missing blocks {sorted(c.decode() for c in missing)}")
    if not np.allclose(blocks[b"AREA"][0], mesh.areas, rtol=1e-12, atol=0):
        raise KernelError(f"{path}: areas do not match the mesh")
    ndef = float(blocks[b"NDEF"][0, 0]) if b"NDEF" in blocks else float("nan")
    return OperatorSet(
        mesh, blocks[b"SMAT"], blocks[b"KMAT"], blocks[b"GRAD"], blocks[b"EQUI"][0], ndef
    )
