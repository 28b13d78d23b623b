"""Closed-form ground truth on the unit sphere.

Degree-``n`` spherical harmonics satisfy::

    S Y = -Y / (2n + 1)
    K Y =  Y / (2 (2n + 1))

and the gradient of the Newton kernel of a point source is a Hardy trace:
interior sources give ``H-`` members, exterior sources ``H+`` members.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _integrals
from .kernels import OperatorSet
from .mesh import SurfaceMesh

__all__ = [
    "OracleError",
    "HarmonicSample",
    "harmonic_sample",
    "eigenvalues",
    "sphere_eigencheck",
    "kernel_asymmetry",
    "PointSource",
    "point_source_field",
]

SPHERE_TOL = 1e-9


class OracleError(ValueError):
    """Oracle used outside its domain."""


@dataclass(frozen=True)
class HarmonicSample:
    """Degree-``n`` harmonic basis sampled at centroids, shape ``(k, N)``."""

    degree: int
    basis: np.ndarray


def eigenvalues(n: int):
    """``(S, K)`` eigenvalues of degree ``n`` on the unit sphere."""
    return -1.0 / (2 * n + 1), 1.0 / (2 * (2 * n + 1))


def harmonic_sample(mesh: SurfaceMesh, n: int) -> HarmonicSample:
    """1, the coordinates, or five traceless quadratics for ``n = 0, 1, 2``."""
    x = mesh.centroids
    if n == 0:
        basis = np.ones((1, len(x)))
    elif n == 1:
        basis = x.T.copy()
    elif n == 2:
        r2 = np.sum(x * x, axis=1)
        basis = np.stack(
            [
                x[:, 0] * x[:, 1],
                x[:, 0] * x[:, 2],
                x[:, 1] * x[:, 2],
                x[:, 0] ** 2 - r2 / 3.0,
                x[:, 1] ** 2 - r2 / 3.0,
            ]
        )
    else:
        raise OracleError(f"degree {n} not available (0, 1 or 2)")
    return HarmonicSample(n, basis)


def _require_unit_sphere(mesh):
    r = np.linalg.norm(mesh.vertices, axis=1)
    if np.max(np.abs(r - 1.0)) > SPHERE_TOL:
        raise OracleError("mesh vertices are not on the unit sphere")


def kernel_asymmetry(ops: OperatorSet) -> float:
    """``|K - K*| / |K|`` in the area-weighted Frobenius norm."""
    s = np.sqrt(ops.weights)
    k = ops.K * s[:, None] / s[None, :]
    return float(np.linalg.norm(k - k.T) / np.linalg.norm(k))


def sphere_eigencheck(ops: OperatorSet, n: int) -> dict:
    """Relative errors of the degree-``n`` eigenrelations.

    Returns
    -------
    dict
        ``s_error``, ``k_error`` (area-weighted, pooled over the basis) and
        ``asymmetry``.
    """
    _require_unit_sphere(ops.mesh)
    w = ops.weights
    ys = harmonic_sample(ops.mesh, n).basis
    ls, lk = eigenvalues(n)

    def pooled(got, want):
        return float(np.sqrt(np.sum(w * (got - want) ** 2) / np.sum(w * want**2)))

    return {
        "degree": n,
        "s_error": pooled(ops.apply_S(ys), ls * ys),
        "k_error": pooled(ops.apply_K(ys), lk * ys),
        "asymmetry": kernel_asymmetry(ops),
    }


@dataclass(frozen=True)
class PointSource:
    """Point-source trace ``-(q - x0)/|q - x0|^3`` at the centroids.

    ``hardy`` is ``"minus"`` for an interior source and ``"plus"`` for an
    exterior one.
    """

    source: np.ndarray
    field: np.ndarray
    hardy: str


def point_source_field(x0, mesh: SurfaceMesh) -> PointSource:
    """Hardy trace of a unit point source, away from the surface.

    Raises when ``x0`` is closer than ``0.2 * diameter`` to the surface.
    """
    x0 = np.asarray(x0, dtype=float).reshape(3)
    dist = _integrals.nearest_distances(x0[None, :], np.ascontiguousarray(mesh.corners))[0]
    if dist < 0.2 * mesh.diameter:
        raise OracleError(
            f"source at distance {dist:.3g} from the surface; need >= {0.2 * mesh.diameter:.3g}"
        )
    om = sum(
        _integrals.solid_angle(x0, c[0], c[1], c[2]) for c in np.ascontiguousarray(mesh.corners)
    )
    inside = om / (4.0 * np.pi) > 0.5
    d = mesh.centroids - x0
    f = -d / np.linalg.norm(d, axis=1)[:, None] ** 3
    return PointSource(x0, f, "minus" if inside else "plus")
