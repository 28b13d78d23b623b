"""Seeded test fields from a splitmix64 stream.

The ``i``-th raw output (``i = 1, 2, ...``) of seed ``s`` is
``mix(s + i * 0x9E3779B97F4A7C15 mod 2**64)`` where::

    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    z =  z ^ (z >> 31)

Uniforms are ``(z >> 11) * 2**-53``. Normals use one Box-Muller cosine per
pair of uniforms ``(u1, u2)``: ``sqrt(-2 ln(1 - u1)) cos(2 pi u2)``.
"""

from __future__ import annotations

import itertools

import numpy as np

__all__ = ["splitmix64", "uniforms", "normals", "white_field", "white_density", "poly_field", "poly_density"]

GAMMA = np.uint64(0x9E3779B97F4A7C15)
M1 = np.uint64(0xBF58476D1CE4E5B9)
M2 = np.uint64(0x94D049BB133111EB)


def splitmix64(seed: int, count: int, start: int = 0) -> np.ndarray:
    """Raw outputs ``start + 1 .. start + count`` of the stream."""
    idx = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(seed % 2**64) + idx * GAMMA
        z = (z ^ (z >> np.uint64(30))) * M1
        z = (z ^ (z >> np.uint64(27))) * M2
    return z ^ (z >> np.uint64(31))


def uniforms(seed: int, count: int, start: int = 0) -> np.ndarray:
    return (splitmix64(seed, count, start) >> np.uint64(11)).astype(np.float64) * 2.0**-53


def normals(seed: int, count: int) -> np.ndarray:
    u = uniforms(seed, 2 * count).reshape(count, 2)
    return np.sqrt(-2.0 * np.log1p(-u[:, 0])) * np.cos(2.0 * np.pi * u[:, 1])


def white_field(mesh, seed: int) -> np.ndarray:
    """Independent standard normal per triangle and component, ``(N, 3)``."""
    return normals(seed, 3 * mesh.n_triangles).reshape(-1, 3)


def white_density(mesh, seed: int) -> np.ndarray:
    return normals(seed, mesh.n_triangles)


def _monomials(points, degree):
    cols = []
    for d in range(degree + 1):
        for idx in itertools.combinations_with_replacement(range(3), d):
            cols.append(np.prod(points[:, list(idx)], axis=1))
    return np.stack(cols, axis=1)


def poly_field(mesh, seed: int, degree: int = 2) -> np.ndarray:
    """Random vector polynomial of total degree ``degree`` at the centroids.

    Monomials are ordered by degree, then by sorted index tuple
    (``1, x, y, z, xx, xy, xz, yy, yz, zz`` for degree 2); the coefficient
    matrix is filled row by row from :func:`normals`.
    """
    basis = _monomials(mesh.centroids, degree)
    coef = normals(seed, 3 * basis.shape[1]).reshape(-1, 3)
    return basis @ coef


def poly_density(mesh, seed: int, degree: int = 2) -> np.ndarray:
    basis = _monomials(mesh.centroids, degree)
    return basis @ normals(seed, basis.shape[1])
