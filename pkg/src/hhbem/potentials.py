"""Layer potentials off the surface, silence scores and jump checks.

For a density ``g`` and a boundary field ``f``::

    S g(x)      = -1/4pi sum_j g_j int_Tj 1/|x - q|
    grad S g(x) =  1/4pi sum_j g_j int_Tj (x - q)/|x - q|^3
    D g(x)      =  1/4pi sum_j g_j Omega_j(x)
    P f(x)      =  1/4pi sum_j int_Tj <q - x, f_j>/|q - x|^3

All triangle integrals are analytic, so points close to the surface are
fine. ``P(n g) = D g``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import _integrals
from .kernels import OMEGA3, OperatorSet
from .mesh import SurfaceMesh

__all__ = [
    "ProbeError",
    "ProbeSet",
    "fibonacci_sphere",
    "sphere_probes",
    "offset_probes",
    "load_probes",
    "save_probes",
    "eval_potentials",
    "silence_score",
    "jump_check",
]

TAGS = ("interior", "exterior")
CHUNK = 256


class ProbeError(ValueError):
    """Invalid probe set."""


def _raw(mesh: SurfaceMesh, points, phi=False, omega=False, grad=False):
    points = np.ascontiguousarray(points, dtype=float).reshape(-1, 3)
    corners = np.ascontiguousarray(mesh.corners)
    normals = np.ascontiguousarray(mesh.normals)
    out_phi, out_om, out_grad = [], [], []
    for s in range(0, len(points), CHUNK):
        p, o, g = _integrals.point_matrices(points[s : s + CHUNK], corners, normals, phi, omega, grad)
        out_phi.append(p)
        out_om.append(o)
        out_grad.append(g)
    return np.concatenate(out_phi), np.concatenate(out_om), np.concatenate(out_grad)


def _inside(mesh, points):
    _, om, _ = _raw(mesh, points, omega=True)
    return om.sum(axis=1) / OMEGA3 > 0.5


@dataclass(frozen=True, eq=False)
class ProbeSet:
    """Evaluation points off the surface.

    Use :meth:`build`; it measures distances and checks every tag against
    the solid-angle inside test.

    Attributes
    ----------
    points : (P, 3) array
    tags : (P,) array of str
        ``"interior"`` or ``"exterior"``.
    distances : (P,) array
        Distance to the nearest triangle.
    min_offset : float
    """

    points: np.ndarray
    tags: np.ndarray
    distances: np.ndarray
    min_offset: float

    @classmethod
    def build(cls, mesh: SurfaceMesh, points, tags, min_offset: float = 0.0) -> "ProbeSet":
        points = np.ascontiguousarray(points, dtype=float).reshape(-1, 3)
        tags = np.asarray(tags, dtype=object)
        if tags.ndim == 0:
            tags = np.full(len(points), tags, dtype=object)
        if len(tags) != len(points):
            raise ProbeError(f"{len(points)} points but {len(tags)} tags")
        bad = [t for t in set(tags) if t not in TAGS]
        if bad:
            raise ProbeError(f"unknown probe tags {bad}")
        dist = _integrals.nearest_distances(points, np.ascontiguousarray(mesh.corners))
        floor = max(min_offset, 1e-12 * mesh.mean_spacing)
        close = np.flatnonzero(dist < floor)
        if len(close):
            i = close[0]
            raise ProbeError(
                f"probe {i} at distance {dist[i]:.3e} is below the minimum offset {floor:.3e}"
            )
        inside = _inside(mesh, points)
        wrong = np.flatnonzero(inside != (tags == "interior"))
        if len(wrong):
            i = wrong[0]
            raise ProbeError(f"probe {i} tagged {tags[i]} but lies on the other side")
        return cls(points, tags, dist, float(min_offset))

    def __len__(self):
        return len(self.points)

    def select(self, side: str) -> "ProbeSet":
        keep = self.tags == side
        return ProbeSet(self.points[keep], self.tags[keep], self.distances[keep], self.min_offset)


def fibonacci_sphere(n: int, radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> np.ndarray:
    """``n`` quasi-uniform points on a sphere."""
    k = np.arange(n) + 0.5
    z = 1.0 - 2.0 * k / n
    r = np.sqrt(1.0 - z * z)
    phi = np.pi * (1.0 + np.sqrt(5.0)) * k
    pts = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    return radius * pts + np.asarray(center, dtype=float)


def sphere_probes(mesh, n, radius, tag, min_offset=0.0, center=(0.0, 0.0, 0.0)) -> ProbeSet:
    return ProbeSet.build(mesh, fibonacci_sphere(n, radius, center), tag, min_offset)


def offset_probes(mesh: SurfaceMesh, eps: float, side: str) -> ProbeSet:
    """Centroids moved by ``eps`` along the normal, inwards or outwards."""
    sign = -1.0 if side == "interior" else 1.0
    pts = mesh.centroids + sign * eps * mesh.normals
    return ProbeSet.build(mesh, pts, side, 0.0)


def save_probes(path, probes: ProbeSet) -> None:
    with open(path, "w", encoding="ascii", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["x", "y", "z", "tag"])
        for p, t in zip(probes.points, probes.tags):
            wr.writerow([f"{p[0]:.17g}", f"{p[1]:.17g}", f"{p[2]:.17g}", t])


def load_probes(path, mesh: SurfaceMesh, min_offset: float = 0.0) -> ProbeSet:
    """Read ``x,y,z,tag`` rows."""
    with open(path, encoding="ascii", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["x", "y", "z", "tag"]:
        raise ProbeError(f"{path}: header must be x,y,z,tag")
    pts = np.array([[float(v) for v in r[:3]] for r in rows[1:]]).reshape(-1, 3)
    tags = [r[3].strip() for r in rows[1:]]
    return ProbeSet.build(mesh, pts, tags, min_offset)


def eval_potentials(mesh: SurfaceMesh, probes: ProbeSet, g=None, f=None) -> dict:
    """Potentials at the probes.

    Parameters
    ----------
    g : (N,) density, optional
        Gives ``"single"``, ``"grad_single"`` (P, 3) and ``"double"``.
    f : (N, 3) boundary field, optional
        Gives ``"scalar"``. A leading batch axis is allowed.
    """
    if g is None and f is None:
        raise ValueError("nothing to evaluate: pass g and/or f")
    pts = probes.points if isinstance(probes, ProbeSet) else None
    if pts is None:
        raise ProbeError("eval_potentials needs a ProbeSet")
    phi, om, grad = _raw(mesh, pts, phi=g is not None, omega=g is not None, grad=True)
    out = {}
    if g is not None:
        g = np.asarray(g, dtype=float)
        out["single"] = -phi @ g / OMEGA3
        out["double"] = om @ g / OMEGA3
        out["grad_single"] = np.einsum("pjd,j->pd", grad, g) / OMEGA3
    if f is not None:
        f = np.asarray(f, dtype=float)
        out["scalar"] = -np.einsum("pjd,...jd->...p", grad, f) / OMEGA3
    return out


def silence_score(mesh: SurfaceMesh, f, probes: ProbeSet, side: str):
    """``max |P f(p)|`` over the probes of ``side``, over ``|f| / sqrt(area)``.

    Probes must keep at least a tenth of the mesh spacing from the surface.
    A batch of fields gives an array of scores.
    """
    if side not in TAGS:
        raise ProbeError(f"side must be one of {TAGS}")
    sel = probes.select(side)
    if len(sel) == 0:
        raise ProbeError(f"no {side} probes")
    floor = 0.1 * mesh.mean_spacing
    if sel.distances.min() < floor:
        raise ProbeError(
            f"{side} probe within {sel.distances.min():.3e} of the surface; need >= {floor:.3e}"
        )
    f = np.asarray(f, dtype=float)
    w = mesh.areas
    fnorm = np.sqrt(np.sum(w[:, None] * f * f, axis=(-2, -1)))
    vals = eval_potentials(mesh, sel, f=f)["scalar"]
    scale = np.where(fnorm > 0, fnorm, 1.0) / np.sqrt(w.sum())
    score = np.where(fnorm > 0, np.max(np.abs(vals), axis=-1) / scale, 0.0)
    return float(score) if score.ndim == 0 else score


def jump_check(ops: OperatorSet, g, offsets) -> list:
    """Compare potentials at ``q -+ eps n`` with the four boundary limits.

    For each offset returns relative area-weighted errors (absolute when
    the target is zero up to rounding)

    * ``double_interior``       D g inside vs (1/2 + K) g
    * ``double_exterior``       D g outside vs -(1/2 - K) g
    * ``normal_grad_interior``  n . grad S g inside vs -(1/2 - K*) g
    * ``normal_grad_exterior``  n . grad S g outside vs (1/2 + K*) g
    * ``grad_exterior``         grad S g outside vs B_i* g (full vector)
    """
    mesh = ops.mesh
    h = mesh.mean_spacing
    g = np.asarray(g, dtype=float)
    w = mesh.areas
    n = mesh.normals
    kg = ops.apply_K(g)
    ksg = ops.apply_Kstar(g)
    targets = {
        "double_interior": 0.5 * g + kg,
        "double_exterior": -(0.5 * g - kg),
        "normal_grad_interior": -(0.5 * g - ksg),
        "normal_grad_exterior": 0.5 * g + ksg,
    }
    bi_star = (0.5 * g + ksg)[:, None] * n + mesh.to_ambient(ops.apply_grad(g))

    # targets that vanish up to rounding are compared in absolute terms
    floor = 1e-12 * np.sqrt(w @ g**2)

    def rel(a, b):
        wa = w if a.ndim == 1 else w[:, None]
        num = np.sqrt(np.sum(wa * (a - b) ** 2))
        den = np.sqrt(np.sum(wa * b * b))
        return float(num / den) if den > floor else float(num)

    report = []
    for eps in offsets:
        if not (0.0 < eps <= h):
            raise ValueError(f"offset {eps} outside (0, h = {h:.4g}]")
        row = {"offset": float(eps), "offset_over_h": float(eps / h)}
        for side, sign in (("interior", -1.0), ("exterior", 1.0)):
            pts = mesh.centroids + sign * eps * n
            _, om, grad = _raw(mesh, pts, omega=True, grad=True)
            dg = om @ g / OMEGA3
            gs = np.einsum("pjd,j->pd", grad, g) / OMEGA3
            row[f"double_{side}"] = rel(dg, targets[f"double_{side}"])
            row[f"normal_grad_{side}"] = rel(np.sum(gs * n, axis=1), targets[f"normal_grad_{side}"])
            if side == "exterior":
                row["grad_exterior"] = rel(gs, bi_star)
        report.append(row)
    return report
