"""Orthogonal projections and skew splits of boundary fields.

Notation: ``G`` is the tangential gradient of ``S`` and ``G*`` its adjoint,
``R0`` removes the mean, ``g1 = G 1`` and ``b1 = B_e* 1``.

Tangent fields::

    P_S t = <t, g1> g1 / |g1|^2            (0 on a sphere)
    P_Z   = 1 - P_S
    A     = G (R0 G* G)^-1 R0 G*
    P_G   = P_S + P_Z A P_Z,   P_D = 1 - P_G

Boundary fields::

    P_-   = B_i* (B_i B_i*)^-1 B_i                           onto H-
    P_+   = P_t + P_t' B_e* (R0 B_e B_e*)^-1 R0 B_e P_t'     onto H+
    P_|   = 1 - P_D^ - P_-                                   onto I
    P_O   = 1 - P_D^ - P_+                                   onto O

with ``P_t f = <f, b1> b1 / |b1|^2``, ``P_t' = 1 - P_t`` and ``P_D^`` acting
on the tangent part only. The inverses are conjugate-gradient solves.

Every ``proj_*`` accepts a leading batch axis.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .kernels import OperatorSet
from .mesh import save_field_csv
from .operators import (
    BeBe_star_deflated,
    BiBi_star,
    SolverConfig,
    apply_Be,
    apply_Be_star,
    apply_Bi,
    apply_Bi_star,
    deflate,
    grad_normal_deflated,
    is_sphere_like,
    normal_part,
    solve_spd,
    tangent_part,
)

__all__ = [
    "MODES",
    "ConfigurationError",
    "DecompositionReport",
    "TangentPotential",
    "Decomposer",
    "gram_matrix",
    "write_report",
]

# relative size below which a component counts as zero
NEGLIGIBLE = 1e-6

MODES = ("inner-orthogonal", "outer-orthogonal", "hardy-hodge-skew", "silent-skew", "hodge-tangent")


class ConfigurationError(ValueError):
    """Inconsistent sphere-like setting."""


def _ip(w, a, b):
    """Area-weighted inner product over the trailing triangle axes."""
    if a.ndim >= 2 and a.shape[-1] in (2, 3) and a.shape[-2] == len(w):
        return np.sum(w[:, None] * a * b, axis=(-2, -1))
    return np.sum(w * a * b, axis=-1)


def _norm(w, a):
    return np.sqrt(np.maximum(_ip(w, a, a), 0.0))


def gram_matrix(weights, components):
    """Normalised Gram matrix; rows of zero components are left zero."""
    k = len(components)
    g = np.zeros((k, k))
    norms = [float(_norm(weights, c)) for c in components]
    for i in range(k):
        for j in range(k):
            if norms[i] > 0 and norms[j] > 0:
                g[i, j] = float(_ip(weights, components[i], components[j])) / (norms[i] * norms[j])
    return g


@dataclass
class TangentPotential:
    """``G(c + phi)`` with ``phi`` mean zero; ``residual`` is relative to the input."""

    c: np.ndarray
    phi: np.ndarray
    residual: np.ndarray


@dataclass
class DecompositionReport:
    """Components of a split and their diagnostics.

    Attributes
    ----------
    mode : str
    components : dict
        Name to ``(N, 3)`` boundary field (``(N, 2)`` tangent fields in
        ``hodge-tangent`` mode).
    gram : (k, k) array
        ``<c_i, c_j> / (|c_i| |c_j|)``.
    residual : float
        ``|f - sum(components)| / |f|``.
    solves : list of dict
    diagnostics : dict
    """

    mode: str
    components: dict
    gram: np.ndarray
    residual: float
    solves: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self, paths=None, fingerprint=None) -> dict:
        return {
            "mode": self.mode,
            "mesh_fingerprint": fingerprint,
            "components": {k: (paths or {}).get(k) for k in self.components},
            "gram": self.gram.tolist(),
            "residual": self.residual,
            "solves": self.solves,
            "diagnostics": self.diagnostics,
        }


def write_report(report: DecompositionReport, mesh, outdir, stem="component") -> str:
    """Write one CSV per component and ``report.json``; returns the JSON path."""
    os.makedirs(outdir, exist_ok=True)
    paths = {}
    for name, comp in report.components.items():
        arr = mesh.to_ambient(comp) if comp.shape[-1] == 2 else comp
        path = os.path.join(outdir, f"{stem}_{name}.csv")
        save_field_csv(path, arr)
        paths[name] = os.path.basename(path)
    out = os.path.join(outdir, "report.json")
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(paths, mesh.fingerprint), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out


class Decomposer:
    """Projections and splits for one operator set.

    Parameters
    ----------
    ops : OperatorSet
    cfg : SolverConfig, optional
    sphere_like : bool, optional
        Override of the sphere predicate. Forcing ``False`` when
        ``grad S 1`` vanishes is rejected.

    Attributes
    ----------
    log : list of SolveInfo
        Every solve, in call order.
    """

    def __init__(self, ops: OperatorSet, cfg: SolverConfig | None = None, sphere_like=None):
        self.ops = ops
        self.cfg = cfg or SolverConfig()
        self.w = ops.weights
        self.mesh = ops.mesh
        detected = is_sphere_like(ops)
        self.sphere_like = detected if sphere_like is None else bool(sphere_like)
        self.g1 = np.asarray(ops.g1)
        self.g1_sq = float(_ip(self.w, self.g1, self.g1))
        self.b1 = np.asarray(ops.b1)
        self.b1_sq = float(_ip(self.w, self.b1, self.b1))
        if not self.sphere_like and (self.g1_sq == 0.0 or self.b1_sq == 0.0):
            raise ConfigurationError("grad S 1 vanishes but the surface is treated as non-spherical")
        self.log = []

    # -- helpers ----------------------------------------------------------------

    def _solve(self, op, rhs, deflate_mean, name):
        x, info = solve_spd(op, rhs, self.w, self.cfg, deflate_mean=deflate_mean, name=name)
        self.log.append(info)
        return x

    def _ambient(self, tau):
        return self.mesh.to_ambient(tau)

    def _combine(self, fn, ft):
        return fn[..., None] * self.mesh.normals + self.mesh.to_ambient(ft)

    # -- tangent Hodge ----------------------------------------------------------

    def _PS(self, tau):
        if self.sphere_like:
            return np.zeros_like(tau)
        coef = _ip(self.w, tau, self.g1) / self.g1_sq
        return np.asarray(coef)[..., None, None] * self.g1

    def _A(self, tau):
        ops = self.ops
        rhs = deflate(self.w, ops.apply_grad_star(tau))
        psi = self._solve(grad_normal_deflated(ops), rhs, self.cfg.deflate_mean, "R0 G*G")
        return ops.apply_grad(psi)

    def proj_G(self, tau):
        """Projection of frame tangent fields onto gradients ``G(L2)``."""
        tau = np.asarray(tau, dtype=float)
        pz = tau - self._PS(tau)
        a = self._A(pz)
        return self._PS(tau) + a - self._PS(a)

    def proj_D(self, tau):
        """Projection onto divergence-free tangent fields (``G* P_D = 0``)."""
        tau = np.asarray(tau, dtype=float)
        return tau - self.proj_G(tau)

    def solve_tangent_potential(self, tau) -> TangentPotential:
        """``c, phi`` with ``G(c + phi) = P_G tau`` and mean-zero ``phi``.

        ``c = <tau, g1>/|g1|^2`` (zero on a sphere).
        """
        ops = self.ops
        tau = np.asarray(tau, dtype=float)
        if self.sphere_like:
            c = np.zeros(tau.shape[:-2])
        else:
            c = np.asarray(_ip(self.w, tau, self.g1) / self.g1_sq)
        rest = tau - c[..., None, None] * self.g1
        rhs = deflate(self.w, ops.apply_grad_star(rest))
        phi = self._solve(grad_normal_deflated(ops), rhs, self.cfg.deflate_mean, "R0 G*G")
        fit = ops.apply_grad(c[..., None] + phi)
        tn = _norm(self.w, tau)
        residual = np.where(tn > 0, _norm(self.w, fit - tau) / np.where(tn > 0, tn, 1.0), 0.0)
        return TangentPotential(c, phi, residual)

    # -- boundary field projections ---------------------------------------------

    def proj_Dhat(self, f):
        f = np.asarray(f, dtype=float)
        return self._ambient(self.proj_D(tangent_part(self.ops, f)))

    def proj_Dhat_perp(self, f):
        f = np.asarray(f, dtype=float)
        return f - self.proj_Dhat(f)

    def proj_minus(self, f):
        """Orthogonal projection onto ``H-`` (exterior Hardy traces)."""
        ops = self.ops
        f = np.asarray(f, dtype=float)
        g = self._solve(BiBi_star(ops), apply_Bi(ops, f), False, "Bi Bi*")
        return apply_Bi_star(ops, g)

    def _Pt(self, f):
        if self.sphere_like:
            return np.zeros_like(f)
        coef = _ip(self.w, f, self.b1) / self.b1_sq
        return np.asarray(coef)[..., None, None] * self.b1

    def proj_plus(self, f):
        """Orthogonal projection onto ``H+`` (interior Hardy traces)."""
        ops = self.ops
        f = np.asarray(f, dtype=float)
        pt = self._Pt(f)
        rest = f - pt
        rhs = deflate(self.w, apply_Be(ops, rest))
        g = self._solve(BeBe_star_deflated(ops), rhs, self.cfg.deflate_mean, "R0 Be Be*")
        h = apply_Be_star(ops, g)
        return pt + h - self._Pt(h)

    def proj_vert(self, f):
        """Projection onto ``I``: fields silent inside."""
        f = np.asarray(f, dtype=float)
        return f - self.proj_Dhat(f) - self.proj_minus(f)

    def proj_O(self, f):
        """Projection onto ``O``: fields silent outside."""
        f = np.asarray(f, dtype=float)
        return f - self.proj_Dhat(f) - self.proj_plus(f)

    # -- skew splits ------------------------------------------------------------

    def hardy_hodge_components(self, f):
        """``(h_plus, h_minus, d)`` with ``h_plus in H+``, ``h_minus in H-``."""
        ops = self.ops
        f = np.asarray(f, dtype=float)
        fn = normal_part(ops, f)
        ft = tangent_part(ops, f)
        tp = self.solve_tangent_potential(ft)
        phi = tp.c[..., None] + tp.phi
        kphi = ops.apply_Kstar(phi)
        h_plus = -apply_Be_star(ops, fn - (0.5 * phi + kphi))
        h_minus = apply_Bi_star(ops, fn + (0.5 * phi - kphi))
        d = self._ambient(ft - ops.apply_grad(phi))
        return h_plus, h_minus, d

    def silent_components(self, f):
        """``(i, o, d)``: silent inside, silent outside, divergence-free.

        Also returns the relative solvability defect ``<rhs, 1 - nu0>``,
        which vanishes in exact arithmetic.
        """
        ops = self.ops
        w = self.w
        f = np.asarray(f, dtype=float)
        fn = normal_part(ops, f)
        ft = tangent_part(ops, f)
        h_n = 0.5 * fn - ops.apply_K(fn) - ops.apply_grad_star(ft)
        rhs = -(0.5 * h_n + ops.apply_K(h_n))
        rn = _norm(w, rhs)
        un = float(_norm(w, ops.u))
        defect = np.where(rn > 0, np.abs(_ip(w, rhs, ops.u)) / (np.where(rn > 0, rn, 1.0) * un), 0.0)
        if self.sphere_like:
            c = np.zeros(fn.shape[:-1])
        else:
            c = np.asarray(np.sum(w * rhs, axis=-1) / self.g1_sq)
        g1_star = ops.apply_grad_star(self.g1)
        shifted = rhs - c[..., None] * g1_star
        phi = self._solve(
            grad_normal_deflated(ops), deflate(w, shifted), self.cfg.deflate_mean, "R0 G*G"
        )
        h = self._combine(h_n, ops.apply_grad(c[..., None] + phi))
        rest = f - h
        d = self.proj_Dhat(rest)
        o = rest - d
        return h, o, d, defect

    # -- reports ------------------------------------------------------------------

    def _report(self, mode, f, names, comps, diagnostics):
        fnorm = float(_norm(self.w, f))
        total = sum(comps)
        residual = float(_norm(self.w, f - total)) / fnorm if fnorm > 0 else float(_norm(self.w, total))
        return DecompositionReport(
            mode=mode,
            components=dict(zip(names, comps)),
            gram=gram_matrix(self.w, comps),
            residual=residual,
            solves=[s.as_dict() for s in self.log],
            diagnostics=diagnostics,
        )

    def _single(self, f, trailing):
        f = np.asarray(f, dtype=float)
        if f.shape != (self.ops.n, trailing):
            raise ValueError(f"expected an ({self.ops.n}, {trailing}) array, got {f.shape}")
        return f

    def decompose(self, f, mode: str) -> DecompositionReport:
        """Split one field according to ``mode`` (see ``MODES``)."""
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}; choose from {', '.join(MODES)}")
        self.log = []
        if mode == "hodge-tangent":
            tau = self._single(f, 2)
            g = self.proj_G(tau)
            d = tau - g
            diag = {"grad_star_of_d": self._rel(self.ops.apply_grad_star(d), tau)}
            return self._report(mode, tau, ["d", "g"], [d, g], diag)
        f = self._single(f, 3)
        ops = self.ops
        if mode == "inner-orthogonal":
            d = self.proj_Dhat(f)
            hm = self.proj_minus(f)
            i = f - d - hm
            diag = {"Bi_of_i": self._rel(apply_Bi(ops, i), f)}
            return self._report(mode, f, ["i", "h_minus", "d"], [i, hm, d], diag)
        if mode == "outer-orthogonal":
            d = self.proj_Dhat(f)
            hp = self.proj_plus(f)
            o = f - d - hp
            diag = {"Be_of_o": self._rel(apply_Be(ops, o), f)}
            return self._report(mode, f, ["h_plus", "o", "d"], [hp, o, d], diag)
        if mode == "hardy-hodge-skew":
            hp, hm, d = self.hardy_hodge_components(f)
            return self._report(mode, f, ["h_plus", "h_minus", "d"], [hp, hm, d], {})
        i, o, d, defect = self.silent_components(f)
        diag = {
            "Bi_of_i": self._rel(apply_Bi(ops, i), f),
            "Be_of_o": self._rel(apply_Be(ops, o), f),
            "solvability_defect": float(defect),
        }
        return self._report(mode, f, ["i", "o", "d"], [i, o, d], diag)

    def hardy_hodge_skew(self, f) -> DecompositionReport:
        return self.decompose(f, "hardy-hodge-skew")

    def silent_skew(self, f) -> DecompositionReport:
        return self.decompose(f, "silent-skew")

    def roundtrip(self, report: DecompositionReport) -> float:
        """Re-split every component of a skew or orthogonal report.

        Returns the largest ``|split(c) - (c in its own slot)| / |c|``.
        Components below ``NEGLIGIBLE`` times the norm of the split field are
        solver noise and are skipped.
        """
        worst = 0.0
        names = list(report.components)
        total = float(_norm(self.w, sum(report.components.values())))
        for slot, name in enumerate(names):
            c = report.components[name]
            cn = float(_norm(self.w, c))
            if cn <= NEGLIGIBLE * total:
                continue
            sub = self.decompose(c, report.mode)
            parts = list(sub.components.values())
            for k, part in enumerate(parts):
                target = c if k == slot else 0.0
                worst = max(worst, float(_norm(self.w, part - target)) / cn)
        return worst

    def _rel(self, a, f):
        fn = float(_norm(self.w, f))
        return float(_norm(self.w, a)) / fn if fn > 0 else 0.0
