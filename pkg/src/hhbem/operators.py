"""Boundary operators B_i, B_e, their adjoints, and the coercive solves.

For a boundary field ``f = n f_n + f_T``::

    B_i f = (1/2 + K) f_n + grad* f_T
    B_e f = -(1/2 - K) f_n + grad* f_T

    B_i* g = n (1/2 + K*) g + grad g
    B_e* g = -n (1/2 - K*) g + grad g

where ``grad`` is the tangential gradient of ``S``. Every function accepts a
leading batch axis (``(k, N, 3)`` fields, ``(k, N)`` densities).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .kernels import OperatorSet, equilibrium_direction

__all__ = [
    "SolverConfig",
    "SolverError",
    "MeanDefectWarning",
    "SolveInfo",
    "EquilibriumData",
    "SPHERE_LIKE_RATIO",
    "compute_nu0",
    "is_sphere_like",
    "normal_part",
    "tangent_part",
    "apply_Bi",
    "apply_Be",
    "apply_Bi_star",
    "apply_Be_star",
    "deflate",
    "solve_spd",
    "solve_half_plus_K",
    "BiBi_star",
    "BeBe_star_deflated",
    "grad_normal_deflated",
]

# ||grad S 1|| <= ratio * ||1|| counts as a sphere
SPHERE_LIKE_RATIO = 1e-6


class SolverError(RuntimeError):
    """Iterative solve did not reach its tolerance."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


class MeanDefectWarning(UserWarning):
    """A deflated right-hand side had a non-zero mean that was discarded."""


@dataclass(frozen=True)
class SolverConfig:
    """Iteration controls.

    Parameters
    ----------
    tol : float
        Relative residual target, in ``(0, 1e-4]``.
    max_iter : int or None
        Iteration cap; ``None`` means ``10 N``.
    deflate_mean : bool
        Project right-hand sides and iterates onto mean-zero densities in
        the solves that live there.
    """

    tol: float = 1e-10
    max_iter: int | None = None
    deflate_mean: bool = True

    def __post_init__(self):
        if not (0.0 < self.tol <= 1e-4):
            raise ValueError(f"tolerance {self.tol} outside (0, 1e-4]")
        if self.max_iter is not None and self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")

    def iterations(self, n: int) -> int:
        return self.max_iter if self.max_iter is not None else 10 * n


@dataclass
class SolveInfo:
    """Diagnostics of one (possibly batched) solve."""

    name: str
    iterations: int
    residual: float
    history: list = field(default_factory=list)
    discarded_mean: float = 0.0

    def as_dict(self):
        return {
            "name": self.name,
            "iterations": self.iterations,
            "residual": self.residual,
            "discarded_mean": self.discarded_mean,
        }


@dataclass
class EquilibriumData:
    """Equilibrium density and its certificates.

    Attributes
    ----------
    nu0 : (N,) array
        Mean zero; ``1 - nu0`` is the equilibrium density.
    s_constant : float
        Mean value of ``S(1 - nu0)``.
    s_spread : float
        ``max |S(1 - nu0) - s_constant| / |s_constant|``.
    residual : float
        ``||(1/2 - K*)(1 - nu0)|| / ||1 - nu0||``.
    grad_residual : float
        ``||grad(1 - nu0)|| / ||1 - nu0||`` before the exact alignment.
    sphere_like : bool
    g1_ratio : float
        ``||grad S 1|| / ||1||``.
    """

    nu0: np.ndarray
    s_constant: float
    s_spread: float
    residual: float
    grad_residual: float
    sphere_like: bool
    g1_ratio: float
    history: list = field(default_factory=list)

    def summary(self, weights) -> dict:
        area = float(weights.sum())
        return {
            "nu0_relative_norm": float(np.sqrt(weights @ self.nu0**2 / area)),
            "nu0_max": float(self.nu0.max()),
            "nu0_mean": float(weights @ self.nu0 / area),
            "s_constant": self.s_constant,
            "s_spread": self.s_spread,
            "residual": self.residual,
            "grad_residual": self.grad_residual,
            "sphere_like": self.sphere_like,
            "g1_ratio": self.g1_ratio,
            "history": list(self.history),
        }


def _wnorm(w, f):
    return np.sqrt(np.sum(w * f * f, axis=-1))


def is_sphere_like(ops: OperatorSet) -> bool:
    w = ops.weights
    g1 = np.sqrt(np.sum(w[:, None] * ops.g1**2))
    return bool(g1 <= SPHERE_LIKE_RATIO * np.sqrt(w.sum()))


def compute_nu0(ops: OperatorSet, cfg: SolverConfig | None = None) -> EquilibriumData:
    """Equilibrium data of the assembled operators.

    The null vector of ``1/2 - K*`` is found by shifted inverse iteration from
    the constant density. Raises :class:`SolverError` with the residual
    history if it does not reach ``cfg.tol``.
    """
    cfg = cfg or SolverConfig()
    w = ops.weights
    u = ops.u
    history = list(ops.nu0_history)
    res = float(_wnorm(w, 0.5 * u - ops.apply_Kstar(u)) / _wnorm(w, u))
    if res > cfg.tol:
        u2, hist2, ok = equilibrium_direction(ops.apply_Kstar, ops.Kstar, w, tol=cfg.tol)
        history += hist2
        if not ok:
            raise SolverError(f"inverse iteration stalled at residual {hist2[-1]:.3e}", history)
        res = hist2[-1]
        if _wnorm(w, u2 - u) > 1e-6 * _wnorm(w, u):
            raise SolverError("refined equilibrium density differs from the assembled one", history)
    su = ops.apply_S(u)
    c = float(w @ su / w.sum())
    g1_ratio = float(np.sqrt(np.sum(w[:, None] * ops.g1**2) / w.sum()))
    return EquilibriumData(
        nu0=1.0 - u,
        s_constant=c,
        s_spread=float(np.max(np.abs(su - c)) / abs(c)),
        residual=res,
        grad_residual=ops.null_defect,
        sphere_like=g1_ratio <= SPHERE_LIKE_RATIO,
        g1_ratio=g1_ratio,
        history=history,
    )


# -- B operators ----------------------------------------------------------------


def normal_part(ops: OperatorSet, f):
    return np.sum(f * ops.mesh.normals, axis=-1)


def tangent_part(ops: OperatorSet, f):
    return ops.mesh.to_frame(f)


def apply_Bi(ops: OperatorSet, f):
    fn = normal_part(ops, f)
    return 0.5 * fn + ops.apply_K(fn) + ops.apply_grad_star(tangent_part(ops, f))


def apply_Be(ops: OperatorSet, f):
    fn = normal_part(ops, f)
    return -(0.5 * fn - ops.apply_K(fn)) + ops.apply_grad_star(tangent_part(ops, f))


def apply_Bi_star(ops: OperatorSet, g):
    g = np.asarray(g, dtype=float)
    normal = (0.5 * g + ops.apply_Kstar(g))[..., None] * ops.mesh.normals
    return normal + ops.mesh.to_ambient(ops.apply_grad(g))


def apply_Be_star(ops: OperatorSet, g):
    g = np.asarray(g, dtype=float)
    normal = -(0.5 * g - ops.apply_Kstar(g))[..., None] * ops.mesh.normals
    return normal + ops.mesh.to_ambient(ops.apply_grad(g))


# -- solves -----------------------------------------------------------------------


def deflate(weights, f):
    """``R0 f``: remove the area-weighted mean."""
    mean = np.sum(weights * f, axis=-1) / weights.sum()
    return f - np.asarray(mean)[..., None]


def BiBi_star(ops: OperatorSet):
    def op(g):
        a = 0.5 * g + ops.apply_Kstar(g)
        return 0.5 * a + ops.apply_K(a) + ops.apply_grad_normal(g)

    return op


def BeBe_star_deflated(ops: OperatorSet):
    w = ops.weights

    def op(g):
        a = 0.5 * g - ops.apply_Kstar(g)
        return deflate(w, 0.5 * a - ops.apply_K(a) + ops.apply_grad_normal(g))

    return op


def grad_normal_deflated(ops: OperatorSet):
    w = ops.weights

    def op(g):
        return deflate(w, ops.apply_grad_normal(g))

    return op


def solve_spd(op, rhs, weights, cfg: SolverConfig | None = None, deflate_mean=False, name="spd"):
    """Conjugate gradients in the area-weighted inner product.

    Parameters
    ----------
    op : callable
        Self-adjoint positive definite map on densities (on mean-zero
        densities when ``deflate_mean``); must accept a leading batch axis.
    rhs : (N,) or (k, N) array
    weights : (N,) array
    deflate_mean : bool
        Project the right-hand side and every iterate with ``R0``. A
        discarded mean is reported through :class:`MeanDefectWarning`.

    Returns
    -------
    x : array like ``rhs``
    info : SolveInfo
        ``history`` holds the largest relative residual over the batch per
        iteration.
    """
    cfg = cfg or SolverConfig()
    b = np.array(rhs, dtype=float)
    single = b.ndim == 1
    b = np.atleast_2d(b)
    w = weights
    discarded = 0.0
    bnorm = _wnorm(w, b)
    if deflate_mean:
        b0 = deflate(w, b)
        lost = _wnorm(w, b - b0)
        discarded = float(np.max(np.where(bnorm > 0, lost / np.where(bnorm > 0, bnorm, 1), 0.0)))
        if discarded > 1e-12:
            warnings.warn(
                f"{name}: discarded mean of relative size {discarded:.3e}",
                MeanDefectWarning,
                stacklevel=2,
            )
        b = b0
        bnorm = _wnorm(w, b)

    x = np.zeros_like(b)
    live = bnorm > 0
    scale = np.where(live, bnorm, 1.0)
    r = b.copy()
    p = r.copy()
    rr = np.sum(w * r * r, axis=1)
    history = []
    it = 0
    limit = cfg.iterations(b.shape[1])
    rel = np.sqrt(rr) / scale
    active = live & (rel > cfg.tol)
    while active.any():
        if it >= limit:
            raise SolverError(
                f"{name}: no convergence in {limit} iterations (residual {rel.max():.3e})",
                history,
            )
        ap = op(p)
        if deflate_mean:
            ap = deflate(w, ap)
        pap = np.sum(w * p * ap, axis=1)
        alpha = np.where(active, rr / np.where(active, pap, 1.0), 0.0)
        x += alpha[:, None] * p
        r -= alpha[:, None] * ap
        rr_new = np.sum(w * r * r, axis=1)
        beta = np.where(active, rr_new / np.where(active, rr, 1.0), 0.0)
        p = r + beta[:, None] * p
        rr = rr_new
        it += 1
        rel = np.sqrt(rr) / scale
        history.append(float(rel[live].max()) if live.any() else 0.0)
        active = live & (rel > cfg.tol)
    # certificate on the true residual
    true_res = b - (deflate(w, op(x)) if deflate_mean else op(x))
    final = float(np.max(_wnorm(w, true_res) / scale)) if live.any() else 0.0
    info = SolveInfo(name, it, final, history, discarded)
    return (x[0] if single else x), info


def solve_half_plus_K(ops: OperatorSet, rhs, cfg: SolverConfig | None = None):
    """Solve ``(1/2 + K) x = rhs`` by GMRES (``K`` is not self-adjoint)."""
    cfg = cfg or SolverConfig()
    n = ops.n
    a = spla.LinearOperator((n, n), matvec=lambda v: 0.5 * v + ops.K @ v, dtype=float)
    b = np.atleast_2d(np.asarray(rhs, dtype=float))
    out = np.empty_like(b)
    worst = 0.0
    iters = 0
    for k, col in enumerate(b):
        count = [0]

        def tick(_):
            count[0] += 1

        x, status = spla.gmres(
            a, col, rtol=cfg.tol, atol=0.0, restart=min(n, 200),
            maxiter=cfg.iterations(n), callback=tick, callback_type="pr_norm",
        )
        nb = np.linalg.norm(col)
        res = np.linalg.norm(a.matvec(x) - col) / nb if nb > 0 else 0.0
        if status != 0 and res > cfg.tol:
            raise SolverError(f"GMRES on 1/2 + K stopped with status {status}, residual {res:.3e}")
        out[k] = x
        worst = max(worst, res)
        iters += count[0]
    info = SolveInfo("half_plus_K", iters, float(worst))
    return (out[0] if np.ndim(rhs) == 1 else out), info
