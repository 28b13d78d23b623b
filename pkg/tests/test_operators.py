import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hhbem.decompositions import Decomposer
from hhbem.operators import (
    BeBe_star_deflated,
    BiBi_star,
    MeanDefectWarning,
    SolverConfig,
    SolverError,
    apply_Be,
    apply_Be_star,
    apply_Bi,
    apply_Bi_star,
    compute_nu0,
    deflate,
    grad_normal_deflated,
    is_sphere_like,
    normal_part,
    solve_half_plus_K,
    solve_spd,
)
from hhbem.rng import white_density, white_field


def ip(w, a, b):
    if a.ndim == 2:
        return float(np.sum(w[:, None] * a * b))
    return float(w @ (a * b))


@pytest.mark.parametrize("kw", [{"tol": 0.0}, {"tol": 1e-3}, {"tol": -1.0}, {"max_iter": 0}])
def test_solver_config_rejects(kw):
    with pytest.raises(ValueError):
        SolverConfig(**kw)


def test_solver_config_defaults():
    cfg = SolverConfig()
    assert cfg.tol == 1e-10 and cfg.deflate_mean
    assert cfg.iterations(50) == 500
    assert SolverConfig(max_iter=3).iterations(50) == 3


@pytest.mark.parametrize("name", ["ico2", "cube1", "ell2"])
def test_b_operator_identities(operators, name):
    ops = operators(name)
    m = ops.mesh
    w = m.areas
    f = white_field(m, 1)
    g = white_density(m, 2)
    fn = normal_part(ops, f)
    nf = np.sqrt(ip(w, f, f))
    ng = np.sqrt(ip(w, g, g))
    assert np.sqrt(ip(w, *(2 * [apply_Bi(ops, f) - apply_Be(ops, f) - fn]))) <= 1e-12 * nf
    d = apply_Bi_star(ops, g) - apply_Be_star(ops, g) - g[:, None] * m.normals
    assert np.sqrt(ip(w, d, d)) <= 1e-12 * ng
    assert abs(ip(w, apply_Bi(ops, f), g) - ip(w, f, apply_Bi_star(ops, g))) <= 1e-12 * nf * ng
    assert abs(ip(w, apply_Be(ops, f), g) - ip(w, f, apply_Be_star(ops, g))) <= 1e-12 * nf * ng
    assert np.all(apply_Bi(ops, np.zeros_like(f)) == 0)
    assert np.all(apply_Bi_star(ops, np.zeros_like(g)) == 0)


def test_batched_application_matches_loop(ico2):
    m = ico2.mesh
    f = np.stack([white_field(m, s) for s in range(3)])
    g = np.stack([white_density(m, s) for s in range(3)])
    for k in range(3):
        assert np.allclose(apply_Bi(ico2, f)[k], apply_Bi(ico2, f[k]), atol=1e-14)
        assert np.allclose(apply_Be_star(ico2, g)[k], apply_Be_star(ico2, g[k]), atol=1e-14)


def test_divergence_free_tangent_leaves_normal_part(ico2):
    m = ico2.mesh
    dec = Decomposer(ico2)
    tau = dec.proj_D(m.to_frame(white_field(m, 4)))
    f = white_density(m, 5)[:, None] * m.normals + m.to_ambient(tau)
    fn = normal_part(ico2, f)
    assert np.allclose(apply_Bi(ico2, f), 0.5 * fn + ico2.apply_K(fn), atol=1e-8 * np.abs(fn).max())


def test_solve_identity():
    w = np.linspace(1, 2, 7)
    b = np.arange(7.0)
    x, info = solve_spd(lambda g: g, b, w)
    assert np.allclose(x, b) and info.iterations == 1


def test_solve_bibi_star(ico2):
    w = ico2.weights
    rhs = apply_Bi(ico2, white_field(ico2.mesh, 11))
    op = BiBi_star(ico2)
    x, info = solve_spd(op, rhs, w, SolverConfig(tol=1e-10))
    res = op(x) - rhs
    assert np.sqrt(ip(w, res, res)) <= 1e-10 * np.sqrt(ip(w, rhs, rhs)) * 1.01
    assert info.residual <= 1e-9
    assert info.iterations == len(info.history) > 0


def test_solve_gradient_normal_on_cube(cube1):
    w = cube1.weights
    tau = cube1.mesh.to_frame(white_field(cube1.mesh, 3))
    rhs = deflate(w, cube1.apply_grad_star(tau))
    x, info = solve_spd(grad_normal_deflated(cube1), rhs, w, deflate_mean=True)
    assert 0 < info.iterations < 10 * cube1.n
    assert abs(w @ x) <= 1e-12 * np.sqrt(w @ x**2) * np.sqrt(w.sum())
    assert info.residual <= 1e-9


def test_solve_batched_matches_single(cube1):
    w = cube1.weights
    op = BeBe_star_deflated(cube1)
    rhs = np.stack([deflate(w, apply_Be(cube1, white_field(cube1.mesh, s))) for s in range(3)])
    xb, _ = solve_spd(op, rhs, w, deflate_mean=True)
    for k in range(3):
        xs, _ = solve_spd(op, rhs[k], w, deflate_mean=True)
        assert np.allclose(xb[k], xs, atol=1e-8 * np.abs(xs).max())


def test_solve_warns_on_discarded_mean(cube1):
    w = cube1.weights
    with pytest.warns(MeanDefectWarning):
        solve_spd(grad_normal_deflated(cube1), np.ones(cube1.n), w, deflate_mean=True)
    with warnings.catch_warnings():
        warnings.simplefilter("error", MeanDefectWarning)
        solve_spd(grad_normal_deflated(cube1), deflate(w, white_density(cube1.mesh, 1)), w, deflate_mean=True)


def test_solve_iteration_limit(ico2):
    rhs = apply_Bi(ico2, white_field(ico2.mesh, 0))
    with pytest.raises(SolverError) as err:
        solve_spd(BiBi_star(ico2), rhs, ico2.weights, SolverConfig(max_iter=2))
    assert len(err.value.history) == 2


def test_solve_zero_rhs():
    x, info = solve_spd(lambda g: 2 * g, np.zeros(4), np.ones(4))
    assert np.all(x == 0) and info.iterations == 0


@settings(max_examples=10, deadline=None)
@given(st.integers(min_value=0, max_value=2**20))
def test_solve_random_spd(seed):
    r = np.random.default_rng(seed)
    n = 12
    w = r.uniform(0.5, 2.0, n)
    a = r.normal(size=(n, n))
    # self-adjoint in the weighted inner product: W^-1 (B^T B + I)
    mat = (a.T @ a + np.eye(n)) / w[:, None]
    b = r.normal(size=n)
    x, _ = solve_spd(lambda g: g @ mat.T, b, w, SolverConfig(tol=1e-12))
    assert np.allclose(mat @ x, b, atol=1e-9 * np.abs(b).max())


def test_half_plus_K(ell2):
    b = white_density(ell2.mesh, 8)
    x, info = solve_half_plus_K(ell2, b, SolverConfig(tol=1e-12))
    assert np.linalg.norm(0.5 * x + ell2.K @ x - b) <= 1e-11 * np.linalg.norm(b)
    xb, _ = solve_half_plus_K(ell2, np.stack([b, 2 * b]), SolverConfig(tol=1e-12))
    assert np.allclose(xb[1], 2 * x, atol=1e-9)


def test_nu0_sphere(ico3):
    eq = compute_nu0(ico3)
    s = eq.summary(ico3.weights)
    assert s["nu0_relative_norm"] < 0.05
    assert abs(s["nu0_mean"]) < 1e-12
    assert eq.residual < 1e-8
    assert s["s_constant"] == pytest.approx(-1.0, abs=0.02)
    assert s["s_spread"] < 0.02
    assert not eq.sphere_like  # the discrete gradient of S1 is small but not zero
    assert eq.g1_ratio < 1e-3


def test_nu0_cube(cube2):
    eq = compute_nu0(cube2)
    s = eq.summary(cube2.weights)
    assert s["nu0_relative_norm"] > 0.1
    assert s["nu0_max"] <= 1.05
    assert abs(s["nu0_mean"]) < 1e-12
    assert eq.residual < 1e-8
    assert eq.g1_ratio > 1e-3
    # equilibrium density peaks at corners and edges, nu0 < 0 there
    corner = np.argmax(np.abs(cube2.mesh.centroids).sum(axis=1))
    assert eq.nu0[corner] < 0


def test_sphere_like_predicate(ico2, cube1):
    assert not is_sphere_like(cube1)
    assert not is_sphere_like(ico2)
