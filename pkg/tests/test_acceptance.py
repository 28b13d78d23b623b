"""Acceptance suite: seven criteria, one printed PASS/FAIL line each.

Meshes: unit icosphere r = 2, 3, 4; ellipsoid (1, 1, 1.5) r = 3; cube of
edge 2 at r = 2 (r = 3 only for the witness stability check).

Algebraic criteria (1-3) use per-triangle white noise. Criteria limited by
the discretisation (4-6) use random quadratic vector fields, which have a
continuum limit.
"""

import time

import numpy as np
import pytest

from hhbem.decompositions import Decomposer
from hhbem.mesh import combine, split_field
from hhbem.operators import (
    apply_Be,
    apply_Be_star,
    apply_Bi,
    apply_Bi_star,
    compute_nu0,
    normal_part,
)
from hhbem.oracle import sphere_eigencheck
from hhbem.potentials import jump_check, silence_score, sphere_probes
from hhbem.rng import poly_field, white_density, white_field

ALL = ("ico2", "ico3", "ico4", "ell3", "cube2")
SPHERES = ("ico2", "ico3", "ico4")
N_FIELDS = 10
HALVING = 0.625  # "halving within 25%": r4/r3 <= 0.5 * 1.25


def wip(w, a, b):
    if a.shape[-1] in (2, 3) and a.shape[-2] == len(w):
        return np.sum(w[:, None] * a * b, axis=(-2, -1))
    return np.sum(w * a * b, axis=-1)


def wnorm(w, a):
    return np.sqrt(np.maximum(wip(w, a, a), 0.0))


class Ledger:
    """Collects named checks and prints one verdict line."""

    def __init__(self, number, title):
        self.number = number
        self.title = title
        self.rows = []
        self.t0 = time.time()

    def max(self, name, value, limit):
        self.rows.append((name, float(value), "<=", limit, bool(value <= limit)))

    def min(self, name, value, limit):
        self.rows.append((name, float(value), ">=", limit, bool(value >= limit)))

    def finish(self):
        failed = [r for r in self.rows if not r[4]]
        verdict = "PASS" if not failed else "FAIL"
        worst = failed[0] if failed else max(self.rows, key=lambda r: r[1] / r[3] if r[2] == "<=" else r[3] / max(r[1], 1e-300))
        print(
            f"\nCRITERION {self.number} {verdict}: {self.title} "
            f"({len(self.rows) - len(failed)}/{len(self.rows)} checks, "
            f"tightest {worst[0]} = {worst[1]:.3g} {worst[2]} {worst[3]:g}, {time.time() - self.t0:.0f}s)"
        )
        for r in failed:
            print(f"    failed: {r[0]} = {r[1]:.4g} (needs {r[2]} {r[3]:g})")
        assert not failed, [r[0] for r in failed]


class Study:
    """Per-mesh decompositions shared by the criteria."""

    def __init__(self, ops):
        self.ops = ops
        self.mesh = ops.mesh
        self.w = ops.mesh.areas
        self.dec = Decomposer(ops)
        self._cache = {}

    def get(self, key, build):
        if key not in self._cache:
            self._cache[key] = build()
        return self._cache[key]

    def white(self):
        return self.get("white", lambda: np.stack([white_field(self.mesh, 1000 + s) for s in range(N_FIELDS)]))

    def poly(self):
        return self.get("poly", lambda: np.stack([poly_field(self.mesh, 2000 + s) for s in range(N_FIELDS)]))

    def orthogonal(self, kind):
        """``(f, Dhat f, P- f, P+ f)`` for the white or poly batch."""

        def build():
            f = self.white() if kind == "white" else self.poly()
            return f, self.dec.proj_Dhat(f), self.dec.proj_minus(f), self.dec.proj_plus(f)

        return self.get(("orth", kind), build)

    def skew(self, kind):
        def build():
            f = self.white() if kind == "white" else self.poly()
            return self.dec.hardy_hodge_components(f), self.dec.silent_components(f)[:3]

        return self.get(("skew", kind), build)


@pytest.fixture(scope="module")
def study(operators):
    cache = {}

    def get(name):
        if name not in cache:
            cache[name] = Study(operators(name))
        return cache[name]

    return get


# -- 1 -----------------------------------------------------------------------------


def test_criterion_1_exact_identities(study):
    led = Ledger(1, "exact algebraic identities at 1e-12")
    for name in ALL:
        s = study(name)
        ops, w, m = s.ops, s.w, s.mesh
        f = s.white()
        g = np.stack([white_density(m, 3000 + k) for k in range(N_FIELDS)])
        nf, ng = wnorm(w, f), wnorm(w, g)
        fn = normal_part(ops, f)
        led.max(f"{name} (Bi-Be)f=f_n", np.max(wnorm(w, apply_Bi(ops, f) - apply_Be(ops, f) - fn) / nf), 1e-12)
        diff = apply_Bi_star(ops, g) - apply_Be_star(ops, g) - g[..., None] * m.normals
        led.max(f"{name} (Bi*-Be*)g=ng", np.max(wnorm(w, diff) / ng), 1e-12)
        led.max(f"{name} K1=1/2", np.max(np.abs(ops.apply_K(np.ones(ops.n)) - 0.5)), 1e-12)
        g2 = np.roll(g, 1, axis=0)
        kpair = np.abs(wip(w, ops.apply_K(g), g2) - wip(w, g, ops.apply_Kstar(g2))) / (ng * wnorm(w, g2))
        led.max(f"{name} <Kf,g>=<f,K*g>", np.max(kpair), 1e-12)
        tau = m.to_frame(f)
        gpair = np.abs(wip(w, ops.apply_grad(g), tau) - wip(w, g, ops.apply_grad_star(tau))) / (ng * wnorm(w, tau))
        led.max(f"{name} grad adjoint pair", np.max(gpair), 1e-12)
        bpair = np.abs(wip(w, apply_Bi(ops, f), g) - wip(w, f, apply_Bi_star(ops, g))) / (nf * ng)
        led.max(f"{name} Bi adjoint pair", np.max(bpair), 1e-12)
        iso = 0.0
        for k in range(N_FIELDS):
            a, b = split_field(m, f[k])
            iso = max(iso, float(wnorm(w, combine(m, a, b) - f[k]) / nf[k]))
            iso = max(iso, abs(float(wnorm(w, a) ** 2 + wnorm(w, b) ** 2 - nf[k] ** 2)) / nf[k] ** 2)
        led.max(f"{name} split/combine isometry", iso, 1e-12)
    led.finish()


# -- 2 -----------------------------------------------------------------------------


def test_criterion_2_projection_suite(study):
    led = Ledger(2, "projections: idempotent, self-adjoint, partition, Gram at 1e-8/1e-6")
    for name in ALL:
        s = study(name)
        dec, w, m = s.dec, s.w, s.mesh
        f, d, pm, pp = s.orthogonal("white")
        nf = wnorm(w, f)
        pv = f - d - pm
        po = f - d - pp
        tau = m.to_frame(f)
        pd_t = m.to_frame(d)
        pg_t = tau - pd_t
        k = N_FIELDS
        dd = dec.proj_Dhat(np.concatenate([d, pv, po, m.to_ambient(pg_t)]))
        mm = dec.proj_minus(np.concatenate([pm, pv]))
        ppp = dec.proj_plus(np.concatenate([pp, po]))
        images = {
            "P_Dhat": (d, dd[:k]),
            "P_minus": (pm, mm[:k]),
            "P_plus": (pp, ppp[:k]),
            "P_vert": (pv, pv - dd[k : 2 * k] - mm[k:]),
            "P_O": (po, po - dd[2 * k : 3 * k] - ppp[k:]),
            "P_D": (pd_t, m.to_frame(dd[:k])),
            "P_G": (pg_t, pg_t - m.to_frame(dd[3 * k :])),
        }
        for pname, (once, twice) in images.items():
            led.max(f"{name} {pname} idempotent", np.max(wnorm(w, twice - once) / nf), 1e-8)
        # self-adjointness on pairs (f_k, f_{k+1})
        f2 = np.roll(f, -1, axis=0)
        tau2 = np.roll(tau, -1, axis=0)
        for pname, once in (("P_Dhat", d), ("P_minus", pm), ("P_plus", pp), ("P_vert", pv), ("P_O", po)):
            once2 = np.roll(once, -1, axis=0)
            gap = np.abs(wip(w, once, f2) - wip(w, f, once2)) / (nf * wnorm(w, f2))
            led.max(f"{name} {pname} self-adjoint", np.max(gap), 1e-8)
        for pname, once in (("P_D", pd_t), ("P_G", pg_t)):
            once2 = np.roll(once, -1, axis=0)
            gap = np.abs(wip(w, once, tau2) - wip(w, tau, once2)) / (nf * wnorm(w, tau2))
            led.max(f"{name} {pname} self-adjoint", np.max(gap), 1e-8)
        led.max(f"{name} inner partition", np.max(wnorm(w, pv + pm + d - f) / nf), 1e-8)
        led.max(f"{name} outer partition", np.max(wnorm(w, pp + po + d - f) / nf), 1e-8)
        for mode, comps in (("inner", (pv, pm, d)), ("outer", (pp, po, d))):
            worst = 0.0
            for a in range(3):
                for b in range(a + 1, 3):
                    ca, cb = comps[a], comps[b]
                    worst = max(worst, float(np.max(np.abs(wip(w, ca, cb)) / (wnorm(w, ca) * wnorm(w, cb)))))
            led.max(f"{name} {mode} Gram off-diagonal", worst, 1e-6)
        led.max(f"{name} Bi(P_vert f)", np.max(wnorm(w, apply_Bi(s.ops, pv)) / nf), 1e-6)
        led.max(f"{name} Be(P_O f)", np.max(wnorm(w, apply_Be(s.ops, po)) / nf), 1e-6)
    led.finish()


# -- 3 -----------------------------------------------------------------------------


def test_criterion_3_skew_reconstructions(study):
    led = Ledger(3, "skew reconstructions at 1e-8, round-trip at 1e-6")
    for name in ALL:
        s = study(name)
        dec, w = s.dec, s.w
        f = s.white()
        nf = wnorm(w, f)
        hh, sil = s.skew("white")
        k = N_FIELDS
        for mode, comps, split in (
            ("hardy-hodge", hh, lambda x: dec.hardy_hodge_components(x)),
            ("silent", sil, lambda x: dec.silent_components(x)[:3]),
        ):
            led.max(f"{name} {mode} residual", np.max(wnorm(w, sum(comps) - f) / nf), 1e-8)
            again = split(np.concatenate(comps))
            worst = 0.0
            for slot, c in enumerate(comps):
                cn = wnorm(w, c)
                keep = cn > 1e-6 * nf
                for part_slot, part in enumerate(again):
                    piece = part[slot * k : (slot + 1) * k]
                    target = c if part_slot == slot else 0.0
                    err = wnorm(w, piece - target) / np.where(keep, cn, 1.0)
                    worst = max(worst, float(np.max(np.where(keep, err, 0.0))))
            led.max(f"{name} {mode} round-trip", worst, 1e-6)
    led.finish()


# -- 4 -----------------------------------------------------------------------------


def coincidence(s):
    """Largest pairwise gap between the four decompositions, relative to |f|."""
    w = s.w
    f, d, pm, pp = s.orthogonal("poly")
    (hp, hm, dh), (i, o, ds) = s.skew("poly")
    pv, po = f - d - pm, f - d - pp
    pairs = {
        "i~P_vert": (i, pv),
        "o~P_O": (o, po),
        "P_vert~P_plus": (pv, pp),
        "P_O~P_minus": (po, pm),
        "h_plus~P_plus": (hp, pp),
        "h_minus~P_minus": (hm, pm),
        "i~h_plus": (i, hp),
        "o~h_minus": (o, hm),
        "d_hardy~P_Dhat": (dh, d),
        "d_silent~P_Dhat": (ds, d),
    }
    nf = wnorm(w, f)
    return {k: float(np.max(wnorm(w, a - b) / nf)) for k, (a, b) in pairs.items()}


def hardy_correlation(s):
    w = s.w
    (hp, hm, _), _ = s.skew("poly")
    return np.abs(wip(w, hp, hm)) / (wnorm(w, hp) * wnorm(w, hm))


def test_criterion_4_sphere_analytics(study):
    led = Ledger(4, "sphere analytics and coincidence of the four splits")
    eig = {name: {n: sphere_eigencheck(study(name).ops, n) for n in range(3)} for name in SPHERES}
    corr = {name: float(np.max(hardy_correlation(study(name)))) for name in SPHERES}
    for name in SPHERES:
        s = study(name)
        s1 = s.ops.apply_S(np.ones(s.ops.n))
        led.max(f"{name} max|S1+1|", np.max(np.abs(s1 + 1.0)), 0.02)
        eq = compute_nu0(s.ops)
        led.max(f"{name} |nu0|/|1|", eq.summary(s.w)["nu0_relative_norm"], 0.05)
        for key, gap in coincidence(s).items():
            led.max(f"{name} {key}", gap, 0.05)
    for n, lim in ((0, 0.02), (1, 0.05), (2, 0.08)):
        for part in ("s_error", "k_error"):
            led.max(f"ico3 degree {n} {part}", eig["ico3"][n][part], lim)
    for n in (1, 2):
        for part in ("s_error", "k_error"):
            led.max(f"degree {n} {part} r4/r3", eig["ico4"][n][part] / eig["ico3"][n][part], 1.0 - 1e-9)
    led.max("ico3 Hardy correlation", corr["ico3"], 0.05)
    led.max("Hardy correlation r4/r3", corr["ico4"] / corr["ico3"], 1.0 - 1e-9)
    print(f"\n    Hardy correlation r2/r3/r4: {corr['ico2']:.4f} {corr['ico3']:.4f} {corr['ico4']:.4f}")
    led.finish()


# -- 5 -----------------------------------------------------------------------------


def test_criterion_5_non_sphere(study, operators):
    led = Ledger(5, "cube: nu0 away from zero, Hardy spaces not orthogonal")
    s = study("cube2")
    summary = compute_nu0(s.ops).summary(s.w)
    led.min("cube2 |nu0|/|1|", summary["nu0_relative_norm"], 0.1)
    led.max("cube2 max nu0", summary["nu0_max"], 1.05)
    witness = {}
    for name in ("cube2", "cube3"):
        c = Study(s.ops) if name == "cube2" else Study(operators("cube3"))
        f = np.stack([poly_field(c.mesh, 4000 + k) for k in range(20)])
        hp, hm, _ = c.dec.hardy_hodge_components(f)
        witness[name] = float(np.max(np.abs(wip(c.w, hp, hm)) / (wnorm(c.w, hp) * wnorm(c.w, hm))))
    led.min("cube2 Hardy witness", witness["cube2"], 1e-2)
    ratio = witness["cube3"] / witness["cube2"]
    led.min("witness cube3/cube2", ratio, 0.5)
    led.max("witness cube3/cube2", ratio, 1.5)
    e = study("ell3")
    led.min("ell3 |nu0|/|1|", compute_nu0(e.ops).summary(e.w)["nu0_relative_norm"], 0.05)
    led.finish()


# -- 6 -----------------------------------------------------------------------------


def test_criterion_6_silence(study):
    led = Ledger(6, "silence scores <= 0.02, halving from r=3 to r=4")
    scores = {}
    for name in SPHERES:
        s = study(name)
        m = s.mesh
        f, d, pm, pp = s.orthogonal("poly")
        pv = f - d - pm
        inner = sphere_probes(m, 200, 0.5, "interior")
        outer = sphere_probes(m, 200, 2.0, "exterior")
        scores[name] = {
            "P_vert inside": np.max(silence_score(m, pv, inner, "interior")),
            "(1-P_plus) outside": np.max(silence_score(m, f - pp, outer, "exterior")),
            "P_Dhat inside": np.max(silence_score(m, d, inner, "interior")),
            "P_Dhat outside": np.max(silence_score(m, d, outer, "exterior")),
        }
        for key, val in scores[name].items():
            led.max(f"{name} {key}", val, 0.02)
    for key in scores["ico3"]:
        led.max(f"{key} r4/r3", scores["ico4"][key] / scores["ico3"][key], HALVING)
    led.finish()


# -- 7 -----------------------------------------------------------------------------


def test_criterion_7_jumps(study):
    led = Ledger(7, "jump relations at 0.2h: <= 15% at r=3, improving at r=4")
    keys = ("double_interior", "double_exterior", "normal_grad_interior", "normal_grad_exterior")
    rows = {}
    for name in SPHERES:
        ops = study(name).ops
        rows[name] = jump_check(ops, ops.mesh.centroids[:, 0], [0.2 * ops.mesh.mean_spacing])[0]
    for key in keys:
        led.max(f"ico3 {key}", rows["ico3"][key], 0.15)
        led.max(f"{key} r4/r3", rows["ico4"][key] / rows["ico3"][key], 1.0 - 1e-9)
    for name in ("ell3", "cube2"):
        ops = study(name).ops
        row = jump_check(ops, ops.mesh.centroids[:, 0], [0.2 * ops.mesh.mean_spacing])[0]
        print(f"\n    {name} jump errors: " + ", ".join(f"{k} {row[k]:.3f}" for k in keys))
    led.finish()
