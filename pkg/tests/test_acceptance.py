"""Acceptance criteria, one test each. Tolerances are fixed; measured values
are printed in the "acceptance measurements" section of the pytest summary."""

import time

import numpy as np
import pytest

from surfhps import geometry as G
from surfhps import mesh as M
from surfhps.basis import build_reference_basis, dubiner_eval, simplex_nodes, triangle_quadrature, chebyshev_lobatto
from surfhps.hps import Discretization, HpsSolver
from surfhps.local import PdeCoefficients
from surfhps.problems import build_discretization, build_geometry, make_config, make_kinetics, make_law, snapshot_times
from surfhps.timestep import (Kinetics, SimulationConfig, TuringParams, count_local_maxima,
                              random_initial, run_evolving, run_simulation)
from oracles import (caterpillar_tree, dense_solve, fit_order, fit_rho, small_meshes,
                     sphere_harmonic_data)


def _harmonic(l, m):
    fn, _ = sphere_harmonic_data(l, m)
    return lambda X: np.broadcast_to(fn(X[:, 0], X[:, 1], X[:, 2]), (len(X),)).astype(float)


def _mesh_h(mesh):
    k = mesh.elements.shape[1]
    P = mesh.vertices[mesh.elements]
    return max(np.linalg.norm(P[:, e] - P[:, (e + 1) % k], axis=1).max() for e in range(k))


def _rel_linf(u, exact):
    return np.abs(u - exact).max() / np.abs(exact).max()


def _elliptic_error(mesh, kind, n, l, m, shift, dirichlet=None):
    disc = Discretization(mesh, build_reference_basis(kind, n), G.SphereProjector())
    Y = _harmonic(l, m)(disc.coords)
    S = HpsSolver(disc, PdeCoefficients.helmholtz(1.0, shift))
    h = dirichlet(disc.coords) if dirichlet is not None else None
    u = S.solve((l * (l + 1) + shift) * Y, h)
    return u, Y, S


# ---------------------------------------------------------------- 1

def test_criterion_01_spectral_convergence_quad_sphere(measured):
    t0 = time.perf_counter()
    raw = M.rhombus_quadrilateralize(M.sphere_mesh(1))
    mesh = raw.with_vertices(G.SphereProjector()(raw.vertices))
    assert mesh.n_elements == 120
    ns = list(range(4, 17))
    errs = []
    for n in ns:
        u, Y, _ = _elliptic_error(mesh, "quad", n, 4, 3, 1.0)
        errs.append(np.abs(u - Y).max())
    rho = fit_rho(ns, errs)
    elapsed = time.perf_counter() - t0
    measured("fitted rho", rho)
    measured("error at n=16", errs[-1])
    measured("runtime [s]", elapsed)
    assert rho >= 5
    assert elapsed <= 300


# ---------------------------------------------------------------- 2

def _equator_data(X):
    return 0.25 * np.sqrt(105 / np.pi) * (X[:, 0] ** 2 - X[:, 1] ** 2) * X[:, 2]


def test_criterion_02_hemisphere_h_convergence(measured):
    t0 = time.perf_counter()
    orders = {}
    for n in (5, 9):
        hs, errs = [], []
        for level in (1, 2, 3):
            mesh = M.hemisphere_mesh(level)
            u, Y, _ = _elliptic_error(mesh, "triangle", n, 3, 2, 0.0, dirichlet=_equator_data)
            hs.append(_mesh_h(mesh))
            errs.append(_rel_linf(u, Y))
        orders[n] = fit_order(hs, errs)
        measured(f"order at n={n}", orders[n])
    elapsed = time.perf_counter() - t0
    measured("runtime [s]", elapsed)
    assert orders[5] >= 3.5
    assert orders[9] >= 7.0
    assert elapsed <= 900


# ---------------------------------------------------------------- 3

def test_criterion_03_closed_sphere_nullspace(measured):
    n = 9
    hs, errs, residuals = [], [], []
    for level in (1, 2, 3):
        mesh = M.sphere_mesh(level)
        u, Y, S = _elliptic_error(mesh, "triangle", n, 20, 10, 0.0)
        assert S.nullspace
        hs.append(_mesh_h(mesh))
        errs.append(_rel_linf(u, Y))
        residuals.append(S.mean_residual(u))
    order = fit_order(hs, errs)
    measured("order at n=9", order)
    measured("max mean residual", max(residuals))
    assert order >= n - 1.5
    assert max(residuals) <= 1e-10


# ---------------------------------------------------------------- 4

def _heat_error(disc, Y, dt, T=1.0):
    kin = Kinetics("none", diffusion_none=(1.0,))
    hist = [[Y * np.exp(2.0 * k * dt) for k in range(4)]]
    cfg = SimulationConfig(disc, kin, order=4, dt=dt, T=T, initial=hist)
    return np.abs(run_simulation(cfg).final.values[0] - Y * np.exp(-2.0 * T)).max()


def test_criterion_04_heat_bdf4(measured):
    disc = Discretization(M.sphere_mesh(2), build_reference_basis("triangle", 10), G.SphereProjector())
    Y = _harmonic(1, 0)(disc.coords)
    err = _heat_error(disc, Y, 1e-3)
    dts = [0.1, 0.05, 0.025]
    e = np.array([_heat_error(disc, Y, dt) for dt in dts])
    rates = np.log2(e[:-1] / e[1:])
    measured("error at t=1, dt=1e-3", err)
    measured("halving orders", ", ".join(f"{r:.3f}" for r in rates))
    assert err <= 1e-6
    assert rates.min() >= 3.7


# ---------------------------------------------------------------- 5

def test_criterion_05_oracle_equivalence(measured):
    worst_oracle, worst_tree = 0.0, 0.0
    for name, mesh, proj in small_meshes():
        assert mesh.n_elements <= 8
        kind = "quad" if mesh.kind == "quad" else "triangle"
        for n in (4, 7):
            disc = Discretization(mesh, build_reference_basis(kind, n), proj)
            f = np.sin(disc.coords @ [1.0, 2.0, 0.5]) + 0.3
            h = np.cos(disc.coords @ [0.3, -1.0, 1.0]) if disc.dofs.dirichlet.any() else None
            shifts = (1.0, 0.0) if mesh.is_closed else (1.0,)
            for shift in shifts:
                g = f - disc.integrate(f) / disc.area if shift == 0 else f
                ref, g = dense_solve(disc, g, h, shift=shift)
                coeffs = PdeCoefficients.helmholtz(1.0, shift)
                u1 = HpsSolver(disc, coeffs, compatibility_tol=0.1).solve(g, h)
                u2 = HpsSolver(disc, coeffs, tree=caterpillar_tree(mesh),
                               compatibility_tol=0.1).solve(g, h)
                scale = np.abs(ref).max()
                worst_oracle = max(worst_oracle, np.abs(u1 - ref).max() / scale)
                worst_tree = max(worst_tree, np.abs(u2 - u1).max() / scale)
    measured("max relative diff vs dense", worst_oracle)
    measured("max relative diff across trees", worst_tree)
    assert worst_oracle <= 1e-10
    assert worst_tree <= 1e-10


# ---------------------------------------------------------------- 6

def test_criterion_06_basis_properties(measured):
    worst_diff = 0.0
    for kind in ("quad", "triangle"):
        for n in range(2, 13):
            b = build_reference_basis(kind, n)
            cond = np.linalg.cond(b.K) if b.K is not None else 1.0
            xi, eta = b.points.T
            err = 0.0
            for p in range(n + 1):
                for q in range(n + 1 - p if kind == "triangle" else n + 1):
                    u = xi**p * eta**q
                    dx = p * xi ** max(p - 1, 0) * eta**q
                    de = q * xi**p * eta ** max(q - 1, 0)
                    err = max(err, np.abs(b.D_xi @ u - dx).max(), np.abs(b.D_eta @ u - de).max())
            assert err <= 1e-10 * cond, (kind, n, err, cond)
            worst_diff = max(worst_diff, err / cond)
            card = b.interpolation_matrix(xi, eta)
            assert np.abs(card - np.eye(b.size)).max() <= 1e-12
    qx, qe, qw = triangle_quadrature(2 * 10 + 2)
    idx = [(i, j) for i in range(11) for j in range(11 - i)]
    V = np.column_stack([dubiner_eval(10, i, j, qx, qe) for i, j in idx])
    ortho = np.abs(V.T @ (qw[:, None] * V) - np.eye(len(idx))).max()
    trace = 0.0
    verts = np.array([[0, 0], [1, 0], [0, 1]], float)
    for n in range(1, 17):
        s = 0.5 * (1 - chebyshev_lobatto(n).points)
        nodes = simplex_nodes(n)
        for e, ids in enumerate(nodes.edges):
            a, c = verts[e], verts[(e + 1) % 3]
            trace = max(trace, np.abs(nodes.points[list(ids)] - (a + s[:, None] * (c - a))).max())
    measured("max diff error / cond", worst_diff)
    measured("Dubiner orthonormality defect", ortho)
    measured("edge trace deviation", trace)
    assert ortho <= 1e-10
    assert trace <= 1e-14


# ---------------------------------------------------------------- 7

def test_criterion_07_quadrilateralization_counts():
    assert M.rhombus_quadrilateralize(M.sphere_mesh(1)).n_elements == 120
    assert M.rhombus_quadrilateralize(M.icosahedron()).n_elements == 30
    assert M.rhombus_quadrilateralize(M.tetrahedron()).n_elements == 6


# ---------------------------------------------------------------- 8

def _preset_run(preset, **over):
    cfg = make_config(overrides=dict(preset=preset, **over))
    mesh, proj, law, _ = build_geometry(cfg)
    disc = build_discretization(cfg, mesh, proj)
    return cfg, disc, law


def _simulate(cfg, disc, law, initial=None, kinetics=None):
    sim = SimulationConfig(disc, kinetics or make_kinetics(cfg), order=cfg.scheme, dt=cfg.dt,
                           T=cfg.T, snapshot_times=snapshot_times(cfg),
                           initial=initial if initial is not None else cfg.initial,
                           seed=cfg.seed, law=law)
    return run_evolving(sim) if law is not None else run_simulation(sim)


def _maxima(snap, disc):
    X = snap.coords if snap.coords is not None else disc.coords
    R = np.linalg.norm(X, axis=1).mean()
    return count_local_maxima(X, snap.values[0], 0.25 * R, threshold=0.5)


SPOT_STD_THRESHOLD = 1.0      # about 3.5x the std of the uniform [-0.5, 0.5] start


def test_criterion_08_turing_properties(measured):
    # (a) equilibrium persistence
    cfg, disc, _ = _preset_run("turing-spots", T=10.0)
    for order in (1, 4):
        tr = _simulate(cfg, disc, None, initial="equilibrium",
                       kinetics=make_kinetics(cfg)) if order == 1 else run_simulation(
            SimulationConfig(disc, make_kinetics(cfg), order=4, dt=cfg.dt, T=10.0, initial="equilibrium"))
        drift = max(np.abs(v).max() for v in tr.final.values)
        assert tr.final.step == 100
        assert drift <= 1e-8

    # (b) pattern emergence on the spot preset
    cfg, disc, _ = _preset_run("turing-spots")
    tr = _simulate(cfg, disc, None)
    std = tr.final.stats[0]["std"]
    measured("(b) std of u1 at t=200", std)
    assert tr.final.t == pytest.approx(200.0)
    assert std > SPOT_STD_THRESHOLD

    # (c) determinism under a fixed seed
    cfg, disc, _ = _preset_run("turing-spots", T=5.0, seed=11)
    a, b = _simulate(cfg, disc, None), _simulate(cfg, disc, None)
    assert all(np.array_equal(x, y) for x, y in zip(a.final.values, b.final.values))

    # (d) coupled system with q = 0 against two independent systems
    cfg, disc, _ = _preset_run("coupled-q1+0.55", q1=0.0, T=20.0)
    kin = make_kinetics(cfg)
    init = random_initial(kin, disc.n_nodes, 5)
    coupled = _simulate(cfg, disc, None, initial=init, kinetics=kin)
    v_only = _simulate(cfg, disc, None, initial=init[:2], kinetics=Kinetics("turing2", kin.primed))
    u_only = _simulate(cfg, disc, None, initial=init[2:], kinetics=Kinetics("turing2", kin.params))
    diff = max(np.abs(coupled.final.values[k] - ref).max()
               for k, ref in enumerate(v_only.final.values + u_only.final.values))
    measured("(d) coupled vs decoupled", diff)
    assert diff <= 1e-12

    # (e) contracting sphere against the static radius-3 baseline
    cfg, disc, law = _preset_run("contracting-sphere")
    tr = _simulate(cfg, disc, law)
    assert tr.final.t == pytest.approx(48.0)
    counts = {round(s.t, 6): _maxima(s, disc) for s in tr.snapshots}
    base_cfg, base_disc, _ = _preset_run("contracting-sphere", law="static")
    base = _simulate(base_cfg, base_disc, None)
    base_count = _maxima(base.final, base_disc)
    measured("(e) maxima contracting t=20/45/48", f"{counts[20.0]}/{counts[45.0]}/{counts[48.0]}")
    measured("(e) maxima static baseline t=48", base_count)
    assert counts[48.0] < base_count
    assert counts[48.0] <= counts[45.0] < counts[20.0]


# ---------------------------------------------------------------- 9

def _build_times(mesh, n, repeats):
    disc = Discretization(mesh, build_reference_basis("triangle", n), G.SphereProjector())
    best = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        S = HpsSolver(disc, PdeCoefficients.helmholtz())
        total = time.perf_counter() - t0
        if best is None or total < best[0]:
            best = (total, S.stats.leaf_time, S)
    return best


def test_criterion_09_performance_profile(measured):
    n = 8
    Ks, totals, leaves = [], [], []
    for level in (1, 2, 3):
        mesh = M.sphere_mesh(level, base="octahedron")
        total, leaf, S = _build_times(mesh, n, repeats=3 if level < 3 else 2)
        Ks.append(mesh.n_elements)
        totals.append(total)
        leaves.append(leaf)
    assert Ks == [32, 128, 512]
    f = np.sin(S.disc.coords[:, 0])
    t0 = time.perf_counter()
    for _ in range(5):
        S.solve(f)
    solve = (time.perf_counter() - t0) / 5
    build_exp = fit_order(Ks, totals)
    leaf_exp = fit_order(Ks, leaves)
    measured("build exponent in K", build_exp)
    measured("leaf build exponent in K", leaf_exp)
    measured("build / solve at K=512", totals[-1] / solve)
    assert leaf_exp <= 1.2
    assert build_exp <= 1.7
    assert totals[-1] >= 10 * solve


# ---------------------------------------------------------------- 10

def test_criterion_10_evolving_geometry(measured):
    X = M.sphere_mesh(2).vertices * 1.3 + 0.1
    laws = [G.IsotropicLogistic(0.1, 1.5), G.IsotropicLinear(0.02, 3.0),
            G.AnisotropicAxis(0.04, 2), G.DumbbellLevelSet()]
    for law in laws:
        assert np.array_equal(G.evolve_nodes(law, X, 0.0), X)
    # the time step does not enter the geometry, so the run uses dt = 0.1
    cfg, disc, law = _preset_run("logistic-sphere", dt=0.1)
    tr = _simulate(cfg, disc, law)
    assert tr.final.t == pytest.approx(50.0)
    expect = 4 * np.pi * law.eta(50.0) ** 2
    rel = abs(tr.final.area - expect) / expect
    measured("relative area error at T=50", rel)
    assert rel <= 1e-3
