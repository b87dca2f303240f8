import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from surfhps import basis as B
from surfhps import geometry as G
from surfhps import local as L

SQUARE = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], float)
TRI = np.array([[0, 0, 0], [1, 0.1, 0], [0.2, 0.9, 0]], float)
FLAT = G.IdentityProjector()


def _local(verts, kind, n, coeffs):
    b = B.build_reference_basis(kind, n)
    ch = G.chart_element(verts, FLAT, b)
    return b, ch, L.assemble_local(ch, coeffs, b)


def test_quad_operator_shapes():
    b, ch, ops = _local(SQUARE, "quad", 10, L.PdeCoefficients.helmholtz())
    assert ops.L.shape == (121, 121)
    assert ops.S.shape == (81, 40)
    assert ops.DtN.shape == (40, 40)


def test_triangle_operator_shapes():
    b, ch, ops = _local(TRI, "triangle", 6, L.PdeCoefficients.helmholtz())
    assert ops.L.shape == (28, 28)
    assert ops.S.shape == (10, 18)
    assert ops.DtN.shape == (18, 18)


@pytest.mark.parametrize("kind,verts", [("quad", SQUARE), ("triangle", TRI)])
def test_harmonic_polynomials_reproduced(kind, verts):
    # sum D_j D_j u - u = -u for harmonic u
    n = 8
    b, ch, ops = _local(verts, kind, n, L.PdeCoefficients(a=1.0, c=-1.0))
    x, y = ch.coords[:, 0], ch.coords[:, 1]
    z = x + 1j * y
    for k in range(n + 1):
        for u in (np.real(z**k), np.imag(z**k)):
            assert np.abs(ops.L @ u + u).max() < 1e-9


def test_random_spd_local_solve_matches_dense(rng):
    A = rng.normal(size=(3, 3))
    A = A @ A.T + 3 * np.eye(3)
    coeffs = L.PdeCoefficients(a=-A, b=rng.normal(size=3), c=2.0)
    b, ch, ops = _local(SQUARE, "quad", 9, coeffs)
    h = rng.normal(size=len(b.boundary))
    f = rng.normal(size=b.size)
    u = L.local_solve(ops, h, f)
    M = ops.L.copy()
    rhs = f.copy()
    M[b.boundary] = 0.0
    M[b.boundary, b.boundary] = 1.0
    rhs[b.boundary] = h
    assert np.abs(u - np.linalg.solve(M, rhs)).max() < 1e-11


def _poisson_series(x, y, terms=20001):
    """-Laplace u = 1 on the unit square with u = 0 on the boundary."""
    m = np.minimum(y, 1 - y)
    u = x * (1 - x) / 2
    for i in range(1, terms, 2):
        u = u - 4 / (np.pi**3 * i**3) * np.sin(i * np.pi * x) * (
            np.exp(-i * np.pi * m) + np.exp(-i * np.pi * (1 - m))) / (1 + np.exp(-i * np.pi))
    return u


def test_constant_source_matches_poisson_series():
    b, ch, ops = _local(SQUARE, "quad", 36, L.PdeCoefficients.helmholtz(1.0, 0.0))
    v = L.particular_flux(ops, np.ones(b.size)).v
    x, y = ch.coords[b.interior, 0], ch.coords[b.interior, 1]
    assert np.abs(v - _poisson_series(x, y)).max() < 1e-8


@settings(max_examples=15, deadline=None)
@given(st.floats(-1e3, 1e3, allow_nan=False))
def test_particular_flux_linear(alpha):
    b, ch, ops = _local(TRI, "triangle", 6, L.PdeCoefficients.helmholtz())
    f = np.cos(np.arange(b.size))
    p1, p2 = L.particular_flux(ops, f), L.particular_flux(ops, alpha * f)
    assert np.allclose(p2.flux, alpha * p1.flux, rtol=1e-13, atol=1e-13 * abs(alpha))


def test_binormal_flux_of_linear_function():
    b, ch, ops = _local(SQUARE, "quad", 6, L.PdeCoefficients.helmholtz())
    flux = ops.flux_rows @ ch.coords[:, 0]
    pos = {int(m): k for k, m in enumerate(b.boundary)}
    east, north = b.edges[1], b.edges[2]
    assert np.allclose([flux[pos[m]] for m in east[1:-1]], 1.0, atol=1e-12)
    assert np.allclose([flux[pos[m]] for m in north[1:-1]], 0.0, atol=1e-12)


def test_fluxes_cancel_across_shared_edge():
    b = B.build_reference_basis("triangle", 14)
    P = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]], float)
    c1 = G.chart_element(P[[0, 1, 2]], FLAT, b)
    c2 = G.chart_element(P[[1, 3, 2]], FLAT, b)
    u = lambda X: np.sin(X[:, 0]) * np.exp(X[:, 1])
    r1 = L.binormal_derivative_operator(c1, b) @ u(c1.coords)
    r2 = L.binormal_derivative_operator(c2, b) @ u(c2.coords)
    pos = {int(m): k for k, m in enumerate(b.boundary)}
    e1 = [pos[m] for m in b.edges[1]]          # 1 -> 2 in element one
    e2 = [pos[m] for m in b.edges[2]][::-1]    # 2 -> 1 in element two, reversed
    assert np.abs(r1[e1][1:-1] + r2[e2][1:-1]).max() < 1e-10


@pytest.mark.parametrize("kind,verts", [("quad", SQUARE), ("triangle", TRI)])
def test_dtn_annihilates_constants(kind, verts):
    b, ch, ops = _local(verts, kind, 8, L.PdeCoefficients.helmholtz(1.0, 0.0))
    assert np.abs(ops.DtN @ np.ones(len(b.boundary))).max() < 1e-9 * np.abs(ops.DtN).max()
    assert np.abs(ops.flux_rows @ np.ones(b.size)).max() < 1e-10


def test_corner_direction_sums_edge_binormals():
    b = B.build_reference_basis("quad", 4)
    ch = G.chart_element(SQUARE, FLAT, b)
    d = L.binormal_directions(ch, b)
    pos = {int(m): k for k, m in enumerate(b.boundary)}
    # vertex 2 = (1, 1): east + north
    assert np.allclose(d[pos[b.edges[1][-1]]], [1, 1, 0])


def test_singular_interior_block_detected():
    coeffs = L.PdeCoefficients(a=None, b=None, c=None)
    b = B.build_reference_basis("quad", 4)
    ch = G.chart_element(SQUARE, FLAT, b)
    with pytest.raises(L.LocalError):
        L.assemble_local(ch, coeffs, b)


def test_local_solve_shape_errors():
    b, ch, ops = _local(SQUARE, "quad", 4, L.PdeCoefficients.helmholtz())
    with pytest.raises(L.LocalError):
        L.local_solve(ops, np.zeros(3))
    with pytest.raises(L.LocalError):
        L.local_solve(ops, np.zeros(len(b.boundary)), np.zeros(5))


def test_variable_coefficients_callable():
    coeffs = L.PdeCoefficients(a=-1.0, c=lambda X: 1.0 + X[:, 0] ** 2)
    b, ch, ops = _local(SQUARE, "quad", 10, coeffs)
    x, y = ch.coords[:, 0], ch.coords[:, 1]
    u = np.sin(x) * np.cos(y)
    expect = 2 * u + (1 + x**2) * u
    assert np.abs(ops.L @ u - expect).max() < 1e-8
