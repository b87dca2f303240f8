"""Reference-element machinery: Chebyshev grids, Jacobi/Dubiner polynomials,
simplex nodes and nodal differentiation matrices for quads and triangles."""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.linalg as sla
from scipy.special import roots_jacobi, roots_legendre


class BasisError(ValueError):
    pass


@dataclass(frozen=True)
class Grid1D:
    order: int
    points: np.ndarray


def chebyshev_lobatto(n):
    """Chebyshev--Lobatto points cos(k*pi/n), k = 0..n (decreasing)."""
    n = int(n)
    if n < 1:
        raise BasisError(f"Chebyshev-Lobatto grid needs n >= 1, got {n}")
    k = np.arange(n + 1)
    # sin form of cos(k pi / n): odd in k -> n-k, so the grid is exactly symmetric
    x = np.sin(np.pi * (n - 2 * k) / (2 * n))
    return Grid1D(n, x)


def chebyshev_diff_matrix(n):
    """Collocation derivative matrix on the Chebyshev-Lobatto grid.

    Off-diagonal entries use the closed form; the diagonal is the negative row
    sum so that constants are annihilated to round-off.
    """
    x = chebyshev_lobatto(n).points
    c = np.ones(n + 1)
    c[0] = c[-1] = 2.0
    c *= (-1.0) ** np.arange(n + 1)
    dx = x[:, None] - x[None, :]
    D = np.outer(c, 1.0 / c) / (dx + np.eye(n + 1))
    D -= np.diag(D.sum(axis=1))
    return D


def clenshaw_curtis_weights(n):
    """Quadrature weights on the Chebyshev-Lobatto grid (exact to degree n)."""
    theta = np.pi * np.arange(n + 1) / n
    w = np.zeros(n + 1)
    v = np.ones(n - 1)
    inner = slice(1, n)
    if n % 2 == 0:
        w[0] = w[n] = 1.0 / (n**2 - 1)
        for k in range(1, n // 2):
            v -= 2.0 * np.cos(2 * k * theta[inner]) / (4 * k**2 - 1)
        v -= np.cos(n * theta[inner]) / (n**2 - 1)
    else:
        w[0] = w[n] = 1.0 / n**2
        for k in range(1, (n - 1) // 2 + 1):
            v -= 2.0 * np.cos(2 * k * theta[inner]) / (4 * k**2 - 1)
    w[inner] = 2.0 * v / n
    return w


def jacobi_eval(alpha, beta, m, x):
    """Jacobi polynomial P_m^(alpha, beta)(x) by three-term recurrence."""
    x = np.asarray(x, dtype=float)
    p0 = np.ones_like(x)
    if m == 0:
        return p0 if x.ndim else float(p0)
    a, b = float(alpha), float(beta)
    p1 = 0.5 * ((a + b + 2.0) * x + (a - b))
    for k in range(1, m):
        s = 2 * k + a + b
        c1 = 2.0 * (k + 1) * (k + a + b + 1) * s
        c2 = (s + 1) * (a * a - b * b)
        c3 = s * (s + 1) * (s + 2)
        c4 = 2.0 * (k + a) * (k + b) * (s + 2)
        p0, p1 = p1, ((c2 + c3 * x) * p1 - c4 * p0) / c1
    return p1 if x.ndim else float(p1)


def jacobi_deriv(alpha, beta, m, x):
    if m == 0:
        return np.zeros_like(np.asarray(x, dtype=float))
    return 0.5 * (m + alpha + beta + 1) * jacobi_eval(alpha + 1, beta + 1, m - 1, x)


def dubiner_constant(i, j):
    # Orthonormalizing constant on {xi, eta >= 0, xi + eta <= 1}.
    return np.sqrt(2.0 * (2 * i + 1) * (i + j + 1))


def _collapsed_legendre(i, xi, eta):
    """(1-eta)^i P_i(2 xi/(1-eta) - 1) and its xi/eta partials.

    Evaluated through the homogeneous form of the Legendre recurrence, so the
    collapsed vertex eta = 1 needs no special treatment.
    """
    x = 2.0 * xi - 1.0 + eta
    y = 1.0 - eta
    p_prev, p = np.ones_like(x), x
    dxi_prev, dxi = np.zeros_like(x), 2.0 * np.ones_like(x)
    deta_prev, deta = np.zeros_like(x), np.ones_like(x)
    if i == 0:
        return p_prev, dxi_prev, deta_prev
    for k in range(1, i):
        y2 = y * y
        p_next = ((2 * k + 1) * x * p - k * y2 * p_prev) / (k + 1)
        dxi_next = ((2 * k + 1) * (2.0 * p + x * dxi) - k * y2 * dxi_prev) / (k + 1)
        deta_next = ((2 * k + 1) * (p + x * deta)
                     - k * (-2.0 * y * p_prev + y2 * deta_prev)) / (k + 1)
        p_prev, p = p, p_next
        dxi_prev, dxi = dxi, dxi_next
        deta_prev, deta = deta, deta_next
    return p, dxi, deta


def dubiner_eval(n, i, j, xi, eta, derivative=False):
    """Orthonormal Dubiner polynomial phi_ij on the reference triangle.

    With ``derivative=True`` returns ``(phi, dphi/dxi, dphi/deta)``.
    """
    if i < 0 or j < 0 or i + j > n:
        raise BasisError(f"Dubiner index ({i}, {j}) not admissible for order {n}")
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    c = dubiner_constant(i, j)
    p, p_xi, p_eta = _collapsed_legendre(i, xi, eta)
    s = 2.0 * eta - 1.0
    q = jacobi_eval(2 * i + 1, 0, j, s)
    val = c * p * q
    if not derivative:
        return val
    dq = 2.0 * jacobi_deriv(2 * i + 1, 0, j, s)
    return val, c * p_xi * q, c * (p_eta * q + p * dq)


def dubiner_indices(n):
    return [(i, j) for i in range(n + 1) for j in range(n + 1 - i)]


def dubiner_vandermonde(n, xi, eta):
    """Returns (K, K_xi, K_eta) with K[m, k] = phi_k(node m)."""
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    idx = dubiner_indices(n)
    K = np.empty((xi.size, len(idx)))
    Kx = np.empty_like(K)
    Ke = np.empty_like(K)
    for k, (i, j) in enumerate(idx):
        K[:, k], Kx[:, k], Ke[:, k] = dubiner_eval(n, i, j, xi, eta, derivative=True)
    return K, Kx, Ke


@dataclass(frozen=True)
class SimplexNodes:
    order: int
    points: np.ndarray          # (N, 2) reference coordinates (xi, eta)
    multi_index: np.ndarray     # (N, 3) barycentric lattice index
    on_boundary: np.ndarray     # (N,) bool
    edges: tuple                # per edge: node indices ordered from start vertex

    @property
    def count(self):
        return self.points.shape[0]


def _seed_family(n):
    # 1D Chebyshev-Lobatto family on [0, 1], increasing
    if n == 0:
        return np.array([0.5])
    x = 0.5 * (1.0 - chebyshev_lobatto(n).points)
    x[0], x[-1] = 0.0, 1.0
    return x


def _recursive_barycentric(alpha):
    """Barycentric coordinates of lattice index ``alpha`` (recursive warp)."""
    n = sum(alpha)
    d = len(alpha) - 1
    xn = _seed_family(n)
    if d == 1:
        return np.array([xn[alpha[0]], xn[alpha[1]]])
    b = np.zeros(d + 1)
    weight = 0.0
    for i in range(d + 1):
        rest = alpha[:i] + alpha[i + 1:]
        w = xn[n - alpha[i]]
        if w == 0.0:
            continue
        br = _recursive_barycentric(rest)
        b[:i] += w * br[:i]
        b[i + 1:] += w * br[i:]
        weight += w
    return b / weight


@lru_cache(maxsize=None)
def simplex_nodes(n):
    """Unisolvent nodes on the reference triangle with Chebyshev edge traces.

    Vertices are (0,0), (1,0), (0,1). Node m has lattice index
    alpha = (n-i-j, i, j), enumerated with j outer and i inner.
    """
    n = int(n)
    if n < 1:
        raise BasisError(f"simplex nodes need n >= 1, got {n}")
    alphas = [(n - i - j, i, j) for j in range(n + 1) for i in range(n + 1 - j)]
    pts = np.empty((len(alphas), 2))
    for m, a in enumerate(alphas):
        b = _recursive_barycentric(a)
        pts[m] = b[1], b[2]
    A = np.array(alphas)
    on_b = (A == 0).any(axis=1)
    lookup = {a: m for m, a in enumerate(alphas)}
    # edge 0: v0 -> v1 (eta = 0); edge 1: v1 -> v2; edge 2: v2 -> v0 (xi = 0)
    e0 = tuple(lookup[(n - k, k, 0)] for k in range(n + 1))
    e1 = tuple(lookup[(0, n - k, k)] for k in range(n + 1))
    e2 = tuple(lookup[(k, 0, n - k)] for k in range(n + 1))
    pts.setflags(write=False)
    return SimplexNodes(n, pts, A, on_b, (e0, e1, e2))


@dataclass(frozen=True)
class ReferenceBasis:
    """Nodes and nodal differentiation on the reference square or triangle.

    Quad nodes are the tensor grid with the xi index running fastest:
    node ``j*(n+1) + i`` sits at ``(x[i], x[j])`` with ``x`` the decreasing
    Chebyshev-Lobatto points. ``edges[e]`` lists the node indices of local
    edge ``e`` ordered from its start vertex to its end vertex.
    """

    kind: str
    order: int
    points: np.ndarray
    D_xi: np.ndarray
    D_eta: np.ndarray
    interior: np.ndarray
    boundary: np.ndarray
    edges: tuple
    weights: np.ndarray          # nodal quadrature weights on the reference element
    vertices_ref: np.ndarray     # reference coordinates of the element vertices
    K: np.ndarray = None         # Dubiner Vandermonde (triangle only)
    K_xi: np.ndarray = None
    K_eta: np.ndarray = None
    D1: np.ndarray = None        # 1D Chebyshev matrix (quad only)
    _lu: tuple = field(default=None, repr=False)

    @property
    def size(self):
        return self.points.shape[0]

    def interpolation_matrix(self, xi, eta):
        """Rows map nodal values to values at the given reference points."""
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        eta = np.atleast_1d(np.asarray(eta, dtype=float))
        if self.kind == "quad":
            x = chebyshev_lobatto(self.order).points
            Lx = _lagrange_1d(x, xi)
            Ly = _lagrange_1d(x, eta)
            # node j*(n+1)+i -> Ly[:, j] * Lx[:, i]
            return (Ly[:, :, None] * Lx[:, None, :]).reshape(xi.size, -1)
        V, _, _ = dubiner_vandermonde(self.order, xi, eta)
        # V K^{-1} evaluated as (K^{-T} V^T)^T
        return sla.lu_solve(self._lu, V.T, trans=1).T

    def lagrange(self, m, xi, eta):
        return self.interpolation_matrix(xi, eta)[:, m]


def _lagrange_1d(nodes, x):
    """Barycentric Lagrange evaluation matrix, shape (len(x), len(nodes))."""
    n = nodes.size - 1
    w = (-1.0) ** np.arange(n + 1)
    w[0] *= 0.5
    w[-1] *= 0.5
    diff = x[:, None] - nodes[None, :]
    exact = np.isclose(diff, 0.0, atol=1e-15, rtol=0.0)
    diff[exact] = 1.0
    M = w / diff
    M /= M.sum(axis=1, keepdims=True)
    rows = exact.any(axis=1)
    M[rows] = exact[rows].astype(float)
    return M


def _quad_basis(n):
    x = chebyshev_lobatto(n).points
    D = chebyshev_diff_matrix(n)
    I = np.eye(n + 1)
    D_xi = np.kron(I, D)
    D_eta = np.kron(D, I)
    XI, ETA = np.meshgrid(x, x)          # ETA varies with row j, XI with column i
    pts = np.column_stack([XI.ravel(), ETA.ravel()])
    ii, jj = np.meshgrid(np.arange(n + 1), np.arange(n + 1))
    ii, jj = ii.ravel(), jj.ravel()
    on_b = (ii == 0) | (ii == n) | (jj == 0) | (jj == n)
    node = lambda i, j: j * (n + 1) + i
    # x[0] = +1, x[n] = -1; vertices (-1,-1), (1,-1), (1,1), (-1,1)
    e0 = tuple(node(n - k, n) for k in range(n + 1))      # eta = -1, xi: -1 -> 1
    e1 = tuple(node(0, n - k) for k in range(n + 1))      # xi = 1, eta: -1 -> 1
    e2 = tuple(node(k, 0) for k in range(n + 1))          # eta = 1, xi: 1 -> -1
    e3 = tuple(node(n, k) for k in range(n + 1))          # xi = -1, eta: 1 -> -1
    w1 = clenshaw_curtis_weights(n)
    weights = np.outer(w1, w1).ravel()
    verts = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])
    return ReferenceBasis(
        "quad", n, pts, D_xi, D_eta,
        np.flatnonzero(~on_b), np.flatnonzero(on_b), (e0, e1, e2, e3),
        weights, verts, D1=D,
    )


def _triangle_basis(n):
    nodes = simplex_nodes(n)
    xi, eta = nodes.points[:, 0], nodes.points[:, 1]
    K, Kx, Ke = dubiner_vandermonde(n, xi, eta)
    try:
        lu = sla.lu_factor(K, check_finite=True)
    except (ValueError, sla.LinAlgError) as exc:
        raise BasisError(f"singular Dubiner Vandermonde at order {n}") from exc
    if np.min(np.abs(np.diag(lu[0]))) < 1e-13 * np.max(np.abs(np.diag(lu[0]))):
        raise BasisError(f"singular Dubiner Vandermonde at order {n}")
    # D = K_x K^{-1}  <=>  K^T D^T = K_x^T
    D_xi = sla.lu_solve(lu, Kx.T, trans=1).T
    D_eta = sla.lu_solve(lu, Ke.T, trans=1).T
    # int phi_k over the triangle is delta_k0 / sqrt(2), so w = K^{-T} e_0 / sqrt(2)
    e0 = np.zeros(K.shape[0])
    e0[0] = 1.0 / np.sqrt(2.0)
    weights = sla.lu_solve(lu, e0, trans=1)
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    return ReferenceBasis(
        "triangle", n, nodes.points, D_xi, D_eta,
        np.flatnonzero(~nodes.on_boundary), np.flatnonzero(nodes.on_boundary),
        nodes.edges, weights, verts, K=K, K_xi=Kx, K_eta=Ke, _lu=lu,
    )


@lru_cache(maxsize=None)
def build_reference_basis(kind, n):
    """Reference basis for ``kind`` in {"quad", "triangle"} at order ``n >= 2``."""
    n = int(n)
    if n < 2:
        raise BasisError(f"reference basis needs n >= 2 so that an interior exists, got {n}")
    if kind in ("quad", "quadrilateral"):
        return _quad_basis(n)
    if kind in ("tri", "triangle"):
        return _triangle_basis(n)
    raise BasisError(f"unknown element kind {kind!r}")


@lru_cache(maxsize=None)
def reference_cells(kind, n):
    """Sub-cells of the reference node lattice as local node indices."""
    cells = []
    if kind == "quad":
        node = lambda i, j: j * (n + 1) + i
        for j in range(n):
            for i in range(n):
                # x decreases with i, so this order is counter-clockwise in (xi, eta)
                cells.append((node(i + 1, j + 1), node(i, j + 1), node(i, j), node(i + 1, j)))
        return tuple(cells)
    idx = {(int(m[1]), int(m[2])): k for k, m in enumerate(simplex_nodes(n).multi_index)}
    for j in range(n):
        for i in range(n - j):
            cells.append((idx[i, j], idx[i + 1, j], idx[i, j + 1]))
            if i + j < n - 1:
                cells.append((idx[i + 1, j], idx[i + 1, j + 1], idx[i, j + 1]))
    return tuple(cells)


def lagrange_from_dubiner(basis, m, xi, eta):
    """Lagrange cardinal function of node ``m`` built from the Dubiner expansion."""
    if basis.kind != "triangle":
        raise BasisError("lagrange_from_dubiner applies to triangle bases")
    if not 0 <= m < basis.size:
        raise BasisError(f"node index {m} out of range")
    out = basis.lagrange(m, xi, eta)
    return out if np.ndim(xi) else float(out[0])


def triangle_quadrature(order):
    """Collapsed Gauss-Jacobi rule on the reference triangle, exact to ``order``."""
    q = order // 2 + 1
    a, wa = roots_legendre(q)
    b, wb = roots_jacobi(q, 1.0, 0.0)
    A, B = np.meshgrid(a, b, indexing="ij")
    W = np.outer(wa, wb)
    eta = 0.5 * (1.0 + B)
    xi = 0.5 * (1.0 + A) * (1.0 - eta)
    # dxi deta = (1-eta)/2 * da * deta, (1-eta) = (1-b)/2, deta = db/2
    return xi.ravel(), eta.ravel(), (W / 8.0).ravel()


def square_quadrature(order):
    q = order // 2 + 1
    x, w = roots_legendre(q)
    X, Y = np.meshgrid(x, x, indexing="ij")
    return X.ravel(), Y.ravel(), np.outer(w, w).ravel()
