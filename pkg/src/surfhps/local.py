"""Per-element collocation operators: surface operator L, solution
operator S, binormal flux rows and the element DtN map."""

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla


class LocalError(RuntimeError):
    pass


def _field(value, x, shape):
    if value is None:
        return None
    if callable(value):
        out = np.asarray(value(x), dtype=float)
    else:
        out = np.asarray(value, dtype=float)
    return np.broadcast_to(out, shape) if out.shape != shape else out


@dataclass(frozen=True)
class PdeCoefficients:
    """Coefficients of  sum a_ij D_i D_j u + sum b_i D_i u + c u.

    Each field is ``None`` (absent), a constant, or a callable of the
    node coordinates (N, 3). ``a`` may be a scalar (isotropic, a_ij =
    a delta_ij) or a full (N, 3, 3) field; ``b`` is (N, 3); ``c`` is (N,).
    """

    a: object = None
    b: object = None
    c: object = None

    @classmethod
    def helmholtz(cls, diffusion=1.0, shift=1.0):
        """-diffusion * Laplace-Beltrami + shift."""
        return cls(a=-float(diffusion), c=float(shift) if shift else None)

    @property
    def isotropic(self):
        return self.a is None or (not callable(self.a) and np.ndim(self.a) == 0)

    @property
    def pure_second_order(self):
        def zero(v):
            return v is None or (not callable(v) and not np.any(np.asarray(v)))
        return zero(self.b) and zero(self.c)


@dataclass
class ParticularData:
    v: np.ndarray         # interior particular solution
    flux: np.ndarray      # binormal flux of [v; 0] at the boundary nodes


@dataclass
class LocalOperators:
    element: int
    L: np.ndarray
    interior: np.ndarray
    boundary: np.ndarray
    lu: tuple = field(repr=False)
    S: np.ndarray = field(repr=False)
    flux_rows: np.ndarray = field(repr=False)   # (|b|, N)
    DtN: np.ndarray = field(repr=False)

    @property
    def size(self):
        return self.L.shape[0]


def surface_derivative_matrices(chart, basis):
    """The three matrices D^Gamma_{x_j} = sum_i M[d xi_i / d x_j] D_{xi_i}."""
    G = chart.grad_coeff
    return [G[:, j, 0, None] * basis.D_xi + G[:, j, 1, None] * basis.D_eta for j in range(3)]


def assemble_operator(chart, coeffs, basis, Dg=None):
    """Dense collocation matrix of the surface operator on one element."""
    if Dg is None:
        Dg = surface_derivative_matrices(chart, basis)
    x = chart.coords
    N = x.shape[0]
    L = np.zeros((N, N))
    if coeffs.a is not None:
        if coeffs.isotropic:
            a = float(coeffs.a)
            for j in range(3):
                L += a * (Dg[j] @ Dg[j])
        else:
            A = _field(coeffs.a, x, (N, 3, 3))
            for i in range(3):
                for j in range(3):
                    if np.any(A[:, i, j]):
                        L += A[:, i, j, None] * (Dg[i] @ Dg[j])
    B = _field(coeffs.b, x, (N, 3))
    if B is not None:
        for i in range(3):
            L += B[:, i, None] * Dg[i]
    C = _field(coeffs.c, x, (N,))
    if C is not None:
        L[np.diag_indices(N)] += C
    if not np.all(np.isfinite(L)):
        raise LocalError(f"element {chart.element}: non-finite operator entries")
    return L


def edge_binormals(chart, basis):
    """Outward unit binormal per local edge, sampled at that edge's nodes.

    Returns a list of (node indices, (len, 3) vectors).
    """
    Xx, Xe = chart.d_xi, chart.d_eta
    N = np.cross(Xx, Xe)
    if basis.kind == "quad":
        tangents = [Xx, Xe, -Xx, -Xe]
    else:
        tangents = [Xx, Xe - Xx, -Xe]
    out = []
    for e, nodes in enumerate(basis.edges):
        nodes = np.asarray(nodes)
        nb = np.cross(tangents[e][nodes], N[nodes])
        nb /= np.linalg.norm(nb, axis=1, keepdims=True)
        out.append((nodes, nb))
    return out


def binormal_directions(chart, basis):
    """Flux direction per boundary node (ordered as ``basis.boundary``).

    Edge nodes use the edge binormal. A corner node belongs to two edges
    and uses the sum of both outward binormals, so the fluxes of all
    elements around a mesh vertex add up to a consistent conservation
    statement at that vertex.
    """
    pos = {int(m): k for k, m in enumerate(basis.boundary)}
    d = np.zeros((len(basis.boundary), 3))
    for nodes, nb in edge_binormals(chart, basis):
        for m, v in zip(nodes, nb):
            d[pos[int(m)]] += v
    return d


def binormal_derivative_operator(chart, basis, Dg=None):
    """Rows computing n_b . grad_Gamma u at every boundary node."""
    if Dg is None:
        Dg = surface_derivative_matrices(chart, basis)
    d = binormal_directions(chart, basis)
    b = basis.boundary
    rows = np.zeros((len(b), basis.size))
    for j in range(3):
        rows += d[:, j, None] * Dg[j][b]
    return rows


def assemble_local(chart, coeffs, basis):
    """Operator, Schur solution operator and DtN map of one element."""
    if chart.coords.shape[0] != basis.size:
        raise LocalError("chart and basis node counts differ")
    Dg = surface_derivative_matrices(chart, basis)
    L = assemble_operator(chart, coeffs, basis, Dg)
    ii, bb = basis.interior, basis.boundary
    Lii = L[np.ix_(ii, ii)]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu = sla.lu_factor(Lii, check_finite=False)
    piv = np.abs(np.diag(lu[0]))
    if piv.size and not piv.min() > 1e-14 * piv.max():
        ratio = piv.min() / piv.max() if piv.max() > 0 else 0.0
        raise LocalError(f"element {chart.element}: singular interior block "
                         f"(pivot ratio {ratio:.2e})")
    S = -sla.lu_solve(lu, L[np.ix_(ii, bb)], check_finite=False)
    rows = binormal_derivative_operator(chart, basis, Dg)
    DtN = rows[:, ii] @ S + rows[:, bb]
    return LocalOperators(chart.element, L, ii, bb, lu, S, rows, DtN)


def _interior_rhs(ops, f):
    f = np.asarray(f, dtype=float)
    if f.shape[0] == ops.size:
        return f[ops.interior]
    if f.shape[0] == len(ops.interior):
        return f
    raise LocalError(f"rhs has length {f.shape[0]}, expected {ops.size} or {len(ops.interior)}")


def local_solve(ops, h, f=None):
    """Full nodal vector with boundary values h and interior from the PDE."""
    h = np.asarray(h, dtype=float)
    if h.shape[0] != len(ops.boundary):
        raise LocalError(f"boundary data has length {h.shape[0]}, expected {len(ops.boundary)}")
    u = np.empty(ops.size)
    u[ops.boundary] = h
    ui = ops.S @ h
    if f is not None:
        ui = ui + sla.lu_solve(ops.lu, _interior_rhs(ops, f), check_finite=False)
    u[ops.interior] = ui
    return u


def particular_flux(ops, f):
    v = sla.lu_solve(ops.lu, _interior_rhs(ops, f), check_finite=False)
    return ParticularData(v, ops.flux_rows[:, ops.interior] @ v)
