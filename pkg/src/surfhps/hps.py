"""Hierarchical Poincare-Steklov direct solver over a binary merge tree.

Skeleton nodes carry global ids shared by every element that touches
them. A node's flux is the sum of the binormal derivatives of all
elements in a subtree that contain it; once every incident element sits
inside one subtree, the node is eliminated there by setting that flux to
zero. Nodes on the exterior boundary keep Dirichlet data to the root.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .geometry import ChartError, chart_from_coords, orientation_signs, reference_map
from .local import LocalError, assemble_local

log = logging.getLogger(__name__)


class HpsError(RuntimeError):
    pass


# ---------------------------------------------------------------- numbering

class DofMap:
    """Global node ids for every (element, local node) pair.

    Vertex nodes reuse the mesh vertex id; edge-interior nodes are
    numbered per edge from its lower-id vertex; element interiors follow.
    """

    def __init__(self, mesh, basis):
        if mesh.kind != basis.kind:
            raise HpsError(f"mesh is {mesh.kind} but basis is {basis.kind}")
        n = basis.order
        V, E, K = mesh.n_vertices, mesh.n_edges, mesh.n_elements
        k = mesh.elements.shape[1]
        nint = len(basis.interior)
        gid = np.empty((K, basis.size), dtype=np.int64)
        inner = np.arange(1, n)
        for el in range(K):
            verts = mesh.elements[el]
            for e in range(k):
                nodes = np.asarray(basis.edges[e])
                a, b = int(verts[e]), int(verts[(e + 1) % k])
                eid = int(mesh.element_edges[el, e])
                gid[el, nodes[0]] = a
                gid[el, nodes[-1]] = b
                pos = inner if a < b else n - inner
                gid[el, nodes[1:-1]] = V + eid * (n - 1) + pos - 1
            gid[el, basis.interior] = V + E * (n - 1) + el * nint + np.arange(nint)
        self.mesh, self.basis = mesh, basis
        self.gid = gid
        self.n_nodes = V + E * (n - 1) + K * nint
        self.incidence = np.bincount(gid.ravel(), minlength=self.n_nodes)
        dirichlet = np.zeros(self.n_nodes, dtype=bool)
        for eid in mesh.boundary_edges:
            edge = mesh.edges[eid]
            el, le = edge.elements[0], edge.local[0]
            dirichlet[gid[el, np.asarray(basis.edges[le])]] = True
        self.dirichlet = dirichlet
        skeleton = np.zeros(self.n_nodes, dtype=bool)
        skeleton[gid[:, basis.boundary].ravel()] = True
        self.skeleton = skeleton

    @property
    def dirichlet_nodes(self):
        return np.flatnonzero(self.dirichlet)


class Discretization:
    """Mesh + basis + global node coordinates and per-element charts."""

    def __init__(self, mesh, basis, projector=None, coords=None, dofs=None):
        self.mesh, self.basis = mesh, basis
        self.dofs = dofs if dofs is not None else DofMap(mesh, basis)
        if coords is None:
            if projector is None:
                raise HpsError("need a projector or node coordinates")
            coords = np.empty((self.dofs.n_nodes, 3))
            for el, verts in enumerate(mesh.elements):
                coords[self.dofs.gid[el]] = projector(reference_map(basis, mesh.vertices[verts]))
        self.coords = np.asarray(coords, dtype=float)
        self.charts = [chart_from_coords(self.coords[g], basis, el)
                       for el, g in enumerate(self.dofs.gid)]
        ls = getattr(projector, "level_set", None)
        if ls is not None:
            self._check_orientation(ls, getattr(projector, "t", 0.0))
        w = np.zeros(self.dofs.n_nodes)
        for el, g in enumerate(self.dofs.gid):
            np.add.at(w, g, basis.weights * self.charts[el].volume)
        self.weights = w

    def _check_orientation(self, level_set, t):
        signs = [orientation_signs(ch, level_set, t) for ch in self.charts]
        ref = signs[0][0]
        for el, side in enumerate(signs):
            if np.any(side != ref):
                raise ChartError(f"element {el}: chart folds over itself or is inverted "
                                 "(normals reverse against the surface); refine the mesh")

    def with_coords(self, coords):
        return Discretization(self.mesh, self.basis, coords=coords, dofs=self.dofs)

    @property
    def n_nodes(self):
        return self.dofs.n_nodes

    @property
    def area(self):
        return float(self.weights.sum())

    def integrate(self, u):
        return float(self.weights @ u)


# ---------------------------------------------------------------- tree

@dataclass
class TreeNode:
    id: int
    elements: np.ndarray
    children: tuple = ()
    level: int = 0


def _shares_edge(mesh, left, right):
    return bool(np.intersect1d(mesh.element_edges[left].ravel(),
                               mesh.element_edges[right].ravel()).size)


def _element_adjacency(mesh):
    adj = [[] for _ in range(mesh.n_elements)]
    for edge in mesh.edges:
        if len(edge.elements) == 2:
            a, b = edge.elements
            adj[a].append(b)
            adj[b].append(a)
    return adj


def _components(elements, adj):
    members = set(int(e) for e in elements)
    comps = []
    while members:
        start = min(members)
        stack, comp = [start], {start}
        members.discard(start)
        while stack:
            e = stack.pop()
            for nb in adj[e]:
                if nb in members:
                    members.discard(nb)
                    comp.add(nb)
                    stack.append(nb)
        comps.append(sorted(comp))
    return comps


def _bisect(elements, cent, adj):
    """Split into two halves that stay edge-connected when the input is.

    The left half grows from the extreme element along the axis of largest
    centroid spread, always absorbing the frontier element lowest on that
    axis; stray pieces of the remainder are then handed back to the left.
    """
    import heapq

    pts = cent[elements]
    ax = int(np.argmax(pts.max(0) - pts.min(0)))
    key = {int(e): (cent[e, ax], int(e)) for e in elements}
    members = set(key)
    half = len(elements) // 2
    start = min(members, key=key.get)
    heap, left, queued = [(key[start], start)], [], {start}
    while heap and len(left) < half:
        _, e = heapq.heappop(heap)
        left.append(e)
        for nb in adj[e]:
            if nb in members and nb not in queued:
                queued.add(nb)
                heapq.heappush(heap, (key[nb], nb))
    if len(left) < half:   # disconnected input: fill by axis order
        rest = sorted(members - set(left), key=key.get)
        left += rest[:half - len(left)]
    right = sorted(members - set(left))
    comps = _components(right, adj)
    if len(comps) > 1:
        comps.sort(key=len)
        for c in comps[:-1]:
            left += c
        right = comps[-1]
    return np.array(sorted(left), dtype=np.int64), np.array(right, dtype=np.int64)


def build_tree(mesh, strategy="bisection"):
    """Binary merge tree in post-order (root last).

    ``strategy`` is ``"bisection"`` or an explicit nested 2-tuple of element
    ids. Bisection grows one half by breadth-first search from the extreme
    element along the axis of largest centroid spread, so both halves stay
    edge-connected.
    """
    nodes = []

    def add(elements, children):
        level = 0 if not children else 1 + max(nodes[c].level for c in children)
        nodes.append(TreeNode(len(nodes), np.asarray(sorted(elements), dtype=np.int64),
                              tuple(children), level))
        return len(nodes) - 1

    if isinstance(strategy, str):
        if strategy != "bisection":
            raise HpsError(f"unknown partition strategy {strategy!r}")
        cent = mesh.centroids()
        adj = _element_adjacency(mesh)

        def split(elements):
            if len(elements) == 1:
                return add(elements, ())
            left, right = _bisect(elements, cent, adj)
            if not _shares_edge(mesh, left, right):
                raise HpsError(f"cannot bisect {len(elements)} elements into edge-adjacent halves")
            a, b = split(left), split(right)
            return add(np.concatenate([left, right]), (a, b))

        split(np.arange(mesh.n_elements))
        return nodes

    seen = []

    def walk(t):
        if isinstance(t, (int, np.integer)):
            el = int(t)
            if not 0 <= el < mesh.n_elements:
                raise HpsError(f"tree references element {el} outside the mesh")
            seen.append(el)
            return add([el], ())
        if len(t) != 2:
            raise HpsError("explicit tree nodes must have exactly two children")
        a, b = walk(t[0]), walk(t[1])
        if not _shares_edge(mesh, nodes[a].elements, nodes[b].elements):
            raise HpsError(f"children {nodes[a].elements.tolist()} and "
                           f"{nodes[b].elements.tolist()} share no interface")
        return add(np.concatenate([nodes[a].elements, nodes[b].elements]), (a, b))

    walk(strategy)
    if sorted(seen) != list(range(mesh.n_elements)):
        raise HpsError("explicit tree must contain every element exactly once")
    return nodes


# ---------------------------------------------------------------- merge

@dataclass
class MergeData:
    """One internal tree node after the upward build."""

    interface: np.ndarray          # eliminated global ids (s)
    boundary: np.ndarray           # remaining global ids (B)
    counts: np.ndarray             # incident elements inside the subtree, per B entry
    maps: tuple                    # per child: (pos_in_child_s, s_idx, pos_in_child_b, b_idx)
    lu: tuple = field(repr=False, default=None)
    S_glue: np.ndarray = field(repr=False, default=None)
    DtN: np.ndarray = field(repr=False, default=None)
    Q: np.ndarray = field(repr=False, default=None)
    svd: tuple = field(repr=False, default=None)


def merge(children, incidence, dirichlet, nullspace=False):
    """Glue child DtN maps.

    ``children`` is a sequence of (boundary ids, counts, DtN). Interface
    nodes are those whose incident elements are all inside the union and
    which carry no Dirichlet data. Returns a :class:`MergeData` with

        S_glue = -A^{-1} R,   DtN = T_bb + Q S_glue,

    where A, R, T_bb, Q are the child DtN blocks scattered onto (s, B).
    """
    ids = np.concatenate([c[0] for c in children])
    cnts = np.concatenate([c[1] for c in children])
    U, inv = np.unique(ids, return_inverse=True)
    cnt = np.zeros(len(U), dtype=np.int64)
    np.add.at(cnt, inv, cnts)
    is_s = (cnt == incidence[U]) & ~dirichlet[U]
    if not is_s.any():
        raise HpsError("merged children share no eliminable interface nodes")
    s, B = U[is_s], U[~is_s]
    loc = np.empty(len(U), dtype=np.int64)
    loc[is_s] = np.arange(len(s))
    loc[~is_s] = np.arange(len(B))
    ns, nb = len(s), len(B)
    A = np.zeros((ns, ns))
    R = np.zeros((ns, nb))
    Tbb = np.zeros((nb, nb))
    Q = np.zeros((nb, ns))
    maps = []
    start = 0
    for ids_c, _, T in children:
        u = inv[start:start + len(ids_c)]
        start += len(ids_c)
        in_s = is_s[u]
        cs, cb = np.flatnonzero(in_s), np.flatnonzero(~in_s)
        si, bi = loc[u[cs]], loc[u[cb]]
        A[np.ix_(si, si)] += T[np.ix_(cs, cs)]
        R[np.ix_(si, bi)] += T[np.ix_(cs, cb)]
        Tbb[np.ix_(bi, bi)] += T[np.ix_(cb, cb)]
        Q[np.ix_(bi, si)] += T[np.ix_(cb, cs)]
        maps.append((cs, si, cb, bi))
    data = MergeData(s, B, cnt[~is_s], tuple(maps), Q=Q)
    if nullspace:
        if nb:
            raise HpsError("nullspace handling only applies at a closed-surface root")
        U_, sig, Vt = np.linalg.svd(A)
        data.svd = (U_, sig, Vt)
        data.S_glue = np.zeros((ns, 0))
        data.DtN = np.zeros((0, 0))
        return data
    lu = sla.lu_factor(A, check_finite=False)
    piv = np.abs(np.diag(lu[0]))
    if piv.min() <= 1e-13 * piv.max():
        cond = np.linalg.cond(A)
        raise HpsError(f"singular interface system of size {ns} (condition estimate {cond:.2e})")
    data.lu = lu
    data.S_glue = -sla.lu_solve(lu, R, check_finite=False)
    data.DtN = Tbb + Q @ data.S_glue
    return data


# ---------------------------------------------------------------- solver

@dataclass
class BuildStats:
    leaf_time: float = 0.0
    merge_time: float = 0.0
    factorizations: int = 0
    peak_interface: int = 0
    peak_boundary: int = 0

    @property
    def total_time(self):
        return self.leaf_time + self.merge_time


class HpsSolver:
    """Direct solver for one operator on one discretization.

    Build once, then call :meth:`solve` for any number of right-hand
    sides and Dirichlet data.
    """

    def __init__(self, disc, coeffs, tree="bisection", nullspace="auto", threads=1,
                 compatibility_tol=1e-3):
        self.disc = disc
        self.coeffs = coeffs
        dofs = disc.dofs
        self.gid = dofs.gid
        self.dirichlet = dofs.dirichlet
        self.n_nodes = dofs.n_nodes
        if nullspace == "auto":
            nullspace = disc.mesh.is_closed and coeffs.pure_second_order
        self.nullspace = bool(nullspace)
        self.compatibility_tol = compatibility_tol
        self.stats = BuildStats()
        self.tree = tree if isinstance(tree, list) else build_tree(disc.mesh, tree)
        self._build_leaves(threads)
        self._build_merges(threads)

    # -- build

    def _build_leaves(self, threads):
        t0 = time.perf_counter()
        basis = self.disc.basis
        K = len(self.disc.charts)

        def one(el):
            return assemble_local(self.disc.charts[el], self.coeffs, basis)

        if threads > 1:
            with ThreadPoolExecutor(threads) as ex:
                ops = list(ex.map(one, range(K)))
        else:
            ops = [one(el) for el in range(K)]
        self.leaf_ops = ops
        ii, bb = basis.interior, basis.boundary
        eye = np.eye(len(ii))
        self.leaf_inv = np.stack([sla.lu_solve(o.lu, eye, check_finite=False) for o in ops])
        self.leaf_S = np.stack([o.S for o in ops])
        self.leaf_flux = np.stack([o.flux_rows for o in ops])
        self.leaf_flux_int = np.ascontiguousarray(self.leaf_flux[:, :, ii])
        self.leaf_b = self.gid[:, bb]
        self.leaf_i = self.gid[:, ii]
        self.stats.factorizations += K
        self.stats.leaf_time = time.perf_counter() - t0

    def _build_merges(self, threads):
        t0 = time.perf_counter()
        dofs = self.disc.dofs
        self.data = [None] * len(self.tree)
        # leaf boundary state: (ids, counts, DtN)
        state = {}
        for node in self.tree:
            if not node.children:
                el = int(node.elements[0])
                state[node.id] = (self.leaf_b[el], np.ones(len(self.leaf_b[el]), dtype=np.int64),
                                  self.leaf_ops[el].DtN)
        root = self.tree[-1].id
        levels = sorted({n.level for n in self.tree if n.children})
        for lev in levels:
            batch = [n for n in self.tree if n.children and n.level == lev]

            def one(node):
                kids = [state[c] for c in node.children]
                ns = self.nullspace and node.id == root
                return merge(kids, dofs.incidence, dofs.dirichlet, nullspace=ns)

            if threads > 1 and len(batch) > 1:
                with ThreadPoolExecutor(threads) as ex:
                    results = list(ex.map(one, batch))
            else:
                results = [one(n) for n in batch]
            for node, d in zip(batch, results):
                self.data[node.id] = d
                state[node.id] = (d.boundary, d.counts, d.DtN)
                for c in node.children:
                    state.pop(c)
                self.stats.factorizations += 1
                self.stats.peak_interface = max(self.stats.peak_interface, len(d.interface))
                self.stats.peak_boundary = max(self.stats.peak_boundary, len(d.boundary))
        if len(self.tree) > 1:
            rest = set(self.data[root].boundary.tolist())
        else:
            rest = set(self.leaf_b[0].tolist())
        if rest != set(np.flatnonzero(self.dirichlet).tolist()):
            raise HpsError("root boundary does not coincide with the Dirichlet node set")
        self.stats.merge_time = time.perf_counter() - t0

    # -- solve

    def _nodal(self, v, name):
        if v is None:
            return np.zeros(self.n_nodes)
        if callable(v):
            v = v(self.disc.coords)
        v = np.asarray(v, dtype=float)
        if v.shape != (self.n_nodes,):
            raise HpsError(f"{name} has shape {v.shape}, expected ({self.n_nodes},)")
        return v

    def solve(self, f=None, h=None):
        """Nodal solution for rhs ``f`` and Dirichlet data ``h``.

        Both are global nodal vectors (or callables of the node
        coordinates); only the Dirichlet entries of ``h`` are read.
        """
        f = self._nodal(f, "rhs")
        u = np.zeros(self.n_nodes)
        if self.dirichlet.any():
            hv = self._nodal(h, "boundary data")
            u[self.dirichlet] = hv[self.dirichlet]
        elif h is not None:
            raise HpsError("Dirichlet data given for a closed surface")
        v_leaf = np.einsum("kij,kj->ki", self.leaf_inv, f[self.leaf_i])
        g = {}
        flux_leaf = np.einsum("kbi,ki->kb", self.leaf_flux_int, v_leaf)
        vglue = [None] * len(self.tree)
        root = self.tree[-1].id
        self.compatibility = 0.0
        for node in self.tree:
            if not node.children:
                g[node.id] = flux_leaf[int(node.elements[0])]
                continue
            d = self.data[node.id]
            gs = np.zeros(len(d.interface))
            gb = np.zeros(len(d.boundary))
            for c, (cs, si, cb, bi) in zip(node.children, d.maps):
                gc = g.pop(c)
                np.add.at(gs, si, gc[cs])
                np.add.at(gb, bi, gc[cb])
            if d.svd is not None:
                vglue[node.id] = self._root_nullspace(d, gs, f)
            else:
                vglue[node.id] = -sla.lu_solve(d.lu, gs, check_finite=False)
            if node.id != root:
                g[node.id] = gb + d.Q @ vglue[node.id]
        for node in reversed(self.tree):
            if node.children:
                d = self.data[node.id]
                u[d.interface] = d.S_glue @ u[d.boundary] + vglue[node.id]
        ub = u[self.leaf_b]
        u_int = np.einsum("kib,kb->ki", self.leaf_S, ub) + v_leaf
        u[self.leaf_i] = u_int
        if self.nullspace:
            u -= self.disc.integrate(u) / self.disc.area
        if not np.all(np.isfinite(u)):
            raise HpsError("non-finite values in HPS solution")
        return u

    def _root_nullspace(self, d, gs, f):
        """Least-squares root solve with the constant mode removed."""
        w = self.disc.weights
        mean_f = abs(w @ f) / max(np.abs(w) @ np.abs(f), 1e-300)
        self.compatibility = mean_f
        if mean_f > self.compatibility_tol:
            raise HpsError(f"incompatible right-hand side for a singular closed-surface problem "
                           f"(relative mean {mean_f:.2e})")
        U_, sig, Vt = d.svd
        keep = slice(0, len(sig) - 1)
        x = Vt[keep].T @ ((U_[:, keep].T @ gs) / sig[keep])
        return -x

    def mean_residual(self, u):
        return abs(self.disc.integrate(u)) / self.disc.area

    # -- diagnostics

    def fluxes(self, u):
        """Summed binormal flux at every node (meaningful on the skeleton)."""
        per = np.einsum("kbn,kn->kb", self.leaf_flux, u[self.gid])
        out = np.zeros(self.n_nodes)
        np.add.at(out, self.leaf_b, per)
        return out

    def element_solution(self, u, el):
        return u[self.gid[el]]


def build(disc, coeffs, tree="bisection", **kw):
    return HpsSolver(disc, coeffs, tree, **kw)


def solve(solver, f=None, h=None):
    return solver.solve(f, h)


def flux_jump(solver, u):
    """Largest summed flux over interior skeleton nodes."""
    mask = solver.disc.dofs.skeleton & ~solver.dirichlet
    if not mask.any():
        return 0.0
    return float(np.abs(solver.fluxes(u)[mask]).max())


__all__ = ["DofMap", "Discretization", "TreeNode", "build_tree", "merge", "MergeData",
           "HpsSolver", "HpsError", "build", "solve", "flux_jump", "LocalError"]
