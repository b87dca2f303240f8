"""Surface meshes: OFF I/O, edge adjacency, rhombus quadrilateralization,
midpoint refinement and quality statistics."""

import logging
import os
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

NEEDLE_ANGLE_DEG = 5.0


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class Edge:
    vertices: tuple        # (a, b) with a < b
    elements: tuple        # incident element ids (1 or 2)
    local: tuple           # local edge position within each incident element


class SurfaceMesh:
    """Conforming triangle or quad surface mesh.

    Local edge ``e`` of an element runs from its vertex ``e`` to vertex
    ``(e+1) % k``. Adjacency is built once at construction.
    """

    def __init__(self, vertices, elements, validate=True):
        self.vertices = np.array(vertices, dtype=float).reshape(-1, 3)
        self.elements = np.array(elements, dtype=np.int64)
        if self.elements.ndim != 2 or self.elements.shape[1] not in (3, 4):
            raise MeshError("elements must all be triangles or all be quads")
        self.vertices.setflags(write=False)
        self.elements.setflags(write=False)
        self.kind = "triangle" if self.elements.shape[1] == 3 else "quad"
        nv = len(self.vertices)
        if self.elements.size and (self.elements.min() < 0 or self.elements.max() >= nv):
            bad = int(self.elements.max()) if self.elements.max() >= nv else int(self.elements.min())
            raise MeshError(f"vertex index out of range: {bad} (V={nv})")
        self._build_edges()
        if validate:
            self._validate()

    def _build_edges(self):
        k = self.elements.shape[1]
        table = {}
        directed = {}
        for el, verts in enumerate(self.elements):
            for e in range(k):
                a, b = int(verts[e]), int(verts[(e + 1) % k])
                if a == b:
                    raise MeshError(f"element {el} repeats vertex {a}")
                key = (a, b) if a < b else (b, a)
                table.setdefault(key, []).append((el, e))
                if (a, b) in directed:
                    raise MeshError(
                        f"edge {key} traversed twice in the same direction "
                        "(inconsistent orientation or non-manifold mesh)")
                directed[(a, b)] = el
        self.edges = []
        self.edge_index = {}
        elem_edges = np.empty(self.elements.shape, dtype=np.int64)
        for eid, (key, inc) in enumerate(sorted(table.items())):
            if len(inc) > 2:
                raise MeshError(f"non-conforming mesh: edge {key} has {len(inc)} incident elements")
            self.edges.append(Edge(key, tuple(i[0] for i in inc), tuple(i[1] for i in inc)))
            self.edge_index[key] = eid
            for el, e in inc:
                elem_edges[el, e] = eid
        self.element_edges = elem_edges

    def _validate(self):
        seen = set()
        for el, verts in enumerate(self.elements):
            key = tuple(sorted(int(v) for v in verts))
            if key in seen:
                raise MeshError(f"duplicate element {el} (vertex set {key}): degenerate double cover")
            seen.add(key)
        areas = self.element_areas()
        scale = max(np.ptp(self.vertices, axis=0).max(), 1.0) if len(self.vertices) else 1.0
        bad = np.flatnonzero(areas <= 1e-14 * scale**2)
        if bad.size:
            raise MeshError(f"degenerate element {int(bad[0])} (zero area)")
        if self.is_closed:
            chi = self.euler_characteristic
            if chi > 2 or chi % 2:
                raise MeshError(f"closed mesh with Euler characteristic {chi} is not a single orientable surface")

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_elements(self):
        return len(self.elements)

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def boundary_edges(self):
        return [i for i, e in enumerate(self.edges) if len(e.elements) == 1]

    @property
    def is_closed(self):
        return not self.boundary_edges

    @property
    def euler_characteristic(self):
        return self.n_vertices - self.n_edges + self.n_elements

    @property
    def genus(self):
        if not self.is_closed:
            return None
        return (2 - self.euler_characteristic) // 2

    def boundary_vertices(self):
        out = set()
        for i in self.boundary_edges:
            out.update(self.edges[i].vertices)
        return np.array(sorted(out), dtype=np.int64)

    def neighbor(self, element, local_edge):
        """(neighbor element, its local edge) across a local edge, or None."""
        edge = self.edges[self.element_edges[element, local_edge]]
        for el, le in zip(edge.elements, edge.local):
            if el != element:
                return el, le
        return None

    def element_areas(self):
        P = self.vertices[self.elements]
        if self.kind == "triangle":
            return 0.5 * np.linalg.norm(np.cross(P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]), axis=1)
        # non-planar quads: area of the two triangles on the shorter diagonal
        a1 = 0.5 * np.linalg.norm(np.cross(P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]), axis=1)
        a2 = 0.5 * np.linalg.norm(np.cross(P[:, 2] - P[:, 0], P[:, 3] - P[:, 0]), axis=1)
        return a1 + a2

    def centroids(self):
        return self.vertices[self.elements].mean(axis=1)

    def with_vertices(self, vertices):
        """Same connectivity, new coordinates (adjacency is recomputed)."""
        return SurfaceMesh(vertices, self.elements, validate=False)


# ---------------------------------------------------------------- OFF I/O

def load_off(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"mesh file not found: {path}")
    with open(path) as fh:
        lines = fh.readlines()
    tokens = []   # (line number, [words])
    for ln, line in enumerate(lines, start=1):
        body = line.split("#", 1)[0].split()
        if body:
            tokens.append((ln, body))
    if not tokens:
        raise MeshError(f"{path}: empty file")
    ln, head = tokens[0]
    if head[0] != "OFF":
        raise MeshError(f"{path}:{ln}: expected 'OFF' header, got {head[0]!r}")
    rest = head[1:]
    pos = 1
    if not rest:
        if len(tokens) < 2:
            raise MeshError(f"{path}: missing counts line")
        ln, rest = tokens[1]
        pos = 2
    try:
        nv, nf = int(rest[0]), int(rest[1])
    except (ValueError, IndexError):
        raise MeshError(f"{path}:{ln}: malformed counts line") from None
    if len(tokens) < pos + nv + nf:
        raise MeshError(f"{path}: expected {nv} vertices and {nf} faces, file is truncated")
    verts = np.empty((nv, 3))
    for i in range(nv):
        ln, words = tokens[pos + i]
        try:
            verts[i] = [float(w) for w in words[:3]]
        except ValueError:
            raise MeshError(f"{path}:{ln}: malformed vertex line") from None
        if len(words) < 3:
            raise MeshError(f"{path}:{ln}: vertex line needs 3 coordinates")
    faces = []
    for i in range(nf):
        ln, words = tokens[pos + nv + i]
        try:
            k = int(words[0])
            face = [int(w) for w in words[1:1 + k]]
        except ValueError:
            raise MeshError(f"{path}:{ln}: malformed face line") from None
        if len(face) != k:
            raise MeshError(f"{path}:{ln}: face declares {k} vertices, found {len(face)}")
        for v in face:
            if v < 0 or v >= nv:
                raise MeshError(f"{path}:{ln}: vertex index out of range ({v}, V={nv})")
        faces.append(face)
    if len({len(f) for f in faces}) > 1:
        raise MeshError(f"{path}: mixed element sizes are not supported")
    return SurfaceMesh(verts, faces)


def save_off(mesh, path):
    with open(path, "w") as fh:
        fh.write("OFF\n")
        fh.write(f"{mesh.n_vertices} {mesh.n_elements} 0\n")
        for x in mesh.vertices:
            fh.write(" ".join(f"{c:.17g}" for c in x) + "\n")
        for el in mesh.elements:
            fh.write(f"{len(el)} " + " ".join(str(int(v)) for v in el) + "\n")


# ---------------------------------------------------------------- derived meshes

def rhombus_quadrilateralize(mesh):
    """One quad (v_a, c_j, v_b, c_i) per edge of a closed triangle mesh.

    Centroid of triangle ``t`` becomes vertex ``V + t``. Vertex order is
    flipped where needed so each quad normal agrees with the mean normal of
    its two triangles.
    """
    if mesh.kind != "triangle":
        raise MeshError("rhombus quadrilateralization needs a triangle mesh")
    if not mesh.is_closed:
        raise MeshError("rhombus quadrilateralization is defined for closed meshes only "
                        f"({len(mesh.boundary_edges)} boundary edges)")
    V = mesh.n_vertices
    cent = mesh.centroids()
    verts = np.vstack([mesh.vertices, cent])
    P = mesh.vertices[mesh.elements]
    tri_n = np.cross(P[:, 1] - P[:, 0], P[:, 2] - P[:, 0])
    quads = []
    for edge in mesh.edges:
        (a, b), (ti, tj) = edge.vertices, edge.elements
        q = [a, V + tj, b, V + ti]
        x = verts[q]
        qn = np.cross(x[2] - x[0], x[3] - x[1])
        if np.dot(qn, tri_n[ti] + tri_n[tj]) < 0:
            q = [a, V + ti, b, V + tj]
        quads.append(q)
    return SurfaceMesh(verts, quads)


def refine_loop(mesh, levels=1):
    """Split every triangle 1 -> 4 through edge midpoints, ``levels`` times."""
    if mesh.kind != "triangle":
        raise MeshError("midpoint refinement needs a triangle mesh")
    for _ in range(int(levels)):
        V = mesh.n_vertices
        mids = np.array([mesh.vertices[list(e.vertices)].mean(axis=0) for e in mesh.edges]).reshape(-1, 3)
        verts = np.vstack([mesh.vertices, mids])
        tris = []
        for el, (a, b, c) in enumerate(mesh.elements):
            ab, bc, ca = (V + mesh.element_edges[el, e] for e in range(3))
            tris += [[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]
        mesh = SurfaceMesh(verts, tris)
    return mesh


# ---------------------------------------------------------------- quality

@dataclass(frozen=True)
class MeshQuality:
    h: float
    r: float
    ratio: float
    min_angle: np.ndarray          # per element, degrees
    flagged: tuple                 # elements below the needle threshold

    @property
    def worst_angle(self):
        return float(self.min_angle.min())


def _corner_angles(P):
    k = P.shape[1]
    out = np.empty(P.shape[:2])
    for c in range(k):
        u = P[:, (c + 1) % k] - P[:, c]
        v = P[:, (c - 1) % k] - P[:, c]
        cosang = np.einsum("ij,ij->i", u, v) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
        out[:, c] = np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0)))
    return out


def mesh_quality(mesh, needle_deg=NEEDLE_ANGLE_DEG):
    P = mesh.vertices[mesh.elements]
    k = P.shape[1]
    diam = np.zeros(len(P))
    perim = np.zeros(len(P))
    for a in range(k):
        for b in range(a + 1, k):
            d = np.linalg.norm(P[:, a] - P[:, b], axis=1)
            diam = np.maximum(diam, d)
            if b == a + 1 or (a == 0 and b == k - 1):
                perim += d
    inradius = 2.0 * mesh.element_areas() / perim
    angles = _corner_angles(P).min(axis=1)
    flagged = tuple(int(i) for i in np.flatnonzero(angles < needle_deg))
    if flagged:
        log.warning("%d element(s) with minimum angle below %.1f deg (worst %.3g deg)",
                    len(flagged), needle_deg, angles.min())
    h, r = float(diam.max()), float(inradius.min())
    return MeshQuality(h, r, h / r, angles, flagged)


# ---------------------------------------------------------------- generators

def tetrahedron():
    v = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float) / np.sqrt(3.0)
    f = [[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]]
    return SurfaceMesh(v, f)


def octahedron():
    v = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], dtype=float)
    f = [[0, 2, 4], [2, 1, 4], [1, 3, 4], [3, 0, 4],
         [2, 0, 5], [1, 2, 5], [3, 1, 5], [0, 3, 5]]
    return SurfaceMesh(v, f)


def icosahedron():
    t = (1.0 + np.sqrt(5.0)) / 2.0
    v = np.array([[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
                  [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
                  [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]], dtype=float)
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    f = [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
         [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
         [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
         [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]]
    return SurfaceMesh(v, f)


def _project_sphere(mesh, radius):
    v = mesh.vertices / np.linalg.norm(mesh.vertices, axis=1, keepdims=True) * radius
    return SurfaceMesh(v, mesh.elements)


def sphere_mesh(level=1, radius=1.0, base="icosahedron"):
    """Geodesic sphere: refine a platonic base ``level`` times, projecting each time."""
    mesh = {"icosahedron": icosahedron, "octahedron": octahedron,
            "tetrahedron": tetrahedron}[base]()
    mesh = _project_sphere(mesh, radius)
    for _ in range(int(level)):
        mesh = _project_sphere(refine_loop(mesh, 1), radius)
    return mesh


def hemisphere_mesh(level=1, radius=1.0):
    """Upper half of the octahedral sphere; the boundary lies on the equator z = 0."""
    octa = octahedron()
    upper = [f for f in octa.elements if 4 in f]
    mesh = SurfaceMesh(octa.vertices[:5], upper)
    mesh = _project_sphere(mesh, radius)
    for _ in range(int(level)):
        mesh = _project_sphere(refine_loop(mesh, 1), radius)
    return mesh


def _zip_rings(lo, hi, a, b):
    """Triangles between two rings of vertex ids with increasing angles a, b in [0, 2 pi).

    ``lo`` lies below ``hi`` along the axis; the triangles face away from it.
    """
    tris = []
    na, nb = len(lo), len(hi)
    j0 = int(np.argmin(np.abs(np.angle(np.exp(1j * (b - a[0]))))))
    ua = np.concatenate([a, [a[0] + 2 * np.pi]])
    ub = np.unwrap(np.concatenate([b[j0:], b[:j0], [b[j0]]]))
    ub += a[0] - ub[0] + np.angle(np.exp(1j * (ub[0] - a[0])))
    ub[-1] = ub[0] + 2 * np.pi
    hid = [hi[(j0 + j) % nb] for j in range(nb + 1)]
    i = j = 0
    while i < na or j < nb:
        if j == nb or (i < na and ua[i + 1] <= ub[j + 1]):
            tris.append([lo[i % na], lo[(i + 1) % na], hid[j]])
            i += 1
        else:
            tris.append([lo[i % na], hid[j + 1], hid[j]])
            j += 1
    return tris


def revolution_mesh(s, z, r, spacing):
    """Triangulated surface of revolution about the z axis.

    The meridian is given by dense samples ``(z(s), r(s))`` over arclength ``s``,
    starting and ending on the axis. ``spacing(s)`` is the target edge length.
    Rings are placed by marching along the meridian and carry a vertex count
    proportional to their circumference, so triangles stay near equilateral
    where the radius varies strongly.
    """
    s, z, r = (np.asarray(v, dtype=float) for v in (s, z, r))
    L = s[-1]
    def step(t):
        # look ahead so a coarse region never jumps into a finer one
        h = float(spacing(t))
        for _ in range(20):
            ahead = min(float(spacing(x)) for x in np.linspace(t, min(t + h, L), 9))
            if ahead >= h * (1 - 1e-9):
                break
            h = ahead
        return h

    ring_s = []
    t = step(0.0)
    while t < L - 0.5 * step(t):
        ring_s.append(t)
        t += step(t)
    if not ring_s:
        raise MeshError("meridian too short for the requested spacing")
    # stretch the last gap evenly over all rings so both poles get similar caps
    ring_s = np.asarray(ring_s) * L / (ring_s[-1] + step(ring_s[-1]))
    verts = [[0.0, 0.0, z[0]]]
    rings, angles = [], []
    for k, sk in enumerate(ring_s):
        zk, rk = np.interp(sk, s, z), np.interp(sk, s, r)
        n = max(3, int(round(2 * np.pi * rk / spacing(sk))))
        th = 2 * np.pi * (np.arange(n) + 0.5 * (k % 2)) / n
        rings.append(list(range(len(verts), len(verts) + n)))
        angles.append(th % (2 * np.pi))
        verts.extend(np.column_stack([rk * np.cos(th), rk * np.sin(th), np.full(n, zk)]).tolist())
    top = len(verts)
    verts.append([0.0, 0.0, z[-1]])
    order = [np.argsort(a) for a in angles]
    rings = [[ring[i] for i in o] for ring, o in zip(rings, order)]
    angles = [a[o] for a, o in zip(angles, order)]
    first, last = rings[0], rings[-1]
    tris = [[0, first[(i + 1) % len(first)], first[i]] for i in range(len(first))]
    for k in range(len(rings) - 1):
        tris += _zip_rings(rings[k], rings[k + 1], angles[k], angles[k + 1])
    tris += [[top, last[i], last[(i + 1) % len(last)]] for i in range(len(last))]
    return SurfaceMesh(np.array(verts), np.array(tris))
