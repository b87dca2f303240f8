"""Legacy ASCII VTK, CSV and JSON metadata writers."""

import csv
import json
import os
import platform
import sys

import numpy as np

from .basis import reference_cells


def write_vtk(path, disc, fields, coords=None, title="surfhps"):
    """POLYDATA with one polygon per sub-cell and one POINT_DATA scalar per field.

    Points are the solver's global nodes in global-id order.
    """
    X = disc.coords if coords is None else coords
    local = reference_cells(disc.basis.kind, disc.basis.order)
    polys = [tuple(int(g[c]) for c in cell) for g in disc.dofs.gid for cell in local]
    size = sum(len(p) + 1 for p in polys)
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"# vtk DataFile Version 3.0\n{title}\nASCII\nDATASET POLYDATA\n")
        fh.write(f"POINTS {len(X)} double\n")
        for x in X:
            fh.write(" ".join(repr(float(c)) for c in x) + "\n")
        fh.write(f"POLYGONS {len(polys)} {size}\n")
        for p in polys:
            fh.write(f"{len(p)} " + " ".join(map(str, p)) + "\n")
        fh.write(f"POINT_DATA {len(X)}\n")
        for name, values in fields.items():
            fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            fh.writelines(f"{float(v)!r}\n" for v in values)


def read_vtk_points(path):
    """Minimal reader (points and scalar fields) for round-trip checks."""
    with open(path, encoding="ascii") as fh:
        tokens = fh.read().split("\n")
    out, pts, i = {}, None, 0
    while i < len(tokens):
        line = tokens[i].split()
        if line and line[0] == "POINTS":
            n = int(line[1])
            pts = np.array([[float(v) for v in tokens[i + 1 + k].split()] for k in range(n)])
            i += n
        elif line and line[0] == "SCALARS":
            name = line[1]
            n = len(pts)
            out[name] = np.array([float(tokens[i + 2 + k]) for k in range(n)])
            i += n + 1
        i += 1
    return pts, out


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow(["" if v is None else (repr(float(v)) if isinstance(v, (float, np.floating)) else v)
                        for v in r])


def versions():
    import scipy

    from . import __version__

    return {"python": sys.version.split()[0], "numpy": np.__version__, "scipy": scipy.__version__,
            "surfhps": __version__, "platform": platform.platform()}


def write_metadata(path, config, extra=None):
    meta = {"config": config, "seed": config.get("seed"), "versions": versions(),
            "node_ordering": ("global ids: mesh vertices first, then edge-interior nodes "
                              "per edge from its lower-id vertex, then element interiors")}
    if extra:
        meta.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True, default=_jsonable)


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    return str(v)


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path
