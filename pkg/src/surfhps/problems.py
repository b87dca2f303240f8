"""Run configuration, experiment presets and problem construction."""

import ast
import os
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import geometry as geo
from . import mesh as msh
from .basis import build_reference_basis
from .harmonics import laplace_eigenvalue, real_sph_harm
from .hps import Discretization
from .timestep import Kinetics, TuringParams


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    preset: str = ""
    mode: str = "solve"              # solve | evolve
    geometry: str = "sphere"         # sphere | hemisphere | dumbbell | implicit | file
    expression: str = ""             # level set for geometry=implicit
    mesh: str = ""                   # OFF path; required for implicit/file geometries
    mesh_level: int = 1
    radius: float = 1.0
    element: str = "tri"             # tri | quad
    n: int = 8
    solution: str = ""               # "Y:l:m" manufactured/exact solution
    shift: float = 1.0               # c in -Laplace u + c u = f
    kinetics: str = "spots"          # none | spots | stripes | coupled
    alpha: float = 0.899
    beta: float = -0.91
    gamma: float = -0.899
    r1: float = 0.02
    r2: float = 0.2
    delta_u2: float = 5e-3
    delta_ratio: float = 0.516
    alpha_v: float = 0.398
    beta_v: float = -0.41
    gamma_v: float = -0.398
    delta_v2: float = 5e-3
    delta_ratio_v: float = 0.122
    q1: float = 0.0
    q2: float = 0.0
    q3: float = 0.0
    diffusion: float = 1.0           # heat equation coefficient (kinetics=none)
    initial: str = "random"          # random | equilibrium | Y:l:m
    start: str = "ramp"              # ramp | exact (exact history from the solution)
    scheme: int = 1
    dt: float = 0.1
    T: float = 1.0
    snapshots: str = ""              # comma-separated times
    law: str = "static"              # static | logistic | linear | aniso | dumbbell
    g_rate: float = 0.1
    K: float = 1.5
    axis: int = 2
    rebuild_every: int = 1
    sweep: str = ""                  # "n:4:16[:step]" or "level:1:3"
    seed: int = 0
    threads: int = 1
    out: str = "out"

    def validate(self):
        if self.n < 2:
            raise ConfigError(f"n must be >= 2, got {self.n}")
        if self.dt <= 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if self.T < 0:
            raise ConfigError(f"T must be non-negative, got {self.T}")
        if self.element not in ("tri", "quad"):
            raise ConfigError(f"element must be tri or quad, got {self.element!r}")
        if self.scheme not in (1, 2, 3, 4):
            raise ConfigError(f"scheme must be 1..4, got {self.scheme}")
        if self.geometry not in ("sphere", "hemisphere", "dumbbell", "implicit", "file"):
            raise ConfigError(f"unknown geometry {self.geometry!r}")
        if self.geometry in ("implicit", "file") and not self.mesh:
            raise ConfigError(f"geometry={self.geometry} needs a user-supplied mesh (mesh=PATH)")
        if self.mesh and not os.path.isfile(self.mesh):
            raise ConfigError(f"mesh file not found: {self.mesh}")
        if self.geometry == "implicit" and not self.expression:
            raise ConfigError("geometry=implicit needs expression=...")
        if self.kinetics not in ("none", "spots", "stripes", "coupled"):
            raise ConfigError(f"unknown kinetics {self.kinetics!r}")
        if self.law not in ("static", "logistic", "linear", "aniso", "dumbbell"):
            raise ConfigError(f"unknown law {self.law!r}")
        if self.start not in ("ramp", "exact"):
            raise ConfigError(f"start must be ramp or exact, got {self.start!r}")
        if self.start == "exact" and not self.initial.startswith("Y:"):
            raise ConfigError("start=exact needs an analytic initial condition (initial=Y:l:m)")
        if self.rebuild_every < 1:
            raise ConfigError("rebuild_every must be >= 1")
        return self


_SPOTS = dict(kinetics="spots", alpha=0.899, beta=-0.91, gamma=-0.899, r1=0.02, r2=0.2,
              delta_u2=5e-3, delta_ratio=0.516)
_STRIPES = dict(kinetics="stripes", alpha=1.899, beta=-0.95, gamma=-1.899, r1=1.5, r2=0.0,
                delta_u2=5e-3, delta_ratio=0.516)
_TURING_RUN = dict(mode="evolve", geometry="sphere", mesh_level=2, element="tri", n=5,
                   scheme=1, dt=0.1, T=200.0, snapshots="0,20,200", initial="random")


def _merge(*parts, **extra):
    out = {}
    for p in parts:
        out.update(p)
    out.update(extra)
    return out


_EVOLVING = _merge(_TURING_RUN, _SPOTS, r2=0.15)

PRESETS = {
    "sphere-Y43": dict(mode="solve", geometry="sphere", mesh_level=1, element="quad", n=16,
                       solution="Y:4:3", shift=1.0),
    "sphere-Y20-10": dict(mode="solve", geometry="sphere", mesh_level=2, element="tri", n=9,
                          solution="Y:20:10", shift=0.0),
    "hemisphere-Y32": dict(mode="solve", geometry="hemisphere", mesh_level=2, element="tri",
                           n=9, solution="Y:3:2", shift=0.0),
    "heat-Y10": dict(mode="evolve", geometry="sphere", mesh_level=2, element="tri", n=10,
                     kinetics="none", diffusion=1.0, initial="Y:1:0", start="exact", scheme=4,
                     dt=1e-3, T=1.0, snapshots="0,1"),
    "turing-spots": _merge(_TURING_RUN, _SPOTS),
    "turing-stripes": _merge(_TURING_RUN, _STRIPES),
    "logistic-sphere": dict(_EVOLVING, law="logistic", g_rate=0.1, K=1.5, dt=1e-2, T=50.0,
                            snapshots="0,10,30,50"),
    "contracting-sphere": dict(_EVOLVING, law="linear", g_rate=0.02, radius=3.0, T=48.0,
                               snapshots="0,5,10,20,45,48"),
    "aniso-ellipsoid": dict(_EVOLVING, law="aniso", g_rate=0.04, axis=2, T=60.0,
                            snapshots="0,10,30,60"),
    "dumbbell": dict(_EVOLVING, geometry="dumbbell", law="dumbbell", delta_u2=4.5e-3,
                     delta_ratio=0.5166, r1=0.02, r2=0.15, T=60.0, snapshots="0,10,40,60"),
    "dumbbell-stripes": _merge(_EVOLVING, _STRIPES, geometry="dumbbell", law="dumbbell",
                               delta_ratio=0.5166, T=60.0, snapshots="0,10,40,60"),
    "swiss-cheese": _merge(_TURING_RUN, _SPOTS, geometry="implicit",
                           expression=geo.SWISS_CHEESE),
    "asymmetric-torus": _merge(_TURING_RUN, _SPOTS, geometry="implicit",
                               expression=geo.ASYMMETRIC_TORUS, n=10),
}
for _k in (1, 2, 3):
    for _sign, _tag in ((1, "+"), (-1, "-")):
        PRESETS[f"coupled-q{_k}{_tag}0.55"] = _merge(
            _TURING_RUN, _SPOTS, {f"q{_k}": _sign * 0.55}, kinetics="coupled")


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key, value):
    if key not in _TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    typ = _TYPES[key]
    if not isinstance(value, str):
        return value
    try:
        if typ in (int, "int"):
            return int(value)
        if typ in (float, "float"):
            return float(value)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {value!r} as {typ}") from exc
    return value


def parse_pairs(lines, source="--set"):
    out = {}
    for no, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{no}: expected key=value, got {raw.strip()!r}")
        k, v = line.split("=", 1)
        k, v = k.strip(), v.strip()
        if len(v) >= 2 and v[0] == v[-1] and v[0] in "'\"":
            v = ast.literal_eval(v)
        out[k] = _coerce(k, v)
    return out


def load_config_file(path):
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        return parse_pairs(fh.read().splitlines(), path)


def make_config(file_values=None, overrides=None, preset=None):
    """Preset < config file < command-line overrides."""
    values = {}
    file_values = dict(file_values or {})
    overrides = dict(overrides or {})
    name = overrides.get("preset") or file_values.get("preset") or preset or ""
    if name:
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(sorted(PRESETS))}")
        values.update(PRESETS[name])
        values["preset"] = name
    values.update(file_values)
    values.update(overrides)
    for k in values:
        if k not in _TYPES:
            raise ConfigError(f"unknown config key {k!r}")
    return RunConfig(**{k: _coerce(k, v) for k, v in values.items()}).validate()


def config_dict(cfg):
    return asdict(cfg)


# ---------------------------------------------------------------- geometry

def parse_harmonic(spec):
    try:
        tag, l, m = spec.split(":")
        if tag != "Y":
            raise ValueError
        l, m = int(l), int(m)
    except ValueError as exc:
        raise ConfigError(f"solution must look like Y:l:m, got {spec!r}") from exc
    if l < 0 or abs(m) > l:
        raise ConfigError(f"invalid harmonic degree/order in {spec!r}")
    return l, m


def build_geometry(cfg):
    """(mesh, projector, law, provenance) for a configuration."""
    law = make_law(cfg)
    if cfg.geometry == "sphere":
        projector = geo.SphereProjector(cfg.radius)
        mesh = msh.load_off(cfg.mesh) if cfg.mesh else msh.sphere_mesh(cfg.mesh_level, cfg.radius)
        prov = cfg.mesh or f"icosphere level {cfg.mesh_level}"
    elif cfg.geometry == "hemisphere":
        projector = geo.SphereProjector(cfg.radius)
        mesh = msh.load_off(cfg.mesh) if cfg.mesh else msh.hemisphere_mesh(cfg.mesh_level, cfg.radius)
        prov = cfg.mesh or f"octahedral hemisphere level {cfg.mesh_level}"
    elif cfg.geometry == "dumbbell":
        db = geo.DumbbellLevelSet()
        projector = geo.ImplicitProjector(db.level_set, t=0.0)
        base = msh.load_off(cfg.mesh) if cfg.mesh else db.initial_mesh(cfg.mesh_level)
        mesh = base.with_vertices(projector(base.vertices))
        prov = cfg.mesh or f"curvature-graded revolution mesh level {cfg.mesh_level}"
    elif cfg.geometry == "implicit":
        projector = geo.ImplicitProjector(geo.expression_level_set(cfg.expression))
        base = msh.load_off(cfg.mesh)
        mesh = base.with_vertices(projector(base.vertices))
        prov = cfg.mesh
    else:
        projector = geo.IdentityProjector()
        mesh = msh.load_off(cfg.mesh)
        prov = cfg.mesh
    if cfg.element == "quad" and mesh.kind == "triangle":
        mesh = msh.rhombus_quadrilateralize(mesh)
        mesh = mesh.with_vertices(projector(mesh.vertices))
    return mesh, projector, law, prov


def make_law(cfg):
    if cfg.law == "static":
        return None
    if cfg.law == "logistic":
        return geo.IsotropicLogistic(cfg.g_rate, cfg.K, cfg.radius)
    if cfg.law == "linear":
        return geo.IsotropicLinear(cfg.g_rate, cfg.radius)
    if cfg.law == "aniso":
        return geo.AnisotropicAxis(cfg.g_rate, cfg.axis, cfg.radius)
    return geo.DumbbellLevelSet()


def build_discretization(cfg, mesh=None, projector=None):
    if mesh is None:
        mesh, projector, _, _ = build_geometry(cfg)
    kind = "quad" if mesh.kind == "quad" else "triangle"
    basis = build_reference_basis(kind, cfg.n)
    return Discretization(mesh, basis, projector)


def make_kinetics(cfg):
    if cfg.kinetics == "none":
        return Kinetics("none", diffusion_none=(cfg.diffusion,))
    p = TuringParams(cfg.alpha, cfg.beta, cfg.gamma, cfg.r1, cfg.r2,
                     cfg.delta_ratio * cfg.delta_u2, cfg.delta_u2)
    if cfg.kinetics in ("spots", "stripes"):
        return Kinetics("turing2", p)
    pv = TuringParams(cfg.alpha_v, cfg.beta_v, cfg.gamma_v, cfg.r1, cfg.r2,
                      cfg.delta_ratio_v * cfg.delta_v2, cfg.delta_v2)
    return Kinetics("coupled4", p, pv, (cfg.q1, cfg.q2, cfg.q3))


def exact_harmonic(cfg, coords):
    """Values and -Laplace eigenvalue of the configured harmonic on the sphere."""
    l, m = parse_harmonic(cfg.solution or cfg.initial)
    return real_sph_harm(l, m, coords), laplace_eigenvalue(l, cfg.radius)


def snapshot_times(cfg):
    if not cfg.snapshots:
        return ()
    try:
        return tuple(float(t) for t in cfg.snapshots.split(",") if t.strip())
    except ValueError as exc:
        raise ConfigError(f"snapshots must be comma-separated times, got {cfg.snapshots!r}") from exc


__all__ = ["RunConfig", "ConfigError", "PRESETS", "make_config", "load_config_file",
           "parse_pairs", "build_geometry", "build_discretization", "make_kinetics",
           "make_law", "exact_harmonic", "snapshot_times", "config_dict"]
