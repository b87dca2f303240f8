"""IMEX-BDF time stepping of surface reaction-diffusion systems.

Each step solves (I - omega dt delta_s Laplace) u_s^{n+1} = sum a_i u_s^{n-i}
+ dt sum b_i F_s^{n-i} per species with a prebuilt HPS solver.
"""

import logging
import time
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .geometry import ChartError, EvolutionError, evolve_nodes
from .hps import HpsSolver
from .local import PdeCoefficients
from .mesh import mesh_quality

log = logging.getLogger(__name__)


class BlowUpError(RuntimeError):
    def __init__(self, step, species):
        super().__init__(f"non-finite state at step {step} in species {species}")
        self.step, self.species = step, species


# ---------------------------------------------------------------- schemes

_TABLES = {
    1: ("1", ["1"], ["1"]),
    2: ("2/3", ["4/3", "-1/3"], ["4/3", "-2/3"]),
    3: ("6/11", ["18/11", "-9/11", "2/11"], ["18/11", "-18/11", "6/11"]),
    4: ("12/25", ["48/25", "-36/25", "16/25", "-3/25"], ["48/25", "-72/25", "48/25", "-12/25"]),
}


@dataclass(frozen=True)
class ImexScheme:
    order: int
    omega: Fraction
    a: tuple
    b: tuple

    @classmethod
    def bdf(cls, order):
        if order not in _TABLES:
            raise ValueError(f"IMEX-BDF order must be 1..4, got {order}")
        w, a, b = _TABLES[order]
        return cls(order, Fraction(w), tuple(map(Fraction, a)), tuple(map(Fraction, b)))

    @property
    def coefficients(self):
        return float(self.omega), [float(x) for x in self.a], [float(x) for x in self.b]


# ---------------------------------------------------------------- kinetics

@dataclass(frozen=True)
class TuringParams:
    alpha: float = 0.899
    beta: float = -0.91
    gamma: float = -0.899
    r1: float = 0.02
    r2: float = 0.2
    delta_u1: float = 0.516 * 5e-3
    delta_u2: float = 5e-3


def turing_rhs(u1, u2, p):
    """Kinetic terms of the two-species Turing model."""
    F1 = p.alpha * u1 * (1.0 - p.r1 * u2**2) + u2 * (1.0 - p.r2 * u1)
    F2 = p.beta * u2 * (1.0 + p.alpha * p.r1 / p.beta * u1 * u2) + u1 * (p.gamma + p.r2 * u2)
    return F1, F2


def coupled_rhs(v1, v2, u1, u2, p, primed, q):
    """Four-species system: (u1, u2) is a Turing system driving (v1, v2)."""
    q1, q2, q3 = q
    Fv1, Fv2 = turing_rhs(v1, v2, primed)
    Fv1 = Fv1 + q1 * u1 + q2 * u1 * v2 + q3 * u1 * v2**2
    Fv2 = Fv2 - q2 * u2 * v1 - q3 * u2**2 * v1
    Fu1, Fu2 = turing_rhs(u1, u2, p)
    return Fv1, Fv2, Fu1, Fu2


@dataclass(frozen=True)
class Kinetics:
    """``rule`` is "turing2", "coupled4", or "none" (pure diffusion)."""

    rule: str = "turing2"
    params: TuringParams = field(default_factory=TuringParams)
    primed: TuringParams = None
    q: tuple = (0.0, 0.0, 0.0)
    diffusion_none: tuple = (1.0,)

    def __post_init__(self):
        if self.rule not in ("turing2", "coupled4", "none"):
            raise ValueError(f"unknown kinetics rule {self.rule!r}")
        if self.rule == "coupled4" and self.primed is None:
            raise ValueError("coupled4 kinetics need primed parameters")
        if any(d <= 0 for d in self.diffusion):
            raise ValueError("diffusion coefficients must be positive")

    @property
    def names(self):
        return {"turing2": ("u1", "u2"), "coupled4": ("v1", "v2", "u1", "u2"),
                "none": tuple(f"u{i + 1}" for i in range(len(self.diffusion_none)))}[self.rule]

    @property
    def species(self):
        return len(self.names)

    @property
    def diffusion(self):
        if self.rule == "turing2":
            return (self.params.delta_u1, self.params.delta_u2)
        if self.rule == "coupled4":
            return (self.primed.delta_u1, self.primed.delta_u2,
                    self.params.delta_u1, self.params.delta_u2)
        return tuple(self.diffusion_none)

    def __call__(self, states):
        # overflow is reported as a blow-up by the stepper, not as a warning here
        with np.errstate(over="ignore", invalid="ignore"):
            if self.rule == "turing2":
                return list(turing_rhs(states[0], states[1], self.params))
            if self.rule == "coupled4":
                return list(coupled_rhs(*states, self.params, self.primed, self.q))
        return [np.zeros_like(s) for s in states]


# ---------------------------------------------------------------- stepping

@dataclass
class SimulationState:
    t: float
    step: int
    history: list          # per species: list of arrays, newest first
    kinetic: list          # per species: list of F arrays, newest first

    def current(self):
        return [h[0] for h in self.history]


class SolverCache:
    """One HPS build per (diffusion, omega*dt) on a fixed geometry."""

    def __init__(self, disc, threads=1):
        self.disc = disc
        self.threads = threads
        self.solvers = {}
        self.builds = 0

    def get(self, delta, omega_dt):
        key = (float(delta), float(omega_dt))
        if key not in self.solvers:
            coeffs = PdeCoefficients.helmholtz(diffusion=delta * omega_dt, shift=1.0)
            self.solvers[key] = HpsSolver(self.disc, coeffs, threads=self.threads)
            self.builds += 1
        return self.solvers[key]


def imex_step(state, scheme, kinetics, dt, cache):
    """Advance one step with the given scheme (history must hold >= M states)."""
    M = scheme.order
    w, a, b = scheme.coefficients
    new_u = []
    for s, delta in enumerate(kinetics.diffusion):
        hist, F = state.history[s], state.kinetic[s]
        if len(hist) < M:
            raise ValueError(f"order-{M} step needs {M} history states, have {len(hist)}")
        rhs = sum(a[i] * hist[i] for i in range(M)) + dt * sum(b[i] * F[i] for i in range(M))
        if not np.all(np.isfinite(rhs)):
            raise BlowUpError(state.step + 1, kinetics.names[s])
        u = cache.get(delta, w * dt).solve(rhs)
        if not np.all(np.isfinite(u)):
            raise BlowUpError(state.step + 1, kinetics.names[s])
        new_u.append(u)
    new_F = kinetics(new_u)
    keep = 4
    for s in range(kinetics.species):
        state.history[s] = [new_u[s]] + state.history[s][:keep - 1]
        state.kinetic[s] = [new_F[s]] + state.kinetic[s][:keep - 1]
    state.t += dt
    state.step += 1
    return state


def initial_state(kinetics, initial, t0=0.0):
    """``initial`` is a list of arrays (one per species) or of histories
    (lists of arrays, newest first)."""
    history = [list(x) if isinstance(x, (list, tuple)) else [np.asarray(x, dtype=float)]
               for x in initial]
    if len(history) != kinetics.species:
        raise ValueError(f"expected {kinetics.species} species, got {len(history)}")
    kinetic = [[] for _ in history]
    depth = min(len(h) for h in history)
    for k in range(depth):
        F = kinetics([h[k] for h in history])
        for s in range(len(history)):
            kinetic[s].append(F[s])
    for s in range(len(history)):
        history[s] = history[s][:depth]
    return SimulationState(t0, 0, history, kinetic)


def random_initial(kinetics, n_nodes, seed):
    rng = np.random.default_rng(seed)
    return [rng.uniform(-0.5, 0.5, n_nodes) for _ in range(kinetics.species)]


def species_stats(u):
    return {"min": float(u.min()), "max": float(u.max()),
            "mean": float(u.mean()), "std": float(u.std())}


@dataclass
class Snapshot:
    t: float
    step: int
    values: list
    stats: list
    area: float = None
    coords: np.ndarray = None


@dataclass
class Trajectory:
    snapshots: list
    builds: int
    geometry_rebuilds: int = 0
    wall_time: float = 0.0

    @property
    def final(self):
        return self.snapshots[-1]


@dataclass
class SimulationConfig:
    disc: object
    kinetics: Kinetics
    order: int = 1
    dt: float = 0.1
    T: float = 1.0
    snapshot_times: tuple = ()
    initial: object = "random"      # "random" | "equilibrium" | list of arrays/histories
    seed: int = 0
    threads: int = 1
    law: object = None
    rebuild_every: int = 1


def _steps(cfg):
    if cfg.dt <= 0:
        raise ValueError("dt must be positive")
    if cfg.T < 0:
        raise ValueError("T must be non-negative")
    n = int(round(cfg.T / cfg.dt))
    if abs(n * cfg.dt - cfg.T) > 1e-9 * max(1.0, cfg.T):
        raise ValueError(f"T={cfg.T} is not a multiple of dt={cfg.dt}")
    return n


def _snapshot_steps(cfg, nsteps):
    steps = {0, nsteps}
    for t in cfg.snapshot_times:
        k = int(round(t / cfg.dt))
        if 0 <= k <= nsteps:
            steps.add(k)
    return steps


def _initial_values(cfg):
    n = cfg.disc.n_nodes
    if isinstance(cfg.initial, str):
        if cfg.initial == "random":
            return random_initial(cfg.kinetics, n, cfg.seed)
        if cfg.initial == "equilibrium":
            return [np.zeros(n) for _ in range(cfg.kinetics.species)]
        raise ValueError(f"unknown initial condition {cfg.initial!r}")
    return cfg.initial


def _snap(state, area=None, coords=None):
    vals = [h[0].copy() for h in state.history]
    return Snapshot(state.t, state.step, vals, [species_stats(v) for v in vals], area, coords)


def run_simulation(cfg):
    """Static-geometry run; ramps the BDF order up over the first M-1 steps
    unless enough history is supplied."""
    t0 = time.perf_counter()
    nsteps = _steps(cfg)
    want = _snapshot_steps(cfg, nsteps)
    state = initial_state(cfg.kinetics, _initial_values(cfg))
    cache = SolverCache(cfg.disc, cfg.threads)
    snaps = [_snap(state, cfg.disc.area)]
    depth = len(state.history[0])
    for k in range(nsteps):
        scheme = ImexScheme.bdf(min(cfg.order, depth + k))
        imex_step(state, scheme, cfg.kinetics, cfg.dt, cache)
        state.t = state.step * cfg.dt
        if state.step in want:
            snaps.append(_snap(state, cfg.disc.area))
    return Trajectory(snaps, cache.builds, 0, time.perf_counter() - t0)


def run_evolving(cfg):
    """Moving-geometry run: nodes follow ``cfg.law``; charts, operators and
    HPS builds are refreshed every ``rebuild_every`` steps."""
    if cfg.law is None:
        raise ValueError("run_evolving needs an evolution law")
    if cfg.rebuild_every < 1:
        raise ValueError("rebuild_every must be >= 1")
    t0 = time.perf_counter()
    nsteps = _steps(cfg)
    want = _snapshot_steps(cfg, nsteps)
    X0 = cfg.disc.coords
    disc = cfg.disc
    state = initial_state(cfg.kinetics, _initial_values(cfg))
    cache = SolverCache(disc, cfg.threads)
    snaps = [_snap(state, disc.area, disc.coords.copy())]
    rebuilds, builds = 0, 0
    depth = len(state.history[0])
    for k in range(nsteps):
        if k % cfg.rebuild_every == 0:
            t_new = (k + 1) * cfg.dt
            X = evolve_nodes(cfg.law, X0, t_new)
            try:
                disc = cfg.disc.with_coords(X)
            except ChartError as exc:
                mesh = cfg.disc.mesh
                q = mesh_quality(mesh.with_vertices(evolve_nodes(cfg.law, mesh.vertices, t_new)))
                raise EvolutionError(f"{exc}; mesh quality at t={t_new:g}: h/r={q.ratio:.3g}, "
                                     f"min angle={q.worst_angle:.3g} deg") from exc
            builds += cache.builds
            cache = SolverCache(disc, cfg.threads)
            rebuilds += 1
        scheme = ImexScheme.bdf(min(cfg.order, depth + k))
        imex_step(state, scheme, cfg.kinetics, cfg.dt, cache)
        state.t = state.step * cfg.dt
        if state.step in want:
            snaps.append(_snap(state, disc.area, disc.coords.copy()))
    builds += cache.builds
    return Trajectory(snaps, builds, rebuilds, time.perf_counter() - t0)


def count_local_maxima(coords, u, radius, threshold=0.0):
    """Nodes whose value is the largest within ``radius`` and exceeds
    mean(u) + threshold * std(u)."""
    from scipy.spatial import cKDTree

    tree = cKDTree(coords)
    level = u.mean() + threshold * u.std()
    count = 0
    for i, nbrs in enumerate(tree.query_ball_point(coords, radius)):
        if u[i] > level and u[i] >= u[nbrs].max():
            count += 1
    return count


__all__ = ["ImexScheme", "TuringParams", "Kinetics", "turing_rhs", "coupled_rhs",
           "SimulationState", "SolverCache", "imex_step", "initial_state", "run_simulation",
           "run_evolving", "SimulationConfig", "Trajectory", "Snapshot", "BlowUpError",
           "count_local_maxima", "random_initial"]
