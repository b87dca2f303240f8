"""High-order element charts by closest-point projection, surface-gradient
coefficients, and prescribed surface evolution laws."""

from dataclasses import dataclass

import numpy as np


class GeometryError(RuntimeError):
    pass


class ChartError(GeometryError):
    pass


class ProjectionError(GeometryError):
    def __init__(self, message, residual):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


class EvolutionError(GeometryError):
    pass


# ---------------------------------------------------------------- level sets

class LevelSet:
    """Time-dependent implicit function d(x, t); the surface is {d = 0}.

    ``value`` and ``grad`` take points of shape (M, 3). ``time_derivative``
    falls back to a central difference when no closed form is supplied.
    """

    timescale = 1.0

    def value(self, x, t=0.0):
        raise NotImplementedError

    def grad(self, x, t=0.0):
        raise NotImplementedError

    def hessian(self, x, t=0.0, step=1e-6):
        x = np.atleast_2d(x)
        H = np.empty((len(x), 3, 3))
        for k in range(3):
            e = np.zeros(3)
            e[k] = step
            H[:, :, k] = (self.grad(x + e, t) - self.grad(x - e, t)) / (2 * step)
        return 0.5 * (H + H.transpose(0, 2, 1))

    def time_derivative(self, x, t=0.0):
        dt = 1e-6 * self.timescale
        return (self.value(x, t + dt) - self.value(x, t - dt)) / (2 * dt)


class FunctionLevelSet(LevelSet):
    def __init__(self, value, grad, time_derivative=None, hessian=None, timescale=1.0):
        self._value, self._grad = value, grad
        self._dt, self._hess = time_derivative, hessian
        self.timescale = timescale

    def value(self, x, t=0.0):
        return self._value(np.atleast_2d(x), t)

    def grad(self, x, t=0.0):
        return self._grad(np.atleast_2d(x), t)

    def hessian(self, x, t=0.0, step=1e-6):
        if self._hess is None:
            return super().hessian(x, t, step)
        return self._hess(np.atleast_2d(x), t)

    def time_derivative(self, x, t=0.0):
        if self._dt is None:
            return super().time_derivative(x, t)
        return self._dt(np.atleast_2d(x), t)


def sphere_level_set(radius=1.0, center=(0.0, 0.0, 0.0)):
    c = np.asarray(center, dtype=float)
    return FunctionLevelSet(
        lambda x, t: np.linalg.norm(x - c, axis=1) - radius,
        lambda x, t: (x - c) / np.linalg.norm(x - c, axis=1, keepdims=True),
        lambda x, t: np.zeros(len(x)),
    )


def expression_level_set(expr):
    """Static level set from a sympy-parsable expression in x, y, z."""
    import sympy as sp

    x, y, z = sp.symbols("x y z")
    f = sp.sympify(expr, locals={"x": x, "y": y, "z": z})
    grad = [sp.diff(f, v) for v in (x, y, z)]
    hess = [[sp.diff(g, v) for v in (x, y, z)] for g in grad]
    fv = sp.lambdify((x, y, z), f, "numpy")
    gv = [sp.lambdify((x, y, z), g, "numpy") for g in grad]
    hv = [[sp.lambdify((x, y, z), h, "numpy") for h in row] for row in hess]

    def _bcast(val, n):
        return np.broadcast_to(np.asarray(val, dtype=float), (n,))

    def value(p, t):
        return _bcast(fv(*p.T), len(p)).copy()

    def gradient(p, t):
        return np.column_stack([_bcast(g(*p.T), len(p)) for g in gv])

    def hessian(p, t):
        return np.stack([np.column_stack([_bcast(h(*p.T), len(p)) for h in row]) for row in hv], axis=1)

    return FunctionLevelSet(value, gradient, lambda p, t: np.zeros(len(p)), hessian)


SWISS_CHEESE = ("(x**2 + y**2 - 4)**2 + (z**2 - 1)**2 + (y**2 + z**2 - 4)**2"
                " + (x**2 - 1)**2 + (z**2 + x**2 - 4)**2 + (y**2 - 1)**2 - 15")
ASYMMETRIC_TORUS = ("(x**2 + y**2 + z**2 - 1 + 1.9**2)**2"
                    " - 4*(2*x + (2**2 - 1.9**2)*1)**2 - 4*1.9**2*y**2")


# ---------------------------------------------------------------- projectors

class Projector:
    """Closest-point map onto a static surface."""

    def __call__(self, x):
        raise NotImplementedError


class SphereProjector(Projector):
    def __init__(self, radius=1.0, center=(0.0, 0.0, 0.0)):
        self.radius = float(radius)
        self.center = np.asarray(center, dtype=float)
        self.level_set = sphere_level_set(radius, center)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        d = x - self.center
        r = np.linalg.norm(d, axis=-1, keepdims=True)
        if np.any(r == 0):
            raise ProjectionError("sphere projection undefined at the center", 0.0)
        return self.center + self.radius * d / r


class IdentityProjector(Projector):
    """For flat geometries: charts are the (multi)linear maps themselves."""

    level_set = None

    def __call__(self, x):
        return np.array(x, dtype=float)


class ImplicitProjector(Projector):
    """Closest point on {d(., t) = 0} by damped Newton on the KKT system

        y - x + lam * grad d(y) = 0,   d(y) = 0.
    """

    def __init__(self, level_set, t=0.0, scale=1.0, tol=1e-12, max_iter=50):
        self.level_set = level_set
        self.t = t
        self.scale = scale
        self.tol = tol
        self.max_iter = max_iter

    def _residual(self, y, lam, x):
        g = self.level_set.grad(y, self.t)
        return np.concatenate([y - x + lam[:, None] * g,
                               self.level_set.value(y, self.t)[:, None]], axis=1), g

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        ls, t = self.level_set, self.t
        y = x.copy()
        # a few gradient-direction steps to land near the surface
        for _ in range(5):
            g = ls.grad(y, t)
            y = y - (ls.value(y, t) / np.einsum("ij,ij->i", g, g))[:, None] * g
        g = ls.grad(y, t)
        lam = np.einsum("ij,ij->i", x - y, g) / np.einsum("ij,ij->i", g, g)
        F, g = self._residual(y, lam, x)
        for _ in range(self.max_iter):
            nrm = np.abs(F).max(axis=1)
            if nrm.max() <= self.tol * self.scale:
                break
            H = ls.hessian(y, t)
            J = np.zeros((len(y), 4, 4))
            J[:, :3, :3] = np.eye(3) + lam[:, None, None] * H
            J[:, :3, 3] = g
            J[:, 3, :3] = g
            step = np.linalg.solve(J, -F[:, :, None])[:, :, 0]
            alpha = np.ones(len(y))
            for _ in range(30):
                y_new = y + alpha[:, None] * step[:, :3]
                lam_new = lam + alpha * step[:, 3]
                F_new, g_new = self._residual(y_new, lam_new, x)
                worse = np.abs(F_new).max(axis=1) > (1 - 1e-4 * alpha) * nrm
                worse &= nrm > self.tol * self.scale
                if not worse.any():
                    break
                alpha[worse] *= 0.5
            y, lam, F, g = y_new, lam_new, F_new, g_new
        res = float(np.abs(F).max()) if len(F) else 0.0
        if res > self.tol * self.scale * 10:
            raise ProjectionError("closest-point projection did not converge in "
                                  f"{self.max_iter} iterations", res)
        return y[0] if single else y


def project(projector, x):
    return projector(x)


# ---------------------------------------------------------------- charts

@dataclass
class ChartedElement:
    """Per-node geometry of one order-n surface element."""

    element: int
    order: int
    coords: np.ndarray        # (N, 3)
    d_xi: np.ndarray          # (N, 3)
    d_eta: np.ndarray         # (N, 3)
    metric: np.ndarray        # (N, 2, 2)
    volume: np.ndarray        # (N,)
    grad_coeff: np.ndarray    # (N, 3, 2): d xi_i / d x_j as [node, j, i]

    @property
    def normals(self):
        n = np.cross(self.d_xi, self.d_eta)
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    @property
    def jacobian(self):
        return np.stack([self.d_xi, self.d_eta], axis=2)


def reference_map(basis, vertices):
    """Bilinear (quad) or affine (triangle) image of the reference nodes."""
    P = np.asarray(vertices, dtype=float)
    xi, eta = basis.points[:, 0], basis.points[:, 1]
    if basis.kind == "quad":
        s, t = 0.5 * (1 + xi), 0.5 * (1 + eta)
        w = np.column_stack([(1 - s) * (1 - t), s * (1 - t), s * t, (1 - s) * t])
    else:
        w = np.column_stack([1 - xi - eta, xi, eta])
    return w @ P


def chart_from_coords(coords, basis, element=-1):
    """Chart data from nodal coordinate samples of the interpolated map."""
    X = np.asarray(coords, dtype=float)
    Xx = basis.D_xi @ X
    Xe = basis.D_eta @ X
    J = np.stack([Xx, Xe], axis=2)
    g = np.einsum("nki,nkj->nij", J, J)
    det = g[:, 0, 0] * g[:, 1, 1] - g[:, 0, 1] ** 2
    scale = np.max(np.einsum("nki,nki->n", J, J))
    if not np.all(det > 1e-12 * scale**2):
        bad = int(np.argmin(det))
        raise ChartError(f"element {element}: rank-deficient chart Jacobian at node {bad} "
                         "(element too distorted)")
    ginv = np.empty_like(g)
    ginv[:, 0, 0] = g[:, 1, 1] / det
    ginv[:, 1, 1] = g[:, 0, 0] / det
    ginv[:, 0, 1] = ginv[:, 1, 0] = -g[:, 0, 1] / det
    pinv = np.einsum("nij,nkj->nik", ginv, J)          # (N, 2, 3)
    return ChartedElement(element, basis.order, X, Xx, Xe, g, np.sqrt(det),
                          pinv.transpose(0, 2, 1).copy())


def orientation_signs(chart, level_set, t=0.0):
    """Sign of n . grad d at every node; a fold shows up as a sign change."""
    return np.sign(np.einsum("nk,nk->n", chart.normals, level_set.grad(chart.coords, t)))


def chart_element(vertices, projector, basis, element=-1):
    """psi = projector o reference_map, sampled at the basis nodes."""
    flat = reference_map(basis, vertices)
    chart = chart_from_coords(projector(flat), basis, element)
    ls = getattr(projector, "level_set", None)
    if ls is not None:
        side = orientation_signs(chart, ls, getattr(projector, "t", 0.0))
        if np.any(side != side[0]):
            raise ChartError(f"element {element}: chart folds over itself "
                             "(normals reverse against the surface); refine the mesh")
    return chart


def surface_gradient_coefficients(chart):
    """Per-node 3x2 field d xi_i / d x_j (pseudo-inverse of the chart Jacobian)."""
    return chart.grad_coeff


def surface_gradient(chart, basis, u):
    """Nodal tangential gradient of nodal values ``u``, shape (N, 3)."""
    du = np.column_stack([basis.D_xi @ u, basis.D_eta @ u])
    return np.einsum("nji,ni->nj", chart.grad_coeff, du)


def chart_area(chart, basis):
    return float(basis.weights @ chart.volume)


# ---------------------------------------------------------------- evolution

class EvolutionLaw:
    """Prescribed map L_t: Gamma(0) -> Gamma(t) acting on node arrays."""

    level_set = None

    def map(self, X0, t):
        raise NotImplementedError

    def check(self, t):
        pass


class IsotropicLaw(EvolutionLaw):
    def __init__(self, radius0=1.0):
        self.radius0 = float(radius0)

    def eta(self, t):
        raise NotImplementedError

    def check(self, t):
        if not self.eta(t) > 0:
            raise EvolutionError(f"{type(self).__name__}: dilation factor {self.eta(t):.4g} <= 0 at t={t}")

    def map(self, X0, t):
        self.check(t)
        return self.eta(t) * np.asarray(X0, dtype=float)

    @property
    def level_set(self):
        r0 = self.radius0
        return FunctionLevelSet(
            lambda x, t: np.linalg.norm(x, axis=1) - r0 * self.eta(t),
            lambda x, t: x / np.linalg.norm(x, axis=1, keepdims=True),
        )


class IsotropicLogistic(IsotropicLaw):
    def __init__(self, g_rate=0.1, K=1.5, radius0=1.0):
        super().__init__(radius0)
        self.g_rate, self.K = float(g_rate), float(K)

    def eta(self, t):
        e = np.exp(self.g_rate * t)
        return e / (1.0 + (e - 1.0) / self.K)


class IsotropicLinear(IsotropicLaw):
    """eta(t) = 1 - g t (contraction for g > 0)."""

    def __init__(self, g_rate=0.02, radius0=1.0):
        super().__init__(radius0)
        self.g_rate = float(g_rate)

    def eta(self, t):
        return 1.0 - self.g_rate * t


class AnisotropicAxis(EvolutionLaw):
    """Stretch one axis by (1 + g t): sphere -> prolate ellipsoid."""

    def __init__(self, g_rate=0.04, axis=2, radius0=1.0):
        self.g_rate, self.axis, self.radius0 = float(g_rate), int(axis), float(radius0)

    def stretch(self, t):
        return 1.0 + self.g_rate * t

    def check(self, t):
        if not self.stretch(t) > 0:
            raise EvolutionError(f"axis stretch {self.stretch(t):.4g} <= 0 at t={t}")

    def map(self, X0, t):
        self.check(t)
        X = np.array(X0, dtype=float)
        X[:, self.axis] *= self.stretch(t)
        return X

    @property
    def level_set(self):
        ax, r0 = self.axis, self.radius0

        def value(x, t):
            y = x.copy()
            y[:, ax] /= self.stretch(t)
            return (np.einsum("ij,ij->i", y, y) - r0**2) / r0**2

        def grad(x, t):
            g = 2.0 * x / r0**2
            g[:, ax] /= self.stretch(t) ** 2
            return g

        return FunctionLevelSet(value, grad)


class DumbbellLevelSet(EvolutionLaw):
    """d(x, t) = x1^2 + x2^2 + a(t)^2 b(x3^2 / c(t)^2) - a(t)^2 with material
    points scaled by a(t)/a(0) across the axis and c(t)/c(0) along it."""

    def a(self, t):
        return 0.1 + 0.05 * np.sin(2 * np.pi * t)

    def da(self, t):
        return 0.1 * np.pi * np.cos(2 * np.pi * t)

    def c(self, t):
        return 1.0 + 0.2 * np.sin(4 * np.pi * t)

    def dc(self, t):
        return 0.8 * np.pi * np.cos(4 * np.pi * t)

    @staticmethod
    def b(s):
        return 200.0 * s * (s - 199.0 / 200.0)

    @staticmethod
    def db(s):
        return 400.0 * s - 199.0

    def map(self, X0, t):
        X = np.array(X0, dtype=float)
        X[:, :2] *= self.a(t) / self.a(0.0)
        X[:, 2] *= self.c(t) / self.c(0.0)
        return X

    @property
    def level_set(self):
        def value(x, t):
            a, c = self.a(t), self.c(t)
            return x[:, 0] ** 2 + x[:, 1] ** 2 + a**2 * self.b(x[:, 2] ** 2 / c**2) - a**2

        def grad(x, t):
            a, c = self.a(t), self.c(t)
            s = x[:, 2] ** 2 / c**2
            return np.column_stack([2 * x[:, 0], 2 * x[:, 1],
                                    a**2 * self.db(s) * 2 * x[:, 2] / c**2])

        def dt(x, t):
            a, c, da, dc = self.a(t), self.c(t), self.da(t), self.dc(t)
            s = x[:, 2] ** 2 / c**2
            ds = -2.0 * x[:, 2] ** 2 * dc / c**3
            return 2 * a * da * self.b(s) + a**2 * self.db(s) * ds - 2 * a * da

        return FunctionLevelSet(value, grad, dt, timescale=0.1)

    def profile(self, z, t=0.0):
        """Radius of the t-surface at height z."""
        a, c = self.a(t), self.c(t)
        return a * np.sqrt(np.maximum(1.0 - self.b(z**2 / c**2), 0.0))

    def meridian(self, t=0.0, samples=20001):
        """Dense (s, z, r) samples of the profile from the lower tip to the upper one."""
        c = self.c(t)
        z = -c * np.cos(np.linspace(0.0, np.pi, samples))   # clusters samples at the tips
        r = self.profile(z, t)
        s = np.concatenate([[0.0], np.cumsum(np.hypot(np.diff(z), np.diff(r)))])
        return s, z, r

    def initial_mesh(self, level=1, size=0.5, turn=0.8, grading=0.25):
        """Triangle mesh of Gamma(0) with edges near min(size, turn / kappa).

        kappa is the larger principal curvature, so the neck (axial radius of
        curvature 0.05) is resolved finely and the lobes coarsely. Both
        targets halve with each level; ``grading`` caps dh/ds.
        """
        from .mesh import revolution_mesh

        s, z, r = self.meridian()
        dz, dr = np.gradient(z, s), np.gradient(r, s)
        k_axial = np.abs(dz * np.gradient(dr, s) - dr * np.gradient(dz, s))
        with np.errstate(divide="ignore", invalid="ignore"):
            k_hoop = np.where(r > 1e-3 * r.max(), np.abs(dz) / r, 0.0)
        kappa = np.maximum(k_axial, k_hoop)
        # a sliding maximum keeps the spacing from jumping ahead into a curved region
        width = max(1, int(len(s) * 0.01))
        kappa = np.array([kappa[max(0, i - width): i + width + 1].max() for i in range(len(s))])
        f = 0.5 ** (int(level) - 1)
        h = np.minimum(size * f, turn * f / np.maximum(kappa, 1e-12))
        # limit the grading so neighbouring rings have similar vertex counts
        ds = np.diff(s)
        for i in range(1, len(h)):
            h[i] = min(h[i], h[i - 1] + grading * ds[i - 1])
        for i in range(len(h) - 2, -1, -1):
            h[i] = min(h[i], h[i + 1] + grading * ds[i])
        return revolution_mesh(s, z, r, lambda x: float(np.interp(x, s, h)))


class ExplicitEuler(EvolutionLaw):
    """Velocity-only law integrated by forward Euler from t = 0."""

    def __init__(self, velocity, dt, level_set=None):
        self.velocity, self.dt = velocity, float(dt)
        self._ls = level_set

    @property
    def level_set(self):
        return self._ls

    def map(self, X0, t):
        X = np.array(X0, dtype=float)
        steps = int(np.ceil(t / self.dt - 1e-12)) if t > 0 else 0
        h = t / steps if steps else 0.0
        s = 0.0
        for _ in range(steps):
            X = X + h * self.velocity(X, s)
            s += h
        return X


class StaticLaw(EvolutionLaw):
    def map(self, X0, t):
        return np.array(X0, dtype=float)


def evolve_nodes(law, nodes, t):
    """Nodes on Gamma(0) carried to Gamma(t); returns a new array."""
    law.check(t)
    out = law.map(nodes, t)
    if not np.all(np.isfinite(out)):
        raise EvolutionError(f"evolution law produced non-finite coordinates at t={t}")
    return out


def normal_velocity(level_set, x, t):
    """Normal velocity V n with V = -d_t d / |grad d| and n = grad d / |grad d|."""
    x = np.atleast_2d(x)
    g = level_set.grad(x, t)
    gn = np.linalg.norm(g, axis=1)
    if np.any(gn < 1e-14):
        raise GeometryError("vanishing level-set gradient: surface singular at sampled point")
    V = -level_set.time_derivative(x, t) / gn
    return (V / gn)[:, None] * g
