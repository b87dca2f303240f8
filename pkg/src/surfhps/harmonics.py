"""Real spherical harmonics on the unit sphere, for manufactured solutions."""

import numpy as np
from scipy.special import sph_harm_y


def real_sph_harm(l, m, x):
    """Orthonormal real harmonic Y_l^m at points x (M, 3), no Condon-Shortley phase.

    m > 0 gives the cos(m phi) branch, m < 0 the sin(|m| phi) branch.
    Points are radially normalized first.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    r = np.linalg.norm(x, axis=1)
    theta = np.arccos(np.clip(x[:, 2] / r, -1.0, 1.0))
    phi = np.arctan2(x[:, 1], x[:, 0])
    am = abs(m)
    Y = sph_harm_y(l, am, theta, phi) * (-1.0) ** am
    if m == 0:
        return Y.real
    if m > 0:
        return np.sqrt(2.0) * Y.real
    return np.sqrt(2.0) * Y.imag


def laplace_eigenvalue(l, radius=1.0):
    """-Laplace-Beltrami Y_l^m = l(l+1)/R^2 Y_l^m."""
    return l * (l + 1) / radius**2
