"""Quadrature rules on the unit sphere and on radial intervals."""

import json
from functools import lru_cache
from importlib import resources

import numpy as np

from .errors import ParameterError


@lru_cache(maxsize=None)
def _table():
    with resources.files(__package__).joinpath("data/lebedev.json").open() as fh:
        return json.load(fh)


def available_orders():
    return sorted(int(k) for k in _table()["rules"])


def sphere_rule(order=26):
    """Lebedev rule with ``order`` points.

    Returns unit vectors (order, 3) and weights summing to 1, so that
    ``w @ f(p)`` approximates the mean of f over the unit sphere.
    """
    rules = _table()["rules"]
    key = str(int(order))
    if key not in rules:
        raise ParameterError(f"no sphere rule with {order} points; have {available_orders()}")
    r = rules[key]
    return np.array(r["points"], dtype=float), np.array(r["weights"], dtype=float)


def sphere_rule_degree(order):
    return _table()["rules"][str(int(order))]["degree"]


def product_sphere_rule(n_theta, n_phi=None):
    """Gauss-Legendre in cos(theta) times the trapezoid rule in phi.

    Exact for spherical harmonics of degree < min(2*n_theta, n_phi).
    Weights sum to 1.
    """
    n_phi = 2 * n_theta if n_phi is None else n_phi
    t, wt = np.polynomial.legendre.leggauss(n_theta)
    phi = 2 * np.pi * (np.arange(n_phi) + 0.5) / n_phi
    st = np.sqrt(1 - t**2)
    pts = np.stack(
        [np.outer(st, np.cos(phi)), np.outer(st, np.sin(phi)), np.outer(t, np.ones(n_phi))],
        axis=-1,
    ).reshape(-1, 3)
    w = np.outer(wt / 2, np.full(n_phi, 1.0 / n_phi)).ravel()
    return pts, w


def gauss_legendre(a, b, k):
    x, w = np.polynomial.legendre.leggauss(k)
    h = 0.5 * (b - a)
    return a + h * (x + 1), h * w


def ball_rule(R, n_r=24, angular=50):
    """Tensor rule on the ball B(0, R): Gauss-Legendre in r with r^2 weight
    times a sphere rule. Returns points (m, 3) and volume weights."""
    r, wr = gauss_legendre(0.0, R, n_r)
    if isinstance(angular, tuple):
        p, wa = product_sphere_rule(*angular)
    else:
        p, wa = sphere_rule(angular)
    pts = (r[:, None, None] * p[None, :, :]).reshape(-1, 3)
    w = (4 * np.pi * (r**2 * wr)[:, None] * wa[None, :]).ravel()
    return pts, w
