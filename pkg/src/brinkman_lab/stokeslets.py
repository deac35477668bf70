"""Analytic single-sphere Stokes solutions and their superpositions.

A sphere of radius 1/n translating with velocity v in unbounded fluid
(unit viscosity) generates the velocity field

    G[v](x) = 1/(4n) (3/|x| + 1/(n^2|x|^3)) v
              + 3/(4n) (1/|x| - 1/(n^2|x|^3)) (v.x) x / |x|^2

and pressure P[v](x) = 3/(2n) v.x / |x|^3.  G[v] = v on |x| = 1/n and the
sphere exerts the force 6 pi v / n on the fluid.

All kernels broadcast over leading axes: ``v`` and ``x`` have shape
(..., 3).  Stress sign convention: sigma = -p I + grad u + grad u^T, and the
force on the fluid is the integral of sigma . nu with nu the normal of
the fluid domain, i.e. pointing into the sphere.
"""

import numpy as np
from scipy.special import expit

from .errors import ParameterError, SingularityError
from .quadrature import gauss_legendre, sphere_rule


def _radius(x):
    r = np.linalg.norm(x, axis=-1)
    if np.any(r == 0):
        raise SingularityError("kernel evaluated at its center")
    return r


def _coefficients(r, n):
    inv = 1.0 / r
    inv3 = inv**3
    a = (3.0 * inv + inv3 / n**2) / (4.0 * n)
    b = 3.0 / (4.0 * n) * (inv - inv3 / n**2) * inv**2
    return a, b


def _coefficient_derivatives(r, n):
    # d/dr of a(r) and of b(r) = 3/(4n) (r^-3 - r^-5/n^2)
    da = -(3.0 / r**2 + 3.0 / (n**2 * r**4)) / (4.0 * n)
    db = 3.0 / (4.0 * n) * (-3.0 / r**4 + 5.0 / (n**2 * r**6))
    return da, db


def stokeslet_velocity(v, x, n):
    v = np.asarray(v, dtype=float)
    x = np.asarray(x, dtype=float)
    r = _radius(x)
    a, b = _coefficients(r, n)
    vx = np.sum(v * x, axis=-1)
    return a[..., None] * v + (b * vx)[..., None] * x


def stokeslet_pressure(v, x, n):
    v = np.asarray(v, dtype=float)
    x = np.asarray(x, dtype=float)
    r = _radius(x)
    return 1.5 / n * np.sum(v * x, axis=-1) / r**3


def stokeslet_gradient(v, x, n):
    """Velocity gradient, ``out[..., i, k] = d G_i / d x_k``."""
    v = np.asarray(v, dtype=float)
    x = np.asarray(x, dtype=float)
    v, x = np.broadcast_arrays(v, x)
    r = _radius(x)
    a, b = _coefficients(r, n)
    da, db = _coefficient_derivatives(r, n)
    vx = np.sum(v * x, axis=-1)
    xh = x / r[..., None]
    out = da[..., None, None] * v[..., :, None] * xh[..., None, :]
    out += (db * vx)[..., None, None] * x[..., :, None] * xh[..., None, :]
    out += b[..., None, None] * (x[..., :, None] * v[..., None, :])
    out += (b * vx)[..., None, None] * np.eye(3)
    return out


def stokeslet_matrix(x, n):
    """3x3 matrices K(x) with G[v](x) = K(x) v."""
    x = np.asarray(x, dtype=float)
    r = _radius(x)
    a, b = _coefficients(r, n)
    return a[..., None, None] * np.eye(3) + b[..., None, None] * x[..., :, None] * x[..., None, :]


def oseen_velocity(f, x):
    """Point force f at the origin (unit viscosity): (I/r + x x^T/r^3) f / (8 pi)."""
    f = np.asarray(f, dtype=float)
    x = np.asarray(x, dtype=float)
    r = _radius(x)
    fx = np.sum(f * x, axis=-1)
    return (f / r[..., None] + (fx / r**3)[..., None] * x) / (8 * np.pi)


def oseen_pressure(f, x):
    x = np.asarray(x, dtype=float)
    r = _radius(x)
    return np.sum(np.asarray(f, dtype=float) * x, axis=-1) / (4 * np.pi * r**3)


def oseen_gradient(f, x):
    f = np.asarray(f, dtype=float)
    x = np.asarray(x, dtype=float)
    f, x = np.broadcast_arrays(f, x)
    r = _radius(x)
    fx = np.sum(f * x, axis=-1)
    out = -f[..., :, None] * x[..., None, :] / r[..., None, None] ** 3
    out += (x[..., :, None] * f[..., None, :]) / r[..., None, None] ** 3
    out += (fx / r**3)[..., None, None] * np.eye(3)
    out -= 3 * (fx / r**5)[..., None, None] * x[..., :, None] * x[..., None, :]
    return out / (8 * np.pi)


def drag_integral(v, n, quadrature_order=26):
    """Force exerted by the translating sphere on the fluid.

    Integrates the traction sigma . nu over the sphere of radius 1/n with
    nu = -x/|x| (normal of the fluid domain).  Analytically the traction is
    the constant vector 3 n v / 2, so the result is 6 pi v / n.
    """
    v = np.asarray(v, dtype=float)
    pts, w = sphere_rule(quadrature_order)
    x = pts / n
    nu = -pts
    vv = np.broadcast_to(v, x.shape)
    g = stokeslet_gradient(vv, x, n)
    p = stokeslet_pressure(vv, x, n)
    sym = g + np.swapaxes(g, -1, -2)
    traction = np.einsum("qik,qk->qi", sym, nu) - p[:, None] * nu
    return 4 * np.pi / n**2 * (w @ traction)


def _chunks(m, k, budget=1_500_000):
    step = max(1, budget // max(k, 1))
    for s in range(0, m, step):
        yield slice(s, min(m, s + step))


def superposition_field(centers, strengths, n, targets):
    """w(x) = sum_i G[b_i](x - X_i) at each target; direct batched sum."""
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    b = np.atleast_2d(np.asarray(strengths, dtype=float))
    targets = np.asarray(targets, dtype=float)
    shape = targets.shape
    t = targets.reshape(-1, 3)
    out = np.zeros_like(t)
    for sl in _chunks(len(t), len(centers)):
        d = t[sl, None, :] - centers[None, :, :]
        r = _radius(d)
        a, bb = _coefficients(r, n)
        w = bb * np.einsum("mkc,kc->mk", d, b)
        u = a @ b
        for c in range(3):
            u[:, c] += np.sum(w * d[..., c], axis=1)
        out[sl] = u
    return out.reshape(shape)


def superposition_gradient_pressure(centers, strengths, n, targets):
    """Velocity gradient (m, 3, 3) and pressure (m,) of the superposition."""
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    b = np.atleast_2d(np.asarray(strengths, dtype=float))
    t = np.asarray(targets, dtype=float).reshape(-1, 3)
    grad = np.zeros((len(t), 3, 3))
    pres = np.zeros(len(t))
    for sl in _chunks(len(t), len(centers), budget=1_000_000):
        d = t[sl, None, :] - centers[None, :, :]
        r = _radius(d)
        a, bb = _coefficients(r, n)
        da, db = _coefficient_derivatives(r, n)
        bx = np.einsum("mkc,kc->mk", d, b)
        inv = 1.0 / r
        g = grad[sl]
        for k in range(3):
            dk = d[..., k] * inv
            g[:, :, k] = (da * dk) @ b
            w = db * bx * dk + bb * b[None, :, k]
            for c in range(3):
                g[:, c, k] += np.sum(w * d[..., c], axis=1)
        diag = np.sum(bb * bx, axis=1)
        for c in range(3):
            g[:, c, c] += diag
        pres[sl] = 1.5 / n * np.sum(bx * inv**3, axis=1)
    return grad, pres


# ---------------------------------------------------------------------------
# rotational lift


def smooth_step(t):
    """C-infinity step: 0 for t <= 0, 1 for t >= 1, with first two derivatives.

    S(t) = 1 / (1 + exp(1/t - 1/(1-t))) on (0, 1).
    """
    t = np.asarray(t, dtype=float)
    s = np.where(t >= 1, 1.0, 0.0)
    ds = np.zeros_like(t)
    d2s = np.zeros_like(t)
    inner = (t > 0) & (t < 1)
    if np.any(inner):
        u = t[inner]
        q = 1.0 / u - 1.0 / (1.0 - u)
        si = expit(-q)
        dq = 1.0 / u**2 + 1.0 / (1.0 - u) ** 2
        d2q = -2.0 / u**3 + 2.0 / (1.0 - u) ** 3
        s[inner] = si
        ds[inner] = si * (1 - si) * dq
        d2s[inner] = ds[inner] * (1 - 2 * si) * dq + si * (1 - si) * d2q
    return s, ds, d2s


class RotationalLift:
    """Divergence-free field equal to V on B(X, 1/n) and 0 outside B(X, (1+h0)/n).

    w = curl(chi(|x|) (V x x) / 2) = chi V + (r chi'/2) (V - (xh.V) xh), with
    x measured from the center and chi(r) = 1 - S((n r - 1)/h0).
    """

    def __init__(self, V, center, n, h0):
        if not 0 < h0 < 0.5:
            raise ParameterError("h0 must lie in (0, 1/2)")
        self.V = np.asarray(V, dtype=float)
        self.center = np.asarray(center, dtype=float)
        self.n = n
        self.h0 = h0

    def _profile(self, r):
        t = (self.n * r - 1.0) / self.h0
        s, ds, d2s = smooth_step(t)
        k = self.n / self.h0
        return 1.0 - s, -k * ds, -(k**2) * d2s

    def __call__(self, x):
        y = np.asarray(x, dtype=float) - self.center
        r = np.linalg.norm(y, axis=-1)
        chi, dchi, _ = self._profile(r)
        safe = np.where(r > 0, r, 1.0)
        yh = y / safe[..., None]
        g = 0.5 * r * dchi
        vy = yh @ self.V
        return chi[..., None] * self.V + g[..., None] * (self.V - vy[..., None] * yh)

    def gradient(self, x):
        """``out[..., i, k] = d w_i / d x_k``."""
        y = np.asarray(x, dtype=float) - self.center
        r = np.linalg.norm(y, axis=-1)
        chi, dchi, d2chi = self._profile(r)
        safe = np.where(r > 0, r, 1.0)
        yh = y / safe[..., None]
        V = self.V
        vy = yh @ V
        g = 0.5 * r * dchi
        dg = 0.5 * (dchi + r * d2chi)
        tang = V - vy[..., None] * yh
        out = dchi[..., None, None] * V[:, None] * yh[..., None, :]
        out += dg[..., None, None] * tang[..., :, None] * yh[..., None, :]
        corr = vy[..., None, None] * np.eye(3) + yh[..., :, None] * V[None, :]
        corr -= 2 * vy[..., None, None] * yh[..., :, None] * yh[..., None, :]
        out -= (g / safe)[..., None, None] * corr
        return out

    def divergence_check(self, points, step=None):
        """Max central-difference divergence over ``points``."""
        h = 1e-5 / self.n if step is None else step
        p = np.asarray(points, dtype=float)
        div = np.zeros(len(p))
        for k in range(3):
            e = np.zeros(3)
            e[k] = h
            div += (self(p + e)[:, k] - self(p - e)[:, k]) / (2 * h)
        return float(np.max(np.abs(div)))

    def energy(self, n_r=200):
        """Dirichlet energy of the lift; equals |V|^2 e(h0) / n."""
        a = 1.0 / self.n
        r, wr = gauss_legendre(a, a * (1 + self.h0), n_r)
        pts, wa = sphere_rule(50)
        x = self.center + (r[:, None, None] * pts[None]).reshape(-1, 3)
        g = self.gradient(x)
        dens = np.sum(g**2, axis=(-1, -2)).reshape(len(r), len(wa))
        return float(4 * np.pi * np.sum((r**2 * wr)[:, None] * wa[None, :] * dens))
