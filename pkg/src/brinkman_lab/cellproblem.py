"""Stokes flow in a closed cube around a few spheres, against the bare Stokeslet sum.

The cube T = [0, lam]^3 holds M spheres of radius 1/n.  The flow u solves
Stokes in the fluid part of T with u = w(x) on every sphere and u = 0 on the
walls.  It is compared with

    u_s(x) = sum_i G[w(X_i)](x - X_i),

which ignores both the walls and the variation of w over each sphere.

u is approximated by the method of fundamental solutions: a Stokeslet
G[b_i] at each center, Oseen point forces on an inner shell of each sphere
(radius a/2), and Oseen point forces on a cube enclosing T.  All sources lie
outside the fluid domain, so the approximation solves Stokes exactly there;
its only error is the boundary mismatch, which is reported.  The strengths
come from a weighted least-squares fit on boundary quadrature nodes.

Since v = u - u_s is itself a Stokes flow in the fluid domain, its Dirichlet
energy equals the boundary integral of v . [(nu . grad) v - q nu].
"""

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConditioningError, GeometryError, ParameterError
from .quadrature import gauss_legendre, product_sphere_rule, sphere_rule
from .sampling import make_rng
from .stokeslets import (
    stokeslet_gradient,
    stokeslet_matrix,
    stokeslet_pressure,
    stokeslet_velocity,
)

W_PROFILES = ("zero", "constant", "shear", "rotation")


def w_field(profile, center, x):
    """Divergence-free test fields about ``center``."""
    x = np.asarray(x, dtype=float)
    y = x - np.asarray(center, dtype=float)
    out = np.zeros_like(x)
    if profile == "zero":
        return out
    if profile == "constant":
        out[..., 0] = 1.0
    elif profile == "shear":
        out[..., 0] = 1.0 + y[..., 1]
    elif profile == "rotation":
        out[..., 0] = 1.0 - y[..., 1]
        out[..., 1] = y[..., 0]
    else:
        raise ParameterError(f"unknown w profile {profile!r}; choose from {W_PROFILES}")
    return out


def w_gradient(profile):
    g = np.zeros((3, 3))
    if profile == "shear":
        g[0, 1] = 1.0
    elif profile == "rotation":
        g[0, 1] = -1.0
        g[1, 0] = 1.0
    elif profile not in W_PROFILES:
        raise ParameterError(f"unknown w profile {profile!r}")
    return g


def w_norm_factor(profile, lam):
    """|w|_{C^{0,1/2}(T)} + |grad w|_{L^6(T)} for the affine profiles on the cube of width lam."""
    g = w_gradient(profile)
    corners = np.array(list(itertools.product((0.0, lam), repeat=3)))
    c = np.full(3, lam / 2)
    sup = float(np.max(np.linalg.norm(w_field(profile, c, corners), axis=-1)))
    gn = float(np.linalg.norm(g, 2))
    diam = math.sqrt(3) * lam
    holder = gn * math.sqrt(diam)  # |g| r / r^{1/2} is largest at r = diam
    return sup + holder + float(np.linalg.norm(g)) * lam**0.5


def lattice_positions(lam, M, d_m):
    """First M nodes of the smallest p x q x r lattice with spacing >= d_m, also from the walls."""
    best = None
    for p in range(1, M + 1):
        for q in range(1, p + 1):
            for r in range(1, q + 1):
                if p * q * r < M:
                    continue
                spacing = lam / (np.array([p, q, r]) + 1.0)
                if np.min(spacing) < d_m * (1 - 1e-12):
                    continue
                key = (p * q * r, -float(np.min(spacing)))
                if best is None or key < best[0]:
                    best = (key, (p, q, r))
    if best is None:
        raise GeometryError(f"{M} spheres cannot be placed {d_m:g} apart in a cube of width {lam:g}")
    p, q, r = best[1]
    axes = [lam * np.arange(1, k + 1) / (k + 1) for k in (p, q, r)]
    pts = np.array(list(itertools.product(*axes)))
    return pts[:M]


def random_positions(lam, M, d_m, seed, max_attempts=100_000):
    rng = make_rng(seed)
    pts = []
    for _ in range(max_attempts):
        x = rng.uniform(d_m, lam - d_m, 3)
        if all(np.linalg.norm(x - p) >= d_m for p in pts):
            pts.append(x)
            if len(pts) == M:
                return np.array(pts)
    raise GeometryError(f"random placement of {M} spheres at separation {d_m:g} failed")


def separation(positions, lam):
    walls = float(np.min(np.minimum(positions, lam - positions)))
    if len(positions) < 2:
        return walls
    d = np.linalg.norm(positions[:, None] - positions[None], axis=-1)
    d[np.diag_indices_from(d)] = np.inf
    return min(walls, float(d.min()))


def _face_rule(lam, k, offset=0.0):
    """Gauss nodes on the six faces of [-offset, lam + offset]^3 with outward normals and weights."""
    t, wt = gauss_legendre(-offset, lam + offset, k)
    U, Vv = np.meshgrid(t, t, indexing="ij")
    W = np.outer(wt, wt).ravel()
    pts, nrm, wts = [], [], []
    for axis in range(3):
        others = [a for a in range(3) if a != axis]
        for side, val in ((-1.0, -offset), (1.0, lam + offset)):
            p = np.empty((k * k, 3))
            p[:, axis] = val
            p[:, others[0]] = U.ravel()
            p[:, others[1]] = Vv.ravel()
            nv = np.zeros(3)
            nv[axis] = side
            pts.append(p)
            nrm.append(np.tile(nv, (k * k, 1)))
            wts.append(W)
    return np.vstack(pts), np.vstack(nrm), np.concatenate(wts)


@dataclass
class _Sources:
    centers: np.ndarray  # Stokeslet centers (M, 3)
    points: np.ndarray  # Oseen source points (K, 3)
    n: int

    @property
    def size(self):
        return 3 * (len(self.centers) + len(self.points))

    def matrix(self, x):
        """(3 len(x), size) map from strengths to velocities at x."""
        blocks = []
        d = x[:, None, :] - self.centers[None]
        K = stokeslet_matrix(d, self.n)
        blocks.append(K.transpose(0, 2, 1, 3).reshape(3 * len(x), -1))
        d = x[:, None, :] - self.points[None]
        r = np.linalg.norm(d, axis=-1)
        O = (np.eye(3) / r[..., None, None] + d[..., :, None] * d[..., None, :] / r[..., None, None] ** 3) / (8 * np.pi)
        blocks.append(O.transpose(0, 2, 1, 3).reshape(3 * len(x), -1))
        return np.hstack(blocks)

    def split(self, coef):
        c = coef.reshape(-1, 3)
        return c[: len(self.centers)], c[len(self.centers):]


def _oseen_sum(points, forces, x, chunk=400_000):
    """Velocity, gradient and pressure at x of Oseen forces at ``points``."""
    u = np.zeros_like(x)
    grad = np.zeros(x.shape + (3,))
    p = np.zeros(len(x))
    step = max(1, chunk // max(len(points), 1))
    for s in range(0, len(x), step):
        sl = slice(s, s + step)
        d = x[sl, None, :] - points[None]
        r = np.linalg.norm(d, axis=-1)
        fx = np.einsum("mkc,kc->mk", d, forces)
        i1, i3, i5 = 1 / r, 1 / r**3, 1 / r**5
        u[sl] = (i1 @ forces + np.einsum("mk,mkc->mc", fx * i3, d)) / (8 * np.pi)
        g = -np.einsum("mk,kc,mkd->mcd", i3, forces, d)
        g += np.einsum("mk,mkc,kd->mcd", i3, d, forces)
        g += np.einsum("mk->m", fx * i3)[:, None, None] * np.eye(3)
        g -= 3 * np.einsum("mk,mkc,mkd->mcd", fx * i5, d, d)
        grad[sl] = g / (8 * np.pi)
        p[sl] = np.sum(fx * i3, axis=1) / (4 * np.pi)
    return u, grad, p


def _stokeslet_sum(X, n, strengths, x):
    u = np.zeros_like(x)
    g = np.zeros(x.shape + (3,))
    p = np.zeros(len(x))
    for c, s in zip(X, strengths):
        u += stokeslet_velocity(s, x - c, n)
        g += stokeslet_gradient(s, x - c, n)
        p += stokeslet_pressure(s, x - c, n)
    return u, g, p


def _field(sources, coef, x):
    b, f = sources.split(coef)
    u, grad, p = _stokeslet_sum(sources.centers, sources.n, b, x)
    uo, go, po = _oseen_sum(sources.points, f, x)
    return u + uo, grad + go, p + po


@dataclass(frozen=True)
class CellProblemResult:
    error: float
    bound_rhs: float
    bound_shape: float
    norm_factor: float
    residual: float
    condition: float
    d_m: float
    cell_width: float
    M: int
    n: int
    positions: np.ndarray

    def to_dict(self):
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.__dict__.items()}


def cell_problem_experiment(cell_width, M, n, d_m, w_profile="shear", seed=None, placement="lattice",
                            wall_nodes=14, source_nodes=10, sphere_nodes=50, max_condition=1e15):
    """Gradient error |grad(u - u_s)|_{L^2} and the matching bound sqrt(M/n)(1/sqrt(n) + sqrt(M/(n d_m)))."""
    lam = float(cell_width)
    a = 1.0 / n
    if not d_m > 4.0 / n:
        raise GeometryError(f"separation d_m = {d_m:g} must exceed 4/n = {4.0 / n:g}")
    if M < 1:
        raise ParameterError("M must be positive")
    if placement == "lattice":
        X = lattice_positions(lam, M, d_m)
    elif placement == "random":
        X = random_positions(lam, M, d_m, 0 if seed is None else seed)
    else:
        raise ParameterError("placement must be 'lattice' or 'random'")
    sep = separation(X, lam)
    c = np.full(3, lam / 2)

    shell, _ = sphere_rule(14)
    inner = (X[:, None, :] + 0.5 * a * shell[None]).reshape(-1, 3)
    offset = 0.25 * lam
    wall_src, _, _ = _face_rule(lam, source_nodes, offset)
    sources = _Sources(X, np.vstack([inner, wall_src]), n)

    # collocation: sphere nodes and wall nodes, weighted by sqrt(area element)
    sp, sw = sphere_rule(sphere_nodes)
    sph_pts = (X[:, None, :] + a * sp[None]).reshape(-1, 3)
    sph_w = np.tile(np.sqrt(4 * np.pi * a**2 * sw), M)
    wall_pts, _, wall_w = _face_rule(lam, wall_nodes)
    pts = np.vstack([sph_pts, wall_pts])
    wts = np.concatenate([sph_w, np.sqrt(wall_w)])
    target = np.vstack([w_field(w_profile, c, sph_pts), np.zeros_like(wall_pts)])
    A = sources.matrix(pts) * np.repeat(wts, 3)[:, None]
    rhs = (target * wts[:, None]).ravel()
    coef, _, rank, sv = np.linalg.lstsq(A, rhs, rcond=None)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else math.inf
    if cond > max_condition:
        raise ConditioningError(f"collocation matrix condition {cond:.3g} exceeds {max_condition:.3g}", cond)

    # boundary mismatch on a finer set of nodes
    fp, _ = product_sphere_rule(12)
    chk_s = (X[:, None, :] + a * fp[None]).reshape(-1, 3)
    chk_w, _, _ = _face_rule(lam, 2 * wall_nodes + 1)
    u_s_sph, _, _ = _field(sources, coef, chk_s)
    u_w, _, _ = _field(sources, coef, chk_w)
    residual = float(max(np.max(np.abs(u_s_sph - w_field(w_profile, c, chk_s))), np.max(np.abs(u_w))))

    error = math.sqrt(max(_difference_energy(sources, coef, X, n, w_profile, c, lam), 0.0))
    shape = math.sqrt(M / n) * (1 / math.sqrt(n) + math.sqrt(M / (n * sep)))
    nf = w_norm_factor(w_profile, lam)
    return CellProblemResult(error, nf * shape, shape, nf, residual, cond, sep, lam, M, n, X)


def _difference_energy(sources, coef, X, n, profile, c, lam, sphere_order=24, face_nodes=40):
    """Boundary identity for v = u - u_s on the fluid domain (outward normal of the fluid)."""
    a = 1.0 / n
    wv = w_field(profile, c, X)
    total = 0.0
    sp, sw = product_sphere_rule(sphere_order)
    for Xi in X:
        x = Xi + a * sp
        nu = -sp  # fluid normal points into the sphere
        u, g, p = _field(sources, coef, x)
        us, gs, ps = _stokeslet_sum(X, n, wv, x)
        v, gv, q = u - us, g - gs, p - ps
        flux = np.einsum("qi,qik,qk->q", v, gv, nu) - q * np.einsum("qi,qi->q", v, nu)
        total += 4 * np.pi * a**2 * float(sw @ flux)
    fp, fn, fw = _face_rule(lam, face_nodes)
    u, g, p = _field(sources, coef, fp)
    us, gs, ps = _stokeslet_sum(X, n, wv, fp)
    v, gv, q = u - us, g - gs, p - ps
    flux = np.einsum("qi,qik,qk->q", v, gv, fn) - q * np.einsum("qi,qi->q", v, fn)
    total += float(fw @ flux)
    return total


def volume_energy(result_sources, coef, X, n, profile, lam, samples=200_000, seed=0):
    """Monte Carlo of |grad(u - u_s)|^2 over the fluid part of the cube (cross-check)."""
    rng = make_rng(seed)
    x = rng.uniform(0, lam, (samples, 3))
    d = np.min(np.linalg.norm(x[:, None] - X[None], axis=-1), axis=1)
    x = x[d > 1.0 / n]
    c = np.full(3, lam / 2)
    _, g, _ = _field(result_sources, coef, x)
    _, gs, _ = _stokeslet_sum(X, n, w_field(profile, c, X), x)
    return lam**3 * float(np.sum((g - gs) ** 2)) / samples


def cell_scaling_study(M=4, n=50, multiples=(8, 16, 32), width_factor=3.0, w_profile="shear"):
    """Error for d_m = k/n and cell width width_factor * d_m; slope of log error vs log(1/d_m)."""
    rows = []
    for k in multiples:
        d = k / n
        rows.append(cell_problem_experiment(width_factor * d, M, n, d, w_profile))
    x = np.log([1.0 / r.d_m for r in rows])
    y = np.log([r.error for r in rows])
    return {"rows": rows, "slope": float(np.polyfit(x, y, 1)[0])}
