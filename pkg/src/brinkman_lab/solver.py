"""Exterior Stokes flow around n translating spheres by Stokeslet superposition.

The field is approximated by U(x) = sum_j G[b_j](x - X_j) with strengths b
chosen so that U matches V_i at the centers after removing each sphere's
own (exact) contribution:

    b_i + sum_{j != i} G[b_j](X_i - X_j) = V_i.

Schemes:
  "reflections"  Jacobi iteration b <- V - T b (the method of reflections);
                 it diverges once the interaction operator T has spectral
                 radius above one, which happens for dense enough clouds;
  "direct"       dense LU solve of (I + T) b = V;
  "krylov"       matrix-free GMRES on the same system;
  "collocation"  least-squares fit of U to V_i at quadrature points on
                 every sphere surface.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres
from scipy.spatial import cKDTree
from scipy.stats import qmc

from .config_geometry import close_pairs, min_pair_distance, require_valid
from .errors import ConvergenceError, DomainError, ParameterError
from .quadrature import gauss_legendre, product_sphere_rule, sphere_rule
from .stokeslets import (
    _coefficients,
    stokeslet_matrix,
    superposition_field,
    superposition_gradient_pressure,
)

SCHEMES = ("reflections", "direct", "krylov", "collocation")


@dataclass(frozen=True, eq=False)
class StokesSolution:
    config: object
    strengths: np.ndarray
    iterations: int
    residual: float
    scheme: str
    converged: bool = True
    history: tuple = field(default=())

    @property
    def n(self):
        return self.config.n

    def evaluate(self, x):
        return evaluate(self, x)

    def to_dict(self, config_ref=None):
        return {
            "config": config_ref,
            "n": self.n,
            "strengths": self.strengths.tolist(),
            "residual": self.residual,
            "iterations": self.iterations,
            "scheme": self.scheme,
            "converged": self.converged,
        }


# ---------------------------------------------------------------------------
# interaction operator


def interaction_matrix(positions, n):
    """Dense (3m, 3m) matrix of T: block (i, j) = K(X_i - X_j) for j != i, 0 on the diagonal."""
    X = np.asarray(positions, dtype=float)
    m = len(X)
    d = X[:, None, :] - X[None, :, :]
    d[np.arange(m), np.arange(m)] = 1.0
    K = stokeslet_matrix(d, n)
    K[np.arange(m), np.arange(m)] = 0.0
    return K.transpose(0, 2, 1, 3).reshape(3 * m, 3 * m)


def interaction_apply(positions, b, n, block=512):
    """T b without forming T (rows processed in blocks)."""
    X = np.asarray(positions, dtype=float)
    m = len(X)
    out = np.empty_like(b)
    for s in range(0, m, block):
        rows = slice(s, min(m, s + block))
        d = X[rows, None, :] - X[None, :, :]
        idx = np.arange(rows.start, rows.stop)
        d[idx - s, idx] = 1.0
        r = np.linalg.norm(d, axis=-1)
        a, c = _coefficients(r, n)
        a[idx - s, idx] = 0.0
        c[idx - s, idx] = 0.0
        bx = np.einsum("mkc,kc->mk", d, b)
        out[rows] = a @ b + np.einsum("mk,mkc->mc", c * bx, d)
    return out


DENSE_LIMIT = 1500


def _apply(X, n, b, dense):
    return (dense @ b.ravel()).reshape(-1, 3) if dense is not None else interaction_apply(X, b, n)


def _reflections(X, V, n, tol, max_iter, dense):
    b = V.copy()
    history = []
    grow = 0
    for k in range(1, max_iter + 1):
        new = V - _apply(X, n, b, dense)
        upd = float(np.max(np.abs(new - b)))
        history.append(upd)
        b = new
        if upd < tol:
            return b, k, True, history
        grow = grow + 1 if len(history) > 1 and upd > history[-2] else 0
        if grow >= 5 or not np.isfinite(upd):
            raise ConvergenceError(
                "reflections diverge", history,
                info={"d_min": min_pair_distance(X) if len(X) > 1 else math.inf},
            )
    return b, max_iter, False, history


def _krylov(X, V, n, tol, max_iter, dense):
    m = 3 * len(X)
    op = LinearOperator((m, m), matvec=lambda y: y + _apply(X, n, y.reshape(-1, 3), dense).ravel(), dtype=float)
    history = []
    x, info = gmres(op, V.ravel(), rtol=tol, atol=0.0, restart=min(m, 200), maxiter=max_iter,
                    callback=lambda r: history.append(float(r)), callback_type="pr_norm")
    return x.reshape(-1, 3), len(history), info == 0, history


def _collocation(X, V, n, points):
    p, _ = sphere_rule(points)
    targets = (X[:, None, :] + p[None, :, :] / n).reshape(-1, 3)
    d = targets[:, None, :] - X[None, :, :]
    K = stokeslet_matrix(d, n)
    A = K.transpose(0, 2, 1, 3).reshape(3 * len(targets), 3 * len(X))
    rhs = np.repeat(V, len(p), axis=0).ravel()
    sol, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    return sol.reshape(-1, 3)


def solve(config, tol=1e-10, max_iter=200, scheme="reflections", residual_points=6, collocation_points=14):
    """Stokeslet strengths for the configuration; see module docstring for schemes."""
    if not tol > 0:
        raise ParameterError("tol must be positive")
    if scheme not in SCHEMES:
        raise ParameterError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
    require_valid(config)
    n = config.n
    X = np.asarray(config.positions)
    V = np.asarray(config.velocities)
    dense = interaction_matrix(X, n) if n <= DENSE_LIMIT and scheme != "collocation" else None
    history = []
    converged = True
    if n == 1:
        b, iters = V.copy(), 0
    elif scheme == "reflections":
        b, iters, converged, history = _reflections(X, V, n, tol, max_iter, dense)
    elif scheme == "direct":
        if dense is None:
            dense = interaction_matrix(X, n)
        b = np.linalg.solve(np.eye(3 * n) + dense, V.ravel()).reshape(-1, 3)
        iters = 1
    elif scheme == "krylov":
        b, iters, converged, history = _krylov(X, V, n, tol, max_iter, dense)
    else:
        b, iters = _collocation(X, V, n, collocation_points), 1
    sol = StokesSolution(config, b, iters, math.nan, scheme, converged, tuple(history))
    res = boundary_residual(sol, residual_points)
    return StokesSolution(config, b, iters, res, scheme, converged, tuple(history))


def collocation_residual(sol):
    """max_i |V_i - b_i - sum_{j != i} G[b_j](X_i - X_j)|."""
    X = np.asarray(sol.config.positions)
    r = np.asarray(sol.config.velocities) - sol.strengths - interaction_apply(X, sol.strengths, sol.n)
    return float(np.max(np.abs(r)))


def boundary_residual(sol, points_per_sphere=26):
    """Max over sphere quadrature points of |U(x) - V_i|."""
    X = np.asarray(sol.config.positions)
    V = np.asarray(sol.config.velocities)
    p, _ = sphere_rule(points_per_sphere)
    targets = (X[:, None, :] + p[None, :, :] / sol.n).reshape(-1, 3)
    U = superposition_field(X, sol.strengths, sol.n, targets).reshape(len(X), len(p), 3)
    return float(np.max(np.abs(U - V[:, None, :])))


def evaluate(sol, x):
    """V_i inside sphere i, the superposition field elsewhere."""
    x = np.asarray(x, dtype=float)
    shape = x.shape
    pts = x.reshape(-1, 3)
    X = np.asarray(sol.config.positions)
    dist, idx = cKDTree(X).query(pts)
    inside = dist <= 1.0 / sol.n
    out = np.empty_like(pts)
    out[inside] = np.asarray(sol.config.velocities)[idx[inside]]
    if np.any(~inside):
        out[~inside] = superposition_field(X, sol.strengths, sol.n, pts[~inside])
    return out.reshape(shape)


# ---------------------------------------------------------------------------
# energy


def _surface_flux(sol, center, radius, normal_sign, order, product=None):
    """integral over the sphere S(center, radius) of u.[(nu.grad)u - p nu], nu = normal_sign * xh."""
    p, w = product_sphere_rule(product) if product else sphere_rule(order)
    pts = center + radius * p
    X = np.asarray(sol.config.positions)
    u = superposition_field(X, sol.strengths, sol.n, pts)
    g, pr = superposition_gradient_pressure(X, sol.strengths, sol.n, pts)
    nu = normal_sign * p
    integrand = np.einsum("qi,qik,qk->q", u, g, nu) - pr * np.einsum("qi,qi->q", u, nu)
    return 4 * np.pi * radius**2 * float(w @ integrand)


def _boundary_energy(sol, order):
    X = np.asarray(sol.config.positions)
    n = sol.n
    p, w = sphere_rule(order)
    pts = (X[:, None, :] + p[None, :, :] / n).reshape(-1, 3)
    u = superposition_field(X, sol.strengths, n, pts)
    g, pr = superposition_gradient_pressure(X, sol.strengths, n, pts)
    nu = np.tile(-p, (len(X), 1))
    integrand = np.einsum("qi,qik,qk->q", u, g, nu) - pr * np.einsum("qi,qi->q", u, nu)
    return 4 * np.pi / n**2 * float(np.tile(w, len(X)) @ integrand)


def monopole_tail(force, R):
    """Dirichlet energy outside B(0, R) of the point-force field: 5 |F|^2 / (24 pi R)."""
    F = np.asarray(force, dtype=float)
    return 5.0 * float(F @ F) / (24.0 * np.pi * R)


def _shell_energy(sol, order, n_r, reach):
    X = np.asarray(sol.config.positions)
    n = sol.n
    c = X.mean(axis=0)
    spread = float(np.max(np.linalg.norm(X - c, axis=1)))
    inner = 0.0
    if spread > 0:
        # enclosing sphere well away from every particle so the angular
        # rule sees a smooth field
        r_in = 2.0 * spread + 2.0 / n
        inner = _boundary_energy(sol, order) + _surface_flux(sol, c, r_in, 1.0, order, product=24)
    else:
        r_in = 1.0 / n
    R = reach * 2.0 * r_in
    s, ws = gauss_legendre(math.log(r_in), math.log(R), n_r)
    r = np.exp(s)
    p, wa = product_sphere_rule(24) if spread > 0 else sphere_rule(50)
    pts = (c + r[:, None, None] * p[None]).reshape(-1, 3)
    g, _ = superposition_gradient_pressure(X, sol.strengths, n, pts)
    dens = np.sum(g**2, axis=(1, 2)).reshape(len(r), len(p))
    shells = 4 * np.pi * float(np.sum((ws * r**3)[:, None] * wa[None, :] * dens))
    force = 6 * np.pi / n * sol.strengths.sum(axis=0)
    return inner + shells + monopole_tail(force, R)


def dirichlet_energy(sol, method="boundary", order=26, n_r=64, reach=50.0):
    """Integral of |grad U|^2 over the fluid domain.

    "boundary": sum over spheres of the surface integral of
    u.[(nu.grad)u - p nu], nu pointing into the sphere (exact for the
    superposition field, which is a decaying Stokes flow outside the spheres).
    "shells": the same identity on the part of the fluid inside the ball
    that encloses the cloud, then radial shells (Gauss-Legendre in log r)
    out to ``reach`` cloud diameters and the point-force tail beyond.
    """
    if method == "boundary":
        return _boundary_energy(sol, order)
    if method == "shells":
        return _shell_energy(sol, order, n_r, reach)
    raise ParameterError(f"unknown energy method {method!r}")


def energy_bound_rhs(config):
    """(1/n) sum_i |V_i|^2 (1 + (1/n) sum_{j != i, |X_i-X_j| < 5/(2n)} 1/(|X_i - X_j| - 2/n))."""
    n = config.n
    V2 = np.sum(np.asarray(config.velocities) ** 2, axis=1)
    near = np.zeros(n)
    if n > 1:
        i, j, d = close_pairs(config.positions, 2.5 / n, strict=True)
        inv = 1.0 / (d - 2.0 / n)
        np.add.at(near, i, inv)
        np.add.at(near, j, inv)
    return float(np.sum(V2 * (1.0 + near / n)) / n)


def energy_bound_audit(config, sol, energy=None):
    lhs = dirichlet_energy(sol) if energy is None else energy
    rhs = energy_bound_rhs(config)
    ratio = lhs / rhs if rhs > 0 else (0.0 if lhs == 0 else math.inf)
    return {"lhs": lhs, "rhs": rhs, "ratio": ratio}


# ---------------------------------------------------------------------------
# error against a reference field


def ball_points(R, quad_points=16384, seed=0, center=(0.0, 0.0, 0.0)):
    """Scrambled Sobol points of the cube [-R, R]^3 that fall in B(0, R), with equal weights."""
    m = int(2 ** math.ceil(math.log2(max(quad_points, 2))))
    u = qmc.Sobol(d=3, scramble=True, seed=np.random.default_rng(seed)).random(m)
    x = (2 * u - 1) * R
    keep = np.sum(x * x, axis=1) <= R * R
    return np.asarray(center) + x[keep], (2 * R) ** 3 / m


def l2_error_ball(sol, reference, R, quad_points=16384, seed=0, center=(0.0, 0.0, 0.0)):
    """||U - u||_{L^2(B(center, R))} by randomized quasi-Monte Carlo.

    ``reference`` is a GridField (must cover the ball) or a callable
    mapping (m, 3) points to (m, 3) velocities.
    """
    if hasattr(reference, "covers") and not reference.covers(center, R):
        raise DomainError("reference field does not cover the ball")
    pts, w = ball_points(R, quad_points, seed, center)
    ref = reference.evaluate(pts) if hasattr(reference, "evaluate") else reference(pts)
    diff = evaluate(sol, pts) - ref
    return math.sqrt(w * float(np.sum(diff * diff)))
