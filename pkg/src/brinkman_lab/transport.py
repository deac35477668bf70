"""Wasserstein-1 distances and Holder-dual norms of empirical measures.

Exact W1 between discrete measures uses an assignment solver when both
measures have uniform weights (atoms replicated to a common count) and
the network simplex of POT otherwise.

For signed measures m, mb the dual norm
    sup { integral phi d(m - mb) : ||phi||_inf <= 1, [phi]_theta <= 1 }
is bracketed.  The upper estimator mollifies phi with a bump zeta_eps
supported in B(0, eps):
    |T2| <= A eps^theta (|m| + |mb|),      A = integral |y|^theta zeta
    |T1| <= (B / eps) min(p, q) W + |p - q|, B = ||grad zeta||_L1
where m - mb = P - Q with P, Q >= 0 of masses p, q and W = W1(P/p, Q/q).
The lower estimator maximizes the pairing over a dictionary of explicit
test functions with known Holder norms.
"""

import math
import os
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import quad
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist
from scipy.special import gamma

from .errors import DomainError, MassError, ParameterError
from .sampling import make_rng, sample_conditioned, seed_sequence

for _backend in ("PYTORCH", "TENSORFLOW", "JAX", "CUPY"):
    os.environ.setdefault("POT_BACKEND_DISABLE_" + _backend, "1")
import ot  # noqa: E402

MAX_ASSIGNMENT = 5000


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    atoms: np.ndarray
    weights: np.ndarray
    payload: np.ndarray = None

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.atoms, dtype=float))
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if len(w) != len(a):
            raise ParameterError("one weight per atom")
        if not np.all(np.isfinite(a)) or not np.all(np.isfinite(w)):
            raise DomainError("atoms and weights must be finite")
        if np.any(w < 0):
            raise DomainError("weights must be nonnegative")
        object.__setattr__(self, "atoms", a)
        object.__setattr__(self, "weights", w)
        if self.payload is not None:
            p = np.asarray(self.payload, dtype=float).reshape(len(a), -1)
            object.__setattr__(self, "payload", p)

    @classmethod
    def uniform(cls, atoms, payload=None):
        atoms = np.atleast_2d(np.asarray(atoms, dtype=float))
        m = len(atoms)
        return cls(atoms, np.full(m, 1.0 / m), payload)

    @property
    def mass(self):
        return float(self.weights.sum())

    @property
    def dim(self):
        return self.atoms.shape[1]

    def __len__(self):
        return len(self.atoms)

    def is_probability(self, tol=1e-12):
        return abs(self.mass - 1.0) <= tol

    def component(self, k):
        """Signed measure with weights w_i * payload_i[k]."""
        if self.payload is None:
            raise DomainError("measure has no vector payload")
        return SignedMeasure(self.atoms, self.weights * self.payload[:, k])

    def project(self, dims):
        return EmpiricalMeasure(self.atoms[:, dims], self.weights, self.payload)


@dataclass(frozen=True, eq=False)
class SignedMeasure:
    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "atoms", np.atleast_2d(np.asarray(self.atoms, dtype=float)))
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float).reshape(-1))

    @property
    def total_variation(self):
        return float(np.abs(self.weights).sum())


def _signed(m):
    if isinstance(m, SignedMeasure):
        return m
    if isinstance(m, EmpiricalMeasure):
        return SignedMeasure(m.atoms, m.weights)
    atoms, weights = m
    return SignedMeasure(atoms, weights)


def density_measure(config):
    return EmpiricalMeasure.uniform(config.positions)


def flux_measure(config):
    return EmpiricalMeasure.uniform(config.positions, payload=config.velocities)


def phase_measure(config):
    return EmpiricalMeasure.uniform(np.hstack([config.positions, config.velocities]))


# ---------------------------------------------------------------------------
# W1


def _uniform(w):
    return np.all(w == w[0])


def _w1_normalized(a, wa, b, wb):
    """W1 between probability vectors wa on a and wb on b."""
    if len(a) == 1 or len(b) == 1:
        if len(a) == 1:
            return float(wb @ np.linalg.norm(b - a[0], axis=1))
        return float(wa @ np.linalg.norm(a - b[0], axis=1))
    if _uniform(wa) and _uniform(wb):
        L = math.lcm(len(a), len(b))
        if L <= MAX_ASSIGNMENT:
            A = np.repeat(a, L // len(a), axis=0)
            B = np.repeat(b, L // len(b), axis=0)
            C = cdist(A, B)
            r, c = linear_sum_assignment(C)
            return float(C[r, c].sum() / L)
    C = cdist(a, b)
    wa = wa / wa.sum()
    wb = wb / wb.sum()
    return float(ot.emd2(wa, wb, C, numItermax=10_000_000))


def w1_discrete(mu, nu):
    """Exact W1 between two discrete measures of equal mass."""
    if len(mu) == 0 or len(nu) == 0:
        raise DomainError("empty measure")
    if mu.dim != nu.dim:
        raise DomainError("measures live in different dimensions")
    if abs(mu.mass - nu.mass) > 1e-9:
        raise MassError(f"mass mismatch {mu.mass} vs {nu.mass}")
    if mu.mass == 0:
        return 0.0
    return mu.mass * _w1_normalized(mu.atoms, mu.weights / mu.mass, nu.atoms, nu.weights / nu.mass)


@dataclass(frozen=True)
class Estimate:
    mean: float
    stderr: float
    reps: int
    values: tuple = ()


def _reference_sample(f, rng, m, space):
    x, v = f.sample(rng, m)
    return x if space == "position" else np.hstack([x, v])


def w1_empirical_vs_density(mu, f, m_ref=None, reps=10, seed=0, space="position"):
    """Mean W1 between ``mu`` and independent m_ref-point samples of f.

    Upper-biased estimator of W1(mu, f); the bias vanishes as m_ref grows.
    ``space`` is "position" (samples of rho) or "phase" (samples of f).
    """
    m_ref = 4 * len(mu) if m_ref is None else int(m_ref)
    if m_ref < len(mu):
        raise ParameterError("m_ref must be at least the atom count")
    vals = []
    for r in range(reps):
        ref = EmpiricalMeasure.uniform(_reference_sample(f, make_rng(seed, r), m_ref, space))
        vals.append(w1_discrete(mu, ref))
    vals = np.array(vals)
    se = float(vals.std(ddof=1) / math.sqrt(reps)) if reps > 1 else math.nan
    return Estimate(float(vals.mean()), se, reps, tuple(vals.tolist()))


# ---------------------------------------------------------------------------
# Holder dual norms


@lru_cache(maxsize=None)
def mollifier_constants(dim, theta):
    """(A, B) for zeta(y) = c exp(-1/(1-|y|^2)) on the unit ball of R^dim.

    A = integral |y|^theta zeta, B = integral |grad zeta|.
    """
    bump = lambda r: math.exp(-1.0 / (1.0 - r * r)) if r < 1 else 0.0
    dbump = lambda r: abs(-2 * r / (1 - r * r) ** 2 * bump(r)) if r < 1 else 0.0
    sphere = 2 * math.pi ** (dim / 2) / gamma(dim / 2)
    mass = sphere * quad(lambda r: bump(r) * r ** (dim - 1), 0, 1, epsabs=1e-14, limit=200)[0]
    A = sphere * quad(lambda r: bump(r) * r ** (dim - 1 + theta), 0, 1, epsabs=1e-14, limit=200)[0] / mass
    B = sphere * quad(lambda r: dbump(r) * r ** (dim - 1), 0, 1, epsabs=1e-14, limit=200)[0] / mass
    return A, B


def _split(m, mb):
    """P = m+ + mb-, Q = m- + mb+ as (atoms, weights) pairs."""
    atoms = np.vstack([m.atoms, mb.atoms])
    w = np.concatenate([m.weights, -mb.weights])
    pos, neg = w > 0, w < 0
    return (atoms[pos], w[pos]), (atoms[neg], -w[neg])


def _check_theta(theta):
    if not 0 < theta <= 1:
        raise ParameterError("theta must lie in (0, 1]")


def epsilon_grid(w, theta, points=25):
    lo, hi = sorted((w * w, math.sqrt(w)))
    grid = np.geomspace(lo, hi, points)
    return np.unique(np.append(grid, w ** (1.0 / (1.0 + theta))))


@dataclass(frozen=True)
class DualUpper:
    bound: float
    epsilon: float
    transport: float
    masses: tuple
    constants: tuple


def holder_dual_upper(m, m_bar, theta, detail=False):
    """Upper bound on the C^{0,theta}_b dual norm of m - m_bar (see module doc)."""
    _check_theta(theta)
    m, mb = _signed(m), _signed(m_bar)
    dim = m.atoms.shape[1]
    tv = m.total_variation + mb.total_variation
    (pa, pw), (qa, qw) = _split(m, mb)
    p, q = float(pw.sum()), float(qw.sum())
    A, B = mollifier_constants(dim, float(theta))

    def done(bound, eps, w):
        out = DualUpper(float(bound), eps, w, (p, q, tv), (A, B))
        return out if detail else out.bound

    if p == 0 and q == 0:
        return done(0.0, math.nan, 0.0)
    if p == 0 or q == 0:
        return done(max(p, q), math.nan, math.nan)
    w = _w1_normalized(pa, pw / p, qa, qw / q)
    if w == 0:
        return done(min(abs(p - q), tv), 0.0, 0.0)
    eps = epsilon_grid(w, theta)
    vals = np.minimum(A * eps**theta, 2.0) * tv + np.maximum(1.0, B / eps) * min(p, q) * w + abs(p - q)
    k = int(np.argmin(vals))
    if vals[k] >= tv:
        return done(tv, math.nan, w)
    return done(vals[k], float(eps[k]), w)


def _dictionary(atoms, size, rng):
    """Centers, radii and cosine frequencies for the test-function dictionary."""
    k = len(atoms)
    lo, hi = atoms.min(axis=0), atoms.max(axis=0)
    span = float(np.max(hi - lo)) or 1.0
    idx = rng.choice(k, size=min(k, max(1, size // 4)), replace=False)
    centers = np.vstack([atoms[idx], lo + (hi - lo) * rng.random((max(1, size // 8), atoms.shape[1]))])
    sub = atoms[rng.choice(k, size=min(k, 64), replace=False)]
    d = cdist(sub, sub)
    d = d[d > 0]
    radii = np.unique(np.concatenate([
        d if d.size < 32 else np.quantile(d, np.linspace(0.02, 1, 16)),
        span * np.geomspace(1e-3, 1.0, 8),
    ]))
    nfreq = max(1, size // 4)
    dirs = rng.standard_normal((nfreq, atoms.shape[1]))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    freqs = dirs * (np.geomspace(0.5, 200.0, nfreq) / span)[:, None]
    phases = rng.random(nfreq) * 2 * np.pi
    return centers, radii, freqs, phases


def _norm(sup, semi, norm):
    return max(sup, semi) if norm == "max" else sup + semi


def holder_dual_lower(m, m_bar, theta, dictionary_size=200, seed=0, norm="sum"):
    """Largest normalized pairing over an explicit dictionary of test functions.

    Dictionary: the constant 1; cones max(0, 1 - |z-c|/r) ([.]_theta = r^-theta);
    two-sided cones clip(1 - 2|z-c|/r, -1, 1) ([.]_theta <= 2 r^-theta);
    cosines cos(k.z + b) ([.]_theta <= 2^(1-theta) |k|^theta).  ``norm`` selects
    ||phi||_inf + [phi]_theta ("sum") or max of the two ("max").
    """
    _check_theta(theta)
    if norm not in ("sum", "max"):
        raise ParameterError("norm must be 'sum' or 'max'")
    m, mb = _signed(m), _signed(m_bar)
    atoms = np.vstack([m.atoms, mb.atoms])
    s = np.concatenate([m.weights, -mb.weights])
    best = abs(float(s.sum()))
    if not np.any(s):
        return 0.0
    rng = make_rng(seed)
    centers, radii, freqs, phases = _dictionary(atoms, dictionary_size, rng)
    dist = cdist(centers, atoms)
    for r in radii:
        cone = np.maximum(0.0, 1.0 - dist / r) @ s
        best = max(best, float(np.max(np.abs(cone))) / _norm(1.0, r**-theta, norm))
        two = np.clip(1.0 - 2.0 * dist / r, -1.0, 1.0) @ s
        best = max(best, float(np.max(np.abs(two))) / _norm(1.0, 2.0 * r**-theta, norm))
    cos = np.cos(atoms @ freqs.T + phases).T @ s
    semi = 2 ** (1 - theta) * np.linalg.norm(freqs, axis=1) ** theta
    best = max(best, float(np.max(np.abs(cos) / np.array([_norm(1.0, t, norm) for t in semi]))))
    return best


@dataclass(frozen=True)
class DualInterval:
    lower: float
    upper: float
    components: tuple


def flux_reference(f, m_ref, seed):
    """Sample surrogate of j = rho E[v|x]: m_ref points of rho with payload E[v|x]."""
    x = f.sample_positions(make_rng(seed), m_ref)
    return EmpiricalMeasure.uniform(x, payload=f.mean_velocity(x))


def flux_distance(jn, j, theta=0.5, m_ref=None, seed=0, dictionary_size=200, lower=True):
    """Per-component dual-norm bracket of jn - j summed over components.

    ``j`` is an EmpiricalMeasure with payload or a PhaseDensity, in which
    case it is replaced by ``flux_reference`` with m_ref points.
    """
    if jn.payload is None:
        raise DomainError("flux measure needs a velocity payload")
    if not isinstance(j, EmpiricalMeasure):
        j = flux_reference(j, m_ref or 4 * len(jn), seed)
    if j.payload is None:
        raise DomainError("reference flux needs a velocity payload")
    lo_sum, up_sum, comps = 0.0, 0.0, []
    for k in range(jn.payload.shape[1]):
        a, b = jn.component(k), j.component(k)
        up = holder_dual_upper(a, b, theta)
        lo = holder_dual_lower(a, b, theta, dictionary_size, seed) if lower else 0.0
        comps.append((lo, up))
        lo_sum += lo
        up_sum += up
    return DualInterval(lo_sum, up_sum, tuple(comps))


# ---------------------------------------------------------------------------
# chaos rates


def loglog_slope(n, y):
    n, y = np.asarray(n, float), np.asarray(y, float)
    ok = y > 0
    if ok.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(n[ok]), np.log(y[ok]), 1)[0])


def chaos_rate_study(f, n_list, reps, seed, m_ref_factor=1, phase=True):
    """E[W1(rho^N, rho)] and E[W1(mu^N, f)] over conditioned samples.

    Each replica compares the sampled cloud with one independent
    m_ref_factor * n point sample of the law.
    """
    n_list = [int(n) for n in n_list]
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ParameterError("n_list must be increasing")
    if reps < 10:
        raise ParameterError("need at least 10 replicas")
    rows = []
    for n in n_list:
        pos, ph = [], []
        for r in range(reps):
            cfg, _ = sample_conditioned(f, n, seed_sequence(seed, n, r))
            rng = make_rng(seed_sequence(seed, n, r, 1))
            x, v = f.sample(rng, m_ref_factor * n)
            pos.append(w1_discrete(density_measure(cfg), EmpiricalMeasure.uniform(x)))
            if phase:
                ph.append(w1_discrete(phase_measure(cfg), EmpiricalMeasure.uniform(np.hstack([x, v]))))
        pos = np.array(pos)
        row = {"n": n, "w1_position": float(pos.mean()), "w1_position_se": float(pos.std(ddof=1) / math.sqrt(reps))}
        if phase:
            ph = np.array(ph)
            row.update(w1_phase=float(ph.mean()), w1_phase_se=float(ph.std(ddof=1) / math.sqrt(reps)))
        rows.append(row)
    out = {
        "rows": rows,
        "reps": reps,
        "m_ref_factor": m_ref_factor,
        "slope_position": loglog_slope([r["n"] for r in rows], [r["w1_position"] for r in rows]),
    }
    if phase:
        out["slope_phase"] = loglog_slope([r["n"] for r in rows], [r["w1_phase"] for r in rows])
    return out
