"""Stretching maps of [-1, 1] and the Neumann Poincare constant of a cubic annulus.

The map chi flattens the inner half [-1/2, 1/2] onto [-(1 - 1/delta), 1 - 1/delta]
and squeezes the rest into the thin outer layer:

    chi'(s) = 2 (1 - 1/delta) z(s) + k (1 - z(s)),   z(s) = zeta(delta (|s| - 1/2)_+),

with zeta an even smooth bump equal to 1 on [-1/4, 1/4] and 0 outside
[-1/2, 1/2], and k fixed by chi(1) = 1.  Here zeta(t) = 1 - S(4|t| - 1) with
S the smooth step of :mod:`brinkman_lab.stokeslets`; S(t) + S(1 - t) = 1
gives Z = int_0^{1/2} zeta = 3/8 exactly.
"""

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sps
from scipy.sparse.linalg import cg

from .errors import ConvergenceError, ParameterError, ReportIOError
from .stokeslets import smooth_step

ZETA_INTEGRAL = 0.375
_GL = np.polynomial.legendre.leggauss(64)


def zeta(t):
    """Even bump with 1 on |t| <= 1/4 and 0 on |t| >= 1/2; returns (zeta, zeta')."""
    t = np.asarray(t, dtype=float)
    s, ds, _ = smooth_step(4.0 * np.abs(t) - 1.0)
    return 1.0 - s, -4.0 * ds * np.sign(t)


def zeta_cumulative(u):
    """int_0^u zeta for u >= 0."""
    u = np.asarray(u, dtype=float)
    out = np.minimum(u, 0.25)
    mid = (u > 0.25) & (u < 0.5)
    if np.any(mid):
        x, w = _GL
        a = 0.25
        b = u[mid]
        nodes = a + (b[:, None] - a) * (x[None, :] + 1) / 2
        vals, _ = zeta(nodes)
        out = out.copy()
        out[mid] = a + (b - a) / 2 * (vals @ w)
    out = np.where(u >= 0.5, ZETA_INTEGRAL, out)
    return out


def interpolation_constant(delta):
    """k with chi(1) = 1."""
    Z = ZETA_INTEGRAL
    return ((1 - 2 * Z) / delta + 2 * Z / delta**2) / (0.5 - Z / delta)


@dataclass(frozen=True)
class AnnulusMap:
    delta: float
    k: float

    @property
    def plateau(self):
        return 2.0 * (1.0 - 1.0 / self.delta)

    def _weight(self, s):
        a = np.abs(np.asarray(s, dtype=float))
        z, dz = zeta(self.delta * np.clip(a - 0.5, 0.0, None))
        return z, dz

    def chi(self, s):
        s = np.asarray(s, dtype=float)
        a = np.abs(s)
        inner = self.plateau * np.minimum(a, 0.5)
        t = np.clip(a - 0.5, 0.0, None)
        outer = self.k * t + (self.plateau - self.k) * zeta_cumulative(self.delta * t) / self.delta
        return np.sign(s) * (inner + outer)

    def dchi(self, s):
        z, _ = self._weight(s)
        return self.plateau * z + self.k * (1.0 - z)

    def d2chi(self, s):
        s = np.asarray(s, dtype=float)
        _, dz = self._weight(s)
        return np.sign(s) * (self.plateau - self.k) * self.delta * dz * (np.abs(s) > 0.5)

    def sigma(self, x, tol=1e-13, max_iter=100):
        """Inverse of chi by Newton steps kept inside a shrinking bracket."""
        x = np.asarray(x, dtype=float)
        if np.any(np.abs(x) > 1 + 1e-12):
            raise ParameterError("sigma is defined on [-1, 1]")
        sgn = np.sign(x)
        y = np.abs(x)
        lo = np.zeros_like(y)
        hi = np.ones_like(y)
        inner = 1.0 - 1.0 / self.delta
        s = np.where(y <= inner, y / self.plateau, 0.5 + (y - inner) / (1.0 - inner) * 0.5)
        s = np.clip(s, 0.0, 1.0)
        for _ in range(max_iter):
            f = self.chi(s) - y
            lo = np.where(f < 0, s, lo)
            hi = np.where(f > 0, s, hi)
            step = s - f / self.dchi(s)
            bad = (step <= lo) | (step >= hi)
            new = np.where(bad, 0.5 * (lo + hi), step)
            if np.max(np.abs(new - s)) < tol:
                s = new
                break
            s = new
        return sgn * s

    def dsigma(self, x):
        return 1.0 / self.dchi(self.sigma(x))

    def d2sigma(self, x):
        s = self.sigma(x)
        return -self.d2chi(s) / self.dchi(s) ** 3


def build_annulus_map(delta):
    if not delta > 2:
        raise ParameterError("delta must exceed 2")
    return AnnulusMap(float(delta), interpolation_constant(float(delta)))


def map_derivative_audit(amap, samples=10_000, limit=100.0):
    """Extremes of chi', chi'', sigma', sigma'' on uniform grids and the implied constants.

    Constants: c_low = delta min chi' (for 1/delta <~ chi'), c_chi2 = max|chi''|/delta,
    c_sig1 = max sigma'/delta, c_sig2 = max|sigma''|/delta^4.
    """
    d = amap.delta
    y = np.linspace(-1.0, 1.0, samples)
    x = np.linspace(-1.0, 1.0, samples)
    c1, c2 = amap.dchi(y), amap.d2chi(y)
    s1, s2 = amap.dsigma(x), amap.d2sigma(x)
    report = {
        "delta": d,
        "k": amap.k,
        "chi1_min": float(c1.min()),
        "chi1_max": float(c1.max()),
        "chi2_absmax": float(np.abs(c2).max()),
        "sigma1_min": float(s1.min()),
        "sigma1_max": float(s1.max()),
        "sigma2_absmax": float(np.abs(s2).max()),
        "inverse_error": float(np.max(np.abs(amap.chi(amap.sigma(x)) - x))),
    }
    consts = {
        "c_low": 1.0 / (d * report["chi1_min"]),
        "c_chi2": report["chi2_absmax"] / d,
        "c_sig1": report["sigma1_max"] / d,
        "c_sig2": report["sigma2_absmax"] / d**4,
    }
    report["constants"] = consts
    report["chi1_le_2"] = report["chi1_max"] <= 2.0
    report["sigma1_ge_half"] = report["sigma1_min"] >= 0.5
    report["ok"] = bool(report["chi1_le_2"] and report["sigma1_ge_half"] and max(consts.values()) <= limit)
    return report


# ---------------------------------------------------------------------------
# Poincare-Wirtinger constant of the cubic annulus


def annulus_mask(delta, grid_m):
    """Cells (centers -1 + h/2 + i h) of [-1, 1]^3 outside the open cube of half width 1 - 1/delta.

    delta = 1 gives the full cube.
    """
    h = 2.0 / grid_m
    c = -1.0 + h / 2 + h * np.arange(grid_m)
    X = np.stack(np.meshgrid(c, c, c, indexing="ij"), axis=-1)
    inner = 1.0 - 1.0 / delta
    return np.max(np.abs(X), axis=-1) > inner, h


def neumann_laplacian(mask, h):
    """7-point Laplacian (positive semidefinite) with reflecting faces on the cell set ``mask``."""
    m = mask.shape[0]
    idx = -np.ones(mask.shape, dtype=np.int64)
    idx[mask] = np.arange(int(mask.sum()))
    rows, cols = [], []
    for axis in range(3):
        a = [slice(None)] * 3
        b = [slice(None)] * 3
        a[axis] = slice(0, m - 1)
        b[axis] = slice(1, m)
        both = mask[tuple(a)] & mask[tuple(b)]
        rows.append(idx[tuple(a)][both])
        cols.append(idx[tuple(b)][both])
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    N = int(mask.sum())
    W = sps.coo_matrix((np.ones(len(r)), (r, c)), shape=(N, N))
    W = (W + W.T).tocsr()
    deg = np.asarray(W.sum(axis=1)).ravel()
    return (sps.diags(deg) - W).tocsc() / h**2


@dataclass(frozen=True)
class PWEstimate:
    delta: float
    grid_m: int
    lambda1: float
    pw_estimate: float
    iterations: int
    history: tuple
    max_mean: float

    def row(self):
        return {"delta": self.delta, "grid_m": self.grid_m, "lambda1": self.lambda1,
                "pw_estimate": self.pw_estimate, "iterations": self.iterations}


def pw_constant_estimate(delta, grid_m=48, tol=1e-10, max_iter=500, seed=0):
    """1/sqrt(lambda_1) of the Neumann Laplacian on A(0, 1 - 1/delta, 1); delta = 1 is the full cube.

    Inverse power iteration on mean-free vectors.  The singular Neumann system
    is consistent for mean-free right-hand sides, so each inner solve is a
    conjugate-gradient run followed by removal of the mean.
    """
    if grid_m < 32:
        raise ParameterError("grid_m must be at least 32")
    if not delta >= 1:
        raise ParameterError("delta must be at least 1")
    mask, h = annulus_mask(delta, grid_m)
    A = neumann_laplacian(mask, h)
    N = A.shape[0]
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(N)
    x -= x.mean()
    x /= np.linalg.norm(x)
    history = []
    max_mean = 0.0
    rq_old = math.inf
    for it in range(1, max_iter + 1):
        y, info = cg(A, x, rtol=1e-13, atol=0.0, maxiter=20 * grid_m)
        if info != 0:
            raise ConvergenceError("inner conjugate-gradient solve failed", history, info={"cg_info": info})
        y -= y.mean()
        max_mean = max(max_mean, abs(float(y.mean())) / (np.linalg.norm(y) / math.sqrt(N)))
        x = y / np.linalg.norm(y)
        rq = float(x @ (A @ x))
        history.append(rq)
        if abs(rq - rq_old) <= tol * rq:
            return PWEstimate(float(delta), grid_m, rq, 1.0 / math.sqrt(rq), it, tuple(history), max_mean)
        rq_old = rq
    raise ConvergenceError("inverse iteration stagnated", history)


def pw_scaling_study(deltas=(4, 8, 16, 32), grid_m=48, seed=0):
    rows = [pw_constant_estimate(d, grid_m, seed=seed) for d in deltas]
    ld = np.log([r.delta for r in rows])
    lp = np.log([r.pw_estimate for r in rows])
    slope = float(np.polyfit(ld, lp, 1)[0])
    return {"rows": rows, "slope": slope}


def write_pw_csv(rows, path):
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["delta", "grid_m", "lambda1", "pw_estimate", "iterations"],
                               lineterminator="\n")
            w.writeheader()
            for r in rows:
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.row().items()})
    except OSError as exc:
        raise ReportIOError(f"cannot write {path}: {exc}") from exc
    return Path(path)
