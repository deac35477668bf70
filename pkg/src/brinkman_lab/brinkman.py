"""Stokes and Stokes-Brinkman flow on a periodic box that stands in for R^3.

Fields live on an m^3 grid of the box center + [-L, L)^3 with spacing
h = 2L/m, nodes at center - L + i h.  Derivatives are spectral.  The Leray
projector uses the wavevector with its Nyquist components zeroed, so the
projected field has an exactly vanishing discrete divergence; the
Laplacian uses the true |k|^2.

The Brinkman problem

    -Lap u + grad p + 6 pi rho u = 6 pi j,   div u = 0

is solved by preconditioned conjugate gradients on P(-Lap + 6 pi rho)P,
which is symmetric positive definite on divergence-free fields.  The
constant (zero) Fourier mode is pinned to zero unless rho is positive
everywhere, in which case the operator is already invertible on constants.
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import ConvergenceError, DomainError, ParameterError, ReportIOError

SIX_PI = 6.0 * math.pi


# ---------------------------------------------------------------------------
# spectral helpers


class _Spectrum:
    """Wavevectors of the rfft layout for an m^3 grid of side 2L."""

    def __init__(self, L, m):
        scale = 2 * math.pi / (2 * L)
        full = np.fft.fftfreq(m, d=1.0 / m) * scale
        half = np.fft.rfftfreq(m, d=1.0 / m) * scale
        self.k = [full[:, None, None], full[None, :, None], half[None, None, :]]
        self.k2 = self.k[0] ** 2 + self.k[1] ** 2 + self.k[2] ** 2
        kt = []
        for axis, k in enumerate(self.k):
            k = k.copy()
            if m % 2 == 0:
                idx = [slice(None)] * 3
                idx[axis] = m // 2
                k[tuple(idx)] = 0.0
            kt.append(k)
        self.kt = kt
        self.kt2 = kt[0] ** 2 + kt[1] ** 2 + kt[2] ** 2
        self.m = m
        # Parseval weights of the half spectrum
        w = np.full(m // 2 + 1, 2.0)
        w[0] = 1.0
        if m % 2 == 0:
            w[-1] = 1.0
        self.weight = w[None, None, :]

    def leray(self, uh):
        kd = self.kt[0] * uh[0] + self.kt[1] * uh[1] + self.kt[2] * uh[2]
        with np.errstate(invalid="ignore", divide="ignore"):
            q = np.where(self.kt2 > 0, kd / np.where(self.kt2 > 0, self.kt2, 1.0), 0.0)
        return np.stack([uh[c] - self.kt[c] * q for c in range(3)])

    def dot(self, ah, bh):
        """Grid sum of a.b from half spectra (Parseval)."""
        return float(np.sum(self.weight * np.real(np.conj(ah) * bh))) / self.m**3


def _fft(u):
    return np.fft.rfftn(u, axes=(-3, -2, -1))


def _ifft(uh, m):
    return np.fft.irfftn(uh, s=(m, m, m), axes=(-3, -2, -1))


# ---------------------------------------------------------------------------
# grid fields


@dataclass(frozen=True, eq=False)
class GridField:
    L: float
    m: int
    values: np.ndarray
    mean_zero: bool = True
    center: tuple = (0.0, 0.0, 0.0)
    iterations: int = 0
    residual: float = 0.0
    history: tuple = field(default=())

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (3, self.m, self.m, self.m):
            raise ParameterError(f"values must have shape (3, {self.m}, {self.m}, {self.m})")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @property
    def h(self):
        return 2.0 * self.L / self.m

    @property
    def lower(self):
        return np.asarray(self.center) - self.L

    def axes(self):
        return grid_axes(self.L, self.m, self.center)

    def covers(self, center, R):
        """True when the ball lies inside the interpolation range of the grid."""
        lo = self.lower
        hi = lo + (self.m - 1) * self.h
        c = np.asarray(center, dtype=float)
        return bool(np.all(c - R >= lo) and np.all(c + R <= hi))

    def evaluate(self, x):
        return evaluate(self, x)

    def divergence(self):
        sp = _Spectrum(self.L, self.m)
        uh = _fft(self.values)
        dh = 1j * (sp.kt[0] * uh[0] + sp.kt[1] * uh[1] + sp.kt[2] * uh[2])
        return _ifft(dh, self.m)

    def relative_divergence(self):
        """|div u| / |grad u| in the grid l2 sense (0 for a zero field)."""
        sp = _Spectrum(self.L, self.m)
        uh = _fft(self.values)
        dh = sp.kt[0] * uh[0] + sp.kt[1] * uh[1] + sp.kt[2] * uh[2]
        num = sp.dot(dh, dh)
        den = sum(sp.dot(sp.kt2 * uh[c], uh[c]) for c in range(3))
        return 0.0 if den == 0 else math.sqrt(num / den)

    def mean(self):
        return self.values.reshape(3, -1).mean(axis=1)

    def l2_norm(self):
        return math.sqrt(self.h**3 * float(np.sum(self.values**2)))

    def gradient_l2(self):
        sp = _Spectrum(self.L, self.m)
        uh = _fft(self.values)
        return math.sqrt(self.h**3 * sum(sp.dot(sp.k2 * uh[c], uh[c]) for c in range(3)))

    def hessian_l2(self):
        sp = _Spectrum(self.L, self.m)
        uh = _fft(self.values)
        return math.sqrt(self.h**3 * sum(sp.dot(sp.k2**2 * uh[c], uh[c]) for c in range(3)))

    def interpolation_error_bound(self):
        """(h^2/8) max_x sum_i |d_ii u| over components: trilinear error bound."""
        sp = _Spectrum(self.L, self.m)
        uh = _fft(self.values)
        worst = 0.0
        for c in range(3):
            s = sum(np.abs(_ifft(-(sp.k[i] ** 2) * uh[c], self.m)) for i in range(3))
            worst = max(worst, float(np.max(s)))
        return self.h**2 / 8.0 * worst

    def save(self, path):
        return save_field(self, path)

    def csv_slice(self, path, axis=2, index=None):
        return export_slice_csv(self, path, axis, index)


def grid_axes(L, m, center=(0.0, 0.0, 0.0)):
    h = 2.0 * L / m
    return [c - L + h * np.arange(m) for c in center]


def grid_points(L, m, center=(0.0, 0.0, 0.0)):
    ax = grid_axes(L, m, center)
    return np.stack(np.meshgrid(*ax, indexing="ij"), axis=-1)


# ---------------------------------------------------------------------------
# problems


@dataclass(frozen=True, eq=False)
class BrinkmanProblem:
    """rho (m, m, m) >= 0 and j (3, m, m, m) on the box center + [-L, L)^3.

    ``support`` is the declared box Omega_0 = (lo, hi) containing the data,
    or None when the data fill the whole periodic box.
    """

    rho: np.ndarray
    j: np.ndarray
    L: float
    center: tuple = (0.0, 0.0, 0.0)
    support: tuple = None

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=float)
        j = np.asarray(self.j, dtype=float)
        m = rho.shape[0]
        if rho.shape != (m, m, m) or j.shape != (3, m, m, m):
            raise ParameterError("rho must be (m, m, m) and j (3, m, m, m)")
        if not self.L > 0:
            raise ParameterError("L must be positive")
        if np.any(rho < 0) or not np.all(np.isfinite(rho)):
            raise ParameterError("rho must be finite and nonnegative")
        if not np.all(np.isfinite(j)):
            raise ParameterError("j must be finite")
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "j", j)
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if self.support is not None:
            lo, hi = (np.asarray(c, dtype=float) for c in self.support)
            c = np.asarray(self.center)
            margin = min(np.min(lo - (c - self.L)), np.min((c + self.L) - hi))
            if margin < self.L / 2:
                raise ParameterError(f"support margin {margin:.3g} is below L/2 = {self.L / 2:.3g}")
            h = 2 * self.L / m
            X = grid_points(self.L, m, self.center)
            outside = np.any((X < lo - h) | (X > hi + h), axis=-1)
            if np.any(rho[outside] != 0) or np.any(j[:, outside] != 0):
                raise ParameterError("rho or j is nonzero outside the declared support")
            object.__setattr__(self, "support", (tuple(lo.tolist()), tuple(hi.tolist())))

    @property
    def m(self):
        return self.rho.shape[0]

    @property
    def h(self):
        return 2.0 * self.L / self.m

    def norms(self):
        dv = self.h**3
        jm = np.sqrt(np.sum(self.j**2, axis=0))
        return {
            "rho_L3": float((dv * np.sum(self.rho**3)) ** (1 / 3)),
            "j_L65": float((dv * np.sum(jm ** 1.2)) ** (5 / 6)),
            "j_L2": float(math.sqrt(dv * np.sum(jm**2))),
        }

    def scaled(self, c_rho=1.0, c_j=1.0):
        return BrinkmanProblem(self.rho * c_rho, self.j * c_j, self.L, self.center, self.support)


def default_half_width(support):
    lo, hi = (np.asarray(c, dtype=float) for c in support)
    return 4.0 * float(np.linalg.norm(hi - lo))


def aligned_half_width(support, m, min_half_width=None):
    """Smallest L >= min_half_width whose spacing puts an odd number of cells across the support.

    With the grid centered on the support, its faces then fall on cell faces,
    so cell averages of a box indicator are exactly 0 or 1 away from nothing
    but the edges.
    """
    lo, hi = (np.asarray(c, dtype=float) for c in support)
    side = float(np.max(hi - lo))
    Lmin = default_half_width(support) if min_half_width is None else float(min_half_width)
    q = int(math.floor(m * side / (2 * Lmin)))
    if q % 2 == 0:
        q -= 1
    if q < 1:
        raise ParameterError(f"m = {m} is too coarse for half width {Lmin:g}")
    return m * side / q / 2


def problem_from_density(f, m=64, L=None, center=None):
    """Rasterize rho and j = rho E[v | x] of a phase law onto the grid.

    By default the grid is centered on the support with a half width from
    ``aligned_half_width``.
    """
    lo, hi = f.lo, f.hi
    if center is None:
        center = (lo + hi) / 2
    if L is None:
        L = aligned_half_width((lo, hi), m)
    h = 2.0 * L / m
    axes = grid_axes(L, m, center)
    rho, j = f.rasterize(axes, h)
    return BrinkmanProblem(rho, j, L, tuple(np.asarray(center, float).tolist()), (tuple(lo.tolist()), tuple(hi.tolist())))


def problem_from_configuration(config, m=64, L=None, center=None, width_cells=2.0):
    """Empirical rho^N and j^N mollified by a Gaussian of width ``width_cells`` grid cells."""
    X = np.asarray(config.positions)
    V = np.asarray(config.velocities)
    lo, hi = (np.asarray(c, dtype=float) for c in config.box)
    if center is None:
        center = (lo + hi) / 2
    if L is None:
        L = default_half_width((lo, hi))
    h = 2.0 * L / m
    base = np.asarray(center, float) - L
    s = (X - base) / h
    i0 = np.floor(s).astype(int)
    t = s - i0
    rho = np.zeros((m, m, m))
    j = np.zeros((3, m, m, m))
    w = 1.0 / (len(X) * h**3)
    for corner in np.ndindex(2, 2, 2):
        c = np.asarray(corner)
        wt = np.prod(np.where(c, t, 1 - t), axis=1) * w
        idx = tuple(((i0 + c) % m).T)
        np.add.at(rho, idx, wt)
        for d in range(3):
            np.add.at(j[d], idx, wt * V[:, d])
    sp = _Spectrum(L, m)
    kern = np.exp(-0.5 * sp.k2 * (width_cells * h) ** 2)
    rho = np.clip(_ifft(kern * _fft(rho), m), 0.0, None)
    j = _ifft(kern * _fft(j), m)
    return BrinkmanProblem(rho, j, L, tuple(np.asarray(center, float).tolist()))


# ---------------------------------------------------------------------------
# solvers


def solve_stokes(j, L, center=(0.0, 0.0, 0.0)):
    """u = 6 pi Leray(j) / |k|^2 with the zero mode set to 0."""
    j = np.asarray(j, dtype=float)
    m = j.shape[-1]
    sp = _Spectrum(L, m)
    jh = sp.leray(_fft(j))
    with np.errstate(divide="ignore", invalid="ignore"):
        uh = np.where(sp.k2 > 0, SIX_PI * jh / np.where(sp.k2 > 0, sp.k2, 1.0), 0.0)
    return GridField(L, m, _ifft(uh, m), True, center)


def _pinned(problem, zero_mode):
    if zero_mode not in ("auto", "pinned", "free"):
        raise ParameterError("zero_mode must be 'auto', 'pinned' or 'free'")
    if zero_mode == "auto":
        return not float(np.min(problem.rho)) > 0
    if zero_mode == "free" and not float(np.mean(problem.rho)) > 0:
        raise ParameterError("a free zero mode needs rho with positive mean")
    return zero_mode == "pinned"


def solve_brinkman(problem, tol=1e-8, max_iter=500, zero_mode="auto"):
    """Preconditioned CG on P(-Lap + 6 pi rho)P u = 6 pi P j, iterating in Fourier space."""
    if not tol > 0:
        raise ParameterError("tol must be positive")
    m, L = problem.m, problem.L
    sp = _Spectrum(L, m)
    pinned = _pinned(problem, zero_mode)
    rho6 = SIX_PI * problem.rho
    shift = SIX_PI * float(np.mean(problem.rho))

    def restrict(vh):
        vh = sp.leray(vh)
        if pinned:
            vh[:, 0, 0, 0] = 0.0
        return vh

    def apply(vh):
        return restrict(sp.k2 * vh + _fft(rho6 * _ifft(vh, m)))

    denom = sp.k2 + shift
    if pinned:
        denom = np.where(denom > 0, denom, 1.0)

    def precondition(rh):
        return rh / denom

    def dot(ah, bh):
        return sum(sp.dot(ah[c], bh[c]) for c in range(3))

    bh = restrict(SIX_PI * _fft(problem.j))
    bnorm = math.sqrt(dot(bh, bh))
    history = []
    xh = np.zeros_like(bh)
    if bnorm == 0:
        return GridField(L, m, np.zeros((3, m, m, m)), pinned, problem.center, 0, 0.0, ())
    # warm start from the constant-coefficient solve
    xh = precondition(bh)
    rh = bh - apply(xh)
    zh = precondition(rh)
    ph = zh.copy()
    rz = dot(rh, zh)
    res = math.sqrt(dot(rh, rh)) / bnorm
    history.append(res)
    it = 0
    while res >= tol:
        if it >= max_iter:
            raise ConvergenceError(f"CG did not reach tol {tol:g} in {max_iter} iterations", history)
        Ap = apply(ph)
        alpha = rz / dot(ph, Ap)
        xh = xh + alpha * ph
        rh = rh - alpha * Ap
        res = math.sqrt(dot(rh, rh)) / bnorm
        history.append(res)
        it += 1
        zh = precondition(rh)
        rz_new = dot(rh, zh)
        ph = zh + (rz_new / rz) * ph
        rz = rz_new
    # the recursive residual drifts from the true one over many iterations
    true_res = math.sqrt(dot(bh - apply(xh), bh - apply(xh))) / bnorm
    return GridField(L, m, _ifft(xh, m), pinned, problem.center, it, true_res, tuple(history))


def energy_identity(problem, u):
    """(int |grad u|^2 + 6 pi int rho |u|^2, 6 pi int j.u): equal for the exact solution."""
    dv = problem.h**3
    lhs = u.gradient_l2() ** 2 + SIX_PI * dv * float(np.sum(problem.rho * np.sum(u.values**2, axis=0)))
    rhs = SIX_PI * dv * float(np.sum(problem.j * u.values))
    return lhs, rhs


def verify_elliptic_bounds(problem, solution):
    """Ratios |grad u|_2 / |j|_{6/5} and |grad^2 u|_2 / (|j|_2 + |j|_{6/5})."""
    nrm = problem.norms()
    g = solution.gradient_l2()
    hs = solution.hessian_l2()
    if nrm["j_L65"] == 0:
        return {"ratio_grad": math.nan, "ratio_hess": math.nan, "undefined": True, **nrm}
    return {
        "ratio_grad": g / nrm["j_L65"],
        "ratio_hess": hs / (nrm["j_L2"] + nrm["j_L65"]),
        "undefined": False,
        "grad_L2": g,
        "hess_L2": hs,
        **nrm,
    }


# ---------------------------------------------------------------------------
# evaluation and persistence


def evaluate(fld, x):
    """Trilinear interpolation of the field at points x (..., 3)."""
    x = np.asarray(x, dtype=float)
    shape = x.shape
    p = x.reshape(-1, 3)
    lo = fld.lower
    hi = lo + (fld.m - 1) * fld.h
    if np.any(p < lo - 1e-12) or np.any(p > hi + 1e-12):
        raise DomainError("evaluation point outside the grid")
    p = np.clip(p, lo, hi)
    ax = fld.axes()
    out = np.empty_like(p)
    for c in range(3):
        out[:, c] = RegularGridInterpolator(ax, fld.values[c], method="linear")(p)
    return out.reshape(shape)


def save_field(fld, path):
    """Write ``<path>.json`` header and ``<path>.bin`` x-fastest little-endian float64 data."""
    path = Path(path)
    base = path.with_suffix("") if path.suffix in (".json", ".bin") else path
    header = {
        "L": fld.L,
        "m": fld.m,
        "components": 3,
        "layout": "x-fastest",
        "byte_order": "little-endian",
        "dtype": "float64",
        "center": list(fld.center),
        "mean_zero": fld.mean_zero,
        "iterations": fld.iterations,
        "residual": fld.residual,
        "data": base.name + ".bin",
    }
    try:
        base.parent.mkdir(parents=True, exist_ok=True)
        data = np.ascontiguousarray(fld.values.transpose(0, 3, 2, 1)).astype("<f8")
        base.with_suffix(".bin").write_bytes(data.tobytes())
        base.with_suffix(".json").write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise ReportIOError(f"cannot write field to {base}: {exc}") from exc
    return base.with_suffix(".json")


def load_field(path):
    path = Path(path)
    base = path.with_suffix("") if path.suffix in (".json", ".bin") else path
    try:
        header = json.loads(base.with_suffix(".json").read_text())
        raw = (base.parent / header["data"]).read_bytes()
    except OSError as exc:
        raise ReportIOError(f"cannot read field {base}: {exc}") from exc
    if header.get("layout") != "x-fastest" or header.get("byte_order") != "little-endian":
        raise ParameterError("unsupported field layout")
    m = int(header["m"])
    data = np.frombuffer(raw, dtype="<f8")
    if data.size != 3 * m**3:
        raise ParameterError("field data size does not match header")
    values = data.reshape(3, m, m, m).transpose(0, 3, 2, 1)
    return GridField(float(header["L"]), m, values.astype(float), bool(header.get("mean_zero", True)),
                     tuple(header.get("center", (0, 0, 0))), int(header.get("iterations", 0)),
                     float(header.get("residual", 0.0)))


def export_slice_csv(fld, path, axis=2, index=None):
    """CSV rows x, y, z, ux, uy, uz of the grid plane ``index`` normal to ``axis``."""
    index = fld.m // 2 if index is None else int(index)
    X = grid_points(fld.L, fld.m, fld.center)
    sl = [slice(None)] * 3
    sl[axis] = index
    pts = X[tuple(sl)].reshape(-1, 3)
    vals = np.moveaxis(fld.values[(slice(None),) + tuple(sl)], 0, -1).reshape(-1, 3)
    rows = np.hstack([pts, vals])
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        np.savetxt(path, rows, delimiter=",", header="x,y,z,ux,uy,uz", comments="", fmt="%.17g")
    except OSError as exc:
        raise ReportIOError(f"cannot write {path}: {exc}") from exc
    return Path(path)
