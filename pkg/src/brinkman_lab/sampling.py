"""Phase-space laws f(x, v), i.i.d. and conditioned sampling, partition functions.

Every law here has positions uniform on an axis-aligned box; they differ
in how velocities are drawn.  The conditioned law draws n i.i.d. phase
points and keeps the draw only if no two spheres of radius 1/n overlap.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import gaussian_kde

from .config_geometry import UNIT_BOX, ParticleConfiguration, close_pairs
from .errors import ParameterError, SaturationError

BALL_VOLUME = 4.0 * math.pi / 3.0


# ---------------------------------------------------------------------------
# seeds


def seed_sequence(seed, *key):
    """SeedSequence for (seed, key...); ints, sequences and SeedSequences accepted."""
    if isinstance(seed, np.random.SeedSequence):
        base = seed
        if key:
            return np.random.SeedSequence(base.entropy, spawn_key=tuple(base.spawn_key) + tuple(int(k) for k in key))
        return base
    return np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))


def make_rng(seed, *key):
    if isinstance(seed, np.random.Generator):
        if key:
            raise ParameterError("cannot derive keyed streams from a Generator")
        return seed
    return np.random.default_rng(seed_sequence(seed, *key))


# ---------------------------------------------------------------------------
# laws


class PhaseDensity:
    """Law with uniform positions on ``box`` and a velocity law given x."""

    kind = "abstract"

    def __init__(self, box=UNIT_BOX):
        lo, hi = (np.asarray(c, dtype=float) for c in box)
        if np.any(hi <= lo):
            raise ParameterError("box must have positive extent")
        self.lo, self.hi = lo, hi

    @property
    def box(self):
        return (tuple(self.lo.tolist()), tuple(self.hi.tolist()))

    @property
    def volume(self):
        return float(np.prod(self.hi - self.lo))

    @property
    def rho_sup(self):
        return 1.0 / self.volume

    def rho(self, x):
        x = np.asarray(x, dtype=float)
        inside = np.all((x >= self.lo) & (x <= self.hi), axis=-1)
        return np.where(inside, self.rho_sup, 0.0)

    def sample_positions(self, rng, m):
        return self.lo + (self.hi - self.lo) * rng.random((m, 3))

    def sample_velocities(self, rng, x):
        raise NotImplementedError

    def sample(self, rng, n):
        x = self.sample_positions(rng, n)
        return x, self.sample_velocities(rng, x)

    def mean_velocity(self, x):
        raise NotImplementedError

    def flux(self, x):
        return self.rho(x)[..., None] * self.mean_velocity(x)

    def moment(self, k):
        """M_k = integral of (1 + |v|^2)^(k/2) f(x, v)."""
        raise NotImplementedError

    def rho_l2(self):
        return math.sqrt(self.rho_sup)

    def to_dict(self):
        return {"type": self.kind, "box": [list(self.box[0]), list(self.box[1])]}

    def cell_fractions(self, axes, h):
        """Volume fraction of each grid cell (centered at the nodes ``axes``) inside the box."""
        fr = []
        for a, lo, hi in zip(axes, self.lo, self.hi):
            left = np.maximum(a - h / 2, lo)
            right = np.minimum(a + h / 2, hi)
            fr.append(np.clip(right - left, 0.0, None) / h)
        return fr[0][:, None, None] * fr[1][None, :, None] * fr[2][None, None, :]

    def rasterize(self, axes, h):
        """Cell-averaged rho and nodal j = rho * E[v | x] on the grid with node axes ``axes``."""
        frac = self.cell_fractions(axes, h)
        rho = frac * self.rho_sup
        X = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        mv = self.mean_velocity(X)
        j = np.moveaxis(rho[..., None] * mv, -1, 0)
        return rho, j


class UniformBox(PhaseDensity):
    """Uniform positions, every velocity equal to v0."""

    kind = "uniform_box"

    def __init__(self, box=UNIT_BOX, v0=(0.0, 0.0, 0.0)):
        super().__init__(box)
        self.v0 = np.asarray(v0, dtype=float)

    def sample_velocities(self, rng, x):
        return np.tile(self.v0, (len(x), 1))

    def mean_velocity(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.v0, x.shape).copy()

    def moment(self, k):
        return float((1 + self.v0 @ self.v0) ** (k / 2))

    def to_dict(self):
        return {**super().to_dict(), "v0": self.v0.tolist()}


class GaussianVelocity(PhaseDensity):
    """Uniform positions, velocities N(mean, sigma^2 I) independent of x."""

    kind = "gaussian_velocity"

    def __init__(self, box=UNIT_BOX, sigma=1.0, mean=(0.0, 0.0, 0.0)):
        super().__init__(box)
        if not sigma > 0:
            raise ParameterError("sigma must be positive")
        self.sigma = float(sigma)
        self.mean = np.asarray(mean, dtype=float)

    def sample_velocities(self, rng, x):
        return self.mean + self.sigma * rng.standard_normal((len(x), 3))

    def mean_velocity(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.mean, x.shape).copy()

    def velocity_density(self, v, x=None):
        z = (np.asarray(v, dtype=float) - self.mean) / self.sigma
        return np.exp(-0.5 * np.sum(z * z, axis=-1)) / ((2 * np.pi) ** 1.5 * self.sigma**3)

    def moment(self, k, nodes=40):
        t, w = np.polynomial.hermite_e.hermegauss(nodes)
        w = w / w.sum()
        V = self.mean + self.sigma * np.stack(np.meshgrid(t, t, t, indexing="ij"), axis=-1)
        W = w[:, None, None] * w[None, :, None] * w[None, None, :]
        return float(np.sum(W * (1 + np.sum(V * V, axis=-1)) ** (k / 2)))

    def to_dict(self):
        return {**super().to_dict(), "sigma": self.sigma, "mean": self.mean.tolist()}


class ShearProfile(PhaseDensity):
    """Uniform positions with v(x) = (rate * x_2, 0, 0), x_2 the second coordinate."""

    kind = "shear"

    def __init__(self, box=UNIT_BOX, rate=1.0):
        super().__init__(box)
        self.rate = float(rate)

    def mean_velocity(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        out[..., 0] = self.rate * x[..., 1]
        return out

    def sample_velocities(self, rng, x):
        return self.mean_velocity(x)

    def moment(self, k):
        y, w = np.polynomial.legendre.leggauss(64)
        a, b = self.lo[1], self.hi[1]
        y = a + (b - a) * (y + 1) / 2
        return float(np.sum(w / 2 * (1 + (self.rate * y) ** 2) ** (k / 2)))

    def to_dict(self):
        return {**super().to_dict(), "rate": self.rate}


class PointMass(PhaseDensity):
    """Every particle at x0 with velocity v0; admissible only for n = 1."""

    kind = "point_mass"

    def __init__(self, x0=(0.5, 0.5, 0.5), v0=(0.0, 0.0, 0.0)):
        self.x0 = np.asarray(x0, dtype=float)
        self.v0 = np.asarray(v0, dtype=float)
        self.lo, self.hi = self.x0.copy(), self.x0.copy()

    @property
    def volume(self):
        return 0.0

    @property
    def rho_sup(self):
        return math.inf

    def rho(self, x):
        raise ParameterError("a point mass has no density")

    def sample_positions(self, rng, m):
        return np.tile(self.x0, (m, 1))

    def sample_velocities(self, rng, x):
        return np.tile(self.v0, (len(x), 1))

    def mean_velocity(self, x):
        return np.broadcast_to(self.v0, np.shape(x)).copy()

    def moment(self, k):
        return float((1 + self.v0 @ self.v0) ** (k / 2))

    def to_dict(self):
        return {"type": self.kind, "x0": self.x0.tolist(), "v0": self.v0.tolist()}


def density_from_spec(spec):
    """Build a law from its JSON description {"type": ..., parameters...}."""
    spec = dict(spec)
    kind = spec.pop("type")
    if "box" in spec:
        spec["box"] = tuple(tuple(c) for c in spec["box"])
    table = {
        "uniform_box": UniformBox,
        "gaussian_velocity": GaussianVelocity,
        "shear": ShearProfile,
        "point_mass": PointMass,
    }
    if kind not in table:
        raise ParameterError(f"unknown distribution type {kind!r}")
    try:
        return table[kind](**spec)
    except TypeError as exc:
        raise ParameterError(f"bad parameters for {kind}: {exc}") from exc


# ---------------------------------------------------------------------------
# sampling


def sample_iid(f, n, seed):
    if n < 1:
        raise ParameterError("n must be at least 1")
    return f.sample(make_rng(seed), n)


def overlaps(x, n):
    i, _, _ = close_pairs(x, 2.0 / n)
    return len(i) > 0


@dataclass(frozen=True)
class SamplerReport:
    acceptance_rate: float
    attempts: int
    accepted: int
    partition_estimate: float
    partition_stderr: float
    seed: object


def _seed_label(seed):
    if isinstance(seed, np.random.SeedSequence):
        return [int(seed.entropy)] + [int(k) for k in seed.spawn_key]
    if isinstance(seed, np.random.Generator):
        return None
    return int(seed)


def sample_conditioned(f, n, seed, max_attempts=10_000):
    """One draw of the conditioned law by rejection."""
    if n < 1:
        raise ParameterError("n must be at least 1")
    if n >= 2 and not math.isfinite(f.rho_sup):
        raise ParameterError("the position law needs a bounded density for n >= 2")
    rng = make_rng(seed)
    for attempt in range(1, max_attempts + 1):
        x, v = f.sample(rng, n)
        if n == 1 or not overlaps(x, n):
            p = 1.0 / attempt
            rep = SamplerReport(p, attempt, 1, p, math.sqrt(p * (1 - p) / attempt), _seed_label(seed))
            return ParticleConfiguration(x, v, f.box), rep
    raise SaturationError(f"no admissible configuration in {max_attempts} attempts", attempts=max_attempts)


@dataclass(frozen=True)
class PartitionEstimate:
    value: float
    stderr: float
    trials: int
    lower_bound: float
    consistent: bool


def partition_lower_bound(n, rho_sup):
    """(1 - 8 c0 n^-2 ||rho||_inf)^n with the base clipped at 0."""
    return max(0.0, 1.0 - 8 * BALL_VOLUME * rho_sup / n**2) ** n


def estimate_partition(f, n, trials, seed):
    """Fraction of i.i.d. draws that are admissible."""
    if trials < 100:
        raise ParameterError("need at least 100 trials")
    bound = partition_lower_bound(n, f.rho_sup)
    if n == 1:
        return PartitionEstimate(1.0, 0.0, trials, bound, True)
    rng = make_rng(seed)
    hits = 0
    for _ in range(trials):
        if not overlaps(f.sample_positions(rng, n), n):
            hits += 1
    p = hits / trials
    se = math.sqrt(max(p * (1 - p), 0.0) / trials)
    return PartitionEstimate(p, se, trials, bound, p >= bound - 3 * se)


# ---------------------------------------------------------------------------
# assumption diagnostics


def _interior_grid(f, h, k=3):
    axes = []
    for lo, hi in zip(f.lo, f.hi):
        a, b = lo + 3 * h, hi - 3 * h
        if a >= b:
            a = b = 0.5 * (lo + hi)
        axes.append(np.linspace(a, b, k))
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)


def assumption_A1_diagnostics(f, n, reps, seed, k0=5, bins=3):
    """Estimates of the marginal density bound, the k0 moment and the pair-flux bound.

    C1_hat: Gaussian KDE (Scott bandwidth) of the one-particle position
    marginal, pooled over particles (the law is exchangeable), maximized
    over interior points at least three bandwidths from the box faces.
    C2_hat: mean of (1 + |V|^2)^(k0/2).
    C3_hat: largest binned value of the |v_1|-weighted two-particle
    position density, with bins of a bins^3 partition of the box.
    Standard errors come from the spread across replicas.
    """
    if reps < 100:
        raise ParameterError("need at least 100 accepted configurations")
    X, V = [], []
    for r in range(reps):
        cfg, _ = sample_conditioned(f, n, seed_sequence(seed, r))
        X.append(np.asarray(cfg.positions))
        V.append(np.asarray(cfg.velocities))
    X = np.array(X)
    V = np.array(V)
    pooled = X.reshape(-1, 3)
    kde = gaussian_kde(pooled.T, bw_method="scott")
    h = float(np.sqrt(kde.covariance[0, 0]))
    pts = _interior_grid(f, h)
    vals = kde(pts.T)
    N = len(pooled)
    c1_se = float(np.sqrt(vals.max() * (4 * np.pi) ** -1.5 / (N * np.linalg.det(kde.covariance) ** 0.5)))

    mk = (1 + np.sum(V**2, axis=-1)) ** (k0 / 2)
    per_rep = mk.mean(axis=1)
    c2 = float(per_rep.mean())
    c2_se = float(per_rep.std(ddof=1) / math.sqrt(reps))

    speed = np.linalg.norm(V, axis=-1)
    idx = np.clip(np.floor((X - f.lo) / (f.hi - f.lo) * bins).astype(int), 0, bins - 1)
    flat = idx[..., 0] + bins * (idx[..., 1] + bins * idx[..., 2])
    B = bins**3
    vol = f.volume / B
    per = np.empty((reps, B, B))
    for r in range(reps):
        s1 = np.bincount(flat[r], weights=speed[r], minlength=B)
        cnt = np.bincount(flat[r], minlength=B).astype(float)
        pair = np.outer(s1, cnt) - np.diag(s1)
        per[r] = pair / (n * (n - 1) * vol * vol) if n > 1 else 0.0
    mean = per.mean(axis=0)
    arg = np.unravel_index(np.argmax(mean), mean.shape)
    c3 = float(mean[arg])
    c3_se = float(per[:, arg[0], arg[1]].std(ddof=1) / math.sqrt(reps))
    return {
        "C1_hat": float(vals.max()),
        "C1_stderr": c1_se,
        "bandwidth": h,
        "C2_hat": c2,
        "C2_stderr": c2_se,
        "k0": k0,
        "C3_hat": c3,
        "C3_stderr": c3_se,
        "bins": bins,
        "reps": reps,
    }
