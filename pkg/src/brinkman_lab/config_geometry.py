"""Sphere-cloud configurations, separation statistics and concentration sets.

A configuration holds n centers X_i and velocities V_i; spheres have
radius 1/n and are admissible when every pair of centers is more than
2/n apart.  Concentration is measured two ways: a close pair (distance
below n^-alpha) or a crowded cell (at least M_N centers in one cube of
width lambda_N).
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import ParameterError, UndefinedInputError, ValidationError

UNIT_BOX = ((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ParticleConfiguration:
    positions: np.ndarray
    velocities: np.ndarray
    box: tuple = UNIT_BOX

    def __post_init__(self):
        pos = _frozen(self.positions).reshape(-1, 3)
        vel = _frozen(self.velocities).reshape(-1, 3)
        if pos.shape != vel.shape:
            raise ParameterError("positions and velocities must have the same length")
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(vel))):
            raise ParameterError("positions and velocities must be finite")
        lo, hi = (tuple(float(c) for c in corner) for corner in self.box)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "velocities", vel)
        object.__setattr__(self, "box", (lo, hi))

    @property
    def n(self):
        return len(self.positions)

    @property
    def radius(self):
        return 1.0 / self.n

    def with_velocities(self, velocities):
        return ParticleConfiguration(self.positions, velocities, self.box)

    def translated(self, shift):
        lo, hi = np.asarray(self.box)
        s = np.asarray(shift, dtype=float)
        return ParticleConfiguration(self.positions + s, self.velocities, (tuple(lo + s), tuple(hi + s)))

    def permuted(self, perm):
        return ParticleConfiguration(self.positions[perm], self.velocities[perm], self.box)


# ---------------------------------------------------------------------------
# pair search


def pair_distance(a, b):
    """Euclidean distance with a fixed operation order (used by every path)."""
    d = a - b
    return np.sqrt(d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2])


_HALF_OFFSETS = [
    (dx, dy, dz)
    for dx in (-1, 0, 1)
    for dy in (-1, 0, 1)
    for dz in (-1, 0, 1)
    if (dx, dy, dz) > (0, 0, 0)
]


def cell_pairs(positions, cutoff):
    """Candidate pairs (i < j) whose centers fall in adjacent cells of width ``cutoff``.

    Every pair at distance <= cutoff is included.  Returns index arrays
    i, j and their distances (unfiltered).
    """
    x = np.asarray(positions, dtype=float)
    m = len(x)
    if m < 2:
        return np.zeros(0, int), np.zeros(0, int), np.zeros(0)
    lo = x.min(axis=0)
    c = np.floor((x - lo) / cutoff).astype(np.int64)
    dims = c.max(axis=0) + 1
    key = c[:, 0] + dims[0] * (c[:, 1] + dims[1] * c[:, 2])
    order = np.argsort(key, kind="stable")
    skey = key[order]
    I, J = [], []
    for off in [(0, 0, 0)] + _HALF_OFFSETS:
        nc = c + np.array(off)
        ok = np.all((nc >= 0) & (nc < dims), axis=1)
        p = np.nonzero(ok)[0]
        nk = nc[p, 0] + dims[0] * (nc[p, 1] + dims[1] * nc[p, 2])
        start = np.searchsorted(skey, nk, side="left")
        stop = np.searchsorted(skey, nk, side="right")
        cnt = stop - start
        total = int(cnt.sum())
        if total == 0:
            continue
        first = np.repeat(start - np.cumsum(cnt) + cnt, cnt) + np.arange(total)
        qi = np.repeat(p, cnt)
        qj = order[first]
        if off == (0, 0, 0):
            keep = qj > qi
            qi, qj = qi[keep], qj[keep]
        I.append(qi)
        J.append(qj)
    if not I:
        return np.zeros(0, int), np.zeros(0, int), np.zeros(0)
    i = np.concatenate(I)
    j = np.concatenate(J)
    a, b = np.minimum(i, j), np.maximum(i, j)
    return a, b, pair_distance(x[a], x[b])


def close_pairs(positions, cutoff, strict=False):
    """All pairs i < j with distance <= cutoff (or < cutoff when ``strict``)."""
    x = np.asarray(positions, dtype=float)
    if len(x) < 2:
        return np.zeros(0, int), np.zeros(0, int), np.zeros(0)
    # the tree only proposes candidates; the cut uses pair_distance so every
    # path agrees bit for bit
    pairs = cKDTree(x).query_pairs(cutoff * (1 + 1e-12), output_type="ndarray")
    i, j = pairs[:, 0], pairs[:, 1]
    d = pair_distance(x[i], x[j])
    keep = d < cutoff if strict else d <= cutoff
    return i[keep], j[keep], d[keep]


def _positions(obj):
    return obj.positions if isinstance(obj, ParticleConfiguration) else np.asarray(obj, dtype=float)


def min_pair_distance(config, method="bucketed"):
    """Minimal center distance.  ``method`` is "bucketed" (cell lists) or "brute"."""
    x = _positions(config)
    m = len(x)
    if m < 2:
        raise UndefinedInputError("d_min needs at least two particles")
    if method == "brute":
        best = np.inf
        cols = np.arange(m)
        for s in range(0, m - 1, 256):
            rows = np.arange(s, min(m, s + 256))
            d = pair_distance(x[rows, None, :], x[None, :, :])
            d[cols[None, :] <= rows[:, None]] = np.inf
            best = min(best, float(d.min()))
        return best
    if method != "bucketed":
        raise ParameterError(f"unknown method {method!r}")
    extent = float(np.max(x.max(axis=0) - x.min(axis=0)))
    h = max(extent / max(m, 8) ** (1 / 3), 1e-300)
    while True:
        _, _, d = cell_pairs(x, h)
        hit = d[d <= h]
        if hit.size:
            return float(hit.min())
        if h > 2 * extent:
            return float(d.min())
        h *= 2.0


# ---------------------------------------------------------------------------
# validation


@dataclass
class ValidationReport:
    ok: bool
    close_pairs: list = field(default_factory=list)
    outside: list = field(default_factory=list)

    def __bool__(self):
        return self.ok


def inside_box(positions, box):
    lo, hi = np.asarray(box[0]), np.asarray(box[1])
    return np.all((positions >= lo) & (positions <= hi), axis=1)


def validate_configuration(config):
    """Lists pairs at distance <= 2/n and centers outside the box."""
    n = config.n
    i, j, d = close_pairs(config.positions, 2.0 / n) if n >= 2 else ([], [], [])
    pairs = sorted((int(a), int(b), float(c)) for a, b, c in zip(i, j, d))
    outside = [int(k) for k in np.nonzero(~inside_box(config.positions, config.box))[0]]
    return ValidationReport(ok=not pairs and not outside, close_pairs=pairs, outside=outside)


def require_valid(config):
    rep = validate_configuration(config)
    if not rep.ok:
        raise ValidationError(
            f"invalid configuration: {len(rep.close_pairs)} overlapping pairs, "
            f"{len(rep.outside)} centers outside the box",
            rep,
        )
    return rep


# ---------------------------------------------------------------------------
# concentration


@dataclass(frozen=True)
class ConcentrationParameters:
    M: float
    lam: float

    @property
    def M_ceil(self):
        return int(math.ceil(self.M - 1e-12))

    def __iter__(self):
        return iter((self.M, self.lam))


def _check_range(alpha, beta, eta, mode):
    if not 2 / 3 < alpha < 1:
        raise ParameterError("alpha must lie in (2/3, 1)")
    if mode == "lemma" and not 0 < beta < 0.5:
        raise ParameterError("beta must lie in (0, 1/2)")
    if not eta > 0:
        raise ParameterError("eta must be positive")
    if mode not in ("lemma", "theorem"):
        raise ParameterError(f"unknown mode {mode!r}")


def concentration_parameters(n, alpha=0.8, beta=0.4, eta=0.1, mode="lemma"):
    """M_N and lambda_N = (eta M_N / n)^(1/3).

    mode "lemma": M_N = n^beta.  mode "theorem": M_N = n^(3(1-alpha)/5).
    """
    _check_range(alpha, beta, eta, mode)
    if n < 1:
        raise ParameterError("n must be positive")
    M = n**beta if mode == "lemma" else n ** (3 * (1 - alpha) / 5)
    return ConcentrationParameters(M=float(M), lam=float((eta * M / n) ** (1 / 3)))


def cell_keys(positions, lam, origin):
    return np.floor((np.asarray(positions) - np.asarray(origin)) / lam).astype(np.int64)


def cell_occupancy(positions, lam, origin):
    keys = cell_keys(positions, lam, origin)
    occ = {}
    for idx, k in enumerate(map(tuple, keys.tolist())):
        occ.setdefault(k, []).append(idx)
    return occ


def max_cell_count(positions, lam, origin):
    keys = cell_keys(positions, lam, origin)
    if len(keys) == 0:
        return 0
    keys -= keys.min(axis=0)
    dims = keys.max(axis=0) + 1
    flat = keys[:, 0] + dims[0] * (keys[:, 1] + dims[1] * keys[:, 2])
    return int(np.bincount(flat).max())


@dataclass(frozen=True, eq=False)
class CellCovering:
    cell_width: float
    grid_offset: np.ndarray
    occupancy: dict
    corridor_fraction: float
    corridor_mass: float
    corridor_bound: float
    satisfied: bool
    offsets_tried: int

    @property
    def max_count(self):
        return max((len(v) for v in self.occupancy.values()), default=0)


def corridor_mask(positions, lam, origin, delta):
    """Centers within lam/delta of a cell face."""
    u = (np.asarray(positions) - np.asarray(origin)) / lam
    frac = u - np.floor(u)
    dist = np.min(np.minimum(frac, 1.0 - frac), axis=1) * lam
    return dist < lam / delta


def build_covering(config, lam, delta, offset_trials=1000, offsets=None):
    """Cube covering of width ``lam`` whose corridor carries little kinetic mass.

    Candidate offsets form a k^3 grid in [0, lam)^3 with k^3 ~ offset_trials
    (or are given explicitly).  The first offset minimizing
    (1/n) sum_{corridor} (1 + |V_i|^2) is kept; ``satisfied`` records whether
    it is below (12/delta) (1/n) sum_i (1 + |V_i|^2).
    """
    if not lam > 0:
        raise ParameterError("cell width must be positive")
    if not delta > 0.5:
        raise ParameterError("delta must exceed 1/2")
    lo = np.asarray(config.box[0], dtype=float)
    if offsets is None:
        k = max(1, int(round(offset_trials ** (1 / 3))))
        g = (np.arange(k) + 0.5) / k * lam
        offsets = np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1).reshape(-1, 3)
    offsets = np.atleast_2d(np.asarray(offsets, dtype=float))
    x = config.positions
    weight = 1.0 + np.sum(config.velocities**2, axis=1)
    n = max(config.n, 1)
    total = float(weight.sum() / n)
    best, best_mass = 0, np.inf
    for t, off in enumerate(offsets):
        mass = float(weight[corridor_mask(x, lam, lo - off, delta)].sum() / n)
        if mass < best_mass:
            best, best_mass = t, mass
    origin = lo - offsets[best]
    bound = 12.0 / delta * total
    return CellCovering(
        cell_width=float(lam),
        grid_offset=offsets[best].copy(),
        occupancy=cell_occupancy(x, lam, origin),
        corridor_fraction=1.0 / delta,
        corridor_mass=best_mass,
        corridor_bound=bound,
        satisfied=best_mass <= bound,
        offsets_tried=len(offsets),
    )


@dataclass(frozen=True)
class ConcentrationReport:
    d_min: float
    max_cell_count: int
    in_O_alpha: bool
    in_O_lambda_M: bool
    alpha: float
    beta: float
    eta: float
    M: float
    lam: float

    @property
    def concentrated(self):
        return self.in_O_alpha or self.in_O_lambda_M


def half_cell_shifts(lam):
    h = 0.5 * lam
    return [np.array([a, b, c]) * h for a in (0, 1) for b in (0, 1) for c in (0, 1)]


def classify_concentration(config, alpha=0.8, beta=0.4, eta=0.1, mode="lemma"):
    """Flags membership in the close-pair set and the crowded-cell set.

    The crowded-cell test uses cells anchored at the box's min corner and
    the 8 half-cell shifted grids; membership holds if any of them has a
    cell with at least ceil(M_N) centers.
    """
    n = config.n
    par = concentration_parameters(n, alpha, beta, eta, mode)
    d_min = min_pair_distance(config) if n >= 2 else math.inf
    lo = np.asarray(config.box[0], dtype=float)
    count = max(max_cell_count(config.positions, par.lam, lo - s) for s in half_cell_shifts(par.lam))
    return ConcentrationReport(
        d_min=d_min,
        max_cell_count=count,
        in_O_alpha=bool(d_min < n ** (-alpha)),
        in_O_lambda_M=bool(count >= par.M_ceil),
        alpha=alpha,
        beta=beta,
        eta=eta,
        M=par.M,
        lam=par.lam,
    )


def neighbor_counts(config):
    """For each i, #{j : |X_i - X_j| < 3/n}, i included."""
    n = config.n
    counts = np.ones(n, dtype=int)
    if n >= 2:
        i, j, _ = close_pairs(config.positions, 3.0 / n, strict=True)
        np.add.at(counts, i, 1)
        np.add.at(counts, j, 1)
    return counts


# ---------------------------------------------------------------------------
# serialization


def configuration_to_dict(config):
    return {
        "n": config.n,
        "radius": config.radius,
        "positions": config.positions.tolist(),
        "velocities": config.velocities.tolist(),
        "box": [list(config.box[0]), list(config.box[1])],
    }


def configuration_from_dict(doc, allow_invalid=False):
    try:
        box = doc.get("box", UNIT_BOX)
        config = ParticleConfiguration(doc["positions"], doc["velocities"], (tuple(box[0]), tuple(box[1])))
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed configuration document: {exc}") from exc
    if int(doc.get("n", config.n)) != config.n:
        raise ValidationError("declared n does not match the number of positions")
    if not allow_invalid:
        require_valid(config)
    return config


def save_configuration(config, path):
    with open(path, "w") as fh:
        json.dump(configuration_to_dict(config), fh)


def load_configuration(path, allow_invalid=False):
    with open(path) as fh:
        return configuration_from_dict(json.load(fh), allow_invalid=allow_invalid)
