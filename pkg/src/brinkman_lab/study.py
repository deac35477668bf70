"""Monte-Carlo studies over sampled particle clouds and audits of the deterministic constants.

Every replica is keyed by (master_seed, n, r) so that the convergence,
bound and concentration studies see the same clouds.  Sub-streams:

    (master_seed, n, r)       the cloud itself
    (master_seed, n, r, 1)    reference sample of rho for W1 and the rho dual norm
    (master_seed, n, r, 2)    reference sample of j for the flux dual norms
    (master_seed, n, r, 3)    test-function dictionary of the lower flux estimate
    (master_seed, n, r, 4)    quasi-Monte Carlo points of the L2 error

Replicas may run on a thread pool; results are folded in (n, r) order.
"""

import copy
import json
import logging
import math
import platform
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources

import jsonschema
import numpy as np
from scipy.stats import binomtest

from . import __version__
from .annulus import build_annulus_map, map_derivative_audit, pw_constant_estimate, pw_scaling_study
from .brinkman import aligned_half_width, problem_from_density, solve_brinkman, verify_elliptic_bounds
from .cellproblem import cell_scaling_study
from .config_geometry import ParticleConfiguration, classify_concentration
from .errors import ConvergenceError, ParameterError, SaturationError
from .sampling import density_from_spec, make_rng, sample_conditioned, seed_sequence
from .solver import dirichlet_energy, energy_bound_rhs, l2_error_ball, solve
from .transport import (
    EmpiricalMeasure,
    density_measure,
    flux_distance,
    flux_measure,
    flux_reference,
    holder_dual_upper,
    loglog_slope,
    w1_discrete,
)

log = logging.getLogger(__name__)

DEFAULT_CONFIG = {
    "master_seed": 20240611,
    "n_list": [50, 100, 200, 400, 800],
    "reps": 30,
    "concentration_reps": None,
    "sampling": "conditioned",
    "distribution": {"type": "shear", "box": [[-0.5, -0.5, -0.5], [0.5, 0.5, 0.5]], "rate": 1.0},
    "solver": {"scheme": "direct", "tol": 1e-10, "max_iter": 200},
    "brinkman": {"m": 128, "tol": 1e-8, "max_iter": 500},
    "alpha": 0.8,
    "beta": 0.4,
    "eta": 0.1,
    "delta": 1.0,
    "mode": "lemma",
    "R": 1.5,
    "ball_center": [0.0, 0.0, 0.0],
    "quad_points": 16384,
    "energy_order": 14,
    "dictionary_size": 200,
    "constants": {
        "pw_deltas": [4, 8, 16, 32],
        "pw_grid_m": 48,
        "map_deltas": [4, 8, 16, 32],
        "cell_M": 4,
        "cell_n": 50,
        "cell_multiples": [8, 16, 32],
        "cell_width_factor": 3.0,
        "cell_profile": "shear",
    },
    "output_dir": "study_out",
    "threads": 1,
}

NESTED = ("solver", "brinkman", "constants")


def e1(alpha):
    """Exponent of the n-dependent term of the composite bound."""
    return min((1.0 - alpha) / 95.0, (3.0 * alpha - 2.0) / 2.0)


def composite_bound(w1, flux, n, alpha):
    """W1^(1/57) + flux^(1/3) + n^(-e1(alpha))."""
    return max(w1, 0.0) ** (1 / 57) + max(flux, 0.0) ** (1 / 3) + n ** (-e1(alpha))


def theorem_bracket(n, mean_v2, rho_l2, rho_dual, flux_dual, alpha, delta, eta):
    """(1/eta)[flux + (1 + mean|V|^2)^(5/4)((1 + |rho|_2)/delta^(1/3) + delta^6 (n^(-(1-alpha)/5) + rho_dual))]."""
    moment = (1.0 + mean_v2) ** 1.25
    inner = (1.0 + rho_l2) / delta ** (1 / 3) + delta**6 * (n ** (-(1.0 - alpha) / 5.0) + rho_dual)
    return (flux_dual + moment * inner) / eta


def smallness_threshold(f):
    """Largest admissible eta, 1/(2 e C1), with C1 = max(1, sup rho)."""
    return 1.0 / (2.0 * math.e * max(1.0, f.rho_sup))


# ---------------------------------------------------------------------------
# configuration


def load_schema():
    text = resources.files("brinkman_lab").joinpath("schema/study_config.schema.json").read_text()
    return json.loads(text)


def _merge(doc):
    out = copy.deepcopy(DEFAULT_CONFIG)
    for k, v in doc.items():
        if k in NESTED and isinstance(v, dict):
            out[k] = {**out[k], **v}
        elif k == "distribution" and isinstance(v, dict):
            out[k] = dict(v)
        else:
            out[k] = v
    return out


@dataclass(frozen=True)
class StudyConfig:
    master_seed: int
    n_list: tuple
    reps: int
    concentration_reps: object
    sampling: str
    distribution: dict
    solver: dict
    brinkman: dict
    alpha: float
    beta: float
    eta: float
    delta: float
    mode: str
    R: float
    ball_center: tuple
    quad_points: int
    energy_order: int
    dictionary_size: int
    constants: dict
    output_dir: str
    threads: int

    @classmethod
    def from_dict(cls, doc):
        """Defaults, then schema validation, then the range checks the schema cannot express."""
        if not isinstance(doc, dict):
            raise ParameterError("configuration must be a JSON object")
        merged = _merge(doc)
        try:
            jsonschema.validate(merged, load_schema())
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ParameterError(f"config {where}: {exc.message}") from exc
        n_list = [int(n) for n in merged["n_list"]]
        if any(b <= a for a, b in zip(n_list, n_list[1:])):
            raise ParameterError("n_list must be strictly increasing")
        if not 2 / 3 < merged["alpha"] < 1:
            raise ParameterError("alpha must lie in (2/3, 1)")
        if merged["mode"] == "lemma" and not 0 < merged["beta"] < 0.5:
            raise ParameterError("beta must lie in (0, 1/2)")
        if not 0 < merged["eta"] < 1:
            raise ParameterError("eta must lie in (0, 1)")
        if not merged["delta"] > 0.5:
            raise ParameterError("delta must exceed 1/2")
        density_from_spec(merged["distribution"])
        merged["n_list"] = tuple(n_list)
        merged["ball_center"] = tuple(float(c) for c in merged["ball_center"])
        return cls(**merged)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ParameterError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(doc)

    def to_dict(self):
        d = {k: copy.deepcopy(getattr(self, k)) for k in self.__dataclass_fields__}
        d["n_list"] = list(self.n_list)
        d["ball_center"] = list(self.ball_center)
        return d

    def replace(self, **changes):
        d = self.to_dict()
        d.update(changes)
        return StudyConfig.from_dict(d)

    def law(self):
        return density_from_spec(self.distribution)


@dataclass
class StudyReport:
    kind: str
    config: dict
    tables: dict
    replicas: list
    fits: dict
    checks: dict
    warnings: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)

    def to_dict(self, include_timing=False):
        d = {
            "kind": self.kind,
            "config": self.config,
            "tables": self.tables,
            "replicas": self.replicas,
            "fits": self.fits,
            "checks": self.checks,
            "warnings": self.warnings,
            "provenance": self.provenance,
        }
        if include_timing:
            d["timing"] = self.timing
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], d["config"], d["tables"], d["replicas"], d["fits"], d["checks"],
                   d.get("warnings", []), d.get("provenance", {}), d.get("timing", {}))

    def table(self, name="per_n"):
        return self.tables[name]


def provenance(cfg):
    import ot
    import scipy

    return {
        "master_seed": cfg.master_seed,
        "package_version": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pot": ot.__version__,
        "python": platform.python_version(),
    }


# ---------------------------------------------------------------------------
# helpers


def mean_se(values):
    v = np.asarray([x for x in values if x is not None and math.isfinite(x)], dtype=float)
    if len(v) == 0:
        return math.nan, math.nan, 0
    se = float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else math.nan
    return float(v.mean()), se, len(v)


def _run(tasks, worker, threads):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(worker, tasks))
    return [worker(t) for t in tasks]


def _sample(cfg, f, n, r):
    key = seed_sequence(cfg.master_seed, n, r)
    if cfg.sampling == "iid":
        x, v = f.sample(make_rng(key), n)
        return ParticleConfiguration(x, v, f.box)
    cfg_, _ = sample_conditioned(f, n, key)
    return cfg_


def reference_solution(cfg, f=None):
    """Brinkman field u[rho, j] of the study's law on a grid covering the error ball."""
    f = cfg.law() if f is None else f
    m = cfg.brinkman["m"]
    center = (f.lo + f.hi) / 2
    reach = float(np.linalg.norm(np.asarray(cfg.ball_center) - center)) + cfg.R
    L = aligned_half_width((f.lo, f.hi), m)
    if L < 1.5 * reach:
        L = aligned_half_width((f.lo, f.hi), m, min_half_width=1.5 * reach)
    problem = problem_from_density(f, m=m, L=L)
    return problem, solve_brinkman(problem, tol=cfg.brinkman["tol"], max_iter=cfg.brinkman["max_iter"])


# ---------------------------------------------------------------------------
# per-replica pipeline


def _particle_replica(cfg, f, reference, n, r):
    rec = {"n": n, "rep": r, "status": "solved"}
    try:
        config = _sample(cfg, f, n, r)
    except SaturationError as exc:
        log.warning("n=%d rep=%d: sampler saturated after %d attempts", n, r, exc.attempts)
        rec["status"] = "saturated"
        return rec
    rep = classify_concentration(config, cfg.alpha, cfg.beta, cfg.eta, cfg.mode)
    rec.update(d_min=rep.d_min, max_cell_count=rep.max_cell_count,
               in_O_alpha=rep.in_O_alpha, in_O_lambda_M=rep.in_O_lambda_M)

    x_ref = f.sample_positions(make_rng(seed_sequence(cfg.master_seed, n, r, 1)), n)
    rho_n, rho_ref = density_measure(config), EmpiricalMeasure.uniform(x_ref)
    rec["w1"] = w1_discrete(rho_n, rho_ref)
    rec["rho_dual"] = holder_dual_upper(rho_n, rho_ref, 0.5)
    j_ref = flux_reference(f, n, seed_sequence(cfg.master_seed, n, r, 2))
    jn = flux_measure(config)
    dict_seed = seed_sequence(cfg.master_seed, n, r, 3)
    half = flux_distance(jn, j_ref, theta=0.5, seed=dict_seed, dictionary_size=cfg.dictionary_size)
    lip = flux_distance(jn, j_ref, theta=1.0, seed=dict_seed, dictionary_size=cfg.dictionary_size)
    rec.update(flux_half_lower=half.lower, flux_half_upper=half.upper,
               flux_lower=lip.lower, flux_upper=lip.upper)
    V = np.asarray(config.velocities)
    rec["mean_v2"] = float(np.mean(np.sum(V * V, axis=1)))
    rec["bracket"] = theorem_bracket(n, rec["mean_v2"], f.rho_l2(), rec["rho_dual"], half.upper,
                                     cfg.alpha, cfg.delta, cfg.eta)

    if rep.concentrated:
        rec["status"] = "concentrated"
        return rec
    try:
        sol = solve(config, tol=cfg.solver["tol"], max_iter=cfg.solver["max_iter"], scheme=cfg.solver["scheme"])
        if not sol.converged:
            raise ConvergenceError("solver did not converge", sol.history)
    except ConvergenceError as exc:
        log.warning("n=%d rep=%d: solver diverged (%s); routed to the concentrated branch", n, r, exc)
        rec["status"] = "diverged"
        return rec
    rec["residual"] = sol.residual
    rec["error"] = l2_error_ball(sol, reference, cfg.R, cfg.quad_points,
                                 seed=seed_sequence(cfg.master_seed, n, r, 4), center=cfg.ball_center)
    energy = dirichlet_energy(sol, order=cfg.energy_order)
    rhs = energy_bound_rhs(config)
    rec["energy"] = energy
    rec["energy_rhs"] = rhs
    rec["energy_ratio"] = energy / rhs if rhs > 0 else 0.0
    rec["bound_ratio"] = rec["error"] / rec["bracket"]
    return rec


def _particle_replicas(cfg, f, reference):
    tasks = [(n, r) for n in cfg.n_list for r in range(cfg.reps)]

    def work(t):
        rec = _particle_replica(cfg, f, reference, *t)
        log.info("n=%d rep=%d %s", t[0], t[1], rec["status"])
        return rec

    return _run(tasks, work, cfg.threads)


def _values(recs, key):
    return [r[key] for r in recs if key in r]


def _stats(vals):
    v = np.asarray(vals, dtype=float)
    if len(v) == 0:
        return {"count": 0, "min": math.nan, "median": math.nan, "max": math.nan, "max_over_median": math.nan}
    med = float(np.median(v))
    return {"count": len(v), "min": float(v.min()), "median": med, "max": float(v.max()),
            "max_over_median": float(v.max() / med) if med > 0 else math.nan}


# ---------------------------------------------------------------------------
# studies


def _prepare(cfg):
    f = cfg.law()
    t0 = time.perf_counter()
    problem, reference = reference_solution(cfg, f)
    t_ref = time.perf_counter() - t0
    return f, problem, reference, t_ref


def run_convergence_study(cfg):
    """Errors of the particle flow against the Brinkman field, with transport distances and audits."""
    t_start = time.perf_counter()
    f, _, reference, t_ref = _prepare(cfg)
    recs = _particle_replicas(cfg, f, reference)
    rows = []
    for n in cfg.n_list:
        group = [r for r in recs if r["n"] == n]
        solved = [r for r in group if r["status"] == "solved"]
        row = {"n": n, "reps": len(group), "solved": len(solved),
               "concentrated": sum(r["status"] == "concentrated" for r in group),
               "diverged": sum(r["status"] == "diverged" for r in group),
               "saturated": sum(r["status"] == "saturated" for r in group)}
        row["concentrated_fraction"] = row["concentrated"] / len(group)
        for key in ("error", "w1", "flux_lower", "flux_upper", "flux_half_upper", "energy_ratio", "bound_ratio"):
            src = solved if key in ("error", "energy_ratio", "bound_ratio") else group
            m, se, c = mean_se(_values(src, key))
            row[f"{key}_mean"], row[f"{key}_se"], row[f"{key}_count"] = m, se, c
        row["composite_bound"] = composite_bound(row["w1_mean"], row["flux_upper_mean"], n, cfg.alpha)
        rows.append(row)

    ok = [r for r in rows if math.isfinite(r["error_mean"])]
    raw = [r["error_mean"] / r["composite_bound"] for r in ok]
    C = max(raw) if raw else math.nan
    for r in rows:
        r["composite_ratio"] = r["error_mean"] / (C * r["composite_bound"]) if C and C > 0 else math.nan

    ns = [r["n"] for r in rows]
    fits = {
        "error_slope": loglog_slope(ns, [r["error_mean"] for r in rows]),
        "w1_slope": loglog_slope(ns, [r["w1_mean"] for r in rows]),
        "flux_upper_slope": loglog_slope(ns, [r["flux_upper_mean"] for r in rows]),
        "flux_lower_slope": loglog_slope(ns, [r["flux_lower_mean"] for r in rows]),
        "composite_constant": C,
        "e1": e1(cfg.alpha),
    }
    energy = _stats(_values(recs, "energy_ratio"))
    checks = {
        "monotone_within_2se": _monotone(ok),
        "composite_ratio_le_1": all(r["composite_ratio"] <= 1 + 1e-12 for r in ok),
        "energy_ratio": energy,
        "energy_single_constant": bool(energy["count"] == 0 or energy["max_over_median"] <= 10),
    }
    if len(ok) >= 2:
        first = next(r for r in ok if r["n"] >= min(100, ok[-1]["n"]))
        checks["last_over_n100"] = ok[-1]["error_mean"] / first["error_mean"] if first["error_mean"] > 0 else math.nan
    warns = _eta_warning(cfg, f)
    timing = {"reference_s": t_ref, "total_s": time.perf_counter() - t_start}
    return StudyReport("convergence", cfg.to_dict(), {"per_n": rows}, recs, fits, checks, warns,
                       provenance(cfg), timing)


def _monotone(rows):
    for a, b in zip(rows, rows[1:]):
        slack = 2 * math.sqrt(np.nan_to_num(a["error_se"]) ** 2 + np.nan_to_num(b["error_se"]) ** 2)
        if b["error_mean"] > a["error_mean"] + slack:
            return False
    return True


def _eta_warning(cfg, f):
    limit = smallness_threshold(f)
    if cfg.eta >= limit:
        msg = f"eta = {cfg.eta:g} is not below the smallness threshold {limit:.4g}"
        warnings.warn(msg, stacklevel=3)
        return [msg]
    return []


def run_bound_audit(cfg):
    """Measured error over the error bracket on non-concentrated clouds, plus the energy audit."""
    t_start = time.perf_counter()
    f, _, reference, t_ref = _prepare(cfg)
    recs = _particle_replicas(cfg, f, reference)
    rows = []
    for n in cfg.n_list:
        solved = [r for r in recs if r["n"] == n and r["status"] == "solved"]
        b = _stats(_values(solved, "bound_ratio"))
        e = _stats(_values(solved, "energy_ratio"))
        row = {"n": n, "solved": len(solved)}
        row.update({f"bound_{k}": v for k, v in b.items() if k != "count"})
        row.update({f"energy_{k}": v for k, v in e.items() if k != "count"})
        rows.append(row)
    pooled_b = _stats(_values(recs, "bound_ratio"))
    pooled_e = _stats(_values(recs, "energy_ratio"))
    fits = {"bound_constant": pooled_b["max"], "energy_constant": pooled_e["max"]}
    checks = {"bound_ratio": pooled_b, "energy_ratio": pooled_e,
              "lhs_max": max(_values(recs, "error"), default=math.nan)}
    timing = {"reference_s": t_ref, "total_s": time.perf_counter() - t_start}
    return StudyReport("bounds", cfg.to_dict(), {"per_n": rows}, recs, fits, checks,
                       _eta_warning(cfg, f), provenance(cfg), timing)


def wilson_interval(k, total, level=0.95):
    ci = binomtest(int(k), int(total)).proportion_ci(confidence_level=level, method="wilson")
    return float(ci.low), float(ci.high)


def run_concentration_study(cfg):
    """Frequencies of the close-pair and crowded-cell events with Wilson intervals."""
    t_start = time.perf_counter()
    f = cfg.law()
    warns = _eta_warning(cfg, f)
    reps = cfg.concentration_reps or cfg.reps
    tasks = [(n, r) for n in cfg.n_list for r in range(reps)]

    def work(t):
        n, r = t
        try:
            config = _sample(cfg, f, n, r)
        except SaturationError:
            log.warning("n=%d rep=%d: sampler saturated", n, r)
            return {"n": n, "rep": r, "status": "saturated"}
        if n < 2:
            return {"n": n, "rep": r, "status": "ok", "in_O_alpha": False, "in_O_lambda_M": False, "d_min": math.inf}
        rep = classify_concentration(config, cfg.alpha, cfg.beta, cfg.eta, cfg.mode)
        return {"n": n, "rep": r, "status": "ok", "in_O_alpha": rep.in_O_alpha,
                "in_O_lambda_M": rep.in_O_lambda_M, "d_min": rep.d_min}

    recs = _run(tasks, work, cfg.threads)
    rows = []
    for n in cfg.n_list:
        group = [r for r in recs if r["n"] == n and r["status"] == "ok"]
        total = len(group)
        row = {"n": n, "reps": total, "saturated": sum(r["n"] == n and r["status"] == "saturated" for r in recs)}
        scale = n ** (2 - 3 * cfg.alpha)
        for key, name in (("in_O_alpha", "alpha"), ("in_O_lambda_M", "cell"),):
            k = sum(r[key] for r in group)
            lo, hi = wilson_interval(k, total) if total else (math.nan, math.nan)
            row[f"{name}_count"] = k
            row[f"{name}_freq"] = k / total if total else math.nan
            row[f"{name}_lo"], row[f"{name}_hi"] = lo, hi
            row[f"{name}_one_sided"] = k == 0
        k = sum(r["in_O_alpha"] or r["in_O_lambda_M"] for r in group)
        row["either_freq"] = k / total if total else math.nan
        row["rate"] = scale
        row["alpha_ratio"] = row["alpha_freq"] / scale
        row["alpha_ratio_lo"] = row["alpha_lo"] / scale
        row["alpha_ratio_hi"] = row["alpha_hi"] / scale
        row["n_beta"] = n**cfg.beta
        rows.append(row)

    ratios = [r["alpha_ratio"] for r in rows if r["alpha_count"] > 0]
    cell = [(r["n_beta"], math.log(r["cell_freq"])) for r in rows if r["cell_count"] > 0]
    fits = {
        "alpha_ratio_spread": max(ratios) / min(ratios) if ratios else math.nan,
        "alpha_slope": loglog_slope([r["n"] for r in rows], [r["alpha_freq"] for r in rows]),
        "alpha_slope_expected": 2 - 3 * cfg.alpha,
        "alpha_constant": max(ratios) if ratios else math.nan,
        "cell_log_slope": float(np.polyfit(*zip(*cell), 1)[0]) if len(cell) >= 2 else math.nan,
        "cell_log_slope_bound": math.log(2 * cfg.eta * max(1.0, f.rho_sup) * math.e),
    }
    overlap = all(max(r["alpha_ratio_lo"] for r in rows) <= r["alpha_ratio_hi"] for r in rows)
    checks = {"eta_below_threshold": not warns, "alpha_ratio_intervals_overlap": overlap,
              "smallness_threshold": smallness_threshold(f)}
    timing = {"total_s": time.perf_counter() - t_start}
    return StudyReport("concentration", cfg.to_dict(), {"per_n": rows}, recs, fits, checks, warns,
                       provenance(cfg), timing)


def run_constants_study(cfg):
    """PW constant of the annulus, stretching-map constants, cell problem, elliptic ratios."""
    t_start = time.perf_counter()
    c = cfg.constants
    pw = pw_scaling_study(tuple(c["pw_deltas"]), c["pw_grid_m"], seed=cfg.master_seed % (2**32))
    cube = pw_constant_estimate(1.0, c["pw_grid_m"], seed=cfg.master_seed % (2**32))
    pw_rows = [r.row() for r in pw["rows"]]
    maps = []
    for d in c["map_deltas"]:
        a = map_derivative_audit(build_annulus_map(d))
        maps.append({"delta": d, "k": a["k"], "chi1_min": a["chi1_min"], "chi1_max": a["chi1_max"],
                     "sigma1_min": a["sigma1_min"], "sigma1_max": a["sigma1_max"],
                     "inverse_error": a["inverse_error"], **a["constants"]})
    cell = cell_scaling_study(c["cell_M"], c["cell_n"], tuple(c["cell_multiples"]),
                              c["cell_width_factor"], c["cell_profile"])
    cell_rows = [{k: v for k, v in r.to_dict().items() if k != "positions"} for r in cell["rows"]]
    problem, reference = reference_solution(cfg)
    elliptic = verify_elliptic_bounds(problem, reference)
    fits = {"pw_slope": pw["slope"], "cube_pw": cube.pw_estimate, "cube_pw_exact": 2 / math.pi,
            "cell_slope": cell["slope"]}
    checks = {"pw_slope_in_window": 0.7 <= pw["slope"] <= 1.3,
              "cube_within_3pct": abs(cube.pw_estimate / (2 / math.pi) - 1) <= 0.03,
              "cell_slope_in_window": 0.3 <= cell["slope"] <= 0.7,
              "elliptic": {k: v for k, v in elliptic.items()}}
    timing = {"total_s": time.perf_counter() - t_start}
    return StudyReport("constants", cfg.to_dict(),
                       {"pw": pw_rows, "maps": maps, "cell": cell_rows},
                       [], fits, checks, [], provenance(cfg), timing)


STUDIES = {
    "convergence": run_convergence_study,
    "concentration": run_concentration_study,
    "bounds": run_bound_audit,
    "constants": run_constants_study,
}
