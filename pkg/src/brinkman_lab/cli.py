"""Command-line entry point.

    brinkman-lab sample --n 200 --out run/
    brinkman-lab solve run/configuration.json --out run/
    brinkman-lab brinkman --config study.json --out run/
    brinkman-lab metrics run/configuration.json
    brinkman-lab study convergence --config study.json --threads 2
    brinkman-lab report run/convergence_report.json --out plots/

Exit codes: 0 success, 2 configuration or parameter error, 3 numerical
non-convergence, 4 I/O failure.
"""

import argparse
import json
import logging
import math
import sys
from pathlib import Path

from .errors import ConvergenceError, LabError, ReportIOError
from .study import STUDIES, StudyConfig

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


def _globals(parser, suppress):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--config", default=d(None), help="study configuration JSON")
    parser.add_argument("--seed", type=int, default=d(None), help="master seed (overrides the config)")
    parser.add_argument("--out", default=d(None), help="output directory")
    parser.add_argument("--threads", type=int, default=d(None), help="worker threads for replicas")
    parser.add_argument("--allow-invalid", action="store_true", default=d(False),
                        help="load configurations that violate non-overlap or containment")
    parser.add_argument("-v", "--verbose", action="count", default=d(0))


def build_parser():
    p = argparse.ArgumentParser(prog="brinkman-lab", description=__doc__.splitlines()[0])
    _globals(p, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _globals(common, suppress=True)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sample", parents=[common], help="draw one configuration")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--iid", action="store_true", help="skip the non-overlap conditioning")

    s = sub.add_parser("solve", parents=[common], help="solve the exterior Stokes problem")
    s.add_argument("configuration")
    s.add_argument("--scheme", default=None)
    s.add_argument("--tol", type=float, default=None)

    sub.add_parser("brinkman", parents=[common], help="solve the Brinkman problem of the config's law")

    s = sub.add_parser("metrics", parents=[common], help="geometry and transport metrics of a configuration")
    s.add_argument("configuration")
    s.add_argument("--m-ref", type=int, default=None)

    s = sub.add_parser("study", parents=[common], help="run a Monte-Carlo study")
    s.add_argument("kind", choices=sorted(STUDIES))

    s = sub.add_parser("report", parents=[common], help="re-emit tables and plots from a JSON report")
    s.add_argument("report")
    return p


def _config(args):
    cfg = StudyConfig.load(args.config) if args.config else StudyConfig.from_dict({})
    changes = {}
    if args.seed is not None:
        changes["master_seed"] = args.seed
    if args.threads is not None:
        changes["threads"] = args.threads
    if args.out is not None:
        changes["output_dir"] = args.out
    return cfg.replace(**changes) if changes else cfg


def _out(args, cfg=None):
    path = Path(args.out or (cfg.output_dir if cfg else "."))
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ReportIOError(f"cannot create {path}: {exc}") from exc
    return path


def _dump(obj, path=None):
    from .report import _clean, write_json

    if path is not None:
        write_json(obj, path)
    print(json.dumps(_clean(obj), sort_keys=True, indent=1))


def cmd_sample(args):
    from .config_geometry import ParticleConfiguration, configuration_to_dict
    from .sampling import make_rng, sample_conditioned

    cfg = _config(args)
    f = cfg.law()
    if args.iid:
        x, v = f.sample(make_rng(cfg.master_seed), args.n)
        config, info = ParticleConfiguration(x, v, f.box), {"attempts": 1}
    else:
        config, rep = sample_conditioned(f, args.n, cfg.master_seed)
        info = {"attempts": rep.attempts}
    out = _out(args, cfg) / "configuration.json"
    from .report import write_json

    write_json(configuration_to_dict(config), out)
    _dump({"path": str(out), "n": config.n, "seed": cfg.master_seed, **info})


def _load(args):
    from .config_geometry import load_configuration

    try:
        return load_configuration(args.configuration, allow_invalid=args.allow_invalid)
    except OSError as exc:
        raise ReportIOError(f"cannot read {args.configuration}: {exc}") from exc
    except json.JSONDecodeError as exc:
        from .errors import ValidationError

        raise ValidationError(f"{args.configuration}: invalid JSON ({exc})") from exc


def cmd_solve(args):
    from .solver import dirichlet_energy, energy_bound_audit, solve

    config = _load(args)
    cfg = _config(args)
    scheme = args.scheme or cfg.solver["scheme"]
    tol = args.tol or cfg.solver["tol"]
    sol = solve(config, tol=tol, max_iter=cfg.solver["max_iter"], scheme=scheme)
    if not sol.converged:
        raise ConvergenceError(f"{scheme} did not converge", sol.history)
    energy = dirichlet_energy(sol, order=cfg.energy_order)
    doc = sol.to_dict(config_ref=str(args.configuration))
    doc["energy"] = energy
    doc["energy_audit"] = energy_bound_audit(config, sol, energy)
    out = _out(args) / "solution.json"
    from .report import write_json

    write_json(doc, out)
    _dump({"path": str(out), "residual": sol.residual, "iterations": sol.iterations,
           "scheme": scheme, "energy": energy})


def cmd_brinkman(args):
    from .brinkman import energy_identity, verify_elliptic_bounds
    from .study import reference_solution

    cfg = _config(args)
    problem, u = reference_solution(cfg)
    out = _out(args, cfg)
    u.save(out / "brinkman_field")
    u.csv_slice(out / "brinkman_slice.csv")
    lhs, rhs = energy_identity(problem, u)
    _dump({"field": str(out / "brinkman_field.json"), "L": u.L, "m": u.m, "iterations": u.iterations,
           "residual": u.residual, "energy_identity": [lhs, rhs],
           "relative_divergence": u.relative_divergence(), "elliptic": verify_elliptic_bounds(problem, u)},
          out / "brinkman_summary.json")


def cmd_metrics(args):
    from .config_geometry import classify_concentration, neighbor_counts, validate_configuration
    from .solver import energy_bound_rhs
    from .transport import density_measure, flux_distance, flux_measure, w1_empirical_vs_density

    config = _load(args)
    cfg = _config(args)
    f = cfg.law()
    doc = {"n": config.n, "valid": bool(validate_configuration(config))}
    if config.n >= 2:
        rep = classify_concentration(config, cfg.alpha, cfg.beta, cfg.eta, cfg.mode)
        doc.update(d_min=rep.d_min, max_cell_count=rep.max_cell_count, in_O_alpha=rep.in_O_alpha,
                   in_O_lambda_M=rep.in_O_lambda_M, max_neighbors=int(neighbor_counts(config).max()))
    est = w1_empirical_vs_density(density_measure(config), f, m_ref=args.m_ref, reps=5, seed=cfg.master_seed)
    doc["w1"] = {"mean": est.mean, "stderr": est.stderr, "reps": est.reps}
    for theta in (0.5, 1.0):
        fd = flux_distance(flux_measure(config), f, theta=theta, m_ref=args.m_ref, seed=cfg.master_seed)
        doc[f"flux_theta_{theta}"] = {"lower": fd.lower, "upper": fd.upper}
    doc["energy_bound_rhs"] = energy_bound_rhs(config)
    _dump(doc, _out(args) / "metrics.json" if args.out else None)


def cmd_study(args):
    from .report import emit_report

    cfg = _config(args)
    report = STUDIES[args.kind](cfg)
    paths = emit_report(report, cfg.output_dir)
    summary = {"kind": report.kind, "files": [str(p) for p in paths], "fits": report.fits,
               "warnings": report.warnings, "seconds": report.timing.get("total_s", math.nan)}
    _dump(summary)


def cmd_report(args):
    from .report import emit_report, load_report

    report = load_report(args.report)
    paths = emit_report(report, args.out or ".")
    _dump({"files": [str(p) for p in paths]})


COMMANDS = {"sample": cmd_sample, "solve": cmd_solve, "brinkman": cmd_brinkman, "metrics": cmd_metrics,
            "study": cmd_study, "report": cmd_report}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ReportIOError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (LabError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
