"""CSV, JSON and SVG output of study reports.

Outputs are byte-stable for a fixed report: floats are written with repr,
JSON keys are sorted, non-finite numbers become null, and SVG files carry
no date and a fixed hash salt.  Wall-clock timing goes to a separate
``timing.json`` so that the other files can be compared across runs.
"""

import csv
import json
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import ReportIOError  # noqa: E402
from .study import StudyReport  # noqa: E402

FORMATS = ("csv", "json", "svg")


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v)) if math.isfinite(v) else ""
    if v is None:
        return ""
    return str(v)


def write_csv(rows, path):
    """Rows of dicts to CSV; the header is the union of keys in first-seen order."""
    keys = []
    for r in rows:
        for k in r:
            if k not in keys:
                keys.append(k)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys)
        for r in rows:
            w.writerow([_cell(r.get(k)) for k in keys])
    return Path(path)


def read_csv(path):
    """Inverse of write_csv with numeric cells parsed back to floats."""
    with open(path, newline="") as fh:
        out = []
        for row in csv.DictReader(fh):
            parsed = {}
            for k, v in row.items():
                try:
                    parsed[k] = float(v) if v not in ("", "true", "false") else v
                except ValueError:
                    parsed[k] = v
            out.append(parsed)
    return out


def write_json(obj, path):
    with open(path, "w") as fh:
        json.dump(_clean(obj), fh, sort_keys=True, indent=1, allow_nan=False)
        fh.write("\n")
    return Path(path)


def load_report(path):
    try:
        with open(path) as fh:
            return StudyReport.from_dict(json.load(fh))
    except OSError as exc:
        raise ReportIOError(f"cannot read {path}: {exc}") from exc


def fit_line(x, y):
    """Least-squares slope and intercept of log y against log x over positive entries."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    ok = np.isfinite(y) & (y > 0)
    if ok.sum() < 2:
        return math.nan, math.nan
    slope, icpt = np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)
    return float(slope), float(icpt)


def _figure():
    plt.rcParams.update({"svg.hashsalt": "brinkman-lab", "svg.fonttype": "none"})
    fig, ax = plt.subplots(figsize=(5.5, 4.0))
    return fig, ax


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return Path(path)


def _loglog(ax, x, y, lo=None, hi=None, label=None):
    x, y = np.asarray(x, float), np.asarray(y, float)
    if lo is not None:
        yerr = np.vstack([np.clip(y - lo, 0, None), np.clip(hi - y, 0, None)])
        ax.errorbar(x, y, yerr=yerr, fmt="o", label=label, capsize=3)
    else:
        ax.plot(x, y, "o", label=label)
    ax.set_xscale("log")
    ax.set_yscale("log")


def _slope_line(ax, x, y, name):
    slope, icpt = fit_line(x, y)
    if math.isfinite(slope):
        xs = np.asarray(x, float)
        ax.plot(xs, np.exp(icpt) * xs**slope, "-", label=f"{name} slope = {slope:.6f}")
    return slope


def plot_convergence(rows, path):
    fig, ax = _figure()
    n = [r["n"] for r in rows]
    y = np.array([r["error_mean"] for r in rows], float)
    se = np.nan_to_num(np.array([r["error_se"] for r in rows], float))
    _loglog(ax, n, y, y - 2 * se, y + 2 * se, label="mean L2 error")
    _slope_line(ax, n, y, "error")
    ax.set_xlabel("n")
    ax.set_ylabel("error on the ball")
    ax.legend()
    return _save(fig, path)


def plot_concentration(rows, fits, path):
    fig, ax = _figure()
    n = np.array([r["n"] for r in rows], float)
    y = np.array([r["alpha_freq"] for r in rows], float)
    lo = np.array([r["alpha_lo"] for r in rows], float)
    hi = np.array([r["alpha_hi"] for r in rows], float)
    pos = y > 0
    if pos.any():
        _loglog(ax, n[pos], y[pos], lo[pos], hi[pos], label="close-pair frequency")
    C = fits.get("alpha_constant")
    if C is not None and math.isfinite(C):
        ax.plot(n, C * np.array([r["rate"] for r in rows]), "--", label="C n^(2-3 alpha)")
    _slope_line(ax, n[pos], y[pos], "frequency")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("n")
    ax.set_ylabel("probability")
    if ax.get_legend_handles_labels()[0]:
        ax.legend()
    return _save(fig, path)


def plot_bounds(rows, path):
    fig, ax = _figure()
    n = [r["n"] for r in rows]
    for key, label in (("bound", "error / bracket"), ("energy", "energy / bound")):
        med = np.array([r[f"{key}_median"] for r in rows], float)
        lo = np.array([r[f"{key}_min"] for r in rows], float)
        hi = np.array([r[f"{key}_max"] for r in rows], float)
        if np.isfinite(med).any() and (med > 0).all():
            _loglog(ax, n, med, lo, hi, label=label)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("n")
    ax.set_ylabel("ratio (median, range)")
    if ax.get_legend_handles_labels()[0]:
        ax.legend()
    return _save(fig, path)


def plot_pw(rows, path):
    fig, ax = _figure()
    d = [r["delta"] for r in rows]
    y = [r["pw_estimate"] for r in rows]
    _loglog(ax, d, y, label="PW estimate")
    _slope_line(ax, d, y, "PW")
    ax.set_xlabel("delta")
    ax.set_ylabel("1/sqrt(lambda_1)")
    ax.legend()
    return _save(fig, path)


def emit_report(report, out_dir, formats=FORMATS):
    """Write the report's tables, JSON and plots into ``out_dir``; returns the written paths."""
    bad = set(formats) - set(FORMATS)
    if bad:
        raise ValueError(f"unknown formats {sorted(bad)}")
    out = Path(out_dir)
    written = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        kind = report.kind
        if "csv" in formats:
            for name, rows in report.tables.items():
                written.append(write_csv(rows, out / f"{kind}_{name}.csv"))
            if report.replicas:
                written.append(write_csv(report.replicas, out / f"{kind}_replicas.csv"))
        if "json" in formats:
            written.append(write_json(report.to_dict(), out / f"{kind}_report.json"))
            written.append(write_json(report.timing, out / f"{kind}_timing.json"))
        if "svg" in formats:
            if kind == "convergence":
                written.append(plot_convergence(report.tables["per_n"], out / "convergence_error.svg"))
            elif kind == "concentration":
                written.append(plot_concentration(report.tables["per_n"], report.fits, out / "concentration.svg"))
            elif kind == "bounds":
                written.append(plot_bounds(report.tables["per_n"], out / "bounds_ratios.svg"))
            elif kind == "constants":
                written.append(plot_pw(report.tables["pw"], out / "constants_pw.svg"))
    except OSError as exc:
        raise ReportIOError(f"cannot write report into {out}: {exc}") from exc
    return written
