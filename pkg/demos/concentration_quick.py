"""Close-pair and crowded-cell frequencies, with CSV/JSON/SVG output in demo_out/."""

from brinkman_lab.report import emit_report
from brinkman_lab.study import StudyConfig, run_concentration_study

cfg = StudyConfig.from_dict({"n_list": [50, 100, 200, 400], "reps": 1, "concentration_reps": 300,
                             "output_dir": "demo_out"})
rep = run_concentration_study(cfg)
for row in rep.table():
    print(f"n = {row['n']:4d}  P(close pair) = {row['alpha_freq']:.3f} "
          f"[{row['alpha_lo']:.3f}, {row['alpha_hi']:.3f}]  ratio to n^(2-3a) = {row['alpha_ratio']:.3f}")
print("spread of the ratio:", round(rep.fits["alpha_ratio_spread"], 3))
for p in emit_report(rep, cfg.output_dir):
    print("wrote", p)
