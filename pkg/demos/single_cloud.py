"""One shear-profile cloud: particle flow against the Brinkman field.

    python demos/single_cloud.py [n]
"""

import sys

import numpy as np

from brinkman_lab.brinkman import evaluate as brinkman_at
from brinkman_lab.sampling import sample_conditioned
from brinkman_lab.solver import dirichlet_energy, energy_bound_audit, evaluate, l2_error_ball, solve
from brinkman_lab.study import StudyConfig, reference_solution

n = int(sys.argv[1]) if len(sys.argv) > 1 else 200
cfg = StudyConfig.from_dict({"brinkman": {"m": 64}})
f = cfg.law()
config, rep = sample_conditioned(f, n, cfg.master_seed)
print(f"n = {n}, sampler acceptance {rep.acceptance_rate:.3f}")

sol = solve(config, scheme="direct")
_, ref = reference_solution(cfg, f)
print(f"boundary residual {sol.residual:.2e}")
print(f"L2 error on B(0, {cfg.R}) = {l2_error_ball(sol, ref, cfg.R, 4096):.4f}")

e = dirichlet_energy(sol, order=14)
audit = energy_bound_audit(config, sol, e)
print(f"energy {e:.4f}, energy / bound = {audit['ratio']:.3f}")

line = np.stack([np.linspace(-1.2, 1.2, 7), np.zeros(7), np.zeros(7)], axis=1)
for x, up, ub in zip(line[:, 0], evaluate(sol, line), brinkman_at(ref, line)):
    print(f"x = {x:+.2f}  particles u_y = {up[1]:+.4f}  Brinkman u_y = {ub[1]:+.4f}")
