"""Poincare-Wirtinger constant of the cube annulus of width 1/delta."""

import math

from brinkman_lab.annulus import build_annulus_map, map_derivative_audit, pw_constant_estimate

cube = pw_constant_estimate(1.0, 32)
print(f"full cube: {cube.pw_estimate:.5f} (continuum 2/pi = {2 / math.pi:.5f})")
for delta in (4, 8, 16):
    est = pw_constant_estimate(delta, 32)
    audit = map_derivative_audit(build_annulus_map(delta))
    print(f"delta = {delta:2d}  lambda_1 = {est.lambda1:.4f}  C_PW = {est.pw_estimate:.4f}  "
          f"max sigma' = {audit['sigma1_max']:.2f}")
