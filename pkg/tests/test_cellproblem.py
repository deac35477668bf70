import math

import numpy as np
import pytest

from brinkman_lab.cellproblem import (
    W_PROFILES,
    cell_problem_experiment,
    lattice_positions,
    random_positions,
    separation,
    w_field,
    w_gradient,
    w_norm_factor,
)
from brinkman_lab.errors import ConditioningError, GeometryError, ParameterError


def test_profiles_are_divergence_free_and_match_gradients(rng):
    x = rng.random((20, 3))
    c = np.full(3, 0.5)
    h = 1e-6
    for p in W_PROFILES:
        g = np.zeros((20, 3, 3))
        for k in range(3):
            e = np.zeros(3)
            e[k] = h
            g[:, :, k] = (w_field(p, c, x + e) - w_field(p, c, x - e)) / (2 * h)
        assert np.allclose(g, w_gradient(p), atol=1e-8)
        assert np.allclose(np.trace(g, axis1=1, axis2=2), 0, atol=1e-8)
    with pytest.raises(ParameterError):
        w_field("spin", c, x)


def test_norm_factor_by_hand():
    lam = 0.4
    want = (1 + lam / 2) + math.sqrt(math.sqrt(3) * lam) + math.sqrt(lam)
    assert w_norm_factor("shear", lam) == pytest.approx(want)
    assert w_norm_factor("constant", lam) == pytest.approx(1.0)


def test_lattice_and_random_placement():
    lam, d = 1.0, 0.2
    X = lattice_positions(lam, 8, d)
    assert len(X) == 8 and separation(X, lam) >= d - 1e-12
    Y = random_positions(lam, 6, d, 3)
    assert separation(Y, lam) >= d
    with pytest.raises(GeometryError):
        lattice_positions(lam, 200, 0.3)


def test_zero_data_gives_zero_error():
    r = cell_problem_experiment(0.48, 2, 50, 0.16, w_profile="zero")
    assert r.error == 0.0
    assert r.residual == 0.0


def test_separation_guard_and_conditioning_guard():
    with pytest.raises(GeometryError):
        cell_problem_experiment(1.0, 2, 50, 3 / 50)
    with pytest.raises(ConditioningError):
        cell_problem_experiment(0.48, 1, 50, 0.16, max_condition=10.0)
    with pytest.raises(ParameterError):
        cell_problem_experiment(0.48, 1, 50, 0.16, placement="hex")


def test_single_sphere_result_fields():
    n, d = 50, 8 / 50
    r = cell_problem_experiment(3 * d, 1, n, d)
    assert 0 < r.error < 1
    assert r.bound_rhs == pytest.approx(r.norm_factor * r.bound_shape)
    assert r.bound_shape == pytest.approx(math.sqrt(1 / n) * (1 / math.sqrt(n) + math.sqrt(1 / (n * r.d_m))))
    assert r.residual < 0.05
    assert r.to_dict()["M"] == 1
