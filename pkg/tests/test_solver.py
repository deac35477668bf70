import math

import numpy as np
import pytest

from brinkman_lab.config_geometry import ParticleConfiguration
from brinkman_lab.errors import ConvergenceError, DomainError, ParameterError, ValidationError
from brinkman_lab.sampling import ShearProfile, UniformBox, sample_conditioned
from brinkman_lab.solver import (
    ball_points,
    boundary_residual,
    collocation_residual,
    dirichlet_energy,
    energy_bound_audit,
    energy_bound_rhs,
    interaction_apply,
    interaction_matrix,
    l2_error_ball,
    monopole_tail,
    solve,
)
from brinkman_lab.stokeslets import stokeslet_velocity


def single(n=4, v=(1.0, -2.0, 0.5)):
    return ParticleConfiguration([[0.5, 0.5, 0.5]], [v], ((0, 0, 0), (1, 1, 1)))


def test_single_sphere_is_exact():
    cfg = single()
    sol = solve(cfg, scheme="reflections")
    assert np.array_equal(sol.strengths, cfg.velocities)
    assert sol.residual < 1e-13


@pytest.mark.parametrize("method", ["boundary", "shells"])
def test_single_sphere_energy(method):
    cfg = ParticleConfiguration([[0.5, 0.5, 0.5]], [[1.0, -2.0, 0.5]])
    sol = solve(cfg)
    want = 6 * np.pi * 5.25 / 1
    assert dirichlet_energy(sol, method=method) == pytest.approx(want, rel=5e-3)


def test_monopole_tail_formula():
    # 5|F|^2/(24 pi R) = integral over |x| > R of |grad of the Oseen field|^2, checked by radial quadrature
    from brinkman_lab.stokeslets import oseen_gradient
    from brinkman_lab.quadrature import sphere_rule

    F = np.array([0.0, 0.0, 2.0])
    R = 3.0
    p, w = sphere_rule(50)
    t, wt = np.polynomial.legendre.leggauss(60)
    s = (t + 1) / 2  # r = R / s
    total = 0.0
    for si, wi in zip(s, wt):
        r = R / si
        g = oseen_gradient(F, r * p)
        total += wi / 2 * (R / si**2) * 4 * np.pi * r**2 * float(w @ np.sum(g**2, axis=(1, 2)))
    assert monopole_tail(F, R) == pytest.approx(total, rel=1e-8)


def test_schemes_agree_on_dilute_cloud():
    # reflections contract only when (3/(4n)) sum_j 1/|X_i - X_j| stays below one
    rng = np.random.default_rng(4)
    X = rng.uniform(0, 4, (10, 3))
    cfg = ParticleConfiguration(X, rng.standard_normal(X.shape), ((0, 0, 0), (4, 4, 4)))
    ref = solve(cfg, scheme="direct")
    for scheme in ("reflections", "krylov"):
        sol = solve(cfg, scheme=scheme, tol=1e-12)
        assert np.allclose(sol.strengths, ref.strengths, atol=1e-10)
    assert collocation_residual(ref) < 1e-12
    col = solve(cfg, scheme="collocation")
    assert col.residual <= 1.05 * ref.residual


def test_interaction_operator_paths(rng):
    cfg, _ = sample_conditioned(UniformBox(), 120, 2)
    b = rng.standard_normal((120, 3))
    dense = interaction_matrix(cfg.positions, 120) @ b.ravel()
    assert np.allclose(dense.reshape(-1, 3), interaction_apply(cfg.positions, b, 120, block=17))
    X = cfg.positions
    i = 5
    want = sum(stokeslet_velocity(b[j], X[i] - X[j], 120) for j in range(120) if j != i)
    assert np.allclose(dense.reshape(-1, 3)[i], want)


def test_reflections_diverge_on_random_cloud():
    cfg, _ = sample_conditioned(UniformBox(v0=(1, 0, 0)), 400, 1)
    with pytest.raises(ConvergenceError) as exc:
        solve(cfg, scheme="reflections")
    assert "d_min" in exc.value.info
    assert len(exc.value.history) >= 5


def test_boundary_residual_small_for_dilute_and_bounded_for_dense():
    cfg, _ = sample_conditioned(ShearProfile(), 200, 3)
    sol = solve(cfg, scheme="direct")
    assert sol.residual == boundary_residual(sol, 6)
    assert sol.residual < 0.2 * np.abs(cfg.velocities).max()


def test_solver_input_checks():
    bad = ParticleConfiguration([[0.5, 0.5, 0.5], [0.5, 0.5, 0.6]], np.zeros((2, 3)))
    with pytest.raises(ValidationError):
        solve(bad)
    with pytest.raises(ParameterError):
        solve(single(), scheme="magic")
    with pytest.raises(ParameterError):
        solve(single(), tol=0)


def test_energy_methods_agree():
    cfg, _ = sample_conditioned(ShearProfile(), 20, 8)
    sol = solve(cfg, scheme="direct")
    a = dirichlet_energy(sol, method="boundary")
    b = dirichlet_energy(sol, method="shells")
    assert a == pytest.approx(b, rel=1e-3)
    with pytest.raises(ParameterError):
        dirichlet_energy(sol, method="nope")


def test_energy_bound_rhs_by_hand():
    n = 3
    X = np.array([[0.2, 0.5, 0.5], [0.2 + 2.2 / n, 0.5, 0.5], [1.8, 1.8, 1.8]])
    V = np.array([[1.0, 0, 0], [0, 2.0, 0], [0, 0, 3.0]])
    cfg = ParticleConfiguration(X, V, ((0, 0, 0), (2, 2, 2)))
    gap = 2.2 / n - 2 / n
    want = (1 * (1 + 1 / (n * gap)) + 4 * (1 + 1 / (n * gap)) + 9) / n
    assert energy_bound_rhs(cfg) == pytest.approx(want)
    sol = solve(cfg, scheme="direct")
    audit = energy_bound_audit(cfg, sol)
    assert audit["ratio"] == pytest.approx(audit["lhs"] / audit["rhs"])


def test_l2_error_against_exact_field_and_monte_carlo():
    n = 1
    v = np.array([1.0, 0.0, 0.0])
    cfg = ParticleConfiguration([[0.0, 0.0, 0.0]], [v], ((-1, -1, -1), (1, 1, 1)))
    sol = solve(cfg)

    def exact(x):
        r = np.linalg.norm(x, axis=1)
        out = np.tile(v, (len(x), 1))
        out[r > 1 / n] = stokeslet_velocity(v, x[r > 1 / n], n)
        return out

    assert l2_error_ball(sol, exact, 2.0, 4096) < 1e-12
    zero = lambda x: np.zeros_like(x)
    qmc = l2_error_ball(sol, zero, 2.0, 65536, seed=1)
    rng = np.random.default_rng(9)
    y = rng.uniform(-2.0, 2.0, (1_000_000, 3))
    y = y[np.linalg.norm(y, axis=1) <= 2.0]
    mc = math.sqrt(4 / 3 * np.pi * 8.0 * np.mean(np.sum(exact(y) ** 2, axis=1)))
    assert qmc == pytest.approx(mc, rel=0.02)


def test_ball_points_inside_and_weights():
    pts, w = ball_points(2.0, 1000, seed=3, center=(1, 1, 1))
    assert np.all(np.linalg.norm(pts - 1, axis=1) <= 2.0)
    assert w * len(pts) == pytest.approx(4 / 3 * np.pi * 8, rel=0.05)


def test_l2_error_rejects_uncovered_grid():
    class Narrow:
        def covers(self, center, R):
            return False

    with pytest.raises(DomainError):
        l2_error_ball(solve(single()), Narrow(), 1.0)
