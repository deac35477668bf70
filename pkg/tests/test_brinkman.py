import json
import math

import numpy as np
import pytest

from brinkman_lab.brinkman import (
    BrinkmanProblem,
    GridField,
    aligned_half_width,
    energy_identity,
    evaluate,
    export_slice_csv,
    grid_axes,
    grid_points,
    load_field,
    problem_from_configuration,
    problem_from_density,
    save_field,
    solve_brinkman,
    solve_stokes,
    verify_elliptic_bounds,
)
from brinkman_lab.errors import ConvergenceError, DomainError, ParameterError
from brinkman_lab.sampling import ShearProfile, UniformBox, sample_conditioned
from oracles import dense_brinkman

SIX_PI = 6 * math.pi


def mode_field(L, m, kvec):
    """Divergence-free single Fourier mode a cos(k.x) with a orthogonal to k."""
    X = grid_points(L, m)
    k = np.asarray(kvec, float) * np.pi / L
    a = np.cross(k, [0.3, 1.0, 0.2])
    phase = np.cos(X @ k)
    return np.stack([a[c] * phase for c in range(3)]), float(k @ k)


def test_single_mode_stokes_and_brinkman():
    L, m = 1.0, 16
    j, k2 = mode_field(L, m, (1, 2, 0))
    u = solve_stokes(j, L)
    assert np.allclose(u.values, SIX_PI * j / k2, atol=1e-13)
    rho0 = 0.7
    prob = BrinkmanProblem(np.full((m, m, m), rho0), j, L)
    sol = solve_brinkman(prob, tol=1e-12)
    assert np.allclose(sol.values, SIX_PI * j / (k2 + SIX_PI * rho0), atol=1e-12)


def test_constant_coefficients_give_j_over_rho():
    m = 12
    rho0, j0 = 2.0, np.array([1.0, 0.0, -3.0])
    j = np.broadcast_to(j0[:, None, None, None], (3, m, m, m)).copy()
    sol = solve_brinkman(BrinkmanProblem(np.full((m, m, m), rho0), j, 1.5), tol=1e-8)
    assert np.max(np.abs(sol.values - (j0 / rho0)[:, None, None, None])) <= 1e-8
    assert not sol.mean_zero


def test_zero_rho_reduces_to_stokes(rng):
    m, L = 16, 2.0
    j = rng.standard_normal((3, m, m, m))
    sol = solve_brinkman(BrinkmanProblem(np.zeros((m, m, m)), j, L), tol=1e-10)
    ref = solve_stokes(j, L)
    assert np.max(np.abs(sol.values - ref.values)) <= 1e-9 * np.max(np.abs(ref.values))


@pytest.mark.parametrize("pinned", [True, False])
def test_matches_dense_galerkin_solve(rng, pinned):
    m, L = 8, 1.0
    rho = 0.5 + rng.random((m, m, m))
    if pinned:
        rho[rng.random((m, m, m)) < 0.3] = 0.0
    j = rng.standard_normal((3, m, m, m))
    tol = 1e-10
    sol = solve_brinkman(BrinkmanProblem(rho, j, L), tol=tol)
    ref = dense_brinkman(rho, j, L, pinned)
    assert np.max(np.abs(sol.values - ref)) <= 10 * tol * np.max(np.abs(ref))


def test_energy_identity_and_divergence(rng):
    m, L = 16, 1.0
    rho = rng.random((m, m, m))
    j = rng.standard_normal((3, m, m, m))
    prob = BrinkmanProblem(rho, j, L)
    u = solve_brinkman(prob, tol=1e-12)
    lhs, rhs = energy_identity(prob, u)
    assert lhs == pytest.approx(rhs, rel=1e-9)
    assert u.relative_divergence() < 1e-12
    assert u.residual < 1e-11


def test_solution_is_linear_in_j(rng):
    m, L = 12, 1.0
    rho = rng.random((m, m, m))
    j1, j2 = rng.standard_normal((2, 3, m, m, m))
    s = lambda j: solve_brinkman(BrinkmanProblem(rho, j, L), tol=1e-12).values
    assert np.allclose(s(2 * j1 - j2), 2 * s(j1) - s(j2), atol=1e-9)


def test_iteration_cap_raises(rng):
    m = 12
    rho = rng.random((m, m, m)) * 50
    j = rng.standard_normal((3, m, m, m))
    with pytest.raises(ConvergenceError) as exc:
        solve_brinkman(BrinkmanProblem(rho, j, 1.0), tol=1e-14, max_iter=2)
    assert len(exc.value.history) == 3


def test_problem_validation():
    m = 8
    with pytest.raises(ParameterError):
        BrinkmanProblem(-np.ones((m, m, m)), np.zeros((3, m, m, m)), 1.0)
    with pytest.raises(ParameterError):
        BrinkmanProblem(np.ones((m, m, m)), np.zeros((3, m, m, 4)), 1.0)
    with pytest.raises(ParameterError):
        BrinkmanProblem(np.ones((m, m, m)), np.zeros((3, m, m, m)), 1.0, support=((-0.1,) * 3, (0.1,) * 3))
    with pytest.raises(ParameterError):
        solve_brinkman(BrinkmanProblem(np.ones((m, m, m)), np.zeros((3, m, m, m)), 1.0), zero_mode="weird")


def test_zero_data_gives_zero_and_undefined_ratios():
    m = 8
    prob = BrinkmanProblem(np.ones((m, m, m)), np.zeros((3, m, m, m)), 1.0)
    sol = solve_brinkman(prob)
    assert not np.any(sol.values)
    assert verify_elliptic_bounds(prob, sol)["undefined"]


def test_density_problem_conserves_mass_and_flux():
    f = ShearProfile(box=((-0.5,) * 3, (0.5,) * 3))
    prob = problem_from_density(f, m=48, L=aligned_half_width((f.lo, f.hi), 48, 1.5))
    dv = prob.h**3
    assert dv * prob.rho.sum() == pytest.approx(1.0, rel=1e-12)
    # j_x = y over the unit box integrates to zero, its first moment in y to 1/12
    Y = grid_points(prob.L, prob.m, prob.center)[..., 1]
    assert abs(dv * prob.j[0].sum()) < 1e-12
    assert dv * np.sum(prob.j[0] * Y) == pytest.approx(1 / 12, rel=0.05)
    L = aligned_half_width((f.lo, f.hi), 32)
    q = round(32 * 1.0 / (2 * L))
    assert q % 2 == 1 and q * (2 * L / 32) == pytest.approx(1.0)


def test_configuration_problem_mass():
    cfg, _ = sample_conditioned(UniformBox(v0=(1, 0, 0)), 50, 1)
    prob = problem_from_configuration(cfg, m=32)
    dv = prob.h**3
    assert dv * prob.rho.sum() == pytest.approx(1.0, rel=1e-6)
    assert dv * prob.j[0].sum() == pytest.approx(1.0, rel=1e-6)


def test_save_load_and_binary_layout(tmp_path, rng):
    m = 6
    fld = GridField(1.25, m, rng.standard_normal((3, m, m, m)), True, (0.5, 0, 0), 7, 1e-9)
    path = save_field(fld, tmp_path / "u")
    header = json.loads(path.read_text())
    assert header["layout"] == "x-fastest" and header["byte_order"] == "little-endian"
    raw = np.frombuffer((tmp_path / "u.bin").read_bytes(), dtype="<f8")
    c, i, j, k = 2, 1, 4, 3
    assert raw[c * m**3 + k * m**2 + j * m + i] == fld.values[c, i, j, k]
    back = load_field(tmp_path / "u.json")
    assert np.array_equal(back.values, fld.values)
    assert back.center == fld.center and back.iterations == 7


def test_slice_csv(tmp_path):
    m = 4
    fld = GridField(1.0, m, np.arange(3 * m**3, dtype=float).reshape(3, m, m, m))
    path = export_slice_csv(fld, tmp_path / "s.csv", axis=2, index=1)
    rows = np.loadtxt(path, delimiter=",", skiprows=1)
    assert rows.shape == (m * m, 6)
    z = grid_axes(1.0, m)[2][1]
    assert np.allclose(rows[:, 2], z)
    assert rows[0, 3] == fld.values[0, 0, 0, 1]


def test_interpolation_reproduces_linear_fields(rng):
    L, m = 1.0, 10
    X = grid_points(L, m)
    A = rng.standard_normal((3, 3))
    vals = np.moveaxis(X @ A.T, -1, 0)
    fld = GridField(L, m, vals)
    lo = fld.lower
    hi = lo + (m - 1) * fld.h
    pts = lo + (hi - lo) * rng.random((100, 3))
    assert np.allclose(evaluate(fld, pts), pts @ A.T, atol=1e-12)
    with pytest.raises(DomainError):
        evaluate(fld, [[hi[0] + 0.01, 0, 0]])
    assert fld.covers((0, 0, 0), 0.5) and not fld.covers((0, 0, 0), 1.0)


def test_elliptic_ratios_stable_under_refinement():
    f = ShearProfile(box=((-0.5,) * 3, (0.5,) * 3))
    r = []
    for m in (32, 48):
        p = problem_from_density(f, m=m, L=aligned_half_width((f.lo, f.hi), m, 3.0))
        r.append(verify_elliptic_bounds(p, solve_brinkman(p, tol=1e-10))["ratio_grad"])
    assert r[0] == pytest.approx(r[1], rel=0.1)
