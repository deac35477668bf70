import math

import numpy as np
import pytest
from scipy.optimize import linprog
from scipy.spatial.distance import cdist
from scipy.stats import wasserstein_distance

from brinkman_lab.errors import DomainError, MassError, ParameterError
from brinkman_lab.sampling import ShearProfile, UniformBox, sample_conditioned
from brinkman_lab.transport import (
    EmpiricalMeasure,
    SignedMeasure,
    chaos_rate_study,
    density_measure,
    flux_distance,
    flux_measure,
    holder_dual_lower,
    holder_dual_upper,
    loglog_slope,
    mollifier_constants,
    w1_discrete,
    w1_empirical_vs_density,
)


def lp_w1(a, wa, b, wb):
    """Transport LP solved by HiGHS."""
    C = cdist(a, b)
    m, k = C.shape
    A = np.zeros((m + k, m * k))
    for i in range(m):
        A[i, i * k:(i + 1) * k] = 1
    for j in range(k):
        A[m + j, j::k] = 1
    res = linprog(C.ravel(), A_eq=A, b_eq=np.concatenate([wa, wb]), bounds=(0, None), method="highs")
    return res.fun


def test_w1_against_linear_program(rng):
    for m, k in ((5, 7), (12, 12), (30, 9)):
        a, b = rng.random((m, 3)), rng.random((k, 3))
        wa, wb = rng.random(m), rng.random(k)
        wa, wb = wa / wa.sum(), wb / wb.sum()
        got = w1_discrete(EmpiricalMeasure(a, wa), EmpiricalMeasure(b, wb))
        assert got == pytest.approx(lp_w1(a, wa, b, wb), rel=1e-8)


def test_w1_uniform_path_against_linear_program(rng):
    a, b = rng.random((40, 3)), rng.random((40, 3))
    got = w1_discrete(EmpiricalMeasure.uniform(a), EmpiricalMeasure.uniform(b))
    assert got == pytest.approx(lp_w1(a, np.full(40, 1 / 40), b, np.full(40, 1 / 40)), rel=1e-9)


def test_w1_one_dimensional_closed_form(rng):
    a, b = rng.random(200), rng.random(300) + 0.2
    got = w1_discrete(EmpiricalMeasure.uniform(a[:, None]), EmpiricalMeasure.uniform(b[:, None]))
    assert got == pytest.approx(wasserstein_distance(a, b), rel=1e-9)


def test_w1_metric_properties(rng):
    a, b, c = (EmpiricalMeasure.uniform(rng.random((25, 3))) for _ in range(3))
    assert w1_discrete(a, a) == pytest.approx(0.0, abs=1e-14)
    assert w1_discrete(a, b) == pytest.approx(w1_discrete(b, a), rel=1e-12)
    assert w1_discrete(a, c) <= w1_discrete(a, b) + w1_discrete(b, c) + 1e-12
    shift = EmpiricalMeasure.uniform(a.atoms + np.array([0.3, 0, 0]))
    assert w1_discrete(a, shift) == pytest.approx(0.3, rel=1e-12)


def test_w1_rejects_mass_mismatch(rng):
    a = EmpiricalMeasure(rng.random((3, 3)), [0.2, 0.2, 0.2])
    b = EmpiricalMeasure.uniform(rng.random((3, 3)))
    with pytest.raises(MassError):
        w1_discrete(a, b)
    with pytest.raises(DomainError):
        EmpiricalMeasure([[0, 0, 0]], [-1.0])


def test_dual_bracket_orders(rng):
    for theta in (0.25, 0.5, 1.0):
        a = SignedMeasure(rng.random((60, 3)), rng.standard_normal(60) / 60)
        b = SignedMeasure(rng.random((80, 3)), rng.standard_normal(80) / 80)
        lo = holder_dual_lower(a, b, theta, seed=1)
        up = holder_dual_upper(a, b, theta)
        tv = a.total_variation + b.total_variation
        assert 0 <= lo <= up + 1e-12 <= tv + 1e-12


def test_dual_norm_of_point_masses():
    # delta_x - delta_y: the cone test function centred at x with radius |x-y| gives
    # pairing 1 and norm 1 + |x-y|^-theta, so the sum-norm value is at least |x-y|^theta/(1+|x-y|^theta)
    x, y = np.zeros((1, 3)), np.array([[0.01, 0, 0]])
    lo = holder_dual_lower(SignedMeasure(x, [1.0]), SignedMeasure(y, [1.0]), 0.5)
    up = holder_dual_upper(SignedMeasure(x, [1.0]), SignedMeasure(y, [1.0]), 0.5)
    r = 0.01**0.5
    assert lo >= r / (1 + r) - 1e-12
    assert lo <= up
    assert holder_dual_upper(SignedMeasure(x, [1.0]), SignedMeasure(x, [1.0]), 0.5) == 0.0


def test_mollifier_constants_by_monte_carlo():
    A, B = mollifier_constants(3, 0.5)
    rng = np.random.default_rng(0)
    y = rng.uniform(-1, 1, (2_000_000, 3))
    r = np.linalg.norm(y, axis=1)
    inside = r < 1
    z = np.where(inside, np.exp(-1 / (1 - np.minimum(r, 0.999999) ** 2)), 0.0)
    mass = z.mean()
    assert A == pytest.approx(np.mean(r**0.5 * z) / mass, rel=5e-3)
    assert 0 < B < 20


def test_flux_distance_zero_for_identical_measures(rng):
    x = rng.random((30, 3))
    v = rng.standard_normal((30, 3))
    m = EmpiricalMeasure.uniform(x, v)
    d = flux_distance(m, m, theta=0.5)
    assert d.lower < 1e-15 and d.upper < 1e-15
    with pytest.raises(DomainError):
        flux_distance(EmpiricalMeasure.uniform(x), m)


def test_flux_distance_against_law():
    f = ShearProfile(box=((-0.5,) * 3, (0.5,) * 3))
    cfg, _ = sample_conditioned(f, 200, 3)
    d = flux_distance(flux_measure(cfg), f, theta=0.5, seed=2)
    assert 0 < d.lower <= d.upper
    assert len(d.components) == 3
    assert d.components[1] == (0.0, 0.0)


def test_empirical_estimate_and_parameters():
    cfg, _ = sample_conditioned(UniformBox(), 64, 0)
    est = w1_empirical_vs_density(density_measure(cfg), UniformBox(), reps=4, seed=1)
    assert 0 < est.mean < 0.5 and est.reps == 4
    with pytest.raises(ParameterError):
        w1_empirical_vs_density(density_measure(cfg), UniformBox(), m_ref=10)
    with pytest.raises(ParameterError):
        holder_dual_upper(SignedMeasure(np.zeros((1, 3)), [1.0]), SignedMeasure(np.zeros((1, 3)), [1.0]), 1.5)


def test_loglog_slope_exact():
    n = np.array([10, 20, 40, 80])
    assert loglog_slope(n, 3 * n**-0.5) == pytest.approx(-0.5)
    assert math.isnan(loglog_slope([1, 2], [0, 0]))


def test_chaos_study_small():
    out = chaos_rate_study(UniformBox(), [64, 256], 10, 5, phase=False)
    assert out["rows"][1]["w1_position"] < out["rows"][0]["w1_position"]
    with pytest.raises(ParameterError):
        chaos_rate_study(UniformBox(), [64, 32], 10, 5)
