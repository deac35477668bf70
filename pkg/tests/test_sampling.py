import math

import numpy as np
import pytest
from scipy import integrate

from brinkman_lab.config_geometry import min_pair_distance, validate_configuration
from brinkman_lab.errors import ParameterError, SaturationError
from brinkman_lab.sampling import (
    GaussianVelocity,
    PointMass,
    ShearProfile,
    UniformBox,
    assumption_A1_diagnostics,
    density_from_spec,
    estimate_partition,
    make_rng,
    partition_lower_bound,
    sample_conditioned,
    sample_iid,
    seed_sequence,
)


def test_seed_streams_are_reproducible_and_distinct():
    a = make_rng(7, 100, 3).random(4)
    b = make_rng(7, 100, 3).random(4)
    c = make_rng(7, 100, 4).random(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    ss = seed_sequence(7, 100)
    assert np.array_equal(make_rng(seed_sequence(ss, 3)).random(4), a)


def test_conditioned_samples_are_admissible():
    f = ShearProfile(box=((-0.5,) * 3, (0.5,) * 3))
    for n in (2, 50, 400):
        cfg, rep = sample_conditioned(f, n, 11)
        assert validate_configuration(cfg)
        assert min_pair_distance(cfg) > 2.0 / n
        assert rep.attempts >= 1
    cfg2, _ = sample_conditioned(f, 400, 11)
    assert np.array_equal(cfg.positions, cfg2.positions)


def test_shear_velocities_follow_the_profile():
    f = ShearProfile(rate=2.0)
    cfg, _ = sample_conditioned(f, 100, 1)
    assert np.allclose(cfg.velocities[:, 0], 2.0 * cfg.positions[:, 1])
    assert np.all(cfg.velocities[:, 1:] == 0)


def test_moments_against_quadrature():
    f = ShearProfile(rate=1.5)
    want, _ = integrate.quad(lambda y: (1 + (1.5 * y) ** 2) ** 2.5, 0, 1)
    assert f.moment(5) == pytest.approx(want, rel=1e-10)
    g = GaussianVelocity(sigma=0.7)
    v = make_rng(3).standard_normal((400_000, 3)) * 0.7
    mc = np.mean((1 + np.sum(v * v, 1)) ** 1.0)
    assert g.moment(2) == pytest.approx(1 + 3 * 0.49, rel=1e-12)
    assert g.moment(2) == pytest.approx(mc, rel=5e-3)
    assert UniformBox(v0=(3, 4, 0)).moment(2) == pytest.approx(26.0)


def test_density_from_spec_round_trip():
    for f in (UniformBox(v0=(1, 0, 0)), GaussianVelocity(sigma=2.0), ShearProfile(rate=0.5)):
        g = density_from_spec(f.to_dict())
        assert type(g) is type(f)
        assert g.to_dict() == f.to_dict()
    with pytest.raises(ParameterError):
        density_from_spec({"type": "nope"})
    with pytest.raises(ParameterError):
        density_from_spec({"type": "shear", "speed": 1})
    with pytest.raises(ParameterError):
        UniformBox(box=((0, 0, 0), (1, 0, 1)))


def test_point_mass_needs_one_particle():
    f = PointMass()
    cfg, _ = sample_conditioned(f, 1, 0)
    assert cfg.n == 1
    with pytest.raises(ParameterError):
        sample_conditioned(f, 2, 0)


def test_saturation_reported():
    # 40 spheres of radius 1/40 in a box of side 0.06 cannot avoid overlapping
    f = UniformBox(box=((0, 0, 0), (0.06, 0.06, 0.06)))
    with pytest.raises(SaturationError) as exc:
        sample_conditioned(f, 40, 0, max_attempts=50)
    assert exc.value.attempts == 50


def test_partition_lower_bound_and_estimate():
    assert partition_lower_bound(1, 1.0) == 0.0
    n = 100
    base = 1 - 8 * (4 * math.pi / 3) / n**2
    assert partition_lower_bound(n, 1.0) == pytest.approx(base**n)
    est = estimate_partition(UniformBox(), n, 400, 3)
    assert est.consistent
    # the pair-union estimate 1 - C(n,2) P(pair overlaps) is a close independent approximation
    approx = 1 - n * (n - 1) / 2 * (4 * math.pi / 3) * (2 / n) ** 3
    assert abs(est.value - approx) < 4 * est.stderr + 0.02
    with pytest.raises(ParameterError):
        estimate_partition(UniformBox(), n, 50, 3)


def test_iid_sampler_rejects_bad_n():
    with pytest.raises(ParameterError):
        sample_iid(UniformBox(), 0, 1)


def test_assumption_diagnostics_on_uniform_law():
    d = assumption_A1_diagnostics(UniformBox(), 50, 120, 4)
    assert d["C1_hat"] == pytest.approx(1.0, abs=6 * d["C1_stderr"] + 0.1)
    assert d["C2_hat"] == pytest.approx(1.0)
