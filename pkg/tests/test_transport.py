import math

import numpy as np
import pytest
from scipy import stats

from abpcheck.geodesy import slice_distance
from abpcheck.models import ball_volume, cone_smoothed_profile, euclidean_model, make_model, unit_ball_volume
from abpcheck.potential import constant_density, geodesic_ball, normalize_density, quadratic_density, solve_potential
from abpcheck.transport import (RadialSampler, TransportConfig, capture_inequality, contact_monotonicity, contact_test,
                                coverage_experiment, far_radius, finite_difference_jacobian, jacobian_bound_margin,
                                make_rng, mc_volume, phi_map, u_set_integral)

CONE = make_model(cone_smoothed_profile(0.5), 2)


def _setup(model, density, R=1.0):
    D = geodesic_ball(model, R)
    f = normalize_density(density, D)
    return D, f, solve_potential(f, D)


def test_rng_keyed_by_seed_and_case():
    a = make_rng(5, "case").random(4)
    assert np.array_equal(a, make_rng(5, "case").random(4))
    assert not np.array_equal(a, make_rng(5, "other").random(4))
    assert not np.array_equal(a, make_rng(6, "case").random(4))
    with pytest.raises(ValueError):
        make_rng(None)


def test_transport_config_validation():
    with pytest.raises(ValueError):
        TransportConfig(r=0.0)
    with pytest.raises(ValueError):
        TransportConfig(r=1.0, sample_count=10)


def test_euclidean_phi_is_dilation():
    m = euclidean_model(3)
    _, f, sol = _setup(m, constant_density())
    x = np.array([0.2, -0.1, 0.3])
    s = phi_map(sol, x, 0.7)
    assert np.allclose(s.phi_rx, 1.7 * x, atol=1e-10)
    assert s.jacobian == pytest.approx(1.7 ** 3, rel=1e-10)
    assert jacobian_bound_margin(s, f, 0.7, 3) == pytest.approx(0.0, abs=1e-9)


@pytest.mark.parametrize("x", [np.array([0.3, 0.2]), np.array([0.0, 0.5]), np.array([0.7, -0.1])])
def test_cone_jacobian_matches_finite_differences(x):
    _, f, sol = _setup(CONE, quadratic_density())
    s = phi_map(sol, x, 3.0)
    assert s.jacobian == pytest.approx(finite_difference_jacobian(sol, x, 3.0), rel=1e-6)
    assert jacobian_bound_margin(s, f, 3.0, 2) >= -1e-6
    assert contact_monotonicity(s, f) <= 1e-8


def test_contact_in_euclidean_equality_case():
    m = euclidean_model(2)
    _, _, sol = _setup(m, constant_density())
    g = np.linspace(-0.95, 0.95, 25)
    probes = np.array([(a, b) for a in g for b in g if a * a + b * b < 1])
    rep = contact_test(sol, np.array([0.3, -0.2]), 2.0, probes, m)
    assert rep.in_U and rep.is_contact
    assert rep.margin >= -rep.tolerance
    outside = contact_test(sol, np.array([1.0, 0.0]), 2.0, probes, m)
    assert not outside.in_U


def test_sampler_radial_law():
    R = 3.0
    sampler = RadialSampler(CONE, R)
    pts = sampler.sample(make_rng(1, "law"), 20000)
    assert np.max(np.linalg.norm(pts, axis=1)) <= R
    cdf = lambda s: np.array([ball_volume(CONE, v) for v in np.atleast_1d(s)]) / ball_volume(CONE, R)
    assert stats.kstest(np.linalg.norm(pts, axis=1), cdf).pvalue > 1e-3
    assert sampler.total * 2 * math.pi == pytest.approx(ball_volume(CONE, R), rel=1e-12)


def test_sampler_inverse_cdf_accuracy():
    sampler = RadialSampler(CONE, 2.0)
    u = np.linspace(0.0, 1.0, 11)
    rho = sampler.radii(u)
    vols = np.array([ball_volume(CONE, r) for r in rho]) / ball_volume(CONE, 2.0)
    assert np.allclose(vols, u, atol=1e-12)


def test_mc_volume_within_three_sigma():
    sampler = RadialSampler(CONE, 2.0)
    vol, err = mc_volume(sampler, lambda p: np.linalg.norm(p, axis=1) < 1.0, 200000, make_rng(3, "mc"))
    assert abs(vol - ball_volume(CONE, 1.0)) <= 3 * err


def test_far_radius():
    assert far_radius(euclidean_model(2), 1.0, 10.0) == 9.0
    assert far_radius(CONE, 1.0, 0.5) == 0.0
    rho = far_radius(CONE, 1.0, 10.0)
    assert slice_distance(CONE.profile, 1.0, rho, math.pi).length == pytest.approx(10.0, abs=1e-10)
    assert far_radius(CONE, 1.0, 20.0) > rho


def test_coverage_euclidean_small():
    m = euclidean_model(2)
    D, _, sol = _setup(m, constant_density())
    rep = coverage_experiment(sol, D, m, 3.0, 20, 4)
    assert rep.status == "ok" and rep.verified == rep.targets == 20
    assert rep.max_error <= 1e-6


def test_coverage_vacuous():
    D, _, sol = _setup(CONE, constant_density())
    rep = coverage_experiment(sol, D, CONE, 0.5, 10, 1)
    assert rep.status == "vacuous" and math.isnan(rep.fraction)


def test_capture_closed_forms():
    m = euclidean_model(3)
    D, f, sol = _setup(m, constant_density())
    rep = capture_inequality(sol, D, f, m, 5.0, 10**5, 2)
    w3 = unit_ball_volume(3)
    assert rep.lhs_exact == pytest.approx(w3 * 4.0 ** 3, rel=1e-14)
    assert rep.rhs == pytest.approx(w3 * 6.0 ** 3, rel=1e-10)
    assert abs(rep.lhs - rep.lhs_exact) <= 3 * rep.lhs_stderr
    assert rep.status == "pass" and rep.slack > 0


def test_capture_on_cone_and_arguments():
    D, f, sol = _setup(CONE, quadratic_density())
    rep = capture_inequality(sol, D, f, CONE, 10.0, 10**5, 2)
    assert rep.status == "pass"
    assert u_set_integral(sol, D, lambda s: np.ones_like(s)) == pytest.approx(ball_volume(CONE, 1.0), rel=1e-10)
    assert capture_inequality(sol, D, f, CONE, 0.5, 1000, 2).status == "vacuous"
    with pytest.raises(ValueError):
        capture_inequality(sol, D, f, CONE, 10.0, 1000, 2, sigma=1.0)


def test_capture_deterministic():
    D, f, sol = _setup(CONE, constant_density())
    a = capture_inequality(sol, D, f, CONE, 10.0, 20000, 9, case_id="x")
    b = capture_inequality(sol, D, f, CONE, 10.0, 20000, 9, case_id="x")
    assert a.lhs == b.lhs and a.lhs_stderr == b.lhs_stderr
