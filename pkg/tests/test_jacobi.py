import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from abpcheck.jacobi import (ConjugatePointError, constant_curvature, grid_rows, index_form, jacobian_ratio_monotone,
                             propagate_jacobi, random_psd_curvature, riccati_trace_bound)


def test_constant_curvature_closed_form():
    kappa, t_max = 0.7, 1.0
    H = np.diag([0.3, -0.2])
    sys_ = propagate_jacobi(np.eye(2), H, constant_curvature(kappa, 2, t_max))
    s = math.sqrt(kappa)
    t = sys_.t[:, None, None]
    exact = np.cos(s * t) * np.eye(2) + np.sin(s * t) / s * H
    assert np.max(np.abs(sys_.P - exact)) < 1e-8


def test_flat_space_linear_growth():
    sys_ = propagate_jacobi(np.eye(3), 2.0 * np.eye(3), constant_curvature(0.0, 3, 4.0))
    assert np.allclose(sys_.det(), (1 + 2 * sys_.t) ** 3, rtol=1e-9)
    rep = jacobian_ratio_monotone(sys_, 2.0)
    assert abs(rep.max_increase) < 1e-9
    assert riccati_trace_bound(sys_, 2.0).margin == pytest.approx(0.0, abs=1e-9)


def test_block_flat_space():
    # n = 1 tangent row with P(0) = 1, P'(0) = c; m = 2 normal rows vanishing at 0 with P'(0) = I
    c = 0.5
    P0 = np.diag([1.0, 0.0, 0.0])
    dP0 = np.diag([c, 1.0, 1.0])
    sys_ = propagate_jacobi(P0, dP0, constant_curvature(0.0, 3, 2.0), block_dims=(1, 2))
    t = sys_.t
    assert np.allclose(sys_.det(), (1 + c * t) * t ** 2, rtol=1e-8, atol=1e-14)
    assert np.allclose(sys_.scaled_det(), 1 + c * t, rtol=1e-8)
    assert sys_.symmetry_residual() < 1e-8


def test_conjugate_point_detected():
    # on the unit sphere Jacobi fields with P(0) = I, P'(0) = 0 vanish at pi/2
    curve = constant_curvature(1.0, 2, 3.0)
    with pytest.raises(ConjugatePointError) as err:
        propagate_jacobi(np.eye(2), np.zeros((2, 2)), curve)
    assert err.value.t_conjugate == pytest.approx(math.pi / 2, abs=1e-6)
    cut = propagate_jacobi(np.eye(2), np.zeros((2, 2)), curve, on_conjugate="truncate")
    assert cut.conjugate_time == pytest.approx(math.pi / 2, abs=1e-6)
    assert cut.t[-1] < math.pi / 2


def test_argument_validation():
    curve = constant_curvature(0.0, 2, 1.0)
    with pytest.raises(ValueError):
        propagate_jacobi(np.eye(2), np.eye(3), curve)
    with pytest.raises(ValueError):
        propagate_jacobi(np.eye(2), np.eye(2), curve, block_dims=(1, 2))
    with pytest.raises(ValueError):
        propagate_jacobi(np.eye(2), np.eye(2), curve, block_dims=(1, 1))
    with pytest.raises(ValueError):
        propagate_jacobi(np.eye(2), np.eye(2), curve, on_conjugate="ignore")


def test_trace_bound_rejects_large_initial_trace():
    sys_ = propagate_jacobi(np.eye(2), 3.0 * np.eye(2), constant_curvature(0.0, 2, 1.0))
    with pytest.raises(ValueError):
        riccati_trace_bound(sys_, 1.0)


def test_index_form_of_jacobi_field_is_boundary_term():
    # for a Jacobi field Z = P e, I(Z, Z) = <Z'(T), Z(T)>
    kappa, T = 0.5, 1.5
    H = np.array([[0.2, 0.1], [0.1, -0.3]])
    curve = constant_curvature(kappa, 2, T, samples=2001)
    sys_ = propagate_jacobi(np.eye(2), H, curve)
    e = np.array([0.6, 0.8])
    Z = sys_.P @ e
    dZ = sys_.Pprime @ e
    value = index_form(curve, Z, H, dZ)
    assert value == pytest.approx(float(dZ[-1] @ Z[-1]), abs=1e-6)


def test_ode_residual_small():
    rng = np.random.default_rng(0)
    curve = random_psd_curvature(rng, 3, 1.0)
    sys_ = propagate_jacobi(np.eye(3), 0.1 * np.eye(3), curve)
    assert sys_.ode_residual() < 1e-5


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_random_configurations_monotone(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 4))
    t_max = rng.uniform(0.5, 3.0)
    curve = random_psd_curvature(rng, n, t_max, scale=rng.uniform(0.0, 2.0))
    lam = rng.uniform(-0.9 / t_max, 2.0, size=n)
    c = lam.mean() + rng.uniform(0.0, 1.0)
    Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    sys_ = propagate_jacobi(np.eye(n), Q @ np.diag(lam) @ Q.T, curve, on_conjugate="truncate")
    assert jacobian_ratio_monotone(sys_, c).max_increase <= 1e-8
    assert riccati_trace_bound(sys_, c).margin >= -1e-8


def test_grid_rows_plot_ready():
    from abpcheck.report import parse_csv, render

    c = 0.5
    P0 = np.diag([1.0, 0.0])
    dP0 = np.diag([c, 1.0])
    sys_ = propagate_jacobi(P0, dP0, constant_curvature(0.0, 2, 1.0), block_dims=(1, 1))
    rows = grid_rows(sys_, c)
    assert len(rows) == sys_.t.size
    assert rows[0].tr_Q == math.inf
    assert all(abs(r.rho - 1.0) < 1e-8 for r in rows)
    # tr Q = c/(1 + t c) + 1/t in flat space
    assert rows[-1].tr_Q == pytest.approx(c / (1 + c) + 1.0, rel=1e-8)
    parsed = parse_csv(render(rows))
    assert list(parsed[0]) == ["t", "det_P", "rho", "tr_Q"]
