import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from abpcheck.potential import DensityError
from abpcheck.submanifold import (ImmersedPatch, ParamDomain, arithmetic_harmonic_gap, catenoid_band, circle,
                                  complex_curve, constant_function, extrinsic_geometry, flat_disk,
                                  flat_disk_shell_volume, flat_strip, hemisphere, lift_codim1, load_patch_table,
                                  minimal_isoperimetry, ms_constant, ms_sides, normal_transport, normal_transport_fd,
                                  normalize_surface_function, patch_preset, point_geometry, quadratic_function,
                                  shell_capture, spiral, surface_function, surface_integrals,
                                  surface_laplacian_check, surface_potential)

ONE = constant_function()


def test_flat_patches_have_no_curvature():
    for patch in (flat_disk(), flat_strip(), lift_codim1(flat_disk(codim=1))):
        geo = extrinsic_geometry(patch)
        assert np.max(np.abs(geo.interior.II)) < 1e-12
        assert geo.frame_residual() < 1e-12


def test_complex_curve_closed_forms():
    geo = extrinsic_geometry(complex_curve(2))
    assert geo.area() == pytest.approx(3 * math.pi, rel=1e-12)
    assert geo.boundary_length() == pytest.approx(2 * math.pi * math.sqrt(5), rel=1e-12)
    assert np.max(geo.interior.H_norm) < 1e-10


def test_hemisphere_mean_curvature():
    geo = extrinsic_geometry(hemisphere())
    assert geo.area() == pytest.approx(2 * math.pi, rel=1e-8)
    assert geo.boundary_length() == pytest.approx(2 * math.pi, rel=1e-8)
    assert np.allclose(geo.interior.H_norm, 2.0, atol=1e-6)


def test_catenoid_is_minimal():
    geo = extrinsic_geometry(catenoid_band())
    assert np.max(geo.interior.H_norm) < 1e-5
    assert geo.symmetry_residual() < 1e-6


def test_circle_curvature():
    geo = extrinsic_geometry(circle(2.0))
    assert geo.area() == pytest.approx(4 * math.pi, rel=1e-12)
    assert np.allclose(geo.interior.H_norm, 0.5, atol=1e-10)


def test_ms_constant_values():
    # (n+m)|B^{n+m}| / (m |B^m|) for m = 2: |S^{n+1}| / (2 pi)
    assert ms_constant(2, 2) == pytest.approx(4 * (math.pi ** 2 / 2) / (2 * math.pi))
    assert ms_constant(1, 2) == pytest.approx(3 * (4 * math.pi / 3) / (2 * math.pi))


def test_flat_disk_equality_and_lift():
    rep = ms_sides(flat_disk(codim=2), ONE)
    assert rep.ratio == pytest.approx(1.0, abs=1e-12)
    assert ms_sides(lift_codim1(flat_disk(codim=1)), ONE).lhs == rep.lhs
    assert rep.quadrature_error < 1e-12


def test_ms_strict_for_curved_patches():
    for patch, f in ((complex_curve(2), ONE), (lift_codim1(hemisphere()), quadratic_function(2.0, 0.5)),
                     (lift_codim1(spiral()), ONE), (patch_preset("catenoid_band", codim=2), ONE)):
        assert ms_sides(patch, f).ratio > 1.0


def test_ms_rejects_codim_one_and_bad_density():
    with pytest.raises(ValueError):
        ms_sides(hemisphere(), ONE)
    with pytest.raises(DensityError):
        ms_sides(flat_disk(), quadratic_function(0.5, 1.0))


def test_minimal_isoperimetry_flat_disk_equality():
    rep = minimal_isoperimetry(flat_disk())
    assert rep.margin == pytest.approx(0.0, abs=1e-12)
    assert minimal_isoperimetry(complex_curve(2)).margin > 3.0


def test_patch_preset_lifting():
    assert patch_preset("hemisphere", codim=3).codim == 3
    assert patch_preset("spiral", codim=2).ambient_dim == 3
    with pytest.raises(ValueError):
        patch_preset("nope")
    with pytest.raises(ValueError):
        lift_codim1(flat_disk(codim=2))


def test_patch_validation():
    F = lambda U: U
    with pytest.raises(ValueError):
        ImmersedPatch("bad", 2, 1, F, ParamDomain("interval", (0.0, 1.0)))
    with pytest.raises(ValueError):
        ImmersedPatch("bad", 1, 1, F, ParamDomain("interval", (0.0, 1.0)), ambient="sphere")


def test_table_patch_matches_circle(tmp_path):
    t = np.linspace(0.0, 2 * math.pi, 201)
    path = tmp_path / "circle.txt"
    np.savetxt(path, np.column_stack([t, np.cos(t), np.sin(t)]))
    patch = load_patch_table(path, 1, 1, closed=True)
    assert extrinsic_geometry(patch).area() == pytest.approx(2 * math.pi, rel=1e-6)


def test_surface_function_gradient():
    f = quadratic_function(2.0, 0.5)
    geo = point_geometry(complex_curve(2), np.array([[0.3, 0.2], [-0.1, 0.5]]))
    g = f.surface_gradient(geo)
    h = 1e-6
    for k, U in enumerate(geo.U):
        for i in range(2):
            e = np.zeros(2)
            e[i] = h
            Xp = point_geometry(complex_curve(2), (U + e)[None]).X
            Xm = point_geometry(complex_curve(2), (U - e)[None]).X
            num = (f(Xp) - f(Xm))[0] / (2 * h)
            assert float(g[k] @ geo.T[k][:, i]) == pytest.approx(num, abs=1e-7)
    with pytest.raises(ValueError):
        surface_function("nope")


def test_flat_disk_surface_potential():
    P = flat_disk()
    h = 0.05
    f = normalize_surface_function(P, ONE, h)
    sol = surface_potential(P, f, h)
    V = sol.mesh.vertices
    d = sol.u - 0.5 * np.sum(V * V, axis=1)
    assert np.ptp(d) < 5e-3
    assert sol.residual_neumann < 0.05
    with pytest.raises(DensityError):
        surface_potential(P, constant_function(3.0), h)


def test_surface_integrals_compatible_after_normalization():
    P = complex_curve(2)
    f = normalize_surface_function(P, ONE, 0.05)
    ints = surface_integrals(P, f, 0.05)
    assert abs(ints.compatibility) <= 1e-6 * ints.A


def test_curve_potential_and_transport():
    C = lift_codim1(spiral())
    sol = surface_potential(C, ONE)
    assert sol.residual_neumann < 1e-8
    x, y = np.array([9.0]), np.array([0.1, 0.2])
    s = normal_transport(C, sol, x, y, 1.5)
    assert s.jacobian == pytest.approx(normal_transport_fd(C, sol, x, y, 1.5), rel=1e-6)
    assert s.bound_margin >= -1e-6
    assert s.monotonicity <= 1e-8


def test_flat_disk_normal_transport_equality():
    P = flat_disk()
    sol = surface_potential(P, normalize_surface_function(P, ONE, 0.05), 0.05)
    s = normal_transport(P, sol, np.array([0.3, 0.2]), np.array([0.3, -0.4]), 2.0)
    # Phi(x, y) = (1 + r) x + r y on the flat disk
    assert s.jacobian == pytest.approx(4.0 * 9.0, rel=1e-2)
    assert s.small_time_limit() == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        normal_transport(P, sol, np.array([0.3, 0.2]), np.array([0.9, 0.4]), 2.0)


def test_surface_laplacian_bound_complex_curve():
    # the mesh Laplacian carries an O(h^2) error, so the bound holds in the limit: violations must shrink with h
    P = complex_curve(2)
    U = np.array([[0.2, 0.1], [0.5, -0.3], [-0.4, 0.2]])
    margins = []
    for h in (0.1, 0.05):
        sol = surface_potential(P, normalize_surface_function(P, ONE, h), h)
        rep = surface_laplacian_check(sol, U, np.random.default_rng(0))
        assert rep.samples > 0
        margins.append(min(rep.margin, 0.0))
    assert margins[1] == 0.0 or margins[0] / margins[1] >= 2.5


@settings(max_examples=50, deadline=None)
@given(lam=st.lists(st.floats(-0.4, 3.0), min_size=2, max_size=4), t=st.floats(0.0, 2.0), extra=st.floats(0.0, 2.0))
def test_arithmetic_harmonic_gap_nonnegative(lam, t, extra):
    c = sum(lam) / len(lam) + extra
    assert arithmetic_harmonic_gap(lam, c, t) >= -1e-12


def test_flat_disk_shell_capture():
    P = flat_disk()
    sol = surface_potential(P, normalize_surface_function(P, ONE, 0.1), 0.1)
    rep = shell_capture(P, sol, ONE, 10.0, 0.0, 200000, 5, "shell")
    exact = flat_disk_shell_volume(10.0)
    assert abs(rep.lhs - exact) <= 3 * rep.lhs_stderr + 5 * rep.cloud_spacing * exact / 10.0
    assert rep.status == "pass"
    half = shell_capture(P, sol, ONE, 10.0, 0.5, 200000, 5, "shell")
    assert half.lhs < rep.lhs and half.rhs < rep.rhs


def test_far_test_matches_brute_force():
    from abpcheck.submanifold import _FarTest

    # every point of a sphere cloud is extreme, which forces the screened path
    rng = np.random.default_rng(2)
    hull = rng.normal(size=(8000, 4))
    hull /= np.linalg.norm(hull, axis=1)[:, None]
    test = _FarTest(hull, coarse=500)
    assert len(test.sub) < len(hull) and test.delta > 0
    p = rng.normal(size=(1000, 4))
    brute = np.array([np.max(np.linalg.norm(hull - q, axis=1)) < 1.8 for q in p])
    assert np.array_equal(test.inside(p, 1.8), brute)
