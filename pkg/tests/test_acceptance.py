"""Acceptance criteria, one test per criterion.

Each test prints a ``PASS``/``FAIL criterion N`` line; the lines are repeated
in the terminal summary.
"""

import math
import time

import numpy as np

from abpcheck.config import parse_config
from abpcheck.jacobi import jacobian_ratio_monotone, propagate_jacobi, random_psd_curvature, riccati_trace_bound
from abpcheck.models import (PROFILE_PRESETS, asymptotic_volume_ratio, cone_smoothed_profile, euclidean_model,
                             make_model, preset_profile, unit_ball_volume, volume_quotient)
from abpcheck.potential import (constant_density, geodesic_ball, meshed_region, normalize_density, quadratic_density,
                                solve_potential, sobolev_sides)
from abpcheck.fem import disk_mesh
from abpcheck.report import render
from abpcheck.runner import (MIN_ORDER, convergence_study, equality_diagnostics, mesh_tolerance, run_batch, run_case,
                             ANALYTIC_TOL)
from abpcheck.submanifold import (constant_function, complex_curve, extrinsic_geometry, flat_disk, lift_codim1,
                                  minimal_isoperimetry, ms_sides)
from abpcheck.transport import capture_inequality, coverage_experiment, jacobian_bound_margin

SEED = 20240611


def _euclid_disk():
    model = euclidean_model(2)
    D = geodesic_ball(model, 1.0)
    f = normalize_density(constant_density(), D)
    return model, D, f, solve_potential(f, D)


def _cone_disk(alpha=0.5):
    model = make_model(cone_smoothed_profile(alpha), 2)
    D = geodesic_ball(model, 1.0)
    f = normalize_density(quadratic_density(2.0, 1.0, 1.0), D)
    return model, D, f, solve_potential(f, D)


def test_criterion_1_euclidean_equality(criterion):
    start = time.perf_counter()
    model = euclidean_model(2)
    D = geodesic_ball(model, 1.0)
    f = normalize_density(constant_density(), D)
    solve_potential(f, D)
    lhs, rhs = sobolev_sides(f, D, model.theta)
    radial_err = abs(lhs / rhs - 1.0)
    h = 0.025
    Dm = meshed_region(model, disk_mesh(1.0, h))
    fm = normalize_density(constant_density(), Dm)
    solve_potential(fm, Dm)
    lhs_m, rhs_m = sobolev_sides(fm, Dm, model.theta)
    mesh_err = abs(lhs_m / rhs_m - 1.0)
    elapsed = time.perf_counter() - start
    ok = radial_err <= 1e-6 and mesh_err <= max(1e-4, 5 * h) and elapsed < 10.0
    criterion(1, ok, f"radial |ratio-1| = {radial_err:.2e}, mesh |ratio-1| = {mesh_err:.2e} at h={h}, "
                     f"{elapsed:.1f} s")
    assert ok


def test_criterion_2_strict_inequality_on_cones(criterion):
    start = time.perf_counter()
    worst = math.inf
    worst_case = None
    for alpha in (0.25, 0.5, 0.75):
        model = make_model(cone_smoothed_profile(alpha), 2)
        for R in (0.5, 1.0, 2.0):
            D = geodesic_ball(model, R)
            for f in (constant_density(), quadratic_density(2.0, 1.0, R)):
                solve_potential(normalize_density(f, D), D)
                lhs, rhs = sobolev_sides(f, D, model.theta)
                if lhs / rhs < worst:
                    worst, worst_case = lhs / rhs, (alpha, R, f.name)
    elapsed = time.perf_counter() - start
    ok = worst >= 1.0 + 1e-4 and elapsed < 120.0
    criterion(2, ok, f"18 cases, min ratio {worst:.6f} at (alpha, R, f) = {worst_case}, {elapsed:.1f} s")
    assert ok


def _random_configuration(rng):
    """Random PSD curvature and an admissible initial Hessian, with normal block rows half the time."""
    n = int(rng.integers(2, 5))
    m = int(rng.integers(1, 3)) if rng.random() < 0.5 else 0
    k = n + m
    t_max = rng.uniform(0.5, 3.0)
    curve = random_psd_curvature(rng, k, t_max, scale=rng.uniform(0.0, 2.0))
    lam = rng.uniform(-0.9 / t_max, 2.0, size=n)
    c = lam.mean() + rng.uniform(0.0, 1.0)
    Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    P0 = np.zeros((k, k))
    P0[:n, :n] = np.eye(n)
    dP0 = np.zeros((k, k))
    dP0[:n, :n] = Q @ np.diag(lam) @ Q.T
    if m:
        dP0[:n, n:] = rng.normal(scale=0.3, size=(n, m))
        dP0[n:, n:] = np.eye(m)
    return P0, dP0, curve, (n, m), c


def test_criterion_3_jacobian_monotonicity(criterion):
    start = time.perf_counter()
    rng = np.random.default_rng(SEED)
    worst_increase = -math.inf
    worst_margin = math.inf
    count = 1000
    for _ in range(count):
        P0, dP0, curve, dims, c = _random_configuration(rng)
        system = propagate_jacobi(P0, dP0, curve, dims, on_conjugate="truncate")
        worst_increase = max(worst_increase, jacobian_ratio_monotone(system, c).max_increase)
        worst_margin = min(worst_margin, riccati_trace_bound(system, c).margin)
    elapsed = time.perf_counter() - start
    ok = worst_increase <= 1e-8 and worst_margin >= -1e-8 and elapsed < 60.0
    criterion(3, ok, f"{count} configurations, max relative increase {worst_increase:.2e}, "
                     f"min trace margin {worst_margin:.2e}, {elapsed:.1f} s")
    assert ok


def test_criterion_4_jacobian_upper_bound(criterion):
    r = 10.0
    _, D, f, sol = _euclid_disk()
    cov = coverage_experiment(sol, D, euclidean_model(2), r, 50, SEED, case_id="jacobian", jacobians=True)
    equality = max(abs(jacobian_bound_margin(s, f, r, 2)) for s in cov.samples)
    model, Dc, fc, solc = _cone_disk()
    covc = coverage_experiment(solc, Dc, model, r, 30, SEED, case_id="jacobian", jacobians=True)
    margin = min(jacobian_bound_margin(s, fc, r, 2) for s in covc.samples)
    ok = equality <= 1e-8 and margin >= -1e-6 and len(cov.samples) > 0 and len(covc.samples) > 0
    criterion(4, ok, f"Euclidean |det - (1+r)^n| <= {equality:.2e} over {len(cov.samples)} samples, "
                     f"cone min bound margin {margin:.3e} over {len(covc.samples)} samples")
    assert ok


def test_criterion_5_coverage(criterion):
    r = 10.0
    _, D, _, sol = _euclid_disk()
    cov = coverage_experiment(sol, D, euclidean_model(2), r, 1000, SEED, tolerance=1e-6)
    model, Dc, _, solc = _cone_disk()
    covc = coverage_experiment(solc, Dc, model, r, 100, SEED, tolerance=1e-5)
    ok = cov.fraction == 1.0 and cov.max_error <= 1e-6 and covc.fraction >= 0.99
    criterion(5, ok, f"Euclidean {cov.verified}/{cov.targets} (max error {cov.max_error:.1e}), "
                     f"cone {covc.verified}/{covc.targets} at 1e-5")
    assert ok


def test_criterion_6_volume_capture(criterion):
    r = 10.0
    model, D, f, sol = _euclid_disk()
    rep = capture_inequality(sol, D, f, model, r, 10**6, SEED)
    w2 = unit_ball_volume(2)
    closed = (math.isclose(rep.lhs_exact, w2 * (r - 1.0) ** 2, rel_tol=1e-12)
              and math.isclose(rep.rhs, w2 * (1.0 + r) ** 2, rel_tol=1e-10))
    mc_ok = abs(rep.lhs - rep.lhs_exact) <= 3 * rep.lhs_stderr
    cone, Dc, fc, solc = _cone_disk()
    repc = capture_inequality(solc, Dc, fc, cone, r, 10**6, SEED)
    far = capture_inequality(solc, Dc, fc, cone, 40.0, 10**6, SEED)
    asym = far.lhs_over_rn / (w2 * cone.theta)
    ok = closed and mc_ok and rep.status == "pass" and repc.status == "pass" and abs(asym - 1.0) <= 0.1
    criterion(6, ok, f"Euclidean exact {rep.lhs_exact:.6f} <= {rep.rhs:.6f}, MC {rep.lhs:.3f} +- {rep.lhs_stderr:.3f}; "
                     f"cone {repc.lhs:.3f} +- {repc.lhs_stderr:.3f} <= {repc.rhs:.3f}; "
                     f"LHS/(r^n omega theta) = {asym:.4f} at r=40")
    assert ok


PRESET_PARAMS = {
    "euclidean": {},
    "cone_smoothed": {"alpha": 0.5},
    "capped_paraboloid": {"alpha": 0.6},
    "spline": {"knots": [0.0, 1.0, 2.0, 3.0], "values": [0.0, 0.9, 1.6, 2.1]},
}


def test_criterion_7_theta_and_bishop_gromov(criterion):
    theta_err = 0.0
    volume_err = 0.0
    for alpha in (0.25, 0.5, 0.75):
        for k in (2, 3, 4):
            est = asymptotic_volume_ratio(make_model(cone_smoothed_profile(alpha), k))
            theta_err = max(theta_err, abs(est.theta - alpha ** (k - 1)))
            volume_err = max(volume_err, abs(est.volume_estimate - alpha ** (k - 1)))
    worst_rise = -math.inf
    grid = np.linspace(0.05, 20.0, 100)
    assert set(PRESET_PARAMS) == set(PROFILE_PRESETS)
    for name, params in PRESET_PARAMS.items():
        for k in (2, 3):
            model = make_model(preset_profile(name, **params), k)
            q = volume_quotient(model, grid)
            worst_rise = max(worst_rise, float(np.max(np.diff(q) / q[:-1])))
    ok = theta_err <= 1e-4 and volume_err <= 1e-4 and worst_rise <= 1e-10
    criterion(7, ok, f"max |theta - alpha^(k-1)| = {theta_err:.2e} (volume extrapolation {volume_err:.2e}); {len(PRESET_PARAMS)} presets, "
                     f"max relative rise of the volume quotient {worst_rise:.2e}")
    assert ok


def test_criterion_8_michael_simon_equality(criterion):
    one = constant_function()
    rep = ms_sides(flat_disk(codim=2), one)
    lifted = ms_sides(lift_codim1(flat_disk(codim=1)), one)
    ok = abs(rep.ratio - 1.0) <= 1e-6 and lifted.lhs == rep.lhs
    criterion(8, ok, f"flat disk in R^4 |ratio-1| = {abs(rep.ratio - 1.0):.2e}; "
                     f"lifted LHS bitwise equal: {lifted.lhs == rep.lhs}")
    assert ok


def test_criterion_9_minimal_isoperimetry(criterion):
    start = time.perf_counter()
    patch = complex_curve(2)
    geo = extrinsic_geometry(patch, level=2)
    H = float(np.max(geo.interior.H_norm))
    iso = minimal_isoperimetry(patch)
    bound = 2.0 * math.sqrt(math.pi) * math.sqrt(iso.area)
    # closed forms for (z, z^2) on the unit disk: area 3 pi, boundary length 2 pi sqrt(5)
    exact = abs(iso.area - 3 * math.pi) <= 1e-9 and abs(iso.length - 2 * math.pi * math.sqrt(5)) <= 1e-9
    elapsed = time.perf_counter() - start
    ok = H <= 1e-8 and iso.length >= bound - 1e-6 and iso.length > bound and exact and elapsed < 30.0
    criterion(9, ok, f"max |H| = {H:.1e}, |boundary| = {iso.length:.6f} > {bound:.6f}, "
                     f"closed-form area and length: {exact}, {elapsed:.1f} s")
    assert ok


DIAGNOSTIC_CONFIG = """
[run]
seed = 3

[case.euclid_radial]
theorem = sobolev_domain
manifold.preset = euclidean

[case.euclid_mesh]
theorem = sobolev_domain
manifold.preset = euclidean
solver.method = mesh
solver.h = 0.025

[case.flat_disk]
theorem = michael_simon
sigma.preset = flat_disk
solver.h = 0.05

[case.cone_quarter]
theorem = sobolev_domain
manifold.preset = cone_smoothed
manifold.alpha = 0.25

[case.cone_half_mesh]
theorem = sobolev_domain
manifold.preset = cone_smoothed
manifold.alpha = 0.5
density.preset = quadratic
solver.method = mesh
solver.h = 0.05
"""


def test_criterion_10_rigidity_diagnostics(criterion):
    rows = run_batch(parse_config(DIAGNOSTIC_CONFIG).cases)
    near = {r.case_id: r for r in rows if r.diagnostics == "near equality"}
    gated = [r for r in rows if r.theta < 1.0]
    within = all(r.status == "pass" for r in near.values())
    worst = max(r.hessian_residual / (10 * (ANALYTIC_TOL if math.isnan(r.h) else mesh_tolerance(r.h)))
                for r in near.values())
    ok = (set(near) == {"euclid_radial", "euclid_mesh", "flat_disk"} and within
          and all(r.diagnostics == "not near equality" for r in gated) and len(gated) == 2)
    criterion(10, ok, f"{len(near)} near-equality cases, worst residual / limit = {worst:.3f}; "
                      f"{len(gated)} theta<1 cases gated as not near equality")
    assert ok


def test_criterion_11_convergence(criterion):
    cases = parse_config(DIAGNOSTIC_CONFIG).cases
    cfg = next(c for c in cases if c.case_id == "euclid_mesh")
    rows = convergence_study(cfg, [0.1, 0.05, 0.025])
    orders = [r.order for r in rows if r.quantity == "u" and not math.isnan(r.order)]
    ok = len(orders) == 2 and min(orders) >= MIN_ORDER
    criterion(11, ok, f"observed orders of u over h = 0.1, 0.05, 0.025: {', '.join(f'{o:.3f}' for o in orders)}")
    assert ok


DETERMINISM_CONFIG = """
[run]
seed = 11

[case.euclid_radial]
theorem = sobolev_domain
manifold.preset = euclidean
transport.r = [10.0]
transport.budget = 20000
transport.targets = 10
transport.experiments = ["capture", "coverage"]

[case.cone_mesh]
theorem = sobolev_domain
manifold.preset = cone_smoothed
manifold.alpha = 0.5
solver.method = mesh
solver.h = 0.1

[case.cone_capture]
theorem = sobolev_domain
manifold.preset = cone_smoothed
manifold.alpha = 0.5
density.preset = quadratic
transport.r = [10.0]
transport.budget = 20000
transport.targets = 5
transport.experiments = ["capture", "coverage", "jacobian"]

[case.flat_disk_shell]
theorem = michael_simon
sigma.preset = flat_disk
solver.h = 0.1
transport.r = [10.0]
transport.sigma = [0.0, 0.5]
transport.budget = 20000
transport.experiments = ["shell"]

[case.complex_curve]
theorem = minimal_isoperimetric
sigma.preset = complex_curve
"""


def test_criterion_12_determinism(criterion):
    cases = parse_config(DETERMINISM_CONFIG).cases
    reports = []
    for threads in (1, 1, 8):
        rows = run_batch(cases, threads, transport=True)
        reports.append((render(rows, "csv"), render(rows, "json")))
    ok = reports[0] == reports[1] == reports[2] and all(r.status != "fail" for r in rows)
    criterion(12, ok, f"{len(rows)} rows; byte-identical CSV and JSON across two runs and thread pools 1 and 8")
    assert ok


def test_equality_diagnostics_direct():
    """The gate itself, outside the batch runner."""
    model, D, f, sol = _euclid_disk()
    cases = parse_config(DIAGNOSTIC_CONFIG).cases
    row = run_case(cases[0])[0]
    diag = equality_diagnostics(sol, f, row, ANALYTIC_TOL)
    assert diag.passed and diag.hessian_residual <= 10 * ANALYTIC_TOL
