"""The transport map ``Phi_r(x) = exp_x(r grad u(x))`` and its verification experiments.

Points of the domain are handled in the polar chart ``x = r omega`` of the
model; tangent vectors in the orthonormal frame at the base point.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicHermiteSpline
from scipy.optimize import brentq, minimize

from .geodesy import ShootingError, exp_map, geodesic_to, slice_distance
from .jacobi import JacobiSystem, jacobian_ratio_monotone, propagate_jacobi
from .models import PolarPoint, WarpedModel, unit_ball_volume
from .potential import DensityField, GeoDomain, PotentialSolution, _radial_rule

MIN_SAMPLES = 1000
MC_SIGMAS = 3.0


def make_rng(seed: int, case_id: str = "") -> np.random.Generator:
    """Counter-based Philox generator keyed by the config seed and the case id."""
    if seed is None:
        raise ValueError("an explicit seed is required")
    ss = np.random.SeedSequence([int(seed), zlib.crc32(case_id.encode())])
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class TransportConfig:
    r: float
    sample_count: int = MIN_SAMPLES
    seed: int = 0
    contact_tolerance: float = 1e-7

    def __post_init__(self):
        if not self.r > 0:
            raise ValueError("transport time must be positive")
        if self.sample_count < MIN_SAMPLES:
            raise ValueError(f"sample_count must be at least {MIN_SAMPLES}")


@dataclass
class ContactSample:
    x: np.ndarray
    phi_rx: np.ndarray
    jacobian: float
    is_contact: bool = False
    margin: float = math.nan
    system: JacobiSystem | None = field(default=None, repr=False)


def _frame_to_chart_covector(x, w, model):
    """Chart differential of a function whose frame gradient at ``x`` is ``w``."""
    rho = float(np.linalg.norm(x))
    if rho == 0.0 or model.is_euclidean:
        return w
    omega = x / rho
    psi = float(model.profile.phi(rho)) / rho
    w_r = float(np.dot(w, omega))
    return w_r * omega + psi * (w - w_r * omega)


def phi_map(sol: PotentialSolution, x, r: float, model: WarpedModel | None = None,
            on_conjugate: str = "raise") -> ContactSample:
    """Image ``Phi_r(x)`` and ``det D Phi_r(x) = det P(r)`` from the Jacobi system along the geodesic."""
    model = model or sol.model
    x = np.asarray(x, dtype=float)
    grad = sol.gradient(x[None])[0]
    H = sol.hessian(x[None])[0]
    end, curve = exp_map(model, PolarPoint.from_chart(x, model.dim), grad, t=r)
    F0 = curve.frame_at(0.0)
    system = propagate_jacobi(np.eye(model.dim), F0.T @ H @ F0, curve, on_conjugate=on_conjugate)
    return ContactSample(x, end.chart(), float(system.det()[-1]), system=system)


def finite_difference_jacobian(sol: PotentialSolution, x, r: float, model: WarpedModel | None = None,
                               eps: float = 1e-5) -> float:
    """Riemannian ``det D Phi_r`` from central differences of the chart map.

    Chart determinants are converted with the area element ``(phi(rho)/rho)^{n-1}``.
    """
    model = model or sol.model
    x = np.asarray(x, dtype=float)
    n = x.size

    def image(z):
        grad = sol.gradient(z[None])[0]
        return exp_map(model, PolarPoint.from_chart(z, n), grad, t=r, samples=2)[0].chart()

    J = np.column_stack([(image(x + eps * e) - image(x - eps * e)) / (2 * eps) for e in np.eye(n)])

    def density(z):
        rho = float(np.linalg.norm(z))
        return 1.0 if rho == 0.0 else (float(model.profile.phi(rho)) / rho) ** (n - 1)

    return float(np.linalg.det(J) * density(image(x)) / density(x))


# ---------------------------------------------------------------------------
# distances from many points


def distances(model: WarpedModel, points, p) -> np.ndarray:
    """``d(x, p)`` for chart points ``x``; rows whose shooting fails are NaN."""
    points = np.atleast_2d(points)
    p = np.asarray(p, dtype=float)
    if model.is_euclidean:
        return np.linalg.norm(points - p, axis=1)
    target = PolarPoint.from_chart(p, model.dim)
    out = np.empty(len(points))
    for i, x in enumerate(points):
        try:
            out[i] = geodesic_to(model, PolarPoint.from_chart(x, model.dim), target)[0]
        except ShootingError:
            out[i] = math.nan
    return out


@dataclass
class ContactReport:
    in_U: bool
    is_contact: bool
    margin: float
    argmin: np.ndarray | None
    boundary_margin: float
    probes: int
    skipped: int
    tolerance: float


def contact_test(sol: PotentialSolution, xbar, r: float, probes, model: WarpedModel | None = None,
                 tolerance: float | None = None, boundary_mask=None) -> ContactReport:
    """Check ``r u(x) + d(x, Phi_r(xbar))^2 / 2 >= r u(xbar) + r^2 |grad u(xbar)|^2 / 2`` on probes."""
    model = model or sol.model
    xbar = np.asarray(xbar, dtype=float)
    probes = np.atleast_2d(probes)
    grad = sol.gradient(xbar[None])[0]
    gnorm = float(np.linalg.norm(grad))
    if gnorm >= 1.0:
        return ContactReport(False, False, math.nan, None, math.nan, 0, 0, 0.0)
    p = exp_map(model, PolarPoint.from_chart(xbar, model.dim), grad, t=r, samples=2)[0].chart()
    base = r * float(sol.value(xbar[None])[0]) + 0.5 * r * r * gnorm * gnorm
    tol = tolerance if tolerance is not None else 1e-7 * max(1.0, abs(base))
    d = distances(model, probes, p)
    ok = np.isfinite(d)
    skipped = int((~ok).sum())
    if skipped > 0.01 * len(probes):
        raise ShootingError(f"{skipped} of {len(probes)} probe distances failed")
    slack = r * sol.value(probes[ok]) + 0.5 * d[ok] ** 2 - base
    i = int(np.argmin(slack))
    bmargin = math.inf
    if boundary_mask is not None:
        bm = np.asarray(boundary_mask)[ok]
        if np.any(bm):
            bmargin = float(np.min(slack[bm]))
    return ContactReport(True, bool(slack[i] >= -tol), float(slack[i]), probes[ok][i], bmargin,
                         len(probes), skipped, tol)


# ---------------------------------------------------------------------------
# sampling in the model


class RadialSampler:
    """Uniform samples of the geodesic ball ``B_R(o)`` for the warped volume element.

    The radius is drawn by inverting the cumulative volume, tabulated by
    Gauss-Legendre quadrature and interpolated with cubic Hermite splines
    whose derivative is the exact density ``phi^{k-1}``.
    """

    def __init__(self, model: WarpedModel, R: float, nodes: int = 4097):
        self.model = model
        self.R = R
        k = model.dim
        prof = model.profile
        grid = np.linspace(0.0, R, nodes)
        lo, hi = grid[:-1], grid[1:]
        gx, gw = np.polynomial.legendre.leggauss(8)
        pts = 0.5 * (hi - lo)[:, None] * (gx + 1.0) + lo[:, None]
        pieces = np.sum(prof.phi(pts) ** (k - 1) * gw, axis=1) * 0.5 * (hi - lo)
        cum = np.concatenate([[0.0], np.cumsum(pieces)])
        self.total = float(cum[-1])
        self._grid = grid
        self._cum = cum
        self._spline = CubicHermiteSpline(grid, cum, prof.phi(grid) ** (k - 1))

    def radii(self, uniforms) -> np.ndarray:
        target = np.asarray(uniforms) * self.total
        rho = np.interp(target, self._cum, self._grid)
        dens = lambda s: self.model.profile.phi(s) ** (self.model.dim - 1)
        for _ in range(3):
            step = (self._spline(rho) - target) / np.maximum(dens(rho), 1e-300)
            rho = np.clip(rho - step, 0.0, self.R)
        return rho

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        k = self.model.dim
        rho = self.radii(rng.random(count))
        z = rng.standard_normal((count, k))
        return rho[:, None] * z / np.linalg.norm(z, axis=1)[:, None]


def far_radius(model: WarpedModel, R: float, r: float) -> float:
    """Largest ``rho`` with ``d(x, p) < r`` for all ``x`` in ``B_R(o)`` when ``|p| = rho``.

    The farthest point of the ball from ``p`` is the antipodal boundary point
    and its distance grows with ``|p|``, so the target set is itself a ball
    about the pole.  Returns 0 when the set is empty.
    """
    if r <= R:
        return 0.0
    if model.is_euclidean:
        return r - R
    prof = model.profile

    def excess(rho):
        return slice_distance(prof, R, rho, math.pi).length - r

    lo, hi = max(r - R, 0.0), r
    if excess(lo) >= 0:
        return lo
    return float(brentq(excess, lo, hi, xtol=1e-13, rtol=1e-14))


def _domain_radius(D: GeoDomain) -> float:
    if D.kind != "geodesic_ball":
        raise ValueError("transport experiments use geodesic balls about the pole")
    return D.outer_radius


# ---------------------------------------------------------------------------
# coverage


@dataclass
class CoverageReport:
    status: str
    targets: int
    verified: int
    max_error: float
    boundary_hits: int
    samples: list = field(default_factory=list, repr=False)
    tolerance: float = 1e-6

    @property
    def fraction(self) -> float:
        return self.verified / self.targets if self.targets else math.nan


def _functional(sol, model, r, p):
    def F(x):
        d, direction = geodesic_to(model, PolarPoint.from_chart(x, model.dim), PolarPoint.from_chart(p, model.dim))
        val = r * float(sol.value(x[None])[0]) + 0.5 * d * d
        grad_u = r * sol.gradient(x[None])[0]
        if direction is None:
            g = grad_u
        else:
            g = grad_u - d * direction
        return val, _frame_to_chart_covector(x, g, model)

    return F


def minimise_transport_functional(sol, model, r, p, starts, R):
    """Multi-start BFGS for ``x -> r u(x) + d(x, p)^2 / 2`` over the closed ball ``|x| <= R``.

    Outside the ball the functional is evaluated at the radial projection and
    a quadratic penalty is added, so iterates never query the potential
    beyond the domain.  Returns the best point and value.
    """
    F = _functional(sol, model, r, p)
    stiff = 1e3 * (1.0 + r) ** 2

    def extended(x):
        rho = float(np.linalg.norm(x))
        if rho <= R:
            return F(x)
        omega = x / rho
        val, g = F(R * omega)
        tangential = (R / rho) * (g - np.dot(g, omega) * omega)
        excess = rho - R
        return val + stiff * excess * excess, tangential + (np.dot(g, omega) + 2 * stiff * excess) * omega

    best = None
    for x0 in starts:
        res = minimize(extended, x0, jac=True, method="BFGS", options={"gtol": 1e-11, "maxiter": 400})
        if best is None or res.fun < best.fun:
            best = res
    return best.x, float(best.fun)


def _ray_start(sol, p, r, R):
    """Point ``s omega`` on the ray through ``p`` whose radial transport reaches ``|p|``."""
    rho = float(np.linalg.norm(p))
    if rho == 0.0:
        return np.zeros_like(p)
    omega = p / rho
    reach = lambda s: s + r * float(sol.gradient((s * omega)[None])[0] @ omega) - rho
    hi = R * (1.0 - 1e-9)
    if reach(0.0) < 0.0 < reach(hi):
        return brentq(reach, 0.0, hi, xtol=1e-14) * omega
    return p / (1.0 + r)


def coverage_experiment(sol: PotentialSolution, D: GeoDomain, model: WarpedModel, r: float,
                        budget: int, seed: int, starts: int = 3, tolerance: float = 1e-6,
                        case_id: str = "coverage", jacobians: bool = False) -> CoverageReport:
    """Recover targets ``p`` with ``d(x, p) < r`` for all ``x`` in ``D`` as images of minimisers."""
    R = _domain_radius(D)
    rho_max = far_radius(model, R, r)
    if rho_max <= 0.0:
        return CoverageReport("vacuous", 0, 0, math.nan, 0, tolerance=tolerance)
    rng = make_rng(seed, case_id)
    sampler = RadialSampler(model, r)
    targets = []
    while len(targets) < budget:
        batch = sampler.sample(rng, budget)
        targets.extend(batch[np.linalg.norm(batch, axis=1) < rho_max])
    targets = np.array(targets[:budget])
    n = model.dim
    verified = 0
    worst = 0.0
    boundary = 0
    samples = []
    for p in targets:
        # one start on the ray through p, the rest uniform in D
        x0 = [_ray_start(sol, p, r, R)]
        while len(x0) < starts:
            z = rng.standard_normal(n)
            x0.append(R * rng.random() ** (1.0 / n) * z / np.linalg.norm(z))
        xbar, _ = minimise_transport_functional(sol, model, r, p, x0, R)
        on_boundary = np.linalg.norm(xbar) >= R * (1.0 - 1e-9)
        boundary += int(on_boundary)
        grad = sol.gradient(xbar[None])[0]
        if on_boundary or np.linalg.norm(grad) >= 1.0:
            continue
        if jacobians:
            sample = phi_map(sol, xbar, r, model, on_conjugate="truncate")
            image = sample.phi_rx
        else:
            image = exp_map(model, PolarPoint.from_chart(xbar, n), grad, t=r, samples=2)[0].chart()
            sample = ContactSample(xbar, image, math.nan)
        err = float(np.linalg.norm(image - p))
        worst = max(worst, err)
        if err <= tolerance:
            verified += 1
            sample.is_contact = True
            samples.append(sample)
    return CoverageReport("ok", len(targets), verified, worst, boundary, samples, tolerance)


# ---------------------------------------------------------------------------
# volume capture


@dataclass
class CaptureReport:
    r: float
    sigma: float
    lhs: float
    lhs_stderr: float
    rhs: float
    status: str
    samples: int
    seed: int
    lhs_exact: float = math.nan
    dim: int = 0

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs

    @property
    def lhs_over_rn(self) -> float:
        return self.lhs / self.r ** self.dim


def mc_volume(sampler: RadialSampler, member, budget: int, rng: np.random.Generator,
              chunk: int = 200_000) -> tuple[float, float]:
    """Volume of ``{p in B : member(p)}`` and its standard error by uniform sampling of ``B``."""
    hits = 0
    done = 0
    while done < budget:
        m = min(chunk, budget - done)
        pts = sampler.sample(rng, m)
        hits += int(np.count_nonzero(member(pts)))
        done += m
    k = sampler.model.dim
    vol = k * unit_ball_volume(k) * sampler.total
    q = hits / budget
    return vol * q, vol * math.sqrt(q * (1 - q) / budget)


def u_set_integral(sol: PotentialSolution, D: GeoDomain, integrand) -> float:
    """``int_U integrand(rho)`` over ``U = {|grad u| < 1}`` for a radial solution on a ball."""
    R = _domain_radius(D)
    n = D.dim
    prof = D.model.profile
    # |u'| - 1 changes sign only where U has a boundary
    grid = np.linspace(0.0, R, 513)
    gap = np.abs(sol.du(grid)) - 1.0
    breaks = [brentq(lambda s: abs(float(sol.du(s))) - 1.0, a, b)
              for a, b, ga, gb in zip(grid[:-1], grid[1:], gap[:-1], gap[1:]) if ga * gb < 0]
    rr, w = _radial_rule(0.0, R, list(breaks) + list(sol.density.kinks))
    inside = np.abs(sol.du(rr)) < 1.0
    return float(n * unit_ball_volume(n) * np.sum(inside * integrand(rr) * prof.phi(rr) ** (n - 1) * w))


def capture_inequality(sol: PotentialSolution, D: GeoDomain, f: DensityField, model: WarpedModel,
                       r: float, budget: int, seed: int, sigma: float = 0.0,
                       case_id: str = "capture") -> CaptureReport:
    """Both sides of ``|{p : sigma r < d(x, p) < r for all x in D}| <= int_U (1 + r f^{1/(n-1)})^n``.

    ``sigma > 0`` restricts the target set to the shell used by the
    submanifold experiments; the right side is unchanged.
    """
    if not 0.0 <= sigma < 1.0:
        raise ValueError("sigma must lie in [0, 1)")
    R = _domain_radius(D)
    n = model.dim
    rho_max = far_radius(model, R, r)
    rhs = u_set_integral(sol, D, lambda s: (1.0 + r * f(s) ** (1.0 / (n - 1))) ** n)
    if rho_max <= 0.0:
        return CaptureReport(r, sigma, 0.0, 0.0, rhs, "vacuous", 0, seed, dim=n)
    rng = make_rng(seed, case_id)
    sampler = RadialSampler(model, r)
    # the nearest point of the ball to p is radial, at distance |p| - R
    lo = sigma * r + R if sigma > 0 else -math.inf
    member = lambda pts: (np.linalg.norm(pts, axis=1) < rho_max) & (np.linalg.norm(pts, axis=1) > lo)
    lhs, err = mc_volume(sampler, member, budget, rng)
    exact = math.nan
    if model.is_euclidean and sigma == 0.0:
        exact = unit_ball_volume(n) * rho_max ** n
    if lhs <= rhs + MC_SIGMAS * err:
        status = "pass"
    elif lhs - MC_SIGMAS * err <= rhs:
        status = "inconclusive"
    else:
        status = "fail"
    return CaptureReport(r, sigma, lhs, err, rhs, status, budget, seed, exact, n)


def jacobian_bound_margin(sample: ContactSample, f: DensityField, r: float, n: int) -> float:
    """``(1 + r f(x)^{1/(n-1)})^n - det D Phi_r(x)``."""
    c = float(f(np.linalg.norm(sample.x))) ** (1.0 / (n - 1))
    return (1.0 + r * c) ** n - sample.jacobian


def contact_monotonicity(sample: ContactSample, f: DensityField) -> float:
    """Max relative increase of the normalised Jacobian ratio along the contact geodesic."""
    n = sample.system.block_dims[0]
    c = float(f(np.linalg.norm(sample.x))) ** (1.0 / (n - 1))
    return jacobian_ratio_monotone(sample.system, c).max_increase
