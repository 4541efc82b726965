"""Densities, domains and the normalized Neumann potential.

For a positive density ``f`` on a compact domain ``D`` normalized so that
``int_D |grad f| + int_{dD} f = n int_D f^{n/(n-1)}``, the potential solves

    div(f grad u) = n f^{n/(n-1)} - |grad f|   in D,
    <grad u, eta> = 1                           on dD.

On geodesic balls and annuli of a model with a radial density the problem
reduces to one quadrature,
``f phi^{n-1} u'(r) = f(r0) phi(r0)^{n-1} u'(r0) + int_{r0}^r g phi^{n-1}``.
Mesh domains are handled in :mod:`abpcheck.fem`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .models import WarpedModel, unit_ball_volume

NORMALIZATION_TOL = 1e-9
RADIAL_TOL = 1e-6

_GL_X, _GL_W = np.polynomial.legendre.leggauss(20)


class DensityError(ValueError):
    """Density is not positive or cannot be normalized on the domain."""


# ---------------------------------------------------------------------------
# densities


@dataclass(frozen=True)
class DensityField:
    """Radial density ``scale * profile(r)`` with its derivative.

    ``kinks`` lists radii where ``profile'`` changes sign; ``|f'|`` is only
    piecewise smooth there, so quadratures break at them.
    """

    profile: Callable[[np.ndarray], np.ndarray]
    derivative: Callable[[np.ndarray], np.ndarray]
    scale: float = 1.0
    name: str = "custom"
    kinks: tuple[float, ...] = ()
    params: dict = field(default_factory=dict, compare=False)

    def __call__(self, r):
        return self.scale * self.profile(np.asarray(r, dtype=float))

    def d(self, r):
        return self.scale * self.derivative(np.asarray(r, dtype=float))

    def grad_norm(self, r):
        return np.abs(self.d(r))

    @property
    def normalization(self) -> float:
        return self.scale

    def scaled(self, lam: float) -> "DensityField":
        return replace(self, scale=self.scale * lam)

    def at_points(self, x) -> np.ndarray:
        """Values at chart points ``x`` of shape ``(N, n)``."""
        return self(np.linalg.norm(np.atleast_2d(x), axis=1))


def polynomial_density(coefficients: Sequence[float], name: str = "polynomial") -> DensityField:
    """``f(r) = sum_i c_i r^i``."""
    poly = np.polynomial.Polynomial(np.asarray(coefficients, dtype=float))
    dpoly = poly.deriv()
    kinks = ()
    if dpoly.degree() >= 1:
        roots = dpoly.roots()
        kinks = tuple(sorted(float(z.real) for z in roots if abs(z.imag) < 1e-12 and z.real > 0))
    return DensityField(poly, dpoly, 1.0, name, kinks, {"coefficients": tuple(map(float, coefficients))})


def constant_density(value: float = 1.0) -> DensityField:
    return polynomial_density([value], name="constant")


def quadratic_density(a: float = 2.0, b: float = 1.0, radius: float = 1.0) -> DensityField:
    """``a - b (r / radius)^2``, positive on ``r < radius`` when ``a > b``."""
    dens = polynomial_density([a, 0.0, -b / radius ** 2], name="quadratic")
    return replace(dens, params={"a": a, "b": b, "radius": radius})


DENSITY_PRESETS = {
    "constant": constant_density,
    "quadratic": quadratic_density,
    "polynomial": polynomial_density,
}


def density_preset(name: str, **params) -> DensityField:
    try:
        factory = DENSITY_PRESETS[name]
    except KeyError:
        raise DensityError(f"unknown density preset {name!r}; known: {sorted(DENSITY_PRESETS)}") from None
    return factory(**params)


# ---------------------------------------------------------------------------
# domains


@dataclass(frozen=True)
class GeoDomain:
    """Geodesic ball ``r < R``, annulus ``R0 < r < R1`` about the pole, or a meshed region.

    Meshed regions live in the chart ``x = r omega`` of a 2-dimensional model.
    """

    kind: str
    model: WarpedModel
    radii: tuple[float, ...] = ()
    mesh: object = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind == "geodesic_ball":
            if len(self.radii) != 1 or not self.radii[0] > 0:
                raise ValueError("geodesic ball needs one positive radius")
        elif self.kind == "geodesic_annulus":
            if len(self.radii) != 2 or not 0 < self.radii[0] < self.radii[1]:
                raise ValueError("annulus needs radii 0 < R0 < R1")
        elif self.kind == "meshed_region":
            if self.mesh is None:
                raise ValueError("meshed region needs a mesh")
            if self.model.dim != 2:
                raise ValueError("meshed regions are only supported in dimension 2")
        else:
            raise ValueError(f"unknown domain kind {self.kind!r}")

    @property
    def dim(self) -> int:
        return self.model.dim

    @property
    def is_radial(self) -> bool:
        return self.kind != "meshed_region"

    @property
    def inner_radius(self) -> float:
        return self.radii[0] if self.kind == "geodesic_annulus" else 0.0

    @property
    def outer_radius(self) -> float:
        if self.kind == "meshed_region":
            return float(np.max(np.linalg.norm(self.mesh.vertices, axis=1)))
        return self.radii[-1]

    def boundary_components(self):
        """``(radius, sign)`` pairs; ``sign`` is the radial component of the outward normal."""
        if self.kind == "geodesic_ball":
            return [(self.radii[0], 1.0)]
        if self.kind == "geodesic_annulus":
            return [(self.radii[0], -1.0), (self.radii[1], 1.0)]
        raise ValueError("meshed regions have no radial boundary description")


def geodesic_ball(model: WarpedModel, R: float) -> GeoDomain:
    return GeoDomain("geodesic_ball", model, (float(R),))


def geodesic_annulus(model: WarpedModel, R0: float, R1: float) -> GeoDomain:
    return GeoDomain("geodesic_annulus", model, (float(R0), float(R1)))


def meshed_region(model: WarpedModel, mesh) -> GeoDomain:
    return GeoDomain("meshed_region", model, (), mesh)


def _radial_rule(a: float, b: float, breaks=(), panels: int = 64):
    """Composite 20-point Gauss-Legendre nodes and weights on ``[a, b]``."""
    edges = np.union1d(np.linspace(a, b, panels + 1), [x for x in breaks if a < x < b])
    lo, hi = edges[:-1], edges[1:]
    nodes = 0.5 * (hi - lo)[:, None] * (_GL_X + 1.0) + lo[:, None]
    weights = 0.5 * (hi - lo)[:, None] * _GL_W
    return nodes.ravel(), weights.ravel()


@dataclass(frozen=True)
class DomainIntegrals:
    """``grad = int |grad f|``, ``boundary = int_dD f``, ``power = int f^{n/(n-1)}``, ``volume = |D|``."""

    grad: float
    boundary: float
    power: float
    volume: float
    dim: int

    @property
    def A(self) -> float:
        return self.grad + self.boundary

    @property
    def B(self) -> float:
        return self.power

    @property
    def compatibility(self) -> float:
        """``A - n B``, the Neumann compatibility defect."""
        return self.A - self.dim * self.B


def domain_integrals(f: DensityField, D: GeoDomain) -> DomainIntegrals:
    if not D.is_radial:
        from .fem import mesh_integrals
        return mesh_integrals(f, D)
    n = D.dim
    prof = D.model.profile
    sphere = n * unit_ball_volume(n)
    r, w = _radial_rule(D.inner_radius, D.outer_radius, f.kinks)
    vals = f(r)
    if np.any(vals <= 0):
        raise DensityError("density must be positive on the domain")
    jac = sphere * prof.phi(r) ** (n - 1) * w
    boundary = sum(float(f(R)) * sphere * float(prof.phi(R)) ** (n - 1) for R, _ in D.boundary_components())
    return DomainIntegrals(float(np.sum(f.grad_norm(r) * jac)), boundary,
                           float(np.sum(vals ** (n / (n - 1)) * jac)), float(np.sum(jac)), n)


def normalize_density(f: DensityField, D: GeoDomain) -> DensityField:
    """Rescale ``f`` by ``lambda = (A / (n B))^(n-1)`` so that ``A = n B``."""
    ints = domain_integrals(f, D)
    n = D.dim
    if not (ints.A > 0 and ints.B > 0):
        raise DensityError(f"degenerate domain integrals A={ints.A:.3e}, B={ints.B:.3e}")
    lam = (ints.A / (n * ints.B)) ** (n - 1)
    out = f.scaled(lam)
    check = domain_integrals(out, D)
    if abs(check.compatibility) > NORMALIZATION_TOL * check.A:
        raise DensityError(f"normalization residual {check.compatibility:.3e} exceeds tolerance")
    return out


# ---------------------------------------------------------------------------
# potentials


class PotentialSolution:
    """Common interface: values and frame derivatives of ``u`` at chart points.

    Gradients and Hessians are expressed in the orthonormal frame at each
    point (radial direction ``omega`` plus unit spherical directions), the
    representation used for tangent vectors throughout the package.
    """

    model: WarpedModel
    density: DensityField
    domain: GeoDomain
    residual_interior: float
    residual_neumann: float
    h: float = 0.0

    def value(self, x) -> np.ndarray:
        raise NotImplementedError

    def gradient(self, x) -> np.ndarray:
        raise NotImplementedError

    def hessian(self, x) -> np.ndarray:
        raise NotImplementedError

    def laplacian(self, x) -> np.ndarray:
        return np.trace(self.hessian(x), axis1=-2, axis2=-1)


def _polar(x):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    rho = np.linalg.norm(x, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        omega = np.where(rho[:, None] > 0, x / rho[:, None], 0.0)
    return rho, omega


class RadialPotential(PotentialSolution):
    """Radial potential on a geodesic ball or annulus.

    ``u'`` is evaluated at any radius from a cumulative panel table plus one
    partial Gauss-Legendre panel, and ``u`` likewise from ``u'``.  The
    additive constant gives ``u`` zero mean over the domain.
    """

    def __init__(self, model: WarpedModel, density: DensityField, domain: GeoDomain, panels: int = 64):
        if not domain.is_radial:
            raise ValueError("radial solver needs a geodesic ball or annulus")
        self.model = model
        self.density = density
        self.domain = domain
        self.n = domain.dim
        self.h = 0.0
        a, b = domain.inner_radius, domain.outer_radius
        self._edges = np.union1d(np.linspace(a, b, panels + 1), [x for x in density.kinks if a < x < b])
        n = self.n
        prof = model.profile
        # flux through the inner sphere of an annulus, where u' = -1
        self._flux0 = -float(density(a)) * float(prof.phi(a)) ** (n - 1) if a > 0 else 0.0
        self._F_edges = np.concatenate([[0.0], np.cumsum(self._panel_integral(self._source, self._edges[:-1], self._edges[1:]))])
        self._U_edges = np.concatenate([[0.0], np.cumsum(self._panel_integral(self.du, self._edges[:-1], self._edges[1:]))])
        r, w = _radial_rule(a, b, density.kinks, panels)
        jac = prof.phi(r) ** (n - 1) * w
        self._mean = float(np.sum(self._u_raw(r) * jac) / np.sum(jac))
        self.residual_neumann = self._neumann_residual()
        self.residual_interior = self._interior_residual()

    def _source(self, r):
        """``(n f^{n/(n-1)} - |f'|) phi^{n-1}``."""
        n = self.n
        f = self.density
        return (n * f(r) ** (n / (n - 1)) - f.grad_norm(r)) * self.model.profile.phi(r) ** (n - 1)

    @staticmethod
    def _panel_integral(func, lo, hi):
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        nodes = 0.5 * (hi - lo)[..., None] * (_GL_X + 1.0) + lo[..., None]
        return np.sum(func(nodes.ravel()).reshape(nodes.shape) * _GL_W, axis=-1) * 0.5 * (hi - lo)

    def _locate(self, r):
        i = np.clip(np.searchsorted(self._edges, r, side="right") - 1, 0, self._edges.size - 2)
        return i, self._edges[i]

    def flux(self, r):
        """``f phi^{n-1} u'`` at radii ``r``."""
        r = np.asarray(r, dtype=float)
        i, lo = self._locate(r)
        return self._flux0 + self._F_edges[i] + self._panel_integral(self._source, lo, r)

    def du(self, r):
        r = np.asarray(r, dtype=float)
        denom = self.density(r) * self.model.profile.phi(r) ** (self.n - 1)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = self.flux(r) / denom
        return np.where(r > 0, out, 0.0)

    def ddu(self, r):
        r = np.asarray(r, dtype=float)
        n = self.n
        f = self.density
        prof = self.model.profile
        fr = f(r)
        g = n * fr ** (n / (n - 1)) - f.grad_norm(r)
        du = self.du(r)
        with np.errstate(invalid="ignore", divide="ignore"):
            drift = (f.d(r) * du + (n - 1) * fr * prof.dphi(r) * du / prof.phi(r))
            out = (g - drift) / fr
        # limit at the pole: u'' = g / (n f)
        return np.where(r > 0, out, g / (n * fr))

    def _u_raw(self, r):
        r = np.asarray(r, dtype=float)
        i, lo = self._locate(r)
        return self._U_edges[i] + self._panel_integral(self.du, lo, r)

    def u(self, r):
        return self._u_raw(r) - self._mean

    def _neumann_residual(self) -> float:
        return max(abs(float(self.du(R)) - sign) for R, sign in self.domain.boundary_components())

    def _interior_residual(self, samples: int = 257) -> float:
        """Max of ``|f u'' + (f' + (n-1) f phi'/phi) u' - g|`` with ``u''`` by 4th-order differences."""
        a, b = self.domain.inner_radius, self.domain.outer_radius
        h = 1e-3 * (b - a)
        r = np.linspace(a + 2 * h, b - 2 * h, samples)
        ddu = (-self.du(r + 2 * h) + 8 * self.du(r + h) - 8 * self.du(r - h) + self.du(r - 2 * h)) / (12 * h)
        n = self.n
        f = self.density
        prof = self.model.profile
        du = self.du(r)
        lhs = f(r) * ddu + (f.d(r) + (n - 1) * f(r) * prof.dphi(r) / prof.phi(r)) * du
        g = n * f(r) ** (n / (n - 1)) - f.grad_norm(r)
        return float(np.max(np.abs(lhs - g)))

    # chart-point interface
    def value(self, x):
        rho, _ = _polar(x)
        return self.u(rho)

    def gradient(self, x):
        rho, omega = _polar(x)
        return self.du(rho)[:, None] * omega

    def hessian(self, x):
        rho, omega = _polar(x)
        n = self.n
        prof = self.model.profile
        ddu = self.ddu(rho)
        du = self.du(rho)
        with np.errstate(invalid="ignore", divide="ignore"):
            tang = np.where(rho > 0, du * prof.dphi(rho) / prof.phi(rho), ddu)
        outer = omega[:, :, None] * omega[:, None, :]
        eye = np.eye(n)[None]
        # at the pole omega is zero and the tangential term alone gives u''(0) I
        return ddu[:, None, None] * outer + tang[:, None, None] * (eye - outer)

    def laplacian_radial(self, r):
        """``u'' + (n-1) u' phi'/phi`` at radii ``r``."""
        r = np.asarray(r, dtype=float)
        prof = self.model.profile
        with np.errstate(invalid="ignore", divide="ignore"):
            tang = np.where(r > 0, self.du(r) * prof.dphi(r) / prof.phi(r), self.ddu(r))
        return self.ddu(r) + (self.n - 1) * tang


def solve_radial(f: DensityField, D: GeoDomain, model: WarpedModel | None = None) -> RadialPotential:
    """Radial potential of the normalized density ``f`` on a geodesic ball or annulus."""
    model = model or D.model
    ints = domain_integrals(f, D)
    if abs(ints.compatibility) > NORMALIZATION_TOL * ints.A:
        raise DensityError(f"unnormalized density: A - nB = {ints.compatibility:.3e}")
    return RadialPotential(model, f, D)


def solve_potential(f: DensityField, D: GeoDomain, h: float | None = None) -> PotentialSolution:
    """Dispatch to the radial solver or the mesh solver by domain kind."""
    if D.is_radial:
        return solve_radial(f, D)
    from .fem import solve_mesh
    return solve_mesh(f, D)


# ---------------------------------------------------------------------------
# checks


@dataclass
class LaplacianReport:
    margin: float
    count: int
    cauchy_schwarz: float


def laplacian_bound_check(sol: PotentialSolution, f: DensityField, points=None) -> LaplacianReport:
    """Minimum over ``U = {|grad u| < 1}`` of ``n f^{1/(n-1)} - Laplacian u``.

    Also returns the minimum of ``|grad f| + <grad f, grad u>`` over ``U``,
    the Cauchy-Schwarz step behind the bound.
    """
    n = sol.domain.dim
    if points is None:
        points = sample_points(sol)
    grad = sol.gradient(points)
    inside = np.linalg.norm(grad, axis=1) < 1.0
    if not np.any(inside):
        return LaplacianReport(math.inf, 0, math.inf)
    pts = points[inside]
    rho, omega = _polar(pts)
    fv = f(rho)
    lap = sol.laplacian(pts)
    margin = n * fv ** (1.0 / (n - 1)) - lap
    gradf = f.d(rho)[:, None] * omega
    cs = f.grad_norm(rho) + np.sum(gradf * grad[inside], axis=1)
    return LaplacianReport(float(np.min(margin)), int(inside.sum()), float(np.min(cs)))


def sample_points(sol: PotentialSolution, count: int = 2001) -> np.ndarray:
    """Evaluation points: mesh vertices, or a radial line of the domain."""
    mesh = getattr(sol, "mesh", None)
    if mesh is not None:
        return mesh.vertices
    D = sol.domain
    r = np.linspace(D.inner_radius, D.outer_radius, count)
    e = np.zeros(D.dim)
    e[0] = 1.0
    return r[:, None] * e


def sobolev_sides(f: DensityField, D: GeoDomain, theta: float | None = None) -> tuple[float, float]:
    """``(int |grad f| + int_dD f, n omega_n^{1/n} theta^{1/n} (int f^{n/(n-1)})^{(n-1)/n})``."""
    n = D.dim
    theta = D.model.theta if theta is None else theta
    ints = domain_integrals(f, D)
    rhs = n * unit_ball_volume(n) ** (1.0 / n) * theta ** (1.0 / n) * ints.power ** ((n - 1) / n)
    return ints.A, rhs
