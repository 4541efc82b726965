"""Rotationally symmetric model manifolds ``dr^2 + phi(r)^2 g_{S^{k-1}}``.

A model is fixed by a concave warping profile ``phi`` with ``phi(0) = 0`` and
``phi'(0) = 1``.  Concavity gives nonnegative Ricci curvature, and together
with ``phi' <= 1`` nonnegative sectional curvature.  The asymptotic volume
ratio of such a model is ``alpha^(k-1)`` where ``alpha = lim phi(r)/r``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import CubicSpline

RICCI = "ricci_nonneg"
SECTIONAL = "sectional_nonneg"
CURVATURE_CLASSES = (RICCI, SECTIONAL)

# aliases accepted from config files
_CLASS_ALIASES = {
    "ricci": RICCI,
    "ricci_nonneg": RICCI,
    "sectional": SECTIONAL,
    "sectional_nonneg": SECTIONAL,
}

CERTIFICATE_TOL = 1e-10
QUAD_EPSABS = 1e-12
QUAD_EPSREL = 1e-10
THETA_AGREEMENT_TOL = 1e-6

# curvature of a profile is evaluated no closer to the pole than this
_POLE_FLOOR = 1e-8


class ProfileError(ValueError):
    """Profile is not the warping function of a smooth complete model."""


class QuadratureError(RuntimeError):
    def __init__(self, message, error_estimate):
        super().__init__(f"{message} (error estimate {error_estimate:.3e})")
        self.error_estimate = error_estimate


class ThetaEstimateError(RuntimeError):
    """The slope and volume estimators of theta disagree."""


def curvature_class(name: str) -> str:
    try:
        return _CLASS_ALIASES[name]
    except KeyError:
        raise ValueError(f"unknown curvature class {name!r}") from None


@dataclass(frozen=True)
class WarpedProfile:
    name: str
    phi: Callable
    dphi: Callable
    ddphi: Callable
    asymptotic_slope: float
    params: dict = field(default_factory=dict)

    def k_rad(self, r):
        """Sectional curvature of planes containing the radial direction."""
        r = np.maximum(np.asarray(r, dtype=float), _POLE_FLOOR)
        return -self.ddphi(r) / self.phi(r)

    def k_tan(self, r):
        """Sectional curvature of planes tangent to the distance spheres."""
        r = np.maximum(np.asarray(r, dtype=float), _POLE_FLOOR)
        p = self.phi(r)
        dp = self.dphi(r)
        # (1 - dp^2) / p^2, with the numerator written to avoid cancellation near 0
        return (1.0 - dp) * (1.0 + dp) / (p * p)

    def inverse_phi(self, value):
        """Radius at which ``phi`` attains ``value`` (phi is strictly increasing)."""
        value = np.asarray(value, dtype=float)
        lo = np.zeros_like(value)
        hi = np.maximum(value, 1e-300) / max(self.asymptotic_slope, 1e-12) + 1.0
        while np.any(self.phi(hi) < value):
            hi = np.where(self.phi(hi) < value, 2 * hi, hi)
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            below = self.phi(mid) < value
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
            if np.all(hi - lo <= 1e-15 * np.maximum(1.0, hi)):
                break
        # one Newton step from the bracket midpoint
        x = 0.5 * (lo + hi)
        x = x - (self.phi(x) - value) / self.dphi(x)
        return np.clip(x, lo, hi)


def euclidean_profile() -> WarpedProfile:
    return WarpedProfile(
        name="euclidean",
        phi=lambda r: np.asarray(r, dtype=float) * 1.0,
        dphi=lambda r: np.ones_like(np.asarray(r, dtype=float)),
        ddphi=lambda r: np.zeros_like(np.asarray(r, dtype=float)),
        asymptotic_slope=1.0,
    )


def cone_smoothed_profile(alpha: float) -> WarpedProfile:
    """``phi(r) = alpha r + (1 - alpha)(1 - exp(-r))``: a cone of slope alpha, rounded at the tip."""
    if not 0 < alpha <= 1:
        raise ProfileError(f"alpha must lie in (0, 1], got {alpha}")
    beta = 1.0 - alpha

    def phi(r):
        r = np.asarray(r, dtype=float)
        return alpha * r - beta * np.expm1(-r)

    def dphi(r):
        return alpha + beta * np.exp(-np.asarray(r, dtype=float))

    def ddphi(r):
        return -beta * np.exp(-np.asarray(r, dtype=float))

    return WarpedProfile("cone_smoothed", phi, dphi, ddphi, float(alpha), {"alpha": float(alpha)})


def capped_paraboloid_profile(alpha: float) -> WarpedProfile:
    """``phi(r) = alpha r + (1 - alpha) r / sqrt(1 + r^2)``.

    Odd in ``r``, so the metric is smooth at the pole; the cap is
    positively curved and the end is asymptotic to a cone of slope alpha.
    """
    if not 0 < alpha <= 1:
        raise ProfileError(f"alpha must lie in (0, 1], got {alpha}")
    beta = 1.0 - alpha

    def phi(r):
        r = np.asarray(r, dtype=float)
        return alpha * r + beta * r / np.sqrt(1.0 + r * r)

    def dphi(r):
        r = np.asarray(r, dtype=float)
        return alpha + beta * (1.0 + r * r) ** -1.5

    def ddphi(r):
        r = np.asarray(r, dtype=float)
        return -3.0 * beta * r * (1.0 + r * r) ** -2.5

    return WarpedProfile("capped_paraboloid", phi, dphi, ddphi, float(alpha), {"alpha": float(alpha)})


def spline_profile(knots: Sequence[float], values: Sequence[float]) -> WarpedProfile:
    """Concave cubic spline through ``(knots, values)``, extended linearly past the last knot.

    The spline is clamped to ``phi'(0) = 1`` and has zero second derivative at
    the last knot, so the linear extension is C^2.  Since the second
    derivative of a cubic spline is piecewise linear, concavity at the knots
    implies concavity everywhere.
    """
    knots = np.asarray(knots, dtype=float)
    values = np.asarray(values, dtype=float)
    if knots.ndim != 1 or knots.size < 3 or knots.shape != values.shape:
        raise ProfileError("spline profile needs at least 3 matching knots and values")
    if knots[0] != 0.0 or values[0] != 0.0:
        raise ProfileError("spline profile must start at (0, 0)")
    if np.any(np.diff(knots) <= 0):
        raise ProfileError("spline knots must be strictly increasing")
    spline = CubicSpline(knots, values, bc_type=((1, 1.0), (2, 0.0)))
    second = spline(knots, 2)
    if np.max(second) > CERTIFICATE_TOL:
        raise ProfileError(f"spline is not concave at the knots (max phi'' = {np.max(second):.3e})")
    r_end = knots[-1]
    v_end = float(spline(r_end))
    s_end = float(spline(r_end, 1))
    if s_end <= 0:
        raise ProfileError("spline profile must have positive terminal slope")

    def phi(r):
        r = np.asarray(r, dtype=float)
        inside = np.minimum(r, r_end)
        return np.where(r <= r_end, spline(inside), v_end + s_end * (r - r_end))

    def dphi(r):
        r = np.asarray(r, dtype=float)
        return np.where(r <= r_end, spline(np.minimum(r, r_end), 1), s_end)

    def ddphi(r):
        r = np.asarray(r, dtype=float)
        return np.where(r <= r_end, spline(np.minimum(r, r_end), 2), 0.0)

    return WarpedProfile(
        "spline", phi, dphi, ddphi, s_end,
        {"knots": knots.tolist(), "values": values.tolist()},
    )


PROFILE_PRESETS = {
    "euclidean": euclidean_profile,
    "cone_smoothed": cone_smoothed_profile,
    "capped_paraboloid": capped_paraboloid_profile,
    "spline": spline_profile,
}


def preset_profile(name: str, **params) -> WarpedProfile:
    try:
        factory = PROFILE_PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown profile preset {name!r}") from None
    return factory(**params)


@dataclass(frozen=True)
class WarpedModel:
    dim: int
    profile: WarpedProfile
    curvature_class: str = RICCI
    theta: float = float("nan")

    @property
    def is_euclidean(self) -> bool:
        return self.profile.name == "euclidean"


@dataclass(frozen=True)
class PolarPoint:
    """Point at distance ``r`` from the pole in direction ``omega`` (a unit vector of R^k)."""

    r: float
    omega: np.ndarray

    def __post_init__(self):
        omega = np.asarray(self.omega, dtype=float)
        object.__setattr__(self, "omega", omega)
        if self.r < 0:
            raise ValueError("PolarPoint radius must be nonnegative")
        if abs(np.linalg.norm(omega) - 1.0) > 1e-12:
            raise ValueError("PolarPoint direction must be a unit vector")

    @property
    def dim(self) -> int:
        return self.omega.size

    def chart(self) -> np.ndarray:
        """Coordinates ``r * omega`` in the polar chart centred at the pole."""
        return self.r * self.omega

    @classmethod
    def from_chart(cls, x, dim=None) -> "PolarPoint":
        x = np.asarray(x, dtype=float)
        r = float(np.linalg.norm(x))
        if r == 0.0:
            omega = np.zeros(x.size if dim is None else dim)
            omega[0] = 1.0
            return cls(0.0, omega)
        return cls(r, x / r)


@dataclass
class ProfileCertificate:
    accepted: bool
    curvature_class: str
    violations: dict
    slope_gap: float

    @property
    def max_violation(self) -> float:
        return max(self.violations.values())


def validate_profile(profile: WarpedProfile, curvature_class_name: str = RICCI,
                     grid=None, slope_tol=None) -> ProfileCertificate:
    """Certify the curvature sign of ``profile`` on a radius grid.

    Raises :class:`ProfileError` when the boundary conditions at the pole
    fail (the model would have a cone point).  Sign violations do not raise;
    they are reported and the certificate is rejected.
    """
    cls = curvature_class(curvature_class_name)
    grid = np.linspace(0.0, 50.0, 2001) if grid is None else np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ValueError("grid must be a nonempty 1-d array")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    if grid[0] < 0 or grid[0] > 1e-2:
        raise ValueError("grid must start near 0")

    phi0 = float(profile.phi(0.0))
    dphi0 = float(profile.dphi(0.0))
    if abs(phi0) > CERTIFICATE_TOL or abs(dphi0 - 1.0) > CERTIFICATE_TOL:
        raise ProfileError(
            f"profile {profile.name!r} has phi(0) = {phi0}, phi'(0) = {dphi0}; "
            "the model has a cone point at the pole"
        )

    phi = profile.phi(grid)
    dphi = profile.dphi(grid)
    ddphi = profile.ddphi(grid)
    pos = grid > 0
    violations = {
        "phi_at_pole": abs(phi0),
        "dphi_at_pole": abs(dphi0 - 1.0),
        "concavity": max(0.0, float(np.max(ddphi))),
        "positivity": max(0.0, float(np.max(-phi[pos]))) if pos.any() else 0.0,
    }
    ratio = phi[pos] / grid[pos]
    violations["ratio_monotone"] = max(0.0, float(np.max(np.diff(ratio)))) if ratio.size > 1 else 0.0
    if cls == SECTIONAL:
        violations["dphi_upper"] = max(0.0, float(np.max(dphi - 1.0)))
        violations["dphi_positive"] = max(0.0, float(np.max(-dphi)))
    slope_gap = abs(float(ratio[-1]) - profile.asymptotic_slope) if ratio.size else float("nan")
    accepted = all(v <= CERTIFICATE_TOL for v in violations.values())
    if slope_tol is not None:
        violations["slope_gap"] = max(0.0, slope_gap - slope_tol)
        accepted = accepted and slope_gap <= slope_tol
    return ProfileCertificate(accepted, cls, violations, slope_gap)


def unit_ball_volume(k: int) -> float:
    if k < 1:
        raise ValueError("dimension must be at least 1")
    return math.pi ** (k / 2) / math.gamma(k / 2 + 1)


def _radial_integral(func, r):
    # breakpoints keep QUADPACK's subdivision honest on long intervals
    points = [p for p in (1.0, 4.0, 16.0, 64.0, 256.0) if p < r]
    val, err = quad(func, 0.0, r, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL,
                    limit=500, points=points or None)
    if err > max(10 * QUAD_EPSABS, 10 * QUAD_EPSREL * abs(val)):
        raise QuadratureError("radial quadrature did not converge", err)
    return val


def ball_volume(model: WarpedModel, r: float) -> float:
    """Volume of the geodesic ball of radius ``r`` centred at the pole."""
    if r < 0:
        raise ValueError("radius must be nonnegative")
    if r == 0:
        return 0.0
    k = model.dim
    phi = model.profile.phi
    if model.is_euclidean:
        return unit_ball_volume(k) * r ** k
    integral = _radial_integral(lambda s: float(phi(s)) ** (k - 1), r)
    return k * unit_ball_volume(k) * integral


def sphere_area(model: WarpedModel, r: float) -> float:
    k = model.dim
    return k * unit_ball_volume(k) * float(model.profile.phi(r)) ** (k - 1)


def volume_quotient(model: WarpedModel, r) -> np.ndarray:
    """Bishop-Gromov quotient ``|B_r| / (omega_k r^k)``."""
    r = np.atleast_1d(np.asarray(r, dtype=float))
    wk = unit_ball_volume(model.dim)
    return np.array([ball_volume(model, s) / (wk * s ** model.dim) for s in r])


@dataclass
class ThetaEstimate:
    theta: float
    slope_estimate: float
    volume_estimate: float
    trace: list


def asymptotic_volume_ratio(model: WarpedModel, r_max: float = 1e3) -> ThetaEstimate:
    """Estimate theta from the asymptotic slope and, independently, from ball volumes.

    The slope estimator uses ``phi'(r_max)^(k-1)``; the volume estimator
    extrapolates the Bishop-Gromov quotient at ``r_max / 2^j`` polynomially
    in ``1/r``.  Both must agree to ``THETA_AGREEMENT_TOL``.
    """
    k = model.dim
    dphi = model.profile.dphi
    s_far = float(dphi(r_max))
    s_mid = float(dphi(r_max / 2))
    if abs(s_far - s_mid) > THETA_AGREEMENT_TOL:
        raise ThetaEstimateError(
            f"profile slope has not stabilised at r_max={r_max}: "
            f"phi'({r_max / 2:g}) = {s_mid}, phi'({r_max:g}) = {s_far}"
        )
    slope_estimate = s_far ** (k - 1)

    radii = r_max / 2.0 ** np.arange(4)[::-1]
    quotients = volume_quotient(model, radii)
    # degree-3 interpolation in x = 1/r, evaluated at x = 0
    coeffs = np.polyfit(1.0 / radii, quotients, 3)
    volume_estimate = float(coeffs[-1])
    trace = [(float(r), float(q)) for r, q in zip(radii, quotients)]
    if abs(slope_estimate - volume_estimate) > THETA_AGREEMENT_TOL:
        raise ThetaEstimateError(
            f"theta estimators disagree: slope {slope_estimate:.10f}, volume {volume_estimate:.10f}"
        )
    return ThetaEstimate(slope_estimate, slope_estimate, volume_estimate, trace)


def make_model(profile: WarpedProfile, dim: int, curvature_class_name: str = RICCI,
               r_max: float = 1e3) -> WarpedModel:
    """Validate ``profile`` and build the model with its asymptotic volume ratio."""
    if dim < 2:
        raise ValueError("model dimension must be at least 2")
    cert = validate_profile(profile, curvature_class_name)
    if not cert.accepted:
        worst = max(cert.violations, key=cert.violations.get)
        raise ProfileError(
            f"profile {profile.name!r} fails the {cert.curvature_class} certificate "
            f"({worst} = {cert.violations[worst]:.3e})"
        )
    if profile.asymptotic_slope <= 0:
        raise ProfileError("theta = 0 profiles are not supported")
    model = WarpedModel(dim, profile, cert.curvature_class)
    est = asymptotic_volume_ratio(model, r_max)
    return replace(model, theta=est.theta)


def euclidean_model(dim: int) -> WarpedModel:
    return WarpedModel(dim, euclidean_profile(), SECTIONAL, 1.0)
