"""Geodesics, parallel frames and distances in warped-product models.

Every geodesic of a rotationally symmetric model stays in the totally
geodesic 2-plane spanned by the pole, its start point and its initial
velocity.  In polar coordinates ``(rho, psi)`` of that plane the metric is
``drho^2 + phi(rho)^2 dpsi^2`` and the angular momentum
``L = phi(rho)^2 psi'`` is conserved (Clairaut), which reduces the geodesic
equations to ``rho'' = L^2 phi'(rho) / phi(rho)^3``.

Tangent vectors at a point ``x = (r, omega)`` are written in the orthonormal
frame at ``x``: an ``R^k`` vector whose component along ``omega`` is the
radial part and whose orthogonal complement is the (unit-speed) spherical
part.  In a Euclidean model this is just the Cartesian representation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .models import PolarPoint, WarpedModel, WarpedProfile

ODE_RTOL = 1e-10
ODE_ATOL = 1e-12
REPORT_SAMPLES = 512


class GeodesicError(RuntimeError):
    def __init__(self, message, last_t=None):
        super().__init__(message)
        self.last_t = last_t


class ShootingError(RuntimeError):
    def __init__(self, message, bracket=None):
        super().__init__(message)
        self.bracket = bracket


def _complement_basis(vectors, k):
    """Orthonormal basis of the orthogonal complement of ``vectors`` in R^k."""
    if not vectors:
        return np.eye(k)
    a = np.column_stack(vectors)
    q, _ = np.linalg.qr(np.column_stack([a, np.eye(k)]))
    basis = q[:, len(vectors):k]
    # fix the gauge so the basis does not depend on QR sign conventions
    for j in range(basis.shape[1]):
        i = int(np.argmax(np.abs(basis[:, j])))
        if basis[i, j] < 0:
            basis[:, j] = -basis[:, j]
    return basis


def _plane_basis(omega, v):
    """Plane of motion: ``e0 = omega`` and ``e1`` the unit spherical direction of ``v``."""
    k = omega.size
    v_perp = v - np.dot(v, omega) * omega
    norm = np.linalg.norm(v_perp)
    if norm > 1e-14 * max(np.linalg.norm(v), 1e-300):
        return omega, v_perp / norm, norm
    e1 = _complement_basis([omega], k)[:, 0]
    return omega, e1, 0.0


@dataclass
class GeodesicCurve:
    """Sampled geodesic with its parallel orthonormal frame.

    ``frames[i]`` holds the frame at ``t[i]`` as columns, ordered
    ``(T, N, n_3, ..., n_k)``: unit tangent, in-plane normal, and the fixed
    directions normal to the plane of motion.
    """

    model: WarpedModel
    start: PolarPoint
    initial_velocity: np.ndarray
    t: np.ndarray
    rho: np.ndarray
    drho: np.ndarray
    psi: np.ndarray
    speed: float
    momentum: float
    e0: np.ndarray
    e1: np.ndarray
    normals: np.ndarray
    _dense: object = field(default=None, repr=False)

    @property
    def t_max(self) -> float:
        return float(self.t[-1])

    def state(self, t):
        """``(rho, rho', psi)`` at arbitrary parameters ``t`` (vectorised)."""
        t = np.asarray(t, dtype=float)
        if self._dense is not None:
            y = self._dense(t)
            return y[0], y[1], y[2]
        return self._analytic_state(t)

    def _analytic_state(self, t):
        # radial geodesic, possibly through the pole
        s = self.speed
        r0 = self.start.r
        outward = self.drho[0] >= 0 if self.t.size else True
        if outward:
            return r0 + s * t, np.full_like(t, s), np.zeros_like(t)
        rho = r0 - s * t
        passed = rho < 0
        return np.abs(rho), np.where(passed, s, -s), np.where(passed, math.pi, 0.0)

    def position(self, i) -> PolarPoint:
        omega = math.cos(self.psi[i]) * self.e0 + math.sin(self.psi[i]) * self.e1
        return PolarPoint(float(self.rho[i]), omega / np.linalg.norm(omega))

    def end(self) -> PolarPoint:
        return self.position(-1)

    def _frame_from_state(self, rho, drho, psi):
        k = self.model.dim
        s = self.speed
        omega = np.cos(psi) * self.e0 + np.sin(psi) * self.e1
        tau = -np.sin(psi) * self.e0 + np.cos(psi) * self.e1
        if s == 0.0:
            frame = np.column_stack([self.e0, self.e1, self.normals]) if k > 2 else np.column_stack([self.e0, self.e1])
            return frame
        ang = self.momentum / self.model.profile.phi(rho) if self.momentum else 0.0
        T = (drho * omega + ang * tau) / s
        N = (-ang * omega + drho * tau) / s
        cols = [T, N] + [self.normals[:, j] for j in range(self.normals.shape[1])]
        return np.column_stack(cols)

    @property
    def frames(self) -> np.ndarray:
        return np.stack([self._frame_from_state(r, d, p) for r, d, p in zip(self.rho, self.drho, self.psi)])

    def frame_at(self, t) -> np.ndarray:
        rho, drho, psi = self.state(np.atleast_1d(float(t)))
        return self._frame_from_state(float(rho[0]), float(drho[0]), float(psi[0]))

    def velocities(self) -> np.ndarray:
        return self.speed * self.frames[:, :, 0]

    def curvature_matrix(self, t) -> np.ndarray:
        """``S_ij = R(gamma', E_i, gamma', E_j)`` in the parallel frame."""
        k = self.model.dim
        S = np.zeros((k, k))
        if self.speed == 0.0:
            return S
        rho, drho, _ = self.state(np.atleast_1d(float(t)))
        rho = float(rho[0])
        drho = float(drho[0])
        prof = self.model.profile
        s2 = self.speed ** 2
        k_rad = float(prof.k_rad(rho))
        S[1, 1] = s2 * k_rad
        if k > 2:
            a2 = min(1.0, (drho / self.speed) ** 2)
            k_tan = float(prof.k_tan(rho))
            val = s2 * (a2 * k_rad + (1.0 - a2) * k_tan)
            for j in range(2, k):
                S[j, j] = val
        return S

    @property
    def S(self) -> np.ndarray:
        return np.stack([self.curvature_matrix(t) for t in self.t])

    def energy_drift(self) -> float:
        if self.speed == 0.0:
            return 0.0
        ang = self.momentum / self.model.profile.phi(self.rho) if self.momentum else 0.0
        return float(np.max(np.abs(np.sqrt(self.drho ** 2 + ang ** 2) - self.speed)))

    def frame_orthonormality(self) -> float:
        F = self.frames
        k = F.shape[1]
        gram = np.einsum("nij,nik->njk", F, F)
        return float(np.max(np.abs(gram - np.eye(k))))


def exp_map(model: WarpedModel, x: PolarPoint, v, t: float = 1.0,
            samples: int = REPORT_SAMPLES, rtol: float = ODE_RTOL,
            atol: float = ODE_ATOL) -> tuple[PolarPoint, GeodesicCurve]:
    """Endpoint of the geodesic ``s -> exp_x(s v)`` at ``s = t``, with the sampled curve."""
    v = np.asarray(v, dtype=float)
    k = model.dim
    if v.shape != (k,) or x.dim != k:
        raise ValueError("point and velocity must live in the model dimension")
    if t < 0:
        raise ValueError("geodesic parameter must be nonnegative")
    grid = np.linspace(0.0, t, samples)
    speed = float(np.linalg.norm(v))

    if x.r == 0.0 and speed > 0:
        omega = v / speed
        e0, e1, _ = _plane_basis(omega, np.zeros(k))
        curve_start = x
        v_r, v_perp_norm = speed, 0.0
    else:
        omega = x.omega
        e0, e1, v_perp_norm = _plane_basis(omega, v)
        curve_start = x
        v_r = float(np.dot(v, omega))
    normals = _complement_basis([e0, e1], k) if k > 2 else np.zeros((k, 0))

    base = dict(model=model, start=curve_start, initial_velocity=v, t=grid, speed=speed,
                e0=e0, e1=e1, normals=normals)
    if speed == 0.0:
        zeros = np.zeros_like(grid)
        curve = GeodesicCurve(rho=np.full_like(grid, x.r), drho=zeros, psi=zeros, momentum=0.0, **base)
        return x, curve

    if v_perp_norm == 0.0:
        curve = GeodesicCurve(rho=np.zeros(0), drho=np.array([v_r]), psi=np.zeros(0), momentum=0.0, **base)
        rho, drho, psi = curve._analytic_state(grid)
        curve.rho, curve.drho, curve.psi = rho, drho, psi
        return curve.end(), curve

    prof = model.profile
    L = float(prof.phi(x.r)) * v_perp_norm

    def rhs(_, y):
        p = prof.phi(y[0])
        return [y[1], L * L * prof.dphi(y[0]) / p ** 3, L / (p * p)]

    sol = solve_ivp(rhs, (0.0, t), [x.r, v_r, 0.0], method="RK45", rtol=rtol, atol=atol,
                    dense_output=True)
    if not sol.success:
        raise GeodesicError(f"geodesic integration failed: {sol.message}", last_t=float(sol.t[-1]))
    y = sol.sol(grid)
    curve = GeodesicCurve(rho=y[0], drho=y[1], psi=y[2], momentum=L, _dense=sol.sol, **base)
    return curve.end(), curve


# ---------------------------------------------------------------------------
# distances

# Gauss-Legendre panels graded geometrically towards the turning point
_GL_X, _GL_W = np.polynomial.legendre.leggauss(10)
_EDGES = np.concatenate([[0.0], np.geomspace(1e-7, 1.0, 34)])
_LO, _HI = _EDGES[:-1], _EDGES[1:]
_NODES = (0.5 * (_HI - _LO)[:, None] * (_GL_X[None, :] + 1.0) + _LO[:, None]).ravel()
_WEIGHTS = (0.5 * (_HI - _LO)[:, None] * _GL_W[None, :]).ravel()


def _clairaut_integrals(prof: WarpedProfile, c, d, L):
    """Angle swept and length of a unit-speed geodesic with momentum ``L``
    travelling monotonically in ``rho`` from ``c`` to ``d`` (``phi(c) >= L``).

    Uses ``rho = c + w^2`` to remove the square-root singularity at a
    turning point.
    """
    c = np.asarray(c, dtype=float)[..., None]
    d = np.asarray(d, dtype=float)[..., None]
    L = np.asarray(L, dtype=float)[..., None]
    W = np.sqrt(np.maximum(d - c, 0.0))
    w = W * _NODES
    rho = c + w * w
    p = prof.phi(rho)
    pc = prof.phi(c)
    h = w * w
    # phi(c + h) - phi(c) by Taylor expansion where the direct difference cancels
    small = h < 1e-5 * (1.0 + c)
    rise = np.where(small, prof.dphi(c) * h + 0.5 * prof.ddphi(c) * h * h, p - pc)
    # phi^2 - L^2 = (phi - phi(c))(phi + phi(c)) + (phi(c)^2 - L^2)
    # a turning radius from inverse_phi may sit a rounding error inside the true one
    gap = rise * (p + pc) + np.maximum(pc - L, 0.0) * (pc + L)
    root = np.sqrt(np.maximum(gap, 1e-300))
    jac = 2.0 * w * W * _WEIGHTS
    angle = np.sum(jac * L / (p * root), axis=-1)
    length = np.sum(jac * p / root, axis=-1)
    return angle, length


@dataclass
class SurfaceGeodesic:
    """Minimising geodesic in the 2-d slice between radii ``r_from`` and ``r_to``."""

    length: float
    momentum: float
    turning: bool
    sweep: float
    r_from: float
    r_to: float


class _SliceCurve:
    """Swept angle and length along the one-parameter family of geodesics from radius ``a``.

    ``s in [0, 1]`` are geodesics moving outward from ``a`` with
    ``L = s phi(a)``; ``s in [1, 2)`` first move inward to the turning radius
    ``phi^{-1}(L)`` with ``L = (2 - s) phi(a)``.
    """

    def __init__(self, prof, a, b):
        self.prof = prof
        self.a = a
        self.b = b
        self.pa = float(prof.phi(a))

    def momentum(self, s):
        s = np.asarray(s, dtype=float)
        return np.where(s <= 1.0, s, 2.0 - s) * self.pa

    def evaluate(self, s):
        s = np.atleast_1d(np.asarray(s, dtype=float))
        L = self.momentum(s)
        out_angle, out_len = _clairaut_integrals(self.prof, self.a, self.b, L)
        turning = s > 1.0
        angle = out_angle.copy()
        length = out_len.copy()
        if np.any(turning):
            Lt = L[turning]
            rm = self.prof.inverse_phi(Lt)
            a1, l1 = _clairaut_integrals(self.prof, rm, self.a, Lt)
            a2, l2 = _clairaut_integrals(self.prof, rm, self.b, Lt)
            angle[turning] = a1 + a2
            length[turning] = l1 + l2
        return angle, length


_SCAN = np.concatenate([np.linspace(0.0, 1.0, 33), 1.0 + (1.0 - np.geomspace(1.0, 1e-6, 48))[1:]])


def slice_distance(prof: WarpedProfile, r1: float, r2: float, delta: float) -> SurfaceGeodesic:
    """Distance between ``(r1, 0)`` and ``(r2, delta)`` in ``drho^2 + phi^2 dpsi^2``.

    Shoots over the Clairaut momentum (equivalently the initial angle):
    candidate geodesics are bracketed on a scan of the family, refined by
    Brent's method, and the shortest connecting one is returned.  The path
    through the pole (length ``r1 + r2``) is always a candidate.
    """
    delta = abs(math.remainder(delta, 2 * math.pi))
    a, b = (r1, r2) if r1 <= r2 else (r2, r1)
    if delta <= 1e-14 or a == 0.0:
        return SurfaceGeodesic(b - a, 0.0, False, 0.0, r1, r2)
    if prof.name == "euclidean":
        length = math.sqrt(max(a * a + b * b - 2 * a * b * math.cos(delta), 0.0))
        L = a * b * math.sin(delta) / length if length > 0 else 0.0
        # the straight segment turns inward iff the far point's projection falls behind the near one
        turning = b * math.cos(delta) < a
        return SurfaceGeodesic(length, L, bool(turning), delta, r1, r2)

    fam = _SliceCurve(prof, a, b)
    angles, lengths = fam.evaluate(_SCAN)
    best = SurfaceGeodesic(a + b, 0.0, True, math.pi, r1, r2)
    if not np.all(np.isfinite(angles)):
        raise ShootingError("non-finite swept angle in geodesic family", (0.0, 2.0))
    top = float(np.max(angles))
    targets = []
    j = 0
    while j < 64:
        added = False
        for tgt in (delta + 2 * math.pi * j, 2 * math.pi - delta + 2 * math.pi * j):
            if tgt <= top + 1e-12:
                targets.append(tgt)
                added = True
        if not added:
            break
        j += 1
    for tgt in targets:
        g = angles - tgt
        idx = np.nonzero(np.sign(g[:-1]) * np.sign(g[1:]) <= 0)[0]
        for i in idx:
            lo, hi = _SCAN[i], _SCAN[i + 1]
            if g[i] == 0.0:
                root = lo
            elif g[i + 1] == 0.0:
                root = hi
            else:
                try:
                    root = brentq(lambda s: float(fam.evaluate(s)[0][0]) - tgt, lo, hi,
                                  xtol=1e-15, rtol=1e-15, maxiter=200)
                except ValueError as exc:
                    raise ShootingError(f"shooting failed for target angle {tgt}", (lo, hi)) from exc
            _, length = fam.evaluate(root)
            length = float(length[0])
            if length < best.length:
                best = SurfaceGeodesic(length, float(fam.momentum(root)), bool(root > 1.0), tgt, r1, r2)
    return best


def _direction_to(omega_from, omega_to):
    """Unit spherical direction at ``omega_from`` pointing along the great circle to ``omega_to``."""
    perp = omega_to - np.dot(omega_to, omega_from) * omega_from
    n = np.linalg.norm(perp)
    if n < 1e-15:
        return _complement_basis([omega_from], omega_from.size)[:, 0]
    return perp / n


def _angle_between(o1, o2):
    # atan2 form is accurate for nearly parallel and antiparallel directions
    cross = np.linalg.norm(o2 - np.dot(o1, o2) * o1)
    return math.atan2(cross, float(np.dot(o1, o2)))


def distance(model: WarpedModel, x: PolarPoint, p: PolarPoint) -> float:
    return geodesic_to(model, x, p)[0]


def geodesic_to(model: WarpedModel, x: PolarPoint, p: PolarPoint):
    """Distance from ``x`` to ``p`` and the unit initial direction at ``x`` of a minimising geodesic.

    The direction is written in the orthonormal frame at ``x``; it is
    ``None`` when the points coincide.
    """
    if x.r == 0.0 and p.r == 0.0:
        return 0.0, None
    if x.r == 0.0:
        return p.r, p.omega.copy()
    if p.r == 0.0:
        return x.r, -x.omega
    delta = _angle_between(x.omega, p.omega)
    if model.is_euclidean:
        diff = p.chart() - x.chart()
        d = float(np.linalg.norm(diff))
        return d, (diff / d if d > 0 else None)
    geo = slice_distance(model.profile, x.r, p.r, delta)
    if geo.length == 0.0:
        return 0.0, None
    phi_x = float(model.profile.phi(x.r))
    if delta <= 1e-14:
        radial = 1.0 if p.r > x.r else -1.0
        return geo.length, radial * x.omega
    sin_b = min(1.0, geo.momentum / phi_x)
    cos_b = math.sqrt(max(0.0, 1.0 - sin_b * sin_b))
    # moving outward unless x is the inner point of a turning geodesic
    x_is_inner = x.r <= p.r
    if x_is_inner:
        radial = -cos_b if geo.turning else cos_b
    else:
        radial = -cos_b
    spherical = _direction_to(x.omega, p.omega)
    # a sweep beyond pi in the first winding reaches p the long way round
    wraps = math.floor(geo.sweep / (2 * math.pi))
    rem = geo.sweep - 2 * math.pi * wraps
    if abs(rem - delta) > abs(rem - (2 * math.pi - delta)):
        spherical = -spherical
    if delta >= math.pi - 1e-12 and geo.momentum == 0.0:
        return geo.length, -x.omega
    return geo.length, radial * x.omega + sin_b * spherical
