"""Immersed patches in Euclidean space, their extrinsic geometry and the Michael-Simon checks.

A patch is an immersion ``F`` of a parameter domain (an interval, disk,
annulus or rectangle) into ``R^{n+m}``.  Derivatives are analytic when the
preset supplies them and fourth-order central differences otherwise.  The
normal frame is gauge fixed by modified Gram-Schmidt against the ambient
coordinate axes in their natural order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.interpolate import CubicSpline, LinearNDInterpolator
from scipy.spatial import ConvexHull, cKDTree

from . import fem
from .jacobi import JacobiSystem, constant_curvature, jacobian_ratio_monotone, propagate_jacobi
from .models import unit_ball_volume
from .potential import DensityError
from .transport import MC_SIGMAS, make_rng

METRIC_EIG_TOL = 1e-10
FRAME_TOL = 1e-9
FD_STEP = 1e-3
GAUGE = "modified Gram-Schmidt of the tangent columns, then ambient axes e_1..e_N in order"


class ImmersionError(ValueError):
    """The immersion degenerates at a node."""


# ---------------------------------------------------------------------------
# parameter domains and quadrature


def _gauss_panels(a, b, panels, order):
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(a, b, panels + 1)
    lo, hi = edges[:-1, None], edges[1:, None]
    nodes = 0.5 * (hi - lo) * (x + 1.0) + lo
    return nodes.ravel(), (0.5 * (hi - lo) * w).ravel()


@dataclass(frozen=True)
class ParamDomain:
    """``interval`` (a, b), ``disk`` (R,), ``annulus`` (R0, R1) or ``rectangle`` (a, b, c, d).

    A closed interval is a periodic curve with no boundary.
    """

    kind: str
    bounds: tuple
    closed: bool = False

    @property
    def dim(self) -> int:
        return 1 if self.kind == "interval" else 2

    def quadrature(self, level: int = 1):
        """Nodes ``(K, dim)`` and parameter-area weights; ``level`` doubles the resolution."""
        p = 16 * level
        if self.kind == "interval":
            a, b = self.bounds
            if self.closed:
                t = a + (b - a) * np.arange(256 * level) / (256 * level)
                return t[:, None], np.full(t.size, (b - a) / t.size)
            t, w = _gauss_panels(a, b, p, 16)
            return t[:, None], w
        if self.kind in ("disk", "annulus"):
            lo, hi = (0.0, self.bounds[0]) if self.kind == "disk" else self.bounds
            rho, wr = _gauss_panels(lo, hi, p, 16)
            count = 256 * level
            ang = 2 * math.pi * np.arange(count) / count
            R, A = np.meshgrid(rho, ang, indexing="ij")
            W = (wr * rho)[:, None] * np.full(count, 2 * math.pi / count)[None, :]
            return np.column_stack([(R * np.cos(A)).ravel(), (R * np.sin(A)).ravel()]), W.ravel()
        if self.kind == "rectangle":
            a, b, c, d = self.bounds
            u, wu = _gauss_panels(a, b, p, 16)
            v, wv = _gauss_panels(c, d, p, 16)
            U, V = np.meshgrid(u, v, indexing="ij")
            return np.column_stack([U.ravel(), V.ravel()]), np.outer(wu, wv).ravel()
        raise ValueError(f"unknown parameter domain {self.kind!r}")

    def boundary(self, level: int = 1):
        """Boundary nodes, parameter-length weights, unit parameter tangents and outward directions.

        For intervals the weights are 1, the tangents the parameter direction
        and the outward directions ``-1`` and ``+1``.
        """
        if self.kind == "interval":
            if self.closed:
                empty = np.zeros((0, 1))
                return empty, np.zeros(0), empty, empty
            a, b = self.bounds
            nodes = np.array([[a], [b]])
            return nodes, np.ones(2), np.ones((2, 1)), np.array([[-1.0], [1.0]])
        if self.kind in ("disk", "annulus"):
            count = 512 * level
            ang = 2 * math.pi * np.arange(count) / count
            circ = np.column_stack([np.cos(ang), np.sin(ang)])
            tang = np.column_stack([-np.sin(ang), np.cos(ang)])
            radii = [(self.bounds[0], 1.0)] if self.kind == "disk" else [(self.bounds[0], -1.0), (self.bounds[1], 1.0)]
            parts = [(R * circ, np.full(count, 2 * math.pi * R / count), tang, s * circ) for R, s in radii]
            return tuple(np.concatenate(z) for z in zip(*parts))
        if self.kind == "rectangle":
            a, b, c, d = self.bounds
            u, wu = _gauss_panels(a, b, 8 * level, 16)
            v, wv = _gauss_panels(c, d, 8 * level, 16)
            one = lambda z, val: np.full(z.size, val)
            sides = [
                (np.column_stack([u, one(u, c)]), wu, [1.0, 0.0], [0.0, -1.0]),
                (np.column_stack([u, one(u, d)]), wu, [1.0, 0.0], [0.0, 1.0]),
                (np.column_stack([one(v, a), v]), wv, [0.0, 1.0], [-1.0, 0.0]),
                (np.column_stack([one(v, b), v]), wv, [0.0, 1.0], [1.0, 0.0]),
            ]
            return (np.concatenate([s[0] for s in sides]), np.concatenate([s[1] for s in sides]),
                    np.concatenate([np.tile(s[2], (len(s[0]), 1)) for s in sides]),
                    np.concatenate([np.tile(s[3], (len(s[0]), 1)) for s in sides]))
        raise ValueError(f"unknown parameter domain {self.kind!r}")

    def mesh(self, h: float) -> fem.Mesh:
        if self.kind == "disk":
            return fem.disk_mesh(self.bounds[0], h)
        if self.kind == "annulus":
            return fem.annulus_mesh(self.bounds[0], self.bounds[1], h)
        if self.kind == "rectangle":
            a, b, c, d = self.bounds
            mesh = fem.rectangle_mesh(b - a, d - c, h)
            shift = np.array([(a + b) / 2, (c + d) / 2])
            return fem.Mesh(mesh.vertices + shift, mesh.triangles, h)
        raise ValueError("only two-dimensional parameter domains are meshed")


# ---------------------------------------------------------------------------
# patches


Immersion = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ImmersedPatch:
    name: str
    n: int
    codim: int
    F: Immersion
    domain: ParamDomain
    dF: Immersion | None = None
    ddF: Immersion | None = None
    minimal: bool = False
    params: dict = field(default_factory=dict)
    ambient: str = "euclidean"

    def __post_init__(self):
        if self.n not in (1, 2) or self.domain.dim != self.n:
            raise ValueError("patches have parameter dimension 1 or 2 matching the domain")
        if self.codim < 1:
            raise ValueError("codimension must be at least 1")
        if self.ambient != "euclidean":
            raise ValueError("only Euclidean ambient space is supported for patches")

    @property
    def ambient_dim(self) -> int:
        return self.n + self.codim

    def derivatives(self, U):
        """``F``, first derivatives ``(K, N, n)`` and second derivatives ``(K, N, n, n)`` at ``U``."""
        U = np.atleast_2d(np.asarray(U, dtype=float))
        X = self.F(U)
        dF = self.dF(U) if self.dF is not None else _fd_first(self.F, U)
        ddF = self.ddF(U) if self.ddF is not None else _fd_second(self.F, U)
        return X, dF, ddF


def _fd_first(F, U, h=FD_STEP):
    cols = []
    for e in np.eye(U.shape[1]):
        cols.append((-F(U + 2 * h * e) + 8 * F(U + h * e) - 8 * F(U - h * e) + F(U - 2 * h * e)) / (12 * h))
    return np.stack(cols, axis=-1)


def _fd_second(F, U, h=FD_STEP):
    n = U.shape[1]
    first = lambda V: _fd_first(F, V, h)
    out = np.empty(F(U).shape + (n, n))
    for j, e in enumerate(np.eye(n)):
        col = (-first(U + 2 * h * e) + 8 * first(U + h * e) - 8 * first(U - h * e) + first(U - 2 * h * e)) / (12 * h)
        out[..., j] = col
    return 0.5 * (out + np.swapaxes(out, -1, -2))


def _pad(A, codim, axis=1):
    """Append zero ambient coordinates so an array fits ``R^{n+codim}``."""
    width = [(0, 0)] * A.ndim
    width[axis] = (0, codim)
    return np.pad(A, width)


def flat_disk(radius: float = 1.0, codim: int = 2) -> ImmersedPatch:
    F = lambda U: _pad(U, codim)
    dF = lambda U: _pad(np.broadcast_to(np.eye(2), (len(U), 2, 2)), codim)
    ddF = lambda U: np.zeros((len(U), 2 + codim, 2, 2))
    return ImmersedPatch("flat_disk", 2, codim, F, ParamDomain("disk", (radius,)), dF, ddF, True,
                         {"radius": radius, "codim": codim})


def flat_strip(width: float = 2.0, height: float = 1.0, codim: int = 2) -> ImmersedPatch:
    p = flat_disk(1.0, codim)
    return replace(p, name="flat_strip", domain=ParamDomain("rectangle", (-width / 2, width / 2, -height / 2, height / 2)),
                   params={"width": width, "height": height, "codim": codim})


def circle(radius: float = 1.0, codim: int = 1) -> ImmersedPatch:
    c = lambda U: np.cos(U[:, 0])
    s = lambda U: np.sin(U[:, 0])
    F = lambda U: _pad(radius * np.column_stack([c(U), s(U)]), codim - 1)
    dF = lambda U: _pad(radius * np.column_stack([-s(U), c(U)]), codim - 1)[:, :, None]
    ddF = lambda U: _pad(-radius * np.column_stack([c(U), s(U)]), codim - 1)[:, :, None, None]
    return ImmersedPatch("circle", 1, codim, F, ParamDomain("interval", (0.0, 2 * math.pi), closed=True), dF, ddF,
                         False, {"radius": radius, "codim": codim})


def spiral(turns: float = 1.5, a: float = 0.2, b: float = 0.15, codim: int = 1) -> ImmersedPatch:
    """Archimedean spiral ``(a + b t)(cos t, sin t)``."""

    def F(U):
        t = U[:, 0]
        return _pad((a + b * t)[:, None] * np.column_stack([np.cos(t), np.sin(t)]), codim - 1)

    def dF(U):
        t = U[:, 0]
        c, s, r = np.cos(t), np.sin(t), a + b * t
        return _pad(np.column_stack([b * c - r * s, b * s + r * c]), codim - 1)[:, :, None]

    def ddF(U):
        t = U[:, 0]
        c, s, r = np.cos(t), np.sin(t), a + b * t
        return _pad(np.column_stack([-2 * b * s - r * c, 2 * b * c - r * s]), codim - 1)[:, :, None, None]

    return ImmersedPatch("spiral", 1, codim, F, ParamDomain("interval", (0.0, 2 * math.pi * turns)), dF, ddF,
                         False, {"turns": turns, "a": a, "b": b, "codim": codim})


def complex_curve(k: int = 2, radius: float = 1.0) -> ImmersedPatch:
    """Graph ``z -> (z, z^k)`` of a holomorphic map, a minimal surface in ``R^4``."""
    if k < 1:
        raise ValueError("exponent must be at least 1")

    def parts(U):
        return U[:, 0] + 1j * U[:, 1]

    def F(U):
        z = parts(U)
        w = z ** k
        return np.column_stack([U, w.real, w.imag])

    def dF(U):
        z = parts(U)
        dw = k * z ** (k - 1)
        out = np.zeros((len(U), 4, 2))
        out[:, 0, 0] = out[:, 1, 1] = 1.0
        out[:, 2, 0], out[:, 3, 0] = dw.real, dw.imag
        # d/dv of w is i w'
        out[:, 2, 1], out[:, 3, 1] = -dw.imag, dw.real
        return out

    def ddF(U):
        z = parts(U)
        d2 = k * (k - 1) * z ** (k - 2) if k >= 2 else np.zeros_like(z)
        out = np.zeros((len(U), 4, 2, 2))
        out[:, 2, 0, 0], out[:, 3, 0, 0] = d2.real, d2.imag
        out[:, 2, 0, 1], out[:, 3, 0, 1] = -d2.imag, d2.real
        out[:, 2, 1, 0], out[:, 3, 1, 0] = -d2.imag, d2.real
        out[:, 2, 1, 1], out[:, 3, 1, 1] = -d2.real, -d2.imag
        return out

    return ImmersedPatch("complex_curve", 2, 2, F, ParamDomain("disk", (radius,)), dF, ddF, True,
                         {"k": k, "radius": radius})


def sphere_cap(angle: float = math.pi / 2, radius: float = 1.0) -> ImmersedPatch:
    """Cap of polar angle ``angle`` on the round sphere, by inverse stereographic projection of a disk."""
    if not 0 < angle < math.pi:
        raise ValueError("cap angle must lie in (0, pi)")

    def F(U):
        q = np.sum(U * U, axis=1)[:, None]
        return radius * np.column_stack([2 * U, 1 - q]) / (1 + q)

    name = "hemisphere" if angle == math.pi / 2 else "sphere_cap"
    return ImmersedPatch(name, 2, 1, F, ParamDomain("disk", (math.tan(angle / 2),)), params={"angle": angle, "radius": radius})


def hemisphere(radius: float = 1.0) -> ImmersedPatch:
    return sphere_cap(math.pi / 2, radius)


def catenoid_band(height: float = 0.5) -> ImmersedPatch:
    """``(cosh v cos phi, cosh v sin phi, v)`` for ``|v| <= height``, parametrised by ``x = e^v (cos phi, sin phi)``."""

    def F(U):
        q = np.sum(U * U, axis=1)
        scale = 0.5 * (1.0 + 1.0 / q)
        return np.column_stack([scale * U[:, 0], scale * U[:, 1], 0.5 * np.log(q)])

    return ImmersedPatch("catenoid_band", 2, 1, F, ParamDomain("annulus", (math.exp(-height), math.exp(height))),
                         minimal=True, params={"height": height})


PATCH_PRESETS = {
    "flat_disk": flat_disk,
    "flat_strip": flat_strip,
    "circle": circle,
    "spiral": spiral,
    "complex_curve": complex_curve,
    "sphere_cap": sphere_cap,
    "hemisphere": hemisphere,
    "catenoid_band": catenoid_band,
}


def patch_preset(name: str, codim: int | None = None, **params) -> ImmersedPatch:
    """Build a preset and lift it until its codimension reaches ``codim``."""
    try:
        patch = PATCH_PRESETS[name](**params)
    except KeyError:
        raise ValueError(f"unknown patch preset {name!r}") from None
    while codim is not None and patch.codim < codim:
        patch = lift_codim1(patch) if patch.codim == 1 else _append_axis(patch)
    return patch


def load_patch_table(path, n: int, codim: int, closed: bool = False) -> ImmersedPatch:
    """Curve patch from a plain-text table ``t x_1 ... x_N``, interpolated by periodic or natural cubic splines."""
    if n != 1:
        raise ValueError("tabulated patches are curves")
    data = np.loadtxt(path, ndmin=2)
    t, X = data[:, 0], data[:, 1:]
    if X.shape[1] != n + codim:
        raise ValueError(f"table has {X.shape[1]} coordinates, expected {n + codim}")
    spline = CubicSpline(t, X, bc_type="periodic" if closed else "natural", axis=0)
    F = lambda U: spline(U[:, 0])
    dF = lambda U: spline(U[:, 0], 1)[:, :, None]
    ddF = lambda U: spline(U[:, 0], 2)[:, :, None, None]
    return ImmersedPatch(f"table:{path}", 1, codim, F, ParamDomain("interval", (t[0], t[-1]), closed), dF, ddF)


def _append_axis(patch: ImmersedPatch) -> ImmersedPatch:
    dF, ddF = patch.dF, patch.ddF
    return replace(
        patch,
        codim=patch.codim + 1,
        F=lambda U: _pad(patch.F(U), 1),
        dF=None if dF is None else (lambda U: _pad(dF(U), 1)),
        ddF=None if ddF is None else (lambda U: _pad(ddF(U), 1)),
    )


def lift_codim1(patch: ImmersedPatch) -> ImmersedPatch:
    """Product lift ``Sigma x {0}`` into ``R^{n+m+1}``; the new normal axis is parallel and carries no curvature."""
    if patch.codim != 1:
        raise ValueError("lift_codim1 expects a codimension-one patch")
    return replace(_append_axis(patch), name=f"{patch.name}_lift")


# ---------------------------------------------------------------------------
# extrinsic geometry


def _orthonormal_columns(T):
    """Modified Gram-Schmidt on the columns of ``(K, N, n)``."""
    Q = np.array(T, dtype=float)
    for j in range(Q.shape[2]):
        for i in range(j):
            Q[:, :, j] -= np.einsum("kd,kd->k", Q[:, :, i], Q[:, :, j])[:, None] * Q[:, :, i]
        Q[:, :, j] /= np.linalg.norm(Q[:, :, j], axis=1)[:, None]
    return Q


def _normal_frame(E, m):
    K, N, n = E.shape
    normals = np.zeros((K, N, m))
    count = np.zeros(K, dtype=int)
    for axis in range(N):
        v = np.zeros((K, N))
        v[:, axis] = 1.0
        for _ in range(2):
            v -= np.einsum("kdi,ki->kd", E, np.einsum("kdi,kd->ki", E, v))
            v -= np.einsum("kda,ka->kd", normals, np.einsum("kda,kd->ka", normals, v))
        norm = np.linalg.norm(v, axis=1)
        take = (count < m) & (norm > 0.1)
        idx = np.nonzero(take)[0]
        normals[idx, :, count[idx]] = v[idx] / norm[idx, None]
        count[idx] += 1
    if np.any(count < m):
        raise ImmersionError("normal frame construction failed")
    return normals


@dataclass
class PointGeometry:
    """Pointwise extrinsic data at parameter points."""

    U: np.ndarray
    X: np.ndarray
    T: np.ndarray          # (K, N, n) coordinate tangents
    g: np.ndarray          # (K, n, n)
    ginv: np.ndarray
    sqrtg: np.ndarray
    frame: np.ndarray      # (K, N, n) orthonormal tangent frame
    normals: np.ndarray    # (K, N, m)
    ddF: np.ndarray        # (K, N, n, n)
    II: np.ndarray         # (K, m, n, n) in coordinate tangents
    H: np.ndarray          # (K, N) mean curvature vector

    @property
    def II_frame(self) -> np.ndarray:
        """Second fundamental form ``<II(e_i, e_j), nu_a>`` in the orthonormal tangent frame."""
        A = self.frame_coefficients
        return np.einsum("kip,kaij,kjq->kapq", A, self.II, A)

    @property
    def frame_coefficients(self) -> np.ndarray:
        """``A`` with ``frame = T A``."""
        return np.linalg.solve(self.g, np.einsum("kdi,kdj->kij", self.T, self.frame))

    @property
    def H_norm(self) -> np.ndarray:
        return np.linalg.norm(self.H, axis=1)


def point_geometry(patch: ImmersedPatch, U) -> PointGeometry:
    X, T, D2 = patch.derivatives(U)
    U = np.atleast_2d(U)
    g = np.einsum("kdi,kdj->kij", T, T)
    eig = np.linalg.eigvalsh(g)[:, 0]
    bad = np.nonzero(eig <= METRIC_EIG_TOL)[0]
    if bad.size:
        raise ImmersionError(f"degenerate immersion at parameter {U[bad[0]]} (metric eigenvalue {eig[bad[0]]:.3e})")
    ginv = np.linalg.inv(g)
    E = _orthonormal_columns(T)
    normals = _normal_frame(E, patch.codim)
    II = np.einsum("kdij,kda->kaij", D2, normals)
    # H is the normal part of g^{ij} d_ij F; projecting out T avoids the gauge of the normal frame
    lap = np.einsum("kij,kdij->kd", ginv, D2)
    tangential = np.einsum("kdi,kij,kej,ke->kd", T, ginv, T, lap)
    return PointGeometry(U, X, T, g, ginv, np.sqrt(np.linalg.det(g)), E, normals, D2, II, lap - tangential)


@dataclass
class ExtrinsicData:
    """Geometry on the interior quadrature grid and on the boundary."""

    patch: ImmersedPatch
    interior: PointGeometry
    weights: np.ndarray        # parameter weights times sqrt(det g)
    boundary: PointGeometry | None
    boundary_weights: np.ndarray
    eta: np.ndarray            # (Kb, N) outward unit co-normal
    gauge: str = GAUGE

    @property
    def g(self):
        return self.interior.g

    @property
    def II(self):
        return self.interior.II

    @property
    def H(self):
        return self.interior.H

    def area(self) -> float:
        return float(np.sum(self.weights))

    def boundary_length(self) -> float:
        return float(np.sum(self.boundary_weights))

    def frame_residual(self) -> float:
        """Largest deviation of ``[frame | normals]`` from an orthonormal basis."""
        B = np.concatenate([self.interior.frame, self.interior.normals], axis=2)
        I = np.eye(B.shape[2])
        return float(np.max(np.abs(np.einsum("kda,kdb->kab", B, B) - I)))

    def symmetry_residual(self) -> float:
        II = self.interior.II
        return float(np.max(np.abs(II - np.swapaxes(II, -1, -2)), initial=0.0))


def extrinsic_geometry(patch: ImmersedPatch, level: int = 1) -> ExtrinsicData:
    U, w = patch.domain.quadrature(level)
    inner = point_geometry(patch, U)
    bU, bw, btan, bout = patch.domain.boundary(level)
    if len(bU) == 0:
        return ExtrinsicData(patch, inner, w * inner.sqrtg, None, np.zeros(0), np.zeros((0, patch.ambient_dim)))
    bd = point_geometry(patch, bU)
    if patch.n == 1:
        eta = np.einsum("kdi,ki->kd", bd.T, bout)
        eta /= np.linalg.norm(eta, axis=1)[:, None]
        return ExtrinsicData(patch, inner, w * inner.sqrtg, bd, bw, eta)
    t_amb = np.einsum("kdi,ki->kd", bd.T, btan)
    speed = np.linalg.norm(t_amb, axis=1)
    # outward direction made g-orthogonal to the boundary tangent
    gt = np.einsum("kij,kj->ki", bd.g, btan)
    a = bout - (np.einsum("ki,ki->k", bout, gt) / np.einsum("ki,ki->k", btan, gt))[:, None] * btan
    eta = np.einsum("kdi,ki->kd", bd.T, a)
    eta /= np.linalg.norm(eta, axis=1)[:, None]
    return ExtrinsicData(patch, inner, w * inner.sqrtg, bd, bw * speed, eta)


# ---------------------------------------------------------------------------
# functions on the patch


@dataclass(frozen=True)
class SurfaceFunction:
    """Positive function of the ambient position, with its ambient gradient."""

    name: str
    value: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]
    scale: float = 1.0

    def __call__(self, X):
        return self.scale * self.value(np.atleast_2d(X))

    def grad(self, X):
        return self.scale * self.gradient(np.atleast_2d(X))

    def scaled(self, lam: float) -> "SurfaceFunction":
        return replace(self, scale=self.scale * lam)

    def surface_gradient(self, geo: PointGeometry) -> np.ndarray:
        """Tangential projection of the ambient gradient, ``(K, N)``."""
        G = self.grad(geo.X)
        return np.einsum("kdi,kij,kej,ke->kd", geo.T, geo.ginv, geo.T, G)


def constant_function(value: float = 1.0) -> SurfaceFunction:
    return SurfaceFunction("constant", lambda X: np.full(len(X), float(value)), lambda X: np.zeros_like(X))


def quadratic_function(a: float = 2.0, b: float = 1.0) -> SurfaceFunction:
    """``a - b |X|^2``."""
    return SurfaceFunction("quadratic", lambda X: a - b * np.sum(X * X, axis=1), lambda X: -2.0 * b * X)


SURFACE_FUNCTIONS = {"constant": constant_function, "quadratic": quadratic_function}


def surface_function(name: str, **params) -> SurfaceFunction:
    try:
        return SURFACE_FUNCTIONS[name](**params)
    except KeyError:
        raise ValueError(f"unknown surface function {name!r}") from None


def _weight(f: SurfaceFunction, geo: PointGeometry) -> np.ndarray:
    """``sqrt(|grad^Sigma f|^2 + f^2 |H|^2)``."""
    gf = f.surface_gradient(geo)
    return np.sqrt(np.sum(gf * gf, axis=1) + f(geo.X) ** 2 * np.sum(geo.H * geo.H, axis=1))


# ---------------------------------------------------------------------------
# Michael-Simon sides


def ms_constant(n: int, m: int) -> float:
    """``(n+m) |B^{n+m}| / (m |B^m|)``."""
    return (n + m) * unit_ball_volume(n + m) / (m * unit_ball_volume(m))


@dataclass
class MSReport:
    lhs: float
    rhs: float
    interior: float
    boundary: float
    power: float
    quadrature_error: float
    n: int
    m: int
    theta: float

    @property
    def ratio(self) -> float:
        return self.lhs / self.rhs


def _ms_pieces(patch, f, level):
    ext = extrinsic_geometry(patch, level)
    fv = f(ext.interior.X)
    if np.any(fv <= 0) or (ext.boundary is not None and np.any(f(ext.boundary.X) <= 0)):
        raise DensityError("f must be positive on the patch")
    interior = float(np.sum(_weight(f, ext.interior) * ext.weights))
    boundary = float(np.sum(f(ext.boundary.X) * ext.boundary_weights)) if ext.boundary is not None else 0.0
    n = patch.n
    if n == 1:
        bvals = f(ext.boundary.X) if ext.boundary is not None else np.zeros(0)
        power = float(max(np.max(fv), np.max(bvals, initial=0.0)))
    else:
        power = float(np.sum(fv ** (n / (n - 1)) * ext.weights))
    return interior, boundary, power


def ms_sides(patch: ImmersedPatch, f: SurfaceFunction, theta: float = 1.0, level: int = 1) -> MSReport:
    """Both sides of the Michael-Simon-Sobolev inequality for codimension ``m >= 2``.

    For curves the power integral is replaced by its ``n -> 1`` limit, the
    maximum of ``f``.  The quadrature error is the relative change of the
    left side under doubling the resolution.
    """
    n, m = patch.n, patch.codim
    if m < 2:
        raise ValueError("codimension-one patches must be lifted first")
    interior, boundary, power = _ms_pieces(patch, f, level)
    fine = _ms_pieces(patch, f, 2 * level)
    lhs = interior + boundary
    err = abs(sum(fine[:2]) - lhs) / max(abs(lhs), 1e-300)
    c = ms_constant(n, m)
    if n == 1:
        rhs = c * theta * power
    else:
        rhs = n * c ** (1 / n) * theta ** (1 / n) * power ** ((n - 1) / n)
    return MSReport(lhs, rhs, interior, boundary, power, err, n, m, theta)


@dataclass
class IsoperimetricReport:
    area: float
    length: float
    bound: float
    max_H: float

    @property
    def margin(self) -> float:
        return self.length - self.bound


def minimal_isoperimetry(patch: ImmersedPatch, theta: float = 1.0, level: int = 1) -> IsoperimetricReport:
    """``|dSigma|`` against ``n |B^n|^{1/n} theta^{1/n} |Sigma|^{(n-1)/n}`` for a two-dimensional patch."""
    ext = extrinsic_geometry(patch, level)
    n = patch.n
    area, length = ext.area(), ext.boundary_length()
    bound = n * unit_ball_volume(n) ** (1 / n) * theta ** (1 / n) * area ** ((n - 1) / n)
    return IsoperimetricReport(area, length, bound, float(np.max(ext.interior.H_norm)))


# ---------------------------------------------------------------------------
# surface potential


@dataclass
class SurfaceIntegrals:
    interior: float
    boundary: float
    power: float
    n: int

    @property
    def A(self) -> float:
        return self.interior + self.boundary

    @property
    def compatibility(self) -> float:
        return self.A - self.n * self.power


def surface_integrals(patch: ImmersedPatch, f: SurfaceFunction, h: float | None = None) -> SurfaceIntegrals:
    """Integrals entering the normalization, by exact quadrature or on the mesh of width ``h``."""
    if h is None:
        interior, boundary, power = _ms_pieces(patch, f, 1)
        if patch.n == 2:
            return SurfaceIntegrals(interior, boundary, power, 2)
        # for curves the power is the length, see surface_potential
        ext = extrinsic_geometry(patch)
        return SurfaceIntegrals(interior, boundary, ext.area(), 1)
    mesh, asm, geo = _surface_mesh(patch, h)
    vals = f(geo.X)
    w = _weight(f, geo)
    one = np.ones_like(vals)
    return SurfaceIntegrals(float(one @ (asm.mass @ w)), float(one @ (asm.boundary_mass @ vals)),
                            float(one @ (asm.mass @ vals ** 2)), 2)


def normalize_surface_function(patch: ImmersedPatch, f: SurfaceFunction, h: float | None = None) -> SurfaceFunction:
    """Scale ``f`` so that ``int w + int_dSigma f = n int f^{n/(n-1)}``."""
    if patch.n != 2:
        raise ValueError("normalization applies to two-dimensional patches")
    ints = surface_integrals(patch, f, h)
    return f.scaled(ints.A / (2.0 * ints.power))


class SurfacePotential:
    """Solution of ``div(f grad u) = n f^{n/(n-1)} - w`` on the patch with unit co-normal flux.

    Values are exposed at parameter points: the tangential gradient as an
    ambient vector and in the orthonormal frame, the surface Hessian in the
    frame, and the Laplacian.
    """

    patch: ImmersedPatch
    f: SurfaceFunction
    h: float
    residual_interior: float
    residual_neumann: float

    def gradient_frame(self, U) -> np.ndarray:
        raise NotImplementedError

    def hessian_frame(self, U) -> np.ndarray:
        raise NotImplementedError

    def laplacian(self, U) -> np.ndarray:
        return np.trace(self.hessian_frame(U), axis1=1, axis2=2)

    def gradient_ambient(self, U) -> np.ndarray:
        geo = point_geometry(self.patch, U)
        return np.einsum("kdi,ki->kd", geo.frame, self.gradient_frame(U))


class CurvePotential(SurfacePotential):
    """Closed-form potential on a curve.

    The source ``n f^{n/(n-1)}`` has no meaning for ``n = 1``; it is replaced
    by the constant ``c`` that makes the flux balance, so that
    ``(f u_s)' = c - w`` with ``u_s = -1`` at the start and ``+1`` at the end.
    On a closed curve the free constant makes ``u`` periodic.
    """

    def __init__(self, patch: ImmersedPatch, f: SurfaceFunction, panels: int = 64):
        self.patch, self.f, self.h = patch, f, 0.0
        a, b = patch.domain.bounds
        edges = np.linspace(a, b, panels + 1)
        x, w = np.polynomial.legendre.leggauss(20)
        t = (0.5 * (edges[1:, None] - edges[:-1, None]) * (x + 1) + edges[:-1, None]).ravel()
        self._t = np.concatenate([[a], t, [b]])
        geo = point_geometry(patch, self._t[:, None])
        speed = np.sqrt(geo.g[:, 0, 0])
        self._ds = speed
        self._f = f(geo.X)
        self._w = _weight(f, geo)
        # cumulative arclength and weight integrals by the panel Gauss rule on a refined Hermite table
        s = _cumulative(self._t, speed)
        W = _cumulative(self._t, speed * self._w)
        L, WL = s[-1], W[-1]
        self.length = L
        if patch.domain.closed:
            self.c = WL / L
            inv_f = _cumulative(self._t, speed / self._f)[-1]
            drift = _cumulative(self._t, speed * (self.c * s - W) / self._f)[-1]
            flux0 = -drift / inv_f
        else:
            fa, fb = self._f[0], self._f[-1]
            self.c = (fa + fb + WL) / L
            flux0 = -fa
        self._s = s
        self._flux = flux0 + self.c * s - W
        self._du = self._flux / self._f
        self._u = _cumulative(self._t, speed * self._du)
        self._u -= _cumulative(self._t, speed * self._u)[-1] / L
        self._u_spline = CubicSpline(self._t, self._u)
        self._du_spline = CubicSpline(self._t, self._du)
        self.residual_neumann = 0.0 if patch.domain.closed else float(max(abs(self._du[0] + 1.0), abs(self._du[-1] - 1.0)))
        self.residual_interior = self._ode_residual()

    @property
    def nodes(self) -> np.ndarray:
        return self._t[:, None]

    def _ode_residual(self) -> float:
        """Max of ``|(f u_s)_s - c + w|`` with the derivative from the analytic identity ``(f u_s)_s = c - w``.

        The identity holds by construction of the flux; the residual checks it
        with a fourth-order difference in arclength on the sample grid.
        """
        spline = CubicSpline(self._s, self._flux)
        inner = slice(2, -2)
        return float(np.max(np.abs(spline(self._s, 1)[inner] - (self.c - self._w[inner]))))

    def value(self, U):
        return self._u_spline(np.atleast_2d(U)[:, 0])

    def gradient_frame(self, U):
        return self._du_spline(np.atleast_2d(U)[:, 0])[:, None]

    def hessian_frame(self, U):
        geo = point_geometry(self.patch, U)
        du = self._du_spline(np.atleast_2d(U)[:, 0])
        gf = np.einsum("kd,kd->k", self.f.surface_gradient(geo), geo.frame[:, :, 0])
        ddu = (self.c - _weight(self.f, geo) - gf * du) / self.f(geo.X)
        return ddu[:, None, None]


def _cumulative(t, y):
    """Cumulative integral from the antiderivative of the interpolating cubic spline."""
    return CubicSpline(t, y).antiderivative()(t)


_SURFACE_CACHE: dict = {}


def _surface_mesh(patch: ImmersedPatch, h: float):
    key = (patch.name, tuple(sorted(patch.params.items())), patch.codim, h)
    if key not in _SURFACE_CACHE:
        mesh = patch.domain.mesh(h)
        asm = fem.assemble(mesh, lambda x: point_geometry(patch, x).g)
        _SURFACE_CACHE[key] = (mesh, asm, point_geometry(patch, mesh.vertices))
    return _SURFACE_CACHE[key]


class MeshSurfacePotential(SurfacePotential):
    """P1 solution in the parameter chart with the induced metric, plus recovered derivatives."""

    def __init__(self, patch, f, h, mesh, geo, u, grad, hess, residual, multiplier):
        self.patch, self.f, self.h = patch, f, h
        self.mesh, self.geo = mesh, geo
        self.u, self.grad_param, self.hess_param = u, grad, hess
        self.residual_interior = residual
        self.multiplier = multiplier
        self._interp_cache = {}
        self.residual_neumann = self._neumann_residual()

    def _interp(self, name, table, U):
        if name not in self._interp_cache:
            flat = table.reshape(len(table), -1)
            self._interp_cache[name] = LinearNDInterpolator(self.mesh.vertices, flat)
        out = self._interp_cache[name](np.atleast_2d(U))
        return out.reshape((-1,) + table.shape[1:])

    @property
    def nodes(self) -> np.ndarray:
        return self.mesh.vertices

    def value(self, U):
        return self._interp("u", self.u, U)

    def _covariant(self, U):
        geo = point_geometry(self.patch, U)
        du = self._interp("grad", self.grad_param, U)
        d2u = self._interp("hess", self.hess_param, U)
        # Christoffel symbols of the induced metric: Gamma^k_ij = g^{kl} <d_ij F, d_l F>
        gamma = np.einsum("kab,kdb,kdij->kaij", geo.ginv, geo.T, geo.ddF)
        hess = d2u - np.einsum("kaij,ka->kij", gamma, du)
        return geo, du, hess

    def gradient_frame(self, U):
        geo, du, _ = self._covariant(U)
        return np.einsum("kia,ki->ka", geo.frame_coefficients, du)

    def hessian_frame(self, U):
        geo, _, hess = self._covariant(U)
        A = geo.frame_coefficients
        return np.einsum("kip,kij,kjq->kpq", A, hess, A)

    def _neumann_residual(self) -> float:
        """Boundary RMS of ``<grad u, eta> - 1`` at the boundary vertices, from the recovered gradient."""
        mesh = self.mesh
        edges = mesh.boundary_edges
        nodes = mesh.boundary_nodes
        # outward covector at each boundary vertex: sum of adjacent edge normals
        normal = np.zeros_like(mesh.vertices)
        t = mesh.vertices[edges[:, 1]] - mesh.vertices[edges[:, 0]]
        out = np.column_stack([t[:, 1], -t[:, 0]])
        np.add.at(normal, edges[:, 0], out)
        np.add.at(normal, edges[:, 1], out)
        nu = normal[nodes]
        ginv = self.geo.ginv[nodes]
        eta = np.einsum("kij,kj->ki", ginv, nu)
        eta /= np.sqrt(np.einsum("ki,ki->k", nu, eta))[:, None]
        flux = np.einsum("ki,ki->k", self.grad_param[nodes], eta)
        return float(np.sqrt(np.mean((flux - 1.0) ** 2)))


def surface_potential(patch: ImmersedPatch, f: SurfaceFunction, h: float = 0.05) -> SurfacePotential:
    """Potential on the patch: closed form along curves, P1 finite elements on surfaces."""
    if patch.n == 1:
        return CurvePotential(patch, f)
    mesh, asm, geo = _surface_mesh(patch, h)
    ints = surface_integrals(patch, f, h)
    if abs(ints.compatibility) > 1e-6 * ints.A:
        raise DensityError(f"unnormalized density: A - nB = {ints.compatibility:.3e}")
    vals = f(geo.X)
    source = 2.0 * vals ** 2 - _weight(f, geo)
    sol = fem.solve_neumann(mesh, asm, vals, source, vals)
    grad = fem.recover_gradient(mesh, sol.u)
    hess = fem.recover_hessian(mesh, grad)
    return MeshSurfacePotential(patch, f, h, mesh, geo, sol.u, grad, hess, sol.residual, sol.multiplier)


@dataclass
class SurfaceLaplacianReport:
    margin: float
    samples: int


def surface_laplacian_check(sol: SurfacePotential, U, rng: np.random.Generator, per_point: int = 8) -> SurfaceLaplacianReport:
    """Minimum of ``n f^{1/(n-1)} - (Lap u - <H, y>)`` over random admissible ``y`` at points ``U``.

    For curves the bound is taken as ``c``, the constant source.
    """
    patch = sol.patch
    geo = point_geometry(patch, U)
    grad = sol.gradient_frame(U)
    lap = sol.laplacian(U)
    g2 = np.sum(grad * grad, axis=1)
    inside = g2 < 1.0
    n, m = patch.n, patch.codim
    bound = n * sol.f(geo.X) ** (1.0 / (n - 1)) if n > 1 else np.full(len(U), sol.c / sol.f(geo.X).max())
    worst = math.inf
    count = 0
    for _ in range(per_point):
        z = rng.standard_normal((len(U), m))
        z /= np.linalg.norm(z, axis=1)[:, None]
        radius = np.sqrt(np.clip(1.0 - g2, 0.0, None)) * rng.random(len(U)) ** (1.0 / m)
        y = np.einsum("kda,ka->kd", geo.normals, z * radius[:, None])
        value = lap - np.einsum("kd,kd->k", geo.H, y)
        gap = (bound - value)[inside]
        if gap.size:
            worst = min(worst, float(gap.min()))
            count += gap.size
    return SurfaceLaplacianReport(worst, count)


# ---------------------------------------------------------------------------
# normal transport


@dataclass
class NormalTransportSample:
    x: np.ndarray
    y: np.ndarray              # normal-frame components
    image: np.ndarray
    jacobian: float
    system: JacobiSystem = field(repr=False)
    c: float = 1.0
    initial_velocity: np.ndarray = field(default=None, repr=False)
    positivity: float = math.nan
    shape_block: np.ndarray = field(default=None, repr=False)

    @property
    def bound(self) -> float:
        n, m = self.system.block_dims
        r = float(self.system.t[-1])
        return r ** m * (1.0 + r * self.c) ** n

    @property
    def bound_margin(self) -> float:
        return self.bound - self.jacobian

    @property
    def monotonicity(self) -> float:
        return jacobian_ratio_monotone(self.system, self.c).max_increase

    def small_time_limit(self) -> float:
        """``t^{-m} det P(t)`` at the first sample after the start."""
        return float(self.system.scaled_det()[0])


def shape_pairing(II_frame: np.ndarray, y: np.ndarray) -> np.ndarray:
    """``<II(e_i, e_j), y>`` for ``y`` given in normal-frame components."""
    return np.einsum("aij,a->ij", II_frame, y)


def normal_transport(patch: ImmersedPatch, sol: SurfacePotential, x, y, r: float,
                     on_conjugate: str = "raise") -> NormalTransportSample:
    """``Phi_r(x, y) = exp_x(r grad u(x) + r y)`` and its block Jacobi system in flat ambient space."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float)
    n, m = patch.n, patch.codim
    geo = point_geometry(patch, x[None])
    grad = sol.gradient_frame(x[None])[0]
    if grad @ grad + y @ y >= 1.0:
        raise ValueError("(x, y) is not admissible: |grad u|^2 + |y|^2 >= 1")
    hess = sol.hessian_frame(x[None])[0]
    II = geo.II_frame[0]
    pairing = shape_pairing(II, y)
    top_left = hess - pairing
    off = np.einsum("aij,j->ia", II, grad)
    P0 = np.zeros((n + m, n + m))
    P0[:n, :n] = np.eye(n)
    dP0 = np.zeros_like(P0)
    dP0[:n, :n] = top_left
    dP0[:n, n:] = off
    dP0[n:, n:] = np.eye(m)
    system = propagate_jacobi(P0, dP0, constant_curvature(0.0, n + m, r), block_dims=(n, m), on_conjugate=on_conjugate)
    fx = float(sol.f(geo.X)[0])
    c = fx ** (1.0 / (n - 1)) if n > 1 else sol.c / fx
    v = geo.frame[0] @ grad + geo.normals[0] @ y
    positivity = float(np.linalg.eigvalsh(np.eye(n) + r * top_left)[0])
    return NormalTransportSample(x, y, geo.X[0] + r * v, float(system.det()[-1]), system, c, v, positivity, pairing)


def normal_transport_fd(patch: ImmersedPatch, sol: SurfacePotential, x, y, r: float, eps: float = 1e-5) -> float:
    """``det D Phi_r`` by central differences in parameter and normal-frame coordinates, divided by ``sqrt(det g)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)

    def Phi(z):
        xs, ys = z[: patch.n], z[patch.n:]
        geo = point_geometry(patch, xs[None])
        return geo.X[0] + r * (geo.frame[0] @ sol.gradient_frame(xs[None])[0] + geo.normals[0] @ ys)

    z0 = np.concatenate([x, y])
    cols = [(Phi(z0 + eps * e) - Phi(z0 - eps * e)) / (2 * eps) for e in np.eye(z0.size)]
    sqrtg = float(point_geometry(patch, x[None]).sqrtg[0])
    return float(abs(np.linalg.det(np.column_stack(cols))) / sqrtg)


def arithmetic_harmonic_gap(lam, c: float, t: float) -> float:
    """``n c/(1+tc) - sum lam_i/(1+t lam_i)``; nonnegative whenever ``sum lam_i <= n c`` and ``1 + t lam_i > 0``."""
    lam = np.asarray(lam, dtype=float)
    return float(len(lam) * c / (1 + t * c) - np.sum(lam / (1 + t * lam)))


# ---------------------------------------------------------------------------
# shell capture


@dataclass
class ShellReport:
    r: float
    sigma: float
    lhs: float
    lhs_stderr: float
    rhs: float
    rhs_sharp: float
    status: str
    samples: int
    seed: int
    cloud_spacing: float
    prediction: float
    ambient_dim: int

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs

    @property
    def rhs_over_gap(self) -> float:
        """``RHS / ((1 - sigma) r^{n+m})``, which tends to ``m |B^m| int f^{n/(n-1)}`` as ``sigma -> 1`` and ``r -> inf``."""
        return self.rhs / ((1.0 - self.sigma) * self.r ** self.ambient_dim)


def _point_cloud(patch: ImmersedPatch, level: int):
    U, _ = patch.domain.quadrature(level)
    bU, _, _, _ = patch.domain.boundary(level)
    pts = np.concatenate([patch.F(U), patch.F(bU) if len(bU) else np.zeros((0, patch.ambient_dim))])
    return pts


def _extreme_points(pts):
    """Points of the cloud that can realise a maximal distance: vertices of its convex hull."""
    centre = pts.mean(axis=0)
    _, s, Vt = np.linalg.svd(pts - centre, full_matrices=False)
    rank = int(np.sum(s > 1e-10 * s[0]))
    if rank <= 1:
        proj = (pts - centre) @ Vt[0]
        return pts[[int(np.argmin(proj)), int(np.argmax(proj))]]
    reduced = (pts - centre) @ Vt[:rank].T
    return pts[ConvexHull(reduced).vertices]


class _FarTest:
    """Exact test of ``max_v |p - v| < r`` over hull vertices ``v``, screened by a coarse subset.

    With ``delta`` the covering radius of the subset ``S`` in the hull,
    ``max_S <= max_v <= max_S + delta``, so only points in that band need the
    full hull; those are checked in blocks of bounded memory.
    """

    def __init__(self, hull: np.ndarray, coarse: int = 2048, block_entries: int = 4_000_000):
        self.hull = hull
        self.hull_sq = np.sum(hull * hull, axis=1)
        keep = np.arange(len(hull))
        cell = float(np.max(np.ptp(hull, axis=0))) / coarse
        while len(keep) > coarse and cell > 0.0:
            # one vertex per voxel, coarsening until the subset is small
            _, keep = np.unique(np.floor(hull / cell), axis=0, return_index=True)
            cell *= 1.5
        self.sub = hull[np.sort(keep)]
        self.sub_sq = np.sum(self.sub * self.sub, axis=1)
        self.delta = float(np.max(cKDTree(self.sub).query(hull)[0])) if len(keep) < len(hull) else 0.0
        self.block = max(1, block_entries // len(hull))

    @staticmethod
    def _max_dist(p, v, v_sq):
        # max_v |p - v|^2 = |p|^2 + max_v (|v|^2 - 2 p.v)
        far2 = np.sum(p * p, axis=1) + np.max(v_sq[None, :] - 2.0 * (p @ v.T), axis=1)
        return np.sqrt(np.clip(far2, 0.0, None))

    def inside(self, p: np.ndarray, r: float) -> np.ndarray:
        coarse = self._max_dist(p, self.sub, self.sub_sq)
        member = coarse + self.delta < r
        band = np.nonzero((coarse < r) & ~member)[0]
        for i in range(0, len(band), self.block):
            idx = band[i:i + self.block]
            member[idx] = self._max_dist(p[idx], self.hull, self.hull_sq) < r
        return member


def shell_rhs(patch, sol, f, r, sigma, level: int = 1):
    """Right sides ``(m/2)|B^m|(1 - sigma^2) int_Omega r^m (1 + r c)^n`` and its sharper un-relaxed form."""
    n, m = patch.n, patch.codim
    U, w = patch.domain.quadrature(level)
    geo = point_geometry(patch, U)
    weights = w * geo.sqrtg
    g2 = np.sum(sol.gradient_frame(U) ** 2, axis=1)
    omega = g2 < 1.0
    fv = sol.f(geo.X)
    c = fv ** (1.0 / (n - 1)) if n > 1 else np.full(len(U), sol.c / fv.max())
    factor = r ** m * (1 + r * c) ** n
    bm = unit_ball_volume(m)
    rhs = 0.5 * m * bm * (1 - sigma ** 2) * float(np.sum((factor * weights)[omega]))
    inner = (1 - g2) ** (m / 2) - np.clip(sigma ** 2 - g2, 0.0, None) ** (m / 2)
    sharp = bm * float(np.sum((inner * factor * weights)[omega]))
    prediction = m * bm * float(np.sum((c ** n * weights)[omega]))
    return rhs, sharp, prediction


def shell_capture(patch: ImmersedPatch, sol: SurfacePotential, f: SurfaceFunction, r: float, sigma: float,
                  budget: int, seed: int, case_id: str = "shell", level: int = 2,
                  chunk: int = 100_000) -> ShellReport:
    """Monte Carlo volume of ``{p : sigma r < |X - p| < r for all X in Sigma}`` against the transport bound.

    Distances to the patch use a dense point cloud of quadrature and
    boundary nodes; the maximal distance is taken over the vertices of its
    convex hull.
    """
    if not 0.0 <= sigma < 1.0:
        raise ValueError("sigma must lie in [0, 1)")
    if patch.codim < 2:
        raise ValueError("shell capture needs codimension at least 2")
    pts = _point_cloud(patch, level)
    tree = cKDTree(pts)
    spacing = float(np.max(tree.query(pts, k=2)[0][:, 1]))
    far = _FarTest(_extreme_points(pts))
    N = patch.ambient_dim
    centre = pts[0]
    rng = make_rng(seed, case_id)
    hits = 0
    done = 0
    while done < budget:
        k = min(chunk, budget - done)
        z = rng.standard_normal((k, N))
        z /= np.linalg.norm(z, axis=1)[:, None]
        p = centre + r * (rng.random(k) ** (1.0 / N))[:, None] * z
        member = far.inside(p, r)
        if sigma > 0.0 and np.any(member):
            near = tree.query(p[member])[0]
            member[np.nonzero(member)[0][near <= sigma * r]] = False
        hits += int(np.count_nonzero(member))
        done += k
    vol = unit_ball_volume(N) * r ** N
    q = hits / budget
    lhs, err = vol * q, vol * math.sqrt(q * (1 - q) / budget)
    rhs, sharp, prediction = shell_rhs(patch, sol, f, r, sigma)
    if lhs <= rhs + MC_SIGMAS * err:
        status = "pass"
    elif lhs - MC_SIGMAS * err <= rhs:
        status = "inconclusive"
    else:
        status = "fail"
    return ShellReport(r, sigma, lhs, err, rhs, sharp, status, budget, seed, spacing, prediction, N)


def flat_disk_shell_volume(r: float, radius: float = 1.0) -> float:
    """Exact volume of ``{p in R^4 : |p - x| < r for all x in the flat disk}``.

    Writing ``p = (a, b)`` with ``a`` in the plane of the disk, the farthest
    point is at distance ``sqrt((|a| + radius)^2 + |b|^2)``.
    """
    if r <= radius:
        return 0.0
    s = r - radius
    # 2 pi int_0^s pi (r^2 - (t + radius)^2) t dt
    R = radius
    integral = r * r * s * s / 2 - (s ** 4 / 4 + 2 * R * s ** 3 / 3 + R * R * s * s / 2)
    return 2 * math.pi * math.pi * integral
