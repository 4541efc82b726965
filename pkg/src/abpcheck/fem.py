"""Piecewise-linear Neumann solver on triangulated planar charts.

The chart carries a Riemannian metric ``G(x)`` (the model metric in polar
chart coordinates, or the first fundamental form of a parametrised surface),
and every integral uses the exact area element ``sqrt(det G)`` at quadrature
points.  The Neumann problem

    int f <grad u, grad v>_G = int_dD f v - int s v,    int u = 0,

is solved with a Lagrange multiplier for the zero-mean constraint.
Gradients are recovered by least-squares quadratic fits on vertex patches,
Hessians by a second pass over the recovered gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve
from scipy.spatial import Delaunay, cKDTree

from .models import WarpedModel
from .potential import (DensityError, DensityField, DomainIntegrals, GeoDomain,
                        PotentialSolution)

MIN_ANGLE_DEG = 20.0

# degree-4 six-point rule on the reference triangle (barycentric, weights sum to 1)
_TRI_A, _TRI_B = 0.445948490915965, 0.091576213509771
_TRI_BARY = np.array([
    [_TRI_A, _TRI_A, 1 - 2 * _TRI_A], [_TRI_A, 1 - 2 * _TRI_A, _TRI_A], [1 - 2 * _TRI_A, _TRI_A, _TRI_A],
    [_TRI_B, _TRI_B, 1 - 2 * _TRI_B], [_TRI_B, 1 - 2 * _TRI_B, _TRI_B], [1 - 2 * _TRI_B, _TRI_B, _TRI_B],
])
_TRI_W = np.array([0.223381589678011] * 3 + [0.109951743655322] * 3)
_EDGE_X, _EDGE_W = np.polynomial.legendre.leggauss(3)
_EDGE_S = 0.5 * (_EDGE_X + 1.0)
_EDGE_W = 0.5 * _EDGE_W


class MeshError(ValueError):
    pass


# ---------------------------------------------------------------------------
# meshes


@dataclass
class Mesh:
    """Conforming triangulation with counter-clockwise triangles."""

    vertices: np.ndarray
    triangles: np.ndarray
    h: float = 0.0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        tri = np.asarray(self.triangles, dtype=np.int64)
        a, b, c = (self.vertices[tri[:, j]] for j in range(3))
        cross = (b - a)[:, 0] * (c - a)[:, 1] - (b - a)[:, 1] * (c - a)[:, 0]
        if np.any(cross == 0.0):
            raise MeshError("degenerate triangle in mesh")
        tri[cross < 0] = tri[cross < 0][:, [0, 2, 1]]
        self.triangles = tri
        if not self.h:
            self.h = float(np.max(np.linalg.norm(self.vertices[tri] - self.vertices[np.roll(tri, 1, axis=1)], axis=2)))

    @property
    def boundary_edges(self) -> np.ndarray:
        """Edges used by exactly one triangle, oriented with the domain on the left."""
        if "boundary" not in self._cache:
            tri = self.triangles
            edges = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
            key = np.sort(edges, axis=1)
            _, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
            self._cache["boundary"] = edges[counts[inverse.ravel()] == 1]
        return self._cache["boundary"]

    @property
    def boundary_nodes(self) -> np.ndarray:
        return np.unique(self.boundary_edges)

    def min_angle(self) -> float:
        """Smallest interior angle in degrees."""
        P = self.vertices[self.triangles]
        worst = 180.0
        for j in range(3):
            u = P[:, (j + 1) % 3] - P[:, j]
            v = P[:, (j + 2) % 3] - P[:, j]
            cosang = np.sum(u * v, axis=1) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
            worst = min(worst, float(np.degrees(np.arccos(np.clip(cosang, -1, 1))).min()))
        return worst

    def neighbours(self) -> list[np.ndarray]:
        if "nbrs" not in self._cache:
            n = self.vertices.shape[0]
            tri = self.triangles
            rows = np.repeat(tri, 3, axis=1).ravel()
            cols = np.tile(tri, (1, 3)).ravel()
            adj = sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))
            self._cache["nbrs"] = [adj.indices[adj.indptr[i]:adj.indptr[i + 1]] for i in range(n)]
        return self._cache["nbrs"]

    def permuted(self, perm) -> "Mesh":
        """Same mesh with vertex ``i`` renumbered to ``perm[i]``."""
        perm = np.asarray(perm)
        verts = np.empty_like(self.vertices)
        verts[perm] = self.vertices
        return Mesh(verts, perm[self.triangles], self.h)


def _check_quality(mesh: Mesh) -> Mesh:
    angle = mesh.min_angle()
    if angle < MIN_ANGLE_DEG:
        raise MeshError(f"mesh minimum angle {angle:.2f} deg below {MIN_ANGLE_DEG} deg")
    return mesh


def _ring_points(r_lo, r_hi, h, include_centre):
    rings = max(1, int(math.ceil((r_hi - r_lo) / h)))
    pts = [np.zeros((1, 2))] if include_centre else []
    for i, r in enumerate(np.linspace(r_lo, r_hi, rings + 1)):
        if r == 0.0:
            continue
        count = max(6, int(math.ceil(2 * math.pi * r / h)))
        # stagger alternate rings so Delaunay triangles stay well shaped
        ang = (np.arange(count) + 0.5 * (i % 2)) * 2 * math.pi / count
        pts.append(r * np.column_stack([np.cos(ang), np.sin(ang)]))
    return np.concatenate(pts)


def disk_mesh(R: float = 1.0, h: float = 0.1) -> Mesh:
    """Ring-structured Delaunay mesh of the disk ``|x| <= R`` with boundary vertices on the circle."""
    pts = _ring_points(0.0, R, h, True)
    return _check_quality(Mesh(pts, Delaunay(pts).simplices, h))


def annulus_mesh(R0: float, R1: float, h: float = 0.1) -> Mesh:
    pts = _ring_points(R0, R1, h, False)
    tri = Delaunay(pts).simplices
    centroid = np.linalg.norm(pts[tri].mean(axis=1), axis=1)
    return _check_quality(Mesh(pts, tri[centroid > R0], h))


def rectangle_mesh(width: float, height: float, h: float = 0.1) -> Mesh:
    nx = max(1, int(math.ceil(width / h)))
    ny = max(1, int(math.ceil(height / h)))
    X, Y = np.meshgrid(np.linspace(-width / 2, width / 2, nx + 1), np.linspace(-height / 2, height / 2, ny + 1))
    pts = np.column_stack([X.ravel(), Y.ravel()])
    return _check_quality(Mesh(pts, Delaunay(pts).simplices, h))


def save_mesh(mesh: Mesh, path) -> None:
    """Plain-text vertex/triangle lists."""
    path = Path(path)
    lines = [f"vertices {mesh.vertices.shape[0]}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines.append(f"triangles {mesh.triangles.shape[0]}")
    lines += [" ".join(map(str, t)) for t in mesh.triangles.tolist()]
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write mesh to {path}: {exc}") from exc


def load_mesh(path) -> Mesh:
    path = Path(path)
    tokens = path.read_text().split("\n")
    it = iter(t for t in tokens if t.strip() and not t.startswith("#"))
    head, count = next(it).split()
    if head != "vertices":
        raise MeshError(f"{path}: expected 'vertices' header")
    verts = np.array([[float(v) for v in next(it).split()] for _ in range(int(count))])
    head, count = next(it).split()
    if head != "triangles":
        raise MeshError(f"{path}: expected 'triangles' header")
    tris = np.array([[int(v) for v in next(it).split()] for _ in range(int(count))])
    return Mesh(verts, tris)


# ---------------------------------------------------------------------------
# metrics


Metric = Callable[[np.ndarray], np.ndarray]


def euclidean_metric(x):
    return np.broadcast_to(np.eye(2), (len(x), 2, 2)).copy()


def model_metric(model: WarpedModel) -> Metric:
    """``G = omega omega^T + (phi/rho)^2 (I - omega omega^T)`` in the chart ``x = rho omega``."""
    prof = model.profile

    def metric(x):
        rho = np.linalg.norm(x, axis=1)
        safe = np.where(rho > 0, rho, 1.0)
        omega = x / safe[:, None]
        psi = np.where(rho > 1e-12, prof.phi(safe) / safe, 1.0)
        outer = omega[:, :, None] * omega[:, None, :]
        eye = np.eye(2)[None]
        G = outer + (psi ** 2)[:, None, None] * (eye - outer)
        return np.where((rho > 0)[:, None, None], G, eye)

    return metric


# ---------------------------------------------------------------------------
# assembly


@dataclass
class Assembly:
    """Mass, boundary mass and the per-quadrature-point data needed for stiffness matrices."""

    mass: sp.csr_matrix
    boundary_mass: sp.csr_matrix
    grads: np.ndarray      # (M, 3, 2) gradients of barycentric basis functions
    weights: np.ndarray    # (M, Q) quadrature weight * area * sqrt(det G)
    ginv: np.ndarray       # (M, Q, 2, 2) inverse metric at quadrature points


def _triangle_data(mesh: Mesh):
    P = mesh.vertices[mesh.triangles]
    e1 = P[:, 1] - P[:, 0]
    e2 = P[:, 2] - P[:, 0]
    area = 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    J = np.stack([e1, e2], axis=2)              # columns e1, e2
    Jinv_T = np.linalg.inv(J).transpose(0, 2, 1)
    ref = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    grads = np.einsum("mij,kj->mki", Jinv_T, ref)
    return P, area, grads


def assemble(mesh: Mesh, metric: Metric) -> Assembly:
    n = mesh.vertices.shape[0]
    tri = mesh.triangles
    P, area, grads = _triangle_data(mesh)
    # barycentric columns follow vertex order (0, 1, 2)
    qpts = np.einsum("qk,mkd->mqd", _TRI_BARY, P)
    G = metric(qpts.reshape(-1, 2)).reshape(len(tri), -1, 2, 2)
    sqrtg = np.sqrt(np.linalg.det(G))
    weights = _TRI_W[None, :] * area[:, None] * sqrtg
    local_mass = np.einsum("mq,qa,qb->mab", weights, _TRI_BARY, _TRI_BARY)
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    mass = sp.csr_matrix((local_mass.ravel(), (rows, cols)), shape=(n, n))

    edges = mesh.boundary_edges
    a = mesh.vertices[edges[:, 0]]
    b = mesh.vertices[edges[:, 1]]
    t = b - a
    epts = a[:, None, :] + _EDGE_S[None, :, None] * t[:, None, :]
    Ge = metric(epts.reshape(-1, 2)).reshape(len(edges), -1, 2, 2)
    speed = np.sqrt(np.einsum("ed,eqdk,ek->eq", t, Ge, t))
    lam = np.stack([1.0 - _EDGE_S, _EDGE_S], axis=1)
    local_b = np.einsum("eq,qa,qb->eab", _EDGE_W[None, :] * speed, lam, lam)
    rows = np.repeat(edges, 2, axis=1).ravel()
    cols = np.tile(edges, (1, 2)).ravel()
    bmass = sp.csr_matrix((local_b.ravel(), (rows, cols)), shape=(n, n))
    return Assembly(mass, bmass, grads, weights, np.linalg.inv(G))


def stiffness(mesh: Mesh, asm: Assembly, coeff_nodes) -> sp.csr_matrix:
    """``int c <grad phi_a, grad phi_b>_G`` with ``c`` interpolated from nodal values."""
    tri = mesh.triangles
    n = mesh.vertices.shape[0]
    cq = np.einsum("qk,mk->mq", _TRI_BARY, np.asarray(coeff_nodes)[tri])
    K = np.einsum("mq,mqij,mai,mbj->mab", asm.weights * cq, asm.ginv, asm.grads, asm.grads)
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    return sp.csr_matrix((K.ravel(), (rows, cols)), shape=(n, n))


# ---------------------------------------------------------------------------
# recovery


def _fit_operator(mesh: Mesh) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Linear maps from nodal values to recovered x- and y-derivatives at the nodes.

    Each vertex fits a quadratic by least squares on its one-ring (grown to
    the two-ring when the one-ring has fewer than eight vertices).
    """
    if "fit" in mesh._cache:
        return mesh._cache["fit"]
    verts = mesh.vertices
    nbrs = mesh.neighbours()
    n = verts.shape[0]
    rows, cols, vx, vy = [], [], [], []
    for i in range(n):
        patch = nbrs[i]
        if patch.size < 8:
            patch = np.unique(np.concatenate([nbrs[j] for j in patch]))
        d = verts[patch] - verts[i]
        scale = float(np.max(np.abs(d))) or 1.0
        d = d / scale
        V = np.column_stack([np.ones(len(patch)), d[:, 0], d[:, 1], d[:, 0] ** 2, d[:, 0] * d[:, 1], d[:, 1] ** 2])
        pinv = np.linalg.pinv(V)
        rows.append(np.full(patch.size, i))
        cols.append(patch)
        vx.append(pinv[1] / scale)
        vy.append(pinv[2] / scale)
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    Dx = sp.csr_matrix((np.concatenate(vx), (rows, cols)), shape=(n, n))
    Dy = sp.csr_matrix((np.concatenate(vy), (rows, cols)), shape=(n, n))
    mesh._cache["fit"] = (Dx, Dy)
    return Dx, Dy


def recover_gradient(mesh: Mesh, values) -> np.ndarray:
    """Chart partial derivatives ``(N, 2)`` by patchwise least-squares quadratic fits."""
    Dx, Dy = _fit_operator(mesh)
    values = np.asarray(values, dtype=float)
    return np.column_stack([Dx @ values, Dy @ values])


def recover_hessian(mesh: Mesh, grad) -> np.ndarray:
    """Symmetrised chart Hessian ``(N, 2, 2)`` from a second recovery pass on the gradient."""
    Dx, Dy = _fit_operator(mesh)
    H = np.stack([np.column_stack([Dx @ grad[:, j], Dy @ grad[:, j]]) for j in range(2)], axis=1)
    return 0.5 * (H + H.transpose(0, 2, 1))


def metric_norm(metric: Metric, x, covector) -> np.ndarray:
    ginv = np.linalg.inv(metric(x))
    return np.sqrt(np.einsum("ni,nij,nj->n", covector, ginv, covector))


# ---------------------------------------------------------------------------
# frame conversion for model charts


def frame_derivatives(model: WarpedModel, x, grad_chart, hess_chart):
    """Convert chart gradient/Hessian to the orthonormal (radial, angular) frame of the model.

    With ``u_theta = rho u_tau`` and warped metric ``dr^2 + phi^2 dtheta^2``,
    ``H_rr = u_rr``, ``H_r theta = (u_r theta - phi'/phi u_theta)/phi`` and
    ``H_theta theta = (u_theta theta + phi phi' u_r)/phi^2``.
    """
    prof = model.profile
    x = np.atleast_2d(x)
    rho = np.linalg.norm(x, axis=1)
    pole = rho < 1e-12
    safe = np.where(pole, 1.0, rho)
    omega = np.where(pole[:, None], np.array([1.0, 0.0]), x / safe[:, None])
    tau = np.column_stack([-omega[:, 1], omega[:, 0]])
    phi = prof.phi(safe)
    dphi = prof.dphi(safe)
    u_r = np.sum(omega * grad_chart, axis=1)
    u_tau = np.sum(tau * grad_chart, axis=1)
    u_rr = np.einsum("ni,nij,nj->n", omega, hess_chart, omega)
    u_rt = u_tau + safe * np.einsum("ni,nij,nj->n", omega, hess_chart, tau)
    u_tt = safe ** 2 * np.einsum("ni,nij,nj->n", tau, hess_chart, tau) - safe * u_r
    u_theta = safe * u_tau
    h_rr = u_rr
    h_rt = (u_rt - dphi / phi * u_theta) / phi
    h_tt = (u_tt + phi * dphi * u_r) / phi ** 2
    grad = u_r[:, None] * omega + (u_theta / phi)[:, None] * tau
    oo = omega[:, :, None] * omega[:, None, :]
    ot = omega[:, :, None] * tau[:, None, :]
    tt = tau[:, :, None] * tau[:, None, :]
    hess = h_rr[:, None, None] * oo + h_rt[:, None, None] * (ot + ot.transpose(0, 2, 1)) + h_tt[:, None, None] * tt
    grad = np.where(pole[:, None], grad_chart, grad)
    hess = np.where(pole[:, None, None], hess_chart, hess)
    return grad, hess


# ---------------------------------------------------------------------------
# Neumann solve


@dataclass
class NeumannSolution:
    u: np.ndarray
    multiplier: float
    residual: float


def solve_neumann(mesh: Mesh, asm: Assembly, coeff_nodes, source_nodes, flux_nodes) -> NeumannSolution:
    """Solve ``int c grad u . grad v = int_dD flux v - int source v`` with ``int u = 0``."""
    K = stiffness(mesh, asm, coeff_nodes)
    rhs = asm.boundary_mass @ flux_nodes - asm.mass @ source_nodes
    c = np.asarray(asm.mass.sum(axis=1)).ravel()
    A = sp.bmat([[K, sp.csr_matrix(c[:, None])], [sp.csr_matrix(c[None, :]), None]], format="csc")
    b = np.concatenate([rhs, [0.0]])
    sol = spsolve(A, b)
    if not np.all(np.isfinite(sol)):
        raise MeshError("singular Neumann system")
    res = float(np.linalg.norm(A @ sol - b) / max(np.linalg.norm(b), 1e-300))
    return NeumannSolution(sol[:-1], float(sol[-1]), res)


# ---------------------------------------------------------------------------
# potentials on model charts


def _mesh_of(D: GeoDomain) -> Mesh:
    if D.kind != "meshed_region":
        raise ValueError("domain is not meshed")
    return D.mesh


def _assembly(mesh: Mesh, model: WarpedModel) -> Assembly:
    key = ("asm", model.profile.name, tuple(sorted(model.profile.params.items())))
    if key not in mesh._cache:
        metric = euclidean_metric if model.is_euclidean else model_metric(model)
        mesh._cache[key] = assemble(mesh, metric)
    return mesh._cache[key]


def _metric(model: WarpedModel) -> Metric:
    return euclidean_metric if model.is_euclidean else model_metric(model)


def density_nodes(f: DensityField, D: GeoDomain):
    """Nodal values of ``f`` and of ``|grad f|`` from the recovered gradient."""
    mesh = _mesh_of(D)
    vals = f.at_points(mesh.vertices)
    if np.any(vals <= 0):
        raise DensityError("density must be positive at every node")
    grad = recover_gradient(mesh, vals)
    return vals, metric_norm(_metric(D.model), mesh.vertices, grad), grad


def mesh_integrals(f: DensityField, D: GeoDomain) -> DomainIntegrals:
    mesh = _mesh_of(D)
    asm = _assembly(mesh, D.model)
    vals, gnorm, _ = density_nodes(f, D)
    one = np.ones_like(vals)
    return DomainIntegrals(float(one @ (asm.mass @ gnorm)), float(one @ (asm.boundary_mass @ vals)),
                           float(one @ (asm.mass @ vals ** 2)), float(one @ (asm.mass @ one)), 2)


class MeshPotential(PotentialSolution):
    """Nodal P1 potential with recovered gradient and Hessian."""

    def __init__(self, model, density, domain, u, grad_chart, hess_chart, residual_interior,
                 residual_neumann, multiplier):
        self.model = model
        self.density = density
        self.domain = domain
        self.mesh = domain.mesh
        self.h = self.mesh.h
        self.u = u
        self.grad_chart = grad_chart
        self.hess_chart = hess_chart
        self.residual_interior = residual_interior
        self.residual_neumann = residual_neumann
        self.multiplier = multiplier
        self.grad_frame, self.hess_frame = frame_derivatives(model, self.mesh.vertices, grad_chart, hess_chart)

    def _locate(self, x):
        """Triangle index and barycentric coordinates of chart points."""
        mesh = self.mesh
        if "tree" not in mesh._cache:
            P = mesh.vertices[mesh.triangles]
            mesh._cache["tree"] = cKDTree(P.mean(axis=1))
        tree = mesh._cache["tree"]
        x = np.atleast_2d(np.asarray(x, dtype=float))
        k = min(12, mesh.triangles.shape[0])
        _, cand = tree.query(x, k=k)
        cand = np.atleast_2d(cand)
        P = mesh.vertices[mesh.triangles[cand]]          # (N, k, 3, 2)
        T = np.stack([P[:, :, 1] - P[:, :, 0], P[:, :, 2] - P[:, :, 0]], axis=3)
        lam12 = np.linalg.solve(T, (x[:, None, :] - P[:, :, 0])[..., None])[..., 0]
        bary = np.concatenate([1 - lam12.sum(axis=2, keepdims=True), lam12], axis=2)
        worst = bary.min(axis=2)
        best = np.argmax(worst, axis=1)
        idx = np.arange(x.shape[0])
        return cand[idx, best], bary[idx, best]

    def _interp(self, nodal, x):
        tri, bary = self._locate(x)
        vals = nodal[self.mesh.triangles[tri]]
        return np.einsum("nk,nk...->n...", bary, vals)

    def value(self, x):
        return self._interp(self.u, x)

    def gradient(self, x):
        x = np.atleast_2d(x)
        g, _ = frame_derivatives(self.model, x, self._interp(self.grad_chart, x), self._interp(self.hess_chart, x))
        return g

    def hessian(self, x):
        x = np.atleast_2d(x)
        _, H = frame_derivatives(self.model, x, self._interp(self.grad_chart, x), self._interp(self.hess_chart, x))
        return H


def solve_mesh(f: DensityField, D: GeoDomain) -> MeshPotential:
    """P1 solve of the normalized Neumann problem on a meshed region of a 2-d model."""
    mesh = _mesh_of(D)
    if D.dim != 2:
        raise ValueError("mesh solver supports n = 2 only")
    _check_quality(mesh)
    ints = mesh_integrals(f, D)
    if abs(ints.compatibility) > 1e-6 * ints.A:
        raise DensityError(f"unnormalized density: A - nB = {ints.compatibility:.3e}")
    asm = _assembly(mesh, D.model)
    vals, gnorm, _ = density_nodes(f, D)
    source = 2.0 * vals ** 2 - gnorm
    sol = solve_neumann(mesh, asm, vals, source, vals)
    grad = recover_gradient(mesh, sol.u)
    hess = recover_hessian(mesh, grad)
    pot = MeshPotential(D.model, f, D, sol.u, grad, hess, sol.residual, 0.0, sol.multiplier)
    pot.residual_neumann = neumann_residual(pot)
    return pot


def neumann_residual(pot: MeshPotential) -> float:
    """Boundary-weighted RMS of ``<grad u, eta> - 1`` with recovered gradients."""
    mesh = pot.mesh
    metric = _metric(pot.model)
    edges = mesh.boundary_edges
    nodes = mesh.boundary_nodes
    # outward conormal at each boundary node: average of adjacent edge normals, unit in G
    normal = np.zeros_like(mesh.vertices)
    t = mesh.vertices[edges[:, 1]] - mesh.vertices[edges[:, 0]]
    out = np.column_stack([t[:, 1], -t[:, 0]])
    np.add.at(normal, edges[:, 0], out)
    np.add.at(normal, edges[:, 1], out)
    x = mesh.vertices[nodes]
    G = metric(x)
    # eta = G^{-1} nu / |nu|_{G^{-1}} for the covector nu normal to the boundary
    nu = normal[nodes]
    ginv = np.linalg.inv(G)
    eta = np.einsum("nij,nj->ni", ginv, nu)
    eta /= np.sqrt(np.einsum("ni,ni->n", nu, eta))[:, None]
    flux = np.einsum("ni,ni->n", pot.grad_chart[nodes], eta)
    return float(np.sqrt(np.mean((flux - 1.0) ** 2)))
