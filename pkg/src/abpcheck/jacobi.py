"""Matrix Jacobi fields ``P'' = -P S`` and the comparison quantities built on them.

Rows of ``P`` are Jacobi fields written in a parallel orthonormal frame.  In
the block case the last ``m`` rows start at zero with unit derivative, so
``P`` degenerates like ``t`` in those rows.  We integrate the rescaled matrix
``Pt = diag(1, .., 1, 1/t, .., 1/t) P`` instead, which is regular at the
origin; then ``det P = t^m det Pt`` and ``tr Q = m/t + tr(Pt^{-1} Pt')``, so
the ``m/t`` singularity is handled analytically rather than by cancellation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import simpson, solve_ivp
from scipy.optimize import brentq, minimize_scalar

from .geodesy import ODE_ATOL, ODE_RTOL, REPORT_SAMPLES

BLOCK_START = 1e-6
MARGIN_TOL = 1e-8
MONOTONE_TOL = 1e-8


class ConjugatePointError(RuntimeError):
    def __init__(self, message, t_conjugate):
        super().__init__(message)
        self.t_conjugate = t_conjugate


@dataclass
class CurvatureCurve:
    """Curvature matrix ``S(t)`` on ``[0, t_max]``, independent of any geodesic.

    Geodesics expose the same interface (``t``, ``curvature_matrix``), so
    Jacobi propagation accepts either.
    """

    func: Callable[[float], np.ndarray]
    dim: int
    t: np.ndarray

    @property
    def t_max(self) -> float:
        return float(self.t[-1])

    def curvature_matrix(self, t) -> np.ndarray:
        return np.asarray(self.func(float(t)), dtype=float)

    @property
    def S(self) -> np.ndarray:
        return np.stack([self.curvature_matrix(t) for t in self.t])


def constant_curvature(kappa: float, dim: int, t_max: float, samples: int = REPORT_SAMPLES) -> CurvatureCurve:
    S = kappa * np.eye(dim)
    return CurvatureCurve(lambda _t: S, dim, np.linspace(0.0, t_max, samples))


def random_psd_curvature(rng: np.random.Generator, dim: int, t_max: float, scale: float = 1.0,
                         samples: int = REPORT_SAMPLES) -> CurvatureCurve:
    """Smooth random ``S(t) = A(t) A(t)^T`` with ``A`` a trigonometric polynomial in ``t``."""
    coeffs = rng.normal(size=(3, dim, dim)) * np.sqrt(scale / dim)
    freq = rng.uniform(0.5, 3.0) / t_max

    def S(t):
        A = coeffs[0] + np.sin(freq * t) * coeffs[1] + (t / t_max) * coeffs[2]
        return A @ A.T

    return CurvatureCurve(S, dim, np.linspace(0.0, t_max, samples))


def _scale_rows(k, m, t):
    d = np.ones(k)
    d[k - m:] = t
    return d


@dataclass
class JacobiSystem:
    """Sampled solution of ``P'' = -P S`` with its rescaled representation.

    ``Pt`` and ``dPt`` are the rescaled matrix and its derivative on the grid
    ``t``.  ``conjugate_time`` is set when the run was truncated at a
    conjugate point.
    """

    t: np.ndarray
    Pt: np.ndarray
    dPt: np.ndarray
    S: np.ndarray
    block_dims: tuple[int, int]
    conjugate_time: float | None = None
    _dense: object = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.Pt.shape[1]

    def _row_scale(self):
        n, m = self.block_dims
        return np.stack([_scale_rows(n + m, m, t) for t in self.t])

    @property
    def P(self) -> np.ndarray:
        return self._row_scale()[:, :, None] * self.Pt

    @property
    def Pprime(self) -> np.ndarray:
        n, m = self.block_dims
        E = np.zeros(n + m)
        E[n:] = 1.0
        return E[None, :, None] * self.Pt + self._row_scale()[:, :, None] * self.dPt

    def det(self) -> np.ndarray:
        return self.t ** self.block_dims[1] * np.linalg.det(self.Pt)

    def scaled_det(self) -> np.ndarray:
        """``t^{-m} det P``, finite and equal to one at ``t = 0``."""
        return np.linalg.det(self.Pt)

    def reduced_trace(self) -> np.ndarray:
        """``tr Q - m/t``, the regular part of the trace of ``Q = P^{-1} P'``."""
        return np.trace(np.linalg.solve(self.Pt, self.dPt), axis1=1, axis2=2)

    def Q(self) -> np.ndarray:
        """``P^{-1} P'`` at samples with ``t > 0`` (rows for ``t = 0`` are NaN in the block case)."""
        n, m = self.block_dims
        out = np.linalg.solve(self.Pt, self.dPt)
        if m:
            E = np.zeros((n + m, n + m))
            E[n:, n:] = np.eye(m)
            with np.errstate(divide="ignore", invalid="ignore"):
                extra = np.linalg.solve(self.Pt, E @ self.Pt) / self.t[:, None, None]
            out = out + extra
        return out

    def symmetry_residual(self) -> float:
        """Max of ``|P' P^T - P P'^T|``; zero for admissible initial data."""
        P, dP = self.P, self.Pprime
        M = dP @ np.swapaxes(P, 1, 2)
        return float(np.max(np.abs(M - np.swapaxes(M, 1, 2))))

    def ode_residual(self, h: float | None = None) -> float:
        """Residual of the rescaled equation ``Pt'' + Pt S + (2/t) E Pt' = 0``.

        ``Pt''`` comes from central differences of the dense derivative, so
        the value also contains an ``O(h^2)`` differencing error.
        """
        if self._dense is None:
            return 0.0
        n, m = self.block_dims
        k = n + m
        h = h or 1e-4 * max(self.t[-1], 1e-12)
        E = np.zeros(k)
        E[n:] = 1.0
        worst = 0.0
        for t, S in zip(self.t[2:-2:8], self.S[2:-2:8]):
            lo, mid, hi = (self._dense(t + j * h) for j in (-1, 0, 1))
            ddPt = (hi[k * k:] - lo[k * k:]).reshape(k, k) / (2 * h)
            Pt = mid[:k * k].reshape(k, k)
            res = ddPt + Pt @ S
            if m:
                res = res + (2.0 / t) * E[:, None] * mid[k * k:].reshape(k, k)
            worst = max(worst, float(np.max(np.abs(res))))
        return worst

    def truncated(self, t_end: float) -> "JacobiSystem":
        keep = self.t < t_end
        return JacobiSystem(self.t[keep], self.Pt[keep], self.dPt[keep], self.S[keep],
                            self.block_dims, t_end, self._dense)


def _initial_rescaled(P0, dP0, S0, n, m, t):
    """Rescaled data at parameter ``t`` from the Taylor expansion of ``P`` at zero."""
    P2 = -P0 @ S0
    P3 = -dP0 @ S0
    Pt = P0 + t * dP0 + 0.5 * t * t * P2
    dPt = dP0 + t * P2
    if m:
        # block rows: P = t dP0 + t^3/6 P3 + ...  (their P0 and P2 rows vanish)
        Pt[n:] = dP0[n:] + t * t / 6.0 * P3[n:]
        dPt[n:] = t / 3.0 * P3[n:]
    return Pt, dPt


def propagate_jacobi(P0, dP0, curve, block_dims: tuple[int, int] | None = None,
                     on_conjugate: str = "raise", rtol: float = ODE_RTOL,
                     atol: float = ODE_ATOL) -> JacobiSystem:
    """Integrate ``P'' = -P S(t)`` along ``curve`` from ``P(0) = P0``, ``P'(0) = dP0``.

    ``block_dims = (n, m)`` marks the last ``m`` rows as fields vanishing at
    the start (their ``P0`` rows must be zero).  When ``det P`` reaches zero
    inside the interval a :class:`ConjugatePointError` is raised, or with
    ``on_conjugate="truncate"`` the system is cut at the first conjugate time.
    """
    P0 = np.asarray(P0, dtype=float)
    dP0 = np.asarray(dP0, dtype=float)
    k = P0.shape[0]
    if P0.shape != (k, k) or dP0.shape != (k, k):
        raise ValueError("initial data must be square matrices of equal size")
    n, m = block_dims if block_dims is not None else (k, 0)
    if n + m != k:
        raise ValueError(f"block dims {n}+{m} do not match matrix size {k}")
    if m and np.any(P0[n:] != 0.0):
        raise ValueError("block rows of P(0) must vanish")
    if on_conjugate not in ("raise", "truncate"):
        raise ValueError("on_conjugate must be 'raise' or 'truncate'")

    grid = np.asarray(curve.t, dtype=float)
    t_max = float(grid[-1])
    S0 = curve.curvature_matrix(0.0)
    t_start = min(BLOCK_START, 0.5 * grid[1]) if m else 0.0
    Pt0, dPt0 = _initial_rescaled(P0, dP0, S0, n, m, t_start)
    E = np.zeros(k)
    E[n:] = 1.0

    def rhs(t, y):
        Pt = y[:k * k].reshape(k, k)
        dPt = y[k * k:].reshape(k, k)
        dd = -Pt @ curve.curvature_matrix(t)
        if m:
            dd = dd - (2.0 / t) * E[:, None] * dPt
        return np.concatenate([dPt.ravel(), dd.ravel()])

    sol = solve_ivp(rhs, (t_start, t_max), np.concatenate([Pt0.ravel(), dPt0.ravel()]),
                    method="RK45", rtol=rtol, atol=atol, dense_output=True)
    if not sol.success:
        raise RuntimeError(f"Jacobi integration failed: {sol.message}")

    y = sol.sol(np.maximum(grid, t_start))
    Pt = y[:k * k].T.reshape(-1, k, k)
    dPt = y[k * k:].T.reshape(-1, k, k)
    if m:
        Pt[0], dPt[0] = _initial_rescaled(P0, dP0, S0, n, m, 0.0)
    S = np.stack([curve.curvature_matrix(t) for t in grid])
    system = JacobiSystem(grid, Pt, dPt, S, (n, m), None, sol.sol)

    t_conj = _first_conjugate(system, sol.sol, k, t_start)
    if t_conj is None:
        return system
    if on_conjugate == "raise":
        raise ConjugatePointError(f"conjugate point at t = {t_conj:.12g}", t_conj)
    return system.truncated(t_conj)


def _first_conjugate(system, dense, k, t_start):
    """First zero of ``det Pt``: sign changes refined by bisection, touching zeros by minimisation."""
    t = system.t
    det = np.linalg.det(system.Pt)

    def det_at(s):
        return float(np.linalg.det(dense(max(s, t_start))[:k * k].reshape(k, k)))

    scale = max(1.0, float(np.max(np.abs(det))))
    for i in range(1, t.size):
        if det[i] <= 0.0:
            if det[i] == 0.0:
                return float(t[i])
            return float(brentq(det_at, t[i - 1], t[i], xtol=1e-14))
        # an even-multiplicity zero touches without changing sign
        if 1 < i < t.size - 1 and det[i] < det[i - 1] and det[i] <= det[i + 1]:
            res = minimize_scalar(det_at, bounds=(t[i - 1], t[i + 1]), method="bounded",
                                  options={"xatol": 1e-12})
            if res.fun <= 1e-12 * scale:
                return float(res.x)
    return None


@dataclass
class TraceReport:
    margin: float
    t_at_margin: float
    initial_trace: float
    bound: np.ndarray
    trace: np.ndarray

    @property
    def passed(self) -> bool:
        return self.margin >= -MARGIN_TOL


def riccati_trace_bound(system: JacobiSystem, c: float) -> TraceReport:
    """Minimum over samples of ``n c/(1 + t c) + m/t - tr Q(t)``.

    The ``m/t`` terms cancel exactly in the rescaled representation, so the
    margin is computed from the regular part of the trace.
    """
    n, m = system.block_dims
    tr = system.reduced_trace()
    if tr[0] > n * c + MARGIN_TOL * max(1.0, abs(n * c)):
        raise ValueError(f"initial trace {tr[0]:.6g} exceeds n c = {n * c:.6g}")
    bound = n * c / (1.0 + system.t * c)
    gap = bound - tr
    i = int(np.argmin(gap))
    with np.errstate(divide="ignore"):
        pole = m / system.t if m else 0.0
    return TraceReport(float(gap[i]), float(system.t[i]), float(tr[0]), bound + pole, tr + pole)


@dataclass
class MonotonicityReport:
    max_increase: float
    rho: np.ndarray

    @property
    def passed(self) -> bool:
        return self.max_increase <= MONOTONE_TOL


def jacobian_ratio_monotone(system: JacobiSystem, c: float) -> MonotonicityReport:
    """Largest forward increase of ``t^{-m} (1 + t c)^{-n} det P(t)``, relative to its value at ``0+``."""
    n, _ = system.block_dims
    det = system.scaled_det()
    if np.any(det[1:] <= 0.0):
        raise ValueError("det P must stay positive on the sample grid")
    rho = (1.0 + system.t * c) ** (-n) * det
    inc = np.max(np.diff(rho), initial=-np.inf)
    return MonotonicityReport(float(inc / rho[0]), rho)


@dataclass
class GridRow:
    """One sample of a Jacobi system, the plot-ready form written to CSV."""

    t: float
    det_P: float
    rho: float
    tr_Q: float


def grid_rows(system: JacobiSystem, c: float) -> list[GridRow]:
    """``t``, ``det P``, the normalised ratio ``t^{-m} (1 + t c)^{-n} det P`` and ``tr Q`` on the report grid."""
    n, m = system.block_dims
    det = system.det()
    rho = (1.0 + system.t * c) ** (-n) * system.scaled_det()
    with np.errstate(divide="ignore"):
        pole = m / system.t if m else 0.0
    trace = system.reduced_trace() + pole
    return [GridRow(float(a), float(b), float(c_), float(d)) for a, b, c_, d in zip(system.t, det, rho, trace)]


def index_form(curve, Z, hessian_term, dZ=None) -> float:
    """``hessian_term(Z(0), Z(0)) + int (|D_t Z|^2 - <S Z, Z>) dt`` on the curve's grid.

    ``Z`` holds frame components of the field at each sample; ``D_t Z`` is
    their derivative since the frame is parallel.  ``hessian_term`` is a
    matrix or a callable quadratic form.
    """
    t = np.asarray(curve.t, dtype=float)
    Z = np.asarray(Z, dtype=float)
    if Z.shape[0] != t.size:
        raise ValueError(f"field has {Z.shape[0]} samples but the curve has {t.size}")
    if dZ is None:
        dZ = np.gradient(Z, t, axis=0, edge_order=2)
    elif np.shape(dZ) != Z.shape:
        raise ValueError("derivative samples do not match the field samples")
    S = curve.S
    integrand = np.sum(dZ * dZ, axis=1) - np.einsum("ni,nij,nj->n", Z, S, Z)
    z0 = Z[0]
    boundary = hessian_term(z0, z0) if callable(hessian_term) else float(z0 @ np.asarray(hessian_term) @ z0)
    return float(boundary + simpson(integrand, x=t))
