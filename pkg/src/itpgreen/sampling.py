"""Neumann-to-Dirichlet maps and linear sampling for a 1-D conductor.

The conductor occupies ``omega = (a, b)``. Its diffusivity is
``gamma = 1 + (k - 1) chi_D`` for an inclusion ``D``. Fluxes
``g = gamma d_nu u`` are prescribed at both ends, and the endpoint
temperatures are recorded.

Space uses a vertex-centred, flux-conservative stencil. Face diffusivities are
taken at cell midpoints and the mass matrix is lumped. Time stepping is
Crank-Nicolson. Boundary-time data live on the time nodes ``t_1..t_N``, and the
flux is piecewise linear in time with ``g(0) = 0``. Traces are reported on
the same nodes. Columns are ordered ``(node j, end e)`` with the end index
varying fastest.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigurationError, GeometryError, GridError
from .geometry import as_contrast
from .refsolver import ITPSystem, Mesh, green_column, mollifier

__all__ = [
    "Conductor",
    "NDMap",
    "GapOperator",
    "GapSolution",
    "IndicatorField",
    "forward_nd",
    "nd_map",
    "gap_operator",
    "green_omega",
    "gap_solve",
    "indicator_scan",
    "psol_identity_check",
]


class Conductor:
    """Discrete heat conductor ``u_t = (gamma u_x)_x`` with Neumann ends."""

    def __init__(self, n: int, dt: float, T: float, k: float = 1.0,
                 inclusion: Optional[tuple[float, float]] = None,
                 omega: tuple[float, float] = (0.0, 1.0)) -> None:
        a, b = map(float, omega)
        self.mesh = Mesh(n, T, dt, a, b)
        self.inclusion = None if inclusion is None else tuple(map(float, inclusion))
        if self.inclusion is not None:
            c, d = self.inclusion
            k = as_contrast(k)
            if not (a < c < d < b):
                raise GeometryError(f"inclusion {self.inclusion} must lie strictly inside {omega}")
            if min(c - a, b - d) < 2 * self.mesh.h:
                raise GeometryError("inclusion touches the outer boundary at this resolution")
        self.k = float(k)
        h = self.mesh.h
        x = self.mesh.x
        mid = 0.5 * (x[1:] + x[:-1])
        gam = np.ones(n)
        if self.inclusion is not None:
            gam[(mid > self.inclusion[0]) & (mid < self.inclusion[1])] = self.k
        self.gamma_faces = gam
        main = np.zeros(n + 1)
        main[:-1] += gam
        main[1:] += gam
        self.A = sp.diags([-gam, main, -gam], [-1, 0, 1], format="csc") / h
        self.mass = np.full(n + 1, h)
        self.mass[[0, -1]] = 0.5 * h
        M = sp.diags(self.mass, format="csc")
        self._lhs = spla.splu((M + 0.5 * dt * self.A).tocsc())
        self._rhs = (M - 0.5 * dt * self.A).tocsr()
        self._euler = spla.splu((M + 0.25 * dt * self.A).tocsc())

    @property
    def N(self) -> int:
        return self.mesh.nt

    def _flux_vec(self, g: np.ndarray) -> np.ndarray:
        f = np.zeros(self.mesh.n + 1)
        f[0], f[-1] = g[0], g[1]
        return f

    def solve_flux(self, g: np.ndarray) -> np.ndarray:
        """Full field for flux samples ``g`` of shape ``(N + 1, 2)`` on the time grid."""
        g = np.asarray(g, float)
        if g.shape != (self.N + 1, 2):
            raise GridError(f"flux data must have shape {(self.N + 1, 2)}, got {g.shape}")
        dt = self.mesh.dt
        U = np.zeros((self.N + 1, self.mesh.n + 1))
        u = U[0]
        for j in range(self.N):
            rhs = self._rhs @ u + 0.5 * dt * self._flux_vec(g[j] + g[j + 1])
            u = self._lhs.solve(rhs)
            U[j + 1] = u
        return U

    def solve_initial(self, u0: np.ndarray, start: int) -> np.ndarray:
        """Field for the initial state ``u0`` at time node ``start``, zero before it."""
        dt = self.mesh.dt
        U = np.zeros((self.N + 1, self.mesh.n + 1))
        U[start] = u0
        u = np.asarray(u0, float)
        for j in range(start, self.N):
            if j == start:
                # two implicit half steps smooth the rough start
                u = self._euler.solve(self.mass * u)
                u = self._euler.solve(self.mass * u)
            else:
                u = self._lhs.solve(self._rhs @ u)
            U[j + 1] = u
        return U


def forward_nd(omega: tuple[float, float], inclusion: Optional[tuple[float, float]], k: float,
               g: np.ndarray, n: int = 200, dt: float = 1e-3) -> np.ndarray:
    """Endpoint temperatures ``(N + 1, 2)`` for the flux history ``g`` of shape ``(N + 1, 2)``.

    ``g[0]`` must vanish because the initial state is zero.
    """
    g = np.asarray(g, float)
    if g.ndim != 2 or g.shape[1] != 2:
        raise GridError("flux data must have shape (N + 1, 2)")
    if np.any(g[0] != 0):
        raise ConfigurationError("flux must vanish at t = 0 to match the zero initial state")
    T = dt * (g.shape[0] - 1)
    cond = Conductor(n, dt, T, k, inclusion, omega)
    return cond.solve_flux(g)[:, [0, -1]]


@dataclass
class NDMap:
    """Neumann-to-Dirichlet matrix on the boundary-time nodes ``t_1..t_N``."""

    matrix: np.ndarray
    times: np.ndarray
    boundary: tuple[float, float]

    def apply(self, g: np.ndarray) -> np.ndarray:
        """Map flux samples ``(N, 2)`` to trace samples ``(N, 2)``."""
        g = np.asarray(g, float)
        return (self.matrix @ g.reshape(-1)).reshape(g.shape)

    def __sub__(self, other: "NDMap") -> "GapOperator":
        if self.matrix.shape != other.matrix.shape or not np.array_equal(self.times, other.times):
            raise GridError("ND maps live on different boundary-time grids")
        return GapOperator(self.matrix - other.matrix, self.times, self.boundary)


@dataclass
class GapOperator(NDMap):
    """``Lambda_D - Lambda_empty``."""

    _svd: Optional[tuple] = None

    def svd(self):
        """Cached SVD. The ``sqrt(dt)`` weights cancel because both sides use them."""
        if self._svd is None:
            self._svd = np.linalg.svd(self.matrix)
        return self._svd


def nd_map(cond: Conductor, workers: int = 1, direct: bool = False) -> NDMap:
    """Assemble the ND matrix of ``cond``.

    The discrete map is invariant under time shifts, so one impulse response
    per end determines every column. ``direct=True`` instead runs one forward
    solve per basis vector, which is slow and only meant for cross-checks.
    """
    N = cond.N
    mat = np.zeros((2 * N, 2 * N))

    def impulse(j: int, e: int) -> np.ndarray:
        g = np.zeros((N + 1, 2))
        g[j, e] = 1.0
        return cond.solve_flux(g)[1:, [0, -1]]

    if direct:
        cols = [(j, e) for j in range(1, N + 1) for e in (0, 1)]
        with ThreadPoolExecutor(max(1, workers)) as ex:
            for (j, e), r in zip(cols, ex.map(lambda c: impulse(*c), cols)):
                mat[:, 2 * (j - 1) + e] = r.reshape(-1)
    else:
        for e in (0, 1):
            r = impulse(1, e).reshape(-1)
            for j in range(N):
                mat[2 * j:, 2 * j + e] = r[:2 * (N - j)]
    return NDMap(mat, cond.mesh.times[1:], (cond.mesh.a, cond.mesh.b))


def gap_operator(n: int, dt: float, T: float, k: float, inclusion: Optional[tuple[float, float]],
                 omega: tuple[float, float] = (0.0, 1.0), workers: int = 1) -> GapOperator:
    background = nd_map(Conductor(n, dt, T, 1.0, None, omega), workers)
    if inclusion is None:
        return background - background
    return nd_map(Conductor(n, dt, T, k, inclusion, omega), workers) - background


def green_omega(cond: Conductor, y: float, s: float, eps: Optional[float] = None,
                field: bool = False) -> np.ndarray:
    """Boundary trace ``(N, 2)`` of the Neumann heat Green function with mollified source.

    With ``field=True`` the full space-time field ``(N + 1, n + 1)`` is returned.
    """
    mesh = cond.mesh
    if not (mesh.a < y < mesh.b):
        raise GeometryError(f"source point {y} is not interior to the conductor")
    start = int(round(s / mesh.dt))
    if abs(start * mesh.dt - s) > 1e-9 * mesh.dt or not (0 <= start < cond.N):
        raise GridError(f"source time {s} is not an interior time node")
    eps = 3.0 * mesh.h if eps is None else eps
    background = Conductor(mesh.n, mesh.dt, mesh.T, 1.0, None, (mesh.a, mesh.b))
    U = background.solve_initial(mollifier(mesh, y, eps), start)
    return U if field else U[1:, [0, -1]]


@dataclass
class GapSolution:
    g: np.ndarray
    residual: float
    rhs_norm: float
    alpha: float

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.g))


def gap_solve(op: GapOperator, rhs: np.ndarray, alpha: float, dt: float) -> GapSolution:
    """Tikhonov solution of ``op g = rhs`` in the ``sqrt(dt)``-weighted norm.

    ``alpha`` multiplies the identity in the normal equations. Norms of ``g``
    and of the residual include the time weight.
    """
    if alpha < 0:
        raise ConfigurationError("alpha must be non-negative")
    b = np.asarray(rhs, float).reshape(-1)
    w = np.sqrt(dt)
    if not np.any(op.matrix):
        return GapSolution(np.zeros_like(np.asarray(rhs, float)), float(w * np.linalg.norm(b)),
                           float(w * np.linalg.norm(b)), alpha)
    U, S, Vt = op.svd()
    if alpha == 0 and S[-1] <= S[0] * S.size * np.finfo(float).eps:
        raise ConfigurationError("alpha = 0 with a rank-deficient gap operator")
    c = U.T @ b
    filt = S / (S * S + alpha) if alpha > 0 else 1.0 / S
    g = Vt.T @ (filt * c)
    res = op.matrix @ g - b
    return GapSolution(g.reshape(np.shape(rhs)), float(w * np.linalg.norm(res)),
                       float(w * np.linalg.norm(b)), alpha)


@dataclass
class IndicatorField:
    probes: np.ndarray
    s: float
    alphas: np.ndarray
    values: np.ndarray          # (n_alpha, n_probe)
    estimate: Optional[tuple[float, float]] = None

    def rows(self):
        for i, a in enumerate(self.alphas):
            for y, v in zip(self.probes, self.values[i]):
                yield float(y), self.s, float(a), float(v)


def _steepest_contour(probes: np.ndarray, values: np.ndarray) -> Optional[tuple[float, float]]:
    """Endpoints of the low region of ``log values`` bounded by its steepest rise."""
    if not np.all(values > 0):
        return None
    lv = np.log(values)
    if np.ptp(lv) < 1e-8:
        return None
    mids = 0.5 * (probes[1:] + probes[:-1])
    slope = np.diff(lv) / np.diff(probes)
    lo = int(np.argmin(lv))
    left = slope[:lo] if lo > 0 else None
    right = slope[lo:] if lo < slope.size else None
    xl = mids[int(np.argmin(left))] if left is not None and left.size else probes[0]
    xr = mids[lo + int(np.argmax(right))] if right is not None and right.size else probes[-1]
    return float(xl), float(xr)


def indicator_scan(op: GapOperator, cond: Conductor, probes: Sequence[float], s: float,
                   alphas: Sequence[float], eps: Optional[float] = None,
                   workers: int = 1) -> IndicatorField:
    """``||g_{y,s,alpha}||`` for every probe and ``alpha``.

    ``D`` is estimated from the smallest ``alpha``. Its endpoints sit where the
    log indicator rises fastest on either side of its minimum.
    """
    probes = np.asarray(probes, float)
    alphas = np.asarray(alphas, float)
    dt = cond.mesh.dt
    with ThreadPoolExecutor(max(1, workers)) as ex:
        rhs = list(ex.map(lambda y: green_omega(cond, y, s, eps), probes))
    vals = np.array([[gap_solve(op, r, a, dt).norm * np.sqrt(dt) for r in rhs] for a in alphas])
    est = _steepest_contour(probes, vals[int(np.argmin(alphas))])
    return IndicatorField(probes, s, alphas, vals, est)


def psol_identity_check(cond: Conductor, y: float, s: float, g: np.ndarray,
                        eps: Optional[float] = None, margin: float = 0.05) -> dict:
    """Compare the flux response of ``g`` with ``G^D - G^Omega`` inside ``D``.

    ``G^D`` is the first-field entry of the interior transmission Green column
    with its source in the unit-diffusivity row, or zero when ``y`` lies
    outside ``D``. Returns absolute and relative
    max deviations over ``D`` shrunk by ``margin`` and times after ``s``.
    """
    if cond.inclusion is None:
        if np.any(g):
            raise GeometryError("identity check needs an inclusion")
        return {"deviation": 0.0, "scale": 0.0, "relative": 0.0}
    mesh = cond.mesh
    c, d = cond.inclusion
    eps = 3.0 * mesh.h if eps is None else eps
    gfull = np.vstack([np.zeros((1, 2)), np.asarray(g, float).reshape(-1, 2)])
    background = Conductor(mesh.n, mesh.dt, mesh.T, 1.0, None, (mesh.a, mesh.b))
    v = background.solve_flux(gfull)
    GO = green_omega(cond, y, s, eps, field=True)
    i0, i1 = int(round((c - mesh.a) / mesh.h)), int(round((d - mesh.a) / mesh.h))
    if not (np.isclose(mesh.a + i0 * mesh.h, c) and np.isclose(mesh.a + i1 * mesh.h, d)):
        raise GridError("inclusion endpoints must be mesh nodes for the identity check")
    sub = Mesh(i1 - i0, mesh.T, mesh.dt, c, d)
    if c < y < d:
        GD = green_column(ITPSystem(sub, cond.k), 1, y, s, eps).G
    else:
        GD = np.zeros((mesh.nt + 1, sub.n + 1))  # no source inside D
    xs = mesh.x[i0:i1 + 1]
    inner = (xs >= c + margin) & (xs <= d - margin)
    late = mesh.times > s + 1e-12
    target = (GD - GO[:, i0:i1 + 1])[np.ix_(late, inner)]
    got = v[:, i0:i1 + 1][np.ix_(late, inner)]
    dev = float(np.abs(got - target).max())
    scale = float(np.abs(target).max())
    return {"deviation": dev, "scale": scale, "relative": dev / scale if scale > 0 else np.inf}
