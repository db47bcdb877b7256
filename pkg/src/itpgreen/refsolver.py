"""Finite-difference reference solver for the 1-D interior transmission problem.

Two fields live on the same interval ``[a, b]``: ``v`` with unit diffusivity
and ``u`` with diffusivity ``k``. They are coupled only at the endpoints:

    v - u = 0,   d_nu v - k d_nu u = 0.

The adjoint problem runs backward in time with ``w + z = 0`` and
``d_nu w + k d_nu z = 0``. It reuses the forward machinery in the reversed
time variable ``sigma = t - s``.

Unknowns are stacked as ``[v_0..v_n, u_0..u_n]``. Boundary rows are algebraic
and use 3-point one-sided differences for the normal derivative.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigurationError, GridError
from .geometry import as_contrast

__all__ = [
    "Mesh",
    "ITPState",
    "ITPSystem",
    "DiscreteGreenColumn",
    "DiscreteGreenMatrix",
    "AdjointTrajectory",
    "mollifier",
    "trapezoid_weights",
    "step",
    "run",
    "green_column",
    "green_matrix",
    "adjoint_solve",
    "duality_pairing",
    "pairing_constancy",
    "duality_experiment",
    "bump",
    "reciprocity_check",
    "mms_problem",
    "mms_error",
]


@dataclass(frozen=True)
class Mesh:
    """Uniform mesh on ``[a, b]`` with ``n`` cells and time step ``dt`` up to ``T``."""

    n: int
    T: float = 1.0
    dt: float = 1e-3
    a: float = 0.0
    b: float = 1.0

    def __post_init__(self) -> None:
        if self.n < 8:
            raise GridError("mesh needs at least 8 cells")
        if not (self.b > self.a and self.dt > 0 and self.T > 0):
            raise GridError("mesh extents, dt and T must be positive")

    @property
    def h(self) -> float:
        return (self.b - self.a) / self.n

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.a, self.b, self.n + 1)

    @property
    def nt(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.nt + 1)

    def boundary_nodes(self) -> tuple[int, int]:
        return 0, self.n


def trapezoid_weights(n: int, h: float) -> np.ndarray:
    w = np.full(n + 1, h)
    w[0] = w[-1] = 0.5 * h
    return w


def mollifier(mesh: Mesh, y: float, eps: float) -> np.ndarray:
    """Gaussian of width ``eps`` centred at ``y``, clipped at ``6 eps``, unit grid mass."""
    if eps < 2.0 * mesh.h:
        raise GridError(f"mollifier width {eps} is below 2h = {2 * mesh.h}")
    x = mesh.x
    g = np.exp(-0.5 * ((x - y) / eps) ** 2)
    g[np.abs(x - y) > 6.0 * eps] = 0.0
    mass = trapezoid_weights(mesh.n, mesh.h) @ g
    if mass <= 0:
        raise GridError("mollifier has no mass on the grid")
    return g / mass


@dataclass
class ITPState:
    v: np.ndarray
    u: np.ndarray
    t: float = 0.0

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.v, self.u])


class ITPSystem:
    """Assembled block operators for one mesh, contrast and coupling sign.

    Parameters
    ----------
    mesh : Mesh
    k : float
        Diffusivity of the second field.
    adjoint : bool
        Use the adjoint coupling ``w + z = 0``, ``d_nu w + k d_nu z = 0``.
    """

    def __init__(self, mesh: Mesh, k: float, adjoint: bool = False) -> None:
        self.mesh = mesh
        self.k = as_contrast(k)
        self.adjoint = adjoint
        n, h = mesh.n, mesh.h
        m = n + 1
        main = np.full(m, -2.0)
        D2 = sp.diags([np.ones(n), main, np.ones(n)], [-1, 0, 1], format="lil") / (h * h)
        D2[0, :] = 0.0
        D2[n, :] = 0.0
        self.D2 = D2.tocsr()
        self.L = sp.block_diag([self.D2, self.k * self.D2], format="csr")
        interior = np.ones(m)
        interior[[0, n]] = 0.0
        self.interior = np.concatenate([interior, interior])
        self.C = self._boundary_rows()
        self._lu: dict = {}

    def _boundary_rows(self) -> sp.csr_matrix:
        n, h, k = self.mesh.n, self.mesh.h, self.k
        m = n + 1
        sgn = 1.0 if self.adjoint else -1.0
        C = sp.lil_matrix((2 * m, 2 * m))
        # value rows
        for i in (0, n):
            C[i, i] = 1.0
            C[i, m + i] = sgn
        # flux rows, outward normal derivative with one-sided stencils
        left = {0: 3.0, 1: -4.0, 2: 1.0}
        right = {n: 3.0, n - 1: -4.0, n - 2: 1.0}
        for row, st in ((m + 0, left), (m + n, right)):
            for j, c in st.items():
                C[row, j] += c / (2 * h)
                C[row, m + j] += sgn * k * c / (2 * h)
        return C.tocsr()

    def _factor(self, dt: float, theta: float):
        key = (round(dt / self.mesh.dt, 12), theta)
        if key not in self._lu:
            I = sp.diags(self.interior)
            A = (I - theta * dt * self.L) + self.C
            self._lu[key] = spla.splu(A.tocsc())
        return self._lu[key]

    def coupling_residual(self, x: np.ndarray) -> float:
        """Largest boundary-row residual relative to the field scale."""
        scale = max(np.abs(x).max(), 1e-300)
        return float(np.abs(self.C @ x).max() * self.mesh.h / scale)

    def advance(self, x: np.ndarray, dt: float, theta: float,
                f_old: Optional[np.ndarray] = None, f_new: Optional[np.ndarray] = None
                ) -> np.ndarray:
        rhs = self.interior * (x + (1.0 - theta) * dt * (self.L @ x))
        if f_old is not None:
            rhs = rhs + self.interior * dt * (1.0 - theta) * f_old
        if f_new is not None:
            rhs = rhs + self.interior * dt * theta * f_new
        return self._factor(dt, theta).solve(rhs)


SourceFn = Callable[[float], Optional[np.ndarray]]


def _source_fn(sources) -> SourceFn:
    if sources is None:
        return lambda t: None
    if callable(sources):
        def f(t):
            s = sources(t)
            return None if s is None else np.concatenate([np.asarray(s[0]), np.asarray(s[1])])
        return f
    const = np.concatenate([np.asarray(sources[0], float), np.asarray(sources[1], float)])
    return lambda t: const


def step(system: ITPSystem, state: ITPState, sources=None, dt: Optional[float] = None,
         scheme: str = "cn") -> ITPState:
    """Advance one time step.

    ``sources`` is ``None``, a pair of arrays held constant over the step, or
    a callable ``t -> (N1, N2)``. ``scheme`` is ``"cn"`` or ``"euler"``.
    """
    dt = system.mesh.dt if dt is None else dt
    theta = {"cn": 0.5, "euler": 1.0}.get(scheme)
    if theta is None:
        raise ConfigurationError(f"unknown time scheme {scheme!r}")
    f = _source_fn(sources)
    x = system.advance(state.stacked(), dt, theta, f(state.t), f(state.t + dt))
    m = system.mesh.n + 1
    return ITPState(x[:m], x[m:], state.t + dt)


def run(system: ITPSystem, x0: np.ndarray, nsteps: int, sources=None, t0: float = 0.0,
        scheme: str = "cn", rannacher: bool = True, dt: Optional[float] = None) -> np.ndarray:
    """Trajectory ``X[j]`` at ``t0 + j dt`` for ``j = 0..nsteps``.

    With ``rannacher`` the first step is replaced by two implicit Euler half
    steps, which damps the high-frequency content of rough initial data.
    """
    dt = system.mesh.dt if dt is None else dt
    f = _source_fn(sources)
    out = np.empty((nsteps + 1, x0.size))
    out[0] = x0
    x = x0
    for j in range(nsteps):
        t = t0 + j * dt
        if scheme == "cn" and rannacher and j == 0:
            x = system.advance(x, 0.5 * dt, 1.0, None, f(t + 0.5 * dt))
            x = system.advance(x, 0.5 * dt, 1.0, None, f(t + dt))
        elif scheme == "cn":
            x = system.advance(x, dt, 0.5, f(t), f(t + dt))
        elif scheme == "euler":
            x = system.advance(x, dt, 1.0, None, f(t + dt))
        else:
            raise ConfigurationError(f"unknown time scheme {scheme!r}")
        out[j + 1] = x
    return out


@dataclass
class DiscreteGreenColumn:
    """Samples of ``(G_ell, H_ell)`` on the full time grid for one source ``(y, s)``."""

    ell: int
    y: float
    s: float
    eps: float
    times: np.ndarray
    x: np.ndarray
    G: np.ndarray
    H: np.ndarray
    coupling_residual: float = 0.0

    def field(self, row: int) -> np.ndarray:
        return self.G if row == 1 else self.H


@dataclass
class DiscreteGreenMatrix:
    """The 2x2 block ``[[G1, G2], [H1, H2]]`` for one source point."""

    columns: dict
    mesh: Mesh
    k: float

    def entry(self, row: int, ell: int) -> np.ndarray:
        return self.columns[ell].field(row)


def green_column(system: ITPSystem, ell: int, y: float, s: float, eps: float,
                 scheme: str = "cn") -> DiscreteGreenColumn:
    """Green column for a mollified point source ``delta_eps(x - y) delta(t - s)`` in equation ``ell``."""
    if ell not in (1, 2):
        raise ConfigurationError("ell must be 1 or 2")
    mesh = system.mesh
    if not (mesh.a < y < mesh.b):
        raise GridError("source must lie inside the interval")
    js = int(round(s / mesh.dt))
    if abs(js * mesh.dt - s) > 1e-9 * max(1.0, s) or not (0 <= js <= mesh.nt):
        raise GridError("source time must be a time-grid node inside [0, T]")
    m = mesh.n + 1
    x0 = np.zeros(2 * m)
    d = mollifier(mesh, y, eps)
    if ell == 1:
        x0[:m] = d
    else:
        x0[m:] = d
    traj = run(system, x0, mesh.nt - js, scheme=scheme)
    full = np.zeros((mesh.nt + 1, 2 * m))
    full[js:] = traj
    res = max(system.coupling_residual(x) for x in traj[1:]) if len(traj) > 1 else 0.0
    return DiscreteGreenColumn(ell, y, js * mesh.dt, eps, mesh.times, mesh.x,
                               full[:, :m], full[:, m:], res)


def green_matrix(system: ITPSystem, y: float, s: float, eps: float) -> DiscreteGreenMatrix:
    return DiscreteGreenMatrix({l: green_column(system, l, y, s, eps) for l in (1, 2)},
                               system.mesh, system.k)


@dataclass
class AdjointTrajectory:
    """``(w, z)`` at the times ``s`` (descending from the terminal time)."""

    s: np.ndarray
    w: np.ndarray
    z: np.ndarray
    coupling_residual: float


def adjoint_solve(mesh: Mesh, k: float, terminal: tuple, t: float, nsteps: Optional[int] = None,
                  scheme: str = "cn", wrong_sign: bool = False) -> AdjointTrajectory:
    """Solve ``-d_s w - w'' = 0``, ``-d_s z - k z'' = 0`` backward from ``s = t``.

    ``wrong_sign`` swaps in the forward coupling ``w - z = 0``; it exists for
    negative-control experiments only.
    """
    nsteps = int(round(t / mesh.dt)) if nsteps is None else nsteps
    sys_adj = ITPSystem(mesh, k, adjoint=not wrong_sign)
    x0 = np.concatenate([np.asarray(terminal[0], float), np.asarray(terminal[1], float)])
    traj = run(sys_adj, x0, nsteps, scheme=scheme)
    m = mesh.n + 1
    res = max((sys_adj.coupling_residual(x) for x in traj[1:]), default=0.0)
    return AdjointTrajectory(t - mesh.dt * np.arange(nsteps + 1), traj[:, :m], traj[:, m:], res)


def duality_pairing(mesh: Mesh, U: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """``int (v w + u z) dx`` at each shared time.

    ``U`` and ``Z`` are stacked trajectories aligned on the same times.
    Quadrature is composite Simpson when the cell count is even, and the
    trapezoid rule otherwise.
    """
    m = mesh.n + 1
    if mesh.n % 2 == 0:
        w = np.full(m, 2.0)
        w[1::2] = 4.0
        w[0] = w[-1] = 1.0
        w *= mesh.h / 3.0
    else:
        w = trapezoid_weights(mesh.n, mesh.h)
    prod = U[:, :m] * Z[:, :m] + U[:, m:] * Z[:, m:]
    return prod @ w


def bump(x: np.ndarray, center: float, width: float) -> np.ndarray:
    """Smooth compactly supported bump ``exp(-1 / (1 - r^2))`` with ``r = (x - center) / width``."""
    r = (np.asarray(x, float) - center) / width
    inside = np.abs(r) < 1
    out = np.zeros_like(r)
    out[inside] = np.exp(-1.0 / (1.0 - r[inside] ** 2))
    return out


def duality_experiment(n: int, k: float, T: float = 0.1, dt: float = 1e-3,
                       forward: tuple = (0.35, 0.5), adjoint: tuple = (0.65, 0.5),
                       width: float = 0.25, scheme: str = "cn", wrong_sign: bool = False) -> dict:
    """Pair a forward trajectory with an adjoint one over ``[0, T]``.

    The forward state starts from bumps centred at ``forward`` (for ``v`` and
    ``u``); the adjoint state ends at ``T`` with bumps centred at ``adjoint``.
    The pairing ``int (v w + u z)`` is constant in time for the continuous
    problem. ``wrong_sign`` runs the adjoint with the forward coupling.
    """
    mesh = Mesh(n=n, T=T, dt=dt)
    system = ITPSystem(mesh, k)
    x = mesh.x
    x0 = np.concatenate([bump(x, forward[0], width), bump(x, forward[1], width)])
    U = run(system, x0, mesh.nt, scheme=scheme)
    adj = adjoint_solve(mesh, k, (bump(x, adjoint[0], width), bump(x, adjoint[1], width)), T,
                        scheme=scheme, wrong_sign=wrong_sign)
    Z = np.concatenate([adj.w, adj.z], axis=1)[::-1]  # ascending time
    vals = duality_pairing(mesh, U, Z)
    return {"n": n, "dt": dt, "times": mesh.times, "pairing": vals,
            "deviation": pairing_constancy(vals), "coupling_residual": adj.coupling_residual}


def pairing_constancy(values: np.ndarray) -> float:
    """``(max - min) / |mean|`` of a pairing history."""
    values = np.asarray(values)
    mean = np.abs(values.mean())
    if mean == 0:
        return 0.0 if np.all(values == 0) else float("inf")
    return float((values.max() - values.min()) / mean)


def reciprocity_check(system: ITPSystem, x: Sequence[float], y: Sequence[float],
                      t: float, s: float, eps: float) -> dict:
    """Compare forward Green entries with the adjoint problem.

    For every pair ``(x_i, y_j)`` and field indices ``(a, b)`` the forward
    value ``<delta_eps(x), G_ab(., t; y, s)>`` is compared with the adjoint
    value ``<delta_eps(y), Z_b(., s)>``, where ``Z`` has terminal data
    ``e_a delta_eps(x)`` at time ``t``. Both sides use the same mollifier, so
    they agree exactly in the continuum.
    """
    mesh = system.mesh
    m = mesh.n + 1
    if t <= s:
        return {"max_deviation": 0.0, "scale": 0.0, "pairs": 0}
    wq = trapezoid_weights(mesh.n, mesh.h)
    jt, js = int(round(t / mesh.dt)), int(round(s / mesh.dt))
    fwd = {}
    for yj in y:
        for b in (1, 2):
            col = green_column(system, b, yj, js * mesh.dt, eps)
            fwd[(yj, b)] = (col.G[jt], col.H[jt])
    dev, scale = 0.0, 0.0
    for xi in x:
        dx = mollifier(mesh, xi, eps)
        for a in (1, 2):
            term = (dx, 0 * dx) if a == 1 else (0 * dx, dx)
            adj = adjoint_solve(mesh, system.k, term, jt * mesh.dt, nsteps=jt - js)
            for yj in y:
                dy = mollifier(mesh, yj, eps)
                for b in (1, 2):
                    lhs = wq @ (dx * fwd[(yj, b)][a - 1])
                    rhs = wq @ (dy * (adj.w[-1] if b == 1 else adj.z[-1]))
                    dev = max(dev, abs(lhs - rhs))
                    scale = max(scale, abs(lhs), abs(rhs))
    return {"max_deviation": dev, "scale": scale, "pairs": len(x) * len(y) * 4}


@dataclass(frozen=True)
class MMSProblem:
    """Manufactured solution ``v = phi(t) p(x)``, ``u = phi(t) q(x)``."""

    k: float
    p: Callable
    q: Callable
    dp2: Callable
    dq2: Callable
    phi: Callable
    dphi: Callable

    def exact(self, x, t):
        return self.phi(t) * self.p(x), self.phi(t) * self.q(x)

    def sources(self, x):
        def f(t):
            return (self.dphi(t) * self.p(x) - self.phi(t) * self.dp2(x),
                    self.dphi(t) * self.q(x) - self.k * self.phi(t) * self.dq2(x))
        return f


def mms_problem(k: float, kind: str = "space") -> MMSProblem:
    """Manufactured coupled solutions.

    ``space``: ``phi(t) = t`` (integrated exactly by Crank-Nicolson) and a
    trigonometric profile, so only the spatial error remains. ``time``:
    quadratic profiles (reproduced exactly by the stencils) and an
    oscillating ``phi``, so only the temporal error remains. In both cases
    ``p = k g + c``, ``q = g`` with ``(k - 1) g + c = 0`` at the endpoints,
    which makes both coupling conditions hold.
    """
    k = as_contrast(k)
    if kind == "space":
        c = -(k - 1.0)
        g = lambda x: np.cos(2 * np.pi * x) + 3 * x ** 2 * (1 - x) ** 2
        g2 = lambda x: (-4 * np.pi ** 2 * np.cos(2 * np.pi * x)
                        + 3 * (2 - 12 * x + 12 * x ** 2))
        return MMSProblem(k, lambda x: k * g(x) + c, g, lambda x: k * g2(x), g2,
                          lambda t: t, lambda t: np.ones_like(np.asarray(t, float)))
    if kind == "time":
        g = lambda x: x * (1 - x)
        g2 = lambda x: -2.0 + 0 * x
        return MMSProblem(k, lambda x: k * g(x), g, lambda x: k * g2(x), g2,
                          lambda t: np.sin(5 * t) + np.cos(3 * t),
                          lambda t: 5 * np.cos(5 * t) - 3 * np.sin(3 * t))
    raise ConfigurationError(f"unknown MMS kind {kind!r}")


def mms_error(problem: MMSProblem, n: int, dt: float, T: float, scheme: str = "cn") -> float:
    """Max-norm error at ``T`` of the manufactured solution."""
    mesh = Mesh(n=n, T=T, dt=dt)
    system = ITPSystem(mesh, problem.k)
    x = mesh.x
    v0, u0 = problem.exact(x, 0.0)
    traj = run(system, np.concatenate([v0, u0]), mesh.nt, sources=problem.sources(x),
               scheme=scheme, rannacher=False)
    ve, ue = problem.exact(x, mesh.nt * dt)
    return float(np.abs(traj[-1] - np.concatenate([ve, ue])).max())
