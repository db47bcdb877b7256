"""Volterra kernel algebra and the Levi compensation.

Kernels are stored as *operator matrices*: kernel values multiplied by the
spatial quadrature weights of the source variable. Composition in space is
then a plain matrix product, and pointwise (multiplication) kernels are
diagonal matrices. Time is a uniform grid ``t_j = j dt``. Integrals over
``[s, t]`` use the trapezoid rule, including the half cells at both ends.

Two time layouts exist. ``general`` stores ``K[i, j] = K(t_i, t_j)``.
``stationary`` stores ``K[L] = K(t_{j+L}, t_j)`` for kernels that depend on
``t - s`` only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import factorial
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import DivergenceError, GridError

__all__ = [
    "VolterraKernel",
    "LeviSeries",
    "volterra_compose",
    "operator_norm",
    "kernel_norm",
    "levi_series",
    "cell_moments",
    "march_column_pi",
    "compensate_column_pi",
    "resolvent_march",
    "resolvent_residual",
    "compensate",
    "march_column",
    "compensate_column",
    "initial_condition_check",
    "schur_bound",
    "factorial_margins",
]


@dataclass
class VolterraKernel:
    """Causal kernel on a uniform time grid.

    Parameters
    ----------
    ops : ndarray
        ``(N+1, N+1, m, m)`` for the general layout or ``(N+1, m, m)`` for
        the stationary layout. Entries with ``t < s`` are ignored and kept zero.
    dt : float
        Time step.
    weights : ndarray
        Spatial quadrature weights, used by norms and by value conversion.
    """

    ops: np.ndarray
    dt: float
    weights: np.ndarray
    stationary: bool = False

    def __post_init__(self) -> None:
        self.ops = np.asarray(self.ops)
        self.weights = np.asarray(self.weights, dtype=float)
        expect = 3 if self.stationary else 4
        if self.ops.ndim != expect:
            raise GridError(f"kernel array must have {expect} dimensions")
        if self.ops.shape[-1] != self.ops.shape[-2] or self.ops.shape[-1] != self.weights.size:
            raise GridError("kernel blocks must be square and match the weights")
        if not self.stationary:
            N = self.ops.shape[0]
            i, j = np.tril_indices(N)
            mask = np.ones((N, N), bool)
            mask[i, j] = False
            if np.any(self.ops[mask] != 0):
                self.ops = self.ops.copy()
                self.ops[mask] = 0
        if not np.all(np.isfinite(self.ops)):
            raise GridError("kernel samples must be finite")

    @property
    def nt(self) -> int:
        return self.ops.shape[0] - 1

    @property
    def m(self) -> int:
        return self.weights.size

    @classmethod
    def from_function(cls, f: Callable[[float, float], np.ndarray], nt: int, dt: float,
                      weights: np.ndarray, stationary: bool = False) -> "VolterraKernel":
        """Sample ``f(t, s)`` (operator matrix) for ``t >= s``."""
        m = len(weights)
        if stationary:
            ops = np.stack([np.broadcast_to(f(L * dt, 0.0), (m, m)) for L in range(nt + 1)])
            return cls(ops, dt, weights, True)
        ops = np.zeros((nt + 1, nt + 1, m, m), dtype=np.result_type(f(0.0, 0.0), float))
        for i in range(nt + 1):
            for j in range(i + 1):
                ops[i, j] = f(i * dt, j * dt)
        return cls(ops, dt, weights, False)

    @classmethod
    def zeros_like(cls, other: "VolterraKernel") -> "VolterraKernel":
        return cls(np.zeros_like(other.ops), other.dt, other.weights, other.stationary)

    def at(self, i: int, j: int) -> np.ndarray:
        if i < j:
            return np.zeros(self.ops.shape[-2:], dtype=self.ops.dtype)
        return self.ops[i - j] if self.stationary else self.ops[i, j]

    def values(self, i: int, j: int) -> np.ndarray:
        """Kernel values ``K(x, t_i; y, t_j)`` (operator matrix divided by weights)."""
        return self.at(i, j) / self.weights[None, :]

    def general(self) -> "VolterraKernel":
        if not self.stationary:
            return self
        N = self.nt
        ops = np.zeros((N + 1, N + 1) + self.ops.shape[1:], dtype=self.ops.dtype)
        for i in range(N + 1):
            for j in range(i + 1):
                ops[i, j] = self.ops[i - j]
        return VolterraKernel(ops, self.dt, self.weights, False)

    def __add__(self, other: "VolterraKernel") -> "VolterraKernel":
        _check_compatible(self, other)
        if self.stationary and other.stationary:
            return VolterraKernel(self.ops + other.ops, self.dt, self.weights, True)
        return VolterraKernel(self.general().ops + other.general().ops, self.dt, self.weights)

    def __neg__(self) -> "VolterraKernel":
        return VolterraKernel(-self.ops, self.dt, self.weights, self.stationary)

    def __sub__(self, other: "VolterraKernel") -> "VolterraKernel":
        return self + (-other)

    def scale(self, c: float) -> "VolterraKernel":
        return VolterraKernel(c * self.ops, self.dt, self.weights, self.stationary)


def _check_compatible(A: VolterraKernel, B: VolterraKernel) -> None:
    if A.nt != B.nt or abs(A.dt - B.dt) > 1e-14 * max(A.dt, B.dt) or A.m != B.m:
        raise GridError("kernels live on different grids")
    if not np.allclose(A.weights, B.weights, rtol=1e-14, atol=0):
        raise GridError("kernels use different spatial quadratures")


def volterra_compose(A: VolterraKernel, B: VolterraKernel) -> VolterraKernel:
    """``C(t, s) = int_s^t A(t, s') B(s', s) ds'`` by the trapezoid rule."""
    _check_compatible(A, B)
    dt, N = A.dt, A.nt
    if A.stationary and B.stationary:
        out = np.zeros(np.broadcast_shapes(A.ops.shape, B.ops.shape),
                       dtype=np.result_type(A.ops, B.ops))
        for L in range(1, N + 1):
            acc = np.einsum("lij,ljk->ik", A.ops[L::-1], B.ops[:L + 1])
            acc -= 0.5 * (A.ops[L] @ B.ops[0] + A.ops[0] @ B.ops[L])
            out[L] = dt * acc
        return VolterraKernel(out, dt, A.weights, True)
    Ag, Bg = A.general().ops, B.general().ops
    out = np.zeros_like(Ag, dtype=np.result_type(Ag, Bg))
    for i in range(1, N + 1):
        for j in range(i):
            acc = np.einsum("lab,lbc->ac", Ag[i, j:i + 1], Bg[j:i + 1, j])
            acc -= 0.5 * (Ag[i, j] @ Bg[j, j] + Ag[i, i] @ Bg[i, j])
            out[i, j] = dt * acc
    return VolterraKernel(out, dt, A.weights, False)


def operator_norm(op: np.ndarray, weights: np.ndarray) -> float:
    """Discrete ``L^2 -> L^2`` norm of an operator matrix."""
    r = np.sqrt(weights)
    return float(np.linalg.norm(r[:, None] * op / r[None, :], 2))


def kernel_norm(K: VolterraKernel, per_lag: bool = False):
    """Sup over ``(t, s)`` of the discrete operator norm.

    With ``per_lag`` the sup is taken separately for every lag ``t - s``.
    """
    N = K.nt
    lag = np.zeros(N + 1)
    if K.stationary:
        for L in range(N + 1):
            lag[L] = operator_norm(K.ops[L], K.weights)
    else:
        for i in range(N + 1):
            for j in range(i + 1):
                lag[i - j] = max(lag[i - j], operator_norm(K.ops[i, j], K.weights))
    return lag if per_lag else float(lag.max())


def factorial_margins(norms_per_lag: Sequence[np.ndarray], dt: float, C0: float) -> np.ndarray:
    """``min over lags of C0^{j-1} tau^{j-1}/(j-1)! - ||W_j(tau)||`` for each ``j``.

    For ``j = 1`` the bound is the constant ``C0``.
    """
    out = []
    for j, lag in enumerate(norms_per_lag, start=1):
        tau = dt * np.arange(len(lag))
        bound = C0 if j == 1 else C0 ** (j - 1) * tau ** (j - 1) / factorial(j - 1)
        out.append(float(np.min(bound - lag)))
    return np.array(out)


@dataclass
class LeviSeries:
    """Terms of the Levi series and their diagnostics."""

    terms: list
    W: VolterraKernel
    norms: list
    lag_norms: list
    C1: float
    C0: float
    margins_C0: np.ndarray
    margins_C1: np.ndarray
    converged: bool
    resolvent_residual: float

    def report(self) -> dict:
        return {"j": list(range(1, len(self.norms) + 1)), "norms": self.norms,
                "C1": self.C1, "C0": self.C0,
                "margin": self.margins_C0.tolist(), "margin_with_C1": self.margins_C1.tolist(),
                "converged": self.converged, "resolvent_residual": self.resolvent_residual}


def levi_series(R: VolterraKernel, jmax: int = 30, tol: float = 1e-8) -> LeviSeries:
    """Sum ``W = sum_j W_j`` with ``W_1 = -R`` and ``W_j = -R o W_{j-1}``.

    The series stops once ``||W_j|| < tol`` or ``j = jmax``. The factorial
    bound is reported against ``C0 = max(C1, C1^2)`` with ``C1 = ||W_1||``,
    which satisfies both the ``j = 1`` and the ``j >= 2`` estimates. The
    margins for ``C0 = C1`` are reported as well.

    Raises :class:`DivergenceError` on non-finite terms, or when the norm
    grows for three consecutive terms after the factorial regime should
    have started.
    """
    W1 = -R
    terms = [W1]
    lag = [kernel_norm(W1, per_lag=True)]
    norms = [float(lag[0].max())]
    T = R.dt * R.nt
    C1 = norms[0]
    growth = 0
    converged = norms[0] < tol
    Wj = W1
    while not converged and len(terms) < jmax:
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                Wj = -volterra_compose(R, Wj)
        except GridError:
            raise DivergenceError("non-finite Levi term") from None
        l = kernel_norm(Wj, per_lag=True)
        n = float(l.max())
        if not np.isfinite(n):
            raise DivergenceError("non-finite Levi term")
        j = len(terms) + 1
        growth = growth + 1 if (n > norms[-1] and j > np.e * C1 * T + 1) else 0
        if growth >= 3:
            raise DivergenceError("Levi series increments grow for three consecutive terms")
        terms.append(Wj)
        lag.append(l)
        norms.append(n)
        converged = n < tol
    W = terms[0]
    for t in terms[1:]:
        W = W + t
    C0 = max(C1, C1 * C1)
    return LeviSeries(terms, W, norms, lag, C1, C0,
                      factorial_margins(lag, R.dt, C0), factorial_margins(lag, R.dt, C1),
                      converged, resolvent_residual(R, W))


def resolvent_residual(R: VolterraKernel, W: VolterraKernel) -> float:
    """``|| W + R + R o W ||`` in the grid norm."""
    return kernel_norm(W + R + volterra_compose(R, W))


def resolvent_march(R: VolterraKernel) -> VolterraKernel:
    """Solve ``W = -R - R o W`` directly by trapezoid time marching.

    The diagonal half cell makes each step implicit:
    ``(I + dt/2 R(t,t)) W(t,s) = -R(t,s) - dt [sum of earlier cells]``.
    """
    dt, N, m = R.dt, R.nt, R.m
    I = np.eye(m)
    if R.stationary:
        W = np.zeros_like(R.ops)
        W[0] = -R.ops[0]
        lhs = I + 0.5 * dt * R.ops[0]
        for L in range(1, N + 1):
            acc = np.einsum("lij,ljk->ik", R.ops[L - 1:0:-1], W[1:L]) if L > 1 else 0.0
            rhs = -R.ops[L] - dt * (acc + 0.5 * R.ops[L] @ W[0])
            W[L] = np.linalg.solve(lhs, rhs)
        return VolterraKernel(W, dt, R.weights, True)
    Rg = R.ops
    W = np.zeros_like(Rg)
    for j in range(N + 1):
        W[j, j] = -Rg[j, j]
        for i in range(j + 1, N + 1):
            acc = np.einsum("lab,lbc->ac", Rg[i, j + 1:i], W[j + 1:i, j]) if i > j + 1 else 0.0
            rhs = -Rg[i, j] - dt * (acc + 0.5 * Rg[i, j] @ W[j, j])
            W[i, j] = np.linalg.solve(I + 0.5 * dt * Rg[i, i], rhs)
    return VolterraKernel(W, dt, R.weights, False)


def compensate(P: VolterraKernel, W: VolterraKernel) -> VolterraKernel:
    """Green kernel ``G = P + P o W``.

    ``P`` must carry its diagonal value ``P(t, t)`` (the identity operator
    for a parametrix whose initial value is the delta).
    """
    return P + volterra_compose(P, W)


def march_column(R_lags: np.ndarray, r: np.ndarray, dt: float) -> np.ndarray:
    """Solve ``w(t) = -r(t) - int_0^t R(t - s') w(s') ds'`` for a vector column.

    ``R_lags[L]`` is the stationary residual operator at lag ``L dt`` and
    ``r[n]`` the residual applied to the source at ``t_n``. Trapezoid rule
    with an implicit diagonal half cell.
    """
    N = r.shape[0] - 1
    w = np.zeros_like(r, dtype=np.result_type(R_lags, r))
    w[0] = -r[0]
    lhs = np.eye(R_lags.shape[1]) + 0.5 * dt * R_lags[0]
    diag_zero = not np.any(R_lags[0])
    for n in range(1, N + 1):
        acc = np.einsum("lij,lj->i", R_lags[n - 1:0:-1], w[1:n]) if n > 1 else 0.0
        rhs = -r[n] - dt * (acc + 0.5 * R_lags[n] @ w[0])
        w[n] = rhs if diag_zero else np.linalg.solve(lhs, rhs)
    return w


def compensate_column(apply_P: Callable[[int, np.ndarray], np.ndarray], p: np.ndarray,
                      w: np.ndarray, dt: float) -> np.ndarray:
    """``g(t) = p(t) + int_0^t P(t - s') w(s') ds'`` for a stationary parametrix.

    ``apply_P(L, V)`` applies the parametrix operator at lag ``L dt`` to the
    columns of ``V`` (shape ``(m, k)``). Lag 0 is the identity, as the
    parametrix reduces to the delta on the diagonal.
    """
    N = w.shape[0] - 1
    g = np.array(p, dtype=np.result_type(p, w), copy=True)
    # diagonal half cells: P(0) = identity at s' = t, w(0) at s' = 0
    for n in range(1, N + 1):
        g[n] += 0.5 * dt * w[n]
    for L in range(1, N + 1):
        cols = w[: N - L + 1]
        PW = apply_P(L, cols.T).T
        wts = np.full(N - L + 1, dt)
        wts[0] = 0.5 * dt
        g[L:] += wts[:, None] * PW
    return g


def cell_moments(K: Callable[[float], np.ndarray], dt: float, cell: int,
                 n_gauss: int = 6) -> tuple[np.ndarray, np.ndarray]:
    """``int K`` and ``int K (sigma - c dt) / dt`` over the lag cell ``[c dt, (c+1) dt]``."""
    u, wg = np.polynomial.legendre.leggauss(n_gauss)
    u = 0.5 * (u + 1)
    M0 = M1 = 0.0
    for ui, wi in zip(u, wg):
        Kv = K((cell + ui) * dt)
        M0 = M0 + 0.5 * dt * wi * Kv
        M1 = M1 + 0.5 * dt * wi * ui * Kv
    return np.asarray(M0), np.asarray(M1)


def march_column_pi(moments: Sequence[tuple[np.ndarray, np.ndarray]], r: np.ndarray
                    ) -> np.ndarray:
    """Product-integration version of :func:`march_column`.

    ``w`` is interpolated by hat functions in time and the kernel enters only
    through its cell moments ``moments[c] = (M0_c, M1_c)``, so fast variation
    of the kernel inside a cell costs no accuracy.
    """
    N = r.shape[0] - 1
    w = np.zeros_like(r, dtype=np.result_type(r, *(m[0] for m in moments[:1])))
    w[0] = -r[0]
    if N == 0:
        return w
    M0 = np.array([m[0] for m in moments])
    M1 = np.array([m[1] for m in moments])
    B = np.empty((N,) + M0.shape[1:], dtype=M0.dtype)
    B[0] = M0[0] - M1[0]
    B[1:] = M1[:-1] + M0[1:] - M1[1:]
    lhs = np.eye(r.shape[1]) + B[0]
    for n in range(1, N + 1):
        acc = M1[n - 1] @ w[0]
        if n > 1:
            acc = acc + np.einsum("lij,lj->i", B[n - 1:0:-1], w[1:n])
        w[n] = np.linalg.solve(lhs, -r[n] - acc)
    return w


def compensate_column_pi(moments: Callable[[int], tuple[np.ndarray, np.ndarray]],
                         p: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``g(t) = p(t) + int_0^t P(t - s') w(s') ds'`` with hat-interpolated ``w``.

    ``moments(c)`` returns the cell moments of the parametrix operator (rows
    of ``g`` by columns of ``w``) on lag cell ``c``.
    """
    N = w.shape[0] - 1
    g = np.array(p, dtype=np.result_type(p, w), copy=True)
    for c in range(N):
        M0, M1 = moments(c)
        g[c + 1:] += w[1:N - c + 1] @ (M0 - M1).T + w[0:N - c] @ M1.T
    return g


def initial_condition_check(apply_K: Callable[[float, np.ndarray], np.ndarray],
                            probes: Iterable[np.ndarray], deltas: Sequence[float],
                            restrict: Optional[np.ndarray] = None) -> dict:
    """Sup error of ``K(s + delta, s) f - f`` for each probe and each ``delta``.

    ``apply_K(delta, f)`` returns the kernel applied to the samples ``f``.
    Errors are relative to ``||f||_inf``. The convergence rate is the slope
    of ``log error`` against ``log delta``.
    """
    probes = [np.asarray(f, dtype=float) for f in probes]
    deltas = np.asarray(deltas, dtype=float)
    errs = np.zeros((len(probes), len(deltas)))
    for a, f in enumerate(probes):
        sel = slice(None) if restrict is None else restrict
        nrm = np.abs(f[sel]).max()
        for b, d in enumerate(deltas):
            out = np.asarray(apply_K(d, f))
            errs[a, b] = np.abs(out[sel] - f[sel]).max() / nrm
    rates = []
    for row in errs:
        ok = row > 0
        rates.append(float(np.polyfit(np.log(deltas[ok]), np.log(row[ok]), 1)[0])
                     if ok.sum() > 1 else float("nan"))
    return {"deltas": deltas.tolist(), "errors": errs.tolist(), "rates": rates,
            "final_errors": errs[:, int(np.argmin(deltas))].tolist()}


def schur_bound(K: np.ndarray, w1: np.ndarray, w2: np.ndarray,
                probes: Iterable[np.ndarray]) -> dict:
    """Schur test for the kernel ``K(x1, x2)`` sampled on a tensor grid.

    ``K`` maps functions of ``x2`` to functions of ``x1``. Returns ``M1`` (sup
    over ``x2`` of the ``x1``-integral of ``|K|``), ``M2`` (the transposed
    quantity), the bound ``sqrt(M1 M2)`` and the largest observed ratio
    ``||K f|| / ||f||`` over the probes.
    """
    K = np.asarray(K, dtype=float)
    A = np.abs(K)
    M1 = float((w1 @ A).max()) if A.size else 0.0
    M2 = float((A @ w2).max()) if A.size else 0.0
    bound = float(np.sqrt(M1 * M2))
    worst = 0.0
    ratios = []
    for f in probes:
        f = np.asarray(f, dtype=float)
        nf = np.sqrt(w2 @ f ** 2)
        if nf == 0:
            continue
        g = K @ (w2 * f)
        r = float(np.sqrt(w1 @ g ** 2) / nf)
        ratios.append(r)
        worst = max(worst, r)
    return {"M1": M1, "M2": M2, "bound": bound, "observed": worst, "ratios": ratios,
            "violated": worst > bound * (1 + 1e-12)}
