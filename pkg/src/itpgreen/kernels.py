"""Inverse Laplace-Fourier evaluation of parametrix kernels.

A kernel symbol ``g(xi', tau)`` is mapped to

    K(x', t) = (2 pi)^-2 int dxi' exp(i x'.xi') (1 / 2 pi i) int_C exp(tau t) g dtau,

where ``x'`` and ``t`` are the differences ``x' - y'`` and ``t - s``. The tau
contour is a hyperbola opening to the left for ``t > 0``,

    tau(u) = q + mu_h (1 - sin(alpha) cosh u) + i mu_h cos(alpha) sinh u,

and its mirror image, opening to the right, for ``t < 0``. The asymptotic
angle satisfies ``tan(alpha) < mu``, which keeps every node inside the
holomorphy region ``L^2_mu`` (with ``eta = -i tau``). The xi' integral uses
tensor Gauss-Legendre panels on a square whose size adapts to the decay of
the integrand.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import linprog

from .errors import ConfigurationError, GridError, ItpError
from .geometry import MetricField, as_contrast, restrict
from .symbols import (AmplitudeSet, Branch, _frozen, first_order_amplitudes, in_L2mu,
                      second_order_amplitudes)

__all__ = [
    "ContourSpec",
    "TransformResult",
    "SpaceTimeKernel",
    "GaussianFit",
    "inverse_lf_transform",
    "leading_kernel",
    "kernel_symbol",
    "heat_kernel_3d",
    "gaussian_bound_fit",
    "truncation_error_probe",
    "select_branches",
    "EvaluationError",
]


class EvaluationError(ItpError, ArithmeticError):
    """A symbol produced non-finite values on the contour."""


@dataclass(frozen=True)
class ContourSpec:
    """Quadrature parameters for the inverse transform.

    Parameters
    ----------
    mu : float
        Parameter of the region ``L^2_mu`` that the contour must stay in.
    alpha : float, optional
        Asymptotic angle. Defaults to ``atan(0.9 mu)``.
    M : float
        Dimensionless contour scale ``mu_h |t|``.
    h : float
        Trapezoid step in the contour parameter ``u``.
    q_offset : float
        Horizontal shift of the hyperbola.
    eps : float
        Target size of ``exp(tau t)`` at the ends of the contour.
    xi_truncation : float, optional
        Fixed half-width of the xi' square. Adaptive when omitted.
    panel_nodes : int
        Gauss-Legendre nodes per panel and axis.
    xi_tail_tol : float
        Adaptive truncation stops once the integrand on the square's edge is
        below this fraction of its maximum.
    """

    mu: float = 0.5
    alpha: Optional[float] = None
    M: float = 4.0
    h: float = 0.1
    q_offset: float = 0.0
    eps: float = 1e-15
    xi_truncation: Optional[float] = None
    panel_nodes: int = 16
    panel_scale: float = 2.0
    xi_tail_tol: float = 1e-8

    def __post_init__(self) -> None:
        if self.mu <= 0 or self.M <= 0 or self.h <= 0 or self.panel_nodes < 2:
            raise ConfigurationError("contour parameters must be positive")
        a = self.angle
        if not (0 < a < np.pi / 2):
            raise ConfigurationError("contour angle must lie in (0, pi/2)")

    @property
    def angle(self) -> float:
        return float(np.arctan(0.9 * self.mu)) if self.alpha is None else float(self.alpha)

    def refined(self) -> "ContourSpec":
        """Twice the node density along both axes of the quadrature."""
        return replace(self, h=self.h / 2, panel_nodes=2 * self.panel_nodes)

    def tau_nodes(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        """Contour nodes and weights ``h tau'(u) / (2 pi i)`` for time ``t != 0``."""
        if t == 0:
            raise GridError("the contour integral needs t != 0")
        a = self.angle
        at = abs(t)
        mu_h = self.M / at
        U = np.arccosh(max((self.M + abs(self.q_offset) * at + np.log(1 / self.eps))
                           / (self.M * np.sin(a)), 1.0))
        u = np.arange(-U, U + 0.5 * self.h, self.h)
        if t > 0:
            tau = (self.q_offset + mu_h * (1 - np.sin(a) * np.cosh(u))
                   + 1j * mu_h * np.cos(a) * np.sinh(u))
            dtau = mu_h * (-np.sin(a) * np.sinh(u) + 1j * np.cos(a) * np.cosh(u))
        else:
            shift = mu_h * (1 - np.sin(a)) + 1.0 / at + abs(self.q_offset)
            tau = (shift + mu_h * (np.sin(a) * np.cosh(u) - 1)
                   + 1j * mu_h * np.cos(a) * np.sinh(u))
            dtau = mu_h * (np.sin(a) * np.sinh(u) + 1j * np.cos(a) * np.cosh(u))
        return tau, self.h * dtau / (2j * np.pi)

    def check_inside(self, xi1: np.ndarray, xi2: np.ndarray, tau: np.ndarray) -> None:
        eta = -1j * tau
        if not np.all(in_L2mu((xi1, xi2), eta, self.mu)):
            raise ConfigurationError("contour leaves L^2_mu for some quadrature node")


def _gl_panels(X: float, width: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    npan = max(1, int(np.ceil(2 * X / width)))
    edges = np.linspace(-X, X, npan + 1)
    z, w = np.polynomial.legendre.leggauss(n)
    a, b = edges[:-1, None], edges[1:, None]
    nodes = (0.5 * (b - a) * z + 0.5 * (a + b)).ravel()
    weights = (0.5 * (b - a) * w).ravel()
    return nodes, weights


@dataclass
class TransformResult:
    value: np.ndarray
    tail_estimate: float
    X: float
    n_xi: int
    n_tau: int


SymbolFn = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


def _laplace_inverted(g: SymbolFn, contour: ContourSpec, xi: np.ndarray, wxi: np.ndarray,
                      t: float) -> np.ndarray:
    tau, wt = contour.tau_nodes(t)
    X1, X2, T = np.meshgrid(xi, xi, tau, indexing="ij", sparse=True)
    contour.check_inside(np.broadcast_to(X1, (xi.size, 1, 1)), np.broadcast_to(X2, (1, xi.size, 1)),
                         tau)
    vals = np.asarray(g(X1, X2, T))
    if not np.all(np.isfinite(vals)):
        raise EvaluationError("symbol produced non-finite values on the contour")
    shape = (xi.size, xi.size, tau.size)
    if vals.ndim == 4:
        # stacked components on a trailing axis
        vals = np.broadcast_to(vals, shape + vals.shape[3:])
        return np.einsum("ijtc,t->ijc", vals * np.exp(tau * t)[:, None], wt)
    return np.tensordot(np.broadcast_to(vals, shape) * np.exp(tau * t), wt, axes=([2], [0]))


def inverse_lf_transform(g: Optional[SymbolFn], contour: ContourSpec, x_t, t: float,
                         return_info: bool = False, m_min: float = 1.0):
    """Evaluate the inverse Laplace-Fourier transform of ``g`` at ``(x', t)``.

    ``g(xi1, xi2, tau)`` must broadcast over its arguments and already
    contain any dependence on the normal variables. A trailing fourth axis
    holds several symbols sharing one quadrature; the result then carries
    that axis last. ``x_t`` is a pair or an
    array of pairs. ``m_min`` is a lower bound for the tangential metric
    eigenvalues, used to size the xi' square.
    """
    pts = np.atleast_2d(np.asarray(x_t, dtype=float))
    if g is None:
        out = np.zeros(pts.shape[0], dtype=complex)
        res = TransformResult(out, 0.0, 0.0, 0, 0)
        return res if return_info else (out if np.ndim(x_t) > 1 else out[0])
    at = abs(t)
    if at == 0:
        raise GridError("t - s must be nonzero")
    rmax = float(np.abs(pts).max()) if pts.size else 0.0
    width = contour.panel_scale / np.sqrt(at)
    if rmax > 0:
        width = min(width, 2 * np.pi / rmax)
    if contour.xi_truncation is not None:
        X = float(contour.xi_truncation)
        tries = 1
    else:
        X = np.sqrt(np.log(1.0 / contour.xi_tail_tol) / (at * m_min)) if t > 0 else 5.0 / np.sqrt(at)
        tries = 6
    for _ in range(tries):
        xi, wxi = _gl_panels(X, width, contour.panel_nodes)
        I = _laplace_inverted(g, contour, xi, wxi, t)
        edge = np.concatenate([np.abs(I[0]).ravel(), np.abs(I[-1]).ravel(),
                               np.abs(I[:, 0]).ravel(), np.abs(I[:, -1]).ravel()])
        peak = np.abs(I).max()
        tail = float(edge.max() / peak) if peak > 0 else 0.0
        if tail < contour.xi_tail_tol or t < 0:
            break
        X *= 1.5
    W = (wxi[:, None] * wxi[None, :]).reshape(wxi.size, wxi.size, *([1] * (I.ndim - 2))) * I
    ph1 = np.exp(1j * pts[:, 0, None] * xi[None, :])
    ph2 = np.exp(1j * pts[:, 1, None] * xi[None, :])
    vals = np.einsum("pi,ij...,pj->p...", ph1, W, ph2) / (4 * np.pi ** 2)
    res = TransformResult(vals, tail * float(np.abs(W).sum()) / (4 * np.pi ** 2), X,
                          xi.size ** 2, contour.tau_nodes(t)[0].size)
    if return_info:
        return res
    return vals if np.ndim(x_t) > 1 else vals[0]


def heat_kernel_3d(x, t, kappa: float = 1.0) -> np.ndarray:
    """``H(t) (4 pi kappa t)^{-3/2} exp(-|x|^2 / (4 kappa t))`` for displacement ``x``."""
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    r2 = np.sum(x * x, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        v = (4 * np.pi * kappa * t) ** -1.5 * np.exp(-r2 / (4 * kappa * np.where(t > 0, t, 1.0)))
    return np.where(t > 0, v, 0.0)


FIELD_FUNCTIONS = {("G", True): "a", ("G", False): "b", ("H", True): "d", ("H", False): "e"}
FREE = {Branch.LM_LM, Branch.LP_LP, Branch.MM_MM, Branch.MP_MP}
REFLECTED = {1: {Branch.LP_LM}, 2: {Branch.MP_MM}}
TRANSMITTED = {1: {Branch.MP_LM}, 2: {Branch.LP_MM}}


def select_branches(ell: int, selection) -> Optional[set]:
    """Branch set for ``"free"``, ``"reflected"``, ``"transmitted"`` or ``"all"``."""
    if isinstance(selection, Branch):
        return {selection}
    if selection == "all":
        return None
    if selection == "free":
        return FREE
    if selection == "reflected":
        return REFLECTED[ell]
    if selection == "transmitted":
        return TRANSMITTED[ell]
    if isinstance(selection, (set, frozenset, list, tuple)):
        return set(selection)
    raise ConfigurationError(f"unknown branch selection {selection!r}")


def _amplitude_value(amp: AmplitudeSet, name: str, x3: float, branches: Optional[set],
                     deriv: Optional[str]) -> np.ndarray:
    total = 0.0
    rho = x3 - amp.y3
    for t in amp.terms[name]:
        if branches is not None and t.branch not in branches:
            continue
        beta = amp.roots.root(t.branch.x_root)
        val = t.poly(rho) * amp._exp(t.branch, x3)
        if deriv == "x3":
            val = (t.poly(rho, 1) + beta * t.poly(rho)) * amp._exp(t.branch, x3)
        total = total + val
    if deriv == "x1":
        total = total * 1j * amp.xi_t[0]
    elif deriv == "x2":
        total = total * 1j * amp.xi_t[1]
    return total


def kernel_symbol(ell: int, field_name: str, metric: MetricField, x3: float, y3: float, k,
                  selection="all", deriv: Optional[str] = None, order: int = 1,
                  y_t=(0.0, 0.0)) -> SymbolFn:
    """Symbol of one parametrix entry, ready for :func:`inverse_lf_transform`.

    ``field_name`` is ``"G"`` (unit diffusivity) or ``"H"`` (diffusivity k).
    ``order = 2`` adds the order -2 amplitudes (layered metrics only).
    """
    if field_name not in ("G", "H"):
        raise ConfigurationError("field must be 'G' or 'H'")
    if x3 > 0 or y3 > 0:
        raise GridError("kernel points must satisfy x3 <= 0 and y3 <= 0")
    k = as_contrast(k)
    M1, M0, J_y = restrict(metric, y3, y_t)
    name = FIELD_FUNCTIONS[(field_name, x3 > y3)]
    branches = select_branches(ell, selection)

    def g(xi1, xi2, tau):
        amp = first_order_amplitudes(ell, M0, M1, J_y, (xi1, xi2), tau, k, y3)
        val = _amplitude_value(amp, name, x3, branches, deriv)
        if order >= 2:
            amp2, _ = second_order_amplitudes(ell, metric, (xi1, xi2), tau, k, y3, first=amp)
            val = val + _amplitude_value(amp2, name, x3, branches, deriv)
        return val

    return g


def _m_min(metric: MetricField, y3: float) -> float:
    M1, _, _ = restrict(metric, y3)
    return float(np.linalg.eigvalsh(M1[:2, :2])[0])


def leading_kernel(ell: int, selection, metric: MetricField, x, t: float, y, s: float, k,
                   field_name: str = "G", contour: Optional[ContourSpec] = None,
                   deriv: Optional[str] = None) -> complex:
    """Value of a leading parametrix entry at ``(x, t; y, s)``.

    The side of the source plane (``a, d`` above it, ``b, e`` below it)
    follows from the sign of ``x3 - y3``.
    """
    contour = contour or ContourSpec()
    x, y = np.asarray(x, float), np.asarray(y, float)
    g = kernel_symbol(ell, field_name, metric, float(x[2]), float(y[2]), k, selection, deriv,
                      y_t=(float(y[0]), float(y[1])))
    k = as_contrast(k)
    m_min = _m_min(metric, float(y[2])) * (1.0 if field_name == "G" else min(k, 1.0))
    return complex(inverse_lf_transform(g, contour, x[:2] - y[:2], t - s, m_min=m_min))


@dataclass
class SpaceTimeKernel:
    """Kernel samples at scattered ``(x, t; y, s)`` points."""

    x: np.ndarray
    t: np.ndarray
    y: np.ndarray
    s: np.ndarray
    values: np.ndarray
    causal: bool = True
    label: str = ""

    def __post_init__(self) -> None:
        self.x = np.atleast_2d(np.asarray(self.x, float))
        self.y = np.atleast_2d(np.asarray(self.y, float))
        self.t = np.asarray(self.t, float).ravel()
        self.s = np.asarray(self.s, float).ravel()
        self.values = np.asarray(self.values).ravel()
        n = self.values.size
        if not (self.x.shape[0] == self.y.shape[0] == self.t.size == self.s.size == n):
            raise GridError("kernel sample arrays have inconsistent lengths")
        if not np.all(np.isfinite(self.values)):
            raise GridError("kernel samples must be finite")
        if self.causal and np.any(self.values[self.t < self.s] != 0):
            raise GridError("causal kernel has nonzero samples at t < s")

    def to_csv(self, path: Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x1", "x2", "x3", "t", "y1", "y2", "y3", "s", "ReK", "ImK"])
            for i in range(self.values.size):
                v = complex(self.values[i])
                w.writerow([*map(repr, self.x[i]), repr(self.t[i]), *map(repr, self.y[i]),
                            repr(self.s[i]), repr(v.real), repr(v.imag)])


@dataclass
class GaussianFit:
    c1: float
    c2: float
    p: float
    max_violation: float
    violations: int
    n_fit: int
    n_validate: int

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def _distance2(K: SpaceTimeKernel, mode: str) -> np.ndarray:
    dt = K.x[:, :2] - K.y[:, :2]
    lat = np.sum(dt * dt, axis=1)
    if mode == "direct":
        return lat + (K.x[:, 2] - K.y[:, 2]) ** 2
    if mode == "reflected":
        return lat + (K.x[:, 2] + K.y[:, 2]) ** 2
    raise ConfigurationError(f"unknown distance mode {mode!r}")


def gaussian_bound_fit(kernel: SpaceTimeKernel, p: float, mode: str = "direct",
                       safety: float = 1.5) -> GaussianFit:
    """Fit ``|K| <= c1 (t-s)^{-p} exp(-c2 d^2 / (t-s))`` and audit it.

    Samples alternate between a fit set and a validation set. With
    ``y = log|K| + p log(t-s)`` and ``z = d^2/(t-s)``, the fit picks the line
    ``log c1 - c2 z`` lying above every fit point with the smallest total gap
    (a two-variable linear program), so samples on an exact Gaussian return
    its exponent. ``c1`` is then inflated by ``safety``. ``max_violation`` is
    the largest ``log|K| - log(bound)`` over all samples; a non-positive value
    means the bound holds on the whole grid.
    """
    sel = kernel.t > kernel.s
    if not np.any(sel):
        raise GridError("Gaussian fit needs samples with t > s")
    tau = (kernel.t - kernel.s)[sel]
    d2 = _distance2(kernel, mode)[sel]
    a = np.abs(kernel.values[sel])
    if not np.any(a > 0):
        return GaussianFit(0.0, 0.0, p, 0.0, 0, int(sel.sum()), 0)
    idx = np.arange(a.size)
    fit = (idx % 2 == 0) & (a > 0)
    val = idx % 2 == 1
    z = d2 / tau
    yv = np.log(np.where(a > 0, a, 1e-300)) + p * np.log(tau)
    zf, yf = z[fit], yv[fit]
    c2 = 0.0
    if fit.sum() > 1 and np.ptp(zf) > 0:
        # variables (log c1, c2): minimise sum of gaps subject to the envelope
        sol = linprog(c=[zf.size, -zf.sum()], A_ub=np.column_stack([-np.ones_like(zf), zf]),
                      b_ub=-yf, bounds=[(None, None), (0.0, 1e3)], method="highs")
        if sol.status == 0:
            c2 = float(sol.x[1])
    env = yv + c2 * z
    c1 = float(np.exp(env[fit].max()) * safety)
    excess = np.where(a > 0, env - np.log(c1), -np.inf)
    return GaussianFit(c1, float(c2), p, float(excess.max()), int(np.sum(excess[val] > 0)
                                                                  + np.sum(excess[fit] > 0)),
                       int(fit.sum()), int(val.sum()))


def _apply_exact_operator(metric: MetricField, amps: Sequence[AmplitudeSet], name: str,
                          x3: float, gamma: float) -> np.ndarray:
    """Apply the exact layered operator (Fourier side in x') to an amplitude sum at ``x3``."""
    amp0 = amps[0]
    xi = amp0.xi_t
    p = np.array([0.0, 0.0, x3])
    M = metric.matrix(p)
    dM, dJ = metric.derivatives(p)
    J = metric.jacobian(p)
    w = M @ np.array([0.0, 0.0, dJ / J])
    R, Q, m33 = _frozen(M, xi)
    dR, _, dm33 = _frozen(dM, xi)
    wxi = w[0] * xi[0] + w[1] * xi[1]
    f0 = sum(a.evaluate(name, x3, 0) for a in amps)
    f1 = sum(a.evaluate(name, x3, 1) for a in amps)
    f2 = sum(a.evaluate(name, x3, 2) for a in amps)
    tau = amp0.tau
    return gamma * (-m33 * f2 - (dm33 + 2j * R + w[2]) * f1
                    + (Q - 1j * dR - 1j * wxi + tau / gamma) * f0)


def residual_symbol(metric: MetricField, N: int, ell: int, field_name: str, x3: float,
                    y3: float, k) -> SymbolFn:
    """Symbol of the exact operator applied to the order ``-1..-N`` amplitudes."""
    k = as_contrast(k)
    M1, M0, J_y = restrict(metric, y3)
    name = FIELD_FUNCTIONS[(field_name, x3 > y3)]
    gamma = 1.0 if field_name == "G" else k

    def g(xi1, xi2, tau):
        amp1 = first_order_amplitudes(ell, M0, M1, J_y, (xi1, xi2), tau, k, y3)
        amps = [amp1]
        if N >= 2:
            amps.append(second_order_amplitudes(ell, metric, (xi1, xi2), tau, k, y3,
                                                first=amp1)[0])
        return _apply_exact_operator(metric, amps, name, x3, gamma)

    return g


def truncation_error_probe(metric: MetricField, N: int, t_grid: Sequence[float],
                           y3: float = -0.5, k: float = 4.0, ell: int = 1,
                           rho_scales: Sequence[float] = (0.5, 1.0, 2.0),
                           contour: Optional[ContourSpec] = None) -> dict:
    """Near-diagonal scaling of the truncated-parametrix residual.

    For each ``t - s`` in ``t_grid`` the residual kernel is evaluated at
    ``x' = y'`` and ``x3 = y3 + c sqrt(t - s)`` for every ``c`` in
    ``rho_scales``, on both fields. The sup over those points is regressed
    on ``log(t - s)``; the slope is the reported exponent.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.size == 0 or np.any(t_grid <= 0):
        raise GridError("the truncation probe needs t - s > 0 on every grid point")
    if metric.kind == "flat":
        return {"N": N, "vacuous": True, "exponent": None, "sup": []}
    contour = contour or ContourSpec()
    sups = []
    for t in t_grid:
        best = 0.0
        for c in rho_scales:
            x3 = y3 + c * np.sqrt(t)
            if x3 > 0:
                continue
            for fname in ("G", "H"):
                g = residual_symbol(metric, N, ell, fname, x3, y3, k)
                best = max(best, abs(inverse_lf_transform(g, contour, (0.0, 0.0), t,
                                                          m_min=_m_min(metric, y3)
                                                          * (1.0 if fname == "G" else min(k, 1)))))
        sups.append(best)
    sups = np.array(sups)
    slope = float(np.polyfit(np.log(t_grid), np.log(sups), 1)[0])
    return {"N": N, "vacuous": False, "exponent": slope, "sup": sups.tolist(),
            "t": t_grid.tolist()}
