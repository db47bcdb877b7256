"""Large-parameter symbol calculus for the half-space transmission problem.

Everything here works on frozen coefficients: ``M1`` is the metric at the
source depth ``y3`` and ``M0`` the metric on the boundary ``x3 = 0``. All
functions accept numpy arrays for ``xi_t`` components and ``tau`` so that
kernel quadratures can evaluate whole node sets at once.

Amplitudes are exponential polynomials in the normal variable,

    f(x3) = sum_terms sum_l c_l (x3 - y3)^l exp(beta x3 - delta y3),

where ``(beta, delta)`` is one of eight root pairs. The common factor
``exp(-tau s - i y'.xi')`` is kept separately as ``AmplitudeSet.phase``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Optional

import numpy as np

from .errors import BranchError, ConfigurationError, DegeneracyError, InvalidMetricError
from .geometry import MetricField, as_contrast, restrict

__all__ = [
    "CharRoots",
    "Branch",
    "Term",
    "AmplitudeSet",
    "L2SystemSolution",
    "bracket",
    "branch_sqrt",
    "char_roots",
    "lopatinskii_denominator",
    "first_order_coefficients",
    "assemble_first_order",
    "first_order_amplitudes",
    "second_order_amplitudes",
    "verify_transmission_system",
    "ode_residual",
    "in_L2mu",
    "discriminant_values",
    "discriminant_check",
    "symbol_order_probe",
    "DEGENERACY_TOL",
]

DEGENERACY_TOL = 1e-10


def _c(x) -> np.ndarray:
    return np.asarray(x, dtype=complex)


def bracket(xi_t, tau) -> np.ndarray:
    """Return ``<xi', tau> = sqrt(1 + |xi'|^2 + |tau|)``."""
    x1, x2 = _c(xi_t[0]), _c(xi_t[1])
    return np.sqrt(1.0 + np.abs(x1) ** 2 + np.abs(x2) ** 2 + np.abs(_c(tau)))


def branch_sqrt(z) -> np.ndarray:
    """Square root with strictly positive real part.

    Uses the principal branch and flips the sign where the real part is
    negative. A vanishing real part means the argument sits on the cut
    ``(-inf, 0]`` and raises :class:`BranchError`.
    """
    z = _c(z)
    w = np.sqrt(z)
    w = np.where(w.real < 0, -w, w)
    bad = w.real <= 1e-15 * np.maximum(np.abs(w), 1e-300)
    if np.any(bad):
        raise BranchError("square-root argument lies on the branch cut (-inf, 0]")
    return w


def _frozen(M: np.ndarray, xi_t) -> tuple[np.ndarray, np.ndarray, float]:
    """``R = sum_j m_3j xi_j`` and ``Q = sum_jl m_jl xi_j xi_l`` for a frozen matrix."""
    x1, x2 = _c(xi_t[0]), _c(xi_t[1])
    R = M[2, 0] * x1 + M[2, 1] * x2
    Q = M[0, 0] * x1 * x1 + 2.0 * M[0, 1] * x1 * x2 + M[1, 1] * x2 * x2
    return R, Q, float(M[2, 2])


@dataclass(frozen=True)
class CharRoots:
    """Roots of the frozen normal-direction quadratics.

    ``lambda_pm`` belong to the unit-diffusivity operator and ``mu_pm`` to the
    operator with diffusivity ``k``. ``sqrt_lambda`` and ``sqrt_mu`` are the
    square-root terms, which have positive real part.
    """

    lambda_plus: np.ndarray
    lambda_minus: np.ndarray
    mu_plus: np.ndarray
    mu_minus: np.ndarray
    sqrt_lambda: np.ndarray
    sqrt_mu: np.ndarray
    m33: float
    R1: np.ndarray
    Q: np.ndarray

    def root(self, name: str) -> np.ndarray:
        return {"lp": self.lambda_plus, "lm": self.lambda_minus,
                "mp": self.mu_plus, "mm": self.mu_minus}[name]

    def quadratic_residuals(self, tau, k: float) -> np.ndarray:
        """Relative residuals of the four roots in their characteristic quadratics."""
        tau = _c(tau)
        out = []
        for lam, t in ((self.lambda_plus, tau), (self.lambda_minus, tau),
                       (self.mu_plus, tau / k), (self.mu_minus, tau / k)):
            terms = (self.m33 * lam * lam, 2j * self.R1 * lam, -(self.Q + t))
            scale = sum(np.abs(x) for x in terms)
            out.append(np.max(np.abs(sum(terms)) / np.maximum(scale, 1e-300)))
        return np.array(out)


def char_roots(M1: np.ndarray, xi_t, tau, k) -> CharRoots:
    """Characteristic roots for the frozen metric ``M1``.

    ``lambda_pm = (m33)^{-1} [-i R1 +- sqrt(m33 (Q + tau) - R1^2)]`` and
    ``mu_pm`` likewise with ``tau / k``.
    """
    k = as_contrast(k)
    M1 = np.asarray(M1, dtype=float)
    m33 = float(M1[2, 2])
    if not m33 > 0.0:
        raise InvalidMetricError(f"m33 must be positive, got {m33}")
    R1, Q, _ = _frozen(M1, xi_t)
    tau = _c(tau)
    sl = branch_sqrt(m33 * (Q + tau) - R1 * R1)
    sm = branch_sqrt(m33 * (Q + tau / k) - R1 * R1)
    base = -1j * R1
    return CharRoots(
        lambda_plus=(base + sl) / m33, lambda_minus=(base - sl) / m33,
        mu_plus=(base + sm) / m33, mu_minus=(base - sm) / m33,
        sqrt_lambda=sl, sqrt_mu=sm, m33=m33, R1=R1, Q=Q,
    )


def lopatinskii_denominator(M0: np.ndarray, M1: np.ndarray, xi_t, tau, k,
                            roots: Optional[CharRoots] = None,
                            tol: float = DEGENERACY_TOL) -> np.ndarray:
    """Boundary-system determinant ``k(iR0 + mu+ m33^0) - (iR0 + lambda+ m33^0)``.

    Raises :class:`DegeneracyError` where ``|den| < tol * <xi', tau>``.
    """
    k = as_contrast(k) if abs(float(k) - 1.0) > 1e-12 else 1.0
    if roots is None:
        roots = _roots_any_k(M1, xi_t, tau, k)
    R0, _, m0 = _frozen(np.asarray(M0, dtype=float), xi_t)
    den = k * (1j * R0 + roots.mu_plus * m0) - (1j * R0 + roots.lambda_plus * m0)
    if np.any(np.abs(den) < tol * bracket(xi_t, tau)):
        raise DegeneracyError("Lopatinskii denominator vanishes")
    return den


def _roots_any_k(M1, xi_t, tau, k) -> CharRoots:
    # k = 1 is allowed here only so the degeneracy itself can be reported.
    if abs(float(k) - 1.0) <= 1e-12:
        M1 = np.asarray(M1, dtype=float)
        R1, Q, m33 = _frozen(M1, xi_t)
        if not m33 > 0:
            raise InvalidMetricError("m33 must be positive")
        s = branch_sqrt(m33 * (Q + _c(tau)) - R1 * R1)
        lp, lm = (-1j * R1 + s) / m33, (-1j * R1 - s) / m33
        return CharRoots(lp, lm, lp, lm, s, s, m33, R1, Q)
    return char_roots(M1, xi_t, tau, k)


class Branch(Enum):
    """The eight exponential branches ``exp(beta x3 - delta y3)``."""

    LP_LM = (1, "lp", "lm")
    LP_MM = (2, "lp", "mm")
    LM_LM = (3, "lm", "lm")
    LP_LP = (4, "lp", "lp")
    MP_LM = (5, "mp", "lm")
    MP_MM = (6, "mp", "mm")
    MM_MM = (7, "mm", "mm")
    MP_MP = (8, "mp", "mp")

    @property
    def index(self) -> int:
        return self.value[0]

    @property
    def x_root(self) -> str:
        return self.value[1]

    @property
    def y_root(self) -> str:
        return self.value[2]

    @property
    def label(self) -> str:
        sym = {"lp": "lambda+", "lm": "lambda-", "mp": "mu+", "mm": "mu-"}
        return f"{sym[self.x_root]}*x3-{sym[self.y_root]}*y3"

    def gamma(self, k: float) -> float:
        return 1.0 if self.index <= 4 else k


@dataclass
class Term:
    """``sum_l coeffs[l] (x3 - y3)^l exp(beta x3 - delta y3)`` on one branch."""

    branch: Branch
    coeffs: list
    orders: tuple

    def poly(self, rho, deriv: int = 0):
        c = self.coeffs
        if deriv == 0:
            return sum(c[l] * rho ** l for l in range(len(c)))
        if deriv == 1:
            return sum(l * c[l] * rho ** (l - 1) for l in range(1, len(c)))
        return sum(l * (l - 1) * c[l] * rho ** (l - 2) for l in range(2, len(c)))


@dataclass
class AmplitudeSet:
    """Amplitudes ``a, b, d, e`` of one order ``-L`` for Green column ``ell``.

    ``a`` and ``d`` hold for ``x3 > y3``, ``b`` and ``e`` for ``x3 < y3``.
    ``a, b`` belong to the unit-diffusivity field, ``d, e`` to the field with
    diffusivity ``k``.
    """

    ell: int
    L: int
    roots: CharRoots
    terms: dict
    phase: np.ndarray
    y3: float
    M0: np.ndarray
    M1: np.ndarray
    J_y: float
    k: float
    xi_t: tuple
    tau: np.ndarray
    coefficients: dict = field(default_factory=dict)

    def branches(self, name: str) -> list:
        return [t.branch for t in self.terms[name]]

    def term(self, name: str, branch: Branch) -> Term:
        for t in self.terms[name]:
            if t.branch is branch:
                return t
        raise KeyError(f"{name} has no term on branch {branch.name}")

    def _exp(self, branch: Branch, x3, y3=None):
        y3 = self.y3 if y3 is None else y3
        return np.exp(self.roots.root(branch.x_root) * x3 - self.roots.root(branch.y_root) * y3)

    def parts(self, name: str, x3, deriv: int = 0) -> list:
        """Per-term contributions to ``d^deriv/dx3^deriv`` of amplitude ``name`` (no phase)."""
        rho = x3 - self.y3
        out = []
        for t in self.terms[name]:
            beta = self.roots.root(t.branch.x_root)
            E = self._exp(t.branch, x3)
            if deriv == 0:
                out.append(t.poly(rho) * E)
            elif deriv == 1:
                out.append((t.poly(rho, 1) + beta * t.poly(rho)) * E)
            else:
                out.append((t.poly(rho, 2) + 2 * beta * t.poly(rho, 1)
                            + beta * beta * t.poly(rho)) * E)
        return out

    def evaluate(self, name: str, x3, deriv: int = 0, with_phase: bool = False):
        val = sum(self.parts(name, x3, deriv)) if self.terms[name] else 0.0 * self.phase
        return val * self.phase if with_phase else val

    def table(self) -> list[dict]:
        """Rows ``(function, branch, l, value, order)`` for scalar amplitudes."""
        rows = []
        for name in "abde":
            for t in self.terms[name]:
                for l, c in enumerate(t.coeffs):
                    rows.append({"function": name, "branch": t.branch.label, "l": l,
                                 "value": complex(np.asarray(c).reshape(-1)[0]),
                                 "order": t.orders[l]})
        return rows


def first_order_coefficients(M0, M1, J_y, xi_t, tau, k,
                             roots: Optional[CharRoots] = None) -> dict:
    """``A1, B1, A2, B2`` and the Lopatinskii denominator."""
    k = as_contrast(k)
    if roots is None:
        roots = char_roots(M1, xi_t, tau, k)
    lp, lm, mp, mm = roots.lambda_plus, roots.lambda_minus, roots.mu_plus, roots.mu_minus
    if np.any(lp == lm) or np.any(mp == mm):
        raise DegeneracyError("coincident characteristic roots")
    den = lopatinskii_denominator(M0, M1, xi_t, tau, k, roots=roots)
    R0, _, m0 = _frozen(np.asarray(M0, dtype=float), xi_t)
    m1 = roots.m33
    A1 = 1.0 / (J_y * m1 * (lp - lm))
    B1 = 1.0 / (J_y * k * m1 * (mp - mm))
    A2 = (lm - lp) * m0 * A1 / den
    B2 = ((1j * R0 + lp * m0) - k * (1j * R0 + mm * m0)) * B1 / den
    return {"A1": A1, "B1": B1, "A2": A2, "B2": B2, "den": den, "R0": R0, "m0": m0}


def assemble_first_order(ell: int, roots: CharRoots, coeffs: dict, *, M0, M1, J_y, k,
                         xi_t, tau, y3: float, s: float = 0.0, y_t=(0.0, 0.0)) -> AmplitudeSet:
    """Build the order ``-1`` amplitude set from ``A1, A2, B1, B2``."""
    if ell not in (1, 2):
        raise ConfigurationError("ell must be 1 or 2")
    A1, A2, B1, B2 = coeffs["A1"], coeffs["A2"], coeffs["B1"], coeffs["B2"]

    def T(b, c):
        return Term(b, [c], (-1,))

    if ell == 1:
        terms = {"a": [T(Branch.LP_LM, -A1 + A2), T(Branch.LM_LM, A1)],
                 "b": [T(Branch.LP_LM, -A1 + A2), T(Branch.LP_LP, A1)],
                 "d": [T(Branch.MP_LM, A2)],
                 "e": [T(Branch.MP_LM, A2)]}
    else:
        terms = {"a": [T(Branch.LP_MM, B1 + B2)],
                 "b": [T(Branch.LP_MM, B1 + B2)],
                 "d": [T(Branch.MP_MM, B2), T(Branch.MM_MM, B1)],
                 "e": [T(Branch.MP_MM, B2), T(Branch.MP_MP, B1)]}
    tau = _c(tau)
    phase = np.exp(-tau * s - 1j * (y_t[0] * _c(xi_t[0]) + y_t[1] * _c(xi_t[1])))
    return AmplitudeSet(ell=ell, L=1, roots=roots, terms=terms, phase=phase, y3=float(y3),
                        M0=np.asarray(M0, float), M1=np.asarray(M1, float), J_y=float(J_y),
                        k=float(k), xi_t=xi_t, tau=tau, coefficients=dict(coeffs))


def first_order_amplitudes(ell: int, M0, M1, J_y: float, xi_t, tau, k, y3: float,
                           s: float = 0.0, y_t=(0.0, 0.0)) -> AmplitudeSet:
    """Leading (order ``-1``) amplitudes of Green column ``ell``."""
    k = as_contrast(k)
    roots = char_roots(M1, xi_t, tau, k)
    coeffs = first_order_coefficients(M0, M1, J_y, xi_t, tau, k, roots=roots)
    return assemble_first_order(ell, roots, coeffs, M0=M0, M1=M1, J_y=J_y, k=k,
                                xi_t=xi_t, tau=tau, y3=y3, s=s, y_t=y_t)


def verify_transmission_system(amp: AmplitudeSet, y3: Optional[float] = None) -> np.ndarray:
    """Relative residuals of the six jump and boundary conditions.

    Order: value jump of ``a - b`` and flux jump at ``x3 = y3``; the same
    for ``d - e``; then ``a - d`` and the flux balance at ``x3 = 0``. Each
    residual is divided by the sum of the magnitudes of its terms, and the
    maximum over array entries is reported. The common phase is factored out.
    """
    y3 = amp.y3 if y3 is None else float(y3)
    R1 = amp.roots.R1
    m1 = amp.roots.m33
    R0, _, m0 = _frozen(amp.M0, amp.xi_t)
    k = amp.k
    src = 1.0 if amp.L == 1 else 0.0
    ja = (2 - amp.ell) * src / amp.J_y
    jd = (amp.ell - 1) * src / amp.J_y

    def P(name, x3, d):
        return amp.parts(name, x3, d)

    def rel(pos: list, neg: list, const=0.0):
        val = sum(pos) - sum(neg) + const
        scale = sum(np.abs(p) for p in pos) + sum(np.abs(p) for p in neg) + np.abs(const)
        r = np.abs(val) / np.maximum(scale, 1e-300)
        return float(np.max(r))

    a0, b0, d0, e0 = P("a", y3, 0), P("b", y3, 0), P("d", y3, 0), P("e", y3, 0)
    a1, b1, d1, e1 = P("a", y3, 1), P("b", y3, 1), P("d", y3, 1), P("e", y3, 1)
    res = [rel(a0, b0)]
    res.append(rel([m1 * p for p in a1] + [1j * R1 * p for p in a0],
                   [m1 * p for p in b1] + [1j * R1 * p for p in b0], ja))
    res.append(rel(d0, e0))
    res.append(rel([k * m1 * p for p in d1] + [1j * k * R1 * p for p in d0],
                   [k * m1 * p for p in e1] + [1j * k * R1 * p for p in e0], jd))
    A0, D0 = P("a", 0.0, 0), P("d", 0.0, 0)
    A1, D1 = P("a", 0.0, 1), P("d", 0.0, 1)
    res.append(rel(A0, D0))
    res.append(rel([1j * R0 * p for p in A0] + [m0 * p for p in A1],
                   [1j * k * R0 * p for p in D0] + [k * m0 * p for p in D1]))
    return np.array(res)


@dataclass
class L2SystemSolution:
    """Intermediate quantities of the order ``-2`` construction."""

    C: dict
    A: dict
    B: dict
    F: dict
    E: dict


@dataclass(frozen=True)
class _LowerOrderData:
    dm33: float
    dR: np.ndarray
    dQ: np.ndarray
    w3: float
    wxi: np.ndarray


def _lower_order_data(metric: MetricField, y3: float, xi_t, x_t) -> _LowerOrderData:
    p = np.array([x_t[0], x_t[1], y3], dtype=float)
    M = metric.matrix(p)
    dM, dJ = metric.derivatives(p)
    J = metric.jacobian(p)
    w = M @ np.array([0.0, 0.0, dJ / J])
    dR, dQ, dm33 = _frozen(dM, xi_t)
    wxi = w[0] * _c(xi_t[0]) + w[1] * _c(xi_t[1])
    return _LowerOrderData(dm33=dm33, dR=dR, dQ=dQ, w3=float(w[2]), wxi=wxi)


def _theta_coefficients(beta, c, gamma, lo: _LowerOrderData):
    """``(E0, E1)`` of ``[(x3-y3) d3 p2 + p1]`` applied to ``c exp(beta x3)``."""
    E1 = gamma * c * (-lo.dm33 * beta * beta - 2j * lo.dR * beta + lo.dQ)
    E0 = gamma * c * (-(lo.dm33 + lo.w3) * beta - 1j * (lo.dR + lo.wxi))
    return E0, E1


def second_order_amplitudes(ell: int, metric: MetricField, xi_t, tau, k, y3: float,
                            s: float = 0.0, y_t=(0.0, 0.0),
                            first: Optional[AmplitudeSet] = None
                            ) -> tuple[AmplitudeSet, L2SystemSolution]:
    """Order ``-2`` amplitudes for a layered metric.

    The source terms come from the Taylor remainder of the principal part and
    from the first-order part of the operator, applied to the order ``-1``
    amplitudes. Particular solutions carry the polynomial coefficients
    ``F_{l,j}``; the remaining constants follow from the six jump and boundary
    conditions in closed form.
    """
    k = as_contrast(k)
    if not metric.x_tangential_invariant:
        raise ConfigurationError("second-order amplitudes need a metric independent of x'")
    if not metric.has_x3_derivatives:
        raise ConfigurationError("second-order amplitudes need analytic x3-derivatives")
    M1, M0, J_y = restrict(metric, y3, y_t)
    if first is None:
        first = first_order_amplitudes(ell, M0, M1, J_y, xi_t, tau, k, y3, s, y_t)
    roots = first.roots
    lo = _lower_order_data(metric, y3, xi_t, y_t)
    m1, R1 = roots.m33, roots.R1
    R0, _, m0 = _frozen(M0, xi_t)
    den = first.coefficients["den"]
    zero = 0.0 * first.phase

    E: dict = {}
    F: dict = {}
    for name in "abde":
        for t in first.terms[name]:
            j = t.branch.index
            if (0, j) in E:
                continue
            beta = roots.root(t.branch.x_root)
            g = t.branch.gamma(k)
            E0, E1 = _theta_coefficients(beta, t.coeffs[0], g, lo)
            E[(0, j)], E[(1, j)] = E0, E1
            F2 = E1 / (4.0 * g * (beta * m1 + 1j * R1))
            F[(2, j)] = F2
            F[(1, j)] = (E0 - 2.0 * g * m1 * F2) / (2.0 * g * (beta * m1 + 1j * R1))
    for j in range(1, 9):
        for l in (0, 1):
            E.setdefault((l, j), zero)
        for l in (1, 2):
            F.setdefault((l, j), zero)

    lp, lm, mp, mm = roots.lambda_plus, roots.lambda_minus, roots.mu_plus, roots.mu_minus
    z = -y3

    def S(*js, weights=None):
        w = weights or [1.0] * len(js)
        return sum(wi * F[(l, j)] * z ** l for j, wi in zip(js, w) for l in (1, 2))

    def dS(*js):
        return sum(l * F[(l, j)] * z ** (l - 1) for j in js for l in (1, 2))

    A3 = -(S(1) + S(3) - S(5))
    B3 = -(S(2) - S(6) - S(7))
    A4 = (-1j * R0 * (S(1) + S(3)) - m0 * (dS(1, 3) + lp * S(1) + lm * S(3))
          + 1j * k * R0 * S(5) + k * m0 * (dS(5) + mp * S(5)))
    B4 = (-1j * R0 * S(2) - m0 * (dS(2) + lp * S(2))
          + 1j * k * R0 * (S(6) + S(7)) + k * m0 * (dS(6, 7) + mp * S(6) + mm * S(7)))
    C3 = (F[(1, 3)] - F[(1, 4)]) / (lp - lm)
    C9 = (F[(1, 7)] - F[(1, 8)]) / (mp - mm)
    A5, B5 = A3 - C3, B3 + C9
    A6 = A4 - (1j * R0 + lm * m0) * C3
    B6 = B4 + k * (1j * R0 + mm * m0) * C9
    A7 = ((1j * R0 + lp * m0) * A5 - A6) / den
    B7 = ((1j * R0 + lp * m0) * B5 - B6) / den

    def T(branch, const):
        j = branch.index
        return Term(branch, [const, F[(1, j)], F[(2, j)]], (-2, -1, 0))

    if ell == 1:
        terms = {"a": [T(Branch.LP_LM, A5 + A7), T(Branch.LM_LM, C3)],
                 "b": [T(Branch.LP_LM, A5 + A7), T(Branch.LP_LP, C3)],
                 "d": [T(Branch.MP_LM, A7)],
                 "e": [T(Branch.MP_LM, A7)]}
        C = {1: A5 + A7, 2: zero, 3: C3, 4: A5 + A7, 5: zero, 6: C3,
             7: A7, 8: zero, 9: zero, 10: A7, 11: zero, 12: zero}
    else:
        terms = {"a": [T(Branch.LP_MM, B5 + B7)],
                 "b": [T(Branch.LP_MM, B5 + B7)],
                 "d": [T(Branch.MP_MM, B7), T(Branch.MM_MM, C9)],
                 "e": [T(Branch.MP_MM, B7), T(Branch.MP_MP, C9)]}
        C = {1: zero, 2: B5 + B7, 3: zero, 4: zero, 5: B5 + B7, 6: zero,
             7: zero, 8: B7, 9: C9, 10: zero, 11: B7, 12: C9}
    amp = AmplitudeSet(ell=ell, L=2, roots=roots, terms=terms, phase=first.phase, y3=float(y3),
                       M0=M0, M1=M1, J_y=J_y, k=k, xi_t=xi_t, tau=first.tau,
                       coefficients={"den": den})
    sol = L2SystemSolution(C=C, A={3: A3, 4: A4, 5: A5, 6: A6, 7: A7},
                           B={3: B3, 4: B4, 5: B5, 6: B6, 7: B7}, F=F, E=E)
    return amp, sol


def ode_residual(amp2: AmplitudeSet, amp1: AmplitudeSet, metric: MetricField, x3) -> float:
    """Relative residual of the order ``-2`` ODEs at the sample depths ``x3``.

    The right-hand side is obtained by applying the frozen lower-order
    operator to the order ``-1`` amplitudes directly, independently of the
    stored ``E_{l,j}``.
    """
    lo = _lower_order_data(metric, amp1.y3, amp1.xi_t, (0.0, 0.0))
    m1, R1, Q = amp1.roots.m33, amp1.roots.R1, amp1.roots.Q
    tau, k = amp1.tau, amp1.k
    worst = 0.0
    for x in np.atleast_1d(np.asarray(x3, dtype=float)):
        rho = x - amp1.y3
        for name, g in (("a", 1.0), ("b", 1.0), ("d", k), ("e", k)):
            if (name in "ad" and rho < 0) or (name in "be" and rho > 0):
                continue
            t_over = tau / g
            f0, f1, f2 = (amp2.evaluate(name, x, d) for d in (0, 1, 2))
            lhs = g * (m1 * f2 + 2j * R1 * f1 - (Q + t_over) * f0)
            u0, u1, u2 = (amp1.evaluate(name, x, d) for d in (0, 1, 2))
            rhs = g * (rho * (-lo.dm33 * u2 - 2j * lo.dR * u1 + lo.dQ * u0)
                       - (lo.dm33 + lo.w3) * u1 - 1j * (lo.dR + lo.wxi) * u0)
            scale = (np.abs(g * m1 * f2) + np.abs(2 * g * R1 * f1) + np.abs(g * (Q + t_over) * f0)
                     + np.abs(rhs))
            r = np.abs(lhs - rhs) / np.maximum(scale, 1e-300)
            worst = max(worst, float(np.max(r)))
    return worst


def in_L2mu(xi_t, eta, mu: float) -> np.ndarray:
    """Membership test ``Im eta < mu(|Re eta| + |Re xi'|^2) - |Im xi'|^2 / mu``."""
    if mu <= 0:
        raise ConfigurationError("mu must be positive")
    x1, x2, eta = _c(xi_t[0]), _c(xi_t[1]), _c(eta)
    re2 = x1.real ** 2 + x2.real ** 2
    im2 = x1.imag ** 2 + x2.imag ** 2
    return eta.imag < mu * (np.abs(eta.real) + re2) - im2 / mu


def discriminant_values(M: np.ndarray, xi_t, eta) -> np.ndarray:
    """``p1^2 - 4 p0 p2 + 4 p0 i eta`` with ``p0 = -m33``, ``p1 = -2R``, ``p2 = -Q``."""
    R, Q, m33 = _frozen(np.asarray(M, dtype=float), xi_t)
    p0, p1, p2 = -m33, -2.0 * R, -Q
    return p1 * p1 - 4.0 * p0 * p2 + 4.0 * p0 * 1j * _c(eta)


def _ray_distance(z: np.ndarray) -> np.ndarray:
    return np.where(z.real >= 0, np.abs(z.imag), np.abs(z))


def sample_L2mu(rng: np.random.Generator, n: int, mu: float, scale: float = 10.0):
    """Random points of ``L^2_mu``, concentrated near its boundary."""
    r = np.exp(rng.uniform(np.log(1e-3), np.log(scale), (4, n)))
    sgn = rng.choice([-1.0, 1.0], (4, n))
    xr = (r[0] * sgn[0], r[1] * sgn[1])
    xim = rng.standard_normal((2, n)) * r[2] * np.where(rng.random(n) < 0.3, 0.0, 1.0)
    eta_r = sgn[3] * r[3]
    bound = mu * (np.abs(eta_r) + xr[0] ** 2 + xr[1] ** 2) - (xim[0] ** 2 + xim[1] ** 2) / mu
    gap = np.exp(rng.uniform(np.log(1e-9), np.log(scale), n))
    eta_i = bound - gap
    xi = (xr[0] + 1j * xim[0], xr[1] + 1j * xim[1])
    return xi, eta_r + 1j * eta_i


def discriminant_check(M: np.ndarray, mu: float, n: int, rng: Optional[np.random.Generator] = None
                  ) -> dict:
    """Sample ``L^2_mu`` and report the distance of the discriminant from ``[0, inf)``."""
    if n <= 0:
        return {"samples": 0, "violations": 0, "min_distance": None}
    rng = np.random.default_rng(0) if rng is None else rng
    xi, eta = sample_L2mu(rng, n, mu)
    inside = in_L2mu(xi, eta, mu)
    z = discriminant_values(M, (xi[0][inside], xi[1][inside]), eta[inside])
    dist = _ray_distance(z)
    scale = np.abs(z) + 1e-300
    return {"samples": int(inside.sum()), "violations": int(np.sum(dist <= 0.0)),
            "min_distance": float(dist.min()), "min_relative_distance": float((dist / scale).min())}


def symbol_order_probe(term: Callable, m: float, grid: Iterable, slope_tol: float = 0.05) -> dict:
    """Empirical boundedness of ``|a| <xi', tau>^{-m}`` over a real-regime grid.

    ``grid`` yields ``(xi1, xi2, tau)`` triples. The grid is split into
    logarithmic bands of the bracket; the slope of ``log sup ratio`` against
    ``log <xi', tau>`` across bands must not exceed ``slope_tol``.
    """
    pts = np.array(list(grid), dtype=complex)
    if pts.size == 0:
        return {"sup_ratio": None, "slope": None, "bounded": True}
    x1, x2, tau = pts[:, 0], pts[:, 1], pts[:, 2]
    br = bracket((x1, x2), tau)
    vals = np.abs(_c(term(x1, x2, tau))) * br ** (-m)
    logb = np.log(br)
    edges = np.linspace(logb.min(), logb.max() + 1e-12, 9)
    centres, sups = [], []
    for lo_, hi_ in zip(edges[:-1], edges[1:]):
        sel = (logb >= lo_) & (logb < hi_)
        if sel.any():
            centres.append(0.5 * (lo_ + hi_))
            sups.append(np.log(vals[sel].max() + 1e-300))
    slope = float(np.polyfit(centres, sups, 1)[0]) if len(centres) > 1 else 0.0
    return {"sup_ratio": float(vals.max()), "slope": slope, "bounded": slope <= slope_tol}


def real_regime_grid(n_xi: int = 12, n_tau: int = 25, tau_max: float = 1e6,
                     angles=(0.0, 0.25 * np.pi, -0.25 * np.pi, 0.45 * np.pi)):
    """Log-spaced real-regime grid with ``|tau|`` in ``[1, tau_max]``."""
    out = []
    for r in np.geomspace(1.0, tau_max, n_tau):
        for th in angles:
            tau = r * np.exp(1j * th)
            for x in np.concatenate([[0.0], np.geomspace(0.1, np.sqrt(tau_max), n_xi)]):
                out.append((x * 0.6, x * 0.8, tau))
    return out
