"""Fundamental solutions, partitions of unity and the patched parametrix.

The model domain is the slab ``[-L, L]^2 x [-d, 0]`` with boundary ``x3 = 0``.
Boundary charts are lateral strips times a boundary layer; the interior chart
is the complement of the layer. Every local kernel returns the 2x2 block

    [[G_1, G_2],
     [H_1, H_2]]

with rows indexed by the field (``G`` unit diffusivity, ``H`` diffusivity
``k``) and columns by the equation carrying the source. The patched kernel is
``sum_j psi_j(x) K^j(x, t; y, s) phi_j(y)``.

A 1-D version on ``[0, 1]`` uses closed-form half-line kernels at both ends
and feeds the Levi compensation, for comparison with the finite-difference
reference solver.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
from scipy.special import expit

from .errors import ConfigurationError, GridError
from .geometry import MetricField, SlabDomain, as_contrast, flat_metric, restrict
from .kernels import (FIELD_FUNCTIONS, ContourSpec, SpaceTimeKernel, _amplitude_value, _m_min,
                      inverse_lf_transform)
from .levi import (cell_moments, compensate_column, compensate_column_pi, march_column,
                   march_column_pi)
from .symbols import first_order_amplitudes

__all__ = [
    "heat_fundamental",
    "heat_kernel_1d",
    "smooth_step",
    "Profile",
    "Cutoff",
    "PartitionOfUnity",
    "FundamentalPair",
    "HalfSpaceChartKernel",
    "GlobalParametrix",
    "build_partition",
    "build_partition_1d",
    "assemble_parametrix",
    "parametrix_residual",
    "boundary_residual",
    "residual_flatness",
    "lift_boundary_defect",
    "half_line_itp",
    "Parametrix1D",
    "compensated_green_column",
]


def heat_fundamental(x, t, y, s, kappa: float = 1.0):
    """``H(t - s) (4 pi kappa (t - s))^{-3/2} exp(-|x - y|^2 / (4 kappa (t - s)))``."""
    if kappa <= 0:
        raise ConfigurationError("diffusivity must be positive")
    d = np.asarray(x, float) - np.asarray(y, float)
    tau = np.asarray(t, float) - np.asarray(s, float)
    r2 = np.sum(d * d, axis=-1)
    pos = tau > 0
    safe = np.where(pos, tau, 1.0)
    v = np.where(pos, (4 * np.pi * kappa * safe) ** -1.5 * np.exp(-r2 / (4 * kappa * safe)), 0.0)
    return float(v) if np.ndim(v) == 0 else v


def heat_kernel_1d(d, t, kappa: float = 1.0, deriv: int = 0):
    """1-D heat kernel of displacement ``d`` and its ``d``-derivatives up to order 2."""
    d = np.asarray(d, float)
    g = np.exp(-d * d / (4 * kappa * t)) / np.sqrt(4 * np.pi * kappa * t)
    if deriv == 0:
        return g
    if deriv == 1:
        return -d / (2 * kappa * t) * g
    if deriv == 2:
        return (d * d / (4 * kappa * kappa * t * t) - 1 / (2 * kappa * t)) * g
    raise ConfigurationError("heat kernel derivatives are available up to order 2")


# ----------------------------------------------------------------------------- cutoffs

def smooth_step(x, a: float, b: float, deriv: int = 0):
    """C-infinity step rising from 0 at ``a`` to 1 at ``b`` (and its derivatives).

    Built from ``exp(-1/u)`` splines: ``S = sigmoid(-(1/u - 1/(1-u)))`` with
    ``u = (x - a) / (b - a)``, which is exactly 0 and 1 outside ``(a, b)``.
    """
    if not b > a:
        raise ConfigurationError("smooth step needs a < b")
    x = np.asarray(x, float)
    L = b - a
    u = (x - a) / L
    inside = (u > 0) & (u < 1)
    uc = np.clip(u, 1e-6, 1 - 1e-6)
    h = 1 / uc - 1 / (1 - uc)
    sig = expit(-h)
    if deriv == 0:
        return np.where(u >= 1, 1.0, np.where(inside, sig, 0.0))
    h1 = -1 / uc ** 2 - 1 / (1 - uc) ** 2
    if deriv == 1:
        return np.where(inside, -sig * (1 - sig) * h1 / L, 0.0)
    if deriv == 2:
        h2 = 2 / uc ** 3 - 2 / (1 - uc) ** 3
        val = -sig * (1 - sig) * (h2 - (1 - 2 * sig) * h1 * h1)
        return np.where(inside, val / L ** 2, 0.0)
    raise ConfigurationError("smooth step derivatives are available up to order 2")


@dataclass(frozen=True)
class Profile:
    """1-D cutoff ``c0 + sum_i c_i S(x; a_i, b_i)``."""

    const: float
    steps: tuple = ()

    def __call__(self, x, deriv: int = 0):
        x = np.asarray(x, float)
        out = np.full(x.shape, self.const if deriv == 0 else 0.0)
        for c, a, b in self.steps:
            out = out + c * smooth_step(x, a, b, deriv)
        return out

    @staticmethod
    def one() -> "Profile":
        return Profile(1.0)

    @staticmethod
    def up(a: float, b: float) -> "Profile":
        return Profile(0.0, ((1.0, a, b),))

    @staticmethod
    def down(a: float, b: float) -> "Profile":
        return Profile(1.0, ((-1.0, a, b),))

    @staticmethod
    def window(a0: Optional[float], a1: Optional[float], b0: Optional[float],
               b1: Optional[float]) -> "Profile":
        """Rises on ``[a0, a1]``, falls on ``[b0, b1]``. ``None`` drops a side."""
        const, steps = 0.0, []
        if a0 is None:
            const = 1.0
        else:
            steps.append((1.0, a0, a1))
        if b0 is not None:
            steps.append((-1.0, b0, b1))
        return Profile(const, tuple(steps))


@dataclass(frozen=True)
class Cutoff:
    """Tensor-product cutoff ``prod_a f_a(x_a)`` with analytic derivatives."""

    factors: tuple  # ((axis, Profile), ...)
    dim: int = 3

    def _parts(self, P):
        P = np.atleast_2d(np.asarray(P, float))
        f = {a: (p(P[:, a]), p(P[:, a], 1), p(P[:, a], 2)) for a, p in self.factors}
        return P, f

    def value(self, P) -> np.ndarray:
        P, f = self._parts(P)
        out = np.ones(P.shape[0])
        for v in f.values():
            out = out * v[0]
        return out

    def grad(self, P) -> np.ndarray:
        P, f = self._parts(P)
        g = np.zeros((P.shape[0], self.dim))
        for a in f:
            term = f[a][1].copy()
            for b in f:
                if b != a:
                    term = term * f[b][0]
            g[:, a] += term
        return g

    def hessian(self, P) -> np.ndarray:
        P, f = self._parts(P)
        H = np.zeros((P.shape[0], self.dim, self.dim))
        for a in f:
            for b in f:
                term = np.ones(P.shape[0])
                for c in f:
                    if a == b == c:
                        term = term * f[c][2]
                    elif c in (a, b):
                        term = term * f[c][1]
                    else:
                        term = term * f[c][0]
                H[:, a, b] += term
        return H

    def laplacian(self, P) -> np.ndarray:
        return np.trace(self.hessian(P), axis1=1, axis2=2)


class ComplementCutoff(Cutoff):
    """``1 - sum`` of other cutoffs; used for the interior member of a partition."""

    def __init__(self, others: Sequence[Cutoff], dim: int = 3):
        object.__setattr__(self, "factors", ())
        object.__setattr__(self, "dim", dim)
        object.__setattr__(self, "others", tuple(others))

    def value(self, P):
        return 1.0 - sum(c.value(P) for c in self.others)

    def grad(self, P):
        return -sum(c.grad(P) for c in self.others)

    def hessian(self, P):
        return -sum(c.hessian(P) for c in self.others)


@dataclass
class PartitionOfUnity:
    """Cutoffs ``phi_j`` summing to one and companions ``psi_j`` with ``psi_j phi_j = phi_j``.

    The invariants are checked on ``test_points`` at construction:
    the sum of the ``phi_j`` is one, ``psi_j = 1`` wherever ``phi_j != 0``, and
    no test point carries both ``phi_j != 0`` and a nonzero derivative of
    ``psi_j``. The smallest distance between those two sets is recorded.
    """

    phis: list
    psis: list
    labels: list
    test_points: np.ndarray
    params: dict = field(default_factory=dict)
    sum_error: float = field(init=False, default=np.nan)
    containment_error: float = field(init=False, default=np.nan)
    separation: list = field(init=False, default_factory=list)

    def __post_init__(self) -> None:
        if not (len(self.phis) == len(self.psis) == len(self.labels)) or not self.phis:
            raise ConfigurationError("partition needs matching, nonempty phi/psi/label lists")
        P = np.atleast_2d(np.asarray(self.test_points, float))
        self.test_points = P
        total = sum(p.value(P) for p in self.phis)
        self.sum_error = float(np.abs(total - 1).max())
        if self.sum_error > 1e-12:
            raise ConfigurationError(
                f"cutoffs do not sum to one on the test grid (error {self.sum_error:.2e})")
        cont, seps = 0.0, []
        for phi, psi, lab in zip(self.phis, self.psis, self.labels):
            fv = phi.value(P)
            on = np.abs(fv) > 0
            cont = max(cont, float(np.abs(psi.value(P) * fv - fv).max()))
            dpsi = (np.abs(psi.grad(P)).sum(axis=1) + np.abs(psi.hessian(P)).sum(axis=(1, 2))) > 0
            if np.any(on & dpsi):
                raise ConfigurationError(f"support of phi and of d psi overlap in chart {lab!r}")
            if on.any() and dpsi.any():
                a, b = P[on], P[dpsi]
                d = min(float(np.sqrt(((a[i::64, None, :] - b[None]) ** 2).sum(-1)).min())
                        for i in range(min(64, len(a))))
                seps.append(d)
            else:
                seps.append(np.inf)
        self.containment_error = cont
        self.separation = seps
        if cont > 1e-12:
            raise ConfigurationError(f"psi_j phi_j != phi_j on the test grid (error {cont:.2e})")

    def index(self, label) -> int:
        return self.labels.index(label)

    def manifest(self) -> dict:
        return {"labels": [str(l) for l in self.labels], "params": self.params,
                "sum_error": self.sum_error, "containment_error": self.containment_error,
                "separation": [float(s) for s in self.separation]}


def _slab_grid(domain: SlabDomain, n: int) -> np.ndarray:
    a = np.linspace(-domain.lateral, domain.lateral, n)
    z = np.linspace(-domain.depth, 0.0, n)
    X1, X2, X3 = np.meshgrid(a, a, z, indexing="ij")
    return np.column_stack([X1.ravel(), X2.ravel(), X3.ravel()])


def build_partition(domain: SlabDomain, J: int, layer: tuple = (0.3, 0.4), gap: float = 0.1,
                    transition: float = 0.1, strip_transition: float = 0.05,
                    test_points: Optional[np.ndarray] = None) -> PartitionOfUnity:
    """Partition of the slab into ``J`` lateral boundary charts and one interior chart.

    ``phi_j = theta_j(x1) beta(x3)`` with a boundary layer ``beta`` equal to one
    for ``x3 >= -layer[0]`` and zero below ``-layer[1]``; ``phi_0 = 1 - beta``.
    Companions switch off over ``transition`` after a clearance ``gap`` from the
    support of their partner. Chart size is set through ``layer`` and ``J``.
    """
    if J < 1:
        raise ConfigurationError("at least one boundary chart is required")
    b1, b2 = layer
    if not (0 < b1 < b2):
        raise ConfigurationError("boundary layer needs 0 < layer[0] < layer[1]")
    if gap + transition >= b1:
        raise ConfigurationError("interior companion does not fit inside the boundary layer")
    if b2 + gap + transition > domain.depth:
        raise ConfigurationError("boundary layer and companion exceed the slab depth")
    L = domain.lateral
    cuts = [-L + 2 * L * i / J for i in range(1, J)]
    d = strip_transition
    if J > 1 and 2 * d >= 2 * L / J:
        raise ConfigurationError("lateral strips are narrower than their transitions")
    beta = Profile.up(-b2, -b1)
    B = Profile.up(-b2 - gap - transition, -b2 - gap)
    phis, psis, labels = [], [], []
    for j in range(J):
        lo = cuts[j - 1] if j > 0 else None
        hi = cuts[j] if j < J - 1 else None
        theta = Profile.window(None if lo is None else lo - d, None if lo is None else lo + d,
                               None if hi is None else hi - d, None if hi is None else hi + d)
        Theta = Profile.window(None if lo is None else lo - d - gap - transition,
                               None if lo is None else lo - d - gap,
                               None if hi is None else hi + d + gap,
                               None if hi is None else hi + d + gap + transition)
        phis.append(Cutoff(((0, theta), (2, beta))))
        psis.append(Cutoff(((0, Theta), (2, B))))
        labels.append(f"boundary{j + 1}")
    phi0 = ComplementCutoff(list(phis))
    psi0 = Cutoff(((2, Profile.down(-b1 + gap, -b1 + gap + transition)),))
    pts = _slab_grid(domain, 22) if test_points is None else test_points
    params = {"J": J, "layer": list(layer), "gap": gap, "transition": transition,
              "strip_transition": d, "depth": domain.depth, "lateral": domain.lateral}
    return PartitionOfUnity([phi0] + phis, [psi0] + psis, ["interior"] + labels, pts, params)


def build_partition_1d(collar: float = 1 / 3, gap: float = 1 / 6, transition: float = 1 / 6,
                       n_test: int = 2001) -> PartitionOfUnity:
    """Three-chart partition of ``[0, 1]``: left end, right end and interior."""
    c, g, w = collar, gap, transition
    if not (c > 0 and g > 0 and w > 0 and g + w <= c and c + w <= 0.5):
        raise ConfigurationError("1-D partition widths do not fit in the unit interval")
    phi1 = Cutoff(((0, Profile.down(c, c + w)),), dim=1)
    phi2 = Cutoff(((0, Profile.up(1 - c - w, 1 - c)),), dim=1)
    psi1 = Cutoff(((0, Profile.down(c + w + g, c + 2 * w + g)),), dim=1)
    psi2 = Cutoff(((0, Profile.up(1 - c - 2 * w - g, 1 - c - w - g)),), dim=1)
    psi0 = Cutoff(((0, Profile.window(c - g - w, c - g, 1 - c + g, 1 - c + g + w)),), dim=1)
    phi0 = ComplementCutoff([phi1, phi2], dim=1)
    pts = np.linspace(0, 1, n_test)[:, None]
    return PartitionOfUnity([phi0, phi1, phi2], [psi0, psi1, psi2], ["interior", "left", "right"],
                            pts, {"collar": c, "gap": g, "transition": w})


# ----------------------------------------------------------------------------- local kernels

class FundamentalPair:
    """Free-space kernels ``diag(Gamma_1, Gamma_k)`` of the two heat operators."""

    def __init__(self, k) -> None:
        self.k = as_contrast(k)
        self.kappa = (1.0, self.k)

    def evaluate(self, x, t, y, s):
        x, y = np.asarray(x, float), np.asarray(y, float)
        vals = np.zeros((2, 2))
        grads = np.zeros((3, 2, 2))
        if t <= s:
            return vals, grads
        for i, kap in enumerate(self.kappa):
            v = heat_fundamental(x, t, y, s, kap)
            vals[i, i] = v
            grads[:, i, i] = -(x - y) / (2 * kap * (t - s)) * v
        return vals, grads


class HalfSpaceChartKernel:
    """First-order half-space ITP kernel block of a flattened boundary chart.

    One stacked inverse transform yields all four entries and their
    gradients. Results are cached per evaluation point.
    """

    def __init__(self, metric: Optional[MetricField] = None, k: float = 4.0,
                 contour: Optional[ContourSpec] = None) -> None:
        self.metric = metric or flat_metric()
        if not self.metric.x_tangential_invariant:
            raise ConfigurationError("chart kernels need a flat or layered metric")
        self.k = as_contrast(k)
        self.contour = contour or ContourSpec()
        self._cache: dict = {}

    def _symbol(self, x3: float, y3: float):
        M1, M0, J_y = restrict(self.metric, y3)
        k = self.k

        def g(xi1, xi2, tau):
            comps = []
            for ell in (1, 2):
                amp = first_order_amplitudes(ell, M0, M1, J_y, (xi1, xi2), tau, k, y3)
                for fname in ("G", "H"):
                    name = FIELD_FUNCTIONS[(fname, x3 > y3)]
                    v = _amplitude_value(amp, name, x3, None, None)
                    d3 = _amplitude_value(amp, name, x3, None, "x3")
                    comps += [v, 1j * xi1 * v, 1j * xi2 * v, d3]
            return np.stack(np.broadcast_arrays(*comps), axis=-1)

        return g

    def evaluate(self, x, t, y, s):
        x, y = np.asarray(x, float), np.asarray(y, float)
        if t <= s:
            return np.zeros((2, 2)), np.zeros((3, 2, 2))
        key = (tuple(x), float(t), tuple(y), float(s))
        if key not in self._cache:
            if x[2] > 0 or y[2] > 0:
                raise GridError("chart kernels need x3 <= 0 and y3 <= 0")
            m_min = _m_min(self.metric, float(y[2])) * min(self.k, 1.0)
            out = inverse_lf_transform(self._symbol(float(x[2]), float(y[2])), self.contour,
                                       x[:2] - y[:2], t - s, m_min=m_min)
            c = np.real(np.asarray(out)).reshape(2, 2, 4)  # (ell, field, component)
            vals = c[:, :, 0].T
            grads = np.transpose(c[:, :, 1:], (2, 1, 0))
            self._cache[key] = (vals, grads)
        v, g = self._cache[key]
        return v.copy(), g.copy()


# ----------------------------------------------------------------------------- global parametrix

ENTRY_NAMES = {(0, 0): "G1", (0, 1): "G2", (1, 0): "H1", (1, 1): "H2"}


@dataclass
class GlobalParametrix:
    """Patched 2x2 parametrix ``sum_j psi_j(x) K^j phi_j(y)`` on the model slab.

    With ``lift_width`` set, the boundary defect of the raw patch at
    ``(x', 0)`` is lifted into the slab and added to the ``H`` row.
    """

    partition: PartitionOfUnity
    chart_kernels: dict
    k: float
    metric: MetricField = field(default_factory=flat_metric)
    lift_width: Optional[float] = None

    def _active(self, x, y):
        x, y = np.atleast_2d(x), np.atleast_2d(y)
        for phi, psi, lab in zip(self.partition.phis, self.partition.psis, self.partition.labels):
            fy = float(phi.value(y)[0])
            if fy == 0.0:
                continue
            yield lab, fy, psi, self.chart_kernels[lab]

    def raw(self, x, t, y, s):
        """Value and x-gradient of the unlifted patch."""
        x, y = np.asarray(x, float), np.asarray(y, float)
        vals, grads = np.zeros((2, 2)), np.zeros((3, 2, 2))
        if t <= s:
            return vals, grads
        for lab, fy, psi, K in self._active(x, y):
            px = float(psi.value(x)[0])
            gpx = psi.grad(x)[0]
            if px == 0.0 and not np.any(gpx):
                continue
            kv, kg = K.evaluate(x, t, y, s)
            vals += fy * px * kv
            grads += fy * (px * kg + gpx[:, None, None] * kv[None])
        return vals, grads

    def boundary_defect(self, x_t, t, y, s):
        """``(G - H, d_nu G - k d_nu H)`` of the raw patch at ``(x', 0)``, per column."""
        xb = np.array([x_t[0], x_t[1], 0.0])
        v, g = self.raw(xb, t, y, s)
        return v[0] - v[1], g[2, 0] - self.k * g[2, 1]

    def evaluate(self, x, t, y, s):
        vals, grads = self.raw(x, t, y, s)
        if self.lift_width is not None and t > s:
            dv, df = self.boundary_defect(np.asarray(x, float)[:2], t, y, s)
            lv, lg = lift_boundary_defect(dv, df, self.k, self.lift_width, float(np.asarray(x)[2]))
            vals[1] += lv
            grads[2, 1] += lg
        return vals, grads

    def value(self, x, t, y, s) -> np.ndarray:
        return self.evaluate(x, t, y, s)[0]

    def sample(self, xs, ts, ys, ss, gradient: bool = False) -> dict:
        """Entries sampled at matching point lists, as :class:`SpaceTimeKernel` objects."""
        xs, ys = np.atleast_2d(xs), np.atleast_2d(ys)
        ts, ss = np.asarray(ts, float).ravel(), np.asarray(ss, float).ravel()
        vals = np.zeros((len(ts), 2, 2))
        for i in range(len(ts)):
            v, g = self.evaluate(xs[i], ts[i], ys[i], ss[i])
            vals[i] = np.linalg.norm(g, axis=0) if gradient else v
        tag = "grad " if gradient else ""
        return {name: SpaceTimeKernel(xs, ts, ys, ss, vals[:, r, c], label=tag + name)
                for (r, c), name in ENTRY_NAMES.items()}

    def dump(self, directory, xs, ts, ys, ss) -> Path:
        """Write one CSV per entry plus a JSON manifest."""
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        files = {}
        for name, K in self.sample(xs, ts, ys, ss).items():
            K.to_csv(out / f"{name}.csv")
            files[name] = f"{name}.csv"
        manifest = {"k": self.k, "charts": list(self.chart_kernels), "files": files,
                    "partition": self.partition.manifest(), "lift_width": self.lift_width,
                    "n_samples": int(len(np.ravel(ts)))}
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
        return out


def assemble_parametrix(local_kernels: Mapping, fundamental: FundamentalPair,
                        partition: PartitionOfUnity, metric: Optional[MetricField] = None,
                        lift_width: Optional[float] = None) -> GlobalParametrix:
    """Patch boundary-chart kernels and the fundamental pair into a global parametrix."""
    kernels = {"interior": fundamental}
    for lab in partition.labels:
        if lab == "interior":
            continue
        if lab not in local_kernels:
            raise ConfigurationError(f"no local kernel for chart {lab!r}")
        kernels[lab] = local_kernels[lab]
    return GlobalParametrix(partition, kernels, fundamental.k, metric or flat_metric(),
                            lift_width)


def parametrix_residual(P: GlobalParametrix, xs, ts, ys, ss) -> dict:
    """Commutator residual ``(d_t - L) P - delta`` at the sample points.

    Each local kernel solves its own equation, so the residual is
    ``-kappa_row sum_j phi_j(y) ([L, psi_j] K^j)`` with the commutator
    ``2 (M grad psi) . grad K + (J^-1 div(J M grad psi)) K``.
    """
    xs, ys = np.atleast_2d(xs), np.atleast_2d(ys)
    ts, ss = np.asarray(ts, float).ravel(), np.asarray(ss, float).ravel()
    if not P.metric.has_x3_derivatives:
        raise ConfigurationError("the residual needs a metric with x3-derivatives")
    kap = np.array([1.0, P.k])
    out = np.zeros((len(ts), 2, 2))
    for i in range(len(ts)):
        x, y, t, s = xs[i], ys[i], ts[i], ss[i]
        if t <= s:
            continue
        M = P.metric.matrix(x)
        dM, dJ = P.metric.derivatives(x)
        J = P.metric.jacobian(x)
        drift = dM[2] + M[2] * dJ / J
        acc = np.zeros((2, 2))
        for lab, fy, psi, K in P._active(x, y):
            g = psi.grad(x)[0]
            if not np.any(g):
                continue
            H = psi.hessian(x)[0]
            kv, kg = K.evaluate(x, t, y, s)
            Mg = M @ g
            acc += fy * (2 * np.einsum("a,arc->rc", Mg, kg) + (np.sum(M * H) + drift @ g) * kv)
        out[i] = -kap[:, None] * acc
    return {name: SpaceTimeKernel(xs, ts, ys, ss, out[:, r, c], label="R " + name)
            for (r, c), name in ENTRY_NAMES.items()}


def residual_flatness(residual: dict, deltas: Sequence[float]) -> dict:
    """``sup_{0 < t-s < delta} |R|`` for each ``delta`` and the fitted power of ``delta``."""
    deltas = np.asarray(deltas, float)
    sups = np.zeros(len(deltas))
    for K in residual.values():
        lag = K.t - K.s
        for i, d in enumerate(deltas):
            sel = (lag > 0) & (lag < d)
            if sel.any():
                sups[i] = max(sups[i], float(np.abs(K.values[sel]).max()))
    pos = sups > 0
    if pos.sum() >= 2:
        rate = float(np.polyfit(np.log(deltas[pos]), np.log(sups[pos]), 1)[0])
    else:
        rate = float("inf")
    return {"deltas": deltas.tolist(), "sup": sups.tolist(), "rate": rate}


def boundary_residual(P: GlobalParametrix, x_t_points, t: float, y, s: float) -> dict:
    """Largest value and flux mismatch on the boundary, relative to the kernel scale."""
    v_err, f_err, scale, gscale = 0.0, 0.0, 0.0, 0.0
    for xt in np.atleast_2d(x_t_points):
        xb = np.array([xt[0], xt[1], 0.0])
        v, g = P.evaluate(xb, t, y, s)
        v_err = max(v_err, float(np.abs(v[0] - v[1]).max()))
        f_err = max(f_err, float(np.abs(g[2, 0] - P.k * g[2, 1]).max()))
        scale = max(scale, float(np.abs(v).max()))
        gscale = max(gscale, float(np.abs(g).max()))
    return {"value": v_err / max(scale, 1e-300), "flux": f_err / max(gscale, 1e-300),
            "scale": scale, "gradient_scale": gscale}


def lift_boundary_defect(value_defect, flux_defect, k: float, width: float, x3):
    """Gaussian lifting of a boundary defect into ``x3 <= 0``.

    Returns the correction ``c(x3)`` for the ``H`` row and its ``x3``-derivative.
    ``c(0) = value_defect`` and ``k c'(0) = flux_defect``, so adding ``c`` to
    ``H`` cancels both defects on the boundary.
    """
    if width <= 0:
        raise ConfigurationError("lifting width must be positive")
    x3 = np.asarray(x3, float)
    e = np.exp(-x3 ** 2 / (2 * width ** 2))
    de = -x3 / width ** 2 * e
    dv, df = np.asarray(value_defect), np.asarray(flux_defect) / k
    val = dv * e + df * x3 * e
    der = dv * de + df * (e + x3 * de)
    return val, der


# ----------------------------------------------------------------------------- 1-D parametrix

def half_line_itp(x3, y3, t, k: float, deriv: int = 0) -> np.ndarray:
    """Exact ITP Green block on the half line ``x3 <= 0``.

    Returns an array of shape ``(2, 2, ...)`` with rows ``(G, H)`` and
    columns ``(source in the unit equation, source in the k equation)``.
    ``deriv`` selects the order of the ``x3``-derivative (0, 1 or 2).
    """
    k = as_contrast(k)
    x3, y3 = np.broadcast_arrays(np.asarray(x3, float), np.asarray(y3, float))
    if np.any(x3 > 1e-14) or np.any(y3 > 1e-14):
        raise GridError("half-line points need x3 <= 0")
    r = np.sqrt(k)
    ax, ay = -x3, -y3

    def Phi(a, da_dx, n):
        # derivatives of exp(-a^2/4t)/sqrt(pi t) for a affine in x3
        g = np.exp(-a * a / (4 * t)) / np.sqrt(np.pi * t)
        if n == 0:
            return g
        if n == 1:
            return -a / (2 * t) * g * da_dx
        return (a * a / (4 * t * t) - 1 / (2 * t)) * g * da_dx ** 2

    sd = np.sign(x3 - y3)
    d = np.abs(x3 - y3)
    G1 = 0.5 * Phi(d, sd, deriv) - (r + 1) / (2 * (r - 1)) * Phi(ax + ay, -1.0, deriv)
    H1 = -Phi(ay + ax / r, -1.0 / r, deriv) / (r - 1)
    G2 = Phi(ax + ay / r, -1.0, deriv) / (r - 1)
    H2 = (Phi(d / r, sd / r, deriv) / (2 * r)
          + (1 + r) / (2 * r * (r - 1)) * Phi((ax + ay) / r, -1.0 / r, deriv))
    return np.array([[G1, G2], [H1, H2]])


class Parametrix1D:
    """Patched ITP parametrix on ``[0, 1]`` sampled on a node set.

    The two end charts use :func:`half_line_itp` in the local coordinate
    (``x3 = -x`` on the left, ``x3 = x - 1`` on the right); the interior chart
    uses the free heat kernels. Operator matrices act on stacked ``[v; u]``
    samples and include the source quadrature weights.
    """

    def __init__(self, x: np.ndarray, weights: np.ndarray, k: float,
                 partition: Optional[PartitionOfUnity] = None) -> None:
        self.x = np.asarray(x, float)
        self.w = np.asarray(weights, float)
        self.k = as_contrast(k)
        self.partition = partition or build_partition_1d()
        P = self.x[:, None]
        self._phi = {lab: phi.value(P) for phi, lab in zip(self.partition.phis,
                                                            self.partition.labels)}
        self._psi = {lab: (psi.value(P), psi.grad(P)[:, 0], psi.hessian(P)[:, 0, 0])
                     for psi, lab in zip(self.partition.psis, self.partition.labels)}

    def _chart(self, lab, rows, cols, t, deriv):
        x, y = self.x[rows][:, None], self.x[cols][None, :]
        if lab == "interior":
            out = np.zeros((2, 2, x.size, y.size))
            for i, kap in enumerate((1.0, self.k)):
                out[i, i] = heat_kernel_1d(x - y, t, kap, deriv)
            return out
        if lab == "left":
            return half_line_itp(-x, -y, t, self.k, deriv) * (-1.0) ** deriv
        return half_line_itp(x - 1.0, y - 1.0, t, self.k, deriv)

    def blocks(self, t: float, rows=None, cols=None) -> np.ndarray:
        """Kernel values ``(2, 2, len(rows), len(cols))`` at lag ``t > 0``."""
        rows = np.arange(self.x.size) if rows is None else np.asarray(rows)
        cols = np.arange(self.x.size) if cols is None else np.asarray(cols)
        out = np.zeros((2, 2, rows.size, cols.size))
        for lab in self.partition.labels:
            fy = self._phi[lab][cols]
            if not np.any(fy):
                continue
            px = self._psi[lab][0][rows]
            out += px[:, None] * self._chart(lab, rows, cols, t, 0) * fy[None, :]
        return out

    def residual_blocks(self, t: float, rows=None, cols=None) -> np.ndarray:
        """``(d_t - kappa d_x^2)`` of the patch, i.e. ``-kappa phi (2 psi' K' + psi'' K)``."""
        rows = np.arange(self.x.size) if rows is None else np.asarray(rows)
        cols = np.arange(self.x.size) if cols is None else np.asarray(cols)
        out = np.zeros((2, 2, rows.size, cols.size))
        for lab in self.partition.labels:
            fy = self._phi[lab][cols]
            _, d1, d2 = (a[rows] for a in self._psi[lab])
            if not np.any(fy) or not (np.any(d1) or np.any(d2)):
                continue
            K0 = self._chart(lab, rows, cols, t, 0)
            K1 = self._chart(lab, rows, cols, t, 1)
            out += (2 * d1[:, None] * K1 + d2[:, None] * K0) * fy[None, :]
        kap = np.array([1.0, self.k])
        return -kap[:, None, None, None] * out

    def _operator(self, B: np.ndarray, cols) -> np.ndarray:
        cols = np.arange(self.x.size) if cols is None else np.asarray(cols)
        B = B * self.w[cols][None, None, None, :]
        return np.block([[B[0, 0], B[0, 1]], [B[1, 0], B[1, 1]]])

    def operator(self, t: float, rows=None, cols=None) -> np.ndarray:
        return self._operator(self.blocks(t, rows, cols), cols)

    def residual_operator(self, t: float, rows=None, cols=None) -> np.ndarray:
        return self._operator(self.residual_blocks(t, rows, cols), cols)

    def collar_nodes(self) -> np.ndarray:
        """Nodes where some companion has a nonzero derivative (rows of the residual)."""
        mask = np.zeros(self.x.size, bool)
        for lab in self.partition.labels:
            _, d1, d2 = self._psi[lab]
            mask |= (d1 != 0) | (d2 != 0)
        return np.flatnonzero(mask)


@dataclass
class CompensatedColumn:
    """Levi-compensated Green column and its uncompensated parametrix part."""

    times: np.ndarray
    x: np.ndarray
    G: np.ndarray
    H: np.ndarray
    parametrix: np.ndarray
    correction_norm: float


def compensated_green_column(par: Parametrix1D, source: np.ndarray, ell: int, dt: float,
                             nsteps: int, scheme: str = "product",
                             n_gauss: int = 6) -> CompensatedColumn:
    """Green column for initial data ``source`` in equation ``ell`` at ``s = 0``.

    ``w = -r - R * w`` is marched on the collar rows only, since the residual
    vanishes elsewhere; then ``g = P f + P * w`` on all nodes. ``scheme`` is
    ``"product"`` (hat interpolation of ``w`` with Gauss cell moments of the
    kernels) or ``"trapezoid"``. In the first lag cell the parametrix is a
    near-delta: Gauss sampling is used down to ``sigma* = h^2 / 2`` and the
    linear model ``I + sigma A`` fitted to ``P(sigma*)`` below it.
    """
    if ell not in (1, 2):
        raise ConfigurationError("ell must be 1 or 2")
    if scheme not in ("product", "trapezoid"):
        raise ConfigurationError(f"unknown quadrature scheme {scheme!r}")
    m = par.x.size
    f = np.zeros(2 * m)
    f[(ell - 1) * m:ell * m] = source
    S = par.collar_nodes()
    S2 = np.concatenate([S, S + m])
    lags = np.arange(nsteps + 1) * dt
    r = np.zeros((nsteps + 1, S2.size))
    p = np.zeros((nsteps + 1, 2 * m))
    p[0] = f
    for L in range(1, nsteps + 1):
        r[L] = par.residual_operator(lags[L], rows=S) @ f
        p[L] = par.operator(lags[L]) @ f
    if scheme == "trapezoid":
        R_SS = np.zeros((nsteps + 1, S2.size, S2.size))
        for L in range(1, nsteps + 1):
            R_SS[L] = par.residual_operator(lags[L], rows=S, cols=S)
        w_S = march_column(R_SS, r, dt)
        g = compensate_column(lambda L, V: par.operator(lags[L], cols=S) @ V[S2], p,
                              _embed(w_S, S2, 2 * m), dt)
    else:
        Rk = lambda sig: par.residual_operator(sig, rows=S, cols=S)
        w_S = march_column_pi([cell_moments(Rk, dt, c, n_gauss) for c in range(nsteps)], r)
        eye = np.zeros((2 * m, S2.size))
        eye[S2, np.arange(S2.size)] = 1.0

        h = float(np.min(np.diff(par.x)))
        sig_star = min(dt, 0.5 * h * h)

        def moments(c):
            if c > 0:
                return cell_moments(lambda sig: par.operator(sig, cols=S), dt, c, n_gauss)
            # below sig_star the sampled kernel is narrower than the mesh
            Ps = par.operator(sig_star, cols=S)
            M0 = 0.5 * sig_star * (eye + Ps)
            M1 = sig_star ** 2 / dt * (eye / 6 + Ps / 3)
            if sig_star < dt:
                u, wg = np.polynomial.legendre.leggauss(n_gauss)
                sig = sig_star + 0.5 * (u + 1) * (dt - sig_star)
                for si, wi in zip(sig, 0.5 * (dt - sig_star) * wg):
                    Pv = par.operator(si, cols=S)
                    M0 = M0 + wi * Pv
                    M1 = M1 + wi * si / dt * Pv
            return M0, M1

        g = compensate_column_pi(moments, p, w_S)
    return CompensatedColumn(lags, par.x, g[:, :m], g[:, m:], p,
                             float(np.abs(w_S).max()) if w_S.size else 0.0)


def _embed(wS: np.ndarray, idx: np.ndarray, size: int) -> np.ndarray:
    out = np.zeros((wS.shape[0], size), dtype=wS.dtype)
    out[:, idx] = wS
    return out
