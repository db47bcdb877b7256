"""Physical constants, flattened-coordinate metric data and model domains.

A metric field carries the coefficient matrix ``M(x)`` and the volume factor
``J(x)`` of the operator ``tau - J^{-1} div(J M grad)`` written in flattened
coordinates, where the boundary is ``x3 = 0`` and the interior is ``x3 < 0``.
Layered metrics depend on ``x3`` only and also provide analytic
``x3``-derivatives, which the second-order amplitudes need.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ContrastError, GridError, InvalidMetricError

__all__ = [
    "Contrast",
    "MetricField",
    "HalfSpacePoint",
    "SlabDomain",
    "flat_metric",
    "layered_metric",
    "diagonal_layered_metric",
    "random_layered_metric",
    "chart_metric",
    "restrict",
    "validate_spd",
    "metric_health",
]

MatrixFn = Callable[[np.ndarray], np.ndarray]
ScalarFn = Callable[[np.ndarray], float]


@dataclass(frozen=True)
class Contrast:
    """Diffusion contrast ``k`` between the two coupled equations.

    ``k = 1`` makes the boundary system singular and is rejected. Values
    below one are admissible for the algebra and only trigger a warning.
    """

    k: float

    def __post_init__(self) -> None:
        k = float(self.k)
        if not np.isfinite(k) or k <= 0.0:
            raise ContrastError(f"contrast k must be positive and finite, got {self.k!r}")
        if abs(k - 1.0) < 1e-12:
            raise ContrastError("contrast k = 1 makes the boundary system degenerate")
        if k < 1.0:
            warnings.warn("contrast k < 1: admissible, but outside the usual k > 1 setting",
                          stacklevel=3)
        object.__setattr__(self, "k", k)

    def __float__(self) -> float:
        return self.k


def as_contrast(k: "float | Contrast") -> float:
    """Validate ``k`` and return it as a float."""
    return k.k if isinstance(k, Contrast) else Contrast(k).k


def validate_spd(M: np.ndarray, where: str = "") -> np.ndarray:
    """Return ``M`` as a float array after checking symmetry and positive definiteness."""
    M = np.asarray(M, dtype=float)
    if M.shape != (3, 3) or not np.all(np.isfinite(M)):
        raise InvalidMetricError(f"metric must be a finite 3x3 matrix {where}".strip())
    scale = max(np.abs(M).max(), 1e-300)
    if np.abs(M - M.T).max() > 1e-12 * scale:
        raise InvalidMetricError(f"metric is not symmetric {where}".strip())
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        raise InvalidMetricError(f"metric is not positive definite {where}".strip()) from None
    if np.linalg.eigvalsh(M)[0] <= 1e-14 * scale:
        raise InvalidMetricError(f"metric is numerically singular {where}".strip())
    return M


@dataclass(frozen=True)
class MetricField:
    """Analytic coefficient field of the flattened operator.

    Parameters
    ----------
    M : callable
        Maps a point ``p = (x1, x2, x3)`` to the symmetric 3x3 matrix ``M(p)``.
    J_det : callable
        Maps a point to the positive volume factor ``J(p)``.
    kind : {"flat", "layered", "chart"}
        Structural flag. Layered fields depend on ``x3`` only.
    dM3, dJ3 : callable, optional
        Analytic ``x3``-derivatives of ``M`` and ``J``.
    """

    M: MatrixFn
    J_det: ScalarFn
    kind: str
    dM3: Optional[MatrixFn] = None
    dJ3: Optional[ScalarFn] = None
    name: str = ""

    def __post_init__(self) -> None:
        if self.kind not in ("flat", "layered", "chart"):
            raise InvalidMetricError(f"unknown metric kind {self.kind!r}")

    @property
    def has_x3_derivatives(self) -> bool:
        return self.dM3 is not None and self.dJ3 is not None

    @property
    def x_tangential_invariant(self) -> bool:
        return self.kind in ("flat", "layered")

    def matrix(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        return validate_spd(self.M(p), where=f"at {tuple(np.round(p, 6))}")

    def jacobian(self, p) -> float:
        J = float(self.J_det(np.asarray(p, dtype=float)))
        if not np.isfinite(J) or J <= 0.0:
            raise InvalidMetricError(f"volume factor must be positive, got {J} at {tuple(p)}")
        return J

    def derivatives(self, p) -> tuple[np.ndarray, float]:
        """Return ``(dM/dx3, dJ/dx3)`` at ``p``."""
        if not self.has_x3_derivatives:
            raise InvalidMetricError("metric does not supply x3-derivatives")
        p = np.asarray(p, dtype=float)
        return np.asarray(self.dM3(p), dtype=float), float(self.dJ3(p))


@dataclass(frozen=True)
class HalfSpacePoint:
    """A point ``(x', x3)`` of the closed lower half space."""

    x_t: tuple[float, float]
    x3: float

    def __post_init__(self) -> None:
        if self.x3 > 0.0:
            raise GridError(f"half-space points need x3 <= 0, got {self.x3}")
        object.__setattr__(self, "x_t", (float(self.x_t[0]), float(self.x_t[1])))

    def as_array(self) -> np.ndarray:
        return np.array([self.x_t[0], self.x_t[1], self.x3])


@dataclass(frozen=True)
class SlabDomain:
    """Model slab ``[-lateral, lateral]^2 x [-depth, 0]`` with a uniform grid."""

    depth: float
    lateral: float
    n_normal: int = 32
    n_lateral: int = 32
    spacing: tuple[float, float] = field(init=False)

    def __post_init__(self) -> None:
        if self.depth <= 0 or self.lateral <= 0:
            raise GridError("slab extents must be positive")
        if self.n_normal < 1 or self.n_lateral < 1:
            raise GridError("grid resolution must be at least one cell")
        object.__setattr__(
            self, "spacing", (2.0 * self.lateral / self.n_lateral, self.depth / self.n_normal))

    def normal_axis(self) -> np.ndarray:
        return np.linspace(-self.depth, 0.0, self.n_normal + 1)

    def lateral_axis(self) -> np.ndarray:
        return np.linspace(-self.lateral, self.lateral, self.n_lateral + 1)


def flat_metric() -> MetricField:
    """Identity metric with unit volume factor."""
    eye = np.eye(3)
    zero = np.zeros((3, 3))
    return MetricField(M=lambda p: eye.copy(), J_det=lambda p: 1.0, kind="flat",
                       dM3=lambda p: zero.copy(), dJ3=lambda p: 0.0, name="flat")


def layered_metric(profile: Callable[[float], np.ndarray],
                   dprofile: Callable[[float], np.ndarray],
                   jac: Optional[Callable[[float], float]] = None,
                   djac: Optional[Callable[[float], float]] = None,
                   name: str = "layered") -> MetricField:
    """Metric depending on ``x3`` only.

    ``profile(x3)`` returns ``M`` and ``dprofile(x3)`` its derivative. The
    volume factor defaults to one.
    """
    if jac is None:
        jac, djac = (lambda x3: 1.0), (lambda x3: 0.0)
    if djac is None:
        raise InvalidMetricError("a layered volume factor needs its x3-derivative")
    return MetricField(
        M=lambda p: np.asarray(profile(float(p[2])), dtype=float),
        J_det=lambda p: float(jac(float(p[2]))),
        kind="layered",
        dM3=lambda p: np.asarray(dprofile(float(p[2])), dtype=float),
        dJ3=lambda p: float(djac(float(p[2]))),
        name=name,
    )


def diagonal_layered_metric(m33: Callable[[float], float], dm33: Callable[[float], float],
                            name: str = "m33-layered") -> MetricField:
    """Layered metric ``diag(1, 1, m33(x3))`` with unit volume factor."""

    def prof(x3):
        return np.diag([1.0, 1.0, m33(x3)])

    def dprof(x3):
        return np.diag([0.0, 0.0, dm33(x3)])

    return layered_metric(prof, dprof, name=name)


def random_layered_metric(rng: np.random.Generator, strength: float = 0.3,
                          name: str = "random-layered") -> MetricField:
    """Random smooth layered metric, SPD for every ``x3``.

    ``M(x3) = B(x3) B(x3)^T + c I`` with ``B`` affine in ``x3`` and
    ``J(x3) = exp(j0 + j1 x3)``, so derivatives are exact.
    """
    B0 = np.eye(3) + strength * rng.standard_normal((3, 3))
    B1 = strength * rng.standard_normal((3, 3))
    c = 0.2 + rng.random()
    j0, j1 = strength * rng.standard_normal(2)

    def prof(x3):
        B = B0 + x3 * B1
        return B @ B.T + c * np.eye(3)

    def dprof(x3):
        B = B0 + x3 * B1
        return B1 @ B.T + B @ B1.T

    return layered_metric(prof, dprof, jac=lambda x3: np.exp(j0 + j1 * x3),
                          djac=lambda x3: j1 * np.exp(j0 + j1 * x3), name=name)


def chart_metric(jacobian: MatrixFn, name: str = "chart") -> MetricField:
    """Metric induced by a flattening chart.

    ``jacobian(p)`` returns the matrix of the chart derivative evaluated in
    flattened coordinates. Then ``M = J J^T`` and the volume factor is
    ``1 / |det J|``.
    """

    def M(p):
        Jm = np.asarray(jacobian(p), dtype=float)
        return Jm @ Jm.T

    def J_det(p):
        return 1.0 / abs(np.linalg.det(np.asarray(jacobian(p), dtype=float)))

    return MetricField(M=M, J_det=J_det, kind="chart", name=name)


def restrict(metric: MetricField, y3: float, x_t=(0.0, 0.0)) -> tuple[np.ndarray, np.ndarray, float]:
    """Freeze the metric at the source depth and at the boundary.

    Returns ``(M1, M0, J_y)`` with ``M1 = M(x', y3)``, ``M0 = M(x', 0)`` and
    ``J_y`` the volume factor at the source point.
    """
    if y3 > 0.0:
        raise GridError(f"source depth must satisfy y3 <= 0, got {y3}")
    p1 = np.array([x_t[0], x_t[1], y3], dtype=float)
    p0 = np.array([x_t[0], x_t[1], 0.0], dtype=float)
    return metric.matrix(p1), metric.matrix(p0), metric.jacobian(p1)


def metric_health(metric: MetricField, rng: np.random.Generator, n: int = 1000,
                  depth: float = 1.0, lateral: float = 1.0) -> tuple[float, float]:
    """Smallest eigenvalue of ``M`` and smallest ``J`` over random interior points."""
    pts = np.column_stack([rng.uniform(-lateral, lateral, n), rng.uniform(-lateral, lateral, n),
                           rng.uniform(-depth, 0.0, n)])
    lam = min(np.linalg.eigvalsh(np.asarray(metric.M(p), dtype=float))[0] for p in pts)
    jmin = min(float(metric.J_det(p)) for p in pts)
    return float(lam), float(jmin)
