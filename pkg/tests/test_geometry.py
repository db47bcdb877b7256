import numpy as np
import pytest

from itpgreen.errors import ContrastError, GridError, InvalidMetricError
from itpgreen.geometry import (Contrast, HalfSpacePoint, SlabDomain, chart_metric,
                               diagonal_layered_metric, flat_metric, metric_health,
                               random_layered_metric, restrict)


def test_flat_metric_identity():
    m = flat_metric()
    p = np.array([0.3, -1.2, -0.7])
    assert np.array_equal(m.matrix(p), np.eye(3))
    assert m.jacobian(p) == 1.0
    M1, M0, J = restrict(m, -0.4, (0.1, 0.2))
    assert np.array_equal(M1, np.eye(3)) and np.array_equal(M0, np.eye(3)) and J == 1.0


def test_restrict_layered_profile():
    m = diagonal_layered_metric(lambda x: 1 + x * x, lambda x: 2 * x)
    M1, M0, J = restrict(m, -1.0)
    assert M1[2, 2] == 2.0 and M0[2, 2] == 1.0 and J == 1.0


def test_restrict_singular_metric_rejected():
    m = diagonal_layered_metric(lambda x: x + 1.0, lambda x: 1.0)
    with pytest.raises(InvalidMetricError):
        restrict(m, -1.0)


def test_restrict_rejects_positive_depth():
    with pytest.raises(GridError):
        restrict(flat_metric(), 0.5)


def test_contrast_validation():
    with pytest.raises(ContrastError):
        Contrast(1.0)
    with pytest.raises(ContrastError):
        Contrast(-2.0)
    with pytest.warns(UserWarning):
        Contrast(0.5)
    assert float(Contrast(4)) == 4.0


def test_random_layered_metrics_are_healthy():
    rng = np.random.default_rng(3)
    for _ in range(5):
        lam, jmin = metric_health(random_layered_metric(rng), rng, n=1000)
        assert lam > 0 and jmin > 0


def test_layered_derivative_matches_finite_difference():
    m = random_layered_metric(np.random.default_rng(5))
    p = np.array([0.0, 0.0, -0.3])
    dM, dJ = m.derivatives(p)
    h = 1e-6
    fd = (m.M(p + [0, 0, h]) - m.M(p - [0, 0, h])) / (2 * h)
    assert np.allclose(dM, fd, atol=1e-7)
    assert abs(dJ - (m.J_det(p + [0, 0, h]) - m.J_det(p - [0, 0, h])) / (2 * h)) < 1e-7


def test_chart_metric():
    A = np.array([[1.0, 0.2, 0.0], [0.0, 1.0, 0.0], [0.1, 0.0, 2.0]])
    m = chart_metric(lambda p: A)
    assert np.allclose(m.matrix(np.zeros(3)), A @ A.T)
    assert np.isclose(m.jacobian(np.zeros(3)), 1 / abs(np.linalg.det(A)))
    assert not m.x_tangential_invariant


def test_points_and_slab():
    with pytest.raises(GridError):
        HalfSpacePoint((0, 0), 0.1)
    s = SlabDomain(1.0, 2.0, 10, 8)
    assert s.spacing == (0.5, 0.1)
    assert len(s.normal_axis()) == 11
    with pytest.raises(GridError):
        SlabDomain(-1.0, 1.0)
