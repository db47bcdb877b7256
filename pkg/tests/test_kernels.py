import numpy as np
import pytest

from itpgreen.errors import GridError
from itpgreen.geometry import diagonal_layered_metric, flat_metric
from itpgreen.kernels import (ContourSpec, SpaceTimeKernel, gaussian_bound_fit, heat_kernel_3d,
                              inverse_lf_transform, leading_kernel, truncation_error_probe)

FLAT = flat_metric()


def test_unit_point_value():
    t = 1 / (4 * np.pi)
    v = leading_kernel(1, "free", FLAT, [0, 0, -0.5], t, [0, 0, -0.5], 0.0, 4.0)
    assert abs(v - 1.0) < 1e-6


@pytest.mark.parametrize("ell,field,kappa", [(1, "G", 1.0), (2, "H", 4.0)])
def test_free_branch_is_heat_kernel(ell, field, kappa):
    rng = np.random.default_rng(3)
    for _ in range(3):
        y = np.array([0.0, 0.0, -0.6])
        x = y + rng.uniform(-0.3, 0.3, 3)
        t = rng.uniform(0.02, 0.1)
        v = leading_kernel(ell, "free", FLAT, x, t, y, 0.0, 4.0, field_name=field)
        ref = heat_kernel_3d(x - y, t, kappa)
        assert abs(v - ref) <= 1e-6 * ref


def test_causality():
    x, y = [0.1, 0.0, -0.3], [0.0, 0.0, -0.5]
    fwd = abs(leading_kernel(1, "all", FLAT, x, 0.05, y, 0.0, 4.0))
    back = abs(leading_kernel(1, "all", FLAT, x, -0.05, y, 0.0, 4.0))
    assert back < 1e-6 * fwd


def test_zero_symbol_gives_zero_kernel():
    assert inverse_lf_transform(None, ContourSpec(), (0.2, 0.1), 0.1) == 0


def test_stacked_symbols_share_quadrature():
    g = lambda a, b, t: np.stack(np.broadcast_arrays(1 / (t + a * a + b * b),
                                                     3 / (t + a * a + b * b)), axis=-1)
    v = inverse_lf_transform(g, ContourSpec(), [[0, 0], [0.2, 0.1]], 1 / (4 * np.pi))
    assert v.shape == (2, 2)
    assert np.allclose(v[:, 1], 3 * v[:, 0], rtol=1e-12)
    assert abs(v[0, 0] - 1) < 1e-8


def test_zero_time_difference_rejected():
    with pytest.raises(GridError):
        inverse_lf_transform(lambda a, b, t: 1 / t, ContourSpec(), (0, 0), 0.0)


def test_contour_refinement_is_stable():
    x, y = [0.1, 0.05, -0.2], [0.0, 0.0, -0.35]
    c = ContourSpec()
    a = leading_kernel(1, "all", FLAT, x, 0.04, y, 0.0, 4.0, contour=c)
    b = leading_kernel(1, "all", FLAT, x, 0.04, y, 0.0, 4.0, contour=c.refined())
    assert abs(a - b) < 1e-4 * abs(b)


def _grid_samples(selection, field, deriv=None):
    xs, ts, ys, vals = [], [], [], []
    y = np.array([0.0, 0.0, -0.4])
    for t in (0.01, 0.03, 0.08):
        for dx in (0.0, 0.15, 0.35):
            for x3 in (-0.05, -0.3, -0.55):
                x = np.array([dx, 0.0, x3])
                xs.append(x), ts.append(t), ys.append(y)
                vals.append(leading_kernel(1, selection, FLAT, x, t, y, 0.0, 4.0,
                                           field_name=field, deriv=deriv))
    return SpaceTimeKernel(np.array(xs), np.array(ts), np.array(ys), np.zeros(len(ts)),
                           np.abs(np.array(vals)))


def test_gaussian_fit_free_branch_c2():
    fit = gaussian_bound_fit(_grid_samples("free", "G"), 1.5)
    assert fit.violations == 0
    assert abs(fit.c2 - 0.25) < 0.01


@pytest.mark.parametrize("selection,field,mode", [("reflected", "G", "reflected"),
                                                  ("transmitted", "H", "reflected")])
def test_gaussian_fit_boundary_branches(selection, field, mode):
    fit = gaussian_bound_fit(_grid_samples(selection, field), 1.5, mode=mode)
    assert fit.violations == 0 and fit.c2 > 0


def test_gaussian_fit_gradient():
    fit = gaussian_bound_fit(_grid_samples("free", "G", deriv="x1"), 2.0)
    assert fit.violations == 0


def test_truncation_probe_flat_is_vacuous():
    assert truncation_error_probe(FLAT, 1, [0.01])["vacuous"]


def test_truncation_probe_rejects_bad_grid():
    with pytest.raises(GridError):
        truncation_error_probe(diagonal_layered_metric(lambda z: 1.0, lambda z: 0.0), 1, [])


@pytest.mark.slow
def test_second_order_improves_residual_exponent():
    eps = 0.3
    m = diagonal_layered_metric(lambda z: 1 + eps * z + eps * z * z / 2, lambda z: eps + eps * z)
    tg = np.geomspace(2e-3, 2e-2, 4)
    e1 = truncation_error_probe(m, 1, tg)["exponent"]
    e2 = truncation_error_probe(m, 2, tg)["exponent"]
    assert e2 - e1 >= 0.4
