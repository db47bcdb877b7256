import numpy as np
import pytest

from itpgreen.errors import DivergenceError, GridError
from itpgreen.levi import (VolterraKernel, cell_moments, compensate_column_pi, initial_condition_check,
                           kernel_norm, levi_series, march_column, march_column_pi,
                           resolvent_march, schur_bound, volterra_compose)
from itpgreen.parametrix import heat_kernel_1d
from itpgreen.refsolver import bump


def scalar_R(c, dt, T=1.0, m=1):
    nt = int(round(T / dt))
    return VolterraKernel.from_function(lambda t, s: c * np.eye(m), nt, dt, np.ones(m),
                                        stationary=True)


def levi_error(c, dt, T=1.0):
    R = scalar_R(c, dt, T)
    W = resolvent_march(R)
    tau = dt * np.arange(R.nt + 1)
    return np.abs(W.ops[:, 0, 0] + c * np.exp(-c * tau)).max()


def test_compose_oracle():
    errs = []
    for dt in (0.02, 0.01):
        nt = int(round(1 / dt))
        A = VolterraKernel.from_function(lambda t, s: np.array([[t - s]]), nt, dt, np.ones(1), True)
        C = volterra_compose(A, A)
        tau = dt * np.arange(nt + 1)
        errs.append(np.abs(C.ops[:, 0, 0] - tau ** 3 / 6).max())
    assert errs[1] < 1e-4
    assert np.log2(errs[0] / errs[1]) == pytest.approx(2.0, abs=0.2)


def test_general_and_stationary_layouts_agree():
    rng = np.random.default_rng(0)
    B = rng.standard_normal((3, 3))
    A = VolterraKernel.from_function(lambda t, s: np.cos(t - s) * B, 10, 0.05, np.ones(3), True)
    C1 = volterra_compose(A, A).general().ops
    C2 = volterra_compose(A.general(), A.general()).ops
    assert np.abs(C1 - C2).max() < 1e-13


def test_incompatible_kernels():
    A = scalar_R(1.0, 0.1)
    with pytest.raises(GridError):
        volterra_compose(A, scalar_R(1.0, 0.05))


@pytest.mark.parametrize("c", [0.5, 2.0])
def test_levi_scalar_oracle(c):
    e1, e2 = levi_error(c, 2e-3), levi_error(c, 1e-3)
    assert e2 < 1e-4
    assert np.log2(e1 / e2) == pytest.approx(2.0, abs=0.2)


@pytest.mark.parametrize("c", [0.5, 2.0])
def test_series_matches_march_and_factorial_bound(c):
    R = scalar_R(c, 1e-3, T=1.0)
    ser = levi_series(R, jmax=40, tol=1e-12)
    assert ser.converged
    W = resolvent_march(R)
    assert np.abs(ser.W.ops - W.ops).max() < 1e-8
    assert ser.resolvent_residual < 1e-10
    assert ser.C0 == max(ser.C1, ser.C1 ** 2)
    assert ser.margins_C0.min() >= -1e-12 * max(1.0, ser.C0)


def test_factorial_bound_with_c1_fails_for_large_c():
    ser = levi_series(scalar_R(2.0, 0.01), jmax=40, tol=1e-12)
    assert ser.margins_C1.min() < -0.1


def test_zero_residual_gives_zero_correction():
    ser = levi_series(scalar_R(0.0, 0.1))
    assert ser.converged and kernel_norm(ser.W) == 0


def test_divergence_detected():
    with pytest.raises(DivergenceError):
        levi_series(scalar_R(1e200, 0.1), jmax=10)


def test_march_column_matches_scalar_oracle():
    c, dt = 2.0, 1e-3
    N = 1000
    r = np.full((N + 1, 1), c)
    R = np.full((N + 1, 1, 1), c)
    w = march_column(R, r, dt)
    tau = dt * np.arange(N + 1)
    assert np.abs(w[:, 0] + c * np.exp(-c * tau)).max() < 1e-5


def test_product_integration_oracle():
    # fast kernel inside each cell: R(t) = a exp(-b t) with b dt large
    a, b, dt, N = 3.0, 400.0, 0.01, 100
    Rk = lambda t: np.array([[a * np.exp(-b * t)]])
    mom = [cell_moments(Rk, dt, c, 8) for c in range(N)]
    r = np.ones((N + 1, 1))
    w = march_column_pi(mom, r)
    # reference by a fine trapezoid march
    fine = 40
    tf = (dt / fine) * np.arange(N * fine + 1)
    wf = march_column(a * np.exp(-b * tf)[:, None, None], np.ones((tf.size, 1)), dt / fine)
    assert np.abs(w[:, 0] - wf[::fine, 0]).max() < 2e-3
    coarse = march_column(a * np.exp(-b * dt * np.arange(N + 1))[:, None, None], r, dt)
    assert np.abs(w[:, 0] - wf[::fine, 0]).max() < 0.1 * np.abs(coarse[:, 0] - wf[::fine, 0]).max()


def test_compensate_pi_identity_kernel():
    # P = identity for every lag: g(t) = p + int_0^t w
    dt, N = 0.01, 50
    w = np.cos(dt * np.arange(N + 1))[:, None]
    eye = np.eye(1)
    g = compensate_column_pi(lambda c: (dt * eye, 0.5 * dt * eye), np.zeros((N + 1, 1)), w)
    exact = np.sin(dt * np.arange(N + 1))
    assert np.abs(g[:, 0] - exact).max() < 1e-5


def test_initial_condition_heat_kernel():
    x = np.linspace(-6, 7, 13001)
    h = x[1] - x[0]
    probes = [bump(x, 0.0, 2.5), bump(x, 0.5, 3.0), bump(x, 1.0, 2.0)]

    def apply(delta, f):
        # convolution with the heat kernel at time delta
        K = heat_kernel_1d(np.arange(-400, 401) * h, delta)
        return np.convolve(f, K * h, mode="same")

    rep = initial_condition_check(apply, probes, [1e-3, 4e-4, 1e-4], restrict=slice(1000, -1000))
    assert max(rep["final_errors"]) < 1e-3
    assert min(rep["rates"]) > 0.8


def test_schur_random_kernels():
    rng = np.random.default_rng(7)
    x = np.linspace(0, 1, 41)
    w = np.full(x.size, x[1] - x[0])
    w[[0, -1]] *= 0.5
    for _ in range(100):
        K = rng.standard_normal((x.size, x.size)) * np.exp(-rng.random() * np.subtract.outer(x, x) ** 2)
        rep = schur_bound(K, w, w, [rng.standard_normal(x.size) for _ in range(10)])
        assert not rep["violated"]


def test_schur_constant_kernel_is_sharp():
    x = np.linspace(0, 1, 101)
    w = np.full(x.size, 0.01)
    w[[0, -1]] = 0.005
    rep = schur_bound(np.ones((x.size, x.size)), w, w, [np.ones(x.size)])
    assert rep["observed"] / rep["bound"] == pytest.approx(1.0, abs=1e-10)
