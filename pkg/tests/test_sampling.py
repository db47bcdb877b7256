import numpy as np
import pytest

from itpgreen.errors import ConfigurationError, GeometryError
from itpgreen.parametrix import heat_kernel_1d
from itpgreen.sampling import (Conductor, forward_nd, gap_operator, gap_solve, green_omega,
                               indicator_scan, nd_map, psol_identity_check)

D = (0.4, 0.7)
K = 4.0


@pytest.fixture(scope="module")
def setup():
    n, dt, T = 100, 2e-3, 0.1
    return gap_operator(n, dt, T, K, D), Conductor(n, dt, T, K, D), dt


def _ramp(N, dt, ends=(1.0, 0.0)):
    g = np.zeros((N + 1, 2))
    g[1:] = ends
    return g


def test_zero_flux_zero_trace():
    assert not np.any(forward_nd((0, 1), D, K, np.zeros((51, 2)), n=50))


def test_flux_must_start_at_zero():
    with pytest.raises(ConfigurationError):
        forward_nd((0, 1), None, K, np.ones((11, 2)), n=50)


def test_inclusion_touching_boundary():
    with pytest.raises(GeometryError):
        Conductor(100, 1e-3, 0.1, K, (0.0, 0.5))
    with pytest.raises(GeometryError):
        Conductor(100, 1e-3, 0.1, K, (0.5, 0.995))


def test_empty_inclusion_self_convergence():
    T = 0.05
    traces = []
    for n, dt in ((100, 1e-3), (200, 5e-4), (800, 1.25e-4)):
        # constant flux after a short grid-independent ramp
        t = dt * np.arange(int(round(T / dt)) + 1)
        g = np.stack([np.minimum(t / 0.005, 1.0), 0 * t], axis=1)
        traces.append(forward_nd((0, 1), None, K, g, n=n, dt=dt)[-1])
    err = np.abs(traces[1] - traces[2]).max() / np.abs(traces[2]).max()
    assert err < 1e-3
    assert np.abs(traces[0] - traces[2]).max() > np.abs(traces[1] - traces[2]).max()


def test_contrast_continuity():
    g = _ramp(50, 2e-3, (1.0, 0.5))
    base = forward_nd((0, 1), None, 1.0, g, n=100, dt=2e-3)
    d = [np.abs(forward_nd((0, 1), D, k, g, n=100, dt=2e-3) - base).max() for k in (1.5, 1.1, 1.01)]
    assert d[0] > d[1] > d[2]
    assert d[2] < 0.05 * d[0]


def test_nd_map_shift_assembly_matches_direct():
    cond = Conductor(40, 5e-3, 0.1, K, D)
    assert np.abs(nd_map(cond).matrix - nd_map(cond, workers=2, direct=True).matrix).max() < 1e-13


def test_nd_map_causal_and_consistent(setup):
    op, cond, dt = setup
    N = cond.N
    assert np.all(np.triu(op.matrix, 2) == 0)
    rng = np.random.default_rng(1)
    g = rng.standard_normal((N, 2))
    full = np.vstack([np.zeros((1, 2)), g])
    fwd = forward_nd((0, 1), D, K, full, n=100, dt=dt) - forward_nd((0, 1), None, K, full, n=100, dt=dt)
    assert np.abs(op.apply(g) - fwd[1:]).max() < 1e-12 * np.abs(fwd).max()
    # truncating g after node m leaves the trace up to m unchanged
    m = N // 2
    cut = g.copy()
    cut[m:] = 0
    assert np.array_equal(op.apply(cut)[:m], op.apply(g)[:m]) or \
        np.abs(op.apply(cut)[:m] - op.apply(g)[:m]).max() < 1e-14


def test_green_omega_properties():
    cond = Conductor(400, 2.5e-4, 0.05, 1.0)
    U = green_omega(cond, 0.5, 0.01, eps=0.0075, field=True)
    assert not np.any(U[:40])
    assert np.abs(U[41:] @ cond.mass - 1).max() < 1e-12
    x, j = cond.mesh.x, 40 + 12
    ref = heat_kernel_1d(x - 0.5, 12 * 2.5e-4 + 0.0075 ** 2)
    core = np.abs(x - 0.5) < 0.05
    assert np.abs(U[j, core] - ref[core]).max() < 0.05 * ref.max()


def test_gap_solve_trivial_cases(setup):
    op, cond, dt = setup
    z = gap_solve(op, np.zeros((cond.N, 2)), 1e-8, dt)
    assert not np.any(z.g) and z.residual == 0
    empty = gap_operator(100, dt, 0.1, K, None)
    rhs = green_omega(cond, 0.5, 0.01)
    sol = gap_solve(empty, rhs, 1e-8, dt)
    assert not np.any(sol.g) and sol.residual == pytest.approx(sol.rhs_norm)
    with pytest.raises(ConfigurationError):
        gap_solve(op, rhs, 0.0, dt)


def test_regularization_path(setup):
    op, cond, dt = setup
    alphas = [1e-2, 1e-4, 1e-6, 1e-8, 1e-10, 1e-12]

    def path(y):
        sols = [gap_solve(op, green_omega(cond, y, 0.01), a, dt) for a in alphas]
        return [s.residual for s in sols], np.log10([s.norm for s in sols])

    res_in, ln_in = path(0.55)
    _, ln_out = path(0.15)
    assert all(a > b for a, b in zip(res_in, res_in[1:]))
    # inside D the norm grows far more slowly at small alpha
    assert ln_in[-1] - ln_in[-3] < 0.5 * (ln_out[-1] - ln_out[-3])


def test_indicator_contrast_for_every_alpha(setup):
    op, cond, dt = setup
    probes = np.arange(0.05, 0.951, 0.01)
    F = indicator_scan(op, cond, probes, 0.01, [1e-6, 1e-8, 1e-10, 1e-12], workers=2)
    assert np.all(np.isfinite(F.values)) and np.all(F.values > 0)
    inside = (probes > D[0]) & (probes < D[1])
    med = np.median(F.values[:, ~inside], axis=1) / np.median(F.values[:, inside], axis=1)
    assert np.all(med > 1)
    assert len(list(F.rows())) == F.values.size


def test_indicator_uniform_without_inclusion():
    cond = Conductor(50, 5e-3, 0.1, 1.0)
    F = indicator_scan(gap_operator(50, 5e-3, 0.1, K, None), cond, [0.3, 0.5, 0.7], 0.02, [1e-8])
    assert np.ptp(F.values) == 0 and F.estimate is None


def test_psol_identity():
    n, dt, T = 200, 1e-3, 0.1
    op, cond = gap_operator(n, dt, T, K, D), Conductor(n, dt, T, K, D)
    devs = {}
    for y in (0.55, 0.2):
        g = gap_solve(op, green_omega(cond, y, 0.01, eps=0.03), 1e-12, dt).g
        devs[y] = psol_identity_check(cond, y, 0.01, g, eps=0.03)["relative"]
    assert devs[0.55] < 0.05
    assert devs[0.2] > 0.5


def test_psol_trivial():
    cond = Conductor(50, 5e-3, 0.1, 1.0)
    assert psol_identity_check(cond, 0.5, 0.02, np.zeros((cond.N, 2)))["deviation"] == 0
