import numpy as np
import pytest

from itpgreen.errors import ConfigurationError, GridError
from itpgreen.geometry import SlabDomain
from itpgreen.kernels import gaussian_bound_fit
from itpgreen.parametrix import (Cutoff, FundamentalPair, HalfSpaceChartKernel, PartitionOfUnity,
                                 Parametrix1D, Profile, assemble_parametrix, boundary_residual,
                                 build_partition, build_partition_1d, compensated_green_column,
                                 half_line_itp, heat_fundamental, lift_boundary_defect,
                                 parametrix_residual, residual_flatness, smooth_step)
from itpgreen.refsolver import ITPSystem, Mesh, green_column, mollifier, trapezoid_weights

K = 4.0
DOMAIN = SlabDomain(1.0, 1.0)


@pytest.fixture(scope="module")
def partition():
    return build_partition(DOMAIN, 3)


@pytest.fixture(scope="module")
def parametrix(partition):
    ck = HalfSpaceChartKernel(k=K)
    return assemble_parametrix({f"boundary{j}": ck for j in (1, 2, 3)}, FundamentalPair(K),
                               partition)


def test_heat_fundamental_values():
    assert heat_fundamental([0, 0, 0], 0.1, [0, 0, 0], 0.1) == 0.0
    assert heat_fundamental([0, 0, 0], -1.0, [0, 0, 0], 0.0) == 0.0
    assert heat_fundamental([1, 2, 3], 1 / (4 * np.pi), [1, 2, 3], 0.0) == pytest.approx(1.0)


def test_heat_fundamental_unit_mass():
    g = np.linspace(-1.5, 1.5, 121)
    X = np.stack(np.meshgrid(g, g, g, indexing="ij"), -1)
    v = heat_fundamental(X, 0.02, np.zeros(3), 0.0, kappa=2.0)
    assert abs(v.sum() * (g[1] - g[0]) ** 3 - 1) < 1e-4


def test_smooth_step_derivatives():
    x = np.linspace(-0.1, 1.1, 2001)
    h = 1e-5
    for d in (1, 2):
        fd = (smooth_step(x + h, 0.2, 0.7, d - 1) - smooth_step(x - h, 0.2, 0.7, d - 1)) / (2 * h)
        assert np.abs(fd - smooth_step(x, 0.2, 0.7, d)).max() < 1e-4
    assert smooth_step(0.2, 0.2, 0.7) == 0.0 and smooth_step(0.7, 0.2, 0.7) == 1.0


def test_slab_partition_invariants(partition):
    assert partition.test_points.shape[0] >= 10_000
    assert partition.sum_error < 1e-12
    assert partition.containment_error < 1e-12
    assert min(partition.separation) > 0.05


def test_single_chart_interior_region():
    p = build_partition(DOMAIN, 1)
    deep = np.array([[0.3, -0.2, -0.8], [-0.9, 0.9, -0.45]])
    assert np.all(p.phis[0].value(deep) == 1.0)


def test_partition_rejects_non_covering():
    phi = Cutoff(((2, Profile.up(-0.5, -0.3)),))
    with pytest.raises(ConfigurationError):
        PartitionOfUnity([phi], [phi], ["a"], np.array([[0.0, 0.0, -0.9], [0.0, 0.0, -0.1]]))


def test_partition_rejects_bad_companion():
    p = build_partition(DOMAIN, 2)
    bad = list(p.psis)
    bad[1] = p.phis[1]  # companion equal to its cutoff: psi phi != phi
    with pytest.raises(ConfigurationError):
        PartitionOfUnity(p.phis, bad, p.labels, p.test_points)


def test_partition_rejects_impossible_layer():
    with pytest.raises(ConfigurationError):
        build_partition(DOMAIN, 2, layer=(0.1, 0.2))


def test_missing_chart_kernel(partition):
    with pytest.raises(ConfigurationError):
        assemble_parametrix({"boundary1": FundamentalPair(K)}, FundamentalPair(K), partition)


def test_deep_source_is_fundamental(parametrix):
    x, y = np.array([0.1, 0.0, -0.7]), np.array([0.0, 0.1, -0.75])
    v = parametrix.value(x, 0.02, y, 0.0)
    ref, _ = FundamentalPair(K).evaluate(x, 0.02, y, 0.0)
    assert np.array_equal(v, ref)


def test_single_boundary_chart_value(parametrix, partition):
    x, y = np.array([-0.7, 0.0, -0.15]), np.array([-0.75, 0.0, -0.1])
    j = partition.index("boundary1")
    assert partition.phis[j].value(y)[0] == 1.0
    v = parametrix.value(x, 0.02, y, 0.0)
    ref, _ = parametrix.chart_kernels["boundary1"].evaluate(x, 0.02, y, 0.0)
    assert np.allclose(v, partition.psis[j].value(x)[0] * ref, rtol=1e-13)


def test_mixed_source_blend(parametrix, partition):
    x, y = np.array([0.0, 0.0, -0.3]), np.array([0.05, 0.0, -0.35])
    fy = {lab: phi.value(y)[0] for phi, lab in zip(partition.phis, partition.labels)}
    active = [lab for lab, f in fy.items() if f > 0]
    assert len(active) == 2
    total = 0.0
    for lab in active:
        j = partition.index(lab)
        kv, _ = parametrix.chart_kernels[lab].evaluate(x, 0.02, y, 0.0)
        total = total + partition.psis[j].value(x)[0] * kv * fy[lab]
    assert np.allclose(parametrix.value(x, 0.02, y, 0.0), total, rtol=1e-13)


def test_causal(parametrix):
    assert not np.any(parametrix.value([0, 0, -0.1], 0.0, [0, 0, -0.2], 0.1))


def test_boundary_conditions_and_negative_control(parametrix, partition):
    y, pts = np.array([0.1, 0.0, -0.2]), [[0.1, 0.0], [0.25, 0.1]]
    res = boundary_residual(parametrix, pts, 0.03, y, 0.0)
    assert res["value"] < 1e-8 and res["flux"] < 1e-8
    neg = assemble_parametrix({f"boundary{j}": FundamentalPair(K) for j in (1, 2, 3)},
                              FundamentalPair(K), partition)
    bad = boundary_residual(neg, pts, 0.03, y, 0.0)
    assert bad["value"] > 0.1


class _Skewed:
    """Chart kernel with a deliberately wrong H row."""

    def __init__(self, base):
        self.base = base

    def evaluate(self, x, t, y, s):
        v, g = self.base.evaluate(x, t, y, s)
        v[1] *= 1.01
        g[:, 1] *= 1.02
        return v, g


def test_lifting_cancels_boundary_defect(parametrix, partition):
    skew = _Skewed(parametrix.chart_kernels["boundary2"])
    charts = {f"boundary{j}": skew for j in (1, 2, 3)}
    raw = assemble_parametrix(charts, FundamentalPair(K), partition)
    lifted = assemble_parametrix(charts, FundamentalPair(K), partition, lift_width=0.05)
    y, pts = np.array([0.0, 0.0, -0.15]), [[0.05, 0.0]]
    assert boundary_residual(raw, pts, 0.02, y, 0.0)["value"] > 1e-3
    res = boundary_residual(lifted, pts, 0.02, y, 0.0)
    assert res["value"] < 1e-12 and res["flux"] < 1e-12


def test_lifting_profile():
    v, d = lift_boundary_defect(2.0, 3.0, K, 0.1, 0.0)
    assert v == 2.0 and K * d == pytest.approx(3.0)
    assert abs(lift_boundary_defect(2.0, 3.0, K, 0.1, -1.0)[0]) < 1e-20


def test_residual_zero_away_from_collars(parametrix):
    R = parametrix_residual(parametrix, [[0.0, 0.0, -0.8]], [0.02], [[0.0, 0.0, -0.75]], [0.0])
    assert all(np.all(r.values == 0) for r in R.values())


@pytest.mark.slow
def test_residual_flatness(parametrix):
    ts = np.geomspace(1e-4, 2e-3, 6)
    xs = np.tile([0.1, 0.0, -0.55], (ts.size, 1))
    ys = np.tile([0.1, 0.0, -0.2], (ts.size, 1))
    R = parametrix_residual(parametrix, xs, ts, ys, np.zeros(ts.size))
    flat = residual_flatness(R, ts[1:] * 1.01)
    assert max(flat["sup"]) > 0
    assert flat["rate"] >= 1.0


@pytest.mark.slow
def test_gaussian_estimates_assembled(parametrix):
    # times vary fastest so the alternating fit/validation split sees every position
    pts = [(x, t) for x in ([0.1, 0.0, -0.1], [0.3, 0.1, -0.25], [0.0, 0.0, -0.45],
                            [0.05, 0.0, -0.2], [-0.2, 0.1, -0.05])
           for t in (0.01, 0.015, 0.025, 0.04)]
    xs = np.array([p[0] for p in pts])
    ts = np.array([p[1] for p in pts])
    ys = np.tile([0.0, 0.0, -0.2], (len(pts), 1))
    ss = np.zeros(len(pts))
    for name, Kt in parametrix.sample(xs, ts, ys, ss).items():
        Kt.values = np.abs(Kt.values)
        assert gaussian_bound_fit(Kt, 1.5).violations == 0, name
    for name, Kt in parametrix.sample(xs, ts, ys, ss, gradient=True).items():
        assert gaussian_bound_fit(Kt, 2.0).violations == 0, name


# ----------------------------------------------------------------------------- 1-D


@pytest.mark.parametrize("col", [0, 1])
def test_half_line_kernel_boundary_conditions(col):
    for t in (0.003, 0.05):
        v = half_line_itp(0.0, -0.2, t, K)
        d = half_line_itp(0.0, -0.2, t, K, 1)
        assert abs(v[0, col] - v[1, col]) < 1e-12
        assert abs(d[0, col] - K * d[1, col]) < 1e-10 * abs(d).max()


def test_half_line_kernel_solves_heat_equations():
    x, y, t, e = -0.13, -0.2, 0.01, 1e-6
    dt = (half_line_itp(x, y, t + e, K) - half_line_itp(x, y, t - e, K)) / (2 * e)
    lap = half_line_itp(x, y, t, K, 2)
    kap = np.array([[1.0], [K]])
    assert np.abs(dt - kap * lap).max() < 1e-5 * np.abs(dt).max()


def test_half_line_rejects_outside():
    with pytest.raises(GridError):
        half_line_itp(0.1, -0.2, 0.01, K)


def test_partition_1d():
    p = build_partition_1d()
    assert p.sum_error < 1e-12 and min(p.separation) > 0.1
    with pytest.raises(ConfigurationError):
        build_partition_1d(collar=0.45)


def test_1d_residual_lives_on_collars():
    mesh = Mesh(64)
    par = Parametrix1D(mesh.x, trapezoid_weights(64, mesh.h), K)
    R = par.residual_blocks(0.01)
    rows = np.flatnonzero(np.abs(R).sum(axis=(0, 1, 3)) > 0)
    assert set(rows) <= set(par.collar_nodes())


def test_levi_compensation_matches_direct_solver():
    n, dt, T = 64, 4e-4, 0.012
    mesh = Mesh(n, T, dt)
    par = Parametrix1D(mesh.x, trapezoid_weights(n, mesh.h), K)
    src = mollifier(mesh, 0.5, 0.0625)
    sysm = ITPSystem(mesh, K)
    sel = mesh.times >= 0.002
    for ell in (1, 2):
        direct = green_column(sysm, ell, 0.5, 0.0, 0.0625)
        levi = compensated_green_column(par, src, ell, dt, mesh.nt)
        scale = np.abs(direct.G[sel]).max()
        err = max(np.abs(direct.G - levi.G)[sel].max(), np.abs(direct.H - levi.H)[sel].max())
        unc = np.abs(direct.G - levi.parametrix[:, :n + 1])[sel].max()
        assert err < 0.05 * scale
        assert err < 0.5 * unc
