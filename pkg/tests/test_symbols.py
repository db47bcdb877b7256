import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from itpgreen.errors import BranchError, ConfigurationError, DegeneracyError, InvalidMetricError
from itpgreen.geometry import (chart_metric, diagonal_layered_metric, flat_metric,
                               random_layered_metric, restrict)
from itpgreen.symbols import (Branch, assemble_first_order, branch_sqrt, char_roots,
                              discriminant_check, discriminant_values, first_order_amplitudes,
                              first_order_coefficients, in_L2mu, lopatinskii_denominator,
                              ode_residual, real_regime_grid, second_order_amplitudes,
                              symbol_order_probe, verify_transmission_system)

I = np.eye(3)


def test_flat_roots():
    r = char_roots(I, (0.0, 0.0), 4.0, 4.0)
    assert np.allclose([r.lambda_plus, r.lambda_minus, r.mu_plus, r.mu_minus], [2, -2, 1, -1])
    assert np.isclose(char_roots(I, (3.0, 4.0), 11.0, 2.0).lambda_plus, 6.0)


def test_zero_m33_rejected():
    M = np.diag([1.0, 1.0, 0.0])
    with pytest.raises(InvalidMetricError):
        char_roots(M, (0.0, 0.0), 1.0, 2.0)


def test_branch_cut_rejected():
    with pytest.raises(BranchError):
        branch_sqrt(-4.0)
    assert branch_sqrt(-4.0 + 1e-3j).real > 0


def test_lopatinskii_values():
    assert np.isclose(lopatinskii_denominator(I, I, (0.0, 0.0), 4.0, 4.0), 2.0)
    assert np.isclose(lopatinskii_denominator(I, I, (0.0, 0.0), 1.0, 4.0), 1.0)
    with pytest.raises(DegeneracyError):
        lopatinskii_denominator(I, I, (0.3, 0.1), 2.0, 1.0)


def test_first_order_flat_values():
    c = first_order_coefficients(I, I, 1.0, (0.0, 0.0), 4.0, 4.0)
    assert np.allclose([c["A1"], c["B1"], c["A2"], c["B2"]], [0.25, 0.125, -0.5, 0.375])
    a1 = first_order_amplitudes(1, I, I, 1.0, (0.0, 0.0), 4.0, 4.0, -0.5)
    assert np.isclose(a1.term("a", Branch.LP_LM).coeffs[0], -0.75)
    assert np.isclose(a1.term("a", Branch.LM_LM).coeffs[0], 0.25)
    a2 = first_order_amplitudes(2, I, I, 1.0, (0.0, 0.0), 4.0, 4.0, -0.5)
    assert np.isclose(a2.term("d", Branch.MP_MM).coeffs[0], 0.375)
    assert np.isclose(a2.term("d", Branch.MM_MM).coeffs[0], 0.125)


def test_branch_population_by_column():
    a1 = first_order_amplitudes(1, I, I, 1.0, (0.2, 0.1), 3.0, 4.0, -0.5)
    a2 = first_order_amplitudes(2, I, I, 1.0, (0.2, 0.1), 3.0, 4.0, -0.5)
    used1 = {b.index for n in "abde" for b in a1.branches(n)}
    used2 = {b.index for n in "abde" for b in a2.branches(n)}
    assert used1 == {1, 3, 4, 5} and used2 == {2, 6, 7, 8}
    assert all(t.orders == (-1,) for n in "abde" for t in a1.terms[n])


def test_free_space_terms_match_standalone():
    rng = np.random.default_rng(0)
    m = random_layered_metric(rng)
    M1, M0, J = restrict(m, -0.3)
    xi, tau, k = (0.4, -0.9), 2.0 + 3.0j, 3.0
    c = first_order_coefficients(M0, M1, J, xi, tau, k)
    r = char_roots(M1, xi, tau, k)
    A1 = 1 / (J * M1[2, 2] * (r.lambda_plus - r.lambda_minus))
    B1 = 1 / (J * k * M1[2, 2] * (r.mu_plus - r.mu_minus))
    a1 = first_order_amplitudes(1, M0, M1, J, xi, tau, k, -0.3)
    a2 = first_order_amplitudes(2, M0, M1, J, xi, tau, k, -0.3)
    assert np.isclose(a1.term("a", Branch.LM_LM).coeffs[0], A1, rtol=1e-14)
    assert np.isclose(a2.term("e", Branch.MP_MP).coeffs[0], B1, rtol=1e-14)
    assert np.isclose(c["A1"], A1) and np.isclose(c["B1"], B1)


def test_residuals_zero_and_perturbation_detected():
    xi, tau, k = (0.7, -0.2), 5.0 + 1.0j, 4.0
    amp = first_order_amplitudes(1, I, I, 1.0, xi, tau, k, -0.4)
    assert np.all(verify_transmission_system(amp) < 1e-12)
    bad = dict(amp.coefficients)
    bad["A2"] = 1.1 * bad["A2"]
    broken = assemble_first_order(1, amp.roots, bad, M0=I, M1=I, J_y=1.0, k=k, xi_t=xi,
                                  tau=tau, y3=-0.4)
    res = verify_transmission_system(broken)
    assert np.all(res[:4] < 1e-12)
    assert res[5] > 1e-3


@settings(max_examples=200, deadline=None)
@given(st.floats(-20, 20), st.floats(-20, 20), st.floats(0.1, 1e4), st.floats(-1e3, 1e3),
       st.floats(1.1, 20.0), st.integers(0, 10_000))
def test_vieta_and_residual_sweep(x1, x2, re_tau, im_tau, k, seed):
    m = random_layered_metric(np.random.default_rng(seed))
    M1, M0, J = restrict(m, -0.5)
    tau = re_tau + 1j * im_tau
    r = char_roots(M1, (x1, x2), tau, k)
    assert r.sqrt_lambda.real > 0 and r.sqrt_mu.real > 0
    vieta = -2j * (M1[2, 0] * x1 + M1[2, 1] * x2) / M1[2, 2]
    scale = abs(r.lambda_plus) + abs(r.lambda_minus) + abs(vieta) + 1e-300
    assert abs(r.lambda_plus + r.lambda_minus - vieta) < 1e-12 * scale
    assert np.all(r.quadratic_residuals(tau, k) < 1e-12)
    for ell in (1, 2):
        amp = first_order_amplitudes(ell, M0, M1, J, (x1, x2), tau, k, -0.5)
        assert np.all(verify_transmission_system(amp) < 1e-12)


def test_vectorized_amplitudes():
    x1 = np.linspace(-3, 3, 7)
    tau = np.full_like(x1, 2.0 + 1j, dtype=complex)
    amp = first_order_amplitudes(1, I, I, 1.0, (x1, 0 * x1), tau, 3.0, -0.2)
    assert amp.evaluate("a", -0.1).shape == (7,)
    assert np.all(verify_transmission_system(amp) < 1e-12)


def test_second_order_flat_is_zero():
    amp, sol = second_order_amplitudes(1, flat_metric(), (0.3, 0.4), 2.0, 4.0, -0.5)
    assert all(abs(v) == 0 for v in sol.E.values())
    for n in "abde":
        for t in amp.terms[n]:
            assert all(abs(c) == 0 for c in t.coeffs)


@pytest.mark.parametrize("ell", [1, 2])
def test_second_order_layered_residuals(ell):
    rng = np.random.default_rng(11)
    for _ in range(20):
        m = random_layered_metric(rng)
        xi = tuple(rng.normal(0, 2, 2))
        tau = rng.uniform(0.5, 30) + 1j * rng.normal(0, 10)
        y3 = -rng.uniform(0.05, 1.0)
        amp1 = first_order_amplitudes(ell, *_frozen_args(m, y3), xi, tau, 3.0, y3)
        amp2, sol = second_order_amplitudes(ell, m, xi, tau, 3.0, y3)
        assert np.all(verify_transmission_system(amp2) < 1e-10)
        assert ode_residual(amp2, amp1, m, np.linspace(-1.5, 0, 9)) < 1e-10
        r = amp1.roots
        assert sol.C[3 if ell == 1 else 9] == (
            (sol.F[(1, 3)] - sol.F[(1, 4)]) / (r.lambda_plus - r.lambda_minus) if ell == 1
            else (sol.F[(1, 7)] - sol.F[(1, 8)]) / (r.mu_plus - r.mu_minus))
        assert all(t.orders == (-2, -1, 0) for n in "abde" for t in amp2.terms[n])


def _frozen_args(m, y3):
    M1, M0, J = restrict(m, y3)
    return M0, M1, J


def test_second_order_linear_in_perturbation():
    vals = []
    for eps in (1e-3, 1e-4):
        m = diagonal_layered_metric(lambda x, e=eps: 1 + e * x, lambda x, e=eps: e)
        amp, _ = second_order_amplitudes(1, m, (0.5, 0.2), 3.0 + 1j, 4.0, -0.3)
        vals.append(np.array([c for n in "abde" for t in amp.terms[n] for c in t.coeffs]))
    mask = np.abs(vals[1]) > 0
    ratio = vals[0][mask] / vals[1][mask]
    assert np.allclose(ratio, 10.0, rtol=2e-3)


def test_second_order_requires_layered():
    m = chart_metric(lambda p: np.eye(3) + 0.1 * p[0] * np.eye(3))
    with pytest.raises(ConfigurationError):
        second_order_amplitudes(1, m, (0.1, 0.1), 1.0, 2.0, -0.1)


def test_in_L2mu_cases():
    assert in_L2mu((0.3, -1.0), 1 - 1j, 0.7)
    mu, xi = 0.5, (0.3, 0.4)
    eta = 2.0 + 1j * mu * (2.0 + 0.25)
    assert not in_L2mu(xi, eta, mu)
    assert not in_L2mu((1j, 0.0), 0.0, 1.0)


def test_discriminant_flat_cases():
    v = discriminant_values(I, (1.0, 2.0), 0.0)
    assert v.real < 0 and v.imag == 0
    v = discriminant_values(I, (1.0, 2.0), 0.5)
    assert v.imag != 0
    assert discriminant_check(I, 0.2, 0)["samples"] == 0


def test_discriminant_random_metric():
    rng = np.random.default_rng(4)
    m = random_layered_metric(rng)
    rep = discriminant_check(m.matrix([0, 0, -0.2]), 0.1, 20_000, rng)
    assert rep["violations"] == 0 and rep["min_distance"] > 0


def test_symbol_order_probe():
    grid = real_regime_grid()
    A1 = lambda x1, x2, t: first_order_coefficients(I, I, 1.0, (x1, x2), t, 4.0)["A1"]
    rep = symbol_order_probe(A1, -1, grid)
    assert rep["bounded"]
    real_tau = real_regime_grid(angles=(0.0,))
    assert symbol_order_probe(A1, -1, real_tau)["sup_ratio"] <= 1 / np.sqrt(2) + 1e-12
    big = [(0.0, 0.0, 1e12)]
    assert abs(symbol_order_probe(A1, -1, big)["sup_ratio"] - 0.5) < 1e-5
    one = symbol_order_probe(lambda x1, x2, t: np.ones_like(t), -1, grid)
    assert not one["bounded"]
    for key in ("A1", "B1", "A2", "B2"):
        f = lambda x1, x2, t, key=key: first_order_coefficients(I, I, 1.0, (x1, x2), t, 4.0)[key]
        assert symbol_order_probe(f, -1, grid)["bounded"]

    def prod(x1, x2, t):
        c = first_order_coefficients(I, I, 1.0, (x1, x2), t, 4.0)
        return c["A2"] * c["B1"]
    assert symbol_order_probe(prod, -2, grid)["bounded"]
