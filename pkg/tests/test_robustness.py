import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from irs_cache.channel import SceneConfig, build_scene, generate_scene
from irs_cache.robustness import (
    _sinr_gradient, _user_sinr, empirical_outage, error_variance, rate_under_error, sample_error_ball,
    worst_case_certificate,
)

from oracles import sinr_loop


def cn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def small_scene(delta=0.05, seed=0, K=2):
    return generate_scene(SceneConfig(n_antennas=3, m_elements=4, k_users=K, noise_dbm=-60), seed=seed, delta_g=delta)


def test_ball_zero_radius():
    np.testing.assert_array_equal(sample_error_ball(0.0, 3, 2, "interior", seed=1), np.zeros((3, 2)))
    np.testing.assert_array_equal(sample_error_ball(0.0, 3, 2, "boundary", seed=1), np.zeros((3, 2)))


def test_ball_boundary_norm():
    pts = sample_error_ball(2.0, 4, 3, "boundary", seed=2, count=200)
    assert np.max(np.abs(np.linalg.norm(pts.reshape(200, -1), axis=1) - 2.0)) <= 1e-12


def test_ball_interior_never_exceeds_radius():
    pts = sample_error_ball(0.7, 6, 6, "interior", seed=3, count=5000)
    assert np.all(np.linalg.norm(pts.reshape(5000, -1), axis=1) <= 0.7)


def test_ball_radial_moment():
    M, N, xi = 2, 2, 1.5
    pts = sample_error_ball(xi, M, N, "interior", seed=4, count=10_000)
    r = np.linalg.norm(pts.reshape(len(pts), -1), axis=1)
    assert abs(np.mean((r / xi) ** (2 * M * N)) - 0.5) <= 0.02


def test_ball_direction_isotropic():
    pts = sample_error_ball(1.0, 2, 2, "boundary", seed=5, count=20_000)
    # each real coordinate of a uniform point on S^7 has second moment 1/8
    flat = pts.reshape(len(pts), -1)
    coords = np.concatenate([flat.real, flat.imag], axis=1)
    np.testing.assert_allclose(np.mean(coords**2, axis=0), 1 / 8, atol=0.005)
    np.testing.assert_allclose(np.mean(coords, axis=0), 0, atol=0.01)


def test_ball_rejects():
    with pytest.raises(ValueError):
        sample_error_ball(-1.0, 2, 2)
    with pytest.raises(ValueError):
        sample_error_ball(1.0, 2, 2, mode="shell")


def test_zero_precoder_zero_rate():
    sc = small_scene()
    rates = rate_under_error(np.zeros((3, 2)), np.ones(4), sc, np.zeros((2, 4, 3)))
    np.testing.assert_array_equal(rates, [0.0, 0.0])


def test_scalar_rate_by_hand():
    h = np.array([[1 + 1j, 0.5]])
    sc = build_scene(h, np.ones((1, 2)), np.zeros((1, 1)), 0.25)
    w = np.array([[0.3 - 0.2j], [1j]])
    snr = abs(np.conj(h[0]) @ w[:, 0]) ** 2 / 0.25
    rate = rate_under_error(w, np.ones(1), sc, np.zeros((1, 1, 2)))
    assert rate[0] == pytest.approx(math.log2(1 + snr), rel=1e-14)


def test_sqrt2_scaling_doubles_sinr():
    rng = np.random.default_rng(6)
    sc = small_scene(K=1)
    W, e = cn(rng, 3, 1), np.exp(1j * rng.uniform(0, 6, 4))
    s1 = 2 ** rate_under_error(W, e, sc, np.zeros((1, 4, 3))) - 1
    s2 = 2 ** rate_under_error(math.sqrt(2) * W, e, sc, np.zeros((1, 4, 3))) - 1
    # at high SNR log2(1 + x) loses relative precision, hence the tolerance
    assert s2[0] == pytest.approx(2 * s1[0], rel=1e-9)


def test_rates_match_loop_oracle():
    rng = np.random.default_rng(7)
    sc = small_scene(K=3)
    for _ in range(20):
        W, e = cn(rng, 3, 3) * 1e-2, np.exp(1j * rng.uniform(0, 6, 4))
        dG = cn(rng, 3, 4, 3) * 1e-3
        ref = np.log2(1 + sinr_loop(W, e, sc.h, sc.G_hat + dG, sc.noise_power))
        np.testing.assert_allclose(rate_under_error(W, e, sc, dG), ref, rtol=1e-10)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(8)
    sc = small_scene(K=3)
    W, e = cn(rng, 3, 3) * 1e-2, np.exp(1j * rng.uniform(0, 6, 4))
    G = sc.G_hat[1][None] + 1e-3 * cn(rng, 1, 4, 3)
    grad = _sinr_gradient(W, e, sc.h[1], G, 1, sc.noise_power[1])[0]
    f0 = _user_sinr(W, e, sc.h[1], G, 1, sc.noise_power[1])[0]
    for _ in range(5):
        D = cn(rng, 4, 3)
        t = 1e-7 * np.linalg.norm(G) / np.linalg.norm(D)
        fd = (_user_sinr(W, e, sc.h[1], G + t * D, 1, sc.noise_power[1])[0] - f0) / t
        assert fd == pytest.approx(2 * np.real(np.vdot(grad, D)), rel=1e-4)


def test_certificate_without_error_is_nominal():
    rng = np.random.default_rng(9)
    sc = small_scene(delta=0.0)
    W, e = cn(rng, 3, 2) * 1e-2, np.exp(1j * rng.uniform(0, 6, 4))
    nominal = rate_under_error(W, e, sc, np.zeros((2, 4, 3)))
    rep = worst_case_certificate(W, e, sc, nominal + 1e-2, n_samples=20)
    np.testing.assert_array_equal(rep.min_rate, nominal)
    # every point is the same point, so each is a violation at a target just above
    assert rep.violations == rep.samples
    rep = worst_case_certificate(W, e, sc, nominal - 1e-2, n_samples=20)
    assert rep.violations == 0


def test_certificate_never_above_nominal():
    rng = np.random.default_rng(10)
    sc = small_scene(delta=0.05)
    for _ in range(3):
        W, e = cn(rng, 3, 2) * 1e-2, np.exp(1j * rng.uniform(0, 6, 4))
        nominal = rate_under_error(W, e, sc, np.zeros((2, 4, 3)))
        rep = worst_case_certificate(W, e, sc, 1.0, n_samples=50, descent_iters=20, descent_starts=3)
        assert np.all(rep.min_rate <= nominal)
        assert rep.violations <= rep.samples
        for k in range(2):
            assert np.linalg.norm(rep.worst_dG[k]) <= sc.xi[k] * (1 + 1e-12)
            dG = np.zeros((2, 4, 3), complex)
            dG[k] = rep.worst_dG[k]
            assert rate_under_error(W, e, sc, dG)[k] == pytest.approx(rep.min_rate[k], rel=1e-12)


def test_descent_improves_on_sampling():
    rng = np.random.default_rng(11)
    sc = small_scene(delta=0.2)
    W, e = cn(rng, 3, 2) * 1e-2, np.exp(1j * rng.uniform(0, 6, 4))
    plain = worst_case_certificate(W, e, sc, 1.0, n_samples=50, descent_iters=0, seed=1)
    refined = worst_case_certificate(W, e, sc, 1.0, n_samples=50, seed=1)
    assert np.all(refined.min_rate <= plain.min_rate)


def test_certificate_nested_balls():
    rng = np.random.default_rng(12)
    base = small_scene(delta=0.1)
    W, e = cn(rng, 3, 2) * 1e-2, np.exp(1j * rng.uniform(0, 6, 4))
    mins = []
    for frac in (0.0, 0.5, 1.0):
        sc = type(base)(**{**vars(base), "xi": base.xi * frac})
        mins.append(worst_case_certificate(W, e, sc, 1.0, n_samples=200, seed=3).min_rate)
    assert np.all(mins[1] <= mins[0]) and np.all(mins[2] <= mins[1])


def test_certificate_deterministic():
    rng = np.random.default_rng(13)
    sc = small_scene(delta=0.1)
    W, e = cn(rng, 3, 2) * 1e-2, np.exp(1j * rng.uniform(0, 6, 4))
    a = worst_case_certificate(W, e, sc, 1.0, n_samples=30, seed=4)
    b = worst_case_certificate(W, e, sc, 1.0, n_samples=30, seed=4)
    np.testing.assert_array_equal(a.min_rate, b.min_rate)
    np.testing.assert_array_equal(a.worst_dG, b.worst_dG)
    with pytest.raises(ValueError):
        worst_case_certificate(W, e, sc, 1.0, n_samples=0)


def test_outage_without_error():
    rng = np.random.default_rng(14)
    sc = small_scene(delta=0.0)
    W, e = cn(rng, 3, 2) * 1e-2, np.exp(1j * rng.uniform(0, 6, 4))
    nominal = rate_under_error(W, e, sc, np.zeros((2, 4, 3)))
    assert empirical_outage(W, e, sc, nominal - 1e-3, n_draws=200) == 0.0
    assert empirical_outage(W, e, sc, nominal + 1e-3, n_draws=200) == 1.0


def test_outage_vanishing_target():
    rng = np.random.default_rng(15)
    sc = small_scene(delta=0.2)
    W, e = cn(rng, 3, 2) * 1e-2, np.exp(1j * rng.uniform(0, 6, 4))
    assert empirical_outage(W, e, sc, 1e-12, n_draws=500) == 0.0


def test_outage_rejects_few_draws():
    sc = small_scene()
    with pytest.raises(ValueError):
        empirical_outage(np.zeros((3, 2)), np.ones(4), sc, 1.0, n_draws=99)


def test_error_variance():
    sc = small_scene(delta=0.05)
    for k in range(2):
        assert error_variance(sc)[k] == pytest.approx(0.05**2 * np.linalg.norm(sc.G_hat[k]) ** 2, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(xi=st.floats(0, 5), M=st.integers(1, 4), N=st.integers(1, 4), seed=st.integers(0, 1000))
def test_ball_contract(xi, M, N, seed):
    pts = sample_error_ball(xi, M, N, "interior", seed=seed, count=50)
    assert np.all(np.linalg.norm(pts.reshape(50, -1), axis=1) <= xi * (1 + 1e-12))
    b = sample_error_ball(xi, M, N, "boundary", seed=seed)
    assert abs(np.linalg.norm(b) - xi) <= 1e-12 * max(1, xi)
