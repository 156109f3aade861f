import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fdmc.errors import DimensionError, DomainError, NotPSDError
from fdmc.linalg import (
    Ellipsoid,
    GaussianDist,
    chi2_quantile,
    chol,
    dist_point_to_ellipsoid,
    forward_gram,
    gram_integral,
    mat_exp,
    mvn_sample,
    mvn_samples,
    normal_quantile,
)


def simpson(f, a, b, n=2000):
    x = np.linspace(a, b, n + 1)
    w = np.ones(n + 1)
    w[1:-1:2], w[2:-1:2] = 4, 2
    return sum(wi * f(xi) for wi, xi in zip(w, x)) * (b - a) / (3 * n)


def taylor_exp(a, terms=60):
    out, term = np.eye(a.shape[0]), np.eye(a.shape[0])
    for k in range(1, terms):
        term = term @ a / k
        out = out + term
    return out


def chi2_cdf_series(x, k):
    # regularized lower incomplete gamma P(k/2, x/2) by its power series
    s, xs = k / 2.0, x / 2.0
    term = total = 1.0 / s
    n = 1
    while term > 1e-17 * total:
        term *= xs / (s + n)
        total += term
        n += 1
    return math.exp(-xs + s * math.log(xs) - math.lgamma(s)) * total


def bisect(f, lo, hi, target):
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if f(mid) < target else (lo, mid)
    return 0.5 * (lo + hi)


def test_mat_exp_identity_at_zero():
    a = np.array([[0.0, 1.0], [-2.0, -3.0]])
    assert np.array_equal(mat_exp(a, 0.0), np.eye(2))


def test_mat_exp_rotation():
    a = np.array([[0.0, -1.0], [1.0, 0.0]])
    t = 0.7
    want = np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])
    assert np.allclose(mat_exp(a, t), want, atol=1e-14)


def test_mat_exp_matches_taylor_series():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(4, 4)) * 0.5
    assert np.allclose(mat_exp(a, 1.3), taylor_exp(a * 1.3), rtol=1e-12, atol=1e-13)


def test_mat_exp_rejects_non_square():
    with pytest.raises(DimensionError):
        mat_exp(np.ones((2, 3)))


def test_gram_integral_scalar_closed_form():
    # int_0^1 e^{2u} du = (e^2 - 1) / 2
    got = gram_integral(np.array([[-1.0]]), np.array([[1.0]]), 1.0)
    assert got[0, 0] == pytest.approx((math.e**2 - 1) / 2, rel=1e-13)


def test_gram_integral_matches_simpson():
    a = np.array([[0.0, 1.0], [-2.0, -3.0]])
    s = np.array([[0.0], [1.0]])
    want = simpson(lambda u: taylor_exp(-a * u) @ s @ s.T @ taylor_exp(-a * u).T, 0.0, 1.5)
    assert np.allclose(gram_integral(a, s, 1.5), want, rtol=1e-9, atol=1e-12)


def test_forward_gram_long_horizon_is_stationary():
    # stable scalar OU: int_0^T e^{-2u} du -> 1/2, no overflow at T = 50
    got = forward_gram(np.array([[-1.0]]), np.array([[1.0]]), 50.0)
    assert got[0, 0] == pytest.approx(0.5 * (1 - math.exp(-100)), rel=1e-12)


def test_forward_gram_satisfies_lyapunov():
    a = np.array([[0.0, 1.0], [-0.05, -1.05]])
    q = np.diag([0.0, 0.0036])
    w = forward_gram(a, q, 50.0)
    resid = a @ w + w @ a.T + q - mat_exp(a, 50.0) @ q @ mat_exp(a, 50.0).T
    assert np.abs(resid).max() < 1e-10
    assert np.linalg.eigvalsh(w).min() >= -1e-15


def test_gram_zero_horizon_and_errors():
    assert np.array_equal(forward_gram(np.eye(2), np.eye(2), 0.0), np.zeros((2, 2)))
    with pytest.raises(DomainError):
        forward_gram(np.eye(2), np.eye(2), -1.0)
    with pytest.raises(DimensionError):
        gram_integral(np.eye(2), np.ones((3, 1)), 1.0)


def test_chol_exact_and_jitter():
    p = np.array([[4.0, 2.0], [2.0, 3.0]])
    L, jit = chol(p)
    assert jit == 0.0 and np.allclose(L @ L.T, p)
    singular = np.ones((3, 3))
    L, jit = chol(singular)
    assert np.allclose(L @ L.T, singular, atol=1e-9)
    assert np.allclose(np.tril(L), L)


def test_chol_zero_matrix_and_rejects_indefinite():
    L, jit = chol(np.zeros((2, 2)))
    assert np.array_equal(L, np.zeros((2, 2))) and jit == 0.0
    with pytest.raises(NotPSDError):
        chol(np.array([[1.0, 0.0], [0.0, -1.0]]))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(0, 2**32 - 1), st.integers(0, 4))
def test_chol_reconstructs_random_psd(n, seed, rank_drop):
    rng = np.random.default_rng(seed)
    b = rng.normal(size=(n, max(n - rank_drop, 1)))
    p = b @ b.T
    L, _ = chol(p)
    assert np.allclose(L @ L.T, p, atol=1e-8 * max(np.trace(p), 1.0))


@pytest.mark.parametrize("dof", [1, 2, 3])
@pytest.mark.parametrize("alpha", [0.05, 1e-4, 5e-7])
def test_chi2_quantile_against_series(alpha, dof):
    want = bisect(lambda x: chi2_cdf_series(x, dof), 1e-9, 200.0, 1 - alpha)
    assert chi2_quantile(alpha, dof) == pytest.approx(want, rel=1e-9)


def test_chi2_quantile_known_value():
    assert chi2_quantile(0.05, 3) == pytest.approx(7.814727903, abs=1e-8)


def test_normal_quantile_against_erf():
    want = bisect(lambda z: 0.5 * math.erfc(-z / math.sqrt(2)), -10, 10, 0.975)
    assert normal_quantile(0.025) == pytest.approx(want, rel=1e-12)
    assert normal_quantile(0.025) == pytest.approx(1.959963985, abs=1e-9)


@pytest.mark.parametrize("alpha", [0.0, 1.0, -0.1, 2.0])
def test_quantiles_reject_bad_alpha(alpha):
    with pytest.raises(DomainError):
        chi2_quantile(alpha, 2)
    with pytest.raises(DomainError):
        normal_quantile(alpha)


def test_gaussian_dist_validation():
    with pytest.raises(DimensionError):
        GaussianDist([0.0, 0.0], np.eye(3))
    with pytest.raises(DomainError):
        GaussianDist([0.0, 0.0], [[1.0, 0.5], [0.0, 1.0]])
    with pytest.raises(DomainError):
        GaussianDist([np.nan], [[1.0]])
    d = GaussianDist([1.0, 2.0, 3.0], np.diag([1.0, 2.0, 3.0]))
    m = d.marginal([2, 0])
    assert np.array_equal(m.mean, [3.0, 1.0]) and np.array_equal(m.cov, np.diag([3.0, 1.0]))


def test_mvn_samples_moments():
    cov = np.array([[2.0, 0.6], [0.6, 0.5]])
    dist = GaussianDist([1.0, -1.0], cov)
    x = mvn_samples(dist, np.random.default_rng(0), 200_000)
    assert np.allclose(x.mean(axis=0), dist.mean, atol=0.01)
    assert np.allclose(np.cov(x.T), cov, atol=0.02)


def test_mvn_sample_equals_first_row_of_batch():
    dist = GaussianDist([0.0, 1.0], [[1.0, 0.3], [0.3, 1.0]])
    one = mvn_sample(dist, np.random.default_rng(5))
    batch = mvn_samples(dist, np.random.default_rng(5), 1)
    assert np.allclose(one, batch[0])


def test_ellipsoid_contains_and_axes():
    e = Ellipsoid([0.0, 0.0], np.diag([4.0, 1.0]), 1.0)
    assert np.allclose(np.sort(e.semi_axes), [1.0, 2.0])
    assert e.contains([1.9, 0.0]) and not e.contains([0.0, 1.1])


def test_distance_axis_aligned_cases():
    e = Ellipsoid([0.0, 0.0], np.diag([4.0, 1.0]), 1.0)
    assert dist_point_to_ellipsoid([4.0, 0.0], e) == pytest.approx(2.0, abs=1e-10)
    assert dist_point_to_ellipsoid([0.0, 3.0], e) == pytest.approx(2.0, abs=1e-10)
    assert dist_point_to_ellipsoid([0.5, 0.2], e) == 0.0
    sphere = Ellipsoid([1.0, 1.0, 1.0], np.eye(3), 4.0)
    assert dist_point_to_ellipsoid([1.0, 1.0, 6.0], sphere) == pytest.approx(3.0, abs=1e-10)


def test_distance_degenerate_ellipsoid():
    # a segment from (-1, 0) to (1, 0)
    seg = Ellipsoid([0.0, 0.0], np.diag([1.0, 0.0]), 1.0)
    assert dist_point_to_ellipsoid([3.0, 0.0], seg) == pytest.approx(2.0, abs=1e-10)
    assert dist_point_to_ellipsoid([0.5, 2.0], seg) == pytest.approx(2.0, abs=1e-10)
    assert dist_point_to_ellipsoid([2.0, 1.0], seg) == pytest.approx(math.sqrt(2.0), abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_distance_matches_brute_force_boundary_search(seed):
    rng = np.random.default_rng(seed)
    b = rng.normal(size=(2, 2))
    shape = b @ b.T + 0.05 * np.eye(2)
    e = Ellipsoid(rng.normal(size=2), shape, 1.0 + rng.random())
    p = e.center + rng.normal(size=2) * 4
    theta = np.linspace(0, 2 * np.pi, 200_001)
    w, v = np.linalg.eigh(shape)
    boundary = e.center + (np.stack([np.cos(theta), np.sin(theta)], 1) * np.sqrt(e.threshold * w)) @ v.T
    brute = np.linalg.norm(boundary - p, axis=1).min()
    got = dist_point_to_ellipsoid(p, e)
    if e.contains(p):
        assert got == 0.0
    else:
        assert got == pytest.approx(brute, abs=1e-6)
