import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kband.kernels import Linear, SquaredExponential
from kband.posterior import BatchedPosterior, FiniteSetPosterior, StandardPosterior, default_lambda

from oracles import expanded_posterior


def test_append_to_empty():
    p = BatchedPosterior(SquaredExponential(), 1.0).append([0.3], 1)
    np.testing.assert_array_equal(p.actions, [[0.3]])
    np.testing.assert_array_equal(p.weights, [1])


def test_append_merges_identical_action():
    p = BatchedPosterior(SquaredExponential(), 1.0)
    p.append([0.3, 0.1], 2).append([0.3, 0.1], 3)
    assert len(p) == 1
    np.testing.assert_array_equal(p.weights, [5])


def test_append_rejects_zero_count():
    with pytest.raises(ValueError):
        BatchedPosterior(SquaredExponential(), 1.0).append([0.0], 0)


def test_empty_variance_is_prior():
    assert BatchedPosterior(SquaredExponential(), 0.1).variance([[0.4, 0.4]])[0] == 1.0


@pytest.mark.parametrize("w", [1, 2, 7])
def test_scalar_variance(w):
    p = BatchedPosterior(SquaredExponential(), 1.0).append([0.0], w)
    assert p.variance([[0.0]])[0] == pytest.approx(1.0 / (w + 1.0), rel=1e-14)


def test_scalar_mean():
    p = BatchedPosterior(SquaredExponential(), 1.0).append([0.0], 1)
    assert p.mean([[0.0]], [2.0])[0] == pytest.approx(1.0, rel=1e-14)


def test_mean_zero_feedback():
    p = BatchedPosterior(SquaredExponential(0.3), 0.5).append([0.1], 2).append([0.7], 1)
    np.testing.assert_array_equal(p.mean(np.linspace(0, 1, 5)[:, None], [0.0, 0.0]), np.zeros(5))


def test_mean_length_mismatch():
    p = BatchedPosterior(SquaredExponential(), 1.0).append([0.1], 1)
    with pytest.raises(ValueError):
        p.mean([[0.0]], [1.0, 2.0])


def test_standard_empty_is_prior():
    mu, var = StandardPosterior(SquaredExponential(), 1.0).mean_var([[0.2]])
    assert mu[0] == 0.0 and var[0] == 1.0


def test_standard_scalar():
    mu, var = StandardPosterior(SquaredExponential(), 1.0, [[0.0]], [3.0]).mean_var([[0.0]])
    assert mu[0] == pytest.approx(1.5) and var[0] == pytest.approx(0.5)


def test_standard_duplicate_matches_weight_two():
    k = SquaredExponential(0.3)
    std = StandardPosterior(k, 0.2, [[0.4], [0.4]], [1.3, 1.3])
    bat = BatchedPosterior(k, 0.2).append([0.4], 2)
    X = np.linspace(0, 1, 7)[:, None]
    mu, var = std.mean_var(X)
    np.testing.assert_allclose(bat.variance(X), var, rtol=1e-10, atol=1e-14)
    np.testing.assert_allclose(bat.mean(X, [1.3]), mu, rtol=1e-10, atol=1e-14)


def test_two_distinct_actions_match_expanded_oracle():
    k = SquaredExponential(0.25)
    A = np.array([[0.2, 0.3], [0.6, 0.9]])
    w = [3, 2]
    p = BatchedPosterior(k, 0.4)
    for a, c in zip(A, w):
        p.append(a, c)
    H = np.repeat(A, w, axis=0)
    X = np.random.default_rng(1).uniform(size=(6, 2))
    _, var = expanded_posterior(k.gram(H), k(H, X), k.diag(X), np.zeros(len(H)), 0.4)
    np.testing.assert_allclose(p.variance(X), var, rtol=1e-10)


def test_default_lambda():
    assert default_lambda(0.01) == pytest.approx(1e-4)
    assert default_lambda(0.01, 0.1) == pytest.approx(1e-2)
    assert default_lambda(0.5, 0.0) == pytest.approx(0.25)


@st.composite
def instances(draw):
    seed = draw(st.integers(0, 2**31))
    rng = np.random.default_rng(seed)
    d = draw(st.integers(1, 3))
    n_act = draw(st.integers(1, 6))
    kernel = draw(st.sampled_from(["se", "linear"]))
    k = SquaredExponential(draw(st.floats(0.1, 1.0))) if kernel == "se" else Linear()
    lam = draw(st.floats(0.05, 2.0))
    A = rng.uniform(-1, 1, size=(n_act, d))
    w = rng.integers(1, 6, size=n_act)
    X = rng.uniform(-1, 1, size=(draw(st.integers(1, 10)), d))
    ybar = rng.normal(size=n_act)
    return k, lam, A, w, X, ybar


@settings(max_examples=150, deadline=None)
@given(instances())
def test_batched_equals_expanded_standard(inst):
    k, lam, A, w, X, ybar = inst
    p = BatchedPosterior(k, lam)
    for a, c in zip(A, w):
        p.append(a, int(c))
    H = np.repeat(A, w, axis=0)
    y = np.repeat(ybar, w)
    mu_o, var_o = expanded_posterior(k.gram(H), k(H, X), k.diag(X), y, lam)
    np.testing.assert_allclose(p.variance(X), np.clip(var_o, 0, None), rtol=1e-8, atol=1e-12)
    np.testing.assert_allclose(p.mean(X, ybar), mu_o, rtol=1e-8, atol=1e-12)
    mu_s, var_s = StandardPosterior(k, lam, H, y).mean_var(X)
    np.testing.assert_allclose(var_s, np.clip(var_o, 0, None), rtol=1e-8, atol=1e-12)
    np.testing.assert_allclose(mu_s, mu_o, rtol=1e-8, atol=1e-12)


@settings(max_examples=80, deadline=None)
@given(instances())
def test_variance_bounded_and_monotone(inst):
    k, lam, A, w, X, _ = inst
    p = BatchedPosterior(k, lam)
    prev = p.variance(X)
    kxx = k.diag(X)
    for a, c in zip(A, w):
        p.append(a, int(c))
        cur = p.variance(X)
        assert np.all(cur >= -1e-9) and np.all(cur <= kxx + 1e-9)
        assert np.all(cur <= prev + 1e-9)
        prev = cur


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(1, 8), steps=st.integers(1, 40), lam=st.floats(0.01, 2.0))
def test_finite_set_posterior_matches_standard(seed, n, steps, lam):
    rng = np.random.default_rng(seed)
    P = rng.uniform(size=(n, 2))
    k = SquaredExponential(0.3)
    fsp = FiniteSetPosterior(k.gram(P), lam)
    fsp_sums = FiniteSetPosterior(k.gram(P), lam)
    sums = np.zeros(n)
    hist, ys = [], []
    for _ in range(steps):
        i = int(rng.integers(n))
        y = float(rng.normal())
        fsp.observe(i, y)
        fsp_sums.observe(i)
        sums[i] += y
        hist.append(P[i])
        ys.append(y)
    mu, var = StandardPosterior(k, lam, hist, ys).mean_var(P)
    np.testing.assert_allclose(fsp.variance(), var, rtol=1e-6, atol=1e-10)
    np.testing.assert_allclose(fsp.mu, mu, rtol=1e-6, atol=1e-9)
    np.testing.assert_allclose(fsp_sums.mean_from_sums(sums), mu, rtol=1e-6, atol=1e-9)
