import numpy as np
import pytest
from scipy import integrate, stats

from gpi import autodiff as ad
from gpi.policies import (LOG_STD_FLOOR, GaussianPolicy, TabularPolicy, ValueFunction, gauss_kl_per_state,
                          kl_diag_gauss, load_checkpoint, save_checkpoint, tabular_exact)
from conftest import central_diff, rel_err


def zero_mean_policy(obs_dim=2, act_dim=1, log_std=0.0):
    pi = GaussianPolicy(obs_dim, act_dim, hidden=(8,), seed=0, init_log_std=log_std)
    flat = pi.flat.copy()
    n_log_std = act_dim
    flat[:-n_log_std] = 0.0
    return pi.with_flat(flat)


def test_default_architecture_and_std():
    pi = GaussianPolicy(3, 1)
    assert pi.hidden == (64, 64)
    np.testing.assert_array_equal(pi.log_std, [0.0])
    assert pi.num_params == 3 * 64 + 64 + 64 * 64 + 64 + 64 + 1 + 1


def test_standard_normal_at_mode():
    pi = zero_mean_policy()
    lp = pi.log_prob(np.zeros(2), np.zeros(1))
    assert lp[0] == pytest.approx(-0.5 * np.log(2 * np.pi), abs=1e-15)
    assert lp[0] == pytest.approx(-0.9189, abs=1e-4)


def test_log_prob_matches_scipy(rng):
    pi = GaussianPolicy(3, 2, hidden=(5, 5), seed=1, init_log_std=-0.3)
    s = rng.normal(size=(10, 3))
    a = rng.normal(size=(10, 2))
    mu = pi.mean(s)
    ref = stats.norm.logpdf(a, mu, np.exp(pi.log_std)).sum(axis=1)
    np.testing.assert_allclose(pi.log_prob(s, a), ref, rtol=0, atol=1e-12)
    assert np.all(np.exp(pi.log_prob(s, a)) > 0)


def test_log_prob_gradient_matches_finite_differences(rng):
    pi = GaussianPolicy(3, 2, hidden=(6, 5), seed=2, init_log_std=-0.2)
    s = rng.normal(size=(7, 3))
    a = rng.normal(size=(7, 2))
    coef = rng.normal(size=7)
    g = pi.grad_log_prob(s, a, coef)
    numeric = central_diff(lambda f: float(coef @ pi.with_flat(f).log_prob(s, a)), pi.flat)
    assert rel_err(g, numeric) <= 1e-4


def test_value_gradient_matches_finite_differences(rng):
    vf = ValueFunction(4, hidden=(6, 6), seed=3)
    s = rng.normal(size=(9, 4))
    y = rng.normal(size=9)

    def loss(*leaves):
        return ad.square(vf.predict_var(list(leaves), s).sum(axis=1) - y).mean()

    _, grads = ad.value_and_grad(loss, vf.arrays())
    numeric = central_diff(lambda f: float(np.mean((vf.with_flat(f).predict(s) - y) ** 2)), vf.flat)
    assert rel_err(vf.flatten(grads), numeric) <= 1e-4


def test_flat_round_trip_is_bitwise(rng):
    pi = GaussianPolicy(3, 1, seed=4)
    flat = rng.normal(size=pi.num_params)
    np.testing.assert_array_equal(pi.with_flat(flat).flat, flat)
    np.testing.assert_array_equal(pi.flatten(pi.with_flat(flat).arrays()), flat)
    with pytest.raises(ValueError):
        pi.with_flat(flat[:-1])


def test_snapshots_are_read_only():
    pi = GaussianPolicy(3, 1)
    with pytest.raises(ValueError):
        pi.flat[0] = 1.0


def test_sample_degenerate_noise_and_determinism(rng):
    pi = GaussianPolicy(3, 1, seed=5, init_log_std=np.log(1e-9))
    s = rng.normal(size=3)
    a = pi.sample(s, np.random.default_rng(0))
    np.testing.assert_allclose(a, pi.mean(s)[0], atol=1e-6)
    noisy = GaussianPolicy(3, 1, seed=5)
    np.testing.assert_array_equal(noisy.sample(s, np.random.default_rng(7)), noisy.sample(s, np.random.default_rng(7)))


def test_sample_variance_monte_carlo():
    pi = zero_mean_policy(obs_dim=1)
    g = np.random.default_rng(11)
    draws = np.array([pi.sample(np.zeros(1), g)[0] for _ in range(100_000)])
    assert abs(draws.var(ddof=1) - 1.0) < 0.05


def test_log_std_floor():
    pi = GaussianPolicy(2, 1, hidden=(4,), init_log_std=-50.0)
    assert pi.log_std[0] == LOG_STD_FLOOR
    assert np.all(np.isfinite(pi.log_prob(np.zeros(2), np.zeros(1))))


def test_kl_closed_forms(rng):
    p = zero_mean_policy(obs_dim=1)
    assert kl_diag_gauss(p, p, np.zeros((3, 1))) == 0.0
    flat = p.flat.copy()
    flat[-2] = 1.0  # output bias shifts the mean to 1
    q = p.with_flat(flat)
    np.testing.assert_allclose(q.mean(np.zeros(1)), [[1.0]])
    assert kl_diag_gauss(p, q, np.zeros((2, 1))) == pytest.approx(0.5, abs=1e-15)


def test_kl_matches_quadrature(rng):
    p = GaussianPolicy(2, 1, hidden=(4,), seed=6, init_log_std=0.2)
    q = GaussianPolicy(2, 1, hidden=(4,), seed=7, init_log_std=-0.4)
    s = rng.normal(size=2)
    mp, sp = p.mean(s)[0, 0], np.exp(p.log_std[0])
    mq, sq = q.mean(s)[0, 0], np.exp(q.log_std[0])

    def integrand(x):
        return stats.norm.pdf(x, mp, sp) * (stats.norm.logpdf(x, mp, sp) - stats.norm.logpdf(x, mq, sq))

    ref, _ = integrate.quad(integrand, -30, 30, limit=200)
    assert abs(gauss_kl_per_state(p, q, s)[0] - ref) <= 1e-3
    assert gauss_kl_per_state(p, q, s)[0] >= 0


def test_fisher_vector_product_matches_kl_curvature(rng):
    pi = GaussianPolicy(2, 2, hidden=(4,), seed=8, init_log_std=-0.1)
    states = rng.normal(size=(6, 2))
    weights = rng.dirichlet(np.ones(6))
    v = rng.normal(size=pi.num_params)
    h = 1e-3

    def kl(direction):
        return kl_diag_gauss(pi, pi.with_flat(pi.flat + h * direction), states, weights)

    def quad(d):
        return (kl(d) + kl(-d)) / h ** 2

    numeric = np.empty(pi.num_params)
    for i in range(pi.num_params):
        e = np.zeros(pi.num_params)
        e[i] = 1.0
        numeric[i] = 0.25 * (quad(e + v) - quad(e - v))
    assert rel_err(pi.fisher_vector_product(states, weights, v), numeric) <= 1e-3


def test_tabular_softmax():
    np.testing.assert_allclose(tabular_exact(TabularPolicy(np.zeros((3, 4)))), 0.25)
    logits = np.random.default_rng(0).normal(size=(5, 3))
    p = TabularPolicy(logits).probs
    np.testing.assert_allclose(TabularPolicy(logits + np.arange(5)[:, None]).probs, p, atol=1e-15)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)


def test_checkpoint_round_trip(tmp_path, rng):
    pi = GaussianPolicy(3, 2, hidden=(5, 4), seed=9)
    vf = ValueFunction(3, hidden=(5,), seed=9)
    save_checkpoint(tmp_path / "p.ckpt", pi)
    save_checkpoint(tmp_path / "v.ckpt", vf)
    p2, v2 = load_checkpoint(tmp_path / "p.ckpt"), load_checkpoint(tmp_path / "v.ckpt")
    assert isinstance(p2, GaussianPolicy) and isinstance(v2, ValueFunction)
    np.testing.assert_array_equal(p2.flat, pi.flat)
    np.testing.assert_array_equal(v2.flat, vf.flat)
    assert p2.hidden == (5, 4)
    s = rng.normal(size=(4, 3))
    np.testing.assert_array_equal(v2.predict(s), vf.predict(s))
    (tmp_path / "bad").write_bytes(b"nope")
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "bad")
