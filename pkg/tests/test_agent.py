import numpy as np
import pytest
from scipy import integrate

from dawnlab.agent import (
    CriticEnsemble,
    ResidualPolicy,
    c51_vmin,
    combine,
    ema_update,
    q_value,
    quantile_fractions,
    sample_residual,
)
from dawnlab.errors import ConfigError


def test_combine_examples():
    np.testing.assert_array_equal(combine([0.3, -0.2], [0.9, 0.9], 0.0), [0.3, -0.2])
    assert combine([0.5], [1.0], 0.1)[0] == pytest.approx(0.6)
    np.testing.assert_array_equal(combine([0.95], [1.0], 0.1), [1.0])
    with pytest.raises(ValueError):
        combine([0.1, 0.2], [0.1], 0.1)


def _policy(act_dim=7, obs_dim=14, seed=0):
    return ResidualPolicy.create(obs_dim, act_dim, (64, 64), rng=np.random.default_rng(seed))


def test_fresh_policy_is_near_zero():
    pol = _policy()
    rng = np.random.default_rng(1)
    obs = rng.normal(size=(100_000, 14))
    a, _ = sample_residual(pol, obs, rng)
    assert np.mean(np.abs(a).max(axis=1) < 0.05) > 0.999


def test_initialization_locality():
    pol = _policy()
    obs = np.random.default_rng(2).normal(size=(1000, 14))
    a, _ = pol.sample(obs, np.random.default_rng(3))
    for lam in (0.05, 0.1, 0.2):
        assert np.abs(lam * a).max() <= 0.01


def test_entropy_magnitude_at_init_exceeds_30():
    pol = _policy()
    obs = np.random.default_rng(4).normal(size=(1000, 14))
    _, logp = pol.sample(obs, np.random.default_rng(5))
    assert np.abs(logp).mean() > 30


def test_zero_std_limit_is_deterministic():
    pol = ResidualPolicy.create(3, 2, (8,), rng=np.random.default_rng(0), init_log_std=-10.0)
    obs = np.ones((4, 3))
    a1, _ = pol.sample(obs, np.random.default_rng(1))
    a2, _ = pol.sample(obs, np.random.default_rng(2))
    np.testing.assert_allclose(a1, a2, atol=1e-4)
    np.testing.assert_allclose(a1, pol.mean_action(obs), atol=1e-4)


def _one_dim_policy(mean, log_std):
    pol = ResidualPolicy.create(2, 1, (4,), rng=np.random.default_rng(0))
    pol.params["out.W"][:] = 0.0
    pol.params["out.b"][..., 0] = mean
    pol.params["out.b"][..., 1] = log_std
    return pol


@pytest.mark.parametrize("mean,log_std", [(0.0, -0.5), (0.7, -1.2), (-0.4, 0.3)])
def test_log_prob_integrates_to_one(mean, log_std):
    pol = _one_dim_policy(mean, log_std)
    obs = np.zeros((1, 2))
    dens = lambda a: float(np.exp(pol.log_prob(obs, [[a]])[0]))
    total, _ = integrate.quad(dens, -1, 1, limit=200, points=[np.tanh(mean)])
    # the 1e-6 stabiliser in the squash correction shaves a sliver of mass off
    assert total == pytest.approx(1.0, abs=2e-3)
    # the sampling path reports the same density as the closed form
    rng = np.random.default_rng(0)
    a, lp = pol.sample(np.zeros((50, 2)), rng)
    np.testing.assert_allclose(lp, pol.log_prob(np.zeros((50, 2)), a), rtol=1e-6, atol=1e-6)


def test_log_prob_mean_matches_quadrature():
    pol = _one_dim_policy(0.5, -0.7)
    obs = np.zeros((1, 2))
    m, _ = integrate.quad(lambda a: a * float(np.exp(pol.log_prob(obs, [[a]])[0])), -1, 1, limit=200)
    a, _ = pol.sample(np.zeros((200_000, 2)), np.random.default_rng(9))
    assert a.mean() == pytest.approx(m, abs=5e-3)


def _critic(kind, **kw):
    return CriticEnsemble.create(3, 2, (8,), head_kind=kind, rng=np.random.default_rng(0), **kw)


def test_head_counts():
    assert _critic("scalar").n_heads == 2
    assert _critic("c51").n_heads == 2
    assert _critic("quantile").n_heads == 2
    assert _critic("tqc").n_heads == 5
    with pytest.raises(ConfigError):
        _critic("c51", v_min=0.0, v_max=0.0)
    with pytest.raises(ConfigError):
        _critic("tqc", drop_per_head=25)


def test_categorical_point_mass_expectation():
    c = _critic("c51", n_atoms=11, v_min=-10.0, v_max=0.0)
    c.params["out.W"][:] = 0.0
    c.params["out.b"][:] = 0.0
    c.params["out.b"][..., 5] = 1e3
    np.testing.assert_allclose(q_value(c, np.zeros((2, 3)), np.zeros((2, 2)), reduce="none"), -5.0)


def test_quantiles_all_equal():
    c = _critic("quantile")
    c.params["out.W"][:] = 0.0
    c.params["out.b"][:] = -2.5
    np.testing.assert_allclose(c.q_value(np.ones((3, 3)), np.ones((3, 2))), -2.5)


@pytest.mark.parametrize("kind", ["c51", "quantile", "tqc"])
def test_expectation_matches_bruteforce(kind):
    c = _critic(kind)
    rng = np.random.default_rng(1)
    obs, act = rng.normal(size=(5, 3)), rng.uniform(-1, 1, (5, 2))
    dist = c.distribution(obs, act)
    got = c.q_value(obs, act, reduce="none")
    for k in range(c.n_heads):
        for b in range(5):
            if kind == "c51":
                ref = sum(p * z for p, z in zip(dist.probs[k, b], c.support))
                assert abs(sum(dist.probs[k, b]) - 1.0) < 1e-6
            else:
                ref = sum(dist.quantiles[k, b]) / len(dist.quantiles[k, b])
            assert abs(got[k, b] - ref) < 1e-10


def test_quantile_fractions_and_support():
    taus = quantile_fractions(25)
    assert np.all(np.diff(taus) > 0) and 0 < taus[0] and taus[-1] < 1
    assert taus[0] == pytest.approx(1 / 50)
    c = _critic("c51")
    np.testing.assert_allclose(np.diff(c.support), np.diff(c.support)[0])
    assert c51_vmin(0.97, 200) == -35.0


def test_ema_tau_one_copies_online():
    c = _critic("scalar")
    c.params = {k: v + 1.0 for k, v in c.params.items()}
    ema_update(c, 1.0)
    for k in c.params:
        np.testing.assert_array_equal(c.target_params[k], c.params[k])
    with pytest.raises(ValueError):
        ema_update(c, 0.0)


def test_ema_gap_halves_in_about_69_steps():
    c = _critic("scalar")
    c.params = {k: v + 1.0 for k, v in c.params.items()}
    gap0 = {k: c.params[k] - c.target_params[k] for k in c.params}
    for _ in range(69):
        ema_update(c, 0.01)
    for k in c.params:
        ratio = (c.params[k] - c.target_params[k]) / gap0[k]
        np.testing.assert_allclose(ratio, 0.99**69, rtol=1e-9)
        assert abs(ratio.mean() - 0.5) < 0.01
        assert c.target_params[k].shape == c.params[k].shape
        assert np.all(np.isfinite(c.target_params[k]))


def test_online_and_target_not_aliased():
    c = _critic("scalar")
    c.params["out.b"] += 1.0
    assert not np.array_equal(c.params["out.b"], c.target_params["out.b"])
