import numpy as np
import pytest
from scipy import stats

from dawnlab.basepolicy import BasePolicy, base_action, make_base_policy, rollout_success
from dawnlab.envs import make_env
from dawnlab.errors import ConfigError


def test_zero_goal_error_gives_zero_action():
    p = make_base_policy("reach-nd")
    obs = np.concatenate([np.full(7, 0.2), np.zeros(7)])
    np.testing.assert_array_equal(base_action(p, obs), 0.0)


def test_proportional_law_saturates():
    p = BasePolicy("proportional-biased", gain=1.0, target_slice=(4, 6))
    obs = np.array([0, 0, 0, 0, 0.1, 0.0])
    np.testing.assert_allclose(base_action(p, obs), [1.0, 0.0])


def test_unknown_kind_and_id():
    with pytest.raises(ConfigError):
        BasePolicy("pid", gain=1.0, target_slice=(0, 2))
    with pytest.raises(ConfigError):
        make_base_policy("nope")


@pytest.mark.parametrize("env_id", ["point-insert-2d", "reach-nd", "drift-push"])
def test_calibrated_success_band(env_id):
    env = make_env(env_id)
    rate = rollout_success(env, make_base_policy(env_id, env), range(200)).mean()
    assert 0.4 <= rate <= 0.7


def test_outputs_bounded_and_stateless():
    p = make_base_policy("drift-push")
    obs = np.random.default_rng(0).normal(0, 5, (500, 6))
    before = obs.copy()
    a1, a2 = p(obs), p(obs)
    assert np.all(np.abs(a1) <= 1.0)
    np.testing.assert_array_equal(a1, a2)
    np.testing.assert_array_equal(obs, before)


def test_success_is_stationary():
    env = make_env("point-insert-2d")
    p = make_base_policy("point-insert-2d")
    first = rollout_success(env, p, range(0, 300))
    second = rollout_success(env, p, range(300, 600))
    # two-proportion test: no detectable drift between the two samples
    table = [[first.sum(), len(first) - first.sum()], [second.sum(), len(second) - second.sum()]]
    assert stats.chi2_contingency(table).pvalue > 0.05
