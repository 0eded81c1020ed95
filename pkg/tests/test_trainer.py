import numpy as np
import pytest

from dawnlab.agent import CriticEnsemble, ResidualPolicy
from dawnlab.basepolicy import make_base_policy
from dawnlab.buffer import Batch, WarmupStrategy
from dawnlab.config import RunConfig
from dawnlab.diffcore import quantile_huber
from dawnlab.errors import ConfigError, NumericalError
from dawnlab.trainer import (
    AlphaState,
    Learner,
    actor_update,
    alpha_gradient,
    alpha_update,
    critic_update_c51,
    critic_update_quantile,
    critic_update_scalar,
    critic_update_tqc,
    hard_target,
    next_action,
    progressive_gate,
    project_c51,
    quantile_targets,
    run_dawn,
    soft_target,
    truncate_quantiles,
)
from oracles import c51_project_bruteforce, central_fd, grad_close, quantile_loss_double_loop

GAMMA, LAM = 0.97, 0.1
BASE = make_base_policy("point-insert-2d")


class Capture:
    """Optimizer stand-in that records gradients and leaves parameters alone."""

    def step(self, params, grads):
        self.grads = grads
        return params


def _batch(n=6, seed=0, done=None):
    rng = np.random.default_rng(seed)
    obs = rng.normal(0, 0.3, (n, 6))
    a_base = BASE(obs)
    a_res = rng.uniform(-1, 1, (n, 2))
    done = rng.random(n) < 0.3 if done is None else np.full(n, done)
    return Batch(obs, a_base, a_res, np.clip(a_base + LAM * a_res, -1, 1), -np.ones(n),
                 rng.normal(0, 0.3, (n, 6)), done, np.zeros(n, dtype=int), np.arange(n))


def _policy(seed=0, hidden=(8,)):
    pol = ResidualPolicy.create(6, 2, hidden, rng=np.random.default_rng(seed), init_log_std=-1.0)
    pol.params["out.W"] = np.random.default_rng(seed + 1).normal(0, 0.3, pol.params["out.W"].shape)
    return pol


def _critic(kind="scalar", seed=0, hidden=(8,), **kw):
    return CriticEnsemble.create(6, 2, hidden, "layer-norm", kind, np.random.default_rng(seed), **kw)


def _rng():
    return np.random.default_rng(42)


# ---------------------------------------------------------------- targets
def test_terminal_target_is_reward():
    b = _batch(done=True)
    y = soft_target(b, _critic(), _policy(), 0.5, GAMMA, BASE, LAM, _rng())
    np.testing.assert_array_equal(y, b.reward)
    np.testing.assert_array_equal(hard_target(b, _critic(), _policy(), GAMMA, BASE, LAM, _rng()), b.reward)


def test_alpha_zero_soft_equals_hard():
    b, c, p = _batch(), _critic(), _policy()
    soft = soft_target(b, c, p, 0.0, GAMMA, BASE, LAM, _rng())
    hard = hard_target(b, c, p, GAMMA, BASE, LAM, _rng())
    assert np.abs(soft - hard).max() <= 1e-12


def test_constant_critic_target_hand_arithmetic():
    c = _critic()
    for name in ("params", "target_params"):
        ps = getattr(c, name)
        ps["out.W"][:] = 0.0
        ps["out.b"][0] = -3.0
        ps["out.b"][1] = -5.0
    b = _batch(n=2, done=False)
    b.done[1] = True
    b.reward[:] = [-1.0, 0.0]
    p, alpha = _policy(), 0.2
    _, logp = next_action(b, p, BASE, LAM, _rng())
    y = soft_target(b, c, p, alpha, GAMMA, BASE, LAM, _rng())
    assert y[0] == pytest.approx(-1.0 + 0.97 * (-5.0 - 0.2 * logp[0]), abs=1e-12)
    assert y[1] == 0.0


def test_twin_min_never_exceeds_either_head():
    b, c, p = _batch(n=32), _critic(seed=3), _policy()
    a_next, logp = next_action(b, p, BASE, LAM, _rng())
    heads = c.q_value(b.next_obs, a_next, reduce="none", target=True)
    y = hard_target(b, c, p, GAMMA, BASE, LAM, _rng())
    live = ~b.done
    q_term = (y[live] - b.reward[live]) / GAMMA
    assert np.all(q_term <= heads[0, live] + 1e-12)
    assert np.all(q_term <= heads[1, live] + 1e-12)


# ---------------------------------------------------------------- scalar critic
def test_scalar_loss_zero_when_q_equals_target():
    b, c = _batch(), _critic()
    q = c.q_value(b.obs, b.a_exec, reduce="none")
    c.params = {k: v.copy() for k, v in c.params.items()}
    c.params["l0.W"][1] = c.params["l0.W"][0]
    c.params["l0.b"][1] = c.params["l0.b"][0]
    for k in ("l0.gamma", "l0.beta", "out.W", "out.b"):
        c.params[k][1] = c.params[k][0]
    q = c.q_value(b.obs, b.a_exec, reduce="none")
    assert critic_update_scalar(b, c, q[0]) == pytest.approx(0.0, abs=1e-20)


def test_scalar_loss_unit_example():
    c = _critic()
    c.params["out.W"][:] = 0.0
    c.params["out.b"][:] = 1.0
    b = _batch(n=1)
    assert critic_update_scalar(b, c, np.zeros(1)) == pytest.approx(1.0)


def test_scalar_critic_gradient_matches_fd():
    b, c = _batch(), _critic(seed=5)
    y = np.random.default_rng(0).normal(-3, 1, len(b))
    cap = Capture()
    critic_update_scalar(b, c, y, cap)
    base = {k: v.copy() for k, v in c.params.items()}
    for name in ("l0.W", "l0.gamma", "out.b"):
        def f(v, name=name):
            c.params = dict(base)
            c.params[name] = v
            return critic_update_scalar(b, c, y) * c.n_heads
        assert grad_close(cap.grads[name], central_fd(f, base[name]))
    c.params = base


def test_nan_loss_aborts():
    b, c = _batch(), _critic()
    with pytest.raises(NumericalError):
        critic_update_scalar(b, c, np.full(len(b), np.nan), Capture())


# ---------------------------------------------------------------- C51
def test_c51_projection_examples():
    support = np.linspace(-10, 0, 11)
    probs = np.zeros((1, 11))
    probs[0, 7] = 1.0  # z = -3
    # -1 + 1.0 * (-3) = -4 lands on an atom
    out = project_c51(probs, support, np.array([-1.0]), np.array([False]), 1.0, np.zeros(1))
    np.testing.assert_array_equal(out[0], np.eye(11)[6])
    # -1 + 1.0 * (-3 + 0.5) = -3.5 splits between -4 and -3
    out = project_c51(probs, support, np.array([-1.0]), np.array([False]), 1.0, np.array([-0.5]))
    assert out[0, 6] == pytest.approx(0.5) and out[0, 7] == pytest.approx(0.5)


def test_c51_projection_matches_bruteforce_and_conserves_mass():
    rng = np.random.default_rng(0)
    support = np.linspace(-35, 0, 51)
    for _ in range(100):
        n = 4
        p = rng.dirichlet(np.ones(51), n)
        r = rng.choice([-1.0, 0.0], n)
        d = rng.random(n) < 0.3
        shift = rng.normal(0, 3, n)
        got = project_c51(p, support, r, d, GAMMA, shift)
        ref = c51_project_bruteforce(p, support, r, d, GAMMA, shift)
        assert np.array_equal(got, ref)
        assert np.abs(got.sum(-1) - 1.0).max() <= 1e-6
        assert np.all(got >= 0)


def test_c51_update_runs_and_rejects_bad_support():
    with pytest.raises(ConfigError):
        _critic("c51", v_min=0.0, v_max=-1.0)
    c = _critic("c51", v_min=-35.0)
    cap = Capture()
    loss = critic_update_c51(_batch(), c, _policy(), 0.01, GAMMA, BASE, LAM, _rng(), opt=cap)
    assert np.isfinite(loss) and loss > 0
    assert set(cap.grads) == set(c.params)


# ---------------------------------------------------------------- QR / TQC
def test_quantile_huber_hand_value():
    loss = quantile_huber(np.array([[0.0]]), np.array([[2.0]]), np.array([0.5]), 1.0)
    assert float(loss.data) == pytest.approx(0.75)
    zero = quantile_huber(np.array([[1.0, 2.0]]), np.array([[1.0, 2.0]]) * 0 + np.array([[1.0, 1.0]]),
                          np.array([0.25, 0.75]), 1.0)
    assert float(zero.data) > 0
    same = quantile_huber(np.full((1, 3), 0.4), np.full((1, 3), 0.4), np.array([1, 3, 5]) / 6, 1.0)
    assert float(same.data) == 0.0


def test_quantile_loss_matches_double_loop():
    rng = np.random.default_rng(3)
    for n in (2, 5):
        taus = (2 * np.arange(1, n + 1) - 1) / (2 * n)
        theta = rng.normal(0, 2, n)
        y = rng.normal(0, 2, n + 1)
        got = float(quantile_huber(theta[None], y[None], taus, 1.0).data)
        assert abs(got - quantile_loss_double_loop(theta, y, taus, 1.0)) <= 1e-10


def test_quantile_huber_gradient_matches_fd():
    rng = np.random.default_rng(4)
    taus = (2 * np.arange(1, 6) - 1) / 10
    th0 = rng.normal(0, 2, (3, 5))
    y = rng.normal(0, 2, (3, 7))
    from dawnlab.diffcore import Tensor

    t = Tensor(th0, requires_grad=True)
    quantile_huber(t, y, taus, 1.0).backward()
    fd = central_fd(lambda v: float(quantile_huber(v, y, taus, 1.0).data), th0)
    assert grad_close(t.grad, fd)


def test_quantile_targets_formula():
    b = _batch(n=3, done=False)
    b.done[2] = True
    theta = np.arange(6.0).reshape(3, 2)
    logp = np.array([1.0, 2.0, 3.0])
    y = quantile_targets(b, theta, GAMMA, 0.1, logp)
    np.testing.assert_allclose(y[0], -1 + GAMMA * (theta[0] - 0.1))
    np.testing.assert_allclose(y[2], -1.0)


def _sort_and_drop(theta, d, pooled=True):
    k, b, n = theta.shape
    out = []
    for j in range(b):
        if pooled:
            vals = sorted(theta[i, j, m] for i in range(k) for m in range(n))
            out.append(vals[: k * (n - d)])
        else:
            vals = []
            for i in range(k):
                vals += sorted(theta[i, j])[: n - d]
            out.append(sorted(vals))
    return np.array(out)


def test_tqc_truncation_matches_sort_and_drop_oracle():
    theta = np.array([[[3.0, -1.0, 2.0]], [[0.5, 4.0, -2.0]]])  # K=2, B=1, N=3
    got = truncate_quantiles(theta, 1)
    np.testing.assert_array_equal(got, [[-2.0, -1.0, 0.5, 2.0]])
    np.testing.assert_array_equal(got, _sort_and_drop(theta, 1))
    rng = np.random.default_rng(0)
    big = rng.normal(size=(5, 4, 25))
    np.testing.assert_array_equal(truncate_quantiles(big, 2), _sort_and_drop(big, 2))
    np.testing.assert_array_equal(truncate_quantiles(big, 2, "per-head"), _sort_and_drop(big, 2, pooled=False))
    np.testing.assert_array_equal(truncate_quantiles(big, 0), np.sort(big.transpose(1, 0, 2).reshape(4, -1)))
    with pytest.raises(ConfigError):
        truncate_quantiles(big, 25)


def test_tqc_constant_quantiles_give_constant_targets():
    c = _critic("tqc")
    c.target_params["out.W"][:] = 0.0
    c.target_params["out.b"][:] = -4.0
    b = _batch(n=3, done=False)
    theta = c.raw(b.next_obs, b.a_exec, target=True).data
    kept = truncate_quantiles(theta, 2)
    logp = np.array([0.5, 1.0, -1.0])
    y = quantile_targets(b, kept, GAMMA, 0.01, logp)
    assert kept.shape == (3, 5 * 23)
    for j in range(3):
        np.testing.assert_allclose(y[j], -1 + GAMMA * (-4.0 - 0.01 * logp[j]))


@pytest.mark.parametrize("update,kind", [(critic_update_quantile, "quantile"), (critic_update_tqc, "tqc")])
def test_quantile_updates_run(update, kind):
    c = _critic(kind)
    cap = Capture()
    loss = update(_batch(), c, _policy(), 0.01, GAMMA, BASE, LAM, _rng(), opt=cap)
    assert np.isfinite(loss)
    assert all(np.all(np.isfinite(g)) for g in cap.grads.values())


# ---------------------------------------------------------------- actor / alpha
def _entropy_only_grads(b, pol, alpha, noise):
    from dawnlab.diffcore import grads_of, leaves

    nodes = leaves(pol.params)
    _, logp = pol.rsample(b.obs, noise, params=nodes)
    (logp * alpha).mean().backward()
    return grads_of(nodes)


def test_actor_with_action_independent_critic_is_entropy_only():
    b, pol = _batch(), _policy()
    c = _critic()
    c.params["out.W"][:] = 0.0
    noise = np.random.default_rng(0).standard_normal((len(b), 2))
    cap = Capture()
    actor_update(b, pol, c, 0.3, LAM, noise, cap)
    ref = _entropy_only_grads(b, pol, 0.3, noise)
    for k in ref:
        np.testing.assert_allclose(cap.grads[k], ref[k], atol=1e-14)


def test_zero_lambda_removes_q_gradient():
    b, pol, c = _batch(), _policy(), _critic(seed=2)
    noise = np.random.default_rng(1).standard_normal((len(b), 2))
    cap = Capture()
    actor_update(b, pol, c, 0.3, 0.0, noise, cap)
    ref = _entropy_only_grads(b, pol, 0.3, noise)
    for k in ref:
        np.testing.assert_allclose(cap.grads[k], ref[k], atol=1e-14)


def test_actor_gradient_matches_fd():
    b, pol, c = _batch(), _policy(seed=3), _critic(seed=4)
    noise = np.random.default_rng(2).standard_normal((len(b), 2))
    cap = Capture()
    actor_update(b, pol, c, 0.05, LAM, noise, cap)
    base = {k: v.copy() for k, v in pol.params.items()}
    for name in base:
        def f(v, name=name):
            pol.params = dict(base)
            pol.params[name] = v
            return actor_update(b, pol, c, 0.05, LAM, noise)[0]
        assert grad_close(cap.grads[name], central_fd(f, base[name])), name
    pol.params = base


def test_alpha_stationary_at_target_entropy():
    assert alpha_gradient(np.log(0.01), np.full(10, 2.0), -2.0) == 0.0
    st = AlphaState(np.log(0.01))
    alpha_update(st, np.full(10, 2.0), -2.0)
    assert st.alpha == pytest.approx(0.01)


def test_alpha_rises_for_overdeterministic_policy():
    st = AlphaState(np.log(0.01))
    for _ in range(50):
        alpha_update(st, np.full(16, 30.0), -2.0)
    assert st.alpha > 0.01
    low = AlphaState(np.log(0.01))
    for _ in range(50):
        alpha_update(low, np.full(16, -30.0), -2.0)
    assert low.alpha < 0.01


def test_fixed_alpha_never_moves():
    st = AlphaState(np.log(0.01), mode="fixed")
    start = st.alpha
    for _ in range(10_000):
        alpha_update(st, np.full(4, 30.0), -2.0)
    assert st.alpha == start


def test_progressive_gate():
    rng = np.random.default_rng(0)
    assert not any(progressive_gate(0, 100, rng) for _ in range(1000))
    assert all(progressive_gate(t, 100, rng) for t in (100, 101, 10_000) for _ in range(300))
    rate = np.mean([progressive_gate(50, 100, rng) for _ in range(100_000)])
    assert abs(rate - 0.5) < 1.96 * np.sqrt(0.25 / 100_000) * 1.5
    with pytest.raises(ValueError):
        progressive_gate(1, 0, rng)


# ---------------------------------------------------------------- run loop
def _tiny(**kw):
    base = dict(total_steps=256, eval_every=128, eval_episodes=4, batch=32, hidden=(16, 16),
                warmup=WarmupStrategy(budget=300), anchor_episodes=4, probe_size=64, checkpoint_every=128)
    base.update(kw)
    return RunConfig(**base)


def test_zero_steps_collects_only_warmup():
    r = run_dawn(_tiny(total_steps=0))
    assert r.buffer_size == 300 and r.status == "ok"
    assert [rec.step for rec in r.records] == [0]


def test_run_is_deterministic():
    a = list(run_dawn(_tiny()).metric_rows())
    b = list(run_dawn(_tiny()).metric_rows())
    assert a == b and len(a) > 10


def test_records_and_checkpoints_land_on_schedule_off_chunk_grid(monkeypatch):
    # 100 and 150 are not multiples of the 64-step chunk
    calls = {"n": 0}
    orig = Learner.update

    def counting(self, batch, rng):
        calls["n"] += 1
        return orig(self, batch, rng)

    monkeypatch.setattr(Learner, "update", counting)
    r = run_dawn(_tiny(total_steps=300, eval_every=100, checkpoint_every=150))
    assert [rec.step for rec in r.records] == [0, 100, 200, 300]
    assert [s for s, _ in r.checkpoints] == [150, 300]
    assert calls["n"] == 300 // 4  # utd 0.25, fractions carried across short chunks


def test_soft_auto_warmup_alpha_increases():
    r = run_dawn(_tiny(total_steps=0, explicit_warmup="soft-auto", explicit_warmup_steps=500))
    alphas = [a for _, a in r.alpha_trace]
    assert len(alphas) == 6 and np.all(np.diff(alphas) > 0)


def test_numerical_failure_aborts_with_last_good(monkeypatch):
    calls = {"n": 0}
    orig = Learner.update

    def flaky(self, batch, rng):
        calls["n"] += 1
        if calls["n"] > 40:
            raise NumericalError("boom")
        return orig(self, batch, rng)

    monkeypatch.setattr(Learner, "update", flaky)
    r = run_dawn(_tiny(total_steps=512), keep_state=True)
    assert r.status == "aborted" and "boom" in r.error
    assert r.records[-1].step == 128
    assert all(np.all(np.isfinite(v)) for v in r.learner.policy.params.values())
