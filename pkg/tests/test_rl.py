from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtreason.reward import RewardBreakdown
from mtreason.rl import (
    EnumerationTooLarge,
    SyntheticEnv,
    ToyPolicy,
    TrainConfig,
    TrainingDiverged,
    analytic_gradient,
    build_reward_table,
    compute_advantages,
    exact_expected_reward,
    gradient_check,
    numeric_gradient,
    sample_rollouts,
    train,
    update,
)
from mtreason.rl.policy import softmax_kl, softmax_kl_gradient
from mtreason.rl.reinforce import NonFiniteGradient, Rollout, RolloutBatch, policy_gradient


def batch_with_totals(groups, prompts=None):
    prompts = prompts or tuple((0,) for _ in groups)
    gs = tuple(
        tuple(Rollout(i, j, (0,), True, "", 0.0, RewardBreakdown(1, 0.0, 0.0, float(t), "m")) for j, t in enumerate(g))
        for i, g in enumerate(groups)
    )
    return RolloutBatch(tuple(prompts), gs)


# --- environment ----------------------------------------------------------

def test_env_lexicon_bijection():
    env = SyntheticEnv.lexicon_env(16, seed=3)
    assert sorted(env.lexicon) == list(range(16))
    with pytest.raises(ValueError):
        SyntheticEnv(3, (0, 0, 1))
    with pytest.raises(ValueError):
        SyntheticEnv(3, (0, 1, 2), (0, 2))


def test_env_enumeration_weights():
    env = SyntheticEnv(3, (2, 0, 1), (1, 2))
    prompts = list(env.all_prompts())
    assert len(prompts) == 3 + 9
    assert sum(w for _, w in prompts) == pytest.approx(1.0)
    assert env.enumeration_size() == 2 * (3**2 + 3**4)


# --- sampling -------------------------------------------------------------

def test_sampling_dominant_row():
    env = SyntheticEnv(4, (1, 2, 3, 0), (1, 1))
    theta = np.zeros((4, 4))
    theta[2, 3] = 20.0
    batch = sample_rollouts(ToyPolicy(theta, 20.0), env, [(2,)], n=10_000, seed=0)
    freq = np.mean([r.tokens == (3,) for r in batch.rollouts()])
    assert freq > 0.999


def test_sampling_format_saturation():
    env = SyntheticEnv.lexicon_env(5, (2, 3))
    batch = sample_rollouts(ToyPolicy.uniform(5, 20.0), env, [(0, 1), (2, 3, 4)], n=16, seed=1)
    assert all(r.formatted and r.reward.s_format == 1 for r in batch.rollouts())


def test_sampling_deterministic_and_order_free():
    env = SyntheticEnv.lexicon_env(6, (2, 4))
    pol = ToyPolicy.random(6, np.random.default_rng(0))
    a = sample_rollouts(pol, env, [(0, 1), (3, 4, 5)], 8, seed=11)
    assert a == sample_rollouts(pol, env, [(0, 1), (3, 4, 5)], 8, seed=11)
    assert a != sample_rollouts(pol, env, [(0, 1), (3, 4, 5)], 8, seed=12)
    # a group depends only on (seed, prompt index, rollout index)
    assert sample_rollouts(pol, env, [(0, 1)], 8, seed=11).groups[0] == a.groups[0]


def test_logprob_recorded_analytically():
    env = SyntheticEnv.lexicon_env(4, (3, 3))
    pol = ToyPolicy.random(4, np.random.default_rng(2))
    for r in sample_rollouts(pol, env, [(0, 1, 2)], 5, seed=3).rollouts():
        assert r.logprob == pytest.approx(pol.logprob((0, 1, 2), r.tokens, r.formatted))


def test_sampling_needs_rollouts():
    env = SyntheticEnv.lexicon_env(3, (1, 1))
    with pytest.raises(ValueError):
        sample_rollouts(ToyPolicy.uniform(3), env, [(0,)], n=0)


# --- advantages -----------------------------------------------------------

def test_group_advantages_arithmetic():
    b = compute_advantages(batch_with_totals([[2, 0]]), normalize=False)
    assert b.advantages().tolist() == [[1.0, -1.0]]


def test_equal_rewards_zero_advantage():
    b = compute_advantages(batch_with_totals([[1.5] * 4, [0.3] * 4]))
    assert np.all(b.advantages() == 0.0)


def test_batch_mean_baseline():
    b = compute_advantages(batch_with_totals([[2, 2], [0, 0]]), "batch_mean", normalize=False)
    assert b.advantages().tolist() == [[1.0, 1.0], [-1.0, -1.0]]
    with pytest.raises(ValueError):
        compute_advantages(batch_with_totals([[1]]), "median")


def test_normalization_unit_std():
    b = compute_advantages(batch_with_totals([[2, 0, 1, 1], [3, 1, 0, 0]]))
    assert b.advantages().std() == pytest.approx(1.0)


@settings(max_examples=50)
@given(st.lists(st.lists(st.floats(0, 2.1), min_size=16, max_size=16), min_size=1, max_size=8))
def test_group_sums_zero(groups):
    adv = compute_advantages(batch_with_totals(groups), normalize=False).advantages()
    assert np.all(np.abs(adv.sum(axis=1)) < 1e-9 * 16)


# --- update ---------------------------------------------------------------

def test_zero_advantage_identity_update():
    env = SyntheticEnv.lexicon_env(4, (2, 3))
    pol = ToyPolicy.random(4, np.random.default_rng(5))
    b = sample_rollouts(pol, env, [(0, 1), (2, 3)], 4, seed=0)
    b = replace(b, groups=tuple(tuple(replace(r, advantage=0.0) for r in g) for g in b.groups))
    new = update(pol, b, lr=0.5)
    assert np.array_equal(new.theta, pol.theta) and new.theta_f == pol.theta_f


def test_update_closed_form_v3():
    theta = np.array([[0.2, -0.1, 0.4], [0.0, 0.3, -0.2], [0.1, 0.1, 0.1]])
    pol = ToyPolicy(theta, 0.0)
    p = pol.probs()
    b = batch_with_totals([[1.0]], prompts=[(1,)])
    b = replace(b, groups=((replace(b.groups[0][0], tokens=(2,), advantage=1.0),),))
    lr = 0.1
    new = update(pol, b, lr=lr)
    delta = new.theta - theta
    expected_row = -lr * p[1]
    expected_row[2] = lr * (1 - p[1, 2])
    np.testing.assert_allclose(delta[1], expected_row, atol=1e-15)
    assert np.all(delta[[0, 2]] == 0)
    assert new.theta_f == pytest.approx(lr * 0.5)


def test_update_requires_advantages():
    with pytest.raises(ValueError):
        policy_gradient(ToyPolicy.uniform(2), batch_with_totals([[1.0]]))


def test_non_finite_gradient_names_sample():
    b = batch_with_totals([[1.0, 2.0]])
    b = replace(b, groups=((replace(b.groups[0][0], advantage=0.0), replace(b.groups[0][1], advantage=np.nan)),))
    with pytest.raises(NonFiniteGradient, match="0:1"):
        update(ToyPolicy.uniform(2), b)


def test_kl_zero_at_identity():
    pol = ToyPolicy.random(4, np.random.default_rng(1))
    G, g_f = softmax_kl_gradient(pol, pol.copy())
    assert softmax_kl(pol, pol) == 0.0 and np.all(G == 0) and g_f == 0.0
    env = SyntheticEnv.lexicon_env(4, (1, 2))
    b = compute_advantages(sample_rollouts(pol, env, [(0,), (1, 2)], 4, seed=2))
    np.testing.assert_array_equal(update(pol, b, 0.1, kl_beta=2.0, reference=pol.copy()).theta, update(pol, b, 0.1).theta)


def test_kl_gradient_matches_finite_differences():
    rng = np.random.default_rng(4)
    pol, ref = ToyPolicy.random(3, rng), ToyPolicy.random(3, rng)
    G, g_f = softmax_kl_gradient(pol, ref)
    base, h = pol.flat(), 1e-6
    num = np.zeros_like(base)
    for i in range(base.size):
        up, dn = base.copy(), base.copy()
        up[i] += h
        dn[i] -= h
        num[i] = (softmax_kl(ToyPolicy.from_flat(up, 3), ref) - softmax_kl(ToyPolicy.from_flat(dn, 3), ref)) / (2 * h)
    np.testing.assert_allclose(np.concatenate([G.ravel(), [g_f]]), num, atol=1e-7)


def test_kl_needs_reference():
    b = compute_advantages(batch_with_totals([[1.0, 0.0]]))
    with pytest.raises(ValueError):
        update(ToyPolicy.uniform(2), b, kl_beta=0.1)


# --- exact oracle ---------------------------------------------------------

def lexicon_policy(env, gap=60.0, theta_f=60.0):
    theta = np.zeros((env.vocab_size, env.vocab_size))
    theta[np.arange(env.vocab_size), list(env.lexicon)] = gap
    return ToyPolicy(theta, theta_f)


def test_expected_reward_deterministic_policy():
    env = SyntheticEnv(3, (1, 2, 0), (1, 2))
    assert exact_expected_reward(lexicon_policy(env), env) == pytest.approx(2.0, abs=1e-12)


def test_expected_reward_uniform_hand_sum():
    # V=2, L=1: right token -> 1 + R(1) = 2, wrong -> 1 + R(-1) = 1, unformatted -> 0
    env = SyntheticEnv(2, (1, 0), (1, 1))
    assert exact_expected_reward(ToyPolicy.uniform(2, 0.0), env) == pytest.approx(0.5 * (0.5 * 2 + 0.5 * 1))


def test_expected_reward_format_never():
    env = SyntheticEnv(2, (1, 0), (1, 2))
    assert exact_expected_reward(lexicon_policy(env, theta_f=-60.0), env) == pytest.approx(0.0, abs=1e-12)


def test_enumeration_too_large():
    with pytest.raises(EnumerationTooLarge):
        build_reward_table(SyntheticEnv.lexicon_env(16, (3, 6)))


def test_gradient_check_v3_l2():
    env = SyntheticEnv.lexicon_env(3, (2, 2), seed=1)
    rep = gradient_check(ToyPolicy.random(3, np.random.default_rng(8)), env)
    assert rep.passed and rep.max_relative_error < 1e-4


def test_gradient_rows_sum_to_zero_at_uniform():
    env = SyntheticEnv.lexicon_env(3, (1, 2), seed=2)
    g = analytic_gradient(ToyPolicy.uniform(3), env)
    np.testing.assert_allclose(g[:-1].reshape(3, 3).sum(axis=1), 0.0, atol=1e-12)
    assert np.abs(g[:-1]).max() > 1e-3


def test_central_difference_error_is_second_order():
    env = SyntheticEnv.lexicon_env(3, (1, 2), seed=3)
    pol = ToyPolicy.random(3, np.random.default_rng(9))
    table = build_reward_table(env)
    exact = analytic_gradient(pol, env, table)
    e1 = np.abs(numeric_gradient(pol, env, 2e-2, table) - exact).max()
    e2 = np.abs(numeric_gradient(pol, env, 1e-2, table) - exact).max()
    assert 3.0 < e1 / e2 < 5.0


def test_format_rate_monotone_in_gate():
    values = [ToyPolicy.uniform(2, t).format_prob() for t in np.linspace(-10, 10, 41)]
    assert all(a <= b for a, b in zip(values, values[1:]))


# --- policy and training --------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    pol = ToyPolicy.random(4, np.random.default_rng(0))
    pol.save(tmp_path / "p.json", "abc")
    back = ToyPolicy.load(tmp_path / "p.json")
    assert np.array_equal(back.theta, pol.theta) and back.theta_f == pol.theta_f
    (tmp_path / "bad.json").write_text('{"format": "other"}')
    with pytest.raises(ValueError):
        ToyPolicy.load(tmp_path / "bad.json")


def test_policy_validation():
    with pytest.raises(ValueError):
        ToyPolicy(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        ToyPolicy(np.array([[np.inf, 0], [0, 0]]))


def small_config(**kw):
    base = dict(epochs=2, batches_per_epoch=10, batch_prompts=4, n_rollouts=8, seed=3, eval_prompts=8, eval_rollouts=4)
    base.update(kw)
    return TrainConfig(**base)


def test_training_deterministic():
    env = SyntheticEnv.lexicon_env(6, (2, 3))
    r1, p1 = train(small_config(), env)
    r2, p2 = train(small_config(), env)
    assert r1.to_dict() == r2.to_dict() and np.array_equal(p1.theta, p2.theta)
    assert len(r1.rows) == 2 and r1.flags["baseline"] == "group_mean"


def test_epochs_zero():
    env = SyntheticEnv.lexicon_env(4, (2, 3))
    init = ToyPolicy.random(4, np.random.default_rng(1))
    rep, pol = train(small_config(epochs=0), env, policy=init)
    assert rep.rows == [] and rep.initial is None
    assert np.array_equal(pol.theta, init.theta) and pol.theta_f == init.theta_f


def test_divergence_guard():
    env = SyntheticEnv.lexicon_env(4, (2, 3))
    with pytest.raises(TrainingDiverged) as exc:
        train(small_config(lr=500.0, theta_bound=1.0), env)
    assert exc.value.report.rows and exc.value.report.rows[-1].batches < 10


def test_report_files(tmp_path):
    env = SyntheticEnv.lexicon_env(4, (2, 3))
    rep, _ = train(small_config(), env)
    rep.write_csv(tmp_path / "r.csv")
    rep.write_jsonl(tmp_path / "r.jsonl")
    assert (tmp_path / "r.csv").read_text().splitlines()[0] == "epoch,mean_total,mean_s_format,mean_x,mean_grad_norm,batches"
    assert len((tmp_path / "r.jsonl").read_text().splitlines()) == 3


def test_large_model_lr_flagged():
    env = SyntheticEnv.lexicon_env(3, (1, 2))
    rep, _ = train(small_config(epochs=1, batches_per_epoch=1, lr=3e-7), env)
    assert rep.flags["lr_regime"] == "large-model"


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(baseline_mode="ema")
    with pytest.raises(ValueError):
        TrainConfig(n_rollouts=0)


def test_larger_step_learns_lexicon():
    # the default step mostly learns the format gate in 600 batches; a larger one also learns the lexicon
    env = SyntheticEnv.lexicon_env(16, (3, 6), seed=0)
    rep, pol = train(TrainConfig(epochs=1, batches_per_epoch=200, lr=2.0, seed=7), env)
    assert list(pol.probs().argmax(axis=1)) == list(env.lexicon)
    assert rep.final.mean_total > 1.9 and rep.final.format_rate > 0.99
