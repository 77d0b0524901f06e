import numpy as np
import pytest

from lossevo.envs import normalized_return, pendulum_config, pointmass_config
from lossevo.errors import NumericError
from lossevo.graph import NodeKind as K
from lossevo.interpreter import GraphLoss
from lossevo.presets import GraphBuilder, warm_start_sac
from lossevo.trainer import (ReplayBuffer, _streams, TrainerConfig, TrainFailure, TrainedPolicy,
                             evaluate_policy, flat_parameters, init_networks, train)

SHORT = TrainerConfig(min_samples=64, episodes=3)
ENV = pointmass_config(rollout_length=60)


def _constant_graph():
    b = GraphBuilder()
    b.output(K.PolicyLoss, b.op(K.MeanAll, b.op(K.SquaredDiff, b[K.Rewards], b[K.Rewards])))
    b.output(K.CriticLoss, b.op(K.MeanAll, b[K.Rewards]))
    return b.build()


class RecordingLoss:
    """Zero-gradient loss that keeps every reward batch it sees."""

    def __init__(self, env):
        self.inner = GraphLoss(_constant_graph(), env.dims, SHORT.batch_size)
        self.rewards = []

    def gradients(self, batch, nets, noise_seed):
        self.rewards.append(batch.rewards.copy())
        return self.inner.gradients(batch, nets, noise_seed)


class ExplodingLoss:
    def gradients(self, batch, nets, noise_seed):
        raise NumericError("boom", node=0)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainerConfig(tau=1.5)
    with pytest.raises(ValueError):
        TrainerConfig(n_step=3)
    assert TrainerConfig.full_scale().widths == (256, 256)


def test_training_is_deterministic():
    a, b = [], []
    ra = train(warm_start_sac(), SHORT, ENV, 4, trajectory=a)
    rb = train(warm_start_sac(), SHORT, ENV, 4, trajectory=b)
    assert ra and rb and len(a) == len(b) > 0
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
    c = []
    train(warm_start_sac(), SHORT, ENV, 5, trajectory=c)
    assert not np.array_equal(a[-1], c[-1])


def test_zero_gradient_loss_leaves_parameters_unchanged():
    traj = []
    result = train(_constant_graph(), SHORT, ENV, 0, trajectory=traj)
    start = flat_parameters(init_networks(*ENV.dims, SHORT, _streams(0)["init"]))
    assert result.updates == len(traj) > 0
    for p in traj:
        np.testing.assert_array_equal(p, traj[0])
    np.testing.assert_array_equal(traj[0], start)


def test_target_update_extremes():
    # hard updates destabilize plain SGD at the default step size
    hard = train(warm_start_sac(), TrainerConfig(min_samples=64, episodes=2, tau=1.0,
                                                 learning_rate=1e-4), ENV, 1)
    for t, c in zip(hard.nets.target1.arrays(), hard.nets.critic1.arrays()):
        np.testing.assert_allclose(t, c, rtol=0, atol=1e-15)
    frozen = train(warm_start_sac(), TrainerConfig(min_samples=64, episodes=2, tau=0.0), ENV, 1)
    start = init_networks(*ENV.dims, SHORT, _streams(1)["init"])
    assert frozen.updates > 0
    for t, t0 in zip(frozen.nets.target1.arrays(), start.target1.arrays()):
        np.testing.assert_array_equal(t, t0)
    assert not np.array_equal(frozen.nets.critic1.arrays()[0], start.critic1.arrays()[0])


def test_replay_buffer_is_fifo():
    buf = ReplayBuffer(3, 1, 1)
    for i in range(5):
        buf.add([i], [0], float(i), [i + 1], False)
    assert len(buf) == 3
    assert sorted(buf.rewards) == [2.0, 3.0, 4.0]
    assert buf.rewards[buf.oldest_index()] == 2.0
    batch = buf.sample(50, np.random.default_rng(0), 0.9)
    assert set(batch.rewards) <= {2.0, 3.0, 4.0}


def test_rewards_are_scaled_before_storage():
    runs = {}
    for scale in (1.0, 5.0):
        loss = RecordingLoss(ENV)
        train(None, TrainerConfig(min_samples=64, episodes=2, reward_scale=scale), ENV, 2, loss=loss)
        runs[scale] = np.concatenate(loss.rewards)
    assert (runs[1.0] <= 0).all() and runs[1.0].any()
    np.testing.assert_allclose(runs[5.0], 5.0 * runs[1.0], rtol=1e-15)


def test_failure_is_a_falsy_value():
    result = train(None, SHORT, ENV, 0, loss=ExplodingLoss())
    assert isinstance(result, TrainFailure) and not result
    assert "non-finite" in result.reason and result.updates == 0


def test_diagnostics_cover_every_episode():
    result = train(warm_start_sac(), SHORT, ENV, 0)
    assert isinstance(result, TrainedPolicy)
    assert [d.episode for d in result.diagnostics] == [0, 1, 2]
    assert sum(d.updates for d in result.diagnostics) == result.updates
    assert result.diagnostics[0].actor_grad_norm is None  # replay still warming up
    assert result.mean_actor_grad_norm() > 0


def test_evaluate_policy_is_deterministic_and_normalized():
    nets = init_networks(3, 1, SHORT, np.random.default_rng(0))
    env = pendulum_config(rollout_length=50)
    a = evaluate_policy(nets.policy, env, 4, seed=11)
    assert 0.0 <= a <= 1.0
    assert a == evaluate_policy(nets.policy, env, 4, seed=11)


def test_warm_start_learns_on_pointmass():
    env = pointmass_config()
    cfg = TrainerConfig(min_samples=200, episodes=20)
    before, after = [], []
    for seed in range(3):
        init = init_networks(*env.dims, cfg, np.random.default_rng(seed))
        before.append(evaluate_policy(init.policy, env, 10, 99))
        after.append(evaluate_policy(train(warm_start_sac(), cfg, env, seed), env, 10, 99))
    assert np.mean(after) > np.mean(before) + 0.15


def test_do_nothing_policy_at_rest_scores_one():
    env = pointmass_config(init_position=(0.0, 0.0), init_velocity=(0.0, 0.0))
    nets = init_networks(*env.dims, SHORT, np.random.default_rng(0))
    idle = nets.policy.with_arrays([np.zeros_like(a) for a in nets.policy.trunk.arrays()])
    assert evaluate_policy(idle, env, 5, seed=0) == 1.0


def test_late_episodes_beat_early_episodes():
    env = pointmass_config()
    result = train(warm_start_sac(), TrainerConfig(episodes=20), env, 0)
    norm = [normalized_return(d.episode_return, env) for d in result.diagnostics]
    assert np.mean(norm[-5:]) > np.mean(norm[:5])
