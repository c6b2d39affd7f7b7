from itertools import combinations

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from CommunityMembershipHiding.agents.odrl_agent import (
    Observation,
    OdrlNetwork,
    OdrlPolicy,
    RngState,
    Trajectory,
    TrajectoryStep,
    action_masks,
    edge_index,
    entropy_coef,
    gae,
    load_checkpoint,
    load_rng_state,
    make_optimizer,
    node_features,
    ppo_loss,
    ppo_update,
    rollout,
    save_checkpoint,
    select_action,
    train,
)
from CommunityMembershipHiding.config.settings import DetectorConfig, TrainConfig
from CommunityMembershipHiding.tools.env import reset, step
from CommunityMembershipHiding.utils.errors import ConfigError, TrainingError
from CommunityMembershipHiding.utils.graph_core import Graph, toggle_edge

LOUVAIN = DetectorConfig("louvain")


def random_obs(rng: np.random.Generator, n: int = 10, k: int = 2, p: float = 0.3) -> Observation:
    edges = [(u, v) for u, v in combinations(range(n), 2) if rng.random() < p]
    target = int(rng.integers(n - k))
    return Observation(Graph(range(n), edges), target, tuple(range(n - k, n)))


def endpoint_of(obs: Observation, node: int, edit: int) -> int:
    actor = obs.controlled[node]
    return [v for v in obs.graph.node_ids if v != actor][edit // 2]


def synthetic_trajectory(net: OdrlNetwork, obs: Observation, length: int) -> Trajectory:
    """walk `length` valid edits, storing the current log-probabilities as the old ones"""
    traj = Trajectory()
    hidden = net.initial_hidden()
    with torch.no_grad():
        for t in range(length):
            out = net(obs, hidden)
            hidden = out.hidden
            node = t % len(obs.controlled)
            valid = torch.nonzero(action_masks(obs)[node]).flatten()
            edit = int(valid[(3 * t) % len(valid)])
            lp_n, lp_a = out.log_probs(node, edit)
            traj.steps.append(
                TrajectoryStep(obs, node, edit, float(lp_n), float(lp_a), 0.5 * t, float(out.value), t == length - 1)
            )
            actor = obs.controlled[node]
            obs = Observation(toggle_edge(obs.graph, actor, endpoint_of(obs, node, edit)), obs.target, obs.proxy_ids)
    return traj


# --- encoder, shared state, heads ------------------------------------------


def test_encode_shape_and_edgeless_graph():
    torch.manual_seed(0)
    net = OdrlNetwork(10, 3, d_h=8)
    obs = random_obs(np.random.default_rng(1))
    emb = net.encode(node_features(obs), edge_index(obs.graph))
    assert emb.shape == (10, 8)
    lonely = Observation(Graph(range(10)), 0, (8, 9))
    emb = net.encode(node_features(lonely), edge_index(lonely.graph))
    assert emb.shape == (10, 8)
    assert torch.isfinite(emb).all()


def test_encode_permutes_with_the_nodes():
    torch.manual_seed(2)
    net = OdrlNetwork(9, 2, d_h=8)
    obs = random_obs(np.random.default_rng(3), n=9, k=1, p=0.4)
    x, edges = node_features(obs), edge_index(obs.graph)
    order = torch.randperm(9, generator=torch.Generator().manual_seed(4))
    position = torch.empty_like(order)
    position[order] = torch.arange(9)
    with torch.no_grad():
        emb = net.encode(x, edges)
        moved = net.encode(x[order], position[edges])
    assert torch.allclose(moved, emb[order], atol=1e-5)


def test_shared_state_without_proxies_uses_a_zero_proxy_summary():
    torch.manual_seed(5)
    net = OdrlNetwork(6, 1, d_h=8)
    emb = torch.randn(6, 8)
    hidden = net.initial_hidden()
    with torch.no_grad():
        got = net.shared_state(emb, 2, [], hidden)
        z = torch.cat([emb[2], torch.zeros(8), emb.mean(dim=0)])
        want = net.gru(F.elu(net.state_norm(net.state_proj(z))).unsqueeze(0), hidden)
    assert got.shape == (1, 8)
    assert torch.allclose(got, want)


def test_shared_state_depends_on_the_recurrent_state():
    torch.manual_seed(7)
    net = OdrlNetwork(6, 3, d_h=8)
    emb = torch.randn(6, 8)
    with torch.no_grad():
        fresh = net.shared_state(emb, 0, [4, 5], net.initial_hidden())
        later = net.shared_state(emb, 0, [4, 5], torch.randn(1, 8))
    assert not torch.allclose(fresh, later)


def test_zero_heads_are_uniform_over_unmasked_entries():
    torch.manual_seed(8)
    net = OdrlNetwork(10, 3, d_h=8)
    for head in (net.node_head, net.actor_head):
        torch.nn.init.zeros_(head.weight)
        torch.nn.init.zeros_(head.bias)
    masks = torch.zeros(3, 18, dtype=torch.bool)
    masks[0, [1, 4, 9]] = True
    masks[1, :] = True
    with torch.no_grad():
        node_logits, actor_logits, _ = net.policy_value(torch.randn(1, 8), torch.randn(3, 8), masks)
    node_probs = F.softmax(node_logits, dim=-1)
    actor_probs = F.softmax(actor_logits, dim=-1)
    assert torch.allclose(node_probs, torch.tensor([0.5, 0.5, 0.0]))
    assert torch.allclose(actor_probs[0][masks[0]], torch.full((3,), 1 / 3))
    assert actor_probs[0][~masks[0]].sum() == 0
    assert torch.allclose(actor_probs[1], torch.full((18,), 1 / 18))


# --- masking and normalization ---------------------------------------------


def test_masks_and_normalization_over_random_states():
    torch.manual_seed(0)
    rng = np.random.default_rng(0)
    net = OdrlNetwork(10, 3, d_h=16)
    generator = torch.Generator().manual_seed(0)
    hidden = net.initial_hidden()
    with torch.no_grad():
        for _ in range(1000):
            obs = random_obs(rng)
            out = net(obs, hidden)
            hidden = out.hidden
            masks = action_masks(obs)

            assert out.actor_logits.shape == (3, 2 * (10 - 1))
            assert abs(float(out.node_probs.sum()) - 1.0) < 1e-6
            probs = out.actor_probs
            assert torch.all(torch.abs(probs.sum(dim=1) - 1.0) < 1e-6)
            assert torch.all(probs[~masks] == 0.0)
            assert int(masks.sum()) == 3 * (10 - 1)

            node, edit = select_action(out, greedy=False, generator=generator)
            assert masks[node, edit]
            node, edit = select_action(out, greedy=True)
            assert masks[node, edit]


def test_forward_rejects_wrong_shape():
    net = OdrlNetwork(10, 3, d_h=8)
    obs = random_obs(np.random.default_rng(1), n=9, k=2)
    with pytest.raises(ConfigError):
        net(obs, net.initial_hidden())


def test_hidden_width_must_split_across_layers():
    with pytest.raises(ConfigError):
        OdrlNetwork(10, 3, d_h=10)


def test_entropy_is_nonnegative_and_finite():
    net = OdrlNetwork(10, 3, d_h=8)
    with torch.no_grad():
        out = net(random_obs(np.random.default_rng(2)), net.initial_hidden())
    ent = out.entropy()
    assert torch.isfinite(ent) and float(ent) >= 0.0


# --- GAE and schedules -----------------------------------------------------


def test_gae_reduces_to_discounted_returns():
    adv, ret = gae([1.0, 0.0, 1.0], [0.0, 0.0, 0.0], gamma=0.5, lam=1.0)
    np.testing.assert_allclose(adv, [1.25, 0.5, 1.0])
    np.testing.assert_allclose(ret, adv)


def test_gae_with_zero_lambda_is_the_td_error():
    adv, ret = gae([1.0, 1.0], [0.5, 0.2], gamma=0.9, lam=0.0)
    np.testing.assert_allclose(adv, [1.0 + 0.9 * 0.2 - 0.5, 1.0 - 0.2])
    np.testing.assert_allclose(ret, adv + np.array([0.5, 0.2]))


def test_entropy_schedule_is_linear():
    assert entropy_coef(0, 100) == pytest.approx(1e-2)
    assert entropy_coef(99, 100) == pytest.approx(1e-4)
    values = [entropy_coef(e, 100) for e in range(100)]
    assert all(a > b for a, b in zip(values, values[1:]))
    assert entropy_coef(0, 1) == 1e-2


# --- PPO -------------------------------------------------------------------


def test_ppo_gradient_matches_finite_differences():
    torch.manual_seed(3)
    net = OdrlNetwork(8, 3, d_h=8).double()
    rng = np.random.default_rng(3)
    obs = random_obs(rng, n=8, k=2, p=0.4)
    traj = synthetic_trajectory(net, obs, length=3)
    cfg = TrainConfig(d_h=8)
    advantages = np.array([0.7, -0.4, 1.1])
    returns = np.array([1.0, 0.3, -0.2])

    def loss_value() -> torch.Tensor:
        loss, _ = ppo_loss(net, traj, advantages, returns, cfg, ent_coef=0.01)
        return loss

    net.zero_grad()
    loss_value().backward()
    analytic = {name: p.grad.detach().clone() for name, p in net.named_parameters()}

    eps = 1e-6
    worst = 0.0
    with torch.no_grad():
        for name, param in net.named_parameters():
            flat = param.view(-1)
            for i in range(flat.numel()):
                saved = float(flat[i])
                flat[i] = saved + eps
                up = float(loss_value())
                flat[i] = saved - eps
                down = float(loss_value())
                flat[i] = saved
                numeric = (up - down) / (2 * eps)
                a = float(analytic[name].view(-1)[i])
                worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), 1e-3))
    assert worst <= 1e-4


def test_value_loss_decreases_on_a_fixed_episode():
    torch.manual_seed(4)
    net = OdrlNetwork(8, 3, d_h=8)
    traj = synthetic_trajectory(net, random_obs(np.random.default_rng(4), n=8, k=2), length=3)
    for s, r in zip(traj.steps, (1.0, 0.5, 0.25)):
        s.reward = r
    cfg = TrainConfig(d_h=8, lr=1e-2, optimizer="adam", updates_per_episode=60, normalize_advantages=False)
    adv, ret = gae(traj.rewards, traj.values, cfg.gamma, cfg.gae_lambda)
    _, before = ppo_loss(net, traj, adv, ret, cfg, 0.0)
    ppo_update(net, make_optimizer(net, cfg), traj, cfg, 0.0)
    _, after = ppo_loss(net, traj, adv, ret, cfg, 0.0)
    assert after["loss_value"] < before["loss_value"]


def test_non_finite_loss_raises_training_error():
    net = OdrlNetwork(8, 3, d_h=8)
    traj = synthetic_trajectory(net, random_obs(np.random.default_rng(5), n=8, k=2), length=2)
    traj.steps[0].reward = float("nan")
    cfg = TrainConfig(d_h=8)
    with pytest.raises(TrainingError) as err:
        ppo_update(net, make_optimizer(net, cfg), traj, cfg, 0.01)
    assert "loss" in err.value.diagnostics


# --- episodes, training, checkpoints ---------------------------------------


def test_rollout_stays_within_budget(two_cliques):
    state = reset(two_cliques, 0, LOUVAIN, 0.5, 1, 0.5, 2, seed=0)
    net = OdrlNetwork(state.graph.n, len(state.controlled), d_h=8)
    final, traj = rollout(net, state, generator=torch.Generator().manual_seed(0))
    assert final.done
    assert len(traj) == len(final.edit_log) <= 2


def test_policy_wrapper_plays_valid_actions(two_cliques):
    state = reset(two_cliques, 0, LOUVAIN, 0.5, 2, 0.5, 3, seed=1)
    net = OdrlNetwork(state.graph.n, len(state.controlled), d_h=8)
    policy = OdrlPolicy(net, greedy=True)
    policy.begin(state)
    while not state.done:
        state, _, _ = step(state, policy.select(state))
    assert len(state.edit_log) <= 3


class TinyFactory:
    def __init__(self, g: Graph):
        self.g = g
        self.n_nodes = g.n + 1
        self.n_candidates = 2

    def sample_community(self, rng):
        return frozenset(range(5))

    def sample_target(self, community, rng):
        return sorted(community)[int(rng.integers(len(community)))]

    def reset(self, target, community, seed):
        return reset(self.g, target, LOUVAIN, 0.5, 1, 0.5, 2, seed, c_orig=community)


def test_train_produces_a_curve(two_cliques):
    cfg = TrainConfig(episodes=4, d_h=8, seed=1)
    seen = []
    net, curve = train(TinyFactory(two_cliques), cfg, on_episode=seen.append)
    assert list(curve.columns) == ["episode", "reward", "success", "moving_sr", "entropy_coef", "length"]
    assert len(curve) == 4 == len(seen)
    assert curve["length"].max() <= 2
    assert curve["moving_sr"].between(0, 1).all()
    assert net.n_nodes == 11


def test_checkpoint_round_trip(tmp_path):
    torch.manual_seed(6)
    net = OdrlNetwork(8, 3, d_h=8)
    cfg = TrainConfig(d_h=8, episodes=10)
    path = tmp_path / "agent.pt"
    save_checkpoint(path, net, cfg, {"k": 2, "dataset": "toy"})
    loaded, loaded_cfg, meta = load_checkpoint(path)
    assert loaded_cfg == cfg
    assert meta == {"k": 2, "dataset": "toy"}
    obs = random_obs(np.random.default_rng(6), n=8, k=2)
    with torch.no_grad():
        a = net(obs, net.initial_hidden())
        b = loaded(obs, loaded.initial_hidden())
    assert torch.equal(a.node_logits, b.node_logits)
    assert torch.equal(a.actor_logits, b.actor_logits)


def test_missing_checkpoint(tmp_path):
    with pytest.raises(ConfigError):
        load_checkpoint(tmp_path / "nope.pt")


class RecordingFactory(TinyFactory):
    """TinyFactory that logs, per call, the episode it happens in"""

    def __init__(self, g: Graph):
        super().__init__(g)
        self.episodes = 0
        self.community_draws, self.target_draws, self.targets = [], [], []

    def sample_community(self, rng):
        self.community_draws.append(self.episodes)
        return super().sample_community(rng)

    def sample_target(self, community, rng):
        self.target_draws.append(self.episodes)
        return super().sample_target(community, rng)

    def reset(self, target, community, seed):
        self.episodes += 1
        self.targets.append(target)
        return super().reset(target, community, seed)


def test_train_resamples_targets_and_communities_on_schedule(two_cliques):
    cfg = TrainConfig(episodes=51, d_h=8, updates_per_episode=1, seed=3)
    assert (cfg.target_resample_every, cfg.community_resample_every) == (5, 50)
    factory = RecordingFactory(two_cliques)
    train(factory, cfg)
    assert factory.community_draws == [0, 50]
    assert factory.target_draws == list(range(0, 51, 5))
    for start in range(0, 50, 5):
        assert len(set(factory.targets[start:start + 5])) == 1


def test_checkpoint_keeps_the_training_random_state(two_cliques, tmp_path):
    cfg = TrainConfig(episodes=3, d_h=8, seed=2)
    net, curve = train(TinyFactory(two_cliques), cfg)
    state = curve.attrs["rng_state"]
    path = tmp_path / "agent.pt"
    save_checkpoint(path, net, cfg, {}, state)
    loaded = load_rng_state(path)
    assert isinstance(loaded, RngState)
    assert loaded.numpy == state.numpy
    assert torch.equal(loaded.generator, state.generator)
    assert torch.equal(loaded.torch_global, state.torch_global)

    rng, generator = np.random.default_rng(99), torch.Generator()
    loaded.restore(rng, generator)
    reference = np.random.default_rng()
    reference.bit_generator.state = state.numpy
    assert rng.integers(2**31) == reference.integers(2**31)
    twin = torch.Generator()
    twin.set_state(state.generator)
    assert torch.equal(torch.rand(3, generator=generator), torch.rand(3, generator=twin))


def test_checkpoint_without_training_state_keeps_only_the_torch_state(tmp_path):
    path = tmp_path / "agent.pt"
    save_checkpoint(path, OdrlNetwork(8, 3, d_h=8), TrainConfig(d_h=8))
    assert load_rng_state(path) is None


def test_resumed_training_continues_the_random_streams(two_cliques):
    cfg = TrainConfig(episodes=2, d_h=8, seed=4)
    _, first = train(TinyFactory(two_cliques), cfg)
    state = first.attrs["rng_state"]
    factory = RecordingFactory(two_cliques)
    train(factory, cfg, resume=state)
    rng = np.random.default_rng()
    state.restore(rng, torch.Generator())
    assert factory.targets[0] == sorted(range(5))[int(rng.integers(5))]
