"""
odrl_agent.py - the learned hiding agent: GCN encoder with jumping-knowledge
    concatenation, GRU episode state, factored actor (acting node, then edit)
    with action masking, MLP critic, and a PPO trainer with one clipped ratio
    per policy factor.
"""

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch
import torch.nn as nn
import torch.nn.functional as F
from rich.progress import Progress
from torch.distributions import Categorical
from torch_geometric.nn import GCNConv, JumpingKnowledge, PairNorm

from CommunityMembershipHiding.config.logger import get_logger
from CommunityMembershipHiding.config.settings import TrainConfig
from CommunityMembershipHiding.tools.env import (
    Action,
    EnvState,
    action_from_index,
    edit_mask,
    step as env_step,
)
from CommunityMembershipHiding.utils.errors import ConfigError, TrainingError
from CommunityMembershipHiding.utils.graph_core import Graph

logger = get_logger(__name__)

D_IN = 4
N_LAYERS = 4
CHECKPOINT_VERSION = 2


@dataclass(frozen=True)
class Observation:
    """what the agent sees of an EnvState: graph, target and proxy ids"""

    graph: Graph
    target: int
    proxy_ids: Tuple[int, ...]

    @classmethod
    def of(cls, s: EnvState) -> "Observation":
        return cls(s.graph, s.target, s.proxies.proxy_ids)

    @property
    def controlled(self) -> Tuple[int, ...]:
        return (self.target,) + self.proxy_ids


def node_features(obs: Observation, dtype=torch.float32) -> torch.Tensor:
    """per-node inputs [degree / max degree, is_target, is_proxy, 1]"""
    g = obs.graph
    degrees = g.degrees()
    max_deg = max(degrees.values()) or 1
    proxies = set(obs.proxy_ids)
    rows = [
        [degrees[v] / max_deg, float(v == obs.target), float(v in proxies), 1.0]
        for v in g.node_ids
    ]
    return torch.tensor(rows, dtype=dtype)


def edge_index(g: Graph) -> torch.Tensor:
    pairs = [(g.index_of(u), g.index_of(v)) for u, v in g.sorted_edges()]
    if not pairs:
        return torch.empty((2, 0), dtype=torch.long)
    idx = torch.tensor(pairs, dtype=torch.long).t()
    return torch.cat([idx, idx.flip(0)], dim=1)


def action_masks(obs: Observation) -> torch.Tensor:
    """(|P|+1, 2(n-1)) boolean mask, one row per controlled node"""
    return torch.from_numpy(np.stack([edit_mask(obs.graph, c) for c in obs.controlled]))


@dataclass
class PolicyOutput:
    node_logits: torch.Tensor
    actor_logits: torch.Tensor
    value: torch.Tensor
    hidden: torch.Tensor

    @property
    def node_probs(self) -> torch.Tensor:
        return F.softmax(self.node_logits, dim=-1)

    @property
    def actor_probs(self) -> torch.Tensor:
        return F.softmax(self.actor_logits, dim=-1)

    def log_probs(self, node: int, edit: int) -> Tuple[torch.Tensor, torch.Tensor]:
        node_lp = Categorical(logits=self.node_logits).log_prob(torch.tensor(node))
        actor_lp = Categorical(logits=self.actor_logits[node]).log_prob(torch.tensor(edit))
        return node_lp, actor_lp

    def entropy(self) -> torch.Tensor:
        """entropy of the joint factored distribution: H(node) + sum_j p_j H(edit | j)"""
        node_dist = Categorical(logits=self.node_logits)
        actor_ent = Categorical(logits=self.actor_logits).entropy()
        return node_dist.entropy() + (node_dist.probs * actor_ent).sum()


class OdrlNetwork(nn.Module):
    """shared encoder + GRU state + factored actor + critic

    Args:
        n_nodes (int) - node count of the proxy-injected graph (fixes the 2(n-1) edit logits)
        n_candidates (int) - |P| + 1 acting nodes
        d_h (int) - hidden width, divisible by 4
    """

    def __init__(self, n_nodes: int, n_candidates: int, d_h: int = 32):
        super().__init__()
        if d_h % N_LAYERS != 0:
            raise ConfigError(f"ERROR: d_h must be divisible by {N_LAYERS}, got {d_h}")
        if n_nodes < 2 or n_candidates < 1:
            raise ConfigError("ERROR: the agent needs n_nodes >= 2 and n_candidates >= 1")
        self.n_nodes, self.n_candidates, self.d_h = n_nodes, n_candidates, d_h
        width = d_h // N_LAYERS

        self.convs = nn.ModuleList(
            [GCNConv(D_IN if i == 0 else width, width) for i in range(N_LAYERS)]
        )
        self.norms = nn.ModuleList([PairNorm() for _ in range(N_LAYERS)])
        self.jk = JumpingKnowledge("cat")

        self.state_proj = nn.Linear(3 * d_h, d_h)
        self.state_norm = nn.LayerNorm(d_h)
        self.gru = nn.GRUCell(d_h, d_h)

        self.node_head = nn.Linear(d_h, n_candidates)
        self.actor_head = nn.Linear(2 * d_h, 2 * (n_nodes - 1))
        self.critic = nn.Sequential(nn.Linear(d_h, d_h), nn.ELU(), nn.Linear(d_h, 1))

    @property
    def dtype(self) -> torch.dtype:
        return self.state_proj.weight.dtype

    def initial_hidden(self) -> torch.Tensor:
        return torch.zeros(1, self.d_h, dtype=self.dtype)

    def encode(self, x: torch.Tensor, edges: torch.Tensor) -> torch.Tensor:
        """(n, d_in) features -> (n, d_h) embeddings, the concatenation of all layer outputs"""
        if not torch.isfinite(x).all():
            raise TrainingError("ERROR: non-finite node features")
        outs = []
        h = x
        for conv, norm in zip(self.convs, self.norms):
            h = F.elu(norm(conv(h, edges)))
            outs.append(h)
        return self.jk(outs)

    def shared_state(
        self, emb: torch.Tensor, target: int, proxies: Sequence[int], hidden: torch.Tensor
    ) -> torch.Tensor:
        """[h_target; mean h_proxy; mean h_all] -> projection -> LayerNorm -> ELU -> GRU step"""
        h_target = emb[target]
        if len(proxies):
            h_proxy = emb[list(proxies)].mean(dim=0)
        else:
            h_proxy = torch.zeros_like(h_target)
        h_global = emb.mean(dim=0)
        z = F.elu(self.state_norm(self.state_proj(torch.cat([h_target, h_proxy, h_global]))))
        return self.gru(z.unsqueeze(0), hidden)

    def policy_value(
        self, h_shared: torch.Tensor, candidates: torch.Tensor, masks: torch.Tensor
    ) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """masked node logits (C,), masked edit logits (C, 2(n-1)) and the state value

        an actor whose edits are all masked gets its node logit masked as well; its
        (unreachable) edit row is left unmasked so every row stays a distribution
        """
        h = h_shared.squeeze(0)
        ninf = float("-inf")
        actor_in = torch.cat([h.expand(candidates.shape[0], -1), candidates], dim=1)
        actor_logits = self.actor_head(actor_in)
        usable = masks.any(dim=1)
        row_mask = masks | ~usable.unsqueeze(1)
        actor_logits = actor_logits.masked_fill(~row_mask, ninf)
        node_logits = self.node_head(h).masked_fill(~usable, ninf)
        value = self.critic(h).squeeze(-1)
        return node_logits, actor_logits, value

    def forward(self, obs: Observation, hidden: torch.Tensor) -> PolicyOutput:
        g = obs.graph
        if g.n != self.n_nodes or len(obs.controlled) != self.n_candidates:
            raise ConfigError(
                f"ERROR: network built for n={self.n_nodes}, |P|+1={self.n_candidates}; "
                f"got n={g.n}, |P|+1={len(obs.controlled)}"
            )
        emb = self.encode(node_features(obs, self.dtype), edge_index(g))
        target = g.index_of(obs.target)
        proxies = [g.index_of(p) for p in obs.proxy_ids]
        new_hidden = self.shared_state(emb, target, proxies, hidden)
        candidates = emb[[target] + proxies]
        node_logits, actor_logits, value = self.policy_value(
            new_hidden, candidates, action_masks(obs)
        )
        return PolicyOutput(node_logits, actor_logits, value, new_hidden)


@dataclass
class TrajectoryStep:
    obs: Observation
    node: int
    edit: int
    logp_node: float
    logp_actor: float
    reward: float
    value: float
    done: bool


@dataclass
class Trajectory:
    steps: List[TrajectoryStep] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def rewards(self) -> np.ndarray:
        return np.array([s.reward for s in self.steps], dtype=float)

    @property
    def values(self) -> np.ndarray:
        return np.array([s.value for s in self.steps], dtype=float)


def gae(
    rewards: Sequence[float], values: Sequence[float], gamma: float, lam: float
) -> Tuple[np.ndarray, np.ndarray]:
    """generalized advantage estimation for one episode (value after the last step is 0)

    Returns:
        (advantages, returns) with returns = advantages + values
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    advantages = np.zeros_like(rewards)
    running = 0.0
    for t in reversed(range(len(rewards))):
        next_value = values[t + 1] if t + 1 < len(rewards) else 0.0
        delta = rewards[t] + gamma * next_value - values[t]
        running = delta + gamma * lam * running
        advantages[t] = running
    return advantages, advantages + values


def select_action(
    out: PolicyOutput, greedy: bool, generator: Optional[torch.Generator] = None
) -> Tuple[int, int]:
    if greedy:
        node = int(torch.argmax(out.node_logits))
        return node, int(torch.argmax(out.actor_logits[node]))
    node = int(torch.multinomial(out.node_probs, 1, generator=generator))
    edit = int(torch.multinomial(out.actor_probs[node], 1, generator=generator))
    return node, edit


def rollout(
    net: OdrlNetwork,
    state: EnvState,
    greedy: bool = False,
    generator: Optional[torch.Generator] = None,
) -> Tuple[EnvState, Trajectory]:
    """play one episode from state with the current policy (no gradients)"""
    traj = Trajectory()
    hidden = net.initial_hidden()
    with torch.no_grad():
        while not state.done:
            obs = Observation.of(state)
            out = net(obs, hidden)
            hidden = out.hidden
            node, edit = select_action(out, greedy, generator)
            logp_node, logp_actor = out.log_probs(node, edit)
            state, reward, done = env_step(state, action_from_index(state, node, edit))
            traj.steps.append(
                TrajectoryStep(
                    obs, node, edit, float(logp_node), float(logp_actor),
                    float(reward), float(out.value), done,
                )
            )
    return state, traj


def ppo_loss(
    net: OdrlNetwork,
    traj: Trajectory,
    advantages: np.ndarray,
    returns: np.ndarray,
    cfg: TrainConfig,
    ent_coef: float,
) -> Tuple[torch.Tensor, Dict[str, float]]:
    """c_v L_value + c_clip (L_node + L_actor)/2 - c_ent mean entropy over a replayed episode

    the GRU state is recomputed from zeros through the stored observations so the
    probability ratios are exact
    """
    dtype = net.dtype
    hidden = net.initial_hidden()
    logp_node, logp_actor, values, entropies = [], [], [], []
    for s in traj.steps:
        out = net(s.obs, hidden)
        hidden = out.hidden
        lp_n, lp_a = out.log_probs(s.node, s.edit)
        logp_node.append(lp_n)
        logp_actor.append(lp_a)
        values.append(out.value)
        entropies.append(out.entropy())

    adv = torch.as_tensor(advantages, dtype=dtype)
    ret = torch.as_tensor(returns, dtype=dtype)
    old_node = torch.tensor([s.logp_node for s in traj.steps], dtype=dtype)
    old_actor = torch.tensor([s.logp_actor for s in traj.steps], dtype=dtype)

    def clipped(new_lp: torch.Tensor, old_lp: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        ratio = torch.exp(new_lp - old_lp)
        surr = torch.min(ratio * adv, torch.clamp(ratio, 1 - cfg.clip_eps, 1 + cfg.clip_eps) * adv)
        return -surr.mean(), ratio

    loss_node, r_node = clipped(torch.stack(logp_node), old_node)
    loss_actor, r_actor = clipped(torch.stack(logp_actor), old_actor)
    loss_value = F.mse_loss(torch.stack(values), ret)
    entropy = torch.stack(entropies).mean()
    loss = cfg.c_v * loss_value + cfg.c_clip * 0.5 * (loss_node + loss_actor) - ent_coef * entropy

    diagnostics = {
        "loss": float(loss),
        "loss_value": float(loss_value),
        "loss_node": float(loss_node),
        "loss_actor": float(loss_actor),
        "entropy": float(entropy),
        "ratio_node": float(r_node.mean()),
        "ratio_actor": float(r_actor.mean()),
    }
    return loss, diagnostics


def advantages_for(traj: Trajectory, cfg: TrainConfig) -> Tuple[np.ndarray, np.ndarray]:
    advantages, returns = gae(traj.rewards, traj.values, cfg.gamma, cfg.gae_lambda)
    if cfg.normalize_advantages and len(advantages) > 1:
        advantages = (advantages - advantages.mean()) / (advantages.std() + 1e-8)
    return advantages, returns


def ppo_update(
    net: OdrlNetwork,
    optimizer: torch.optim.Optimizer,
    traj: Trajectory,
    cfg: TrainConfig,
    ent_coef: float,
) -> Dict[str, float]:
    """cfg.updates_per_episode full-trajectory gradient steps; returns last-pass diagnostics"""
    advantages, returns = advantages_for(traj, cfg)
    diagnostics: Dict[str, float] = {}
    for _ in range(cfg.updates_per_episode):
        optimizer.zero_grad()
        loss, diagnostics = ppo_loss(net, traj, advantages, returns, cfg, ent_coef)
        if not torch.isfinite(loss):
            raise TrainingError("FATAL: non-finite PPO loss", diagnostics)
        loss.backward()
        optimizer.step()
    return diagnostics


@dataclass
class RngState:
    """random state of a training run: the numpy sampler (targets, communities,
    episode seeds), the action-sampling generator and the global torch state"""

    numpy: Dict[str, Any]
    generator: torch.Tensor
    torch_global: torch.Tensor

    @classmethod
    def capture(cls, rng: np.random.Generator, generator: torch.Generator) -> "RngState":
        return cls(rng.bit_generator.state, generator.get_state(), torch.get_rng_state())

    def restore(self, rng: np.random.Generator, generator: torch.Generator) -> None:
        rng.bit_generator.state = self.numpy
        generator.set_state(self.generator)
        torch.set_rng_state(self.torch_global)


def entropy_coef(episode: float, episodes: int, start: float = 1e-2, end: float = 1e-4) -> float:
    """linear schedule from start (episode 0) to end (final episode)"""
    if episodes <= 1:
        return start
    frac = min(max(episode / (episodes - 1), 0.0), 1.0)
    return start + (end - start) * frac


def make_optimizer(net: nn.Module, cfg: TrainConfig) -> torch.optim.Optimizer:
    if cfg.optimizer == "adam":
        return torch.optim.Adam(net.parameters(), lr=cfg.lr)
    return torch.optim.RMSprop(net.parameters(), lr=cfg.lr)


def train(
    factory,
    cfg: TrainConfig,
    on_episode: Optional[Callable[[Dict[str, Any]], None]] = None,
    show_progress: bool = False,
    resume: Optional[RngState] = None,
) -> Tuple[OdrlNetwork, pd.DataFrame]:
    """train the agent against the environment produced by factory

    Args:
        factory (EpisodeFactory) - provides n_nodes / n_candidates and
            sample_community(rng), sample_target(community, rng), reset(target, community, seed)
        cfg (TrainConfig) - hyperparameters
        on_episode (callable | None) - called with each curve row
        show_progress (bool) - draw a rich progress bar
        resume (RngState | None) - continue the random streams of an earlier run
            instead of seeding them from cfg.seed

    Returns:
        (trained network, training curve with columns episode, reward, success,
         moving_sr, entropy_coef, length); the final RngState is kept in
         curve.attrs["rng_state"]
    """
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    generator = torch.Generator().manual_seed(cfg.seed)
    if resume is not None:
        resume.restore(rng, generator)
    net = OdrlNetwork(factory.n_nodes, factory.n_candidates, cfg.d_h)
    optimizer = make_optimizer(net, cfg)

    rows = []
    community, target = None, None
    with Progress(disable=not show_progress) as progress:
        task = progress.add_task("training", total=cfg.episodes)
        for episode in range(cfg.episodes):
            if episode % cfg.community_resample_every == 0:
                community = factory.sample_community(rng)
                target = None
            if target is None or episode % cfg.target_resample_every == 0:
                target = factory.sample_target(community, rng)
            state = factory.reset(target, community, int(rng.integers(2**31)))
            c_ent = entropy_coef(episode, cfg.episodes, cfg.ent_start, cfg.ent_end)

            final, traj = rollout(net, state, greedy=False, generator=generator)
            if len(traj):
                ppo_update(net, optimizer, traj, cfg, c_ent)
            row = {
                "episode": episode,
                "reward": float(traj.rewards.sum()),
                "success": bool(final.hidden),
                "entropy_coef": c_ent,
                "length": len(traj),
            }
            rows.append(row)
            if on_episode is not None:
                on_episode(row)
            progress.advance(task)

    curve = pd.DataFrame(rows)
    curve["moving_sr"] = curve["success"].astype(float).rolling(100, min_periods=1).mean()
    logger.info(
        f"trained {cfg.episodes} episodes; final moving SR {curve['moving_sr'].iloc[-1]:.3f}"
    )
    curve = curve[["episode", "reward", "success", "moving_sr", "entropy_coef", "length"]]
    curve.attrs["rng_state"] = RngState.capture(rng, generator)
    return net, curve


class OdrlPolicy:
    """greedy (or sampled) wrapper that plays a trained network inside an episode"""

    name = "odrl"

    def __init__(self, net: OdrlNetwork, greedy: bool = True, seed: int = 0):
        self.net = net
        self.greedy = greedy
        self.generator = torch.Generator().manual_seed(seed)
        self.hidden = net.initial_hidden()

    def begin(self, state: EnvState) -> None:
        self.hidden = self.net.initial_hidden()

    def select(self, state: EnvState) -> Action:
        with torch.no_grad():
            out = self.net(Observation.of(state), self.hidden)
        self.hidden = out.hidden
        node, edit = select_action(out, self.greedy, self.generator)
        return action_from_index(state, node, edit)


def save_checkpoint(
    path: "str | Path",
    net: OdrlNetwork,
    cfg: TrainConfig,
    meta: Optional[Dict[str, Any]] = None,
    rng_state: Optional[RngState] = None,
) -> None:
    """versioned checkpoint: parameters, TrainConfig, network shape, metadata and RNG state

    without rng_state only the global torch state is recorded
    """
    if rng_state is None:
        rng = {"numpy": None, "generator": None, "torch_global": torch.get_rng_state()}
    else:
        rng = asdict(rng_state)
    torch.save(
        {
            "version": CHECKPOINT_VERSION,
            "state_dict": net.state_dict(),
            "train_config": asdict(cfg),
            "shape": {"n_nodes": net.n_nodes, "n_candidates": net.n_candidates, "d_h": net.d_h},
            "meta": meta or {},
            "rng_state": rng,
        },
        path,
    )


def _read_checkpoint(path: "str | Path") -> Dict[str, Any]:
    try:
        blob = torch.load(path, map_location="cpu", weights_only=False)
    except FileNotFoundError:
        raise ConfigError(f"ERROR: checkpoint {path} does not exist") from None
    if blob.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"ERROR: unsupported checkpoint version {blob.get('version')}")
    return blob


def load_checkpoint(path: "str | Path") -> Tuple[OdrlNetwork, TrainConfig, Dict[str, Any]]:
    blob = _read_checkpoint(path)
    shape = blob["shape"]
    net = OdrlNetwork(shape["n_nodes"], shape["n_candidates"], shape["d_h"])
    net.load_state_dict(blob["state_dict"])
    net.eval()
    return net, TrainConfig(**blob["train_config"]), blob["meta"]


def load_rng_state(path: "str | Path") -> Optional[RngState]:
    """the training RngState stored with a checkpoint, None when only the torch state was saved"""
    state = _read_checkpoint(path)["rng_state"]
    if state["numpy"] is None:
        return None
    return RngState(**state)
