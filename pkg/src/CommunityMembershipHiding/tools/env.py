"""
env.py - the community-membership-hiding decision process.

The target and its proxies spend a budget of edge toggles; after every toggle
the black-box detector is re-run and the reward measures the relative drop of
the target's best similarity to its original community, plus 1 once hidden.

States are immutable: reset/step return new EnvState values, so an episode can
be replayed or branched without copying.
"""

import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import FrozenSet, IO, List, Optional, Sequence, Tuple

import numpy as np

from CommunityMembershipHiding.config.settings import DetectorConfig
from CommunityMembershipHiding.tools.detectors import CommunityCover, communities_of, detect
from CommunityMembershipHiding.utils.errors import (
    ConfigError,
    IneligibleTargetError,
    InvalidActionError,
    MissingNodeError,
    ProtocolError,
)
from CommunityMembershipHiding.utils.graph_core import Graph, ProxySet, inject_proxies, toggle_edge
from CommunityMembershipHiding.utils.metrics import is_hidden, max_similarity

REWARD_LAMBDA = 0.1
ADD, DEL = "add", "del"


@dataclass(frozen=True)
class Action:
    """one edge toggle between a controlled node and an endpoint

    actor_index 0 is the target, i >= 1 the i-th proxy. `source` is only set by
    the ROAM baseline, whose reconnections join two non-controlled nodes; the
    edit is then (source, endpoint) and actor_index is ignored.
    """

    actor_index: int
    endpoint: int
    kind: str
    source: Optional[int] = None


@dataclass(frozen=True)
class EnvState:
    graph: Graph
    target: int
    proxies: ProxySet
    c_orig: FrozenSet[int]
    beta: int
    budget_left: int
    sim_prev: float
    step_index: int
    tau: float
    detector: DetectorConfig
    hidden: bool
    cover: CommunityCover
    original_cover: CommunityCover
    original_nodes: Tuple[int, ...]
    edit_log: Tuple[Tuple[int, int, str], ...] = ()
    reward_lambda: float = REWARD_LAMBDA

    @property
    def done(self) -> bool:
        return self.hidden or self.budget_left == 0

    @property
    def controlled(self) -> Tuple[int, ...]:
        return (self.target,) + self.proxies.proxy_ids

    def actor_node(self, actor_index: int) -> int:
        if not 0 <= actor_index < len(self.controlled):
            raise InvalidActionError(
                f"ERROR: actor index {actor_index} out of range [0, {len(self.controlled) - 1}]"
            )
        return self.controlled[actor_index]

    def endpoints(self, actor_index: int) -> List[int]:
        """candidate endpoints of an actor: every node but itself, in canonical order"""
        actor = self.actor_node(actor_index)
        return [v for v in self.graph.node_ids if v != actor]

    def final_cover(self) -> CommunityCover:
        """detector output on the current graph restricted to the original nodes"""
        return self.cover.restricted_to(self.original_nodes)


@dataclass(frozen=True)
class Transition:
    step: int
    actor: int
    endpoint: int
    kind: str
    reward: float
    sim_curr: float
    hidden: bool


def reset(
    g: Graph,
    target: int,
    detector: DetectorConfig,
    tau: float,
    k: int,
    p: float,
    beta: int,
    seed: int,
    c_orig: Optional[FrozenSet[int]] = None,
    original_cover: Optional[CommunityCover] = None,
    reward_lambda: float = REWARD_LAMBDA,
) -> EnvState:
    """start an episode: inject proxies (free of budget) and evaluate the detector

    Args:
        g (Graph) - original graph
        target (int) - node to hide
        detector (DetectorConfig) - detector run inside the environment
        tau (float) - hiding threshold
        k, p (int, float) - proxy count and proxy-proxy edge probability
        beta (int) - edit budget
        seed (int) - seed of the proxy subgraph (and of the community choice)
        c_orig (set | None) - community to hide from; None picks one of the target's
            communities in the detector's cover of g
        original_cover (CommunityCover | None) - detector output on g, to skip recomputation

    Returns:
        EnvState; already terminal when injection alone hides the target
    """
    if beta < 1:
        raise ConfigError(f"ERROR: edit budget beta must be >= 1, got {beta}")
    if target not in g:
        raise MissingNodeError(target)
    if original_cover is None:
        original_cover = detect(g, detector)
    own = communities_of(original_cover, target)
    if not own:
        raise IneligibleTargetError(
            f"ERROR: target {target} is not assigned to any {detector.name} community"
        )
    if c_orig is None:
        choices = sorted(own)
        c_orig = original_cover.communities[choices[np.random.default_rng(seed).integers(len(choices))]]
    c_orig = frozenset(c_orig)

    graph, proxies = inject_proxies(g, target, k, p, seed)
    cover = detect(graph, detector)
    return EnvState(
        graph=graph,
        target=target,
        proxies=proxies,
        c_orig=c_orig,
        beta=beta,
        budget_left=beta,
        sim_prev=max_similarity(c_orig, cover, target),
        step_index=0,
        tau=tau,
        detector=detector,
        hidden=is_hidden(c_orig, cover, target, tau),
        cover=cover,
        original_cover=original_cover,
        original_nodes=g.node_ids,
        reward_lambda=reward_lambda,
    )


def edit_index(s: EnvState, a: Action) -> int:
    """position of an action in its actor's 2(n-1) logits: 2*i for add, 2*i+1 for del"""
    actor = s.actor_node(a.actor_index)
    i = s.graph.index_of(a.endpoint)
    if a.endpoint == actor:
        raise InvalidActionError(f"ERROR: actor {actor} cannot edit an edge to itself")
    if i > s.graph.index_of(actor):
        i -= 1
    return 2 * i + (1 if a.kind == DEL else 0)


def action_from_index(s: EnvState, actor_index: int, index: int) -> Action:
    endpoints = s.endpoints(actor_index)
    if not 0 <= index < 2 * len(endpoints):
        raise InvalidActionError(f"ERROR: edit index {index} out of range")
    return Action(actor_index, endpoints[index // 2], DEL if index % 2 else ADD)


def edit_mask(graph: Graph, actor: int) -> np.ndarray:
    """boolean mask over actor's 2(n-1) edits: add(v) iff edge absent, del(v) iff present"""
    nbrs = graph.neighbors(actor)
    present = np.array([v in nbrs for v in graph.node_ids if v != actor], dtype=bool)
    mask = np.empty(2 * present.size, dtype=bool)
    mask[0::2] = ~present
    mask[1::2] = present
    return mask


def valid_action_mask(s: EnvState, actor_index: int) -> np.ndarray:
    return edit_mask(s.graph, s.actor_node(actor_index))


def _check_action(s: EnvState, a: Action) -> Tuple[int, int]:
    if a.kind not in (ADD, DEL):
        raise InvalidActionError(f"ERROR: unknown edit kind '{a.kind}'")
    u = a.source if a.source is not None else s.actor_node(a.actor_index)
    if u not in s.graph or a.endpoint not in s.graph:
        raise InvalidActionError(f"ERROR: edit ({u}, {a.endpoint}) names an unknown node")
    if u == a.endpoint:
        raise InvalidActionError(f"ERROR: edit ({u}, {a.endpoint}) is a self-loop")
    if s.graph.has_edge(u, a.endpoint) != (a.kind == DEL):
        raise InvalidActionError(
            f"ERROR: masked action {a.kind}({u}, {a.endpoint}): edge "
            f"{'present' if a.kind == ADD else 'absent'}"
        )
    return u, a.endpoint


def step(s: EnvState, a: Action) -> Tuple[EnvState, float, bool]:
    """apply one edit, re-run the detector and score the new similarity

    Returns:
        (next state, reward, done)
    """
    if s.done:
        raise ProtocolError("ERROR: step() called on a finished episode")
    u, v = _check_action(s, a)

    graph = toggle_edge(s.graph, u, v)
    cover = detect(graph, s.detector)
    sim_curr = max_similarity(s.c_orig, cover, s.target)
    delta = (s.sim_prev - sim_curr) / s.sim_prev if s.sim_prev > 0 else 0.0
    delta = float(np.clip(delta, -1.0, 1.0))
    hidden = is_hidden(s.c_orig, cover, s.target, s.tau)
    reward = s.reward_lambda * delta + (1.0 if hidden else 0.0)

    nxt = replace(
        s,
        graph=graph,
        cover=cover,
        sim_prev=sim_curr,
        hidden=hidden,
        budget_left=s.budget_left - 1,
        step_index=s.step_index + 1,
        edit_log=s.edit_log + ((u, v, a.kind),),
    )
    return nxt, reward, nxt.done


def transition_record(s: EnvState, reward: float) -> Transition:
    """summary of the step that produced s"""
    u, v, kind = s.edit_log[-1]
    return Transition(s.step_index, u, v, kind, float(reward), s.sim_prev, s.hidden)


def dump_trajectory(transitions: Sequence[Transition], out: "IO | str | Path") -> None:
    """write transitions as JSON lines (step, actor, endpoint, kind, reward, sim_curr, hidden)"""
    lines = "".join(json.dumps(asdict(t)) + "\n" for t in transitions)
    if hasattr(out, "write"):
        out.write(lines)
        return
    Path(out).write_text(lines, encoding="utf-8")
