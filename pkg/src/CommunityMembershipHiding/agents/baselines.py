"""
baselines.py - heuristic hiding strategies, all acting on the same
    proxy-injected state and through the same env.step loop as the agent.

    - naive       : inject proxies and stop (zero budgeted edits)
    - random      : uniform (actor, endpoint) toggle
    - degree      : highest-degree actor toggles its edge to the highest-degree endpoint
    - betweenness : as degree, scored by betweenness centrality
    - roam        : cut the target from its highest-degree neighbour, then wire that
                    neighbour to the target's other neighbours
"""

from typing import Dict, List, Mapping, Optional

import numpy as np

from CommunityMembershipHiding.config.logger import get_logger
from CommunityMembershipHiding.tools.env import ADD, DEL, Action, EnvState
from CommunityMembershipHiding.utils.errors import ConfigError, ExhaustedError, ProtocolError
from CommunityMembershipHiding.utils.graph_core import Graph, betweenness, inject_proxies

logger = get_logger(__name__)

HEURISTIC_KINDS = ("random", "degree", "betweenness", "roam", "naive")


def naive_connection(g: Graph, target: int, k: int, p: float, seed: int) -> Graph:
    """proxy injection alone: the inject_proxies graph, no budgeted edits"""
    graph, _ = inject_proxies(g, target, k, p, seed)
    return graph


def _toggle(s: EnvState, actor_index: int, endpoint: int) -> Action:
    actor = s.actor_node(actor_index)
    return Action(actor_index, endpoint, DEL if s.graph.has_edge(actor, endpoint) else ADD)


def _touched(s: EnvState) -> set:
    return {frozenset((u, v)) for u, v, _ in s.edit_log}


def _best_pair(s: EnvState, scores: Mapping[int, float]) -> Action:
    """actor = controlled node with the top score; endpoint = top-scored non-self node

    pairs already toggled this episode are skipped (undoing an edit wastes budget)
    unless nothing else is left; ties go to the smallest node id
    """
    ranked = lambda nodes: sorted(nodes, key=lambda v: (-scores[v], v))
    actor = ranked(s.controlled)[0]
    actor_index = s.controlled.index(actor)
    touched = _touched(s)
    endpoints = [v for v in ranked(s.graph.node_ids) if v != actor]
    if not endpoints:
        raise ExhaustedError(f"ERROR: actor {actor} has no endpoint to toggle")
    fresh = [v for v in endpoints if frozenset((actor, v)) not in touched]
    return _toggle(s, actor_index, (fresh or endpoints)[0])


def heuristic_step(
    s: EnvState,
    kind: str,
    seed: int,
    centrality: Optional[Mapping[int, float]] = None,
) -> Action:
    """next edit of a heuristic baseline

    Args:
        s (EnvState) - current, non-terminal state
        kind (str) - "random", "degree" or "betweenness"
        seed (int) - random baseline seed (combined with the step index)
        centrality (mapping | None) - precomputed betweenness scores; recomputed on
            the current graph when None

    Returns:
        an unmasked Action
    """
    if s.done:
        raise ProtocolError("ERROR: heuristic_step() called on a finished episode")
    if s.graph.n < 2:
        raise ExhaustedError("ERROR: no valid action on a single-node graph")
    if kind == "random":
        rng = np.random.default_rng([seed, s.step_index])
        actor_index = int(rng.integers(len(s.controlled)))
        endpoints = s.endpoints(actor_index)
        return _toggle(s, actor_index, endpoints[int(rng.integers(len(endpoints)))])
    if kind == "degree":
        return _best_pair(s, s.graph.degrees())
    if kind == "betweenness":
        return _best_pair(s, centrality if centrality is not None else betweenness(s.graph))
    raise ConfigError(f"ERROR: '{kind}' is not a step-wise heuristic")


def roam_rewire(s: EnvState, budget: int) -> List[Action]:
    """ROAM plan: del(target, v*) for the highest-degree neighbour v*, then add(v*, w)
    for the target's remaining neighbours w not yet adjacent to v* (smallest id first)

    reconnections join two non-controlled nodes and are emitted as `source` actions
    """
    t = s.target
    nbrs = sorted(s.graph.neighbors(t))
    if not nbrs:
        logger.warning(f"ROAM: target {t} is isolated, nothing to rewire")
        return []
    if budget < 1:
        return []
    degrees = s.graph.degrees()
    v_star = min(nbrs, key=lambda v: (-degrees[v], v))
    plan = [Action(0, v_star, DEL)]
    for w in nbrs:
        if len(plan) >= budget:
            break
        if w == v_star or s.graph.has_edge(v_star, w):
            continue
        plan.append(Action(0, w, ADD, source=v_star))
    return plan


class HeuristicPolicy:
    """episode driver for the heuristic baselines (same interface as OdrlPolicy)"""

    def __init__(self, kind: str, seed: int = 0, recompute_centrality: bool = True):
        if kind not in HEURISTIC_KINDS or kind == "naive":
            raise ConfigError(f"ERROR: '{kind}' is not a rewiring heuristic")
        self.name = kind
        self.seed = seed
        self.recompute_centrality = recompute_centrality
        self._plan: List[Action] = []
        self._centrality: Optional[Dict[int, float]] = None

    def begin(self, state: EnvState) -> None:
        self._plan = roam_rewire(state, state.budget_left) if self.name == "roam" else []
        self._centrality = None
        if self.name == "betweenness" and not self.recompute_centrality:
            self._centrality = dict(betweenness(state.graph))

    def select(self, state: EnvState) -> Optional[Action]:
        """next action, or None when the strategy has nothing left to do"""
        if self.name == "roam":
            return self._plan.pop(0) if self._plan else None
        return heuristic_step(state, self.name, self.seed, self._centrality)


class NaivePolicy:
    """proxy injection only: the episode ends before any budgeted edit"""

    name = "naive"

    def begin(self, state: EnvState) -> None:
        pass

    def select(self, state: EnvState) -> Optional[Action]:
        return None


def make_baseline(kind: str, seed: int = 0, recompute_centrality: bool = True):
    if kind == "naive":
        return NaivePolicy()
    return HeuristicPolicy(kind, seed, recompute_centrality)
