"""
graph_core.py - immutable undirected simple graph with edge toggling,
    proxy-node injection, budget arithmetic and betweenness centrality.

Graph values never change after construction: toggle_edge and inject_proxies
return new Graph objects, so a graph can be shared freely between trials.
"""

import math
from dataclasses import dataclass
from typing import Dict, FrozenSet, IO, Iterable, List, Mapping, Tuple, Union

import networkx as nx

from CommunityMembershipHiding.config.logger import get_logger
from CommunityMembershipHiding.utils.errors import (
    EmptyInputError,
    MissingNodeError,
    ParseError,
    SelfLoopError,
)

logger = get_logger(__name__)

Edge = Tuple[int, int]


def _edge(u: int, v: int) -> Edge:
    return (u, v) if u < v else (v, u)


class Graph:
    """undirected simple graph over integer node ids

    Nodes are kept in ascending id order; that order is the canonical node
    index used by the environment and the agent.
    """

    __slots__ = ("_adj", "_nodes", "_m", "_index")

    def __init__(self, nodes: Iterable[int], edges: Iterable[Edge] = ()):
        adj: Dict[int, set] = {int(v): set() for v in nodes}
        for u, v in edges:
            u, v = int(u), int(v)
            if u == v:
                raise SelfLoopError(f"ERROR: self-loop on node {u} is not allowed")
            if u not in adj:
                raise MissingNodeError(u)
            if v not in adj:
                raise MissingNodeError(v)
            adj[u].add(v)
            adj[v].add(u)
        self._init(
            {v: frozenset(adj[v]) for v in sorted(adj)},
            sum(len(n) for n in adj.values()) // 2,
        )

    def _init(self, adj: Dict[int, FrozenSet[int]], m: int) -> None:
        self._adj = adj
        self._nodes = tuple(adj)
        self._m = m
        self._index = None

    @classmethod
    def _from_adjacency(cls, adj: Dict[int, FrozenSet[int]], m: int) -> "Graph":
        g = cls.__new__(cls)
        g._init(adj, m)
        return g

    @property
    def node_ids(self) -> Tuple[int, ...]:
        return self._nodes

    @property
    def n(self) -> int:
        return len(self._nodes)

    @property
    def m(self) -> int:
        return self._m

    @property
    def edges(self) -> FrozenSet[Edge]:
        return frozenset(_edge(u, v) for u, nbrs in self._adj.items() for v in nbrs if u < v)

    def __contains__(self, node: int) -> bool:
        return node in self._adj

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Graph) and self._adj == other._adj

    def __hash__(self) -> int:
        return hash((self._nodes, self.edges))

    def __repr__(self) -> str:
        return f"Graph(n={self.n}, m={self.m})"

    def neighbors(self, node: int) -> FrozenSet[int]:
        try:
            return self._adj[node]
        except KeyError:
            raise MissingNodeError(node) from None

    def degree(self, node: int) -> int:
        return len(self.neighbors(node))

    def degrees(self) -> Dict[int, int]:
        return {v: len(nbrs) for v, nbrs in self._adj.items()}

    def has_edge(self, u: int, v: int) -> bool:
        return v in self.neighbors(u)

    def index_of(self, node: int) -> int:
        """position of node in the canonical (ascending id) node order"""
        if self._index is None:
            self._index = {v: i for i, v in enumerate(self._nodes)}
        try:
            return self._index[node]
        except KeyError:
            raise MissingNodeError(node) from None

    def sorted_edges(self) -> List[Edge]:
        return sorted(self.edges)

    def subgraph(self, nodes: Iterable[int]) -> "Graph":
        keep = set(nodes)
        adj = {v: self._adj[v] & keep for v in sorted(keep)}
        return Graph._from_adjacency(adj, sum(len(n) for n in adj.values()) // 2)

    def to_networkx(self) -> nx.Graph:
        """networkx copy with nodes and edges inserted in sorted order (deterministic iteration)"""
        g = nx.Graph()
        g.add_nodes_from(self._nodes)
        g.add_edges_from(self.sorted_edges())
        return g

    def to_edge_list(self) -> str:
        """serialize to the edge-list text format read by load_edge_list

        isolated nodes cannot be expressed in that format and are lost
        """
        return "".join(f"{u} {v}\n" for u, v in self.sorted_edges())


@dataclass(frozen=True)
class ProxySet:
    proxy_ids: Tuple[int, ...]
    target_id: int
    edge_prob: float
    seed: int

    @property
    def k(self) -> int:
        return len(self.proxy_ids)


@dataclass(frozen=True)
class Budget:
    beta: int
    multiplier: float
    mu: float


def load_edge_list(text: Union[IO, bytes, str]) -> Graph:
    """read a whitespace-separated edge list into a simple undirected graph

    Args:
        text (byte stream | text stream | bytes | str) - one edge per line; lines starting
            with '#' or '%' are comments. Columns after the first two (weights,
            timestamps in KONECT dumps) are ignored.

    Returns:
        Graph with duplicate edges collapsed and self-loops dropped
    """
    if hasattr(text, "read"):
        text = text.read()
    if isinstance(text, bytes):
        text = text.decode("utf-8")

    nodes = set()
    edges = set()
    self_loops = 0
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#%":
            continue
        tokens = line.split()
        if len(tokens) < 2:
            raise ParseError(line_no, f"expected two node ids, got {line!r}")
        try:
            u, v = int(tokens[0]), int(tokens[1])
        except ValueError:
            raise ParseError(line_no, f"node ids must be integers, got {line!r}") from None
        nodes.update((u, v))
        if u == v:
            self_loops += 1
            continue
        edges.add(_edge(u, v))

    if not nodes:
        raise EmptyInputError("ERROR: edge list holds no nodes")
    if self_loops:
        logger.warning(f"dropped {self_loops} self-loop(s) while reading edge list")
    return Graph(nodes, edges)


def toggle_edge(g: Graph, u: int, v: int) -> Graph:
    """add edge (u,v) if absent, remove it if present; returns a new graph"""
    if u == v:
        raise SelfLoopError(f"ERROR: cannot toggle self-loop on node {u}")
    nu, nv = g.neighbors(u), g.neighbors(v)
    adj = dict(g._adj)
    if v in nu:
        adj[u], adj[v] = nu - {v}, nv - {u}
        return Graph._from_adjacency(adj, g.m - 1)
    adj[u], adj[v] = nu | {v}, nv | {u}
    return Graph._from_adjacency(adj, g.m + 1)


def inject_proxies(g: Graph, target: int, k: int, p: float, seed: int) -> Tuple[Graph, ProxySet]:
    """add k proxy nodes wired as an Erdos-Renyi G(k, p) graph, all attached to target

    Args:
        g (Graph) - original graph
        target (int) - node the proxies attach to
        k (int) - number of proxies (>= 0)
        p (float) - proxy-proxy edge probability
        seed (int) - seed of the random proxy subgraph

    Returns:
        (perturbed graph, ProxySet); proxy ids are max(node_ids)+1, +2, ...
    """
    if target not in g:
        raise MissingNodeError(target)
    if k < 0:
        raise ValueError(f"ERROR: proxy count must be >= 0, got {k}")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"ERROR: edge probability must be in [0,1], got {p}")

    first = max(g.node_ids) + 1
    proxy_ids = tuple(range(first, first + k))
    proxies = ProxySet(proxy_ids, target, p, seed)
    if k == 0:
        return g, proxies

    er = nx.gnp_random_graph(k, p, seed=seed)
    adj = dict(g._adj)
    new_adj = {pid: {target} for pid in proxy_ids}
    for a, b in er.edges():
        new_adj[first + a].add(first + b)
        new_adj[first + b].add(first + a)
    adj[target] = adj[target] | set(proxy_ids)
    adj.update({pid: frozenset(nbrs) for pid, nbrs in new_adj.items()})
    return Graph._from_adjacency(adj, g.m + k + er.number_of_edges()), proxies


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def budget_from_mu(g: Graph, multiplier: float, kar_adjust: bool = False) -> Budget:
    """edit budget beta = max(1, round_half_up(multiplier * mu)) with mu = |E|/|V| (+1 for kar)"""
    if multiplier <= 0:
        raise ValueError(f"ERROR: budget multiplier must be > 0, got {multiplier}")
    mu = g.m / g.n + (1.0 if kar_adjust else 0.0)
    return Budget(max(1, round_half_up(multiplier * mu)), multiplier, mu)


def betweenness(g: Graph) -> Mapping[int, float]:
    """unnormalized shortest-path betweenness (Brandes) of every node

    each unordered pair of endpoints is counted once, so the centre of a star
    K_{1,4} scores 6. Only the argmax is consumed by the baselines.
    """
    return nx.betweenness_centrality(g.to_networkx(), normalized=False)
