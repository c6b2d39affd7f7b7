"""
detectors.py - black-box community detection f(G).

Reference implementations of two overlapping detectors (DEMON and ANGEL,
both ego-network label propagation with containment-overlap merging) and of
Louvain for the non-overlapping comparison. Every detector is a pure function
of (graph, DetectorConfig): the same inputs give the same cover, and
relabeling the nodes relabels the cover the same way.

Ties are never broken by node id. Each node gets a structural key (degree,
then a seeded random rank of its Weisfeiler-Lehman class); nodes sharing a key
are indistinguishable and are always treated alike.
"""

import hashlib
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Dict, FrozenSet, Hashable, Iterable, List, Sequence, Set, Tuple

import networkx as nx
import numpy as np

from CommunityMembershipHiding.config.logger import get_logger
from CommunityMembershipHiding.config.settings import DetectorConfig
from CommunityMembershipHiding.utils.errors import ConfigError, EmptyInputError, ParseError
from CommunityMembershipHiding.utils.graph_core import Graph

logger = get_logger(__name__)

MAX_SWEEPS = 100
MAX_LOUVAIN_PASSES = 100
WL_ITERATIONS = 3

NodeKey = Tuple[int, float, str]


@dataclass(frozen=True)
class CommunityCover:
    communities: Tuple[FrozenSet[int], ...]
    detector_name: str
    seed: int

    def __len__(self) -> int:
        return len(self.communities)

    def communities_of(self, u: int) -> Set[int]:
        return communities_of(self, u)

    def restricted_to(self, universe: Iterable[int]) -> "CommunityCover":
        """drop nodes outside universe (e.g. proxies) and any community left empty"""
        keep = frozenset(universe)
        comms = tuple(c & keep for c in self.communities if c & keep)
        return CommunityCover(comms, self.detector_name, self.seed)

    def to_text(self) -> str:
        """one community per line, space-separated ascending node ids"""
        return "".join(" ".join(str(v) for v in sorted(c)) + "\n" for c in self.communities)

    @classmethod
    def from_text(cls, text: str, detector_name: str = "file", seed: int = 0) -> "CommunityCover":
        comms = []
        for line_no, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                comms.append(frozenset(int(tok) for tok in line.split()))
            except ValueError:
                raise ParseError(line_no, f"community members must be integers, got {line!r}")
        return cls(tuple(comms), detector_name, seed)


def communities_of(cover: CommunityCover, u: int) -> Set[int]:
    """indices of every community of the cover that contains u (possibly empty)"""
    return {i for i, c in enumerate(cover.communities) if u in c}


def containment(a: FrozenSet[int], b: FrozenSet[int]) -> float:
    return len(a & b) / min(len(a), len(b))


class _UnionFind:
    def __init__(self):
        self.parent: Dict[Hashable, Hashable] = {}

    def find(self, x: Hashable) -> Hashable:
        root = x
        while self.parent.get(root, root) != root:
            root = self.parent[root]
        while x != root:
            self.parent[x], x = root, self.parent.get(x, x)
        return root

    def union(self, a: Hashable, b: Hashable) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[rb] = ra
        return True


def merge_communities(candidates: Iterable[Iterable[int]], phi: float) -> List[FrozenSet[int]]:
    """fuse communities whose containment overlap |A&B|/min(|A|,|B|) reaches phi

    Works in rounds until nothing changes: communities strictly inside another
    are dropped, then every group of communities linked by containment >= phi
    is replaced by its union. The result does not depend on the candidate
    order (only its listing does: by first contributing candidate), has no
    pair above phi, and a second pass changes nothing.
    """
    rank: Dict[FrozenSet[int], int] = {}
    for cand in candidates:
        comm = frozenset(cand)
        if comm and comm not in rank:
            rank[comm] = len(rank)
    pool = list(rank)

    while True:
        index: Dict[int, List[int]] = defaultdict(list)
        for i, comm in enumerate(pool):
            for v in comm:
                index[v].append(i)
        overlaps = [Counter(j for v in comm for j in index[v] if j != i) for i, comm in enumerate(pool)]

        inside = {
            i
            for i, comm in enumerate(pool)
            if any(shared == len(comm) for shared in overlaps[i].values())
        }
        if inside:
            pool = [comm for i, comm in enumerate(pool) if i not in inside]
            continue

        links = _UnionFind()
        linked = False
        for i, comm in enumerate(pool):
            for j, shared in overlaps[i].items():
                if shared / min(len(comm), len(pool[j])) >= phi:
                    linked |= links.union(i, j)
        if not linked:
            return sorted(pool, key=rank.__getitem__)

        groups: Dict[Hashable, List[int]] = defaultdict(list)
        for i in range(len(pool)):
            groups[links.find(i)].append(i)
        fused = []
        for members in groups.values():
            union = frozenset().union(*(pool[i] for i in members))
            rank[union] = min(min(rank[pool[i]] for i in members), rank.get(union, len(rank)))
            fused.append(union)
        pool = list(dict.fromkeys(fused))


def _seeded_rank(seed: int, signature: str) -> float:
    return float(np.random.default_rng([abs(seed), int(signature, 16)]).random())


def structural_keys(g: Graph, seed: int = 0) -> Dict[int, NodeKey]:
    """(degree, seeded rank, Weisfeiler-Lehman hash) for every node

    Equal keys mean the nodes cannot be told apart by their neighbourhoods, so
    any rule using these keys treats them alike whatever their ids.
    """
    nxg = g.to_networkx()
    hashes = nx.weisfeiler_lehman_subgraph_hashes(nxg, iterations=WL_ITERATIONS)
    ranks: Dict[str, float] = {}
    keys = {}
    for v in g.node_ids:
        label = hashes[v][-1]
        if label not in ranks:
            ranks[label] = _seeded_rank(seed, label)
        keys[v] = (nxg.degree(v), ranks[label], label)
    return keys


def label_propagation(
    h: nx.Graph, keys: Dict[int, NodeKey], max_sweeps: int = MAX_SWEEPS
) -> List[FrozenSet[int]]:
    """synchronous label propagation, at most max_sweeps sweeps

    Every sweep each node takes the most frequent label over its closed
    neighbourhood, all nodes at once. A label carries the key of the node it
    started on; ties go to the label with the highest key. Labels tied on
    the same key are fused into one. Stops when a sweep changes nothing.

    Args:
        h (nx.Graph) - graph to partition
        keys (Dict[int, NodeKey]) - structural key of every node of h
        max_sweeps (int) - sweep cap

    Returns:
        the groups of nodes sharing a final label
    """
    labels = {v: v for v in h}
    fusions = _UnionFind()
    for _ in range(max_sweeps):
        fused = False
        chosen = {}
        for v in h:
            counts = Counter(labels[u] for u in h[v])
            counts[labels[v]] += 1
            top = max(counts.values())
            best = max(keys[label] for label, count in counts.items() if count == top)
            tied = [label for label, count in counts.items() if count == top and keys[label] == best]
            for other in tied[1:]:
                fused |= fusions.union(tied[0], other)
            chosen[v] = tied[0]
        chosen = {v: fusions.find(label) for v, label in chosen.items()}
        if not fused and chosen == labels:
            break
        labels = chosen

    groups: Dict[int, Set[int]] = defaultdict(set)
    for v, label in labels.items():
        groups[label].add(v)
    return [frozenset(group) for group in groups.values()]


def _finalize(
    comms: List[FrozenSet[int]], min_size: int, name: str, seed: int
) -> CommunityCover:
    kept = sorted((c for c in comms if len(c) >= min_size), key=lambda c: (-len(c), sorted(c)))
    return CommunityCover(tuple(kept), name, seed)


def demon_detect(g: Graph, phi: float = 0.8, min_size: int = 3, seed: int = 0) -> CommunityCover:
    """DEMON: label propagation on every ego-minus-ego network, ego re-inserted, merged at phi

    Args:
        g (Graph) - input graph
        phi (float) - containment-overlap merge threshold
        min_size (int) - communities smaller than this are dropped after merging
        seed (int) - seeds the tie-break ranks of the label propagation

    Returns:
        an overlapping CommunityCover (nodes may repeat or be unassigned)
    """
    keys = structural_keys(g, seed)
    nxg = g.to_networkx()
    local = []
    for v in g.node_ids:
        for comm in label_propagation(nxg.subgraph(nxg[v]), keys):
            local.append(comm | {v})
    return _finalize(merge_communities(local, phi), min_size, "demon", seed)


def angel_detect(g: Graph, phi: float = 0.8, min_size: int = 3, seed: int = 0) -> CommunityCover:
    """ANGEL: bottom-up variant, label propagation on the full ego network (ego included)

    egos are visited by descending structural key and isolated nodes are
    skipped; the local communities are merged into one cover at phi
    """
    keys = structural_keys(g, seed)
    nxg = g.to_networkx()
    local = []
    for v in sorted(g.node_ids, key=keys.__getitem__, reverse=True):
        if keys[v][0] == 0:
            continue
        local.extend(label_propagation(nxg.subgraph(set(nxg[v]) | {v}), keys))
    return _finalize(merge_communities(local, phi), min_size, "angel", seed)


def _signature(parts: Sequence[str]) -> str:
    return hashlib.blake2b("|".join(sorted(parts)).encode(), digest_size=16).hexdigest()


def _local_moves(
    adj: List[Dict[int, int]], loops: List[int], signatures: List[str], seed: int, two_m: int
) -> List[int]:
    """one Louvain level: move nodes between communities while modularity grows

    Nodes sharing a signature form a block. Blocks are visited in seeded
    random order and all nodes of a block decide against the same state.
    Gains are kept as integers (scaled by 2m^2) so equal gains compare equal;
    a node tied between several best communities fuses them.
    """
    n = len(adj)
    degree = [loops[u] + sum(adj[u].values()) for u in range(n)]
    comm = list(range(n))
    members: Dict[int, Set[int]] = {u: {u} for u in range(n)}
    total = {u: degree[u] for u in range(n)}

    by_signature: Dict[str, List[int]] = defaultdict(list)
    for u, sig in enumerate(signatures):
        by_signature[sig].append(u)
    blocks = [by_signature[sig] for sig in sorted(by_signature, key=lambda s: (_seeded_rank(seed, s), s))]

    for _ in range(MAX_LOUVAIN_PASSES):
        moved = False
        for block in blocks:
            plans = []
            for u in block:
                own = comm[u]
                links: Dict[int, int] = defaultdict(int)
                for v, w in adj[u].items():
                    links[comm[v]] += w
                best = two_m * links.get(own, 0) - degree[u] * (total[own] - degree[u])
                targets: List[int] = []
                for c, w in links.items():
                    if c == own:
                        continue
                    gain = two_m * w - degree[u] * total[c]
                    if gain > best:
                        best, targets = gain, [c]
                    elif gain == best and targets:
                        targets.append(c)
                if targets:
                    plans.append((u, targets))
            if not plans:
                continue
            moved = True

            fusions = _UnionFind()
            for u, targets in plans:
                for c in targets[1:]:
                    fusions.union(targets[0], c)
            for u, _ in plans:
                members[comm[u]].discard(u)
                total[comm[u]] -= degree[u]
            for c in {c for _, targets in plans for c in targets}:
                root = fusions.find(c)
                if root != c and c in members:
                    for x in members.pop(c):
                        comm[x] = root
                        members[root].add(x)
                    total[root] += total.pop(c)
            for u, targets in plans:
                dest = fusions.find(targets[0])
                comm[u] = dest
                members[dest].add(u)
                total[dest] += degree[u]
        if not moved:
            break
    return comm


def louvain_detect(g: Graph, seed: int = 0) -> CommunityCover:
    """Louvain modularity maximization; a partition of all nodes

    Local moves run in seeded random block order (see _local_moves), then
    communities are collapsed into weighted nodes and the next level starts.
    Stops once a level moves nothing. Every level makes at most
    MAX_LOUVAIN_PASSES passes, so the detector always terminates.
    """
    keys = structural_keys(g, seed)
    index = {v: i for i, v in enumerate(g.node_ids)}
    adj: List[Dict[int, int]] = [{} for _ in g.node_ids]
    for u, v in g.edges:
        adj[index[u]][index[v]] = adj[index[v]][index[u]] = 1
    loops = [0] * g.n
    signatures = [keys[v][2] for v in g.node_ids]
    groups = [[v] for v in g.node_ids]

    while g.m:
        comm = _local_moves(adj, loops, signatures, seed, 2 * g.m)
        renumber = {c: i for i, c in enumerate(dict.fromkeys(comm))}
        if len(renumber) == len(adj):
            break
        size = len(renumber)
        next_adj: List[Dict[int, int]] = [defaultdict(int) for _ in range(size)]
        next_loops = [0] * size
        parts: List[List[str]] = [[] for _ in range(size)]
        next_groups: List[List[int]] = [[] for _ in range(size)]
        for u, c in enumerate(comm):
            cu = renumber[c]
            next_loops[cu] += loops[u]
            parts[cu].append(signatures[u])
            next_groups[cu].extend(groups[u])
            for v, w in adj[u].items():
                cv = renumber[comm[v]]
                if cu == cv:
                    next_loops[cu] += w
                else:
                    next_adj[cu][cv] += w
        adj = [dict(a) for a in next_adj]
        loops, groups = next_loops, next_groups
        signatures = [_signature(p) for p in parts]

    comms = sorted((frozenset(c) for c in groups), key=lambda c: (-len(c), sorted(c)))
    return CommunityCover(tuple(comms), "louvain", seed)


def detect(g: Graph, cfg: DetectorConfig) -> CommunityCover:
    """run the detector named by cfg on g (deterministic given cfg.seed)"""
    if g.n == 0:
        raise EmptyInputError("ERROR: cannot run community detection on an empty graph")
    if cfg.name == "demon":
        cover = demon_detect(g, cfg.phi, cfg.min_size, cfg.seed)
    elif cfg.name == "angel":
        cover = angel_detect(g, cfg.phi, cfg.min_size, cfg.seed)
    elif cfg.name == "louvain":
        cover = louvain_detect(g, cfg.seed)
    else:
        raise ConfigError(f"ERROR: unknown detector '{cfg.name}'")
    logger.debug(f"{cfg.name} on {g!r}: {len(cover)} communities")
    return cover
