"""
experiment.py - target sampling, trial execution and result tables for the
    symmetric and asymmetric hiding experiments, the naive-connection study
    and agent training on a registered dataset.
"""

import json
from dataclasses import dataclass, replace
from io import StringIO
from pathlib import Path
from typing import Any, Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from CommunityMembershipHiding.agents.baselines import make_baseline
from CommunityMembershipHiding.agents.odrl_agent import (
    OdrlNetwork,
    OdrlPolicy,
    load_checkpoint,
    train,
)
from CommunityMembershipHiding.config.logger import get_logger
from CommunityMembershipHiding.config.settings import (
    BUDGET_MULTIPLIERS,
    DetectorConfig,
    ExperimentConfig,
    with_detectors,
)
from CommunityMembershipHiding.tools.detectors import CommunityCover, detect
from CommunityMembershipHiding.tools.env import (
    EnvState,
    Transition,
    dump_trajectory,
    reset,
    step,
    transition_record,
)
from CommunityMembershipHiding.utils.datasets import dataset_info, load_dataset
from CommunityMembershipHiding.utils.errors import (
    ConfigError,
    EmptyInputError,
    IneligibleTargetError,
    SamplingError,
)
from CommunityMembershipHiding.utils.graph_core import Graph, budget_from_mu
from CommunityMembershipHiding.utils.metrics import Report, TrialRecord, aggregate, dice, onmi
from CommunityMembershipHiding.utils.results_plot import plot_f1_bars, save_figure

logger = get_logger(__name__)

SIZE_FRACTIONS = (0.3, 0.5, 0.8)
COMMUNITIES_PER_FRACTION = 3
MAX_COMMUNITY_SIMILARITY = 0.8

RESULT_COLUMNS = [
    "dataset", "beta", "k", "policy", "sr", "sr_lo", "sr_hi", "onmi", "f1", "f1_lo", "f1_hi", "n",
]

Target = Tuple[int, FrozenSet[int]]


def pick_communities(cover: CommunityCover) -> List[FrozenSet[int]]:
    """up to three communities per size fraction of the largest one

    for each fraction the candidates are ranked by |size - fraction * max size|
    (ties: larger community first, then smallest members); a candidate is taken
    only if its Dice with every community already picked is <= 0.8
    """
    if not cover.communities:
        raise SamplingError("ERROR: cannot sample targets from an empty cover")
    max_size = max(len(c) for c in cover.communities)
    picked: List[FrozenSet[int]] = []
    for fraction in SIZE_FRACTIONS:
        goal = fraction * max_size
        ranked = sorted(cover.communities, key=lambda c: (abs(len(c) - goal), -len(c), sorted(c)))
        taken = 0
        for comm in ranked:
            if taken == COMMUNITIES_PER_FRACTION:
                break
            if any(dice(comm, other) > MAX_COMMUNITY_SIMILARITY for other in picked):
                continue
            picked.append(comm)
            taken += 1
    if not picked:
        raise SamplingError(
            f"ERROR: no community satisfies the sampling constraints "
            f"(size fractions {SIZE_FRACTIONS}, pairwise Dice <= {MAX_COMMUNITY_SIMILARITY})"
        )
    return picked


def _eligible_owners(g: Graph, cover: CommunityCover) -> Dict[int, FrozenSet[int]]:
    """every graph node of the picked communities, mapped to the first picked community holding it"""
    picked = pick_communities(cover)
    wanted = len(SIZE_FRACTIONS) * COMMUNITIES_PER_FRACTION
    if len(picked) < wanted:
        logger.warning(f"sampler: only {len(picked)} of {wanted} communities satisfy the constraints")

    owner: Dict[int, FrozenSet[int]] = {}
    for comm in picked:
        for v in sorted(comm):
            if v in g:
                owner.setdefault(v, comm)
    if not owner:
        raise SamplingError("ERROR: picked communities hold no node of the graph")
    return owner


def sample_targets(g: Graph, cover: CommunityCover, cfg: ExperimentConfig, seed: int) -> List[Target]:
    """sample up to cfg.n_targets distinct (target, community) pairs

    Args:
        g (Graph) - original graph
        cover (CommunityCover) - detector output on g that defines the communities
        cfg (ExperimentConfig) - n_targets is read from here
        seed (int) - sampling seed

    Returns:
        list of (target node, community containing it); nodes are drawn uniformly
        without replacement from the pooled members of the picked communities
    """
    owner = _eligible_owners(g, cover)
    pool = sorted(owner)
    if len(pool) < cfg.n_targets:
        logger.warning(f"sampler: {len(pool)} eligible nodes, fewer than the {cfg.n_targets} requested")

    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(pool), size=min(cfg.n_targets, len(pool)), replace=False)
    return [(pool[i], owner[pool[i]]) for i in chosen]


def evaluation_targets(g: Graph, cfg: ExperimentConfig) -> Tuple[CommunityCover, List[Target]]:
    """(test cover, evaluation targets) of an experiment cell

    C_orig comes from the test detector, or from the training detector when
    cfg.c_orig_source is "train" in an asymmetric cell.
    """
    test_cover = detect(g, cfg.test_detector)
    source_cover = test_cover
    if cfg.c_orig_source == "train" and not cfg.symmetric:
        source_cover = detect(g, cfg.train_detector)
    return test_cover, sample_targets(g, source_cover, cfg, cfg.seed)


def training_targets(g: Graph, cover: CommunityCover, held_out: Iterable[int]) -> List[Target]:
    """every eligible (target, community) pair of the cover except the held-out nodes

    Raises:
        SamplingError - when the held-out nodes exhaust the pool
    """
    held_out = set(held_out)
    owner = _eligible_owners(g, cover)
    targets = [(v, owner[v]) for v in sorted(owner) if v not in held_out]
    if not targets:
        raise SamplingError(
            f"ERROR: all {len(owner)} eligible nodes are held out for evaluation, none left to train on"
        )
    return targets


def trial_seed(master: int, index: int) -> int:
    return int(np.random.default_rng([master, index]).integers(2**31))


class ResultsTable:
    """experiment results, one row per (dataset, beta, policy, k) cell"""

    def __init__(self, frame: Optional[pd.DataFrame] = None):
        self.frame = (
            pd.DataFrame(columns=RESULT_COLUMNS) if frame is None else frame[RESULT_COLUMNS].copy()
        )
        self.trials: Dict[Tuple, List[TrialRecord]] = {}

    def __len__(self) -> int:
        return len(self.frame)

    def add(
        self,
        dataset: str,
        beta: int,
        policy: str,
        k: int,
        report: Report,
        trials: Optional[Sequence[TrialRecord]] = None,
    ) -> None:
        row = {"dataset": dataset, "beta": beta, "k": k, "policy": policy, **report.to_dict()}
        key = (dataset, beta, policy, k)
        mask = (
            (self.frame["dataset"] == dataset)
            & (self.frame["beta"] == beta)
            & (self.frame["policy"] == policy)
            & (self.frame["k"] == k)
        )
        new = pd.DataFrame([row], columns=RESULT_COLUMNS)
        if len(self.frame) == 0:
            self.frame = new
        else:
            self.frame = pd.concat([self.frame[~mask], new], ignore_index=True)
        if trials is not None:
            self.trials[key] = list(trials)

    def merge(self, other: "ResultsTable") -> "ResultsTable":
        for _, row in other.frame.iterrows():
            key = (row["dataset"], int(row["beta"]), row["policy"], int(row["k"]))
            self.add(*key, Report.from_dict(row), other.trials.get(key))
        return self

    def report(self, dataset: str, beta: int, policy: str, k: int) -> Report:
        rows = self.frame[
            (self.frame["dataset"] == dataset)
            & (self.frame["beta"] == beta)
            & (self.frame["policy"] == policy)
            & (self.frame["k"] == k)
        ]
        if rows.empty:
            raise KeyError((dataset, beta, policy, k))
        return Report.from_dict(rows.iloc[0])

    def to_csv(self, path: "str | Path | None" = None) -> str:
        text = self.frame.to_csv(index=False, lineterminator="\n")
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    @classmethod
    def from_csv(cls, source: "str | Path") -> "ResultsTable":
        """read a CSV written by to_csv (a path, or the CSV text itself)"""
        if isinstance(source, Path) or "\n" not in str(source):
            source = Path(source).read_text(encoding="utf-8")
        frame = pd.read_csv(StringIO(source), float_precision="round_trip")
        missing = set(RESULT_COLUMNS) - set(frame.columns)
        if missing:
            raise ConfigError(f"ERROR: results CSV lacks columns {sorted(missing)}")
        return cls(frame)

    def to_json(self, path: "str | Path | None" = None) -> str:
        text = json.dumps(self.frame.to_dict(orient="records"), indent=2)
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    @classmethod
    def from_json(cls, source: "str | Path") -> "ResultsTable":
        if isinstance(source, Path) or not str(source).lstrip().startswith("["):
            source = Path(source).read_text(encoding="utf-8")
        return cls(pd.DataFrame(json.loads(source), columns=RESULT_COLUMNS))

    @classmethod
    def load(cls, path: "str | Path") -> "ResultsTable":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"ERROR: results file {path} does not exist")
        return cls.from_json(path) if path.suffix == ".json" else cls.from_csv(path)


@dataclass
class EpisodeFactory:
    """training episodes on one graph

    communities are those of the training targets, and a target is only ever
    drawn among the training nodes of its community
    """

    g: Graph
    targets: List[Target]
    detector: DetectorConfig
    cover: CommunityCover
    tau: float
    k: int
    p: float
    beta: int

    @property
    def n_nodes(self) -> int:
        return self.g.n + self.k

    @property
    def n_candidates(self) -> int:
        return self.k + 1

    @property
    def communities(self) -> List[FrozenSet[int]]:
        seen: List[FrozenSet[int]] = []
        for _, comm in self.targets:
            if comm not in seen:
                seen.append(comm)
        return seen

    def sample_community(self, rng: np.random.Generator) -> FrozenSet[int]:
        comms = self.communities
        return comms[int(rng.integers(len(comms)))]

    def sample_target(self, community: FrozenSet[int], rng: np.random.Generator) -> int:
        members = sorted(v for v, comm in self.targets if comm == community)
        return members[int(rng.integers(len(members)))]

    def reset(self, target: int, community: FrozenSet[int], seed: int) -> EnvState:
        return reset(
            self.g,
            target,
            self.detector,
            self.tau,
            self.k,
            self.p,
            self.beta,
            seed,
            c_orig=community,
            original_cover=self.cover,
        )


def budgets(g: Graph, dataset: str, cfg: ExperimentConfig) -> Tuple[int, int]:
    """(beta, k) for the config's multipliers of mu on g"""
    kar_adjust = dataset_info(dataset).kar_adjust
    beta = budget_from_mu(g, cfg.beta_multiplier, kar_adjust).beta
    k = budget_from_mu(g, cfg.k_multiplier, kar_adjust).beta
    return beta, k


def run_trial(
    g: Graph,
    target: Target,
    cfg: ExperimentConfig,
    policy,
    beta: int,
    k: int,
    seed: int,
    original_cover: CommunityCover,
) -> Tuple[TrialRecord, List[Transition]]:
    """one hiding attempt against cfg.test_detector, run until the episode ends

    Returns:
        (TrialRecord, per-step transitions)
    """
    node, community = target
    state = reset(
        g, node, cfg.test_detector, cfg.tau, k, cfg.p, beta, seed,
        c_orig=community, original_cover=original_cover,
    )
    policy.begin(state)
    transitions: List[Transition] = []
    while not state.done:
        action = policy.select(state)
        if action is None:
            break
        state, reward, _ = step(state, action)
        transitions.append(transition_record(state, reward))

    setting = f"{cfg.dataset}/{cfg.train_detector.name}->{cfg.test_detector.name}/beta={beta}/k={k}"
    record = TrialRecord(
        target=node,
        success=bool(state.hidden),
        onmi=onmi(original_cover, state.final_cover(), g.node_ids),
        edits_used=len(state.edit_log),
        setting=setting,
        seed=seed,
    )
    return record, transitions


def _odrl_network(cfg: ExperimentConfig, net: Optional[OdrlNetwork]) -> Tuple[OdrlNetwork, Dict[str, Any]]:
    if net is not None:
        return net, {}
    if cfg.checkpoint is None:
        raise ConfigError("ERROR: policy 'odrl' needs a checkpoint (--ckpt) or a trained network")
    net, _, meta = load_checkpoint(cfg.checkpoint)
    return net, meta


def run_experiment(
    cfg: ExperimentConfig,
    net: Optional[OdrlNetwork] = None,
    g: Optional[Graph] = None,
    trajectories: "str | Path | None" = None,
) -> ResultsTable:
    """evaluate cfg.policy on cfg.dataset against cfg.test_detector

    Args:
        cfg (ExperimentConfig) - experiment cell
        net (OdrlNetwork | None) - trained agent; when None and policy is odrl,
            cfg.checkpoint is loaded
        g (Graph | None) - graph to use instead of loading cfg.dataset
        trajectories (path | None) - directory for per-trial JSON-lines dumps

    Returns:
        ResultsTable with one row
    """
    g = load_dataset(cfg.dataset) if g is None else g
    beta, k = budgets(g, cfg.dataset, cfg)
    if cfg.policy == "odrl":
        net, meta = _odrl_network(cfg, net)
        if net.n_nodes - g.n != k:
            logger.info(f"odrl: evaluating at the checkpoint's k={net.n_nodes - g.n} (config k={k})")
            k = net.n_nodes - g.n
        if k < 0 or net.n_candidates != k + 1:
            raise ConfigError(
                f"ERROR: checkpoint expects {net.n_nodes} nodes, {cfg.dataset} has {g.n}"
            )

    test_cover, targets = evaluation_targets(g, cfg)

    if trajectories is not None:
        Path(trajectories).mkdir(parents=True, exist_ok=True)

    records: List[TrialRecord] = []
    for i, target in enumerate(targets):
        seed = trial_seed(cfg.seed, i)
        if cfg.policy == "odrl":
            policy = OdrlPolicy(net, greedy=True, seed=seed)
        else:
            policy = make_baseline(cfg.policy, seed, cfg.recompute_centrality)
        try:
            record, transitions = run_trial(g, target, cfg, policy, beta, k, seed, test_cover)
        except IneligibleTargetError as exc:
            logger.warning(f"skipping target {target[0]}: {exc}")
            continue
        records.append(record)
        if trajectories is not None:
            name = f"{cfg.dataset}_{cfg.policy}_b{beta}_k{k}_t{target[0]}.jsonl"
            dump_trajectory(transitions, Path(trajectories) / name)

    if not records:
        raise SamplingError(f"ERROR: no eligible target left on {cfg.dataset}")
    report = aggregate(records, seed=cfg.seed)
    logger.info(
        f"{cfg.dataset} {cfg.policy} beta={beta} k={k}: "
        f"SR={report.sr:.3f} ONMI={report.onmi_mean:.3f} F1={report.f1:.3f} (n={report.n_trials})"
    )
    table = ResultsTable()
    table.add(cfg.dataset, beta, cfg.policy, k, report, records)
    return table


def run_grid(
    cfg: ExperimentConfig,
    multipliers: Sequence[float] = BUDGET_MULTIPLIERS,
    net: Optional[OdrlNetwork] = None,
    trajectories: "str | Path | None" = None,
) -> ResultsTable:
    """run_experiment over beta multipliers with k fixed (mu for baselines, the checkpoint's for odrl)"""
    g = load_dataset(cfg.dataset)
    if cfg.policy == "odrl" and net is None:
        net, _ = _odrl_network(cfg, None)
    table = ResultsTable()
    for mult in multipliers:
        cell = replace(cfg, beta_multiplier=mult)
        table.merge(run_experiment(cell, net=net, g=g, trajectories=trajectories))
    return table


def emit_report(table: ResultsTable, out_dir: "str | Path", formats: Sequence[str] = ("csv", "json", "png")) -> List[Path]:
    """write results.csv, results.json and f1.png (F1 per dataset/policy) under out_dir"""
    if len(table) == 0:
        raise EmptyInputError("ERROR: cannot emit a report for an empty results table")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for fmt in formats:
        if fmt == "csv":
            path = out_dir / "results.csv"
            table.to_csv(path)
        elif fmt == "json":
            path = out_dir / "results.json"
            table.to_json(path)
        elif fmt == "png":
            path = save_figure(plot_f1_bars(table.frame), out_dir / "f1.png")
        else:
            raise ConfigError(f"ERROR: unknown report format '{fmt}'")
        written.append(path)
    return written


def run_naive_study(
    datasets: Sequence[str],
    k_multipliers: Sequence[float] = BUDGET_MULTIPLIERS,
    seeds: Sequence[int] = (0,),
    base: Optional[ExperimentConfig] = None,
) -> pd.DataFrame:
    """SR / ONMI / F1 of proxy injection alone per dataset, detector and k

    trials of all seeds are pooled into one report per cell

    Returns:
        DataFrame with columns dataset, detector, k_multiplier, k, sr, onmi, f1, n
    """
    base = base or ExperimentConfig()
    rows = []
    for dataset in datasets:
        g = load_dataset(dataset)
        for detector in ("louvain", "angel", "demon"):
            for mult in k_multipliers:
                cfg = replace(
                    with_detectors(base, detector, detector),
                    dataset=dataset,
                    policy="naive",
                    k_multiplier=mult,
                )
                records: List[TrialRecord] = []
                k = 0
                for seed in seeds:
                    table = run_experiment(replace(cfg, seed=seed), g=g)
                    key = next(iter(table.trials))
                    k = key[3]
                    records.extend(table.trials[key])
                report = aggregate(records, seed=seeds[0])
                rows.append(
                    {
                        "dataset": dataset,
                        "detector": detector,
                        "k_multiplier": mult,
                        "k": k,
                        "sr": report.sr,
                        "onmi": report.onmi_mean,
                        "f1": report.f1,
                        "n": report.n_trials,
                    }
                )
    return pd.DataFrame(rows, columns=["dataset", "detector", "k_multiplier", "k", "sr", "onmi", "f1", "n"])


def train_agent(
    cfg: ExperimentConfig, show_progress: bool = False, g: Optional[Graph] = None
) -> Tuple[OdrlNetwork, pd.DataFrame, Dict[str, Any]]:
    """train the agent on cfg.dataset against cfg.train_detector

    Returns:
        (network, training curve, checkpoint metadata)
    """
    g = load_dataset(cfg.dataset) if g is None else g
    beta, k = budgets(g, cfg.dataset, cfg)
    cover = detect(g, cfg.train_detector)
    _, held_out = evaluation_targets(g, cfg)
    held_out_nodes = sorted(t for t, _ in held_out)
    targets = training_targets(g, cover, held_out_nodes)
    factory = EpisodeFactory(g, targets, cfg.train_detector, cover, cfg.tau, k, cfg.p, beta)
    logger.info(
        f"training on {cfg.dataset} ({g!r}) against {cfg.train_detector.name}: "
        f"beta={beta}, k={k}, {len(factory.communities)} communities, "
        f"{len(targets)} training targets ({len(held_out_nodes)} held out)"
    )
    net, curve = train(factory, cfg.train_config(), show_progress=show_progress)
    meta = {
        "dataset": cfg.dataset,
        "train_detector": cfg.train_detector.name,
        "beta": beta,
        "k": k,
        "beta_multiplier": cfg.beta_multiplier,
        "k_multiplier": cfg.k_multiplier,
        "tau": cfg.tau,
        "p": cfg.p,
        "held_out": held_out_nodes,
    }
    return net, curve, meta
