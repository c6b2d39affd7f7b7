import json

import numpy as np
import pytest

from CommunityMembershipHiding.agents.odrl_agent import OdrlNetwork
from CommunityMembershipHiding.config.settings import DetectorConfig, ExperimentConfig, with_detectors
from CommunityMembershipHiding.experiment import (
    RESULT_COLUMNS,
    EpisodeFactory,
    ResultsTable,
    budgets,
    emit_report,
    pick_communities,
    run_experiment,
    run_grid,
    run_naive_study,
    evaluation_targets,
    sample_targets,
    train_agent,
    training_targets,
)
from CommunityMembershipHiding.tools.detectors import CommunityCover, detect
from CommunityMembershipHiding.utils.errors import ConfigError, EmptyInputError, SamplingError
from CommunityMembershipHiding.utils.metrics import Report, TrialRecord, aggregate, dice, f1_score

ANGEL = DetectorConfig("angel")


def cover_of(*comms) -> CommunityCover:
    return CommunityCover(tuple(frozenset(c) for c in comms), "stub", 0)


def naive_cfg(**kw) -> ExperimentConfig:
    values = dict(dataset="kar", policy="naive", n_targets=5, seed=0)
    values.update(kw)
    return ExperimentConfig(**values)


def sample_report(seed=0) -> Report:
    rng = np.random.default_rng(seed)
    records = [
        TrialRecord(i, bool(rng.random() < 0.6), float(rng.random()), 2, "t", i) for i in range(10)
    ]
    return aggregate(records, seed=seed)


# --- target sampling -------------------------------------------------------


def test_closest_size_wins_and_ties_go_to_the_larger_community():
    big, small, mid = range(0, 20), range(20, 24), range(30, 38)
    picked = pick_communities(cover_of(big, small, mid))
    # 0.3 * 20 = 6: sizes 4 and 8 are equally close
    assert [len(c) for c in picked] == [8, 4, 20]


def test_similar_communities_are_rejected():
    a = frozenset(range(10))
    b = frozenset(range(1, 11))
    assert dice(a, b) == pytest.approx(0.9)
    assert pick_communities(cover_of(a, b)) == [a]


def test_empty_cover_cannot_be_sampled(karate):
    with pytest.raises(SamplingError):
        sample_targets(karate, cover_of(), naive_cfg(), seed=0)


def test_sampled_targets_satisfy_the_protocol(karate):
    cover = detect(karate, ANGEL)
    targets = sample_targets(karate, cover, naive_cfg(n_targets=10), seed=3)
    nodes = [t for t, _ in targets]
    assert 0 < len(targets) <= 10
    assert len(nodes) == len(set(nodes))
    for node, comm in targets:
        assert node in comm
        assert comm in cover.communities
    assert sample_targets(karate, cover, naive_cfg(n_targets=10), seed=3) == targets


def test_sampler_takes_what_exists(karate):
    cover = cover_of(range(5), range(5, 10))
    targets = sample_targets(karate, cover, naive_cfg(n_targets=100), seed=0)
    assert sorted(t for t, _ in targets) == list(range(10))


# --- results table ---------------------------------------------------------


def test_one_cell_table_csv():
    table = ResultsTable()
    table.add("kar", 7, "odrl", 3, sample_report())
    lines = table.to_csv().splitlines()
    assert lines[0] == ",".join(RESULT_COLUMNS)
    assert len(lines) == 2


def test_adding_a_cell_twice_replaces_it():
    table = ResultsTable()
    table.add("kar", 7, "odrl", 3, sample_report(0))
    table.add("kar", 7, "odrl", 3, sample_report(1))
    assert len(table) == 1
    assert table.report("kar", 7, "odrl", 3) == sample_report(1)


def test_csv_round_trip_is_byte_identical(tmp_path):
    table = ResultsTable()
    for i, policy in enumerate(("odrl", "random", "roam")):
        table.add("kar", 2 + i, policy, 3, sample_report(i))
    path = tmp_path / "results.csv"
    text = table.to_csv(path)
    assert ResultsTable.from_csv(path).to_csv() == text
    assert ResultsTable.from_csv(text).to_csv() == text


def test_json_mirror_matches_csv(tmp_path):
    table = ResultsTable()
    table.add("kar", 3, "degree", 3, sample_report(2))
    path = tmp_path / "results.json"
    table.to_json(path)
    rows = json.loads(path.read_text())
    assert rows[0]["policy"] == "degree" and rows[0]["n"] == 10
    assert ResultsTable.load(path).to_csv() == table.to_csv()


def test_f1_column_agrees_with_harmonic_mean():
    table = ResultsTable()
    for i in range(4):
        table.add("kar", i + 1, "random", 3, sample_report(i))
    frame = table.frame
    np.testing.assert_allclose(frame["f1"], f1_score(frame["sr"].to_numpy(), frame["onmi"].to_numpy()), atol=1e-9)


def test_emit_report(tmp_path):
    table = ResultsTable()
    table.add("kar", 3, "random", 3, sample_report())
    written = emit_report(table, tmp_path / "out", ("csv", "json"))
    assert [p.name for p in written] == ["results.csv", "results.json"]
    assert (tmp_path / "out" / "results.csv").read_text() == table.to_csv()
    with pytest.raises(EmptyInputError):
        emit_report(ResultsTable(), tmp_path)
    with pytest.raises(ConfigError):
        emit_report(table, tmp_path, ("xlsx",))


def test_load_missing_results_file(tmp_path):
    with pytest.raises(ConfigError):
        ResultsTable.load(tmp_path / "missing.json")


# --- experiments -----------------------------------------------------------


def test_budgets_on_karate(karate):
    assert budgets(karate, "kar", naive_cfg(beta_multiplier=2.0)) == (7, 3)


def test_naive_cell_spends_no_edits(karate):
    table = run_experiment(naive_cfg(), g=karate)
    (key, records), = table.trials.items()
    assert key == ("kar", 3, "naive", 3)
    assert all(r.edits_used == 0 for r in records)
    row = table.frame.iloc[0]
    assert row["sr"] == sum(r.success for r in records) / len(records)


def test_random_cell_is_reproducible(karate, tmp_path):
    cfg = naive_cfg(policy="random", n_targets=4, seed=11)
    first = run_experiment(cfg, g=karate).to_csv()
    assert run_experiment(cfg, g=karate).to_csv() == first
    other = run_experiment(naive_cfg(policy="random", n_targets=4, seed=12), g=karate).to_csv()
    assert run_experiment(naive_cfg(policy="random", n_targets=4, seed=12), g=karate).to_csv() == other


def test_odrl_needs_a_checkpoint(karate):
    with pytest.raises(ConfigError):
        run_experiment(naive_cfg(policy="odrl"), g=karate)


def test_odrl_cell_with_an_untrained_network(karate, tmp_path):
    net = OdrlNetwork(karate.n + 3, 4, d_h=8)
    table = run_experiment(naive_cfg(policy="odrl", n_targets=3), net=net, g=karate, trajectories=tmp_path)
    (records,) = table.trials.values()
    assert all(r.edits_used <= 3 for r in records)
    dumps = list(tmp_path.glob("kar_odrl_*.jsonl"))
    assert len(dumps) == len(records)


def test_asymmetric_cell_with_training_communities(karate):
    cfg = with_detectors(naive_cfg(policy="degree", n_targets=4, c_orig_source="train"), "angel", "louvain")
    table = run_experiment(cfg, g=karate)
    assert len(table) == 1
    assert not cfg.symmetric


def test_grid_sweeps_the_budget():
    table = run_grid(naive_cfg(policy="degree", n_targets=3))
    assert sorted(table.frame["beta"]) == [2, 3, 7]
    assert set(table.frame["k"]) == {3}


def test_naive_study_layout():
    study = run_naive_study(["kar"], [1.0], seeds=[0], base=naive_cfg(n_targets=4))
    assert list(study.columns) == ["dataset", "detector", "k_multiplier", "k", "sr", "onmi", "f1", "n"]
    assert list(study["detector"]) == ["louvain", "angel", "demon"]
    assert (study["k"] == 3).all()


# --- training --------------------------------------------------------------


def test_episode_factory_shapes(karate):
    cover = detect(karate, ANGEL)
    targets = sample_targets(karate, cover, naive_cfg(), seed=0)
    factory = EpisodeFactory(karate, targets, ANGEL, cover, 0.5, 3, 0.5, 7)
    assert factory.n_nodes == 37 and factory.n_candidates == 4
    rng = np.random.default_rng(0)
    community = factory.sample_community(rng)
    target = factory.sample_target(community, rng)
    assert target in community
    state = factory.reset(target, community, seed=1)
    assert state.graph.n == factory.n_nodes
    assert state.c_orig == community


def test_factory_draws_only_training_nodes(karate):
    community = frozenset(range(10))
    targets = [(2, community), (7, community)]
    factory = EpisodeFactory(karate, targets, ANGEL, cover_of(community), 0.5, 1, 0.5, 3)
    rng = np.random.default_rng(0)
    assert factory.communities == [community]
    assert {factory.sample_target(community, rng) for _ in range(50)} == {2, 7}


def test_training_and_evaluation_targets_are_disjoint(karate):
    cfg = naive_cfg(n_targets=25)
    test_cover, held_out = evaluation_targets(karate, cfg)
    assert test_cover == detect(karate, ANGEL)
    assert len(held_out) == 25
    train_nodes = {t for t, _ in training_targets(karate, test_cover, [t for t, _ in held_out])}
    assert train_nodes
    assert train_nodes.isdisjoint(t for t, _ in held_out)


def test_training_needs_a_node_outside_the_held_out_set(karate):
    cover = cover_of(range(5), range(5, 10))
    with pytest.raises(SamplingError):
        training_targets(karate, cover, range(10))


def test_train_agent_smoke(karate):
    cfg = naive_cfg(policy="odrl", episodes=2)
    net, curve, meta = train_agent(cfg, g=karate)
    assert len(curve) == 2
    assert meta["k"] == 3 and meta["beta"] == 3
    assert net.n_nodes == karate.n + 3
    held_out = {t for t, _ in evaluation_targets(karate, cfg)[1]}
    assert meta["held_out"] == sorted(held_out)
