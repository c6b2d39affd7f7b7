"""
cli.py - command line entry point.

    detect  <dataset> --algo --phi --seed        print (or save) a community cover
    train   --dataset --beta-mult --k-mult ...   train the agent, save a checkpoint
    eval    --ckpt | --policy ...                evaluate a policy, write results
    naive   --dataset --k-mult ...               proxy-injection-only study
    report  --in results.json --format csv|png   re-render a results file

Exit codes: 0 success, 2 configuration error, 3 data error.
"""

import argparse
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from rich.console import Console
from rich.table import Table

from CommunityMembershipHiding.config.logger import get_logger
from CommunityMembershipHiding.config.settings import (
    BUDGET_MULTIPLIERS,
    DETECTOR_NAMES,
    POLICY_NAMES,
    DetectorConfig,
    load_experiment_config,
)
from CommunityMembershipHiding.utils.errors import ConfigError, DataError

logger = get_logger(__name__)
console = Console()

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3


def _add_experiment_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dataset", help="registered dataset (kar, words, vote, pow, nets)")
    p.add_argument("--beta-mult", type=float, dest="beta_multiplier", help="budget beta as a multiple of mu")
    p.add_argument("--k-mult", type=float, dest="k_multiplier", help="proxy count k as a multiple of mu")
    p.add_argument("--tau", type=float, help="hiding threshold")
    p.add_argument("--p", type=float, dest="p", help="proxy-proxy edge probability")
    p.add_argument("--n-targets", type=int, dest="n_targets", help="targets to sample")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--paper-scale", action="store_true", default=None, dest="paper_scale",
                   help="100 targets / 5000 episodes instead of the desk-scale defaults")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="CommunityMembershipHiding",
        description="Hide a node's community membership from overlapping community detectors",
    )
    parser.add_argument("--config", help="flat YAML file mirroring the experiment settings")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", help="run a detector on a dataset")
    p.add_argument("dataset")
    p.add_argument("--algo", choices=DETECTOR_NAMES, default="angel")
    p.add_argument("--phi", type=float, default=0.8)
    p.add_argument("--min-size", type=int, default=3, dest="min_size")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write the cover as text, one community per line")

    p = sub.add_parser("train", help="train the agent")
    _add_experiment_args(p)
    p.add_argument("--detector", choices=DETECTOR_NAMES, dest="train_detector", help="training detector")
    p.add_argument("--episodes", type=int)
    p.add_argument("--out", required=True, help="checkpoint path")

    p = sub.add_parser("eval", help="evaluate a checkpoint or a baseline")
    _add_experiment_args(p)
    p.add_argument("--ckpt", dest="checkpoint", help="agent checkpoint (implies --policy odrl)")
    p.add_argument("--policy", choices=POLICY_NAMES)
    p.add_argument("--train-detector", choices=DETECTOR_NAMES, dest="train_detector")
    p.add_argument("--test-detector", choices=DETECTOR_NAMES, dest="test_detector")
    p.add_argument("--c-orig-source", choices=("test", "train"), dest="c_orig_source")
    p.add_argument("--frozen-centrality", action="store_false", default=None, dest="recompute_centrality",
                   help="betweenness baseline: score once per episode instead of every step")
    p.add_argument("--grid", action="store_true", help=f"sweep beta over {BUDGET_MULTIPLIERS} x mu")
    p.add_argument("--trajectories", help="directory for JSON-lines trajectory dumps")
    p.add_argument("--out", default="results", help="output directory")

    p = sub.add_parser("naive", help="proxy injection without rewiring")
    p.add_argument("--dataset", nargs="+", default=["kar"])
    p.add_argument("--k-mult", type=float, nargs="+", default=list(BUDGET_MULTIPLIERS), dest="k_multipliers")
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    p.add_argument("--n-targets", type=int, dest="n_targets")
    p.add_argument("--out", default="results", help="output directory")

    p = sub.add_parser("report", help="render a results file")
    p.add_argument("--in", dest="source", required=True, help="results.json or results.csv")
    p.add_argument("--format", choices=("csv", "json", "png"), nargs="+", default=["csv", "png"])
    p.add_argument("--out", help="output directory (default: next to the input)")
    return parser


def _overrides(args: argparse.Namespace, keys: List[str]) -> Dict[str, Any]:
    return {key: getattr(args, key, None) for key in keys}


EXPERIMENT_KEYS = [
    "dataset", "beta_multiplier", "k_multiplier", "tau", "p", "n_targets", "seed", "paper_scale",
]


def results_table(frame) -> Table:
    table = Table(title="Results")
    for col in ("dataset", "beta", "k", "policy", "sr", "onmi", "f1", "n"):
        table.add_column(col, justify="right")
    for _, row in frame.iterrows():
        table.add_row(
            str(row["dataset"]),
            str(row["beta"]),
            str(row["k"]),
            str(row["policy"]),
            f"{row['sr']:.3f} [{row['sr_lo']:.2f}, {row['sr_hi']:.2f}]",
            f"{row['onmi']:.3f}",
            f"{row['f1']:.3f} [{row['f1_lo']:.2f}, {row['f1_hi']:.2f}]",
            str(row["n"]),
        )
    return table


def cmd_detect(args: argparse.Namespace) -> int:
    from CommunityMembershipHiding.tools.detectors import detect
    from CommunityMembershipHiding.utils.datasets import load_dataset

    g = load_dataset(args.dataset)
    cover = detect(g, DetectorConfig(args.algo, args.phi, args.min_size, args.seed))
    table = Table(title=f"{args.algo} on {args.dataset} ({g.n} nodes, {g.m} edges)")
    table.add_column("#", justify="right")
    table.add_column("size", justify="right")
    table.add_column("members")
    for i, comm in enumerate(cover.communities):
        table.add_row(str(i), str(len(comm)), " ".join(str(v) for v in sorted(comm)))
    console.print(table)
    if args.out:
        Path(args.out).write_text(cover.to_text(), encoding="utf-8")
        console.print(f"[green]cover written to {args.out}[/green]")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    from CommunityMembershipHiding.agents.odrl_agent import save_checkpoint
    from CommunityMembershipHiding.experiment import train_agent
    from CommunityMembershipHiding.utils.results_plot import plot_training_curve, save_figure

    overrides = _overrides(args, EXPERIMENT_KEYS + ["episodes", "train_detector"])
    cfg = load_experiment_config(args.config, overrides)
    net, curve, meta = train_agent(cfg, show_progress=True)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out, net, cfg.train_config(), meta, curve.attrs.get("rng_state"))
    curve.to_csv(out.with_suffix(".curve.csv"), index=False, lineterminator="\n")
    save_figure(plot_training_curve(curve, f"Training on {cfg.dataset}"), out.with_suffix(".curve.png"))
    console.print(
        f"[green]checkpoint saved to {out}[/green] "
        f"(final moving SR {curve['moving_sr'].iloc[-1]:.3f})"
    )
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    from CommunityMembershipHiding.agents.odrl_agent import load_checkpoint
    from CommunityMembershipHiding.experiment import emit_report, run_experiment, run_grid

    overrides = _overrides(
        args,
        EXPERIMENT_KEYS
        + ["policy", "train_detector", "test_detector", "c_orig_source", "checkpoint", "recompute_centrality"],
    )
    net = None
    if args.checkpoint:
        net, _, meta = load_checkpoint(args.checkpoint)
        overrides["policy"] = "odrl"
        for key in ("dataset", "train_detector", "beta_multiplier", "k_multiplier"):
            if overrides.get(key) is None and key in meta:
                overrides[key] = meta[key]
    cfg = load_experiment_config(args.config, overrides)

    if args.grid:
        table = run_grid(cfg, net=net, trajectories=args.trajectories)
    else:
        table = run_experiment(cfg, net=net, trajectories=args.trajectories)
    console.print(results_table(table.frame))
    for path in emit_report(table, args.out, ("csv", "json")):
        console.print(f"[green]wrote {path}[/green]")
    return EXIT_OK


def cmd_naive(args: argparse.Namespace) -> int:
    from CommunityMembershipHiding.experiment import run_naive_study
    from CommunityMembershipHiding.utils.results_plot import plot_naive_study, save_figure

    cfg = load_experiment_config(args.config, {"n_targets": args.n_targets, "policy": "naive"})
    study = run_naive_study(args.dataset, args.k_multipliers, args.seeds, base=cfg)

    table = Table(title="Naive connection")
    for col in study.columns:
        table.add_column(col, justify="right")
    for _, row in study.iterrows():
        table.add_row(*[f"{v:.3f}" if isinstance(v, float) else str(v) for v in row])
    console.print(table)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    study.to_csv(out / "naive.csv", index=False, lineterminator="\n")
    save_figure(plot_naive_study(study), out / "naive.png")
    console.print(f"[green]wrote {out / 'naive.csv'} and {out / 'naive.png'}[/green]")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    from CommunityMembershipHiding.experiment import ResultsTable, emit_report

    table = ResultsTable.load(args.source)
    out = Path(args.out) if args.out else Path(args.source).parent
    console.print(results_table(table.frame))
    for path in emit_report(table, out, args.format):
        console.print(f"[green]wrote {path}[/green]")
    return EXIT_OK


COMMANDS = {
    "detect": cmd_detect,
    "train": cmd_train,
    "eval": cmd_eval,
    "naive": cmd_naive,
    "report": cmd_report,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        console.print(f"[red]{exc}[/red]")
        return EXIT_CONFIG
    except DataError as exc:
        console.print(f"[red]{exc}[/red]")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
