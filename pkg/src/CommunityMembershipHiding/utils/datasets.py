"""
datasets.py - registry of benchmark graphs and their loaders.

kar (Zachary's karate club) ships with networkx; the other benchmarks are read
from edge-list files <data dir>/<name>.txt (or <name>.edges), where the data
dir defaults to $CMH_DATA_DIR.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, Optional

import networkx as nx
import pandas as pd

from CommunityMembershipHiding.config.logger import get_logger
from CommunityMembershipHiding.config.settings import DETECTOR_NAMES, DetectorConfig, data_dir
from CommunityMembershipHiding.tools.detectors import detect
from CommunityMembershipHiding.utils.errors import DataError
from CommunityMembershipHiding.utils.graph_core import Graph, load_edge_list

logger = get_logger(__name__)

_SUFFIXES = (".txt", ".edges")


@dataclass(frozen=True)
class DatasetInfo:
    name: str
    description: str
    n: Optional[int]
    m: Optional[int]
    bundled: bool = False

    @property
    def kar_adjust(self) -> bool:
        """the karate club budget adds one to mu"""
        return self.name == "kar"


REGISTRY: Dict[str, DatasetInfo] = {
    "kar": DatasetInfo("kar", "Zachary's karate club", 34, 78, bundled=True),
    "words": DatasetInfo("words", "adjective-noun adjacency of common English words", 112, 425),
    "vote": DatasetInfo("vote", "Wikipedia administrator elections", 889, 2900),
    "pow": DatasetInfo("pow", "western US power grid", 4941, 6594),
    "nets": DatasetInfo("nets", "coauthorship in network science", 1589, 2742),
}


def dataset_info(name: str) -> DatasetInfo:
    try:
        return REGISTRY[name]
    except KeyError:
        raise DataError(
            f"ERROR: unknown dataset '{name}', expected one of {sorted(REGISTRY)}"
        ) from None


def _karate() -> Graph:
    g = nx.karate_club_graph()
    return Graph(g.nodes(), g.edges())


def _find_file(name: str, root: Path) -> Path:
    for suffix in _SUFFIXES:
        path = root / f"{name}{suffix}"
        if path.is_file():
            return path
    raise DataError(
        f"ERROR: no edge list for '{name}' in {root} (looked for "
        + ", ".join(f"{name}{s}" for s in _SUFFIXES)
        + "); set CMH_DATA_DIR to the directory holding the files"
    )


def load_dataset(name: str, root: Optional[Path] = None) -> Graph:
    """load a registered dataset

    Args:
        name (str) - registry key (kar, words, vote, pow, nets)
        root (Path | None) - data directory, default from CMH_DATA_DIR

    Returns:
        Graph; a size mismatch against the registry is logged, not raised
    """
    info = dataset_info(name)
    if info.bundled:
        return _karate()

    path = _find_file(name, Path(root) if root is not None else data_dir())
    with open(path, "rb") as fp:
        g = load_edge_list(fp)
    if (info.n, info.m) != (g.n, g.m):
        logger.warning(
            f"{name}: read {g.n} nodes / {g.m} edges from {path}, "
            f"expected {info.n} / {info.m}"
        )
    return g


def dataset_summary(
    names: Iterable[str], root: Optional[Path] = None, seed: int = 0
) -> pd.DataFrame:
    """|V|, |E|, mu and the community count under every detector, one row per dataset"""
    rows = []
    for name in names:
        g = load_dataset(name, root)
        row = {"dataset": name, "n": g.n, "m": g.m, "mu": g.m / g.n}
        for algo in DETECTOR_NAMES:
            row[algo] = len(detect(g, DetectorConfig(algo, seed=seed)))
        rows.append(row)
    return pd.DataFrame(rows, columns=["dataset", "n", "m", "mu", *DETECTOR_NAMES])


if __name__ == "__main__":
    from rich.console import Console
    from rich.table import Table

    console = Console()
    summary = dataset_summary(["kar"])
    table = Table(title="Datasets")
    for col in summary.columns:
        table.add_column(col, justify="right")
    for _, row in summary.iterrows():
        table.add_row(*[f"{v:.2f}" if isinstance(v, float) else str(v) for v in row])
    console.print(table)
