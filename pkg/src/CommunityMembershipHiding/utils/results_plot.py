"""
results_plot.py - plotly charts for experiment results: F1 bars per
    dataset/policy (with CI whiskers), the naive-connection study and the
    training curve. Figures are returned so callers can show or save them;
    save_figure writes static images through kaleido.
"""

from pathlib import Path
from typing import Optional

import pandas as pd
import plotly.graph_objects as go
from plotly.subplots import make_subplots

POLICY_COLORS = {
    "odrl": "crimson",
    "random": "gray",
    "degree": "royalblue",
    "betweenness": "seagreen",
    "roam": "darkorange",
    "naive": "purple",
}


def plot_f1_bars(results: pd.DataFrame, title: Optional[str] = None) -> go.Figure:
    """grouped F1 bars, one subplot per dataset, one bar group per budget beta

    Args:
        results (pd.DataFrame) - rows with columns dataset, beta, policy, f1, f1_lo, f1_hi
        title (str | None) - figure title
    """
    datasets = sorted(results["dataset"].unique())
    fig = make_subplots(
        rows=1,
        cols=len(datasets),
        shared_yaxes=True,
        subplot_titles=tuple(datasets),
    )
    shown = set()
    for col, dataset in enumerate(datasets, start=1):
        subset = results[results["dataset"] == dataset]
        for policy, rows in subset.groupby("policy", sort=True):
            rows = rows.sort_values("beta")
            fig.add_trace(
                go.Bar(
                    x=[f"beta={b}" for b in rows["beta"]],
                    y=rows["f1"],
                    error_y=dict(
                        type="data",
                        symmetric=False,
                        array=rows["f1_hi"] - rows["f1"],
                        arrayminus=rows["f1"] - rows["f1_lo"],
                    ),
                    name=policy,
                    legendgroup=policy,
                    showlegend=policy not in shown,
                    marker_color=POLICY_COLORS.get(policy),
                ),
                row=1,
                col=col,
            )
            shown.add(policy)
    fig.update_layout(barmode="group", title=title or "F1 by dataset and policy")
    fig.update_yaxes(range=[0, 1], title_text="F1", row=1, col=1)
    return fig


def plot_naive_study(results: pd.DataFrame) -> go.Figure:
    """F1 of proxy injection alone by detector, one bar group per proxy count k

    Args:
        results (pd.DataFrame) - rows with columns dataset, detector, k, f1
    """
    datasets = sorted(results["dataset"].unique())
    fig = make_subplots(rows=1, cols=len(datasets), shared_yaxes=True, subplot_titles=tuple(datasets))
    shown = set()
    for col, dataset in enumerate(datasets, start=1):
        subset = results[results["dataset"] == dataset]
        for detector, rows in subset.groupby("detector", sort=True):
            rows = rows.sort_values("k")
            fig.add_trace(
                go.Bar(
                    x=[f"k={k}" for k in rows["k"]],
                    y=rows["f1"],
                    name=detector,
                    legendgroup=detector,
                    showlegend=detector not in shown,
                ),
                row=1,
                col=col,
            )
            shown.add(detector)
    fig.update_layout(barmode="group", title="Naive connection: F1 by detector")
    fig.update_yaxes(range=[0, 1], title_text="F1", row=1, col=1)
    return fig


def plot_training_curve(curve: pd.DataFrame, title: str = "Training") -> go.Figure:
    """episode reward (top) and moving success rate (bottom)"""
    fig = make_subplots(
        rows=2,
        cols=1,
        shared_xaxes=True,
        vertical_spacing=0.05,
        row_heights=[0.6, 0.4],
        subplot_titles=("Episode reward", "Moving SR (100 episodes)"),
    )
    fig.add_trace(
        go.Scatter(
            x=curve["episode"],
            y=curve["reward"],
            mode="lines",
            name="reward",
            line=dict(color="royalblue", width=1),
        ),
        row=1,
        col=1,
    )
    fig.add_trace(
        go.Scatter(
            x=curve["episode"],
            y=curve["moving_sr"],
            mode="lines",
            name="moving SR",
            line=dict(color="crimson", width=2),
        ),
        row=2,
        col=1,
    )
    fig.update_yaxes(range=[0, 1], row=2, col=1)
    fig.update_layout(title=title, showlegend=False)
    return fig


def save_figure(fig: go.Figure, path: "str | Path") -> Path:
    """write a static image (format from the suffix, png by default)"""
    path = Path(path)
    if not path.suffix:
        path = path.with_suffix(".png")
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.write_image(str(path))
    return path
