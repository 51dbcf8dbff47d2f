"""
Module containing functions relative to Viewing of evaluation and training reports.


By using this code you agree to the terms of the software license agreement.

© Copyright 2020 Wyss Center for Bio and Neuro Engineering – All rights reserved
"""

import matplotlib.pyplot as plt
import pandas as pd
import seaborn as sns


def _finish(fig, path):
    fig.tight_layout()
    if path is not None:
        fig.savefig(path, dpi=150)
        plt.close(fig)
    return fig


def plot_horizon_curves(horizon, metrics=('MAE', 'F1'), path=None):
    """
    Plot metrics versus forecast step, one line per model.

    Parameters
    ----------
    horizon: pandas.DataFrame
        per-horizon table (see knockon.evaluator.per_horizon_metrics)
    metrics: tuple
        metrics to plot, one panel each
    path: string
        output image path (the figure is closed after saving); None to keep the figure open

    Returns
    -------
    fig: matplotlib.figure.Figure
    """
    fig, ax = plt.subplots(1, len(metrics), figsize=(5 * len(metrics), 4), squeeze=False)
    for i, metric in enumerate(metrics):
        sns.lineplot(data=horizon, x='step_k', y=metric, hue='model_name', marker='o', ax=ax[0, i])
        ax[0, i].set_xlabel('Forecast step k')
        ax[0, i].set_title(metric)
    return _finish(fig, path)


def plot_attention_proportions(analysis, path=None):
    """
    Bar plot of the edge type proportions in the high-attention group and over all edges.
    """
    rows = [{'edge_type': t, 'group': group, 'proportion': p}
            for group, key in [('high attention', 'proportions_high'), ('all edges', 'proportions_all')]
            for t, p in analysis[key].items()]
    fig, ax = plt.subplots(figsize=(6, 4))
    sns.barplot(data=pd.DataFrame(rows), x='edge_type', y='proportion', hue='group', ax=ax)
    ax.set_title('Top {}th percentile attention: threshold {:.3f}'.format(analysis['percentile'],
                                                                          analysis['threshold']))
    return _finish(fig, path)


def plot_subgroups(subgroups, metric='MAE', path=None):
    """
    Bar plots of one metric per subgroup bucket, one panel per axis.
    """
    axes = list(dict.fromkeys(subgroups['axis']))
    fig, ax = plt.subplots(len(axes), 1, figsize=(8, 3 * len(axes)), squeeze=False)
    for i, axis in enumerate(axes):
        df = subgroups[(subgroups['axis'] == axis) & (subgroups['n'] > 0)]
        sns.barplot(data=df, x='bucket', y=metric, hue='model_name', ax=ax[i, 0])
        ax[i, 0].set_title(axis)
        ax[i, 0].set_xlabel('')
    return _finish(fig, path)


def plot_losses(losses, path=None):
    """
    Training and validation loss versus epoch, one panel per model.
    """
    summary = losses.groupby(['epoch', 'phase', 'model'], as_index=False)['loss'].mean()
    models = sorted(summary['model'].unique())
    fig, ax = plt.subplots(1, max(len(models), 1), figsize=(5 * max(len(models), 1), 4), squeeze=False)
    for i, model in enumerate(models):
        sns.lineplot(data=summary[summary['model'] == model], x='epoch', y='loss', hue='phase', marker='o',
                     ax=ax[0, i])
        ax[0, i].set_title(model)
    return _finish(fig, path)
