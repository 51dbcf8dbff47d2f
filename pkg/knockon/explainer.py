"""
Submodule containing functions relative to **explainability** of the hurdle model.

- attention_analysis: which edge types receive the highest attention (high-attention group defined by a percentile of
  the per-edge scores) and how congestion and lagged delay features differ between low and high attention edges,
- permutation_importance: MAE increase of the live rollout when one feature is shuffled across the events of each day.

By using this code you agree to the terms of the software license agreement.

© Copyright 2020 Wyss Center for Bio and Neuro Engineering – All rights reserved
"""

import numpy as np
import pandas as pd
from tqdm import tqdm

from knockon.evaluator import regression_metrics
from knockon.exceptions import configError, dataIntegrityError
from knockon.featurizer import ALL_FEATURES, CATEGORICAL_FEATURES, CONGESTION_FEATURES
from knockon.forecaster import liveForecaster

COMPARED_FEATURES = CONGESTION_FEATURES + ['lag2_delay']


def reduce_attention(attention, pool='all', include_self=False):
    """
    One score per edge: maximum over heads and layers (all layers, or the last one only).

    Returns
    -------
    edges: pandas.DataFrame
        columns service_day, edge_src, edge_dst, edge_type, score
    """
    if pool not in ['all', 'last']:
        raise configError('Error: attention pooling must be \'all\' or \'last\'.')
    log = attention
    if pool == 'last':
        log = log[log['layer'] == log['layer'].max()]
    if not include_self:
        log = log[log['edge_type'] != 'Self']
    return log.groupby(['service_day', 'edge_src', 'edge_dst', 'edge_type'], as_index=False, sort=True)['score'].max()


def feature_table(graphs):
    """
    Raw compared features of every event, keyed by (service_day, node_id).
    """
    frames = []
    for graph in graphs:
        f = graph.features[COMPARED_FEATURES].copy()
        f.insert(0, 'node_id', np.arange(graph.n_nodes))
        f.insert(0, 'service_day', graph.service_day.strftime('%Y-%m-%d'))
        frames.append(f)
    return pd.concat(frames, ignore_index=True)


def attention_analysis(attention, features=None, percentile=95, pool='all', include_self=False):
    """
    Analyse an attention log.

    Parameters
    ----------
    attention: pandas.DataFrame
        attention log (see knockon.forecaster.ATTENTION_COLUMNS)
    features: pandas.DataFrame, optional
        output of feature_table, joined on the destination event of each edge
    percentile: float
        edges with a score at or above this percentile of the scores form the high-attention group
    pool: str
        'all' or 'last' layers
    include_self: bool
        keep self-loops in the analysis

    Returns
    -------
    analysis: dict
        threshold, group sizes, edge type proportions (high-attention group and all edges), score summaries per
        edge type and low vs high attention feature comparison
    """
    edges = reduce_attention(attention, pool=pool, include_self=include_self)
    if len(edges) == 0:
        raise dataIntegrityError('Error: the attention log has no edge to analyse.')
    threshold = float(np.percentile(edges['score'], percentile))
    edges['high'] = edges['score'] >= threshold
    high = edges[edges['high']]

    analysis = {'percentile': percentile, 'pool': pool, 'threshold': threshold, 'n_edges': len(edges),
                'n_high': len(high),
                'proportions_high': (high['edge_type'].value_counts() / len(high)).sort_index().to_dict(),
                'proportions_all': (edges['edge_type'].value_counts() / len(edges)).sort_index().to_dict(),
                'score_summary': {t: {k: float(v) for k, v in df['score'].describe().items()}
                                  for t, df in edges.groupby('edge_type', sort=True)}}

    if features is not None:
        joined = edges.merge(features, left_on=['service_day', 'edge_dst'], right_on=['service_day', 'node_id'],
                             how='left')
        comparison = {}
        for name in COMPARED_FEATURES:
            comparison[name] = {}
            for group, df in [('low', joined[~joined['high']]), ('high', joined[joined['high']])]:
                values = df[name].dropna()
                comparison[name][group + '_mean'] = float(values.mean()) if len(values) else None
                comparison[name][group + '_median'] = float(values.median()) if len(values) else None
        analysis['feature_comparison'] = comparison
    return analysis


def print_attention_analysis(analysis):
    print('\n****** ATTENTION ANALYSIS ******')
    print('Threshold (percentile {}): {:.4f}, {} of {} edges in the high-attention group'.format(
        analysis['percentile'], analysis['threshold'], analysis['n_high'], analysis['n_edges']))
    for t, p in analysis['proportions_high'].items():
        print('{}: {:.1f}% of high-attention edges ({:.1f}% overall)'.format(
            t, 100 * p, 100 * analysis['proportions_all'].get(t, 0)))


def _shuffled(graph, feature, perm):
    """Model inputs of `graph` with `feature` permuted, None when the feature is not a model input."""
    if feature in CATEGORICAL_FEATURES:
        cat = graph.cat.copy()
        j = CATEGORICAL_FEATURES.index(feature)
        cat[:, j] = cat[perm, j]
        return graph.with_features(cat=cat)
    columns = graph.bundle.input_columns
    if feature not in columns:
        return None
    x = graph.x.copy()
    j = columns.index(feature)
    x[:, j] = x[perm, j]
    return graph.with_features(x=x)


def permutation_importance(graphs, classifier, regressor, features=None, repetitions=1, seed=0, k=10,
                           step_minutes=15, depth=3, threshold=0.5, progress_bar=True, verbose=True):
    """
    MAE importance of features by within-day permutation.

    lag2_delay is permuted in the rollout state (its values are produced by the rollout), other features in the model
    inputs. Features that are not model inputs (dropped as degenerate) have importance 0.

    Parameters
    ----------
    graphs: list of eventGraph
        evaluation days (feature bundle attached)
    classifier, regressor: torch.nn.Module
        frozen hurdle pair
    features: list, optional
        feature names (default: all node features)
    repetitions: int
        shuffles per feature, averaged
    seed: int
        shuffle seed; the permutations of a feature only depend on the seed and on the feature position in `features`
    k, step_minutes, depth, threshold:
        live rollout parameters

    Returns
    -------
    report: pandas.DataFrame
        columns feature, baseline_mae, shuffled_mae, importance, repetitions, seed, sorted by decreasing importance
    """
    features = list(ALL_FEATURES) if features is None else list(features)
    unknown = [f for f in features if f not in ALL_FEATURES]
    if unknown:
        raise configError('Error: unknown features {} (expected names among {}).'.format(unknown, ALL_FEATURES))
    if repetitions < 1:
        raise configError('Error: repetitions must be >= 1.')

    forecaster = liveForecaster(classifier, regressor, k=k, step_minutes=step_minutes, depth=depth,
                                threshold=threshold, dtype=next(classifier.parameters()).dtype)

    def mae(feature=None, rng=None):
        logs = []
        for graph in graphs:
            if feature is None:
                logs.append(forecaster.forecast(graph)[0])
                continue
            perm = rng.permutation(graph.n_nodes)
            if feature == 'lag2_delay':
                logs.append(forecaster.forecast(graph, lag2_permutation=perm)[0])
            else:
                logs.append(forecaster.forecast(graph, feature_graph=_shuffled(graph, feature, perm))[0])
        log = pd.concat(logs, ignore_index=True)
        return regression_metrics(log['pred_delay'], log['true_delay'])[0]

    baseline = mae()
    rows = []
    for i, feature in enumerate(tqdm(features, desc='Permutation importance', disable=not progress_bar)):
        if feature != 'lag2_delay' and feature not in CATEGORICAL_FEATURES \
                and feature not in graphs[0].bundle.input_columns:
            shuffled = baseline
        else:
            rng = np.random.default_rng([seed, i])
            shuffled = float(np.mean([mae(feature, rng) for _ in range(repetitions)]))
        rows.append({'feature': feature, 'baseline_mae': baseline, 'shuffled_mae': shuffled,
                     'importance': shuffled - baseline, 'repetitions': repetitions, 'seed': seed})

    report = pd.DataFrame(rows).sort_values('importance', ascending=False, kind='mergesort').reset_index(drop=True)
    if verbose:
        print('\n****** FEATURE IMPORTANCE ******')
        print('Baseline MAE: {:.4f}'.format(baseline))
        for row in report.itertuples(index=False):
            print('{}: {:+.4f}'.format(row.feature, row.importance))
    return report
