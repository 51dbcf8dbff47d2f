"""
Test script for the attention analysis and the permutation feature importance.

By using this code you agree to the terms of the software license agreement.

© Copyright 2020 Wyss Center for Bio and Neuro Engineering – All rights reserved
"""


import numpy as np
import pandas as pd
import pytest

import knockon
from conftest import small_pair


def _attention(rows):
    """Attention log from (edge_src, edge_dst, edge_type, layer, head, score) tuples."""
    df = pd.DataFrame(rows, columns=['edge_src', 'edge_dst', 'edge_type', 'layer', 'head', 'score'])
    df.insert(0, 'service_day', '2022-01-03')
    return df[knockon.forecaster.ATTENTION_COLUMNS]


def _planted():
    # 19 Run edges with low attention, one Dwell edge with high attention
    rows = [(i, i + 1, 'Run', 1, 0, 0.1) for i in range(19)]
    rows += [(30, 31, 'Dwell', 1, 0, 0.9)]
    rows += [(i, i, 'Self', 1, 0, 1.0) for i in range(5)]
    return _attention(rows)


def test_reduce_attention():
    log = _attention([(0, 1, 'Run', 1, 0, 0.2), (0, 1, 'Run', 1, 1, 0.7), (0, 1, 'Run', 2, 0, 0.4),
                      (1, 1, 'Self', 1, 0, 1.0)])
    edges = knockon.explainer.reduce_attention(log)
    assert(len(edges) == 1)
    assert(edges['score'].iloc[0] == 0.7)

    last = knockon.explainer.reduce_attention(log, pool='last')
    assert(last['score'].iloc[0] == 0.4)
    assert(len(knockon.explainer.reduce_attention(log, include_self=True)) == 2)

    with pytest.raises(knockon.exceptions.configError):
        knockon.explainer.reduce_attention(log, pool='mean')


def test_planted_attention():
    analysis = knockon.explainer.attention_analysis(_planted(), percentile=95)

    assert(analysis['n_edges'] == 20)
    assert(analysis['n_high'] == 1)
    assert(analysis['proportions_high'] == {'Dwell': 1.0})
    assert(np.isclose(analysis['proportions_all']['Run'], 0.95))
    assert('Self' not in analysis['proportions_all'])

    # Everything is high attention at the 0th percentile
    analysis = knockon.explainer.attention_analysis(_planted(), percentile=0)
    assert(analysis['n_high'] == analysis['n_edges'])
    assert(analysis['proportions_high'] == analysis['proportions_all'])

    with pytest.raises(knockon.exceptions.dataIntegrityError):
        knockon.explainer.attention_analysis(_attention([(0, 0, 'Self', 1, 0, 1.0)]))


def test_feature_comparison(day_graph):
    classifier, regressor = small_pair(day_graph.bundle, seed=0)
    _, attention = knockon.forecaster.live_rollout(day_graph, classifier, regressor, k=2, capture_attention=True)
    features = knockon.explainer.feature_table([day_graph])
    analysis = knockon.explainer.attention_analysis(attention, features=features, percentile=50)

    assert(len(features) == day_graph.n_nodes)
    assert(set(analysis['feature_comparison']) == set(knockon.explainer.COMPARED_FEATURES))
    assert(set(analysis['proportions_all']) <= {'Run', 'Dwell', 'Headway'})
    assert(np.isclose(sum(analysis['proportions_all'].values()), 1.0))


def test_permutation_importance(day_graph):
    classifier, regressor = small_pair(day_graph.bundle, seed=1)
    features = ['is_weekend', 'train_count_last_60min', 'lag2_delay', 'train_type']
    a = knockon.explainer.permutation_importance([day_graph], classifier, regressor, features=features, seed=3, k=2,
                                                 progress_bar=False, verbose=False)
    b = knockon.explainer.permutation_importance([day_graph], classifier, regressor, features=features, seed=3, k=2,
                                                 progress_bar=False, verbose=False)

    pd.testing.assert_frame_equal(a, b)
    assert(set(a['feature']) == set(features))
    assert(np.allclose(a['importance'], a['shuffled_mae'] - a['baseline_mae']))
    # A feature constant over the day cannot change the forecast
    assert(a.set_index('feature').loc['is_weekend', 'importance'] == 0)

    log, _ = knockon.forecaster.live_rollout(day_graph, classifier, regressor, k=2)
    mae, _ = knockon.evaluator.regression_metrics(log['pred_delay'], log['true_delay'])
    assert(np.isclose(a['baseline_mae'].iloc[0], mae))

    with pytest.raises(knockon.exceptions.configError):
        knockon.explainer.permutation_importance([day_graph], classifier, regressor, features=['colour'],
                                                 progress_bar=False, verbose=False)
