"""
Test script for the live rollout, the baselines and the test day sampling.

By using this code you agree to the terms of the software license agreement.

© Copyright 2020 Wyss Center for Bio and Neuro Engineering – All rights reserved
"""


import numpy as np
import pandas as pd
import pytest
import torch

import knockon
from conftest import small_pair


class _constant():
    def __init__(self, value):
        self.value = value

    def __call__(self, batch, capture=False):
        return torch.full((len(batch.anchors),), self.value, dtype=batch.x.dtype), []


def test_truth_predictor(day_graph):
    forecaster = knockon.forecaster.liveForecaster(predictor=knockon.forecaster.truthPredictor(), k=2,
                                                   model_name='Truth')
    log, attention = forecaster.forecast(day_graph)

    assert(list(log.columns) == knockon.forecaster.PREDICTION_COLUMNS)
    assert(len(log) == day_graph.n_nodes)
    assert(np.array_equal(log['pred_delay'].to_numpy(), log['true_delay'].to_numpy()))
    assert(len(attention) == 0)
    assert(list(log['step_k']) == [0] * 4 + [1] * 5 + [0] * 3)


def test_never_delayed(day_graph):
    log, _ = knockon.forecaster.live_rollout(day_graph, _constant(-10.0), _constant(3.0), k=2)
    assert((log['pred_delay'] == 0).all())

    # A zero logit is a probability of exactly 0.5, which is not above the threshold
    log, _ = knockon.forecaster.live_rollout(day_graph, _constant(0.0), _constant(1.0), k=2)
    assert((log['pred_delay'] == 0).all())

    log, _ = knockon.forecaster.live_rollout(day_graph, _constant(10.0), _constant(1.0), k=2)
    assert(np.allclose(log['pred_delay'], np.expm1(1.0)))


def test_single_step_rollout(day_graph):
    classifier, regressor = small_pair(day_graph.bundle, seed=0)
    log, _ = knockon.forecaster.live_rollout(day_graph, classifier, regressor, k=1,
                                             origins=['2022-01-03 10:15'])

    cutoff = pd.Timestamp('2022-01-03 10:17')
    anchors = np.arange(4, 9)
    state = knockon.grapher.init_state(day_graph, cutoff)
    view = knockon.grapher.extract_consistent_subgraph(day_graph, anchors, cutoff, state)
    expected, _ = knockon.networks.hurdle_predict(classifier, regressor,
                                                  knockon.networks.to_batch(view, torch.float64))
    assert(np.allclose(log['pred_delay'].to_numpy(), expected.numpy()))


def test_no_future_leakage(day_graph, day_records):
    classifier, regressor = small_pair(day_graph.bundle, seed=1)
    origin = '2022-01-03 10:15'
    cutoff = pd.Timestamp('2022-01-03 10:17')
    log, _ = knockon.forecaster.live_rollout(day_graph, classifier, regressor, k=3, origins=[origin])

    # Shift every actual time at or after the cutoff: nothing the model may see changes
    shifted = day_records.copy()
    for c in ['actual_arrival', 'actual_departure']:
        late = shifted[c] >= cutoff
        shifted.loc[late, c] = shifted.loc[late, c] + pd.Timedelta(minutes=5)
    graph = knockon.grapher.build_event_graph(shifted, bundle=day_graph.bundle)
    log_shifted, _ = knockon.forecaster.live_rollout(graph, classifier, regressor, k=3, origins=[origin])

    assert(not np.array_equal(log['true_delay'].to_numpy(), log_shifted['true_delay'].to_numpy()))
    assert(np.array_equal(log['pred_delay'].to_numpy(), log_shifted['pred_delay'].to_numpy()))


def test_attention_log(day_graph):
    classifier, regressor = small_pair(day_graph.bundle, seed=2)
    log, attention = knockon.forecaster.live_rollout(day_graph, classifier, regressor, k=2, capture_attention=True)

    assert(list(attention.columns) == knockon.forecaster.ATTENTION_COLUMNS)
    assert(set(attention['layer']) == {1, 2})
    assert(set(attention['head']) == {0, 1})
    assert('Self' in set(attention['edge_type']))
    # Attention over the in-edges of each anchor sums to one
    sums = attention.groupby(['edge_dst', 'layer', 'head'])['score'].sum()
    assert(np.allclose(sums, 1.0))
    assert(sorted(attention['edge_dst'].unique()) == list(range(day_graph.n_nodes)))


def test_persistence(day_graph):
    log = knockon.forecaster.persistence_baseline(day_graph, k=2)
    assert(set(log['model_name']) == {'Persistence'})
    assert((log.loc[log['step_k'] == 1, 'pred_delay'] == 0).all())

    late = log.iloc[-3:]
    assert(list(late['trip_id']) == ['20220103-1001', '20220103-1000', '20220103-1001'])
    assert(list(late['pred_delay']) == [0.0, 3.0, 0.0])
    # No realized departure before the first window
    assert((log.iloc[:9]['pred_delay'] == 0).all())


def test_persistence_constant_delay(constant_delay_graph):
    log = knockon.forecaster.persistence_baseline(constant_delay_graph, k=2, origins=['2022-01-03 10:30'])

    assert(len(log) == 3)
    assert(list(log['step_k']) == [0, 0, 1])
    assert((log['pred_delay'] == 3.0).all())
    mae, _ = knockon.evaluator.regression_metrics(log['pred_delay'], log['true_delay'])
    assert(mae == 0)


def test_zero_baseline(day_graph):
    log = knockon.forecaster.zero_baseline(day_graph, k=2)

    assert((log['pred_delay'] == 0).all())
    mae, _ = knockon.evaluator.regression_metrics(log['pred_delay'], log['true_delay'])
    assert(np.isclose(mae, day_graph.y.mean()))
    _, precision, recall, f1 = knockon.evaluator.classification_metrics(log['pred_delay'], log['true_delay'])
    assert(precision == 0 and recall == 0 and f1 == 0)


def test_oneshot_forecast(day_graph):
    bundle = day_graph.bundle
    num_inputs = len(bundle.input_columns)
    torch.manual_seed(3)
    classifier = knockon.networks.oneshotGCN(num_inputs, bundle.vocab_sizes, k=2, hidden_channels=6).double()
    regressor = knockon.networks.oneshotGCN(num_inputs, bundle.vocab_sizes, k=2, mode='regressor',
                                            hidden_channels=6).double()
    log = knockon.forecaster.oneshot_forecast(day_graph, classifier, regressor, k=2)

    n_windows = len(knockon.grapher.forecast_windows(day_graph, 2))
    assert(classifier.n_forward == n_windows and regressor.n_forward == n_windows)
    assert(len(log) == day_graph.n_nodes)
    assert(set(log['model_name']) == {'GCN'})
    assert((log['pred_delay'] >= 0).all())


def test_sample_test_days():
    days = pd.date_range('2022-01-03', periods=60, freq='D')

    a = knockon.forecaster.sample_test_days(days, n=30, seed=0)
    b = knockon.forecaster.sample_test_days(days, n=30, seed=0)
    c = knockon.forecaster.sample_test_days(days, n=30, seed=1)
    assert(a == b)
    assert(a != c)
    assert(len(set(a)) == 30)

    # All available days, in drawn order
    full = knockon.forecaster.sample_test_days(days[:5], n=5, seed=0)
    assert(set(full) == set(days[:5]))

    held_out = knockon.forecaster.sample_test_days(days, n=10, seed=0, exclude=days[:50])
    assert(set(held_out) == set(days[50:]))

    with pytest.raises(knockon.exceptions.dataIntegrityError):
        knockon.forecaster.sample_test_days(days, n=11, exclude=days[:50])


def test_forecast_days(synthetic_batch):
    graphs = synthetic_batch.split_graphs('train')
    logs = knockon.forecaster.forecast_days(graphs, lambda g: knockon.forecaster.zero_baseline(g, k=3), n_jobs=2,
                                            progress_bar=False)
    assert(len(logs) == len(graphs))
    log = knockon.forecaster.sort_log(pd.concat(logs, ignore_index=True))
    assert(len(log) == sum(g.n_nodes for g in graphs))
    assert(log['service_day'].is_monotonic_increasing)
