"""
Submodule containing classes and functions relative to **forecasting**.

The live protocol replays archived service days as if they were happening: each forecast window starts from the
realized history before its cutoff and the k steps are predicted one after the other, without any ground truth, each
step feeding its predictions into the lagged delay features and the headway durations seen by the next steps.

Baselines:

- Persistence: the last realized delay two stops back on the same trip, held constant over the horizon,
- Zero: always 0,
- GCN: one-shot prediction of the whole horizon from the initial state.

By using this code you agree to the terms of the software license agreement.

© Copyright 2020 Wyss Center for Bio and Neuro Engineering – All rights reserved
"""

import warnings

import numpy as np
import pandas as pd
import torch
from joblib import Parallel, delayed
from tqdm import tqdm

from knockon.exceptions import configError, dataIntegrityError
from knockon.grapher import (EDGE_TYPES, PREDICTED, REALIZED, extract_consistent_subgraph, forecast_windows,
                             init_state, update_state)
from knockon.networks import hurdle_predict, to_batch

PREDICTION_COLUMNS = ['service_day', 'trip_id', 'stop_index', 'event_kind', 'step_k', 'true_delay', 'pred_delay',
                      'model_name']
ATTENTION_COLUMNS = ['service_day', 'edge_src', 'edge_dst', 'edge_type', 'layer', 'head', 'score']


def _day(graph):
    return graph.service_day.strftime('%Y-%m-%d')


def prediction_rows(graph, anchors, step, pred, model_name):
    """
    Prediction log rows of the anchors of one step.
    """
    nodes = graph.nodes.iloc[anchors]
    return pd.DataFrame({'service_day': _day(graph),
                         'trip_id': nodes['trip_id'].to_numpy(),
                         'stop_index': nodes['stop_index'].to_numpy(dtype=np.int64),
                         'event_kind': nodes['kind'].to_numpy(),
                         'step_k': step,
                         'true_delay': graph.y[anchors],
                         'pred_delay': np.asarray(pred, dtype=float),
                         'model_name': model_name}, columns=PREDICTION_COLUMNS)


def attention_rows(graph, view, attention):
    """
    Attention log rows of the edges entering the anchors of a view, self-loops included.

    Parameters
    ----------
    graph: eventGraph
    view: subgraphView
    attention: list of torch.Tensor
        one (E + N, heads) tensor per layer, self-loops last

    Returns
    -------
    rows: pandas.DataFrame
        columns ATTENTION_COLUMNS, layers numbered from 1 and heads from 0
    """
    n = len(view.nodes)
    src = np.concatenate([view.edge_index[0], np.arange(n)])
    dst = np.concatenate([view.edge_index[1], np.arange(n)])
    types = np.array(EDGE_TYPES)[np.concatenate([view.edge_type, np.full(n, EDGE_TYPES.index('Self'))])]
    keep = np.isin(dst, view.anchors)
    frames = []
    for layer, alpha in enumerate(attention):
        alpha = alpha.cpu().numpy()[keep]
        heads = alpha.shape[1]
        frames.append(pd.DataFrame({'service_day': _day(graph),
                                    'edge_src': np.repeat(view.nodes[src[keep]], heads),
                                    'edge_dst': np.repeat(view.nodes[dst[keep]], heads),
                                    'edge_type': np.repeat(types[keep], heads),
                                    'layer': layer + 1,
                                    'head': np.tile(np.arange(heads), keep.sum()),
                                    'score': alpha.reshape(-1)}, columns=ATTENTION_COLUMNS))
    if not frames:
        return pd.DataFrame(columns=ATTENTION_COLUMNS)
    return pd.concat(frames, ignore_index=True)


class truthPredictor():
    """
    Predictor returning the true delays of the anchors (pipeline identity checks).
    """

    def __call__(self, graph, view, batch):
        return graph.y[view.anchor_ids], []


class hurdlePredictor():
    """
    Predictor composing a classifier and a regressor with the hurdle rule.
    """

    def __init__(self, classifier, regressor, threshold=0.5, capture_attention=False):
        self.classifier = classifier
        self.regressor = regressor
        self.threshold = threshold
        self.capture_attention = capture_attention
        for model in [classifier, regressor]:
            if isinstance(model, torch.nn.Module):
                model.eval()

    def __call__(self, graph, view, batch):
        pred, attention = hurdle_predict(self.classifier, self.regressor, batch, threshold=self.threshold,
                                         capture=self.capture_attention)
        return pred.cpu().numpy().astype(float), attention


class liveForecaster():
    """
    Live k-step rollout of a predictor over the forecast windows of a day.
    """

    def __init__(self, classifier=None, regressor=None, k=10, step_minutes=15, depth=3, threshold=0.5,
                 capture_attention=False, predictor=None, model_name='GATv2', dtype=torch.float32):
        """
        Parameters
        ----------
        classifier, regressor: torch.nn.Module or callable
            hurdle stages (ignored when `predictor` is given)
        k: int
            steps per window
        step_minutes: float
            length of one step
        depth: int
            in-neighborhood hops of the extracted subgraphs
        threshold: float
            classification threshold of the hurdle rule
        capture_attention: bool
            log the classifier attention of the edges entering each step's anchors
        predictor: callable, optional
            (graph, view, batch) -> (delays, attention), replaces the hurdle pair
        model_name: str
            model name written to the prediction log
        dtype: torch.dtype
            dtype of the batches
        """
        if predictor is None:
            if classifier is None or regressor is None:
                raise configError('Error: liveForecaster needs a classifier and a regressor or a predictor.')
            predictor = hurdlePredictor(classifier, regressor, threshold=threshold, capture_attention=capture_attention)
        self.predictor = predictor
        self.k = k
        self.step_minutes = step_minutes
        self.depth = depth
        self.model_name = model_name
        self.dtype = dtype

    def forecast(self, graph, origins=None, lag2_permutation=None, feature_graph=None):
        """
        Forecast every window of a day.

        Parameters
        ----------
        graph: eventGraph
            day graph with attached feature bundle
        origins: list, optional
            explicit window origins
        lag2_permutation: ndarray, optional
            permutation of the per-node lag2 values (permutation importance)
        feature_graph: eventGraph, optional
            graph providing the model inputs (a with_features copy of `graph`)

        Returns
        -------
        (predictions, attention): (pandas.DataFrame, pandas.DataFrame)
            prediction log (PREDICTION_COLUMNS) and attention log (ATTENTION_COLUMNS)
        """
        source = graph if feature_graph is None else feature_graph
        predictions, attention = [], []
        for window in forecast_windows(graph, self.k, self.step_minutes, origins):
            state = init_state(graph, window.cutoff)
            for s, anchors in enumerate(window.steps):
                if len(anchors) == 0:
                    continue
                view = extract_consistent_subgraph(source, anchors, window.cutoff, state, depth=self.depth,
                                                   lag2_permutation=lag2_permutation)
                pred, alpha = self.predictor(graph, view, to_batch(view, self.dtype))
                state = update_state(graph, state, anchors, pred, PREDICTED)
                predictions.append(prediction_rows(graph, anchors, s, pred, self.model_name))
                if alpha:
                    attention.append(attention_rows(graph, view, alpha))
        return _concat(predictions, PREDICTION_COLUMNS), _concat(attention, ATTENTION_COLUMNS)


def _concat(frames, columns):
    if not frames:
        return pd.DataFrame(columns=columns)
    return pd.concat(frames, ignore_index=True)


def live_rollout(graph, classifier, regressor, k=10, step_minutes=15, depth=3, threshold=0.5,
                 capture_attention=False, origins=None, model_name='GATv2'):
    """
    Live k-step forecast of a day with a hurdle pair.

    Returns
    -------
    (predictions, attention): (pandas.DataFrame, pandas.DataFrame)
    """
    dtype = next(classifier.parameters()).dtype if isinstance(classifier, torch.nn.Module) else torch.float32
    forecaster = liveForecaster(classifier, regressor, k=k, step_minutes=step_minutes, depth=depth,
                                threshold=threshold, capture_attention=capture_attention, model_name=model_name,
                                dtype=dtype)
    return forecaster.forecast(graph, origins=origins)


def oneshot_forecast(graph, classifier, regressor, k=10, step_minutes=15, depth=3, threshold=0.5, origins=None,
                     model_name='GCN'):
    """
    Forecast a day with the one-shot GCN pair: one forward pass per model and window yields the whole horizon.

    Returns
    -------
    predictions: pandas.DataFrame
    """
    dtype = next(classifier.parameters()).dtype
    predictions = []
    for window in forecast_windows(graph, k, step_minutes, origins):
        steps = [(s, a) for s, a in enumerate(window.steps) if len(a)]
        anchors = np.concatenate([a for _, a in steps])
        head = np.concatenate([np.full(len(a), s) for s, a in steps])
        state = init_state(graph, window.cutoff)
        view = extract_consistent_subgraph(graph, anchors, window.cutoff, state, depth=depth)
        pred, _ = hurdle_predict(classifier, regressor, to_batch(view, dtype), threshold=threshold)
        pred = pred.cpu().numpy()[np.arange(len(anchors)), head]
        for s, a in steps:
            predictions.append(prediction_rows(graph, a, s, pred[head == s], model_name))
    return _concat(predictions, PREDICTION_COLUMNS)


def persistence_values(graph, state):
    """
    Persistence value of each trip: realized delay at the departure two stops before the trip's next event.

    Returns
    -------
    values: dict
        trip_id -> delay in minutes (trips without such a departure are absent)
    """
    nodes = graph.nodes
    realized = (state.source == REALIZED) & (nodes['kind'] == 'departure').to_numpy()
    last = nodes[realized].groupby('trip_id')['stop_index'].max()
    values = {}
    for trip_id, stop in last.items():
        n = graph.lookup.get((trip_id, int(stop) - 1, 'departure'))
        if n is not None and state.source[n] == REALIZED:
            values[trip_id] = float(graph.y[n])
    return values


def persistence_baseline(graph, k=10, step_minutes=15, origins=None, model_name='Persistence'):
    """
    Persistence baseline: each anchor is predicted with the last known delay two stops back on its trip, constant
    over the horizon of the window; 0 when the trip has no such realized departure.

    Returns
    -------
    predictions: pandas.DataFrame
    """
    predictions = []
    trips = graph.nodes['trip_id'].to_numpy()
    for window in forecast_windows(graph, k, step_minutes, origins):
        values = persistence_values(graph, init_state(graph, window.cutoff))
        for s, anchors in enumerate(window.steps):
            if len(anchors):
                pred = np.array([values.get(t, 0.0) for t in trips[anchors]])
                predictions.append(prediction_rows(graph, anchors, s, pred, model_name))
    return _concat(predictions, PREDICTION_COLUMNS)


def zero_baseline(graph, k=10, step_minutes=15, origins=None, model_name='Zero'):
    """
    Zero-delay baseline: 0.0 for every anchor and step.

    Returns
    -------
    predictions: pandas.DataFrame
    """
    predictions = []
    for window in forecast_windows(graph, k, step_minutes, origins):
        for s, anchors in enumerate(window.steps):
            if len(anchors):
                predictions.append(prediction_rows(graph, anchors, s, np.zeros(len(anchors)), model_name))
    return _concat(predictions, PREDICTION_COLUMNS)


def sample_test_days(days, n=30, seed=0, exclude=()):
    """
    Draw n distinct evaluation days.

    Parameters
    ----------
    days: iterable
        candidate service days
    n: int
        number of days to draw
    seed: int
        sampling seed
    exclude: iterable
        days that must not be drawn (training days)

    Returns
    -------
    sample: list of pandas.Timestamp
        days in drawn order
    """
    excluded = {pd.Timestamp(d) for d in exclude}
    candidates = sorted({pd.Timestamp(d) for d in days} - excluded)
    if len(candidates) < n:
        raise dataIntegrityError('Error: {} test days requested but only {} held-out days are available.'
                                 .format(n, len(candidates)))
    rng = np.random.default_rng(seed)
    return [candidates[i] for i in rng.choice(len(candidates), size=n, replace=False)]


def forecast_days(graphs, fn, n_jobs=1, progress_bar=True):
    """
    Apply a day forecasting function to many days in parallel.

    Parameters
    ----------
    graphs: list of eventGraph
    fn: callable
        graph -> predictions DataFrame or (predictions, attention)
    n_jobs: int
        number of threads

    Returns
    -------
    results: list
        outputs of `fn`, in the order of `graphs`
    """
    if not graphs:
        warnings.warn('No day to forecast.')
    return Parallel(n_jobs=n_jobs, prefer='threads')(delayed(fn)(g) for g in tqdm(graphs, desc='Forecasting days',
                                                                               disable=not progress_bar))


def sort_log(log):
    """
    Deterministic row order of a prediction log.
    """
    return log.sort_values(['model_name', 'service_day', 'step_k', 'trip_id', 'stop_index', 'event_kind'],
                           kind='mergesort').reset_index(drop=True)
