"""
Submodule containing functions relative to **evaluation** of prediction logs.

- regression (MAE, RMSE) and delay occurrence classification (Accuracy, Precision, Recall, F1) scores, overall and per
  horizon step,
- Edge Propagation Error (EPE): error on the change of delay across Run, Dwell and Headway edges, as a regression MAE
  and as the classification of "delay changes across the edge",
- subgroup breakdowns along delay magnitude, peak hours, weekend, holiday, train type and busiest stations.

All functions work on prediction logs (see knockon.forecaster.PREDICTION_COLUMNS) and never run models.

By using this code you agree to the terms of the software license agreement.

© Copyright 2020 Wyss Center for Bio and Neuro Engineering – All rights reserved
"""

import json
import os

import numpy as np
import pandas as pd
from sklearn.metrics import (accuracy_score, f1_score, mean_absolute_error, mean_squared_error, precision_score,
                             recall_score)

from knockon.exceptions import configError, dataIntegrityError
from knockon.grapher import EDGE_TYPES, HEADWAY

METRICS = ['MAE', 'RMSE', 'Accuracy', 'Precision', 'Recall', 'F1']
DELAY_BINS = [-np.inf, 0, 5, 15, 60, np.inf]
DELAY_LABELS = ['0', '(0,5]', '(5,15]', '(15,60]', '>60']
AXES = ['delay', 'peak', 'weekend', 'holiday', 'train_type', 'station']


def _vectors(predictions, truths):
    p = np.asarray(predictions, dtype=float).ravel()
    t = np.asarray(truths, dtype=float).ravel()
    if p.shape != t.shape:
        raise dataIntegrityError('Error: predictions and truths must have the same length.')
    if len(p) == 0:
        raise dataIntegrityError('Error: cannot compute metrics on empty vectors.')
    return p, t


def regression_metrics(predictions, truths):
    """
    Mean absolute and root mean square error, in minutes.

    Returns
    -------
    (mae, rmse): (float, float)
    """
    p, t = _vectors(predictions, truths)
    return float(mean_absolute_error(t, p)), float(np.sqrt(mean_squared_error(t, p)))


def classification_metrics(predictions, truths, threshold=0.0):
    """
    Scores of the delay occurrence classification (an event is positive iff its delay is above `threshold`).

    Zero-denominator precision or recall is reported as 0.

    Returns
    -------
    (accuracy, precision, recall, f1): tuple of float
    """
    p, t = _vectors(predictions, truths)
    y_pred = p > threshold
    y_true = t > threshold
    return (float(accuracy_score(y_true, y_pred)),
            float(precision_score(y_true, y_pred, zero_division=0)),
            float(recall_score(y_true, y_pred, zero_division=0)),
            float(f1_score(y_true, y_pred, zero_division=0)))


def _scores(df):
    if len(df) == 0:
        return dict({m: np.nan for m in METRICS}, n=0)
    mae, rmse = regression_metrics(df['pred_delay'], df['true_delay'])
    acc, prec, rec, f1 = classification_metrics(df['pred_delay'], df['true_delay'])
    return {'n': len(df), 'MAE': mae, 'RMSE': rmse, 'Accuracy': acc, 'Precision': prec, 'Recall': rec, 'F1': f1}


def metrics_report(log):
    """
    Overall scores of every model of a prediction log.

    Returns
    -------
    report: pandas.DataFrame
        one row per model_name with columns n and METRICS
    """
    rows = [dict(model_name=name, **_scores(df)) for name, df in log.groupby('model_name', sort=True)]
    return pd.DataFrame(rows, columns=['model_name', 'n'] + METRICS)


def per_horizon_metrics(log, k=None):
    """
    Scores of every model per horizon step.

    Parameters
    ----------
    log: pandas.DataFrame
        prediction log
    k: int, optional
        horizon length; steps without predictions are reported with n = 0 and NaN scores

    Returns
    -------
    (table, curves): (pandas.DataFrame, dict)
        one row per (model_name, step_k), and model_name -> {step_k, n, MAE, ...} arrays (plot-ready)
    """
    if 'step_k' not in log.columns:
        raise dataIntegrityError('Error: the prediction log has no step_k column.')
    rows = []
    for name, df in log.groupby('model_name', sort=True):
        steps = range(k) if k is not None else sorted(df['step_k'].unique())
        for s in steps:
            rows.append(dict(model_name=name, step_k=int(s), **_scores(df[df['step_k'] == s])))
    table = pd.DataFrame(rows, columns=['model_name', 'step_k', 'n'] + METRICS)
    curves = {name: {c: [None if pd.isna(v) else v for v in df[c].tolist()] for c in ['step_k', 'n'] + METRICS}
              for name, df in table.groupby('model_name', sort=True)}
    return table, curves


def epe(true_src, true_dst, pred_src, pred_dst):
    """
    Edge Propagation Error |(true_dst - true_src) - (pred_dst - pred_src)|, elementwise.
    """
    return np.abs((np.asarray(true_dst, dtype=float) - np.asarray(true_src, dtype=float))
                  - (np.asarray(pred_dst, dtype=float) - np.asarray(pred_src, dtype=float)))


def node_delays(graph, log):
    """
    Per-node true and predicted delays of one model on one day.

    Returns
    -------
    (true, pred): (ndarray, ndarray)
        NaN for the nodes absent from the log
    """
    true = np.full(graph.n_nodes, np.nan)
    pred = np.full(graph.n_nodes, np.nan)
    ids = [graph.lookup.get((t, int(s), k)) for t, s, k in zip(log['trip_id'], log['stop_index'], log['event_kind'])]
    ok = np.array([i is not None for i in ids], dtype=bool)
    ids = np.array([i for i in ids if i is not None], dtype=np.int64)
    true[ids] = log['true_delay'].to_numpy(dtype=float)[ok]
    pred[ids] = log['pred_delay'].to_numpy(dtype=float)[ok]
    return true, pred


def edge_table(graphs, log):
    """
    Edges whose both endpoints are prediction targets, with endpoint delays, for every model of a log.

    Parameters
    ----------
    graphs: list of eventGraph
    log: pandas.DataFrame
        prediction log covering (a subset of) the days of `graphs`

    Returns
    -------
    (table, skipped): (pandas.DataFrame, dict)
        edge rows (model_name, service_day, src, dst, src_trip, dst_trip, station_code, edge_type, true_src, true_dst,
        pred_src, pred_dst) and the number of edges skipped per model
    """
    frames = []
    skipped = {}
    by_day = {day: df for day, df in log.groupby('service_day', sort=True)}
    for graph in graphs:
        day = graph.service_day.strftime('%Y-%m-%d')
        if day not in by_day:
            continue
        for name, df in by_day[day].groupby('model_name', sort=True):
            true, pred = node_delays(graph, df)
            both = ~np.isnan(pred[graph.src]) & ~np.isnan(pred[graph.dst])
            skipped[name] = skipped.get(name, 0) + int((~both).sum())
            src, dst = graph.src[both], graph.dst[both]
            trips = graph.nodes['trip_id'].to_numpy()
            frames.append(pd.DataFrame({'model_name': name, 'service_day': day, 'src': src, 'dst': dst,
                                        'src_trip': trips[src], 'dst_trip': trips[dst],
                                        'station_code': graph.nodes['station_code'].to_numpy()[dst],
                                        'edge_type': np.array(EDGE_TYPES)[graph.edge_type[both]],
                                        'true_src': true[src], 'true_dst': true[dst],
                                        'pred_src': pred[src], 'pred_dst': pred[dst]}))
    columns = ['model_name', 'service_day', 'src', 'dst', 'src_trip', 'dst_trip', 'station_code', 'edge_type',
               'true_src', 'true_dst', 'pred_src', 'pred_dst']
    table = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=columns)
    return table[columns], skipped


def epe_report(edges):
    """
    EPE-MAE per model and edge type.

    Parameters
    ----------
    edges: pandas.DataFrame
        output of edge_table

    Returns
    -------
    report: pandas.DataFrame
        columns model_name, edge_type, n_edges, epe_mae
    """
    rows = []
    for (name, typ), df in edges.groupby(['model_name', 'edge_type'], sort=True):
        err = epe(df['true_src'], df['true_dst'], df['pred_src'], df['pred_dst'])
        rows.append({'model_name': name, 'edge_type': typ, 'n_edges': len(df), 'epe_mae': float(err.mean())})
    return pd.DataFrame(rows, columns=['model_name', 'edge_type', 'n_edges', 'epe_mae'])


def change_labels(edges, change_tolerance=0.5):
    """
    True and predicted "delay changes across the edge" labels (|change| > change_tolerance).
    """
    true = np.abs(edges['true_dst'].to_numpy(dtype=float) - edges['true_src'].to_numpy(dtype=float)) > change_tolerance
    pred = np.abs(edges['pred_dst'].to_numpy(dtype=float) - edges['pred_src'].to_numpy(dtype=float)) > change_tolerance
    return true, pred


def epe_classification(edges, change_tolerance=0.5):
    """
    Classification of delay changes across edges, per model and edge type.

    Parameters
    ----------
    edges: pandas.DataFrame
        output of edge_table
    change_tolerance: float
        minimum absolute change of delay (minutes) counted as a change

    Returns
    -------
    report: pandas.DataFrame
        columns model_name, edge_type, n_edges, n_positive, Precision, Recall, F1
    """
    rows = []
    for (name, typ), df in edges.groupby(['model_name', 'edge_type'], sort=True):
        true, pred = change_labels(df, change_tolerance)
        rows.append({'model_name': name, 'edge_type': typ, 'n_edges': len(df), 'n_positive': int(true.sum()),
                     'Precision': float(precision_score(true, pred, zero_division=0)),
                     'Recall': float(recall_score(true, pred, zero_division=0)),
                     'F1': float(f1_score(true, pred, zero_division=0))})
    return pd.DataFrame(rows, columns=['model_name', 'edge_type', 'n_edges', 'n_positive', 'Precision', 'Recall',
                                       'F1'])


def propagation_overlap(edges, propagation_events, model_name, change_tolerance=0.5):
    """
    Fraction of generator propagation events whose Headway edge is a predicted delay change of a model.

    Parameters
    ----------
    edges: pandas.DataFrame
        output of edge_table
    propagation_events: list of dict
        ground truth propagation events (from_trip, to_trip, station, ...)
    model_name: str
    change_tolerance: float

    Returns
    -------
    overlap: float
        NaN when no propagation event falls on an evaluated Headway edge
    """
    hw = edges[(edges['model_name'] == model_name) & (edges['edge_type'] == EDGE_TYPES[HEADWAY])]
    _, pred = change_labels(hw, change_tolerance)
    predicted = dict(zip(zip(hw['src_trip'], hw['dst_trip'], hw['station_code']), pred))
    hits = [predicted[key] for key in ((e['from_trip'], e['to_trip'], e['station']) for e in propagation_events)
            if key in predicted]
    if not hits:
        return float('nan')
    return float(np.mean(hits))


def annotate_log(log, graphs):
    """
    Join the subgroup metadata of the events (station, train type, peak, weekend and holiday flags) to a log.
    """
    frames = []
    for graph in graphs:
        nodes = graph.nodes
        frames.append(pd.DataFrame({'service_day': graph.service_day.strftime('%Y-%m-%d'),
                                    'trip_id': nodes['trip_id'].to_numpy(),
                                    'stop_index': nodes['stop_index'].to_numpy(dtype=np.int64),
                                    'event_kind': nodes['kind'].to_numpy(),
                                    'station_code': nodes['station_code'].to_numpy(),
                                    'train_type': nodes['train_type'].to_numpy(),
                                    'is_peak': graph.features['is_peak'].to_numpy() > 0,
                                    'is_weekend': graph.features['is_weekend'].to_numpy() > 0,
                                    'is_holiday': graph.features['is_holiday'].to_numpy() > 0}))
    meta = pd.concat(frames, ignore_index=True)
    log = log.copy()
    log['stop_index'] = log['stop_index'].astype(np.int64)
    return log.merge(meta, on=['service_day', 'trip_id', 'stop_index', 'event_kind'], how='left', validate='m:1')


def delay_bucket(delays):
    """
    Delay magnitude bucket of true delays: 0, (0,5], (5,15], (15,60], >60 minutes.
    """
    return pd.cut(np.asarray(delays, dtype=float), bins=DELAY_BINS, labels=DELAY_LABELS, right=True).astype(str)


def subgroup_eval(log, axes=AXES, top_n=10):
    """
    Scores per bucket along subgroup axes.

    Parameters
    ----------
    log: pandas.DataFrame
        prediction log annotated with annotate_log
    axes: list
        among 'delay', 'peak', 'weekend', 'holiday', 'train_type', 'station'
    top_n: int
        number of busiest stations (by number of logged events) kept as their own bucket, others are 'other'

    Returns
    -------
    report: pandas.DataFrame
        columns model_name, axis, bucket, n and METRICS; empty buckets have n = 0 and NaN scores
    """
    unknown = [a for a in axes if a not in AXES]
    if unknown:
        raise configError('Error: unknown subgroup axes {}.'.format(unknown))
    rows = []
    for name, df in log.groupby('model_name', sort=True):
        for axis in axes:
            if axis == 'delay':
                key, buckets = delay_bucket(df['true_delay']), DELAY_LABELS
            elif axis in ['peak', 'weekend', 'holiday']:
                key = np.where(df['is_' + axis].fillna(False).astype(bool), axis, 'not ' + axis)
                buckets = [axis, 'not ' + axis]
            elif axis == 'train_type':
                key = df['train_type'].astype(str).to_numpy()
                buckets = sorted(set(key))
            else:
                busiest = log['station_code'].value_counts().sort_index().sort_values(ascending=False, kind='mergesort')
                top = list(busiest.index[:top_n])
                key = np.where(df['station_code'].isin(top), df['station_code'].astype(str), 'other')
                buckets = top + ['other']
            key = np.asarray(key)
            for bucket in buckets:
                rows.append(dict(model_name=name, axis=axis, bucket=bucket, **_scores(df[key == bucket])))
    return pd.DataFrame(rows, columns=['model_name', 'axis', 'bucket', 'n'] + METRICS)


def save_json(obj, path):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w') as f:
        json.dump(obj, f, indent=2, sort_keys=True)


def write_reports(log, graphs, path, k=None, top_n=10, change_tolerance=0.5):
    """
    Compute and write every evaluation report of a prediction log to the folder `path`:
    metrics.{csv,json}, horizon.{csv,json}, epe.{csv,json}, subgroups.csv.

    Returns
    -------
    reports: dict
        name -> DataFrame
    """
    os.makedirs(path, exist_ok=True)
    metrics = metrics_report(log)
    horizon, curves = per_horizon_metrics(log, k=k)
    edges, skipped = edge_table(graphs, log)
    epe_mae = epe_report(edges)
    epe_cls = epe_classification(edges, change_tolerance=change_tolerance)
    epe_all = epe_mae.merge(epe_cls, on=['model_name', 'edge_type', 'n_edges'], how='outer')
    subgroups = subgroup_eval(annotate_log(log, graphs), top_n=top_n)

    metrics.to_csv(os.path.join(path, 'metrics.csv'), index=False, lineterminator='\n')
    save_json(metrics.set_index('model_name').to_dict(orient='index'), os.path.join(path, 'metrics.json'))
    horizon.to_csv(os.path.join(path, 'horizon.csv'), index=False, lineterminator='\n')
    save_json(curves, os.path.join(path, 'horizon.json'))
    epe_all.to_csv(os.path.join(path, 'epe.csv'), index=False, lineterminator='\n')
    save_json({'edges': epe_all.to_dict(orient='records'), 'skipped_edges': skipped},
              os.path.join(path, 'epe.json'))
    subgroups.to_csv(os.path.join(path, 'subgroups.csv'), index=False, lineterminator='\n')
    return {'metrics': metrics, 'horizon': horizon, 'epe': epe_all, 'subgroups': subgroups, 'edges': edges}


def print_metrics(metrics):
    print('\n****** EVALUATION RESULTS ******')
    for row in metrics.itertuples(index=False):
        print('{}: n={}, MAE={:.4f}, RMSE={:.4f}, Acc={:.4f}, Prec={:.4f}, Rec={:.4f}, F1={:.4f}'.format(
            row.model_name, row.n, row.MAE, row.RMSE, row.Accuracy, row.Precision, row.Recall, row.F1))
