"""
Submodule containing classes and functions relative to **event graphs**.

Each service day is turned into a directed acyclic graph whose nodes are arrival and departure events and whose edges
are operational dependencies:

- Run: departure at stop i-1 -> arrival at stop i of the same trip,
- Dwell: arrival -> departure at the same stop of the same trip,
- Headway: arrival of a leader -> arrival of a follower at the same station, when both are headway-eligible.

Node ids are sorted by (scheduled time, trip order, stop index, arrival before departure) so that every edge points
from a lower to a higher id. The submodule also implements the rollout state used during training and forecasting and
the extraction of sequentially consistent subgraphs.

By using this code you agree to the terms of the software license agreement.

© Copyright 2020 Wyss Center for Bio and Neuro Engineering – All rights reserved
"""

import json
import os
from dataclasses import dataclass

import networkx as nx
import numpy as np
import pandas as pd
from scipy.sparse import csr_matrix

from knockon.exceptions import dataIntegrityError, missingInputError
from knockon.featurizer import (ALL_FEATURES, DEFAULT_CAP, compute_node_features, find_headway_pairs,
                                trip_order)

RUN, DWELL, HEADWAY, SELF = 0, 1, 2, 3
EDGE_TYPES = ['Run', 'Dwell', 'Headway', 'Self']
EDGE_DIM = 1 + len(EDGE_TYPES)
SCHEDULED, PREDICTED, GROUND_TRUTH, REALIZED = 0, 1, 2, 3

NODE_COLUMNS = ['node_id', 'service_day', 'trip_id', 'stop_index', 'kind', 'station_code', 'scheduled_time',
                'actual_time', 'stop_time', 'train_type', 'platform_scheduled', 'n_stops', 'prev_stop_cancelled',
                'num_prev_cancelled', 'target_delay']
EDGE_COLUMNS = ['src', 'dst', 'type', 'duration_actual', 'duration_scheduled']
STRING_COLUMNS = ['trip_id', 'station_code', 'train_type', 'platform_scheduled', 'stop_name', 'day_of_week', 'month',
                  'kind']
TIME_FORMAT = '%Y-%m-%dT%H:%M:%S'


def _minutes(delta):
    return delta / pd.Timedelta(minutes=1)


def _events(records):
    """One row per event node of a day, in node order."""
    records = records.copy()
    if 'prev_stop_cancelled' not in records.columns:
        records['prev_stop_cancelled'] = False
    if 'num_prev_cancelled' not in records.columns:
        records['num_prev_cancelled'] = 0
    records['n_stops'] = records.groupby('trip_id')['stop_index'].transform('size')
    records['stop_time'] = records['scheduled_arrival'].fillna(records['scheduled_departure'])
    common = ['service_day', 'trip_id', 'stop_index', 'station_code', 'stop_time', 'train_type',
              'platform_scheduled', 'n_stops', 'prev_stop_cancelled', 'num_prev_cancelled']

    arr = records[records['scheduled_arrival'].notna()][common + ['scheduled_arrival', 'actual_arrival']]
    arr = arr.rename(columns={'scheduled_arrival': 'scheduled_time', 'actual_arrival': 'actual_time'})
    arr['kind'] = 'arrival'
    dep = records[records['scheduled_departure'].notna()][common + ['scheduled_departure', 'actual_departure']]
    dep = dep.rename(columns={'scheduled_departure': 'scheduled_time', 'actual_departure': 'actual_time'})
    dep['kind'] = 'departure'

    events = pd.concat([arr, dep], ignore_index=True)
    order = trip_order(records)
    events['_order'] = events['trip_id'].map(order)
    events['_kind'] = (events['kind'] == 'departure').astype(int)
    events = events.sort_values(['scheduled_time', '_order', 'stop_index', '_kind']).reset_index(drop=True)
    events = events.drop(columns=['_order', '_kind'])
    events['node_id'] = np.arange(len(events), dtype=np.int64)
    delay = _minutes(events['actual_time'] - events['scheduled_time'])
    events['target_delay'] = delay.clip(lower=0).fillna(0.0).astype(float)
    events['platform_scheduled'] = events['platform_scheduled'].where(events['platform_scheduled'].notna(), None)
    return events[NODE_COLUMNS], order


def _edges(records, events, order):
    key = {(t, int(s), k): int(n) for t, s, k, n in zip(events['trip_id'], events['stop_index'], events['kind'],
                                                        events['node_id'])}
    src, dst, typ = [], [], []
    for (t, s, k), n in key.items():
        if k == 'arrival' and (t, s - 1, 'departure') in key:
            src.append(key[(t, s - 1, 'departure')])
            dst.append(n)
            typ.append(RUN)
        if k == 'departure' and (t, s, 'arrival') in key:
            src.append(key[(t, s, 'arrival')])
            dst.append(n)
            typ.append(DWELL)

    pairs = find_headway_pairs(records, order=order)
    for p in pairs.itertuples(index=False):
        leader = key.get((p.leader_trip, int(p.leader_stop), 'arrival'))
        follower = key.get((p.follower_trip, int(p.follower_stop), 'arrival'))
        if leader is None or follower is None:
            raise dataIntegrityError('Error: headway pair {} -> {} references a missing arrival event.'
                                     .format(p.leader_trip, p.follower_trip))
        src.append(leader)
        dst.append(follower)
        typ.append(HEADWAY)

    edges = pd.DataFrame({'src': np.array(src, dtype=np.int64), 'dst': np.array(dst, dtype=np.int64),
                          'type': np.array(typ, dtype=np.int64)})
    sched = events['scheduled_time'].to_numpy()
    actual = events['actual_time'].to_numpy()
    edges['duration_actual'] = (actual[edges['dst']] - actual[edges['src']]) / np.timedelta64(1, 'm')
    edges['duration_scheduled'] = (sched[edges['dst']] - sched[edges['src']]) / np.timedelta64(1, 'm')
    edges = edges.sort_values(['dst', 'src']).reset_index(drop=True)

    within = edges['type'] != HEADWAY
    if (edges.loc[within, 'duration_actual'] < 0).any():
        raise dataIntegrityError('Error: negative running or dwelling duration in the event graph.')
    return edges


def _schedule(records):
    schedule = {}
    for trip_id, trip in records.sort_values(['trip_id', 'stop_index']).groupby('trip_id', sort=True):
        schedule[trip_id] = [{'stop_index': int(r.stop_index), 'station_code': r.station_code,
                              'scheduled_arrival': None if pd.isna(r.scheduled_arrival)
                              else r.scheduled_arrival.strftime(TIME_FORMAT),
                              'scheduled_departure': None if pd.isna(r.scheduled_departure)
                              else r.scheduled_departure.strftime(TIME_FORMAT)}
                             for r in trip.itertuples(index=False)]
    return schedule


class eventGraph():
    """
    Event graph of one service day with node features, targets and schedule metadata.
    """

    def __init__(self, nodes, edges, features, schedule, bundle=None):
        """
        Constructor for the eventGraph class. Use build_event_graph or eventGraph.load to create instances.

        Parameters
        ----------
        nodes: pandas.DataFrame
            event nodes in node order (columns NODE_COLUMNS)
        edges: pandas.DataFrame
            typed edges (columns EDGE_COLUMNS, type as integer code)
        features: pandas.DataFrame
            raw node features (columns ALL_FEATURES)
        schedule: dict
            trip_id -> list of scheduled stops
        bundle: featureBundle, optional
            fitted bundle used to compute the model inputs
        """
        self.nodes = nodes
        self.edges = edges
        self.features = features
        self.schedule = schedule
        self.service_day = pd.Timestamp(nodes['service_day'].iloc[0]) if len(nodes) else None
        self.n_nodes = len(nodes)
        self.n_edges = len(edges)

        n = self.n_nodes
        if len(edges) and (edges[['src', 'dst']].to_numpy().min() < 0 or edges[['src', 'dst']].to_numpy().max() >= n):
            raise dataIntegrityError('Error: edge endpoint outside the node set.')

        self.src = edges['src'].to_numpy(dtype=np.int64)
        self.dst = edges['dst'].to_numpy(dtype=np.int64)
        self.edge_type = edges['type'].to_numpy(dtype=np.int64)
        self.duration_actual = edges['duration_actual'].to_numpy(dtype=float)
        self.duration_scheduled = edges['duration_scheduled'].to_numpy(dtype=float)
        self.scheduled_time = nodes['scheduled_time'].to_numpy()
        self.actual_time = nodes['actual_time'].to_numpy()
        self.y = nodes['target_delay'].to_numpy(dtype=float)
        self.adjacency = csr_matrix((np.ones(len(self.src)), (self.src, self.dst)), shape=(n, n))

        self.lookup = {(t, int(s), k): i for i, (t, s, k) in
                       enumerate(zip(nodes['trip_id'], nodes['stop_index'], nodes['kind']))}
        self.lag2_src = np.array([self.lookup.get((t, int(s) - 2, 'departure'), -1)
                                  for t, s in zip(nodes['trip_id'], nodes['stop_index'])], dtype=np.int64)

        self.bundle = None
        self.x = None
        self.cat = None
        if bundle is not None:
            self.attach(bundle)

    def attach(self, bundle):
        """
        Compute the model inputs with a fitted featureBundle.
        """
        self.bundle = bundle
        self.x, self.cat = bundle.transform(self.features)
        return self

    def with_features(self, x=None, cat=None):
        """
        Shallow copy of the graph with replaced input matrices.
        """
        g = object.__new__(eventGraph)
        g.__dict__.update(self.__dict__)
        g.x = self.x if x is None else x
        g.cat = self.cat if cat is None else cat
        return g

    def node_id(self, trip_id, stop_index, kind):
        return self.lookup[(trip_id, int(stop_index), kind)]

    def edge_census(self):
        """Number of edges per edge type name."""
        counts = np.bincount(self.edge_type, minlength=len(EDGE_TYPES))
        return {name: int(counts[i]) for i, name in enumerate(EDGE_TYPES[:3])}

    def check_dag(self):
        """
        Verify that the graph is acyclic.
        """
        g = nx.DiGraph()
        g.add_nodes_from(range(self.n_nodes))
        g.add_edges_from(zip(self.src.tolist(), self.dst.tolist()))
        return nx.is_directed_acyclic_graph(g)

    def save(self, path):
        """
        Save the graph to the folder `path` (nodes.csv, edges.csv, schedule.json).
        """
        os.makedirs(path, exist_ok=True)
        nodes = self.nodes.copy()
        for c in ['scheduled_time', 'actual_time', 'stop_time']:
            nodes[c] = nodes[c].dt.strftime(TIME_FORMAT)
        nodes['service_day'] = nodes['service_day'].dt.strftime('%Y-%m-%d')
        extra = [c for c in ALL_FEATURES if c not in nodes.columns]
        nodes = pd.concat([nodes, self.features[extra]], axis=1)
        nodes.to_csv(os.path.join(path, 'nodes.csv'), index=False, lineterminator='\n')
        edges = self.edges[EDGE_COLUMNS].copy()
        edges['type'] = [EDGE_TYPES[t] for t in edges['type']]
        edges.to_csv(os.path.join(path, 'edges.csv'), index=False, lineterminator='\n')
        with open(os.path.join(path, 'schedule.json'), 'w') as f:
            json.dump(self.schedule, f, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path, bundle=None):
        """
        Load a graph saved with eventGraph.save.
        """
        for name in ['nodes.csv', 'edges.csv', 'schedule.json']:
            if not os.path.exists(os.path.join(path, name)):
                raise missingInputError('Error: {} does not exist.'.format(os.path.join(path, name)))
        nodes = pd.read_csv(os.path.join(path, 'nodes.csv'), dtype={c: str for c in STRING_COLUMNS})
        for c in ['scheduled_time', 'actual_time', 'stop_time']:
            nodes[c] = pd.to_datetime(nodes[c], format=TIME_FORMAT)
        nodes['service_day'] = pd.to_datetime(nodes['service_day'], format='%Y-%m-%d')
        nodes['platform_scheduled'] = nodes['platform_scheduled'].astype(object).where(
            nodes['platform_scheduled'].notna(), None)
        nodes['prev_stop_cancelled'] = nodes['prev_stop_cancelled'].astype(bool)
        features = nodes[ALL_FEATURES].copy()
        edges = pd.read_csv(os.path.join(path, 'edges.csv'))
        edges['type'] = edges['type'].map({name: i for i, name in enumerate(EDGE_TYPES)}).astype(np.int64)
        with open(os.path.join(path, 'schedule.json'), 'r') as f:
            schedule = json.load(f)
        return cls(nodes[NODE_COLUMNS], edges, features, schedule, bundle=bundle)


def build_event_graph(trips, bundle=None, holidays=None, cap=None):
    """
    Build the event graph of one service day.

    Parameters
    ----------
    trips: pandas.DataFrame
        cleaned records of one service day
    bundle: featureBundle, optional
        fitted bundle; when None the graph only carries raw features (used to fit the bundle)
    holidays: iterable, optional
        holiday dates (defaults to the bundle holidays)
    cap: float, optional
        clipping cap of minutes_since_last_train_clipped (defaults to the bundle cap)

    Returns
    -------
    graph: eventGraph
    """
    if trips['service_day'].nunique() > 1:
        raise dataIntegrityError('Error: build_event_graph expects the records of a single service day.')
    if holidays is None:
        holidays = bundle.holidays if bundle is not None else ()
    if cap is None:
        cap = bundle.cap if bundle is not None else DEFAULT_CAP

    nodes, order = _events(trips)
    edges = _edges(trips, nodes, order)
    features = compute_node_features(nodes, holidays=holidays, cap=cap)
    return eventGraph(nodes, edges, features, _schedule(trips), bundle=bundle)


@dataclass
class rolloutState:
    """
    Mutable simulation state of a rollout.

    source: per-node origin of the delay value (SCHEDULED, PREDICTED, GROUND_TRUTH or REALIZED)
    delay: per-node delay in minutes (0 for SCHEDULED)
    lag2: per-node delay at the departure two stops earlier, as known in this state
    edge_duration: per-edge duration exposed to the model (realized, scheduled or prediction-derived)
    """
    source: np.ndarray
    delay: np.ndarray
    lag2: np.ndarray
    edge_duration: np.ndarray
    cutoff: pd.Timestamp = None
    step: int = 0

    def copy(self):
        return rolloutState(self.source.copy(), self.delay.copy(), self.lag2.copy(), self.edge_duration.copy(),
                            self.cutoff, self.step)


def _refresh(graph, source, delay):
    known = graph.lag2_src >= 0
    lag2 = np.zeros(graph.n_nodes)
    lag2[known] = np.where(source[graph.lag2_src[known]] != SCHEDULED, delay[graph.lag2_src[known]], 0.0)

    duration = graph.duration_scheduled.copy()
    hw = graph.edge_type == HEADWAY
    duration[hw] = graph.duration_scheduled[hw] + delay[graph.dst[hw]] - delay[graph.src[hw]]
    realized = (source[graph.src] == REALIZED) & (source[graph.dst] == REALIZED)
    duration[realized] = graph.duration_actual[realized]
    return lag2, duration


def init_state(graph, cutoff):
    """
    Fresh rollout state for a forecast origin.

    A node is realized iff both its scheduled and its actual time are before `cutoff`.

    Parameters
    ----------
    graph: eventGraph
    cutoff: pandas.Timestamp

    Returns
    -------
    state: rolloutState
    """
    cutoff = pd.Timestamp(cutoff)
    c = np.datetime64(cutoff.to_datetime64())
    actual = graph.actual_time
    realized = (graph.scheduled_time < c) & ~pd.isna(actual) & (actual < c)
    source = np.where(realized, REALIZED, SCHEDULED).astype(np.int8)
    delay = np.where(realized, graph.y, 0.0)
    lag2, duration = _refresh(graph, source, delay)
    return rolloutState(source, delay, lag2, duration, cutoff=cutoff)


def update_state(graph, state, node_ids, values, source=PREDICTED):
    """
    Write step predictions into a copy of the state and refresh lag features and headway durations.

    Parameters
    ----------
    graph: eventGraph
    state: rolloutState
    node_ids: array_like
        nodes updated at this step
    values: array_like
        delays in minutes
    source: int
        PREDICTED or GROUND_TRUTH

    Returns
    -------
    state: rolloutState
        updated copy
    """
    node_ids = np.asarray(node_ids, dtype=np.int64)
    values = np.asarray(values, dtype=float)
    new = state.copy()
    if len(node_ids) == 0:
        return new
    if np.any(state.source[node_ids] == REALIZED):
        raise dataIntegrityError('Error: attempt to overwrite a realized event in the rollout state.')
    new.source[node_ids] = source
    new.delay[node_ids] = values
    new.lag2, new.edge_duration = _refresh(graph, new.source, new.delay)
    return new


@dataclass
class subgraphView:
    """
    Minimal, sequentially consistent subgraph around a set of anchor events.

    nodes: parent ids of the included nodes (sorted)
    anchors: local positions of the anchor nodes
    anchor_ids: parent ids of the anchor nodes
    edge_index: (2, E) local source and target positions
    edge_ids: parent edge ids
    edge_type: (E,) edge type codes
    edge_duration: (E,) durations exposed to the model, in minutes
    edge_attr: (E, EDGE_DIM) scaled duration followed by the one-hot edge type
    x: (n, d) float inputs, cat: (n, c) categorical inputs
    """
    nodes: np.ndarray
    anchors: np.ndarray
    anchor_ids: np.ndarray
    edge_index: np.ndarray
    edge_ids: np.ndarray
    edge_type: np.ndarray
    edge_duration: np.ndarray
    edge_attr: np.ndarray
    x: np.ndarray
    cat: np.ndarray
    cutoff: pd.Timestamp = None


def in_neighborhood(graph, anchors, depth):
    """
    Boolean mask of the anchors and of their in-neighborhood up to `depth` hops.
    """
    mask = np.zeros(graph.n_nodes, dtype=bool)
    mask[anchors] = True
    frontier = mask.copy()
    for _ in range(depth):
        reached = graph.adjacency.dot(frontier.astype(float)) > 0
        frontier = reached & ~mask
        if not frontier.any():
            break
        mask |= frontier
    return mask


def edge_features(bundle, edge_type, duration):
    onehot = np.eye(len(EDGE_TYPES))[edge_type]
    return np.concatenate([bundle.scale_edge(duration)[:, None], onehot], axis=1)


def extract_consistent_subgraph(graph, anchors, cutoff, state, depth=3, lag2_permutation=None):
    """
    Extract the subgraph seen by the model when predicting `anchors`.

    Only information available at `cutoff` enters the view: static features are schedule-derived, lagged delays and
    edge durations come from `state` (realized before the cutoff, predicted, or scheduled).

    Parameters
    ----------
    graph: eventGraph
        event graph with attached feature bundle
    anchors: array_like
        parent ids of the target events
    cutoff: pandas.Timestamp
        forecast origin
    state: rolloutState
        current rollout state
    depth: int
        number of in-neighborhood hops (at least the number of message passing layers)
    lag2_permutation: ndarray, optional
        permutation applied to the per-node lag2 values of the day (permutation importance)

    Returns
    -------
    view: subgraphView
    """
    anchors = np.asarray(anchors, dtype=np.int64)
    if len(anchors) and (anchors.min() < 0 or anchors.max() >= graph.n_nodes):
        raise dataIntegrityError('Error: anchor event not in graph.')
    if graph.bundle is None:
        raise dataIntegrityError('Error: the event graph has no feature bundle attached.')

    mask = in_neighborhood(graph, anchors, depth)
    nodes = np.flatnonzero(mask)
    local = -np.ones(graph.n_nodes, dtype=np.int64)
    local[nodes] = np.arange(len(nodes))
    e_ids = np.flatnonzero(mask[graph.src] & mask[graph.dst])

    x = np.array(graph.x[nodes], dtype=float)
    col = graph.bundle.lag2_column
    if col is not None:
        lag2 = state.lag2 if lag2_permutation is None else state.lag2[lag2_permutation]
        x[:, col] = graph.bundle.scale_lag2(lag2[nodes])

    duration = state.edge_duration[e_ids]
    edge_type = graph.edge_type[e_ids]
    return subgraphView(nodes=nodes,
                        anchors=local[anchors],
                        anchor_ids=anchors,
                        edge_index=np.stack([local[graph.src[e_ids]], local[graph.dst[e_ids]]]),
                        edge_ids=e_ids,
                        edge_type=edge_type,
                        edge_duration=duration,
                        edge_attr=edge_features(graph.bundle, edge_type, duration),
                        x=x,
                        cat=np.array(graph.cat[nodes]),
                        cutoff=pd.Timestamp(cutoff) if cutoff is not None else None)


@dataclass
class forecastWindow:
    """
    k consecutive anchor batches sharing one forecast origin.
    """
    origin: pd.Timestamp
    cutoff: pd.Timestamp
    steps: list


def forecast_windows(graph, k, step_minutes=15, origins=None):
    """
    Tile a service day into forecast windows.

    Step s of a window starting at T0 holds the events scheduled in [T0 + s*step, T0 + (s+1)*step). The window cutoff
    is the scheduled time of its earliest anchor. Windows without anchors are dropped.

    Parameters
    ----------
    graph: eventGraph
    k: int
        steps per window
    step_minutes: float
        length of one step
    origins: list, optional
        explicit window origins (default: consecutive windows covering the day)

    Returns
    -------
    windows: list of forecastWindow
    """
    if graph.n_nodes == 0:
        return []
    step = pd.Timedelta(minutes=step_minutes)
    times = pd.DatetimeIndex(graph.scheduled_time)
    if origins is None:
        start = times.min().floor('{}min'.format(int(step_minutes))) if float(step_minutes).is_integer() \
            else times.min()
        origins = []
        t = start
        while t <= times.max():
            origins.append(t)
            t = t + k * step

    windows = []
    for t0 in origins:
        t0 = pd.Timestamp(t0)
        steps = [np.flatnonzero((times >= t0 + s * step) & (times < t0 + (s + 1) * step)) for s in range(k)]
        anchored = [a for a in steps if len(a)]
        if not anchored:
            continue
        cutoff = pd.Timestamp(min(times[a].min() for a in anchored))
        windows.append(forecastWindow(origin=t0, cutoff=cutoff, steps=steps))
    return windows
