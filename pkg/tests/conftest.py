"""
Shared fixtures for the knockon test suite.

By using this code you agree to the terms of the software license agreement.

© Copyright 2020 Wyss Center for Bio and Neuro Engineering – All rights reserved
"""

import os
import warnings

import pandas as pd
import pytest
import torch

import knockon

DATA = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'data')


def make_trip(train_number, stops, day='2022-01-03', train_type='SPR', platform='1'):
    """
    Cleaned records of one trip.

    stops: list of (station, scheduled_arrival, arrival_delay, scheduled_departure, departure_delay) with 'HH:MM'
    times (None for the origin arrival and the terminus departure).
    """
    rows = []
    for i, (station, arr, arr_delay, dep, dep_delay) in enumerate(stops):
        sched_arr = pd.Timestamp('{} {}'.format(day, arr)) if arr is not None else pd.NaT
        sched_dep = pd.Timestamp('{} {}'.format(day, dep)) if dep is not None else pd.NaT
        rows.append({'service_day': pd.Timestamp(day),
                     'train_number': str(train_number),
                     'trip_id': '{}-{}'.format(pd.Timestamp(day).strftime('%Y%m%d'), train_number),
                     'station_code': station,
                     'stop_index': i,
                     'train_type': train_type,
                     'scheduled_arrival': sched_arr,
                     'actual_arrival': sched_arr + pd.Timedelta(minutes=arr_delay or 0) if arr is not None else pd.NaT,
                     'scheduled_departure': sched_dep,
                     'actual_departure': sched_dep + pd.Timedelta(minutes=dep_delay or 0) if dep is not None
                     else pd.NaT,
                     'platform_scheduled': platform,
                     'platform_actual': platform,
                     'cancelled_arrival': False,
                     'cancelled_departure': False,
                     'prev_stop_cancelled': False,
                     'num_prev_cancelled': 0})
    records = pd.DataFrame(rows)
    for c in knockon.parser.TIME_COLUMNS:
        records[c] = records[c].astype('datetime64[ns]')
    records['stop_index'] = records['stop_index'].astype('int64')
    return records


def fitted_graph(records):
    """Event graph of one day with a feature bundle fitted on that same day."""
    graph = knockon.grapher.build_event_graph(records)
    with warnings.catch_warnings():
        warnings.simplefilter('ignore')
        bundle = knockon.featurizer.featureBundle().fit(graph.features, graph.duration_actual)
    return graph.attach(bundle)


@pytest.fixture
def day_records():
    records = knockon.parser.parse_records(os.path.join(DATA, 'day.csv'))
    records, _ = knockon.parser.clean(knockon.parser.assign_trip_ids(records))
    return records


@pytest.fixture
def day_graph(day_records):
    return fitted_graph(day_records)


@pytest.fixture
def constant_delay_graph():
    # One trip delayed by 3 minutes at every event
    records = make_trip(5000, [('A', None, None, '10:00', 3),
                               ('B', '10:10', 3, '10:12', 3),
                               ('C', '10:22', 3, '10:24', 3),
                               ('D', '10:34', 3, '10:36', 3),
                               ('E', '10:46', 3, None, None)])
    return fitted_graph(records)


@pytest.fixture
def synthetic_batch():
    config = knockon.simulator.syntheticConfig(station_count=6, trips_per_day=6, day_count=4, random_seed=3,
                                               primary_delay_rate=0.2)
    records, _ = knockon.parser.clean(knockon.simulator.generate_synthetic(config)[0])
    with warnings.catch_warnings():
        warnings.simplefilter('ignore')
        batch = knockon.batcher.serviceDayBatch(records, fractions=(0.5, 0.25, 0.25), progress_bar=False,
                                                verbose=False).build()
    return batch


def small_pair(bundle, seed=0, dtype=torch.float64, layers=2, hidden_channels=8, heads=2):
    """Seeded hurdle pair with a small GAT body."""
    torch.manual_seed(seed)
    config = knockon.networks.gatBodyConfig(layers=layers, hidden_channels=hidden_channels, attention_heads=heads)
    num_inputs = len(bundle.input_columns)
    classifier = knockon.networks.hurdleClassifier(num_inputs, bundle.vocab_sizes, config).to(dtype)
    regressor = knockon.networks.hurdleRegressor(num_inputs, bundle.vocab_sizes, config).to(dtype)
    return classifier, regressor
