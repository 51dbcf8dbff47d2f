"""
Submodule containing classes and functions relative to **feature** computation for event graphs.

It implements the edge durations (running, dwelling, headway), the headway eligibility rule, the time encodings, the
platform and station congestion counts and the lagged delay, together with the feature scaler (log1p followed by
standardization) and the categorical vocabularies. All congestion features are computed from scheduled times so that
they never depend on realized delays.

By using this code you agree to the terms of the software license agreement.

© Copyright 2020 Wyss Center for Bio and Neuro Engineering – All rights reserved
"""

import json
import os
import warnings

import numpy as np
import pandas as pd
from sklearn.preprocessing import StandardScaler

from knockon.exceptions import dataIntegrityError, missingInputError

MINUTES_PER_DAY = 1440
HEADWAY_WINDOW = 30
PLATFORM_WINDOW = 60
STATION_WINDOW = 5
DEFAULT_CAP = 120
# Closed-open [06:30, 09:00) and [16:00, 18:30)
PEAK_WINDOWS = ((390, 540), (960, 1110))

NUMERIC_FEATURES = ['lag2_delay', 'train_count_last_60min', 'minutes_since_last_train_clipped',
                    'inbound_trains_near_arrival', 'number_of_stops_left', 'num_prev_cancelled']
PASSTHROUGH_FEATURES = ['arrival_tod_sin', 'arrival_tod_cos', 'is_weekend', 'is_holiday', 'is_peak',
                        'is_origin_stop', 'is_terminal_stop', 'platform_known', 'prev_stop_cancelled', 'is_departure']
CATEGORICAL_FEATURES = ['train_type', 'stop_name', 'platform_scheduled', 'day_of_week', 'month']
ALL_FEATURES = NUMERIC_FEATURES + PASSTHROUGH_FEATURES + CATEGORICAL_FEATURES
CONGESTION_FEATURES = ['train_count_last_60min', 'minutes_since_last_train_clipped', 'inbound_trains_near_arrival']


def _minutes(delta):
    return delta / pd.Timedelta(minutes=1)


def _event_time(event, scheduled):
    return event['scheduled_time'] if scheduled else event['actual_time']


def running_duration(dep_event, arr_event, scheduled=False):
    """
    Running time between the departure at stop i-1 and the arrival at stop i of the same trip.

    Parameters
    ----------
    dep_event, arr_event: mapping
        events with 'scheduled_time' and 'actual_time' timestamps
    scheduled: bool
        use scheduled instead of actual times

    Returns
    -------
    duration: float
        minutes
    """
    d = _minutes(_event_time(arr_event, scheduled) - _event_time(dep_event, scheduled))
    if d < 0:
        raise dataIntegrityError('Error: negative running duration ({} min).'.format(d))
    return float(d)


def dwelling_duration(arr_event, dep_event, scheduled=False):
    """
    Dwell time between the arrival and the departure of one trip at one stop, in minutes.
    """
    d = _minutes(_event_time(dep_event, scheduled) - _event_time(arr_event, scheduled))
    if d < 0:
        raise dataIntegrityError('Error: negative dwelling duration ({} min).'.format(d))
    return float(d)


def headway_duration(arr_event_follower, arr_event_leader, scheduled=False):
    """
    Time separation between the arrivals of a leader and a follower at the same station, in minutes. Can be negative
    when the follower overtakes the leader.
    """
    return float(_minutes(_event_time(arr_event_follower, scheduled) - _event_time(arr_event_leader, scheduled)))


def _stop_at(stops, station):
    stops = list(stops)
    for i, stop in enumerate(stops):
        if stop['station_code'] == station:
            nxt = stops[i + 1]['station_code'] if i + 1 < len(stops) else None
            return stop, nxt
    return None, None


def headway_eligible(trip_a, trip_b, station, schedule, window=HEADWAY_WINDOW):
    """
    Check whether two trips compete for the infrastructure downstream of `station`.

    Parameters
    ----------
    trip_a, trip_b: str
        trip identifiers
    station: str
        station code where both trips stop
    schedule: dict
        trip_id -> ordered list of stops (mappings with 'station_code' and 'scheduled_arrival')
    window: float
        maximum scheduled arrival separation in minutes

    Returns
    -------
    eligible: bool
        True iff both arrivals are scheduled within `window` minutes and the next scheduled station is identical
    """

    if trip_a == trip_b:
        return False
    stop_a, next_a = _stop_at(schedule[trip_a], station)
    stop_b, next_b = _stop_at(schedule[trip_b], station)
    if stop_a is None or stop_b is None or next_a is None or next_a != next_b:
        return False
    if pd.isna(stop_a['scheduled_arrival']) or pd.isna(stop_b['scheduled_arrival']):
        return False
    gap = pd.Timestamp(stop_a['scheduled_arrival']) - pd.Timestamp(stop_b['scheduled_arrival'])
    return bool(abs(_minutes(gap)) <= window)


def trip_order(stops):
    """
    Rank of each trip of a day by (first scheduled time, trip_id).

    Returns
    -------
    order: dict
        trip_id -> rank
    """
    first = stops[['scheduled_arrival', 'scheduled_departure']].min(axis=1).groupby(stops['trip_id']).min()
    ranked = first.reset_index().sort_values([0, 'trip_id'])
    return {t: i for i, t in enumerate(ranked['trip_id'])}


def find_headway_pairs(stops, order=None, window=HEADWAY_WINDOW):
    """
    Enumerate every headway-eligible (leader, follower) pair of one service day.

    The leader is the trip with the earlier scheduled arrival, ties broken by trip order.

    Parameters
    ----------
    stops: pandas.DataFrame
        stops of one day with columns trip_id, stop_index, station_code, scheduled_arrival, scheduled_departure
    order: dict, optional
        trip ranks used to break ties (see trip_order)
    window: float
        eligibility window in minutes

    Returns
    -------
    pairs: pandas.DataFrame
        columns leader_trip, leader_stop, follower_trip, follower_stop, station_code, gap (scheduled minutes)
    """

    columns = ['leader_trip', 'leader_stop', 'follower_trip', 'follower_stop', 'station_code', 'gap']
    if stops.empty:
        return pd.DataFrame(columns=columns)
    if order is None:
        order = trip_order(stops)

    s = stops[['trip_id', 'stop_index', 'station_code', 'scheduled_arrival']].copy()
    s = s.sort_values(['trip_id', 'stop_index'])
    s['next_station'] = s.groupby('trip_id')['station_code'].shift(-1)
    s = s[s['next_station'].notna() & s['scheduled_arrival'].notna()]
    s['order'] = s['trip_id'].map(order)

    m = s.merge(s, on=['station_code', 'next_station'], suffixes=('_l', '_f'))
    m = m[m['trip_id_l'] != m['trip_id_f']]
    gap = _minutes(m['scheduled_arrival_f'] - m['scheduled_arrival_l'])
    leads = (gap > 0) | ((gap == 0) & (m['order_l'] < m['order_f']))
    m = m[leads & (gap <= window)]

    pairs = pd.DataFrame({'leader_trip': m['trip_id_l'].values,
                          'leader_stop': m['stop_index_l'].values.astype('int64'),
                          'follower_trip': m['trip_id_f'].values,
                          'follower_stop': m['stop_index_f'].values.astype('int64'),
                          'station_code': m['station_code'].values,
                          'gap': _minutes(m['scheduled_arrival_f'] - m['scheduled_arrival_l']).values.astype(float)})
    return pairs.sort_values(['leader_trip', 'leader_stop', 'follower_trip']).reset_index(drop=True)


def cyclical_encode(time_of_day):
    """
    Encode a time of day (minutes since midnight) on the unit circle.

    Returns
    -------
    (sin, cos): (float or ndarray, float or ndarray)
    """
    t = np.asarray(time_of_day, dtype=float)
    if np.any((t < 0) | (t >= MINUTES_PER_DAY)):
        raise dataIntegrityError('Error: time of day must be in [0, 1440) minutes.')
    angle = 2 * np.pi * t / MINUTES_PER_DAY
    return np.sin(angle), np.cos(angle)


def peak_flag(time_of_day):
    """
    True for times of day within the morning or evening peak, closed-open boundaries.
    """
    t = np.asarray(time_of_day, dtype=float)
    flag = np.zeros(t.shape, dtype=bool)
    for start, end in PEAK_WINDOWS:
        flag |= (t >= start) & (t < end)
    return flag if flag.ndim else bool(flag)


def platform_congestion(time, platform, history, cap=DEFAULT_CAP, trip_id=None):
    """
    Platform occupation before an event.

    Parameters
    ----------
    time: pandas.Timestamp
        scheduled time of the event
    platform: str or None
        scheduled platform of the event (None if unknown)
    history: pandas.DataFrame
        arrivals at the station with columns trip_id, platform, time
    cap: float
        clipping value for the minutes since the last train
    trip_id: str, optional
        trip of the event, excluded from the counts

    Returns
    -------
    (n, minutes_since): (int, float)
        number of other-train arrivals at the platform in (t-60, t] and minutes since the most recent one (cap if none)
    """

    if platform is None or pd.isna(platform):
        return 0, float(cap)
    h = history[(history['platform'] == platform) & (history['trip_id'] != trip_id)]
    diff = _minutes(time - h['time'])
    prior = diff[diff >= 0]
    n = int(((prior < PLATFORM_WINDOW)).sum())
    since = float(min(prior.min(), cap)) if len(prior) else float(cap)
    return n, since


def station_congestion(time, history, trip_id=None):
    """
    Number of other-train movements (arrivals and departures) at the station within [t-5, t+5] minutes.
    """
    h = history[history['trip_id'] != trip_id]
    diff = _minutes(h['time'] - time)
    return int((diff.abs() <= STATION_WINDOW).sum())


def lag2_delay(departure_delays, stop_index):
    """
    Delay of the same trip at the departure of stop `stop_index` - 2.

    Parameters
    ----------
    departure_delays: mapping
        stop_index -> known (realized or predicted) departure delay; unknown stops are absent
    stop_index: int

    Returns
    -------
    delay: float
        minutes, 0 when fewer than two prior stops exist or the delay is unknown
    """
    if stop_index < 2:
        return 0.0
    return float(departure_delays.get(stop_index - 2, 0.0))


def _pairwise_platform(times, trips, cap):
    diff = (times[:, None] - times[None, :]) / np.timedelta64(1, 'm')
    other = trips[:, None] != trips[None, :]
    prior = other & (diff >= 0)
    n = (prior & (diff < PLATFORM_WINDOW)).sum(axis=1)
    since = np.where(prior, diff, np.inf).min(axis=1)
    return n, np.minimum(since, cap)


def _pairwise_station(times, trips):
    diff = (times[:, None] - times[None, :]) / np.timedelta64(1, 'm')
    other = trips[:, None] != trips[None, :]
    return (other & (np.abs(diff) <= STATION_WINDOW)).sum(axis=1)


def compute_node_features(events, holidays=(), cap=DEFAULT_CAP):
    """
    Compute the raw (unscaled) feature table of the events of one or more service days.

    Parameters
    ----------
    events: pandas.DataFrame
        one row per event node with columns service_day, trip_id, stop_index, kind, station_code, scheduled_time,
        stop_time (scheduled arrival, or departure at the origin), train_type, platform_scheduled, n_stops,
        prev_stop_cancelled, num_prev_cancelled and optionally target_delay (used for the realized lag2_delay)
    holidays: iterable
        holiday dates
    cap: float
        clipping cap of minutes_since_last_train_clipped

    Returns
    -------
    features: pandas.DataFrame
        one row per event (same index as `events`), columns ALL_FEATURES
    """

    f = pd.DataFrame(index=events.index)
    stop_time = events['stop_time']
    tod = (stop_time.dt.hour * 60 + stop_time.dt.minute).to_numpy(dtype=float)
    f['arrival_tod_sin'], f['arrival_tod_cos'] = cyclical_encode(tod)
    day = events['service_day']
    holiday_set = {pd.Timestamp(h).normalize() for h in holidays}
    f['is_weekend'] = (day.dt.dayofweek >= 5).astype(float)
    f['is_holiday'] = day.dt.normalize().isin(holiday_set).astype(float)
    f['is_peak'] = peak_flag(tod).astype(float)
    f['is_origin_stop'] = (events['stop_index'] == 0).astype(float)
    f['is_terminal_stop'] = (events['stop_index'] == events['n_stops'] - 1).astype(float)
    f['platform_known'] = events['platform_scheduled'].notna().astype(float)
    f['prev_stop_cancelled'] = events['prev_stop_cancelled'].astype(float)
    f['is_departure'] = (events['kind'] == 'departure').astype(float)
    f['number_of_stops_left'] = (events['n_stops'] - 1 - events['stop_index']).astype(float)
    f['num_prev_cancelled'] = events['num_prev_cancelled'].astype(float)

    if 'target_delay' in events.columns:
        dep = events[events['kind'] == 'departure']
        known = {(d, t, s): v for d, t, s, v in zip(dep['service_day'], dep['trip_id'], dep['stop_index'],
                                                    dep['target_delay'])}
        f['lag2_delay'] = [known.get((d, t, s - 2), 0.0) if s >= 2 else 0.0
                           for d, t, s in zip(events['service_day'], events['trip_id'], events['stop_index'])]
    else:
        f['lag2_delay'] = 0.0

    # Platform congestion is a per-stop quantity
    f['train_count_last_60min'] = 0.0
    f['minutes_since_last_train_clipped'] = float(cap)
    known_platform = events[events['platform_scheduled'].notna()]
    stops = known_platform.drop_duplicates(['service_day', 'trip_id', 'stop_index'])
    per_stop = []
    for _, group in stops.groupby(['service_day', 'station_code', 'platform_scheduled']):
        n, since = _pairwise_platform(group['stop_time'].to_numpy(), group['trip_id'].to_numpy(), cap)
        per_stop.append(pd.DataFrame({'service_day': group['service_day'].values,
                                      'trip_id': group['trip_id'].values,
                                      'stop_index': group['stop_index'].values, 'n': n, 'since': since}))
    if per_stop:
        rows = known_platform[['service_day', 'trip_id', 'stop_index']].reset_index() \
            .merge(pd.concat(per_stop), on=['service_day', 'trip_id', 'stop_index'])
        f.loc[rows['index'].values, 'train_count_last_60min'] = rows['n'].values.astype(float)
        f.loc[rows['index'].values, 'minutes_since_last_train_clipped'] = rows['since'].values.astype(float)

    f['inbound_trains_near_arrival'] = 0.0
    for _, group in events.groupby(['service_day', 'station_code']):
        m = _pairwise_station(group['scheduled_time'].to_numpy(), group['trip_id'].to_numpy())
        f.loc[group.index, 'inbound_trains_near_arrival'] = m.astype(float)

    f['train_type'] = events['train_type'].astype(str)
    f['stop_name'] = events['station_code'].astype(str)
    f['platform_scheduled'] = events['platform_scheduled'].where(events['platform_scheduled'].notna(), None)
    f['day_of_week'] = day.dt.dayofweek.astype(str)
    f['month'] = day.dt.month.astype(str)
    return f[ALL_FEATURES]


def _log(values, signed):
    values = np.asarray(values, dtype=float)
    if signed:
        return np.sign(values) * np.log1p(np.abs(values))
    return np.log1p(values)


def _unlog(values, signed):
    values = np.asarray(values, dtype=float)
    if signed:
        return np.sign(values) * np.expm1(np.abs(values))
    return np.expm1(values)


class featureScaler():
    """
    Per-feature standardization of log1p-transformed values (signed log1p for quantities that can be negative).
    Features with zero variance on the fitting data are excluded and listed in `excluded`.
    """

    def __init__(self, columns, mean, std, signed=False, excluded=()):
        self.columns = [str(c) for c in columns]
        self.mean = np.asarray(mean, dtype=float)
        self.std = np.asarray(std, dtype=float)
        self.signed = signed
        self.excluded = [str(c) for c in excluded]

    @classmethod
    def fit(cls, frame, columns, signed=False, tol=1e-12):
        """
        Fit the scaler on training values.

        Parameters
        ----------
        frame: pandas.DataFrame
            training values, one column per feature
        columns: list
            features to scale
        signed: bool
            use sign(x)*log1p(|x|) instead of log1p(x)
        tol: float
            variance below which a feature is considered degenerate
        """
        if len(frame) == 0:
            raise dataIntegrityError('Error: cannot fit a feature scaler on empty data.')
        values = _log(frame[columns].to_numpy(dtype=float), signed)
        scaler = StandardScaler().fit(values)
        degenerate = scaler.var_ <= tol
        for name in np.array(columns)[degenerate]:
            warnings.warn('Feature \'{}\' has zero variance on the training data and is excluded.'.format(name))
        kept = ~degenerate
        return cls(np.array(columns)[kept], scaler.mean_[kept], scaler.scale_[kept], signed=signed,
                   excluded=list(np.array(columns)[degenerate]))

    def transform(self, frame):
        """
        Standardized values of the kept features, shape (n, len(columns)).
        """
        if not self.columns:
            return np.zeros((len(frame), 0))
        values = _log(frame[self.columns].to_numpy(dtype=float), self.signed)
        return (values - self.mean) / self.std

    def transform_column(self, name, values):
        i = self.columns.index(name)
        return (_log(values, self.signed) - self.mean[i]) / self.std[i]

    def inverse(self, name, values):
        i = self.columns.index(name)
        return _unlog(np.asarray(values, dtype=float) * self.std[i] + self.mean[i], self.signed)

    def to_dict(self):
        return {'columns': self.columns,
                'mean': [float(x) for x in self.mean],
                'std': [float(x) for x in self.std],
                'signed': self.signed,
                'excluded': self.excluded}

    @classmethod
    def from_dict(cls, d):
        return cls(d['columns'], d['mean'], d['std'], signed=d['signed'], excluded=d['excluded'])


def fit_scaler(frame, columns=NUMERIC_FEATURES):
    """
    Fit a featureScaler on training feature values.
    """
    return featureScaler.fit(frame, columns)


def apply_scaler(scaler, name, value):
    """
    Standardized value of feature `name`: (log1p(x) - mean) / std.
    """
    return scaler.transform_column(name, value)


class vocabulary():
    """
    Bidirectional map between strings and dense indices. Index 0 is reserved for unknown or absent values.
    """

    def __init__(self, tokens=()):
        self.tokens = list(tokens)
        self.index = {t: i + 1 for i, t in enumerate(self.tokens)}

    @classmethod
    def fit(cls, values):
        tokens = sorted({str(v) for v in values if v is not None and not (isinstance(v, float) and np.isnan(v))})
        return cls(tokens)

    @property
    def size(self):
        return len(self.tokens) + 1

    def encode(self, values):
        return np.array([self.index.get(v, 0) if v is not None else 0 for v in values], dtype=np.int64)

    def decode(self, indices):
        return [self.tokens[i - 1] if i > 0 else None for i in indices]


class featureBundle():
    """
    Everything needed to turn raw event features into model inputs: node feature scaler, edge duration scaler,
    categorical vocabularies, holiday set and congestion cap.
    """

    def __init__(self, scaler=None, edge_scaler=None, vocabs=None, holidays=(), cap=DEFAULT_CAP):
        self.scaler = scaler
        self.edge_scaler = edge_scaler
        self.vocabs = vocabs if vocabs is not None else {}
        self.holidays = sorted({pd.Timestamp(h).strftime('%Y-%m-%d') for h in holidays})
        self.cap = cap

    def fit(self, features, edge_durations):
        """
        Fit scalers and vocabularies on training data.

        Parameters
        ----------
        features: pandas.DataFrame
            raw feature table of the training days (see compute_node_features)
        edge_durations: array_like
            realized durations of the training edges (minutes)
        """
        self.scaler = fit_scaler(features, NUMERIC_FEATURES)
        self.edge_scaler = featureScaler.fit(pd.DataFrame({'duration': np.asarray(edge_durations, dtype=float)}),
                                             ['duration'], signed=True)
        self.vocabs = {name: vocabulary.fit(features[name]) for name in CATEGORICAL_FEATURES}
        return self

    @property
    def input_columns(self):
        """Names of the columns of the float input matrix."""
        return self.scaler.columns + PASSTHROUGH_FEATURES

    @property
    def lag2_column(self):
        """Column of lag2_delay in the input matrix, None if excluded as degenerate."""
        cols = self.input_columns
        return cols.index('lag2_delay') if 'lag2_delay' in cols else None

    @property
    def vocab_sizes(self):
        return [self.vocabs[name].size for name in CATEGORICAL_FEATURES]

    def transform(self, features):
        """
        Returns
        -------
        (x, cat): (ndarray, ndarray)
            float inputs (n, len(input_columns)) and categorical indices (n, len(CATEGORICAL_FEATURES))
        """
        x = np.concatenate([self.scaler.transform(features),
                            features[PASSTHROUGH_FEATURES].to_numpy(dtype=float)], axis=1)
        cat = np.stack([self.vocabs[name].encode(features[name].tolist()) for name in CATEGORICAL_FEATURES],
                       axis=1) if len(features) else np.zeros((0, len(CATEGORICAL_FEATURES)), dtype=np.int64)
        return x, cat

    def scale_lag2(self, values):
        return self.scaler.transform_column('lag2_delay', values)

    def scale_edge(self, durations):
        durations = np.asarray(durations, dtype=float)
        if not self.edge_scaler.columns:
            return np.zeros_like(durations)
        return self.edge_scaler.transform_column('duration', durations)

    def save(self, path):
        os.makedirs(path, exist_ok=True)
        _dump_json(self.scaler.to_dict(), os.path.join(path, 'scaler.json'))
        _dump_json(self.edge_scaler.to_dict(), os.path.join(path, 'edge_scaler.json'))
        for name, vocab in self.vocabs.items():
            _dump_json({t: i for t, i in vocab.index.items()}, os.path.join(path, 'vocab_{}.json'.format(name)))
        _dump_json(self.holidays, os.path.join(path, 'holidays.json'))
        _dump_json({'cap': self.cap}, os.path.join(path, 'bundle.json'))

    @classmethod
    def load(cls, path):
        scaler = featureScaler.from_dict(_load_json(os.path.join(path, 'scaler.json')))
        edge_scaler = featureScaler.from_dict(_load_json(os.path.join(path, 'edge_scaler.json')))
        vocabs = {}
        for name in CATEGORICAL_FEATURES:
            index = _load_json(os.path.join(path, 'vocab_{}.json'.format(name)))
            vocabs[name] = vocabulary(sorted(index, key=index.get))
        holidays = _load_json(os.path.join(path, 'holidays.json'))
        cap = _load_json(os.path.join(path, 'bundle.json'))['cap']
        return cls(scaler, edge_scaler, vocabs, holidays, cap)


def _dump_json(obj, path):
    with open(path, 'w') as f:
        json.dump(obj, f, indent=2, sort_keys=True)


def _load_json(path):
    if not os.path.exists(path):
        raise missingInputError('Error: {} does not exist.'.format(path))
    with open(path, 'r') as f:
        return json.load(f)
