"""
Submodule containing classes and functions relative to **parsing** stop-level train records.

The input is a CSV archive with one row per scheduled stop of one train service. This submodule parses the archive,
unifies trip identifiers (including mid-trip train number changes), removes corrupt observations and scopes the result
to a set of stations. A typical use case:

>>> from knockon.parser import recordParser
>>> trips = recordParser('records.csv', stations=['S00', 'S01'])
>>> trips.records.head()

By using this code you agree to the terms of the software license agreement.

© Copyright 2020 Wyss Center for Bio and Neuro Engineering – All rights reserved
"""

import json
import os
import warnings
from dataclasses import dataclass, asdict

import numpy as np
import pandas as pd

from knockon.exceptions import configError, missingInputError, recordFormatError

COLUMNS = ['service_day', 'train_number', 'trip_id', 'station_code', 'stop_index', 'train_type',
           'scheduled_arrival', 'actual_arrival', 'scheduled_departure', 'actual_departure',
           'platform_scheduled', 'platform_actual', 'cancelled_arrival', 'cancelled_departure']
# Written by clean() and accepted back by parse_records()
DERIVED_COLUMNS = ['prev_stop_cancelled', 'num_prev_cancelled']
TIME_COLUMNS = ['scheduled_arrival', 'actual_arrival', 'scheduled_departure', 'actual_departure']
ARRIVAL_COLUMNS = ['scheduled_arrival', 'actual_arrival']
DEPARTURE_COLUMNS = ['scheduled_departure', 'actual_departure']
REQUIRED_COLUMNS = ['service_day', 'train_number', 'station_code', 'stop_index', 'train_type']
TIME_FORMAT = '%Y-%m-%dT%H:%M'
DAY_FORMAT = '%Y-%m-%d'
DEFAULT_DENYLIST = ('BUS', 'TVB', 'REPLACEMENT BUS', 'STOPTREIN VERVANGENDE BUS', 'TAXI')


@dataclass
class cleaningReport:
    """
    Number of records removed by clean(), per removal category.
    """
    non_standard_service: int = 0
    fully_cancelled: int = 0
    cancelled_stop: int = 0
    illogical_sequence: int = 0
    incomplete_stop: int = 0
    short_trip: int = 0

    @property
    def total(self):
        return sum(asdict(self).values())

    def as_dict(self):
        return asdict(self)

    def save(self, path):
        with open(path, 'w') as f:
            json.dump(self.as_dict(), f, indent=2, sort_keys=True)

    def print_info(self):
        print('\n****** CLEANING REPORT ******')
        for key, value in self.as_dict().items():
            print('{:<22} {:>8d}'.format(key, value))
        print('{:<22} {:>8d}'.format('total removed', self.total))


def _line_error(path, index, column):
    # Header is line 1
    raise recordFormatError('Error: malformed record at line {} of {} (column \'{}\').'
                            .format(int(index) + 2, path, column))


def _check_bad(bad, path, column):
    if bad.any():
        _line_error(path, bad.index[np.argmax(bad.values)], column)


def parse_records(path):
    """
    Parse a stop record CSV file.

    Parameters
    ----------
    path: str
        path to the CSV file (header required, schema given by COLUMNS)

    Returns
    -------
    records: pandas.DataFrame
        one row per record. Timestamps are parsed to minute resolution, absent timestamps are NaT and absent strings
        are None.
    """

    if not os.path.exists(path):
        raise missingInputError('Error: record file {} does not exist.'.format(path))

    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False, encoding='utf-8')
    except pd.errors.ParserError as e:
        raise recordFormatError('Error: malformed record in {}: {}'.format(path, e))
    except pd.errors.EmptyDataError:
        raise recordFormatError('Error: {} has no header.'.format(path))

    unknown = [c for c in raw.columns if c not in COLUMNS + DERIVED_COLUMNS]
    if unknown:
        raise recordFormatError('Error: unknown column \'{}\' in {}.'.format(unknown[0], path))
    missing = [c for c in COLUMNS if c not in raw.columns]
    if missing:
        raise recordFormatError('Error: missing column \'{}\' in {}.'.format(missing[0], path))

    # Short rows are padded with NaN by pandas
    for c in raw.columns:
        _check_bad(raw[c].isna(), path, c)
    for c in REQUIRED_COLUMNS:
        _check_bad(raw[c] == '', path, c)

    records = pd.DataFrame(index=raw.index)
    records['service_day'] = pd.to_datetime(raw['service_day'], format=DAY_FORMAT, errors='coerce')
    _check_bad(records['service_day'].isna(), path, 'service_day')

    for c in ['train_number', 'trip_id', 'station_code']:
        records[c] = raw[c].where(raw[c] != '', None)

    stop_index = pd.to_numeric(raw['stop_index'], errors='coerce')
    _check_bad(stop_index.isna() | (stop_index < 0) | (stop_index != np.round(stop_index)), path, 'stop_index')
    records['stop_index'] = stop_index.astype('int64')
    records['train_type'] = raw['train_type']

    for c in TIME_COLUMNS:
        present = raw[c] != ''
        parsed = pd.to_datetime(raw[c].where(present, None), format='ISO8601', errors='coerce')
        _check_bad(present & parsed.isna(), path, c)
        records[c] = parsed.dt.floor('min').astype('datetime64[ns]')

    for c in ['platform_scheduled', 'platform_actual']:
        records[c] = raw[c].where(raw[c] != '', None)

    for c in ['cancelled_arrival', 'cancelled_departure']:
        value = raw[c].str.lower()
        _check_bad(~value.isin(['true', 'false', '']), path, c)
        records[c] = (value == 'true').astype(bool)

    if 'prev_stop_cancelled' in raw.columns:
        value = raw['prev_stop_cancelled'].str.lower()
        _check_bad(~value.isin(['true', 'false']), path, 'prev_stop_cancelled')
        records['prev_stop_cancelled'] = (value == 'true').astype(bool)
    if 'num_prev_cancelled' in raw.columns:
        value = pd.to_numeric(raw['num_prev_cancelled'], errors='coerce')
        _check_bad(value.isna() | (value < 0), path, 'num_prev_cancelled')
        records['num_prev_cancelled'] = value.astype('int64')

    return records.reset_index(drop=True)


def write_records(records, path):
    """
    Write records to the CSV schema read by parse_records. Derived cleaning columns are written when present.

    Parameters
    ----------
    records: pandas.DataFrame
        records to write
    path: str
        output CSV path
    """

    columns = COLUMNS + [c for c in DERIVED_COLUMNS if c in records.columns]
    out = pd.DataFrame(index=records.index)
    for c in columns:
        if c == 'service_day':
            out[c] = records[c].dt.strftime(DAY_FORMAT)
        elif c in TIME_COLUMNS:
            out[c] = records[c].dt.strftime(TIME_FORMAT).fillna('')
        elif c in ['cancelled_arrival', 'cancelled_departure', 'prev_stop_cancelled']:
            out[c] = records[c].map({True: 'true', False: 'false'})
        elif c in ['stop_index', 'num_prev_cancelled']:
            out[c] = records[c].astype('int64').astype(str)
        else:
            out[c] = records[c].where(records[c].notna(), '').astype(str)
    out.to_csv(path, index=False, columns=columns, lineterminator='\n')


def _segment_summary(seg):
    first = seg.iloc[0]
    last = seg.iloc[-1]
    return {'first_station': first['station_code'],
            'last_station': last['station_code'],
            # An origin has no arrival, a terminus has no departure
            'starts': pd.isna(first['scheduled_arrival']) and pd.notna(first['scheduled_departure']),
            'ends': pd.isna(last['scheduled_departure']) and pd.notna(last['scheduled_arrival']),
            'first_dep': first['scheduled_departure'],
            'last_arr': last['scheduled_arrival'],
            'first_time': seg[['scheduled_arrival', 'scheduled_departure']].min(axis=1).min()}


def _merge_chain(segments):
    """Concatenate segments of one physical journey, merging the handover stop when it is shared."""
    parts = [segments[0]]
    for seg in segments[1:]:
        prev = parts[-1]
        if prev.iloc[-1]['station_code'] == seg.iloc[0]['station_code']:
            merged = prev.copy()
            row = merged.index[-1]
            for c in DEPARTURE_COLUMNS + ['cancelled_departure']:
                merged.at[row, c] = seg.iloc[0][c]
            parts[-1] = merged
            seg = seg.iloc[1:]
        parts.append(seg)
    return pd.concat(parts)


def assign_trip_ids(records, tolerance=2, detect_handovers=True):
    """
    Assign a unique trip identifier per physical journey and service day.

    Records sharing a non-empty trip_id are treated as one journey (explicit continuation marker). Otherwise a train
    number change is detected when one segment terminates at a station and another segment originates at the same
    station within `tolerance` minutes. Ambiguous handovers are left as separate trips and a warning is issued.

    Parameters
    ----------
    records: pandas.DataFrame
        parsed records
    tolerance: float
        handover time tolerance in minutes
    detect_handovers: bool
        enable the station + time heuristic

    Returns
    -------
    records: pandas.DataFrame
        records with non-empty trip_id and contiguous stop_index per trip
    """

    if records.empty:
        out = records.copy()
        out['trip_id'] = out['trip_id'].astype(object)
        return out

    df = records.copy()
    df['_given'] = df['trip_id'].where(df['trip_id'].notna() & (df['trip_id'] != ''), '')
    tol = pd.Timedelta(minutes=tolerance)
    output = []

    for day, day_records in df.groupby('service_day', sort=True):
        segments = []
        for (train_number, given), seg in day_records.groupby(['train_number', '_given'], sort=True):
            seg = seg.sort_values('stop_index')
            segments.append(dict(_segment_summary(seg), train_number=train_number, given=given, rows=seg))

        nxt = {}
        prv = {}
        # Explicit markers
        by_given = {}
        for i, s in enumerate(segments):
            if s['given']:
                by_given.setdefault(s['given'], []).append(i)
        for idx in by_given.values():
            idx = sorted(idx, key=lambda i: (segments[i]['first_time'], segments[i]['train_number']))
            for a, b in zip(idx[:-1], idx[1:]):
                nxt[a] = b
                prv[b] = a

        # Station + time heuristic
        if detect_handovers:
            free = [i for i, s in enumerate(segments) if not s['given']]
            candidates = {}
            for a in free:
                sa = segments[a]
                if not sa['ends']:
                    continue
                candidates[a] = [b for b in free if b != a and segments[b]['starts']
                                 and segments[b]['first_station'] == sa['last_station']
                                 and abs(segments[b]['first_dep'] - sa['last_arr']) <= tol]
            incoming = {}
            for a, bs in candidates.items():
                for b in bs:
                    incoming.setdefault(b, []).append(a)
            for a, bs in candidates.items():
                if not bs:
                    continue
                if len(bs) == 1 and len(incoming[bs[0]]) == 1:
                    nxt[a] = bs[0]
                    prv[bs[0]] = a
                else:
                    warnings.warn('Ambiguous handover of train {} at {} on {:%Y-%m-%d}, segments kept separate.'
                                  .format(segments[a]['train_number'], segments[a]['last_station'], day))

        heads = sorted([i for i in range(len(segments)) if i not in prv],
                       key=lambda i: (segments[i]['first_time'], segments[i]['train_number']))
        for h in heads:
            chain = [h]
            while chain[-1] in nxt:
                chain.append(nxt[chain[-1]])
            trip = _merge_chain([segments[i]['rows'] for i in chain])
            given = segments[h]['given']
            trip['trip_id'] = given if given else '{:%Y%m%d}-{}'.format(day, segments[h]['train_number'])
            trip['stop_index'] = np.arange(len(trip), dtype='int64')
            output.append(trip)

    out = pd.concat(output).drop(columns='_given')
    return out.sort_values(['service_day', 'trip_id', 'stop_index']).reset_index(drop=True)


def _position(df):
    df = df.sort_values(['service_day', 'trip_id', 'stop_index'])
    grp = df.groupby(['service_day', 'trip_id'], sort=False)
    n = grp['stop_index'].transform('size')
    rank = grp.cumcount()
    return df, rank == 0, rank == n - 1


def _illogical_mask(df, is_first):
    same_stop = (df['actual_departure'] < df['actual_arrival']) | \
                (df['scheduled_departure'] < df['scheduled_arrival'])
    grp = df.groupby(['service_day', 'trip_id'], sort=False)
    prev_actual = grp['actual_departure'].shift(1)
    prev_scheduled = grp['scheduled_departure'].shift(1)
    reversal = ~is_first & ((df['actual_arrival'] < prev_actual) | (df['scheduled_arrival'] < prev_scheduled))
    return same_stop | reversal


def _incomplete_mask(df, is_first, is_last):
    missing_arr = df['scheduled_arrival'].isna() | df['actual_arrival'].isna()
    missing_dep = df['scheduled_departure'].isna() | df['actual_departure'].isna()
    return (~is_first & missing_arr) | (~is_last & missing_dep)


def clean(records, denylist=DEFAULT_DENYLIST, verbose=False):
    """
    Remove corrupt observations rather than imputing them.

    The removal categories are applied in the following order: non-standard services (train_type in `denylist`),
    fully cancelled trips, cancelled stops of partially cancelled trips, stops with an illogical time sequence and
    stops missing a time required by their position (both iterated to a fixed point), trips left with fewer than two
    stops. Stop indices are then re-sequenced and the origin arrival and terminus departure fields are blanked.

    Parameters
    ----------
    records: pandas.DataFrame
        records with trip_id assigned
    denylist: iterable
        train types considered non-standard services (case-insensitive)
    verbose: bool
        print the cleaning report

    Returns
    -------
    (records, report): (pandas.DataFrame, cleaningReport)
        cleaned records (with prev_stop_cancelled and num_prev_cancelled columns) and removal counts
    """

    report = cleaningReport()
    df = records.copy().reset_index(drop=True)

    deny = {d.upper() for d in denylist}
    mask = df['train_type'].str.upper().isin(deny)
    report.non_standard_service = int(mask.sum())
    df = df[~mask]

    df = df.sort_values(['service_day', 'trip_id', 'stop_index'])
    df['_cancelled'] = df['cancelled_arrival'] | df['cancelled_departure']
    grp = df.groupby(['service_day', 'trip_id'], sort=False)['_cancelled']
    full = grp.transform('all').astype(bool)
    report.fully_cancelled = int(full.sum())
    df = df[~full]

    cancelled = df['_cancelled'].astype('int64')
    num_prev = cancelled.groupby([df['service_day'], df['trip_id']], sort=False).cumsum() - cancelled
    prev = df.groupby(['service_day', 'trip_id'], sort=False)['_cancelled'].shift(1, fill_value=False).astype(bool)
    if 'prev_stop_cancelled' in df.columns:
        df['prev_stop_cancelled'] = df['prev_stop_cancelled'].astype(bool) | prev
        df['num_prev_cancelled'] = df['num_prev_cancelled'].astype('int64') + num_prev
    else:
        df['prev_stop_cancelled'] = prev
        df['num_prev_cancelled'] = num_prev
    report.cancelled_stop = int(df['_cancelled'].sum())
    df = df[~df['_cancelled']].drop(columns='_cancelled')

    while True:
        df, is_first, is_last = _position(df)
        illogical = _illogical_mask(df, is_first)
        if illogical.any():
            report.illogical_sequence += int(illogical.sum())
            df = df[~illogical]
            continue
        incomplete = _incomplete_mask(df, is_first, is_last)
        if incomplete.any():
            report.incomplete_stop += int(incomplete.sum())
            df = df[~incomplete]
            continue
        break

    size = df.groupby(['service_day', 'trip_id'], sort=False)['stop_index'].transform('size')
    short = size < 2
    report.short_trip = int(short.sum())
    df = df[~short]

    df, is_first, is_last = _position(df)
    df['stop_index'] = df.groupby(['service_day', 'trip_id'], sort=False).cumcount().astype('int64')
    df.loc[is_first, ARRIVAL_COLUMNS] = pd.NaT
    df.loc[is_last, DEPARTURE_COLUMNS] = pd.NaT
    df = df[COLUMNS + DERIVED_COLUMNS].reset_index(drop=True)

    if verbose:
        report.print_info()

    return df, report


def filter_region(records, station_set):
    """
    Keep the trips with at least one stop in `station_set`.

    Parameters
    ----------
    records: pandas.DataFrame
        cleaned records
    station_set: iterable
        station codes delimiting the region of interest

    Returns
    -------
    records: pandas.DataFrame
        records of the retained trips
    """

    station_set = set(station_set) if station_set is not None else set()
    if not station_set:
        raise configError('Error: station set for region filtering is empty.')

    touches = records['station_code'].isin(station_set)
    keep = touches.groupby([records['service_day'], records['trip_id']]).transform('any').astype(bool)
    return records[keep].reset_index(drop=True)


def iter_trips(records):
    """
    Iterate over the trips of a record table, ordered by service day and first scheduled time.

    Yields
    ------
    (trip_id, stops): (str, pandas.DataFrame)
    """

    if records.empty:
        return
    first = records[['scheduled_arrival', 'scheduled_departure']].min(axis=1)
    start = first.groupby([records['service_day'], records['trip_id']]).min()
    for (day, trip_id) in start.reset_index().sort_values(['service_day', 0, 'trip_id'])[['service_day', 'trip_id']] \
            .itertuples(index=False):
        stops = records[(records['service_day'] == day) & (records['trip_id'] == trip_id)]
        yield trip_id, stops.sort_values('stop_index')


class recordParser():
    """
    Class used to parse, unify, clean and scope a stop record archive.
    """

    def __init__(self, path, stations=None, denylist=DEFAULT_DENYLIST, handover_tolerance=2, verbose=True):
        """
        Constructor for the recordParser class.

        Parameters
        ----------
        path: str
            path to the record CSV file
        stations: iterable, optional
            station codes used to scope the trips (no filtering if None)
        denylist: iterable
            train types removed as non-standard services
        handover_tolerance: float
            tolerance in minutes for detecting train number changes
        verbose: bool
            print information about the parsed archive
        """

        self.path = path
        self.n_raw = None
        self.stations = stations
        self.handover_tolerance = handover_tolerance

        raw = parse_records(path)
        self.n_raw = len(raw)
        unified = assign_trip_ids(raw, tolerance=handover_tolerance)
        self.n_unified = len(unified)
        self.records, self.report = clean(unified, denylist=denylist, verbose=False)
        if stations is not None:
            self.records = filter_region(self.records, stations)

        self.n_trips = int(self.records.groupby(['service_day', 'trip_id']).ngroups) if len(self.records) else 0
        self.days = sorted(self.records['service_day'].unique())
        self.n_days = len(self.days)

        if verbose:
            self.print_info()

    def save(self, path):
        """
        Save the cleaned records (CSV) and the cleaning report (JSON) to the folder `path`.
        """
        os.makedirs(path, exist_ok=True)
        write_records(self.records, os.path.join(path, 'clean_records.csv'))
        self.report.save(os.path.join(path, 'cleaning_report.json'))

    def print_info(self):
        print('\n****** PARSED RECORDS ******')
        print('Source: {}'.format(self.path))
        print('{} raw records, {} after trip unification.'.format(self.n_raw, self.n_unified))
        self.report.print_info()
        print('{} trips over {} service days retained.'.format(self.n_trips, self.n_days))
