"""
Submodule containing classes and functions relative to the **synthetic** generation of train records.

The generator builds a line-and-junction network (two branches merging into a shared trunk), a daily timetable and
realized times produced by a known propagation rule:

- primary delays are injected at departures with probability `primary_delay_rate` (exponential magnitude),
- a delay is carried along running edges unchanged,
- a dwell recovers up to `dwell_recovery` minutes (floored at 0),
- a follower whose leader is headway-eligible receives `headway_propagation_fraction` of the part of the leader's
  arrival delay exceeding the scheduled gap.

Every injected primary delay and every propagation event is logged as ground truth. A typical use case:

>>> from knockon.simulator import syntheticConfig, networkSimulator
>>> sim = networkSimulator(syntheticConfig(station_count=20, trips_per_day=60, day_count=60, random_seed=7))
>>> records, truth = sim.generate()
>>> sim.save('synth/')

By using this code you agree to the terms of the software license agreement.

© Copyright 2020 Wyss Center for Bio and Neuro Engineering – All rights reserved
"""

import json
import os
from dataclasses import dataclass, asdict

import numpy as np
import pandas as pd
from tqdm import tqdm

from knockon.exceptions import configError
from knockon.featurizer import find_headway_pairs, trip_order
from knockon.parser import COLUMNS, write_records

FIRST_DAY = '2022-01-03'


@dataclass
class syntheticConfig:
    """
    Parameters of the synthetic network and of its delay dynamics (times in minutes).
    """
    station_count: int = 20
    trips_per_day: int = 60
    day_count: int = 60
    primary_delay_rate: float = 0.05
    primary_delay_magnitude: float = 5.0
    headway_propagation_fraction: float = 0.7
    dwell_recovery: float = 1.0
    random_seed: int = 0
    dwell_minutes: int = 2
    run_minutes_min: int = 4
    run_minutes_max: int = 10
    pair_gap: int = 4
    service_start: str = '06:00'
    service_end: str = '22:00'
    cancellation_rate: float = 0.0
    holiday_rate: float = 0.05

    def validate(self):
        for name in ['station_count', 'trips_per_day', 'day_count']:
            if getattr(self, name) < 1:
                raise configError('Error: {} must be >= 1.'.format(name))
        if self.station_count < 2:
            raise configError('Error: station_count must be >= 2 to run trips.')
        for name in ['primary_delay_rate', 'headway_propagation_fraction', 'cancellation_rate', 'holiday_rate']:
            if not 0 <= getattr(self, name) <= 1:
                raise configError('Error: {} must be in [0, 1].'.format(name))
        if self.primary_delay_magnitude <= 0:
            raise configError('Error: primary_delay_magnitude must be > 0.')
        if not 0 <= self.dwell_recovery <= self.dwell_minutes:
            raise configError('Error: dwell_recovery must be in [0, dwell_minutes].')
        if not 1 <= self.run_minutes_min <= self.run_minutes_max:
            raise configError('Error: run time bounds must satisfy 1 <= run_minutes_min <= run_minutes_max.')
        if self.pair_gap < 0:
            raise configError('Error: pair_gap must be >= 0.')
        if _clock(self.service_end) <= _clock(self.service_start):
            raise configError('Error: service_end must be after service_start.')
        return self


def _clock(hhmm):
    h, m = hhmm.split(':')
    return int(h) * 60 + int(m)


def build_network(n_stations):
    """
    Station codes of the two routes of a line-and-junction network.

    Returns
    -------
    (route_a, route_b): (list, list)
        ordered station codes; both routes end on the shared trunk. With fewer than 3 stations both routes run on a
        single line.
    """
    stations = ['S{:02d}'.format(i) for i in range(n_stations)]
    if n_stations < 3:
        return stations, list(stations)
    trunk_size = max(1, n_stations // 3)
    rest = n_stations - trunk_size
    split = (rest + 1) // 2
    trunk = stations[rest:]
    branch_a = stations[:split]
    branch_b = stations[split:rest]
    return branch_a + trunk, (branch_b if branch_b else branch_a) + trunk


class networkSimulator():
    """
    Class used to generate synthetic stop records with known delay propagation.
    """

    def __init__(self, config=None, progress_bar=False):
        """
        Constructor for the networkSimulator class.

        Parameters
        ----------
        config: syntheticConfig
            generator parameters (validated)
        progress_bar: bool
            display a progress bar over service days
        """
        self.config = (config if config is not None else syntheticConfig()).validate()
        self.progress_bar = progress_bar
        self.rng = np.random.default_rng(self.config.random_seed)
        self.route_a, self.route_b = build_network(self.config.station_count)

        # One run time per directed segment, shared by both routes on the trunk
        segments = sorted({(r[i], r[i + 1]) for r in (self.route_a, self.route_b) for i in range(len(r) - 1)})
        runs = self.rng.integers(self.config.run_minutes_min, self.config.run_minutes_max + 1, size=len(segments))
        self.run_minutes = {s: int(r) for s, r in zip(segments, runs)}

        self.records = None
        self.ground_truth = None
        self.holidays = None

    def _offset_to_junction(self, route):
        t = 0
        for i in range(len(route) - 1):
            if route[i] in self.route_a and route[i] in self.route_b:
                return t
            t += self.run_minutes[(route[i], route[i + 1])] + (self.config.dwell_minutes if i > 0 else 0)
        return t

    def timetable(self, day):
        """
        Scheduled stops of one service day.

        Parameters
        ----------
        day: pandas.Timestamp
            service day

        Returns
        -------
        stops: pandas.DataFrame
            one row per stop with trip_id, train_number, train_type, station_code, stop_index, scheduled_arrival,
            scheduled_departure, platform_scheduled
        """
        c = self.config
        start = _clock(c.service_start)
        n_pairs = int(np.ceil(c.trips_per_day / 2))
        interval = (_clock(c.service_end) - start) / max(n_pairs, 1)
        # Branch B leaves so that it reaches the junction pair_gap minutes after branch A
        shift_b = self._offset_to_junction(self.route_a) - self._offset_to_junction(self.route_b) + c.pair_gap

        rows = []
        for n in range(c.trips_per_day):
            pair, is_b = divmod(n, 2)
            route = self.route_b if is_b else self.route_a
            t = day + pd.Timedelta(minutes=int(round(start + pair * interval + (shift_b if is_b else 0))))
            train_number = str(1000 + n)
            trip_id = '{:%Y%m%d}-{}'.format(day, train_number)
            for i, station in enumerate(route):
                arr = t if i > 0 else pd.NaT
                dep = (t + pd.Timedelta(minutes=c.dwell_minutes if i > 0 else 0)) if i < len(route) - 1 else pd.NaT
                rows.append({'trip_id': trip_id, 'train_number': train_number,
                             'train_type': 'IC' if is_b else 'SPR', 'station_code': station, 'stop_index': i,
                             'scheduled_arrival': arr, 'scheduled_departure': dep,
                             'platform_scheduled': '2' if is_b else '1'})
                if i < len(route) - 1:
                    t = dep + pd.Timedelta(minutes=self.run_minutes[(station, route[i + 1])])
        return pd.DataFrame(rows)

    def draw_primaries(self, stops):
        """
        Draw primary delays at the departures of the timetable.

        Returns
        -------
        primaries: dict
            (trip_id, stop_index) -> minutes
        """
        c = self.config
        dep = stops[stops['scheduled_departure'].notna()]
        hit = self.rng.random(len(dep)) < c.primary_delay_rate
        minutes = np.maximum(np.round(self.rng.exponential(c.primary_delay_magnitude, size=len(dep))), 1)
        return {(t, int(s)): int(m) for t, s, h, m in zip(dep['trip_id'], dep['stop_index'], hit, minutes) if h}

    def simulate(self, stops, primaries):
        """
        Propagate delays through a timetable.

        Events are processed in global scheduled order (ties: trip order, stop index, arrival first). The arrival
        delay at stop i equals the departure delay at stop i-1 plus the headway push, the departure delay equals
        max(arrival delay - dwell_recovery, 0) plus the primary delay injected at that departure.

        Parameters
        ----------
        stops: pandas.DataFrame
            timetable (see timetable)
        primaries: dict
            (trip_id, stop_index) -> primary delay minutes

        Returns
        -------
        (stops, events): (pandas.DataFrame, list)
            timetable with actual_arrival and actual_departure columns, and the list of propagation events
        """
        c = self.config
        stops = stops.sort_values(['trip_id', 'stop_index']).reset_index(drop=True)
        order = trip_order(stops)
        pairs = find_headway_pairs(stops, order=order)
        leaders = {}
        for p in pairs.itertuples(index=False):
            leaders.setdefault((p.follower_trip, p.follower_stop), []).append((p.leader_trip, p.leader_stop, p.gap))

        queue = []
        for row in stops.itertuples(index=False):
            if pd.notna(row.scheduled_arrival):
                queue.append((row.scheduled_arrival, order[row.trip_id], row.stop_index, 0, row.trip_id))
            if pd.notna(row.scheduled_departure):
                queue.append((row.scheduled_departure, order[row.trip_id], row.stop_index, 1, row.trip_id))
        queue.sort(key=lambda e: e[:4])

        station_of = dict(zip(zip(stops['trip_id'], stops['stop_index']), stops['station_code']))
        arr_delay = {}
        dep_delay = {}
        events = []
        for _, _, stop, kind, trip in queue:
            if kind == 0:
                delay = dep_delay.get((trip, stop - 1), 0)
                push, source = 0, (None, None)
                for leader_trip, leader_stop, gap in leaders.get((trip, stop), []):
                    lead = arr_delay.get((leader_trip, leader_stop), 0)
                    candidate = int(round(c.headway_propagation_fraction * max(0.0, lead - gap)))
                    if candidate > push:
                        push, source = candidate, (leader_trip, leader_stop)
                if push >= 1:
                    events.append({'from_trip': source[0], 'from_stop': int(source[1]), 'to_trip': trip,
                                   'to_stop': int(stop), 'station': station_of[(trip, stop)], 'minutes': push})
                arr_delay[(trip, stop)] = delay + push
            else:
                incoming = arr_delay.get((trip, stop), 0)
                recovered = max(incoming - c.dwell_recovery, 0) if stop > 0 else 0
                dep_delay[(trip, stop)] = recovered + primaries.get((trip, stop), 0)

        keys = list(zip(stops['trip_id'], stops['stop_index']))
        stops['actual_arrival'] = stops['scheduled_arrival'] + pd.to_timedelta(
            [arr_delay.get(k, 0) for k in keys], unit='min')
        stops['actual_departure'] = stops['scheduled_departure'] + pd.to_timedelta(
            [dep_delay.get(k, 0) for k in keys], unit='min')
        return stops, events

    def _cancel(self, stops):
        stops['cancelled_arrival'] = False
        stops['cancelled_departure'] = False
        if self.config.cancellation_rate <= 0:
            return stops
        for trip_id, trip in stops.groupby('trip_id', sort=True):
            if len(trip) > 2 and self.rng.random() < self.config.cancellation_rate:
                row = trip.index[self.rng.integers(1, len(trip) - 1)]
                stops.loc[row, ['cancelled_arrival', 'cancelled_departure']] = True
        return stops

    def generate(self):
        """
        Generate all service days.

        Returns
        -------
        (records, ground_truth): (pandas.DataFrame, dict)
            records in the CSV schema of knockon.parser, and the primary injections and propagation events
        """
        c = self.config
        days = pd.date_range(FIRST_DAY, periods=c.day_count, freq='D')
        n_holidays = int(round(c.holiday_rate * c.day_count))
        holidays = sorted(self.rng.choice(days, size=n_holidays, replace=False)) if n_holidays else []
        self.holidays = [pd.Timestamp(h).strftime('%Y-%m-%d') for h in holidays]

        frames = []
        primaries_log = []
        events_log = []
        for day in tqdm(days, desc='Generating service days', disable=not self.progress_bar):
            stops = self.timetable(day)
            primaries = self.draw_primaries(stops)
            stops, events = self.simulate(stops, primaries)
            stops = self._cancel(stops)
            stops['service_day'] = day
            stops['platform_actual'] = stops['platform_scheduled']
            frames.append(stops)
            primaries_log += [{'trip_id': t, 'stop_index': s, 'minutes': m} for (t, s), m in sorted(primaries.items())]
            events_log += events

        records = pd.concat(frames, ignore_index=True)[COLUMNS]
        self.records = records.sort_values(['service_day', 'trip_id', 'stop_index']).reset_index(drop=True)
        self.ground_truth = {'config': asdict(c), 'primary_delays': primaries_log, 'propagation_events': events_log}
        return self.records, self.ground_truth

    def save(self, path):
        """
        Write records.csv, ground_truth.json and holidays.json to the folder `path`.
        """
        if self.records is None:
            self.generate()
        os.makedirs(path, exist_ok=True)
        write_records(self.records, os.path.join(path, 'records.csv'))
        with open(os.path.join(path, 'ground_truth.json'), 'w') as f:
            json.dump(self.ground_truth, f, indent=2, sort_keys=True)
        with open(os.path.join(path, 'holidays.json'), 'w') as f:
            json.dump(self.holidays, f, indent=2)


def generate_synthetic(config):
    """
    Generate synthetic stop records and their ground truth for `config`.

    Returns
    -------
    (records, ground_truth, holidays): (pandas.DataFrame, dict, list)
    """
    sim = networkSimulator(config)
    records, truth = sim.generate()
    return records, truth, sim.holidays
