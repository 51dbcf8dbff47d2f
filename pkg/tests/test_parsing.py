"""
Test script for parsing and cleaning stop records.

By using this code you agree to the terms of the software license agreement.

© Copyright 2020 Wyss Center for Bio and Neuro Engineering – All rights reserved
"""


import os

import pandas as pd
import pytest

import knockon

DATA = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'data')
HEADER = ','.join(knockon.parser.COLUMNS)


def _write(tmp_path, lines, name='records.csv'):
    path = os.path.join(tmp_path, name)
    with open(path, 'w') as f:
        f.write('\n'.join([HEADER] + lines) + '\n')
    return path


def test_parse_records():
    records = knockon.parser.parse_records(os.path.join(DATA, 'day.csv'))

    assert(len(records) == 8)
    assert(records['service_day'].nunique() == 1)
    assert(records['scheduled_arrival'].isna().sum() == 2)
    assert(records['scheduled_departure'].isna().sum() == 2)
    assert(records['trip_id'].isna().all())
    assert(records['stop_index'].dtype == 'int64')
    assert(records.loc[1, 'actual_arrival'] == pd.Timestamp('2022-01-03 10:13'))
    assert(not records['cancelled_departure'].any())


def test_parse_errors(tmp_path):
    with pytest.raises(knockon.exceptions.missingInputError):
        knockon.parser.parse_records(os.path.join(tmp_path, 'missing.csv'))

    path = _write(tmp_path, ['2022-01-03,1,,A,0,SPR,,,2022-01-03T25:00,,1,1,false,false'])
    with pytest.raises(knockon.exceptions.recordFormatError) as e:
        knockon.parser.parse_records(path)
    assert('line 2' in str(e.value))
    assert('scheduled_departure' in str(e.value))

    path = _write(tmp_path, ['2022-01-03,1,,A,0,SPR,,,2022-01-03T10:00,,1,1,false,false',
                             '2022-01-03,1,,B,-1,SPR,2022-01-03T10:10,,,,1,1,false,false'])
    with pytest.raises(knockon.exceptions.recordFormatError) as e:
        knockon.parser.parse_records(path)
    assert('line 3' in str(e.value))

    path = os.path.join(tmp_path, 'extra.csv')
    with open(path, 'w') as f:
        f.write(HEADER + ',comment\n')
    with pytest.raises(knockon.exceptions.recordFormatError):
        knockon.parser.parse_records(path)

    # Exit code mapping
    assert(knockon.exceptions.recordFormatError.exit_code == 4)
    assert(knockon.exceptions.missingInputError.exit_code == 3)


def test_assign_trip_ids():
    records = knockon.parser.parse_records(os.path.join(DATA, 'day.csv'))
    records = knockon.parser.assign_trip_ids(records)

    assert(sorted(records['trip_id'].unique()) == ['20220103-1000', '20220103-1001'])
    for _, stops in records.groupby('trip_id'):
        assert(list(stops['stop_index']) == list(range(len(stops))))


def test_handover(tmp_path):
    path = _write(tmp_path, [
        '2022-01-03,3000,,A,0,SPR,,,2022-01-03T09:40,2022-01-03T09:40,1,1,false,false',
        '2022-01-03,3000,,B,1,SPR,2022-01-03T10:00,2022-01-03T10:02,,,1,1,false,false',
        '2022-01-03,3001,,B,0,SPR,,,2022-01-03T10:01,2022-01-03T10:03,1,1,false,false',
        '2022-01-03,3001,,C,1,SPR,2022-01-03T10:20,2022-01-03T10:22,,,1,1,false,false'])
    records = knockon.parser.assign_trip_ids(knockon.parser.parse_records(path))

    assert(records['trip_id'].nunique() == 1)
    assert(len(records) == 3)
    handover = records[records['station_code'] == 'B'].iloc[0]
    assert(handover['scheduled_arrival'] == pd.Timestamp('2022-01-03 10:00'))
    assert(handover['scheduled_departure'] == pd.Timestamp('2022-01-03 10:01'))

    # Outside the tolerance the segments stay separate
    records = knockon.parser.assign_trip_ids(knockon.parser.parse_records(path), tolerance=0)
    assert(records['trip_id'].nunique() == 2)


def test_clean():
    records = knockon.parser.assign_trip_ids(knockon.parser.parse_records(os.path.join(DATA, 'dirty.csv')))
    cleaned, report = knockon.parser.clean(records)

    assert(report.non_standard_service == 2)
    assert(report.fully_cancelled == 2)
    assert(report.cancelled_stop == 1)
    assert(report.illogical_sequence == 1)
    assert(report.incomplete_stop == 1)
    assert(report.short_trip == 1)
    assert(report.total == 8)
    assert(len(cleaned) == 5)

    trip = cleaned[cleaned['trip_id'] == '20220103-2000']
    assert(list(trip['station_code']) == ['A', 'C', 'D'])
    assert(list(trip['stop_index']) == [0, 1, 2])
    assert(list(trip['prev_stop_cancelled']) == [False, True, False])
    assert(list(trip['num_prev_cancelled']) == [0, 1, 1])

    # Origin has no arrival, terminus has no departure
    assert(pd.isna(trip.iloc[0]['scheduled_arrival']))
    assert(pd.isna(trip.iloc[-1]['scheduled_departure']))


def test_clean_is_idempotent(tmp_path):
    records = knockon.parser.assign_trip_ids(knockon.parser.parse_records(os.path.join(DATA, 'dirty.csv')))
    cleaned, _ = knockon.parser.clean(records)

    path = os.path.join(tmp_path, 'clean.csv')
    knockon.parser.write_records(cleaned, path)
    again, report = knockon.parser.clean(knockon.parser.parse_records(path))

    assert(report.total == 0)
    pd.testing.assert_frame_equal(again, cleaned)


def test_filter_region():
    records = knockon.parser.assign_trip_ids(knockon.parser.parse_records(os.path.join(DATA, 'day.csv')))
    cleaned, _ = knockon.parser.clean(records)

    assert(knockon.parser.filter_region(cleaned, ['D'])['trip_id'].unique().tolist() == ['20220103-1000'])
    assert(len(knockon.parser.filter_region(cleaned, ['B'])) == 8)
    assert(len(knockon.parser.filter_region(cleaned, ['Z'])) == 0)
    with pytest.raises(knockon.exceptions.configError):
        knockon.parser.filter_region(cleaned, [])


def test_record_parser(tmp_path):
    parser = knockon.parser.recordParser(os.path.join(DATA, 'day.csv'), verbose=False)

    assert(parser.n_raw == 8)
    assert(parser.n_trips == 2)
    assert(parser.n_days == 1)
    assert(parser.report.total == 0)

    parser.save(tmp_path)
    assert(os.path.exists(os.path.join(tmp_path, 'clean_records.csv')))
    assert(os.path.exists(os.path.join(tmp_path, 'cleaning_report.json')))

    trips = [trip_id for trip_id, _ in knockon.parser.iter_trips(parser.records)]
    assert(trips == ['20220103-1000', '20220103-1001'])
