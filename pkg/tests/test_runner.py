"""
Test script for the configuration layer and the command line pipeline.

By using this code you agree to the terms of the software license agreement.

© Copyright 2020 Wyss Center for Bio and Neuro Engineering – All rights reserved
"""


import json
import os

import pandas as pd
import pytest

import knockon

SMALL = ['synthetic.station_count=6', 'synthetic.trips_per_day=6', 'synthetic.day_count=4',
         'synthetic.primary_delay_rate=0.2', 'graph.fractions=[0.5, 0.25, 0.25]', 'model.layers=2',
         'model.hidden_channels=8', 'model.attention_heads=2', 'train.epochs=1', 'train.k=2', 'gcn.hidden_channels=4',
         'gcn.layers=2', 'forecast.test_days=1', 'eval.plots=false', 'explain.days=1',
         'explain.features=[is_peak, lag2_delay]']


def _sets(items):
    argv = []
    for item in items:
        argv += ['--set', item]
    return argv


def test_default_config():
    config = knockon.runner.load_config()
    assert(config.model.layers == 3 and config.model.attention_heads == 32 and config.model.hidden_channels == 32)
    assert(config.train.k == 10 and config.train.step_minutes == 15)
    assert(config.graph.fractions == [0.5, 0.1, 0.4])
    assert(config.digest() == knockon.runner.load_config().digest())


def test_config_file(tmp_path):
    path = os.path.join(tmp_path, 'config.yaml')
    with open(path, 'w') as f:
        f.write('seed: 4\nmodel:\n  layers: 2\ntrain:\n  k: 5\n')

    config = knockon.runner.load_config(path, overrides=['train.k=3'])
    assert(config.seed == 4 and config.model.layers == 2)
    assert(config.train.k == 3)

    config = knockon.runner.load_config(path, seed=9)
    assert(config.seed == 9 and config.train.seed == 9 and config.synthetic.random_seed == 9)
    assert(config.digest() != knockon.runner.load_config(path).digest())


def test_config_errors(tmp_path):
    with pytest.raises(knockon.exceptions.configError):
        knockon.runner.load_config(overrides=['model.colour=1'])
    with pytest.raises(knockon.exceptions.configError):
        knockon.runner.load_config(overrides=['weather.rain=1'])
    with pytest.raises(knockon.exceptions.configError):
        knockon.runner.load_config(overrides=['train.k'])
    with pytest.raises(knockon.exceptions.configError):
        knockon.runner.load_config(overrides=['forecast.models=[GATv2, LSTM]'])
    with pytest.raises(knockon.exceptions.missingInputError):
        knockon.runner.load_config(os.path.join(tmp_path, 'missing.yaml'))

    path = os.path.join(tmp_path, 'bad.yaml')
    with open(path, 'w') as f:
        f.write('model: [1, 2\n')
    with pytest.raises(knockon.exceptions.configError):
        knockon.runner.load_config(path)


def test_exit_codes(tmp_path):
    assert(knockon.runner.run(['eval', '--workspace', str(tmp_path), '--quiet']) == 3)
    assert(knockon.runner.run(['synth', '--workspace', str(tmp_path), '--quiet', '--set', 'model.colour=1']) == 2)
    assert(knockon.runner.run(['ingest', '--workspace', str(tmp_path), '--quiet']) == 3)


def test_pipeline(tmp_path):
    outputs = []
    for run in ['a', 'b']:
        workspace = os.path.join(tmp_path, run)
        code = knockon.runner.run(['pipeline', '--workspace', workspace, '--seed', '3', '--quiet'] + _sets(SMALL))
        assert(code == 0)
        outputs.append(workspace)

    for step in knockon.runner.COMMANDS[:-1]:
        assert(os.path.exists(os.path.join(outputs[0], step, 'manifest.json')))

    a, b = outputs
    for parts in [('forecast', 'predictions.csv'), ('eval', 'metrics.json'), ('ingest', 'clean_records.csv')]:
        with open(os.path.join(a, *parts), 'rb') as f, open(os.path.join(b, *parts), 'rb') as g:
            assert(f.read() == g.read())

    log = pd.read_csv(os.path.join(a, 'forecast', 'predictions.csv'))
    assert(list(log.columns) == knockon.forecaster.PREDICTION_COLUMNS)
    assert(set(log['model_name']) == set(knockon.runner.MODEL_NAMES))
    assert(log['step_k'].between(0, 1).all())

    with open(os.path.join(a, 'eval', 'metrics.json'), 'r') as f:
        metrics = json.load(f)
    assert(set(metrics) == set(knockon.runner.MODEL_NAMES))
    with open(os.path.join(a, 'eval', 'manifest.json'), 'r') as f:
        manifest = json.load(f)
    assert(manifest['seed'] == 3)
    assert('metrics.csv' in manifest['files'])

    importance = pd.read_csv(os.path.join(a, 'explain', 'feature_importance.csv'))
    assert(set(importance['feature']) == {'is_peak', 'lag2_delay'})
