"""
Submodule containing the **command line pipeline** wiring all submodules together.

Every subcommand reads its inputs from and writes its outputs to a workspace folder:

        synth/      records.csv, ground_truth.json, holidays.json
        ingest/     clean_records.csv, cleaning_report.json
        graph/      graphs/, bundle/, split.json
        train/      gatv2/, gcn/, losses.png
        forecast/   predictions.csv, attention.csv, test_days.json
        eval/       metrics.{csv,json}, horizon.{csv,json}, epe.{csv,json}, subgroups.csv, propagation.json, figures
        explain/    attention_analysis.json, feature_importance.csv, attention.png

and each of these folders receives a manifest.json (configuration hash, seed, package versions, file hashes).

By using this code you agree to the terms of the software license agreement.

© Copyright 2020 Wyss Center for Bio and Neuro Engineering – All rights reserved
"""

import argparse
import hashlib
import json
import os
import sys
import warnings
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import pandas as pd
import torch
import yaml

import knockon
from knockon.batcher import serviceDayBatch
from knockon.evaluator import print_metrics, propagation_overlap, save_json, write_reports
from knockon.exceptions import configError, knockonError, missingInputError
from knockon.explainer import attention_analysis, feature_table, permutation_importance, print_attention_analysis
from knockon.forecaster import (ATTENTION_COLUMNS, forecast_days, live_rollout, oneshot_forecast,
                                persistence_baseline, sample_test_days, sort_log, zero_baseline)
from knockon.networks import gatBodyConfig, hurdleClassifier, hurdleRegressor, load_checkpoint, oneshotGCN
from knockon.parser import DEFAULT_DENYLIST, parse_records, recordParser
from knockon.simulator import networkSimulator, syntheticConfig
from knockon.trainer import hurdleTrainer, oneshotTrainer, rolloutConfig
from knockon.viewer import plot_attention_proportions, plot_horizon_curves, plot_losses, plot_subgroups

COMMANDS = ['synth', 'ingest', 'graph', 'train', 'forecast', 'eval', 'explain', 'pipeline']
MODEL_NAMES = ['GATv2', 'GCN', 'Persistence', 'Zero']


@dataclass
class ingestConfig:
    records: str = None
    holidays: str = None
    stations: list = None
    denylist: list = field(default_factory=lambda: list(DEFAULT_DENYLIST))
    handover_tolerance: int = 2

    def validate(self):
        if self.handover_tolerance < 0:
            raise configError('Error: handover_tolerance must be >= 0.')
        return self


@dataclass
class graphConfig:
    fractions: list = field(default_factory=lambda: [0.5, 0.1, 0.4])
    cap: float = 120

    def validate(self):
        if self.cap <= 0:
            raise configError('Error: cap must be positive.')
        return self


@dataclass
class gcnConfig:
    hidden_channels: int = 32
    layers: int = 3
    embedding_dim: int = 4

    def validate(self):
        if min(self.hidden_channels, self.layers, self.embedding_dim) < 1:
            raise configError('Error: GCN sizes must be >= 1.')
        return self


@dataclass
class forecastConfig:
    test_days: int = 30
    threshold: float = 0.5
    attention_days: int = 1
    models: list = field(default_factory=lambda: list(MODEL_NAMES))

    def validate(self):
        if self.test_days < 1:
            raise configError('Error: test_days must be >= 1.')
        if not 0 < self.threshold < 1:
            raise configError('Error: threshold must be in (0, 1).')
        unknown = [m for m in self.models if m not in MODEL_NAMES]
        if unknown:
            raise configError('Error: unknown models {} (expected names among {}).'.format(unknown, MODEL_NAMES))
        return self


@dataclass
class evalConfig:
    top_n: int = 10
    change_tolerance: float = 0.5
    plots: bool = True

    def validate(self):
        if self.top_n < 1 or self.change_tolerance < 0:
            raise configError('Error: top_n must be >= 1 and change_tolerance >= 0.')
        return self


@dataclass
class explainConfig:
    percentile: float = 95
    pool: str = 'all'
    include_self: bool = False
    features: list = None
    repetitions: int = 1
    days: int = 3

    def validate(self):
        if not 0 <= self.percentile <= 100:
            raise configError('Error: percentile must be in [0, 100].')
        if self.pool not in ['all', 'last']:
            raise configError('Error: pool must be \'all\' or \'last\'.')
        if self.repetitions < 1 or self.days < 1:
            raise configError('Error: repetitions and days must be >= 1.')
        return self


SECTIONS = {'synthetic': syntheticConfig, 'ingest': ingestConfig, 'graph': graphConfig, 'model': gatBodyConfig,
            'train': rolloutConfig, 'gcn': gcnConfig, 'forecast': forecastConfig, 'eval': evalConfig,
            'explain': explainConfig}


@dataclass
class runConfig:
    """
    Complete configuration of a run: one section per submodule plus global settings.
    """
    synthetic: syntheticConfig = field(default_factory=syntheticConfig)
    ingest: ingestConfig = field(default_factory=ingestConfig)
    graph: graphConfig = field(default_factory=graphConfig)
    model: gatBodyConfig = field(default_factory=gatBodyConfig)
    train: rolloutConfig = field(default_factory=rolloutConfig)
    gcn: gcnConfig = field(default_factory=gcnConfig)
    forecast: forecastConfig = field(default_factory=forecastConfig)
    eval: evalConfig = field(default_factory=evalConfig)
    explain: explainConfig = field(default_factory=explainConfig)
    seed: int = 0
    jobs: int = 1
    workspace: str = '.'
    verbose: bool = True

    def validate(self):
        for name in SECTIONS:
            getattr(self, name).validate()
        if self.jobs < 1 and self.jobs != -1:
            raise configError('Error: jobs must be >= 1 (or -1 for all cores).')
        return self

    def digest(self):
        """SHA-256 of the canonical YAML dump of the configuration (workspace and verbosity excluded)."""
        d = asdict(self)
        d.pop('workspace')
        d.pop('verbose')
        return hashlib.sha256(yaml.safe_dump(d, sort_keys=True).encode()).hexdigest()


def _section(name, values):
    cls = SECTIONS[name]
    if not isinstance(values, dict):
        raise configError('Error: configuration section \'{}\' must be a mapping.'.format(name))
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise configError('Error: unknown keys {} in configuration section \'{}\'.'.format(unknown, name))
    return cls(**values)


def load_config(path=None, overrides=(), seed=None, jobs=None, workspace=None):
    """
    Build a runConfig from a YAML file and command line overrides.

    Parameters
    ----------
    path: string, optional
        YAML configuration file
    overrides: list
        'section.key=value' strings (value parsed as YAML)
    seed: int, optional
        global seed; also replaces the generator and training seeds
    jobs: int, optional
        number of parallel workers
    workspace: string, optional
        workspace root (default: the KNOCKON_WORKSPACE environment variable, then the configuration, then '.')

    Returns
    -------
    config: runConfig
    """
    raw = {}
    if path is not None:
        if not os.path.exists(path):
            raise missingInputError('Error: configuration file {} does not exist.'.format(path))
        try:
            with open(path, 'r') as f:
                raw = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise configError('Error: cannot parse configuration file {}: {}'.format(path, e))
        if not isinstance(raw, dict):
            raise configError('Error: configuration file {} must contain a mapping.'.format(path))

    for item in overrides:
        if '=' not in item or '.' not in item.split('=', 1)[0]:
            raise configError('Error: override \'{}\' is not of the form section.key=value.'.format(item))
        key, value = item.split('=', 1)
        section, name = key.split('.', 1)
        raw.setdefault(section, {})
        if not isinstance(raw[section], dict):
            raise configError('Error: \'{}\' is not a configuration section.'.format(section))
        raw[section][name] = yaml.safe_load(value)

    glob = {'seed', 'jobs', 'workspace', 'verbose'}
    unknown = sorted(set(raw) - set(SECTIONS) - glob)
    if unknown:
        raise configError('Error: unknown configuration sections {}.'.format(unknown))
    try:
        config = runConfig(**{k: _section(k, v) if k in SECTIONS else v for k, v in raw.items()})
    except TypeError as e:
        raise configError('Error: invalid configuration: {}'.format(e))

    if seed is not None:
        config.seed = seed
        config.synthetic.random_seed = seed
        config.train.seed = seed
    if jobs is not None:
        config.jobs = jobs
    if workspace is not None:
        config.workspace = workspace
    elif os.environ.get('KNOCKON_WORKSPACE') and 'workspace' not in raw:
        config.workspace = os.environ['KNOCKON_WORKSPACE']
    return config.validate()


def write_manifest(path, config):
    """
    Write manifest.json (configuration hash, seed, package versions and SHA-256 of every file) in the folder `path`.
    """
    files = {}
    for root, _, names in os.walk(path):
        for name in names:
            full = os.path.join(root, name)
            rel = os.path.relpath(full, path).replace(os.sep, '/')
            if rel == 'manifest.json':
                continue
            with open(full, 'rb') as f:
                files[rel] = hashlib.sha256(f.read()).hexdigest()
    manifest = {'config_sha256': config.digest(), 'seed': config.seed,
                'versions': {'knockon': knockon.__version__, 'numpy': np.__version__, 'pandas': pd.__version__,
                             'torch': torch.__version__},
                'files': dict(sorted(files.items()))}
    save_json(manifest, os.path.join(path, 'manifest.json'))


def require_path(path):
    if not os.path.exists(path):
        raise missingInputError('Error: input {} does not exist.'.format(path))
    return path


class pipelineRunner():
    """
    Class used to run the subcommands of the command line interface on a workspace.
    """

    def __init__(self, config):
        """
        Parameters
        ----------
        config: runConfig
            validated configuration
        """
        self.config = config
        self.workspace = config.workspace
        self.verbose = config.verbose
        torch.manual_seed(config.seed)
        torch.use_deterministic_algorithms(True)

    def folder(self, name):
        path = os.path.join(self.workspace, name)
        os.makedirs(path, exist_ok=True)
        return path

    def require(self, *parts):
        """Path of an existing workspace input."""
        return require_path(os.path.join(self.workspace, *parts))

    def run(self, command):
        steps = COMMANDS[:-1] if command == 'pipeline' else [command]
        for step in steps:
            if self.verbose:
                print('\n****** {} ******'.format(step.upper()))
            getattr(self, step)()
            write_manifest(os.path.join(self.workspace, step), self.config)

    def synth(self):
        networkSimulator(self.config.synthetic, progress_bar=self.verbose).save(self.folder('synth'))

    def _holidays(self):
        c = self.config.ingest
        path = c.holidays if c.holidays is not None else os.path.join(self.workspace, 'synth', 'holidays.json')
        if not os.path.exists(path):
            if c.holidays is not None:
                raise missingInputError('Error: holiday file {} does not exist.'.format(path))
            warnings.warn('No holiday file found, is_holiday will be 0 for every day.')
            return []
        with open(path, 'r') as f:
            return json.load(f)

    def ingest(self):
        c = self.config.ingest
        path = require_path(c.records) if c.records is not None else self.require('synth', 'records.csv')
        parser = recordParser(path, stations=c.stations, denylist=c.denylist,
                              handover_tolerance=c.handover_tolerance, verbose=self.verbose)
        parser.save(self.folder('ingest'))

    def graph(self):
        records = parse_records(self.require('ingest', 'clean_records.csv'))
        batch = serviceDayBatch(records, holidays=self._holidays(), cap=self.config.graph.cap,
                                fractions=tuple(self.config.graph.fractions), progress_bar=self.verbose,
                                verbose=self.verbose)
        batch.build(n_jobs=self.config.jobs).save(self.folder('graph'))

    def _batch(self):
        return serviceDayBatch.load(self.require('graph'), progress_bar=self.verbose, verbose=self.verbose)

    def train(self):
        c = self.config
        batch = self._batch()
        train, val = batch.split_graphs('train'), batch.split_graphs('val')
        n_inputs, vocab_sizes = len(batch.bundle.input_columns), batch.bundle.vocab_sizes
        out = self.folder('train')

        torch.manual_seed(c.seed)
        trainer = hurdleTrainer(hurdleClassifier(n_inputs, vocab_sizes, c.model),
                                hurdleRegressor(n_inputs, vocab_sizes, c.model), c.train,
                                progress_bar=self.verbose, verbose=self.verbose)
        trainer.train(train, val)
        trainer.save(os.path.join(out, 'gatv2'))

        torch.manual_seed(c.seed)
        g = c.gcn
        baseline = oneshotTrainer(oneshotGCN(n_inputs, vocab_sizes, c.train.k, 'classifier', g.hidden_channels,
                                             g.layers, g.embedding_dim),
                                  oneshotGCN(n_inputs, vocab_sizes, c.train.k, 'regressor', g.hidden_channels,
                                             g.layers, g.embedding_dim), c.train,
                                  progress_bar=self.verbose, verbose=self.verbose)
        baseline.train(train, val)
        baseline.save(os.path.join(out, 'gcn'))
        plot_losses(pd.concat([trainer.losses.assign(model='gatv2 ' + trainer.losses['model']),
                               baseline.losses.assign(model='gcn ' + baseline.losses['model'])]),
                    path=os.path.join(out, 'losses.png'))

    def _test_days(self, batch):
        c = self.config
        held_out = batch.split['test']
        n = c.forecast.test_days
        if len(held_out) < n:
            warnings.warn('Only {} test days available, evaluating all of them.'.format(len(held_out)))
            n = len(held_out)
        days = sample_test_days(held_out, n=n, seed=c.seed, exclude=batch.split['train'])
        return sorted(d.strftime('%Y-%m-%d') for d in days)

    def _models(self, name):
        return (load_checkpoint(self.require('train', name, 'classifier')),
                load_checkpoint(self.require('train', name, 'regressor')))

    def forecast(self):
        c = self.config
        batch = self._batch()
        days = self._test_days(batch)
        graphs = [batch[d] for d in days]
        k, step, depth, threshold = c.train.k, c.train.step_minutes, c.train.depth, c.forecast.threshold
        logs, attention = [], []

        if 'GATv2' in c.forecast.models:
            classifier, regressor = self._models('gatv2')
            capture = set(days[:c.forecast.attention_days])
            results = forecast_days(graphs, lambda g: live_rollout(
                g, classifier, regressor, k=k, step_minutes=step, depth=depth, threshold=threshold,
                capture_attention=g.service_day.strftime('%Y-%m-%d') in capture), n_jobs=c.jobs,
                progress_bar=self.verbose)
            logs += [r[0] for r in results]
            attention += [r[1] for r in results if len(r[1])]
        if 'GCN' in c.forecast.models:
            classifier, regressor = self._models('gcn')
            logs += forecast_days(graphs, lambda g: oneshot_forecast(g, classifier, regressor, k=k, step_minutes=step,
                                                                     depth=depth, threshold=threshold),
                                  n_jobs=c.jobs, progress_bar=self.verbose)
        if 'Persistence' in c.forecast.models:
            logs += [persistence_baseline(g, k=k, step_minutes=step) for g in graphs]
        if 'Zero' in c.forecast.models:
            logs += [zero_baseline(g, k=k, step_minutes=step) for g in graphs]

        out = self.folder('forecast')
        sort_log(pd.concat(logs, ignore_index=True)).to_csv(os.path.join(out, 'predictions.csv'), index=False,
                                                            lineterminator='\n')
        attention = pd.concat(attention, ignore_index=True) if attention else pd.DataFrame(columns=ATTENTION_COLUMNS)
        attention.to_csv(os.path.join(out, 'attention.csv'), index=False, lineterminator='\n')
        save_json(days, os.path.join(out, 'test_days.json'))

    def _log(self):
        log = pd.read_csv(self.require('forecast', 'predictions.csv'), dtype={'trip_id': str, 'service_day': str})
        with open(self.require('forecast', 'test_days.json'), 'r') as f:
            days = json.load(f)
        return log, days

    def eval(self):
        c = self.config
        batch = self._batch()
        log, days = self._log()
        graphs = [batch[d] for d in days]
        out = self.folder('eval')
        reports = write_reports(log, graphs, out, k=c.train.k, top_n=c.eval.top_n,
                                change_tolerance=c.eval.change_tolerance)

        truth = os.path.join(self.workspace, 'synth', 'ground_truth.json')
        if os.path.exists(truth) and c.ingest.records is None:
            with open(truth, 'r') as f:
                events = json.load(f)['propagation_events']
            save_json({name: propagation_overlap(reports['edges'], events, name, c.eval.change_tolerance)
                       for name in sorted(log['model_name'].unique())}, os.path.join(out, 'propagation.json'))
        if c.eval.plots:
            plot_horizon_curves(reports['horizon'], path=os.path.join(out, 'horizon.png'))
            plot_subgroups(reports['subgroups'], path=os.path.join(out, 'subgroups.png'))
        if self.verbose:
            print_metrics(reports['metrics'])

    def explain(self):
        c = self.config.explain
        batch = self._batch()
        _, days = self._log()
        out = self.folder('explain')

        attention = pd.read_csv(self.require('forecast', 'attention.csv'), dtype={'service_day': str})
        if len(attention):
            graphs = [batch[d] for d in sorted(attention['service_day'].unique())]
            analysis = attention_analysis(attention, feature_table(graphs), percentile=c.percentile, pool=c.pool,
                                          include_self=c.include_self)
            save_json(analysis, os.path.join(out, 'attention_analysis.json'))
            if self.config.eval.plots:
                plot_attention_proportions(analysis, path=os.path.join(out, 'attention.png'))
            if self.verbose:
                print_attention_analysis(analysis)
        else:
            warnings.warn('The attention log is empty, skipping the attention analysis.')

        classifier, regressor = self._models('gatv2')
        t = self.config.train
        report = permutation_importance([batch[d] for d in days[:c.days]], classifier, regressor, features=c.features,
                                        repetitions=c.repetitions, seed=self.config.seed, k=t.k,
                                        step_minutes=t.step_minutes, depth=t.depth,
                                        threshold=self.config.forecast.threshold, progress_bar=self.verbose,
                                        verbose=self.verbose)
        report.to_csv(os.path.join(out, 'feature_importance.csv'), index=False, lineterminator='\n')


def build_parser():
    parser = argparse.ArgumentParser(prog='knockon', description='Train delay propagation forecasting on event graphs.')
    parser.add_argument('--version', action='version', version=knockon.__version__)
    sub = parser.add_subparsers(dest='command', required=True)
    helps = {'synth': 'generate a synthetic dataset with known delay propagation',
             'ingest': 'parse, unify and clean stop records',
             'graph': 'build and save the event graphs of every service day',
             'train': 'train the GATv2 hurdle pair and the one-shot GCN baseline',
             'forecast': 'forecast the test days with every model and baseline',
             'eval': 'compute metrics, per-horizon, EPE and subgroup reports',
             'explain': 'attention analysis and permutation feature importance',
             'pipeline': 'run every step in order'}
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument('--config', default=None, help='YAML configuration file')
        p.add_argument('--seed', type=int, default=None, help='global seed (overrides the configuration seeds)')
        p.add_argument('--jobs', type=int, default=None, help='number of parallel workers (default 1)')
        p.add_argument('--workspace', default=None, help='workspace folder (default: $KNOCKON_WORKSPACE or .)')
        p.add_argument('--set', action='append', default=[], metavar='SECTION.KEY=VALUE',
                       help='override one configuration value (repeatable)')
        verbosity = p.add_mutually_exclusive_group()
        verbosity.add_argument('--verbose', dest='verbose', action='store_true', default=None)
        verbosity.add_argument('--quiet', dest='verbose', action='store_false')
    return parser


def run(argv):
    """
    Run the command line interface.

    Parameters
    ----------
    argv: list
        command line arguments (without the program name)

    Returns
    -------
    code: int
        0 on success, the exit code of the error category otherwise
    """
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config, args.set, seed=args.seed, jobs=args.jobs, workspace=args.workspace)
        if args.verbose is not None:
            config.verbose = args.verbose
        pipelineRunner(config).run(args.command)
    except knockonError as e:
        print(str(e), file=sys.stderr)
        return e.exit_code
    return 0


def main():
    return run(sys.argv[1:])
