"""
Submodule containing classes and functions relative to **batch processing** of service days.

This submodule introduces the notion of a multi-day dataset: the cleaned records of many service days turned into one
event graph per day, split by date into training, validation and test days, with a feature bundle fitted on the
training days only.

The dataset is saved with the following structure:

        graphs/2022-01-03/nodes.csv
                          edges.csv
                          schedule.json
               2022-01-04/...
               ...
        bundle/scaler.json
               edge_scaler.json
               vocab_<name>.json
               holidays.json
               bundle.json
        split.json

By using this code you agree to the terms of the software license agreement.

© Copyright 2020 Wyss Center for Bio and Neuro Engineering – All rights reserved
"""

import json
import os

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from tqdm import tqdm

from knockon.exceptions import configError, missingInputError
from knockon.featurizer import DEFAULT_CAP, featureBundle
from knockon.grapher import build_event_graph, eventGraph

SPLITS = ['train', 'val', 'test']


def split_days(days, fractions=(0.5, 0.1, 0.4)):
    """
    Contiguous split of sorted service days into training, validation and test days.

    Parameters
    ----------
    days: iterable
        service days
    fractions: tuple
        (train, val, test) fractions; the test split receives the remainder

    Returns
    -------
    split: dict
        'train', 'val', 'test' -> list of 'YYYY-MM-DD' strings
    """
    if len(fractions) != 3 or min(fractions) < 0 or sum(fractions) > 1 + 1e-9:
        raise configError('Error: split fractions must be three non-negative numbers summing to at most 1.')
    days = sorted({pd.Timestamp(d).strftime('%Y-%m-%d') for d in days})
    n_train = int(round(fractions[0] * len(days)))
    n_val = int(round(fractions[1] * len(days)))
    if n_train < 1:
        raise configError('Error: the training split is empty ({} days).'.format(len(days)))
    return {'train': days[:n_train], 'val': days[n_train:n_train + n_val], 'test': days[n_train + n_val:]}


class serviceDayBatch():

    def __init__(self, records=None, holidays=(), cap=DEFAULT_CAP, fractions=(0.5, 0.1, 0.4), progress_bar=True,
                 verbose=True):
        """
        Class to store the event graphs of many service days.

        Parameters
        ----------
        records: pandas.DataFrame
            cleaned records (see knockon.parser.clean); None when loading a saved dataset
        holidays: list
            holiday dates
        cap: float
            clipping cap of minutes_since_last_train_clipped
        fractions: tuple
            (train, val, test) fractions of the contiguous day split
        progress_bar: bool
            display progress bars
        verbose: bool
            print dataset information
        """
        self.records = records
        self.holidays = sorted({pd.Timestamp(h).strftime('%Y-%m-%d') for h in holidays})
        self.cap = cap
        self.progress_bar = progress_bar
        self.verbose = verbose
        self.bundle = None
        self.graphs = {}
        self.days = [] if records is None else sorted(records['service_day'].dt.strftime('%Y-%m-%d').unique())
        self.split = split_days(self.days, fractions) if self.days else {s: [] for s in SPLITS}

    def build(self, n_jobs=1):
        """
        Build the event graph of every day, fit the feature bundle on the training days and attach it to all graphs.

        Parameters
        ----------
        n_jobs: int
            number of parallel workers

        Returns
        -------
        self
        """
        groups = [day for _, day in self.records.groupby(self.records['service_day'].dt.strftime('%Y-%m-%d'),
                                                         sort=True)]
        graphs = Parallel(n_jobs=n_jobs)(
            delayed(build_event_graph)(day, holidays=self.holidays, cap=self.cap)
            for day in tqdm(groups, desc='Building event graphs', disable=not self.progress_bar))
        self.graphs = {g.service_day.strftime('%Y-%m-%d'): g for g in graphs}

        train = [self.graphs[d] for d in self.split['train']]
        self.bundle = featureBundle(holidays=self.holidays, cap=self.cap).fit(
            pd.concat([g.features for g in train], ignore_index=True),
            np.concatenate([g.duration_actual for g in train]))
        for g in self.graphs.values():
            g.attach(self.bundle)

        if self.verbose:
            self.print_info()
        return self

    def __getitem__(self, day):
        return self.graphs[pd.Timestamp(day).strftime('%Y-%m-%d')]

    def __len__(self):
        return len(self.graphs)

    def split_graphs(self, name):
        """
        Graphs of the 'train', 'val' or 'test' split, in date order.
        """
        if name not in SPLITS:
            raise configError('Error: unknown split \'{}\'.'.format(name))
        return [self.graphs[d] for d in self.split[name]]

    def print_info(self):
        print('\n****** DATASET ******')
        print('{} service days: {} train, {} val, {} test'.format(len(self.graphs), len(self.split['train']),
                                                                   len(self.split['val']), len(self.split['test'])))
        census = pd.DataFrame([g.edge_census() for g in self.graphs.values()]).sum()
        print('{} events, edges: {}'.format(sum(g.n_nodes for g in self.graphs.values()),
                                           ', '.join('{} {}'.format(k, int(v)) for k, v in census.items())))

    def save(self, path):
        """
        Save the graphs, the feature bundle and the split to the folder `path`.
        """
        os.makedirs(path, exist_ok=True)
        for day, g in tqdm(self.graphs.items(), desc='Saving event graphs', disable=not self.progress_bar):
            g.save(os.path.join(path, 'graphs', day))
        self.bundle.save(os.path.join(path, 'bundle'))
        with open(os.path.join(path, 'split.json'), 'w') as f:
            json.dump(self.split, f, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path, progress_bar=True, verbose=True):
        """
        Load a dataset saved with serviceDayBatch.save.
        """
        for name in ['split.json', 'bundle', 'graphs']:
            if not os.path.exists(os.path.join(path, name)):
                raise missingInputError('Error: {} does not exist.'.format(os.path.join(path, name)))
        bundle = featureBundle.load(os.path.join(path, 'bundle'))
        batch = cls(holidays=bundle.holidays, cap=bundle.cap, progress_bar=progress_bar, verbose=verbose)
        with open(os.path.join(path, 'split.json'), 'r') as f:
            batch.split = json.load(f)
        batch.bundle = bundle
        days = sorted(os.listdir(os.path.join(path, 'graphs')))
        batch.graphs = {d: eventGraph.load(os.path.join(path, 'graphs', d), bundle=bundle)
                        for d in tqdm(days, desc='Loading event graphs', disable=not progress_bar)}
        batch.days = days
        return batch
