"""
Submodule containing classes and functions relative to **training**.

Both stages of the hurdle model are trained with a k-step autoregressive simulation of each service day:

- the classifier is trained with binary cross-entropy against delay occurrence; in the simulated state an event keeps
  its true delay when the classifier predicts a delay and 0 otherwise,
- the regressor is trained with a mean squared error in log1p space, masked to the events that were truly delayed; its
  own (decoded) outputs enter the simulated state.

With scheduled sampling, each step uses the pure ground truth state with probability p instead of the model-driven
one. The two simulations run back-to-back on each day but share no parameters, optimizer or state.

By using this code you agree to the terms of the software license agreement.

© Copyright 2020 Wyss Center for Bio and Neuro Engineering – All rights reserved
"""

import copy
import os
from dataclasses import dataclass

import numpy as np
import pandas as pd
import torch
import torch.nn.functional as F
from tqdm import tqdm

from knockon.exceptions import configError, numericError
from knockon.grapher import (GROUND_TRUTH, PREDICTED, extract_consistent_subgraph, forecast_windows, init_state,
                             update_state)
from knockon.networks import decode_delay, save_checkpoint, to_batch

SCHEDULES = ['linear', 'exponential', 'inverse_sigmoid']
LOSS_COLUMNS = ['epoch', 'phase', 'model', 'service_day', 'window', 'step', 'loss', 'n_targets', 'n_delayed',
                'sampling_prob']


@dataclass
class rolloutConfig:
    """
    Configuration of the rollout training.

    k: steps per rollout window
    schedule: scheduled sampling schedule ('linear', 'exponential' or 'inverse_sigmoid')
    epochs: number of passes over the training days
    learning_rate: Adam learning rate
    step_minutes: length of one step (anchors of a step are the events scheduled within it)
    depth: in-neighborhood hops of the extracted subgraphs
    seed: seed of the day shuffling and of the sampling coins
    pos_weight: optional positive class weight of the classifier loss
    decay: base of the exponential schedule
    steepness: constant c of the inverse sigmoid schedule
    """
    k: int = 10
    schedule: str = 'linear'
    epochs: int = 10
    learning_rate: float = 1e-3
    step_minutes: float = 15
    depth: int = 3
    seed: int = 0
    pos_weight: float = None
    decay: float = 0.8
    steepness: float = 2.0

    def validate(self):
        if self.k < 1:
            raise configError('Error: k must be >= 1.')
        if self.epochs < 0:
            raise configError('Error: epochs must be >= 0.')
        if self.schedule not in SCHEDULES:
            raise configError('Error: unknown sampling schedule \'{}\' (expected one of {}).'.format(self.schedule,
                                                                                                   SCHEDULES))
        if self.learning_rate <= 0 or self.step_minutes <= 0:
            raise configError('Error: learning_rate and step_minutes must be positive.')
        if self.depth < 1:
            raise configError('Error: depth must be >= 1.')
        if not 0 < self.decay <= 1 or self.steepness < 1:
            raise configError('Error: decay must be in (0, 1] and steepness >= 1.')
        if self.pos_weight is not None and self.pos_weight <= 0:
            raise configError('Error: pos_weight must be positive.')
        return self


def scheduled_sampling_prob(epoch, config):
    """
    Probability of using the ground truth state at each step of the given epoch.

    Parameters
    ----------
    epoch: int
        epoch index, 0 <= epoch < config.epochs
    config: rolloutConfig

    Returns
    -------
    p: float
        value in [0, 1], non-increasing with epoch
    """
    if config.schedule == 'linear':
        p = 1.0 if config.epochs <= 1 else 1 - epoch / (config.epochs - 1)
    elif config.schedule == 'exponential':
        p = config.decay ** epoch
    elif config.schedule == 'inverse_sigmoid':
        c = config.steepness
        p = c / (c + np.exp(epoch / c))
    else:
        raise configError('Error: unknown sampling schedule \'{}\'.'.format(config.schedule))
    return float(np.clip(p, 0, 1))


def _dtype(model):
    return next(model.parameters()).dtype


def _check(loss, name, epoch, graph, step):
    if not torch.isfinite(loss):
        raise numericError('Error: non-finite {} loss at epoch {}, day {}, step {}.'
                           .format(name, epoch, graph.service_day, step))


def bce_loss(logits, y, pos_weight=None):
    """
    Mean binary cross-entropy between logits and delay occurrence (y > 0).
    """
    target = (y > 0).to(logits.dtype)
    weight = None if pos_weight is None else torch.tensor(pos_weight, dtype=logits.dtype)
    return F.binary_cross_entropy_with_logits(logits, target, pos_weight=weight)


def masked_mse_loss(log_delay, y):
    """
    Mean squared error between log-space outputs and log1p(y) over the truly delayed targets.

    Returns
    -------
    (loss, n_delayed): (torch.Tensor or None, int)
        loss is None when no target is delayed
    """
    mask = y > 0
    n = int(mask.sum())
    if n == 0:
        return None, 0
    return ((log_delay[mask] - torch.log1p(y[mask])) ** 2).mean(), n


def _row(name, graph, w, s, loss, n_targets, n_delayed, p, epoch, phase):
    return {'epoch': epoch, 'phase': phase, 'model': name, 'service_day': graph.service_day.strftime('%Y-%m-%d'),
            'window': w, 'step': s, 'loss': loss, 'n_targets': n_targets, 'n_delayed': n_delayed,
            'sampling_prob': p}


def classifier_rollout(graph, model, config, rng, p=0.0, epoch=0, phase='train', backward=True):
    """
    k-step rollout of the classifier over every forecast window of a day.

    Gradients of the per-step mean BCE are accumulated in the model parameters (no optimizer step). The simulated state
    receives the true delay where the classifier predicts a delay (logit > 0) and 0 elsewhere, or the pure ground
    truth with probability `p`.

    Parameters
    ----------
    graph: eventGraph
        day graph with attached feature bundle
    model: hurdleClassifier
    config: rolloutConfig
    rng: numpy.random.Generator
        source of the sampling coins (one draw per step)
    p: float
        probability of the ground truth state
    epoch: int
        epoch reported in the loss rows
    phase: str
        'train' or 'val'
    backward: bool
        accumulate gradients

    Returns
    -------
    rows: list of dict
        one loss row per step (columns LOSS_COLUMNS)
    """
    rows = []
    dtype = _dtype(model)
    for w, window in enumerate(forecast_windows(graph, config.k, config.step_minutes)):
        state = init_state(graph, window.cutoff)
        for s, anchors in enumerate(window.steps):
            if len(anchors) == 0:
                continue
            view = extract_consistent_subgraph(graph, anchors, window.cutoff, state, depth=config.depth)
            y = torch.as_tensor(graph.y[anchors], dtype=dtype)
            logits, _ = model(to_batch(view, dtype))
            loss = bce_loss(logits, y, config.pos_weight)
            _check(loss, 'classifier', epoch, graph, s)
            if backward:
                loss.backward()

            use_truth = rng.random() < p
            if use_truth:
                values = graph.y[anchors]
            else:
                values = np.where(logits.detach().cpu().numpy() > 0, graph.y[anchors], 0.0)
            state = update_state(graph, state, anchors, values, GROUND_TRUTH if use_truth else PREDICTED)
            rows.append(_row('classifier', graph, w, s, float(loss.detach()), len(anchors),
                             int((graph.y[anchors] > 0).sum()), p, epoch, phase))
    return rows


def regressor_rollout(graph, model, config, rng, p=0.0, epoch=0, phase='train', backward=True):
    """
    k-step rollout of the regressor over every forecast window of a day.

    The loss of a step is the masked log-space MSE; a step without delayed targets contributes a zero loss and no
    gradient. The simulated state receives expm1(max(output, 0)), or the true delay with probability `p`.

    Parameters and return value are those of classifier_rollout.
    """
    rows = []
    dtype = _dtype(model)
    for w, window in enumerate(forecast_windows(graph, config.k, config.step_minutes)):
        state = init_state(graph, window.cutoff)
        for s, anchors in enumerate(window.steps):
            if len(anchors) == 0:
                continue
            view = extract_consistent_subgraph(graph, anchors, window.cutoff, state, depth=config.depth)
            y = torch.as_tensor(graph.y[anchors], dtype=dtype)
            log_delay, _ = model(to_batch(view, dtype))
            loss, n_delayed = masked_mse_loss(log_delay, y)
            if loss is not None:
                _check(loss, 'regressor', epoch, graph, s)
                if backward:
                    loss.backward()

            use_truth = rng.random() < p
            if use_truth:
                values = graph.y[anchors]
            else:
                values = decode_delay(log_delay.detach()).cpu().numpy()
            state = update_state(graph, state, anchors, values, GROUND_TRUTH if use_truth else PREDICTED)
            rows.append(_row('regressor', graph, w, s, 0.0 if loss is None else float(loss.detach()), len(anchors),
                             n_delayed, p, epoch, phase))
    return rows


def validation_loss(losses, epoch, name):
    """
    Target-weighted validation loss of one model at one epoch (BCE weighted by targets, MSE by delayed targets).
    """
    df = losses[(losses['epoch'] == epoch) & (losses['phase'] == 'val') & (losses['model'] == name)]
    weight = df['n_delayed'] if name == 'regressor' else df['n_targets']
    if weight.sum() == 0:
        return 0.0
    return float((df['loss'] * weight).sum() / weight.sum())


class pairTrainer():
    """
    Training loop shared by the hurdle and one-shot model pairs.

    Epoch 0 of the loss report holds the validation of the initial parameters; training epoch e (0-based) is reported
    as epoch e + 1. When validation days are given, the parameters with the lowest validation loss are restored at
    the end, independently for each model.
    """

    def __init__(self, classifier, regressor, config=None, progress_bar=True, verbose=True):
        self.config = (config if config is not None else rolloutConfig()).validate()
        self.classifier = classifier
        self.regressor = regressor
        self.progress_bar = progress_bar
        self.verbose = verbose
        self.rng = np.random.default_rng(self.config.seed)
        self.optimizers = {'classifier': torch.optim.Adam(classifier.parameters(), lr=self.config.learning_rate),
                           'regressor': torch.optim.Adam(regressor.parameters(), lr=self.config.learning_rate)}
        self.losses = pd.DataFrame(columns=LOSS_COLUMNS)
        self.best_epoch = {'classifier': 0, 'regressor': 0}

    @property
    def models(self):
        return {'classifier': self.classifier, 'regressor': self.regressor}

    def rollout(self, name, graph, rng, p, epoch, phase, backward):
        raise NotImplementedError

    def train(self, train_graphs, val_graphs=None):
        """
        Train both models.

        Parameters
        ----------
        train_graphs: list of eventGraph
            training days (feature bundle attached)
        val_graphs: list of eventGraph, optional
            validation days, evaluated with sampling probability 0

        Returns
        -------
        losses: pandas.DataFrame
            loss report (columns LOSS_COLUMNS)
        """
        rows = []
        best = {}
        if val_graphs:
            rows += self.validate(val_graphs, epoch=0)
            best = self._snapshot(pd.DataFrame(rows, columns=LOSS_COLUMNS), 0, best)

        for epoch in range(self.config.epochs):
            p = scheduled_sampling_prob(epoch, self.config)
            order = self.rng.permutation(len(train_graphs))
            for i in tqdm(order, desc='Epoch {}/{}'.format(epoch + 1, self.config.epochs),
                          disable=not self.progress_bar):
                for name, model in self.models.items():
                    model.train()
                    self.optimizers[name].zero_grad(set_to_none=True)
                    rows += self.rollout(name, train_graphs[i], self.rng, p, epoch + 1, 'train', True)
                    self.optimizers[name].step()
            if val_graphs:
                rows += self.validate(val_graphs, epoch=epoch + 1)
                best = self._snapshot(pd.DataFrame(rows, columns=LOSS_COLUMNS), epoch + 1, best)

        for name, model in self.models.items():
            if name in best:
                model.load_state_dict(best[name][1])
            model.eval()
        self.losses = pd.DataFrame(rows, columns=LOSS_COLUMNS)
        if self.verbose:
            self.print_results()
        return self.losses

    def validate(self, graphs, epoch):
        """
        Live-condition (p = 0) rollouts of both models without gradient.
        """
        rows = []
        rng = np.random.default_rng(self.config.seed)
        with torch.no_grad():
            for graph in graphs:
                for name, model in self.models.items():
                    model.eval()
                    rows += self.rollout(name, graph, rng, 0.0, epoch, 'val', False)
        return rows

    def _snapshot(self, losses, epoch, best):
        for name, model in self.models.items():
            loss = validation_loss(losses, epoch, name)
            if name not in best or loss < best[name][0]:
                best[name] = (loss, copy.deepcopy(model.state_dict()))
                self.best_epoch[name] = epoch
        return best

    def loss_summary(self):
        """
        Mean loss per epoch, phase, model and step.
        """
        return self.losses.groupby(['epoch', 'phase', 'model', 'step'], as_index=False).agg(
            loss=('loss', 'mean'), n_targets=('n_targets', 'sum'), n_delayed=('n_delayed', 'sum'),
            sampling_prob=('sampling_prob', 'first'))

    def print_results(self):
        print('\n****** TRAINING RESULTS ******')
        epochs = sorted(self.losses.loc[self.losses['phase'] == 'val', 'epoch'].unique())
        for epoch in epochs:
            print('Epoch {}: validation BCE {:.4f}, validation masked MSE {:.4f}'.format(
                epoch, validation_loss(self.losses, epoch, 'classifier'),
                validation_loss(self.losses, epoch, 'regressor')))
        print('Best epochs: classifier {}, regressor {}'.format(self.best_epoch['classifier'],
                                                                self.best_epoch['regressor']))

    def save(self, path):
        """
        Save both checkpoints (classifier/, regressor/) and the loss report (losses.csv) to the folder `path`.
        """
        os.makedirs(path, exist_ok=True)
        for name, model in self.models.items():
            save_checkpoint(model, os.path.join(path, name))
        self.losses.to_csv(os.path.join(path, 'losses.csv'), index=False, lineterminator='\n')


class hurdleTrainer(pairTrainer):
    """
    Rollout trainer of the GATv2 hurdle pair (hurdleClassifier, hurdleRegressor).
    """

    def rollout(self, name, graph, rng, p, epoch, phase, backward):
        fn = classifier_rollout if name == 'classifier' else regressor_rollout
        return fn(graph, self.models[name], self.config, rng, p, epoch=epoch, phase=phase, backward=backward)


def oneshot_rollout(graph, model, config, epoch=0, phase='train', backward=True):
    """
    One forward pass per window of a oneshotGCN: the anchors of every step are predicted at once, anchor rows of step s
    being read from output head s. The window loss is the sum of the per-step losses.

    Returns
    -------
    rows: list of dict
        one loss row per non-empty step
    """
    rows = []
    dtype = _dtype(model)
    for w, window in enumerate(forecast_windows(graph, config.k, config.step_minutes)):
        steps = [(s, a) for s, a in enumerate(window.steps) if len(a)]
        anchors = np.concatenate([a for _, a in steps])
        head = np.concatenate([np.full(len(a), s) for s, a in steps])
        state = init_state(graph, window.cutoff)
        view = extract_consistent_subgraph(graph, anchors, window.cutoff, state, depth=config.depth)
        out, _ = model(to_batch(view, dtype))
        out = out[torch.arange(len(anchors)), torch.as_tensor(head)]
        y = torch.as_tensor(graph.y[anchors], dtype=dtype)

        total = None
        for s, _ in steps:
            sel = torch.as_tensor(head == s)
            if model.mode == 'classifier':
                loss, n_delayed = bce_loss(out[sel], y[sel], config.pos_weight), int((y[sel] > 0).sum())
            else:
                loss, n_delayed = masked_mse_loss(out[sel], y[sel])
            if loss is not None:
                _check(loss, model.mode, epoch, graph, s)
                total = loss if total is None else total + loss
            rows.append(_row(model.mode, graph, w, s, 0.0 if loss is None else float(loss.detach()), int(sel.sum()),
                             n_delayed, 0.0, epoch, phase))
        if backward and total is not None:
            total.backward()
    return rows


class oneshotTrainer(pairTrainer):
    """
    Trainer of the one-shot GCN baseline pair (oneshotGCN in classifier and regressor mode). Same days, losses and
    validation protocol as the hurdle pair; no rollout state is simulated, so the sampling probability is unused.
    """

    def rollout(self, name, graph, rng, p, epoch, phase, backward):
        return oneshot_rollout(graph, self.models[name], self.config, epoch=epoch, phase=phase, backward=backward)
