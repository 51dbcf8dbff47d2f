"""
Initialization module for knockon (forecasting knock-on train delays on event graphs).

**knockon** is composed of submodules that aim at tackling different tasks such as *parsing* stop records, building
*event graphs*, *training* and *forecasting* with the two-stage GATv2 model, and *evaluating* or *explaining* the
forecasts.

By using this code you agree to the terms of the software license agreement.

© Copyright 2020 Wyss Center for Bio and Neuro Engineering – All rights reserved
"""

try:
    from ._version import version as __version__
except ImportError:
    __version__ = "not-installed"

from . import (exceptions, parser, simulator, featurizer, grapher, batcher, networks, trainer, forecaster, evaluator,
               explainer, viewer, runner)
from .batcher import serviceDayBatch
from .featurizer import featureBundle, featureScaler, vocabulary
from .forecaster import liveForecaster, truthPredictor
from .grapher import eventGraph, rolloutState, subgraphView
from .networks import gatBodyConfig, gatBody, gatv2Layer, hurdleClassifier, hurdleRegressor, oneshotGCN
from .parser import recordParser, cleaningReport
from .runner import pipelineRunner, runConfig
from .simulator import networkSimulator, syntheticConfig
from .trainer import hurdleTrainer, oneshotTrainer, rolloutConfig

__all__ = ['exceptions', 'parser', 'simulator', 'featurizer', 'grapher', 'batcher', 'networks', 'trainer',
           'forecaster', 'evaluator', 'explainer', 'viewer', 'runner']
