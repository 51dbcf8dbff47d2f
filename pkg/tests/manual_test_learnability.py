"""
Learnability check on synthetic data: a 10 epoch training run must beat the Zero-Delay baseline and its delay changes
on Headway edges must overlap the propagation events injected by the generator.

By using this code you agree to the terms of the software license agreement.

© Copyright 2020 Wyss Center for Bio and Neuro Engineering – All rights reserved
"""

import json
import os
from time import time

import pandas as pd

import knockon


def main():
    # Parameters
    workspace = r'data/knockon_learnability/'
    overrides = ['synthetic.station_count=20', 'synthetic.trips_per_day=60', 'synthetic.day_count=60',
                 'synthetic.headway_propagation_fraction=0.7', 'train.epochs=10', 'forecast.models=[GATv2, Zero]',
                 'eval.plots=false']
    config = knockon.runner.load_config(overrides=overrides, seed=7, workspace=workspace)

    t = time()
    runner = knockon.runner.pipelineRunner(config)
    for step in ['synth', 'ingest', 'graph', 'train', 'forecast', 'eval']:
        runner.run(step)
    print('Elapsed time: {:.1f} min.'.format((time() - t) / 60))

    losses = pd.read_csv(os.path.join(workspace, 'train', 'gatv2', 'losses.csv'))
    val = losses[(losses['phase'] == 'val') & (losses['model'] == 'classifier')]
    first = knockon.trainer.validation_loss(val, 0, 'classifier')
    best = min(knockon.trainer.validation_loss(val, e, 'classifier') for e in sorted(val['epoch'].unique()))
    print('Validation BCE: epoch 0 {:.4f}, best {:.4f}'.format(first, best))

    horizon = pd.read_csv(os.path.join(workspace, 'eval', 'horizon.csv'))
    short = horizon[horizon['step_k'] < 3].set_index(['model_name', 'step_k'])
    with open(os.path.join(workspace, 'eval', 'metrics.json'), 'r') as f:
        metrics = json.load(f)
    with open(os.path.join(workspace, 'eval', 'propagation.json'), 'r') as f:
        overlap = json.load(f)

    checks = {'validation BCE decreased': best < first,
              'F1 above Zero-Delay for k <= 3': all(short.loc[('GATv2', s), 'F1'] > short.loc[('Zero', s), 'F1']
                                                     for s in range(3)),
              'MAE below Zero-Delay': metrics['GATv2']['MAE'] < metrics['Zero']['MAE'],
              'propagation overlap >= 0.6': overlap['GATv2'] >= 0.6}
    for name, ok in checks.items():
        print('{}: {}'.format(name, 'OK' if ok else 'FAILED'))
    print('MAE GATv2 {:.4f}, Zero {:.4f}, propagation overlap {:.2f}'.format(metrics['GATv2']['MAE'],
                                                                             metrics['Zero']['MAE'], overlap['GATv2']))


if __name__ == '__main__':
    main()
