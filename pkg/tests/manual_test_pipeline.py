"""
Run every step of the command line pipeline on a default-size synthetic dataset and print the elapsed time per step.

By using this code you agree to the terms of the software license agreement.

© Copyright 2020 Wyss Center for Bio and Neuro Engineering – All rights reserved
"""

from time import time

import knockon


def main():
    # Parameters
    workspace = r'data/knockon_workspace/'
    config = knockon.runner.load_config(overrides=['train.epochs=3', 'forecast.test_days=10'], seed=0,
                                        workspace=workspace)

    runner = knockon.runner.pipelineRunner(config)
    t_ini = time()
    for step in knockon.runner.COMMANDS[:-1]:
        t = time()
        runner.run(step)
        print('Elapsed time {}: {:.1f} s.'.format(step, time() - t))
    print('Total elapsed time: {:.1f} s.'.format(time() - t_ini))


if __name__ == '__main__':
    main()
