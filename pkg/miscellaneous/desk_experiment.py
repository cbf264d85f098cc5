#!/usr/bin/env python3
"""Paired supervised vs semi-supervised runs on synthetic lines, one pair per seed"""
import os
import sys
import json
import argparse
import logging
from fractions import Fraction

import numpy as np

from semilsd import config
from semilsd import data
from semilsd import model
from semilsd import train

logger = logging.getLogger(__name__)


def make_datasets(work_dir, n_train, n_val, n_test, image_size, seed, synth_params):
    """Renders the train, val and test sets once; they are shared by all seeds"""
    manifests = {}
    for offset, (role, count) in enumerate((('train', n_train), ('val', n_val), ('test', n_test))):
        out_dir = os.path.join(work_dir, role)
        data.synth_line_dataset(count, image_size, seed + 1000 * offset, out_dir,
                                synth_params, name='desk-%s' % role, role=role)
        manifests[role] = data.load_manifest(os.path.join(out_dir, 'manifest.json'))
    return manifests


def paired_run(manifests, fraction, seed, configuration, work_dir):
    """Trains the supervised baseline and the semi-supervised run of one seed"""
    configuration = configuration._replace(train=configuration.train._replace(seed=seed))
    split = data.make_split(manifests['train'], fraction, seed)
    labeled, unlabeled = data.apply_split(manifests['train'], split)

    run_dir = os.path.join(work_dir, 'seed%s' % seed)
    for stage in (train.SUPERVISED, train.SEMI):
        if not os.path.isdir(os.path.join(run_dir, stage)):
            os.makedirs(os.path.join(run_dir, stage))

    network = model.build_model(train.model_params(configuration))
    supervised = train.train_supervised(network, labeled, manifests['val'], configuration,
                                        out_dir=os.path.join(run_dir, train.SUPERVISED))
    semi = train.train_semi(supervised, labeled, unlabeled, manifests['val'], configuration,
                            out_dir=os.path.join(run_dir, train.SEMI))

    scores = {}
    for stage, checkpoint in ((train.SUPERVISED, supervised), (train.SEMI, semi)):
        network, _ = train.model_from_checkpoint(checkpoint)
        scores[stage] = train.evaluate(network, manifests['test'], configuration).sap[10]
    logger.info('Seed %s: supervised sAP10 %.4f, semi sAP10 %.4f', seed,
                scores[train.SUPERVISED], scores[train.SEMI])
    return scores


def run_experiment(work_dir, seeds=(0, 1, 2), fraction=Fraction(1, 8), n_train=400, n_val=50,
                   n_test=100, configuration=None):
    """Returns the per-seed test sAP10 of both stages and the mean gain"""
    if configuration is None:
        configuration = config.read_configfile(profile='desk')
    manifests = make_datasets(work_dir, n_train, n_val, n_test, configuration.model.input_size,
                              configuration.train.seed, configuration.synth)
    runs = dict((seed, paired_run(manifests, fraction, seed, configuration, work_dir))
                for seed in seeds)
    supervised = float(np.mean([runs[s][train.SUPERVISED] for s in seeds]))
    semi = float(np.mean([runs[s][train.SEMI] for s in seeds]))
    return {'seeds': list(seeds), 'fraction': str(fraction),
            'runs': dict((str(seed), scores) for seed, scores in runs.items()),
            'mean_supervised': supervised, 'mean_semi': semi, 'gain': semi - supervised}


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument('--out', required=True, help="work folder for datasets and runs")
    parser.add_argument('--seeds', default='0,1,2', help="comma separated seeds")
    parser.add_argument('--fraction', default='1/8', help="labeled fraction")
    parser.add_argument('--config', default=None, help="run config to start from")
    args = parser.parse_args()
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format='%(asctime)s - %(levelname)s - %(message)s')

    configuration = config.read_configfile(args.config)
    results = run_experiment(args.out, [int(s) for s in args.seeds.split(',')],
                             data.parse_fraction(args.fraction), configuration=configuration)
    with open(os.path.join(args.out, 'desk_results.json'), 'w') as open_file:
        open_file.write(json.dumps(results, indent=4, sort_keys=True))
    print('Mean sAP10: supervised %.4f, semi %.4f, gain %.4f' % (
        results['mean_supervised'], results['mean_semi'], results['gain']))


if __name__ == '__main__':
    main()
